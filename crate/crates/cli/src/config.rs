//! Settings shared by every subcommand: a JSON file, overridden key by key
//! by command-line flags, then resolved into a runnable [`Experiment`].

use std::fs;
use std::path::PathBuf;

use clap::Args;
use occukernel::dynamics::{
    builtin_system, lattice_axes, monomial_basis, BasisSet, ControlSignal, MonomialSpec, SystemSpec,
};
use occukernel::experiments::{
    corrupt, lorenz_centers, simulate, system1_centers, system1_initial_conditions, Solver,
    LORENZ_HORIZON, LORENZ_MU, LORENZ_X0, STEP, SYSTEM1_HORIZON, SYSTEM1_MU,
};
use occukernel::sysid::DEFAULT_RCOND;
use occukernel::{Kernel, KernelFamily, QuadratureRule, Trajectory};
use serde::Deserialize;

use crate::CliError;

/// Every key may appear in the JSON config file (snake_case) or as a flag
/// (kebab-case). Flags win.
#[derive(Args, Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    /// JSON file with default values for any of the other options
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Built-in system: system1, lorenz or emps_form
    #[arg(long, global = true)]
    pub system: Option<String>,

    /// Trajectory CSV files (`t,x1,...,xn`) used instead of a built-in system
    #[arg(long = "data", global = true, value_delimiter = ',')]
    pub trajectories: Option<Vec<PathBuf>>,

    /// Control signal CSV (`t,tau`) for emps_form
    #[arg(long, global = true)]
    pub control: Option<PathBuf>,

    /// Kernel family: gaussian, expdot, poly or linear
    #[arg(long, global = true)]
    pub kernel: Option<String>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    pub mu: Option<f64>,

    /// Polynomial kernel degree
    #[arg(long, global = true)]
    pub degree: Option<u32>,

    /// Quadrature rule: rh, trap or simpson
    #[arg(long, global = true)]
    pub rule: Option<String>,

    /// Use all monomials up to this degree instead of the system's own basis
    #[arg(long, global = true)]
    pub basis_degree: Option<u32>,

    /// Center lattice, one `lo:hi:width` triple per state coordinate
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub centers: Option<String>,

    /// pinv, ridge, sparse, ils or gram
    #[arg(long, global = true)]
    pub solver: Option<String>,

    #[arg(long, global = true)]
    pub lambda: Option<f64>,

    /// Magnitude below which sparse coefficients are dropped before refitting
    #[arg(long, global = true)]
    pub threshold: Option<f64>,

    #[arg(long, global = true)]
    pub noise_sigma: Option<f64>,

    /// Trailing moving-average length applied after noise
    #[arg(long, global = true)]
    pub filter_window: Option<usize>,

    #[arg(long, global = true)]
    pub segments: Option<usize>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true)]
    pub trials: Option<usize>,

    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Simulation horizon
    #[arg(long, global = true)]
    pub horizon: Option<f64>,

    /// Simulation and sampling step
    #[arg(long, global = true)]
    pub step: Option<f64>,
}

impl Settings {
    /// Loads `--config` (if any) and lays the flags over it.
    pub fn resolve_file(self) -> Result<Settings, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let file: Settings = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))?;
        Ok(file.overridden_by(self))
    }

    pub fn overridden_by(self, over: Settings) -> Settings {
        Settings {
            config: over.config.or(self.config),
            system: over.system.or(self.system),
            trajectories: over.trajectories.or(self.trajectories),
            control: over.control.or(self.control),
            kernel: over.kernel.or(self.kernel),
            mu: over.mu.or(self.mu),
            degree: over.degree.or(self.degree),
            rule: over.rule.or(self.rule),
            basis_degree: over.basis_degree.or(self.basis_degree),
            centers: over.centers.or(self.centers),
            solver: over.solver.or(self.solver),
            lambda: over.lambda.or(self.lambda),
            threshold: over.threshold.or(self.threshold),
            noise_sigma: over.noise_sigma.or(self.noise_sigma),
            filter_window: over.filter_window.or(self.filter_window),
            segments: over.segments.or(self.segments),
            seed: over.seed.or(self.seed),
            trials: over.trials.or(self.trials),
            out: over.out.or(self.out),
            horizon: over.horizon.or(self.horizon),
            step: over.step.or(self.step),
        }
    }
}

/// Parses `lo:hi:width,lo:hi:width,...` into a lattice of centers.
pub fn parse_centers(text: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let axes = text
        .split(',')
        .map(|axis| {
            let parts: Vec<&str> = axis.trim().split(':').collect();
            let [lo, hi, width] = parts[..] else {
                return Err(CliError::Config(format!(
                    "center axis `{axis}` is not lo:hi:width"
                )));
            };
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|_| {
                    CliError::Config(format!("`{s}` in center axis `{axis}` is not a number"))
                })
            };
            Ok((num(lo)?, num(hi)?, num(width)?))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(lattice_axes(&axes)?)
}

pub fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| CliError::Config(format!("`{s}` is not a valid {what}")))
        })
        .collect()
}

/// Where the trajectories come from.
#[derive(Debug)]
pub enum Source {
    Simulated {
        spec: SystemSpec,
        initial: Vec<Vec<f64>>,
        horizon: f64,
        step: f64,
    },
    Files(Vec<Trajectory>),
}

/// A fully resolved identification setup.
#[derive(Debug)]
pub struct Experiment {
    pub name: String,
    pub source: Source,
    pub kernel: Kernel,
    pub rule: QuadratureRule,
    pub basis: BasisSet,
    pub truth: Option<Vec<f64>>,
    pub centers: Vec<Vec<f64>>,
    pub solver: Solver,
    pub noise_sigma: f64,
    pub filter_window: usize,
    pub seed: u64,
    pub segments: usize,
    pub out: PathBuf,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

pub fn parse_rule(s: &Settings) -> Result<QuadratureRule, CliError> {
    Ok(s.rule
        .as_deref()
        .unwrap_or("simpson")
        .parse::<QuadratureRule>()?)
}

pub fn parse_kernel(s: &Settings, default_mu: f64) -> Result<Kernel, CliError> {
    let family: KernelFamily = s.kernel.as_deref().unwrap_or("gaussian").parse()?;
    let degree = match family {
        KernelFamily::Polynomial => s.degree.unwrap_or(2),
        _ => 0,
    };
    Ok(Kernel::new(family, s.mu.unwrap_or(default_mu), degree)?)
}

pub fn parse_solver(s: &Settings) -> Result<Solver, CliError> {
    let need_lambda = |name: &str| {
        s.lambda
            .ok_or_else(|| config_err(format!("--solver {name} needs --lambda")))
    };
    Ok(match s.solver.as_deref().unwrap_or("pinv") {
        "pinv" => Solver::Pinv {
            rcond: DEFAULT_RCOND,
        },
        "ridge" => Solver::Ridge {
            lambda: need_lambda("ridge")?,
        },
        "sparse" => Solver::Sparse {
            lambda: need_lambda("sparse")?,
            threshold: s.threshold.unwrap_or(0.0),
            max_refits: 10,
        },
        "ils" => Solver::Ils,
        "gram" => Solver::Gram {
            rcond: DEFAULT_RCOND,
        },
        other => return Err(config_err(format!("unknown solver `{other}`"))),
    })
}

impl Experiment {
    pub fn from_settings(s: &Settings) -> Result<Self, CliError> {
        if s.system.is_some() && s.trajectories.is_some() {
            return Err(config_err("give either --system or --data, not both"));
        }
        let rule = parse_rule(s)?;
        let solver = parse_solver(s)?;

        let (name, source, default_mu, default_centers) = match &s.trajectories {
            Some(paths) => {
                if paths.is_empty() {
                    return Err(config_err("--data needs at least one file"));
                }
                let trajs = paths
                    .iter()
                    .map(|p| {
                        if !p.exists() {
                            return Err(config_err(format!(
                                "trajectory file {} does not exist",
                                p.display()
                            )));
                        }
                        Ok(Trajectory::load_csv(p)?)
                    })
                    .collect::<Result<Vec<_>, CliError>>()?;
                ("data".to_string(), Source::Files(trajs), 10.0, None)
            }
            None => {
                let name = s.system.clone().unwrap_or_else(|| "system1".into());
                let control = match &s.control {
                    Some(p) if !p.exists() => {
                        return Err(config_err(format!(
                            "control file {} does not exist",
                            p.display()
                        )))
                    }
                    Some(p) => Some(ControlSignal::load_csv(p)?),
                    None => None,
                };
                let spec = builtin_system(&name, control.clone())?;
                let step = s.step.unwrap_or(STEP);
                let (initial, horizon, mu, centers) = match spec.name.as_str() {
                    "system1" => (
                        system1_initial_conditions(),
                        SYSTEM1_HORIZON,
                        SYSTEM1_MU,
                        Some(system1_centers()),
                    ),
                    "lorenz" => (
                        vec![LORENZ_X0.to_vec()],
                        LORENZ_HORIZON,
                        LORENZ_MU,
                        Some(lorenz_centers()),
                    ),
                    _ => {
                        let control = control.expect("emps_form was built from a control signal");
                        let (t0, t1) = control.span();
                        (vec![vec![0.0, 0.0, t0]], t1 - t0, 1.0, None)
                    }
                };
                let source = Source::Simulated {
                    spec,
                    initial,
                    horizon: s.horizon.unwrap_or(horizon),
                    step,
                };
                (name, source, mu, centers)
            }
        };

        let dim = match &source {
            Source::Simulated { spec, .. } => spec.basis.dim(),
            Source::Files(t) => t[0].dim(),
        };
        let (basis, truth) = match (&source, s.basis_degree) {
            (Source::Simulated { spec, .. }, None) => {
                (spec.basis.clone(), Some(spec.theta.clone()))
            }
            (Source::Simulated { spec, .. }, Some(d)) => {
                let basis = monomial_basis(MonomialSpec { dim, max_degree: d })?;
                let truth = spec.basis.transfer(&spec.theta, &basis).ok();
                (basis, truth)
            }
            (Source::Files(_), Some(d)) => {
                (monomial_basis(MonomialSpec { dim, max_degree: d })?, None)
            }
            (Source::Files(_), None) => {
                return Err(config_err("trajectory files need --basis-degree"))
            }
        };

        let centers = match (&s.centers, default_centers) {
            (Some(text), _) => parse_centers(text)?,
            (None, Some(c)) => c,
            (None, None) => return Err(config_err(format!("{name} needs --centers"))),
        };
        if centers[0].len() != dim {
            return Err(config_err(format!(
                "centers have {} coordinates but the state has {dim}",
                centers[0].len()
            )));
        }

        let noise_sigma = s.noise_sigma.unwrap_or(0.0);
        if !(noise_sigma >= 0.0) {
            return Err(config_err("--noise-sigma must be non-negative"));
        }
        Ok(Experiment {
            name,
            source,
            kernel: parse_kernel(s, default_mu)?,
            rule,
            basis,
            truth,
            centers,
            solver,
            noise_sigma,
            filter_window: s.filter_window.unwrap_or(1).max(1),
            seed: s.seed.unwrap_or(0),
            segments: s.segments.unwrap_or(1).max(1),
            out: s.out.clone().unwrap_or_else(|| PathBuf::from(".")),
        })
    }

    /// Clean trajectories: simulated or loaded.
    pub fn clean_trajectories(&self) -> Result<Vec<Trajectory>, CliError> {
        match &self.source {
            Source::Simulated {
                spec,
                initial,
                horizon,
                step,
            } => Ok(simulate(&spec.field, initial, *horizon, *step)?),
            Source::Files(t) => Ok(t.clone()),
        }
    }

    /// Noise and filtering, when configured.
    pub fn observe(&self, clean: &[Trajectory]) -> Result<Vec<Trajectory>, CliError> {
        if self.noise_sigma > 0.0 || self.filter_window > 1 {
            Ok(corrupt(
                clean,
                self.noise_sigma,
                self.seed,
                self.filter_window,
            )?)
        } else {
            Ok(clean.to_vec())
        }
    }

    /// Observed trajectories, split into the configured number of segments.
    pub fn trajectories(&self) -> Result<Vec<Trajectory>, CliError> {
        let observed = self.observe(&self.clean_trajectories()?)?;
        if self.segments == 1 {
            return Ok(observed);
        }
        let mut out = Vec::new();
        for t in &observed {
            out.extend(t.segment(self.segments)?.into_vec());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let file = Settings {
            mu: Some(4.0),
            rule: Some("trap".into()),
            ..Default::default()
        };
        let flags = Settings {
            mu: Some(7.0),
            ..Default::default()
        };
        let merged = file.overridden_by(flags);
        assert_eq!(merged.mu, Some(7.0));
        assert_eq!(merged.rule.as_deref(), Some("trap"));
    }

    #[test]
    fn json_keys_match_flag_names() {
        let s: Settings = serde_json::from_str(
            r#"{"system":"lorenz","basis_degree":3,"noise_sigma":0.01,"filter_window":20,"centers":"0:1:1"}"#,
        )
        .unwrap();
        assert_eq!(s.system.as_deref(), Some("lorenz"));
        assert_eq!(s.basis_degree, Some(3));
        assert_eq!(s.filter_window, Some(20));
        assert!(serde_json::from_str::<Settings>(r#"{"bogus":1}"#).is_err());
    }

    #[test]
    fn centers_string() {
        let c = parse_centers("-1:1:1, 0:2:2").unwrap();
        assert_eq!(
            c,
            vec![
                vec![-1.0, 0.0],
                vec![-1.0, 2.0],
                vec![0.0, 0.0],
                vec![0.0, 2.0],
                vec![1.0, 0.0],
                vec![1.0, 2.0]
            ]
        );
        assert!(parse_centers("0:1").is_err());
        assert!(parse_centers("0:1:x").is_err());
        assert!(parse_centers("0:1:0").is_err());
    }

    #[test]
    fn system1_defaults() {
        let e = Experiment::from_settings(&Settings::default()).unwrap();
        assert_eq!(e.name, "system1");
        assert_eq!(e.centers.len(), 63);
        assert_eq!(e.rule, QuadratureRule::Simpson);
        assert_eq!(e.truth.as_ref().unwrap().len(), e.basis.len());
        assert_eq!(e.kernel, Kernel::gaussian(10.0).unwrap());
    }

    #[test]
    fn wider_basis_keeps_truth() {
        let s = Settings {
            basis_degree: Some(3),
            ..Default::default()
        };
        let e = Experiment::from_settings(&s).unwrap();
        assert_eq!(e.basis.len(), 20);
        let truth = e.truth.unwrap();
        assert_eq!(truth.iter().filter(|v| **v != 0.0).count(), 4);
    }

    #[test]
    fn bad_settings_are_config_errors() {
        let cases = [
            Settings {
                solver: Some("ridge".into()),
                ..Default::default()
            },
            Settings {
                solver: Some("magic".into()),
                ..Default::default()
            },
            Settings {
                mu: Some(-1.0),
                ..Default::default()
            },
            Settings {
                centers: Some("0:1:1".into()),
                ..Default::default()
            },
            Settings {
                system: Some("emps_form".into()),
                ..Default::default()
            },
            Settings {
                trajectories: Some(vec!["/nonexistent/file.csv".into()]),
                basis_degree: Some(2),
                centers: Some("0:1:1".into()),
                ..Default::default()
            },
        ];
        for s in cases {
            let err = Experiment::from_settings(&s).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{s:?}: {err}");
        }
    }
}
