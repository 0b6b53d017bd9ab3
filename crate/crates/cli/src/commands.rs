use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use clap::Args;
use occukernel::dynamics::{integrate_rk4, monomial_basis, MonomialSpec};
use occukernel::experiments::{
    identify as run_identify, median, montecarlo_trial, MonteCarloSetup,
};
use occukernel::quadrature::{
    empirical_order, integrate, occupation_distance_sq, OccupationKernelEstimate,
};
use occukernel::streaming::{StreamConfig, StreamState};
use occukernel::sysid::EstimationResult;
use occukernel::trajectory::parse_row;
use occukernel::{Kernel, QuadratureRule};
use rayon::prelude::*;

use crate::config::{
    parse_centers, parse_kernel, parse_list, parse_rule, Experiment, Settings, Source,
};
use crate::CliError;

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// `mu` or `trajectories`
    #[arg(long)]
    pub param: String,
    /// Comma-separated sweep values
    #[arg(long)]
    pub values: String,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    /// Comma-separated step sizes, at least three
    #[arg(long, default_value = "0.1,0.05,0.025,0.0125")]
    pub steps: String,
    /// `identify` (parameter error), `norm` (occupation kernel error
    /// against a 64 times finer Simpson reference) or `quadrature` (the
    /// rule applied to `eᵗ sin 3t` over the horizon, against its closed form)
    #[arg(long, default_value = "identify")]
    pub quantity: String,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    /// Sliding window in panels; 0 keeps the whole history
    #[arg(long, default_value_t = 0)]
    pub window: usize,
    /// Print an estimate every this many samples
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// Gradient steps taken after each sample
    #[arg(long, default_value_t = 1)]
    pub iterations: usize,
    /// Extra gradient steps once the input ends
    #[arg(long, default_value_t = 0)]
    pub settle: usize,
    /// Fixed gradient step; the default is 1/λ_max of the normal matrix
    #[arg(long)]
    pub step_size: Option<f64>,
}

fn write_output(dir: &Path, file: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(file), text)?;
    Ok(())
}

fn sci(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "NA".into()
    }
}

pub fn simulate(settings: &Settings) -> Result<(), CliError> {
    let exp = Experiment::from_settings(settings)?;
    if matches!(exp.source, Source::Files(_)) {
        return Err(CliError::Config(
            "simulate needs a built-in --system".into(),
        ));
    }
    let trajs = exp.observe(&exp.clean_trajectories()?)?;
    fs::create_dir_all(&exp.out)?;
    for (j, t) in trajs.iter().enumerate() {
        let path = exp.out.join(format!("{}_traj{:02}.csv", exp.name, j + 1));
        t.save_csv(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

/// The result table plus its `# summary:` trailer.
pub fn result_csv(exp: &Experiment, est: &EstimationResult, seconds: f64) -> String {
    let mut out = String::from("param_index,monomial,dim,target,estimate,abs_error\n");
    for (i, f) in exp.basis.functions().iter().enumerate() {
        let dim = f.target_dim().map_or(String::new(), |d| d.to_string());
        let target = exp.truth.as_ref().map(|t| t[i]);
        let _ = writeln!(
            out,
            "{},{},{},{},{:.15e},{}",
            i + 1,
            f.label(),
            dim,
            target.map_or(String::new(), |t| format!("{t:.15e}")),
            est.theta[i],
            target.map_or(String::new(), |t| sci((est.theta[i] - t).abs())),
        );
    }
    let (l2, max) = match &exp.truth {
        Some(t) => (est.l2_error(t), est.max_error(t)),
        None => (f64::NAN, f64::NAN),
    };
    let _ = writeln!(
        out,
        "# summary: l2_error={},max_error={},condition_number={},runtime_seconds={seconds:.3}",
        sci(l2),
        sci(max),
        sci(est.condition_number),
    );
    out
}

pub fn identify(settings: &Settings) -> Result<(), CliError> {
    let start = Instant::now();
    let exp = Experiment::from_settings(settings)?;
    let trajs = exp.trajectories()?;
    let est = run_identify(
        &trajs,
        &exp.centers,
        &exp.basis,
        &exp.kernel,
        exp.rule,
        &exp.solver,
    )?;
    let text = result_csv(&exp, &est, start.elapsed().as_secs_f64());
    write_output(&exp.out, "result.csv", &text)?;
    print!("{text}");
    Ok(())
}

pub fn sweep(settings: &Settings, args: &SweepArgs) -> Result<(), CliError> {
    let exp = Experiment::from_settings(settings)?;
    let truth = exp
        .truth
        .clone()
        .ok_or_else(|| CliError::Config("sweep needs a system with known parameters".into()))?;
    let trajs = exp.trajectories()?;
    let raw: Vec<&str> = args.values.split(',').map(str::trim).collect();
    let rows: Vec<Result<f64, CliError>> = match args.param.as_str() {
        "mu" => {
            let mus: Vec<f64> = parse_list(&args.values, "kernel width")?;
            mus.par_iter()
                .map(|&mu| {
                    let kernel = Kernel::new(exp.kernel.family(), mu, exp.kernel.degree())?;
                    let est = run_identify(
                        &trajs,
                        &exp.centers,
                        &exp.basis,
                        &kernel,
                        exp.rule,
                        &exp.solver,
                    )?;
                    Ok(est.l2_error(&truth))
                })
                .collect()
        }
        "trajectories" => {
            let counts: Vec<usize> = parse_list(&args.values, "trajectory count")?;
            if let Some(bad) = counts.iter().find(|&&n| n == 0 || n > trajs.len()) {
                return Err(CliError::Config(format!(
                    "trajectory count {bad} outside 1..={}",
                    trajs.len()
                )));
            }
            counts
                .par_iter()
                .map(|&n| {
                    let est = run_identify(
                        &trajs[..n],
                        &exp.centers,
                        &exp.basis,
                        &exp.kernel,
                        exp.rule,
                        &exp.solver,
                    )?;
                    Ok(est.l2_error(&truth))
                })
                .collect()
        }
        other => {
            return Err(CliError::Config(format!(
                "cannot sweep `{other}`; use mu or trajectories"
            )))
        }
    };
    let mut text = String::from("value,error\n");
    for (value, row) in raw.iter().zip(rows) {
        let _ = writeln!(text, "{value},{}", sci(row?));
    }
    write_output(&exp.out, "sweep.csv", &text)?;
    print!("{text}");
    Ok(())
}

pub fn montecarlo(settings: &Settings) -> Result<(), CliError> {
    if settings.trajectories.is_some() || settings.system.as_deref().is_some_and(|s| s != "lorenz")
    {
        return Err(CliError::Config(
            "montecarlo runs on --system lorenz only".into(),
        ));
    }
    let mut setup = MonteCarloSetup::lorenz_default()?;
    if let Some(sigma) = settings.noise_sigma {
        if !(sigma >= 0.0) {
            return Err(CliError::Config(
                "--noise-sigma must be non-negative".into(),
            ));
        }
        setup.sigma = sigma;
    }
    if let Some(k) = settings.segments {
        setup.segments = k.max(1);
    }
    if settings.kernel.is_some() || settings.mu.is_some() || settings.degree.is_some() {
        setup.kernel = parse_kernel(settings, setup.kernel.mu())?;
    }
    if settings.rule.is_some() {
        setup.rule = parse_rule(settings)?;
    }
    if let Some(d) = settings.basis_degree {
        let basis = monomial_basis(MonomialSpec {
            dim: 3,
            max_degree: d,
        })?;
        setup.truth = occukernel::dynamics::lorenz()
            .basis
            .transfer(&occukernel::dynamics::lorenz().theta, &basis)?;
        setup.basis = basis;
    }
    if let Some(c) = &settings.centers {
        setup.centers = parse_centers(c)?;
    }
    let trials = settings.trials.unwrap_or(50);
    let seed = settings.seed.unwrap_or(0);
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|i| montecarlo_trial(&setup, seed + i as u64))
        .collect::<Result<Vec<_>, _>>()?;

    let mut text = String::from("trial,seed,ok_error,ils_error,ok_cond,ils_cond\n");
    for (i, o) in outcomes.iter().enumerate() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            i,
            seed + i as u64,
            sci(o.ok_error),
            sci(o.ils_error),
            sci(o.ok_condition),
            sci(o.ils_condition)
        );
    }
    if trials > 0 {
        let ok = median(&outcomes.iter().map(|o| o.ok_error).collect::<Vec<_>>())?;
        let ils = median(&outcomes.iter().map(|o| o.ils_error).collect::<Vec<_>>())?;
        let _ = writeln!(
            text,
            "# summary: trials={trials},median_ok_error={},median_ils_error={}",
            sci(ok),
            sci(ils)
        );
    }
    if setup.sigma == 0.0 {
        text.push_str("# flag: noiseless run, both errors are at discretization level and their ratio is uninformative\n");
        eprintln!(
            "warning: kind=noiseless message=\"noise-sigma is 0; error ratio is uninformative\""
        );
    }
    write_output(
        &settings.out.clone().unwrap_or_else(|| ".".into()),
        "montecarlo.csv",
        &text,
    )?;
    print!("{text}");
    Ok(())
}

pub fn convergence(settings: &Settings, args: &ConvergenceArgs) -> Result<(), CliError> {
    let exp = Experiment::from_settings(settings)?;
    let steps: Vec<f64> = parse_list(&args.steps, "step size")?;
    if steps.len() < 3 {
        return Err(CliError::Config(format!(
            "convergence needs at least 3 step sizes, got {}",
            steps.len()
        )));
    }
    if steps.iter().any(|h| !(*h > 0.0)) {
        return Err(CliError::Config("step sizes must be positive".into()));
    }
    let Source::Simulated {
        spec,
        initial,
        horizon,
        ..
    } = &exp.source
    else {
        return Err(CliError::Config(
            "convergence needs a built-in --system".into(),
        ));
    };
    let errors: Vec<Result<f64, CliError>> = match args.quantity.as_str() {
        "identify" => {
            let truth = exp
                .truth
                .clone()
                .expect("built-in systems have known parameters");
            steps
                .par_iter()
                .map(|&h| {
                    let trajs: Vec<_> = initial
                        .iter()
                        .map(|x0| integrate_rk4(&spec.field, x0, *horizon, h, None))
                        .collect::<Result<_, _>>()?;
                    let trajs = exp.observe(&trajs)?;
                    let est = run_identify(
                        &trajs,
                        &exp.centers,
                        &exp.basis,
                        &exp.kernel,
                        exp.rule,
                        &exp.solver,
                    )?;
                    Ok(est.l2_error(&truth))
                })
                .collect()
        }
        "norm" => {
            let finest = steps.iter().cloned().fold(f64::INFINITY, f64::min);
            let fine = integrate_rk4(&spec.field, &initial[0], *horizon, finest / 64.0, None)?;
            let reference =
                OccupationKernelEstimate::new(&fine, exp.kernel, QuadratureRule::Simpson)?;
            steps
                .par_iter()
                .map(|&h| {
                    let coarse = integrate_rk4(&spec.field, &initial[0], *horizon, h, None)?;
                    let est = OccupationKernelEstimate::new(&coarse, exp.kernel, exp.rule)?;
                    Ok(occupation_distance_sq(&reference, &est)?.sqrt())
                })
                .collect()
        }
        "quadrature" => {
            let antiderivative =
                |t: f64| t.exp() * ((3.0 * t).sin() - 3.0 * (3.0 * t).cos()) / 10.0;
            let exact = antiderivative(*horizon) - antiderivative(0.0);
            steps
                .iter()
                .map(|&h| {
                    let intervals = (*horizon / h).round() as usize;
                    let h = *horizon / intervals as f64;
                    let values: Vec<f64> = (0..=intervals)
                        .map(|k| {
                            let t = k as f64 * h;
                            t.exp() * (3.0 * t).sin()
                        })
                        .collect();
                    Ok((integrate(exp.rule, &values, h)? - exact).abs())
                })
                .collect()
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown quantity `{other}`; use identify, norm or quadrature"
            )))
        }
    };
    let errors = errors.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let points: Vec<(f64, f64)> = steps.iter().cloned().zip(errors.iter().cloned()).collect();
    let order = empirical_order(&points)?;
    let mut text = String::from("h,error\n");
    for (h, e) in &points {
        let _ = writeln!(text, "{h},{}", sci(*e));
    }
    let _ = writeln!(text, "# fitted_order: {order:.4}");
    write_output(&exp.out, "convergence.csv", &text)?;
    print!("{text}");
    Ok(())
}

pub fn stream(settings: &Settings, args: &StreamArgs) -> Result<(), CliError> {
    let exp = Experiment::from_settings(settings)?;
    let mut state = StreamState::new(StreamConfig {
        kernel: exp.kernel,
        centers: exp.centers.clone(),
        basis: exp.basis.clone(),
        window: args.window,
        step_size: args.step_size,
    })?;
    let width = exp.basis.dim() + 1;
    let every = args.every.max(1);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut printed = 0usize;
    let mut header = false;

    let mut emit = |state: &StreamState, out: &mut BufWriter<_>| -> Result<(), CliError> {
        if !header {
            let mut h = String::from("t");
            for i in 1..=state.theta().len() {
                let _ = write!(h, ",theta{i}");
            }
            writeln!(out, "{h},residual")?;
            header = true;
        }
        let mut line = format!("{}", state.time().unwrap_or(0.0));
        for v in state.theta() {
            let _ = write!(line, ",{v:.12e}");
        }
        writeln!(out, "{line},{:.6e}", state.residual_norm())?;
        Ok(())
    };

    let mut block_samples = 0usize;
    for (idx, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        // A blank line or a repeated `t,x1,...` header starts a new trajectory.
        if trimmed.is_empty() || trimmed.starts_with('t') {
            if block_samples > 0 {
                state.start_new_trajectory();
                block_samples = 0;
            }
            continue;
        }
        let row = parse_row(trimmed, idx + 1, width)?;
        state.push(row[0], &row[1..])?;
        block_samples += 1;
        for _ in 0..args.iterations {
            state.gradient_chase_step()?;
        }
        if state.samples() % every == 0 {
            emit(&state, &mut out)?;
            printed = state.samples();
        }
    }
    if state.samples() > 0 {
        for _ in 0..args.settle {
            state.gradient_chase_step()?;
        }
        if printed != state.samples() || args.settle > 0 {
            emit(&state, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}
