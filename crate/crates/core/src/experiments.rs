//! Benchmark setups and the end-to-end identification pipeline.

use rayon::prelude::*;

use crate::dynamics::{
    integrate_rk4, lattice_axes, lattice_centers, lorenz, monomial_basis, BasisSet, MonomialSpec,
    VectorField,
};
use crate::error::{invalid, Result};
use crate::gram::{gram_assemble, gram_solve};
use crate::kernels::Kernel;
use crate::quadrature::QuadratureRule;
use crate::sysid::{
    assemble, diagnostics, ils_solve, solve_pinv, solve_ridge, solve_sparse, EstimationResult,
    DEFAULT_RCOND,
};
use crate::trajectory::Trajectory;

/// RK4 step used for every benchmark trajectory.
pub const STEP: f64 = 1e-3;
pub const SYSTEM1_HORIZON: f64 = 1.0;
pub const SYSTEM1_MU: f64 = 10.0;
pub const LORENZ_HORIZON: f64 = 100.0;
pub const LORENZ_X0: [f64; 3] = [-8.0, 7.0, 27.0];
pub const LORENZ_MU: f64 = 10.0;
pub const MONTECARLO_MU: f64 = 400.0 / 3.0;
pub const MONTECARLO_SEGMENTS: usize = 20;
pub const MONTECARLO_SIGMA: f64 = 0.01;
pub const MONTECARLO_DEGREE: u32 = 3;

/// 25 initial points on a 0.25-spaced lattice over `[-0.5,0.5]×[-2.5,-1.5]`.
pub fn system1_initial_conditions() -> Vec<Vec<f64>> {
    lattice_centers(&[(-0.5, 0.5), (-2.5, -1.5)], 0.25).expect("static lattice")
}

/// 63 centers on a unit lattice over `[-3,3]×[-3,5]`.
pub fn system1_centers() -> Vec<Vec<f64>> {
    lattice_centers(&[(-3.0, 3.0), (-3.0, 5.0)], 1.0).expect("static lattice")
}

/// 440 centers spaced 10 apart over `[-20,20]×[-50,50]×[-20,50]`.
pub fn lorenz_centers() -> Vec<Vec<f64>> {
    lattice_centers(&[(-20.0, 20.0), (-50.0, 50.0), (-20.0, 50.0)], 10.0).expect("static lattice")
}

/// 180 centers covering the attractor: 6 × 6 × 5 points over
/// `[-20,20]×[-25,25]×[5,45]`.
pub fn montecarlo_centers() -> Vec<Vec<f64>> {
    lattice_axes(&[(-20.0, 20.0, 8.0), (-25.0, 25.0, 10.0), (5.0, 45.0, 10.0)])
        .expect("static lattice")
}

/// Integrates `field` from every initial point, in parallel, keeping order.
pub fn simulate(
    field: &VectorField,
    initial: &[Vec<f64>],
    horizon: f64,
    h: f64,
) -> Result<Vec<Trajectory>> {
    initial
        .par_iter()
        .map(|x0| integrate_rk4(field, x0, horizon, h, None))
        .collect()
}

/// Adds seeded measurement noise (seed `seed + j` for trajectory `j`) and
/// then applies a trailing moving average when `window > 1`. The first
/// `window - 1` filtered samples are dropped: while the trailing window is
/// still filling up, the smoothed path moves slower than the true one and
/// biases every constraint that sees it.
pub fn corrupt(
    trajs: &[Trajectory],
    sigma: f64,
    seed: u64,
    window: usize,
) -> Result<Vec<Trajectory>> {
    trajs
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let noisy = t.add_measurement_noise(sigma, seed.wrapping_add(j as u64))?;
            if window > 1 {
                let smooth = noisy.moving_average(window)?;
                smooth.slice(window - 1, smooth.intervals())
            } else {
                Ok(noisy)
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Solver {
    Pinv {
        rcond: f64,
    },
    Ridge {
        lambda: f64,
    },
    Sparse {
        lambda: f64,
        threshold: f64,
        max_refits: usize,
    },
    Ils,
    Gram {
        rcond: f64,
    },
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Pinv { .. } => "pinv",
            Solver::Ridge { .. } => "ridge",
            Solver::Sparse { .. } => "sparse",
            Solver::Ils => "ils",
            Solver::Gram { .. } => "gram",
        }
    }
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Pinv {
            rcond: DEFAULT_RCOND,
        }
    }
}

/// Runs one identification. `centers` is ignored by the ILS and Gram
/// solvers.
pub fn identify(
    trajs: &[Trajectory],
    centers: &[Vec<f64>],
    basis: &BasisSet,
    kernel: &Kernel,
    rule: QuadratureRule,
    solver: &Solver,
) -> Result<EstimationResult> {
    match solver {
        Solver::Ils => ils_solve(trajs, basis, rule),
        Solver::Gram { rcond } => {
            let g = gram_assemble(trajs, basis, &(*kernel).into(), rule)?;
            Ok(gram_solve(&g, *rcond))
        }
        _ => {
            let sys = assemble(trajs, centers, basis, kernel, rule)?;
            match solver {
                Solver::Pinv { rcond } => Ok(solve_pinv(&sys, *rcond)),
                Solver::Ridge { lambda } => solve_ridge(&sys, *lambda),
                Solver::Sparse {
                    lambda,
                    threshold,
                    max_refits,
                } => solve_sparse(&sys, *lambda, *threshold, *max_refits),
                Solver::Ils | Solver::Gram { .. } => unreachable!("handled above"),
            }
        }
    }
}

/// The Lorenz Monte-Carlo comparison: a clean trajectory, split into
/// segments after noise is added, identified in a cubic monomial basis
/// both by occupation kernels and by integral least squares.
#[derive(Clone, Debug)]
pub struct MonteCarloSetup {
    pub clean: Trajectory,
    pub segments: usize,
    pub sigma: f64,
    pub centers: Vec<Vec<f64>>,
    pub basis: BasisSet,
    pub truth: Vec<f64>,
    pub kernel: Kernel,
    pub rule: QuadratureRule,
}

impl MonteCarloSetup {
    pub fn lorenz_default() -> Result<Self> {
        let spec = lorenz();
        let clean = integrate_rk4(&spec.field, &LORENZ_X0, LORENZ_HORIZON, STEP, None)?;
        let basis = monomial_basis(MonomialSpec {
            dim: 3,
            max_degree: MONTECARLO_DEGREE,
        })?;
        let truth = spec.basis.transfer(&spec.theta, &basis)?;
        Ok(Self {
            clean,
            segments: MONTECARLO_SEGMENTS,
            sigma: MONTECARLO_SIGMA,
            centers: montecarlo_centers(),
            basis,
            truth,
            kernel: Kernel::gaussian(MONTECARLO_MU)?,
            rule: QuadratureRule::Simpson,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialOutcome {
    pub ok_error: f64,
    pub ils_error: f64,
    pub ok_condition: f64,
    pub ils_condition: f64,
}

pub fn montecarlo_trial(setup: &MonteCarloSetup, seed: u64) -> Result<TrialOutcome> {
    let noisy = setup.clean.add_measurement_noise(setup.sigma, seed)?;
    let pieces = noisy.segment(setup.segments)?.into_vec();
    let sys = assemble(
        &pieces,
        &setup.centers,
        &setup.basis,
        &setup.kernel,
        setup.rule,
    )?;
    let ok = solve_pinv(&sys, DEFAULT_RCOND);
    let ils_sys = crate::sysid::ils_system(&pieces, &setup.basis, setup.rule)?;
    let ils = solve_pinv(&ils_sys, DEFAULT_RCOND);
    Ok(TrialOutcome {
        ok_error: ok.l2_error(&setup.truth),
        ils_error: ils.l2_error(&setup.truth),
        ok_condition: diagnostics(&sys).condition_number,
        ils_condition: diagnostics(&ils_sys).condition_number,
    })
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("median of an empty list"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    Ok(if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::system1;

    #[test]
    fn preset_sizes() {
        assert_eq!(system1_initial_conditions().len(), 25);
        assert_eq!(system1_centers().len(), 63);
        assert_eq!(lorenz_centers().len(), 440);
        assert_eq!(montecarlo_centers().len(), 180);
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]).unwrap(), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]).unwrap(), 2.5);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn corrupt_is_seeded_per_trajectory() {
        let trajs = simulate(
            &system1().field,
            &system1_initial_conditions()[..2],
            0.1,
            0.01,
        )
        .unwrap();
        let a = corrupt(&trajs, 0.01, 5, 1).unwrap();
        let b = corrupt(&trajs, 0.01, 5, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1], trajs[1].add_measurement_noise(0.01, 6).unwrap());
        let f = corrupt(&trajs, 0.01, 5, 4).unwrap();
        let smooth = a[0].moving_average(4).unwrap();
        assert_eq!(f[0], smooth.slice(3, smooth.intervals()).unwrap());
        assert_eq!(f[0].start_time(), 3.0 * 0.01);
    }

    #[test]
    fn every_solver_recovers_system1() {
        let spec = system1();
        let trajs = simulate(&spec.field, &system1_initial_conditions(), 1.0, 0.01).unwrap();
        let kernel = Kernel::gaussian(SYSTEM1_MU).unwrap();
        for solver in [
            Solver::default(),
            Solver::Ridge { lambda: 1e-14 },
            Solver::Ils,
            Solver::Gram {
                rcond: DEFAULT_RCOND,
            },
            Solver::Sparse {
                lambda: 1e-6,
                threshold: 0.1,
                max_refits: 5,
            },
        ] {
            let r = identify(
                &trajs,
                &system1_centers(),
                &spec.basis,
                &kernel,
                QuadratureRule::Simpson,
                &solver,
            )
            .unwrap();
            assert!(
                r.max_error(&spec.theta) < 1e-3,
                "{}: {}",
                solver.name(),
                r.max_error(&spec.theta)
            );
        }
    }
}
