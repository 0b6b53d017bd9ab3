//! Composite quadrature on uniform grids and occupation kernels built from
//! sampled trajectories.

use std::fmt;
use std::str::FromStr;

use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::Kernel;
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum QuadratureRule {
    RightHand,
    Trapezoid,
    Simpson,
}

impl QuadratureRule {
    pub const ALL: [QuadratureRule; 3] = [
        QuadratureRule::RightHand,
        QuadratureRule::Trapezoid,
        QuadratureRule::Simpson,
    ];

    /// Global error order `p` in `O(hᵖ)`.
    pub fn order(self) -> u32 {
        match self {
            QuadratureRule::RightHand => 1,
            QuadratureRule::Trapezoid => 2,
            QuadratureRule::Simpson => 4,
        }
    }

    /// Smallest number of intervals the rule accepts.
    pub fn min_intervals(self) -> usize {
        match self {
            QuadratureRule::Simpson => 2,
            _ => 1,
        }
    }

    pub fn short_name(self) -> &'static str {
        match self {
            QuadratureRule::RightHand => "rh",
            QuadratureRule::Trapezoid => "trap",
            QuadratureRule::Simpson => "simpson",
        }
    }
}

impl fmt::Display for QuadratureRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for QuadratureRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rh" | "right_hand" | "right-hand" | "righthand" => Ok(QuadratureRule::RightHand),
            "trap" | "trapezoid" | "trapezoidal" => Ok(QuadratureRule::Trapezoid),
            "simpson" => Ok(QuadratureRule::Simpson),
            other => Err(invalid(format!(
                "unknown quadrature rule `{other}` (expected rh, trap or simpson)"
            ))),
        }
    }
}

/// Weights `w₀..w_F` such that `Σ wₖ f(tₖ)` approximates `∫ f dt` over
/// `intervals` panels of width `h`.
///
/// Simpson with an odd number of intervals uses the 3/8 rule on the last
/// three panels.
pub fn weights(rule: QuadratureRule, intervals: usize, h: f64) -> Result<Vec<f64>> {
    if intervals < rule.min_intervals() {
        return Err(Error::TooFewPoints {
            needed: rule.min_intervals() + 1,
            found: intervals + 1,
        });
    }
    let mut w = vec![0.0; intervals + 1];
    match rule {
        QuadratureRule::RightHand => w[1..].fill(h),
        QuadratureRule::Trapezoid => {
            w.fill(h);
            w[0] = 0.5 * h;
            w[intervals] = 0.5 * h;
        }
        QuadratureRule::Simpson => {
            let even = if intervals.is_multiple_of(2) {
                intervals
            } else {
                intervals - 3
            };
            for k in (0..even).step_by(2) {
                w[k] += h / 3.0;
                w[k + 1] += 4.0 * h / 3.0;
                w[k + 2] += h / 3.0;
            }
            if even < intervals {
                let c = 3.0 * h / 8.0;
                w[even] += c;
                w[even + 1] += 3.0 * c;
                w[even + 2] += 3.0 * c;
                w[even + 3] += c;
            }
        }
    }
    Ok(w)
}

/// `∫ f dt` from samples `f(t₀), …, f(t_F)` on a grid of step `h`.
pub fn integrate(rule: QuadratureRule, values: &[f64], h: f64) -> Result<f64> {
    let intervals = values.len().saturating_sub(1);
    let w = weights(rule, intervals, h)?;
    Ok(w.iter().zip(values).map(|(a, b)| a * b).sum())
}

/// The occupation kernel `Γ_γ(x) = ∫ K(x, γ(t)) dt`, discretised by a
/// quadrature rule along a sampled trajectory.
#[derive(Clone, Debug)]
pub struct OccupationKernelEstimate<'a> {
    traj: &'a Trajectory,
    kernel: Kernel,
    rule: QuadratureRule,
    weights: Vec<f64>,
}

impl<'a> OccupationKernelEstimate<'a> {
    pub fn new(traj: &'a Trajectory, kernel: Kernel, rule: QuadratureRule) -> Result<Self> {
        let weights = weights(rule, traj.intervals(), traj.step())?;
        Ok(Self {
            traj,
            kernel,
            rule,
            weights,
        })
    }

    pub fn trajectory(&self) -> &Trajectory {
        self.traj
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn rule(&self) -> QuadratureRule {
        self.rule
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

pub fn occupation_eval(est: &OccupationKernelEstimate<'_>, x: &[f64]) -> Result<f64> {
    check_dim(est.traj.dim(), x.len())?;
    Ok(est
        .weights
        .iter()
        .zip(est.traj.rows())
        .map(|(w, g)| w * est.kernel.eval(x, g))
        .sum())
}

/// `⟨Γ̂_A, Γ̂_B⟩_H`, a tensor-product double quadrature of
/// `K(γ_A(t), γ_B(τ))` accumulated row by row.
pub fn occupation_inner(
    a: &OccupationKernelEstimate<'_>,
    b: &OccupationKernelEstimate<'_>,
) -> Result<f64> {
    if a.kernel != b.kernel {
        return Err(invalid("occupation kernels use different kernels"));
    }
    check_dim(a.traj.dim(), b.traj.dim())?;
    let mut total = 0.0;
    for (wa, ga) in a.weights.iter().zip(a.traj.rows()) {
        let row: f64 = b
            .weights
            .iter()
            .zip(b.traj.rows())
            .map(|(wb, gb)| wb * a.kernel.eval(ga, gb))
            .sum();
        total += wa * row;
    }
    Ok(total)
}

/// `‖Γ̂_A − Γ̂_B‖²_H` from three inner products, clamped at zero.
pub fn occupation_distance_sq(
    a: &OccupationKernelEstimate<'_>,
    b: &OccupationKernelEstimate<'_>,
) -> Result<f64> {
    let d = occupation_inner(a, a)? + occupation_inner(b, b)? - 2.0 * occupation_inner(a, b)?;
    Ok(d.max(0.0))
}

/// Least-squares slope of `log err` against `log h`.
pub fn empirical_order(errors: &[(f64, f64)]) -> Result<f64> {
    if errors.len() < 3 {
        return Err(Error::TooFewPoints {
            needed: 3,
            found: errors.len(),
        });
    }
    if let Some((h, e)) = errors.iter().find(|(h, e)| !(*h > 0.0 && *e > 0.0)) {
        return Err(invalid(format!(
            "order fit needs positive step and error, got ({h}, {e})"
        )));
    }
    let n = errors.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = errors.iter().map(|(h, e)| (h.ln(), e.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(invalid("order fit needs at least two distinct step sizes"));
    }
    Ok(sxy / sxx)
}

/// Pointwise `(1 − s)γ₀ + sγ₁`.
pub fn homotopy_path(g0: &Trajectory, g1: &Trajectory, s: f64) -> Result<Trajectory> {
    check_dim(g0.dim(), g1.dim())?;
    check_dim(g0.len(), g1.len())?;
    if g0.step() != g1.step() {
        return Err(invalid("homotopy endpoints must share a time grid"));
    }
    let data = g0
        .as_slice()
        .iter()
        .zip(g1.as_slice())
        .map(|(a, b)| (1.0 - s) * a + s * b)
        .collect();
    Trajectory::with_start(g0.dim(), g0.step(), g0.start_time(), data)
}

/// Squared distance between the occupation kernels of two points on the
/// linear homotopy from `γ₀` to `γ₁`.
pub fn homotopy_distance(
    g0: &Trajectory,
    g1: &Trajectory,
    s1: f64,
    s2: f64,
    kernel: &Kernel,
    rule: QuadratureRule,
) -> Result<f64> {
    for s in [s1, s2] {
        if !(0.0..=1.0).contains(&s) {
            return Err(invalid(format!("homotopy parameter {s} outside [0, 1]")));
        }
    }
    let p1 = homotopy_path(g0, g1, s1)?;
    if s1 == s2 {
        return Ok(0.0);
    }
    let p2 = homotopy_path(g0, g1, s2)?;
    let e1 = OccupationKernelEstimate::new(&p1, *kernel, rule)?;
    let e2 = OccupationKernelEstimate::new(&p2, *kernel, rule)?;
    occupation_distance_sq(&e1, &e2)
}
