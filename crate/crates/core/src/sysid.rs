//! Occupation-kernel constraint systems and the solvers that turn them into
//! parameter estimates.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::BasisSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::Kernel;
use crate::quadrature::{weights, QuadratureRule};
use crate::trajectory::Trajectory;

pub const DEFAULT_RCOND: f64 = 1e-12;
pub const LASSO_TOLERANCE: f64 = 1e-10;
pub const LASSO_MAX_SWEEPS: usize = 100_000;

/// `A θ = b` with one row per (trajectory, center) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSystem {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `rows[r] = (trajectory, center)`; row `r = j·S + s`.
    pub rows: Vec<(usize, usize)>,
    pub column_labels: Vec<String>,
}

impl ConstraintSystem {
    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.a.ncols()
    }

    pub fn row_index(&self, trajectory: usize, center: usize) -> Option<usize> {
        self.rows.iter().position(|&r| r == (trajectory, center))
    }

    /// Stacks the rows of several systems over the same basis.
    pub fn stack(parts: &[ConstraintSystem]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| invalid("nothing to stack"))?;
        let m = first.ncols();
        let total: usize = parts.iter().map(|p| p.nrows()).sum();
        let mut a = DMatrix::zeros(total, m);
        let mut b = DVector::zeros(total);
        let mut rows = Vec::with_capacity(total);
        let mut offset = 0;
        let mut traj_offset = 0;
        for p in parts {
            check_dim(m, p.ncols())?;
            a.rows_mut(offset, p.nrows()).copy_from(&p.a);
            b.rows_mut(offset, p.nrows()).copy_from(&p.b);
            rows.extend(p.rows.iter().map(|&(j, s)| (j + traj_offset, s)));
            traj_offset += p.rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
            offset += p.nrows();
        }
        Ok(Self {
            a,
            b,
            rows,
            column_labels: first.column_labels.clone(),
        })
    }

    /// CSV with a header of column labels; each row is labelled
    /// `traj<j>_center<s>` and ends with its `b` entry.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("row");
        for label in &self.column_labels {
            out.push(',');
            out.push_str(label);
        }
        out.push_str(",b\n");
        for (r, &(j, s)) in self.rows.iter().enumerate() {
            out.push_str(&format!("traj{j}_center{s}"));
            for c in 0..self.ncols() {
                out.push_str(&format!(",{:.16e}", self.a[(r, c)]));
            }
            out.push_str(&format!(",{:.16e}\n", self.b[r]));
        }
        out
    }
}

pub(crate) fn column_labels(basis: &BasisSet) -> Vec<String> {
    basis
        .functions()
        .iter()
        .map(|f| match f.target_dim() {
            Some(d) => format!("{}@{}", f.label(), d),
            None => f.label(),
        })
        .collect()
}

/// Basis values along a trajectory in [`BasisSet::pattern`] layout, one
/// block per sample, plus the known part when there is one.
pub(crate) struct SampledBasis {
    pub width: usize,
    pub values: Vec<f64>,
    pub known: Option<Vec<f64>>,
}

impl SampledBasis {
    pub fn new(basis: &BasisSet, traj: &Trajectory) -> Self {
        let width = basis.pattern().len();
        let n = basis.dim();
        let mut values = vec![0.0; width * traj.len()];
        for (k, x) in traj.rows().enumerate() {
            basis.eval_pattern(x, &mut values[k * width..(k + 1) * width]);
        }
        let known = basis.known_part().map(|h| {
            let mut out = vec![0.0; n * traj.len()];
            for (k, x) in traj.rows().enumerate() {
                h.eval_into(x, &mut out[k * n..(k + 1) * n]);
            }
            out
        });
        Self {
            width,
            values,
            known,
        }
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.width..(k + 1) * self.width]
    }

    pub fn known_at(&self, k: usize, n: usize) -> Option<&[f64]> {
        self.known.as_ref().map(|h| &h[k * n..(k + 1) * n])
    }
}

/// Adds `scale · ∇₁K(x, c)·Yᵢ(x)` into `acc` (pattern layout) and returns
/// `scale · ∇₁K(x, c)·h(x)`.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn accumulate_sample(
    kernel: &Kernel,
    x: &[f64],
    center: &[f64],
    dims: &[usize],
    values: &[f64],
    known: Option<&[f64]>,
    scale: f64,
    grad: &mut [f64],
    acc: &mut [f64],
) -> f64 {
    kernel.eval_grad1(x, center, grad);
    for g in grad.iter_mut() {
        *g *= scale;
    }
    for ((a, &d), v) in acc.iter_mut().zip(dims).zip(values) {
        *a += grad[d] * v;
    }
    known.map_or(0.0, |h| grad.iter().zip(h).map(|(g, v)| g * v).sum())
}

/// Folds pattern-layout sums into one entry per basis function.
pub(crate) fn fold_pattern(basis: &BasisSet, acc: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (&(i, _), v) in basis.pattern().iter().zip(acc) {
        out[i] += v;
    }
}

fn check_inputs(trajs: &[Trajectory], basis: &BasisSet, rule: QuadratureRule) -> Result<()> {
    if trajs.is_empty() {
        return Err(invalid("no trajectories supplied"));
    }
    for t in trajs {
        check_dim(basis.dim(), t.dim())?;
        if t.intervals() < rule.min_intervals() {
            return Err(Error::TooFewPoints {
                needed: rule.min_intervals() + 1,
                found: t.len(),
            });
        }
    }
    Ok(())
}

/// Builds `A[(j,s), i] = ∫ ∇₁K(γⱼ(t), c_s)·Yᵢ(γⱼ(t)) dt` and
/// `b[(j,s)] = K(γⱼ(T), c_s) − K(γⱼ(0), c_s)`, minus the same integral of
/// the known part when the basis carries one.
pub fn assemble(
    trajs: &[Trajectory],
    centers: &[Vec<f64>],
    basis: &BasisSet,
    kernel: &Kernel,
    rule: QuadratureRule,
) -> Result<ConstraintSystem> {
    check_inputs(trajs, basis, rule)?;
    if centers.is_empty() {
        return Err(invalid("no centers supplied"));
    }
    let n = basis.dim();
    for c in centers {
        check_dim(n, c.len())?;
    }
    let m = basis.len();
    let s_count = centers.len();
    let dims: Vec<usize> = basis.pattern().iter().map(|p| p.1).collect();
    let sampled: Vec<SampledBasis> = trajs.iter().map(|t| SampledBasis::new(basis, t)).collect();
    let quad: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| weights(rule, t.intervals(), t.step()))
        .collect::<Result<_>>()?;

    let rows: Vec<(usize, usize)> = (0..trajs.len())
        .flat_map(|j| (0..s_count).map(move |s| (j, s)))
        .collect();
    let computed: Vec<(Vec<f64>, f64)> = rows
        .par_iter()
        .map(|&(j, s)| {
            let traj = &trajs[j];
            let c = &centers[s];
            let data = &sampled[j];
            let mut grad = vec![0.0; n];
            let mut acc = vec![0.0; data.width];
            let mut known = 0.0;
            for (k, (x, &w)) in traj.rows().zip(&quad[j]).enumerate() {
                if w == 0.0 {
                    continue;
                }
                known += accumulate_sample(
                    kernel,
                    x,
                    c,
                    &dims,
                    data.at(k),
                    data.known_at(k, n),
                    w,
                    &mut grad,
                    &mut acc,
                );
            }
            let mut row = vec![0.0; m];
            fold_pattern(basis, &acc, &mut row);
            let rhs = kernel.eval(traj.last(), c) - kernel.eval(traj.first(), c) - known;
            (row, rhs)
        })
        .collect();

    let mut a = DMatrix::zeros(rows.len(), m);
    let mut b = DVector::zeros(rows.len());
    for (r, (row, rhs)) in computed.into_iter().enumerate() {
        for (i, v) in row.into_iter().enumerate() {
            a[(r, i)] = v;
        }
        b[r] = rhs;
    }
    Ok(ConstraintSystem {
        a,
        b,
        rows,
        column_labels: column_labels(basis),
    })
}

/// The integral least-squares system: for every trajectory and state
/// coordinate `d`, `Σᵢ θᵢ ∫ Yᵢ,d(γⱼ) dt = γⱼ,d(T) − γⱼ,d(0)`.
///
/// Rows are indexed `(trajectory, coordinate)`.
pub fn ils_system(
    trajs: &[Trajectory],
    basis: &BasisSet,
    rule: QuadratureRule,
) -> Result<ConstraintSystem> {
    check_inputs(trajs, basis, rule)?;
    let n = basis.dim();
    let m = basis.len();
    let mut a = DMatrix::zeros(trajs.len() * n, m);
    let mut b = DVector::zeros(trajs.len() * n);
    let mut rows = Vec::with_capacity(trajs.len() * n);
    for (j, traj) in trajs.iter().enumerate() {
        let data = SampledBasis::new(basis, traj);
        let w = weights(rule, traj.intervals(), traj.step())?;
        let mut acc = vec![0.0; data.width];
        let mut known = vec![0.0; n];
        for (k, &wk) in w.iter().enumerate() {
            for (a, v) in acc.iter_mut().zip(data.at(k)) {
                *a += wk * v;
            }
            if let Some(h) = data.known_at(k, n) {
                for (kn, v) in known.iter_mut().zip(h) {
                    *kn += wk * v;
                }
            }
        }
        for (&(i, d), v) in basis.pattern().iter().zip(&acc) {
            a[(j * n + d, i)] += v;
        }
        for d in 0..n {
            b[j * n + d] = traj.last()[d] - traj.first()[d] - known[d];
            rows.push((j, d));
        }
    }
    Ok(ConstraintSystem {
        a,
        b,
        rows,
        column_labels: column_labels(basis),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationResult {
    pub theta: Vec<f64>,
    /// `‖A θ − b‖₂` for the system that was solved.
    pub residual_norm: f64,
    /// `σ_max / σ_min` over retained singular values; infinite when none
    /// are retained.
    pub condition_number: f64,
    pub effective_rank: usize,
    /// True when fewer singular values were retained than there are
    /// unknowns (including the all-zero case).
    pub rank_deficient: bool,
    /// Selected basis functions, for sparse solves.
    pub support: Option<Vec<usize>>,
}

impl EstimationResult {
    pub fn max_error(&self, truth: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn l2_error(&self, truth: &[f64]) -> f64 {
        self.theta
            .iter()
            .zip(truth)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

pub(crate) fn residual(a: &DMatrix<f64>, b: &DVector<f64>, theta: &[f64]) -> f64 {
    (a * DVector::from_column_slice(theta) - b).norm()
}

/// Spectral filter applied to an SVD: returns `θ = V f(σ) Uᵀ b`.
fn svd_solve(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64, lambda: f64) -> EstimationResult {
    let m = a.ncols();
    let zero = || EstimationResult {
        theta: vec![0.0; m],
        residual_norm: b.norm(),
        condition_number: f64::INFINITY,
        effective_rank: 0,
        rank_deficient: true,
        support: None,
    };
    if a.nrows() == 0 || m == 0 {
        return zero();
    }
    let svd = a.clone().svd(true, true);
    let sigma = &svd.singular_values;
    let smax = sigma.max();
    if !(smax > 0.0) {
        return zero();
    }
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested Vᵀ");
    let cutoff = rcond * smax;
    let mut theta = DVector::zeros(m);
    let mut rank = 0;
    let mut smin = f64::INFINITY;
    for (k, &s) in sigma.iter().enumerate() {
        if s <= cutoff {
            continue;
        }
        rank += 1;
        smin = smin.min(s);
        let coef = u.column(k).dot(b) * s / (s * s + lambda);
        theta.axpy(coef, &vt.row(k).transpose(), 1.0);
    }
    let condition_number = ((smax * smax + lambda) / (smin * smin + lambda)).sqrt();
    let theta: Vec<f64> = theta.iter().copied().collect();
    EstimationResult {
        residual_norm: residual(a, b, &theta),
        theta,
        condition_number,
        effective_rank: rank,
        rank_deficient: rank < m,
        support: None,
    }
}

/// Minimum-norm least squares through a truncated SVD. Singular values at
/// or below `rcond · σ_max` are discarded.
pub fn solve_pinv(sys: &ConstraintSystem, rcond: f64) -> EstimationResult {
    pinv(&sys.a, &sys.b, rcond)
}

pub fn pinv(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> EstimationResult {
    svd_solve(a, b, rcond, 0.0)
}

/// Minimises `‖Aθ − b‖² + λ‖θ‖²`.
pub fn solve_ridge(sys: &ConstraintSystem, lambda: f64) -> Result<EstimationResult> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(invalid(format!(
            "ridge lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(svd_solve(&sys.a, &sys.b, DEFAULT_RCOND, lambda))
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// `argmin ½‖Aθ − b‖² + λ‖D θ‖₁` with `D` the diagonal of column norms,
/// i.e. the LASSO on ℓ₂-standardised columns mapped back to the original
/// scale. Zero columns get a zero coefficient.
pub fn lasso(a: &DMatrix<f64>, b: &DVector<f64>, lambda: f64) -> Result<Vec<f64>> {
    let m = a.ncols();
    let norms: Vec<f64> = (0..m).map(|i| a.column(i).norm()).collect();
    let active: Vec<usize> = (0..m).filter(|&i| norms[i] > 0.0).collect();
    if active.is_empty() {
        return Err(invalid("every column of A is zero"));
    }
    let mut z = DMatrix::zeros(a.nrows(), active.len());
    for (c, &i) in active.iter().enumerate() {
        z.set_column(c, &(a.column(i) / norms[i]));
    }
    let q = z.transpose() * &z;
    let zb = z.transpose() * b;
    let p = active.len();
    let mut beta = vec![0.0; p];
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < LASSO_MAX_SWEEPS {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for i in 0..p {
            let mut r = zb[i];
            for j in 0..p {
                if j != i {
                    r -= q[(i, j)] * beta[j];
                }
            }
            let new = soft_threshold(r, lambda) / q[(i, i)];
            max_change = max_change.max((new - beta[i]).abs());
            beta[i] = new;
        }
        if max_change < LASSO_TOLERANCE {
            converged = true;
            break;
        }
    }
    let mut theta = vec![0.0; m];
    for (c, &i) in active.iter().enumerate() {
        theta[i] = beta[c] / norms[i];
    }
    if converged {
        Ok(theta)
    } else {
        Err(Error::IterationLimit {
            iterations: sweeps,
            last: theta,
        })
    }
}

fn support_of(theta: &[f64], threshold: f64) -> Vec<usize> {
    theta
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0 && v.abs() >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// LASSO selection followed by thresholding and unpenalised refits on the
/// surviving columns, repeated until the support stops changing or
/// `max_refits` refits have been made.
pub fn solve_sparse(
    sys: &ConstraintSystem,
    lambda: f64,
    threshold: f64,
    max_refits: usize,
) -> Result<EstimationResult> {
    if !(lambda > 0.0) || !(threshold >= 0.0) {
        return Err(invalid("sparse solve needs lambda > 0 and threshold ≥ 0"));
    }
    let m = sys.ncols();
    let mut theta = lasso(&sys.a, &sys.b, lambda)?;
    let mut support = support_of(&theta, threshold);
    let mut last_fit: Option<EstimationResult> = None;
    for _ in 0..max_refits {
        let mut sub = DMatrix::zeros(sys.nrows(), support.len());
        for (c, &i) in support.iter().enumerate() {
            sub.set_column(c, &sys.a.column(i));
        }
        let fit = pinv(&sub, &sys.b, DEFAULT_RCOND);
        theta = vec![0.0; m];
        for (c, &i) in support.iter().enumerate() {
            theta[i] = fit.theta[c];
        }
        last_fit = Some(fit);
        let next = support_of(&theta, threshold);
        if next == support {
            break;
        }
        support = next;
    }
    for (i, v) in theta.iter_mut().enumerate() {
        if !support.contains(&i) {
            *v = 0.0;
        }
    }
    let (condition_number, effective_rank) = match &last_fit {
        Some(f) => (f.condition_number, f.effective_rank),
        None => {
            let d = diagnostics(sys);
            (d.condition_number, d.rank)
        }
    };
    Ok(EstimationResult {
        residual_norm: residual(&sys.a, &sys.b, &theta),
        theta,
        condition_number,
        effective_rank,
        rank_deficient: effective_rank < support.len(),
        support: Some(support),
    })
}

/// The integral least-squares baseline solved by [`solve_pinv`].
pub fn ils_solve(
    trajs: &[Trajectory],
    basis: &BasisSet,
    rule: QuadratureRule,
) -> Result<EstimationResult> {
    Ok(solve_pinv(&ils_system(trajs, basis, rule)?, DEFAULT_RCOND))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics {
    pub condition_number: f64,
    pub column_norms: Vec<f64>,
    pub rank: usize,
}

pub fn diagnostics(sys: &ConstraintSystem) -> Diagnostics {
    matrix_diagnostics(&sys.a)
}

pub fn matrix_diagnostics(a: &DMatrix<f64>) -> Diagnostics {
    let column_norms = (0..a.ncols()).map(|i| a.column(i).norm()).collect();
    let sigma = a.singular_values();
    let smax = sigma.max();
    let kept: Vec<f64> = sigma
        .iter()
        .copied()
        .filter(|&s| s > DEFAULT_RCOND * smax)
        .collect();
    let condition_number = if kept.is_empty() {
        f64::INFINITY
    } else {
        smax / kept.iter().copied().fold(f64::INFINITY, f64::min)
    };
    Diagnostics {
        condition_number,
        column_norms,
        rank: kept.len(),
    }
}
