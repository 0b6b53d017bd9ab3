//! The quadratic-form view of identification: Gram matrices of basis
//! functions under the pre-inner product induced by a trajectory.
//!
//! For a trajectory `γ` the pre-inner product of two vector fields is
//! `⟨f, g⟩ = ⟨A_g* Γ_γ, A_f* Γ_γ⟩_H`, a double integral of
//! `f(γ(t))ᵀ H(γ(t), γ(τ)) g(γ(τ))` with `H` the mixed Hessian of the
//! kernel. The parameters then solve `G θ = r`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dynamics::BasisSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::{rhs_integrand, Kernel, KernelFamily};
use crate::quadrature::{weights, QuadratureRule};
use crate::sysid::{pinv, EstimationResult};
use crate::trajectory::Trajectory;

/// Kernel used for the pre-inner product.
#[derive(Clone, Debug, PartialEq)]
pub enum GramKernel {
    /// A scalar kernel with a closed-form mixed Hessian.
    Closed(Kernel),
    /// `K(x, y) = Σ_s K̃(x, c_s) K̃(y, c_s)`, the kernel whose feature map is
    /// the vector of kernel sections at the centers.
    Features {
        base: Kernel,
        centers: Vec<Vec<f64>>,
    },
}

impl From<Kernel> for GramKernel {
    fn from(k: Kernel) -> Self {
        GramKernel::Closed(k)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GramSystem {
    pub g: DMatrix<f64>,
    pub r: DVector<f64>,
    /// `Σ_j ‖A_f* Γ_j − A_h* Γ_j‖²`, the constant of the quadratic form.
    pub offset: f64,
    pub trajectories: usize,
}

impl GramSystem {
    /// `θᵀGθ − 2θᵀr + offset`, the squared residual of the Liouville
    /// relation summed over trajectories.
    pub fn quadratic_form(&self, theta: &[f64]) -> Result<f64> {
        check_dim(self.g.ncols(), theta.len())?;
        let t = DVector::from_column_slice(theta);
        Ok((&self.g * &t).dot(&t) - 2.0 * self.r.dot(&t) + self.offset)
    }
}

/// Dense `Yᵢ(x)` for every sample: `(M + known) × n` blocks, the known
/// part stored as the last row when present.
fn dense_fields(basis: &BasisSet, traj: &Trajectory) -> (usize, Vec<f64>) {
    let n = basis.dim();
    let m = basis.len();
    let rows = m + usize::from(basis.known_part().is_some());
    let mut pattern_vals = vec![0.0; basis.pattern().len()];
    let mut out = vec![0.0; rows * n * traj.len()];
    for (k, x) in traj.rows().enumerate() {
        let block = &mut out[k * rows * n..(k + 1) * rows * n];
        basis.eval_pattern(x, &mut pattern_vals);
        for (&(i, d), v) in basis.pattern().iter().zip(&pattern_vals) {
            block[i * n + d] = *v;
        }
        if let Some(h) = basis.known_part() {
            h.eval_into(x, &mut block[m * n..(m + 1) * n]);
        }
    }
    (rows, out)
}

struct Prepared<'a> {
    kernel: &'a GramKernel,
    n: usize,
    /// Per-sample center gradients for the feature kernel, `S × n` each.
    feature_grads: Vec<f64>,
}

impl Prepared<'_> {
    /// Writes the row-major mixed Hessian at samples `(i, j)` into `h`;
    /// `work` holds two length-`n` scratch vectors.
    fn hessian(
        &self,
        x: &[f64],
        y: &[f64],
        (i, j): (usize, usize),
        work: (&mut [f64], &mut [f64]),
        h: &mut [f64],
    ) -> Result<()> {
        let n = self.n;
        match self.kernel {
            GramKernel::Closed(k) => {
                let (u, v) = work;
                let (a, b) = k.pre_inner_parts(x, y, u, v)?;
                for d in 0..n {
                    for e in 0..n {
                        h[d * n + e] = b * u[d] * v[e];
                    }
                    h[d * n + d] += a;
                }
            }
            GramKernel::Features { centers, .. } => {
                let s = centers.len();
                let gx = &self.feature_grads[i * s * n..(i + 1) * s * n];
                let gy = &self.feature_grads[j * s * n..(j + 1) * s * n];
                h.fill(0.0);
                for c in 0..s {
                    let (px, py) = (&gx[c * n..(c + 1) * n], &gy[c * n..(c + 1) * n]);
                    for d in 0..n {
                        for e in 0..n {
                            h[d * n + e] += px[d] * py[e];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `x ↦ K(x, end) − K(x, start)`.
    fn endpoint_grad(&self, x: &[f64], end: &[f64], start: &[f64], out: &mut [f64]) -> Result<()> {
        match self.kernel {
            GramKernel::Closed(k) => {
                let mut unit = vec![0.0; self.n];
                for d in 0..self.n {
                    unit[d] = 1.0;
                    out[d] = rhs_integrand(k, x, end, start, &unit)?;
                    unit[d] = 0.0;
                }
            }
            GramKernel::Features { base, centers } => {
                let mut g = vec![0.0; self.n];
                out.fill(0.0);
                for c in centers {
                    let diff = base.eval(end, c) - base.eval(start, c);
                    base.eval_grad1(x, c, &mut g);
                    for (o, gv) in out.iter_mut().zip(&g) {
                        *o += diff * gv;
                    }
                }
            }
        }
        Ok(())
    }

    /// `‖K(·, end) − K(·, start)‖²_H`.
    fn endpoint_norm_sq(&self, end: &[f64], start: &[f64]) -> f64 {
        match self.kernel {
            GramKernel::Closed(k) => {
                k.eval(end, end) - 2.0 * k.eval(end, start) + k.eval(start, start)
            }
            GramKernel::Features { base, centers } => centers
                .iter()
                .map(|c| (base.eval(end, c) - base.eval(start, c)).powi(2))
                .sum(),
        }
    }
}

fn check_kernel(kernel: &GramKernel, n: usize) -> Result<()> {
    match kernel {
        GramKernel::Closed(k) => {
            if k.family() == KernelFamily::Linear {
                return Err(Error::UnsupportedKernel("linear"));
            }
        }
        GramKernel::Features { centers, .. } => {
            if centers.is_empty() {
                return Err(invalid("feature kernel needs at least one center"));
            }
            for c in centers {
                check_dim(n, c.len())?;
            }
        }
    }
    Ok(())
}

/// Per-trajectory blocks `(G_ext, rhs_ext, ‖A_f*Γ‖²)` over the basis
/// extended by the known part.
fn trajectory_blocks(
    traj: &Trajectory,
    basis: &BasisSet,
    kernel: &GramKernel,
    rule: QuadratureRule,
) -> Result<(DMatrix<f64>, DVector<f64>, f64)> {
    let n = basis.dim();
    check_dim(n, traj.dim())?;
    let w = weights(rule, traj.intervals(), traj.step())?;
    let (rows, fields) = dense_fields(basis, traj);
    let block = rows * n;
    let feature_grads = match kernel {
        GramKernel::Features { base, centers } => {
            let s = centers.len();
            let mut out = vec![0.0; traj.len() * s * n];
            for (k, x) in traj.rows().enumerate() {
                for (c, center) in centers.iter().enumerate() {
                    let off = (k * s + c) * n;
                    base.eval_grad1(x, center, &mut out[off..off + n]);
                }
            }
            out
        }
        GramKernel::Closed(_) => Vec::new(),
    };
    let prep = Prepared {
        kernel,
        n,
        feature_grads,
    };

    // T_i[d][m] = Σ_j w_j Σ_e H(x_i, x_j)[d][e] Y_m(x_j)[e]
    let partial: Vec<Vec<f64>> = (0..traj.len())
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut t = vec![0.0; n * rows];
            if w[i] == 0.0 {
                return Ok(t);
            }
            let x = traj.row(i);
            let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
            let mut h = vec![0.0; n * n];
            for (j, y) in traj.rows().enumerate() {
                if w[j] == 0.0 {
                    continue;
                }
                prep.hessian(x, y, (i, j), (&mut u, &mut v), &mut h)?;
                let yj = &fields[j * block..(j + 1) * block];
                for m in 0..rows {
                    let ym = &yj[m * n..(m + 1) * n];
                    for d in 0..n {
                        let hd = &h[d * n..(d + 1) * n];
                        let s: f64 = hd.iter().zip(ym).map(|(a, b)| a * b).sum();
                        t[d * rows + m] += w[j] * s;
                    }
                }
            }
            Ok(t)
        })
        .collect::<Result<_>>()?;

    let mut g = DMatrix::zeros(rows, rows);
    let mut rhs = DVector::zeros(rows);
    let mut eg = vec![0.0; n];
    let (end, start) = (traj.last(), traj.first());
    for (i, t) in partial.iter().enumerate() {
        if w[i] == 0.0 {
            continue;
        }
        let yi = &fields[i * block..(i + 1) * block];
        for mp in 0..rows {
            let ymp = &yi[mp * n..(mp + 1) * n];
            for m in 0..rows {
                let s: f64 = (0..n).map(|d| ymp[d] * t[d * rows + m]).sum();
                g[(m, mp)] += w[i] * s;
            }
        }
        prep.endpoint_grad(traj.row(i), end, start, &mut eg)?;
        for m in 0..rows {
            let ym = &yi[m * n..(m + 1) * n];
            rhs[m] += w[i] * eg.iter().zip(ym).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok((g, rhs, prep.endpoint_norm_sq(end, start)))
}

/// Sums the Gram systems of every trajectory. Entries are tensor-product
/// quadratures of the pre-inner-product integrand; a known part `h` moves
/// `⟨h, Yₘ⟩` to the right-hand side.
pub fn gram_assemble(
    trajs: &[Trajectory],
    basis: &BasisSet,
    kernel: &GramKernel,
    rule: QuadratureRule,
) -> Result<GramSystem> {
    if trajs.is_empty() {
        return Err(invalid("no trajectories supplied"));
    }
    check_kernel(kernel, basis.dim())?;
    let m = basis.len();
    let mut g = DMatrix::zeros(m, m);
    let mut r = DVector::zeros(m);
    let mut offset = 0.0;
    for traj in trajs {
        let (ge, re, c0) = trajectory_blocks(traj, basis, kernel, rule)?;
        g += ge.view((0, 0), (m, m));
        if ge.nrows() > m {
            r += re.rows(0, m) - ge.view((0, m), (m, 1));
            offset += c0 - 2.0 * re[m] + ge[(m, m)];
        } else {
            r += re;
            offset += c0;
        }
    }
    Ok(GramSystem {
        g,
        r,
        offset,
        trajectories: trajs.len(),
    })
}

/// Truncated-SVD solve of `G θ = r`; the reported condition number is that
/// of `G`.
pub fn gram_solve(sys: &GramSystem, rcond: f64) -> EstimationResult {
    pinv(&sys.g, &sys.r, rcond)
}
