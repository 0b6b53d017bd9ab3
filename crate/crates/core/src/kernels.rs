//! Scalar kernels with analytic first and mixed second derivatives.
//!
//! Parameter conventions:
//!
//! | family        | `K(x, y)`                   |
//! |---------------|-----------------------------|
//! | Gaussian RBF  | `exp(-‖x - y‖² / μ)`        |
//! | exp-dot       | `exp(μ xᵀy)`                |
//! | polynomial    | `(1 + xᵀy / μ)^d`           |
//! | linear        | `xᵀy`                       |
//!
//! `μ` is the squared width for the Gaussian, not the standard deviation.
//!
//! The mixed Hessian `H(x, y)[i][j] = ∂²K / ∂xᵢ∂yⱼ` of every supported
//! family has the form `a·I + b·u vᵀ`. [`PreInnerForm`] stores that
//! structure so the Gram integrand `Y'(x)ᵀ H(x, y) Y(y)` can be evaluated
//! without forming the matrix.

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    GaussianRbf,
    ExpDot,
    Polynomial,
    Linear,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::GaussianRbf => "gaussian",
            KernelFamily::ExpDot => "expdot",
            KernelFamily::Polynomial => "poly",
            KernelFamily::Linear => "linear",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "gaussian_rbf" | "rbf" => Ok(KernelFamily::GaussianRbf),
            "expdot" | "exp_dot" => Ok(KernelFamily::ExpDot),
            "poly" | "polynomial" => Ok(KernelFamily::Polynomial),
            "linear" => Ok(KernelFamily::Linear),
            other => Err(invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Kernel {
    family: KernelFamily,
    mu: f64,
    degree: u32,
}

impl Kernel {
    pub fn new(family: KernelFamily, mu: f64, degree: u32) -> Result<Self> {
        if family != KernelFamily::Linear && !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid(format!(
                "kernel parameter mu must be positive, got {mu}"
            )));
        }
        if family == KernelFamily::Polynomial && degree == 0 {
            return Err(invalid("polynomial kernel degree must be at least 1"));
        }
        Ok(Self { family, mu, degree })
    }

    pub fn gaussian(mu: f64) -> Result<Self> {
        Self::new(KernelFamily::GaussianRbf, mu, 0)
    }

    pub fn exp_dot(mu: f64) -> Result<Self> {
        Self::new(KernelFamily::ExpDot, mu, 0)
    }

    pub fn polynomial(mu: f64, degree: u32) -> Result<Self> {
        Self::new(KernelFamily::Polynomial, mu, degree)
    }

    pub fn linear() -> Self {
        Self {
            family: KernelFamily::Linear,
            mu: 1.0,
            degree: 1,
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        match self.family {
            KernelFamily::GaussianRbf => (-sq_dist(x, y) / self.mu).exp(),
            KernelFamily::ExpDot => (self.mu * dot(x, y)).exp(),
            KernelFamily::Polynomial => (1.0 + dot(x, y) / self.mu).powi(self.degree as i32),
            KernelFamily::Linear => dot(x, y),
        }
    }

    /// Writes `∇₁K(x, y)` into `grad` and returns `K(x, y)`.
    pub fn eval_grad1(&self, x: &[f64], y: &[f64], grad: &mut [f64]) -> f64 {
        debug_assert_eq!(x.len(), grad.len());
        match self.family {
            KernelFamily::GaussianRbf => {
                let k = (-sq_dist(x, y) / self.mu).exp();
                let s = -2.0 / self.mu * k;
                for ((g, xi), yi) in grad.iter_mut().zip(x).zip(y) {
                    *g = s * (xi - yi);
                }
                k
            }
            KernelFamily::ExpDot => {
                let k = (self.mu * dot(x, y)).exp();
                for (g, yi) in grad.iter_mut().zip(y) {
                    *g = self.mu * k * yi;
                }
                k
            }
            KernelFamily::Polynomial => {
                let d = self.degree as i32;
                let p = 1.0 + dot(x, y) / self.mu;
                let s = self.degree as f64 / self.mu * p.powi(d - 1);
                for (g, yi) in grad.iter_mut().zip(y) {
                    *g = s * yi;
                }
                p.powi(d)
            }
            KernelFamily::Linear => {
                grad.copy_from_slice(y);
                dot(x, y)
            }
        }
    }

    pub fn grad1(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        self.eval_grad1(x, y, &mut g);
        g
    }

    /// Gradient in the second argument. Every family here is symmetric, so
    /// this is `∇₁K(y, x)`.
    pub fn grad2(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.grad1(y, x)
    }

    /// Row-major `n × n` matrix with entry `[i][j] = ∂²K / ∂xᵢ∂yⱼ`.
    pub fn grad1grad2(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mut h = vec![0.0; n * n];
        match self.family {
            KernelFamily::GaussianRbf => {
                let k = (-sq_dist(x, y) / self.mu).exp();
                let a = 2.0 / self.mu * k;
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * n + j] = a * (delta - 2.0 / self.mu * (x[i] - y[i]) * (x[j] - y[j]));
                    }
                }
            }
            KernelFamily::ExpDot => {
                let k = (self.mu * dot(x, y)).exp();
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        h[i * n + j] = self.mu * k * (delta + self.mu * y[i] * x[j]);
                    }
                }
            }
            KernelFamily::Polynomial => {
                let d = self.degree as f64;
                let p = 1.0 + dot(x, y) / self.mu;
                let di = self.degree as i32;
                for i in 0..n {
                    for j in 0..n {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        let cross = if self.degree >= 2 {
                            (d - 1.0) / self.mu * y[i] * x[j] * p.powi(di - 2)
                        } else {
                            0.0
                        };
                        h[i * n + j] = d / self.mu * (delta * p.powi(di - 1) + cross);
                    }
                }
            }
            KernelFamily::Linear => {
                for i in 0..n {
                    h[i * n + i] = 1.0;
                }
            }
        }
        h
    }

    /// Closed-form structure of the mixed Hessian at `(x, y)`.
    pub fn pre_inner_form(&self, x: &[f64], y: &[f64]) -> Result<PreInnerForm> {
        let mut left = vec![0.0; x.len()];
        let mut right = vec![0.0; x.len()];
        let (identity, rank_one) = self.pre_inner_parts(x, y, &mut left, &mut right)?;
        Ok(PreInnerForm {
            identity,
            rank_one,
            left,
            right,
        })
    }

    /// Allocation-free [`Kernel::pre_inner_form`]: writes `u` and `v` and
    /// returns `(a, b)` of `H = a·I + b·u vᵀ`.
    pub fn pre_inner_parts(
        &self,
        x: &[f64],
        y: &[f64],
        left: &mut [f64],
        right: &mut [f64],
    ) -> Result<(f64, f64)> {
        let mu = self.mu;
        match self.family {
            KernelFamily::GaussianRbf => {
                let k = (-sq_dist(x, y) / mu).exp();
                for ((l, r), (a, b)) in left.iter_mut().zip(right.iter_mut()).zip(x.iter().zip(y)) {
                    *l = a - b;
                    *r = a - b;
                }
                Ok((2.0 / mu * k, -4.0 / (mu * mu) * k))
            }
            KernelFamily::ExpDot => {
                let k = (mu * dot(x, y)).exp();
                left.copy_from_slice(y);
                right.copy_from_slice(x);
                Ok((mu * k, mu * mu * k))
            }
            KernelFamily::Polynomial => {
                let d = self.degree as f64;
                let di = self.degree as i32;
                let p = 1.0 + dot(x, y) / mu;
                let rank_one = if self.degree >= 2 {
                    d * (d - 1.0) / (mu * mu) * p.powi(di - 2)
                } else {
                    0.0
                };
                left.copy_from_slice(y);
                right.copy_from_slice(x);
                Ok((d / mu * p.powi(di - 1), rank_one))
            }
            KernelFamily::Linear => Err(Error::UnsupportedKernel("linear")),
        }
    }

    /// Gradient of `x ↦ K(x, end) - K(x, start)`, written into `grad`.
    pub fn endpoint_grad(&self, x: &[f64], end: &[f64], start: &[f64], grad: &mut [f64]) {
        let n = x.len();
        let mut tmp = vec![0.0; n];
        self.eval_grad1(x, end, grad);
        self.eval_grad1(x, start, &mut tmp);
        for (g, t) in grad.iter_mut().zip(&tmp) {
            *g -= t;
        }
    }
}

/// `Y'(x)ᵀ (a·I + b·u vᵀ) Y(y)` for a mixed Hessian of that shape, with `u`
/// contracted against the first-argument field and `v` against the second.
#[derive(Clone, Debug, PartialEq)]
pub struct PreInnerForm {
    pub identity: f64,
    pub rank_one: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl PreInnerForm {
    /// `field_x` is `Y_{m'}` evaluated at the first argument, `field_y` is
    /// `Y_m` at the second.
    pub fn apply(&self, field_x: &[f64], field_y: &[f64]) -> f64 {
        self.identity * dot(field_x, field_y)
            + self.rank_one * dot(field_x, &self.left) * dot(&self.right, field_y)
    }
}

/// The integrand of the pre-inner product `⟨Y_m, Y_{m'}⟩`, i.e.
/// `∇₁(∇₂K(x, y) Y_m(y)) Y_{m'}(x)`, from the closed form of each family.
pub fn pre_inner_integrand(
    k: &Kernel,
    x: &[f64],
    y: &[f64],
    ym_at_y: &[f64],
    ymp_at_x: &[f64],
) -> Result<f64> {
    Ok(k.pre_inner_form(x, y)?.apply(ymp_at_x, ym_at_y))
}

/// `∇₁(K(x, γ(T)) - K(x, γ(0))) · Y_m(x)` from the closed form of each family.
pub fn rhs_integrand(
    k: &Kernel,
    x: &[f64],
    end: &[f64],
    start: &[f64],
    ym_at_x: &[f64],
) -> Result<f64> {
    let mu = k.mu;
    match k.family {
        KernelFamily::GaussianRbf => {
            let ke = (-sq_dist(x, end) / mu).exp();
            let ks = (-sq_dist(x, start) / mu).exp();
            let s: f64 = (0..x.len())
                .map(|i| ((x[i] - end[i]) * ke - (x[i] - start[i]) * ks) * ym_at_x[i])
                .sum();
            Ok(-2.0 / mu * s)
        }
        KernelFamily::ExpDot => {
            let ke = (mu * dot(x, end)).exp();
            let ks = (mu * dot(x, start)).exp();
            Ok(mu * (ke * dot(end, ym_at_x) - ks * dot(start, ym_at_x)))
        }
        KernelFamily::Polynomial => {
            let d = k.degree as i32;
            let pe = (1.0 + dot(x, end) / mu).powi(d - 1);
            let ps = (1.0 + dot(x, start) / mu).powi(d - 1);
            Ok(k.degree as f64 / mu * (pe * dot(end, ym_at_x) - ps * dot(start, ym_at_x)))
        }
        KernelFamily::Linear => Err(Error::UnsupportedKernel("linear")),
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}
