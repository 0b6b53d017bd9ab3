//! Incremental constraint systems for trajectories that arrive sample by
//! sample, and a gradient tracker for the time-varying least-squares
//! problem `min ½‖A(t)θ − b(t)‖²`.
//!
//! Integrals are accumulated with trapezoid panels, so pushing a path one
//! sample at a time or all at once yields the same accumulators. Several
//! trajectories can be streamed one after another; finished ones are frozen
//! and only their normal-equation contributions are kept hot.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::dynamics::BasisSet;
use crate::error::{check_dim, invalid, Error, Result};
use crate::kernels::Kernel;
use crate::sysid::{
    column_labels, fold_pattern, pinv, ConstraintSystem, EstimationResult, DEFAULT_RCOND,
};
use crate::trajectory::Trajectory;

/// Norm beyond which the gradient iterate is declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e6;
/// Power iterations spent re-estimating the step size after new data.
pub const POWER_ITERATIONS: usize = 10;
/// Allowed deviation of a pushed time stamp from the grid, relative to `h`.
pub const STREAM_GRID_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct StreamConfig {
    pub kernel: Kernel,
    pub centers: Vec<Vec<f64>>,
    pub basis: BasisSet,
    /// Window length in panels; 0 keeps the whole history.
    pub window: usize,
    /// Fixed gradient step. `None` uses `1/λ_max(AᵀA)` from power iteration.
    pub step_size: Option<f64>,
}

/// A(t), b(t) and the exact least-squares estimate at one instant.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Continuity {
    pub max_delta_a: f64,
    pub max_delta_theta: f64,
    /// Snapshots used after dropping those before full column rank.
    pub used: usize,
}

#[derive(Clone, Debug)]
pub struct StreamState {
    kernel: Kernel,
    centers: Vec<Vec<f64>>,
    basis: BasisSet,
    dims: Vec<usize>,
    window: usize,
    fixed_step: Option<f64>,
    /// Entries per center in a panel record: pattern values plus known part.
    stride: usize,

    // Active trajectory.
    t0: f64,
    h: Option<f64>,
    samples: usize,
    last_x: Vec<f64>,
    last_integrand: Vec<f64>,
    acc: Vec<f64>,
    psi_start: Vec<f64>,
    psi_now: Vec<f64>,
    ring: VecDeque<Vec<f64>>,
    psi_ring: VecDeque<Vec<f64>>,

    // Finished trajectories.
    frozen_a: Vec<DMatrix<f64>>,
    frozen_b: Vec<DVector<f64>>,
    frozen_gram: DMatrix<f64>,
    frozen_atb: DVector<f64>,

    theta: Vec<f64>,
    alpha: Option<f64>,
    power_vec: DVector<f64>,
    dirty: bool,
}

impl StreamState {
    pub fn new(config: StreamConfig) -> Result<Self> {
        let StreamConfig {
            kernel,
            centers,
            basis,
            window,
            step_size,
        } = config;
        if centers.is_empty() {
            return Err(invalid("streaming needs at least one center"));
        }
        for c in &centers {
            check_dim(basis.dim(), c.len())?;
        }
        if let Some(a) = step_size {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(invalid(format!("step size must be nonnegative, got {a}")));
            }
        }
        let m = basis.len();
        let stride = basis.pattern().len() + 1;
        let s = centers.len();
        Ok(Self {
            dims: basis.pattern().iter().map(|p| p.1).collect(),
            kernel,
            window,
            fixed_step: step_size,
            stride,
            t0: 0.0,
            h: None,
            samples: 0,
            last_x: Vec::new(),
            last_integrand: vec![0.0; s * stride],
            acc: vec![0.0; s * stride],
            psi_start: vec![0.0; s],
            psi_now: vec![0.0; s],
            ring: VecDeque::new(),
            psi_ring: VecDeque::new(),
            frozen_a: Vec::new(),
            frozen_b: Vec::new(),
            frozen_gram: DMatrix::zeros(m, m),
            frozen_atb: DVector::zeros(m),
            theta: vec![0.0; m],
            alpha: step_size,
            power_vec: DVector::from_element(m, 1.0 / (m as f64).sqrt()),
            dirty: false,
            centers,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        check_dim(self.theta.len(), theta.len())?;
        self.theta.copy_from_slice(theta);
        Ok(())
    }

    /// Time of the latest sample of the active trajectory.
    pub fn time(&self) -> Option<f64> {
        match (self.samples, self.h) {
            (0, _) => None,
            (_, None) => Some(self.t0),
            (k, Some(h)) => Some(self.t0 + (k - 1) as f64 * h),
        }
    }

    /// Samples received for the active trajectory.
    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn trajectories(&self) -> usize {
        self.frozen_a.len() + usize::from(self.samples > 0)
    }

    /// Current step size (after the last gradient step).
    pub fn step_size(&self) -> Option<f64> {
        self.alpha
    }

    /// `∇₁K(x, c_s)·Yᵢ(x)` in pattern layout and `∇₁K(x, c_s)·h(x)` for
    /// every center.
    fn integrand(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let p = self.stride - 1;
        let mut vals = vec![0.0; p];
        self.basis.eval_pattern(x, &mut vals);
        let known = self.basis.known_part().map(|f| f.eval(x));
        let mut grad = vec![0.0; n];
        let mut out = vec![0.0; self.centers.len() * self.stride];
        for (s, c) in self.centers.iter().enumerate() {
            self.kernel.eval_grad1(x, c, &mut grad);
            let row = &mut out[s * self.stride..(s + 1) * self.stride];
            for ((r, &d), v) in row.iter_mut().zip(&self.dims).zip(&vals) {
                *r = grad[d] * v;
            }
            row[p] = known
                .as_ref()
                .map_or(0.0, |h| grad.iter().zip(h).map(|(g, v)| g * v).sum());
        }
        out
    }

    fn psi(&self, x: &[f64]) -> Vec<f64> {
        self.centers
            .iter()
            .map(|c| self.kernel.eval(x, c))
            .collect()
    }

    /// Appends one sample of the active trajectory.
    pub fn push(&mut self, t: f64, x: &[f64]) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at t = {t}")));
        }
        match (self.samples, self.h) {
            (0, _) => {
                self.t0 = t;
                self.psi_start = self.psi(x);
                self.psi_now = self.psi_start.clone();
                self.last_integrand = self.integrand(x);
                self.last_x = x.to_vec();
                self.samples = 1;
                if self.window > 0 {
                    self.psi_ring.push_back(self.psi_start.clone());
                }
                self.dirty = true;
                return Ok(());
            }
            (1, None) => {
                if !(t > self.t0) {
                    return Err(Error::GridDiscontinuity {
                        expected: f64::NAN,
                        found: t,
                    });
                }
                self.h = Some(t - self.t0);
            }
            (k, Some(h)) => {
                let expected = self.t0 + k as f64 * h;
                if (t - expected).abs() > STREAM_GRID_TOLERANCE * h {
                    return Err(Error::GridDiscontinuity { expected, found: t });
                }
            }
            (_, None) => unreachable!("step is known after two samples"),
        }
        let h = self.h.expect("grid step set");
        let new = self.integrand(x);
        let panel: Vec<f64> = self
            .last_integrand
            .iter()
            .zip(&new)
            .map(|(a, b)| 0.5 * h * (a + b))
            .collect();
        for (a, p) in self.acc.iter_mut().zip(&panel) {
            *a += p;
        }
        self.psi_now = self.psi(x);
        if self.window > 0 {
            self.ring.push_back(panel);
            self.psi_ring.push_back(self.psi_now.clone());
            while self.ring.len() > self.window {
                let old = self.ring.pop_front().expect("nonempty ring");
                for (a, p) in self.acc.iter_mut().zip(&old) {
                    *a -= p;
                }
                self.psi_ring.pop_front();
            }
            self.psi_start = self.psi_ring.front().expect("nonempty ring").clone();
        }
        self.last_integrand = new;
        self.last_x = x.to_vec();
        self.samples += 1;
        self.dirty = true;
        Ok(())
    }

    /// Pushes every sample of `traj` into the active trajectory.
    pub fn push_trajectory(&mut self, traj: &Trajectory) -> Result<()> {
        for (k, x) in traj.rows().enumerate() {
            self.push(traj.time(k), x)?;
        }
        Ok(())
    }

    /// Rows of the active trajectory: `S × M` block and right-hand side.
    pub fn current_block(&self) -> (DMatrix<f64>, DVector<f64>) {
        let s = self.centers.len();
        let m = self.basis.len();
        let p = self.stride - 1;
        let mut a = DMatrix::zeros(s, m);
        let mut b = DVector::zeros(s);
        if self.samples == 0 {
            return (a, b);
        }
        let mut row = vec![0.0; m];
        for c in 0..s {
            let rec = &self.acc[c * self.stride..(c + 1) * self.stride];
            fold_pattern(&self.basis, &rec[..p], &mut row);
            for (i, v) in row.iter().enumerate() {
                a[(c, i)] = *v;
            }
            b[c] = self.psi_now[c] - self.psi_start[c] - rec[p];
        }
        (a, b)
    }

    /// Freezes the active trajectory; following pushes start a new one.
    pub fn start_new_trajectory(&mut self) {
        if self.samples == 0 {
            return;
        }
        let (a, b) = self.current_block();
        self.frozen_gram += a.transpose() * &a;
        self.frozen_atb += a.transpose() * &b;
        self.frozen_a.push(a);
        self.frozen_b.push(b);
        self.samples = 0;
        self.h = None;
        self.acc.fill(0.0);
        self.ring.clear();
        self.psi_ring.clear();
        self.dirty = true;
    }

    /// The stacked system over frozen and active trajectories.
    pub fn system(&self) -> ConstraintSystem {
        let s = self.centers.len();
        let m = self.basis.len();
        let mut blocks: Vec<(DMatrix<f64>, DVector<f64>)> = self
            .frozen_a
            .iter()
            .cloned()
            .zip(self.frozen_b.iter().cloned())
            .collect();
        if self.samples > 0 {
            blocks.push(self.current_block());
        }
        let mut a = DMatrix::zeros(blocks.len() * s, m);
        let mut b = DVector::zeros(blocks.len() * s);
        let mut rows = Vec::with_capacity(blocks.len() * s);
        for (j, (ab, bb)) in blocks.iter().enumerate() {
            a.rows_mut(j * s, s).copy_from(ab);
            b.rows_mut(j * s, s).copy_from(bb);
            rows.extend((0..s).map(|c| (j, c)));
        }
        ConstraintSystem {
            a,
            b,
            rows,
            column_labels: column_labels(&self.basis),
        }
    }

    /// `AᵀA` and `Aᵀb` over all data.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (a, b) = self.current_block();
        (
            &self.frozen_gram + a.transpose() * &a,
            &self.frozen_atb + a.transpose() * &b,
        )
    }

    pub fn residual_norm(&self) -> f64 {
        let sys = self.system();
        (&sys.a * DVector::from_column_slice(&self.theta) - &sys.b).norm()
    }

    /// Exact least-squares solution of the current system.
    pub fn least_squares(&self) -> EstimationResult {
        let sys = self.system();
        pinv(&sys.a, &sys.b, DEFAULT_RCOND)
    }

    pub fn snapshot(&self) -> Snapshot {
        let sys = self.system();
        Snapshot {
            time: self.time().unwrap_or(f64::NAN),
            a: sys.a,
            b: sys.b,
        }
    }

    fn refresh_step(&mut self, gram: &DMatrix<f64>) {
        if self.fixed_step.is_some() || !self.dirty {
            return;
        }
        let mut v = self.power_vec.clone();
        let mut lambda = 0.0;
        for _ in 0..POWER_ITERATIONS {
            let w = gram * &v;
            lambda = w.norm();
            if lambda == 0.0 {
                break;
            }
            v = w / lambda;
        }
        if lambda > 0.0 {
            self.power_vec = v;
            self.alpha = Some(1.0 / lambda);
        } else {
            self.alpha = None;
        }
        self.dirty = false;
    }

    /// `θ ← θ − α Aᵀ(Aθ − b)`.
    pub fn gradient_chase_step(&mut self) -> Result<()> {
        let (gram, atb) = self.normal_equations();
        self.refresh_step(&gram);
        let Some(alpha) = self.alpha else {
            return Ok(());
        };
        let theta = DVector::from_column_slice(&self.theta);
        let grad = &gram * &theta - &atb;
        let next = theta - alpha * grad;
        let norm = next.norm();
        if !(norm <= DIVERGENCE_NORM) {
            return Err(Error::StepSize { norm });
        }
        self.theta.copy_from_slice(next.as_slice());
        Ok(())
    }
}

/// Largest consecutive changes of `A(t)` (Frobenius) and of its exact
/// least-squares solution, over snapshots taken after full column rank.
pub fn track_continuity(history: &[Snapshot]) -> Result<Continuity> {
    let mut kept: Vec<(&Snapshot, Vec<f64>)> = Vec::new();
    for snap in history {
        let fit = pinv(&snap.a, &snap.b, DEFAULT_RCOND);
        if !fit.rank_deficient {
            kept.push((snap, fit.theta));
        }
    }
    if kept.len() < 2 {
        return Err(Error::TooFewPoints {
            needed: 2,
            found: kept.len(),
        });
    }
    let mut out = Continuity {
        max_delta_a: 0.0,
        max_delta_theta: 0.0,
        used: kept.len(),
    };
    for pair in kept.windows(2) {
        let (s1, t1) = (&pair[0].0, &pair[0].1);
        let (s2, t2) = (&pair[1].0, &pair[1].1);
        if s1.a.shape() != s2.a.shape() {
            return Err(invalid("snapshots have different shapes"));
        }
        out.max_delta_a = out.max_delta_a.max((&s2.a - &s1.a).norm());
        let dt: f64 = t1
            .iter()
            .zip(t2)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        out.max_delta_theta = out.max_delta_theta.max(dt);
    }
    Ok(out)
}
