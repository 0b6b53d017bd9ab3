//! Vector fields, basis dictionaries, built-in benchmark systems and a fixed
//! step RK4 integrator.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, invalid, Error, Result};
use crate::trajectory::{parse_row, Trajectory};

type FieldFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A map `ℝⁿ → ℝⁿ` evaluated into a caller-provided buffer.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    func: Arc<FieldFn>,
    time_augmented: bool,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("dim", &self.dim)
            .field("time_augmented", &self.time_augmented)
            .finish()
    }
}

impl VectorField {
    pub fn new(dim: usize, func: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        Self {
            dim,
            func: Arc::new(func),
            time_augmented: false,
        }
    }

    /// Marks the last state coordinate as time (`ẋₙ = 1`).
    pub fn time_augmented(mut self) -> Self {
        self.time_augmented = true;
        self
    }

    pub fn is_time_augmented(&self) -> bool {
        self.time_augmented
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        (self.func)(x, out)
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }
}

/// `x ↦ x^α · e_k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Monomial {
    pub exponents: Vec<u32>,
    pub target: usize,
}

impl Monomial {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .filter(|(e, _)| **e > 0)
            .map(|(e, v)| v.powi(*e as i32))
            .product()
    }

    /// e.g. `x1^1x2^0`.
    pub fn label(&self) -> String {
        self.exponents
            .iter()
            .enumerate()
            .map(|(i, e)| format!("x{}^{}", i + 1, e))
            .collect()
    }
}

/// A basis element that is not a monomial, nonzero only on `support`.
#[derive(Clone)]
pub struct CustomFunction {
    pub label: String,
    pub support: Vec<usize>,
    func: Arc<FieldFn>,
}

impl CustomFunction {
    /// `func` writes one value per entry of `support`.
    pub fn new(
        label: impl Into<String>,
        support: Vec<usize>,
        func: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            support,
            func: Arc::new(func),
        }
    }
}

#[derive(Clone)]
pub enum BasisFunction {
    Monomial(Monomial),
    Custom(CustomFunction),
}

impl fmt::Debug for BasisFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisFunction::Monomial(m) => write!(f, "{}·e{}", m.label(), m.target + 1),
            BasisFunction::Custom(c) => write!(f, "{}", c.label),
        }
    }
}

impl BasisFunction {
    pub fn support(&self) -> &[usize] {
        match self {
            BasisFunction::Monomial(m) => std::slice::from_ref(&m.target),
            BasisFunction::Custom(c) => &c.support,
        }
    }

    pub fn label(&self) -> String {
        match self {
            BasisFunction::Monomial(m) => m.label(),
            BasisFunction::Custom(c) => c.label.clone(),
        }
    }

    /// Target dimension (1-based) for single-output functions.
    pub fn target_dim(&self) -> Option<usize> {
        match self.support() {
            [k] => Some(k + 1),
            _ => None,
        }
    }

    fn eval_support(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BasisFunction::Monomial(m) => out[0] = m.value(x),
            BasisFunction::Custom(c) => (c.func)(x, out),
        }
    }
}

/// Dictionary `Y₁, …, Y_M : ℝⁿ → ℝⁿ`, plus an optional known drift `h`.
#[derive(Clone, Debug)]
pub struct BasisSet {
    dim: usize,
    functions: Vec<BasisFunction>,
    known: Option<VectorField>,
    pattern: Vec<(usize, usize)>,
}

impl BasisSet {
    pub fn new(dim: usize, functions: Vec<BasisFunction>) -> Result<Self> {
        if functions.is_empty() {
            return Err(invalid("basis must contain at least one function"));
        }
        let mut pattern = Vec::new();
        for (i, f) in functions.iter().enumerate() {
            if let BasisFunction::Monomial(m) = f {
                check_dim(dim, m.exponents.len())?;
            }
            for &k in f.support() {
                if k >= dim {
                    return Err(invalid(format!("basis function {i} targets dimension {k}")));
                }
                pattern.push((i, k));
            }
        }
        Ok(Self {
            dim,
            functions,
            known: None,
            pattern,
        })
    }

    pub fn with_known_part(mut self, known: VectorField) -> Result<Self> {
        check_dim(self.dim, known.dim())?;
        self.known = Some(known);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[BasisFunction] {
        &self.functions
    }

    pub fn known_part(&self) -> Option<&VectorField> {
        self.known.as_ref()
    }

    /// Flattened `(function index, output dimension)` list of possibly
    /// nonzero entries; [`BasisSet::eval_pattern`] fills values in this order.
    pub fn pattern(&self) -> &[(usize, usize)] {
        &self.pattern
    }

    pub fn eval_pattern(&self, x: &[f64], out: &mut [f64]) {
        let mut offset = 0;
        for f in &self.functions {
            let width = f.support().len();
            f.eval_support(x, &mut out[offset..offset + width]);
            offset += width;
        }
    }

    /// Full `ℝⁿ` value of `Y_i(x)`.
    pub fn eval(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let f = &self.functions[i];
        let mut vals = vec![0.0; f.support().len()];
        f.eval_support(x, &mut vals);
        let mut out = vec![0.0; self.dim];
        for (&k, v) in f.support().iter().zip(vals) {
            out[k] = v;
        }
        out
    }

    /// `Σ θᵢ Yᵢ(x)`, excluding the known part.
    pub fn contract(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut vals = vec![0.0; self.pattern.len()];
        self.eval_pattern(x, &mut vals);
        let mut out = vec![0.0; self.dim];
        for (&(i, k), v) in self.pattern.iter().zip(vals) {
            out[k] += theta[i] * v;
        }
        out
    }

    /// The vector field `h + Σ θᵢ Yᵢ`.
    pub fn field(&self, theta: &[f64]) -> Result<VectorField> {
        check_dim(self.len(), theta.len())?;
        let basis = self.clone();
        let theta = theta.to_vec();
        let augmented = self.known.as_ref().is_some_and(|k| k.is_time_augmented());
        let field = VectorField::new(self.dim, move |x, out| {
            let v = basis.contract(&theta, x);
            out.copy_from_slice(&v);
            if let Some(h) = &basis.known {
                let mut hv = vec![0.0; x.len()];
                h.eval_into(x, &mut hv);
                for (o, a) in out.iter_mut().zip(hv) {
                    *o += a;
                }
            }
        });
        Ok(if augmented {
            field.time_augmented()
        } else {
            field
        })
    }

    /// Re-expresses monomial coefficients in another monomial basis. Fails
    /// when a nonzero coefficient has no counterpart in `target`.
    pub fn transfer(&self, theta: &[f64], target: &BasisSet) -> Result<Vec<f64>> {
        check_dim(self.len(), theta.len())?;
        let mut out = vec![0.0; target.len()];
        for (f, &v) in self.functions.iter().zip(theta) {
            if v == 0.0 {
                continue;
            }
            let BasisFunction::Monomial(m) = f else {
                return Err(invalid("only monomial coefficients can be transferred"));
            };
            let pos = target
                .functions
                .iter()
                .position(|g| matches!(g, BasisFunction::Monomial(q) if q == m))
                .ok_or_else(|| invalid(format!("{f:?} is missing from the target basis")))?;
            out[pos] = v;
        }
        Ok(out)
    }

    /// Keeps only the listed functions, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let functions = indices
            .iter()
            .map(|&i| {
                self.functions
                    .get(i)
                    .cloned()
                    .ok_or_else(|| invalid(format!("basis index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(self.dim, functions)?;
        out.known = self.known.clone();
        Ok(out)
    }
}

/// Monomials of total degree at most `max_degree` in `dim` variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MonomialSpec {
    pub dim: usize,
    pub max_degree: u32,
}

/// Exponent tuples ordered by total degree, then lexicographically with the
/// first variable most significant: `1, x1, x2, x1², x1x2, x2², …`.
pub fn graded_exponents(dim: usize, max_degree: u32) -> Vec<Vec<u32>> {
    fn fill(remaining: u32, slots: usize, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if slots == 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for e in (0..=remaining).rev() {
            prefix.push(e);
            fill(remaining - e, slots - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    for degree in 0..=max_degree {
        fill(degree, dim, &mut Vec::with_capacity(dim), &mut out);
    }
    out
}

/// All `x^α e_k` with `|α| ≤ d`, ordered by target dimension `k` first and
/// graded-lexicographic `α` second. There are `n·C(n+d, d)` of them.
pub fn monomial_basis(spec: MonomialSpec) -> Result<BasisSet> {
    if spec.dim == 0 {
        return Err(invalid("monomial dimension must be positive"));
    }
    let exps = graded_exponents(spec.dim, spec.max_degree);
    let functions = (0..spec.dim)
        .flat_map(|target| {
            exps.iter().map(move |e| {
                BasisFunction::Monomial(Monomial {
                    exponents: e.clone(),
                    target,
                })
            })
        })
        .collect();
    BasisSet::new(spec.dim, functions)
}

/// Index of `x^α e_k` in [`monomial_basis`] ordering.
pub fn monomial_index(spec: MonomialSpec, exponents: &[u32], target: usize) -> Option<usize> {
    let exps = graded_exponents(spec.dim, spec.max_degree);
    let pos = exps.iter().position(|e| e.as_slice() == exponents)?;
    Some(target * exps.len() + pos)
}

/// A control input given as samples, linearly interpolated and held
/// constant outside the sampled range.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSignal {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl ControlSignal {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_dim(times.len(), values.len())?;
        if times.is_empty() {
            return Err(invalid("control signal needs at least one sample"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("control times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    pub fn at(&self, t: f64) -> f64 {
        let ts = &self.times;
        if t <= ts[0] {
            return self.values[0];
        }
        if t >= ts[ts.len() - 1] {
            return self.values[ts.len() - 1];
        }
        let k = ts.partition_point(|&s| s <= t) - 1;
        let w = (t - ts[k]) / (ts[k + 1] - ts[k]);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    /// First and last sample times.
    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    /// Parses a `t,tau` CSV (time column may be nonuniform).
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.split(',').map(str::trim).eq(["t", "tau"]) => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "expected header `t,tau`".into(),
                })
            }
        }
        let (mut times, mut values) = (Vec::new(), Vec::new());
        for (idx, line) in lines {
            let row = parse_row(line, idx + 1, 2)?;
            times.push(row[0]);
            values.push(row[1]);
        }
        Self::new(times, values)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// A benchmark system: its field, the true parameters and the basis in
/// which those parameters are expressed.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    pub name: String,
    pub field: VectorField,
    pub theta: Vec<f64>,
    pub basis: BasisSet,
}

pub const LORENZ_SIGMA: f64 = 10.0;
pub const LORENZ_RHO: f64 = 28.0;
pub const LORENZ_BETA: f64 = 8.0 / 3.0;

/// Default parameters for the synthetic controlled system (no benchmark
/// values are available offline).
pub const EMPS_SYNTHETIC_THETA: [f64; 4] = [2.0, 0.5, 0.3, 0.1];

/// `system1`, `lorenz` or `emps_form` (the latter needs a control signal).
pub fn builtin_system(name: &str, control: Option<ControlSignal>) -> Result<SystemSpec> {
    match name {
        "system1" => Ok(system1()),
        "lorenz" => Ok(lorenz()),
        "emps_form" | "emps" => {
            let control = control
                .ok_or_else(|| invalid("emps_form requires a control signal (`t,tau` CSV)"))?;
            emps_form(control, EMPS_SYNTHETIC_THETA)
        }
        other => Err(Error::UnknownSystem(other.to_string())),
    }
}

/// `ẋ₁ = 2x₁ − x₁x₂`, `ẋ₂ = 2x₁² − x₂`.
pub fn system1() -> SystemSpec {
    let spec = MonomialSpec {
        dim: 2,
        max_degree: 2,
    };
    let basis = monomial_basis(spec).expect("static basis");
    let mut theta = vec![0.0; basis.len()];
    let idx = |e: &[u32], k| monomial_index(spec, e, k).expect("static index");
    theta[idx(&[1, 0], 0)] = 2.0;
    theta[idx(&[1, 1], 0)] = -1.0;
    theta[idx(&[2, 0], 1)] = 2.0;
    theta[idx(&[0, 1], 1)] = -1.0;
    let field = VectorField::new(2, |x, out| {
        out[0] = 2.0 * x[0] - x[0] * x[1];
        out[1] = 2.0 * x[0] * x[0] - x[1];
    });
    SystemSpec {
        name: "system1".into(),
        field,
        theta,
        basis,
    }
}

pub fn lorenz() -> SystemSpec {
    let spec = MonomialSpec {
        dim: 3,
        max_degree: 2,
    };
    let basis = monomial_basis(spec).expect("static basis");
    let mut theta = vec![0.0; basis.len()];
    let mut set = |e: &[u32], k: usize, v: f64| {
        theta[monomial_index(spec, e, k).expect("static index")] = v;
    };
    set(&[1, 0, 0], 0, -LORENZ_SIGMA);
    set(&[0, 1, 0], 0, LORENZ_SIGMA);
    set(&[1, 0, 0], 1, LORENZ_RHO);
    set(&[0, 1, 0], 1, -1.0);
    set(&[1, 0, 1], 1, -1.0);
    set(&[1, 1, 0], 2, 1.0);
    set(&[0, 0, 1], 2, -LORENZ_BETA);
    let field = VectorField::new(3, |x, out| {
        out[0] = LORENZ_SIGMA * (x[1] - x[0]);
        out[1] = x[0] * (LORENZ_RHO - x[2]) - x[1];
        out[2] = x[0] * x[1] - LORENZ_BETA * x[2];
    });
    SystemSpec {
        name: "lorenz".into(),
        field,
        theta,
        basis,
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Time-augmented positioning model `x = (position, velocity, t)`:
/// `ẋ = (x₂, 0, 1)ᵀ + Σ θᵢ Yᵢ(x)` with
/// `Y = (0, τ(x₃), 0), (0, −x₂, 0), (0, −sign x₂, 0), (0, −1, 0)`.
pub fn emps_form(control: ControlSignal, theta: [f64; 4]) -> Result<SystemSpec> {
    let tau = Arc::new(control);
    let t1 = Arc::clone(&tau);
    let functions = vec![
        BasisFunction::Custom(CustomFunction::new("tau(x3)", vec![1], move |x, out| {
            out[0] = t1.at(x[2])
        })),
        BasisFunction::Custom(CustomFunction::new("-x2", vec![1], |x, out| out[0] = -x[1])),
        BasisFunction::Custom(CustomFunction::new("-sign(x2)", vec![1], |x, out| {
            out[0] = -sign(x[1])
        })),
        BasisFunction::Custom(CustomFunction::new("-1", vec![1], |_, out| out[0] = -1.0)),
    ];
    let known = VectorField::new(3, |x, out| {
        out[0] = x[1];
        out[1] = 0.0;
        out[2] = 1.0;
    })
    .time_augmented();
    let basis = BasisSet::new(3, functions)?.with_known_part(known)?;
    let field = basis.field(&theta)?;
    Ok(SystemSpec {
        name: "emps_form".into(),
        field,
        theta: theta.to_vec(),
        basis,
    })
}

/// Disturbance added to the field during integration.
#[derive(Clone, Debug)]
pub enum ProcessNoise {
    /// `ẋ = f(x) + η(x)` for a deterministic `η`.
    Field(VectorField),
    /// Uniform draws in `[-bound, bound]ⁿ`, held constant over each step.
    Random { bound: f64, seed: u64 },
}

/// Classical fixed-step RK4 over `[0, t_end]`.
pub fn integrate_rk4(
    field: &VectorField,
    x0: &[f64],
    t_end: f64,
    h: f64,
    noise: Option<&ProcessNoise>,
) -> Result<Trajectory> {
    let n = field.dim();
    check_dim(n, x0.len())?;
    if !(h > 0.0) || !(t_end > 0.0) {
        return Err(invalid("integration horizon and step must be positive"));
    }
    let steps = (t_end / h).round() as usize;
    if steps < 2 {
        return Err(invalid(format!(
            "horizon {t_end} holds fewer than two steps of {h}"
        )));
    }
    if let Some(ProcessNoise::Field(eta)) = noise {
        check_dim(n, eta.dim())?;
    }
    let mut rng = match noise {
        Some(ProcessNoise::Random { seed, .. }) => Some(ChaCha8Rng::seed_from_u64(*seed)),
        _ => None,
    };
    let mut held = vec![0.0; n];
    let mut eta_buf = vec![0.0; n];

    let rhs = |x: &[f64], held: &[f64], eta_buf: &mut [f64], out: &mut [f64]| {
        field.eval_into(x, out);
        match noise {
            Some(ProcessNoise::Field(eta)) => {
                eta.eval_into(x, eta_buf);
                for (o, e) in out.iter_mut().zip(eta_buf.iter()) {
                    *o += e;
                }
            }
            Some(ProcessNoise::Random { .. }) => {
                for (o, e) in out.iter_mut().zip(held) {
                    *o += e;
                }
            }
            None => {}
        }
    };

    let mut data = Vec::with_capacity((steps + 1) * n);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut tmp = vec![0.0; n];
    for step in 0..steps {
        if let (Some(rng), Some(ProcessNoise::Random { bound, .. })) = (rng.as_mut(), noise) {
            for v in held.iter_mut() {
                *v = rng.gen_range(-1.0..=1.0) * bound;
            }
        }
        rhs(&x, &held, &mut eta_buf, &mut k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, &held, &mut eta_buf, &mut k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, &held, &mut eta_buf, &mut k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        rhs(&tmp, &held, &mut eta_buf, &mut k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: step as f64 * h,
            });
        }
        data.extend_from_slice(&x);
    }
    Trajectory::new(n, h, data)
}

/// Grid points `lo, lo + width, … ≤ hi` along every axis, in lexicographic
/// order with the first axis most significant.
pub fn lattice_centers(bounds: &[(f64, f64)], width: f64) -> Result<Vec<Vec<f64>>> {
    let axes: Vec<(f64, f64, f64)> = bounds.iter().map(|&(lo, hi)| (lo, hi, width)).collect();
    lattice_axes(&axes)
}

/// Like [`lattice_centers`] with a separate width per axis.
pub fn lattice_axes(axes: &[(f64, f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if axes.is_empty() {
        return Err(invalid("lattice needs at least one axis"));
    }
    let mut ticks = Vec::with_capacity(axes.len());
    for &(lo, hi, width) in axes {
        if !(width > 0.0) || !width.is_finite() {
            return Err(invalid(format!(
                "lattice width must be positive, got {width}"
            )));
        }
        if !(lo <= hi) {
            return Err(invalid(format!("lattice bounds [{lo}, {hi}] are reversed")));
        }
        let count = ((hi - lo) / width + 1e-9).floor() as usize + 1;
        ticks.push(
            (0..count)
                .map(|k| lo + k as f64 * width)
                .collect::<Vec<_>>(),
        );
    }
    let mut points = vec![Vec::with_capacity(axes.len())];
    for axis in &ticks {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn monomial_counts() {
        let count = |dim, d| {
            monomial_basis(MonomialSpec { dim, max_degree: d })
                .unwrap()
                .len()
        };
        assert_eq!(count(3, 2), 30);
        assert_eq!(count(3, 3), 60);
        assert_eq!(count(2, 5), 42);
        for n in 1..=5 {
            for d in 0..=5u32 {
                assert_eq!(count(n, d), n * binom(n + d as usize, d as usize));
            }
        }
    }

    #[test]
    fn graded_order() {
        let e = graded_exponents(2, 2);
        assert_eq!(
            e,
            vec![
                vec![0, 0],
                vec![1, 0],
                vec![0, 1],
                vec![2, 0],
                vec![1, 1],
                vec![0, 2]
            ]
        );
    }

    #[test]
    fn system1_truth() {
        let s = system1();
        let nz: Vec<(String, usize, f64)> = s
            .theta
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| {
                let f = &s.basis.functions()[i];
                (f.label(), f.target_dim().unwrap(), *v)
            })
            .collect();
        assert_eq!(
            nz,
            vec![
                ("x1^1x2^0".to_string(), 1, 2.0),
                ("x1^1x2^1".to_string(), 1, -1.0),
                ("x1^0x2^1".to_string(), 2, -1.0),
                ("x1^2x2^0".to_string(), 2, 2.0),
            ]
        );
    }

    #[test]
    fn lorenz_values() {
        let s = lorenz();
        assert_eq!(s.field.eval(&[-8.0, 7.0, 27.0]), vec![150.0, -15.0, -128.0]);
        let mut nz: Vec<f64> = s.theta.iter().copied().filter(|v| *v != 0.0).collect();
        nz.sort_by(f64::total_cmp);
        let mut expected = vec![10.0, -10.0, 28.0, -1.0, -1.0, 1.0, -8.0 / 3.0];
        expected.sort_by(f64::total_cmp);
        assert_eq!(nz, expected);
    }

    #[test]
    fn basis_reproduces_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for s in [system1(), lorenz()] {
            for _ in 0..100 {
                let x: Vec<f64> = (0..s.field.dim())
                    .map(|_| rng.gen_range(-20.0..20.0))
                    .collect();
                let a = s.basis.contract(&s.theta, &x);
                let b = s.field.eval(&x);
                for (p, q) in a.iter().zip(&b) {
                    assert!((p - q).abs() <= 1e-12 * q.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn unknown_system_and_missing_control() {
        assert!(matches!(
            builtin_system("vanderpol", None),
            Err(Error::UnknownSystem(_))
        ));
        assert!(builtin_system("emps_form", None).is_err());
    }

    #[test]
    fn emps_field_structure() {
        let control = ControlSignal::new(vec![0.0, 1.0], vec![0.0, 2.0]).unwrap();
        let s = builtin_system("emps_form", Some(control)).unwrap();
        assert!(s.field.is_time_augmented());
        let th = EMPS_SYNTHETIC_THETA;
        let v = s.field.eval(&[0.3, -0.5, 0.25]);
        let expected = th[0] * 0.5 + th[1] * 0.5 + th[2] - th[3];
        assert_eq!(v[0], -0.5);
        assert!((v[1] - expected).abs() < 1e-14);
        assert_eq!(v[2], 1.0);
    }

    #[test]
    fn control_interpolation() {
        let c = ControlSignal::from_csv_str("t,tau\n0,0\n1,2\n3,-2\n").unwrap();
        assert_eq!(c.at(-1.0), 0.0);
        assert_eq!(c.at(0.5), 1.0);
        assert_eq!(c.at(2.0), 0.0);
        assert_eq!(c.at(9.0), -2.0);
        assert!(ControlSignal::from_csv_str("t,u\n0,1\n").is_err());
        assert!(ControlSignal::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn rk4_constant_and_exponential() {
        let zero = VectorField::new(1, |_, out| out[0] = 0.0);
        let t = integrate_rk4(&zero, &[1.0], 1.0, 0.01, None).unwrap();
        assert!(t.as_slice().iter().all(|v| *v == 1.0));

        let grow = VectorField::new(1, |x, out| out[0] = x[0]);
        let t = integrate_rk4(&grow, &[1.0], 1.0, 1e-3, None).unwrap();
        assert_eq!(t.len(), 1001);
        let e = std::f64::consts::E;
        assert!((t.last()[0] - e).abs() / e < 1e-10);
    }

    #[test]
    fn rk4_fourth_order() {
        let grow = VectorField::new(1, |x, out| out[0] = x[0]);
        let hs = [0.1, 0.05, 0.025, 0.0125, 0.00625];
        let errs: Vec<(f64, f64)> = hs
            .iter()
            .map(|&h| {
                let t = integrate_rk4(&grow, &[1.0], 1.0, h, None).unwrap();
                (h, (t.last()[0] - std::f64::consts::E).abs())
            })
            .collect();
        let slope = crate::quadrature::empirical_order(&errs).unwrap();
        assert!((slope - 4.0).abs() < 0.5, "slope {slope}");
    }

    #[test]
    fn rk4_detects_finite_escape() {
        let riccati = VectorField::new(1, |x, out| out[0] = 1.0 + x[0] * x[0]);
        match integrate_rk4(&riccati, &[1.0], 1.0, 1e-3, None) {
            Err(Error::Divergence { time }) => assert!(time < 1.0 && time > 0.7),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rk4_process_noise_is_seeded() {
        let s = system1();
        let noise = ProcessNoise::Random {
            bound: 1e-3,
            seed: 4,
        };
        let a = integrate_rk4(&s.field, &[0.2, -2.0], 1.0, 1e-2, Some(&noise)).unwrap();
        let b = integrate_rk4(&s.field, &[0.2, -2.0], 1.0, 1e-2, Some(&noise)).unwrap();
        let clean = integrate_rk4(&s.field, &[0.2, -2.0], 1.0, 1e-2, None).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, clean);
        let shift = VectorField::new(2, |_, out| {
            out[0] = 0.0;
            out[1] = 0.0;
        });
        let c = integrate_rk4(
            &s.field,
            &[0.2, -2.0],
            1.0,
            1e-2,
            Some(&ProcessNoise::Field(shift)),
        )
        .unwrap();
        assert_eq!(c, clean);
    }

    #[test]
    fn lattice_examples() {
        let c = lattice_centers(&[(-3.0, 3.0), (-3.0, 5.0)], 1.0).unwrap();
        assert_eq!(c.len(), 63);
        assert_eq!(c[0], vec![-3.0, -3.0]);
        assert_eq!(c[1], vec![-3.0, -2.0]);
        assert_eq!(c[62], vec![3.0, 5.0]);
        assert_eq!(
            lattice_centers(&[(0.0, 0.0), (0.0, 0.0)], 7.0)
                .unwrap()
                .len(),
            1
        );
        let lz = lattice_centers(&[(-20.0, 20.0), (-50.0, 50.0), (-20.0, 50.0)], 10.0).unwrap();
        assert_eq!(lz.len(), 440);
        assert!(lattice_centers(&[(1.0, 0.0)], 1.0).is_err());
        assert!(lattice_centers(&[(0.0, 1.0)], 0.0).is_err());
    }
}
