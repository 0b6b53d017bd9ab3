//! Uniformly sampled trajectories and the operations applied to them before
//! identification: segmentation, synthetic measurement noise, causal
//! filtering and CSV persistence.

use std::fmt::Write as _;
use std::fs;
use std::ops::Deref;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, invalid, Error, Result};

/// Relative tolerance on time-column spacing when reading CSV files.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// A path `γ: [0, T] → ℝⁿ` sampled at `t0 + k·step`, `k = 0..=F`.
///
/// Samples are stored row-major; row `k` is the state at time `t0 + k·step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    dim: usize,
    step: f64,
    t0: f64,
    data: Vec<f64>,
}

impl Trajectory {
    /// Builds a trajectory from row-major samples. Requires at least three
    /// rows (two intervals) and finite entries.
    pub fn new(dim: usize, step: f64, data: Vec<f64>) -> Result<Self> {
        Self::with_start(dim, step, 0.0, data)
    }

    pub fn with_start(dim: usize, step: f64, t0: f64, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("trajectory dimension must be positive"));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(invalid(format!("step must be positive, got {step}")));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(invalid(format!(
                "{} values do not form rows of width {dim}",
                data.len()
            )));
        }
        let rows = data.len() / dim;
        if rows < 3 {
            return Err(Error::TooFewPoints {
                needed: 3,
                found: rows,
            });
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample in row {}", k / dim)));
        }
        if !t0.is_finite() {
            return Err(invalid("start time must be finite"));
        }
        Ok(Self {
            dim,
            step,
            t0,
            data,
        })
    }

    /// Builds a trajectory from a list of rows.
    pub fn from_rows(step: f64, rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for row in rows {
            check_dim(dim, row.len())?;
            data.extend_from_slice(row);
        }
        Self::new(dim, step, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn start_time(&self) -> f64 {
        self.t0
    }

    /// Number of samples, `F + 1`.
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    /// Always false; a valid trajectory has at least three samples.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of intervals `F`.
    pub fn intervals(&self) -> usize {
        self.len() - 1
    }

    /// `T = F·h`.
    pub fn duration(&self) -> f64 {
        self.intervals() as f64 * self.step
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.step
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.dim..(k + 1) * self.dim]
    }

    pub fn first(&self) -> &[f64] {
        self.row(0)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Samples `k` in `range`, as a new trajectory starting at `time(range.start)`.
    pub fn slice(&self, start: usize, end_inclusive: usize) -> Result<Self> {
        if end_inclusive >= self.len() || start >= end_inclusive {
            return Err(invalid(format!(
                "slice {start}..={end_inclusive} out of range for {} samples",
                self.len()
            )));
        }
        Self::with_start(
            self.dim,
            self.step,
            self.time(start),
            self.data[start * self.dim..(end_inclusive + 1) * self.dim].to_vec(),
        )
    }

    /// Splits into `parts` contiguous pieces. Neighbouring pieces share their
    /// boundary sample, so each piece is a self-contained initial value problem.
    pub fn segment(&self, parts: usize) -> Result<TrajectorySet> {
        if parts == 0 {
            return Err(invalid("segment count must be at least 1"));
        }
        let f = self.intervals();
        if 2 * parts > f {
            return Err(invalid(format!(
                "{parts} segments need at least {} samples, trajectory has {}",
                2 * parts + 1,
                self.len()
            )));
        }
        let bounds: Vec<usize> = (0..=parts).map(|k| k * f / parts).collect();
        let pieces = bounds
            .windows(2)
            .map(|w| self.slice(w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        TrajectorySet::new(pieces)
    }

    /// Adds i.i.d. `N(0, sigma²)` noise to every coordinate of every sample.
    pub fn add_measurement_noise(&self, sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(invalid(format!(
                "noise sigma must be nonnegative, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let normal = Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = self
            .data
            .iter()
            .map(|v| v + normal.sample(&mut rng))
            .collect();
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    /// Trailing moving average: row `k` becomes the mean of rows
    /// `max(0, k-window+1)..=k`.
    pub fn moving_average(&self, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(invalid("filter window must be at least 1"));
        }
        let n = self.dim;
        let mut data = vec![0.0; self.data.len()];
        for k in 0..self.len() {
            let lo = (k + 1).saturating_sub(window);
            let count = (k - lo + 1) as f64;
            for c in 0..n {
                let sum: f64 = (lo..=k).map(|j| self.data[j * n + c]).sum();
                data[k * n + c] = sum / count;
            }
        }
        Ok(Self {
            data,
            ..self.clone()
        })
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.data.len() * 26);
        out.push('t');
        for c in 1..=self.dim {
            let _ = write!(out, ",x{c}");
        }
        out.push('\n');
        for (k, row) in self.rows().enumerate() {
            let _ = write!(out, "{:.16e}", self.time(k));
            for v in row {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }

    /// Parses the `t,x1,...,xn` format. Errors carry 1-based line numbers.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            message: "empty file".into(),
        })?;
        let width = parse_header(header)?;
        let dim = width - 1;

        let mut times = Vec::new();
        let mut data = Vec::new();
        let mut line_numbers = Vec::new();
        for (idx, line) in lines {
            let values = parse_row(line, idx + 1, width)?;
            times.push(values[0]);
            data.extend_from_slice(&values[1..]);
            line_numbers.push(idx + 1);
        }
        if times.len() < 3 {
            return Err(Error::TooFewPoints {
                needed: 3,
                found: times.len(),
            });
        }
        let step = check_uniform(&times, &line_numbers)?;
        Self::with_start(dim, step, times[0], data)
    }
}

/// Validates a `t,x1,...` header and returns the column count.
pub fn parse_header(line: &str) -> Result<usize> {
    let cols: Vec<&str> = line.split(',').map(str::trim).collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `t,x1,...`, found `{line}`"),
        });
    }
    Ok(cols.len())
}

/// Parses one comma-separated numeric row of exactly `width` columns.
pub fn parse_row(line: &str, line_no: usize, width: usize) -> Result<Vec<f64>> {
    let values = line
        .split(',')
        .map(|field| {
            field.trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse `{}` as a number", field.trim()),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != width {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {width} columns, found {}", values.len()),
        });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parse {
            line: line_no,
            message: "non-finite value".into(),
        });
    }
    Ok(values)
}

fn check_uniform(times: &[f64], lines: &[usize]) -> Result<f64> {
    let h0 = times[1] - times[0];
    if !(h0 > 0.0) {
        return Err(Error::NonuniformGrid {
            line: lines[1],
            expected: f64::NAN,
            found: h0,
        });
    }
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        if (dt - h0).abs() > GRID_TOLERANCE * h0 {
            return Err(Error::NonuniformGrid {
                line: lines[k],
                expected: h0,
                found: dt,
            });
        }
    }
    Ok((times[times.len() - 1] - times[0]) / (times.len() - 1) as f64)
}

/// A nonempty, ordered family of trajectories of equal dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet(Vec<Trajectory>);

impl TrajectorySet {
    pub fn new(trajs: Vec<Trajectory>) -> Result<Self> {
        let first = trajs
            .first()
            .ok_or_else(|| invalid("trajectory set must not be empty"))?;
        for t in &trajs {
            check_dim(first.dim(), t.dim())?;
        }
        Ok(Self(trajs))
    }

    pub fn dim(&self) -> usize {
        self.0[0].dim()
    }

    pub fn into_vec(self) -> Vec<Trajectory> {
        self.0
    }

    /// Applies a per-trajectory transformation.
    pub fn try_map(&self, f: impl Fn(usize, &Trajectory) -> Result<Trajectory>) -> Result<Self> {
        let out = self
            .0
            .iter()
            .enumerate()
            .map(|(j, t)| f(j, t))
            .collect::<Result<Vec<_>>>()?;
        Self::new(out)
    }

    /// Segments every member and concatenates the pieces in order.
    pub fn segment_all(&self, parts: usize) -> Result<Self> {
        let mut out = Vec::new();
        for t in &self.0 {
            out.extend(t.segment(parts)?.into_vec());
        }
        Self::new(out)
    }
}

impl Deref for TrajectorySet {
    type Target = [Trajectory];
    fn deref(&self) -> &[Trajectory] {
        &self.0
    }
}

impl From<Trajectory> for TrajectorySet {
    fn from(t: Trajectory) -> Self {
        Self(vec![t])
    }
}
