//! Uniform time grids, paths sampled on them, and discrete path norms.

use std::io::{Read, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("number of steps must be at least 1")]
    NoSteps,
    #[error("Hölder exponent must lie in (0, 1], got {0}")]
    BadHolderExponent(f64),
    #[error("variation exponent must be >= 1, got {0}")]
    BadVariationExponent(f64),
    #[error("path needs at least 2 nodes")]
    TooShort,
    #[error("restriction factor {factor} does not divide {steps} steps")]
    BadRestriction { factor: usize, steps: usize },
    #[error("expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed csv: {0}")]
    MalformedCsv(String),
}

/// Equidistant partition `t_j = j T / N`, `j = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    steps: usize,
}

impl Grid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self, GridError> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(GridError::BadHorizon(horizon));
        }
        if steps == 0 {
            return Err(GridError::NoSteps);
        }
        Ok(Self { horizon, steps })
    }

    /// Grid on `[0, horizon]` with step `2^-exponent * horizon`.
    pub fn dyadic(horizon: f64, exponent: u32) -> Result<Self, GridError> {
        Self::new(horizon, 1usize << exponent)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn step_size(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// `t_j`; the last node is exactly `T`.
    pub fn node(&self, j: usize) -> f64 {
        if j == self.steps {
            self.horizon
        } else {
            j as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|j| self.node(j)).collect()
    }

    /// Coarser grid keeping every `factor`-th node.
    pub fn coarsen(&self, factor: usize) -> Result<Grid, GridError> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(GridError::BadRestriction {
                factor,
                steps: self.steps,
            });
        }
        Grid::new(self.horizon, self.steps / factor)
    }

    /// Stable identity used as a cache key.
    pub(crate) fn key(&self) -> (u64, usize) {
        (self.horizon.to_bits(), self.steps)
    }
}

/// A `dim`-dimensional path given by its values at the nodes of a [`Grid`].
///
/// Values are stored node-major: `values[j * dim + i]` is component `i` at `t_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: Grid,
    dim: usize,
    values: Vec<f64>,
}

impl GridPath {
    pub fn new(grid: Grid, dim: usize, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = grid.num_nodes() * dim;
        if values.len() != expected || dim == 0 {
            return Err(GridError::Shape {
                expected,
                got: values.len(),
            });
        }
        Ok(Self { grid, dim, values })
    }

    /// Scalar path from one value per node.
    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        Self::new(grid, 1, values)
    }

    /// Path from a function of time evaluated at every node.
    pub fn from_fn(grid: Grid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(grid.num_nodes() * dim);
        for t in grid.nodes() {
            let v = f(t);
            if v.len() != dim {
                return Err(GridError::Shape {
                    expected: dim,
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(grid, dim, values)
    }

    pub fn zeros(grid: Grid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; grid.num_nodes() * dim],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// `x(t_b) - x(t_a)`.
    pub fn increment_between(&self, a: usize, b: usize) -> Vec<f64> {
        self.point(b)
            .iter()
            .zip(self.point(a))
            .map(|(xb, xa)| xb - xa)
            .collect()
    }

    /// Increment over the `j`-th interval `[t_j, t_{j+1}]`.
    pub fn increment(&self, j: usize) -> Vec<f64> {
        self.increment_between(j, j + 1)
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.grid.steps())
    }

    /// Keep every `factor`-th node, endpoints included.
    pub fn restrict(&self, factor: usize) -> Result<GridPath, GridError> {
        let grid = self.grid.coarsen(factor)?;
        let mut values = Vec::with_capacity(grid.num_nodes() * self.dim);
        for j in 0..grid.num_nodes() {
            values.extend_from_slice(self.point(j * factor));
        }
        GridPath::new(grid, self.dim, values)
    }

    /// Largest Euclidean norm over the nodes.
    pub fn sup_norm(&self) -> f64 {
        self.points().map(euclid).fold(0.0, f64::max)
    }

    /// Maximum over nodes of the Euclidean distance to `other` at matching
    /// times. `other` must live on a grid refining this one.
    pub fn max_distance_to_refinement(&self, other: &GridPath) -> Result<f64, GridError> {
        let ratio = other.grid.steps() / self.grid.steps();
        if other.dim != self.dim
            || ratio == 0
            || !other.grid.steps().is_multiple_of(self.grid.steps())
            || other.grid.horizon() != self.grid.horizon()
        {
            return Err(GridError::BadRestriction {
                factor: ratio,
                steps: other.grid.steps(),
            });
        }
        Ok((0..self.num_nodes())
            .map(|j| euclid_dist(self.point(j), other.point(j * ratio)))
            .fold(0.0, f64::max))
    }

    /// Write as CSV with header `t,<prefix>1..<prefix>dim`.
    pub fn write_csv<W: Write>(&self, writer: W, prefix: &str) -> Result<(), GridError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("{prefix}{i}")));
        w.write_record(&header)?;
        for (j, p) in self.points().enumerate() {
            let mut row = vec![format_sig(self.grid.node(j))];
            row.extend(p.iter().map(|v| format_sig(*v)));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Read a path written by [`GridPath::write_csv`]. The grid is rebuilt
    /// from the number of rows and the final time.
    pub fn read_csv<R: Read>(reader: R) -> Result<GridPath, GridError> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len().saturating_sub(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let mut fields = rec.iter().map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| GridError::MalformedCsv(format!("{s:?}: {e}")))
            });
            times.push(fields.next().ok_or(GridError::TooShort)??);
            for f in fields {
                values.push(f?);
            }
        }
        if times.len() < 2 {
            return Err(GridError::TooShort);
        }
        let grid = Grid::new(*times.last().unwrap(), times.len() - 1)?;
        GridPath::new(grid, dim, values)
    }
}

/// Ten significant digits, the format used by every CSV this crate emits.
pub fn format_sig(v: f64) -> String {
    format!("{v:.9e}")
}

pub(crate) fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn euclid_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Discrete α-Hölder seminorm: max over node pairs `s < t` of
/// `|x(t) - x(s)| / (t - s)^α`.
pub fn holder_norm(path: &GridPath, alpha: f64) -> Result<f64, GridError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(GridError::BadHolderExponent(alpha));
    }
    let g = path.grid();
    let mut best = 0.0_f64;
    for s in 0..g.num_nodes() {
        for t in s + 1..g.num_nodes() {
            let dx = euclid_dist(path.point(t), path.point(s));
            best = best.max(dx / (g.node(t) - g.node(s)).powf(alpha));
        }
    }
    Ok(best)
}

/// Best partition sums `ω(from, t)` for every `t >= from`, where
/// `ω(s, t) = sup Σ |x_{t_{k+1}} - x_{t_k}|^p` over node subsequences from
/// `s` to `t`.
fn variation_profile(path: &GridPath, p: f64, from: usize) -> Vec<f64> {
    let n = path.num_nodes();
    let mut best = vec![0.0_f64; n];
    for t in from + 1..n {
        let mut b = 0.0_f64;
        for s in from..t {
            let cand = best[s] + euclid_dist(path.point(t), path.point(s)).powf(p);
            b = b.max(cand);
        }
        best[t] = b;
    }
    best
}

/// Exact discrete p-variation over all subsequences of grid nodes.
pub fn p_variation_norm(path: &GridPath, p: f64) -> Result<f64, GridError> {
    if !(p >= 1.0) {
        return Err(GridError::BadVariationExponent(p));
    }
    let profile = variation_profile(path, p, 0);
    Ok(profile[path.num_nodes() - 1].powf(1.0 / p))
}

/// `ω(s, t) = ‖x‖^p_{p-var;[t_s, t_t]}` for all node pairs, row-major `n × n`
/// (entries with `t < s` are zero).
pub fn control_table(path: &GridPath, p: f64) -> Result<Vec<f64>, GridError> {
    if !(p >= 1.0) {
        return Err(GridError::BadVariationExponent(p));
    }
    let n = path.num_nodes();
    let mut table = vec![0.0; n * n];
    for s in 0..n {
        let prof = variation_profile(path, p, s);
        table[s * n..(s + 1) * n].copy_from_slice(&prof);
    }
    Ok(table)
}

/// Largest violation `ω(s,u) + ω(u,t) - ω(s,t)` of superadditivity over all
/// node triples. A control function gives a value `<= 0` up to rounding.
pub fn superadditivity_defect(path: &GridPath, p: f64) -> Result<f64, GridError> {
    let n = path.num_nodes();
    let w = control_table(path, p)?;
    let mut worst = f64::NEG_INFINITY;
    for s in 0..n {
        for u in s..n {
            for t in u..n {
                worst = worst.max(w[s * n + u] + w[u * n + t] - w[s * n + t]);
            }
        }
    }
    Ok(worst)
}
