//! Exact fractional Brownian motion sampling on a uniform grid.
//!
//! The covariance of `(B^H(t_1), .., B^H(t_N))` is factorised once per
//! `(H, grid)` as `C = L Lᵀ`; a sample is `L V` with `V` standard normal.
//! The node `t_0 = 0` carries the value 0 and is not part of the matrix.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::exec::Execution;
use crate::grid::{Grid, GridError, GridPath};

/// Default cap on the number of reference steps (dense `N × N` factor).
pub const DEFAULT_MAX_STEPS: usize = 1 << 12;

/// An m-dimensional driver path on a grid; `values[0] = 0` for sampled fBm.
pub type SamplePath = GridPath;

#[derive(Debug, Error)]
pub enum FbmError {
    #[error("Hurst parameter must lie in (0, 1), got {0}")]
    BadHurst(f64),
    #[error("at least one component is required")]
    NoComponents,
    #[error("matrix is not positive definite: pivot {value:e} at index {index}")]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("{steps} steps exceeds the configured cap of {cap}; raise max_steps to allow it")]
    TooManySteps { steps: usize, cap: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Symmetric matrix stored as its packed lower triangle, row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    packed: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl SymmetricMatrix {
    /// From dense rows; fails if the rows are not square and symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, FbmError> {
        let n = rows.len();
        let mut packed = Vec::with_capacity(n * (n + 1) / 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(FbmError::Grid(GridError::Shape {
                    expected: n,
                    got: row.len(),
                }));
            }
            for j in 0..=i {
                if row[j] != rows[j][i] {
                    return Err(FbmError::NotSymmetric { row: i, col: j });
                }
                packed.push(row[j]);
            }
        }
        Ok(Self { n, packed })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.packed[packed_index(i, j)]
        } else {
            self.packed[packed_index(j, i)]
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.packed.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Lower-triangular matrix, packed row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerTriangular {
    n: usize,
    packed: Vec<f64>,
}

impl LowerTriangular {
    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.packed[packed_index(i, j)]
        } else {
            0.0
        }
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = packed_index(i, 0);
        &self.packed[start..start + i + 1]
    }

    /// `L v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `max |L Lᵀ - M|` over all entries.
    pub fn reconstruction_residual(&self, m: &SymmetricMatrix) -> f64 {
        let mut worst = 0.0_f64;
        for i in 0..self.n {
            for j in 0..=i {
                let s: f64 = self.row(i)[..=j]
                    .iter()
                    .zip(self.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                worst = worst.max((s - m.get(i, j)).abs());
            }
        }
        worst
    }
}

fn check_hurst(h: f64) -> Result<(), FbmError> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        Err(FbmError::BadHurst(h))
    }
}

/// `C_{ij} = ½(t_i^{2H} + t_j^{2H} - |t_i - t_j|^{2H})` over the nodes
/// `t_1..t_N` of `grid`.
pub fn covariance_matrix(hurst: f64, grid: &Grid) -> Result<SymmetricMatrix, FbmError> {
    check_hurst(hurst)?;
    let n = grid.steps();
    let two_h = 2.0 * hurst;
    let pow: Vec<f64> = (1..=n).map(|j| grid.node(j).powf(two_h)).collect();
    // |t_i - t_j| = |i - j| h on a uniform grid
    let lag: Vec<f64> = (0..n)
        .map(|k| (k as f64 * grid.step_size()).powf(two_h))
        .collect();
    let mut packed = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            packed.push(0.5 * (pow[i] + pow[j] - lag[i - j]));
        }
    }
    Ok(SymmetricMatrix { n, packed })
}

/// Cholesky factorisation `M = L Lᵀ` with `execution` driving the
/// per-column row updates.
pub fn cholesky_with(m: &SymmetricMatrix, execution: Execution) -> Result<LowerTriangular, FbmError> {
    let n = m.n;
    let mut packed = m.packed.clone();
    // Columns are finalised left to right; entry (i, j) needs row i and row j
    // restricted to columns < j.
    let parallel = execution.is_parallel() && n >= 128;
    for j in 0..n {
        let jj = packed_index(j, j);
        let row_j_start = packed_index(j, 0);
        let dot: f64 = packed[row_j_start..jj].iter().map(|v| v * v).sum();
        let pivot = packed[jj] - dot;
        if !(pivot > 0.0) {
            return Err(FbmError::NotPositiveDefinite {
                index: j,
                value: pivot,
            });
        }
        let diag = pivot.sqrt();
        packed[jj] = diag;
        if j + 1 == n {
            break;
        }
        let (head, tail) = packed.split_at_mut(packed_index(j + 1, 0));
        let row_j = &head[row_j_start..jj];
        let update = |row: &mut [f64]| {
            let s: f64 = row[..j].iter().zip(row_j).map(|(a, b)| a * b).sum();
            row[j] = (row[j] - s) / diag;
        };
        let mut rows: Vec<&mut [f64]> = Vec::with_capacity(n - j - 1);
        let mut rest = tail;
        for i in j + 1..n {
            let (row, r) = rest.split_at_mut(i + 1);
            rows.push(row);
            rest = r;
        }
        if parallel {
            Execution::Parallel.for_each_chunk_mut(&mut rows, 16, |_, chunk| {
                chunk.iter_mut().for_each(|r| update(r))
            });
        } else {
            rows.iter_mut().for_each(|r| update(r));
        }
    }
    Ok(LowerTriangular { n, packed })
}

/// Sequential Cholesky factorisation.
pub fn cholesky(m: &SymmetricMatrix) -> Result<LowerTriangular, FbmError> {
    cholesky_with(m, Execution::Sequential)
}

type FactorKey = (u64, (u64, usize));

/// Cache of covariance factors keyed by `(H, grid)`; concurrent reads,
/// serialized inserts.
#[derive(Default)]
pub struct FactorCache {
    inner: RwLock<HashMap<FactorKey, Arc<LowerTriangular>>>,
}

impl FactorCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Process-wide cache used by [`sample_fbm`] and [`FbmSampler::new`].
    pub fn shared() -> &'static FactorCache {
        static CACHE: OnceLock<FactorCache> = OnceLock::new();
        CACHE.get_or_init(FactorCache::new)
    }

    pub fn factor(
        &self,
        hurst: f64,
        grid: &Grid,
        execution: Execution,
    ) -> Result<Arc<LowerTriangular>, FbmError> {
        check_hurst(hurst)?;
        let key = (hurst.to_bits(), grid.key());
        if let Some(l) = self.inner.read().unwrap().get(&key) {
            return Ok(Arc::clone(l));
        }
        // Holding the write lock while factorising serializes concurrent
        // misses on the same key instead of duplicating O(N³) work.
        let mut map = self.inner.write().unwrap();
        if let Some(l) = map.get(&key) {
            return Ok(Arc::clone(l));
        }
        let l = Arc::new(cholesky_with(&covariance_matrix(hurst, grid)?, execution)?);
        map.insert(key, Arc::clone(&l));
        Ok(l)
    }

    pub fn len(&self) -> usize {
        self.inner.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        self.inner.write().unwrap().clear();
    }
}

/// Hurst parameters (one per independent component) and the reference grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmConfig {
    pub hurst: Vec<f64>,
    pub grid: Grid,
    /// Upper bound on `grid.steps()`; [`DEFAULT_MAX_STEPS`] unless raised.
    pub max_steps: usize,
}

impl FbmConfig {
    pub fn new(hurst: Vec<f64>, grid: Grid) -> Result<Self, FbmError> {
        let cfg = Self {
            hurst,
            grid,
            max_steps: DEFAULT_MAX_STEPS,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Result<Self, FbmError> {
        self.max_steps = max_steps;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.hurst.len()
    }

    pub fn validate(&self) -> Result<(), FbmError> {
        if self.hurst.is_empty() {
            return Err(FbmError::NoComponents);
        }
        for &h in &self.hurst {
            check_hurst(h)?;
        }
        if self.grid.steps() > self.max_steps {
            return Err(FbmError::TooManySteps {
                steps: self.grid.steps(),
                cap: self.max_steps,
            });
        }
        Ok(())
    }
}

/// A configuration with its covariance factors resolved, ready to draw
/// any number of seeded samples.
#[derive(Clone)]
pub struct FbmSampler {
    config: FbmConfig,
    factors: Vec<Arc<LowerTriangular>>,
}

impl FbmSampler {
    pub fn new(config: FbmConfig) -> Result<Self, FbmError> {
        Self::with_cache(config, FactorCache::shared(), Execution::default())
    }

    pub fn with_cache(
        config: FbmConfig,
        cache: &FactorCache,
        execution: Execution,
    ) -> Result<Self, FbmError> {
        config.validate()?;
        let factors = config
            .hurst
            .iter()
            .map(|&h| cache.factor(h, &config.grid, execution))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { config, factors })
    }

    pub fn config(&self) -> &FbmConfig {
        &self.config
    }

    /// Gaussian stream for `(seed, component)`.
    fn normals(seed: u64, component: usize, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(component as u64);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    pub fn sample(&self, seed: u64) -> SamplePath {
        let grid = self.config.grid;
        let n = grid.steps();
        let m = self.config.dim();
        let mut values = vec![0.0; (n + 1) * m];
        for (i, l) in self.factors.iter().enumerate() {
            let b = l.mul_vec(&Self::normals(seed, i, n));
            for (j, v) in b.into_iter().enumerate() {
                values[(j + 1) * m + i] = v;
            }
        }
        GridPath::new(grid, m, values).expect("shape fixed by construction")
    }

    pub fn sample_many(&self, seeds: &[u64], execution: Execution) -> Vec<SamplePath> {
        execution.map(seeds, |&s| self.sample(s))
    }
}

/// Draw one fBm path for `config` from the Gaussian stream keyed by `seed`.
pub fn sample_fbm(config: &FbmConfig, seed: u64) -> Result<SamplePath, FbmError> {
    Ok(FbmSampler::new(config.clone())?.sample(seed))
}
