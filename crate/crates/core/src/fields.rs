//! Drift and diffusion coefficients.
//!
//! Layouts (d = state dimension, m = noise dimension), all row-major:
//!
//! | quantity | shape         | entry                          |
//! |----------|---------------|--------------------------------|
//! | σ        | d × m         | `σ_i^α` at `α * m + i`          |
//! | Dσ       | d × m × d     | `∂_β σ_i^α`                    |
//! | D²σ      | d × m × d × d | `∂_β ∂_γ σ_i^α`                |
//! | drift J  | d × d         | `∂_β b^α` at `α * d + β`        |

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("{0} is not differentiable at this point")]
    Singular(&'static str),
    #[error("field returned {got} values, expected {expected}")]
    Shape { expected: usize, got: usize },
}

type VecFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type FallibleFn = dyn Fn(&[f64]) -> Result<Vec<f64>, FieldError> + Send + Sync;
type RadiusFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Drift `b: R^d -> R^d` with a declared one-sided Lipschitz constant.
#[derive(Clone)]
pub struct DriftField {
    dim: usize,
    one_sided_lipschitz: f64,
    eval: Arc<VecFn>,
    jacobian: Option<Arc<VecFn>>,
    local_lipschitz: Option<Arc<RadiusFn>>,
}

impl fmt::Debug for DriftField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DriftField")
            .field("dim", &self.dim)
            .field("one_sided_lipschitz", &self.one_sided_lipschitz)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .finish()
    }
}

impl DriftField {
    pub fn new(
        dim: usize,
        one_sided_lipschitz: f64,
        eval: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            one_sided_lipschitz,
            eval: Arc::new(eval),
            jacobian: None,
            local_lipschitz: None,
        }
    }

    /// `b ≡ 0`.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, 0.0, move |_| vec![0.0; dim])
            .with_jacobian(move |_| vec![0.0; dim * dim])
    }

    /// `b(y) = λ y`, one-sided Lipschitz with constant `λ`.
    pub fn linear(dim: usize, lambda: f64) -> Self {
        Self::new(dim, lambda, move |y| y.iter().map(|v| lambda * v).collect()).with_jacobian(
            move |_| {
                let mut j = vec![0.0; dim * dim];
                for a in 0..dim {
                    j[a * dim + a] = lambda;
                }
                j
            },
        )
    }

    pub fn with_jacobian(mut self, jac: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_local_lipschitz(mut self, modulus: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.local_lipschitz = Some(Arc::new(modulus));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn one_sided_lipschitz(&self) -> f64 {
        self.one_sided_lipschitz
    }

    pub fn eval(&self, y: &[f64]) -> Vec<f64> {
        (self.eval)(y)
    }

    /// Analytic Jacobian, if one was supplied.
    pub fn jacobian(&self, y: &[f64]) -> Option<Vec<f64>> {
        self.jacobian.as_ref().map(|j| j(y))
    }

    /// Local Lipschitz modulus on the closed ball of radius `r`, if declared.
    pub fn local_lipschitz(&self, r: f64) -> Option<f64> {
        self.local_lipschitz.as_ref().map(|u| u(r))
    }
}

/// Outcome of a randomized one-sided Lipschitz audit.
#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzAudit {
    /// Largest observed `<b(u)-b(v), u-v> / |u-v|²`.
    pub worst_ratio: f64,
    /// Pairs where the ratio exceeded the declared constant.
    pub violations: usize,
    pub samples: usize,
}

/// Sample `samples` pairs uniformly from `[-radius, radius]^d` and compare
/// the observed one-sided ratio with the declared `C_b`. A clean audit does
/// not certify the constant.
pub fn audit_one_sided_lipschitz(
    drift: &DriftField,
    samples: usize,
    radius: f64,
    seed: u64,
) -> LipschitzAudit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = drift.dim();
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..samples {
        let u: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
        let (bu, bv) = (drift.eval(&u), drift.eval(&v));
        let mut num = 0.0;
        let mut den = 0.0;
        for a in 0..d {
            num += (bu[a] - bv[a]) * (u[a] - v[a]);
            den += (u[a] - v[a]) * (u[a] - v[a]);
        }
        if den == 0.0 {
            continue;
        }
        let ratio = num / den;
        let c = drift.one_sided_lipschitz();
        if ratio > c + 1e-9 * c.abs().max(1.0) {
            violations += 1;
        }
        worst = worst.max(ratio);
    }
    LipschitzAudit {
        worst_ratio: worst,
        violations,
        samples,
    }
}

/// Diffusion `σ: R^d -> L(R^m, R^d)` with analytic first and second
/// derivatives.
#[derive(Clone)]
pub struct DiffusionField {
    dim: usize,
    noise_dim: usize,
    sigma: Arc<VecFn>,
    first: Arc<FallibleFn>,
    second: Arc<FallibleFn>,
}

impl fmt::Debug for DiffusionField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionField")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .finish()
    }
}

impl DiffusionField {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        sigma: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        first: impl Fn(&[f64]) -> Result<Vec<f64>, FieldError> + Send + Sync + 'static,
        second: impl Fn(&[f64]) -> Result<Vec<f64>, FieldError> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            sigma: Arc::new(sigma),
            first: Arc::new(first),
            second: Arc::new(second),
        }
    }

    /// State-independent `σ` given as a `d × m` row-major matrix.
    pub fn constant(dim: usize, noise_dim: usize, matrix: Vec<f64>) -> Self {
        assert_eq!(matrix.len(), dim * noise_dim);
        let (d, m) = (dim, noise_dim);
        Self::new(
            d,
            m,
            move |_| matrix.clone(),
            move |_| Ok(vec![0.0; d * m * d]),
            move |_| Ok(vec![0.0; d * m * d * d]),
        )
    }

    /// `σ = Id`, i.e. additive noise written as a diffusion.
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![0.0; dim * dim];
        for a in 0..dim {
            m[a * dim + a] = 1.0;
        }
        Self::constant(dim, dim, m)
    }

    /// Scalar `σ = f` with derivatives `f'`, `f''` (d = m = 1).
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            1,
            move |y| vec![f(y[0])],
            move |y| Ok(vec![df(y[0])]),
            move |y| Ok(vec![d2f(y[0])]),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn sigma(&self, y: &[f64]) -> Vec<f64> {
        (self.sigma)(y)
    }

    pub fn first_derivative(&self, y: &[f64]) -> Result<Vec<f64>, FieldError> {
        (self.first)(y)
    }

    pub fn second_derivative(&self, y: &[f64]) -> Result<Vec<f64>, FieldError> {
        (self.second)(y)
    }

    /// `Σ_i σ_i(y) x^i`.
    pub fn apply(&self, y: &[f64], x: &[f64]) -> Vec<f64> {
        let (d, m) = (self.dim, self.noise_dim);
        let s = self.sigma(y);
        (0..d)
            .map(|a| (0..m).map(|i| s[a * m + i] * x[i]).sum())
            .collect()
    }
}

/// `σ_iσ_j Id(ξ) = Σ_α σ_i^α(ξ) ∂_α σ_j(ξ)` for all `(i, j)`, laid out as
/// `out[(i * m + j) * d + a]`.
pub fn first_order_composition(sigma: &DiffusionField, xi: &[f64]) -> Result<Vec<f64>, FieldError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let s = sigma.sigma(xi);
    let ds = sigma.first_derivative(xi)?;
    let mut out = vec![0.0; m * m * d];
    for i in 0..m {
        for j in 0..m {
            for a in 0..d {
                let mut acc = 0.0;
                for b in 0..d {
                    acc += s[b * m + i] * ds[(a * m + j) * d + b];
                }
                out[(i * m + j) * d + a] = acc;
            }
        }
    }
    Ok(out)
}

/// `σ_iσ_jσ_k Id(ξ) = Σ_β Σ_α σ_i^β ∂_β σ_j^α ∂_α σ_k + σ_i^β σ_j^α ∂_β ∂_α σ_k`,
/// laid out as `out[((i * m + j) * m + k) * d + c]`.
pub fn second_order_composition(sigma: &DiffusionField, xi: &[f64]) -> Result<Vec<f64>, FieldError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let s = sigma.sigma(xi);
    let ds = sigma.first_derivative(xi)?;
    let dds = sigma.second_derivative(xi)?;
    let sig = |a: usize, i: usize| s[a * m + i];
    let d1 = |a: usize, i: usize, b: usize| ds[(a * m + i) * d + b];
    let d2 = |a: usize, i: usize, b: usize, g: usize| dds[((a * m + i) * d + b) * d + g];
    let mut out = vec![0.0; m * m * m * d];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                for c in 0..d {
                    let mut acc = 0.0;
                    for b in 0..d {
                        for a in 0..d {
                            acc += sig(b, i) * d1(a, j, b) * d1(c, k, a)
                                + sig(b, i) * sig(a, j) * d2(c, k, b, a);
                        }
                    }
                    out[((i * m + j) * m + k) * d + c] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Largest deviation between analytic derivatives and central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub first: f64,
    pub second: f64,
}

/// Compare Dσ and D²σ with central finite differences of σ and Dσ at `point`.
/// Validation only; the schemes never call this.
pub fn check_diffusion_derivatives(
    sigma: &DiffusionField,
    point: &[f64],
    eps: f64,
) -> Result<DerivativeCheck, FieldError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let ds = sigma.first_derivative(point)?;
    let dds = sigma.second_derivative(point)?;
    let mut first = 0.0_f64;
    let mut second = 0.0_f64;
    for b in 0..d {
        let mut up = point.to_vec();
        let mut dn = point.to_vec();
        up[b] += eps;
        dn[b] -= eps;
        let (su, sd) = (sigma.sigma(&up), sigma.sigma(&dn));
        let (du, dd) = (sigma.first_derivative(&up)?, sigma.first_derivative(&dn)?);
        for a in 0..d {
            for i in 0..m {
                let fd = (su[a * m + i] - sd[a * m + i]) / (2.0 * eps);
                first = first.max((fd - ds[(a * m + i) * d + b]).abs());
                for g in 0..d {
                    let idx = (a * m + i) * d + g;
                    let fd2 = (du[idx] - dd[idx]) / (2.0 * eps);
                    second = second.max((fd2 - dds[idx * d + b]).abs());
                }
            }
        }
    }
    Ok(DerivativeCheck { first, second })
}

/// Coefficients of the paper experiments.
pub mod catalog {
    use super::*;

    /// `b(y) = y - y³`, `C_b = 1`.
    pub fn example1_drift() -> DriftField {
        DriftField::new(1, 1.0, |y| vec![y[0] - y[0].powi(3)])
            .with_jacobian(|y| vec![1.0 - 3.0 * y[0] * y[0]])
            .with_local_lipschitz(|r| 1.0 + 3.0 * r * r)
    }

    /// `b(y) = -70 y`, `C_b = -70`.
    pub fn example2_drift() -> DriftField {
        DriftField::linear(1, -70.0).with_local_lipschitz(|_| 70.0)
    }

    /// `b(y) = y - |y|² y` on R², `C_b = 1`.
    pub fn example3_drift() -> DriftField {
        DriftField::new(2, 1.0, |y| {
            let r2 = y[0] * y[0] + y[1] * y[1];
            vec![y[0] - r2 * y[0], y[1] - r2 * y[1]]
        })
        .with_jacobian(|y| {
            let r2 = y[0] * y[0] + y[1] * y[1];
            let mut j = vec![0.0; 4];
            for a in 0..2 {
                for b in 0..2 {
                    let delta = if a == b { 1.0 } else { 0.0 };
                    j[a * 2 + b] = (1.0 - r2) * delta - 2.0 * y[a] * y[b];
                }
            }
            j
        })
        .with_local_lipschitz(|r| 1.0 + 3.0 * r * r)
    }

    /// Below this radius the derivatives of `cos|y|` are refused.
    pub const RADIAL_SINGULARITY: f64 = 1e-12;

    /// `σ_1(y) = (cos y_2, -0.9 - 10 cos y_1)`, `σ_2(y) = (cos|y|, 0)`.
    pub fn example3_diffusion() -> DiffusionField {
        let (d, m) = (2, 2);
        // σ[a * m + i]: component a of σ_i
        let sigma = |y: &[f64]| {
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            vec![y[1].cos(), r.cos(), -0.9 - 10.0 * y[0].cos(), 0.0]
        };
        let first = move |y: &[f64]| {
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if r <= RADIAL_SINGULARITY {
                return Err(FieldError::Singular("cos|y|"));
            }
            let mut ds = vec![0.0; d * m * d];
            let at = |a: usize, i: usize, b: usize| (a * m + i) * d + b;
            ds[at(0, 0, 1)] = -y[1].sin();
            ds[at(1, 0, 0)] = 10.0 * y[0].sin();
            for b in 0..2 {
                ds[at(0, 1, b)] = -r.sin() * y[b] / r;
            }
            Ok(ds)
        };
        let second = move |y: &[f64]| {
            let r = (y[0] * y[0] + y[1] * y[1]).sqrt();
            if r <= RADIAL_SINGULARITY {
                return Err(FieldError::Singular("cos|y|"));
            }
            let mut dds = vec![0.0; d * m * d * d];
            let at = |a: usize, i: usize, b: usize, g: usize| ((a * m + i) * d + b) * d + g;
            dds[at(0, 0, 1, 1)] = -y[1].cos();
            dds[at(1, 0, 0, 0)] = 10.0 * y[0].cos();
            let (c, s) = (r.cos(), r.sin());
            for b in 0..2 {
                for g in 0..2 {
                    let delta = if b == g { 1.0 } else { 0.0 };
                    let yy = y[b] * y[g];
                    dds[at(0, 1, b, g)] = -c * yy / (r * r) - s * (delta / r - yy / (r * r * r));
                }
            }
            Ok(dds)
        };
        DiffusionField::new(d, m, sigma, first, second)
    }
}
