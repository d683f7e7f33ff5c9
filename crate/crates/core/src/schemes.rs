//! One-step schemes and full-trajectory drivers.
//!
//! Every implicit scheme has the form `y_{r+1} = y_r + h b(y_{r+1}) + N_r(y_r)`
//! where the noise term `N_r` is evaluated at the old state. The implicit
//! drift is resolved by [`solve_step`] with `r = y_r + N_r(y_r)`.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::fields::{
    first_order_composition, second_order_composition, DiffusionField, DriftField, FieldError,
};
use crate::grid::{euclid, Grid, GridError, GridPath};
use crate::lift::{piecewise_linear_lift, RoughLift};
use crate::solver::{solve_step, SolveError, SolverOptions};

/// States whose Euclidean norm exceeds this are reported as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e12;

/// A numerical solution: one state per grid node, `states[0] = ξ`.
pub type Trajectory = GridPath;

#[derive(Debug, Error)]
pub enum SchemeError {
    #[error("C_b h = {product} >= 1: implicit scheme is not well posed")]
    NotWellPosed { product: f64 },
    #[error("step {step}: {source}")]
    Solve { step: usize, source: SolveError },
    #[error("step {step}: {source}")]
    Field { step: usize, source: FieldError },
    #[error("step {step}: state norm {norm:e} overflowed")]
    Blowup { step: usize, norm: f64 },
    #[error("{0}")]
    Incompatible(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl SchemeError {
    /// True for numerical divergence (as opposed to a usage error).
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            SchemeError::Blowup { .. }
                | SchemeError::Solve {
                    source: SolveError::NonFinite | SolveError::NoConvergence { .. },
                    ..
                }
        )
    }
}

/// `dy = b(y) dt + dx` (no diffusion) or `dy = b(y) dt + σ(y) dx`.
#[derive(Debug, Clone)]
pub struct Problem {
    pub drift: DriftField,
    pub diffusion: Option<DiffusionField>,
    pub initial: Vec<f64>,
    pub horizon: f64,
}

impl Problem {
    pub fn additive(drift: DriftField, initial: Vec<f64>, horizon: f64) -> Result<Self, SchemeError> {
        if drift.dim() != initial.len() {
            return Err(SchemeError::Incompatible(format!(
                "drift dimension {} but initial value has {} components",
                drift.dim(),
                initial.len()
            )));
        }
        Ok(Self {
            drift,
            diffusion: None,
            initial,
            horizon,
        })
    }

    pub fn multiplicative(
        drift: DriftField,
        diffusion: DiffusionField,
        initial: Vec<f64>,
        horizon: f64,
    ) -> Result<Self, SchemeError> {
        let mut p = Self::additive(drift, initial, horizon)?;
        if diffusion.dim() != p.dim() {
            return Err(SchemeError::Incompatible(format!(
                "diffusion acts on R^{} but the state is R^{}",
                diffusion.dim(),
                p.dim()
            )));
        }
        p.diffusion = Some(diffusion);
        Ok(p)
    }

    pub fn dim(&self) -> usize {
        self.initial.len()
    }

    /// Driver dimension: `m` for multiplicative problems, `d` otherwise.
    pub fn noise_dim(&self) -> usize {
        self.diffusion
            .as_ref()
            .map_or(self.dim(), DiffusionField::noise_dim)
    }

    pub fn is_additive(&self) -> bool {
        self.diffusion.is_none()
    }

    fn diffusion(&self) -> Result<&DiffusionField, SchemeError> {
        self.diffusion
            .as_ref()
            .ok_or_else(|| SchemeError::Incompatible("scheme needs a diffusion field".into()))
    }

    fn check_driver(&self, grid: &Grid, dim: usize) -> Result<(), SchemeError> {
        if dim != self.noise_dim() {
            return Err(SchemeError::Incompatible(format!(
                "driver has {dim} components, problem expects {}",
                self.noise_dim()
            )));
        }
        if (grid.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(SchemeError::Incompatible(format!(
                "driver horizon {} differs from problem horizon {}",
                grid.horizon(),
                self.horizon
            )));
        }
        Ok(())
    }

    fn check_well_posed(&self, h: f64) -> Result<(), SchemeError> {
        let product = self.drift.one_sided_lipschitz() * h;
        if product >= 1.0 {
            return Err(SchemeError::NotWellPosed { product });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SchemeOptions {
    pub solver: SolverOptions,
}

fn check_state(step: usize, y: &[f64]) -> Result<(), SchemeError> {
    let norm = euclid(y);
    if !norm.is_finite() || norm > BLOWUP_THRESHOLD {
        return Err(SchemeError::Blowup { step, norm });
    }
    Ok(())
}

/// Drift-implicit recursion with the explicit increment `noise(r, y_r)`.
fn run_implicit<F>(
    problem: &Problem,
    grid: Grid,
    options: &SchemeOptions,
    mut noise: F,
) -> Result<Trajectory, SchemeError>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>, SchemeError>,
{
    let h = grid.step_size();
    problem.check_well_posed(h)?;
    let d = problem.dim();
    let mut values = Vec::with_capacity(grid.num_nodes() * d);
    values.extend_from_slice(&problem.initial);
    let mut y = problem.initial.clone();
    for step in 0..grid.steps() {
        let n = noise(step, &y)?;
        let r: Vec<f64> = y.iter().zip(&n).map(|(a, b)| a + b).collect();
        y = solve_step(&problem.drift, h, &r, &options.solver)
            .map_err(|source| SchemeError::Solve { step, source })?
            .solution;
        check_state(step, &y)?;
        values.extend_from_slice(&y);
    }
    Ok(GridPath::new(grid, d, values)?)
}

fn run_explicit<F>(problem: &Problem, grid: Grid, mut noise: F) -> Result<Trajectory, SchemeError>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>, SchemeError>,
{
    let h = grid.step_size();
    let d = problem.dim();
    let mut values = Vec::with_capacity(grid.num_nodes() * d);
    values.extend_from_slice(&problem.initial);
    let mut y = problem.initial.clone();
    for step in 0..grid.steps() {
        let b = problem.drift.eval(&y);
        let n = noise(step, &y)?;
        for a in 0..d {
            y[a] += h * b[a] + n[a];
        }
        check_state(step, &y)?;
        values.extend_from_slice(&y);
    }
    Ok(GridPath::new(grid, d, values)?)
}

fn field_err(step: usize) -> impl Fn(FieldError) -> SchemeError {
    move |source| SchemeError::Field { step, source }
}

/// `Σ_{ij} σ_iσ_j Id(y) X^{ij}` with `X` an `m × m` tensor.
fn level2_term(sigma: &DiffusionField, y: &[f64], x2: &[f64], step: usize) -> Result<Vec<f64>, SchemeError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let c = first_order_composition(sigma, y).map_err(field_err(step))?;
    let mut out = vec![0.0; d];
    for ij in 0..m * m {
        for a in 0..d {
            out[a] += c[ij * d + a] * x2[ij];
        }
    }
    Ok(out)
}

/// `Σ_{ijk} σ_iσ_jσ_k Id(y) X^{ijk}` with `X` an `m × m × m` tensor.
fn level3_term(sigma: &DiffusionField, y: &[f64], x3: &[f64], step: usize) -> Result<Vec<f64>, SchemeError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let c = second_order_composition(sigma, y).map_err(field_err(step))?;
    let mut out = vec![0.0; d];
    for ijk in 0..m * m * m {
        for a in 0..d {
            out[a] += c[ijk * d + a] * x3[ijk];
        }
    }
    Ok(out)
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

/// `y_{j+1} = y_j + h b(y_{j+1}) + x_{j+1} - x_j`.
pub fn implicit_euler_additive(
    problem: &Problem,
    path: &GridPath,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    if !problem.is_additive() {
        return Err(SchemeError::Incompatible(
            "implicit_euler_additive needs an additive-noise problem".into(),
        ));
    }
    problem.check_driver(path.grid(), path.dim())?;
    run_implicit(problem, *path.grid(), options, |j, _| Ok(path.increment(j)))
}

/// `y_{j+1} = y_j + h b(y_j) + x_{j+1} - x_j`.
pub fn explicit_euler_additive(problem: &Problem, path: &GridPath) -> Result<Trajectory, SchemeError> {
    if !problem.is_additive() {
        return Err(SchemeError::Incompatible(
            "explicit_euler_additive needs an additive-noise problem".into(),
        ));
    }
    explicit_euler(problem, path)
}

/// Forward Euler for either noise type:
/// `y_{j+1} = y_j + h b(y_j) + σ(y_j) (x_{j+1} - x_j)` (σ = Id when additive).
pub fn explicit_euler(problem: &Problem, path: &GridPath) -> Result<Trajectory, SchemeError> {
    problem.check_driver(path.grid(), path.dim())?;
    match &problem.diffusion {
        None => run_explicit(problem, *path.grid(), |j, _| Ok(path.increment(j))),
        Some(sigma) => run_explicit(problem, *path.grid(), |j, y| {
            Ok(sigma.apply(y, &path.increment(j)))
        }),
    }
}

/// `y_{r+1} = y_r + h b(y_{r+1}) + Σ_i σ_i(y_r) x^i_{t_r,t_{r+1}}`.
pub fn semi_implicit_euler(
    problem: &Problem,
    lift: &RoughLift,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    let sigma = problem.diffusion()?;
    problem.check_driver(lift.grid(), lift.dim())?;
    run_implicit(problem, *lift.grid(), options, |j, y| {
        Ok(sigma.apply(y, lift.step(j).level1()))
    })
}

/// Semi-implicit Euler plus `Σ_{ij} σ_iσ_j Id(y_r) X^{2;ij}_{t_r,t_{r+1}}`.
pub fn semi_implicit_milstein(
    problem: &Problem,
    lift: &RoughLift,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    let sigma = problem.diffusion()?;
    problem.check_driver(lift.grid(), lift.dim())?;
    run_implicit(problem, *lift.grid(), options, |j, y| {
        let s = lift.step(j);
        let mut n = sigma.apply(y, s.level1());
        add_into(&mut n, &level2_term(sigma, y, s.level2(), j)?);
        Ok(n)
    })
}

/// Semi-implicit Milstein plus `Σ_{ijk} σ_iσ_jσ_k Id(y_r) X^{3;ijk}_{t_r,t_{r+1}}`.
pub fn semi_implicit_milstein3(
    problem: &Problem,
    lift: &RoughLift,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    let sigma = problem.diffusion()?;
    problem.check_driver(lift.grid(), lift.dim())?;
    if !lift.has_level3() {
        return Err(SchemeError::Incompatible("lift has no level-3 tensors".into()));
    }
    run_implicit(problem, *lift.grid(), options, |j, y| {
        let s = lift.step(j);
        let mut n = sigma.apply(y, s.level1());
        add_into(&mut n, &level2_term(sigma, y, s.level2(), j)?);
        add_into(&mut n, &level3_term(sigma, y, s.level3().unwrap(), j)?);
        Ok(n)
    })
}

/// `½ Σ_{ij} σ_iσ_j Id(y) x^i x^j`.
fn simplified_level2(sigma: &DiffusionField, y: &[f64], dx: &[f64], step: usize) -> Result<Vec<f64>, SchemeError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let c = first_order_composition(sigma, y).map_err(field_err(step))?;
    let mut out = vec![0.0; d];
    for i in 0..m {
        for j in 0..m {
            let w = dx[i] * dx[j];
            for a in 0..d {
                out[a] += c[(i * m + j) * d + a] * w;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= 0.5);
    Ok(out)
}

/// `(1/6) Σ_{ijk} σ_iσ_jσ_k Id(y) x^i x^j x^k`.
fn simplified_level3(sigma: &DiffusionField, y: &[f64], dx: &[f64], step: usize) -> Result<Vec<f64>, SchemeError> {
    let (d, m) = (sigma.dim(), sigma.noise_dim());
    let c = second_order_composition(sigma, y).map_err(field_err(step))?;
    let mut out = vec![0.0; d];
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let w = dx[i] * dx[j] * dx[k];
                for a in 0..d {
                    out[a] += c[((i * m + j) * m + k) * d + a] * w;
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= 6.0);
    Ok(out)
}

/// Milstein with the level-2 tensor replaced by `½ Δx ⊗ Δx`.
pub fn simplified_milstein(
    problem: &Problem,
    path: &GridPath,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    let sigma = problem.diffusion()?;
    problem.check_driver(path.grid(), path.dim())?;
    run_implicit(problem, *path.grid(), options, |j, y| {
        let dx = path.increment(j);
        let mut n = sigma.apply(y, &dx);
        add_into(&mut n, &simplified_level2(sigma, y, &dx, j)?);
        Ok(n)
    })
}

/// 3rd-order Milstein with `X³` replaced by `(1/6) Δx ⊗ Δx ⊗ Δx`.
pub fn simplified_milstein3(
    problem: &Problem,
    path: &GridPath,
    options: &SchemeOptions,
) -> Result<Trajectory, SchemeError> {
    let sigma = problem.diffusion()?;
    problem.check_driver(path.grid(), path.dim())?;
    run_implicit(problem, *path.grid(), options, |j, y| {
        let dx = path.increment(j);
        let mut n = sigma.apply(y, &dx);
        add_into(&mut n, &simplified_level2(sigma, y, &dx, j)?);
        add_into(&mut n, &simplified_level3(sigma, y, &dx, j)?);
        Ok(n)
    })
}

/// Scheme selector used by the harness and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchemeId {
    /// Additive-noise implicit Euler.
    ImplicitEuler,
    /// Forward Euler, additive or multiplicative.
    ExplicitEuler,
    SemiImplicitEuler,
    /// Full Milstein driven by the piecewise-linear lift of the path.
    Milstein,
    /// Full 3rd-order Milstein driven by the piecewise-linear lift.
    Milstein3,
    SimplifiedMilstein,
    SimplifiedMilstein3,
}

impl SchemeId {
    pub const ALL: [SchemeId; 7] = [
        SchemeId::ImplicitEuler,
        SchemeId::ExplicitEuler,
        SchemeId::SemiImplicitEuler,
        SchemeId::Milstein,
        SchemeId::Milstein3,
        SchemeId::SimplifiedMilstein,
        SchemeId::SimplifiedMilstein3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchemeId::ImplicitEuler => "implicit-euler",
            SchemeId::ExplicitEuler => "explicit-euler",
            SchemeId::SemiImplicitEuler => "semi-implicit-euler",
            SchemeId::Milstein => "milstein",
            SchemeId::Milstein3 => "milstein3",
            SchemeId::SimplifiedMilstein => "simplified-milstein",
            SchemeId::SimplifiedMilstein3 => "simplified-milstein3",
        }
    }

    pub fn is_implicit(self) -> bool {
        self != SchemeId::ExplicitEuler
    }

    /// Whether the scheme can run on `problem`.
    pub fn supports(self, problem: &Problem) -> bool {
        match self {
            SchemeId::ImplicitEuler => problem.is_additive(),
            SchemeId::ExplicitEuler => true,
            _ => !problem.is_additive(),
        }
    }

    /// Integrate `problem` along `path`, lifting it piecewise-linearly when
    /// the scheme consumes a rough path.
    pub fn integrate(
        self,
        problem: &Problem,
        path: &GridPath,
        options: &SchemeOptions,
    ) -> Result<Trajectory, SchemeError> {
        match self {
            SchemeId::ImplicitEuler => implicit_euler_additive(problem, path, options),
            SchemeId::ExplicitEuler => explicit_euler(problem, path),
            SchemeId::SemiImplicitEuler => {
                semi_implicit_euler(problem, &piecewise_linear_lift(path, false), options)
            }
            SchemeId::Milstein => {
                semi_implicit_milstein(problem, &piecewise_linear_lift(path, false), options)
            }
            SchemeId::Milstein3 => {
                semi_implicit_milstein3(problem, &piecewise_linear_lift(path, true), options)
            }
            SchemeId::SimplifiedMilstein => simplified_milstein(problem, path, options),
            SchemeId::SimplifiedMilstein3 => simplified_milstein3(problem, path, options),
        }
    }

    /// One step from `y` with the given signature, returning the new state.
    pub fn step_with_lift(
        self,
        problem: &Problem,
        y: &[f64],
        h: f64,
        lift: &crate::lift::LiftIncrement,
        options: &SchemeOptions,
    ) -> Result<Vec<f64>, SchemeError> {
        let grid = Grid::new(h * 1.0, 1)?;
        let single = RoughLift::from_increments(grid, vec![lift.clone()])
            .map_err(|e| SchemeError::Incompatible(e.to_string()))?;
        let local = Problem {
            initial: y.to_vec(),
            horizon: h,
            ..problem.clone()
        };
        let traj = match self {
            SchemeId::SemiImplicitEuler => semi_implicit_euler(&local, &single, options)?,
            SchemeId::Milstein => semi_implicit_milstein(&local, &single, options)?,
            SchemeId::Milstein3 => semi_implicit_milstein3(&local, &single, options)?,
            other => {
                let path = single.base_path();
                other.integrate(&local, &path, options)?
            }
        };
        Ok(traj.last().to_vec())
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchemeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SchemeId::ALL.iter().map(|i| i.name()).collect();
                format!("unknown scheme {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// Uniform bound on the additive implicit Euler solution,
/// `e^{2 C_b T}(|ξ| + max_{n>=1} |b(x_n)| T) + max_n |x_n|`, valid when
/// `2 C_b h <= 1`. Returns `None` outside that regime.
pub fn additive_boundedness_bound(problem: &Problem, path: &GridPath) -> Option<f64> {
    let g = path.grid();
    let cb = problem.drift.one_sided_lipschitz();
    if 2.0 * cb * g.step_size() > 1.0 {
        return None;
    }
    let t = g.horizon();
    let max_b = (1..g.num_nodes())
        .map(|n| euclid(&problem.drift.eval(path.point(n))))
        .fold(0.0, f64::max);
    Some((2.0 * cb * t).exp() * (euclid(&problem.initial) + max_b * t) + path.sup_norm())
}
