//! One-step errors on a smooth driver, against a fine-step reference.

use std::f64::consts::PI;

use super::StudyError;
use crate::exec::Execution;
use crate::fields::{DiffusionField, DriftField};
use crate::grid::{Grid, GridPath};
use crate::lift::piecewise_linear_lift;
use crate::schemes::{Problem, SchemeId, SchemeOptions};

/// `x_i(t) = a_i sin(ω_i t + φ_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothDriver {
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<f64>,
    pub phases: Vec<f64>,
}

impl SmoothDriver {
    /// A fixed `m`-component sinusoid with distinct frequencies.
    pub fn standard(m: usize) -> Self {
        Self {
            amplitudes: (0..m).map(|i| 1.0 / (i + 1) as f64).collect(),
            frequencies: (0..m).map(|i| 2.0 * PI * (i + 1) as f64).collect(),
            phases: (0..m).map(|i| 0.3 * i as f64).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.amplitudes[i] * (self.frequencies[i] * t + self.phases[i]).sin())
            .collect()
    }

    /// `x(t0 + s) - x(t0)` sampled on `[0, h]` with `substeps` intervals.
    fn window(&self, t0: f64, h: f64, substeps: usize) -> Result<GridPath, StudyError> {
        let x0 = self.eval(t0);
        let grid = Grid::new(h, substeps)?;
        Ok(GridPath::from_fn(grid, self.dim(), |s| {
            self.eval(t0 + s).iter().zip(&x0).map(|(a, b)| a - b).collect()
        })?)
    }
}

#[derive(Debug, Clone)]
pub struct ProbeConfig {
    /// `initial` is the base point; `horizon` is ignored.
    pub problem: Problem,
    pub driver: SmoothDriver,
    pub base_time: f64,
    pub steps: Vec<f64>,
    /// Resolution of the piecewise-linear lift and of the reference on each window.
    pub substeps: usize,
    /// Declared p-variation regularity of the driver.
    pub regularity_p: f64,
    pub options: SchemeOptions,
}

impl ProbeConfig {
    /// Scalar `dy = y dx`, `b ≡ 0`, `y = 1`, on a smooth (p = 1) sinusoid.
    pub fn scalar_linear() -> Self {
        let sigma = DiffusionField::scalar(|y| y, |_| 1.0, |_| 0.0);
        let problem = Problem::multiplicative(DriftField::zero(1), sigma, vec![1.0], 1.0)
            .expect("scalar problem");
        Self::new(problem)
    }

    pub fn new(problem: Problem) -> Self {
        let m = problem.noise_dim();
        Self {
            problem,
            driver: SmoothDriver::standard(m),
            base_time: 0.1,
            steps: (6..=12).map(|k| 0.5f64.powi(k)).collect(),
            substeps: 256,
            regularity_p: 1.0,
            options: SchemeOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    pub scheme: SchemeId,
    pub steps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln error` against `ln h`; `None` when fewer
    /// than two errors are above round-off.
    pub slope: Option<f64>,
    pub theoretical: f64,
}

/// Local rate predicted for `scheme` at regularity `p`.
pub fn theoretical_local_order(scheme: SchemeId, p: f64) -> f64 {
    match scheme {
        SchemeId::ImplicitEuler | SchemeId::ExplicitEuler | SchemeId::SemiImplicitEuler => 2.0 / p,
        SchemeId::Milstein | SchemeId::SimplifiedMilstein => (1.0 + 1.0 / p).min(3.0 / p),
        SchemeId::Milstein3 | SchemeId::SimplifiedMilstein3 => 1.0 + 1.0 / p,
    }
}

fn regression_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Errors below this are treated as exact and left out of the regression.
const ROUND_OFF: f64 = 1e-14;

pub fn local_error_probe(scheme: SchemeId, config: &ProbeConfig) -> Result<ProbeResult, StudyError> {
    if !scheme.supports(&config.problem) {
        return Err(StudyError::Config(format!("scheme {scheme} does not support this problem")));
    }
    if config.driver.dim() != config.problem.noise_dim() {
        return Err(StudyError::Config("driver dimension mismatch".into()));
    }
    if config.substeps < 2 || config.steps.iter().any(|h| !(*h > 0.0)) {
        return Err(StudyError::Config("need positive steps and at least two substeps".into()));
    }
    let y0 = &config.problem.initial;
    let errors = Execution::default().map(&config.steps, |&h| -> Result<f64, StudyError> {
        let window = config.driver.window(config.base_time, h, config.substeps)?;
        let local = Problem {
            horizon: h,
            ..config.problem.clone()
        };
        let reference = SchemeId::Milstein3
            .integrate(&local, &window, &config.options)?
            .last()
            .to_vec();
        let fine = piecewise_linear_lift(&window, true);
        let increment = fine.span(0, config.substeps);
        let one = scheme.step_with_lift(&config.problem, y0, h, &increment, &config.options)?;
        Ok(one
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    });
    let errors = errors.into_iter().collect::<Result<Vec<_>, _>>()?;
    let (lx, ly): (Vec<f64>, Vec<f64>) = config
        .steps
        .iter()
        .zip(&errors)
        .filter(|(_, e)| **e > ROUND_OFF)
        .map(|(h, e)| (h.ln(), e.ln()))
        .unzip();
    let slope = (lx.len() >= 2).then(|| regression_slope(&lx, &ly));
    Ok(ProbeResult {
        scheme,
        steps: config.steps.clone(),
        errors,
        slope,
        theoretical: theoretical_local_order(scheme, config.regularity_p),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ROUGH: [SchemeId; 5] = [
        SchemeId::SemiImplicitEuler,
        SchemeId::Milstein,
        SchemeId::Milstein3,
        SchemeId::SimplifiedMilstein,
        SchemeId::SimplifiedMilstein3,
    ];

    #[test]
    fn theory_table() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(theoretical_local_order(SchemeId::SemiImplicitEuler, 1.0), 2.0));
        assert!(close(theoretical_local_order(SchemeId::Milstein, 2.5), 1.2));
        assert!(close(theoretical_local_order(SchemeId::Milstein, 1.5), 5.0 / 3.0));
        assert!(close(theoretical_local_order(SchemeId::Milstein3, 2.0), 1.5));
    }

    #[test]
    fn exact_for_constant_sigma_without_drift() {
        let sigma = DiffusionField::constant(2, 2, vec![1.0, 0.5, -0.3, 2.0]);
        let problem =
            Problem::multiplicative(DriftField::zero(2), sigma, vec![0.4, -1.0], 1.0).unwrap();
        let cfg = ProbeConfig::new(problem);
        for s in ROUGH {
            let r = local_error_probe(s, &cfg).unwrap();
            assert!(r.errors.iter().all(|e| *e < 1e-13), "{s}: {:?}", r.errors);
            assert_eq!(r.slope, None);
        }
    }

    #[test]
    fn scalar_linear_rates_are_ordered() {
        let cfg = ProbeConfig::scalar_linear();
        let slope = |s| local_error_probe(s, &cfg).unwrap().slope.unwrap();
        let (e, m, m3) = (
            slope(SchemeId::SemiImplicitEuler),
            slope(SchemeId::Milstein),
            slope(SchemeId::Milstein3),
        );
        assert!(e >= 1.8, "{e}");
        assert!(m3 >= m && m >= e, "{e} {m} {m3}");
    }

    #[test]
    fn rejects_unsupported_scheme() {
        assert!(local_error_probe(SchemeId::ImplicitEuler, &ProbeConfig::scalar_linear()).is_err());
    }
}
