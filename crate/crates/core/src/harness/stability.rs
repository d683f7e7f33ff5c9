//! Explicit vs implicit Euler on the stiff linear problem `dy = -70 y dt + dB^H`.

use std::io::Write;

use super::{ProblemId, StudyError};
use crate::exec::Execution;
use crate::fbm::{FactorCache, FbmConfig, FbmSampler, DEFAULT_MAX_STEPS};
use crate::grid::{format_sig, Grid, GridPath};
use crate::schemes::{explicit_euler_additive, implicit_euler_additive, SchemeOptions, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityOptions {
    pub hurst: f64,
    pub seed: u64,
    /// Drop the driver entirely (pure drift dynamics).
    pub noise: bool,
    /// Fine grid for the driver and the reference, when it is a dyadic
    /// refinement of the requested step.
    pub reference_exponent: u32,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            hurst: 0.75,
            seed: 0,
            noise: true,
            reference_exponent: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub h: f64,
    /// `|1 - 70 h|`, the per-step amplification of explicit Euler.
    pub contraction_factor: f64,
    pub explicit_unstable: bool,
    pub implicit: Trajectory,
    /// `Err` carries the divergence message when explicit Euler overflowed.
    pub explicit: Result<Trajectory, String>,
    /// Implicit Euler on the fine grid, when the step divides it.
    pub reference: Option<Trajectory>,
    pub implicit_flips: usize,
    pub explicit_flips: usize,
    pub implicit_max_amplitude: f64,
    pub explicit_max_amplitude: f64,
}

impl StabilityReport {
    /// Explicit flips over implicit flips; infinite when the implicit path
    /// never flips.
    pub fn flip_ratio(&self) -> f64 {
        if self.implicit_flips == 0 {
            if self.explicit_flips == 0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            self.explicit_flips as f64 / self.implicit_flips as f64
        }
    }

    /// `t,implicit,explicit[,reference]` on the coarse grid.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), StudyError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t", "implicit", "explicit"];
        if self.reference.is_some() {
            header.push("reference");
        }
        w.write_record(&header)?;
        let grid = self.implicit.grid();
        let factor = self
            .reference
            .as_ref()
            .map(|r| r.grid().steps() / grid.steps());
        for j in 0..grid.num_nodes() {
            let mut rec = vec![
                format_sig(grid.node(j)),
                format_sig(self.implicit.point(j)[0]),
                match &self.explicit {
                    Ok(e) => format_sig(e.point(j)[0]),
                    Err(_) => "NaN".into(),
                },
            ];
            if let (Some(r), Some(f)) = (&self.reference, factor) {
                rec.push(format_sig(r.point(j * f)[0]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of interior extrema: indices where consecutive increments have
/// opposite signs.
pub fn sign_flips(values: &[f64]) -> usize {
    values
        .windows(3)
        .filter(|w| (w[1] - w[0]) * (w[2] - w[1]) < 0.0)
        .count()
}

fn column(t: &Trajectory) -> Vec<f64> {
    t.points().map(|p| p[0]).collect()
}

/// Run both Euler variants with step `h` on the same driver sample.
pub fn stability_demo(h: f64, options: &StabilityOptions) -> Result<StabilityReport, StudyError> {
    if !(h > 0.0 && h <= 1.0) {
        return Err(StudyError::Config(format!("step {h} must lie in (0, 1]")));
    }
    let steps = (1.0 / h).round();
    if (steps * h - 1.0).abs() > 1e-9 {
        return Err(StudyError::Config(format!("step {h} does not divide the unit interval")));
    }
    let steps = steps as usize;
    let problem = ProblemId::Example2.problem();
    let fine_steps = 1usize << options.reference_exponent;
    let dyadic = steps <= fine_steps && fine_steps.is_multiple_of(steps);
    let fine_grid = Grid::new(1.0, if dyadic { fine_steps } else { steps })?;

    let fine = if options.noise {
        let cfg = FbmConfig {
            hurst: vec![options.hurst],
            grid: fine_grid,
            max_steps: DEFAULT_MAX_STEPS.max(fine_grid.steps()),
        };
        FbmSampler::with_cache(cfg, FactorCache::shared(), Execution::default())?.sample(options.seed)
    } else {
        GridPath::zeros(fine_grid, 1)
    };
    let coarse = fine.restrict(fine_grid.steps() / steps)?;
    let sopts = SchemeOptions::default();
    let implicit = implicit_euler_additive(&problem, &coarse, &sopts)?;
    let explicit = explicit_euler_additive(&problem, &coarse).map_err(|e| e.to_string());
    let reference = if dyadic {
        Some(implicit_euler_additive(&problem, &fine, &sopts)?)
    } else {
        None
    };

    let imp = column(&implicit);
    let (explicit_flips, explicit_max_amplitude) = match &explicit {
        Ok(e) => {
            let v = column(e);
            (sign_flips(&v), v.iter().fold(0.0f64, |a, x| a.max(x.abs())))
        }
        Err(_) => (0, f64::INFINITY),
    };
    let contraction_factor = (1.0 - 70.0 * h).abs();
    Ok(StabilityReport {
        h,
        contraction_factor,
        explicit_unstable: contraction_factor > 1.0,
        implicit_flips: sign_flips(&imp),
        implicit_max_amplitude: imp.iter().fold(0.0f64, |a, x| a.max(x.abs())),
        explicit_flips,
        explicit_max_amplitude,
        implicit,
        explicit,
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flip_counter() {
        assert_eq!(sign_flips(&[0.0, 1.0, 0.0, 1.0]), 2);
        assert_eq!(sign_flips(&[0.0, 1.0, 2.0, 3.0]), 0);
        assert_eq!(sign_flips(&[1.0, 1.0, 0.0]), 0);
        assert_eq!(sign_flips(&[]), 0);
    }

    #[test]
    fn noiseless_amplification() {
        let opts = StabilityOptions {
            noise: false,
            ..Default::default()
        };
        let r = stability_demo(1.0 / 32.0, &opts).unwrap();
        assert!((r.contraction_factor - 1.1875).abs() < 1e-15);
        assert!(r.explicit_unstable);
        let e = r.explicit.as_ref().unwrap();
        for j in 0..=32 {
            let expect = 2.7 * (-1.1875f64).powi(j as i32);
            assert!((e.point(j)[0] - expect).abs() <= 1e-9 * expect.abs());
        }
        // every explicit step alternates sign, the implicit path decays monotonically
        assert_eq!(r.explicit_flips, 31);
        assert_eq!(r.implicit_flips, 0);
        assert!(r.implicit.points().all(|p| p[0] > 0.0 && p[0] <= 2.7));

        let r = stability_demo(1.0 / 128.0, &opts).unwrap();
        assert!((r.contraction_factor - 0.453125).abs() < 1e-15);
        assert!(!r.explicit_unstable);
    }

    #[test]
    fn rejects_bad_steps() {
        let o = StabilityOptions::default();
        assert!(stability_demo(0.0, &o).is_err());
        assert!(stability_demo(0.3, &o).is_err());
        assert!(stability_demo(2.0, &o).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = stability_demo(1.0 / 8.0, &StabilityOptions::default()).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,implicit,explicit,reference\n"));
        assert_eq!(s.lines().count(), 10);
    }
}
