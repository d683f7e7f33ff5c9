//! Rough path lifts up to level 3.
//!
//! Tensor layout: level 2 is an `m × m` row-major block with `X2[i * m + j]`
//! the `(i, j)` iterated integral; level 3 is `m × m × m` with
//! `X3[(i * m + j) * m + k]`. The schemes module contracts against the same
//! layout.

use thiserror::Error;

use crate::grid::{Grid, GridPath};

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("increment has dimension {got}, expected {expected}")]
    Dim { expected: usize, got: usize },
    #[error("expected {expected} per-interval increments, got {got}")]
    Count { expected: usize, got: usize },
    #[error("lift has no level-3 component")]
    MissingLevel3,
    #[error("rough path exponent p must be >= 2, got {0}")]
    BadExponent(f64),
}

/// Truncated signature `(x, X², X³)` of a path over one interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftIncrement {
    dim: usize,
    level1: Vec<f64>,
    level2: Vec<f64>,
    level3: Option<Vec<f64>>,
}

impl LiftIncrement {
    pub fn new(
        level1: Vec<f64>,
        level2: Vec<f64>,
        level3: Option<Vec<f64>>,
    ) -> Result<Self, LiftError> {
        let m = level1.len();
        if level2.len() != m * m {
            return Err(LiftError::Dim {
                expected: m * m,
                got: level2.len(),
            });
        }
        if let Some(l3) = &level3 {
            if l3.len() != m * m * m {
                return Err(LiftError::Dim {
                    expected: m * m * m,
                    got: l3.len(),
                });
            }
        }
        Ok(Self {
            dim: m,
            level1,
            level2,
            level3,
        })
    }

    /// Neutral element of Chen composition.
    pub fn zero(dim: usize, with_level3: bool) -> Self {
        Self {
            dim,
            level1: vec![0.0; dim],
            level2: vec![0.0; dim * dim],
            level3: with_level3.then(|| vec![0.0; dim * dim * dim]),
        }
    }

    /// Iterated integrals of a straight segment with increment `v`:
    /// `X² = v⊗v / 2`, `X³ = v⊗v⊗v / 6`.
    pub fn linear_segment(v: &[f64], with_level3: bool) -> Self {
        let m = v.len();
        let mut level2 = Vec::with_capacity(m * m);
        for &a in v {
            for &b in v {
                level2.push(0.5 * a * b);
            }
        }
        let level3 = with_level3.then(|| {
            let mut l3 = Vec::with_capacity(m * m * m);
            for &a in v {
                for &b in v {
                    for &c in v {
                        l3.push(a * b * c / 6.0);
                    }
                }
            }
            l3
        });
        Self {
            dim: m,
            level1: v.to_vec(),
            level2,
            level3,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level1(&self) -> &[f64] {
        &self.level1
    }

    pub fn level2(&self) -> &[f64] {
        &self.level2
    }

    pub fn level3(&self) -> Option<&[f64]> {
        self.level3.as_deref()
    }

    pub fn has_level3(&self) -> bool {
        self.level3.is_some()
    }

    /// Chen product: signature over `[s, t]` from `self` over `[s, u]` and
    /// `right` over `[u, t]`. Level 3 survives only if both sides carry it.
    pub fn compose(&self, right: &LiftIncrement) -> LiftIncrement {
        assert_eq!(self.dim, right.dim, "lift dimensions differ");
        let m = self.dim;
        let (a1, b1) = (&self.level1, &right.level1);
        let level1: Vec<f64> = a1.iter().zip(b1).map(|(a, b)| a + b).collect();
        let mut level2 = vec![0.0; m * m];
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                level2[k] = self.level2[k] + right.level2[k] + a1[i] * b1[j];
            }
        }
        let level3 = match (&self.level3, &right.level3) {
            (Some(a3), Some(b3)) => {
                let mut l3 = vec![0.0; m * m * m];
                for i in 0..m {
                    for j in 0..m {
                        for k in 0..m {
                            let idx = (i * m + j) * m + k;
                            l3[idx] = a3[idx]
                                + b3[idx]
                                + self.level2[i * m + j] * b1[k]
                                + a1[i] * right.level2[j * m + k];
                        }
                    }
                }
                Some(l3)
            }
            _ => None,
        };
        LiftIncrement {
            dim: m,
            level1,
            level2,
            level3,
        }
    }

    /// Entrywise max of `|Sym(X²) - x⊗x / 2|`.
    pub fn geometricity_defect(&self) -> f64 {
        let m = self.dim;
        let x = &self.level1;
        let mut worst = 0.0_f64;
        for i in 0..m {
            for j in 0..m {
                let sym = 0.5 * (self.level2[i * m + j] + self.level2[j * m + i]);
                worst = worst.max((sym - 0.5 * x[i] * x[j]).abs());
            }
        }
        worst
    }
}

/// Chen composition of two adjacent signatures.
pub fn chen_compose(left: &LiftIncrement, right: &LiftIncrement) -> LiftIncrement {
    left.compose(right)
}

/// Per-interval lift of a discrete path; longer spans come from Chen.
#[derive(Debug, Clone, PartialEq)]
pub struct RoughLift {
    grid: Grid,
    dim: usize,
    steps: Vec<LiftIncrement>,
}

impl RoughLift {
    /// From user-supplied per-interval signatures.
    pub fn from_increments(grid: Grid, steps: Vec<LiftIncrement>) -> Result<Self, LiftError> {
        if steps.len() != grid.steps() {
            return Err(LiftError::Count {
                expected: grid.steps(),
                got: steps.len(),
            });
        }
        let dim = steps[0].dim;
        let l3 = steps[0].has_level3();
        for s in &steps {
            if s.dim != dim {
                return Err(LiftError::Dim {
                    expected: dim,
                    got: s.dim,
                });
            }
            if s.has_level3() != l3 {
                return Err(LiftError::MissingLevel3);
            }
        }
        Ok(Self { grid, dim, steps })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_level3(&self) -> bool {
        self.steps[0].has_level3()
    }

    pub fn step(&self, j: usize) -> &LiftIncrement {
        &self.steps[j]
    }

    pub fn steps(&self) -> &[LiftIncrement] {
        &self.steps
    }

    /// Signature over `[t_a, t_b]`, `a <= b`, by left-to-right composition.
    pub fn span(&self, a: usize, b: usize) -> LiftIncrement {
        assert!(a <= b && b <= self.grid.steps());
        self.steps[a..b]
            .iter()
            .fold(LiftIncrement::zero(self.dim, self.has_level3()), |acc, s| {
                acc.compose(s)
            })
    }

    /// Level-1 path `x(t_j) - x(t_0)`.
    pub fn base_path(&self) -> GridPath {
        let mut values = vec![0.0; self.dim];
        let mut acc = vec![0.0; self.dim];
        for s in &self.steps {
            for (a, v) in acc.iter_mut().zip(&s.level1) {
                *a += v;
            }
            values.extend_from_slice(&acc);
        }
        GridPath::new(self.grid, self.dim, values).expect("lift shape")
    }

    /// All spans `(a, b)` with `a <= b`, indexed `a * n + b` with `n` nodes.
    fn span_table(&self) -> Vec<Option<LiftIncrement>> {
        let n = self.grid.num_nodes();
        let mut table = vec![None; n * n];
        for a in 0..n {
            let mut acc = LiftIncrement::zero(self.dim, self.has_level3());
            table[a * n + a] = Some(acc.clone());
            for b in a + 1..n {
                acc = acc.compose(&self.steps[b - 1]);
                table[a * n + b] = Some(acc.clone());
            }
        }
        table
    }

    /// Largest Chen defects over all node triples `s <= u <= t`
    /// (level 2, level 3). Level 3 is `None` when the lift lacks it.
    pub fn chen_residuals(&self) -> (f64, Option<f64>) {
        let n = self.grid.num_nodes();
        let m = self.dim;
        let table = self.span_table();
        let get = |a: usize, b: usize| table[a * n + b].as_ref().unwrap();
        let mut r2 = 0.0_f64;
        let mut r3 = 0.0_f64;
        for s in 0..n {
            for u in s..n {
                for t in u..n {
                    let (st, su, ut) = (get(s, t), get(s, u), get(u, t));
                    for i in 0..m {
                        for j in 0..m {
                            let k = i * m + j;
                            let lhs = st.level2[k] - su.level2[k] - ut.level2[k];
                            r2 = r2.max((lhs - su.level1[i] * ut.level1[j]).abs());
                        }
                    }
                    if let (Some(a), Some(b), Some(c)) = (&st.level3, &su.level3, &ut.level3) {
                        for i in 0..m {
                            for j in 0..m {
                                for k in 0..m {
                                    let idx = (i * m + j) * m + k;
                                    let lhs = a[idx] - b[idx] - c[idx];
                                    let rhs = su.level2[i * m + j] * ut.level1[k]
                                        + su.level1[i] * ut.level2[j * m + k];
                                    r3 = r3.max((lhs - rhs).abs());
                                }
                            }
                        }
                    }
                }
            }
        }
        (r2, self.has_level3().then_some(r3))
    }

    /// Largest geometricity defect over the per-interval signatures.
    pub fn geometricity_defect(&self) -> f64 {
        self.steps
            .iter()
            .map(LiftIncrement::geometricity_defect)
            .fold(0.0, f64::max)
    }

    /// Largest geometricity defect over every node pair.
    pub fn geometricity_defect_all_pairs(&self) -> f64 {
        self.span_table()
            .iter()
            .flatten()
            .map(LiftIncrement::geometricity_defect)
            .fold(0.0, f64::max)
    }
}

/// Canonical lift of the piecewise-linear interpolant of `path`.
pub fn piecewise_linear_lift(path: &GridPath, include_level3: bool) -> RoughLift {
    let steps = (0..path.grid().steps())
        .map(|j| LiftIncrement::linear_segment(&path.increment(j), include_level3))
        .collect();
    RoughLift {
        grid: *path.grid(),
        dim: path.dim(),
        steps,
    }
}

fn frobenius(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Discrete homogeneous rough path norm
/// `sup |x_{s,t}| / |t-s|^{1/p} + sqrt(sup |X²_{s,t}| / |t-s|^{2/p})`
/// over grid node pairs, with Euclidean / Frobenius norms.
pub fn rough_holder_norm(lift: &RoughLift, p: f64) -> Result<f64, LiftError> {
    if !(p >= 2.0) {
        return Err(LiftError::BadExponent(p));
    }
    let g = lift.grid;
    let n = g.num_nodes();
    let mut sup1 = 0.0_f64;
    let mut sup2 = 0.0_f64;
    for a in 0..n {
        let mut acc = LiftIncrement::zero(lift.dim, false);
        for b in a + 1..n {
            let s = &lift.steps[b - 1];
            let s2 = LiftIncrement {
                dim: s.dim,
                level1: s.level1.clone(),
                level2: s.level2.clone(),
                level3: None,
            };
            acc = acc.compose(&s2);
            let dt = g.node(b) - g.node(a);
            sup1 = sup1.max(frobenius(&acc.level1) / dt.powf(1.0 / p));
            sup2 = sup2.max(frobenius(&acc.level2) / dt.powf(2.0 / p));
        }
    }
    Ok(sup1 + sup2.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn single_segment_tensors() {
        let s = LiftIncrement::linear_segment(&[1.0, 2.0], false);
        assert_eq!(s.level2(), &[0.5, 1.0, 1.0, 2.0]);
        let s = LiftIncrement::linear_segment(&[3.0], true);
        assert_eq!(s.level2(), &[4.5]);
        assert_eq!(s.level3().unwrap(), &[4.5]);
    }

    #[test]
    fn two_segments_match_direct_iterated_integral() {
        let (u, w) = ([0.3, -1.2], [2.0, 0.7]);
        let g = Grid::new(1.0, 2).unwrap();
        let path = GridPath::new(g, 2, vec![0.0, 0.0, u[0], u[1], u[0] + w[0], u[1] + w[1]]).unwrap();
        let lift = piecewise_linear_lift(&path, false);
        let got = lift.span(0, 2);
        let mut expected = vec![0.0; 4];
        for i in 0..2 {
            for j in 0..2 {
                expected[i * 2 + j] = 0.5 * u[i] * u[j] + 0.5 * w[i] * w[j] + u[i] * w[j];
            }
        }
        assert!(close(got.level2(), &expected, 1e-15));
    }

    #[test]
    fn compose_examples() {
        let a = LiftIncrement::linear_segment(&[0.4, -0.1, 2.0], true);
        let z = LiftIncrement::zero(3, true);
        assert_eq!(chen_compose(&a, &z), a);
        let u = LiftIncrement::linear_segment(&[1.0], true);
        let c = u.compose(&u);
        assert_eq!(c.level2(), &[2.0]);
        // ½(u+w)² for the scalar geometric lift
        assert!((c.level2()[0] - 0.5 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn geometricity_examples() {
        let g = Grid::new(1.0, 3).unwrap();
        let p = GridPath::new(g, 2, vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5, 3.0, 3.0]).unwrap();
        let lift = piecewise_linear_lift(&p, true);
        assert!(lift.geometricity_defect() <= 1e-14);
        assert!(lift.geometricity_defect_all_pairs() <= 1e-14);
        let bad = LiftIncrement::new(vec![1.0, -3.0], vec![0.0; 4], None).unwrap();
        assert_eq!(bad.geometricity_defect(), 4.5);
        let scalar = LiftIncrement::new(vec![0.7], vec![0.5 * 0.49], None).unwrap();
        assert!(scalar.geometricity_defect() < 1e-16);
    }

    #[test]
    fn rough_norm_examples() {
        let g = Grid::new(1.0, 8).unwrap();
        let zero = piecewise_linear_lift(&GridPath::zeros(g, 2), false);
        assert_eq!(rough_holder_norm(&zero, 2.5).unwrap(), 0.0);
        let lin = GridPath::from_fn(g, 1, |t| vec![t]).unwrap();
        let lift = piecewise_linear_lift(&lin, false);
        let expected = 1.0 + 0.5f64.sqrt();
        assert!((rough_holder_norm(&lift, 2.0).unwrap() - expected).abs() < 1e-12);
        assert!(rough_holder_norm(&lift, 1.5).is_err());
    }

    #[test]
    fn rough_norm_is_homogeneous() {
        let g = Grid::new(1.0, 6).unwrap();
        let p = GridPath::from_fn(g, 2, |t| vec![(5.0 * t).sin(), t * t - t]).unwrap();
        let lam = -2.5;
        let q = GridPath::new(g, 2, p.values().iter().map(|v| lam * v).collect()).unwrap();
        let a = rough_holder_norm(&piecewise_linear_lift(&p, false), 2.2).unwrap();
        let b = rough_holder_norm(&piecewise_linear_lift(&q, false), 2.2).unwrap();
        assert!((b - lam.abs() * a).abs() < 1e-12);
    }

    #[test]
    fn from_increments_validates() {
        let g = Grid::new(1.0, 2).unwrap();
        let s = LiftIncrement::zero(2, false);
        assert!(RoughLift::from_increments(g, vec![s.clone()]).is_err());
        assert!(RoughLift::from_increments(g, vec![s.clone(), LiftIncrement::zero(1, false)]).is_err());
        assert!(RoughLift::from_increments(g, vec![s.clone(), LiftIncrement::zero(2, true)]).is_err());
        assert!(RoughLift::from_increments(g, vec![s.clone(), s]).is_ok());
        assert!(LiftIncrement::new(vec![1.0], vec![1.0, 2.0], None).is_err());
    }

    fn increments(m: usize, n: usize) -> impl Strategy<Value = Vec<LiftIncrement>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, m), n)
            .prop_map(|vs| vs.iter().map(|v| LiftIncrement::linear_segment(v, true)).collect())
    }

    proptest! {
        #[test]
        fn composition_is_associative(incs in (1usize..=3).prop_flat_map(|m| increments(m, 3))) {
            let (a, b, c) = (&incs[0], &incs[1], &incs[2]);
            let l = a.compose(&b.compose(c));
            let r = a.compose(b).compose(c);
            prop_assert!(close(l.level1(), r.level1(), 1e-14));
            prop_assert!(close(l.level2(), r.level2(), 1e-14));
            prop_assert!(close(l.level3().unwrap(), r.level3().unwrap(), 1e-13));
        }

        #[test]
        fn scalar_lift_is_forced_by_geometricity(dx in prop::collection::vec(-3.0f64..3.0, 1..12)) {
            let g = Grid::new(1.0, dx.len()).unwrap();
            let mut vals = vec![0.0];
            for d in &dx { vals.push(vals.last().unwrap() + d); }
            let lift = piecewise_linear_lift(&GridPath::scalar(g, vals).unwrap(), true);
            for (j, s) in lift.steps().iter().enumerate() {
                let d = lift.base_path().increment(j)[0];
                prop_assert!((s.level2()[0] - 0.5 * d * d).abs() <= 1e-12);
                prop_assert!((s.level3().unwrap()[0] - d * d * d / 6.0).abs() <= 1e-12);
            }
            let total = lift.span(0, dx.len());
            let x = total.level1()[0];
            prop_assert!((total.level2()[0] - 0.5 * x * x).abs() <= 1e-10 * x.abs().max(1.0).powi(2));
        }
    }
}
