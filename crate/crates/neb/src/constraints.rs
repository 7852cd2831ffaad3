//! Structural constraints on the ratio-functional vector: monotonicity of
//! the induced decision rule, tie equalities, the zero-count boundary, and
//! positivity margins keeping shrinkage denominators away from zero.
//!
//! Rows are stored sparsely with a provenance label each. The estimator
//! collapses them onto distinct counts before solving; the public contract
//! is stated on the full `h` vector.

use crate::bayes::LossIndex;
use crate::dle::{CountSample, DleModel};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Strict inequalities cannot be expressed in a QP; this margin keeps
/// `1 - h` (scaled loss) and `y + h` (squared loss) bounded away from zero.
pub const DEFAULT_POSITIVITY_MARGIN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Monotone,
    Tie,
    Boundary,
    Positivity,
}

impl std::fmt::Display for RowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            RowKind::Monotone => "monotone",
            RowKind::Tie => "tie",
            RowKind::Boundary => "boundary",
            RowKind::Positivity => "positivity",
        };
        write!(f, "{s}")
    }
}

/// One sparse linear row `Σ coeff·h[idx] (≤ or =) rhs`.
#[derive(Debug, Clone)]
pub struct LinRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: RowKind,
}

impl LinRow {
    fn dot(&self, h: &[f64]) -> f64 {
        self.terms.iter().map(|(i, c)| c * h[*i]).sum()
    }
}

/// Constraints for one fit: inequality rows `A h ≤ b` and equality rows
/// `C h = d`, each labeled with the family it came from.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub n: usize,
    pub ineq: Vec<LinRow>,
    pub eq: Vec<LinRow>,
    /// Coordinates at the Binomial upper bound excluded from monotone rows
    /// under squared loss; their estimate is supplied by extrapolation.
    pub upper_bound_coords: Vec<usize>,
}

/// Options controlling which constraint families are emitted.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintFlags {
    pub monotone: bool,
    pub epsilon: f64,
}

impl Default for ConstraintFlags {
    fn default() -> Self {
        ConstraintFlags {
            monotone: true,
            epsilon: DEFAULT_POSITIVITY_MARGIN,
        }
    }
}

/// Slope of the squared-loss decision rule in `y + h`:
/// `δ = (a_y/a_{y+1}) (y+h) / (y+1) = t(y) (y+h)`.
fn squared_loss_slope(model: DleModel, y: u32) -> Option<f64> {
    model.ratio_up(y).map(|r| r / (y as f64 + 1.0))
}

/// Translate the structural constraints into labeled rows.
///
/// - Ties: `h_i = h_j` chained through each group of equal counts.
/// - Boundary (`k=1`): `h = 1` on the representative of the zero count.
/// - Positivity: `h ≤ 1 - ε` for positive counts (`k=1`);
///   `h ≥ -y + ε` everywhere (`k=0`).
/// - Monotonicity of the induced rule `δ` over consecutive distinct counts,
///   using the model's coefficient ratio. Under scaled loss `δ(0) = 0` by
///   convention, so pairs starting at zero need no row; under squared loss
///   the Binomial upper bound is skipped (its rule value is extrapolated).
pub fn build(
    sample: &CountSample,
    model: DleModel,
    k: LossIndex,
    flags: ConstraintFlags,
) -> Result<ConstraintSet> {
    if k > 1 {
        return Err(Error::domain("loss index must be 0 or 1"));
    }
    if !(flags.epsilon > 0.0) {
        return Err(Error::domain("positivity margin must be positive"));
    }
    let eps = flags.epsilon;
    let (values, group) = sample.distinct();
    let d = values.len();
    // first original index of each distinct value, in ascending value order
    let mut rep = vec![usize::MAX; d];
    for (i, g) in group.iter().enumerate() {
        if i < rep[*g] || rep[*g] == usize::MAX {
            rep[*g] = rep[*g].min(i);
        }
    }

    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    let mut upper_bound_coords = Vec::new();

    // Tie rows chain each group of equal counts.
    for a in 0..d {
        let members: Vec<usize> = (0..sample.len()).filter(|i| group[*i] == a).collect();
        for w in members.windows(2) {
            eq.push(LinRow {
                terms: vec![(w[0], 1.0), (w[1], -1.0)],
                rhs: 0.0,
                kind: RowKind::Tie,
            });
        }
    }

    if k == 1 {
        if values[0] == 0 {
            eq.push(LinRow {
                terms: vec![(rep[0], 1.0)],
                rhs: 1.0,
                kind: RowKind::Boundary,
            });
        }
        for a in 0..d {
            if values[a] > 0 {
                ineq.push(LinRow {
                    terms: vec![(rep[a], 1.0)],
                    rhs: 1.0 - eps,
                    kind: RowKind::Positivity,
                });
            }
        }
    } else {
        for a in 0..d {
            ineq.push(LinRow {
                terms: vec![(rep[a], -1.0)],
                rhs: values[a] as f64 - eps,
                kind: RowKind::Positivity,
            });
        }
        if let Some(m) = model.support_max() {
            for (i, y) in sample.y.iter().enumerate() {
                if *y == m {
                    upper_bound_coords.push(i);
                }
            }
        }
    }

    if flags.monotone {
        for a in 1..d {
            let (lo, hi) = (values[a - 1], values[a]);
            if k == 1 {
                // δ = r(y)/(1-h), r = a_{y-1}/a_y; δ(0) = 0 needs no row.
                if lo == 0 {
                    continue;
                }
                let r_lo = model.ratio_down(lo);
                let r_hi = model.ratio_down(hi);
                ineq.push(LinRow {
                    terms: vec![(rep[a - 1], r_hi), (rep[a], -r_lo)],
                    rhs: r_hi - r_lo,
                    kind: RowKind::Monotone,
                });
            } else {
                // δ = t(y)(y+h); cross-multiplied with positive slopes.
                let (Some(t_lo), Some(t_hi)) = (
                    squared_loss_slope(model, lo),
                    squared_loss_slope(model, hi),
                ) else {
                    continue; // Binomial upper bound: rule extrapolated instead
                };
                ineq.push(LinRow {
                    terms: vec![(rep[a - 1], t_lo), (rep[a], -t_hi)],
                    rhs: t_hi * hi as f64 - t_lo * lo as f64,
                    kind: RowKind::Monotone,
                });
            }
        }
    }

    Ok(ConstraintSet {
        n: sample.len(),
        ineq,
        eq,
        upper_bound_coords,
    })
}

impl ConstraintSet {
    /// Collapse onto distinct-count variables: column `i` maps to `group[i]`.
    /// Tie rows reduce to `0 = 0` and are dropped.
    pub fn reduce(&self, group: &[usize], d: usize) -> ConstraintSet {
        let reduce_row = |row: &LinRow| -> Option<LinRow> {
            let mut coeffs = vec![0.0; d];
            for (i, c) in &row.terms {
                coeffs[group[*i]] += c;
            }
            let terms: Vec<(usize, f64)> = coeffs
                .into_iter()
                .enumerate()
                .filter(|(_, c)| *c != 0.0)
                .collect();
            if terms.is_empty() {
                None
            } else {
                Some(LinRow {
                    terms,
                    rhs: row.rhs,
                    kind: row.kind,
                })
            }
        };
        ConstraintSet {
            n: d,
            ineq: self.ineq.iter().filter_map(reduce_row).collect(),
            eq: self.eq.iter().filter_map(reduce_row).collect(),
            upper_bound_coords: Vec::new(),
        }
    }

    /// Dense `(A, b, C, d)` for the solver.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>, DVector<f64>) {
        let mut a = DMatrix::zeros(self.ineq.len(), self.n);
        let mut b = DVector::zeros(self.ineq.len());
        for (r, row) in self.ineq.iter().enumerate() {
            for (i, c) in &row.terms {
                a[(r, *i)] = *c;
            }
            b[r] = row.rhs;
        }
        let mut c_mat = DMatrix::zeros(self.eq.len(), self.n);
        let mut d_vec = DVector::zeros(self.eq.len());
        for (r, row) in self.eq.iter().enumerate() {
            for (i, c) in &row.terms {
                c_mat[(r, *i)] = *c;
            }
            d_vec[r] = row.rhs;
        }
        (a, b, c_mat, d_vec)
    }

    /// Worst slack per row family at a candidate `h`. Inequality slack is
    /// `rhs - row·h` (nonnegative when satisfied); equality slack is
    /// `-|row·h - rhs|`.
    pub fn slack_by_kind(&self, h: &[f64]) -> Vec<(RowKind, f64)> {
        let mut worst: Vec<(RowKind, f64)> = Vec::new();
        let mut note = |kind: RowKind, slack: f64| {
            match worst.iter_mut().find(|(k, _)| *k == kind) {
                Some((_, s)) => *s = s.min(slack),
                None => worst.push((kind, slack)),
            }
        };
        for row in &self.ineq {
            note(row.kind, row.rhs - row.dot(h));
        }
        for row in &self.eq {
            note(row.kind, -(row.dot(h) - row.rhs).abs());
        }
        worst
    }

    pub fn kinds_present(&self) -> Vec<RowKind> {
        let mut kinds = Vec::new();
        for row in self.ineq.iter().chain(self.eq.iter()) {
            if !kinds.contains(&row.kind) {
                kinds.push(row.kind);
            }
        }
        kinds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::{marginal_support, marginal_table};
    use crate::dle::SamplingModel;
    use crate::estimator::h0_from_pmf;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(y: Vec<u32>, model: DleModel) -> CountSample {
        CountSample::new(y, model).unwrap()
    }

    #[test]
    fn zero_tie_boundary_case_under_scaled_loss() {
        let s = sample(vec![0, 0, 1], DleModel::Poisson);
        let set = build(&s, DleModel::Poisson, 1, ConstraintFlags::default()).unwrap();
        // one tie row chaining the zeros, one boundary row pinning h = 1
        assert_eq!(set.eq.len(), 2);
        assert_eq!(set.eq.iter().filter(|r| r.kind == RowKind::Tie).count(), 1);
        assert_eq!(set.eq.iter().filter(|r| r.kind == RowKind::Boundary).count(), 1);
        // one positivity row for the count-1 coordinate; the 0 -> 1 step needs
        // no monotone row because the rule is pinned to zero at y = 0
        assert_eq!(set.ineq.len(), 1);
        assert_eq!(set.ineq[0].kind, RowKind::Positivity);
        // jointly the equalities force both zero coordinates to one
        let h = [1.0, 1.0, 0.3];
        for (kind, slack) in set.slack_by_kind(&h) {
            assert!(slack >= -1e-12, "{kind}: {slack}");
        }
    }

    #[test]
    fn all_tied_sample_under_squared_loss() {
        let s = sample(vec![2, 2, 2], DleModel::Poisson);
        let set = build(&s, DleModel::Poisson, 0, ConstraintFlags::default()).unwrap();
        assert_eq!(set.eq.len(), 2); // two tie rows chain three coordinates
        assert!(set.eq.iter().all(|r| r.kind == RowKind::Tie));
        assert_eq!(set.ineq.len(), 1); // h >= -2 + eps
        assert_eq!(set.ineq[0].kind, RowKind::Positivity);
        let row = &set.ineq[0];
        assert_eq!(row.terms, vec![(0, -1.0)]);
        assert!((row.rhs - (2.0 - 1e-6)).abs() < 1e-15);
    }

    #[test]
    fn scaled_loss_monotone_row_uses_coefficient_ratio() {
        // Poisson, distinct counts 1 and 3: r(1) = 1, r(3) = 3, so the rule
        // bound is 3 h_(1) - 1 h_(2) <= 2.
        let s = sample(vec![1, 3], DleModel::Poisson);
        let set = build(&s, DleModel::Poisson, 1, ConstraintFlags::default()).unwrap();
        let mono: Vec<_> = set.ineq.iter().filter(|r| r.kind == RowKind::Monotone).collect();
        assert_eq!(mono.len(), 1);
        assert_eq!(mono[0].terms, vec![(0, 3.0), (1, -1.0)]);
        assert!((mono[0].rhs - 2.0).abs() < 1e-15);
    }

    #[test]
    fn squared_loss_poisson_monotone_row_is_count_shift() {
        // delta = y + h, so rows read h_(a-1) - h_(a) <= u_a - u_{a-1}
        let s = sample(vec![1, 4], DleModel::Poisson);
        let set = build(&s, DleModel::Poisson, 0, ConstraintFlags::default()).unwrap();
        let mono: Vec<_> = set.ineq.iter().filter(|r| r.kind == RowKind::Monotone).collect();
        assert_eq!(mono.len(), 1);
        assert_eq!(mono[0].terms, vec![(0, 1.0), (1, -1.0)]);
        assert!((mono[0].rhs - 3.0).abs() < 1e-15);
    }

    #[test]
    fn binomial_upper_bound_excluded_from_monotone_rows() {
        let model = DleModel::Binomial { m: 4 };
        let s = sample(vec![2, 4, 4, 3], model);
        let set = build(&s, model, 0, ConstraintFlags::default()).unwrap();
        assert_eq!(set.upper_bound_coords, vec![1, 2]);
        // monotone rows only between 2 and 3; the pair (3, 4) is skipped
        let mono: Vec<_> = set.ineq.iter().filter(|r| r.kind == RowKind::Monotone).collect();
        assert_eq!(mono.len(), 1);
    }

    #[test]
    fn monotone_rows_can_be_disabled() {
        let s = sample(vec![1, 2, 3], DleModel::Poisson);
        let flags = ConstraintFlags { monotone: false, ..Default::default() };
        let set = build(&s, DleModel::Poisson, 1, flags).unwrap();
        assert!(set.ineq.iter().all(|r| r.kind != RowKind::Monotone));
    }

    #[test]
    fn reduction_drops_tie_rows_and_maps_columns() {
        let s = sample(vec![0, 0, 1, 1, 3], DleModel::Poisson);
        let set = build(&s, DleModel::Poisson, 1, ConstraintFlags::default()).unwrap();
        let (_, group) = s.distinct();
        let reduced = set.reduce(&group, 3);
        assert!(reduced.eq.iter().all(|r| r.kind == RowKind::Boundary));
        assert!(reduced.ineq.iter().all(|r| !r.terms.is_empty()));
        for row in &reduced.ineq {
            for (i, _) in &row.terms {
                assert!(*i < 3);
            }
        }
    }

    /// The true functional from the exact marginal must satisfy every row:
    /// monotone/tie/boundary with essentially zero slack allowance, and
    /// positivity up to the margin epsilon it deliberately enforces.
    #[test]
    fn truth_is_feasible_for_random_finite_priors() {
        let mut rng = ChaCha8Rng::seed_from_u64(314);
        for trial in 0..20 {
            let n_atoms = rng.random_range(1..=4);
            let raw: Vec<(f64, f64)> = (0..n_atoms)
                .map(|_| (rng.random_range(0.3..10.0), rng.random_range(0.1..1.0)))
                .collect();
            let total: f64 = raw.iter().map(|(_, w)| w).sum();
            let atoms: Vec<(f64, f64)> = raw.into_iter().map(|(t, w)| (t, w / total)).collect();
            for model in [DleModel::Poisson, DleModel::Binomial { m: 6 }] {
                let gen = SamplingModel::Pure(model);
                let max_y = marginal_support(&gen, &atoms, 1e-280).unwrap();
                let p = marginal_table(&gen, &atoms, max_y).unwrap();
                let y = crate::dle::sample_counts(
                    &gen,
                    &crate::dle::sample_theta_from_atoms(&atoms, 40, trial),
                    model,
                    trial * 7 + 1,
                )
                .unwrap();
                for k in [0u8, 1] {
                    let h0_table = h0_from_pmf(&p, k);
                    let h: Vec<f64> = y
                        .y
                        .iter()
                        .map(|v| h0_table[*v as usize].unwrap_or(0.0))
                        .collect();
                    let set = build(&y, model, k, ConstraintFlags::default()).unwrap();
                    for (kind, slack) in set.slack_by_kind(&h) {
                        let allow = if kind == RowKind::Positivity {
                            DEFAULT_POSITIVITY_MARGIN + 1e-10
                        } else {
                            1e-10
                        };
                        assert!(
                            slack >= -allow,
                            "trial {trial} {model} k={k} {kind}: slack {slack:.3e}"
                        );
                    }
                }
            }
        }
    }
}
