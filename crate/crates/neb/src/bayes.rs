//! Bayes rules for count shrinkage: ratio functionals of the marginal pmf,
//! the rule they induce at each count, and an exact-enumeration oracle built
//! from a known finite prior.
//!
//! For a marginal pmf `p`, the shrinkage factor is the adjacent-count ratio
//! `w^(k)(y) = p(y-k) / p(y+1-k)` and the optimal rule divides the known
//! coefficient ratio `a_{y-k}/a_{y+1-k}` by it. `k = 1` is the scaled
//! squared error loss, `k = 0` the plain one.

use crate::dle::{DleModel, SamplingModel};
use crate::error::{Error, Result};

/// A pmf on `{0, 1, ..., len-1}`, possibly a truncation of an unbounded one.
#[derive(Debug, Clone)]
pub struct PmfTable {
    pub probs: Vec<f64>,
}

impl PmfTable {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::domain("empty pmf table"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::domain("pmf entries must be finite and nonnegative"));
        }
        Ok(PmfTable { probs })
    }

    pub fn max_y(&self) -> u32 {
        (self.probs.len() - 1) as u32
    }

    /// `p(y)`, zero beyond the table.
    pub fn get(&self, y: i64) -> f64 {
        if y < 0 || y as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[y as usize]
        }
    }
}

/// The loss index: 0 for squared error, 1 for scaled squared error.
pub type LossIndex = u8;

/// Per-count ratio functional values; `None` marks points where the
/// denominator mass vanishes.
#[derive(Debug, Clone)]
pub struct RatioFunctional {
    pub k: LossIndex,
    /// `w(y)` for `y = 0..=max_y`; entries below `y = k` are `None` since the
    /// functional's domain starts at `k`.
    pub w: Vec<Option<f64>>,
}

/// A decision rule tabulated over counts; `None` marks counts where the
/// marginal-ratio construction degenerates.
#[derive(Debug, Clone)]
pub struct BayesRule {
    pub k: LossIndex,
    pub delta: Vec<Option<f64>>,
}

impl BayesRule {
    pub fn delta_at(&self, y: u32) -> Option<f64> {
        self.delta.get(y as usize).copied().flatten()
    }
}

fn check_k(k: LossIndex) -> Result<()> {
    if k > 1 {
        Err(Error::domain(format!("loss index must be 0 or 1, got {k}")))
    } else {
        Ok(())
    }
}

/// `w^(k)(y) = p(y-k)/p(y+1-k)`, per-point undefined where the denominator
/// vanishes.
pub fn ratio_functional(p: &PmfTable, k: LossIndex) -> Result<RatioFunctional> {
    check_k(k)?;
    let mut w = Vec::with_capacity(p.probs.len());
    for y in 0..p.probs.len() as i64 {
        if y < k as i64 {
            w.push(None);
            continue;
        }
        let num = p.get(y - k as i64);
        let den = p.get(y + 1 - k as i64);
        w.push(if den > 0.0 { Some(num / den) } else { None });
    }
    Ok(RatioFunctional { k, w })
}

/// The decision rule induced by a marginal pmf:
/// `δ(y) = (a_{y-k}/a_{y+1-k}) / w^(k)(y)` for `y >= k`, and `δ(y) = 0`
/// below. For Poisson this is `(y+1)p(y+1)/p(y)` at `k = 0` and
/// `y p(y)/p(y-1)` at `k = 1`.
///
/// At the Binomial upper bound with `k = 0` both coefficient and pmf ratios
/// degenerate; that point is reported undefined here and is covered by
/// [`oracle_bayes`], whose integral form stays finite.
pub fn bayes_rule_from_marginal(model: DleModel, p: &PmfTable, k: LossIndex) -> Result<BayesRule> {
    check_k(k)?;
    let ratios = ratio_functional(p, k)?;
    let mut delta = Vec::with_capacity(p.probs.len());
    for y in 0..p.probs.len() as u32 {
        if (y as i64) < k as i64 {
            delta.push(Some(0.0));
            continue;
        }
        let coeff = if k == 1 {
            Some(model.ratio_down(y))
        } else {
            model.ratio_up(y)
        };
        let d = match (coeff, ratios.w[y as usize]) {
            (Some(c), Some(w)) if w > 0.0 => Some(c / w),
            _ => None,
        };
        delta.push(d);
    }
    Ok(BayesRule { k, delta })
}

/// Exact-enumeration Bayes rule from a finite prior:
/// `δ(y) = Σ_c w_c p(y|θ_c) θ_c^{1-k} / Σ_c w_c p(y|θ_c) θ_c^{-k}`.
///
/// `atoms` are `(θ, weight)` pairs, e.g. from [`crate::dle::PriorSpec::atoms`];
/// `gen` may be a mixture so the oracle stays exact under misspecified
/// sampling. The rule is tabulated on `0..=max_y`.
pub fn oracle_bayes(
    gen: &SamplingModel,
    atoms: &[(f64, f64)],
    k: LossIndex,
    max_y: u32,
) -> Result<BayesRule> {
    check_k(k)?;
    if atoms.is_empty() {
        return Err(Error::domain("empty prior support"));
    }
    let mut delta = Vec::with_capacity(max_y as usize + 1);
    for y in 0..=max_y {
        if (y as i64) < k as i64 {
            delta.push(Some(0.0));
            continue;
        }
        let mut num = 0.0;
        let mut den = 0.0;
        for &(theta, weight) in atoms {
            let p = gen.pmf(y, theta)?;
            num += weight * p * theta.powi(1 - k as i32);
            den += weight * p * theta.powi(-(k as i32));
        }
        delta.push(if den > 0.0 { Some(num / den) } else { None });
    }
    Ok(BayesRule { k, delta })
}

/// Marginal pmf `p(y) = Σ_c w_c p(y|θ_c)` tabulated on `0..=max_y`.
pub fn marginal_table(gen: &SamplingModel, atoms: &[(f64, f64)], max_y: u32) -> Result<PmfTable> {
    if atoms.is_empty() {
        return Err(Error::domain("empty prior support"));
    }
    let probs = (0..=max_y)
        .map(|y| {
            atoms
                .iter()
                .map(|&(theta, w)| Ok(w * gen.pmf(y, theta)?))
                .sum::<Result<f64>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PmfTable::new(probs)
}

/// Largest `y` with marginal mass above `floor`, capped for safety.
pub fn marginal_support(gen: &SamplingModel, atoms: &[(f64, f64)], floor: f64) -> Result<u32> {
    if let SamplingModel::Pure(model) = gen {
        if let Some(m) = model.support_max() {
            return Ok(m);
        }
    }
    let mut last_positive = 0;
    for y in 0..10_000u32 {
        let p: f64 = atoms
            .iter()
            .map(|&(theta, w)| Ok(w * gen.pmf(y, theta)?))
            .sum::<Result<f64>>()?;
        if p > floor {
            last_positive = y;
        } else if y > last_positive + 10 {
            break;
        }
    }
    Ok(last_positive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dle::PriorSpec;

    fn poisson_table(theta: f64, max_y: u32) -> PmfTable {
        PmfTable::new(
            (0..=max_y)
                .map(|y| DleModel::Poisson.pmf(y, theta).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn poisson_point_mass_ratio_is_linear() {
        // w^(0)(y) = p(y)/p(y+1) = (y+1)/3 for Poisson(3)
        let p = poisson_table(3.0, 30);
        let r = ratio_functional(&p, 0).unwrap();
        for y in 0..25u32 {
            let w = r.w[y as usize].unwrap();
            assert!(
                (w - (y as f64 + 1.0) / 3.0).abs() < 1e-10,
                "y={y}: w={w}"
            );
        }
    }

    #[test]
    fn scaled_ratio_at_one_is_adjacent_mass_ratio() {
        let p = PmfTable::new(vec![0.5, 0.3, 0.2]).unwrap();
        let r = ratio_functional(&p, 1).unwrap();
        assert_eq!(r.w[0], None);
        assert!((r.w[1].unwrap() - 0.5 / 0.3).abs() < 1e-15);
    }

    #[test]
    fn uniform_pmf_gives_unit_ratio() {
        let p = PmfTable::new(vec![0.2; 5]).unwrap();
        let r = ratio_functional(&p, 0).unwrap();
        assert!((r.w[2].unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_denominator_is_per_point_undefined() {
        let p = PmfTable::new(vec![0.5, 0.0, 0.5]).unwrap();
        let r = ratio_functional(&p, 0).unwrap();
        assert!(r.w[0].is_none());
        assert!(r.w[1].is_some());
    }

    #[test]
    fn point_mass_prior_rule_is_constant() {
        let atoms = [(3.0, 1.0)];
        let gen = SamplingModel::Pure(DleModel::Poisson);
        for k in [0u8, 1] {
            let rule = oracle_bayes(&gen, &atoms, k, 20).unwrap();
            for y in k as u32..=20 {
                assert!((rule.delta_at(y).unwrap() - 3.0).abs() < 1e-10);
            }
        }
        // the marginal-ratio construction agrees
        let rule = bayes_rule_from_marginal(DleModel::Poisson, &poisson_table(3.0, 25), 0).unwrap();
        for y in 0..=20u32 {
            assert!((rule.delta_at(y).unwrap() - 3.0).abs() < 1e-10);
        }
    }

    #[test]
    fn scaled_rule_is_zero_at_zero() {
        let atoms = [(2.0, 0.5), (6.0, 0.5)];
        let gen = SamplingModel::Pure(DleModel::Poisson);
        let rule = oracle_bayes(&gen, &atoms, 1, 10).unwrap();
        assert_eq!(rule.delta_at(0), Some(0.0));
    }

    #[test]
    fn two_point_prior_posterior_mean_at_zero() {
        let atoms = [(2.0, 0.5), (6.0, 0.5)];
        let gen = SamplingModel::Pure(DleModel::Poisson);
        let rule = oracle_bayes(&gen, &atoms, 0, 10).unwrap();
        let want = (2.0 * (-2.0f64).exp() + 6.0 * (-6.0f64).exp())
            / ((-2.0f64).exp() + (-6.0f64).exp());
        assert!((rule.delta_at(0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn binomial_coefficient_ratio_with_flat_masses() {
        // m=5, k=1, y=2, p(1)=p(2): delta = C(5,1)/C(5,2) = 0.5
        let p = PmfTable::new(vec![0.2, 0.25, 0.25, 0.1, 0.1, 0.1]).unwrap();
        let rule = bayes_rule_from_marginal(DleModel::Binomial { m: 5 }, &p, 1).unwrap();
        assert!((rule.delta_at(2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn binomial_upper_bound_is_oracle_only_for_squared_loss() {
        let model = DleModel::Binomial { m: 4 };
        let gen = SamplingModel::Pure(model);
        let atoms = PriorSpec::PointMass { theta: 1.5 }.atoms(0).unwrap();
        let p = marginal_table(&gen, &atoms, 4).unwrap();
        let from_marginal = bayes_rule_from_marginal(model, &p, 0).unwrap();
        assert!(from_marginal.delta_at(4).is_none());
        let oracle = oracle_bayes(&gen, &atoms, 0, 4).unwrap();
        assert!((oracle.delta_at(4).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn constructions_agree_on_random_finite_priors() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let n_atoms = rng.random_range(1..=5);
            let atoms_raw: Vec<(f64, f64)> = (0..n_atoms)
                .map(|_| (rng.random_range(0.2..12.0), rng.random_range(0.1..1.0)))
                .collect();
            let total: f64 = atoms_raw.iter().map(|(_, w)| w).sum();
            let atoms: Vec<(f64, f64)> =
                atoms_raw.into_iter().map(|(t, w)| (t, w / total)).collect();
            for model in [DleModel::Poisson, DleModel::Binomial { m: 7 }] {
                let gen = SamplingModel::Pure(model);
                let max_y = marginal_support(&gen, &atoms, 1e-300).unwrap();
                let p = marginal_table(&gen, &atoms, max_y).unwrap();
                for k in [0u8, 1] {
                    let a = bayes_rule_from_marginal(model, &p, k).unwrap();
                    let b = oracle_bayes(&gen, &atoms, k, max_y).unwrap();
                    for y in 0..=max_y {
                        if p.get(y as i64) <= 1e-300 {
                            continue;
                        }
                        if let (Some(da), Some(db)) = (a.delta_at(y), b.delta_at(y)) {
                            assert!(
                                (da - db).abs() < 1e-10,
                                "trial {trial} {model} k={k} y={y}: {da} vs {db}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_rule_is_monotone_for_poisson_squared_loss() {
        let atoms = [(1.5, 0.3), (4.0, 0.5), (9.0, 0.2)];
        let gen = SamplingModel::Pure(DleModel::Poisson);
        let rule = oracle_bayes(&gen, &atoms, 0, 30).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for y in 0..=30 {
            let d = rule.delta_at(y).unwrap();
            assert!(d >= prev - 1e-12, "y={y}: {d} < {prev}");
            prev = d;
        }
    }

    #[test]
    fn empty_prior_rejected() {
        let gen = SamplingModel::Pure(DleModel::Poisson);
        assert!(oracle_bayes(&gen, &[], 0, 5).is_err());
    }
}
