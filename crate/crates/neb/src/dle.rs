//! The discrete linear exponential (power series) family, priors over its
//! parameter, and count sampling.
//!
//! A member has pmf `a_y θ^y / g(θ)` on the nonnegative integers. Three
//! members are instantiated: Poisson (`a_y = 1/y!`, `g = exp`), Binomial in
//! its odds parameterization (`a_y = C(m,y)`, `g = (1+θ)^m`, `θ = q/(1-q)`)
//! and Conway–Maxwell–Poisson (`a_y = (y!)^{-ν}`). Adding another member is a
//! data-only change: supply the coefficient function, the normalizer and the
//! support bound.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre_on;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use statrs::distribution::ContinuousCDF;
use statrs::function::gamma::ln_gamma;

/// Relative cutoff for truncating the CMP normalizer series.
const CMP_TERM_CUTOFF: f64 = 1e-16;
/// Hard cap on CMP series terms, guarding pathological inputs.
const CMP_MAX_TERMS: usize = 10_000;

/// A member of the DLE family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DleModel {
    Poisson,
    /// Binomial with `m` trials, parameterized by the odds `θ = q/(1-q)`.
    Binomial { m: u32 },
    /// Conway–Maxwell–Poisson with dispersion `ν > 0`; `ν < 1` gives longer
    /// tails than Poisson, `ν = 1` recovers it exactly.
    Cmp { nu: f64 },
}

impl std::fmt::Display for DleModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DleModel::Poisson => write!(f, "poisson"),
            DleModel::Binomial { m } => write!(f, "binomial(m={m})"),
            DleModel::Cmp { nu } => write!(f, "cmp(nu={nu})"),
        }
    }
}

impl DleModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            DleModel::Poisson => Ok(()),
            DleModel::Binomial { m } => {
                if *m == 0 {
                    Err(Error::domain("binomial trial count m must be positive"))
                } else {
                    Ok(())
                }
            }
            DleModel::Cmp { nu } => {
                if nu.is_finite() && *nu > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("CMP dispersion nu must be positive"))
                }
            }
        }
    }

    /// Upper end of the support, `None` when unbounded.
    pub fn support_max(&self) -> Option<u32> {
        match self {
            DleModel::Binomial { m } => Some(*m),
            _ => None,
        }
    }

    pub fn in_support(&self, y: u32) -> bool {
        self.support_max().is_none_or(|m| y <= m)
    }

    /// `ln a_y`.
    pub fn ln_coeff(&self, y: u32) -> f64 {
        match self {
            DleModel::Poisson => -ln_gamma(y as f64 + 1.0),
            DleModel::Binomial { m } => {
                if y > *m {
                    f64::NEG_INFINITY
                } else {
                    ln_gamma(*m as f64 + 1.0)
                        - ln_gamma(y as f64 + 1.0)
                        - ln_gamma((*m - y) as f64 + 1.0)
                }
            }
            DleModel::Cmp { nu } => -nu * ln_gamma(y as f64 + 1.0),
        }
    }

    /// `a_y`.
    pub fn coeff(&self, y: u32) -> f64 {
        self.ln_coeff(y).exp()
    }

    /// `a_{y-1} / a_y` for `y >= 1`; the naive estimate in the scaled-loss rule.
    ///
    /// Poisson: `y`. Binomial: `y / (m - y + 1)`. CMP: `y^ν`.
    pub fn ratio_down(&self, y: u32) -> f64 {
        debug_assert!(y >= 1);
        match self {
            DleModel::Poisson => y as f64,
            DleModel::Binomial { m } => y as f64 / (*m - y + 1) as f64,
            DleModel::Cmp { nu } => (y as f64).powf(*nu),
        }
    }

    /// `a_y / a_{y+1}`; the naive estimate in the squared-loss rule.
    ///
    /// `None` at the Binomial upper bound where `a_{m+1} = 0`.
    pub fn ratio_up(&self, y: u32) -> Option<f64> {
        match self {
            DleModel::Poisson => Some(y as f64 + 1.0),
            DleModel::Binomial { m } => {
                if y >= *m {
                    None
                } else {
                    Some((y as f64 + 1.0) / (*m - y) as f64)
                }
            }
            DleModel::Cmp { nu } => Some((y as f64 + 1.0).powf(*nu)),
        }
    }

    /// `ln g(θ)`.
    ///
    /// The CMP normalizer series is truncated when the running term falls
    /// below `1e-16` times the running sum, capped at `1e4` terms; the terms
    /// are accumulated in log space so large `θ` cannot overflow.
    pub fn ln_normalizer(&self, theta: f64) -> Result<f64> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::domain(format!("theta must be positive, got {theta}")));
        }
        match self {
            DleModel::Poisson => Ok(theta),
            DleModel::Binomial { m } => Ok(*m as f64 * theta.ln_1p()),
            DleModel::Cmp { nu } => {
                let ln_theta = theta.ln();
                // streaming log-sum-exp over terms  t_j = j ln θ - ν ln j!
                let mut lse = 0.0_f64; // j = 0 term is 1
                for j in 1..CMP_MAX_TERMS {
                    let t = j as f64 * ln_theta - nu * ln_gamma(j as f64 + 1.0);
                    lse = if t > lse {
                        t + (lse - t).exp().ln_1p()
                    } else {
                        lse + (t - lse).exp().ln_1p()
                    };
                    if t - lse < CMP_TERM_CUTOFF.ln() {
                        break;
                    }
                }
                Ok(lse)
            }
        }
    }

    /// `p(y | θ) = a_y θ^y / g(θ)`.
    pub fn pmf(&self, y: u32, theta: f64) -> Result<f64> {
        if !self.in_support(y) {
            return Err(Error::domain(format!("y={y} outside support of {self}")));
        }
        let ln_g = self.ln_normalizer(theta)?;
        Ok((self.ln_coeff(y) + y as f64 * theta.ln() - ln_g).exp())
    }

    /// Binomial pmf in the success-probability parameterization; converts
    /// `q` to odds internally. Rejects the `q = 1` boundary where the odds
    /// are infinite.
    pub fn pmf_q(&self, y: u32, q: f64) -> Result<f64> {
        match self {
            DleModel::Binomial { .. } => {
                if !(q > 0.0 && q < 1.0) {
                    return Err(Error::domain(format!("q must lie in (0,1), got {q}")));
                }
                self.pmf(y, q / (1.0 - q))
            }
            _ => Err(Error::domain("pmf_q only applies to the Binomial model")),
        }
    }

    /// Smallest `M` such that the pmf mass on `{0..M}` is at least `1 - tail`.
    pub fn truncation_point(&self, theta: f64, tail: f64) -> Result<u32> {
        if let Some(m) = self.support_max() {
            return Ok(m);
        }
        let mut acc = 0.0;
        let mut y = 0;
        loop {
            acc += self.pmf(y, theta)?;
            if acc >= 1.0 - tail || y >= 100_000 {
                return Ok(y);
            }
            y += 1;
        }
    }

    /// One draw from `p(· | θ)`.
    pub fn sample<R: Rng>(&self, theta: f64, rng: &mut R) -> Result<u32> {
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::domain(format!("theta must be positive, got {theta}")));
        }
        match self {
            DleModel::Poisson => {
                let d = rand_distr::Poisson::new(theta)
                    .map_err(|e| Error::domain(format!("poisson({theta}): {e}")))?;
                Ok(d.sample(rng) as u32)
            }
            DleModel::Binomial { m } => {
                let q = theta / (1.0 + theta);
                let d = rand_distr::Binomial::new(*m as u64, q)
                    .map_err(|e| Error::domain(format!("binomial({m},{q}): {e}")))?;
                Ok(d.sample(rng) as u32)
            }
            DleModel::Cmp { .. } => {
                // Inversion against the truncated pmf table.
                let top = self.truncation_point(theta, 1e-12)?;
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for y in 0..=top {
                    acc += self.pmf(y, theta)?;
                    if u <= acc {
                        return Ok(y);
                    }
                }
                Ok(top)
            }
        }
    }
}

/// A count-generating process: a single DLE member or a finite mixture of
/// members sharing the parameter θ, as in the misspecification scenarios.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingModel {
    Pure(DleModel),
    /// Weighted components; weights must be nonnegative and sum to one.
    Mixture(Vec<(f64, DleModel)>),
}

impl SamplingModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            SamplingModel::Pure(m) => m.validate(),
            SamplingModel::Mixture(parts) => {
                if parts.is_empty() {
                    return Err(Error::domain("mixture model needs components"));
                }
                let mut total = 0.0;
                for (w, m) in parts {
                    if *w < 0.0 {
                        return Err(Error::domain("mixture weights must be nonnegative"));
                    }
                    total += w;
                    m.validate()?;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::domain(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Mixture pmf `Σ w_c p_c(y | θ)`.
    pub fn pmf(&self, y: u32, theta: f64) -> Result<f64> {
        match self {
            SamplingModel::Pure(m) => {
                if m.in_support(y) {
                    m.pmf(y, theta)
                } else {
                    Ok(0.0)
                }
            }
            SamplingModel::Mixture(parts) => {
                let mut p = 0.0;
                for (w, m) in parts {
                    if m.in_support(y) {
                        p += w * m.pmf(y, theta)?;
                    }
                }
                Ok(p)
            }
        }
    }

    pub fn sample<R: Rng>(&self, theta: f64, rng: &mut R) -> Result<u32> {
        match self {
            SamplingModel::Pure(m) => m.sample(theta, rng),
            SamplingModel::Mixture(parts) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, m) in parts {
                    acc += w;
                    if u <= acc {
                        return m.sample(theta, rng);
                    }
                }
                parts.last().unwrap().1.sample(theta, rng)
            }
        }
    }
}

/// A prior distribution over θ.
#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    PointMass { theta: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Shape–rate parameterization.
    Gamma { shape: f64, rate: f64 },
    /// `q ~ Beta(alpha, beta)` mapped to the odds `θ = q/(1-q)`.
    BetaOdds { alpha: f64, beta: f64 },
    ChiSquare { df: f64 },
    Mixture { components: Vec<(f64, PriorSpec)> },
    /// Deterministic equi-spaced vector of length n over `[lo, hi]`.
    Grid { lo: f64, hi: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            PriorSpec::PointMass { theta } => {
                if *theta > 0.0 && theta.is_finite() {
                    Ok(())
                } else {
                    Err(Error::domain("point mass requires theta > 0"))
                }
            }
            PriorSpec::Uniform { lo, hi } => {
                if *lo > 0.0 && hi > lo {
                    Ok(())
                } else {
                    Err(Error::domain("uniform prior requires 0 < lo < hi"))
                }
            }
            PriorSpec::Gamma { shape, rate } => {
                if *shape > 0.0 && *rate > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("gamma prior requires shape, rate > 0"))
                }
            }
            PriorSpec::BetaOdds { alpha, beta } => {
                if *alpha > 0.0 && *beta > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("beta prior requires alpha, beta > 0"))
                }
            }
            PriorSpec::ChiSquare { df } => {
                if *df > 0.0 {
                    Ok(())
                } else {
                    Err(Error::domain("chi-square prior requires df > 0"))
                }
            }
            PriorSpec::Mixture { components } => {
                if components.is_empty() {
                    return Err(Error::domain("mixture prior needs components"));
                }
                let mut total = 0.0;
                for (w, c) in components {
                    if *w < 0.0 {
                        return Err(Error::domain("mixture weights must be nonnegative"));
                    }
                    total += w;
                    c.validate()?;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::domain(format!(
                        "mixture weights sum to {total}, expected 1"
                    )));
                }
                Ok(())
            }
            PriorSpec::Grid { lo, hi } => {
                if *lo > 0.0 && hi >= lo {
                    Ok(())
                } else {
                    Err(Error::domain("grid prior requires 0 < lo <= hi"))
                }
            }
        }
    }

    fn sample_one<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            PriorSpec::PointMass { theta } => *theta,
            PriorSpec::Uniform { lo, hi } => rng.random_range(*lo..*hi),
            PriorSpec::Gamma { shape, rate } => {
                rand_distr::Gamma::new(*shape, 1.0 / rate).unwrap().sample(rng)
            }
            PriorSpec::BetaOdds { alpha, beta } => {
                let q: f64 = rand_distr::Beta::new(*alpha, *beta).unwrap().sample(rng);
                // Beta draws at the boundaries would map to 0 or infinite odds.
                let q = q.clamp(f64::MIN_POSITIVE, 1.0 - 1e-15);
                q / (1.0 - q)
            }
            PriorSpec::ChiSquare { df } => {
                let v: f64 = rand_distr::ChiSquared::new(*df).unwrap().sample(rng);
                v.max(f64::MIN_POSITIVE)
            }
            PriorSpec::Mixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (w, c) in components {
                    acc += w;
                    if u <= acc {
                        return c.sample_one(rng);
                    }
                }
                components.last().unwrap().1.sample_one(rng)
            }
            PriorSpec::Grid { .. } => unreachable!("grid prior is deterministic"),
        }
    }

    /// Discretize the prior into a finite set of `(θ, weight)` atoms for
    /// exact-enumeration Bayes rules.
    ///
    /// Point masses and mixtures of them are exact. Continuous components are
    /// replaced by a 400-node Gauss–Legendre rule over the interval holding
    /// all but `1e-10` of their mass; weights are renormalized to sum to one,
    /// so the result is itself a valid finite prior. The grid prior needs the
    /// intended sample length `n_grid` to reproduce its atoms.
    pub fn atoms(&self, n_grid: usize) -> Result<Vec<(f64, f64)>> {
        self.validate()?;
        const NODES: usize = 400;
        const TAIL: f64 = 1e-10;
        let mut out = self.atoms_inner(n_grid, NODES, TAIL)?;
        let total: f64 = out.iter().map(|(_, w)| w).sum();
        if total <= 0.0 {
            return Err(Error::domain("prior discretization has no mass"));
        }
        for (_, w) in &mut out {
            *w /= total;
        }
        Ok(out)
    }

    fn atoms_inner(&self, n_grid: usize, nodes: usize, tail: f64) -> Result<Vec<(f64, f64)>> {
        match self {
            PriorSpec::PointMass { theta } => Ok(vec![(*theta, 1.0)]),
            PriorSpec::Uniform { lo, hi } => {
                let (xs, ws) = gauss_legendre_on(nodes, *lo, *hi);
                let density = 1.0 / (hi - lo);
                Ok(xs.into_iter().zip(ws).map(|(x, w)| (x, w * density)).collect())
            }
            PriorSpec::Gamma { shape, rate } => {
                let d = statrs::distribution::Gamma::new(*shape, *rate)
                    .map_err(|e| Error::domain(e.to_string()))?;
                let lo = d.inverse_cdf(tail / 2.0).max(1e-300);
                let hi = d.inverse_cdf(1.0 - tail / 2.0);
                let (xs, ws) = gauss_legendre_on(nodes, lo, hi);
                Ok(xs
                    .into_iter()
                    .zip(ws)
                    .map(|(x, w)| (x, w * statrs::distribution::Continuous::pdf(&d, x)))
                    .collect())
            }
            PriorSpec::BetaOdds { alpha, beta } => {
                let d = statrs::distribution::Beta::new(*alpha, *beta)
                    .map_err(|e| Error::domain(e.to_string()))?;
                let lo = d.inverse_cdf(tail / 2.0).max(1e-12);
                let hi = d.inverse_cdf(1.0 - tail / 2.0).min(1.0 - 1e-12);
                let (qs, ws) = gauss_legendre_on(nodes, lo, hi);
                Ok(qs
                    .into_iter()
                    .zip(ws)
                    .map(|(q, w)| {
                        (
                            q / (1.0 - q),
                            w * statrs::distribution::Continuous::pdf(&d, q),
                        )
                    })
                    .collect())
            }
            PriorSpec::ChiSquare { df } => {
                let d = statrs::distribution::ChiSquared::new(*df)
                    .map_err(|e| Error::domain(e.to_string()))?;
                let lo = d.inverse_cdf(tail / 2.0).max(1e-300);
                let hi = d.inverse_cdf(1.0 - tail / 2.0);
                let (xs, ws) = gauss_legendre_on(nodes, lo, hi);
                Ok(xs
                    .into_iter()
                    .zip(ws)
                    .map(|(x, w)| (x, w * statrs::distribution::Continuous::pdf(&d, x)))
                    .collect())
            }
            PriorSpec::Mixture { components } => {
                let mut out = Vec::new();
                for (w, c) in components {
                    for (theta, wt) in c.atoms_inner(n_grid, nodes, tail)? {
                        out.push((theta, w * wt));
                    }
                }
                Ok(out)
            }
            PriorSpec::Grid { lo, hi } => Ok(grid_vector(*lo, *hi, n_grid)
                .into_iter()
                .map(|t| (t, 1.0 / n_grid as f64))
                .collect()),
        }
    }
}

/// Equi-spaced vector of length `n` over `[lo, hi]`.
pub fn grid_vector(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n as f64 - 1.0);
    (0..n).map(|i| lo + step * i as f64).collect()
}

/// Draw `n` parameters from the prior, reproducibly under `seed`.
///
/// The grid prior returns its deterministic equi-spaced vector.
pub fn sample_theta(prior: &PriorSpec, n: usize, seed: u64) -> Result<Vec<f64>> {
    prior.validate()?;
    if n == 0 {
        return Err(Error::domain("need n >= 1 draws"));
    }
    if let PriorSpec::Grid { lo, hi } = prior {
        return Ok(grid_vector(*lo, *hi, n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| prior.sample_one(&mut rng)).collect())
}

/// Draw `n` parameters from a finite `(θ, weight)` atom set.
pub fn sample_theta_from_atoms(atoms: &[(f64, f64)], n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for &(theta, w) in atoms {
                acc += w;
                if u <= acc {
                    return theta;
                }
            }
            atoms.last().unwrap().0
        })
        .collect()
}

/// The observed counts plus the model they are analyzed under.
#[derive(Debug, Clone, PartialEq)]
pub struct CountSample {
    pub y: Vec<u32>,
    pub model: DleModel,
}

impl CountSample {
    pub fn new(y: Vec<u32>, model: DleModel) -> Result<Self> {
        model.validate()?;
        if y.len() < 2 {
            return Err(Error::domain(
                "need at least two observations for the pairwise kernel criterion",
            ));
        }
        if let Some(m) = model.support_max() {
            if let Some(bad) = y.iter().find(|v| **v > m) {
                return Err(Error::domain(format!("count {bad} exceeds binomial m={m}")));
            }
        }
        Ok(CountSample { y, model })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Sorted distinct counts and, per observation, the index of its group.
    pub fn distinct(&self) -> (Vec<u32>, Vec<usize>) {
        let mut values: Vec<u32> = self.y.clone();
        values.sort_unstable();
        values.dedup();
        let group = self
            .y
            .iter()
            .map(|v| values.binary_search(v).unwrap())
            .collect();
        (values, group)
    }
}

/// Independent draws `Y_i ~ model(θ_i)`, one per parameter, reproducible
/// under `seed`.
pub fn sample_counts(
    model: &SamplingModel,
    thetas: &[f64],
    fit_model: DleModel,
    seed: u64,
) -> Result<CountSample> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Vec::with_capacity(thetas.len());
    for &t in thetas {
        y.push(model.sample(t, &mut rng)?);
    }
    CountSample::new(y, fit_model)
}
