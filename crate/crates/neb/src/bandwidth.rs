//! Bandwidth selection: the asymptotic risk estimate (ARE) evaluated per
//! grid point, and the oracle bandwidth that minimizes the realized loss
//! when the true parameters are known.
//!
//! The ARE needs the fitted rule at neighbor counts (`y+1` under scaled
//! loss, `y-1` under squared loss). When a neighbor is absent from the
//! sample its rule value is interpolated by a natural cubic spline through
//! the distinct `(count, δ)` pairs; beyond the observed range the line
//! through the outermost two distinct points is used.

use crate::bayes::LossIndex;
use crate::constraints::ConstraintFlags;
use crate::dle::{CountSample, DleModel};
use crate::error::{Error, Result};
use crate::estimator::{fit, ShrinkageSolution};
use crate::risk::compound_loss;
use crate::spline::fit_natural_spline;

/// Default grid: 10 equi-spaced points on `[10, 100]`.
pub fn default_grid() -> Vec<f64> {
    crate::dle::grid_vector(10.0, 100.0, 10)
}

/// Per-bandwidth ARE values over a grid, the selected bandwidth, and the
/// realized losses when the truth was supplied.
#[derive(Debug)]
pub struct AreCurve {
    pub grid: Vec<f64>,
    pub are: Vec<f64>,
    /// Index into `grid` minimizing the ARE; ties break to the smallest λ.
    pub selected: usize,
    pub solutions: Vec<ShrinkageSolution>,
    /// `L_n(θ, δ(λ))` per grid point, when `θ` was supplied.
    pub realized_loss: Option<Vec<f64>>,
    /// Index minimizing the realized loss, when `θ` was supplied.
    pub oracle: Option<usize>,
}

impl AreCurve {
    pub fn lambda_hat(&self) -> f64 {
        self.grid[self.selected]
    }

    pub fn solution(&self) -> &ShrinkageSolution {
        &self.solutions[self.selected]
    }

    pub fn oracle_lambda(&self) -> Option<f64> {
        self.oracle.map(|i| self.grid[i])
    }

    pub fn oracle_solution(&self) -> Option<&ShrinkageSolution> {
        self.oracle.map(|i| &self.solutions[i])
    }
}

/// Rule value at an arbitrary count: exact on observed counts, spline
/// interpolation in interior gaps, linear extension through the outermost
/// two distinct points beyond the range.
struct RuleLookup {
    counts: Vec<u32>,
    deltas: Vec<f64>,
}

impl RuleLookup {
    fn new(sample: &CountSample, sol: &ShrinkageSolution) -> Self {
        let pairs = sol.delta_by_count(sample);
        RuleLookup {
            counts: pairs.iter().map(|(c, _)| *c).collect(),
            deltas: pairs.iter().map(|(_, d)| *d).collect(),
        }
    }

    fn at(&self, count: i64) -> Result<f64> {
        if count >= 0 {
            if let Ok(idx) = self.counts.binary_search(&(count as u32)) {
                return Ok(self.deltas[idx]);
            }
        }
        let d = self.counts.len();
        if d < 2 {
            return Err(Error::TooFewDistinct);
        }
        let x = count as f64;
        let first = self.counts[0] as f64;
        let last = self.counts[d - 1] as f64;
        if x > last {
            let (x1, y1) = (self.counts[d - 2] as f64, self.deltas[d - 2]);
            let (x2, y2) = (last, self.deltas[d - 1]);
            return Ok(y2 + (y2 - y1) / (x2 - x1) * (x - x2));
        }
        if x < first {
            let (x1, y1) = (first, self.deltas[0]);
            let (x2, y2) = (self.counts[1] as f64, self.deltas[1]);
            return Ok(y1 + (y2 - y1) / (x2 - x1) * (x - x1));
        }
        let knots: Vec<f64> = self.counts.iter().map(|c| *c as f64).collect();
        let spline = fit_natural_spline(&knots, &self.deltas)?;
        Ok(spline.eval(x))
    }
}

/// The per-coordinate ψ terms feeding the ARE.
///
/// Scaled loss: `ψ(y_i) = δ(y_i+1)² / (y_i+1)`, zero at the Binomial upper
/// bound where its weight vanishes anyway. Squared loss: `ψ(y_i) = δ(y_i-1)`
/// for Poisson and `δ(y_i-1)/(m-y_i+1)` for Binomial, zero at `y_i = 0`
/// where its weight vanishes.
pub fn psi(sample: &CountSample, sol: &ShrinkageSolution, model: DleModel) -> Result<Vec<f64>> {
    if sample.len() != sol.delta.len() {
        return Err(Error::Dimension("solution does not match sample".into()));
    }
    let lookup = RuleLookup::new(sample, sol);
    let m = model.support_max();
    sample
        .y
        .iter()
        .map(|&y| {
            if sol.k == 1 {
                if m == Some(y) {
                    return Ok(0.0);
                }
                let d_next = lookup.at(y as i64 + 1)?;
                Ok(d_next * d_next / (y as f64 + 1.0))
            } else {
                if y == 0 {
                    return Ok(0.0);
                }
                let d_prev = lookup.at(y as i64 - 1)?;
                Ok(match m {
                    Some(m) => d_prev / ((m - y) as f64 + 1.0),
                    None => d_prev,
                })
            }
        })
        .collect()
}

/// The asymptotic risk estimate of the fitted rule.
pub fn are(sample: &CountSample, sol: &ShrinkageSolution, model: DleModel) -> Result<f64> {
    let psi_vals = psi(sample, sol, model)?;
    let n = sample.len() as f64;
    let mut total = 0.0;
    match (sol.k, model.support_max()) {
        (1, None) => {
            for ((&y, psi_i), delta_i) in sample.y.iter().zip(&psi_vals).zip(&sol.delta) {
                total += y as f64 + psi_i - 2.0 * delta_i;
            }
        }
        (1, Some(m)) => {
            for ((&y, psi_i), delta_i) in sample.y.iter().zip(&psi_vals).zip(&sol.delta) {
                total += y as f64 / ((m - y) as f64 + 1.0) + (m - y) as f64 * psi_i
                    - 2.0 * delta_i;
            }
        }
        (0, None) => {
            for ((&y, psi_i), delta_i) in sample.y.iter().zip(&psi_vals).zip(&sol.delta) {
                let yf = y as f64;
                total += yf * (yf - 1.0) - 2.0 * yf * psi_i + delta_i * delta_i;
            }
        }
        (0, Some(m)) => {
            for ((&y, psi_i), delta_i) in sample.y.iter().zip(&psi_vals).zip(&sol.delta) {
                let yf = y as f64;
                total += yf * (yf - 1.0) / (((m - y) as f64 + 2.0) * ((m - y) as f64 + 1.0))
                    - 2.0 * yf * psi_i
                    + delta_i * delta_i;
            }
        }
        _ => return Err(Error::domain("loss index must be 0 or 1")),
    }
    Ok(total / n)
}

/// Fit the estimator over a bandwidth grid and select the ARE minimizer.
///
/// When `theta_true` is supplied the curve also records the realized loss
/// per grid point and the oracle (loss-minimizing) bandwidth.
pub fn select_lambda(
    sample: &CountSample,
    k: LossIndex,
    grid: &[f64],
    flags: ConstraintFlags,
    theta_true: Option<&[f64]>,
) -> Result<AreCurve> {
    if grid.is_empty() {
        return Err(Error::domain("bandwidth grid is empty"));
    }
    for w in grid.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::domain("bandwidth grid must be strictly increasing"));
        }
    }
    if let Some(theta) = theta_true {
        if theta.len() != sample.len() {
            return Err(Error::Dimension("theta_true length".into()));
        }
    }
    let model = sample.model;
    let solutions: Vec<ShrinkageSolution> = grid
        .iter()
        .map(|&lambda| {
            fit(sample, k, lambda, flags)
                .map_err(|e| Error::Solver(format!("fit at lambda={lambda}: {e}")))
        })
        .collect::<Result<_>>()?;
    let are_vals: Vec<f64> = solutions
        .iter()
        .map(|sol| are(sample, sol, model))
        .collect::<Result<_>>()?;
    let selected = argmin(&are_vals);

    let (realized_loss, oracle) = match theta_true {
        Some(theta) => {
            let losses: Vec<f64> = solutions
                .iter()
                .map(|sol| Ok(compound_loss(theta, &sol.delta, k)?.compound))
                .collect::<Result<_>>()?;
            let best = argmin(&losses);
            (Some(losses), Some(best))
        }
        None => (None, None),
    };

    Ok(AreCurve {
        grid: grid.to_vec(),
        are: are_vals,
        selected,
        solutions,
        realized_loss,
        oracle,
    })
}

/// The oracle bandwidth: realized-loss minimizer over the grid, available
/// only with knowledge of the true parameters. Benchmark for the ARE rule.
pub fn oracle_lambda(
    sample: &CountSample,
    k: LossIndex,
    grid: &[f64],
    flags: ConstraintFlags,
    theta_true: &[f64],
) -> Result<(f64, ShrinkageSolution)> {
    let mut curve = select_lambda(sample, k, grid, flags, Some(theta_true))?;
    let idx = curve.oracle.expect("oracle index present when theta supplied");
    Ok((curve.grid[idx], curve.solutions.swap_remove(idx)))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}
