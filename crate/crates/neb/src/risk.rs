//! Loss functions, compound losses, the classical frequency plug-in rule,
//! and Monte-Carlo risk estimation.

use crate::bayes::LossIndex;
use crate::dle::{CountSample, DleModel};
use crate::error::{Error, Result};
use rayon::prelude::*;

/// `ℓ(θ, δ) = θ^{-k} (θ - δ)²`.
pub fn loss(theta: f64, delta: f64, k: LossIndex) -> Result<f64> {
    if !(theta > 0.0) {
        return Err(Error::domain(format!("loss requires theta > 0, got {theta}")));
    }
    if k > 1 {
        return Err(Error::domain("loss index must be 0 or 1"));
    }
    let diff = theta - delta;
    Ok(diff * diff / theta.powi(k as i32))
}

/// Mean of the per-coordinate losses.
#[derive(Debug, Clone)]
pub struct LossReport {
    pub k: LossIndex,
    pub per_coordinate: Vec<f64>,
    pub compound: f64,
}

pub fn compound_loss(theta: &[f64], delta: &[f64], k: LossIndex) -> Result<LossReport> {
    if theta.len() != delta.len() {
        return Err(Error::Dimension(format!(
            "{} parameters vs {} estimates",
            theta.len(),
            delta.len()
        )));
    }
    if theta.is_empty() {
        return Err(Error::domain("compound loss of an empty vector"));
    }
    let per_coordinate: Vec<f64> = theta
        .iter()
        .zip(delta)
        .map(|(t, d)| loss(*t, *d, k))
        .collect::<Result<_>>()?;
    let compound = kahan_sum(per_coordinate.iter().copied()) / theta.len() as f64;
    Ok(LossReport {
        k,
        per_coordinate,
        compound,
    })
}

/// The classical plug-in rule: empirical frequencies substituted into the
/// marginal-ratio formula,
/// `δ(y) = (a_{y-k}/a_{y+1-k}) · p̂(y+1-k) / p̂(y-k)` for `y ≥ k`, zero below.
///
/// Counts whose required numerator or denominator frequency is zero get a
/// zero estimate; that instability is the point of comparison, so nothing is
/// smoothed.
pub fn robbins_plugin(sample: &CountSample, model: DleModel, k: LossIndex) -> Result<Vec<f64>> {
    if k > 1 {
        return Err(Error::domain("loss index must be 0 or 1"));
    }
    let max_y = *sample.y.iter().max().unwrap() as usize;
    let mut freq = vec![0.0f64; max_y + 2];
    for &y in &sample.y {
        freq[y as usize] += 1.0;
    }
    Ok(sample
        .y
        .iter()
        .map(|&y| {
            if (y as i64) < k as i64 {
                return 0.0;
            }
            let den = freq[(y - k as u32) as usize];
            let num = freq[(y + 1 - k as u32) as usize];
            if den == 0.0 || num == 0.0 {
                return 0.0;
            }
            let coeff = if k == 1 {
                Some(model.ratio_down(y))
            } else {
                model.ratio_up(y)
            };
            match coeff {
                Some(c) => c * num / den,
                None => 0.0,
            }
        })
        .collect())
}

/// Monte-Carlo estimate of a risk: mean and standard error of a per-rep
/// compound loss across independent replications.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RiskEstimate {
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
    pub failures: usize,
}

/// Deterministic per-rep seed derivation from a master seed.
pub fn rep_seed(master: u64, rep: usize) -> u64 {
    split_mix(master ^ (rep as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn split_mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `reps` independent replications of `run_rep(seed)` and aggregate.
///
/// Replications may execute concurrently; results are collected by index and
/// summed with compensated addition, so the outcome is independent of
/// scheduling. Failed reps are counted and excluded from the aggregate.
pub fn mc_risk<F>(reps: usize, master_seed: u64, run_rep: F) -> Result<RiskEstimate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if reps < 2 {
        return Err(Error::domain("need at least two Monte Carlo repetitions"));
    }
    let outcomes: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| run_rep(rep_seed(master_seed, r)))
        .collect();
    let mut values = Vec::with_capacity(reps);
    let mut failures = 0;
    for o in outcomes {
        match o {
            Ok(v) => values.push(v),
            Err(e) => {
                log::warn!("Monte Carlo rep failed: {e}");
                failures += 1;
            }
        }
    }
    if values.len() < 2 {
        return Err(Error::Solver(format!(
            "{failures} of {reps} Monte Carlo reps failed"
        )));
    }
    let n = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / n;
    let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let se = (ss / (n - 1.0)).sqrt() / n.sqrt();
    Ok(RiskEstimate {
        mean,
        se,
        reps: values.len(),
        failures,
    })
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}
