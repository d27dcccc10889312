//! Success rate, SPL and curve statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rltrain::EpisodeResult;

/// Success rate and SPL as fractions in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccSpl {
    pub episodes: usize,
    pub succ: f64,
    pub spl: f64,
}

/// Contribution of one episode to SPL: `success * l / max(p, l)`.
pub fn spl_term(r: &EpisodeResult) -> f64 {
    if r.success {
        r.shortest_length / r.path_length.max(r.shortest_length)
    } else {
        0.0
    }
}

/// `Succ = mean(success)` and `SPL = mean(success * l / max(p, l))`. Results
/// are reduced in episode-id order, so the values do not depend on the order
/// of the input.
pub fn success_and_spl(results: &[EpisodeResult]) -> Result<SuccSpl> {
    if results.is_empty() {
        return Err(Error::Empty("episode results"));
    }
    if let Some(r) = results.iter().find(|r| !(r.shortest_length > 0.0 && r.shortest_length.is_finite())) {
        return Err(Error::Config(format!("episode {} has shortest length {}", r.episode_id, r.shortest_length)));
    }
    if let Some(r) = results.iter().find(|r| !(r.path_length >= 0.0 && r.path_length.is_finite())) {
        return Err(Error::Config(format!("episode {} has path length {}", r.episode_id, r.path_length)));
    }
    let mut sorted: Vec<&EpisodeResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.episode_id);
    let n = sorted.len() as f64;
    let succ = sorted.iter().filter(|r| r.success).count() as f64 / n;
    let spl = sorted.iter().map(|r| spl_term(r)).sum::<f64>() / n;
    Ok(SuccSpl { episodes: sorted.len(), succ, spl })
}

/// Mean and sample standard deviation (0 for fewer than two values).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Result<MeanStd> {
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
    Ok(MeanStd { mean, std })
}

/// Environment steps at which a learning curve first reaches `reference`,
/// interpolated linearly between the last point below and the first point at
/// or above it. `None` when the curve never reaches the reference.
pub fn steps_to_reference(curve: &[(u64, f64)], reference: f64) -> Option<f64> {
    let i = curve.iter().position(|&(_, v)| v >= reference)?;
    let (s1, v1) = curve[i];
    if i == 0 {
        return Some(s1 as f64);
    }
    let (s0, v0) = curve[i - 1];
    let t = (reference - v0) / (v1 - v0);
    Some(s0 as f64 + t * (s1 as f64 - s0 as f64))
}

/// One-sided two-proportion z statistic for `p_a > p_b` with pooled variance.
pub fn two_proportion_z(successes_a: usize, n_a: usize, successes_b: usize, n_b: usize) -> Result<f64> {
    if n_a == 0 || n_b == 0 {
        return Err(Error::Empty("proportion sample"));
    }
    let (pa, pb) = (successes_a as f64 / n_a as f64, successes_b as f64 / n_b as f64);
    let pooled = (successes_a + successes_b) as f64 / (n_a + n_b) as f64;
    let se = (pooled * (1.0 - pooled) * (1.0 / n_a as f64 + 1.0 / n_b as f64)).sqrt();
    if se == 0.0 {
        return Ok(if pa > pb { f64::INFINITY } else { 0.0 });
    }
    Ok((pa - pb) / se)
}

/// One-sided z critical value at 99% confidence.
pub const Z_99: f64 = 2.326_347_874;
