//! Selection and calibration metrics against a known ground truth.

use super::generators::GroundTruth;
use crate::error::{Error, Result};

/// Rank AUC: probability that a random (active, null) pair is ordered
/// correctly by the estimates, ties counting one half.
pub fn metric_auc(estimates: &[f64], truth: &GroundTruth) -> Result<f64> {
    auc_from_labels(estimates, &truth.active_set)
}

pub fn auc_from_labels(estimates: &[f64], active: &[bool]) -> Result<f64> {
    if estimates.len() != active.len() {
        return Err(Error::invalid(format!(
            "{} estimates for {} features",
            estimates.len(),
            active.len()
        )));
    }
    let pos: Vec<f64> = estimates
        .iter()
        .zip(active)
        .filter(|(_, &a)| a)
        .map(|(e, _)| *e)
        .collect();
    let neg: Vec<f64> = estimates
        .iter()
        .zip(active)
        .filter(|(_, &a)| !a)
        .map(|(e, _)| *e)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid(
            "auc is undefined unless both active and null features are present",
        ));
    }
    let mut score = 0.0;
    for a in &pos {
        for b in &neg {
            score += if a > b {
                1.0
            } else if a == b {
                0.5
            } else {
                0.0
            };
        }
    }
    Ok(score / (pos.len() * neg.len()) as f64)
}

/// Fraction of `true` entries; `None` when empty.
pub fn rate(flags: impl IntoIterator<Item = bool>) -> Option<f64> {
    let (mut hits, mut total) = (0usize, 0usize);
    for f in flags {
        hits += f as usize;
        total += 1;
    }
    (total > 0).then(|| hits as f64 / total as f64)
}

pub fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    })
}
