use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Unweighted mean of per-class F1 over every class that occurs in either
/// the predictions or the gold labels.
pub fn macro_f1<L: Ord + Copy>(predictions: &[L], golds: &[L]) -> Result<f64> {
    if predictions.len() != golds.len() {
        return Err(Error::arg(format!(
            "{} predictions vs {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::arg("macro-F1 of zero observations"));
    }
    let classes: BTreeSet<L> = predictions.iter().chain(golds).copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let (mut tp, mut fp, mut fne) = (0usize, 0usize, 0usize);
        for (&p, &g) in predictions.iter().zip(golds) {
            match (p == c, g == c) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fne += 1,
                (false, false) => {}
            }
        }
        total += (2 * tp) as f64 / (2 * tp + fp + fne) as f64;
    }
    Ok(total / classes.len() as f64)
}
