//! Chance-corrected agreement between two annotators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub kappa: f64,
    /// κ × 100, the scale agreement is usually reported on.
    pub percent: f64,
    pub observed: f64,
    pub expected: f64,
    /// Chance agreement is 1 (both annotators constant and equal); κ is then
    /// defined as 1.
    pub degenerate: bool,
    pub n: usize,
}

/// Cohen's κ = (p_o − p_e) / (1 − p_e) over aligned categorical labels.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<Kappa> {
    if a.len() != b.len() {
        return Err(Error::Metric(format!(
            "annotation lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Metric("kappa of zero annotations is undefined".into()));
    }
    let n = a.len() as f64;
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
    let mut margins: BTreeMap<&T, (f64, f64)> = BTreeMap::new();
    for x in a {
        margins.entry(x).or_default().0 += 1.0;
    }
    for y in b {
        margins.entry(y).or_default().1 += 1.0;
    }
    let p_o = agree / n;
    let p_e: f64 = margins.values().map(|(ca, cb)| (ca / n) * (cb / n)).sum();
    let degenerate = (1.0 - p_e).abs() < 1e-12;
    let kappa = if degenerate { 1.0 } else { (p_o - p_e) / (1.0 - p_e) };
    Ok(Kappa {
        kappa,
        percent: 100.0 * kappa,
        observed: p_o,
        expected: p_e,
        degenerate,
        n: a.len(),
    })
}
