//! Sample size for judge-based metrics, with finite population correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub population: usize,
    pub z: f64,
    pub sigma: f64,
    pub margin: f64,
    pub n: usize,
}

impl SamplingPlan {
    pub fn new(population: usize, z: f64, sigma: f64, margin: f64) -> Self {
        Self { population, z, sigma, margin, n: adaptive_sample_size(population, z, sigma, margin) }
    }
}

/// `n0 = (z·σ/E)²`, corrected to `n0 / (1 + (n0 − 1)/M)`, rounded up, floored
/// at 30 and capped at `M`.
pub fn adaptive_sample_size(m: usize, z: f64, sigma: f64, margin: f64) -> usize {
    assert!(margin > 0.0, "margin of error must be positive");
    if m == 0 {
        return 0;
    }
    let n0 = (z * sigma / margin).powi(2);
    let corrected = (n0 / (1.0 + (n0 - 1.0) / m as f64)).ceil() as usize;
    m.min(corrected.max(30))
}
