//! Reference detectors: conjugate BOCPD and two-sided CUSUM.

mod bocpd;
mod cusum;

pub use bocpd::{BocpdDetector, NigParams, NigSegments};
pub use cusum::{Cusum, CusumConfig};

use crate::error::{Error, Result};

/// Sample mean and unbiased variance of a training window.
pub fn mean_and_variance(values: &[f64]) -> Result<(f64, f64)> {
    if values.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least two training values, got {}",
            values.len()
        )));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var))
}
