use serde::{Deserialize, Serialize};

use crate::detector::{DetectionEvent, OnlineDetector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CusumConfig {
    /// Reference drift in standardized units.
    pub drift: f64,
    pub threshold: f64,
    /// Leading steps that are ignored (the training window).
    pub warmup: usize,
}

impl CusumConfig {
    pub fn new(threshold: f64) -> Self {
        Self { drift: 0.5, threshold, warmup: 0 }
    }
}

/// Two-sided Gaussian CUSUM on standardized observations.
#[derive(Debug, Clone)]
pub struct Cusum {
    config: CusumConfig,
    mean: f64,
    sd: f64,
    upper: f64,
    lower: f64,
    step: usize,
    last_time: Option<f64>,
}

impl Cusum {
    pub fn new(mean: f64, sd: f64, config: CusumConfig) -> Result<Self> {
        if !(sd.is_finite() && sd > 0.0) || !mean.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "invalid standardization (mean {mean}, sd {sd})"
            )));
        }
        if !(config.threshold > 0.0 && config.drift >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "CUSUM needs threshold > 0 and drift >= 0, got h={} k={}",
                config.threshold, config.drift
            )));
        }
        Ok(Self { config, mean, sd, upper: 0.0, lower: 0.0, step: 0, last_time: None })
    }

    pub fn from_training(values: &[f64], config: CusumConfig) -> Result<Self> {
        let (mean, var) = super::mean_and_variance(values)?;
        Self::new(mean, var.sqrt(), config)
    }

    /// `(S⁺, S⁻)`.
    pub fn statistics(&self) -> (f64, f64) {
        (self.upper, self.lower)
    }
}

impl OnlineDetector for Cusum {
    fn observe(&mut self, time: f64, value: Option<f64>) -> Result<Option<DetectionEvent>> {
        if let Some(prev) = self.last_time {
            if !(time > prev) {
                return Err(Error::InvalidInput(format!("times must increase: {time} follows {prev}")));
            }
        }
        self.last_time = Some(time);
        self.step += 1;
        let Some(y) = value else { return Ok(None) };
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {y}")));
        }
        if self.step <= self.config.warmup {
            return Ok(None);
        }
        let z = (y - self.mean) / self.sd;
        let k = self.config.drift;
        self.upper = (self.upper + z - k).max(0.0);
        self.lower = (self.lower - z - k).max(0.0);
        if self.upper.max(self.lower) >= self.config.threshold {
            self.upper = 0.0;
            self.lower = 0.0;
            return Ok(Some(DetectionEvent {
                step: self.step,
                time,
                changepoint: self.step,
                changepoint_time: time,
                map_weight: 1.0,
            }));
        }
        Ok(None)
    }
}
