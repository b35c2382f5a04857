//! Online detectors sharing one event interface.

mod engine;
mod skf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{RunLengthDetector, SegmentModel};
pub use skf::{predictive_log_density, KalmanSegments, SkfDetector};

pub(crate) const HAZARD_MIN: f64 = 1e-300;
pub(crate) const HAZARD_MAX: f64 = 1.0 - 1e-12;

/// Prior probability that a changepoint occurs at a given observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Hazard {
    Constant(f64),
    /// One value per step, aligned with the observations fed to the detector.
    PerStep(Vec<f64>),
}

impl Hazard {
    pub fn constant(h: f64) -> Result<Self> {
        validate_hazard(h)?;
        Ok(Hazard::Constant(h))
    }

    pub fn per_step(values: Vec<f64>) -> Result<Self> {
        for &h in &values {
            validate_hazard(h)?;
        }
        Ok(Hazard::PerStep(values))
    }

    /// Clamped hazard at 1-based step `n`.
    pub fn at(&self, n: usize) -> Result<f64> {
        let h = match self {
            Hazard::Constant(h) => *h,
            Hazard::PerStep(v) => *v.get(n.wrapping_sub(1)).ok_or_else(|| {
                Error::InvalidInput(format!(
                    "hazard sequence has {} values but step {n} was requested",
                    v.len()
                ))
            })?,
        };
        Ok(h.clamp(HAZARD_MIN, HAZARD_MAX))
    }
}

fn validate_hazard(h: f64) -> Result<()> {
    if !(h.is_finite() && (0.0..=1.0).contains(&h)) {
        return Err(Error::InvalidParameter(format!("hazard must lie in [0, 1], got {h}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub hazard: Hazard,
    /// Candidates supported by fewer observations are never reported as MAP.
    pub min_segment_for_report: usize,
    /// Drop candidates older than the last detected changepoint.
    pub truncate_at_detection: bool,
    /// Lower clamp for one-step log predictive densities; the upper clamp is its negation.
    pub log_prob_floor: f64,
    /// Leading steps during which no events are emitted and nothing is truncated.
    pub warmup: usize,
}

impl DetectorConfig {
    pub fn new(hazard: Hazard) -> Self {
        Self {
            hazard,
            min_segment_for_report: 2,
            truncate_at_detection: true,
            log_prob_floor: -745.0,
            warmup: 0,
        }
    }

    pub fn with_warmup(mut self, warmup: usize) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn with_truncation(mut self, on: bool) -> Self {
        self.truncate_at_detection = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_segment_for_report < 1 {
            return Err(Error::InvalidParameter("min_segment_for_report must be at least 1".into()));
        }
        if !(self.log_prob_floor < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "log probability floor must be negative, got {}",
                self.log_prob_floor
            )));
        }
        Ok(())
    }
}

/// A reported changepoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    /// 1-based step at which the detection was made.
    pub step: usize,
    pub time: f64,
    /// 1-based index of the first observation after the change.
    pub changepoint: usize,
    pub changepoint_time: f64,
    /// Posterior probability of the reported changepoint; 1 for detectors without a posterior.
    pub map_weight: f64,
}

/// Normalized posterior over the most recent changepoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointPosterior {
    pub step: usize,
    /// 1-based candidate start indices, ascending.
    pub candidates: Vec<usize>,
    pub candidate_times: Vec<f64>,
    /// Log joint values shifted by a common constant.
    pub log_joint: Vec<f64>,
    pub weights: Vec<f64>,
    pub map: Option<usize>,
}

impl ChangepointPosterior {
    pub fn run_length(&self) -> Option<usize> {
        self.map.map(|c| self.step - c + 1)
    }
}

/// The streaming interface shared by every detector.
pub trait OnlineDetector {
    /// Feed one time point; `None` marks a missing value.
    fn observe(&mut self, time: f64, value: Option<f64>) -> Result<Option<DetectionEvent>>;

    fn run(&mut self, times: &[f64], values: &[Option<f64>]) -> Result<Vec<DetectionEvent>> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        let mut events = Vec::new();
        for (&t, &y) in times.iter().zip(values) {
            if let Some(e) = self.observe(t, y)? {
                events.push(e);
            }
        }
        Ok(events)
    }
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hazard_clamps_and_indexes() {
        assert_eq!(Hazard::constant(0.0).unwrap().at(3).unwrap(), HAZARD_MIN);
        assert_eq!(Hazard::constant(1.0).unwrap().at(3).unwrap(), HAZARD_MAX);
        let h = Hazard::per_step(vec![0.1, 0.2]).unwrap();
        assert_eq!(h.at(2).unwrap(), 0.2);
        assert!(h.at(3).is_err());
        assert!(h.at(0).is_err());
        assert!(Hazard::constant(1.5).is_err());
        assert!(Hazard::per_step(vec![f64::NAN]).is_err());
    }

    #[test]
    fn lse_is_stable() {
        let v = [1000.0, 1000.0];
        assert!((log_sum_exp(v.iter().copied()) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY].iter().copied()), f64::NEG_INFINITY);
    }
}
