//! Synthetic cohorts of per-entity probability sequences.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ingest::{SeriesRecord, SeriesTable, TimeFormat};
use crate::error::{Error, Result};
use crate::rng::replicate_rng;
use crate::temporal_model::{sample_gp, GpSegmentModel, KernelSpec, TimeGrid};

const STREAM_COHORT: u64 = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub entities: usize,
    /// Every `1/positive_fraction`-th entity gets a shift.
    pub positive_fraction: f64,
    pub days: usize,
    pub training_len: usize,
    /// Correlation of the logit noise.
    pub kernel: KernelSpec,
    pub noise_sd: f64,
    /// Entity baselines are drawn from N(baseline_mean, baseline_spread²) on the logit scale.
    pub baseline_mean: f64,
    pub baseline_spread: f64,
    pub shift: f64,
    pub shift_days: usize,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let first_onset = self.training_len + 2;
        if self.days < first_onset + self.shift_days {
            return Err(Error::InvalidParameter(format!(
                "{} days cannot hold {} training days and a {}-day shift",
                self.days, self.training_len, self.shift_days
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(Error::InvalidParameter(format!(
                "positive fraction must lie in [0, 1], got {}",
                self.positive_fraction
            )));
        }
        if !(self.noise_sd > 0.0 && self.baseline_spread >= 0.0) {
            return Err(Error::InvalidParameter("noise sd must be positive and spread non-negative".into()));
        }
        Ok(())
    }

    fn is_positive(&self, k: usize) -> bool {
        let count = (self.positive_fraction * self.entities as f64).round() as usize;
        let step = (self.entities / count.max(1)).max(1);
        count > 0 && k.is_multiple_of(step) && k / step < count
    }
}

fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

/// Probability sequences with day labels; positive entities carry a level
/// shift of `shift` on the logit scale for `shift_days` days.
pub fn simulate_cohort(spec: &CohortSpec, master_seed: u64) -> Result<SeriesTable> {
    spec.validate()?;
    let grid = TimeGrid::regular(spec.days, 0.0, 1.0)?;
    let model = GpSegmentModel::new(0.0, spec.noise_sd * spec.noise_sd, spec.kernel)?;
    let baseline = Normal::new(spec.baseline_mean, spec.baseline_spread)
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let width = (spec.entities.max(1) - 1).to_string().len();
    let mut records = Vec::with_capacity(spec.entities * spec.days);
    for k in 0..spec.entities {
        let mut rng = replicate_rng(master_seed, STREAM_COHORT, k as u64);
        let level = baseline.sample(&mut rng);
        let noise = sample_gp(&model, &grid, &mut rng)?;
        let onset = spec
            .is_positive(k)
            .then(|| rng.random_range(spec.training_len + 2..=spec.days - spec.shift_days));
        let id = format!("e{k:0width$}");
        for (d, &z) in noise.iter().enumerate() {
            let on = onset.is_some_and(|o| (o..o + spec.shift_days).contains(&d));
            let y = level + z + if on { spec.shift } else { 0.0 };
            records.push(SeriesRecord {
                entity: id.clone(),
                time: grid.times()[d],
                value: Some(sigmoid(y)),
                label: Some(on),
            });
        }
    }
    Ok(SeriesTable { time_format: TimeFormat::Numeric, has_labels: true, records })
}
