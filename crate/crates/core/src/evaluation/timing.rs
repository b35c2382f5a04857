use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::dense::DenseGpDetector;
use crate::detector::{DetectorConfig, Hazard, OnlineDetector, SkfDetector};
use crate::error::Result;
use crate::rng::seeded;
use crate::temporal_model::{sample_gp, GpSegmentModel, KernelSpec, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub skf_seconds: f64,
    pub dense_seconds: Option<f64>,
}

fn no_change_series(kernel: &KernelSpec, n: usize, seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let grid = TimeGrid::regular(n, 1.0, 1.0)?;
    let y = sample_gp(&GpSegmentModel::new(0.0, 1.0, *kernel)?, &grid, &mut seeded(seed))?;
    Ok((grid.times().to_vec(), y))
}

fn quiet_config() -> Result<DetectorConfig> {
    // A negligible hazard keeps every candidate alive for the whole run.
    Ok(DetectorConfig::new(Hazard::constant(1e-10)?))
}

/// Seconds to run `detector` over the series.
pub fn time_run<D: OnlineDetector>(detector: &mut D, times: &[f64], y: &[f64]) -> Result<f64> {
    let start = Instant::now();
    for (&t, &v) in times.iter().zip(y) {
        detector.observe(t, Some(v))?;
    }
    Ok(start.elapsed().as_secs_f64())
}

/// Full-run wall times on change-free data for the Kalman detector and, for
/// `n <= dense_max`, the dense-matrix detector.
pub fn timing_benchmark(ns: &[usize], kernel: &KernelSpec, dense_max: usize) -> Result<Vec<TimingRow>> {
    ns.iter()
        .map(|&n| {
            let (t, y) = no_change_series(kernel, n, n as u64)?;
            let mut skf = SkfDetector::new(*kernel, quiet_config()?)?;
            let skf_seconds = time_run(&mut skf, &t, &y)?;
            let dense_seconds = if n <= dense_max {
                let mut dense = DenseGpDetector::new(*kernel, quiet_config()?)?;
                Some(time_run(&mut dense, &t, &y)?)
            } else {
                None
            };
            Ok(TimingRow { n, skf_seconds, dense_seconds })
        })
        .collect()
}

/// Mean seconds for one step of the Kalman detector holding `candidates` live candidates.
pub fn skf_step_seconds(kernel: &KernelSpec, candidates: usize, repeats: usize) -> Result<f64> {
    let (t, y) = no_change_series(kernel, candidates + 1, 99)?;
    let mut base = SkfDetector::new(*kernel, quiet_config()?)?;
    for k in 0..candidates {
        base.observe(t[k], Some(y[k]))?;
    }
    let mut total = 0.0;
    for _ in 0..repeats.max(1) {
        let mut d = base.clone();
        let start = Instant::now();
        d.observe(t[candidates], Some(y[candidates]))?;
        total += start.elapsed().as_secs_f64();
    }
    Ok(total / repeats.max(1) as f64)
}
