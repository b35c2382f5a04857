use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calibrate::{calibrate_to_arl, CalibrationSettings};
use super::metrics::{covering, detection_delay, DelayOutcome, Segmentation};
use crate::baselines::{BocpdDetector, Cusum, CusumConfig, NigParams};
use crate::detector::{DetectionEvent, DetectorConfig, Hazard, OnlineDetector, SkfDetector};
use crate::error::{Error, Result};
use crate::estimation::{estimate, EstimatorSettings, TrainingSeries};
use crate::rng::replicate_rng;
use crate::temporal_model::{sample_gp, simulate_scenario, GpSegmentModel, KernelSpec, Scenario, TimeGrid};

const STREAM_NULL: u64 = 1;
const STREAM_SCENARIO: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Skf,
    Bocpd,
    Cusum,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Skf, DetectorKind::Bocpd, DetectorKind::Cusum];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Skf => "skf",
            DetectorKind::Bocpd => "bocpd",
            DetectorKind::Cusum => "cusum",
        }
    }

    fn calibration(self, target_arl: f64) -> CalibrationSettings {
        match self {
            DetectorKind::Cusum => CalibrationSettings::threshold(target_arl),
            _ => CalibrationSettings::hazard(target_arl),
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "skf" => Ok(DetectorKind::Skf),
            "bocpd" => Ok(DetectorKind::Bocpd),
            "cusum" => Ok(DetectorKind::Cusum),
            other => Err(Error::InvalidParameter(format!("unknown detector `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Leading change-free observations used for fitting; no alarms are raised there.
    pub warmup: usize,
    pub target_arl: f64,
    pub calibration_replicates: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub estimator: EstimatorSettings,
    /// Use these parameters instead of estimating them from each training window.
    pub fixed_kernel: Option<KernelSpec>,
}

/// What each detector learns from a training window.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub kernel: KernelSpec,
    pub prior: NigParams,
    pub mean: f64,
    pub sd: f64,
}

pub fn fit_training(times: &[f64], train: &[f64], config: &HarnessConfig) -> Result<Fitted> {
    let kernel = match config.fixed_kernel {
        Some(k) => k,
        None => {
            let series = TrainingSeries::new(times.to_vec(), train.to_vec())?;
            estimate(std::slice::from_ref(&series), &config.estimator)?.kernel
        }
    };
    let prior = NigParams::from_training(train)?;
    Ok(Fitted { kernel, prior, mean: prior.m, sd: prior.beta.sqrt() })
}

/// Any of the three detectors behind one type.
#[derive(Debug, Clone)]
pub enum AnyDetector {
    Skf(SkfDetector),
    Bocpd(BocpdDetector),
    Cusum(Cusum),
}

impl AnyDetector {
    pub fn build(kind: DetectorKind, knob: f64, fitted: &Fitted, warmup: usize) -> Result<Self> {
        Ok(match kind {
            DetectorKind::Skf => AnyDetector::Skf(SkfDetector::new(
                fitted.kernel,
                DetectorConfig::new(Hazard::constant(knob)?).with_warmup(warmup),
            )?),
            DetectorKind::Bocpd => AnyDetector::Bocpd(BocpdDetector::bocpd(
                fitted.prior,
                DetectorConfig::new(Hazard::constant(knob)?).with_warmup(warmup),
            )?),
            DetectorKind::Cusum => {
                let mut cfg = CusumConfig::new(knob);
                cfg.warmup = warmup;
                AnyDetector::Cusum(Cusum::new(fitted.mean, fitted.sd, cfg)?)
            }
        })
    }
}

impl OnlineDetector for AnyDetector {
    fn observe(&mut self, time: f64, value: Option<f64>) -> Result<Option<DetectionEvent>> {
        match self {
            AnyDetector::Skf(d) => d.observe(time, value),
            AnyDetector::Bocpd(d) => d.observe(time, value),
            AnyDetector::Cusum(d) => d.observe(time, value),
        }
    }
}

fn first_event(det: &mut AnyDetector, times: &[f64], y: &[f64]) -> Result<Option<DetectionEvent>> {
    for (&t, &v) in times.iter().zip(y) {
        if let Some(e) = det.observe(t, Some(v))? {
            return Ok(Some(e));
        }
    }
    Ok(None)
}

struct Replicate {
    y: Vec<f64>,
    truth: Option<Segmentation>,
    fitted: Fitted,
}

fn check(config: &HarnessConfig, n: usize) -> Result<()> {
    if config.warmup < 4 || config.warmup >= n {
        return Err(Error::InvalidParameter(format!(
            "warmup {} must be at least 4 and shorter than the series ({n})",
            config.warmup
        )));
    }
    Ok(())
}

/// Calibrated tuning knob for one detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibrated {
    pub kind: DetectorKind,
    pub knob: f64,
    pub arl: f64,
}

/// Tunes each detector to the target ARL on change-free draws from `null_model`.
///
/// Series have `warmup + 4·target` points; run lengths count monitoring steps
/// after the warmup and are censored at `4·target`.
pub fn calibrate_detectors(
    null_model: &GpSegmentModel,
    config: &HarnessConfig,
    kinds: &[DetectorKind],
) -> Result<Vec<Calibrated>> {
    let horizon = (4.0 * config.target_arl).ceil() as usize;
    let n = config.warmup + horizon;
    check(config, n)?;
    let grid = TimeGrid::regular(n, 1.0, 1.0)?;
    let times = grid.times().to_vec();
    let data: Vec<Replicate> = (0..config.calibration_replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(config.master_seed, STREAM_NULL, r);
            let y = sample_gp(null_model, &grid, &mut rng)?;
            let fitted = fit_training(&times[..config.warmup], &y[..config.warmup], config)?;
            Ok(Replicate { y, truth: None, fitted })
        })
        .collect::<Result<_>>()?;

    kinds
        .iter()
        .map(|&kind| {
            let arl_at = |knob: f64| -> Result<f64> {
                let lengths: Vec<f64> = data
                    .par_iter()
                    .map(|rep| {
                        let mut det = AnyDetector::build(kind, knob, &rep.fitted, config.warmup)?;
                        Ok(match first_event(&mut det, &times, &rep.y)? {
                            Some(e) => (e.step - config.warmup) as f64,
                            None => horizon as f64,
                        })
                    })
                    .collect::<Result<_>>()?;
                Ok(lengths.iter().sum::<f64>() / lengths.len() as f64)
            };
            let r = calibrate_to_arl(&kind.calibration(config.target_arl), arl_at)?;
            Ok(Calibrated { kind, knob: r.knob, arl: r.arl })
        })
        .collect()
}

/// One row of an experiment's metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub detector: DetectorKind,
    pub knob: f64,
    pub arl: f64,
    pub replicates: usize,
    pub add: Option<f64>,
    pub add_sd: Option<f64>,
    pub false_alarms: usize,
    pub misses: usize,
    pub covering: Option<f64>,
    pub covering_sd: Option<f64>,
}

fn mean_sd(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.len() > 1).then(|| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(m), sd)
}

/// Replicate `r` of a scenario, as drawn by the experiments.
pub fn simulate_replicate(scenario: &Scenario, master_seed: u64, r: u64) -> Result<(Vec<f64>, Segmentation)> {
    simulate_scenario(scenario, &mut replicate_rng(master_seed, STREAM_SCENARIO, r))
}

fn scenario_data(scenario: &Scenario, config: &HarnessConfig) -> Result<Vec<Replicate>> {
    check(config, scenario.len())?;
    let times = &scenario.times;
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let (y, truth) = simulate_replicate(scenario, config.master_seed, r)?;
            let fitted = fit_training(&times[..config.warmup], &y[..config.warmup], config)?;
            Ok(Replicate { y, truth: Some(truth), fitted })
        })
        .collect()
}

/// Per-replicate first-detection outcomes for a single-changepoint scenario.
pub fn single_change_outcomes(
    scenario: &Scenario,
    config: &HarnessConfig,
    calibrated: &[Calibrated],
) -> Result<Vec<Vec<DelayOutcome>>> {
    let [tau] = scenario.changepoints[..] else {
        return Err(Error::InvalidInput("single-changepoint scenario needs exactly one changepoint".into()));
    };
    let data = scenario_data(scenario, config)?;
    let times = &scenario.times;
    let end = scenario.len() as f64;
    calibrated
        .iter()
        .map(|c| {
            data.par_iter()
                .map(|rep| {
                    let mut det = AnyDetector::build(c.kind, c.knob, &rep.fitted, config.warmup)?;
                    let first = first_event(&mut det, times, &rep.y)?;
                    Ok(detection_delay(tau as f64, first.map(|e| e.step as f64), end))
                })
                .collect()
        })
        .collect()
}

pub fn single_change_experiment(
    scenario: &Scenario,
    config: &HarnessConfig,
    calibrated: &[Calibrated],
) -> Result<Vec<MetricReport>> {
    let outcomes = single_change_outcomes(scenario, config, calibrated)?;
    Ok(calibrated
        .iter()
        .zip(outcomes)
        .map(|(c, out)| {
            let delays: Vec<f64> = out.iter().filter_map(DelayOutcome::add_contribution).collect();
            let (add, add_sd) = mean_sd(&delays);
            MetricReport {
                detector: c.kind,
                knob: c.knob,
                arl: c.arl,
                replicates: out.len(),
                add,
                add_sd,
                false_alarms: out.iter().filter(|o| matches!(o, DelayOutcome::FalseAlarm { .. })).count(),
                misses: out.iter().filter(|o| matches!(o, DelayOutcome::Missed { .. })).count(),
                covering: None,
                covering_sd: None,
            }
        })
        .collect())
}

/// Per-replicate covering scores; detectors keep running after each detection.
pub fn multiple_change_coverings(
    scenario: &Scenario,
    config: &HarnessConfig,
    calibrated: &[Calibrated],
) -> Result<Vec<Vec<f64>>> {
    let data = scenario_data(scenario, config)?;
    let times = &scenario.times;
    let values_of = |y: &[f64]| y.iter().map(|&v| Some(v)).collect::<Vec<_>>();
    calibrated
        .iter()
        .map(|c| {
            data.par_iter()
                .map(|rep| {
                    let mut det = AnyDetector::build(c.kind, c.knob, &rep.fitted, config.warmup)?;
                    let events = det.run(times, &values_of(&rep.y))?;
                    let found =
                        Segmentation::from_detections(scenario.len(), events.iter().map(|e| e.changepoint))?;
                    covering(rep.truth.as_ref().expect("scenario replicate has truth"), &found)
                })
                .collect()
        })
        .collect()
}

pub fn multiple_change_experiment(
    scenario: &Scenario,
    config: &HarnessConfig,
    calibrated: &[Calibrated],
) -> Result<Vec<MetricReport>> {
    let scores = multiple_change_coverings(scenario, config, calibrated)?;
    Ok(calibrated
        .iter()
        .zip(scores)
        .map(|(c, s)| {
            let (covering, covering_sd) = mean_sd(&s);
            MetricReport {
                detector: c.kind,
                knob: c.knob,
                arl: c.arl,
                replicates: s.len(),
                add: None,
                add_sd: None,
                false_alarms: 0,
                misses: 0,
                covering,
                covering_sd,
            }
        })
        .collect())
}

pub fn write_metric_csv<W: Write>(reports: &[MetricReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(r).map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}
