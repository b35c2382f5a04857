use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::ingest::SeriesTable;
use super::logit::logit_transform;
use super::screening::{screening_test, ScreeningConfig, SegmentView};
use crate::detector::{DetectorConfig, Hazard, OnlineDetector, SkfDetector};
use crate::error::{Error, Result};
use crate::estimation::{estimate, EstimationResult, EstimatorSettings, TrainingSeries};
use crate::evaluation::{window_confusion, WindowDetection, WindowReport, WindowRules};
use crate::temporal_model::KernelSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HazardSpec {
    Constant(f64),
    /// Hazard per calendar time, multiplied by `scale`; every monitored time must appear.
    Series { points: Vec<(f64, f64)>, scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub estimator: EstimatorSettings,
    /// Use these parameters instead of estimating them from the training points.
    pub kernel: Option<KernelSpec>,
    pub hazard: HazardSpec,
    pub screening: ScreeningConfig,
    /// When false every detection marks a window without testing.
    pub screen: bool,
    /// Inputs are probabilities to be logit transformed.
    pub logit: bool,
    pub window: WindowRules,
}

/// One entity's sorted, transformed series.
#[derive(Debug, Clone, PartialEq)]
pub struct EntitySeries {
    pub id: String,
    pub times: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub labels: Vec<Option<bool>>,
}

impl EntitySeries {
    /// Labelled monitoring points after the first `skip`.
    pub fn labelled_after(&self, skip: usize) -> Vec<(f64, bool)> {
        self.times[skip..]
            .iter()
            .zip(&self.labels[skip..])
            .filter_map(|(&t, l)| l.map(|l| (t, l)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntity {
    pub id: String,
    pub reason: String,
}

/// Groups records by entity, sorts by time and applies the logit when asked.
///
/// Entities shorter than `min_len` are returned as skipped.
pub fn prepare_entities(
    table: &SeriesTable,
    logit: bool,
    min_len: usize,
) -> Result<(Vec<EntitySeries>, Vec<SkippedEntity>)> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (k, r) in table.records.iter().enumerate() {
        groups.entry(r.entity.as_str()).or_default().push(k);
    }
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for (id, mut rows) in groups {
        let recs = &table.records;
        rows.sort_by(|&a, &b| recs[a].time.total_cmp(&recs[b].time));
        if let Some(w) = rows.windows(2).find(|w| recs[w[0]].time == recs[w[1]].time) {
            return Err(Error::InvalidInput(format!("entity `{id}` has two rows at time {}", recs[w[0]].time)));
        }
        if rows.len() < min_len {
            skipped.push(SkippedEntity {
                id: id.to_string(),
                reason: format!("{} rows, need at least {min_len}", rows.len()),
            });
            continue;
        }
        let raw: Vec<Option<f64>> = rows.iter().map(|&k| recs[k].value).collect();
        let values = if logit {
            logit_transform(&raw).map_err(|e| Error::InvalidInput(format!("entity `{id}`: {e}")))?
        } else {
            raw
        };
        kept.push(EntitySeries {
            id: id.to_string(),
            times: rows.iter().map(|&k| recs[k].time).collect(),
            values,
            labels: rows.iter().map(|&k| recs[k].label).collect(),
        });
    }
    Ok((kept, skipped))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointReport {
    pub time: f64,
    /// 1-based position in the entity's sorted series.
    pub index: usize,
    pub detected_at: f64,
    pub map_weight: f64,
    pub screened: bool,
    /// Last screening statistic computed for this changepoint.
    pub statistic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositiveWindow {
    pub start: f64,
    pub end: f64,
    pub detected_at: f64,
    /// Position of the originating changepoint in `changepoints`.
    pub changepoint: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityResult {
    pub id: String,
    pub changepoints: Vec<ChangepointReport>,
    pub windows: Vec<PositiveWindow>,
}

impl EntityResult {
    pub fn window_detections(&self) -> Vec<WindowDetection> {
        self.windows.iter().map(|w| WindowDetection { start: w.start, detected_at: w.detected_at }).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_delay: Option<f64>,
}

impl From<&WindowReport> for MetricSummary {
    fn from(r: &WindowReport) -> Self {
        let c = r.counts;
        Self {
            tp: c.tp,
            fp: c.fp,
            fn_: c.fn_,
            tn: c.tn,
            precision: c.precision(),
            recall: c.recall(),
            f1: c.f1(),
            mean_delay: r.mean_delay(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub config: PipelineConfig,
    /// Kernel the detectors ran with.
    pub kernel: KernelSpec,
    pub estimation: Option<EstimationResult>,
    pub entities: Vec<EntityResult>,
    pub skipped: Vec<SkippedEntity>,
    pub metrics: Option<MetricSummary>,
}

fn hazard_for(spec: &HazardSpec, times: &[f64], id: &str, lookup: &HashMap<u64, f64>) -> Result<Hazard> {
    match spec {
        HazardSpec::Constant(h) => Hazard::constant(*h),
        HazardSpec::Series { scale, .. } => {
            let values = times
                .iter()
                .map(|t| {
                    lookup.get(&t.to_bits()).map(|h| (h * scale).clamp(0.0, 1.0)).ok_or_else(|| {
                        Error::InvalidInput(format!("hazard series has no value at time {t} (entity `{id}`)"))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Hazard::per_step(values)
        }
    }
}

fn observed_count(v: &[Option<f64>]) -> usize {
    v.iter().filter(|x| x.is_some()).count()
}

/// Runs the detector on one entity's monitoring points.
pub fn run_entity(
    series: &EntitySeries,
    kernel: &KernelSpec,
    hazard: Hazard,
    config: &PipelineConfig,
) -> Result<EntityResult> {
    let n0 = config.screening.training_len;
    let times = &series.times;
    let values = &series.values;
    let mut det = SkfDetector::new(*kernel, DetectorConfig::new(hazard))?;
    let mut changepoints: Vec<ChangepointReport> = Vec::new();
    let mut windows = Vec::new();
    let mut pending: Option<usize> = None;
    for j in n0..times.len() {
        if let Some(e) = det.observe(times[j], values[j])? {
            changepoints.push(ChangepointReport {
                time: e.changepoint_time,
                index: n0 + e.changepoint,
                detected_at: e.time,
                map_weight: e.map_weight,
                screened: false,
                statistic: None,
            });
            let k = changepoints.len() - 1;
            if config.screen {
                pending = Some(k);
            } else {
                windows.push(PositiveWindow {
                    start: e.changepoint_time,
                    end: e.changepoint_time + config.window.positive_window,
                    detected_at: e.time,
                    changepoint: k,
                });
            }
        }
        let Some(k) = pending else { continue };
        let cp = &mut changepoints[k];
        if times[j] - cp.time > config.screening.recency_window {
            pending = None;
            continue;
        }
        let split = cp.index - 1;
        let (pre_t, pre_v) = (&times[n0..split], &values[n0..split]);
        let (post_t, post_v) = (&times[split..=j], &values[split..=j]);
        if observed_count(pre_v) < 2 || observed_count(post_v) < 2 {
            continue;
        }
        let out = screening_test(
            kernel,
            SegmentView { times: pre_t, values: pre_v },
            SegmentView { times: post_t, values: post_v },
            config.screening.alpha,
        )?;
        cp.statistic = Some(out.statistic);
        if out.pass {
            cp.screened = true;
            windows.push(PositiveWindow {
                start: cp.time,
                end: cp.time + config.window.positive_window,
                detected_at: times[j],
                changepoint: k,
            });
            pending = None;
        }
    }
    Ok(EntityResult { id: series.id.clone(), changepoints, windows })
}

/// Pooled estimate of the kernel from every entity's training points.
pub fn estimate_pooled(
    entities: &[EntitySeries],
    training_len: usize,
    settings: &EstimatorSettings,
) -> Result<EstimationResult> {
    let series = entities
        .iter()
        .map(|e| TrainingSeries::from_observed(&e.times[..training_len], &e.values[..training_len]))
        .collect::<Result<Vec<_>>>()?;
    estimate(&series, settings)
}

/// Minimum rows for an entity to take part.
pub fn min_entity_len(config: &PipelineConfig) -> usize {
    config.screening.training_len + 4
}

pub fn run_pipeline(table: &SeriesTable, config: &PipelineConfig) -> Result<PipelineResult> {
    config.screening.validate()?;
    let n0 = config.screening.training_len;
    let (entities, skipped) = prepare_entities(table, config.logit, min_entity_len(config))?;
    if entities.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no entity has the {} rows needed for training and monitoring",
            min_entity_len(config)
        )));
    }
    let (kernel, estimation) = match config.kernel {
        Some(k) => (k, None),
        None => {
            let r = estimate_pooled(&entities, n0, &config.estimator)?;
            (r.kernel, Some(r))
        }
    };
    let lookup: HashMap<u64, f64> = match &config.hazard {
        HazardSpec::Series { points, .. } => points.iter().map(|&(t, h)| (t.to_bits(), h)).collect(),
        HazardSpec::Constant(_) => HashMap::new(),
    };
    let results: Vec<EntityResult> = entities
        .par_iter()
        .map(|e| {
            let hazard = hazard_for(&config.hazard, &e.times[n0..], &e.id, &lookup)?;
            run_entity(e, &kernel, hazard, config)
        })
        .collect::<Result<_>>()?;
    let metrics = table.has_labels.then(|| {
        let mut total = WindowReport::default();
        for (e, r) in entities.iter().zip(&results) {
            total.merge(&window_confusion(&e.labelled_after(n0), &r.window_detections(), config.window));
        }
        MetricSummary::from(&total)
    });
    Ok(PipelineResult { config: config.clone(), kernel, estimation, entities: results, skipped, metrics })
}

/// Best fixed-threshold classifier over the monitoring points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: f64,
    pub metrics: MetricSummary,
}

/// Metrics when every monitored value at or above `threshold` opens a window.
pub fn threshold_metrics(
    entities: &[EntitySeries],
    training_len: usize,
    threshold: f64,
    rules: WindowRules,
) -> WindowReport {
    let mut total = WindowReport::default();
    for e in entities {
        let detections: Vec<WindowDetection> = e.times[training_len..]
            .iter()
            .zip(&e.values[training_len..])
            .filter(|(_, v)| v.is_some_and(|v| v >= threshold))
            .map(|(&t, _)| WindowDetection { start: t, detected_at: t })
            .collect();
        total.merge(&window_confusion(&e.labelled_after(training_len), &detections, rules));
    }
    total
}

/// Scans thresholds at the quantiles of the monitored values and keeps the
/// one with the highest F1 (the lowest threshold among ties).
pub fn best_threshold(
    entities: &[EntitySeries],
    training_len: usize,
    candidates: usize,
    rules: WindowRules,
) -> Result<ThresholdResult> {
    let mut pool: Vec<f64> = entities.iter().flat_map(|e| e.values[training_len..].iter().flatten().copied()).collect();
    if pool.is_empty() {
        return Err(Error::InvalidInput("no monitored values to threshold".into()));
    }
    pool.sort_by(f64::total_cmp);
    let m = candidates.max(1);
    let mut thresholds: Vec<f64> =
        (0..m).map(|k| pool[((k as f64 + 0.5) / m as f64 * pool.len() as f64) as usize % pool.len()]).collect();
    thresholds.dedup();
    let scored: Vec<(f64, WindowReport)> = thresholds
        .par_iter()
        .map(|&c| (c, threshold_metrics(entities, training_len, c, rules)))
        .collect();
    let (threshold, report) = scored
        .iter()
        .fold(None, |best: Option<&(f64, WindowReport)>, cand| match best {
            Some(b) if b.1.counts.f1() >= cand.1.counts.f1() => Some(b),
            _ => Some(cand),
        })
        .expect("at least one threshold");
    Ok(ThresholdResult { threshold: *threshold, metrics: MetricSummary::from(report) })
}
