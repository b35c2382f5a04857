use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use skfcpd::detector::{DetectorConfig, Hazard, OnlineDetector, SkfDetector};
use skfcpd::estimation::{estimate, EstimationResult, EstimatorSettings, TrainingSeries};
use skfcpd::evaluation::{
    calibrate_detectors, multiple_change_experiment, simulate_replicate, single_change_experiment,
    write_metric_csv, DetectorKind, HarnessConfig, Segmentation, WindowRules,
};
use skfcpd::pipeline::{
    best_threshold, estimate_pooled, parse_hazard_csv, parse_series_csv, prepare_entities, run_pipeline,
    simulate_cohort, write_series_csv, CohortSpec, HazardSpec, PipelineConfig, PipelineResult, ScreeningConfig,
    SeriesRecord, SeriesTable, ThresholdResult, TimeFormat,
};
use skfcpd::temporal_model::{GpSegmentModel, KernelFamily, KernelSpec, Scenario, ShiftKind};

use crate::args::{
    DetectArgs, EstimateArgs, EvaluateArgs, HazardArgs, KernelArgs, PipelineArgs, ScenarioArgs, SimulateArgs,
};
use crate::Usage;

const DEFAULT_SEED: u64 = 1;

fn read_table(path: &Path) -> Result<SeriesTable> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_series_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn family(name: &str) -> Result<KernelFamily> {
    name.parse::<KernelFamily>().map_err(|e| Usage(e.to_string()).into())
}

fn fixed_kernel(k: &KernelArgs) -> Result<Option<KernelSpec>> {
    let fam = family(&k.kernel)?;
    match (k.range, k.nugget) {
        (Some(r), Some(n)) => Ok(Some(KernelSpec::new(fam, r, n).map_err(|e| Usage(e.to_string()))?)),
        (None, None) => Ok(None),
        _ => Err(Usage("--range and --nugget must be given together".into()).into()),
    }
}

fn hazard_spec(h: &HazardArgs) -> Result<HazardSpec> {
    match (&h.hazard, &h.hazard_file) {
        (Some(c), None) => Ok(HazardSpec::Constant(*c)),
        (None, Some(path)) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let points = parse_hazard_csv(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))?;
            if !(h.hazard_scale >= 0.0 && h.hazard_scale.is_finite()) {
                bail!(Usage(format!("--hazard-scale must be finite and non-negative, got {}", h.hazard_scale)));
            }
            Ok(HazardSpec::Series { points, scale: h.hazard_scale })
        }
        _ => Err(Usage("give exactly one of --hazard or --hazard-file".into()).into()),
    }
}

fn hazard_at_times(spec: &HazardSpec, times: &[f64], id: &str) -> Result<Hazard> {
    Ok(match spec {
        HazardSpec::Constant(c) => Hazard::constant(*c).map_err(|e| Usage(e.to_string()))?,
        HazardSpec::Series { points, scale } => {
            let lookup: HashMap<u64, f64> = points.iter().map(|&(t, h)| (t.to_bits(), h)).collect();
            let values = times
                .iter()
                .map(|t| {
                    lookup
                        .get(&t.to_bits())
                        .map(|h| (h * scale).clamp(0.0, 1.0))
                        .ok_or_else(|| skfcpd::Error::InvalidInput(format!("no hazard at time {t} (entity `{id}`)")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            Hazard::per_step(values)?
        }
    })
}

#[derive(Serialize)]
struct MapStep {
    step: usize,
    time: f64,
    changepoint: usize,
    changepoint_time: f64,
    weight: f64,
}

#[derive(Serialize)]
struct DetectedChangepoint {
    time: f64,
    index: usize,
    detected_at: f64,
    map_weight: f64,
}

#[derive(Serialize)]
struct DetectEntity {
    id: String,
    changepoints: Vec<DetectedChangepoint>,
    map: Vec<MapStep>,
}

#[derive(Serialize)]
struct DetectSettings {
    kernel: KernelSpec,
    hazard: HazardSpec,
    train: usize,
    truncate: bool,
    min_segment: usize,
    logit: bool,
}

#[derive(Serialize)]
struct DetectOutput {
    config: DetectSettings,
    estimation: Option<EstimationResult>,
    entities: Vec<DetectEntity>,
    skipped: Vec<skfcpd::pipeline::SkippedEntity>,
}

pub fn detect(a: &DetectArgs) -> Result<()> {
    let mut table = read_table(&a.input)?;
    if let Some(id) = &a.entity {
        table.records.retain(|r| &r.entity == id);
        if table.records.is_empty() {
            bail!(skfcpd::Error::InvalidInput(format!("no rows for entity `{id}`")));
        }
    }
    let hazard = hazard_spec(&a.hazard)?;
    let (entities, skipped) = prepare_entities(&table, a.logit, a.train + 1)?;
    for s in &skipped {
        eprintln!("warning: skipping entity `{}`: {}", s.id, s.reason);
    }
    if entities.is_empty() {
        bail!(skfcpd::Error::InvalidInput("no entity is longer than the training window".into()));
    }
    if a.heatmap.is_some() && entities.len() != 1 {
        bail!(Usage("--heatmap needs a single entity; select one with --entity".into()));
    }
    let (kernel, estimation) = match fixed_kernel(&a.kernel)? {
        Some(k) => (k, None),
        None => {
            if a.train < skfcpd::estimation::MIN_TRAINING_LEN {
                bail!(Usage("give --range and --nugget, or --train of at least 4 to estimate them".into()));
            }
            let r = estimate_pooled(&entities, a.train, &EstimatorSettings::new(family(&a.kernel.kernel)?))?;
            (r.kernel, Some(r))
        }
    };
    let mut heat = Vec::new();
    let mut out = Vec::with_capacity(entities.len());
    for e in &entities {
        let mut cfg = DetectorConfig::new(hazard_at_times(&hazard, &e.times, &e.id)?)
            .with_warmup(a.train)
            .with_truncation(!a.no_truncate);
        cfg.min_segment_for_report = a.min_segment;
        let mut det = SkfDetector::new(kernel, cfg).map_err(|err| Usage(err.to_string()))?;
        let mut changepoints = Vec::new();
        let mut map = Vec::with_capacity(e.times.len());
        for (&t, &v) in e.times.iter().zip(&e.values) {
            if let Some(ev) = det.observe(t, v)? {
                changepoints.push(DetectedChangepoint {
                    time: ev.changepoint_time,
                    index: ev.changepoint,
                    detected_at: ev.time,
                    map_weight: ev.map_weight,
                });
            }
            let post = det.posterior();
            if let Some(m) = post.map {
                let k = post.candidates.iter().position(|&c| c == m).unwrap_or(0);
                map.push(MapStep {
                    step: post.step,
                    time: t,
                    changepoint: m,
                    changepoint_time: post.candidate_times[k],
                    weight: post.weights[k],
                });
            }
            if a.heatmap.is_some() {
                heat.extend(post.candidates.iter().zip(&post.weights).map(|(&c, &w)| (post.step, c, w)));
            }
        }
        out.push(DetectEntity { id: e.id.clone(), changepoints, map });
    }
    if let Some(path) = &a.heatmap {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        w.write_record(["step", "candidate", "weight"])?;
        for (s, c, wt) in heat {
            w.write_record([s.to_string(), c.to_string(), format!("{wt}")])?;
        }
        w.flush()?;
    }
    let settings = DetectSettings {
        kernel,
        hazard,
        train: a.train,
        truncate: !a.no_truncate,
        min_segment: a.min_segment,
        logit: a.logit,
    };
    write_json(&DetectOutput { config: settings, estimation, entities: out, skipped }, a.output.as_deref())
}

fn build_scenario(a: &ScenarioArgs) -> Result<Scenario> {
    let kind: ShiftKind = a.scenario.parse().map_err(|e: skfcpd::Error| Usage(e.to_string()))?;
    let usage = |e: skfcpd::Error| Usage(e.to_string());
    let kernel = KernelSpec::new(family(&a.kernel)?, a.range, a.nugget).map_err(usage)?;
    let pre = GpSegmentModel::new(a.pre_mean, a.pre_var, kernel).map_err(usage)?;
    let need = |v: Option<f64>, flag: &str| v.ok_or_else(|| Usage(format!("{} needs {flag}", a.scenario)));
    let post = match kind {
        ShiftKind::Mean => GpSegmentModel::new(need(a.post_mean, "--post-mean")?, a.pre_var, kernel),
        ShiftKind::Variance => GpSegmentModel::new(a.pre_mean, need(a.post_var, "--post-var")?, kernel),
        ShiftKind::Range => {
            let k = KernelSpec::new(kernel.family, need(a.post_range, "--post-range")?, kernel.nugget).map_err(usage)?;
            GpSegmentModel::new(a.pre_mean, a.pre_var, k)
        }
    }
    .map_err(usage)?;
    Segmentation::new(a.n, a.cp.clone()).map_err(usage)?;
    Ok(Scenario::regular(kind, pre, post, a.cp.clone(), a.n))
}

fn entity_id(prefix: char, k: usize, total: usize) -> String {
    let width = total.saturating_sub(1).max(1).to_string().len();
    format!("{prefix}{k:0width$}")
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let seed = a.scenario.seed.unwrap_or(DEFAULT_SEED);
    fs::create_dir_all(&a.output).with_context(|| format!("creating {}", a.output.display()))?;
    let mut truth = csv::Writer::from_path(a.output.join("truth.csv"))?;
    truth.write_record(["entity", "changepoint", "time"])?;
    let table = if a.scenario.scenario.trim().eq_ignore_ascii_case("cohort") {
        let s = &a.scenario;
        let spec = CohortSpec {
            entities: a.entities,
            positive_fraction: a.positive_fraction,
            days: a.days,
            training_len: a.train,
            kernel: KernelSpec::new(family(&s.kernel)?, s.range, s.nugget).map_err(|e| Usage(e.to_string()))?,
            noise_sd: s.pre_var.sqrt(),
            baseline_mean: s.pre_mean,
            baseline_spread: 1.0,
            shift: a.shift,
            shift_days: a.shift_days,
        };
        let table = simulate_cohort(&spec, seed).map_err(|e| Usage(e.to_string()))?;
        let mut previous: Option<(&str, bool)> = None;
        for (k, r) in table.records.iter().enumerate() {
            let on = r.label == Some(true);
            if on && previous != Some((r.entity.as_str(), true)) {
                truth.write_record([r.entity.clone(), (k % a.days + 1).to_string(), format!("{}", r.time)])?;
            }
            previous = Some((r.entity.as_str(), on));
        }
        table
    } else {
        let sc = build_scenario(&a.scenario)?;
        let mut records = Vec::with_capacity(a.scenario.reps * sc.len());
        for r in 0..a.scenario.reps {
            let id = entity_id('r', r, a.scenario.reps);
            let (y, segs) = simulate_replicate(&sc, seed, r as u64)?;
            for &c in segs.changepoints() {
                truth.write_record([id.clone(), c.to_string(), format!("{}", sc.times[c - 1])])?;
            }
            records.extend(sc.times.iter().zip(y).map(|(&t, v)| SeriesRecord {
                entity: id.clone(),
                time: t,
                value: Some(v),
                label: None,
            }));
        }
        SeriesTable { time_format: TimeFormat::Numeric, has_labels: false, records }
    };
    truth.flush()?;
    let file = File::create(a.output.join("series.csv"))?;
    write_series_csv(&table, BufWriter::new(file))?;
    Ok(())
}

pub fn estimate_cmd(a: &EstimateArgs) -> Result<()> {
    let table = read_table(&a.input)?;
    let min = a.train.unwrap_or(skfcpd::estimation::MIN_TRAINING_LEN);
    let (entities, skipped) = prepare_entities(&table, a.logit, min)?;
    for s in &skipped {
        eprintln!("warning: skipping entity `{}`: {}", s.id, s.reason);
    }
    let series = entities
        .iter()
        .map(|e| {
            let n = a.train.unwrap_or(e.times.len());
            TrainingSeries::from_observed(&e.times[..n], &e.values[..n])
        })
        .collect::<Result<Vec<_>, _>>()?;
    if series.is_empty() {
        bail!(skfcpd::Error::InvalidInput("no entity has enough rows".into()));
    }
    let result = estimate(&series, &EstimatorSettings::new(family(&a.kernel)?))?;
    if result.at_bound() {
        eprintln!("warning: estimate lies on a parameter bound");
    }
    write_json(&result, a.output.as_deref())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let sc = build_scenario(&a.scenario)?;
    let kinds = a
        .detectors
        .iter()
        .map(|d| d.parse::<DetectorKind>().map_err(|e| Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let warmup = a.warmup.unwrap_or(sc.changepoints[0] - 1);
    let cfg = HarnessConfig {
        warmup,
        target_arl: a.target_arl,
        calibration_replicates: a.cal_reps,
        replicates: a.scenario.reps,
        master_seed: a.scenario.seed.unwrap_or(DEFAULT_SEED),
        estimator: EstimatorSettings::new(sc.pre.kernel.family),
        fixed_kernel: a.known_kernel.then_some(sc.pre.kernel),
    };
    if warmup >= sc.changepoints[0] {
        bail!(Usage(format!("warmup {warmup} must end before the first changepoint {}", sc.changepoints[0])));
    }
    let calibrated = calibrate_detectors(&sc.pre, &cfg, &kinds)?;
    let reports = if sc.changepoints.len() == 1 {
        single_change_experiment(&sc, &cfg, &calibrated)?
    } else {
        multiple_change_experiment(&sc, &cfg, &calibrated)?
    };
    let json = a.output.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")));
    if json {
        return write_json(&reports, a.output.as_deref());
    }
    match &a.output {
        Some(p) => write_metric_csv(&reports, BufWriter::new(File::create(p)?))?,
        None => write_metric_csv(&reports, io::stdout().lock())?,
    }
    Ok(())
}

#[derive(Serialize)]
struct PipelineOutput<'a> {
    #[serde(flatten)]
    result: &'a PipelineResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold_baseline: Option<ThresholdResult>,
}

pub fn pipeline(a: &PipelineArgs) -> Result<()> {
    let table = read_table(&a.input)?;
    let mut screening = ScreeningConfig::new(a.alpha, a.train).map_err(|e| Usage(e.to_string()))?;
    screening.recency_window = a.recency;
    screening.validate().map_err(|e| Usage(e.to_string()))?;
    let config = PipelineConfig {
        estimator: EstimatorSettings::new(family(&a.kernel.kernel)?),
        kernel: fixed_kernel(&a.kernel)?,
        hazard: hazard_spec(&a.hazard)?,
        screening,
        screen: !a.no_screen,
        logit: !a.raw,
        window: WindowRules::default(),
    };
    if let HazardSpec::Constant(h) = config.hazard {
        Hazard::constant(h).map_err(|e| Usage(e.to_string()))?;
    }
    if config.kernel.is_none() && a.train < skfcpd::estimation::MIN_TRAINING_LEN {
        bail!(Usage("--train must be at least 4 to estimate the kernel".into()));
    }
    let result = run_pipeline(&table, &config)?;
    for s in &result.skipped {
        eprintln!("warning: skipping entity `{}`: {}", s.id, s.reason);
    }
    let threshold_baseline = if a.threshold_baseline {
        if !table.has_labels {
            bail!(Usage("--threshold-baseline needs a label column".into()));
        }
        let (entities, _) = prepare_entities(&table, config.logit, skfcpd::pipeline::min_entity_len(&config))?;
        Some(best_threshold(&entities, a.train, 200, config.window)?)
    } else {
        None
    };
    write_json(&PipelineOutput { result: &result, threshold_baseline }, a.output.as_deref())
}
