//! Simulation protocols, metrics and timing.

mod calibrate;
mod dense;
mod harness;
mod metrics;
mod timing;

pub use calibrate::{calibrate_to_arl, CalibrationResult, CalibrationSettings, KnobDirection};
pub use dense::DenseGpDetector;
pub use harness::{
    calibrate_detectors, fit_training, multiple_change_coverings, multiple_change_experiment,
    simulate_replicate, single_change_experiment, single_change_outcomes, write_metric_csv, AnyDetector, Calibrated,
    DetectorKind, Fitted, HarnessConfig, MetricReport,
};
pub use metrics::{
    covering, detection_delay, window_confusion, ConfusionCounts, DelayOutcome, Segmentation,
    WindowDetection, WindowReport, WindowRules,
};
pub use timing::{skf_step_seconds, time_run, timing_benchmark, TimingRow};
