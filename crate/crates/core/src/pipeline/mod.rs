//! Per-entity detection with screening, as used for longitudinal probability sequences.

mod cohort;
mod ingest;
mod logit;
mod run;
mod screening;

pub use ingest::{parse_config, parse_hazard_csv, parse_series_csv, write_series_csv, SeriesRecord, SeriesTable, TimeFormat};
pub use cohort::{simulate_cohort, CohortSpec};
pub use logit::{logit, logit_transform};
pub use run::{
    best_threshold, estimate_pooled, min_entity_len, prepare_entities, run_entity, run_pipeline, threshold_metrics,
    ChangepointReport, EntityResult, EntitySeries, HazardSpec, MetricSummary, PipelineConfig, PipelineResult,
    PositiveWindow, SkippedEntity, ThresholdResult,
};
pub use screening::{screening_test, whiten_segment, ScreeningConfig, ScreeningOutcome, SegmentView};
