use nalgebra::Matrix3;
use statrs::function::gamma::ln_gamma;

use super::{DetectorConfig, RunLengthDetector, SegmentModel};
use crate::error::Result;
use crate::kalman::{SegmentAccumulator, SegmentSums};
use crate::temporal_model::{DlmStep, KernelSpec};

const HALF_LN_PI: f64 = 0.572_364_942_924_700_1;

/// `log p(y_n | y_{i:(n-1)}, γ, η)` from the sums before and after appending `y_n`.
///
/// This is the exact ratio of consecutive integrated marginals, with the
/// marginal of a single observation fixed at 1. Two observations carry no
/// information about the location and scale together, which is why the
/// `n' = 2` case has its own form.
pub fn predictive_log_density(before: &SegmentSums, after: &SegmentSums, q: f64) -> f64 {
    let n = after.len;
    if n <= 1 {
        return 0.0;
    }
    let common = -0.5 * q.ln() - 0.5 * (after.s_uu / before.s_uu).ln();
    let qf_new = after.floored_quadratic_form().ln();
    if n == 2 {
        return common - 0.5 * qf_new;
    }
    let a = (n as f64 - 1.0) / 2.0;
    let qf_old = before.floored_quadratic_form().ln();
    ln_gamma(a) - ln_gamma(a - 0.5) - HALF_LN_PI + common - a * qf_new + (a - 0.5) * qf_old
}

/// Gaussian-process segments whitened by per-candidate Kalman filters.
#[derive(Debug, Clone)]
pub struct KalmanSegments {
    kernel: KernelSpec,
    initial_covariance: Matrix3<f64>,
}

impl KalmanSegments {
    pub fn new(kernel: KernelSpec) -> Self {
        Self { initial_covariance: kernel.initial_covariance(), kernel }
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }
}

impl SegmentModel for KalmanSegments {
    type Segment = SegmentAccumulator;
    type Step = DlmStep;

    fn transition(&self, spacing: f64) -> Result<DlmStep> {
        self.kernel.transition(spacing)
    }

    fn open(&self, index: usize, y: f64) -> Result<SegmentAccumulator> {
        SegmentAccumulator::open(index, &self.initial_covariance, self.kernel.nugget, y)
    }

    fn extend(&self, segment: &mut SegmentAccumulator, step: &DlmStep, y: f64) -> Result<f64> {
        let before = *segment.sums();
        let w = segment.advance(step, y)?;
        Ok(predictive_log_density(&before, segment.sums(), w.q))
    }

    fn skip(&self, segment: &mut SegmentAccumulator, step: &DlmStep) {
        segment.skip(step);
    }

    fn new_segment_log_density(&self, _y: f64) -> f64 {
        0.0
    }
}

pub type SkfDetector = RunLengthDetector<KalmanSegments>;

impl SkfDetector {
    pub fn new(kernel: KernelSpec, config: DetectorConfig) -> Result<Self> {
        Self::with_model(KalmanSegments::new(kernel), config)
    }
}
