use statrs::function::gamma::ln_gamma;

use crate::detector::{DetectorConfig, RunLengthDetector, SegmentModel};
use crate::error::{Error, Result};

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Normal-inverse-gamma hyperparameters for i.i.d. Gaussian segments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NigParams {
    pub m: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl NigParams {
    pub fn new(m: f64, kappa: f64, alpha: f64, beta: f64) -> Result<Self> {
        let ok = m.is_finite() && [kappa, alpha, beta].iter().all(|v| v.is_finite() && *v > 0.0);
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "invalid normal-inverse-gamma prior (m={m}, κ={kappa}, α={alpha}, β={beta})"
            )));
        }
        Ok(Self { m, kappa, alpha, beta })
    }

    /// Prior centred on a training window: `(mean, 1, 1, variance)`.
    pub fn from_training(values: &[f64]) -> Result<Self> {
        let (mean, var) = super::mean_and_variance(values)?;
        Self::new(mean, 1.0, 1.0, var)
    }

    /// Student-t predictive log density of the next observation.
    pub fn predictive_log_density(&self, y: f64) -> f64 {
        let nu = 2.0 * self.alpha;
        let scale2 = self.beta * (self.kappa + 1.0) / (self.alpha * self.kappa);
        let z2 = (y - self.m).powi(2) / (nu * scale2);
        ln_gamma((nu + 1.0) / 2.0) - ln_gamma(nu / 2.0) - 0.5 * (nu * scale2).ln() - 0.5 * LN_PI
            - (nu + 1.0) / 2.0 * z2.ln_1p()
    }

    pub fn update(&self, y: f64) -> Self {
        let k1 = self.kappa + 1.0;
        Self {
            m: (self.kappa * self.m + y) / k1,
            kappa: k1,
            alpha: self.alpha + 0.5,
            beta: self.beta + self.kappa * (y - self.m).powi(2) / (2.0 * k1),
        }
    }
}

/// Conjugate i.i.d. Gaussian segments. Time spacing plays no role.
#[derive(Debug, Clone)]
pub struct NigSegments {
    prior: NigParams,
}

impl NigSegments {
    pub fn new(prior: NigParams) -> Self {
        Self { prior }
    }

    pub fn prior(&self) -> &NigParams {
        &self.prior
    }
}

impl SegmentModel for NigSegments {
    type Segment = NigParams;
    type Step = ();

    fn transition(&self, _spacing: f64) -> Result<()> {
        Ok(())
    }

    fn open(&self, _index: usize, y: f64) -> Result<NigParams> {
        Ok(self.prior.update(y))
    }

    fn extend(&self, segment: &mut NigParams, _step: &(), y: f64) -> Result<f64> {
        let p = segment.predictive_log_density(y);
        *segment = segment.update(y);
        Ok(p)
    }

    fn skip(&self, _segment: &mut NigParams, _step: &()) {}

    fn new_segment_log_density(&self, y: f64) -> f64 {
        self.prior.predictive_log_density(y)
    }
}

pub type BocpdDetector = RunLengthDetector<NigSegments>;

impl BocpdDetector {
    pub fn bocpd(prior: NigParams, config: DetectorConfig) -> Result<Self> {
        Self::with_model(NigSegments::new(prior), config)
    }
}
