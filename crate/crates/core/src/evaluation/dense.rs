//! Dense-matrix run-length detector used as a timing baseline.
//!
//! At every step it factors the covariance of the whole live window once.
//! Ordering the window backwards in time makes each trailing segment
//! `y_{i:n}` a leading block, so one Cholesky factor and two triangular
//! solves give every candidate's integrated marginal. The cost is cubic in
//! the window length per step.

use nalgebra::{DMatrix, DVector};

use crate::detector::{
    ChangepointPosterior, DetectionEvent, DetectorConfig, OnlineDetector,
};
use crate::error::{Error, Result};
use crate::kalman::SegmentSums;
use crate::temporal_model::KernelSpec;

#[derive(Debug, Clone)]
struct DenseCandidate {
    index: usize,
    time: f64,
    log_stay: f64,
    log_joint: f64,
    log_marginal: f64,
}

#[derive(Debug, Clone)]
pub struct DenseGpDetector {
    kernel: KernelSpec,
    config: DetectorConfig,
    /// Observed points since the last truncation.
    times: Vec<f64>,
    values: Vec<f64>,
    candidates: Vec<DenseCandidate>,
    step: usize,
    last_time: Option<f64>,
    map: Option<usize>,
}

impl DenseGpDetector {
    pub fn new(kernel: KernelSpec, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            kernel,
            config,
            times: Vec::new(),
            values: Vec::new(),
            candidates: Vec::new(),
            step: 0,
            last_time: None,
            map: None,
        })
    }

    pub fn posterior(&self) -> ChangepointPosterior {
        ChangepointPosterior {
            step: self.step,
            candidates: self.candidates.iter().map(|c| c.index).collect(),
            candidate_times: self.candidates.iter().map(|c| c.time).collect(),
            log_joint: self.candidates.iter().map(|c| c.log_joint).collect(),
            weights: self.candidates.iter().map(|c| c.log_joint.exp()).collect(),
            map: self.map,
        }
    }

    /// Integrated log marginal of every trailing segment of the window,
    /// ordered by segment start (oldest first).
    fn trailing_marginals(&self) -> Result<Vec<f64>> {
        let m = self.times.len();
        let rev_t: Vec<f64> = self.times.iter().rev().copied().collect();
        let k = DMatrix::from_fn(m, m, |a, b| {
            self.kernel.correlation(rev_t[a] - rev_t[b]) + if a == b { self.kernel.nugget } else { 0.0 }
        });
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::Conditioning("dense covariance is not positive definite".into()))?;
        let l = chol.l();
        let ones = DVector::from_element(m, 1.0);
        let y = DVector::from_iterator(m, self.values.iter().rev().copied());
        let zu = l
            .solve_lower_triangular(&ones)
            .ok_or_else(|| Error::Conditioning("singular Cholesky factor".into()))?;
        let zv = l
            .solve_lower_triangular(&y)
            .ok_or_else(|| Error::Conditioning("singular Cholesky factor".into()))?;
        let mut sums = SegmentSums::default();
        let mut out = vec![0.0; m];
        for p in 0..m {
            sums.len += 1;
            sums.s_uu += zu[p] * zu[p];
            sums.s_vv += zv[p] * zv[p];
            sums.s_uv += zu[p] * zv[p];
            sums.log_det += 2.0 * l[(p, p)].ln();
            sums.rss = sums.s_vv - sums.s_uv * sums.s_uv / sums.s_uu;
            out[m - 1 - p] = sums.log_integrated_marginal();
        }
        Ok(out)
    }

    fn renormalize(&mut self) -> Result<()> {
        let lse = crate::detector::log_sum_exp(self.candidates.iter().map(|c| c.log_joint));
        if !lse.is_finite() {
            return Err(Error::Conditioning(format!("log normalizer is {lse}")));
        }
        for c in &mut self.candidates {
            c.log_joint -= lse;
        }
        Ok(())
    }
}

impl OnlineDetector for DenseGpDetector {
    fn observe(&mut self, time: f64, value: Option<f64>) -> Result<Option<DetectionEvent>> {
        if let Some(prev) = self.last_time {
            if !(time > prev) {
                return Err(Error::InvalidInput(format!("times must increase: {time} follows {prev}")));
            }
        }
        self.last_time = Some(time);
        self.step += 1;
        let n = self.step;
        let Some(y) = value else { return Ok(None) };
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {y}")));
        }
        let h = self.config.hazard.at(n)?;
        let prior_mass = crate::detector::log_sum_exp(self.candidates.iter().map(|c| c.log_joint));
        self.times.push(time);
        self.values.push(y);
        let marginals = self.trailing_marginals()?;
        let floor = self.config.log_prob_floor;
        for (c, &lm) in self.candidates.iter_mut().zip(&marginals) {
            let pred = (lm - c.log_marginal).clamp(floor, -floor);
            c.log_joint += pred + c.log_stay;
            c.log_marginal = lm;
        }
        let fresh = if self.candidates.is_empty() { 0.0 } else { h.ln() + prior_mass };
        self.candidates.push(DenseCandidate {
            index: n,
            time,
            log_stay: (-h).ln_1p(),
            log_joint: fresh,
            log_marginal: 0.0,
        });
        self.renormalize()?;

        let m = self.candidates.len();
        let min = self.config.min_segment_for_report;
        let best = self
            .candidates
            .iter()
            .enumerate()
            .filter(|(k, _)| m - k >= min)
            .fold(None, |best: Option<&DenseCandidate>, (_, c)| match best {
                Some(b) if b.log_joint >= c.log_joint => Some(b),
                _ => Some(c),
            });
        let Some(best) = best else {
            if self.map.is_none() {
                self.map = Some(self.candidates[0].index);
            }
            return Ok(None);
        };
        let (idx, t_idx, w) = (best.index, best.time, best.log_joint.exp());
        let previous = self.map.replace(idx);
        if previous.is_none() || previous == Some(idx) || n <= self.config.warmup {
            return Ok(None);
        }
        if self.config.truncate_at_detection {
            let keep = self.candidates.partition_point(|c| c.index < idx);
            self.candidates.drain(..keep);
            self.times.drain(..keep);
            self.values.drain(..keep);
            self.renormalize()?;
        }
        Ok(Some(DetectionEvent { step: n, time, changepoint: idx, changepoint_time: t_idx, map_weight: w }))
    }
}
