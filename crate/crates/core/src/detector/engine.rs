use super::{log_sum_exp, ChangepointPosterior, DetectionEvent, DetectorConfig, OnlineDetector};
use crate::error::{Error, Result};

/// Per-candidate segment likelihood used by [`RunLengthDetector`].
pub trait SegmentModel {
    type Segment;
    /// Data-independent work for moving every candidate across one spacing.
    type Step;

    fn transition(&self, spacing: f64) -> Result<Self::Step>;

    /// Starts a segment whose first observation `y` is at 1-based `index`.
    fn open(&self, index: usize, y: f64) -> Result<Self::Segment>;

    /// Appends `y` and returns `log p(y | earlier observations of the segment)`.
    fn extend(&self, segment: &mut Self::Segment, step: &Self::Step, y: f64) -> Result<f64>;

    /// Moves the segment across a step with no observation.
    fn skip(&self, segment: &mut Self::Segment, step: &Self::Step);

    /// `log p(y_n | C_n = t_n)`, the density of a segment's first observation.
    fn new_segment_log_density(&self, y: f64) -> f64;
}

#[derive(Debug, Clone)]
struct Candidate<S> {
    index: usize,
    time: f64,
    log_stay: f64,
    len: usize,
    log_joint: f64,
    segment: S,
}

/// Exact run-length recursion over candidate most-recent changepoints.
///
/// Every live candidate `i` keeps the joint `log p(y_{1:n}, C_n = t_i)`:
///
/// * an existing candidate adds its one-step predictive density and
///   `log(1 - H(t_i))`;
/// * the candidate opened at step `n` gets the new-segment density plus
///   `log H(t_n)` plus the log-sum of all previous joints.
///
/// Joints are renormalized every step, so they are log posterior weights.
#[derive(Debug, Clone)]
pub struct RunLengthDetector<M: SegmentModel> {
    model: M,
    config: DetectorConfig,
    candidates: Vec<Candidate<M::Segment>>,
    step: usize,
    last_time: Option<f64>,
    map: Option<usize>,
}

impl<M: SegmentModel> RunLengthDetector<M> {
    pub fn with_model(model: M, config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { model, config, candidates: Vec::new(), step: 0, last_time: None, map: None })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn live_candidates(&self) -> usize {
        self.candidates.len()
    }

    /// Current MAP changepoint index.
    pub fn map(&self) -> Option<usize> {
        self.map
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

    fn clamp_density(&self, v: f64) -> Result<f64> {
        if v.is_nan() {
            return Err(Error::Conditioning("predictive log density is NaN".into()));
        }
        Ok(v.clamp(self.config.log_prob_floor, -self.config.log_prob_floor))
    }

    fn renormalize(&mut self) -> Result<()> {
        let lse = log_sum_exp(self.candidates.iter().map(|c| c.log_joint));
        if !lse.is_finite() {
            return Err(Error::Conditioning(format!("log normalizer is {lse}")));
        }
        for c in &mut self.candidates {
            c.log_joint -= lse;
        }
        Ok(())
    }

    fn argmax(&self) -> Option<&Candidate<M::Segment>> {
        let min = self.config.min_segment_for_report;
        // Strict comparison keeps the earliest candidate on ties.
        self.candidates
            .iter()
            .filter(|c| c.len >= min)
            .fold(None, |best: Option<&Candidate<M::Segment>>, c| match best {
                Some(b) if b.log_joint >= c.log_joint => Some(b),
                _ => Some(c),
            })
    }
}

impl<M: SegmentModel> OnlineDetector for RunLengthDetector<M> {
    fn observe(&mut self, time: f64, value: Option<f64>) -> Result<Option<DetectionEvent>> {
        if !time.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite time {time}")));
        }
        if let Some(prev) = self.last_time {
            if !(time > prev) {
                return Err(Error::InvalidInput(format!(
                    "times must increase: {time} follows {prev}"
                )));
            }
        }
        let step = match (self.last_time, self.candidates.is_empty()) {
            (Some(prev), false) => Some(self.model.transition(time - prev)?),
            _ => None,
        };
        self.step += 1;
        self.last_time = Some(time);
        let n = self.step;

        let Some(y) = value else {
            if let Some(step) = &step {
                for c in &mut self.candidates {
                    self.model.skip(&mut c.segment, step);
                }
            }
            return Ok(None);
        };
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {y} at step {n}")));
        }

        let h = self.config.hazard.at(n)?;
        let prior_mass = log_sum_exp(self.candidates.iter().map(|c| c.log_joint));
        if let Some(step) = &step {
            for k in 0..self.candidates.len() {
                let pred = {
                    let c = &mut self.candidates[k];
                    self.model.extend(&mut c.segment, step, y)?
                };
                let pred = self.clamp_density(pred)?;
                let c = &mut self.candidates[k];
                c.log_joint += pred + c.log_stay;
                c.len += 1;
            }
        }
        let fresh = if self.candidates.is_empty() {
            0.0
        } else {
            self.clamp_density(self.model.new_segment_log_density(y))? + h.ln() + prior_mass
        };
        let segment = self.model.open(n, y)?;
        self.candidates.push(Candidate {
            index: n,
            time,
            log_stay: (-h).ln_1p(),
            len: 1,
            log_joint: fresh,
            segment,
        });
        self.renormalize()?;

        let Some(best) = self.argmax() else {
            if self.map.is_none() {
                self.map = Some(self.candidates[0].index);
            }
            return Ok(None);
        };
        let (best_index, best_time, best_weight) = (best.index, best.time, best.log_joint.exp());
        let previous = self.map.replace(best_index);
        if previous.is_none() || previous == Some(best_index) || n <= self.config.warmup {
            return Ok(None);
        }
        if self.config.truncate_at_detection {
            let keep_from = self.candidates.partition_point(|c| c.index < best_index);
            self.candidates.drain(..keep_from);
            self.renormalize()?;
        }
        Ok(Some(DetectionEvent {
            step: n,
            time,
            changepoint: best_index,
            changepoint_time: best_time,
            map_weight: best_weight,
        }))
    }
}
