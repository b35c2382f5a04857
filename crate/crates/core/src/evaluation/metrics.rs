use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A partition of `1..=n` into contiguous segments.
///
/// Changepoints are 1-based indices of the first observation of each new
/// segment, so they lie in `2..=n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    n: usize,
    changepoints: Vec<usize>,
}

impl Segmentation {
    pub fn new(n: usize, changepoints: Vec<usize>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("segmentation of an empty series".into()));
        }
        let mut prev = 1;
        for &c in &changepoints {
            if c <= prev || c > n {
                return Err(Error::InvalidInput(format!(
                    "changepoints must be strictly increasing within 2..={n}, got {changepoints:?}"
                )));
            }
            prev = c;
        }
        Ok(Self { n, changepoints })
    }

    /// Builds a segmentation from unsorted detections, dropping duplicates and
    /// the trivial changepoint at index 1.
    pub fn from_detections(n: usize, detections: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut cps: Vec<usize> = detections.into_iter().filter(|&c| c > 1).collect();
        cps.sort_unstable();
        cps.dedup();
        Self::new(n, cps)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn changepoints(&self) -> &[usize] {
        &self.changepoints
    }

    /// Segments as 1-based half-open ranges.
    pub fn segments(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let starts = std::iter::once(1).chain(self.changepoints.iter().copied());
        let ends = self.changepoints.iter().copied().chain(std::iter::once(self.n + 1));
        starts.zip(ends).map(|(a, b)| a..b)
    }
}

fn jaccard(a: &Range<usize>, b: &Range<usize>) -> f64 {
    let inter = a.end.min(b.end).saturating_sub(a.start.max(b.start));
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// `(1/n) Σ_i |A_i| max_j J(A_i, A'_j)` over truth segments `A_i` and detected
/// segments `A'_j`.
pub fn covering(truth: &Segmentation, detected: &Segmentation) -> Result<f64> {
    if truth.len() != detected.len() {
        return Err(Error::InvalidInput(format!(
            "segmentations have different lengths ({} vs {})",
            truth.len(),
            detected.len()
        )));
    }
    let found: Vec<_> = detected.segments().collect();
    let total: f64 = truth
        .segments()
        .map(|a| {
            let best = found.iter().map(|b| jaccard(&a, b)).fold(0.0, f64::max);
            a.len() as f64 * best
        })
        .sum();
    Ok(total / truth.len() as f64)
}

/// Outcome of one single-changepoint replicate. Only the first detection counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayOutcome {
    Detected { delay: f64 },
    FalseAlarm { at: f64 },
    /// No detection; the delay is censored at `n - τ`.
    Missed { censored: f64 },
}

impl DelayOutcome {
    /// Delay used in the ADD average: censored value for misses, none for false alarms.
    pub fn add_contribution(&self) -> Option<f64> {
        match *self {
            DelayOutcome::Detected { delay } => Some(delay),
            DelayOutcome::Missed { censored } => Some(censored),
            DelayOutcome::FalseAlarm { .. } => None,
        }
    }
}

/// `(Γ - τ)⁺` for the first detection time `Γ`.
pub fn detection_delay(tau: f64, first_detection: Option<f64>, end: f64) -> DelayOutcome {
    match first_detection {
        Some(g) if g < tau => DelayOutcome::FalseAlarm { at: g },
        Some(g) => DelayOutcome::Detected { delay: g - tau },
        None => DelayOutcome::Missed { censored: (end - tau).max(0.0) },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    pub fn precision(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.tp as f64 / (self.tp + self.fn_) as f64
        }
    }

    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// A detection that marks a positive window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowDetection {
    /// Window start, usually the estimated changepoint time.
    pub start: f64,
    /// When the detector raised it; lateness is judged on this time.
    pub detected_at: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRules {
    pub positive_window: f64,
    pub lateness_cutoff: f64,
}

impl Default for WindowRules {
    fn default() -> Self {
        Self { positive_window: 7.0, lateness_cutoff: 14.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowReport {
    pub counts: ConfusionCounts,
    /// Sum and count of detection delays over positive runs that were caught in time.
    pub delay_sum: f64,
    pub delay_count: usize,
}

impl WindowReport {
    pub fn mean_delay(&self) -> Option<f64> {
        (self.delay_count > 0).then(|| self.delay_sum / self.delay_count as f64)
    }

    pub fn merge(&mut self, other: &WindowReport) {
        self.counts += other.counts;
        self.delay_sum += other.delay_sum;
        self.delay_count += other.delay_count;
    }
}

/// Confusion counts for one entity.
///
/// A time is predicted positive when it falls in `[start, start + window)` of
/// some detection. Each maximal run of positive labels has day 0 at its first
/// time; detections raised more than `lateness_cutoff` after day 0 earn no
/// true positives in that run, and the positives they cover count as misses.
pub fn window_confusion(
    labelled: &[(f64, bool)],
    detections: &[WindowDetection],
    rules: WindowRules,
) -> WindowReport {
    let covers = |d: &WindowDetection, t: f64| t >= d.start && t < d.start + rules.positive_window;
    let mut report = WindowReport::default();
    let mut k = 0;
    while k < labelled.len() {
        let (t, label) = labelled[k];
        if !label {
            if detections.iter().any(|d| covers(d, t)) {
                report.counts.fp += 1;
            } else {
                report.counts.tn += 1;
            }
            k += 1;
            continue;
        }
        let run_end = labelled[k..].iter().position(|&(_, l)| !l).map_or(labelled.len(), |p| k + p);
        let day0 = t;
        let timely = |d: &&WindowDetection| d.detected_at <= day0 + rules.lateness_cutoff;
        let mut first_hit: Option<f64> = None;
        for &(tt, _) in &labelled[k..run_end] {
            match detections.iter().filter(timely).find(|d| covers(d, tt)) {
                Some(d) => {
                    report.counts.tp += 1;
                    first_hit = Some(first_hit.map_or(d.detected_at, |h: f64| h.min(d.detected_at)));
                }
                None => report.counts.fn_ += 1,
            }
        }
        if let Some(h) = first_hit {
            report.delay_sum += (h - day0).max(0.0);
            report.delay_count += 1;
        }
        k = run_end;
    }
    report
}
