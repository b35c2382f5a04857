use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the Monte Carlo run length responds to the tuning knob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnobDirection {
    /// Larger knob, more alarms (a hazard rate).
    IncreasesAlarms,
    /// Larger knob, fewer alarms (a threshold).
    DecreasesAlarms,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSettings {
    pub target_arl: f64,
    /// Accept when `|ARL - target| <= tolerance * target`.
    pub tolerance: f64,
    pub bracket: (f64, f64),
    pub direction: KnobDirection,
    pub max_bisections: usize,
}

impl CalibrationSettings {
    pub fn hazard(target_arl: f64) -> Self {
        Self {
            target_arl,
            tolerance: 0.1,
            bracket: (1e-100, 0.5),
            direction: KnobDirection::IncreasesAlarms,
            max_bisections: 60,
        }
    }

    pub fn threshold(target_arl: f64) -> Self {
        Self {
            target_arl,
            tolerance: 0.1,
            bracket: (0.1, 100.0),
            direction: KnobDirection::DecreasesAlarms,
            max_bisections: 60,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub knob: f64,
    pub arl: f64,
    pub evaluations: usize,
}

/// Bisection on the log knob until the estimated ARL is within tolerance.
///
/// `arl` must be deterministic in the knob (fixed replicate data), otherwise
/// the bracket can be lost between evaluations.
pub fn calibrate_to_arl<F>(settings: &CalibrationSettings, mut arl: F) -> Result<CalibrationResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo, hi) = settings.bracket;
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::CalibrationFailed(format!("bracket ({lo}, {hi}) must be finite, positive and ordered")));
    }
    let target = settings.target_arl;
    if !(target > 0.0) {
        return Err(Error::CalibrationFailed(format!("target ARL must be positive, got {target}")));
    }
    let ok = |a: f64| (a - target).abs() <= settings.tolerance * target;
    // `quiet` is the end of the bracket with long run lengths.
    let (mut quiet, mut busy) = match settings.direction {
        KnobDirection::IncreasesAlarms => (lo.ln(), hi.ln()),
        KnobDirection::DecreasesAlarms => (hi.ln(), lo.ln()),
    };
    let a_quiet = arl(quiet.exp())?;
    let a_busy = arl(busy.exp())?;
    let mut evaluations = 2;
    for (x, a) in [(quiet, a_quiet), (busy, a_busy)] {
        if ok(a) {
            return Ok(CalibrationResult { knob: x.exp(), arl: a, evaluations });
        }
    }
    if !(a_quiet > target && a_busy < target) {
        return Err(Error::CalibrationFailed(format!(
            "bracket does not straddle target ARL {target}: ARL {a_quiet} at {} and {a_busy} at {}",
            quiet.exp(),
            busy.exp()
        )));
    }
    for _ in 0..settings.max_bisections {
        let mid = 0.5 * (quiet + busy);
        let a = arl(mid.exp())?;
        evaluations += 1;
        if ok(a) {
            return Ok(CalibrationResult { knob: mid.exp(), arl: a, evaluations });
        }
        if a > target {
            quiet = mid;
        } else {
            busy = mid;
        }
    }
    Err(Error::CalibrationFailed(format!(
        "no knob within {} bisections reached ARL {target} ± {}%",
        settings.max_bisections,
        settings.tolerance * 100.0
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_hazard_for_geometric_run_length() {
        // A constant hazard h alarms after 1/h steps on average.
        let s = CalibrationSettings::hazard(50.0);
        let r = calibrate_to_arl(&s, |h| Ok((1.0 / h).min(200.0))).unwrap();
        assert!((45.0..=55.0).contains(&r.arl));
        let r2 = calibrate_to_arl(&CalibrationSettings::hazard(100.0), |h| Ok((1.0 / h).min(400.0))).unwrap();
        assert!(r2.knob < r.knob);
    }

    #[test]
    fn threshold_direction() {
        let s = CalibrationSettings::threshold(50.0);
        let r = calibrate_to_arl(&s, |h| Ok((h * h).min(200.0))).unwrap();
        assert!((45.0..=55.0).contains(&r.arl));
        let r2 = calibrate_to_arl(&CalibrationSettings::threshold(100.0), |h| Ok((h * h).min(400.0))).unwrap();
        assert!(r2.knob > r.knob);
    }

    #[test]
    fn non_bracketing_start_fails() {
        let s = CalibrationSettings::threshold(50.0);
        let err = calibrate_to_arl(&s, |_| Ok(1000.0)).unwrap_err();
        assert!(matches!(err, Error::CalibrationFailed(_)));
        let mut bad = s;
        bad.bracket = (1.0, f64::INFINITY);
        assert!(calibrate_to_arl(&bad, Ok).is_err());
    }
}
