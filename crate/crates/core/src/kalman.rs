//! Kalman whitening of a single candidate segment.
//!
//! For a segment `y_{i:n}` with covariance `K` (unit signal variance plus
//! nugget), the one-step-ahead innovations of a Kalman filter divided by their
//! standard deviations are exactly `L⁻¹y` for the Cholesky factor `K = LLᵀ`.
//! Running one filter on the data and one on the constant input `1` gives the
//! whitened vectors `v` and `u`, and the three inner products below are all
//! that the integrated likelihood needs:
//!
//! * `S_uu = 1ᵀK⁻¹1`, `S_vv = yᵀK⁻¹y`, `S_uv = yᵀK⁻¹1`
//! * `Σ log Q_k = log|K|`
//!
//! The two filters share their covariance recursion because `Q_k` does not
//! depend on the data.

use nalgebra::{Matrix3, Vector3};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::temporal_model::DlmStep;

/// Predictive variances below this raise a conditioning error.
pub const Q_FLOOR: f64 = 1e-12;

/// Quadratic forms at or below this fraction of `S_vv` are treated as zero.
pub const QF_RELATIVE_ZERO: f64 = 1e-12;

/// Stand-in for a zero quadratic form inside logarithms.
pub const QF_FLOOR: f64 = 1e-300;

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Running scalar summaries of a whitened segment.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SegmentSums {
    /// Number of observations `n'`.
    pub len: usize,
    pub s_uu: f64,
    pub s_vv: f64,
    pub s_uv: f64,
    /// `S_vv - S_uv²/S_uu`, accumulated in a cancellation-free form.
    pub rss: f64,
    /// `Σ log Q_k`.
    pub log_det: f64,
}

impl SegmentSums {
    fn push(&mut self, u: f64, v: f64, q: f64) {
        if self.len == 0 {
            self.rss = 0.0;
        } else {
            let e = v - self.s_uv / self.s_uu * u;
            self.rss += e * e * self.s_uu / (self.s_uu + u * u);
        }
        self.s_uu += u * u;
        self.s_vv += v * v;
        self.s_uv += u * v;
        self.log_det += q.ln();
        self.len += 1;
    }

    /// `yᵀMy` with `M = K⁻¹ - K⁻¹1(1ᵀK⁻¹1)⁻¹1ᵀK⁻¹`.
    pub fn quadratic_form(&self) -> f64 {
        self.rss.max(0.0)
    }

    /// Quadratic form with exact-fit data replaced by [`QF_FLOOR`].
    pub fn floored_quadratic_form(&self) -> f64 {
        let qf = self.quadratic_form();
        if self.s_vv <= 0.0 || qf <= QF_RELATIVE_ZERO * self.s_vv {
            QF_FLOOR
        } else {
            qf
        }
    }

    /// Generalized least squares estimate of the segment mean.
    pub fn gls_mean(&self) -> f64 {
        self.s_uv / self.s_uu
    }

    /// `log p(y | γ, η)` with `μ` and `σ²` integrated out under `π(μ, σ²) ∝ 1/σ²`.
    ///
    /// The improper prior leaves a single observation without a normalizable
    /// density; its value is fixed at 0 so that consecutive differences are
    /// the one-step predictive densities.
    pub fn log_integrated_marginal(&self) -> f64 {
        if self.len <= 1 {
            return 0.0;
        }
        let a = (self.len as f64 - 1.0) / 2.0;
        -0.5 * self.log_det - 0.5 * self.s_uu.ln() - a * self.floored_quadratic_form().ln()
            + ln_gamma(a)
            - a * LN_PI
    }
}

/// Filtered state of both filters at the last processed step.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentAccumulator {
    start: usize,
    mean_u: Vector3<f64>,
    mean_v: Vector3<f64>,
    cov: Matrix3<f64>,
    nugget: f64,
    last_q: f64,
    sums: SegmentSums,
}

/// Whitened elements produced by one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Whitened {
    pub u: f64,
    pub v: f64,
    pub q: f64,
}

impl SegmentAccumulator {
    /// Opens a segment at grid position `start` with first observation `y`.
    ///
    /// `initial_covariance` is the stationary state covariance `B₀`.
    pub fn open(start: usize, initial_covariance: &Matrix3<f64>, nugget: f64, y: f64) -> Result<Self> {
        let mut acc = Self {
            start,
            mean_u: Vector3::zeros(),
            mean_v: Vector3::zeros(),
            cov: Matrix3::zeros(),
            nugget,
            last_q: f64::NAN,
            sums: SegmentSums::default(),
        };
        acc.update(Vector3::zeros(), Vector3::zeros(), *initial_covariance, y)?;
        Ok(acc)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn sums(&self) -> &SegmentSums {
        &self.sums
    }

    pub fn len(&self) -> usize {
        self.sums.len
    }

    pub fn is_empty(&self) -> bool {
        self.sums.len == 0
    }

    pub fn last_q(&self) -> f64 {
        self.last_q
    }

    pub fn quadratic_form(&self) -> f64 {
        self.sums.quadratic_form()
    }

    /// Predict across `step` and update with `y`.
    pub fn advance(&mut self, step: &DlmStep, y: f64) -> Result<Whitened> {
        let g = &step.transition;
        let b_u = g * self.mean_u;
        let b_v = g * self.mean_v;
        let b = g * self.cov * g.transpose() + step.innovation;
        self.update(b_u, b_v, b, y)
    }

    /// Predict-only propagation for a missing observation.
    pub fn skip(&mut self, step: &DlmStep) {
        let g = &step.transition;
        self.mean_u = g * self.mean_u;
        self.mean_v = g * self.mean_v;
        self.cov = g * self.cov * g.transpose() + step.innovation;
    }

    fn update(&mut self, b_u: Vector3<f64>, b_v: Vector3<f64>, b: Matrix3<f64>, y: f64) -> Result<Whitened> {
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite observation {y}")));
        }
        let q = b[(0, 0)] + self.nugget;
        if !(q >= Q_FLOOR) {
            return Err(Error::Conditioning(format!(
                "one-step predictive variance {q:e} at segment starting {} fell below {Q_FLOOR:e}",
                self.start
            )));
        }
        let sd = q.sqrt();
        let e_u = 1.0 - b_u[0];
        let e_v = y - b_v[0];
        let gain: Vector3<f64> = b.column(0) / q;
        self.mean_u = b_u + gain * e_u;
        self.mean_v = b_v + gain * e_v;
        // Joseph form: (I - kF) B (I - kF)ᵀ + η kkᵀ.
        let mut ikf = Matrix3::identity();
        ikf.set_column(0, &(Vector3::x() - gain));
        let c = ikf * b * ikf.transpose() + gain * gain.transpose() * self.nugget;
        self.cov = (c + c.transpose()) * 0.5;
        self.last_q = q;
        let w = Whitened { u: e_u / sd, v: e_v / sd, q };
        self.sums.push(w.u, w.v, q);
        Ok(w)
    }
}
