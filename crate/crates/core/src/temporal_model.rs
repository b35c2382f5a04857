//! Covariance kernels and their exact state-space (dynamic linear model) forms.
//!
//! Two members of the Matérn family are supported: roughness 1/2 (the
//! exponential kernel) and roughness 5/2. Both admit a finite-dimensional
//! Markov representation, which is what lets the whitening filter in
//! [`crate::kalman`] run in constant time per observation on an arbitrary,
//! unequally spaced time grid.
//!
//! All kernels here have unit signal variance. The nugget `η` is the ratio of
//! observation-noise variance to signal variance, so the covariance of a
//! segment is `K = R + ηI`. Mean and signal variance only appear in
//! [`GpSegmentModel`], which is used for simulation.

use nalgebra::{DMatrix, Matrix3, RowVector3, SymmetricEigen, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Segmentation;

/// Spacings below this are rejected instead of merged.
pub const MIN_SPACING: f64 = 1e-9;

const SQRT_5: f64 = 2.236_067_977_499_79;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// Exponential kernel, `exp(-|d|/γ)`.
    Matern12,
    /// `(1 + √5|d|/γ + 5d²/(3γ²)) exp(-√5|d|/γ)`.
    Matern52,
}

impl KernelFamily {
    pub fn state_dim(self) -> usize {
        match self {
            KernelFamily::Matern12 => 1,
            KernelFamily::Matern52 => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KernelFamily::Matern12 => "matern12",
            KernelFamily::Matern52 => "matern52",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "matern12" | "matern-1/2" | "exponential" | "exp" => Ok(KernelFamily::Matern12),
            "matern52" | "matern-5/2" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidParameter(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Covariance family, range `γ` and nugget `η`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub range: f64,
    pub nugget: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, range: f64, nugget: f64) -> Result<Self> {
        if !(range.is_finite() && range > 0.0) {
            return Err(Error::InvalidParameter(format!("range must be positive, got {range}")));
        }
        if !(nugget.is_finite() && nugget >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "nugget must be nonnegative, got {nugget}"
            )));
        }
        Ok(Self { family, range, nugget })
    }

    pub fn matern12(range: f64, nugget: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern12, range, nugget)
    }

    pub fn matern52(range: f64, nugget: f64) -> Result<Self> {
        Self::new(KernelFamily::Matern52, range, nugget)
    }

    pub fn state_dim(&self) -> usize {
        self.family.state_dim()
    }

    /// Correlation `c(t, t')` at lag `d = t - t'` (no nugget).
    pub fn correlation(&self, d: f64) -> f64 {
        let d = d.abs();
        match self.family {
            KernelFamily::Matern12 => (-d / self.range).exp(),
            KernelFamily::Matern52 => {
                let s = SQRT_5 * d / self.range;
                (1.0 + s + s * s / 3.0) * (-s).exp()
            }
        }
    }

    fn decay_rate(&self) -> f64 {
        match self.family {
            KernelFamily::Matern12 => 1.0 / self.range,
            KernelFamily::Matern52 => SQRT_5 / self.range,
        }
    }

    /// Stationary state covariance `B₀ = P∞`.
    pub fn initial_covariance(&self) -> Matrix3<f64> {
        match self.family {
            KernelFamily::Matern12 => {
                let mut p = Matrix3::zeros();
                p[(0, 0)] = 1.0;
                p
            }
            KernelFamily::Matern52 => {
                let l2 = self.decay_rate().powi(2);
                Matrix3::new(
                    1.0,
                    0.0,
                    -l2 / 3.0,
                    0.0,
                    l2 / 3.0,
                    0.0,
                    -l2 / 3.0,
                    0.0,
                    l2 * l2,
                )
            }
        }
    }

    /// Transition `(G, W)` across a spacing `d > 0`.
    pub fn transition(&self, spacing: f64) -> Result<DlmStep> {
        if !(spacing.is_finite() && spacing >= MIN_SPACING) {
            return Err(Error::InvalidGrid(format!(
                "spacing {spacing} is below the minimum {MIN_SPACING}"
            )));
        }
        Ok(match self.family {
            KernelFamily::Matern12 => {
                let rho = (-spacing / self.range).exp();
                // 1 - ρ² without cancellation for short spacings.
                let w = -(-2.0 * spacing / self.range).exp_m1();
                let mut g = Matrix3::zeros();
                g[(0, 0)] = rho;
                let mut wm = Matrix3::zeros();
                wm[(0, 0)] = w;
                DlmStep { transition: g, innovation: wm }
            }
            KernelFamily::Matern52 => {
                let lambda = self.decay_rate();
                // A has the triple eigenvalue -λ, so N = A + λI is nilpotent and
                // exp(Ad) = e^{-λd}(I + dN + d²N²/2).
                let l2 = lambda * lambda;
                let nil = Matrix3::new(
                    lambda,
                    1.0,
                    0.0,
                    0.0,
                    lambda,
                    1.0,
                    -l2 * lambda,
                    -3.0 * l2,
                    -2.0 * lambda,
                );
                let nil2 = nil * nil;
                let g = (Matrix3::identity() + nil * spacing + nil2 * (0.5 * spacing * spacing))
                    * (-lambda * spacing).exp();
                let p = self.initial_covariance();
                let w = p - g * p * g.transpose();
                DlmStep { transition: g, innovation: symmetrize(&w) }
            }
        })
    }
}

/// Strictly increasing observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::InvalidGrid("time grid is empty".into()));
        }
        if let Some(t) = times.iter().find(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite time {t}")));
        }
        for (k, w) in times.windows(2).enumerate() {
            let d = w[1] - w[0];
            if !(d >= MIN_SPACING) {
                return Err(Error::InvalidGrid(format!(
                    "times must increase by at least {MIN_SPACING}; t[{}]={} then t[{}]={}",
                    k,
                    w[0],
                    k + 1,
                    w[1]
                )));
            }
        }
        Ok(Self { times })
    }

    /// `n` equally spaced points starting at `start`.
    pub fn regular(n: usize, start: f64, spacing: f64) -> Result<Self> {
        Self::new((0..n).map(|k| start + spacing * k as f64).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `d_k = t_k - t_{k-1}` for `k ≥ 1`.
    pub fn spacings(&self) -> impl Iterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        Self::new(self.times[range].to_vec())
    }
}

/// One transition of the latent state: `θ_k = G θ_{k-1} + w`, `w ~ N(0, W)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DlmStep {
    pub transition: Matrix3<f64>,
    pub innovation: Matrix3<f64>,
}

/// Per-step matrices realizing a kernel on a fixed grid.
///
/// States are stored in 3-vectors; the exponential kernel only uses the
/// leading coordinate and leaves the rest identically zero.
#[derive(Debug, Clone)]
pub struct DlmSystem {
    pub kernel: KernelSpec,
    pub state_dim: usize,
    pub observation: RowVector3<f64>,
    pub initial_covariance: Matrix3<f64>,
    /// `steps[k-1]` moves the state from `t_{k-1}` to `t_k`.
    pub steps: Vec<DlmStep>,
    pub nugget: f64,
}

impl DlmSystem {
    pub fn len(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Observation covariance implied by forward propagation of the system.
    pub fn implied_covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let f = self.observation;
        let mut marginals = Vec::with_capacity(n);
        let mut p = self.initial_covariance;
        marginals.push(p);
        for step in &self.steps {
            p = step.transition * p * step.transition.transpose() + step.innovation;
            marginals.push(p);
        }
        let mut k = DMatrix::zeros(n, n);
        for b in 0..n {
            // cross = Φ_{a←b} P_b, advanced one step at a time.
            let mut cross = marginals[b];
            for a in b..n {
                if a > b {
                    cross = self.steps[a - 1].transition * cross;
                }
                let v = (f * cross * f.transpose())[(0, 0)];
                k[(a, b)] = v;
                k[(b, a)] = v;
            }
            k[(b, b)] += self.nugget;
        }
        k
    }
}

pub fn build_dlm(kernel: &KernelSpec, grid: &TimeGrid) -> Result<DlmSystem> {
    let steps = grid
        .spacings()
        .map(|d| kernel.transition(d))
        .collect::<Result<Vec<_>>>()?;
    Ok(DlmSystem {
        kernel: *kernel,
        state_dim: kernel.state_dim(),
        observation: RowVector3::new(1.0, 0.0, 0.0),
        initial_covariance: kernel.initial_covariance(),
        steps,
        nugget: kernel.nugget,
    })
}

/// Dense `K = R + ηI` on the grid.
pub fn dense_covariance(kernel: &KernelSpec, grid: &TimeGrid) -> DMatrix<f64> {
    let t = grid.times();
    let n = t.len();
    DMatrix::from_fn(n, n, |a, b| {
        let c = kernel.correlation(t[a] - t[b]);
        if a == b {
            c + kernel.nugget
        } else {
            c
        }
    })
}

/// A Gaussian-process segment: `y ~ MN(μ1, σ²(R + ηI))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpSegmentModel {
    pub mean: f64,
    pub signal_variance: f64,
    pub kernel: KernelSpec,
}

impl GpSegmentModel {
    pub fn new(mean: f64, signal_variance: f64, kernel: KernelSpec) -> Result<Self> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "signal variance must be positive, got {signal_variance}"
            )));
        }
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!("mean must be finite, got {mean}")));
        }
        Ok(Self { mean, signal_variance, kernel })
    }
}

/// Draw one realization of `model` on `grid`.
///
/// Uses the exact state-space recursion, so the cost is linear in the grid
/// length.
pub fn sample_gp<R: Rng + ?Sized>(
    model: &GpSegmentModel,
    grid: &TimeGrid,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let sd = model.signal_variance.sqrt();
    let noise_sd = model.kernel.nugget.sqrt();
    let init = psd_factor(&model.kernel.initial_covariance())?;
    let mut state = init * standard_normal3(rng);
    let mut out = Vec::with_capacity(grid.len());
    let mut prev_t = grid.times()[0];
    for (k, &t) in grid.times().iter().enumerate() {
        if k > 0 {
            let step = model.kernel.transition(t - prev_t)?;
            let factor = psd_factor(&step.innovation)?;
            state = step.transition * state + factor * standard_normal3(rng);
        }
        prev_t = t;
        let eps: f64 = rng.sample(StandardNormal);
        out.push(model.mean + sd * (state[0] + noise_sd * eps));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Mean,
    Variance,
    Range,
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_end_matches("-shift") {
            "mean" => Ok(ShiftKind::Mean),
            "variance" | "var" => Ok(ShiftKind::Variance),
            "range" | "correlation" => Ok(ShiftKind::Range),
            other => Err(Error::InvalidParameter(format!("unknown shift kind `{other}`"))),
        }
    }
}

/// A simulated series with known changepoints.
///
/// Segments alternate between `pre` and `post`, starting with `pre`; a single
/// changepoint therefore gives one `pre` segment followed by one `post`
/// segment. Changepoints are 1-based indices of the first observation of each
/// new segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub shift_kind: ShiftKind,
    pub pre: GpSegmentModel,
    pub post: GpSegmentModel,
    pub changepoints: Vec<usize>,
    pub times: Vec<f64>,
}

impl Scenario {
    /// Equally spaced grid `1, 2, ..., n`.
    pub fn regular(
        shift_kind: ShiftKind,
        pre: GpSegmentModel,
        post: GpSegmentModel,
        changepoints: Vec<usize>,
        n: usize,
    ) -> Self {
        Self {
            shift_kind,
            pre,
            post,
            changepoints,
            times: (1..=n).map(|t| t as f64).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Independent GP segments concatenated at the scenario's changepoints.
pub fn simulate_scenario<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
) -> Result<(Vec<f64>, Segmentation)> {
    let n = scenario.len();
    let truth = Segmentation::new(n, scenario.changepoints.clone())?;
    let grid = TimeGrid::new(scenario.times.clone())?;
    let mut y = Vec::with_capacity(n);
    for (s, range) in truth.segments().enumerate() {
        let model = if s % 2 == 0 { &scenario.pre } else { &scenario.post };
        let part = grid.slice(range.start - 1..range.end - 1)?;
        y.extend(sample_gp(model, &part, rng)?);
    }
    Ok((y, truth))
}

fn symmetrize(m: &Matrix3<f64>) -> Matrix3<f64> {
    (m + m.transpose()) * 0.5
}

fn standard_normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// `L` with `L Lᵀ = m` for a symmetric PSD `m`; roundoff-negative eigenvalues
/// are clipped to zero.
fn psd_factor(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(1.0);
    let mut roots = Vector3::zeros();
    for (r, &ev) in roots.iter_mut().zip(eig.eigenvalues.iter()) {
        if !ev.is_finite() || ev < -1e-8 * scale {
            return Err(Error::Conditioning(format!(
                "state covariance is not positive semidefinite (eigenvalue {ev})"
            )));
        }
        *r = ev.max(0.0).sqrt();
    }
    Ok(eig.eigenvectors * Matrix3::from_diagonal(&roots))
}
