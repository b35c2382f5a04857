//! Maximum marginal-likelihood estimation of the range and nugget.
//!
//! Each training series keeps its own integrated mean and variance; the range
//! and nugget are shared. The search runs on `(log γ, log η)` inside a box:
//! a coarse grid picks starting cells and a Nelder–Mead simplex refines each.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::SegmentAccumulator;
use crate::temporal_model::{KernelFamily, KernelSpec, TimeGrid};

/// Shortest series the integrated likelihood accepts.
pub const MIN_TRAINING_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSeries {
    grid: TimeGrid,
    values: Vec<f64>,
}

impl TrainingSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if values.len() < MIN_TRAINING_LEN {
            return Err(Error::InvalidInput(format!(
                "training series needs at least {MIN_TRAINING_LEN} observations, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite training value {v}")));
        }
        Ok(Self { grid: TimeGrid::new(times)?, values })
    }

    /// Drops missing values; the filter treats a gap as a longer spacing.
    pub fn from_observed(times: &[f64], values: &[Option<f64>]) -> Result<Self> {
        let (t, y): (Vec<f64>, Vec<f64>) = times
            .iter()
            .zip(values)
            .filter_map(|(&t, v)| v.map(|v| (t, v)))
            .unzip();
        Self::new(t, y)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn times(&self) -> &[f64] {
        self.grid.times()
    }

    fn log_marginal(&self, kernel: &KernelSpec) -> Result<f64> {
        let b0 = kernel.initial_covariance();
        let mut acc = SegmentAccumulator::open(1, &b0, kernel.nugget, self.values[0])?;
        for (d, &y) in self.grid.spacings().zip(&self.values[1..]) {
            acc.advance(&kernel.transition(d)?, y)?;
        }
        Ok(acc.sums().log_integrated_marginal())
    }
}

/// Sum of per-series integrated log marginal likelihoods.
pub fn integrated_marginal_loglik(kernel: &KernelSpec, series: &[TrainingSeries]) -> Result<f64> {
    let parts: Vec<f64> = if series.len() >= 32 {
        series.par_iter().map(|s| s.log_marginal(kernel)).collect::<Result<_>>()?
    } else {
        series.iter().map(|s| s.log_marginal(kernel)).collect::<Result<_>>()?
    };
    // Sequential sum keeps the result independent of thread scheduling.
    Ok(parts.iter().sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub family: KernelFamily,
    pub range_bounds: (f64, f64),
    pub nugget_bounds: (f64, f64),
    pub grid_size: usize,
    pub restarts: usize,
    /// Stop when every vertex is within this distance of the best one (log scale).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Extra `(range, nugget)` points evaluated alongside the grid.
    pub probes: Vec<(f64, f64)>,
}

impl EstimatorSettings {
    pub fn new(family: KernelFamily) -> Self {
        Self {
            family,
            range_bounds: (0.1, 1e3),
            nugget_bounds: (1e-4, 1e2),
            grid_size: 8,
            restarts: 5,
            tolerance: 1e-6,
            max_iterations: 500,
            probes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub range: f64,
    pub nugget: f64,
    /// Non-finite evaluations are recorded as `-inf`.
    pub loglik: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub kernel: KernelSpec,
    pub loglik: f64,
    pub iterations: usize,
    /// True when every restart met the simplex tolerance.
    pub converged: bool,
    pub restarts: usize,
    pub at_range_bound: bool,
    pub at_nugget_bound: bool,
    #[serde(skip)]
    pub trace: Vec<Evaluation>,
}

impl EstimationResult {
    pub fn at_bound(&self) -> bool {
        self.at_range_bound || self.at_nugget_bound
    }
}

struct Objective<'a> {
    family: KernelFamily,
    series: &'a [TrainingSeries],
    lo: [f64; 2],
    hi: [f64; 2],
    trace: Vec<Evaluation>,
}

impl Objective<'_> {
    fn clamp(&self, x: [f64; 2]) -> [f64; 2] {
        [x[0].clamp(self.lo[0], self.hi[0]), x[1].clamp(self.lo[1], self.hi[1])]
    }

    /// Negative log likelihood at a log-scale point, `+inf` when not finite.
    fn cost(&mut self, x: [f64; 2]) -> f64 {
        let (range, nugget) = (x[0].exp(), x[1].exp());
        let ll = KernelSpec::new(self.family, range, nugget)
            .and_then(|k| integrated_marginal_loglik(&k, self.series))
            .ok()
            .filter(|v| v.is_finite())
            .unwrap_or(f64::NEG_INFINITY);
        self.trace.push(Evaluation { range, nugget, loglik: ll });
        -ll
    }
}

pub fn estimate(series: &[TrainingSeries], settings: &EstimatorSettings) -> Result<EstimationResult> {
    if series.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    let (r0, r1) = settings.range_bounds;
    let (e0, e1) = settings.nugget_bounds;
    if !(r0 > 0.0 && r1 > r0 && e0 > 0.0 && e1 > e0) {
        return Err(Error::InvalidParameter("estimation bounds must be positive and ordered".into()));
    }
    if settings.grid_size < 2 {
        return Err(Error::InvalidParameter("grid size must be at least 2".into()));
    }
    let mut obj = Objective {
        family: settings.family,
        series,
        lo: [r0.ln(), e0.ln()],
        hi: [r1.ln(), e1.ln()],
        trace: Vec::new(),
    };

    let g = settings.grid_size;
    let cell = [(obj.hi[0] - obj.lo[0]) / (g - 1) as f64, (obj.hi[1] - obj.lo[1]) / (g - 1) as f64];
    let mut starts: Vec<([f64; 2], f64)> = Vec::with_capacity(g * g);
    for a in 0..g {
        for b in 0..g {
            let x = [obj.lo[0] + cell[0] * a as f64, obj.lo[1] + cell[1] * b as f64];
            let c = obj.cost(x);
            starts.push((x, c));
        }
    }
    for &(r, e) in &settings.probes {
        if r > 0.0 && e > 0.0 {
            let x = obj.clamp([r.ln(), e.ln()]);
            obj.cost(x);
        }
    }
    starts.sort_by(|a, b| a.1.total_cmp(&b.1));

    let mut iterations = 0;
    let mut converged = true;
    let mut restarts = 0;
    for &(x0, c0) in starts.iter().take(settings.restarts) {
        if !c0.is_finite() {
            continue;
        }
        restarts += 1;
        let step = [cell[0] * 0.5, cell[1] * 0.5];
        let (it, ok) = nelder_mead(&mut obj, x0, step, settings.tolerance, settings.max_iterations);
        iterations += it;
        converged &= ok;
    }

    let best = obj
        .trace
        .iter()
        .copied()
        .filter(|e| e.loglik.is_finite())
        .fold(None, |acc: Option<Evaluation>, e| match acc {
            Some(b) if b.loglik >= e.loglik => Some(b),
            _ => Some(e),
        })
        .ok_or_else(|| Error::EstimationFailed("no finite likelihood evaluation".into()))?;

    let near = |v: f64, bound: f64| (v.ln() - bound.ln()).abs() < 1e-3;
    Ok(EstimationResult {
        kernel: KernelSpec::new(settings.family, best.range, best.nugget)?,
        loglik: best.loglik,
        iterations,
        converged,
        restarts,
        at_range_bound: near(best.range, r0) || near(best.range, r1),
        at_nugget_bound: near(best.nugget, e0) || near(best.nugget, e1),
        trace: obj.trace,
    })
}

/// Box-constrained Nelder–Mead minimization; points are projected into the box.
fn nelder_mead(
    obj: &mut Objective<'_>,
    x0: [f64; 2],
    step: [f64; 2],
    tol: f64,
    max_iter: usize,
) -> (usize, bool) {
    let mut simplex: Vec<([f64; 2], f64)> = Vec::with_capacity(3);
    simplex.push((x0, obj.cost(x0)));
    for d in 0..2 {
        let mut x = x0;
        x[d] += step[d];
        if x[d] > obj.hi[d] {
            x[d] = x0[d] - step[d];
        }
        let x = obj.clamp(x);
        simplex.push((x, obj.cost(x)));
    }

    let lerp = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for it in 0..max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].0;
        let diameter = simplex[1..]
            .iter()
            .map(|(x, _)| ((x[0] - best[0]).powi(2) + (x[1] - best[1]).powi(2)).sqrt())
            .fold(0.0, f64::max);
        if diameter < tol {
            return (it, true);
        }
        let centroid = [
            (simplex[0].0[0] + simplex[1].0[0]) / 2.0,
            (simplex[0].0[1] + simplex[1].0[1]) / 2.0,
        ];
        let worst = simplex[2];
        let xr = obj.clamp(lerp(centroid, worst.0, -1.0));
        let fr = obj.cost(xr);
        if fr < simplex[0].1 {
            let xe = obj.clamp(lerp(centroid, worst.0, -2.0));
            let fe = obj.cost(xe);
            simplex[2] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[1].1 {
            simplex[2] = (xr, fr);
            continue;
        }
        let (xc, fc) = if fr < worst.1 {
            let x = lerp(centroid, xr, 0.5);
            (x, obj.cost(x))
        } else {
            let x = lerp(centroid, worst.0, 0.5);
            (x, obj.cost(x))
        };
        if fc < worst.1.min(fr) {
            simplex[2] = (xc, fc);
            continue;
        }
        for vertex in &mut simplex[1..] {
            let x = lerp(best, vertex.0, 0.5);
            *vertex = (x, obj.cost(x));
        }
    }
    (max_iter, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::temporal_model::{dense_covariance, sample_gp, GpSegmentModel};
    use nalgebra::DVector;
    use rand::Rng;
    use statrs::function::gamma::ln_gamma;

    fn dense_log_marginal(kernel: &KernelSpec, s: &TrainingSeries) -> f64 {
        let k = dense_covariance(kernel, &TimeGrid::new(s.times().to_vec()).unwrap());
        let n = s.len();
        let chol = k.cholesky().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let y = DVector::from_column_slice(s.values());
        let ki1 = chol.solve(&ones);
        let kiy = chol.solve(&y);
        let (suu, suv, svv) = (ones.dot(&ki1), y.dot(&ki1), y.dot(&kiy));
        let qf = svv - suv * suv / suu;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let a = (n as f64 - 1.0) / 2.0;
        -0.5 * logdet - 0.5 * suu.ln() - a * qf.ln() + ln_gamma(a) - a * std::f64::consts::PI.ln()
    }

    fn simulated(kernel: KernelSpec, count: usize, n: usize, seed: u64) -> Vec<TrainingSeries> {
        let mut rng = seeded(seed);
        let grid = TimeGrid::regular(n, 0.0, 1.0).unwrap();
        (0..count)
            .map(|_| {
                let mean = rng.random_range(-2.0..2.0);
                let m = GpSegmentModel::new(mean, rng.random_range(0.5..2.0), kernel).unwrap();
                let y = sample_gp(&m, &grid, &mut rng).unwrap();
                TrainingSeries::new(grid.times().to_vec(), y).unwrap()
            })
            .collect()
    }

    #[test]
    fn loglik_matches_dense_oracle() {
        let k = KernelSpec::matern52(4.0, 0.1).unwrap();
        let mut rng = seeded(3);
        let mut t = 0.0;
        let times: Vec<f64> = (0..40)
            .map(|_| {
                t += rng.random_range(0.3..1.7);
                t
            })
            .collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s = TrainingSeries::new(times, y).unwrap();
        let ll = integrated_marginal_loglik(&k, std::slice::from_ref(&s)).unwrap();
        assert!((ll - dense_log_marginal(&k, &s)).abs() < 1e-6);
    }

    #[test]
    fn loglik_location_and_scale_behaviour() {
        let k = KernelSpec::matern12(12.0, 0.1).unwrap();
        let s = &simulated(k, 1, 30, 9)[0];
        let base = integrated_marginal_loglik(&k, std::slice::from_ref(s)).unwrap();
        let shifted =
            TrainingSeries::new(s.times().to_vec(), s.values().iter().map(|v| v + 17.0).collect()).unwrap();
        let c: f64 = 3.5;
        let scaled =
            TrainingSeries::new(s.times().to_vec(), s.values().iter().map(|v| v * c).collect()).unwrap();
        let ls = integrated_marginal_loglik(&k, &[shifted]).unwrap();
        let lc = integrated_marginal_loglik(&k, &[scaled]).unwrap();
        assert!((ls - base).abs() < 1e-9);
        assert!((lc - base + 29.0 * c.ln()).abs() < 1e-9);
    }

    #[test]
    fn short_series_rejected() {
        assert!(TrainingSeries::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(estimate(&[], &EstimatorSettings::new(KernelFamily::Matern12)).is_err());
    }

    #[test]
    fn estimate_beats_truth_and_every_evaluated_point() {
        let truth = KernelSpec::matern12(12.0, 0.1).unwrap();
        let data = simulated(truth, 20, 50, 77);
        let mut settings = EstimatorSettings::new(KernelFamily::Matern12);
        settings.probes.push((12.0, 0.1));
        let r = estimate(&data, &settings).unwrap();
        let at_truth = integrated_marginal_loglik(&truth, &data).unwrap();
        assert!(r.loglik >= at_truth);
        assert!(r.trace.iter().all(|e| e.loglik <= r.loglik));
        assert!(r.restarts == 5);
        let again = estimate(&data, &settings).unwrap();
        assert_eq!(r.kernel, again.kernel);
    }

    #[test]
    fn flat_series_reports_a_bound() {
        let s = TrainingSeries::new((0..20).map(f64::from).collect(), vec![1.5; 20]).unwrap();
        let r = estimate(&[s], &EstimatorSettings::new(KernelFamily::Matern12)).unwrap();
        assert!(r.at_bound(), "{r:?}");
    }
}
