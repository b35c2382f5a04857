//! Dense-matrix reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use skfcpd::kalman::{SegmentAccumulator, SegmentSums};
use skfcpd::temporal_model::{build_dlm, KernelFamily, KernelSpec, TimeGrid};
use statrs::function::gamma::ln_gamma;

pub fn matern(family: KernelFamily, range: f64, d: f64) -> f64 {
    let d = d.abs();
    match family {
        KernelFamily::Matern12 => (-d / range).exp(),
        KernelFamily::Matern52 => {
            let s = 5f64.sqrt() * d / range;
            (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

/// Correlation matrix plus nugget on the diagonal.
pub fn covariance(kernel: &KernelSpec, times: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    DMatrix::from_fn(n, n, |a, b| {
        matern(kernel.family, kernel.range, times[a] - times[b]) + if a == b { kernel.nugget } else { 0.0 }
    })
}

/// `1ᵀK⁻¹1`, `yᵀK⁻¹y`, `yᵀK⁻¹1` and `log|K|`.
#[derive(Debug, Clone, Copy)]
pub struct DenseSums {
    pub s_uu: f64,
    pub s_vv: f64,
    pub s_uv: f64,
    pub log_det: f64,
}

pub fn dense_sums(kernel: &KernelSpec, times: &[f64], y: &[f64]) -> DenseSums {
    let k = covariance(kernel, times);
    let chol = k.clone().cholesky().expect("covariance is positive definite");
    let ones = DVector::from_element(y.len(), 1.0);
    let yv = DVector::from_column_slice(y);
    let kinv_1 = chol.solve(&ones);
    let kinv_y = chol.solve(&yv);
    let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    DenseSums { s_uu: ones.dot(&kinv_1), s_vv: yv.dot(&kinv_y), s_uv: yv.dot(&kinv_1), log_det }
}

/// Integrated log marginal under `π(μ, σ²) ∝ 1/σ²`, with one point fixed at 0.
pub fn log_marginal(kernel: &KernelSpec, times: &[f64], y: &[f64]) -> f64 {
    let n = y.len();
    if n <= 1 {
        return 0.0;
    }
    let s = dense_sums(kernel, times, y);
    let qf = s.s_vv - s.s_uv * s.s_uv / s.s_uu;
    let a = (n as f64 - 1.0) / 2.0;
    -0.5 * s.log_det - 0.5 * s.s_uu.ln() - a * qf.ln() + ln_gamma(a) - a * std::f64::consts::PI.ln()
}

/// Kalman sums after each prefix of the series.
pub fn kalman_prefix_sums(kernel: &KernelSpec, times: &[f64], y: &[f64]) -> (Vec<SegmentSums>, Vec<f64>) {
    let grid = TimeGrid::new(times.to_vec()).unwrap();
    let sys = build_dlm(kernel, &grid).unwrap();
    let mut acc = SegmentAccumulator::open(1, &sys.initial_covariance, kernel.nugget, y[0]).unwrap();
    let mut sums = vec![*acc.sums()];
    let mut qs = vec![acc.last_q()];
    for (step, &v) in sys.steps.iter().zip(&y[1..]) {
        let w = acc.advance(step, v).unwrap();
        sums.push(*acc.sums());
        qs.push(w.q);
    }
    (sums, qs)
}

pub fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

pub fn random_kernel<R: Rng>(rng: &mut R, family: KernelFamily) -> KernelSpec {
    KernelSpec::new(family, log_uniform(rng, 0.5, 50.0), log_uniform(rng, 1e-3, 1.0)).unwrap()
}

pub fn random_times<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut t = rng.random_range(-5.0..5.0);
    (0..n)
        .map(|_| {
            t += rng.random_range(0.05..3.0);
            t
        })
        .collect()
}

/// Draw from the dense GP with unit variance and the given mean.
pub fn dense_draw<R: Rng>(rng: &mut R, kernel: &KernelSpec, times: &[f64], mean: f64) -> Vec<f64> {
    let l = covariance(kernel, times).cholesky().unwrap().l();
    let z = DVector::from_iterator(times.len(), (0..times.len()).map(|_| standard_normal(rng)));
    (l * z).iter().map(|v| v + mean).collect()
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller keeps the oracle free of the library's samplers.
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
