//! Full-covariance Gaussian mixtures over RGB colors.

use nalgebra::{Matrix3, Vector3};

use crate::kmeans::kmeans;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MAX_EM_ITERS: usize = 20;
const KMEANS_ITERS: usize = 10;
const LL_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ColorComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    inverse: Matrix3<f64>,
    log_norm: f64,
}

impl ColorComponent {
    fn new(weight: f64, mean: Vector3<f64>, covariance: Matrix3<f64>) -> Self {
        let chol = covariance
            .cholesky()
            .expect("regularized covariance is positive definite");
        let log_det = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        Self {
            weight,
            mean,
            covariance,
            inverse: chol.inverse(),
            log_norm: weight.ln() - 0.5 * (3.0 * LN_2PI + log_det),
        }
    }

    /// `log(weight * N(c; mean, covariance))`.
    fn weighted_log_density(&self, c: &Vector3<f64>) -> f64 {
        let d = c - self.mean;
        self.log_norm - 0.5 * d.dot(&(self.inverse * d))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColorGmm {
    pub components: Vec<ColorComponent>,
}

impl ColorGmm {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn log_likelihood(&self, color: [f64; 3]) -> f64 {
        let c = Vector3::from(color);
        log_sum_exp(self.components.iter().map(|k| k.weighted_log_density(&c)))
    }

    /// Smallest eigenvalue over all component covariances.
    pub fn min_eigenvalue(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.covariance.symmetric_eigenvalues().min())
            .fold(f64::INFINITY, f64::min)
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// A fitted mixture and the objective after seeding and after each EM step.
#[derive(Clone, Debug)]
pub struct ColorGmmFit {
    pub model: ColorGmm,
    /// Penalized log-likelihood `sum_i log p(c_i) - (floor * n / 2) * sum_k tr(inv(cov_k))`.
    pub objective_trace: Vec<f64>,
}

/// Fits a `k`-component mixture (reduced to the pixel count if needed).
///
/// Seeds with k-means++ plus a few Lloyd steps, then runs up to 20 EM steps
/// until the per-pixel objective changes by less than 1e-6. Each covariance is
/// the responsibility-weighted scatter plus `floor * n / n_k` times the
/// identity, so every eigenvalue is at least `floor`.
pub fn fit_color_gmm(pixels: &[[f64; 3]], k: usize, floor: f64, seed: u64) -> ColorGmmFit {
    assert!(!pixels.is_empty(), "color model needs at least one pixel");
    assert!(floor > 0.0, "covariance floor must be positive");
    let n = pixels.len();
    let flat: Vec<f64> = pixels.iter().flatten().copied().collect();
    let km = kmeans(&flat, 3, k.max(1), KMEANS_ITERS, seed);
    let k = km.k();

    // hard responsibilities from k-means start the first M-step
    let mut resp = vec![0.0; n * k];
    for (i, &c) in km.assignments.iter().enumerate() {
        resp[i * k + c] = 1.0;
    }
    let colors: Vec<Vector3<f64>> = pixels.iter().map(|p| Vector3::from(*p)).collect();
    let mut model = m_step(&colors, &resp, k, floor);
    let mut trace = vec![objective(&model, &colors, floor)];

    for _ in 0..MAX_EM_ITERS {
        let k = model.k();
        resp.resize(n * k, 0.0);
        let mut scratch = vec![0.0; k];
        for (i, c) in colors.iter().enumerate() {
            for (s, comp) in scratch.iter_mut().zip(&model.components) {
                *s = comp.weighted_log_density(c);
            }
            let lse = log_sum_exp(scratch.iter().copied());
            for (r, s) in resp[i * k..(i + 1) * k].iter_mut().zip(&scratch) {
                *r = (s - lse).exp();
            }
        }
        model = m_step(&colors, &resp, k, floor);
        let obj = objective(&model, &colors, floor);
        let prev = *trace.last().expect("trace starts nonempty");
        trace.push(obj);
        if (obj - prev).abs() / n as f64 <= LL_TOLERANCE {
            break;
        }
    }
    ColorGmmFit {
        model,
        objective_trace: trace,
    }
}

fn objective(model: &ColorGmm, colors: &[Vector3<f64>], floor: f64) -> f64 {
    let ll: f64 = colors
        .iter()
        .map(|c| log_sum_exp(model.components.iter().map(|k| k.weighted_log_density(c))))
        .sum();
    let penalty: f64 = model.components.iter().map(|c| c.inverse.trace()).sum();
    ll - 0.5 * floor * colors.len() as f64 * penalty
}

fn m_step(colors: &[Vector3<f64>], resp: &[f64], k: usize, floor: f64) -> ColorGmm {
    let n = colors.len() as f64;
    let mut components = Vec::with_capacity(k);
    for c in 0..k {
        let nk: f64 = (0..colors.len()).map(|i| resp[i * k + c]).sum();
        // components without support are dropped
        if nk < 1e-9 {
            continue;
        }
        let mean = colors
            .iter()
            .enumerate()
            .fold(Vector3::zeros(), |acc, (i, x)| acc + x * resp[i * k + c])
            / nk;
        let mut scatter = Matrix3::zeros();
        for (i, x) in colors.iter().enumerate() {
            let d = x - mean;
            scatter += d * d.transpose() * resp[i * k + c];
        }
        let cov = scatter / nk + Matrix3::identity() * (floor * n / nk);
        components.push(ColorComponent::new(nk / n, mean, cov));
    }
    ColorGmm { components }
}
