//! Multinomial logistic pixel scorer.
//!
//! Each pixel's label distribution is the softmax of `theta * normalize(feature)`.
//! Training minimizes the per-pixel averaged negative log likelihood plus an
//! L2 penalty with minibatch SGD and momentum.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{LabelId, LabelMap};
use crate::error::{contract, Error, Result};
use crate::features::FeatureGrid;

const SCORER_HEADER: &str = "affordem-scorer-v1";

/// Per-pixel distributions over labels `1..=L`, stored pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub width: usize,
    pub height: usize,
    pub num_labels: usize,
    pub probs: Vec<f64>,
}

impl Posterior {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distribution at pixel `i`; entry `k` is the probability of label `k + 1`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.probs[i * self.num_labels..(i + 1) * self.num_labels]
    }

    pub fn prob(&self, i: usize, label: LabelId) -> f64 {
        self.probs[i * self.num_labels + label as usize - 1]
    }

    /// Most probable label at pixel `i`, ties resolved toward the smaller id.
    pub fn argmax(&self, i: usize) -> LabelId {
        argmax_label(self.pixel(i))
    }

    pub fn argmax_map(&self) -> LabelMap {
        let labels = (0..self.len()).map(|i| self.argmax(i)).collect();
        LabelMap::new(self.width, self.height, labels).expect("posterior dimensions are valid")
    }
}

pub(crate) fn argmax_label(scores: &[f64]) -> LabelId {
    let mut best = 0;
    for (k, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = k;
        }
    }
    (best + 1) as LabelId
}

/// Anything that yields per-pixel label distributions from features.
pub trait PixelModel {
    fn num_labels(&self) -> usize;
    fn posterior(&self, features: &FeatureGrid) -> Result<Posterior>;
}

/// Weights `theta` (L x F, row-major) plus feature standardization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelScorer {
    num_labels: usize,
    dim: usize,
    weights: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl PixelScorer {
    /// Zero weights with identity normalization.
    pub fn zeros(num_labels: usize, dim: usize) -> Self {
        Self {
            num_labels,
            dim,
            weights: vec![0.0; num_labels * dim],
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn with_parts(
        num_labels: usize,
        dim: usize,
        weights: Vec<f64>,
        mean: Vec<f64>,
        std: Vec<f64>,
    ) -> Result<Self> {
        if num_labels < 1 || dim < 1 {
            return Err(contract("scorer needs at least one label and one feature"));
        }
        if weights.len() != num_labels * dim || mean.len() != dim || std.len() != dim {
            return Err(contract("scorer parameter lengths do not match L x F"));
        }
        if weights.iter().chain(&mean).any(|v| !v.is_finite()) {
            return Err(contract("scorer parameters must be finite"));
        }
        if std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(contract("normalization standard deviations must be positive"));
        }
        Ok(Self {
            num_labels,
            dim,
            weights,
            mean,
            std,
        })
    }

    /// Zero weights with standardization fitted over every training pixel.
    /// Constant features (such as the bias) are left untouched.
    pub fn fit_normalization(num_labels: usize, samples: &[&FeatureGrid]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| contract("cannot fit normalization on zero samples"))?;
        let dim = first.dim;
        let mut sum = vec![0.0; dim];
        let mut sum_sq = vec![0.0; dim];
        let mut n = 0usize;
        for grid in samples {
            if grid.dim != dim {
                return Err(contract("feature dimension differs across samples"));
            }
            for px in grid.values.chunks_exact(dim) {
                for (k, v) in px.iter().enumerate() {
                    sum[k] += v;
                    sum_sq[k] += v * v;
                }
            }
            n += grid.len();
        }
        let mut mean = vec![0.0; dim];
        let mut std = vec![1.0; dim];
        for k in 0..dim {
            let m = sum[k] / n as f64;
            let var = (sum_sq[k] / n as f64 - m * m).max(0.0);
            if var.sqrt() > 1e-9 {
                mean[k] = m;
                std[k] = var.sqrt();
            }
        }
        Self::with_parts(num_labels, dim, vec![0.0; num_labels * dim], mean, std)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn normalization(&self) -> (&[f64], &[f64]) {
        (&self.mean, &self.std)
    }

    fn normalize(&self, grid: &FeatureGrid) -> Vec<f64> {
        grid.values
            .chunks_exact(self.dim)
            .flat_map(|px| {
                px.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| (v - m) / s)
            })
            .collect()
    }

    fn check_dim(&self, grid: &FeatureGrid) -> Result<()> {
        if grid.dim != self.dim {
            return Err(contract(format!(
                "feature dimension {} does not match scorer dimension {}",
                grid.dim, self.dim
            )));
        }
        Ok(())
    }

    /// Serializes into the versioned text-header binary format.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{SCORER_HEADER}")?;
        w.write_all(&(self.num_labels as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in self.weights.iter().chain(&self.mean).chain(&self.std) {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != SCORER_HEADER {
            return Err(contract(format!("unexpected scorer header {:?}", header.trim_end())));
        }
        let num_labels = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        let mut read_vec = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| read_f64(&mut r)).collect()
        };
        let weights = read_vec(num_labels * dim)?;
        let mean = read_vec(dim)?;
        let std = read_vec(dim)?;
        Self::with_parts(num_labels, dim, weights, mean, std)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub(crate) fn read_u64(r: &mut impl std::io::Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

pub(crate) fn read_f64(r: &mut impl std::io::Read) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Softmax of `logits` written into `out`, computed with max subtraction.
/// Returns `log(sum exp(logits))`.
fn softmax_into(logits: &[f64], out: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    max + total.ln()
}

fn logits_into(weights: &[f64], dim: usize, x: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let row = &weights[k * dim..(k + 1) * dim];
        *o = row.iter().zip(x).map(|(w, v)| w * v).sum();
    }
}

/// Per-pixel label posterior (softmax of the linear scores).
pub fn pixel_posterior(scorer: &PixelScorer, features: &FeatureGrid) -> Result<Posterior> {
    scorer.check_dim(features)?;
    let x = scorer.normalize(features);
    let l = scorer.num_labels;
    let mut probs = vec![0.0; features.len() * l];
    let mut logits = vec![0.0; l];
    for (px, out) in x.chunks_exact(scorer.dim).zip(probs.chunks_exact_mut(l)) {
        logits_into(&scorer.weights, scorer.dim, px, &mut logits);
        softmax_into(&logits, out);
    }
    Ok(Posterior {
        width: features.width,
        height: features.height,
        num_labels: l,
        probs,
    })
}

impl PixelModel for PixelScorer {
    fn num_labels(&self) -> usize {
        self.num_labels
    }

    fn posterior(&self, features: &FeatureGrid) -> Result<Posterior> {
        pixel_posterior(self, features)
    }
}

/// Per-pixel averaged negative log likelihood plus `(weight_decay / 2) * |theta|^2`,
/// together with its exact gradient with respect to `theta`.
pub fn loss_and_gradient(
    scorer: &PixelScorer,
    batch: &[(&FeatureGrid, &LabelMap)],
    weight_decay: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(contract("loss needs a nonempty batch"));
    }
    let mut normalized = Vec::with_capacity(batch.len());
    for (grid, labels) in batch {
        scorer.check_dim(grid)?;
        check_labels(grid, labels, scorer.num_labels)?;
        normalized.push(scorer.normalize(grid));
    }
    let items: Vec<(&[f64], &[LabelId])> = normalized
        .iter()
        .zip(batch)
        .map(|(x, (_, labels))| (x.as_slice(), labels.labels()))
        .collect();
    Ok(normalized_loss_and_gradient(scorer, &items, weight_decay))
}

fn check_labels(grid: &FeatureGrid, labels: &LabelMap, num_labels: usize) -> Result<()> {
    if labels.width() != grid.width || labels.height() != grid.height {
        return Err(contract("label map and feature grid sizes differ"));
    }
    if let Some(l) = labels.labels().iter().find(|l| **l as usize > num_labels) {
        return Err(contract(format!("label {l} outside 1..={num_labels}")));
    }
    Ok(())
}

fn normalized_loss_and_gradient(
    scorer: &PixelScorer,
    items: &[(&[f64], &[LabelId])],
    weight_decay: f64,
) -> (f64, Vec<f64>) {
    let (l, dim) = (scorer.num_labels, scorer.dim);
    let mut grad = vec![0.0; l * dim];
    let mut nll = 0.0;
    let mut n_px = 0usize;
    let mut logits = vec![0.0; l];
    let mut probs = vec![0.0; l];
    for (x, labels) in items {
        for (px, y) in x.chunks_exact(dim).zip(labels.iter()) {
            logits_into(&scorer.weights, dim, px, &mut logits);
            let lse = softmax_into(&logits, &mut probs);
            let yk = *y as usize - 1;
            nll += lse - logits[yk];
            probs[yk] -= 1.0;
            for (k, p) in probs.iter().enumerate() {
                let row = &mut grad[k * dim..(k + 1) * dim];
                for (g, v) in row.iter_mut().zip(px) {
                    *g += p * v;
                }
            }
        }
        n_px += labels.len();
    }
    let inv = 1.0 / n_px as f64;
    let mut penalty = 0.0;
    for (g, w) in grad.iter_mut().zip(&scorer.weights) {
        *g = *g * inv + weight_decay * w;
        penalty += w * w;
    }
    (nll * inv + 0.5 * weight_decay * penalty, grad)
}

/// Minibatch SGD settings. `Default` carries the DeepLab-style schedule
/// (batch 6, lr 1e-3 decayed 10x every 2000 iterations, momentum 0.9,
/// weight decay 5e-4, 6000 iterations).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay: f64,
    pub decay_period: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            batch_size: 6,
            learning_rate: 1e-3,
            lr_decay: 0.1,
            decay_period: 2000,
            momentum: 0.9,
            weight_decay: 5e-4,
            iterations: 6000,
            seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.decay_period == 0 {
            return Err(contract("batch size and decay period must be positive"));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(contract("learning-rate decay must lie in (0, 1]"));
        }
        if self.learning_rate < 0.0 || self.momentum < 0.0 || self.weight_decay < 0.0 {
            return Err(contract("learning rate, momentum and weight decay must be nonnegative"));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, iteration: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((iteration / self.decay_period) as i32)
    }
}

/// Result of a training run: the final scorer and the minibatch loss per iteration.
#[derive(Clone, Debug)]
pub struct TrainedScorer {
    pub scorer: PixelScorer,
    pub loss_trace: Vec<f64>,
}

/// Trains a scorer from zero weights, fitting feature normalization on `samples`.
pub fn train_classifier(
    samples: &[(FeatureGrid, LabelMap)],
    num_labels: usize,
    config: &SgdConfig,
) -> Result<TrainedScorer> {
    let grids: Vec<&FeatureGrid> = samples.iter().map(|(f, _)| f).collect();
    let init = PixelScorer::fit_normalization(num_labels, &grids)?;
    refine_classifier(init, samples, config)
}

/// Continues SGD from `scorer`, keeping its normalization statistics.
pub fn refine_classifier(
    scorer: PixelScorer,
    samples: &[(FeatureGrid, LabelMap)],
    config: &SgdConfig,
) -> Result<TrainedScorer> {
    config.validate()?;
    if samples.is_empty() {
        return Err(contract("training needs at least one labeled image"));
    }
    let mut normalized = Vec::with_capacity(samples.len());
    for (grid, labels) in samples {
        scorer.check_dim(grid)?;
        check_labels(grid, labels, scorer.num_labels)?;
        normalized.push(scorer.normalize(grid));
    }

    let mut scorer = scorer;
    let mut velocity = vec![0.0; scorer.weights.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut cursor = order.len();
    let batch = config.batch_size.min(samples.len());
    let mut loss_trace = Vec::with_capacity(config.iterations);

    for it in 0..config.iterations {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            picked.push(order[cursor]);
            cursor += 1;
        }
        let items: Vec<(&[f64], &[LabelId])> = picked
            .iter()
            .map(|&i| (normalized[i].as_slice(), samples[i].1.labels()))
            .collect();
        let (loss, grad) = normalized_loss_and_gradient(&scorer, &items, config.weight_decay);
        if !loss.is_finite() {
            return Err(Error::Numerical(format!("training loss diverged at iteration {it}")));
        }
        loss_trace.push(loss);
        let lr = config.learning_rate_at(it);
        for ((w, v), g) in scorer.weights.iter_mut().zip(&mut velocity).zip(&grad) {
            *v = config.momentum * *v - lr * g;
            *w += *v;
        }
    }
    Ok(TrainedScorer { scorer, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, dim: usize) -> FeatureGrid {
        FeatureGrid {
            width: w,
            height: h,
            dim,
            values: (0..w * h * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn random_labels(rng: &mut ChaCha8Rng, w: usize, h: usize, l: usize) -> LabelMap {
        let labels = (0..w * h).map(|_| rng.random_range(1..=l as u8)).collect();
        LabelMap::new(w, h, labels).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_posterior_and_log_l_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let grid = random_grid(&mut rng, 4, 3, 5);
        let labels = random_labels(&mut rng, 4, 3, 4);
        let scorer = PixelScorer::zeros(4, 5);
        let post = pixel_posterior(&scorer, &grid).unwrap();
        assert!(post.probs.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let (loss, _) = loss_and_gradient(&scorer, &[(&grid, &labels)], 0.0).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn two_label_softmax_closed_form() {
        // logits (a, a + ln 3) give P(label 2) = 0.75
        let grid = FeatureGrid { width: 1, height: 1, dim: 1, values: vec![1.0] };
        let a = 0.37;
        let scorer =
            PixelScorer::with_parts(2, 1, vec![a, a + 3f64.ln()], vec![0.0], vec![1.0]).unwrap();
        let post = pixel_posterior(&scorer, &grid).unwrap();
        assert!((post.prob(0, 2) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_prediction_has_tiny_loss() {
        // margin m with L=2 gives P = 1 / (1 + e^-m); pick m for P = 1 - 1e-12
        let m = ((1.0 - 1e-12) / 1e-12f64).ln();
        let grid = FeatureGrid { width: 2, height: 1, dim: 2, values: vec![1.0, 0.0, 0.0, 1.0] };
        let labels = LabelMap::new(2, 1, vec![1, 2]).unwrap();
        let scorer =
            PixelScorer::with_parts(2, 2, vec![m, 0.0, 0.0, m], vec![0.0; 2], vec![1.0; 2]).unwrap();
        let (loss, _) = loss_and_gradient(&scorer, &[(&grid, &labels)], 0.0).unwrap();
        assert!(loss <= 1e-9, "{loss}");
    }

    #[test]
    fn label_outside_range_is_rejected() {
        let grid = FeatureGrid { width: 1, height: 1, dim: 1, values: vec![1.0] };
        let labels = LabelMap::new(1, 1, vec![3]).unwrap();
        let scorer = PixelScorer::zeros(2, 1);
        assert!(loss_and_gradient(&scorer, &[(&grid, &labels)], 0.0).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let grid = FeatureGrid { width: 1, height: 1, dim: 3, values: vec![1.0; 3] };
        assert!(pixel_posterior(&PixelScorer::zeros(2, 2), &grid).is_err());
    }

    #[test]
    fn serialization_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let weights = (0..12).map(|_| rng.random_range(-2.0..2.0)).collect();
        let scorer = PixelScorer::with_parts(3, 4, weights, vec![0.1; 4], vec![0.5; 4]).unwrap();
        let mut buf = Vec::new();
        scorer.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"affordem-scorer-v1\n"));
        let back = PixelScorer::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, scorer);
    }

    fn toy_samples(n: usize) -> Vec<(FeatureGrid, LabelMap)> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|_| (random_grid(&mut rng, 5, 4, 3), random_labels(&mut rng, 5, 4, 3)))
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_weights_unchanged() {
        let samples = toy_samples(3);
        let cfg = SgdConfig { learning_rate: 0.0, iterations: 20, ..SgdConfig::default() };
        let init = PixelScorer::zeros(3, 3);
        let out = refine_classifier(init.clone(), &samples, &cfg).unwrap();
        assert_eq!(out.scorer, init);
    }

    #[test]
    fn training_is_deterministic_given_seed() {
        let samples = toy_samples(7);
        let cfg = SgdConfig { learning_rate: 0.1, iterations: 50, batch_size: 2, seed: 3, ..SgdConfig::default() };
        let a = train_classifier(&samples, 3, &cfg).unwrap();
        let b = train_classifier(&samples, 3, &cfg).unwrap();
        assert_eq!(a.loss_trace, b.loss_trace);
        assert_eq!(a.scorer, b.scorer);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(train_classifier(&[], 2, &SgdConfig::default()).is_err());
    }

    #[test]
    fn learns_linearly_separable_halves() {
        // label 2 on the left half; the column feature separates it
        let (w, h) = (12, 6);
        let samples: Vec<_> = (0..6)
            .map(|s| {
                let values = (0..w * h)
                    .flat_map(|i| [(i % w) as f64 / w as f64, ((i / w + s) % 3) as f64, 1.0])
                    .collect();
                let labels = (0..w * h).map(|i| if i % w < w / 2 { 2 } else { 1 }).collect();
                (
                    FeatureGrid { width: w, height: h, dim: 3, values },
                    LabelMap::new(w, h, labels).unwrap(),
                )
            })
            .collect();
        let cfg = SgdConfig {
            learning_rate: 0.5,
            iterations: 2000,
            weight_decay: 0.0,
            decay_period: 1000,
            ..SgdConfig::default()
        };
        let trained = train_classifier(&samples, 2, &cfg).unwrap();
        assert!(trained.loss_trace.iter().all(|l| l.is_finite()));
        let (mut correct, mut total) = (0, 0);
        for (f, y) in &samples {
            let pred = pixel_posterior(&trained.scorer, f).unwrap().argmax_map();
            correct += pred.labels().iter().zip(y.labels()).filter(|(a, b)| a == b).count();
            total += y.len();
        }
        assert!(correct as f64 / total as f64 >= 0.99);
    }

    proptest! {
        #[test]
        fn posterior_rows_sum_to_one(seed in any::<u64>(), l in 2usize..8, scale in 0.1f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let grid = random_grid(&mut rng, 3, 3, 4);
            let weights = (0..l * 4).map(|_| rng.random_range(-scale..scale)).collect();
            let scorer = PixelScorer::with_parts(l, 4, weights, vec![0.0; 4], vec![1.0; 4]).unwrap();
            let post = pixel_posterior(&scorer, &grid).unwrap();
            for i in 0..post.len() {
                let s: f64 = post.pixel(i).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-12);
                prop_assert!(post.pixel(i).iter().all(|p| *p > 0.0 && *p <= 1.0));
            }
        }

        #[test]
        fn shifting_all_logits_leaves_posterior_unchanged(seed in any::<u64>(), shift in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // the last feature is a constant 1, so adding `shift` to its weight in
            // every row shifts all logits of each pixel by the same amount
            let mut grid = random_grid(&mut rng, 3, 2, 3);
            for px in grid.values.chunks_exact_mut(3) { px[2] = 1.0; }
            let weights: Vec<f64> = (0..12).map(|_| rng.random_range(-3.0..3.0)).collect();
            let shifted: Vec<f64> = weights.iter().enumerate()
                .map(|(k, w)| if k % 3 == 2 { w + shift } else { *w }).collect();
            let a = PixelScorer::with_parts(4, 3, weights, vec![0.0; 3], vec![1.0; 3]).unwrap();
            let b = PixelScorer::with_parts(4, 3, shifted, vec![0.0; 3], vec![1.0; 3]).unwrap();
            let pa = pixel_posterior(&a, &grid).unwrap();
            let pb = pixel_posterior(&b, &grid).unwrap();
            for (x, y) in pa.probs.iter().zip(&pb.probs) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
