//! Keypoint transfer from human pose.
//!
//! For each affordance a kernel ridge regressor maps a normalized pose (joint
//! coordinates relative to the object box center, standardized per
//! dimension) to a normalized keypoint. Kernel centers are a k-means
//! dictionary of training poses; features are `exp(-|h - h_d|^2 / gamma^2)`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::read_f64;
use crate::dataset::{Annotation, BoundingBox, DatasetRecord, Keypoint, LabelId};
use crate::error::{contract, Error, Result};
use crate::kmeans::{kmeans, sq_dist};

const REGRESSOR_HEADER: &str = "affordem-regr-v1";
const STD_FLOOR: f64 = 1e-6;
const DICTIONARY_ITERS: usize = 100;

/// What the regressor reads from a record.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegressorInput {
    /// The 2J pose coordinates.
    #[default]
    Pose,
    /// Object box `[left - cx, top - cy, width, height, 0, 0]`, centered like the pose.
    BoundingBox,
}

impl RegressorInput {
    /// Raw input vector with positional entries made relative to the box center.
    pub fn vector(&self, record: &DatasetRecord) -> Result<Vec<f64>> {
        let (cx, cy) = record.bbox.center();
        match self {
            RegressorInput::Pose => {
                let pose = record
                    .pose
                    .as_ref()
                    .ok_or_else(|| contract(format!("record `{}` has no pose", record.id)))?;
                Ok(pose.translated(-cx, -cy).coords().to_vec())
            }
            RegressorInput::BoundingBox => Ok(bbox_vector(&record.bbox)),
        }
    }

    fn code(&self) -> f64 {
        match self {
            RegressorInput::Pose => 0.0,
            RegressorInput::BoundingBox => 1.0,
        }
    }
}

fn bbox_vector(b: &BoundingBox) -> Vec<f64> {
    let (cx, cy) = b.center();
    vec![
        b.left as f64 - cx,
        b.top as f64 - cy,
        b.width as f64,
        b.height as f64,
        0.0,
        0.0,
    ]
}

/// One training example: a record's input and one of its keypoints, both
/// relative to the record's box center.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub record: usize,
    pub input: Vec<f64>,
    pub target: [f64; 2],
}

/// Training pairs for `label` from keypoint-annotated records that have the
/// required input. Each keypoint of the label yields one pair.
pub fn collect_pairs(records: &[DatasetRecord], label: LabelId, input: RegressorInput) -> Vec<TrainingPair> {
    let mut pairs = Vec::new();
    for (k, rec) in records.iter().enumerate() {
        let Ok(x) = input.vector(rec) else { continue };
        let (cx, cy) = rec.bbox.center();
        for kp in rec.keypoints().iter().filter(|p| p.label == label) {
            pairs.push(TrainingPair {
                record: k,
                input: x.clone(),
                target: [kp.x as f64 - cx, kp.y as f64 - cy],
            });
        }
    }
    pairs
}

/// Per-dimension standardization of inputs and targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub target_mean: [f64; 2],
    pub target_std: [f64; 2],
}

impl NormalizationStats {
    pub fn normalize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.input_mean.iter().zip(&self.input_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn normalize_target(&self, t: [f64; 2]) -> [f64; 2] {
        [
            (t[0] - self.target_mean[0]) / self.target_std[0],
            (t[1] - self.target_mean[1]) / self.target_std[1],
        ]
    }

    pub fn denormalize_target(&self, t: [f64; 2]) -> [f64; 2] {
        [
            t[0] * self.target_std[0] + self.target_mean[0],
            t[1] * self.target_std[1] + self.target_mean[1],
        ]
    }
}

fn mean_std(columns: usize, rows: impl Iterator<Item = Vec<f64>> + Clone) -> (Vec<f64>, Vec<f64>) {
    let n = rows.clone().count() as f64;
    let mut mean = vec![0.0; columns];
    for r in rows.clone() {
        for (m, v) in mean.iter_mut().zip(&r) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; columns];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(&r).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    (mean, var.into_iter().map(|v| v.sqrt().max(STD_FLOOR)).collect())
}

/// Normalized data ready for dictionary learning and regression.
#[derive(Clone, Debug)]
pub struct NormalizedPairs {
    /// `T * dim` standardized inputs.
    pub inputs: Vec<f64>,
    pub targets: Vec<[f64; 2]>,
    pub dim: usize,
    pub stats: NormalizationStats,
}

impl NormalizedPairs {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, t: usize) -> &[f64] {
        &self.inputs[t * self.dim..(t + 1) * self.dim]
    }
}

/// Standardizes inputs and targets over `pairs`; needs pairs from at least two records.
pub fn normalize_pose_pairs(pairs: &[TrainingPair]) -> Result<NormalizedPairs> {
    let mut records: Vec<usize> = pairs.iter().map(|p| p.record).collect();
    records.sort_unstable();
    records.dedup();
    if records.len() < 2 {
        return Err(contract("normalization needs pairs from at least two records"));
    }
    let dim = pairs[0].input.len();
    if pairs.iter().any(|p| p.input.len() != dim) {
        return Err(contract("input dimension differs across pairs"));
    }
    let (input_mean, input_std) = mean_std(dim, pairs.iter().map(|p| p.input.clone()));
    let (tm, ts) = mean_std(2, pairs.iter().map(|p| p.target.to_vec()));
    let stats = NormalizationStats {
        input_mean,
        input_std,
        target_mean: [tm[0], tm[1]],
        target_std: [ts[0], ts[1]],
    };
    Ok(NormalizedPairs {
        inputs: pairs.iter().flat_map(|p| stats.normalize_input(&p.input)).collect(),
        targets: pairs.iter().map(|p| stats.normalize_target(p.target)).collect(),
        dim,
        stats,
    })
}

/// k-means dictionary of `min(d, T)` centroids over normalized inputs.
pub fn build_pose_dictionary(inputs: &[f64], dim: usize, d: usize, seed: u64) -> Result<Vec<f64>> {
    if inputs.is_empty() || d == 0 {
        return Err(contract("dictionary needs at least one pose and D >= 1"));
    }
    Ok(kmeans(inputs, dim, d, DICTIONARY_ITERS, seed).centroids)
}

/// RBF responses of `h` to every dictionary entry.
pub fn kernel_features(h: &[f64], dictionary: &[f64], gamma: f64) -> Vec<f64> {
    dictionary
        .chunks_exact(h.len())
        .map(|hd| (-sq_dist(h, hd) / (gamma * gamma)).exp())
        .collect()
}

fn feature_matrix(inputs: &[f64], dim: usize, dictionary: &[f64], gamma: f64) -> DMatrix<f64> {
    let t = inputs.len() / dim;
    let d = dictionary.len() / dim;
    let mut phi = DMatrix::zeros(t, d);
    for (r, h) in inputs.chunks_exact(dim).enumerate() {
        for (c, v) in kernel_features(h, dictionary, gamma).into_iter().enumerate() {
            phi[(r, c)] = v;
        }
    }
    phi
}

/// Ridge weights `alpha = (Phi^T Phi + lambda I)^-1 Phi^T X` as a `D x 2` matrix.
pub fn fit_keypoint_regressor(
    inputs: &[f64],
    targets: &[[f64; 2]],
    dim: usize,
    dictionary: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if targets.is_empty() || inputs.len() != targets.len() * dim {
        return Err(contract("regression needs matching nonempty inputs and targets"));
    }
    if !(gamma > 0.0 && lambda >= 0.0) {
        return Err(contract("gamma must be positive and lambda nonnegative"));
    }
    let phi = feature_matrix(inputs, dim, dictionary, gamma);
    let x = DMatrix::from_fn(targets.len(), 2, |r, c| targets[r][c]);
    solve_ridge(&phi, &x, lambda)
}

fn solve_ridge(phi: &DMatrix<f64>, x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let d = phi.ncols();
    let gram = phi.transpose() * phi + DMatrix::identity(d, d) * lambda;
    let rhs = phi.transpose() * x;
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical(format!(
            "kernel normal equations are not positive definite (lambda = {lambda}); use lambda > 0"
        ))
    })?;
    Ok(chol.solve(&rhs))
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeypointRegressor {
    pub label: LabelId,
    pub input: RegressorInput,
    pub dim: usize,
    /// `D * dim` dictionary entries.
    pub dictionary: Vec<f64>,
    /// `D * 2` row-major weights.
    pub alpha: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
    pub stats: NormalizationStats,
}

impl KeypointRegressor {
    pub fn dictionary_size(&self) -> usize {
        self.dictionary.len() / self.dim
    }

    /// Normalized-space output for a normalized input.
    fn evaluate(&self, h: &[f64]) -> [f64; 2] {
        let phi = kernel_features(h, &self.dictionary, self.gamma);
        let mut out = [0.0; 2];
        for (d, p) in phi.iter().enumerate() {
            out[0] += self.alpha[2 * d] * p;
            out[1] += self.alpha[2 * d + 1] * p;
        }
        out
    }

    /// Keypoint offset from the box center predicted for a raw input vector.
    pub fn predict_offset(&self, raw: &[f64]) -> Result<[f64; 2]> {
        if raw.len() != self.dim {
            return Err(contract(format!(
                "input has {} dimensions, regressor expects {}",
                raw.len(),
                self.dim
            )));
        }
        Ok(self.stats.denormalize_target(self.evaluate(&self.stats.normalize_input(raw))))
    }

    /// Continuous keypoint position for `record`.
    pub fn predict_position(&self, record: &DatasetRecord) -> Result<[f64; 2]> {
        let off = self.predict_offset(&self.input.vector(record)?)?;
        let (cx, cy) = record.bbox.center();
        Ok([off[0] + cx, off[1] + cy])
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{REGRESSOR_HEADER}")?;
        let head = [
            self.label as f64,
            (self.dim / 2) as f64,
            self.dictionary_size() as f64,
            self.gamma,
            self.lambda,
        ];
        let s = &self.stats;
        let code = self.input.code();
        let values = head
            .iter()
            .chain(&s.input_mean)
            .chain(&s.input_std)
            .chain(&s.target_mean)
            .chain(&s.target_std)
            .chain(&self.dictionary)
            .chain(&self.alpha)
            .chain(std::iter::once(&code));
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self> {
        let mut header = String::new();
        r.read_line(&mut header)?;
        if header.trim_end() != REGRESSOR_HEADER {
            return Err(contract(format!("unexpected regressor header {:?}", header.trim_end())));
        }
        let mut next = || read_f64(&mut r);
        let label = next()? as LabelId;
        let dim = 2 * next()? as usize;
        let d = next()? as usize;
        let gamma = next()?;
        let lambda = next()?;
        let mut take = |n: usize| -> Result<Vec<f64>> { (0..n).map(|_| next()).collect() };
        let input_mean = take(dim)?;
        let input_std = take(dim)?;
        let tm = take(2)?;
        let ts = take(2)?;
        let dictionary = take(d * dim)?;
        let alpha = take(2 * d)?;
        let input = match take(1)?[0] as u64 {
            0 => RegressorInput::Pose,
            1 => RegressorInput::BoundingBox,
            other => return Err(contract(format!("unknown regressor input code {other}"))),
        };
        Ok(Self {
            label,
            input,
            dim,
            dictionary,
            alpha,
            gamma,
            lambda,
            stats: NormalizationStats {
                input_mean,
                input_std,
                target_mean: [tm[0], tm[1]],
                target_std: [ts[0], ts[1]],
            },
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.write_to(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Rounds a continuous position to the nearest pixel inside `width x height`.
pub fn clamp_to_image(pos: [f64; 2], width: usize, height: usize) -> (usize, usize) {
    let clamp = |v: f64, n: usize| v.round().clamp(0.0, (n - 1) as f64) as usize;
    (clamp(pos[0], width), clamp(pos[1], height))
}

/// Predicted pixel for `label` in a record, clamped into the image.
pub fn predict_keypoint(regressor: &KeypointRegressor, record: &DatasetRecord) -> Result<Keypoint> {
    let pos = regressor.predict_position(record)?;
    let (x, y) = clamp_to_image(pos, record.width(), record.height());
    Ok(Keypoint {
        label: regressor.label,
        x,
        y,
    })
}

/// Normalizes `pairs`, learns a dictionary and solves for the weights.
pub fn fit_regressor(
    pairs: &[TrainingPair],
    label: LabelId,
    input: RegressorInput,
    params: RegressorParams,
    seed: u64,
) -> Result<KeypointRegressor> {
    let data = normalize_pose_pairs(pairs)?;
    let dictionary = build_pose_dictionary(&data.inputs, data.dim, params.dictionary_size, seed)?;
    let alpha = fit_keypoint_regressor(
        &data.inputs,
        &data.targets,
        data.dim,
        &dictionary,
        params.gamma,
        params.lambda,
    )?;
    Ok(KeypointRegressor {
        label,
        input,
        dim: data.dim,
        dictionary,
        alpha: alpha.transpose().as_slice().to_vec(),
        gamma: params.gamma,
        lambda: params.lambda,
        stats: data.stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressorParams {
    pub dictionary_size: usize,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for RegressorParams {
    /// The values reported for the real dataset.
    fn default() -> Self {
        Self {
            dictionary_size: 200,
            gamma: 10.0,
            lambda: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub dictionary_sizes: Vec<usize>,
    pub gammas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for CvGrid {
    fn default() -> Self {
        Self {
            dictionary_sizes: vec![10, 25, 50, 100, 200],
            gammas: vec![1.0, 2.0, 5.0, 10.0, 20.0],
            lambdas: vec![1e-3, 1e-2, 0.1, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvEntry {
    pub params: RegressorParams,
    /// Mean Euclidean held-out keypoint error in pixels.
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: RegressorParams,
    pub table: Vec<CvEntry>,
}

/// Whether `records` split round-robin into `folds` leaves every training
/// part with at least two records.
fn folds_fit(records: usize, folds: usize) -> bool {
    folds >= 2 && records >= folds && records - records.div_ceil(folds) >= 2
}

/// Record-level k-fold cross-validation over the `(D, gamma, lambda)` grid.
/// Ties prefer the smaller `D`, then the larger `lambda`.
pub fn cross_validate_regressor(
    pairs: &[TrainingPair],
    grid: &CvGrid,
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    if folds < 2 {
        return Err(contract("cross-validation needs at least two folds"));
    }
    if grid.dictionary_sizes.is_empty() || grid.gammas.is_empty() || grid.lambdas.is_empty() {
        return Err(contract("cross-validation grid is empty"));
    }
    let mut records: Vec<usize> = pairs.iter().map(|p| p.record).collect();
    records.sort_unstable();
    records.dedup();
    if !folds_fit(records.len(), folds) {
        return Err(contract(format!(
            "{} records cannot fill {folds} folds with two training records each",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    records.shuffle(&mut rng);
    let fold_of: BTreeMap<usize, usize> = records.iter().enumerate().map(|(k, r)| (*r, k % folds)).collect();

    let combos: Vec<RegressorParams> = grid
        .dictionary_sizes
        .iter()
        .flat_map(|&d| {
            grid.gammas.iter().flat_map(move |&g| {
                grid.lambdas.iter().map(move |&l| RegressorParams {
                    dictionary_size: d,
                    gamma: g,
                    lambda: l,
                })
            })
        })
        .collect();
    let mut error_sum = vec![0.0; combos.len()];
    let mut count = 0usize;

    for fold in 0..folds {
        let (train, test): (Vec<&TrainingPair>, Vec<&TrainingPair>) =
            pairs.iter().partition(|p| fold_of[&p.record] != fold);
        let train: Vec<TrainingPair> = train.into_iter().cloned().collect();
        let data = normalize_pose_pairs(&train)?;
        let test_inputs: Vec<f64> = test.iter().flat_map(|p| data.stats.normalize_input(&p.input)).collect();
        count += test.len();
        for (di, &d) in grid.dictionary_sizes.iter().enumerate() {
            let dictionary = build_pose_dictionary(&data.inputs, data.dim, d, seed ^ (fold as u64) << 8)?;
            for (gi, &gamma) in grid.gammas.iter().enumerate() {
                let phi = feature_matrix(&data.inputs, data.dim, &dictionary, gamma);
                let phi_test = feature_matrix(&test_inputs, data.dim, &dictionary, gamma);
                let x = DMatrix::from_fn(data.len(), 2, |r, c| data.targets[r][c]);
                for (li, &lambda) in grid.lambdas.iter().enumerate() {
                    let k = (di * grid.gammas.len() + gi) * grid.lambdas.len() + li;
                    let alpha = match solve_ridge(&phi, &x, lambda) {
                        Ok(a) => a,
                        Err(_) => {
                            error_sum[k] = f64::INFINITY;
                            continue;
                        }
                    };
                    let pred = &phi_test * &alpha;
                    for (r, p) in test.iter().enumerate() {
                        let out = data.stats.denormalize_target([pred[(r, 0)], pred[(r, 1)]]);
                        error_sum[k] += ((out[0] - p.target[0]).powi(2) + (out[1] - p.target[1]).powi(2)).sqrt();
                    }
                }
            }
        }
    }

    let table: Vec<CvEntry> = combos
        .iter()
        .zip(&error_sum)
        .map(|(params, e)| CvEntry {
            params: *params,
            mean_error: e / count as f64,
        })
        .collect();
    let best = table
        .iter()
        .min_by(|a, b| {
            a.mean_error
                .total_cmp(&b.mean_error)
                .then(a.params.dictionary_size.cmp(&b.params.dictionary_size))
                .then(b.params.lambda.total_cmp(&a.params.lambda))
        })
        .expect("grid is nonempty")
        .params;
    Ok(CvResult { best, table })
}

/// Replaces each image-label record's annotation with one predicted keypoint
/// per foreground label. Records whose label set is background-only pass through.
pub fn transfer_keypoints(
    regressors: &BTreeMap<LabelId, KeypointRegressor>,
    records: &[DatasetRecord],
) -> Result<Vec<DatasetRecord>> {
    records
        .iter()
        .map(|rec| {
            let labels = match &rec.annotation {
                Annotation::ImageLabels(l) => l.clone(),
                _ => {
                    return Err(contract(format!(
                        "record `{}` is not annotated with image labels",
                        rec.id
                    )))
                }
            };
            if labels.foreground().next().is_none() {
                return Ok(rec.clone());
            }
            let missing: Vec<LabelId> = labels.foreground().filter(|z| !regressors.contains_key(z)).collect();
            if !missing.is_empty() {
                return Err(contract(format!("no keypoint regressor for labels {missing:?}")));
            }
            let keypoints = labels
                .foreground()
                .map(|z| predict_keypoint(&regressors[&z], rec))
                .collect::<Result<Vec<_>>>()?;
            Ok(DatasetRecord {
                annotation: Annotation::Keypoints { keypoints, labels },
                ..rec.clone()
            })
        })
        .collect()
}

/// Cross-validates and fits one regressor per label that has training pairs
/// from at least `folds` records.
pub fn fit_label_regressors(
    records: &[DatasetRecord],
    num_labels: usize,
    input: RegressorInput,
    grid: &CvGrid,
    folds: usize,
    seed: u64,
) -> Result<BTreeMap<LabelId, (KeypointRegressor, CvResult)>> {
    let mut out = BTreeMap::new();
    for z in 2..=num_labels as LabelId {
        let pairs = collect_pairs(records, z, input);
        let mut distinct: Vec<usize> = pairs.iter().map(|p| p.record).collect();
        distinct.dedup();
        if !folds_fit(distinct.len(), folds) {
            continue;
        }
        let cv = cross_validate_regressor(&pairs, grid, folds, seed ^ z as u64)?;
        let reg = fit_regressor(&pairs, z, input, cv.best, seed ^ z as u64)?;
        out.insert(z, (reg, cv));
    }
    Ok(out)
}
