//! Expectation-maximization over weakly annotated images.
//!
//! The latent variable is each training image's pixel labeling. Keypoint
//! records start from one isotropic Gaussian per keypoint; every iteration
//! then trains the pixel scorer on the current point estimates (M-step) and
//! re-estimates them from the scorer's argmax regions through GrabCut and a
//! per-region spatial mixture (E-step).

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{refine_classifier, train_classifier, PixelModel, PixelScorer, SgdConfig};
use crate::dataset::{
    write_label_png, Annotation, DatasetRecord, ImageLabelSet, Keypoint, LabelId, LabelMap,
    PixelGrid, BACKGROUND,
};
use crate::error::{contract, Result};
use crate::features::{extract_features, FeatureGrid};
use crate::graphcut::GrabcutConfig;
use crate::spatial::{
    class_mask, estep_labelmap, extract_class_regions, fit_spatial_mixture, GaussianComponent,
    SpatialPrior, DEFAULT_BACKGROUND_DENSITY, DEFAULT_COVARIANCE_FLOOR,
};

/// How the E-step turns the scorer's output into a point estimate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstepVariant {
    /// GrabCut-refined regions feed the spatial mixtures.
    #[default]
    Full,
    /// The GrabCut masks are the estimate; foreground pixels take the most
    /// probable label among the classes whose mask covers them.
    OnlyGrabcut,
    /// Mixtures are fitted to the raw argmax regions without GrabCut.
    OnlyMixture,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    /// Variance (px^2) of the isotropic Gaussian placed on each keypoint.
    pub init_variance: f64,
    pub max_iterations: usize,
    /// Stop once fewer than this fraction of pixels change between iterations.
    pub change_threshold: f64,
    /// SGD schedule of every M-step.
    pub sgd: SgdConfig,
    pub background_density: f64,
    pub covariance_floor: f64,
    pub grabcut: GrabcutConfig,
    pub variant: EstepVariant,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            init_variance: 40.0,
            max_iterations: 10,
            change_threshold: 0.01,
            sgd: SgdConfig::default(),
            background_density: DEFAULT_BACKGROUND_DENSITY,
            covariance_floor: DEFAULT_COVARIANCE_FLOOR,
            grabcut: GrabcutConfig::default(),
            variant: EstepVariant::Full,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_variance > 0.0 && self.background_density > 0.0 && self.covariance_floor > 0.0) {
            return Err(contract("variances and background density must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(contract("EM needs at least one iteration"));
        }
        if !(self.change_threshold > 0.0 && self.change_threshold <= 1.0) {
            return Err(contract("change threshold must lie in (0, 1]"));
        }
        self.sgd.validate()?;
        self.grabcut.validate()
    }

    /// SGD schedule of the M-step that opens iteration `round + 1`.
    pub fn mstep_config(&self, round: usize) -> SgdConfig {
        SgdConfig {
            seed: self.sgd.seed ^ self.seed.rotate_left(17) ^ (round as u64).wrapping_mul(0x9e37_79b9),
            ..self.sgd.clone()
        }
    }

    fn grabcut_config(&self) -> GrabcutConfig {
        GrabcutConfig {
            seed: self.grabcut.seed ^ self.seed,
            ..self.grabcut.clone()
        }
    }
}

/// A training image prepared for EM.
#[derive(Clone, Debug)]
pub struct EmRecord {
    pub id: String,
    pub image: PixelGrid,
    pub features: FeatureGrid,
    pub labels: ImageLabelSet,
    /// Empty for image-label records.
    pub keypoints: Vec<Keypoint>,
    pub has_keypoints: bool,
}

impl EmRecord {
    pub fn from_record(record: &DatasetRecord) -> Result<Self> {
        let (keypoints, has_keypoints) = match &record.annotation {
            Annotation::Keypoints { keypoints, .. } => (keypoints.clone(), true),
            Annotation::ImageLabels(_) => (Vec::new(), false),
            Annotation::Pixel(_) => {
                return Err(contract(format!(
                    "record `{}` is pixel-annotated; degrade it before weak training",
                    record.id
                )))
            }
        };
        Ok(Self {
            id: record.id.clone(),
            image: record.image.clone(),
            features: extract_features(&record.image)?,
            labels: record.image_labels(),
            keypoints,
            has_keypoints,
        })
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }
}

/// One isotropic Gaussian per keypoint, weights split evenly within a label,
/// every keypoint pinned.
pub fn init_prior_from_keypoints(
    keypoints: &[Keypoint],
    labels: &ImageLabelSet,
    config: &EmConfig,
) -> SpatialPrior {
    let mut prior = SpatialPrior::new(config.background_density);
    for z in labels.foreground() {
        let points: Vec<&Keypoint> = keypoints.iter().filter(|k| k.label == z).collect();
        let w = 1.0 / points.len().max(1) as f64;
        let comps = points
            .iter()
            .map(|k| GaussianComponent::isotropic(w, [k.x as f64, k.y as f64], config.init_variance))
            .collect();
        prior.mixtures.insert(z, comps);
    }
    prior.pinned = keypoints.to_vec();
    prior
}

/// Initial priors for keypoint-annotated records.
pub fn init_priors_from_keypoints(records: &[EmRecord], config: &EmConfig) -> Result<Vec<SpatialPrior>> {
    records
        .iter()
        .map(|r| {
            if !r.has_keypoints {
                return Err(contract(format!("record `{}` has no keypoint annotation", r.id)));
            }
            Ok(init_prior_from_keypoints(&r.keypoints, &r.labels, config))
        })
        .collect()
}

/// Labels of `labels` that own at least one mixture component in `prior`.
fn effective_labels(prior: &SpatialPrior, labels: &ImageLabelSet) -> ImageLabelSet {
    ImageLabelSet::from_labels(
        labels
            .foreground()
            .filter(|z| prior.mixtures.get(z).is_some_and(|m| !m.is_empty())),
    )
}

fn prior_estimate(prior: &SpatialPrior, record: &EmRecord, num_labels: usize) -> Result<LabelMap> {
    estep_labelmap(
        prior,
        &effective_labels(prior, &record.labels),
        record.width(),
        record.height(),
        num_labels,
    )
}

/// Moves one component mean onto each keypoint of `label`, nearest first.
/// Keypoints left without a component get a fresh initialization Gaussian.
fn pin_means(comps: &mut Vec<GaussianComponent>, keypoints: &[Keypoint], label: LabelId, init_variance: f64) {
    let mut taken = vec![false; comps.len()];
    for kp in keypoints.iter().filter(|k| k.label == label) {
        let target = [kp.x as f64, kp.y as f64];
        let nearest = comps
            .iter()
            .enumerate()
            .filter(|(c, _)| !taken[*c])
            .map(|(c, g)| (c, (g.mean[0] - target[0]).powi(2) + (g.mean[1] - target[1]).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((c, _)) => {
                comps[c].mean = target;
                taken[c] = true;
            }
            None => {
                let share = 1.0 / (comps.len() + 1) as f64;
                for g in comps.iter_mut() {
                    g.weight *= 1.0 - share;
                }
                comps.push(GaussianComponent::isotropic(share, target, init_variance));
                taken.push(true);
            }
        }
    }
}

/// Per-iteration record of the optimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub changed_fraction: f64,
    pub mstep_final_loss: f64,
}

#[derive(Clone, Debug)]
pub struct EmState {
    pub scorer: Option<PixelScorer>,
    pub priors: Vec<Option<SpatialPrior>>,
    /// Current point estimate per record; `None` until the record joins.
    pub estimates: Vec<Option<LabelMap>>,
    pub iteration: usize,
    pub trace: Vec<IterationTrace>,
}

impl EmState {
    /// Initial state: keypoint records carry their prior and its estimate,
    /// image-label records wait for a trained scorer.
    pub fn initialize(records: &[EmRecord], num_labels: usize, config: &EmConfig) -> Result<Self> {
        config.validate()?;
        let mut priors = Vec::with_capacity(records.len());
        let mut estimates = Vec::with_capacity(records.len());
        for r in records {
            if r.has_keypoints {
                let prior = init_prior_from_keypoints(&r.keypoints, &r.labels, config);
                estimates.push(Some(prior_estimate(&prior, r, num_labels)?));
                priors.push(Some(prior));
            } else {
                priors.push(None);
                estimates.push(None);
            }
        }
        Ok(Self {
            scorer: None,
            priors,
            estimates,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    pub fn changed_fraction(&self) -> Option<f64> {
        self.trace.last().map(|t| t.changed_fraction)
    }
}

/// Trains (or continues training) the scorer on every record with an estimate.
pub fn mstep(
    scorer: Option<&PixelScorer>,
    records: &[EmRecord],
    estimates: &[Option<LabelMap>],
    num_labels: usize,
    sgd: &SgdConfig,
) -> Result<(PixelScorer, f64)> {
    let samples: Vec<(FeatureGrid, LabelMap)> = records
        .iter()
        .zip(estimates)
        .filter_map(|(r, y)| y.as_ref().map(|y| (r.features.clone(), y.clone())))
        .collect();
    if samples.is_empty() {
        return Err(contract("M-step has no records with a point estimate"));
    }
    let trained = match scorer {
        Some(s) => refine_classifier(s.clone(), &samples, sgd)?,
        None => train_classifier(&samples, num_labels, sgd)?,
    };
    let last = trained.loss_trace.last().copied().unwrap_or(f64::NAN);
    Ok((trained.scorer, last))
}

/// E-step for one record under `scorer`. Returns the new prior (unchanged
/// for the GrabCut-only variant) and point estimate.
pub fn estep_record(
    scorer: &dyn PixelModel,
    record: &EmRecord,
    previous_prior: Option<&SpatialPrior>,
    previous_estimate: Option<&LabelMap>,
    num_labels: usize,
    config: &EmConfig,
) -> Result<(Option<SpatialPrior>, LabelMap)> {
    let posterior = scorer.posterior(&record.features)?;
    let grabcut = config.grabcut_config();
    let (w, h) = (record.width(), record.height());

    if config.variant == EstepVariant::OnlyGrabcut {
        let mut labels = vec![BACKGROUND; w * h];
        let mut best = vec![f64::NEG_INFINITY; w * h];
        for z in record.labels.foreground() {
            let mask = match class_mask(&posterior, z, &record.image, Some(&grabcut))? {
                Some(m) => m,
                None => match previous_estimate {
                    Some(prev) => prev.mask(z),
                    None => continue,
                },
            };
            for (i, m) in mask.iter().enumerate() {
                let p = posterior.prob(i, z);
                if *m && p > best[i] {
                    best[i] = p;
                    labels[i] = z;
                }
            }
        }
        return Ok((previous_prior.cloned(), LabelMap::new(w, h, labels)?));
    }

    let refine = match config.variant {
        EstepVariant::Full => Some(&grabcut),
        _ => None,
    };
    let mut prior = SpatialPrior::new(config.background_density);
    prior.pinned = record.keypoints.clone();
    for z in record.labels.foreground() {
        let regions = extract_class_regions(&posterior, z, &record.image, refine)?;
        let mut comps = fit_spatial_mixture(&regions, w, config.covariance_floor);
        if comps.is_empty() {
            comps = previous_prior
                .and_then(|p| p.mixtures.get(&z).cloned())
                .unwrap_or_default();
        }
        pin_means(&mut comps, &record.keypoints, z, config.init_variance);
        if !comps.is_empty() {
            prior.mixtures.insert(z, comps);
        }
    }
    let estimate = prior_estimate(&prior, record, num_labels)?;
    Ok((Some(prior), estimate))
}

/// One EM iteration: M-step on all current estimates, then an E-step on every
/// record (image-label records join once a scorer exists).
pub fn em_step(state: &EmState, records: &[EmRecord], num_labels: usize, config: &EmConfig) -> Result<EmState> {
    if records.len() != state.estimates.len() {
        return Err(contract("EM state does not match the record list"));
    }
    let (scorer, loss) = mstep(
        state.scorer.as_ref(),
        records,
        &state.estimates,
        num_labels,
        &config.mstep_config(state.iteration),
    )?;
    estep_all(state, scorer, loss, records, num_labels, config)
}

/// E-step half of an iteration under a scorer already fitted to `state`.
pub fn estep_all(
    state: &EmState,
    scorer: PixelScorer,
    mstep_loss: f64,
    records: &[EmRecord],
    num_labels: usize,
    config: &EmConfig,
) -> Result<EmState> {
    if records.len() != state.estimates.len() {
        return Err(contract("EM state does not match the record list"));
    }
    let round = state.iteration;
    let results: Vec<Result<(Option<SpatialPrior>, LabelMap)>> = records
        .par_iter()
        .enumerate()
        .map(|(k, r)| {
            estep_record(
                &scorer,
                r,
                state.priors[k].as_ref(),
                state.estimates[k].as_ref(),
                num_labels,
                config,
            )
        })
        .collect();

    let (mut changed, mut compared) = (0usize, 0usize);
    let mut priors = Vec::with_capacity(records.len());
    let mut estimates = Vec::with_capacity(records.len());
    for (k, res) in results.into_iter().enumerate() {
        let (prior, estimate) = res?;
        if let Some(prev) = &state.estimates[k] {
            changed += prev
                .labels()
                .iter()
                .zip(estimate.labels())
                .filter(|(a, b)| a != b)
                .count();
            compared += prev.len();
        }
        priors.push(prior);
        estimates.push(Some(estimate));
    }
    let mut trace = state.trace.clone();
    trace.push(IterationTrace {
        iteration: round + 1,
        changed_fraction: if compared == 0 { 0.0 } else { changed as f64 / compared as f64 },
        mstep_final_loss: mstep_loss,
    });
    Ok(EmState {
        scorer: Some(scorer),
        priors,
        estimates,
        iteration: round + 1,
        trace,
    })
}

#[derive(Clone, Debug)]
pub struct EmOutput {
    /// Scorer after the final M-step on the converged estimates.
    pub scorer: PixelScorer,
    pub state: EmState,
    pub final_loss: f64,
}

impl EmOutput {
    pub fn iterations(&self) -> usize {
        self.state.iteration
    }
}

/// Runs EM to convergence (or the iteration cap), then fits the scorer once
/// more on the final estimates. Keypoint records come first in the state.
pub fn run_em(
    keypoint_records: &[DatasetRecord],
    imagelabel_records: &[DatasetRecord],
    num_labels: usize,
    config: &EmConfig,
    checkpoints: Option<&Path>,
) -> Result<EmOutput> {
    let records = prepare_em_records(keypoint_records, imagelabel_records)?;
    run_em_prepared(&records, num_labels, config, checkpoints)
}

/// Keypoint records followed by image-label records, with features computed.
pub fn prepare_em_records(
    keypoint_records: &[DatasetRecord],
    imagelabel_records: &[DatasetRecord],
) -> Result<Vec<EmRecord>> {
    if keypoint_records.is_empty() {
        return Err(contract("EM needs at least one keypoint-annotated record"));
    }
    let mut records = Vec::with_capacity(keypoint_records.len() + imagelabel_records.len());
    for r in keypoint_records {
        let prepared = EmRecord::from_record(r)?;
        if !prepared.has_keypoints {
            return Err(contract(format!("record `{}` lacks keypoints", r.id)));
        }
        records.push(prepared);
    }
    for r in imagelabel_records {
        let mut prepared = EmRecord::from_record(r)?;
        prepared.keypoints.clear();
        prepared.has_keypoints = false;
        records.push(prepared);
    }
    Ok(records)
}

pub fn run_em_prepared(
    records: &[EmRecord],
    num_labels: usize,
    config: &EmConfig,
    checkpoints: Option<&Path>,
) -> Result<EmOutput> {
    let state = EmState::initialize(records, num_labels, config)?;
    resume_em(state, records, num_labels, config, checkpoints)
}

/// Continues EM from `state` until convergence or the iteration cap.
pub fn resume_em(
    mut state: EmState,
    records: &[EmRecord],
    num_labels: usize,
    config: &EmConfig,
    checkpoints: Option<&Path>,
) -> Result<EmOutput> {
    while state.iteration < config.max_iterations {
        state = em_step(&state, records, num_labels, config)?;
        if let Some(dir) = checkpoints {
            write_checkpoint(&dir.join(format!("iter_{:02}", state.iteration)), &state, records)?;
        }
        if state.changed_fraction().is_some_and(|f| f < config.change_threshold) {
            break;
        }
    }
    finish_em(state, records, num_labels, config)
}

/// Final M-step on the estimates of `state`.
pub fn finish_em(state: EmState, records: &[EmRecord], num_labels: usize, config: &EmConfig) -> Result<EmOutput> {
    let (scorer, final_loss) = mstep(
        state.scorer.as_ref(),
        records,
        &state.estimates,
        num_labels,
        &config.mstep_config(state.iteration),
    )?;
    Ok(EmOutput {
        scorer,
        state,
        final_loss,
    })
}

/// Writes the scorer, each record's estimate as an indexed PNG and the trace.
pub fn write_checkpoint(dir: &Path, state: &EmState, records: &[EmRecord]) -> Result<()> {
    fs::create_dir_all(dir.join("yhat"))?;
    if let Some(s) = &state.scorer {
        s.save(&dir.join("scorer.bin"))?;
    }
    for (r, y) in records.iter().zip(&state.estimates) {
        if let Some(y) = y {
            write_label_png(y, &dir.join("yhat").join(format!("{}.png", r.id)))?;
        }
    }
    fs::write(dir.join("trace.json"), serde_json::to_string_pretty(&state.trace)?)?;
    Ok(())
}
