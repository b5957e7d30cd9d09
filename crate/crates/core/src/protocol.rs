//! Experimental protocols: supervised training, keypoint EM, mixed
//! keypoint/image-label EM and pose-based keypoint transfer, each trained on
//! an actor split and scored on the held-out actors.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{pixel_posterior, train_classifier, PixelScorer, SgdConfig, TrainedScorer};
use crate::dataset::{crop_record, AnnotationLevel, Dataset, DatasetRecord, LabelId, LabelMap, DEFAULT_CROP_MARGIN};
use crate::em::{run_em, EmConfig, EmOutput, IterationTrace};
use crate::error::{contract, Result};
use crate::features::extract_features;
use crate::metrics::{iou_report, Aggregation, EvalReport};
use crate::pose::{fit_label_regressors, transfer_keypoints, CvGrid, CvResult, KeypointRegressor, RegressorInput};
use crate::synth::degrade_annotations;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// Full pixel labels on every training record.
    #[default]
    Supervised,
    /// Keypoints on the keypoint actors only.
    KeypointsOnly,
    /// Keypoints on the keypoint actors, image labels on the rest.
    Mixed,
    /// Keypoints on the keypoint actors; the rest get keypoints regressed from pose.
    PoseTransfer,
    /// As `PoseTransfer`, regressing from the object box instead of the pose.
    BoxTransfer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub grid: CvGrid,
    pub folds: usize,
    pub seed: u64,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            grid: CvGrid::default(),
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub crop_margin: usize,
    pub test_actors: Vec<u32>,
    /// Training actors whose records keep keypoint annotations; empty means all.
    pub keypoint_actors: Vec<u32>,
    pub supervised: SgdConfig,
    pub em: EmConfig,
    pub pose: PoseConfig,
    pub aggregation: Aggregation,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            crop_margin: DEFAULT_CROP_MARGIN,
            test_actors: vec![3],
            keypoint_actors: Vec::new(),
            supervised: SgdConfig::default(),
            em: EmConfig::default(),
            pose: PoseConfig::default(),
            aggregation: Aggregation::Global,
        }
    }
}

impl ExperimentConfig {
    /// Schedules sized for the synthetic benchmark on a desktop CPU.
    pub fn desk_scale() -> Self {
        let sgd = SgdConfig {
            learning_rate: 0.05,
            decay_period: 600,
            iterations: 1500,
            ..SgdConfig::default()
        };
        Self {
            supervised: SgdConfig { iterations: 3000, decay_period: 1200, ..sgd.clone() },
            em: EmConfig {
                sgd,
                max_iterations: 6,
                ..EmConfig::default()
            },
            pose: PoseConfig {
                grid: CvGrid {
                    dictionary_sizes: vec![10, 20, 40],
                    gammas: vec![2.0, 5.0, 10.0, 20.0],
                    lambdas: vec![1e-3, 1e-2, 0.1, 1.0],
                },
                folds: 5,
                seed: 0,
            },
            ..Self::default()
        }
    }
}

/// Records of the test actors and the rest.
pub fn split_by_actor(records: &[DatasetRecord], test_actors: &[u32]) -> (Vec<DatasetRecord>, Vec<DatasetRecord>) {
    let (test, train): (Vec<_>, Vec<_>) = records.iter().cloned().partition(|r| test_actors.contains(&r.actor));
    (train, test)
}

pub fn crop_all(records: &[DatasetRecord], margin: usize) -> Vec<DatasetRecord> {
    records.iter().map(|r| crop_record(r, margin)).collect()
}

/// Trains the pixel scorer on pixel-annotated records.
pub fn train_supervised(records: &[DatasetRecord], num_labels: usize, sgd: &SgdConfig) -> Result<TrainedScorer> {
    let data = records
        .par_iter()
        .map(|r| {
            let map = r
                .label_map()
                .ok_or_else(|| contract(format!("record `{}` has no pixel labels", r.id)))?;
            Ok((extract_features(&r.image)?, map.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    train_classifier(&data, num_labels, sgd)
}

/// Argmax labelings of the scorer over each record's image.
pub fn predict_labelmaps(scorer: &PixelScorer, records: &[DatasetRecord]) -> Result<Vec<LabelMap>> {
    records
        .par_iter()
        .map(|r| Ok(pixel_posterior(scorer, &extract_features(&r.image)?)?.argmax_map()))
        .collect()
}

/// Scores the scorer against pixel-annotated records.
pub fn evaluate(
    scorer: &PixelScorer,
    records: &[DatasetRecord],
    num_labels: usize,
    aggregation: Aggregation,
) -> Result<EvalReport> {
    let preds = predict_labelmaps(scorer, records)?;
    let truths = ground_truth(records)?;
    iou_report(&preds, &truths, num_labels, aggregation)
}

pub fn ground_truth(records: &[DatasetRecord]) -> Result<Vec<LabelMap>> {
    records
        .iter()
        .map(|r| {
            r.label_map()
                .cloned()
                .ok_or_else(|| contract(format!("record `{}` has no pixel labels", r.id)))
        })
        .collect()
}

/// Degrades every pixel-annotated record to `level`; others pass through.
pub fn degrade_all(records: &[DatasetRecord], level: AnnotationLevel) -> Result<Vec<DatasetRecord>> {
    records
        .iter()
        .map(|r| match r.label_map() {
            Some(_) => degrade_annotations(r, level),
            None => Ok(r.clone()),
        })
        .collect()
}

/// Training records split into keypoint and image-label parts.
#[derive(Clone, Debug)]
pub struct WeakSplit {
    pub keypoints: Vec<DatasetRecord>,
    pub image_labels: Vec<DatasetRecord>,
}

/// Pixel-annotated records of the keypoint actors are degraded to keypoints,
/// those of everyone else to image labels. Records that arrive weakly
/// annotated keep their level.
pub fn weak_split(train: &[DatasetRecord], keypoint_actors: &[u32]) -> Result<WeakSplit> {
    let mut split = WeakSplit {
        keypoints: Vec::new(),
        image_labels: Vec::new(),
    };
    for r in train {
        let level = match r.annotation.level() {
            AnnotationLevel::Pixel if keypoint_actors.is_empty() || keypoint_actors.contains(&r.actor) => {
                AnnotationLevel::Keypoints
            }
            AnnotationLevel::Pixel => AnnotationLevel::ImageLabels,
            level => level,
        };
        let r = degrade_all(std::slice::from_ref(r), level)?.remove(0);
        match level {
            AnnotationLevel::Keypoints => split.keypoints.push(r),
            _ => split.image_labels.push(r),
        }
    }
    Ok(split)
}

/// EM inputs of a weak protocol, with the regressors fitted on the way.
#[derive(Clone, Debug)]
pub struct WeakInputs {
    pub keypoints: Vec<DatasetRecord>,
    pub image_labels: Vec<DatasetRecord>,
    pub regressors: BTreeMap<LabelId, KeypointRegressor>,
    pub cross_validation: BTreeMap<LabelId, CvResult>,
}

/// Splits the (cropped) training records for `protocol`. The transfer
/// protocols fit one regressor per label on the keypoint records and move
/// every image-label record whose labels all have one to the keypoint side.
pub fn weak_inputs(
    train: &[DatasetRecord],
    num_labels: usize,
    protocol: Protocol,
    config: &ExperimentConfig,
) -> Result<WeakInputs> {
    let split = weak_split(train, &config.keypoint_actors)?;
    let mut out = WeakInputs {
        keypoints: split.keypoints,
        image_labels: Vec::new(),
        regressors: BTreeMap::new(),
        cross_validation: BTreeMap::new(),
    };
    let input = match protocol {
        Protocol::Supervised => return Err(contract("supervised training has no weak inputs")),
        Protocol::KeypointsOnly => return Ok(out),
        Protocol::Mixed => {
            out.image_labels = split.image_labels;
            return Ok(out);
        }
        Protocol::PoseTransfer => RegressorInput::Pose,
        Protocol::BoxTransfer => RegressorInput::BoundingBox,
    };
    let fitted = fit_label_regressors(
        &out.keypoints,
        num_labels,
        input,
        &config.pose.grid,
        config.pose.folds,
        config.pose.seed,
    )?;
    for (z, (reg, cv)) in fitted {
        out.regressors.insert(z, reg);
        out.cross_validation.insert(z, cv);
    }
    let (covered, rest): (Vec<_>, Vec<_>) = split
        .image_labels
        .into_iter()
        .partition(|r| r.image_labels().foreground().all(|z| out.regressors.contains_key(&z)));
    // background-only records come back unchanged and stay image-labelled
    for r in transfer_keypoints(&out.regressors, &covered)? {
        match r.annotation.level() {
            AnnotationLevel::Keypoints => out.keypoints.push(r),
            _ => out.image_labels.push(r),
        }
    }
    out.image_labels.extend(rest);
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub protocol: Protocol,
    pub report: EvalReport,
    pub scorer: PixelScorer,
    pub train_records: usize,
    pub test_records: usize,
    /// EM trace for weak protocols.
    pub em_trace: Vec<IterationTrace>,
    pub em_iterations: usize,
    pub regressors: BTreeMap<LabelId, KeypointRegressor>,
    pub cross_validation: BTreeMap<LabelId, CvResult>,
    pub em: Option<EmOutput>,
}

/// Crops, splits, trains under `protocol` and scores on the held-out actors.
pub fn run_experiment(dataset: &Dataset, protocol: Protocol, config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let l = dataset.num_labels();
    let records = crop_all(&dataset.records, config.crop_margin);
    let (train, test) = split_by_actor(&records, &config.test_actors);
    if train.is_empty() || test.is_empty() {
        return Err(contract("actor split leaves an empty training or test set"));
    }
    let mut out = ExperimentOutput {
        protocol,
        report: EvalReport { iou: Vec::new(), mean_iou: 0.0, wfm: Vec::new(), records: 0 },
        scorer: PixelScorer::zeros(l, 1),
        train_records: train.len(),
        test_records: test.len(),
        em_trace: Vec::new(),
        em_iterations: 0,
        regressors: BTreeMap::new(),
        cross_validation: BTreeMap::new(),
        em: None,
    };
    let scorer = match protocol {
        Protocol::Supervised => train_supervised(&train, l, &config.supervised)?.scorer,
        _ => {
            let inputs = weak_inputs(&train, l, protocol, config)?;
            out.regressors = inputs.regressors;
            out.cross_validation = inputs.cross_validation;
            let em = run_em(&inputs.keypoints, &inputs.image_labels, l, &config.em, None)?;
            out.em_trace = em.state.trace.clone();
            out.em_iterations = em.iterations();
            let scorer = em.scorer.clone();
            out.em = Some(em);
            scorer
        }
    };
    out.report = evaluate(&scorer, &test, l, config.aggregation)?;
    out.scorer = scorer;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, SceneConfig};

    #[test]
    fn actor_split_partitions_records() {
        let ds = generate_dataset(&SceneConfig::default(), 8).unwrap();
        let (train, test) = split_by_actor(&ds.records, &[3]);
        assert_eq!((train.len(), test.len()), (6, 2));
        assert!(test.iter().all(|r| r.actor == 3));
    }

    #[test]
    fn weak_split_degrades_by_actor() {
        let ds = generate_dataset(&SceneConfig::default(), 8).unwrap();
        let split = weak_split(&ds.records, &[0]).unwrap();
        assert_eq!(split.keypoints.len(), 2);
        assert!(split.keypoints.iter().all(|r| r.annotation.level() == AnnotationLevel::Keypoints));
        assert!(split.image_labels.iter().all(|r| r.annotation.level() == AnnotationLevel::ImageLabels));
    }
}
