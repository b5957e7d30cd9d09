//! Weakly supervised affordance segmentation.
//!
//! A per-pixel scorer is trained by expectation-maximization from keypoint or
//! image-level annotations: each E-step turns the scorer's argmax regions into
//! GrabCut-refined spatial Gaussian mixtures and re-labels every training
//! image, and each M-step retrains the scorer on those labels. Keypoints for
//! image-label records can be regressed from human pose.

pub mod classifier;
pub mod dataset;
pub mod em;
pub mod error;
pub mod features;
pub mod graphcut;
pub mod kmeans;
pub mod metrics;
pub mod pose;
pub mod protocol;
pub mod spatial;
pub mod synth;

pub use classifier::{
    loss_and_gradient, pixel_posterior, train_classifier, PixelModel, PixelScorer, Posterior, SgdConfig,
    TrainedScorer,
};
pub use dataset::{
    crop_record, load_dataset, write_dataset, Annotation, AnnotationLevel, BoundingBox, Dataset,
    DatasetRecord, ImageLabelSet, Keypoint, LabelId, LabelMap, PixelGrid, PoseVector, BACKGROUND,
};
pub use em::{em_step, estep_all, finish_em, mstep, prepare_em_records, resume_em, run_em, EmConfig, EmOutput, EmRecord, EmState, EstepVariant};
pub use error::{Error, Result};
pub use features::{extract_features, FeatureGrid, FEATURE_DIM};
pub use graphcut::{grabcut_refine, max_flow, FlowNetwork, GrabcutConfig, MaxFlowSolver};
pub use metrics::{iou_report, weighted_f_measure, Aggregation, EvalReport};
pub use pose::{
    cross_validate_regressor, fit_keypoint_regressor, predict_keypoint, transfer_keypoints, KeypointRegressor,
    RegressorInput,
};
pub use protocol::{run_experiment, ExperimentConfig, Protocol};
pub use spatial::{estep_labelmap, estep_posterior, GaussianComponent, SpatialPrior};
pub use synth::{degrade_annotations, generate_dataset, generate_scene, SceneConfig};
