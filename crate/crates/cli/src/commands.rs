//! Subcommand bodies. Each reads its inputs, writes artifacts under the
//! output directory and returns the JSON summary printed to stdout.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use affordem::dataset::{crop_window, read_label_png, write_label_png};
use affordem::metrics::EvalReport;
use affordem::pose::{fit_label_regressors, CvResult};
use affordem::protocol::{crop_all, predict_labelmaps, split_by_actor, train_supervised, weak_inputs, weak_split};
use affordem::{
    generate_dataset, iou_report, load_dataset, prepare_em_records, run_em, transfer_keypoints, write_dataset,
    Aggregation, Dataset, DatasetRecord, EmOutput, EstepVariant, KeypointRegressor, LabelId, LabelMap, PixelScorer,
    Protocol,
};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::Failure;

type Outcome = Result<Value, Failure>;

pub fn synth_gen(config: &RunConfig, out: &Path) -> Outcome {
    let ds = generate_dataset(&config.scene, config.count)?;
    let manifest = write_dataset(&ds, out)?;
    Ok(json!({ "records": ds.records.len(), "manifest": manifest }))
}

fn load(config: &RunConfig) -> Result<Dataset, Failure> {
    let root = config
        .data
        .as_ref()
        .ok_or_else(|| Failure::Usage("no dataset given (--data or `data` in the config)".into()))?;
    Ok(load_dataset(root, Path::new(&config.manifest))?)
}

/// Cropped training and test records plus the originals, keyed by id.
struct Prepared {
    dataset: Dataset,
    originals: BTreeMap<String, DatasetRecord>,
    train: Vec<DatasetRecord>,
    test: Vec<DatasetRecord>,
}

fn prepare(config: &RunConfig) -> Result<Prepared, Failure> {
    let dataset = load(config)?;
    let e = &config.experiment;
    let cropped = crop_all(&dataset.records, e.crop_margin);
    let (train, test) = split_by_actor(&cropped, &e.test_actors);
    if train.is_empty() {
        return Err(Failure::Data("the actor split leaves no training records".into()));
    }
    let originals = dataset.records.iter().map(|r| (r.id.clone(), r.clone())).collect();
    Ok(Prepared {
        dataset,
        originals,
        train,
        test,
    })
}

/// Pastes a crop-frame labeling back into the full frame of `original`.
fn uncrop(map: &LabelMap, original: &DatasetRecord, margin: usize) -> LabelMap {
    let win = crop_window(original, margin);
    let (w, h) = (original.width(), original.height());
    let mut labels = vec![affordem::BACKGROUND; w * h];
    for y in 0..win.height {
        for x in 0..win.width {
            labels[(y + win.top) * w + x + win.left] = map.get(x, y);
        }
    }
    LabelMap::new(w, h, labels).expect("window lies inside the image")
}

fn write_maps(dir: &Path, maps: &[(String, LabelMap)]) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (id, map) in maps {
        write_label_png(map, &dir.join(format!("{id}.png")))?;
    }
    Ok(())
}

/// Scores the scorer on the pixel-annotated test records and writes their
/// predictions (full frame) to `out/pred`.
fn evaluate_test(p: &Prepared, scorer: &PixelScorer, config: &RunConfig, out: &Path) -> Result<Option<Value>, Failure> {
    let test: Vec<DatasetRecord> = p.test.iter().filter(|r| r.label_map().is_some()).cloned().collect();
    if test.is_empty() {
        return Ok(None);
    }
    let preds = predict_labelmaps(scorer, &test)?;
    let truths: Vec<LabelMap> = test.iter().map(|r| r.label_map().unwrap().clone()).collect();
    let report = iou_report(&preds, &truths, p.dataset.num_labels(), config.experiment.aggregation)?;
    let margin = config.experiment.crop_margin;
    let full: Vec<(String, LabelMap)> = test
        .iter()
        .zip(&preds)
        .map(|(r, m)| (r.id.clone(), uncrop(m, &p.originals[&r.id], margin)))
        .collect();
    write_maps(&out.join("pred"), &full)?;
    let value = report.to_json(&p.dataset.names);
    write_json(&out.join("report.json"), &value)?;
    Ok(Some(value))
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn train_supervised_cmd(config: &RunConfig, out: &Path) -> Outcome {
    let p = prepare(config)?;
    let train: Vec<DatasetRecord> = p.train.iter().filter(|r| r.label_map().is_some()).cloned().collect();
    if train.is_empty() {
        return Err(Failure::Data("no pixel-annotated training records".into()));
    }
    let trained = train_supervised(&train, p.dataset.num_labels(), &config.experiment.supervised)?;
    trained.scorer.save(&out.join("scorer.txt"))?;
    let report = evaluate_test(&p, &trained.scorer, config, out)?;
    Ok(json!({
        "train_records": train.len(),
        "final_loss": trained.loss_trace.last(),
        "report": report,
    }))
}

fn em_summary(em: &EmOutput) -> Value {
    json!({
        "iterations": em.iterations(),
        "final_loss": em.final_loss,
        "trace": em.state.trace,
    })
}

/// Runs EM on `kp` and `il`, writing checkpoints, the final estimates
/// (full frame) and the scorer.
fn run_weak(
    p: &Prepared,
    kp: &[DatasetRecord],
    il: &[DatasetRecord],
    config: &RunConfig,
    out: &Path,
) -> Result<Value, Failure> {
    let em_config = &config.experiment.em;
    let l = p.dataset.num_labels();
    let checkpoints = out.join("em");
    let em = run_em(kp, il, l, em_config, Some(&checkpoints))?;
    em.scorer.save(&out.join("scorer.txt"))?;
    let ids = prepare_em_records(kp, il)?.into_iter().map(|r| r.id);
    let margin = config.experiment.crop_margin;
    let yhat: Vec<(String, LabelMap)> = ids
        .zip(&em.state.estimates)
        .filter_map(|(id, y)| y.as_ref().map(|y| (id.clone(), uncrop(y, &p.originals[&id], margin))))
        .collect();
    write_maps(&out.join("yhat"), &yhat)?;
    write_json(&out.join("trace.json"), &em.state.trace)?;
    let report = evaluate_test(p, &em.scorer, config, out)?;
    Ok(json!({
        "keypoint_records": kp.len(),
        "imagelabel_records": il.len(),
        "em": em_summary(&em),
        "report": report,
    }))
}

pub fn train_weak(config: &RunConfig, out: &Path) -> Outcome {
    let p = prepare(config)?;
    let split = weak_split(&p.train, &config.experiment.keypoint_actors)?;
    if split.keypoints.is_empty() {
        return Err(Failure::Data("no keypoint-annotated training records".into()));
    }
    run_weak(&p, &split.keypoints, &split.image_labels, config, out)
}

fn write_regressors(
    dir: &Path,
    regressors: &BTreeMap<LabelId, KeypointRegressor>,
    cv: &BTreeMap<LabelId, CvResult>,
) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for (z, reg) in regressors {
        reg.save(&dir.join(format!("label_{z}.bin")))?;
    }
    let cv: BTreeMap<String, &CvResult> = cv.iter().map(|(z, c)| (z.to_string(), c)).collect();
    write_json(&dir.join("cv.json"), &cv)
}

fn cv_summary(cv: &BTreeMap<LabelId, CvResult>) -> Value {
    cv.iter()
        .map(|(z, c)| {
            let best = c.table.iter().map(|e| e.mean_error).fold(f64::INFINITY, f64::min);
            (z.to_string(), json!({ "best": c.best, "mean_error": best }))
        })
        .collect::<serde_json::Map<_, _>>()
        .into()
}

pub fn fit_pose(config: &RunConfig, out: &Path) -> Outcome {
    let p = prepare(config)?;
    let e = &config.experiment;
    let split = weak_split(&p.train, &e.keypoint_actors)?;
    let fitted = fit_label_regressors(
        &split.keypoints,
        p.dataset.num_labels(),
        config.pose_input,
        &e.pose.grid,
        e.pose.folds,
        e.pose.seed,
    )?;
    if fitted.is_empty() {
        return Err(Failure::Data("too few keypoint records to fit any regressor".into()));
    }
    let (regs, cv): (BTreeMap<_, _>, BTreeMap<_, _>) =
        fitted.into_iter().map(|(z, (r, c))| ((z, r), (z, c))).unzip();
    write_regressors(&out.join("regressors"), &regs, &cv)?;
    Ok(json!({ "input": config.pose_input, "cross_validation": cv_summary(&cv) }))
}

pub fn transfer(config: &RunConfig, regressors: &Path, out: &Path) -> Outcome {
    let p = prepare(config)?;
    let mut regs = BTreeMap::new();
    for entry in fs::read_dir(regressors)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "bin") {
            let reg = KeypointRegressor::load(&path)?;
            regs.insert(reg.label, reg);
        }
    }
    if regs.is_empty() {
        return Err(Failure::Data(format!("no regressors in {}", regressors.display())));
    }
    let split = weak_split(&p.train, &config.experiment.keypoint_actors)?;
    let transferred = transfer_keypoints(&regs, &split.image_labels)?;
    let moved = transferred.len();
    let mut records = split.keypoints;
    records.extend(transferred);
    records.extend(p.test.iter().cloned());
    let ds = Dataset {
        records,
        ..p.dataset.clone()
    };
    let manifest = write_dataset(&ds, &out.join("dataset"))?;
    Ok(json!({ "transferred": moved, "manifest": manifest }))
}

fn read_maps(dir: &Path) -> Result<BTreeMap<String, LabelMap>, Failure> {
    let mut maps = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "png") {
            let id = path.file_stem().unwrap().to_string_lossy().into_owned();
            maps.insert(id, read_label_png(&path)?);
        }
    }
    Ok(maps)
}

pub fn eval(
    pred: &Path,
    gt: &Path,
    num_labels: Option<usize>,
    names: &[String],
    aggregation: Aggregation,
    out: Option<&Path>,
) -> Outcome {
    let preds = read_maps(pred)?;
    if preds.is_empty() {
        return Err(Failure::Data(format!("no label maps in {}", pred.display())));
    }
    let mut truths = Vec::with_capacity(preds.len());
    for id in preds.keys() {
        let path = gt.join(format!("{id}.png"));
        truths.push(read_label_png(&path)?);
    }
    let preds: Vec<LabelMap> = preds.into_values().collect();
    let observed = preds.iter().chain(&truths).map(|m| m.max_label() as usize).max().unwrap_or(1);
    let l = num_labels.unwrap_or(observed.max(names.len()));
    let report: EvalReport = iou_report(&preds, &truths, l, aggregation)?;
    let value = report.to_json(names);
    if let Some(dir) = out {
        write_json(&dir.join("report.json"), &value)?;
    }
    Ok(value)
}

/// Fit pose regressors, transfer keypoints, train with EM and evaluate.
pub fn pipeline(config: &RunConfig, out: &Path) -> Outcome {
    let p = prepare(config)?;
    let protocol = match config.pose_input {
        affordem::RegressorInput::Pose => Protocol::PoseTransfer,
        affordem::RegressorInput::BoundingBox => Protocol::BoxTransfer,
    };
    let inputs = weak_inputs(&p.train, p.dataset.num_labels(), protocol, &config.experiment)?;
    write_regressors(&out.join("regressors"), &inputs.regressors, &inputs.cross_validation)?;
    let mut summary = run_weak(&p, &inputs.keypoints, &inputs.image_labels, config, out)?;
    summary["cross_validation"] = cv_summary(&inputs.cross_validation);
    Ok(summary)
}

/// Sets the E-step variant from the ablation flags.
pub fn variant(only_gc: bool, only_gm: bool) -> EstepVariant {
    match (only_gc, only_gm) {
        (true, _) => EstepVariant::OnlyGrabcut,
        (_, true) => EstepVariant::OnlyMixture,
        _ => EstepVariant::Full,
    }
}
