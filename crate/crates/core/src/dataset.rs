//! Dataset model: images, annotations at the three supervision levels, and
//! the on-disk layout (`images/`, `labelmaps/`, `manifest.json`).

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{contract, invalid, Error, Result};

/// Label ids are 1-based; label 1 is always background.
pub type LabelId = u8;

pub const BACKGROUND: LabelId = 1;

/// Default number of pixels added on each side of the object box before cropping.
pub const DEFAULT_CROP_MARGIN: usize = 30;

/// Row-major image with intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    width: usize,
    height: usize,
    channels: usize,
    values: Vec<f64>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(contract(format!(
                "image dimensions must be positive, got {width}x{height}x{channels}"
            )));
        }
        if values.len() != width * height * channels {
            return Err(contract(format!(
                "expected {} intensities for a {width}x{height}x{channels} image, got {}",
                width * height * channels,
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(contract(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            values,
        })
    }

    /// A constant RGB image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let values = (0..width * height).flat_map(|_| rgb).collect();
        Self::new(width, height, 3, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.values[start..start + self.channels]
    }

    /// RGB triple at flat pixel index `i`. Requires a 3-channel image.
    pub fn rgb(&self, i: usize) -> [f64; 3] {
        let s = i * self.channels;
        [self.values[s], self.values[s + 1], self.values[s + 2]]
    }

    fn crop(&self, win: &CropWindow) -> PixelGrid {
        let mut values = Vec::with_capacity(win.width * win.height * self.channels);
        for y in win.top..win.top + win.height {
            let start = (y * self.width + win.left) * self.channels;
            values.extend_from_slice(&self.values[start..start + win.width * self.channels]);
        }
        PixelGrid {
            width: win.width,
            height: win.height,
            channels: self.channels,
            values,
        }
    }

    pub fn to_rgb8(&self) -> Result<image::RgbImage> {
        if self.channels != 3 {
            return Err(contract("only 3-channel images can be encoded as RGB"));
        }
        let bytes = self.values.iter().map(|v| quantize(*v)).collect();
        Ok(image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer length matches dimensions"))
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Self {
        PixelGrid {
            width: img.width() as usize,
            height: img.height() as usize,
            channels: 3,
            values: img.as_raw().iter().map(|b| *b as f64 / 255.0).collect(),
        }
    }
}

/// Maps an intensity in `[0, 1]` to the nearest 8-bit level.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Row-major per-pixel label ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<LabelId>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<LabelId>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("label map dimensions must be positive"));
        }
        if labels.len() != width * height {
            return Err(contract(format!(
                "expected {} labels for a {width}x{height} map, got {}",
                width * height,
                labels.len()
            )));
        }
        if labels.contains(&0) {
            return Err(contract("label id 0 is not a valid label"));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: LabelId) -> Result<Self> {
        Self::new(width, height, vec![label; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> LabelId {
        self.labels[y * self.width + x]
    }

    pub fn max_label(&self) -> LabelId {
        self.labels.iter().copied().max().unwrap_or(BACKGROUND)
    }

    /// The set of labels present, background always included.
    pub fn label_set(&self) -> ImageLabelSet {
        ImageLabelSet::from_labels(self.labels.iter().copied())
    }

    /// Binary mask of the pixels carrying `label`.
    pub fn mask(&self, label: LabelId) -> Vec<bool> {
        self.labels.iter().map(|l| *l == label).collect()
    }

    fn crop(&self, win: &CropWindow) -> LabelMap {
        let mut labels = Vec::with_capacity(win.width * win.height);
        for y in win.top..win.top + win.height {
            let start = y * self.width + win.left;
            labels.extend_from_slice(&self.labels[start..start + win.width]);
        }
        LabelMap {
            width: win.width,
            height: win.height,
            labels,
        }
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        image::GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer length matches dimensions")
    }
}

/// The classes present in an image. Background is always a member.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ImageLabelSet(BTreeSet<LabelId>);

impl ImageLabelSet {
    pub fn background_only() -> Self {
        Self(BTreeSet::from([BACKGROUND]))
    }

    pub fn from_labels(labels: impl IntoIterator<Item = LabelId>) -> Self {
        let mut set: BTreeSet<LabelId> = labels.into_iter().collect();
        set.insert(BACKGROUND);
        Self(set)
    }

    pub fn contains(&self, label: LabelId) -> bool {
        self.0.contains(&label)
    }

    pub fn iter(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.0.iter().copied()
    }

    /// Labels other than background, ascending.
    pub fn foreground(&self) -> impl Iterator<Item = LabelId> + '_ {
        self.0.iter().copied().filter(|l| *l != BACKGROUND)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// One clicked pixel `(x, y) = (col, row)` marking an instance of `label`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Keypoint {
    pub label: LabelId,
    pub x: usize,
    pub y: usize,
}

/// Joint coordinates `(x_1, y_1, ..., x_J, y_J)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseVector(Vec<f64>);

impl PoseVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || coords.len() % 2 != 0 {
            return Err(contract(format!(
                "pose must hold 2J coordinates, got {}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(contract("pose coordinates must be finite"));
        }
        Ok(Self(coords))
    }

    pub fn num_joints(&self) -> usize {
        self.0.len() / 2
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn joint(&self, j: usize) -> (f64, f64) {
        (self.0[2 * j], self.0[2 * j + 1])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> PoseVector {
        PoseVector(
            self.0
                .chunks_exact(2)
                .flat_map(|p| [p[0] + dx, p[1] + dy])
                .collect(),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl BoundingBox {
    pub fn new(left: usize, top: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(contract("bounding box must have positive size"));
        }
        Ok(Self {
            left,
            top,
            width,
            height,
        })
    }

    /// Continuous center of the box in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.left as f64 + (self.width as f64 - 1.0) / 2.0,
            self.top as f64 + (self.height as f64 - 1.0) / 2.0,
        )
    }

    pub fn right(&self) -> usize {
        self.left + self.width
    }

    pub fn bottom(&self) -> usize {
        self.top + self.height
    }
}

/// The supervision attached to a record.
#[derive(Clone, Debug, PartialEq)]
pub enum Annotation {
    Pixel(LabelMap),
    Keypoints {
        keypoints: Vec<Keypoint>,
        labels: ImageLabelSet,
    },
    ImageLabels(ImageLabelSet),
}

impl Annotation {
    pub fn level(&self) -> AnnotationLevel {
        match self {
            Annotation::Pixel(_) => AnnotationLevel::Pixel,
            Annotation::Keypoints { .. } => AnnotationLevel::Keypoints,
            Annotation::ImageLabels(_) => AnnotationLevel::ImageLabels,
        }
    }

    pub fn image_labels(&self) -> ImageLabelSet {
        match self {
            Annotation::Pixel(map) => map.label_set(),
            Annotation::Keypoints { labels, .. } => labels.clone(),
            Annotation::ImageLabels(labels) => labels.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationLevel {
    Pixel,
    Keypoints,
    ImageLabels,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub id: String,
    pub image: PixelGrid,
    pub annotation: Annotation,
    pub pose: Option<PoseVector>,
    pub bbox: BoundingBox,
    pub actor: u32,
}

impl DatasetRecord {
    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn image_labels(&self) -> ImageLabelSet {
        self.annotation.image_labels()
    }

    pub fn label_map(&self) -> Option<&LabelMap> {
        match &self.annotation {
            Annotation::Pixel(map) => Some(map),
            _ => None,
        }
    }

    pub fn keypoints(&self) -> &[Keypoint] {
        match &self.annotation {
            Annotation::Keypoints { keypoints, .. } => keypoints,
            _ => &[],
        }
    }

    /// Checks every record-level invariant against a label count and joint count.
    pub fn validate(&self, num_labels: usize, num_joints: Option<usize>) -> Result<()> {
        let id = self.id.as_str();
        let (w, h) = (self.width(), self.height());
        if self.image.channels() != 3 {
            return Err(invalid(id, "image", "expected 3 channels"));
        }
        let check_labels = |set: &ImageLabelSet| -> Result<()> {
            match set.iter().find(|l| *l as usize > num_labels || *l == 0) {
                Some(l) => Err(invalid(id, "labels", format!("label {l} outside 1..={num_labels}"))),
                None => Ok(()),
            }
        };
        match &self.annotation {
            Annotation::Pixel(map) => {
                if map.width() != w || map.height() != h {
                    return Err(invalid(
                        id,
                        "labelmap",
                        format!("size {}x{} differs from image {w}x{h}", map.width(), map.height()),
                    ));
                }
                check_labels(&map.label_set())?;
            }
            Annotation::Keypoints { keypoints, labels } => {
                check_labels(labels)?;
                for kp in keypoints {
                    if kp.x >= w || kp.y >= h {
                        return Err(invalid(
                            id,
                            "keypoints",
                            format!("keypoint ({}, {}) outside {w}x{h} image", kp.x, kp.y),
                        ));
                    }
                    if kp.label == BACKGROUND {
                        return Err(invalid(id, "keypoints", "keypoints cannot mark background"));
                    }
                }
                let kp_labels = ImageLabelSet::from_labels(keypoints.iter().map(|k| k.label));
                if &kp_labels != labels {
                    return Err(invalid(
                        id,
                        "keypoints",
                        "keypoint labels differ from the image label set",
                    ));
                }
            }
            Annotation::ImageLabels(labels) => check_labels(labels)?,
        }
        if self.bbox.right() > w || self.bbox.bottom() > h {
            return Err(invalid(id, "bbox", "bounding box exceeds image bounds"));
        }
        if let (Some(pose), Some(j)) = (&self.pose, num_joints) {
            if pose.num_joints() != j {
                return Err(invalid(
                    id,
                    "pose",
                    format!("expected {j} joints, got {}", pose.num_joints()),
                ));
            }
        }
        Ok(())
    }
}

/// Class names plus the records. `names[0]` is the background class (label 1).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub names: Vec<String>,
    pub num_joints: usize,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn num_labels(&self) -> usize {
        self.names.len()
    }
}

/// Rectangle of the source image kept by [`crop_record`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropWindow {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

/// The object box grown by `margin` on every side and clamped to the image.
pub fn crop_window(record: &DatasetRecord, margin: usize) -> CropWindow {
    let b = &record.bbox;
    let left = b.left.saturating_sub(margin);
    let top = b.top.saturating_sub(margin);
    let right = (b.right() + margin).min(record.width());
    let bottom = (b.bottom() + margin).min(record.height());
    CropWindow {
        left,
        top,
        width: right - left,
        height: bottom - top,
    }
}

/// Crops image, annotation, pose and box to the margin-extended object box.
pub fn crop_record(record: &DatasetRecord, margin: usize) -> DatasetRecord {
    let win = crop_window(record, margin);
    let annotation = match &record.annotation {
        Annotation::Pixel(map) => Annotation::Pixel(map.crop(&win)),
        Annotation::Keypoints { keypoints, labels } => Annotation::Keypoints {
            // The box lies inside the window, but keypoints may not.
            keypoints: keypoints
                .iter()
                .map(|k| Keypoint {
                    label: k.label,
                    x: k.x.clamp(win.left, win.left + win.width - 1) - win.left,
                    y: k.y.clamp(win.top, win.top + win.height - 1) - win.top,
                })
                .collect(),
            labels: labels.clone(),
        },
        Annotation::ImageLabels(labels) => Annotation::ImageLabels(labels.clone()),
    };
    DatasetRecord {
        id: record.id.clone(),
        image: record.image.crop(&win),
        annotation,
        pose: record
            .pose
            .as_ref()
            .map(|p| p.translated(-(win.left as f64), -(win.top as f64))),
        bbox: BoundingBox {
            left: record.bbox.left - win.left,
            top: record.bbox.top - win.top,
            width: record.bbox.width,
            height: record.bbox.height,
        },
        actor: record.actor,
    }
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    num_labels: usize,
    names: Vec<String>,
    num_joints: usize,
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    bbox: [usize; 4],
    labels: Vec<LabelId>,
    keypoints: Vec<Keypoint>,
    pose: Option<Vec<f64>>,
    labelmap: Option<String>,
    actor: u32,
    /// Disambiguates keypoint records without keypoints from image-label records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    level: Option<AnnotationLevel>,
}

fn load_err(path: &Path, reason: impl ToString) -> Error {
    Error::Load {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

fn read_rgb(path: &Path) -> Result<PixelGrid> {
    let img = image::open(path).map_err(|e| load_err(path, e))?;
    Ok(PixelGrid::from_rgb8(&img.to_rgb8()))
}

pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let img = image::open(path).map_err(|e| load_err(path, e))?;
    let gray = img.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    LabelMap::new(w, h, gray.into_raw()).map_err(|e| load_err(path, e))
}

pub fn write_label_png(map: &LabelMap, path: &Path) -> Result<()> {
    map.to_luma8().save(path)?;
    Ok(())
}

/// Writes a binary mask as a 0/255 single-channel PNG.
pub fn write_mask_png(mask: &[bool], width: usize, height: usize, path: &Path) -> Result<()> {
    let bytes = mask.iter().map(|m| if *m { 255 } else { 0 }).collect();
    image::GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| contract("mask length does not match dimensions"))?
        .save(path)?;
    Ok(())
}

/// Loads a dataset from `root` using the manifest at `manifest_path`
/// (relative paths resolve against `root`).
pub fn load_dataset(root: &Path, manifest_path: &Path) -> Result<Dataset> {
    let manifest_path = if manifest_path.is_absolute() {
        manifest_path.to_path_buf()
    } else {
        root.join(manifest_path)
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| load_err(&manifest_path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| load_err(&manifest_path, e))?;
    if manifest.names.len() != manifest.num_labels || manifest.num_labels < 1 {
        return Err(invalid(
            "<manifest>",
            "names",
            format!(
                "{} names for {} labels",
                manifest.names.len(),
                manifest.num_labels
            ),
        ));
    }
    if manifest.num_labels > LabelId::MAX as usize {
        return Err(invalid("<manifest>", "num_labels", "at most 255 labels supported"));
    }
    let num_labels = manifest.num_labels;
    let records = manifest
        .records
        .into_iter()
        .map(|r| load_record(root, r, num_labels, manifest.num_joints))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        names: manifest.names,
        num_joints: manifest.num_joints,
        records,
    })
}

fn load_record(
    root: &Path,
    r: ManifestRecord,
    num_labels: usize,
    num_joints: usize,
) -> Result<DatasetRecord> {
    let image = read_rgb(&root.join("images").join(format!("{}.png", r.id)))?;
    let labels = ImageLabelSet::from_labels(r.labels.iter().copied());
    let annotation = match (&r.labelmap, r.level) {
        (Some(path), None | Some(AnnotationLevel::Pixel)) => {
            let map = read_label_png(&root.join(path))?;
            if map.label_set() != labels {
                return Err(invalid(
                    &r.id,
                    "labels",
                    "label map classes differ from the listed labels",
                ));
            }
            Annotation::Pixel(map)
        }
        (Some(_), Some(level)) => {
            return Err(invalid(&r.id, "level", format!("{level:?} record carries a label map")))
        }
        (None, Some(AnnotationLevel::Pixel)) => {
            return Err(invalid(&r.id, "labelmap", "pixel-level record without a label map"))
        }
        (None, Some(AnnotationLevel::Keypoints)) => Annotation::Keypoints {
            keypoints: r.keypoints.clone(),
            labels,
        },
        (None, None) if !r.keypoints.is_empty() => Annotation::Keypoints {
            keypoints: r.keypoints.clone(),
            labels,
        },
        (None, _) => {
            if !r.keypoints.is_empty() {
                return Err(invalid(&r.id, "keypoints", "image-label record carries keypoints"));
            }
            Annotation::ImageLabels(labels)
        }
    };
    let pose = r
        .pose
        .map(PoseVector::new)
        .transpose()
        .map_err(|e| invalid(&r.id, "pose", e.to_string()))?;
    let [left, top, width, height] = r.bbox;
    let bbox = BoundingBox::new(left, top, width, height)
        .map_err(|e| invalid(&r.id, "bbox", e.to_string()))?;
    let record = DatasetRecord {
        id: r.id,
        image,
        annotation,
        pose,
        bbox,
        actor: r.actor,
    };
    record.validate(num_labels, Some(num_joints))?;
    Ok(record)
}

/// Writes `dataset` under `root` in the layout read by [`load_dataset`].
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<PathBuf> {
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("labelmaps"))?;
    let mut records = Vec::with_capacity(dataset.records.len());
    for rec in &dataset.records {
        rec.validate(dataset.num_labels(), Some(dataset.num_joints))?;
        rec.image
            .to_rgb8()?
            .save(root.join("images").join(format!("{}.png", rec.id)))?;
        let labelmap = match &rec.annotation {
            Annotation::Pixel(map) => {
                let rel = format!("labelmaps/{}.png", rec.id);
                write_label_png(map, &root.join(&rel))?;
                Some(rel)
            }
            _ => None,
        };
        let level = match rec.annotation.level() {
            AnnotationLevel::Keypoints if rec.keypoints().is_empty() => {
                Some(AnnotationLevel::Keypoints)
            }
            _ => None,
        };
        records.push(ManifestRecord {
            id: rec.id.clone(),
            bbox: [rec.bbox.left, rec.bbox.top, rec.bbox.width, rec.bbox.height],
            labels: rec.image_labels().iter().collect(),
            keypoints: rec.keypoints().to_vec(),
            pose: rec.pose.as_ref().map(|p| p.coords().to_vec()),
            labelmap,
            actor: rec.actor,
            level,
        });
    }
    let manifest = Manifest {
        num_labels: dataset.num_labels(),
        names: dataset.names.clone(),
        num_joints: dataset.num_joints,
        records,
    };
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?)?;
    Ok(path)
}
