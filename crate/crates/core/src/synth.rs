//! Synthetic affordance scenes: colored blobs on a textured background, a
//! pose whose "hand" joints sit near the blobs, and annotation degradation.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    quantize, Annotation, AnnotationLevel, BoundingBox, Dataset, DatasetRecord, ImageLabelSet,
    Keypoint, LabelId, LabelMap, PixelGrid, PoseVector, BACKGROUND,
};
use crate::error::{contract, Result};
use crate::spatial::{connected_regions, Region};

const PLACEMENT_ATTEMPTS: usize = 500;
const TEXTURE_WAVES: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlobShape {
    Ellipse,
    RoundedRect,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Classes including background.
    pub num_labels: usize,
    pub blobs_per_class: (usize, usize),
    /// Probability that a class appears in a scene.
    pub class_presence: f64,
    /// Fewest foreground classes per scene.
    pub min_classes: usize,
    /// Requested blob area range in pixels.
    pub blob_area: (f64, f64),
    pub shapes: Vec<BlobShape>,
    /// Mean color per foreground class (label 2 first).
    pub class_colors: Vec<[f64; 3]>,
    /// Per-pixel color standard deviation inside blobs.
    pub color_spread: f64,
    pub background_color: [f64; 3],
    /// Scales the low-frequency texture amplitude and the pixel noise of the background.
    pub texture_noise: f64,
    /// Interpolates class colors from the background color (0) to their configured mean (1).
    pub separation: f64,
    /// Per-scene multiplicative gain is drawn from `1 +- illumination_jitter`.
    pub illumination_jitter: f64,
    /// Empty pixels kept between blobs.
    pub blob_gap: f64,
    /// Each blob sits on a background-labeled body whose area is this multiple
    /// of the blob's; `(0, 0)` disables bodies.
    pub body_scale: (f64, f64),
    /// Body color interpolates from a per-scene neutral color (0) to the class color (1).
    pub body_similarity: f64,
    /// Per-scene uniform shift of each background channel.
    pub background_variation: f64,
    /// Per-scene standard deviation of each class color channel.
    pub class_jitter: f64,
    pub num_joints: usize,
    /// Standard deviation (px) of each hand joint around its blob centroid.
    pub pose_noise: f64,
    pub num_actors: u32,
    pub seed: u64,
}

fn rgb8(r: u8, g: u8, b: u8) -> [f64; 3] {
    [r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0]
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            width: 96,
            height: 96,
            num_labels: 4,
            blobs_per_class: (1, 1),
            class_presence: 0.8,
            min_classes: 2,
            blob_area: (180.0, 420.0),
            shapes: vec![BlobShape::Ellipse, BlobShape::RoundedRect],
            class_colors: vec![
                rgb8(217, 51, 46),
                rgb8(46, 191, 71),
                rgb8(51, 82, 222),
                rgb8(230, 214, 38),
                rgb8(204, 61, 199),
            ],
            color_spread: 0.04,
            background_color: rgb8(64, 60, 56),
            texture_noise: 0.06,
            separation: 1.0,
            illumination_jitter: 0.15,
            blob_gap: 6.0,
            body_scale: (1.5, 2.5),
            body_similarity: 0.6,
            background_variation: 0.15,
            class_jitter: 0.03,
            num_joints: 8,
            pose_noise: 5.0,
            num_actors: 4,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fg = self.num_labels.saturating_sub(1);
        if self.num_labels < 2 || self.num_labels > 255 {
            return Err(contract("scene needs 2..=255 labels"));
        }
        if self.class_colors.len() < fg {
            return Err(contract(format!("{} class colors for {fg} classes", self.class_colors.len())));
        }
        let in_unit = |c: &[f64; 3]| c.iter().all(|v| (0.0..=1.0).contains(v));
        if !self.class_colors.iter().all(in_unit) || !in_unit(&self.background_color) {
            return Err(contract("colors must lie in [0, 1]"));
        }
        if self.width < 8 || self.height < 8 {
            return Err(contract("scene must be at least 8x8"));
        }
        let (lo, hi) = self.blobs_per_class;
        if lo == 0 || lo > hi {
            return Err(contract("blobs per class range must satisfy 1 <= min <= max"));
        }
        if !(self.blob_area.0 > 0.0 && self.blob_area.0 <= self.blob_area.1) {
            return Err(contract("blob area range must be positive and ordered"));
        }
        if self.shapes.is_empty() {
            return Err(contract("no blob shapes configured"));
        }
        if self.num_joints < fg {
            return Err(contract(format!("{} joints cannot hold {fg} hand joints", self.num_joints)));
        }
        if !(0.0..=1.0).contains(&self.class_presence) || !(0.0..=1.0).contains(&self.separation) {
            return Err(contract("class presence and separation must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.body_similarity) {
            return Err(contract("body similarity must lie in [0, 1]"));
        }
        if self.body_scale.0 < 0.0 || self.body_scale.0 > self.body_scale.1 {
            return Err(contract("body scale range must be nonnegative and ordered"));
        }
        let noises = [
            self.color_spread,
            self.texture_noise,
            self.pose_noise,
            self.background_variation,
            self.class_jitter,
        ];
        if noises.iter().any(|v| *v < 0.0) {
            return Err(contract("noise levels must be nonnegative"));
        }
        if self.num_actors == 0 {
            return Err(contract("at least one actor is required"));
        }
        Ok(())
    }

    fn class_color(&self, label: LabelId) -> [f64; 3] {
        let c = self.class_colors[label as usize - 2];
        let s = self.separation;
        std::array::from_fn(|k| self.background_color[k] + s * (c[k] - self.background_color[k]))
    }
}

/// Class names used for generated datasets.
pub fn class_names(num_labels: usize) -> Vec<String> {
    const NAMES: [&str; 7] = [
        "background",
        "openable",
        "cuttable",
        "pourable",
        "containable",
        "supportable",
        "holdable",
    ];
    (0..num_labels)
        .map(|k| NAMES.get(k).map_or_else(|| format!("affordance_{}", k + 1), |s| s.to_string()))
        .collect()
}

fn scene_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// A placed blob shape: center, rotation and half extents.
#[derive(Clone, Copy, Debug)]
struct Blob {
    shape: BlobShape,
    cx: f64,
    cy: f64,
    angle: f64,
    a: f64,
    b: f64,
    corner: f64,
}

impl Blob {
    fn with_area(shape: BlobShape, area: f64, aspect: f64) -> Self {
        // a >= b, b = aspect * a
        let (a, corner) = match shape {
            BlobShape::Ellipse => ((area / (std::f64::consts::PI * aspect)).sqrt(), 0.0),
            BlobShape::RoundedRect => {
                // 4ab - (4 - pi) r^2 with r = 0.35 b
                let k = 4.0 * aspect - (4.0 - std::f64::consts::PI) * (0.35 * aspect).powi(2);
                let a = (area / k).sqrt();
                (a, 0.35 * aspect * a)
            }
        };
        Self {
            shape,
            cx: 0.0,
            cy: 0.0,
            angle: 0.0,
            a,
            b: aspect * a,
            corner,
        }
    }

    fn radius(&self) -> f64 {
        match self.shape {
            BlobShape::Ellipse => self.a,
            BlobShape::RoundedRect => self.a.hypot(self.b),
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
        match self.shape {
            BlobShape::Ellipse => (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0,
            BlobShape::RoundedRect => {
                let (qu, qv) = (u.abs() - (self.a - self.corner), v.abs() - (self.b - self.corner));
                if qu <= 0.0 || qv <= 0.0 {
                    u.abs() <= self.a && v.abs() <= self.b
                } else {
                    qu * qu + qv * qv <= self.corner * self.corner
                }
            }
        }
    }

    fn rasterize(&self, width: usize, height: usize) -> Vec<usize> {
        let r = self.radius().ceil() as i64 + 1;
        let (x0, x1) = ((self.cx as i64 - r).max(0), (self.cx as i64 + r).min(width as i64 - 1));
        let (y0, y1) = ((self.cy as i64 - r).max(0), (self.cy as i64 + r).min(height as i64 - 1));
        let mut px = Vec::new();
        for y in y0..=y1 {
            for x in x0..=x1 {
                if self.contains(x as f64, y as f64) {
                    px.push(y as usize * width + x as usize);
                }
            }
        }
        px
    }
}

struct Placed {
    label: LabelId,
    blob: Blob,
    pixels: Vec<usize>,
    /// Radius around the blob center that covers the blob and its body.
    reach: f64,
}

/// Rasterized area of a blob of the requested area, for calibration checks.
pub fn rasterized_area(shape: BlobShape, area: f64, aspect: f64, angle: f64) -> usize {
    let mut blob = Blob::with_area(shape, area, aspect);
    let size = (blob.radius().ceil() as usize + 3) * 2 + 1;
    blob.cx = (size / 2) as f64 + 0.37;
    blob.cy = (size / 2) as f64 + 0.21;
    blob.angle = angle;
    blob.rasterize(size, size).len()
}

fn centroid(pixels: &[usize], width: usize) -> (f64, f64) {
    let n = pixels.len() as f64;
    let sx: f64 = pixels.iter().map(|i| (i % width) as f64).sum();
    let sy: f64 = pixels.iter().map(|i| (i / width) as f64).sum();
    (sx / n, sy / n)
}

/// Scene `index` of the benchmark described by `config`, pixel-annotated.
pub fn generate_scene(config: &SceneConfig, index: usize) -> Result<DatasetRecord> {
    config.validate()?;
    let (w, h) = (config.width, config.height);
    let mut rng = scene_rng(config.seed, index);

    // which classes appear
    let fg: Vec<LabelId> = (2..=config.num_labels as LabelId).collect();
    let mut present: Vec<LabelId> = fg.iter().copied().filter(|_| rng.random_bool(config.class_presence)).collect();
    let want = config.min_classes.min(fg.len());
    if present.len() < want {
        let mut missing: Vec<LabelId> = fg.iter().copied().filter(|z| !present.contains(z)).collect();
        missing.shuffle(&mut rng);
        present.extend(missing.into_iter().take(want - present.len()));
        present.sort_unstable();
    }

    // place each blob with its host body; units keep clear of each other
    let mut labels = vec![BACKGROUND; w * h];
    let mut host = vec![usize::MAX; w * h];
    let mut placed: Vec<Placed> = Vec::new();
    for &z in &present {
        let count = rng.random_range(config.blobs_per_class.0..=config.blobs_per_class.1);
        for _ in 0..count {
            let shape = *config.shapes.choose(&mut rng).expect("shapes validated nonempty");
            let area = rng.random_range(config.blob_area.0..=config.blob_area.1);
            let aspect = rng.random_range(0.55..1.0);
            let mut blob = Blob::with_area(shape, area, aspect);
            blob.angle = rng.random_range(0.0..std::f64::consts::PI);
            let r = blob.radius();
            let mut body = (config.body_scale.1 > 0.0).then(|| {
                let scale = rng.random_range(config.body_scale.0..=config.body_scale.1);
                let mut b = Blob::with_area(BlobShape::RoundedRect, scale * area, rng.random_range(0.4..0.8));
                b.angle = rng.random_range(0.0..std::f64::consts::PI);
                b
            });
            let direction = rng.random_range(0.0..std::f64::consts::TAU);
            let offset = body.map_or(0.0, |b| 0.5 * r + 0.6 * b.b);
            let reach = body.map_or(r, |b| r.max(offset + b.radius()));
            let margin = (r + 1.0).min(w.min(h) as f64 / 2.0);
            for _ in 0..PLACEMENT_ATTEMPTS {
                blob.cx = rng.random_range(margin..=(w as f64 - 1.0 - margin).max(margin));
                blob.cy = rng.random_range(margin..=(h as f64 - 1.0 - margin).max(margin));
                // bodies may overlap each other but never another blob
                let clear = placed.iter().all(|o| {
                    let d = (o.blob.cx - blob.cx).hypot(o.blob.cy - blob.cy);
                    d >= (o.reach + r).max(o.blob.radius() + reach) + config.blob_gap
                });
                if clear {
                    let pixels = blob.rasterize(w, h);
                    if pixels.is_empty() {
                        break;
                    }
                    if let Some(b) = body.as_mut() {
                        b.cx = blob.cx + offset * direction.cos();
                        b.cy = blob.cy + offset * direction.sin();
                        for i in b.rasterize(w, h) {
                            host[i] = placed.len();
                        }
                    }
                    for &i in &pixels {
                        labels[i] = z;
                        host[i] = usize::MAX;
                    }
                    placed.push(Placed { label: z, blob, pixels, reach });
                    break;
                }
            }
        }
    }

    // per-scene appearance
    let gain = 1.0 + rng.random_range(-1.0..=1.0) * config.illumination_jitter;
    let background_base: [f64; 3] = std::array::from_fn(|k| {
        let v = config.background_variation;
        (config.background_color[k] + if v > 0.0 { rng.random_range(-v..=v) } else { 0.0 }).clamp(0.0, 1.0)
    });
    let class_shift = Normal::new(0.0, config.class_jitter).expect("nonnegative sigma");
    let colors: Vec<[f64; 3]> = (2..=config.num_labels as LabelId)
        .map(|z| config.class_color(z).map(|v| v + class_shift.sample(&mut rng)))
        .collect();
    let neutral: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.6));
    let body_colors: Vec<[f64; 3]> = placed
        .iter()
        .map(|p| {
            let c = colors[p.label as usize - 2];
            let s = config.body_similarity;
            std::array::from_fn(|k| s * c[k] + (1.0 - s) * neutral[k])
        })
        .collect();

    // background texture: a few random plane waves plus pixel noise
    let waves: Vec<(f64, f64, f64, [f64; 3])> = (0..TEXTURE_WAVES)
        .map(|_| {
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let freq = rng.random_range(0.05..0.25);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let amp: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.3..1.0));
            (freq * theta.cos(), freq * theta.sin(), phase, amp)
        })
        .collect();
    let pixel_noise = Normal::new(0.0, config.texture_noise / 2.0).expect("nonnegative sigma");
    let spread = Normal::new(0.0, config.color_spread).expect("nonnegative sigma");
    let mut values = Vec::with_capacity(w * h * 3);
    for (i, &l) in labels.iter().enumerate() {
        let (x, y) = ((i % w) as f64, (i / w) as f64);
        let color: [f64; 3] = if l != BACKGROUND {
            colors[l as usize - 2].map(|v| v + spread.sample(&mut rng))
        } else if host[i] != usize::MAX {
            body_colors[host[i]].map(|v| v + spread.sample(&mut rng))
        } else {
            let mut c = background_base;
            for (fx, fy, ph, amp) in &waves {
                let s = (fx * x + fy * y + ph).sin() * config.texture_noise;
                for k in 0..3 {
                    c[k] += amp[k] * s;
                }
            }
            c.map(|v| v + pixel_noise.sample(&mut rng))
        };
        values.extend(color.map(|v| quantize(v * gain) as f64 / 255.0));
    }
    let image = PixelGrid::new(w, h, 3, values)?;
    let label_map = LabelMap::new(w, h, labels)?;

    let bbox = if placed.is_empty() {
        BoundingBox::new(0, 0, w, h)?
    } else {
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        for i in placed.iter().flat_map(|p| &p.pixels) {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        BoundingBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)?
    };

    let pose = generate_pose(config, &placed, &bbox, &mut rng);
    Ok(DatasetRecord {
        id: format!("scene_{index:04}"),
        image,
        annotation: Annotation::Pixel(label_map),
        pose: Some(pose),
        bbox,
        actor: index as u32 % config.num_actors,
    })
}

/// Hand joint `z - 2` follows the centroid of class z's first blob; absent
/// classes get a hand somewhere in the box. The remaining joints hang off the
/// mean hand position in a fixed template.
fn generate_pose(
    config: &SceneConfig,
    placed: &[Placed],
    bbox: &BoundingBox,
    rng: &mut ChaCha8Rng,
) -> PoseVector {
    let noise = Normal::new(0.0, config.pose_noise).expect("nonnegative sigma");
    let jitter = Normal::new(0.0, 2.0).expect("positive sigma");
    let mut coords = Vec::with_capacity(2 * config.num_joints);
    let mut hands = Vec::new();
    for z in 2..=config.num_labels as LabelId {
        let (x, y) = match placed.iter().find(|p| p.label == z) {
            Some(p) => {
                let (cx, cy) = centroid(&p.pixels, config.width);
                (cx + noise.sample(rng), cy + noise.sample(rng))
            }
            None => (
                rng.random_range(bbox.left as f64..=bbox.right() as f64),
                rng.random_range(bbox.top as f64..=bbox.bottom() as f64),
            ),
        };
        hands.push((x, y));
        coords.extend([x, y]);
    }
    let n = hands.len() as f64;
    let anchor = (
        hands.iter().map(|p| p.0).sum::<f64>() / n,
        hands.iter().map(|p| p.1).sum::<f64>() / n + 20.0,
    );
    for j in hands.len()..config.num_joints {
        let t = j as f64;
        let off = (10.0 * (1.3 * t).cos(), 6.0 + 5.0 * t + 4.0 * (0.7 * t).sin());
        coords.push(anchor.0 + off.0 + jitter.sample(rng));
        coords.push(anchor.1 + off.1 + jitter.sample(rng));
    }
    PoseVector::new(coords).expect("pose coordinates are finite and paired")
}

/// Region pixel nearest to `(px, py)`; ties go to the smaller index.
pub fn nearest_region_pixel(region: &Region, width: usize, px: f64, py: f64) -> usize {
    *region
        .iter()
        .min_by(|a, b| {
            let d = |i: usize| ((i % width) as f64 - px).powi(2) + ((i / width) as f64 - py).powi(2);
            d(**a).total_cmp(&d(**b)).then(a.cmp(b))
        })
        .expect("regions are nonempty")
}

/// One keypoint per 8-connected region of every foreground class, at the
/// region pixel nearest its centroid.
pub fn region_keypoints(map: &LabelMap) -> Vec<Keypoint> {
    region_keypoints_with(map, |_, _| (0.0, 0.0))
}

fn region_keypoints_with(map: &LabelMap, mut offset: impl FnMut(LabelId, usize) -> (f64, f64)) -> Vec<Keypoint> {
    let (w, h) = (map.width(), map.height());
    let mut out = Vec::new();
    for z in map.label_set().foreground() {
        for (k, region) in connected_regions(&map.mask(z), w, h).iter().enumerate() {
            let (cx, cy) = centroid(region, w);
            let (dx, dy) = offset(z, k);
            let i = nearest_region_pixel(region, w, cx + dx, cy + dy);
            out.push(Keypoint { label: z, x: i % w, y: i / w });
        }
    }
    out
}

/// Coarsens a pixel-annotated record to keypoints or image labels.
pub fn degrade_annotations(record: &DatasetRecord, level: AnnotationLevel) -> Result<DatasetRecord> {
    degrade_with_jitter(record, level, 0.0, 0)
}

/// As [`degrade_annotations`], with Gaussian click noise of `sigma` px added to
/// each centroid before snapping into the region.
pub fn degrade_with_jitter(
    record: &DatasetRecord,
    level: AnnotationLevel,
    sigma: f64,
    seed: u64,
) -> Result<DatasetRecord> {
    let map = record
        .label_map()
        .ok_or_else(|| contract(format!("record `{}` is not pixel-annotated", record.id)))?;
    let annotation = match level {
        AnnotationLevel::Pixel => Annotation::Pixel(map.clone()),
        AnnotationLevel::ImageLabels => Annotation::ImageLabels(map.label_set()),
        AnnotationLevel::Keypoints => {
            let keypoints = if sigma > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let noise = Normal::new(0.0, sigma).map_err(|e| contract(e.to_string()))?;
                region_keypoints_with(map, |_, _| (noise.sample(&mut rng), noise.sample(&mut rng)))
            } else {
                region_keypoints(map)
            };
            Annotation::Keypoints {
                labels: ImageLabelSet::from_labels(keypoints.iter().map(|k| k.label)),
                keypoints,
            }
        }
    };
    Ok(DatasetRecord {
        annotation,
        ..record.clone()
    })
}

/// `count` scenes with class names and the configured joint count.
pub fn generate_dataset(config: &SceneConfig, count: usize) -> Result<Dataset> {
    config.validate()?;
    let records = (0..count).map(|i| generate_scene(config, i)).collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        names: class_names(config.num_labels),
        num_joints: config.num_joints,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_blob_pixels_equal_class_mean() {
        let cfg = SceneConfig {
            color_spread: 0.0,
            illumination_jitter: 0.0,
            class_jitter: 0.0,
            num_labels: 2,
            min_classes: 1,
            class_presence: 1.0,
            ..SceneConfig::default()
        };
        let rec = generate_scene(&cfg, 3).unwrap();
        let map = rec.label_map().unwrap();
        let mask = map.mask(2);
        assert!(mask.iter().any(|m| *m));
        for (i, m) in mask.iter().enumerate() {
            if *m {
                assert_eq!(rec.image.rgb(i), cfg.class_colors[0]);
            }
        }
    }

    #[test]
    fn rasterized_area_is_close_to_requested() {
        for shape in [BlobShape::Ellipse, BlobShape::RoundedRect] {
            for (aspect, angle) in [(1.0, 0.0), (0.6, 0.7), (0.8, 2.1)] {
                let a = rasterized_area(shape, 400.0, aspect, angle) as f64;
                assert!((a - 400.0).abs() <= 0.15 * 400.0, "{shape:?} {aspect} {a}");
            }
        }
    }

    #[test]
    fn scenes_are_deterministic() {
        let cfg = SceneConfig::default();
        assert_eq!(generate_scene(&cfg, 5).unwrap(), generate_scene(&cfg, 5).unwrap());
        assert_ne!(generate_scene(&cfg, 5).unwrap().image, generate_scene(&cfg, 6).unwrap().image);
    }

    #[test]
    fn bbox_is_tight_around_blobs() {
        let rec = generate_scene(&SceneConfig::default(), 1).unwrap();
        let map = rec.label_map().unwrap();
        let b = rec.bbox;
        let fg: Vec<usize> = (0..map.len()).filter(|i| map.labels()[*i] != BACKGROUND).collect();
        assert!(fg.iter().all(|i| {
            let (x, y) = (i % map.width(), i / map.width());
            x >= b.left && x < b.right() && y >= b.top && y < b.bottom()
        }));
        assert!(fg.iter().any(|i| i % map.width() == b.left));
        assert!(fg.iter().any(|i| i / map.width() == b.bottom() - 1));
    }

    #[test]
    fn single_blob_gives_one_keypoint_at_centroid() {
        let mut labels = vec![1; 100];
        for y in 3..6 {
            for x in 2..7 {
                labels[y * 10 + x] = 2;
            }
        }
        let map = LabelMap::new(10, 10, labels).unwrap();
        assert_eq!(region_keypoints(&map), vec![Keypoint { label: 2, x: 4, y: 4 }]);
    }

    #[test]
    fn c_shaped_region_snaps_inside() {
        // a C opening to the right; its centroid lies in the gap
        let mut labels = vec![1; 81];
        for y in 1..8 {
            for x in 1..8 {
                if x <= 2 || y <= 2 || y >= 6 {
                    labels[y * 9 + x] = 3;
                }
            }
        }
        let map = LabelMap::new(9, 9, labels).unwrap();
        let kps = region_keypoints(&map);
        assert_eq!(kps.len(), 1);
        assert_eq!(map.get(kps[0].x, kps[0].y), 3);
    }

    #[test]
    fn image_label_degradation_keeps_only_the_set() {
        let rec = generate_scene(&SceneConfig::default(), 2).unwrap();
        let truth = rec.label_map().unwrap().label_set();
        let weak = degrade_annotations(&rec, AnnotationLevel::ImageLabels).unwrap();
        assert_eq!(weak.annotation, Annotation::ImageLabels(truth.clone()));
        assert_eq!(weak.image, rec.image);
        let kp = degrade_annotations(&rec, AnnotationLevel::Keypoints).unwrap();
        assert_eq!(kp.image_labels(), truth);
        assert!(degrade_annotations(&weak, AnnotationLevel::Keypoints).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(SceneConfig { num_labels: 1, ..SceneConfig::default() }.validate().is_err());
        assert!(SceneConfig { num_joints: 1, ..SceneConfig::default() }.validate().is_err());
        assert!(SceneConfig { background_color: [1.5, 0.0, 0.0], ..SceneConfig::default() }
            .validate()
            .is_err());
    }
}
