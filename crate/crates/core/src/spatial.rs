//! Spatial label prior: per-class 2-D Gaussian mixtures over pixel
//! coordinates competing with a constant background density.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::classifier::{argmax_label, Posterior};
use crate::dataset::{ImageLabelSet, Keypoint, LabelId, LabelMap, PixelGrid, BACKGROUND};
use crate::error::{contract, Result};
use crate::graphcut::{grabcut_refine, GrabcutConfig};

/// Default background density per pixel^2.
pub const DEFAULT_BACKGROUND_DENSITY: f64 = 1.0e-3;
/// Default covariance floor in pixel^2.
pub const DEFAULT_COVARIANCE_FLOOR: f64 = 1.0;
/// Regions smaller than this fraction of the largest one are dropped.
pub const REGION_FRACTION: f64 = 0.1;

/// One weighted 2-D Gaussian over `(col, row)` pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: [f64; 2],
    /// Row-major `[sxx, sxy, syx, syy]`.
    pub covariance: [f64; 4],
}

impl GaussianComponent {
    pub fn isotropic(weight: f64, mean: [f64; 2], variance: f64) -> Self {
        Self {
            weight,
            mean,
            covariance: [variance, 0.0, 0.0, variance],
        }
    }

    pub fn determinant(&self) -> f64 {
        let [a, b, c, d] = self.covariance;
        a * d - b * c
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let [a, b, _, d] = self.covariance;
        let half_trace = (a + d) / 2.0;
        half_trace - (((a - d) / 2.0).powi(2) + b * b).sqrt()
    }

    /// Unweighted density at `(x, y)`.
    pub fn density(&self, x: f64, y: f64) -> f64 {
        let [a, b, _, d] = self.covariance;
        let det = self.determinant();
        let (dx, dy) = (x - self.mean[0], y - self.mean[1]);
        let maha = (d * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
        (-0.5 * maha).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }
}

/// Per-label mixtures, background density, and the keypoint-anchored means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialPrior {
    pub mixtures: BTreeMap<LabelId, Vec<GaussianComponent>>,
    pub background_density: f64,
    /// Keypoints whose coordinates must remain component means of their label.
    pub pinned: Vec<Keypoint>,
}

impl SpatialPrior {
    pub fn new(background_density: f64) -> Self {
        Self {
            mixtures: BTreeMap::new(),
            background_density,
            pinned: Vec::new(),
        }
    }

    /// Mixture density of `label` at `(x, y)`.
    pub fn label_density(&self, label: LabelId, x: f64, y: f64) -> f64 {
        self.mixtures
            .get(&label)
            .map(|m| m.iter().map(|c| c.weight * c.density(x, y)).sum())
            .unwrap_or(0.0)
    }

    /// Whether every pinned keypoint is exactly a component mean of its label.
    pub fn pins_hold(&self) -> bool {
        self.pinned.iter().all(|k| {
            self.mixtures.get(&k.label).is_some_and(|m| {
                m.iter()
                    .any(|c| c.mean == [k.x as f64, k.y as f64])
            })
        })
    }
}

/// A connected set of pixel indices.
pub type Region = Vec<usize>;

/// Pixels whose most probable label is `label`.
pub fn argmax_set(posterior: &Posterior, label: LabelId) -> Vec<bool> {
    (0..posterior.len()).map(|i| posterior.argmax(i) == label).collect()
}

/// 8-connected components of `mask`, ordered by first pixel index.
pub fn connected_regions(mask: &[bool], width: usize, height: usize) -> Vec<Region> {
    let mut seen = vec![false; mask.len()];
    let mut regions = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut region = Vec::new();
        while let Some(i) = queue.pop_front() {
            region.push(i);
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if mask[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        region.sort_unstable();
        regions.push(region);
    }
    regions
}

/// Connected regions of `mask` no smaller than 10% of the largest, largest first.
pub fn filter_regions(mask: &[bool], width: usize, height: usize) -> Vec<Region> {
    let mut regions = connected_regions(mask, width, height);
    let largest = regions.iter().map(Vec::len).max().unwrap_or(0);
    regions.retain(|r| r.len() as f64 >= REGION_FRACTION * largest as f64);
    // stable: equal sizes keep first-pixel order
    regions.sort_by_key(|r| std::cmp::Reverse(r.len()));
    regions
}

/// The argmax set of `label`, refined by GrabCut when `grabcut` is given.
/// Returns `None` when no pixel is assigned to `label`.
pub fn class_mask(
    posterior: &Posterior,
    label: LabelId,
    image: &PixelGrid,
    grabcut: Option<&GrabcutConfig>,
) -> Result<Option<Vec<bool>>> {
    if label == BACKGROUND || label as usize > posterior.num_labels {
        return Err(contract(format!("label {label} is not a foreground class")));
    }
    if image.width() != posterior.width || image.height() != posterior.height {
        return Err(contract("image and posterior sizes differ"));
    }
    let seed = argmax_set(posterior, label);
    let count = seed.iter().filter(|m| **m).count();
    if count == 0 {
        return Ok(None);
    }
    match grabcut {
        Some(cfg) if count < seed.len() => Ok(Some(grabcut_refine(image, &seed, cfg)?.mask)),
        _ => Ok(Some(seed)),
    }
}

/// Argmax set of `label`, optional GrabCut refinement, then 8-connected
/// regions filtered against the largest one.
pub fn extract_class_regions(
    posterior: &Posterior,
    label: LabelId,
    image: &PixelGrid,
    grabcut: Option<&GrabcutConfig>,
) -> Result<Vec<Region>> {
    Ok(match class_mask(posterior, label, image, grabcut)? {
        Some(mask) => filter_regions(&mask, image.width(), image.height()),
        None => Vec::new(),
    })
}

/// One Gaussian per region from its coordinate moments, plus `floor * I`.
pub fn fit_spatial_mixture(regions: &[Region], width: usize, floor: f64) -> Vec<GaussianComponent> {
    let total: usize = regions.iter().map(Vec::len).sum();
    regions
        .iter()
        .filter(|r| !r.is_empty())
        .map(|region| {
            let n = region.len() as f64;
            let coords = region.iter().map(|i| ((i % width) as f64, (i / width) as f64));
            let (sx, sy) = coords.clone().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
            let (mx, my) = (sx / n, sy / n);
            let (mut vxx, mut vxy, mut vyy) = (0.0, 0.0, 0.0);
            for (x, y) in coords {
                vxx += (x - mx) * (x - mx);
                vxy += (x - mx) * (y - my);
                vyy += (y - my) * (y - my);
            }
            GaussianComponent {
                weight: n / total as f64,
                mean: [mx, my],
                covariance: [vxx / n + floor, vxy / n, vxy / n, vyy / n + floor],
            }
        })
        .collect()
}

/// Posterior over labels at every pixel: background scores `f_bg`, each
/// `z` in the label set scores its mixture density, every other label 0.
pub fn estep_posterior(
    prior: &SpatialPrior,
    labels: &ImageLabelSet,
    width: usize,
    height: usize,
    num_labels: usize,
) -> Result<Posterior> {
    let present: Vec<LabelId> = labels.foreground().collect();
    for z in &present {
        if *z as usize > num_labels {
            return Err(contract(format!("label {z} exceeds label count {num_labels}")));
        }
        if !prior.mixtures.contains_key(z) {
            return Err(contract(format!("label {z} has no spatial mixture")));
        }
    }
    if !(prior.background_density > 0.0) {
        return Err(contract("background density must be positive"));
    }
    let mut probs = vec![0.0; width * height * num_labels];
    for y in 0..height {
        for x in 0..width {
            let out = &mut probs[(y * width + x) * num_labels..][..num_labels];
            out[0] = prior.background_density;
            let mut total = prior.background_density;
            for &z in &present {
                let d = prior.label_density(z, x as f64, y as f64);
                out[z as usize - 1] = d;
                total += d;
            }
            for p in out.iter_mut() {
                *p /= total;
            }
        }
    }
    Ok(Posterior {
        width,
        height,
        num_labels,
        probs,
    })
}

/// Point estimate of the labeling: per-pixel argmax of [`estep_posterior`],
/// ties going to the smaller label id.
pub fn estep_labelmap(
    prior: &SpatialPrior,
    labels: &ImageLabelSet,
    width: usize,
    height: usize,
    num_labels: usize,
) -> Result<LabelMap> {
    let post = estep_posterior(prior, labels, width, height, num_labels)?;
    let ids = (0..post.len()).map(|i| argmax_label(post.pixel(i))).collect();
    LabelMap::new(width, height, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disc_posterior(w: usize, h: usize, l: usize, mask: &[bool], z: LabelId) -> Posterior {
        let mut probs = vec![0.0; w * h * l];
        for (i, m) in mask.iter().enumerate() {
            let k = if *m { z as usize - 1 } else { 0 };
            probs[i * l + k] = 1.0;
        }
        Posterior { width: w, height: h, num_labels: l, probs }
    }

    #[test]
    fn empty_argmax_set_gives_no_regions() {
        let img = PixelGrid::filled(8, 8, [0.5; 3]).unwrap();
        let post = disc_posterior(8, 8, 3, &[false; 64], 2);
        assert!(extract_class_regions(&post, 2, &img, Some(&GrabcutConfig::default()))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn small_regions_are_filtered() {
        let (w, h) = (60, 40);
        let mut mask = vec![false; w * h];
        // 25x20 = 500 px and 6x5 = 30 px blocks
        for y in 5..25 {
            for x in 5..30 {
                mask[y * w + x] = true;
            }
        }
        for y in 30..35 {
            for x in 45..51 {
                mask[y * w + x] = true;
            }
        }
        let regions = filter_regions(&mask, w, h);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].len(), 500);
    }

    #[test]
    fn diagonal_neighbors_connect() {
        let mask = [true, false, false, true];
        assert_eq!(connected_regions(&mask, 2, 2).len(), 1);
    }

    #[test]
    fn single_pixel_region() {
        let w = 30;
        let comps = fit_spatial_mixture(&[vec![20 * w + 10]], w, 1.0);
        assert_eq!(comps[0].mean, [10.0, 20.0]);
        assert_eq!(comps[0].covariance, [1.0, 0.0, 0.0, 1.0]);
        assert_eq!(comps[0].weight, 1.0);
    }

    #[test]
    fn rectangle_moments_are_discrete_uniform() {
        let (w, rw, rh) = (50, 9, 14);
        let region: Region = (3..3 + rh).flat_map(|y| (7..7 + rw).map(move |x| y * w + x)).collect();
        let c = fit_spatial_mixture(&[region], w, 1.0)[0];
        assert!((c.mean[0] - (7.0 + (rw as f64 - 1.0) / 2.0)).abs() < 1e-12);
        assert!((c.mean[1] - (3.0 + (rh as f64 - 1.0) / 2.0)).abs() < 1e-12);
        let vx = ((rw * rw) as f64 - 1.0) / 12.0 + 1.0;
        let vy = ((rh * rh) as f64 - 1.0) / 12.0 + 1.0;
        assert!((c.covariance[0] - vx).abs() < 1e-9);
        assert!((c.covariance[3] - vy).abs() < 1e-9);
        assert!(c.covariance[1].abs() < 1e-9);
    }

    #[test]
    fn weights_follow_region_sizes() {
        let a: Region = (0..300).collect();
        let b: Region = (1000..1100).collect();
        let comps = fit_spatial_mixture(&[a, b], 40, 1.0);
        assert_eq!((comps[0].weight, comps[1].weight), (0.75, 0.25));
    }

    #[test]
    fn background_only_label_set() {
        let prior = SpatialPrior::new(1e-3);
        let map = estep_labelmap(&prior, &ImageLabelSet::background_only(), 5, 4, 3).unwrap();
        assert!(map.labels().iter().all(|l| *l == BACKGROUND));
    }

    #[test]
    fn single_gaussian_posterior_at_mean() {
        let mut prior = SpatialPrior::new(1e-3);
        prior.mixtures.insert(2, vec![GaussianComponent::isotropic(1.0, [5.0, 5.0], 40.0)]);
        let post = estep_posterior(&prior, &ImageLabelSet::from_labels([2]), 11, 11, 3).unwrap();
        let peak = 1.0 / (2.0 * std::f64::consts::PI * 40.0);
        assert!((peak - 3.979e-3).abs() < 1e-6);
        let p = post.prob(5 * 11 + 5, 2);
        assert!((p - peak / (1e-3 + peak)).abs() < 1e-12);
        assert!((p - 0.7992).abs() < 1e-4);
        // label 3 is outside the label set
        assert!((0..post.len()).all(|i| post.prob(i, 3) == 0.0));
    }

    #[test]
    fn ties_go_to_the_smaller_label() {
        let mut prior = SpatialPrior::new(1e-6);
        let g = GaussianComponent::isotropic(1.0, [4.0, 4.0], 10.0);
        prior.mixtures.insert(2, vec![g]);
        prior.mixtures.insert(3, vec![g]);
        let map = estep_labelmap(&prior, &ImageLabelSet::from_labels([2, 3]), 9, 9, 3).unwrap();
        assert!(map.labels().contains(&2));
        assert!(!map.labels().contains(&3));
    }

    #[test]
    fn missing_mixture_is_a_contract_error() {
        let prior = SpatialPrior::new(1e-3);
        assert!(estep_posterior(&prior, &ImageLabelSet::from_labels([2]), 3, 3, 3).is_err());
    }
}
