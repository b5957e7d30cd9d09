//! Iterated binary GrabCut on an 8-connected pixel grid.

use serde::{Deserialize, Serialize};

use super::color_gmm::{fit_color_gmm, ColorGmm};
use super::maxflow::{max_flow_with, FlowNetwork, MaxFlowSolver};
use crate::dataset::PixelGrid;
use crate::error::{contract, Result};

/// Terminal capacities are clamped into `[0, MAX_TERMINAL]`.
pub const MAX_TERMINAL: f64 = 50.0;

const NEIGHBORS: [(i64, i64); 4] = [(1, 0), (0, 1), (1, 1), (-1, 1)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrabcutConfig {
    /// Mixture components per color model.
    pub components: usize,
    pub pairwise_weight: f64,
    pub iterations: usize,
    pub covariance_floor: f64,
    pub seed: u64,
    pub solver: MaxFlowSolver,
}

impl Default for GrabcutConfig {
    fn default() -> Self {
        Self {
            components: 5,
            pairwise_weight: 50.0,
            iterations: 5,
            covariance_floor: 1e-5,
            seed: 0,
            solver: MaxFlowSolver::Dinic,
        }
    }
}

impl GrabcutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.iterations == 0 {
            return Err(contract("GrabCut needs at least one component and one iteration"));
        }
        if !(self.pairwise_weight >= 0.0 && self.covariance_floor > 0.0) {
            return Err(contract("pairwise weight must be >= 0 and covariance floor > 0"));
        }
        Ok(())
    }
}

/// Per-pixel terminal costs and neighbor weights for one cut.
#[derive(Clone, Debug)]
pub struct GridEnergy {
    pub width: usize,
    pub height: usize,
    /// Cost of labeling each pixel foreground.
    pub fg_cost: Vec<f64>,
    /// Cost of labeling each pixel background.
    pub bg_cost: Vec<f64>,
    /// Undirected neighbor pairs `(i, j, weight)`.
    pub pairs: Vec<(usize, usize, f64)>,
}

impl GridEnergy {
    /// Data term plus the weight of every pair whose labels differ.
    pub fn energy(&self, mask: &[bool]) -> f64 {
        let data: f64 = mask
            .iter()
            .enumerate()
            .map(|(i, fg)| if *fg { self.fg_cost[i] } else { self.bg_cost[i] })
            .sum();
        let smooth: f64 = self
            .pairs
            .iter()
            .filter(|(i, j, _)| mask[*i] != mask[*j])
            .map(|(_, _, w)| w)
            .sum();
        data + smooth
    }

    /// Minimum-energy labeling via s-t min cut (source side = foreground).
    pub fn minimize(&self, solver: MaxFlowSolver) -> Vec<bool> {
        let n = self.fg_cost.len();
        let (s, t) = (n, n + 1);
        let mut net = FlowNetwork::with_capacity(n + 2, s, t, 2 * n + 2 * self.pairs.len())
            .expect("terminals are distinct");
        for i in 0..n {
            // s -> i is severed when i is background, i -> t when foreground
            if self.bg_cost[i] > 0.0 {
                net.add_edge(s, i, self.bg_cost[i]).expect("finite capacity");
            }
            if self.fg_cost[i] > 0.0 {
                net.add_edge(i, t, self.fg_cost[i]).expect("finite capacity");
            }
        }
        for &(i, j, w) in &self.pairs {
            if w > 0.0 {
                net.add_edge(i, j, w).expect("finite capacity");
                net.add_edge(j, i, w).expect("finite capacity");
            }
        }
        let mut side = max_flow_with(&net, solver).source_side;
        side.truncate(n);
        side
    }
}

/// Contrast-sensitive 8-neighbor weights `w * exp(-beta |ci - cj|^2) / dist`
/// with `beta = 1 / (2 * mean |ci - cj|^2)`.
pub fn pairwise_terms(image: &PixelGrid, weight: f64) -> Vec<(usize, usize, f64)> {
    let (w, h) = (image.width() as i64, image.height() as i64);
    let mut raw = Vec::with_capacity((4 * w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || nx >= w || ny >= h {
                    continue;
                }
                let (i, j) = ((y * w + x) as usize, (ny * w + nx) as usize);
                let (a, b) = (image.rgb(i), image.rgb(j));
                let d2: f64 = (0..3).map(|c| (a[c] - b[c]) * (a[c] - b[c])).sum();
                let dist = ((dx * dx + dy * dy) as f64).sqrt();
                raw.push((i, j, d2, dist));
            }
        }
    }
    let mean_d2 = raw.iter().map(|r| r.2).sum::<f64>() / raw.len().max(1) as f64;
    let beta = if mean_d2 > 0.0 { 1.0 / (2.0 * mean_d2) } else { 0.0 };
    raw.into_iter()
        .map(|(i, j, d2, dist)| (i, j, weight * (-beta * d2).exp() / dist))
        .collect()
}

/// Negative log-likelihood costs shifted so the cheaper side is 0, then clamped.
pub fn terminal_costs(image: &PixelGrid, fg: &ColorGmm, bg: &ColorGmm) -> (Vec<f64>, Vec<f64>) {
    (0..image.len())
        .map(|i| {
            let c = image.rgb(i);
            let f = -fg.log_likelihood(c);
            let b = -bg.log_likelihood(c);
            let base = f.min(b);
            ((f - base).min(MAX_TERMINAL), (b - base).min(MAX_TERMINAL))
        })
        .unzip()
}

/// Energy of the previous labeling and of the new cut, both under the
/// color models fitted at the start of the iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrabcutStep {
    pub start_energy: f64,
    pub cut_energy: f64,
    pub foreground: usize,
}

#[derive(Clone, Debug)]
pub struct GrabcutOutput {
    pub mask: Vec<bool>,
    pub steps: Vec<GrabcutStep>,
}

/// Refines `seed` (true = foreground) by alternating color-model fitting and
/// graph cuts. Seeds only initialize the color models; no pixel is clamped.
pub fn grabcut_refine(image: &PixelGrid, seed: &[bool], config: &GrabcutConfig) -> Result<GrabcutOutput> {
    config.validate()?;
    if image.channels() != 3 {
        return Err(contract("GrabCut needs an RGB image"));
    }
    if seed.len() != image.len() {
        return Err(contract("seed mask size differs from image"));
    }
    let fg_count = seed.iter().filter(|m| **m).count();
    if fg_count == 0 || fg_count == seed.len() {
        return Err(contract("GrabCut seed must be neither empty nor the full image"));
    }
    let pairs = pairwise_terms(image, config.pairwise_weight);
    let mut mask = seed.to_vec();
    let mut steps = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let (fg, bg) = fit_models(image, &mask, config);
        let (fg_cost, bg_cost) = terminal_costs(image, &fg, &bg);
        let energy = GridEnergy {
            width: image.width(),
            height: image.height(),
            fg_cost,
            bg_cost,
            pairs: pairs.clone(),
        };
        let next = energy.minimize(config.solver);
        let count = next.iter().filter(|m| **m).count();
        steps.push(GrabcutStep {
            start_energy: energy.energy(&mask),
            cut_energy: energy.energy(&next),
            foreground: count,
        });
        if count == 0 {
            break;
        }
        let stable = next == mask;
        mask = next;
        if stable || count == mask.len() {
            break;
        }
    }
    Ok(GrabcutOutput { mask, steps })
}

/// Color models for the foreground and background of `mask`.
/// Seeding depends only on the config, so an unchanged mask reproduces the same cut.
pub fn fit_models(image: &PixelGrid, mask: &[bool], config: &GrabcutConfig) -> (ColorGmm, ColorGmm) {
    let (mut fg, mut bg) = (Vec::new(), Vec::new());
    for (i, m) in mask.iter().enumerate() {
        if *m {
            fg.push(image.rgb(i));
        } else {
            bg.push(image.rgb(i));
        }
    }
    let seed = config.seed;
    let fg = fit_color_gmm(&fg, config.components, config.covariance_floor, seed).model;
    let bg = fit_color_gmm(&bg, config.components, config.covariance_floor, seed ^ 1).model;
    (fg, bg)
}
