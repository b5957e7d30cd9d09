//! Hand-engineered per-pixel features consumed by the pixel scorer.

use crate::dataset::PixelGrid;
use crate::error::{contract, Result};

/// Number of features produced per pixel by [`extract_features`].
pub const FEATURE_DIM: usize = 14;

/// Index of the gradient-magnitude feature.
pub const GRADIENT_FEATURE: usize = 10;
/// Index of the 3x3 local standard deviation feature.
pub const LOCAL_STD_FEATURE: usize = 12;
/// Index of the constant bias feature (always last).
pub const BIAS_FEATURE: usize = FEATURE_DIM - 1;

const SMOOTHING_SCALES: [f64; 3] = [1.0, 2.0, 4.0];

/// Row-major per-pixel feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl FeatureGrid {
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// Mean of the three color channels.
pub fn intensity(image: &PixelGrid) -> Vec<f64> {
    (0..image.len())
        .map(|i| {
            let [r, g, b] = image.rgb(i);
            (r + g + b) / 3.0
        })
        .collect()
}

/// Normalized Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

fn clamp_index(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable Gaussian blur with replicated borders.
pub fn gaussian_blur(plane: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sx = clamp_index(x as i64 + k as i64 - radius, width);
                acc += w * plane[y * width + sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                let sy = clamp_index(y as i64 + k as i64 - radius, height);
                acc += w * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Central-difference gradient magnitude with replicated borders.
pub fn gradient_magnitude(plane: &[f64], width: usize, height: usize) -> Vec<f64> {
    let at = |x: i64, y: i64| plane[clamp_index(y, height) * width + clamp_index(x, width)];
    let mut out = Vec::with_capacity(plane.len());
    for y in 0..height as i64 {
        for x in 0..width as i64 {
            let gx = (at(x + 1, y) - at(x - 1, y)) / 2.0;
            let gy = (at(x, y + 1) - at(x, y - 1)) / 2.0;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

/// Computes the 14 per-pixel features:
/// RGB, two opponent channels, normalized column and row, intensity blurred
/// at sigma 1, 2 and 4, gradient magnitude at sigma 1, 3x3 intensity mean and
/// standard deviation, and a trailing constant 1.
pub fn extract_features(image: &PixelGrid) -> Result<FeatureGrid> {
    if image.channels() != 3 {
        return Err(contract(format!(
            "feature extraction needs an RGB image, got {} channels",
            image.channels()
        )));
    }
    let (w, h) = (image.width(), image.height());
    let gray = intensity(image);
    let smoothed: Vec<Vec<f64>> = SMOOTHING_SCALES
        .iter()
        .map(|s| gaussian_blur(&gray, w, h, *s))
        .collect();
    let grad = gradient_magnitude(&smoothed[0], w, h);

    let mut values = Vec::with_capacity(w * h * FEATURE_DIM);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let [r, g, b] = image.rgb(i);
            let (mut sum, mut sum_sq) = (0.0, 0.0);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let v = gray[clamp_index(y as i64 + dy, h) * w + clamp_index(x as i64 + dx, w)];
                    sum += v;
                    sum_sq += v * v;
                }
            }
            let mean = sum / 9.0;
            let var = (sum_sq / 9.0 - mean * mean).max(0.0);
            values.extend_from_slice(&[
                r,
                g,
                b,
                r - g,
                (r + g) / 2.0 - b,
                x as f64 / w as f64,
                y as f64 / h as f64,
                smoothed[0][i],
                smoothed[1][i],
                smoothed[2][i],
                grad[i],
                mean,
                var.sqrt(),
                1.0,
            ]);
        }
    }
    Ok(FeatureGrid {
        width: w,
        height: h,
        dim: FEATURE_DIM,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(cells: usize, cell: usize) -> PixelGrid {
        let n = cells * cell;
        let values = (0..n * n)
            .flat_map(|i| {
                let (x, y) = (i % n, i / n);
                let v = if (x / cell + y / cell) % 2 == 0 { 0.9 } else { 0.1 };
                [v, v, v]
            })
            .collect();
        PixelGrid::new(n, n, 3, values).unwrap()
    }

    /// Direct 2-D convolution with the unnormalized-then-normalized 2-D kernel.
    fn blur_2d_oracle(plane: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
        let r = (3.0 * sigma).ceil() as i64;
        let mut out = vec![0.0; w * h];
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let (mut acc, mut norm) = (0.0, 0.0);
                for dy in -r..=r {
                    for dx in -r..=r {
                        let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
                        let sx = (x + dx).clamp(0, w as i64 - 1) as usize;
                        let sy = (y + dy).clamp(0, h as i64 - 1) as usize;
                        acc += wgt * plane[sy * w + sx];
                        norm += wgt;
                    }
                }
                out[(y as usize) * w + x as usize] = acc / norm;
            }
        }
        out
    }

    #[test]
    fn constant_image_has_flat_texture_features() {
        let img = PixelGrid::filled(9, 7, [0.5, 0.5, 0.5]).unwrap();
        let f = extract_features(&img).unwrap();
        assert_eq!(f.dim, FEATURE_DIM);
        for i in 0..f.len() {
            let p = f.pixel(i);
            assert!(p[GRADIENT_FEATURE].abs() < 1e-12);
            assert!(p[LOCAL_STD_FEATURE].abs() < 1e-7);
            assert_eq!(p[BIAS_FEATURE], 1.0);
        }
    }

    #[test]
    fn checkerboard_gradient_matches_convolution_oracle() {
        let img = checkerboard(8, 8);
        let (w, h) = (img.width(), img.height());
        let f = extract_features(&img).unwrap();
        let smooth = blur_2d_oracle(&intensity(&img), w, h, 1.0);
        let at = |x: i64, y: i64| {
            smooth[(y.clamp(0, h as i64 - 1) as usize) * w + x.clamp(0, w as i64 - 1) as usize]
        };
        let mut boundary_max: f64 = 0.0;
        let mut interior_max: f64 = 0.0;
        for y in 0..h {
            for x in 0..w {
                let (xi, yi) = (x as i64, y as i64);
                let gx = (at(xi + 1, yi) - at(xi - 1, yi)) / 2.0;
                let gy = (at(xi, yi + 1) - at(xi, yi - 1)) / 2.0;
                let expected = (gx * gx + gy * gy).sqrt();
                let got = f.pixel(y * w + x)[GRADIENT_FEATURE];
                assert!((got - expected).abs() < 1e-12, "({x},{y}): {got} vs {expected}");

                let dist = |c: usize| (c % 8).min(7 - c % 8);
                if dist(x) >= 2 && dist(y) >= 2 {
                    interior_max = interior_max.max(got);
                } else if dist(x) == 0 || dist(y) == 0 {
                    boundary_max = boundary_max.max(got);
                }
            }
        }
        let global = f.values.chunks(FEATURE_DIM).map(|p| p[GRADIENT_FEATURE]).fold(0.0, f64::max);
        assert_eq!(boundary_max, global);
        // sigma = 1 smoothing leaves a tail of about 13% of the peak two pixels in
        assert!(interior_max < 0.15 * boundary_max, "{interior_max} vs {boundary_max}");
    }

    #[test]
    fn rejects_grayscale_input() {
        let img = PixelGrid::new(2, 2, 1, vec![0.1; 4]).unwrap();
        assert!(extract_features(&img).is_err());
    }
}
