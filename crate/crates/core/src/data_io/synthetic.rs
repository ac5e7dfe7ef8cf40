//! Two-class toy images with a visible protected attribute and a
//! group-dependent spurious cue.
//!
//! Each image holds a faint, jittered shape (hollow square for class 0, cross
//! for class 1) under pixel noise. The protected group is drawn as a band along
//! the top rows (group 0, "A") or bottom rows (group 1, "B"). The band covers
//! the left or right half of the image; that side is the cue. It equals the label
//! with probability `rate_a` in group A and `rate_b` in group B, so a naive
//! classifier learns to trust it and does better on group A.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub side: usize,
    pub rate_a: f64,
    pub rate_b: f64,
    pub shape_contrast: f64,
    pub band_intensity: f64,
    pub band_rows: usize,
    pub noise_sigma: f64,
    /// Maximum shape offset in pixels along each axis.
    pub jitter: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            side: 16,
            rate_a: 0.9,
            rate_b: 0.5,
            shape_contrast: 0.25,
            band_intensity: 0.8,
            band_rows: 3,
            noise_sigma: 0.3,
            jitter: 2,
        }
    }
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        for (name, r) in [("rate_a", self.rate_a), ("rate_b", self.rate_b)] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        let shape = 6;
        if self.side < shape + 2 * self.jitter + 2 * self.band_rows {
            return Err(Error::Parameter(format!(
                "side {} too small for the shape, jitter and bands",
                self.side
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::Parameter("noise_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

fn draw_shape(img: &mut [f64], side: usize, class: usize, top: usize, left: usize, v: f64) {
    let s = 6;
    for i in 0..s {
        for j in 0..s {
            let on = if class == 0 {
                i == 0 || j == 0 || i == s - 1 || j == s - 1
            } else {
                i == j || i + j == s - 1
            };
            if on {
                img[(top + i) * side + left + j] += v;
            }
        }
    }
}

/// Default-configuration dataset.
pub fn make_biased_synthetic(n: usize, seed: u64) -> Result<LabeledDataset> {
    make_biased_synthetic_with(n, seed, &SyntheticConfig::default())
}

pub fn make_biased_synthetic_with(n: usize, seed: u64, cfg: &SyntheticConfig) -> Result<LabeledDataset> {
    Ok(make_biased_synthetic_with_cues(n, seed, cfg)?.0)
}

/// Same draw as [`make_biased_synthetic_with`], plus the cue side of every
/// example (0 = left, 1 = right).
pub fn make_biased_synthetic_with_cues(
    n: usize,
    seed: u64,
    cfg: &SyntheticConfig,
) -> Result<(LabeledDataset, Vec<usize>)> {
    if n < 100 {
        return Err(Error::Parameter(format!("synthetic set needs n >= 100, got {n}")));
    }
    cfg.validate()?;
    let side = cfg.side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Parameter(e.to_string()))?;
    let mut px = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    let mut groups = Vec::with_capacity(n);
    let mut cues = Vec::with_capacity(n);
    let centre = (side - 6) / 2;
    for _ in 0..n {
        let y = rng.random_range(0..2usize);
        let g = rng.random_range(0..2usize);
        let rate = if g == 0 { cfg.rate_a } else { cfg.rate_b };
        let cue = if rng.random::<f64>() < rate { y } else { 1 - y };
        let mut img = vec![0.0; side * side];
        let rows = if g == 0 {
            0..cfg.band_rows
        } else {
            side - cfg.band_rows..side
        };
        let cols = if cue == 0 { 0..side / 2 } else { side / 2..side };
        for r in rows {
            for c in cols.clone() {
                img[r * side + c] = cfg.band_intensity;
            }
        }
        let j = cfg.jitter;
        let top = centre - j + rng.random_range(0..=2 * j);
        let left = centre - j + rng.random_range(0..=2 * j);
        draw_shape(&mut img, side, y, top, left, cfg.shape_contrast);
        for v in img.iter_mut() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
        px.extend_from_slice(&img);
        labels.push(y);
        groups.push(g);
        cues.push(cue);
    }
    let data = LabeledDataset::new(Tensor::new([n, side * side], px)?, labels, side, side, 2, Split::Other)?
        .with_protected(groups)?;
    Ok((data, cues))
}
