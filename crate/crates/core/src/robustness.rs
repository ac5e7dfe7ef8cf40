//! Out-of-distribution inputs and the detection harness.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::metrics::roc_auc;
use crate::models::ModelBundle;
use crate::objectives::{standard_graph, GraphOptions};
use crate::tensor::Tensor;
use crate::uncertainty::{uncertainty, EnsembleSampler, Models};

const CHUNK: usize = 500;
/// Outliers are scored with a sampler seed shifted by this amount.
const OUTLIER_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Gradient-sign perturbation before clipping, `ε·sign(∇ₓ CE)` with `sign(0) = 0`.
pub fn fgsm_perturbation(bundle: &ModelBundle, x: &Tensor, y: &[usize], eps: f64) -> Result<Tensor> {
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be >= 0, got {eps}")));
    }
    let mut out = Vec::with_capacity(x.len());
    let all: Vec<usize> = (0..y.len()).collect();
    for chunk in all.chunks(CHUNK) {
        let xc = x.select_rows(chunk);
        let yc: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
        let g = standard_graph(
            bundle,
            &xc,
            &yc,
            GraphOptions {
                input_grad: true,
                dropout: None,
            },
        )?;
        let grads = g.tape.backward(g.total)?;
        let gx = grads.wrt(g.input);
        out.extend(gx.data().iter().map(|&v| {
            if v > 0.0 {
                eps
            } else if v < 0.0 {
                -eps
            } else {
                0.0
            }
        }));
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `clip(x + ε·sign(∇ₓ CE(f(x), y)), 0, 1)`.
pub fn fgsm(bundle: &ModelBundle, x: &Tensor, y: &[usize], eps: f64) -> Result<Tensor> {
    let delta = fgsm_perturbation(bundle, x, y, eps)?;
    x.zip_map(&delta, |a, d| (a + d).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorruptionKind {
    /// `x + delta`.
    Brightness { delta: f64 },
    /// Counter-clockwise rotation about the image centre.
    Rotate { degrees: f64 },
    Translate { dx: f64, dy: f64 },
    /// Zoom about the centre; `factor > 1` enlarges.
    Scale { factor: f64 },
    /// Horizontal shear `x' = x + amount·(y − cy)`.
    Shear { amount: f64 },
    /// `x + severity·√x·z` with `z ~ N(0, 1)`.
    ShotNoise { severity: f64 },
    /// Each pixel becomes 0 or 1 with probability `rate`.
    ImpulseNoise { rate: f64 },
    /// Inverts `rows` rows centred vertically.
    Stripe { rows: usize },
    /// Overlays a fixed zigzag polyline at intensity 1.
    Zigzag { amplitude: f64 },
}

impl CorruptionKind {
    pub const NAMES: [&'static str; 9] = [
        "brightness",
        "rotate",
        "translate",
        "scale",
        "shear",
        "shot_noise",
        "impulse_noise",
        "stripe",
        "zigzag",
    ];

    /// A kind from its name and a single severity value.
    pub fn from_name(name: &str, severity: f64) -> Result<Self> {
        Ok(match name {
            "brightness" => Self::Brightness { delta: severity },
            "rotate" => Self::Rotate { degrees: severity },
            "translate" => Self::Translate {
                dx: severity,
                dy: severity,
            },
            "scale" => Self::Scale { factor: severity },
            "shear" => Self::Shear { amount: severity },
            "shot_noise" => Self::ShotNoise { severity },
            "impulse_noise" => Self::ImpulseNoise { rate: severity },
            "stripe" => Self::Stripe {
                rows: severity.max(0.0).round() as usize,
            },
            "zigzag" => Self::Zigzag {
                amplitude: severity,
            },
            other => return Err(Error::Parameter(format!("unknown corruption `{other}`"))),
        })
    }

    /// A moderate default severity for each kind, in `NAMES` order.
    pub fn default_suite() -> Vec<Self> {
        vec![
            Self::Brightness { delta: 0.3 },
            Self::Rotate { degrees: 30.0 },
            Self::Translate { dx: 4.0, dy: 4.0 },
            Self::Scale { factor: 1.4 },
            Self::Shear { amount: 0.4 },
            Self::ShotNoise { severity: 0.5 },
            Self::ImpulseNoise { rate: 0.1 },
            Self::Stripe { rows: 4 },
            Self::Zigzag { amplitude: 6.0 },
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Brightness { .. } => "brightness",
            Self::Rotate { .. } => "rotate",
            Self::Translate { .. } => "translate",
            Self::Scale { .. } => "scale",
            Self::Shear { .. } => "shear",
            Self::ShotNoise { .. } => "shot_noise",
            Self::ImpulseNoise { .. } => "impulse_noise",
            Self::Stripe { .. } => "stripe",
            Self::Zigzag { .. } => "zigzag",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Brightness { delta } => delta.is_finite(),
            Self::Rotate { degrees } => degrees.is_finite(),
            Self::Translate { dx, dy } => dx.is_finite() && dy.is_finite(),
            Self::Scale { factor } => factor > 0.0 && factor.is_finite(),
            Self::Shear { amount } => amount.is_finite(),
            Self::ShotNoise { severity } => severity >= 0.0 && severity.is_finite(),
            Self::ImpulseNoise { rate } => (0.0..=1.0).contains(&rate),
            Self::Stripe { .. } => true,
            Self::Zigzag { amplitude } => amplitude >= 0.0 && amplitude.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid severity for {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    #[serde(flatten)]
    pub kind: CorruptionKind,
    #[serde(default)]
    pub seed: u64,
}

impl Corruption {
    pub fn new(kind: CorruptionKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

fn bilinear(img: &[f64], h: usize, w: usize, r: f64, c: f64) -> f64 {
    let r0 = r.floor();
    let c0 = c.floor();
    let fr = r - r0;
    let fc = c - c0;
    let at = |rr: f64, cc: f64| -> f64 {
        if rr < 0.0 || cc < 0.0 || rr >= h as f64 || cc >= w as f64 {
            0.0
        } else {
            img[rr as usize * w + cc as usize]
        }
    };
    let mut v = 0.0;
    for (dr, wr) in [(0.0, 1.0 - fr), (1.0, fr)] {
        for (dc, wc) in [(0.0, 1.0 - fc), (1.0, fc)] {
            let wt = wr * wc;
            if wt != 0.0 {
                v += wt * at(r0 + dr, c0 + dc);
            }
        }
    }
    v
}

/// Resamples with `source = m·(p − centre) + centre − shift` for each output pixel `p`.
fn inverse_affine(img: &[f64], h: usize, w: usize, m: [[f64; 2]; 2], shift: (f64, f64)) -> Vec<f64> {
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let y = r as f64 - cr;
            let x = c as f64 - cc;
            let sx = m[0][0] * x + m[0][1] * y + cc - shift.0;
            let sy = m[1][0] * x + m[1][1] * y + cr - shift.1;
            out[r * w + c] = bilinear(img, h, w, sy, sx);
        }
    }
    out
}

/// Exact cosine and sine for multiples of 90°.
fn cos_sin(degrees: f64) -> (f64, f64) {
    let q = degrees / 90.0;
    if q == q.round() {
        match (q.round() as i64).rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let t = degrees * PI / 180.0;
        (t.cos(), t.sin())
    }
}

fn draw_segment(out: &mut [f64], h: usize, w: usize, a: (f64, f64), b: (f64, f64)) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let steps = (len * 4.0).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let r = (a.0 + t * (b.0 - a.0)).round();
        let c = (a.1 + t * (b.1 - a.1)).round();
        if r >= 0.0 && c >= 0.0 && (r as usize) < h && (c as usize) < w {
            out[r as usize * w + c as usize] = 1.0;
        }
    }
}

/// Applies `c` to one `h×w` image; stochastic kinds draw from `rng`.
fn corrupt_with<R: Rng + ?Sized>(x: &[f64], h: usize, w: usize, kind: &CorruptionKind, rng: &mut R) -> Vec<f64> {
    let mut out = match *kind {
        CorruptionKind::Brightness { delta } => x.iter().map(|v| v + delta).collect(),
        CorruptionKind::Rotate { degrees } => {
            // rows grow downward, so a counter-clockwise turn on screen is R(−θ) in (x, y)
            let (c, s) = cos_sin(degrees);
            inverse_affine(x, h, w, [[c, -s], [s, c]], (0.0, 0.0))
        }
        CorruptionKind::Translate { dx, dy } => inverse_affine(x, h, w, [[1.0, 0.0], [0.0, 1.0]], (dx, dy)),
        CorruptionKind::Scale { factor } => {
            let k = 1.0 / factor;
            inverse_affine(x, h, w, [[k, 0.0], [0.0, k]], (0.0, 0.0))
        }
        CorruptionKind::Shear { amount } => inverse_affine(x, h, w, [[1.0, -amount], [0.0, 1.0]], (0.0, 0.0)),
        CorruptionKind::ShotNoise { severity } => x
            .iter()
            .map(|&v| {
                let z: f64 = StandardNormal.sample(rng);
                v + severity * v.max(0.0).sqrt() * z
            })
            .collect(),
        CorruptionKind::ImpulseNoise { rate } => x
            .iter()
            .map(|&v| {
                let hit = rng.random::<f64>() < rate;
                let salt = rng.random::<bool>();
                if hit {
                    if salt {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    v
                }
            })
            .collect(),
        CorruptionKind::Stripe { rows } => {
            let rows = rows.min(h);
            let start = (h - rows) / 2;
            let mut out = x.to_vec();
            for v in &mut out[start * w..(start + rows) * w] {
                *v = 1.0 - *v;
            }
            out
        }
        CorruptionKind::Zigzag { amplitude } => {
            let mut out = x.to_vec();
            let mid = (h as f64 - 1.0) / 2.0;
            let teeth = 4;
            let pts: Vec<(f64, f64)> = (0..=teeth)
                .map(|i| {
                    let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                    (mid + sign * amplitude, i as f64 * (w as f64 - 1.0) / teeth as f64)
                })
                .collect();
            for seg in pts.windows(2) {
                draw_segment(&mut out, h, w, seg[0], seg[1]);
            }
            out
        }
    };
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Corrupts a single image; deterministic per `(x, c)`.
pub fn corrupt(x: &[f64], height: usize, width: usize, c: &Corruption) -> Result<Vec<f64>> {
    corrupt_indexed(x, height, width, c, 0)
}

fn corrupt_indexed(x: &[f64], height: usize, width: usize, c: &Corruption, index: usize) -> Result<Vec<f64>> {
    if x.len() != height * width {
        return Err(Error::dim("corruption input", &[x.len()], &[height * width]));
    }
    c.kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    rng.set_stream(index as u64);
    Ok(corrupt_with(x, height, width, &c.kind, &mut rng))
}

/// Corrupts every image; example `i` uses stream `i` of the corruption seed.
pub fn corrupt_dataset(data: &LabeledDataset, c: &Corruption) -> Result<LabeledDataset> {
    let mut px = Vec::with_capacity(data.images.len());
    for i in 0..data.len() {
        px.extend(corrupt_indexed(data.image(i), data.height, data.width, c, i)?);
    }
    data.with_images(Tensor::new(data.images.shape().to_vec(), px)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodExperiment {
    pub inlier_scores: Vec<f64>,
    pub outlier_scores: Vec<f64>,
    /// Outliers are the positive class.
    pub auc: f64,
}

pub fn run_ood_experiment(
    models: Models<'_>,
    inliers: &Tensor,
    outliers: &Tensor,
    sampler: &EnsembleSampler,
) -> Result<OodExperiment> {
    if inliers.rows() == 0 || outliers.rows() == 0 {
        return Err(Error::Data("OOD experiment needs non-empty sets".into()));
    }
    let inlier_scores = uncertainty(models, inliers, sampler)?.entropies();
    let shifted = EnsembleSampler {
        seed: sampler.seed.wrapping_add(OUTLIER_SEED_OFFSET),
        ..sampler.clone()
    };
    let outlier_scores = uncertainty(models, outliers, &shifted)?.entropies();
    let auc = roc_auc(&outlier_scores, &inlier_scores)?;
    Ok(OodExperiment {
        inlier_scores,
        outlier_scores,
        auc,
    })
}

/// Splits off one class: training data without it, test inliers, and test outliers.
pub fn hold_out_class(
    train: &LabeledDataset,
    test: &LabeledDataset,
    class: usize,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    if class >= train.classes {
        return Err(Error::Parameter(format!("class {class} out of range")));
    }
    Ok((
        train.filter_labels(|l| l != class)?,
        test.filter_labels(|l| l != class)?,
        test.filter_labels(|l| l == class)?,
    ))
}
