//! Entropy of the class histogram produced by an implicit or explicit ensemble.
//!
//! Three samplers are supported: random recursion paths through one bundle,
//! dropout masks on one bundle, or the members of an explicit ensemble. Random
//! draws for example `i` come from a ChaCha stream keyed by `(seed, i)`, so
//! results do not depend on batching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::Report;
use crate::error::{Error, Result};
use crate::models::ModelBundle;
use crate::objectives::PathSpec;
use crate::tensor::{self, Tensor};

const CHUNK: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    RedecnnPaths,
    DropoutMasks,
    EnsembleMembers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSampler {
    pub kind: SamplerKind,
    pub samples: usize,
    pub seed: u64,
    /// Path length for `redecnn_paths`; predictions use the final depth.
    pub depth: usize,
    /// Drop probability for `dropout_masks`.
    pub dropout_p: f64,
}

impl Default for EnsembleSampler {
    fn default() -> Self {
        Self {
            kind: SamplerKind::RedecnnPaths,
            samples: 30,
            seed: 0,
            depth: 8,
            dropout_p: 0.5,
        }
    }
}

impl EnsembleSampler {
    pub fn paths(samples: usize, depth: usize, seed: u64) -> Self {
        Self {
            kind: SamplerKind::RedecnnPaths,
            samples,
            seed,
            depth,
            ..Self::default()
        }
    }

    pub fn dropout(samples: usize, p: f64, seed: u64) -> Self {
        Self {
            kind: SamplerKind::DropoutMasks,
            samples,
            seed,
            dropout_p: p,
            ..Self::default()
        }
    }

    pub fn members(count: usize) -> Self {
        Self {
            kind: SamplerKind::EnsembleMembers,
            samples: count,
            ..Self::default()
        }
    }
}

/// Models an uncertainty estimate is drawn from.
#[derive(Clone, Copy, Debug)]
pub enum Models<'a> {
    Single(&'a ModelBundle),
    Ensemble(&'a [ModelBundle]),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleUncertainty {
    pub histogram: Vec<usize>,
    pub entropy: f64,
    pub majority: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyReport {
    pub classes: usize,
    pub samples: usize,
    pub examples: Vec<ExampleUncertainty>,
}

impl UncertaintyReport {
    pub fn entropies(&self) -> Vec<f64> {
        self.examples.iter().map(|e| e.entropy).collect()
    }

    pub fn majorities(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.majority).collect()
    }

    /// Score records: example id, entropy, majority class, and whether it matches `labels`.
    pub fn to_report(&self, labels: &[usize]) -> Result<Report> {
        if labels.len() != self.examples.len() {
            return Err(Error::Data(format!(
                "{} labels for {} scored examples",
                labels.len(),
                self.examples.len()
            )));
        }
        let mut r = Report::new("uncertainty", &["example", "entropy", "majority", "correct"])?;
        for (i, (e, &y)) in self.examples.iter().zip(labels).enumerate() {
            r.push(&[&i, &e.entropy, &e.majority, &u8::from(e.majority == y)])?;
        }
        Ok(r)
    }
}

/// `−Σ p ln p` of the normalised histogram, with `0·ln 0 = 0`.
pub fn entropy(histogram: &[usize]) -> f64 {
    let n: usize = histogram.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let h: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    h.max(0.0)
}

/// Most frequent class; ties go to the smallest index.
pub fn majority(histogram: &[usize]) -> usize {
    let mut best = 0;
    for (c, &v) in histogram.iter().enumerate() {
        if v > histogram[best] {
            best = c;
        }
    }
    best
}

pub fn summarize(histogram: Vec<usize>) -> ExampleUncertainty {
    ExampleUncertainty {
        entropy: entropy(&histogram),
        majority: majority(&histogram),
        histogram,
    }
}

fn example_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn gather_rows(layers: &[Tensor], choice: &[usize]) -> Tensor {
    let cols = layers[0].cols();
    let mut out = Vec::with_capacity(choice.len() * cols);
    for (i, &l) in choice.iter().enumerate() {
        out.extend_from_slice(layers[l].row(i));
    }
    Tensor::from_parts(vec![choice.len(), cols], out)
}

/// Logits after following per-example paths for `depth` recursion steps.
pub fn logits_along_paths(
    bundle: &ModelBundle,
    x: &Tensor,
    paths: &[PathSpec],
    depth: usize,
) -> Result<Tensor> {
    if paths.len() != x.rows() {
        return Err(Error::Contract(format!(
            "{} paths for {} examples",
            paths.len(),
            x.rows()
        )));
    }
    for p in paths {
        p.validate(bundle.arch.blocks)?;
        if depth > p.depth() {
            return Err(Error::Contract(format!(
                "depth {depth} exceeds path length {}",
                p.depth()
            )));
        }
    }
    let (mut logits, mut trace) = bundle.forward_with_trace(x)?;
    for step in 0..depth {
        let choice: Vec<usize> = paths.iter().map(|p| p.indices()[step] - 1).collect();
        let h = gather_rows(&trace.activations, &choice);
        let xhat = bundle.decode(&h)?;
        let (l, t) = bundle.forward_with_trace(&xhat)?;
        logits = l;
        trace = t;
    }
    Ok(logits)
}

/// Argmax of `f` on the depth-`depth` decoded input along `path`, for every row of `x`.
pub fn predict_along_path(
    bundle: &ModelBundle,
    x: &Tensor,
    path: &PathSpec,
    depth: usize,
) -> Result<Vec<usize>> {
    let paths = vec![path.clone(); x.rows()];
    Ok(logits_along_paths(bundle, x, &paths, depth)?.argmax_rows())
}

fn dropout_logits(bundle: &ModelBundle, x: &Tensor, masks: &[Vec<Vec<f64>>]) -> Result<Tensor> {
    let c = &bundle.classifier;
    let mut h = x.clone();
    for layer in 1..=c.num_blocks() {
        h = c.block(layer, &h)?;
        let w = h.cols();
        for (i, m) in masks.iter().enumerate() {
            for (v, k) in h.data_mut()[i * w..(i + 1) * w].iter_mut().zip(&m[layer - 1]) {
                *v *= k;
            }
        }
    }
    c.head.forward(&h)
}

fn check_rows(bundle: &ModelBundle, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != bundle.arch.input_dim {
        return Err(Error::dim("uncertainty input", x.shape(), &[x.rows(), bundle.arch.input_dim]));
    }
    Ok(())
}

/// Draws `sampler.samples` predictions per example and summarises them.
pub fn uncertainty(models: Models<'_>, x: &Tensor, sampler: &EnsembleSampler) -> Result<UncertaintyReport> {
    if sampler.samples < 1 {
        return Err(Error::Parameter("sampler needs at least one sample".into()));
    }
    let (first, members) = match (sampler.kind, models) {
        (SamplerKind::EnsembleMembers, Models::Ensemble(ms)) => {
            if ms.len() != sampler.samples {
                return Err(Error::Contract(format!(
                    "sampler expects {} members, got {}",
                    sampler.samples,
                    ms.len()
                )));
            }
            if ms.iter().any(|m| m.arch.classes != ms[0].arch.classes) {
                return Err(Error::Contract("ensemble members disagree on class count".into()));
            }
            (&ms[0], ms)
        }
        (SamplerKind::EnsembleMembers, Models::Single(_)) => {
            return Err(Error::Contract("ensemble sampler needs several models".into()));
        }
        (_, Models::Single(b)) => (b, std::slice::from_ref(b)),
        (_, Models::Ensemble(_)) => {
            return Err(Error::Contract("path and dropout samplers take a single model".into()));
        }
    };
    for m in members {
        check_rows(m, x)?;
    }
    if sampler.kind == SamplerKind::DropoutMasks {
        tensor::check_dropout_p(sampler.dropout_p)?;
    }
    let k = first.arch.classes;
    let n = sampler.samples;
    let mut hist = vec![vec![0usize; k]; x.rows()];
    let all: Vec<usize> = (0..x.rows()).collect();
    for chunk in all.chunks(CHUNK) {
        let xc = x.select_rows(chunk);
        match sampler.kind {
            SamplerKind::EnsembleMembers => {
                for m in members {
                    for (j, c) in m.classifier.predict(&xc)?.into_iter().enumerate() {
                        hist[chunk[j]][c] += 1;
                    }
                }
            }
            SamplerKind::RedecnnPaths => {
                let blocks = first.arch.blocks;
                let per_example: Vec<Vec<PathSpec>> = chunk
                    .iter()
                    .map(|&i| {
                        let mut rng = example_rng(sampler.seed, i);
                        (0..n)
                            .map(|_| crate::objectives::sample_path(blocks, sampler.depth, &mut rng))
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<_>>()?;
                for s in 0..n {
                    let paths: Vec<PathSpec> = per_example.iter().map(|p| p[s].clone()).collect();
                    let pred = logits_along_paths(first, &xc, &paths, sampler.depth)?.argmax_rows();
                    for (j, c) in pred.into_iter().enumerate() {
                        hist[chunk[j]][c] += 1;
                    }
                }
            }
            SamplerKind::DropoutMasks => {
                let width = first.arch.hidden;
                let blocks = first.arch.blocks;
                let mut rngs: Vec<ChaCha8Rng> =
                    chunk.iter().map(|&i| example_rng(sampler.seed, i)).collect();
                for _ in 0..n {
                    let masks: Vec<Vec<Vec<f64>>> = rngs
                        .iter_mut()
                        .map(|rng| {
                            (0..blocks)
                                .map(|_| tensor::dropout_mask(width, sampler.dropout_p, rng))
                                .collect::<Result<Vec<_>>>()
                        })
                        .collect::<Result<_>>()?;
                    let pred = dropout_logits(first, &xc, &masks)?.argmax_rows();
                    for (j, c) in pred.into_iter().enumerate() {
                        hist[chunk[j]][c] += 1;
                    }
                }
            }
        }
    }
    Ok(UncertaintyReport {
        classes: k,
        samples: n,
        examples: hist.into_iter().map(summarize).collect(),
    })
}

/// Random class histograms summing to `n`, for property checks.
pub fn random_histogram<R: Rng + ?Sized>(classes: usize, n: usize, rng: &mut R) -> Vec<usize> {
    let mut h = vec![0; classes];
    let spread = rng.random_range(1..=classes);
    for _ in 0..n {
        h[rng.random_range(0..spread)] += 1;
    }
    h
}
