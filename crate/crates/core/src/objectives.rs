//! Training objectives.
//!
//! * standard: cross-entropy of `f(x)`.
//! * DecNN: `CE(f(x), y) + β·(1/L)·Σ_l MSE(g(h_l), x)`.
//! * ReDecNN: root cross-entropy plus, for each depth `d = 1..D` along a
//!   sampled path, `α^d·CE(f(x̂_d), y) + β·α^d·MSE(x̂_d, x)` where
//!   `x̂_d = g(h^{(d-1)}_{l_{d-1}})` and `h^{(d)}` is the trace of `f(x̂_d)`.
//! * compose: ReDecNN plus `α^d·CE_soft(f(x̂_d), m(x̂_d))` with `m` frozen and
//!   its prediction treated as a fixed target.
//! * fairness: ReDecNN plus `α^d·CE(m(x̂_d), uniform)`; gradients pass through
//!   `m`'s input but never reach its parameters.
//!
//! Every builder returns a [`LossGraph`] (the tape, bound parameters and the
//! scalar loss node) together with a [`LossBreakdown`] of the component values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{BoundBundle, Mlp, ModelBundle, PretrainedModel};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Layer indices `l_0..l_{D-1}` (each in `1..=L`) selecting which decoded
/// activation feeds each recursion depth.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSpec {
    indices: Vec<usize>,
}

impl PathSpec {
    pub fn new(indices: Vec<usize>, blocks: usize) -> Result<Self> {
        let path = Self { indices };
        path.validate(blocks)?;
        Ok(path)
    }

    pub fn empty() -> Self {
        Self {
            indices: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn validate(&self, blocks: usize) -> Result<()> {
        if let Some(&bad) = self.indices.iter().find(|&&l| l < 1 || l > blocks) {
            return Err(Error::Contract(format!(
                "path entry {bad} outside layer range 1..={blocks}"
            )));
        }
        Ok(())
    }
}

/// `D` independent uniform draws from `1..=L`.
pub fn sample_path<R: Rng + ?Sized>(blocks: usize, depth: usize, rng: &mut R) -> Result<PathSpec> {
    if blocks < 1 {
        return Err(Error::Parameter("cannot sample a path with L = 0".into()));
    }
    Ok(PathSpec {
        indices: (0..depth).map(|_| rng.random_range(1..=blocks)).collect(),
    })
}

/// One independently sampled path per example.
pub fn sample_paths<R: Rng + ?Sized>(
    count: usize,
    blocks: usize,
    depth: usize,
    rng: &mut R,
) -> Result<Vec<PathSpec>> {
    (0..count).map(|_| sample_path(blocks, depth, rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Standard,
    Decnn,
    Redecnn,
    Compose,
    Fairness,
}

impl ObjectiveKind {
    pub fn is_recursive(self) -> bool {
        matches!(self, Self::Redecnn | Self::Compose | Self::Fairness)
    }

    pub fn needs_pretrained(self) -> bool {
        matches!(self, Self::Compose | Self::Fairness)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Standard => "standard",
            Self::Decnn => "decnn",
            Self::Redecnn => "redecnn",
            Self::Compose => "compose",
            Self::Fairness => "fairness",
        }
    }
}

impl std::str::FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "standard" => Self::Standard,
            "decnn" => Self::Decnn,
            "redecnn" => Self::Redecnn,
            "compose" => Self::Compose,
            "fairness" => Self::Fairness,
            other => {
                return Err(Error::Parameter(format!("unknown objective `{other}`")));
            }
        })
    }
}

/// Component values of one loss evaluation and the weights that combine them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub kind: ObjectiveKind,
    pub total: f64,
    pub ce_root: f64,
    pub beta: f64,
    pub alpha: f64,
    /// Cross-entropy of `f(x̂_d)` for `d = 1..D`; empty for non-recursive objectives.
    pub ce_per_depth: Vec<f64>,
    /// Per-depth reconstruction MSE (recursive), or per-layer MSE at the root (DecNN).
    pub recon_per_depth: Vec<f64>,
    /// Per-layer root reconstruction added by `recon_all_layers_at_root`.
    pub root_recon: Option<Vec<f64>>,
    /// Per-depth pretrained-model term (compose / fairness).
    pub aux_per_depth: Option<Vec<f64>>,
}

impl LossBreakdown {
    fn depth_weight(&self, d: usize) -> f64 {
        self.alpha.powi(d as i32)
    }

    /// Weighted sum of the auxiliary terms, `Σ_d α^d·aux_d`.
    pub fn aux(&self) -> Option<f64> {
        self.aux_per_depth.as_ref().map(|a| {
            a.iter()
                .enumerate()
                .map(|(i, v)| self.depth_weight(i + 1) * v)
                .sum()
        })
    }

    /// Total recomputed from the stored parts and weights.
    pub fn recomputed_total(&self) -> f64 {
        match self.kind {
            ObjectiveKind::Standard => self.ce_root,
            ObjectiveKind::Decnn => self.ce_root + self.beta * mean(&self.recon_per_depth),
            _ => {
                let mut t = self.ce_root;
                for (i, (ce, rec)) in self.ce_per_depth.iter().zip(&self.recon_per_depth).enumerate() {
                    let w = self.depth_weight(i + 1);
                    t += w * ce + self.beta * w * rec;
                }
                if let Some(root) = &self.root_recon {
                    t += self.beta * mean(root);
                }
                t + self.aux().unwrap_or(0.0)
            }
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// How paths are supplied to a recursive objective.
#[derive(Clone, Copy, Debug)]
pub enum Paths<'a> {
    /// One path used for every example in the batch.
    Shared(&'a PathSpec),
    /// One path per example.
    PerExample(&'a [PathSpec]),
}

impl Paths<'_> {
    fn depth(&self) -> usize {
        match self {
            Paths::Shared(p) => p.depth(),
            Paths::PerExample(ps) => ps.first().map(PathSpec::depth).unwrap_or(0),
        }
    }

    fn validate(&self, blocks: usize, batch: usize) -> Result<()> {
        match self {
            Paths::Shared(p) => p.validate(blocks),
            Paths::PerExample(ps) => {
                if ps.len() != batch {
                    return Err(Error::Contract(format!(
                        "{} paths supplied for a batch of {batch}",
                        ps.len()
                    )));
                }
                let depth = self.depth();
                for p in ps.iter() {
                    if p.depth() != depth {
                        return Err(Error::Contract(format!(
                            "paths have mixed depths {} and {depth}",
                            p.depth()
                        )));
                    }
                    p.validate(blocks)?;
                }
                Ok(())
            }
        }
    }

    /// Zero-based layer choice per example at recursion step `step` (0-based).
    fn choice(&self, step: usize, batch: usize) -> Choice {
        match self {
            Paths::Shared(p) => Choice::Same(p.indices()[step] - 1),
            Paths::PerExample(ps) => {
                let c: Vec<usize> = ps.iter().map(|p| p.indices()[step] - 1).collect();
                if c.iter().all(|&v| v == c[0]) && batch > 0 {
                    Choice::Same(c[0])
                } else {
                    Choice::Rows(c)
                }
            }
        }
    }
}

enum Choice {
    Same(usize),
    Rows(Vec<usize>),
}

/// Settings for a recursive objective.
#[derive(Clone, Copy, Debug)]
pub struct RecursiveSpec<'a> {
    pub beta: f64,
    pub alpha: f64,
    pub paths: Paths<'a>,
    /// Also add the DecNN all-layer reconstruction average at depth 0.
    pub recon_all_layers_at_root: bool,
}

#[derive(Clone, Copy, Debug)]
enum Aux<'a> {
    None,
    Compose(&'a PretrainedModel),
    Fairness(&'a PretrainedModel),
}

/// A recorded loss: differentiate `total` on `tape` to train.
pub struct LossGraph {
    pub tape: Tape,
    pub bound: BoundBundle,
    pub input: Var,
    pub total: Var,
    pub breakdown: LossBreakdown,
}

impl LossGraph {
    /// Gradients for every bundle parameter, in registry order.
    pub fn param_grads(&self) -> Result<Vec<Tensor>> {
        let mut grads = self.tape.backward(self.total)?;
        Ok(self
            .bound
            .param_vars()
            .into_iter()
            .map(|v| grads.take(v))
            .collect())
    }
}

/// Options shared by all graph builders.
#[derive(Default)]
pub struct GraphOptions<'r> {
    /// Record the input as a differentiable leaf (needed for input gradients).
    pub input_grad: bool,
    /// Training-mode dropout after every classifier block of the root pass.
    pub dropout: Option<(f64, &'r mut dyn rand::RngCore)>,
}

fn check_batch(bundle: &ModelBundle, x: &Tensor, y: &[usize]) -> Result<()> {
    if x.shape().len() != 2 || x.cols() != bundle.arch.input_dim {
        return Err(Error::dim(
            "batch input",
            x.shape(),
            &[y.len(), bundle.arch.input_dim],
        ));
    }
    if x.rows() != y.len() {
        return Err(Error::dim("batch labels", x.shape(), &[y.len()]));
    }
    Ok(())
}

fn start(bundle: &ModelBundle, x: &Tensor, opts: &GraphOptions<'_>) -> (Tape, BoundBundle, Var) {
    let mut tape = Tape::new();
    let bound = bundle.bind(&mut tape, true);
    let input = if opts.input_grad {
        tape.leaf(x.clone())
    } else {
        tape.constant(x.clone())
    };
    (tape, bound, input)
}

/// Plain cross-entropy, optionally with dropout.
pub fn standard_graph(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    mut opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    check_batch(bundle, x, y)?;
    let (mut tape, bound, input) = start(bundle, x, &opts);
    let fwd = match opts.dropout.as_mut() {
        Some((p, rng)) => bound.forward_with_dropout(&mut tape, input, *p, &mut **rng)?,
        None => bound.forward_with_trace(&mut tape, input)?,
    };
    let ce = tape.softmax_cross_entropy(fwd.logits, y)?;
    let total = tape.weighted_sum(&[(ce, 1.0)])?;
    let ce_root = tape.value(ce).item();
    Ok(LossGraph {
        breakdown: LossBreakdown {
            kind: ObjectiveKind::Standard,
            total: tape.value(total).item(),
            ce_root,
            beta: 0.0,
            alpha: 0.0,
            ce_per_depth: Vec::new(),
            recon_per_depth: Vec::new(),
            root_recon: None,
            aux_per_depth: None,
        },
        tape,
        bound,
        input,
        total,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Parameter(format!("beta must be >= 0, got {beta}")));
    }
    Ok(())
}

/// DecNN: cross-entropy plus β times the layer-averaged reconstruction error.
pub fn decnn_graph(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    beta: f64,
    opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    check_batch(bundle, x, y)?;
    check_beta(beta)?;
    let (mut tape, bound, input) = start(bundle, x, &opts);
    let fwd = bound.forward_with_trace(&mut tape, input)?;
    let ce = tape.softmax_cross_entropy(fwd.logits, y)?;
    let l = fwd.activations.len() as f64;
    let mut terms = vec![(ce, 1.0)];
    let mut recon = Vec::with_capacity(fwd.activations.len());
    for &h in &fwd.activations {
        let xhat = bound.decode(&mut tape, h)?;
        let r = tape.mse(xhat, input)?;
        recon.push(tape.value(r).item());
        terms.push((r, beta / l));
    }
    let total = tape.weighted_sum(&terms)?;
    Ok(LossGraph {
        breakdown: LossBreakdown {
            kind: ObjectiveKind::Decnn,
            total: tape.value(total).item(),
            ce_root: tape.value(ce).item(),
            beta,
            alpha: 0.0,
            ce_per_depth: Vec::new(),
            recon_per_depth: recon,
            root_recon: None,
            aux_per_depth: None,
        },
        tape,
        bound,
        input,
        total,
    })
}

fn recursive_graph(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    spec: &RecursiveSpec<'_>,
    aux: Aux<'_>,
    opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    check_batch(bundle, x, y)?;
    check_beta(spec.beta)?;
    if !(0.0..=1.0).contains(&spec.alpha) {
        return Err(Error::Parameter(format!(
            "alpha must lie in [0, 1], got {}",
            spec.alpha
        )));
    }
    let blocks = bundle.arch.blocks;
    let batch = y.len();
    spec.paths.validate(blocks, batch)?;
    let m = match aux {
        Aux::None => None,
        Aux::Compose(m) | Aux::Fairness(m) => {
            m.require_frozen()?;
            if m.input_dim() != bundle.arch.input_dim {
                return Err(Error::dim(
                    "pretrained model input",
                    &[m.input_dim()],
                    &[bundle.arch.input_dim],
                ));
            }
            Some(m)
        }
    };
    if let Aux::Compose(m) = aux {
        if m.classes() != bundle.arch.classes {
            return Err(Error::Contract(format!(
                "pretrained model predicts {} classes, classifier has {}",
                m.classes(),
                bundle.arch.classes
            )));
        }
    }
    if let Aux::Fairness(m) = aux {
        if m.classes() < 2 {
            return Err(Error::Contract("protected classifier needs >= 2 classes".into()));
        }
    }

    let (mut tape, bound, input) = start(bundle, x, &opts);
    let m_bound = match aux {
        Aux::Fairness(m) => Some(m.bind_frozen(&mut tape)),
        _ => None,
    };
    let root = bound.forward_with_trace(&mut tape, input)?;
    let ce_root = tape.softmax_cross_entropy(root.logits, y)?;
    let mut terms = vec![(ce_root, 1.0)];

    let root_recon = if spec.recon_all_layers_at_root {
        let l = root.activations.len() as f64;
        let mut vals = Vec::with_capacity(root.activations.len());
        for &h in &root.activations {
            let xhat = bound.decode(&mut tape, h)?;
            let r = tape.mse(xhat, input)?;
            vals.push(tape.value(r).item());
            terms.push((r, spec.beta / l));
        }
        Some(vals)
    } else {
        None
    };

    let depth = spec.paths.depth();
    let mut ce_per_depth = Vec::with_capacity(depth);
    let mut recon_per_depth = Vec::with_capacity(depth);
    let mut aux_per_depth = m.map(|_| Vec::with_capacity(depth));
    let mut trace = root.activations;
    for d in 1..=depth {
        let w = spec.alpha.powi(d as i32);
        let h = match spec.paths.choice(d - 1, batch) {
            Choice::Same(l) => trace[l],
            Choice::Rows(rows) => tape.select_rows(&trace, &rows)?,
        };
        let xhat = bound.decode(&mut tape, h)?;
        let fwd = bound.forward_with_trace(&mut tape, xhat)?;
        let ce = tape.softmax_cross_entropy(fwd.logits, y)?;
        let rec = tape.mse(xhat, input)?;
        ce_per_depth.push(tape.value(ce).item());
        recon_per_depth.push(tape.value(rec).item());
        terms.push((ce, w));
        terms.push((rec, spec.beta * w));
        match aux {
            Aux::None => {}
            Aux::Compose(m) => {
                let target = m.predict_proba(tape.value(xhat))?;
                let t = tape.soft_target_cross_entropy(fwd.logits, &target)?;
                aux_per_depth.as_mut().unwrap().push(tape.value(t).item());
                terms.push((t, w));
            }
            Aux::Fairness(_) => {
                let mb = m_bound.as_ref().unwrap();
                let logits = Mlp::logits_on_tape(mb, &mut tape, xhat)?;
                let t = tape.uniform_target_cross_entropy(logits)?;
                aux_per_depth.as_mut().unwrap().push(tape.value(t).item());
                terms.push((t, w));
            }
        }
        trace = fwd.activations;
    }

    let total = tape.weighted_sum(&terms)?;
    let kind = match aux {
        Aux::None => ObjectiveKind::Redecnn,
        Aux::Compose(_) => ObjectiveKind::Compose,
        Aux::Fairness(_) => ObjectiveKind::Fairness,
    };
    Ok(LossGraph {
        breakdown: LossBreakdown {
            kind,
            total: tape.value(total).item(),
            ce_root: tape.value(ce_root).item(),
            beta: spec.beta,
            alpha: spec.alpha,
            ce_per_depth,
            recon_per_depth,
            root_recon,
            aux_per_depth,
        },
        tape,
        bound,
        input,
        total,
    })
}

/// ReDecNN objective along the given paths.
pub fn redecnn_graph(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    spec: &RecursiveSpec<'_>,
    opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    recursive_graph(bundle, x, y, spec, Aux::None, opts)
}

/// ReDecNN plus agreement with a frozen pretrained model on every decoded input.
pub fn compose_graph(
    bundle: &ModelBundle,
    m: &PretrainedModel,
    x: &Tensor,
    y: &[usize],
    spec: &RecursiveSpec<'_>,
    opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    recursive_graph(bundle, x, y, spec, Aux::Compose(m), opts)
}

/// ReDecNN plus a push of a frozen protected-attribute classifier toward chance.
pub fn fairness_graph(
    bundle: &ModelBundle,
    m: &PretrainedModel,
    x: &Tensor,
    y: &[usize],
    spec: &RecursiveSpec<'_>,
    opts: GraphOptions<'_>,
) -> Result<LossGraph> {
    recursive_graph(bundle, x, y, spec, Aux::Fairness(m), opts)
}

pub fn decnn_loss(bundle: &ModelBundle, x: &Tensor, y: &[usize], beta: f64) -> Result<LossBreakdown> {
    Ok(decnn_graph(bundle, x, y, beta, GraphOptions::default())?.breakdown)
}

pub fn redecnn_loss(
    bundle: &ModelBundle,
    x: &Tensor,
    y: &[usize],
    beta: f64,
    alpha: f64,
    path: &PathSpec,
) -> Result<LossBreakdown> {
    let spec = RecursiveSpec {
        beta,
        alpha,
        paths: Paths::Shared(path),
        recon_all_layers_at_root: false,
    };
    Ok(redecnn_graph(bundle, x, y, &spec, GraphOptions::default())?.breakdown)
}

pub fn compose_pretrained_loss(
    bundle: &ModelBundle,
    m: &PretrainedModel,
    x: &Tensor,
    y: &[usize],
    beta: f64,
    alpha: f64,
    path: &PathSpec,
) -> Result<LossBreakdown> {
    let spec = RecursiveSpec {
        beta,
        alpha,
        paths: Paths::Shared(path),
        recon_all_layers_at_root: false,
    };
    Ok(compose_graph(bundle, m, x, y, &spec, GraphOptions::default())?.breakdown)
}

pub fn fairness_loss(
    bundle: &ModelBundle,
    m: &PretrainedModel,
    x: &Tensor,
    y: &[usize],
    beta: f64,
    alpha: f64,
    path: &PathSpec,
) -> Result<LossBreakdown> {
    let spec = RecursiveSpec {
        beta,
        alpha,
        paths: Paths::Shared(path),
        recon_all_layers_at_root: false,
    };
    Ok(fairness_graph(bundle, m, x, y, &spec, GraphOptions::default())?.breakdown)
}

pub fn standard_loss(bundle: &ModelBundle, x: &Tensor, y: &[usize]) -> Result<LossBreakdown> {
    Ok(standard_graph(bundle, x, y, GraphOptions::default())?.breakdown)
}
