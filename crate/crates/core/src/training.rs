//! Optimisation: Adam, the mini-batch loop for every objective, ensembles and
//! the small pretrained models used by the composition and fairness terms.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{ArchSpec, Mlp, ModelBundle, PretrainedModel};
use crate::objectives::{
    compose_graph, decnn_graph, fairness_graph, redecnn_graph, sample_paths, standard_graph,
    GraphOptions, LossGraph, ObjectiveKind, Paths, RecursiveSpec,
};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Stream used by the training RNG, kept apart from the initialisation stream.
const TRAIN_STREAM: u64 = 1;
/// Examples per forward chunk when predicting a whole dataset.
const EVAL_CHUNK: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: ObjectiveKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub alpha: f64,
    pub depth: usize,
    pub dropout_p: f64,
    pub seed: u64,
    pub ensemble_copies: usize,
    /// Adds the all-layer reconstruction average at depth 0 of recursive objectives.
    pub recon_all_layers_at_root: bool,
    pub arch: ArchSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Redecnn,
            epochs: 10,
            batch_size: 128,
            learning_rate: 1e-4,
            beta: 10.0,
            alpha: 0.5,
            depth: 8,
            dropout_p: 0.0,
            seed: 0,
            ensemble_copies: 8,
            recon_all_layers_at_root: false,
            arch: ArchSpec::default(),
        }
    }
}

impl TrainConfig {
    /// The full-scale schedule: 50 epochs, otherwise the defaults.
    pub fn full_scale(objective: ObjectiveKind) -> Self {
        Self {
            objective,
            epochs: 50,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let bad = |m: String| Err(Error::Parameter(m));
        if self.epochs < 1 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be >= 0, got {}", self.beta));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        if self.dropout_p > 0.0 && self.objective != ObjectiveKind::Standard {
            return bad("dropout is only used with the standard objective".into());
        }
        if self.ensemble_copies < 1 {
            return bad("ensemble_copies must be >= 1".into());
        }
        Ok(())
    }
}

/// Adam moments for a list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params
            .into_iter()
            .map(|p| Tensor::zeros(p.shape().to_vec()))
            .collect();
        Self {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Contract(format!(
            "adam received {} parameters, {} gradients and {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(Error::Contract(format!(
                "adam shape mismatch for parameter {i}: {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((w, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mj = b1 * *mj + (1.0 - b1) * gj;
            *vj = b2 * *vj + (1.0 - b2) * gj * gj;
            *w -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Serializable position of a ChaCha stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Per-epoch training summary; losses are example-weighted means over the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub ce_root: f64,
    pub recon: f64,
    pub aux: Option<f64>,
    pub eval_accuracy: Option<f64>,
}

/// Extra inputs to a training run.
#[derive(Clone, Copy, Default)]
pub struct TrainContext<'a> {
    /// Held-out set whose accuracy is logged after every epoch.
    pub eval: Option<&'a LabeledDataset>,
    /// Frozen model for the compose and fairness objectives.
    pub pretrained: Option<&'a PretrainedModel>,
}

pub struct TrainOutput {
    pub bundle: ModelBundle,
    pub log: Vec<EpochRecord>,
}

/// Resumable training state.
pub struct Trainer {
    pub config: TrainConfig,
    pub bundle: ModelBundle,
    pub adam: AdamState,
    pub epochs_done: usize,
    pub log: Vec<EpochRecord>,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let bundle = ModelBundle::init(&config.arch, config.seed)?;
        let adam = AdamState::new(bundle.params());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            config,
            bundle,
            adam,
            epochs_done: 0,
            log: Vec::new(),
            rng,
        })
    }

    /// Rebuilds a trainer from persisted parts.
    pub fn from_parts(
        config: TrainConfig,
        bundle: ModelBundle,
        adam: AdamState,
        rng: RngState,
        epochs_done: usize,
    ) -> Result<Self> {
        config.validate()?;
        if bundle.arch != config.arch {
            return Err(Error::Contract("bundle architecture differs from config".into()));
        }
        if adam.m.len() != bundle.params().len() {
            return Err(Error::Contract("optimizer state does not match the bundle".into()));
        }
        Ok(Self {
            config,
            bundle,
            adam,
            epochs_done,
            log: Vec::new(),
            rng: rng.restore(),
        })
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    fn check_inputs(&self, data: &LabeledDataset, ctx: &TrainContext<'_>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if data.pixels() != self.config.arch.input_dim {
            return Err(Error::dim(
                "training images",
                &[data.pixels()],
                &[self.config.arch.input_dim],
            ));
        }
        if data.classes > self.config.arch.classes {
            return Err(Error::Data(format!(
                "dataset has {} classes, classifier only {}",
                data.classes, self.config.arch.classes
            )));
        }
        if self.config.objective.needs_pretrained() && ctx.pretrained.is_none() {
            return Err(Error::Contract(format!(
                "objective `{}` needs a pretrained model",
                self.config.objective.name()
            )));
        }
        Ok(())
    }

    fn batch_graph(
        &mut self,
        x: &Tensor,
        y: &[usize],
        ctx: &TrainContext<'_>,
    ) -> Result<LossGraph> {
        let c = &self.config;
        let kind = c.objective;
        if kind == ObjectiveKind::Standard {
            let opts = GraphOptions {
                input_grad: false,
                dropout: (c.dropout_p > 0.0).then_some((c.dropout_p, &mut self.rng as _)),
            };
            return standard_graph(&self.bundle, x, y, opts);
        }
        if kind == ObjectiveKind::Decnn {
            return decnn_graph(&self.bundle, x, y, c.beta, GraphOptions::default());
        }
        let paths = sample_paths(y.len(), c.arch.blocks, c.depth, &mut self.rng)?;
        let spec = RecursiveSpec {
            beta: c.beta,
            alpha: c.alpha,
            paths: Paths::PerExample(&paths),
            recon_all_layers_at_root: c.recon_all_layers_at_root,
        };
        let opts = GraphOptions::default();
        match kind {
            ObjectiveKind::Redecnn => redecnn_graph(&self.bundle, x, y, &spec, opts),
            ObjectiveKind::Compose => {
                compose_graph(&self.bundle, ctx.pretrained.unwrap(), x, y, &spec, opts)
            }
            _ => fairness_graph(&self.bundle, ctx.pretrained.unwrap(), x, y, &spec, opts),
        }
    }

    /// One pass over `data` in a freshly shuffled order; the last partial batch is kept.
    pub fn run_epoch(&mut self, data: &LabeledDataset, ctx: &TrainContext<'_>) -> Result<EpochRecord> {
        self.check_inputs(data, ctx)?;
        let epoch = self.epochs_done + 1;
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut loss, mut ce, mut recon, mut aux) = (0.0, 0.0, 0.0, 0.0);
        let mut has_aux = false;
        for (b, idx) in order.chunks(self.config.batch_size).enumerate() {
            let x = data.images.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            let graph = self.batch_graph(&x, &y, ctx)?;
            let br = &graph.breakdown;
            if !br.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: br.total,
                });
            }
            let w = idx.len() as f64;
            loss += w * br.total;
            ce += w * br.ce_root;
            let rec: &[f64] = &br.recon_per_depth;
            if !rec.is_empty() {
                recon += w * rec.iter().sum::<f64>() / rec.len() as f64;
            }
            if let Some(a) = br.aux() {
                has_aux = true;
                aux += w * a;
            }
            let grads = graph.param_grads()?;
            let mut params = self.bundle.params_mut();
            adam_step(&mut params, &grads, &mut self.adam, self.config.learning_rate)?;
        }
        let n = data.len() as f64;
        let eval_accuracy = match ctx.eval {
            Some(e) => Some(accuracy_on(&self.bundle, e)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss / n,
            ce_root: ce / n,
            recon: recon / n,
            aux: has_aux.then_some(aux / n),
            eval_accuracy,
        };
        self.epochs_done = epoch;
        self.log.push(record.clone());
        Ok(record)
    }

    /// Runs the remaining configured epochs.
    pub fn run(mut self, data: &LabeledDataset, ctx: &TrainContext<'_>) -> Result<TrainOutput> {
        while self.epochs_done < self.config.epochs {
            self.run_epoch(data, ctx)?;
        }
        Ok(TrainOutput {
            bundle: self.bundle,
            log: self.log,
        })
    }
}

pub fn train(data: &LabeledDataset, config: &TrainConfig, ctx: &TrainContext<'_>) -> Result<TrainOutput> {
    Trainer::new(config.clone())?.run(data, ctx)
}

/// Independent runs with seeds `seed, seed+1, …`.
pub fn train_ensemble(
    data: &LabeledDataset,
    config: &TrainConfig,
    copies: usize,
    ctx: &TrainContext<'_>,
) -> Result<Vec<ModelBundle>> {
    if copies < 1 {
        return Err(Error::Parameter("an ensemble needs at least one copy".into()));
    }
    (0..copies)
        .map(|i| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(i as u64);
            Ok(train(data, &c, ctx)?.bundle)
        })
        .collect()
}

/// Class predictions for every example, computed in chunks.
pub fn predict_dataset(bundle: &ModelBundle, data: &LabeledDataset) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(data.len());
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = data.images.select_rows(chunk);
        out.extend(bundle.classifier.predict(&x)?);
    }
    Ok(out)
}

/// Softmax probabilities for every example.
pub fn predict_proba_dataset(bundle: &ModelBundle, data: &LabeledDataset) -> Result<Tensor> {
    let k = bundle.arch.classes;
    let mut out = Vec::with_capacity(data.len() * k);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let x = data.images.select_rows(chunk);
        let p = crate::tensor::softmax(&bundle.classifier.logits(&x)?)?;
        out.extend_from_slice(p.data());
    }
    Tensor::new([data.len(), k], out)
}

pub fn accuracy_on(bundle: &ModelBundle, data: &LabeledDataset) -> Result<f64> {
    let pred = predict_dataset(bundle, data)?;
    crate::metrics::accuracy(&pred, &data.labels)
}

/// Mean objective value over `data` with a fixed path seed; no parameter update.
pub fn dataset_loss(
    bundle: &ModelBundle,
    data: &LabeledDataset,
    config: &TrainConfig,
    pretrained: Option<&PretrainedModel>,
    seed: u64,
) -> Result<f64> {
    let mut probe = Trainer {
        config: TrainConfig {
            dropout_p: 0.0,
            ..config.clone()
        },
        adam: AdamState::new(bundle.params()),
        bundle: bundle.clone(),
        epochs_done: 0,
        log: Vec::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    let ctx = TrainContext {
        eval: None,
        pretrained,
    };
    probe.check_inputs(data, &ctx)?;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(config.batch_size) {
        let x = data.images.select_rows(chunk);
        let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        total += chunk.len() as f64 * probe.batch_graph(&x, &y, &ctx)?.breakdown.total;
    }
    Ok(total / data.len() as f64)
}

/// Settings for the small auxiliary networks (linear model or protected-attribute classifier).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: Vec::new(),
            epochs: 5,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Trains an MLP with cross-entropy on `targets` and returns it frozen.
pub fn train_pretrained(
    images: &Tensor,
    targets: &[usize],
    classes: usize,
    config: &PretrainConfig,
) -> Result<PretrainedModel> {
    if targets.is_empty() {
        return Err(Error::Data("pretraining set is empty".into()));
    }
    if images.rows() != targets.len() {
        return Err(Error::dim("pretraining batch", images.shape(), &[targets.len()]));
    }
    if config.epochs < 1 || config.batch_size < 1 {
        return Err(Error::Parameter("pretraining needs epochs and batch_size >= 1".into()));
    }
    let mut net = Mlp::init(images.cols(), &config.hidden, classes, config.seed)?;
    let mut adam = AdamState::new(net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut order: Vec<usize> = (0..targets.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x = images.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let xv = tape.constant(x);
            let logits = Mlp::logits_on_tape(&bound, &mut tape, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &y)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss: value,
                });
            }
            let mut g = tape.backward(loss)?;
            let grads: Vec<Tensor> = bound
                .iter()
                .flat_map(|l| [l.weight, l.bias])
                .map(|v| g.take(v))
                .collect();
            adam_step(&mut net.params_mut(), &grads, &mut adam, config.learning_rate)?;
        }
    }
    Ok(PretrainedModel::frozen(net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use rand::Rng;

    fn tiny_arch() -> ArchSpec {
        ArchSpec {
            input_dim: 4,
            blocks: 2,
            hidden: 6,
            classes: 2,
            decoder_hidden: 5,
        }
    }

    fn toy_data(n: usize, seed: u64) -> LabeledDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut px = Vec::with_capacity(n * 4);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let c = rng.random_range(0..2usize);
            for j in 0..4 {
                let base = if (j < 2) == (c == 0) { 0.8 } else { 0.2 };
                px.push((base + 0.1 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0));
            }
            y.push(c);
        }
        LabeledDataset::new(Tensor::new([n, 4], px).unwrap(), y, 2, 2, 2, Split::Train).unwrap()
    }

    fn cfg(kind: ObjectiveKind) -> TrainConfig {
        TrainConfig {
            objective: kind,
            epochs: 1,
            batch_size: 16,
            learning_rate: 1e-2,
            depth: 2,
            arch: tiny_arch(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new([&p]);
        adam_step(&mut [&mut p], &[Tensor::zeros([3])], &mut st, 0.1).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_single_step_matches_formula() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new([&p]);
        let g = 0.3;
        adam_step(&mut [&mut p], &[Tensor::scalar(g)], &mut st, 0.01).unwrap();
        let m_hat = (0.1 * g) / (1.0 - 0.9);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999);
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((p.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_constant_gradient_step_tends_to_lr() {
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new([&p]);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p.item();
            adam_step(&mut [&mut p], &[Tensor::scalar(2.5)], &mut st, 1e-3).unwrap();
            last = before - p.item();
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }

    #[test]
    fn adam_shape_mismatch_is_contract_error() {
        let mut p = Tensor::zeros([2]);
        let mut st = AdamState::new([&p]);
        let r = adam_step(&mut [&mut p], &[Tensor::zeros([3])], &mut st, 0.1);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let data = toy_data(40, 1);
        let mut c = cfg(ObjectiveKind::Redecnn);
        c.learning_rate = 0.0;
        let out = train(&data, &c, &TrainContext::default()).unwrap();
        assert_eq!(out.bundle, ModelBundle::init(&c.arch, c.seed).unwrap());
    }

    #[test]
    fn training_is_deterministic() {
        let data = toy_data(50, 2);
        let c = cfg(ObjectiveKind::Redecnn);
        let a = train(&data, &c, &TrainContext::default()).unwrap();
        let b = train(&data, &c, &TrainContext::default()).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.bundle, b.bundle);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let data = toy_data(30, 3);
        let mut c = cfg(ObjectiveKind::Redecnn);
        c.epochs = 2;
        let full = train(&data, &c, &TrainContext::default()).unwrap();
        let mut t = Trainer::new(c.clone()).unwrap();
        t.run_epoch(&data, &TrainContext::default()).unwrap();
        let resumed = Trainer::from_parts(c, t.bundle.clone(), t.adam.clone(), t.rng_state(), 1)
            .unwrap()
            .run(&data, &TrainContext::default())
            .unwrap();
        assert_eq!(full.bundle, resumed.bundle);
    }

    #[test]
    fn empty_dataset_is_data_error() {
        let data = LabeledDataset {
            images: Tensor::from_parts(vec![0, 4], Vec::new()),
            labels: Vec::new(),
            protected_ids: None,
            height: 2,
            width: 2,
            classes: 2,
            split: Split::Train,
        };
        let r = train(&data, &cfg(ObjectiveKind::Standard), &TrainContext::default());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn divergence_names_epoch_and_batch() {
        let mut data = toy_data(20, 4);
        data.images.data_mut()[5] = f64::NAN;
        let r = train(&data, &cfg(ObjectiveKind::Standard), &TrainContext::default());
        assert!(matches!(r, Err(Error::Diverged { epoch: 1, .. })));
    }

    #[test]
    fn every_objective_lowers_its_loss() {
        let data = toy_data(128, 5);
        let m = train_pretrained(&data.images, &data.labels, 2, &PretrainConfig::default()).unwrap();
        for kind in [
            ObjectiveKind::Standard,
            ObjectiveKind::Decnn,
            ObjectiveKind::Redecnn,
            ObjectiveKind::Compose,
            ObjectiveKind::Fairness,
        ] {
            let mut c = cfg(kind);
            c.epochs = 5;
            let ctx = TrainContext {
                eval: None,
                pretrained: Some(&m),
            };
            let init = ModelBundle::init(&c.arch, c.seed).unwrap();
            let before = dataset_loss(&init, &data, &c, Some(&m), 9).unwrap();
            let out = train(&data, &c, &ctx).unwrap();
            let after = dataset_loss(&out.bundle, &data, &c, Some(&m), 9).unwrap();
            assert!(after < before, "{kind:?}: {after} >= {before}");
        }
    }

    #[test]
    fn compose_without_model_is_rejected() {
        let data = toy_data(10, 6);
        let r = train(&data, &cfg(ObjectiveKind::Compose), &TrainContext::default());
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn ensemble_members_differ_and_single_copy_equals_train() {
        let data = toy_data(20, 7);
        let c = cfg(ObjectiveKind::Standard);
        let ens = train_ensemble(&data, &c, 2, &TrainContext::default()).unwrap();
        assert_ne!(ens[0], ens[1]);
        let one = train_ensemble(&data, &c, 1, &TrainContext::default()).unwrap();
        assert_eq!(one[0], train(&data, &c, &TrainContext::default()).unwrap().bundle);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.dropout_p = 0.5;
        assert!(c.validate().is_err());
        c.objective = ObjectiveKind::Standard;
        assert!(c.validate().is_ok());
        let parsed: std::result::Result<TrainConfig, _> = serde_json::from_str(r#"{"epochz": 3}"#);
        assert!(parsed.is_err());
    }

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(3);
        let _: u64 = rng.random();
        let mut restored = RngState::capture(&rng).restore();
        assert_eq!(rng.random::<u64>(), restored.random::<u64>());
    }
}
