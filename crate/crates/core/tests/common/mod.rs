//! Shared helpers for integration and acceptance tests.
#![allow(dead_code)]

use decnn::models::Mlp;
use decnn::objectives::{
    compose_graph, decnn_graph, fairness_graph, redecnn_graph, sample_path, standard_graph, GraphOptions,
    LossGraph, PathSpec, Paths, RecursiveSpec,
};
use decnn::{ArchSpec, ModelBundle, PretrainedModel, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so gradients that are zero analytically compare on an absolute scale.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Standard,
    Decnn,
    Redecnn,
    RedecnnPerExample,
    Compose,
    Fairness,
}

pub const ALL_OBJECTIVES: [Objective; 6] = [
    Objective::Standard,
    Objective::Decnn,
    Objective::Redecnn,
    Objective::RedecnnPerExample,
    Objective::Compose,
    Objective::Fairness,
];

/// A tiny network with a fixed batch, paths and auxiliary models; every extent is at most 8.
pub struct TinyCase {
    pub bundle: ModelBundle,
    pub x: Tensor,
    pub y: Vec<usize>,
    pub shared: PathSpec,
    pub per_example: Vec<PathSpec>,
    pub labels_model: PretrainedModel,
    pub protected_model: PretrainedModel,
    pub beta: f64,
    pub alpha: f64,
}

impl TinyCase {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = ArchSpec {
            input_dim: rng.random_range(2..=8),
            blocks: rng.random_range(1..=4),
            hidden: rng.random_range(2..=8),
            classes: rng.random_range(2..=8),
            decoder_hidden: rng.random_range(2..=8),
        };
        let n = rng.random_range(1..=8);
        let mut bundle = ModelBundle::init(&arch, rng.random()).unwrap();
        // Zero initial biases let a dead layer feed an exact 0 into the next ReLU,
        // where one-sided differences disagree with the subgradient. Random biases
        // keep every pre-activation off the kink.
        for p in bundle.params_mut() {
            if p.shape().len() == 1 {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
        }
        let x = Tensor::new(
            [n, arch.input_dim],
            (0..n * arch.input_dim).map(|_| rng.random()).collect(),
        )
        .unwrap();
        let y = (0..n).map(|_| rng.random_range(0..arch.classes)).collect();
        let depth = rng.random_range(0..=3);
        let shared = sample_path(arch.blocks, depth, &mut rng).unwrap();
        let per_example = (0..n)
            .map(|_| sample_path(arch.blocks, depth, &mut rng).unwrap())
            .collect();
        // The composition target is a stop-gradient, so finite differences only agree
        // with the tape when the target does not depend on its input: zero weights,
        // random biases.
        let mut constant = Mlp::init(arch.input_dim, &[], arch.classes, 0).unwrap();
        constant.layers[0].weight = Tensor::zeros([arch.input_dim, arch.classes]);
        constant.layers[0].bias = Tensor::new(
            [arch.classes],
            (0..arch.classes).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let labels_model = PretrainedModel::frozen(constant);
        let protected_model = PretrainedModel::frozen(
            Mlp::init(arch.input_dim, &[rng.random_range(2..=8)], rng.random_range(2..=3), rng.random()).unwrap(),
        );
        Self {
            bundle,
            x,
            y,
            shared,
            per_example,
            labels_model,
            protected_model,
            beta: rng.random_range(0.1..10.0),
            alpha: rng.random_range(0.1..1.0),
        }
    }

    pub fn graph(&self, bundle: &ModelBundle, x: &Tensor, obj: Objective, input_grad: bool) -> Result<LossGraph> {
        let opts = GraphOptions {
            input_grad,
            ..GraphOptions::default()
        };
        let spec = |paths| RecursiveSpec {
            beta: self.beta,
            alpha: self.alpha,
            paths,
            recon_all_layers_at_root: false,
        };
        match obj {
            Objective::Standard => standard_graph(bundle, x, &self.y, opts),
            Objective::Decnn => decnn_graph(bundle, x, &self.y, self.beta, opts),
            Objective::Redecnn => redecnn_graph(bundle, x, &self.y, &spec(Paths::Shared(&self.shared)), opts),
            Objective::RedecnnPerExample => {
                redecnn_graph(bundle, x, &self.y, &spec(Paths::PerExample(&self.per_example)), opts)
            }
            Objective::Compose => compose_graph(
                bundle,
                &self.labels_model,
                x,
                &self.y,
                &spec(Paths::Shared(&self.shared)),
                opts,
            ),
            Objective::Fairness => fairness_graph(
                bundle,
                &self.protected_model,
                x,
                &self.y,
                &spec(Paths::Shared(&self.shared)),
                opts,
            ),
        }
    }

    fn loss(&self, bundle: &ModelBundle, x: &Tensor, obj: Objective) -> f64 {
        self.graph(bundle, x, obj, false).unwrap().breakdown.total
    }

    /// Largest relative error between tape gradients and central differences,
    /// over every parameter entry and every input entry.
    pub fn worst_fd_error(&self, obj: Objective) -> f64 {
        let g = self.graph(&self.bundle, &self.x, obj, true).unwrap();
        let mut grads = g.tape.backward(g.total).unwrap();
        let param_grads: Vec<Tensor> = g.bound.param_vars().into_iter().map(|v| grads.take(v)).collect();
        let input_grad = grads.take(g.input);
        let mut worst: f64 = 0.0;

        let mut probe = self.bundle.clone();
        for (p, analytic) in param_grads.iter().enumerate() {
            for j in 0..analytic.len() {
                let orig = probe.params_mut()[p].data()[j];
                probe.params_mut()[p].data_mut()[j] = orig + FD_STEP;
                let up = self.loss(&probe, &self.x, obj);
                probe.params_mut()[p].data_mut()[j] = orig - FD_STEP;
                let down = self.loss(&probe, &self.x, obj);
                probe.params_mut()[p].data_mut()[j] = orig;
                worst = worst.max(rel_err(analytic.data()[j], (up - down) / (2.0 * FD_STEP)));
            }
        }
        let mut xp = self.x.clone();
        for j in 0..xp.len() {
            let orig = xp.data()[j];
            xp.data_mut()[j] = orig + FD_STEP;
            let up = self.loss(&self.bundle, &xp, obj);
            xp.data_mut()[j] = orig - FD_STEP;
            let down = self.loss(&self.bundle, &xp, obj);
            xp.data_mut()[j] = orig;
            worst = worst.max(rel_err(input_grad.data()[j], (up - down) / (2.0 * FD_STEP)));
        }
        worst
    }
}
