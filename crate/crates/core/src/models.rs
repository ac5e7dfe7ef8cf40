//! Classifier `f`, layer-shared decoder `g`, and frozen pretrained models.
//!
//! Every model exists in two forms: plain parameter values ([`ModelBundle`],
//! [`PretrainedModel`]) with tape-free forward passes for evaluation, and a
//! tape-bound form ([`BoundBundle`]) whose parameters are tape leaves so a loss
//! can be differentiated. Both forms call the same tensor kernels, so their
//! forward values are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{self, Tensor};

/// Shape of a classifier/decoder pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchSpec {
    /// Flattened input width (pixels).
    pub input_dim: usize,
    /// Number of hidden blocks `L`.
    pub blocks: usize,
    /// Hidden width `d`, shared by all blocks.
    pub hidden: usize,
    /// Number of classes `K`.
    pub classes: usize,
    /// Width of the decoder's single hidden layer.
    pub decoder_hidden: usize,
}

impl Default for ArchSpec {
    fn default() -> Self {
        Self {
            input_dim: 28 * 28,
            blocks: 8,
            hidden: 128,
            classes: 10,
            decoder_hidden: 512,
        }
    }
}

impl ArchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blocks < 1 {
            return Err(Error::Parameter("need at least one block (L >= 1)".into()));
        }
        if self.hidden < 1 || self.input_dim < 1 || self.decoder_hidden < 1 {
            return Err(Error::Parameter(format!(
                "widths must be positive: input {}, hidden {}, decoder {}",
                self.input_dim, self.hidden, self.decoder_hidden
            )));
        }
        if self.classes < 2 {
            return Err(Error::Parameter(format!(
                "need at least 2 classes, got {}",
                self.classes
            )));
        }
        Ok(())
    }
}

/// Weight `[in × out]` and bias `[out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Kaiming-uniform weights (variance `2/fan_in`), zero bias.
    pub fn kaiming<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor::from_parts(vec![fan_in, fan_out], data),
            bias: Tensor::zeros([fan_out]),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Tensor::zeros([fan_in, fan_out]),
            bias: Tensor::zeros([fan_out]),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        tensor::affine(x, &self.weight, &self.bias)
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundLinear {
        let (weight, bias) = if trainable {
            (tape.leaf(self.weight.clone()), tape.leaf(self.bias.clone()))
        } else {
            (
                tape.constant(self.weight.clone()),
                tape.constant(self.bias.clone()),
            )
        };
        BoundLinear { weight, bias }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundLinear {
    pub weight: Var,
    pub bias: Var,
}

impl BoundLinear {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        tape.affine(x, self.weight, self.bias)
    }
}

/// Hidden activations `h_1..h_L` of one forward pass (post-ReLU block outputs).
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationTrace {
    pub activations: Vec<Tensor>,
}

impl ActivationTrace {
    pub fn len(&self) -> usize {
        self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.activations.is_empty()
    }

    /// Activation of block `layer`, 1-based.
    pub fn layer(&self, layer: usize) -> &Tensor {
        &self.activations[layer - 1]
    }
}

/// `L` ReLU blocks of width `d` followed by a linear head to `K` logits.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpClassifier {
    pub blocks: Vec<Linear>,
    pub head: Linear,
}

/// Eval-time dropout applied after every block.
pub struct DropoutSample<'a, R: Rng + ?Sized> {
    pub p: f64,
    pub rng: &'a mut R,
}

impl MlpClassifier {
    pub fn input_dim(&self) -> usize {
        self.blocks[0].fan_in()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::dim(
                "classifier input",
                x.shape(),
                &[x.rows(), self.input_dim()],
            ));
        }
        Ok(())
    }

    /// Block `layer` (1-based) applied to the previous activation (or the input).
    pub fn block(&self, layer: usize, prev: &Tensor) -> Result<Tensor> {
        Ok(tensor::relu(&self.blocks[layer - 1].forward(prev)?))
    }

    pub fn forward_with_trace(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.blocks.len());
        let mut h = x.clone();
        for layer in 1..=self.blocks.len() {
            h = self.block(layer, &h)?;
            activations.push(h.clone());
        }
        let logits = self.head.forward(&h)?;
        Ok((logits, ActivationTrace { activations }))
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_with_trace(x)?.0)
    }

    /// Forward pass with a fresh dropout mask after every block.
    pub fn forward_dropout<R: Rng + ?Sized>(
        &self,
        x: &Tensor,
        dropout: DropoutSample<'_, R>,
    ) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in 1..=self.blocks.len() {
            h = self.block(layer, &h)?;
            h = tensor::dropout(&h, dropout.p, dropout.rng, true)?;
        }
        self.head.forward(&h)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.argmax_rows())
    }
}

/// `g`: `d → decoder_hidden → pixels`, ReLU then sigmoid. One parameter set for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpDecoder {
    pub hidden: Linear,
    pub output: Linear,
}

impl MlpDecoder {
    pub fn decode(&self, h: &Tensor) -> Result<Tensor> {
        if h.shape().len() != 2 || h.cols() != self.hidden.fan_in() {
            return Err(Error::dim(
                "decoder input",
                h.shape(),
                &[h.rows(), self.hidden.fan_in()],
            ));
        }
        let z = tensor::relu(&self.hidden.forward(h)?);
        Ok(tensor::sigmoid(&self.output.forward(&z)?))
    }
}

/// Classifier parameters θ and decoder parameters φ.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub arch: ArchSpec,
    pub classifier: MlpClassifier,
    pub decoder: MlpDecoder,
}

impl ModelBundle {
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(arch.blocks);
        let mut fan_in = arch.input_dim;
        for _ in 0..arch.blocks {
            blocks.push(Linear::kaiming(fan_in, arch.hidden, &mut rng));
            fan_in = arch.hidden;
        }
        let head = Linear::kaiming(arch.hidden, arch.classes, &mut rng);
        let decoder = MlpDecoder {
            hidden: Linear::kaiming(arch.hidden, arch.decoder_hidden, &mut rng),
            output: Linear::kaiming(arch.decoder_hidden, arch.input_dim, &mut rng),
        };
        Ok(Self {
            arch: arch.clone(),
            classifier: MlpClassifier { blocks, head },
            decoder,
        })
    }

    /// All-zero parameters with the given architecture.
    pub fn zeros(arch: &ArchSpec) -> Result<Self> {
        arch.validate()?;
        let mut blocks = Vec::with_capacity(arch.blocks);
        let mut fan_in = arch.input_dim;
        for _ in 0..arch.blocks {
            blocks.push(Linear::zeros(fan_in, arch.hidden));
            fan_in = arch.hidden;
        }
        Ok(Self {
            arch: arch.clone(),
            classifier: MlpClassifier {
                blocks,
                head: Linear::zeros(arch.hidden, arch.classes),
            },
            decoder: MlpDecoder {
                hidden: Linear::zeros(arch.hidden, arch.decoder_hidden),
                output: Linear::zeros(arch.decoder_hidden, arch.input_dim),
            },
        })
    }

    fn linears(&self) -> impl Iterator<Item = &Linear> {
        self.classifier
            .blocks
            .iter()
            .chain(std::iter::once(&self.classifier.head))
            .chain([&self.decoder.hidden, &self.decoder.output])
    }

    /// Parameters in registry order: blocks (w, b)…, head (w, b), decoder hidden (w, b), decoder output (w, b).
    pub fn params(&self) -> Vec<&Tensor> {
        self.linears().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.classifier
            .blocks
            .iter_mut()
            .chain(std::iter::once(&mut self.classifier.head))
            .chain([&mut self.decoder.hidden, &mut self.decoder.output])
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Registers every parameter on `tape` (as leaves when `trainable`).
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundBundle {
        BoundBundle {
            blocks: self
                .classifier
                .blocks
                .iter()
                .map(|l| l.bind(tape, trainable))
                .collect(),
            head: self.classifier.head.bind(tape, trainable),
            decoder_hidden: self.decoder.hidden.bind(tape, trainable),
            decoder_output: self.decoder.output.bind(tape, trainable),
        }
    }

    pub fn forward_with_trace(&self, x: &Tensor) -> Result<(Tensor, ActivationTrace)> {
        self.classifier.forward_with_trace(x)
    }

    pub fn decode(&self, h: &Tensor) -> Result<Tensor> {
        self.decoder.decode(h)
    }
}

/// Logits and block activations recorded on a tape.
#[derive(Clone, Debug)]
pub struct TracedForward {
    pub logits: Var,
    pub activations: Vec<Var>,
}

/// A [`ModelBundle`] whose parameters live on a tape.
#[derive(Clone, Debug)]
pub struct BoundBundle {
    pub blocks: Vec<BoundLinear>,
    pub head: BoundLinear,
    pub decoder_hidden: BoundLinear,
    pub decoder_output: BoundLinear,
}

impl BoundBundle {
    /// Parameter handles in the same order as [`ModelBundle::params`].
    pub fn param_vars(&self) -> Vec<Var> {
        self.blocks
            .iter()
            .chain([&self.head, &self.decoder_hidden, &self.decoder_output])
            .flat_map(|l| [l.weight, l.bias])
            .collect()
    }

    /// Decoder parameter handles; the same for every layer that is decoded.
    pub fn decoder_vars(&self) -> [Var; 4] {
        [
            self.decoder_hidden.weight,
            self.decoder_hidden.bias,
            self.decoder_output.weight,
            self.decoder_output.bias,
        ]
    }

    pub fn forward_with_trace(&self, tape: &mut Tape, x: Var) -> Result<TracedForward> {
        self.forward_inner(tape, x, None::<(f64, &mut ChaCha8Rng)>)
    }

    /// Training-mode forward with dropout after every block.
    pub fn forward_with_dropout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: Var,
        p: f64,
        rng: &mut R,
    ) -> Result<TracedForward> {
        self.forward_inner(tape, x, Some((p, rng)))
    }

    fn forward_inner<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        x: Var,
        mut dropout: Option<(f64, &mut R)>,
    ) -> Result<TracedForward> {
        let width = tape.value(self.blocks[0].weight).shape()[0];
        let xv = tape.value(x);
        if xv.shape().len() != 2 || xv.cols() != width {
            return Err(Error::dim("classifier input", xv.shape(), &[xv.rows(), width]));
        }
        let mut activations = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for block in &self.blocks {
            let z = block.forward(tape, h)?;
            h = tape.relu(z);
            activations.push(h);
            if let Some((p, rng)) = dropout.as_mut() {
                h = tape.dropout(h, *p, &mut **rng, true)?;
            }
        }
        let logits = self.head.forward(tape, h)?;
        Ok(TracedForward {
            logits,
            activations,
        })
    }

    pub fn decode(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let width = tape.value(self.decoder_hidden.weight).shape()[0];
        let hv = tape.value(h);
        if hv.shape().len() != 2 || hv.cols() != width {
            return Err(Error::dim("decoder input", hv.shape(), &[hv.rows(), width]));
        }
        let z = self.decoder_hidden.forward(tape, h)?;
        let z = tape.relu(z);
        let out = self.decoder_output.forward(tape, z)?;
        Ok(tape.sigmoid(out))
    }
}

/// A plain ReLU MLP; with no hidden layers it is multinomial logistic regression.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn init(input_dim: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        if classes < 2 || input_dim == 0 || hidden.contains(&0) {
            return Err(Error::Parameter(format!(
                "invalid MLP spec: input {input_dim}, hidden {hidden:?}, classes {classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(Linear::kaiming(fan_in, h, &mut rng));
            fan_in = h;
        }
        layers.push(Linear::kaiming(fan_in, classes, &mut rng));
        Ok(Self { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn classes(&self) -> usize {
        self.layers.last().map(Linear::fan_out).unwrap_or(0)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::dim("mlp input", x.shape(), &[x.rows(), self.input_dim()]));
        }
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h)?;
            if i < last {
                h = tensor::relu(&h);
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<BoundLinear> {
        self.layers.iter().map(|l| l.bind(tape, trainable)).collect()
    }

    pub fn logits_on_tape(bound: &[BoundLinear], tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        let last = bound.len() - 1;
        for (i, layer) in bound.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

/// A classifier `m` whose parameters are excluded from optimization once frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainedModel {
    net: Mlp,
    frozen: bool,
}

impl PretrainedModel {
    /// Wraps an already-trained network and freezes it.
    pub fn frozen(net: Mlp) -> Self {
        Self { net, frozen: true }
    }

    /// Wraps a network without freezing it; objectives that need `m` reject it.
    pub fn unfrozen(net: Mlp) -> Self {
        Self { net, frozen: false }
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn classes(&self) -> usize {
        self.net.classes()
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn require_frozen(&self) -> Result<()> {
        if !self.frozen {
            return Err(Error::Contract(
                "pretrained model must be frozen before it is composed".into(),
            ));
        }
        Ok(())
    }

    /// Class probabilities; each row lies on the simplex.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Tensor> {
        tensor::softmax(&self.net.logits(x)?)
    }

    /// Parameters as tape constants: they never receive gradients.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<BoundLinear> {
        self.net.bind(tape, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_arch(blocks: usize) -> ArchSpec {
        ArchSpec {
            input_dim: 6,
            blocks,
            hidden: 5,
            classes: 3,
            decoder_hidden: 7,
        }
    }

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
        Tensor::new([rows, cols], data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_activations_and_logits() {
        let bundle = ModelBundle::zeros(&small_arch(3)).unwrap();
        let (logits, trace) = bundle.forward_with_trace(&random_input(4, 6, 1)).unwrap();
        assert!(logits.data().iter().all(|&v| v == 0.0));
        assert!(trace.activations.iter().all(|h| h.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn trace_length_equals_block_count() {
        for l in [1, 4, 8] {
            let bundle = ModelBundle::init(&small_arch(l), 3).unwrap();
            let (_, trace) = bundle.forward_with_trace(&random_input(2, 6, 2)).unwrap();
            assert_eq!(trace.len(), l);
        }
    }

    #[test]
    fn layerwise_recomputation_matches_trace() {
        let bundle = ModelBundle::init(&small_arch(4), 11).unwrap();
        let x = random_input(3, 6, 4);
        let (logits, trace) = bundle.forward_with_trace(&x).unwrap();
        // independent recomputation from explicit loops over weights
        let mut prev = x.clone();
        for (l, block) in bundle.classifier.blocks.iter().enumerate() {
            let (fan_in, fan_out) = (block.fan_in(), block.fan_out());
            let mut out = vec![0.0; prev.rows() * fan_out];
            for i in 0..prev.rows() {
                for j in 0..fan_out {
                    let mut acc = block.bias.data()[j];
                    for k in 0..fan_in {
                        acc += prev.row(i)[k] * block.weight.data()[k * fan_out + j];
                    }
                    out[i * fan_out + j] = acc.max(0.0);
                }
            }
            let expected = Tensor::new([prev.rows(), fan_out], out).unwrap();
            for (a, b) in expected.data().iter().zip(trace.layer(l + 1).data()) {
                assert!((a - b).abs() < 1e-12);
            }
            // exact when recomputed through the same kernel
            assert_eq!(&bundle.classifier.block(l + 1, &prev).unwrap(), trace.layer(l + 1));
            prev = trace.layer(l + 1).clone();
        }
        assert_eq!(bundle.classifier.head.forward(trace.layer(4)).unwrap(), logits);
    }

    #[test]
    fn input_width_mismatch_is_dimension_error() {
        let bundle = ModelBundle::init(&small_arch(2), 0).unwrap();
        assert!(matches!(
            bundle.forward_with_trace(&random_input(2, 5, 0)),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            bundle.decode(&random_input(2, 4, 0)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn decode_is_bounded_and_pure() {
        let bundle = ModelBundle::init(&small_arch(2), 5).unwrap();
        let h = random_input(4, 5, 9).map(|v| 40.0 * (v - 0.5));
        let a = bundle.decode(&h).unwrap();
        let b = bundle.decode(&h).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), &[4, 6]);
        assert!(a.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = ModelBundle::init(&small_arch(3), 42).unwrap();
        let b = ModelBundle::init(&small_arch(3), 42).unwrap();
        assert_eq!(a, b);
        let c = ModelBundle::init(&small_arch(3), 43).unwrap();
        assert_ne!(a, c);
        for l in a.linears() {
            assert!(l.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn kaiming_variance_matches_two_over_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let lin = Linear::kaiming(128, 128, &mut rng);
        let w = lin.weight.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 2.0 / 128.0;
        assert!((var - target).abs() / target < 0.10, "var {var}");
    }

    #[test]
    fn invalid_arch_rejected() {
        let mut a = small_arch(0);
        assert!(matches!(ModelBundle::init(&a, 0), Err(Error::Parameter(_))));
        a.blocks = 1;
        a.classes = 1;
        assert!(matches!(ModelBundle::init(&a, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn tape_forward_matches_plain_forward_bitwise() {
        let bundle = ModelBundle::init(&small_arch(3), 8).unwrap();
        let x = random_input(5, 6, 6);
        let (logits, trace) = bundle.forward_with_trace(&x).unwrap();
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape, true);
        let xv = tape.constant(x);
        let traced = bound.forward_with_trace(&mut tape, xv).unwrap();
        assert_eq!(tape.value(traced.logits), &logits);
        for (v, h) in traced.activations.iter().zip(&trace.activations) {
            assert_eq!(tape.value(*v), h);
        }
        let dec = bound.decode(&mut tape, traced.activations[1]).unwrap();
        assert_eq!(tape.value(dec), &bundle.decode(trace.layer(2)).unwrap());
    }

    #[test]
    fn decoder_parameters_are_shared_across_layers() {
        let bundle = ModelBundle::init(&small_arch(4), 2).unwrap();
        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape, true);
        let leaves_before = tape.leaf_count();
        let x = tape.constant(random_input(2, 6, 3));
        let traced = bound.forward_with_trace(&mut tape, x).unwrap();
        let dec_vars = bound.decoder_vars();
        for &h in &traced.activations {
            bound.decode(&mut tape, h).unwrap();
            // decoding never registers new parameters
            assert_eq!(bound.decoder_vars(), dec_vars);
        }
        assert_eq!(tape.leaf_count(), leaves_before);
        assert_eq!(leaves_before, bundle.params().len());
    }

    #[test]
    fn pretrained_probabilities_on_simplex() {
        let m = PretrainedModel::frozen(Mlp::init(6, &[4], 3, 1).unwrap());
        let p = m.predict_proba(&random_input(7, 6, 1)).unwrap();
        for i in 0..7 {
            let s: f64 = p.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v >= 0.0));
        }
        assert!(PretrainedModel::unfrozen(m.net().clone()).require_frozen().is_err());
    }
}
