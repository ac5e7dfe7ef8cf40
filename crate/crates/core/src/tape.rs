//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every primitive as an append-only node holding its
//! forward value and parent indices, so node order is always topological.
//! [`Tape::backward`] sweeps the nodes in reverse from a scalar loss and
//! returns [`Gradients`] for every node that depends on a leaf.
//!
//! Leaves come in two flavours: [`Tape::leaf`] (differentiable, e.g. trainable
//! parameters or the input for FGSM) and [`Tape::constant`] (never receives a
//! gradient, e.g. frozen parameters or targets).

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, gemm, Tensor};

/// Smallest probability fed to a logarithm in the soft-target losses.
pub const PROB_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    /// Elementwise multiply by a fixed mask (already scaled by `1/(1-p)`).
    Mask(Var, Vec<f64>),
    Sum(Var),
    Mean(Var),
    LogSoftmax(Var),
    /// Mean hard-label cross-entropy; saves the softmax probabilities.
    SoftmaxCe {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
    /// Mean of `−Σ_c t_c·log max(p_c, floor)` over rows.
    SoftTargetCe {
        logits: Var,
        target: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Mean over rows of `−(1/K)·Σ_c log max(p_c, floor)`.
    UniformTargetCe { logits: Var, probs: Vec<f64> },
    Mse(Var, Var),
    SelectRows { sources: Vec<Var>, choice: Vec<usize> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], aligned with tape nodes.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros when the loss does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        match &self.slots[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.slots[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.slots[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(self.shapes[var.0].clone()),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of differentiable leaves recorded so far.
    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.op, Op::Leaf)).count()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = tensor::matmul(self.value(a), self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let value = tensor::add_row(self.value(a), self.value(bias))?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(value, Op::AddRow(a, bias), rg))
    }

    /// `x·w + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = tensor::relu(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = tensor::sigmoid(self.value(a));
        let rg = self.rg(&[a]);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// Multiplies by a fixed elementwise mask. Used for dropout.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let src = self.value(a);
        if mask.len() != src.len() {
            return Err(Error::dim("mask", src.shape(), &[mask.len()]));
        }
        let data = src.data().iter().zip(&mask).map(|(x, m)| x * m).collect();
        let value = Tensor::from_parts(src.shape().to_vec(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Mask(a, mask), rg))
    }

    /// Dropout recorded on the tape; returns `a` itself when inactive.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        a: Var,
        p: f64,
        rng: &mut R,
        training: bool,
    ) -> Result<Var> {
        tensor::check_dropout_p(p)?;
        if !training || p == 0.0 {
            return Ok(a);
        }
        let mask = tensor::dropout_mask(self.value(a).len(), p, rng)?;
        self.mask(a, mask)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(value, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(&[a]);
        self.push(value, Op::Mean(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = tensor::log_softmax(self.value(a))?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::LogSoftmax(a), rg))
    }

    /// Mean over the batch of `−log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = match lv.shape() {
            [b, k] => (*b, *k),
            other => return Err(Error::dim("softmax_cross_entropy", other, &[labels.len(), 0])),
        };
        if k < 2 {
            return Err(Error::Parameter(format!("need at least 2 classes, got {k}")));
        }
        if b != labels.len() {
            return Err(Error::dim("softmax_cross_entropy", lv.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                limit: k,
            });
        }
        let logp = tensor::log_softmax(lv)?;
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &y)| logp.data()[i * k + y])
            .sum::<f64>()
            / b as f64;
        let probs = logp.data().iter().map(|v| v.exp()).collect();
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `−Σ_c target_c · log max(softmax(logits)_c, PROB_FLOOR)`.
    /// `target` is a fixed distribution; no gradient flows into it.
    pub fn soft_target_cross_entropy(&mut self, logits: Var, target: &Tensor) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != target.shape() || lv.shape().len() != 2 {
            return Err(Error::dim("soft_target_cross_entropy", lv.shape(), target.shape()));
        }
        let b = lv.rows();
        let probs = tensor::softmax(lv)?.into_data();
        let loss = -probs
            .iter()
            .zip(target.data())
            .map(|(p, t)| t * p.max(PROB_FLOOR).ln())
            .sum::<f64>()
            / b as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftTargetCe {
                logits,
                target: target.data().to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Mean over rows of `−(1/K)·Σ_c log max(softmax(logits)_c, PROB_FLOOR)`:
    /// cross-entropy of the prediction against the uniform distribution.
    pub fn uniform_target_cross_entropy(&mut self, logits: Var) -> Result<Var> {
        let lv = self.value(logits);
        let (b, k) = match lv.shape() {
            [b, k] => (*b, *k),
            other => return Err(Error::dim("uniform_target_cross_entropy", other, &[0, 0])),
        };
        let probs = tensor::softmax(lv)?.into_data();
        let loss = -probs.iter().map(|p| p.max(PROB_FLOOR).ln()).sum::<f64>() / (b * k) as f64;
        let rg = self.rg(&[logits]);
        Ok(self.push(Tensor::scalar(loss), Op::UniformTargetCe { logits, probs }, rg))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::dim("mse", p.shape(), t.shape()));
        }
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(Tensor::scalar(loss), Op::Mse(pred, target), rg))
    }

    /// Row `i` of the output is row `i` of `sources[choice[i]]`.
    pub fn select_rows(&mut self, sources: &[Var], choice: &[usize]) -> Result<Var> {
        let first = self.value(*sources.first().ok_or_else(|| {
            Error::Parameter("select_rows needs at least one source".into())
        })?);
        let shape = first.shape().to_vec();
        if shape.len() != 2 || shape[0] != choice.len() {
            return Err(Error::dim("select_rows", &shape, &[choice.len()]));
        }
        for s in sources {
            if self.value(*s).shape() != shape.as_slice() {
                return Err(Error::dim("select_rows", &shape, self.value(*s).shape()));
            }
        }
        if let Some(&bad) = choice.iter().find(|&&c| c >= sources.len()) {
            return Err(Error::Index {
                what: "select_rows source",
                index: bad,
                limit: sources.len(),
            });
        }
        let cols = shape[1];
        let mut data = Vec::with_capacity(shape[0] * cols);
        for (i, &c) in choice.iter().enumerate() {
            data.extend_from_slice(self.value(sources[c]).row(i));
        }
        let rg = self.rg(sources);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::SelectRows {
                sources: sources.to_vec(),
                choice: choice.to_vec(),
            },
            rg,
        ))
    }

    /// `Σ_i w_i · term_i` over scalar terms.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = 0.0;
        for &(v, w) in terms {
            let t = self.value(v);
            if !t.is_scalar() {
                return Err(Error::Contract(format!(
                    "weighted_sum term has shape {:?}, expected scalar",
                    t.shape()
                )));
            }
            total += w * t.item();
        }
        let vars: Vec<Var> = terms.iter().map(|(v, _)| *v).collect();
        let rg = self.rg(&vars);
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum(terms.to_vec()), rg))
    }

    /// Reverse sweep from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                lv.shape()
            )));
        }
        let mut slots: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![1.0]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = slots[idx].take() else {
                continue;
            };
            self.propagate(idx, &g, &mut slots);
            slots[idx] = Some(g);
        }

        Ok(Gradients {
            slots,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, idx: usize, g: &Tensor, slots: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.requires_grad(*a) {
                    let slot = slot_for(slots, *a, av.shape());
                    gemm(gd, false, bv.data(), true, slot, m, n, k, true);
                }
                if self.requires_grad(*b) {
                    let slot = slot_for(slots, *b, bv.shape());
                    gemm(av.data(), true, gd, false, slot, k, m, n, true);
                }
            }
            Op::AddRow(a, bias) => {
                if self.requires_grad(*a) {
                    add_into(slot_for(slots, *a, g.shape()), gd);
                }
                if self.requires_grad(*bias) {
                    let n = self.value(*bias).len();
                    let slot = slot_for(slots, *bias, self.value(*bias).shape());
                    for row in gd.chunks_exact(n) {
                        add_into(slot, row);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if self.requires_grad(*v) {
                        add_into(slot_for(slots, *v, g.shape()), gd);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(*a) {
                    add_into(slot_for(slots, *a, g.shape()), gd);
                }
                if self.requires_grad(*b) {
                    let slot = slot_for(slots, *b, g.shape());
                    for (s, x) in slot.iter_mut().zip(gd) {
                        *s -= x;
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.requires_grad(*a) {
                    let slot = slot_for(slots, *a, g.shape());
                    for ((s, x), y) in slot.iter_mut().zip(gd).zip(bv) {
                        *s += x * y;
                    }
                }
                if self.requires_grad(*b) {
                    let slot = slot_for(slots, *b, g.shape());
                    for ((s, x), y) in slot.iter_mut().zip(gd).zip(av) {
                        *s += x * y;
                    }
                }
            }
            Op::Scale(a, c) => {
                let slot = slot_for(slots, *a, g.shape());
                for (s, x) in slot.iter_mut().zip(gd) {
                    *s += c * x;
                }
            }
            Op::Relu(a) => {
                let out = node.value.data();
                let slot = slot_for(slots, *a, g.shape());
                for ((s, x), o) in slot.iter_mut().zip(gd).zip(out) {
                    if *o > 0.0 {
                        *s += x;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let out = node.value.data();
                let slot = slot_for(slots, *a, g.shape());
                for ((s, x), y) in slot.iter_mut().zip(gd).zip(out) {
                    *s += x * y * (1.0 - y);
                }
            }
            Op::Mask(a, mask) => {
                let slot = slot_for(slots, *a, g.shape());
                for ((s, x), m) in slot.iter_mut().zip(gd).zip(mask) {
                    *s += x * m;
                }
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                let slot = slot_for(slots, *a, &shape);
                for s in slot.iter_mut() {
                    *s += gd[0];
                }
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let c = gd[0] / av.len() as f64;
                let slot = slot_for(slots, *a, av.shape());
                for s in slot.iter_mut() {
                    *s += c;
                }
            }
            Op::LogSoftmax(a) => {
                // d/dz_j of Σ_c g_c·(z_c − lse) = g_j − softmax_j·Σ_c g_c
                let out = node.value.data();
                let k = node.value.cols();
                let slot = slot_for(slots, *a, g.shape());
                for ((srow, grow), orow) in slot
                    .chunks_exact_mut(k)
                    .zip(gd.chunks_exact(k))
                    .zip(out.chunks_exact(k))
                {
                    let gsum: f64 = grow.iter().sum();
                    for ((s, gx), o) in srow.iter_mut().zip(grow).zip(orow) {
                        *s += gx - o.exp() * gsum;
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                labels,
                probs,
            } => {
                let k = self.value(*logits).cols();
                let c = gd[0] / labels.len() as f64;
                let slot = slot_for(slots, *logits, self.value(*logits).shape());
                for (i, &y) in labels.iter().enumerate() {
                    let row = &mut slot[i * k..(i + 1) * k];
                    for (j, s) in row.iter_mut().enumerate() {
                        let ind = if j == y { 1.0 } else { 0.0 };
                        *s += c * (probs[i * k + j] - ind);
                    }
                }
            }
            Op::SoftTargetCe {
                logits,
                target,
                probs,
            } => {
                let lshape = self.value(*logits).shape().to_vec();
                let k = lshape[1];
                let c = gd[0] / lshape[0] as f64;
                let slot = slot_for(slots, *logits, &lshape);
                for ((srow, prow), trow) in slot
                    .chunks_exact_mut(k)
                    .zip(probs.chunks_exact(k))
                    .zip(target.chunks_exact(k))
                {
                    // Clipped entries are constants: only unclipped classes contribute.
                    let live_mass: f64 = prow
                        .iter()
                        .zip(trow)
                        .filter(|(p, _)| **p > PROB_FLOOR)
                        .map(|(_, t)| t)
                        .sum();
                    for ((s, p), t) in srow.iter_mut().zip(prow).zip(trow) {
                        let own = if *p > PROB_FLOOR { *t } else { 0.0 };
                        *s += c * (p * live_mass - own);
                    }
                }
            }
            Op::UniformTargetCe { logits, probs } => {
                let lshape = self.value(*logits).shape().to_vec();
                let (b, k) = (lshape[0], lshape[1]);
                let c = gd[0] / (b * k) as f64;
                let slot = slot_for(slots, *logits, &lshape);
                for (srow, prow) in slot.chunks_exact_mut(k).zip(probs.chunks_exact(k)) {
                    let live = prow.iter().filter(|p| **p > PROB_FLOOR).count() as f64;
                    for (s, p) in srow.iter_mut().zip(prow) {
                        let own = if *p > PROB_FLOOR { 1.0 } else { 0.0 };
                        *s += c * (p * live - own);
                    }
                }
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let c = 2.0 * gd[0] / pv.len() as f64;
                if self.requires_grad(*p) {
                    let slot = slot_for(slots, *p, pv.shape());
                    for ((s, a), b) in slot.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *s += c * (a - b);
                    }
                }
                if self.requires_grad(*t) {
                    let slot = slot_for(slots, *t, tv.shape());
                    for ((s, a), b) in slot.iter_mut().zip(pv.data()).zip(tv.data()) {
                        *s -= c * (a - b);
                    }
                }
            }
            Op::SelectRows { sources, choice } => {
                let shape = node.value.shape().to_vec();
                let cols = shape[1];
                for (i, &c) in choice.iter().enumerate() {
                    let src = sources[c];
                    if !self.requires_grad(src) {
                        continue;
                    }
                    let slot = slot_for(slots, src, &shape);
                    add_into(&mut slot[i * cols..(i + 1) * cols], &gd[i * cols..(i + 1) * cols]);
                }
            }
            Op::WeightedSum(terms) => {
                for &(v, w) in terms {
                    if self.requires_grad(v) {
                        let slot = slot_for(slots, v, &[]);
                        slot[0] += w * gd[0];
                    }
                }
            }
        }
    }
}

fn slot_for<'a>(slots: &'a mut [Option<Tensor>], v: Var, shape: &[usize]) -> &'a mut [f64] {
    slots[v.0]
        .get_or_insert_with(|| Tensor::zeros(shape.to_vec()))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[1.0; 6]);
        assert_eq!(g.wrt(s).item(), 1.0);
    }

    #[test]
    fn mse_against_zero_uses_mean_convention() {
        // mean over one element: d/dx (x−0)² = 2x = 6
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1], &[3.0]));
        let z = tape.constant(Tensor::zeros([1]));
        let l = tape.mse(x, z).unwrap();
        assert_eq!(tape.value(l).item(), 9.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0]);
        assert!(g.get(z).is_none());
    }

    #[test]
    fn relu_gradient_at_kink_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_sum_gradient_matches_finite_difference() {
        let x0 = [-1.0, 2.0];
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &x0));
        let r = tape.relu(x);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap().wrt(x);
        let f = |v: &[f64]| v.iter().map(|a| a.max(0.0)).sum::<f64>();
        let h = 1e-5;
        for i in 0..2 {
            let mut p = x0;
            let mut m = x0;
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-9);
        }
        assert_eq!(g.data(), &[0.0, 1.0]);
    }

    #[test]
    fn cross_entropy_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros([1, 10]));
        let l = tape.softmax_cross_entropy(z, &[7]).unwrap();
        assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);

        let z = tape.constant(t(&[1, 3], &[1.0, 2.0, 3.0]));
        let l = tape.softmax_cross_entropy(z, &[2]).unwrap();
        // ln(e¹+e²+e³) − 3
        let expected = (1f64.exp() + 2f64.exp() + 3f64.exp()).ln() - 3.0;
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
        assert!((tape.value(l).item() - 0.40761).abs() < 1e-5);

        let z = tape.constant(t(&[1, 2], &[30.0, -30.0]));
        let l = tape.softmax_cross_entropy(z, &[0]).unwrap();
        assert!(tape.value(l).item() < 1e-9);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros([2, 3]));
        assert!(matches!(
            tape.softmax_cross_entropy(z, &[0, 3]),
            Err(Error::Index { index: 3, .. })
        ));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros([2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn untouched_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 2.0]));
        let y = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(y).data(), &[0.0; 3]);
    }

    #[test]
    fn mse_shape_mismatch_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros([2]));
        let b = tape.leaf(Tensor::zeros([3]));
        assert!(matches!(tape.mse(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn uniform_target_values() {
        let mut tape = Tape::new();
        // softmax(ln .9, ln .1) = (.9, .1)
        let z = tape.constant(t(&[1, 2], &[0.9f64.ln(), 0.1f64.ln()]));
        let l = tape.uniform_target_cross_entropy(z).unwrap();
        let expected = -0.5 * (0.9f64.ln() + 0.1f64.ln());
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
        assert!((tape.value(l).item() - 1.2040).abs() < 1e-4);
    }
}
