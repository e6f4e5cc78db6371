//! Training-time binarized MLP.
//!
//! Hidden layers compute `Linear(sign(W)) → BatchNorm → sign → Dropout`;
//! the head computes `scale ⊙ (a · sign(W)ᵀ) + shift`, giving real logits
//! for a sigmoid (binary) or softmax (multiclass) output. Input bits are
//! read as `0 → −1`, `1 → +1`. The optimizer updates real-valued latent
//! weights; gradients pass through `sign` with the clipped identity
//! (straight-through estimator).

mod checkpoint;
pub mod train;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;
use crate::frame::ClassLabel;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
/// Latent weights start uniform in `[-INIT_RANGE, INIT_RANGE]`.
pub const INIT_RANGE: f64 = 0.1;
pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One logit, sigmoid probability of "attack".
    Binary,
    /// One logit per class, softmax probabilities.
    Multiclass,
}

/// `sign` with `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Straight-through gradient window of `sign`: 1 on `[-1, 1]`, 0 elsewhere.
#[inline]
pub fn ste_window(x: f64) -> f64 {
    if x.abs() <= 1.0 {
        1.0
    } else {
        0.0
    }
}

/// Inference-time batch norm of one neuron. The packed compiler folds this
/// exact expression into an integer threshold, so both paths must call it.
#[inline]
pub fn bn_inference(acc: f64, bias: f64, gamma: f64, beta: f64, mean: f64, std: f64) -> f64 {
    gamma * ((acc + bias) - mean) / std + beta
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `n_out × n_in` latent weights.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

impl HiddenLayer {
    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        HiddenLayer {
            weights: Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-INIT_RANGE..=INIT_RANGE)),
            bias: Array1::zeros(n_out),
            gamma: Array1::ones(n_out),
            beta: Array1::zeros(n_out),
            running_mean: Array1::zeros(n_out),
            running_var: Array1::ones(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn binary_weights(&self) -> Array2<f64> {
        self.weights.mapv(sign)
    }

    /// `sqrt(running_var + ε)` per neuron.
    pub fn inference_std(&self) -> Array1<f64> {
        self.running_var.mapv(|v| (v + BN_EPS).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    pub weights: Array2<f64>,
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

impl OutputLayer {
    fn init<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        OutputLayer {
            weights: Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-INIT_RANGE..=INIT_RANGE)),
            scale: Array1::from_elem(n_out, 1.0 / (n_in as f64).sqrt()),
            shift: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weights.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weights.nrows()
    }

    pub fn binary_weights(&self) -> Array2<f64> {
        self.weights.mapv(sign)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnnModel {
    mode: Mode,
    pub hidden: Vec<HiddenLayer>,
    pub head: OutputLayer,
    pub dropout_rate: f64,
}

/// Per-layer state kept by [`BnnModel::forward_train`] for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    input: Array2<f64>,
    binary_weights: Array2<f64>,
    x_hat: Array2<f64>,
    inv_std: Array1<f64>,
    bn_out: Array2<f64>,
    activations: Array2<f64>,
    dropout_mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    head_input: Array2<f64>,
    head_weights: Array2<f64>,
    head_acc: Array2<f64>,
}

impl ForwardCache {
    /// `±1` outputs of hidden layer `l`, before dropout.
    pub fn hidden_activations(&self, l: usize) -> &Array2<f64> {
        &self.layers[l].activations
    }

    /// Batch-normalized values fed to the sign of hidden layer `l`.
    pub fn pre_activations(&self, l: usize) -> &Array2<f64> {
        &self.layers[l].bn_out
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len()
    }

    pub fn batch_size(&self) -> usize {
        self.head_input.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<LayerGradients>,
    pub head_weights: Array2<f64>,
    pub head_scale: Array1<f64>,
    pub head_shift: Array1<f64>,
}

impl Gradients {
    /// Same order as [`BnnModel::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * self.hidden.len() + 3);
        for g in &self.hidden {
            out.push(g.weights.as_slice().expect("standard layout"));
            out.push(g.bias.as_slice().expect("standard layout"));
            out.push(g.gamma.as_slice().expect("standard layout"));
            out.push(g.beta.as_slice().expect("standard layout"));
        }
        out.push(self.head_weights.as_slice().expect("standard layout"));
        out.push(self.head_scale.as_slice().expect("standard layout"));
        out.push(self.head_shift.as_slice().expect("standard layout"));
        out
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for g in &mut self.hidden {
            g.weights *= factor;
            g.bias *= factor;
            g.gamma *= factor;
            g.beta *= factor;
        }
        self.head_weights *= factor;
        self.head_scale *= factor;
        self.head_shift *= factor;
    }
}

/// Reference inference output: `±1` activations per hidden layer and logits.
#[derive(Debug, Clone)]
pub struct InferenceTrace {
    pub activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

/// Maps feature bits to a `±1` matrix, one row per vector.
pub fn features_to_matrix(features: &[FeatureVector], width: usize) -> Result<Array2<f64>> {
    let mut m = Array2::zeros((features.len(), width));
    for (i, f) in features.iter().enumerate() {
        if f.len() != width {
            return Err(Error::Shape(format!("feature vector {i} has {} bits, model expects {width}", f.len())));
        }
        for (j, bit) in f.bits().enumerate() {
            m[[i, j]] = if bit { 1.0 } else { -1.0 };
        }
    }
    Ok(m)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Writes probabilities for one row of logits into `out`.
pub fn probabilities_into(mode: Mode, logits: &[f64], out: &mut [f64]) {
    match mode {
        Mode::Binary => out[0] = sigmoid(logits[0]),
        Mode::Multiclass => {
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (o, &z) in out.iter_mut().zip(logits) {
                *o = (z - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
    }
}

/// Binary: attack (code 1) iff `probs[0] >= tau`. Multiclass: argmax, ties
/// going to the lowest class code.
pub fn decide(mode: Mode, probs: &[f64], tau: f64) -> ClassLabel {
    match mode {
        Mode::Binary => {
            if probs[0] >= tau {
                ClassLabel(1)
            } else {
                ClassLabel::BENIGN
            }
        }
        Mode::Multiclass => {
            let mut best = 0;
            for (k, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = k;
                }
            }
            ClassLabel(best as u16)
        }
    }
}

impl BnnModel {
    /// `topology` is `[input, hidden..., output]`; binary mode needs a single
    /// output, multiclass at least two.
    pub fn new<R: Rng + ?Sized>(topology: &[usize], mode: Mode, dropout_rate: f64, rng: &mut R) -> Result<Self> {
        if topology.len() < 3 || topology.contains(&0) {
            return Err(Error::Config(format!(
                "topology {topology:?} needs an input, at least one hidden layer and an output, all non-empty"
            )));
        }
        let out = *topology.last().expect("checked length");
        match mode {
            Mode::Binary if out != 1 => {
                return Err(Error::Config(format!("binary mode needs 1 output, topology has {out}")));
            }
            Mode::Multiclass if out < 2 => {
                return Err(Error::Config(format!("multiclass mode needs >= 2 outputs, topology has {out}")));
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let n = topology.len();
        let hidden = topology[..n - 1]
            .windows(2)
            .map(|w| HiddenLayer::init(w[0], w[1], rng))
            .collect();
        let head = OutputLayer::init(topology[n - 2], out, rng);
        Ok(BnnModel {
            mode,
            hidden,
            head,
            dropout_rate,
        })
    }

    /// The default `[input, 128, 128, 128, outputs]` network.
    pub fn standard<R: Rng + ?Sized>(
        input_width: usize,
        n_classes: usize,
        mode: Mode,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let out = match mode {
            Mode::Binary => 1,
            Mode::Multiclass => n_classes,
        };
        let mut topology = vec![input_width];
        topology.extend([HIDDEN_WIDTH; HIDDEN_LAYERS]);
        topology.push(out);
        BnnModel::new(&topology, mode, dropout_rate, rng)
    }

    pub(crate) fn from_parts(mode: Mode, hidden: Vec<HiddenLayer>, head: OutputLayer, dropout_rate: f64) -> Result<Self> {
        let mut width = hidden.first().map(HiddenLayer::n_in).unwrap_or(0);
        for layer in &hidden {
            if layer.n_in() != width
                || [&layer.bias, &layer.gamma, &layer.beta, &layer.running_mean, &layer.running_var]
                    .iter()
                    .any(|v| v.len() != layer.n_out())
            {
                return Err(Error::Shape("inconsistent hidden layer dimensions".into()));
            }
            width = layer.n_out();
        }
        if hidden.is_empty()
            || head.n_in() != width
            || head.scale.len() != head.n_out()
            || head.shift.len() != head.n_out()
        {
            return Err(Error::Shape("inconsistent output layer dimensions".into()));
        }
        Ok(BnnModel {
            mode,
            hidden,
            head,
            dropout_rate,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input_width(&self) -> usize {
        self.hidden[0].n_in()
    }

    pub fn output_width(&self) -> usize {
        self.head.n_out()
    }

    /// Number of class codes the model distinguishes.
    pub fn n_classes(&self) -> usize {
        match self.mode {
            Mode::Binary => 2,
            Mode::Multiclass => self.output_width(),
        }
    }

    pub fn topology(&self) -> Vec<usize> {
        let mut t = vec![self.input_width()];
        t.extend(self.hidden.iter().map(HiddenLayer::n_out));
        t.push(self.output_width());
        t
    }

    fn check_width(&self, cols: usize) -> Result<()> {
        if cols != self.input_width() {
            return Err(Error::Shape(format!("input has width {cols}, model expects {}", self.input_width())));
        }
        Ok(())
    }

    /// Training forward pass over a `±1` input batch. Uses batch statistics,
    /// folds them into the running statistics and applies dropout.
    pub fn forward_train<R: Rng + ?Sized>(
        &mut self,
        inputs: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_width(inputs.ncols())?;
        let n = inputs.nrows();
        if n < 2 {
            return Err(Error::Shape(format!("training batch of {n} rows; batch norm needs at least 2")));
        }
        let keep = 1.0 - self.dropout_rate;
        let mut a = inputs.to_owned();
        let mut layers = Vec::with_capacity(self.hidden.len());
        for layer in &mut self.hidden {
            let wb = layer.binary_weights();
            let z = a.dot(&wb.t()) + &layer.bias;
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &z - &mean;
            let var = centered.mapv(|c| c * c).mean_axis(Axis(0)).expect("non-empty batch");
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let x_hat = &centered * &inv_std;
            let bn_out = &x_hat * &layer.gamma + &layer.beta;
            let activations = bn_out.mapv(sign);

            let unbiased = n as f64 / (n as f64 - 1.0);
            layer.running_mean = &layer.running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
            layer.running_var = (&layer.running_var * (1.0 - BN_MOMENTUM) + &var * (BN_MOMENTUM * unbiased))
                .mapv(|v| v.max(BN_EPS));

            let (next, dropout_mask) = if self.dropout_rate > 0.0 {
                let mask = Array2::from_shape_fn(activations.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&activations * &mask, Some(mask))
            } else {
                (activations.clone(), None)
            };
            layers.push(LayerCache {
                input: a,
                binary_weights: wb,
                x_hat,
                inv_std,
                bn_out,
                activations,
                dropout_mask,
            });
            a = next;
        }
        let head_weights = self.head.binary_weights();
        let head_acc = a.dot(&head_weights.t());
        let logits = &head_acc * &self.head.scale + &self.head.shift;
        Ok((
            logits,
            ForwardCache {
                layers,
                head_input: a,
                head_weights,
                head_acc,
            },
        ))
    }

    /// Gradients of the loss with respect to every parameter, given the
    /// gradient with respect to the logits.
    pub fn backward_ste(&self, cache: &ForwardCache, grad_logits: ArrayView2<f64>) -> Result<Gradients> {
        let n = cache.batch_size();
        if grad_logits.dim() != (n, self.output_width()) || cache.n_hidden() != self.hidden.len() {
            return Err(Error::Shape(format!(
                "logit gradient {:?} does not match batch {n} × {} outputs",
                grad_logits.dim(),
                self.output_width()
            )));
        }
        let head_scale_grad = (&grad_logits * &cache.head_acc).sum_axis(Axis(0));
        let head_shift_grad = grad_logits.sum_axis(Axis(0));
        let d_acc = &grad_logits * &self.head.scale;
        let head_weights_grad = d_acc.t().dot(&cache.head_input) * &self.head.weights.mapv(ste_window);
        let mut upstream = d_acc.dot(&cache.head_weights);

        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (l, (layer, lc)) in self.hidden.iter().zip(&cache.layers).enumerate().rev() {
            let g_sign = match &lc.dropout_mask {
                Some(mask) => &upstream * mask,
                None => upstream,
            };
            let g_bn = &g_sign * &lc.bn_out.mapv(ste_window);
            let gamma_grad = (&g_bn * &lc.x_hat).sum_axis(Axis(0));
            let beta_grad = g_bn.sum_axis(Axis(0));
            let g_xhat = &g_bn * &layer.gamma;
            let sum_g = g_xhat.sum_axis(Axis(0));
            let sum_gx = (&g_xhat * &lc.x_hat).sum_axis(Axis(0));
            let g_z = ((&g_xhat * n as f64) - &sum_g - &(&lc.x_hat * &sum_gx)) * &(&lc.inv_std / n as f64);
            let bias_grad = g_z.sum_axis(Axis(0));
            let weights_grad = g_z.t().dot(&lc.input) * &layer.weights.mapv(ste_window);
            upstream = if l > 0 { g_z.dot(&lc.binary_weights) } else { Array2::zeros((0, 0)) };
            hidden.push(LayerGradients {
                weights: weights_grad,
                bias: bias_grad,
                gamma: gamma_grad,
                beta: beta_grad,
            });
        }
        hidden.reverse();
        Ok(Gradients {
            hidden,
            head_weights: head_weights_grad,
            head_scale: head_scale_grad,
            head_shift: head_shift_grad,
        })
    }

    /// Mutable views of every trainable parameter, in a fixed order.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.hidden.len() + 3);
        for layer in &mut self.hidden {
            out.push(layer.weights.as_slice_mut().expect("standard layout"));
            out.push(layer.bias.as_slice_mut().expect("standard layout"));
            out.push(layer.gamma.as_slice_mut().expect("standard layout"));
            out.push(layer.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.head.weights.as_slice_mut().expect("standard layout"));
        out.push(self.head.scale.as_slice_mut().expect("standard layout"));
        out.push(self.head.shift.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn clip_latent_weights(&mut self) {
        for layer in &mut self.hidden {
            layer.weights.mapv_inplace(|w| w.clamp(-1.0, 1.0));
        }
        self.head.weights.mapv_inplace(|w| w.clamp(-1.0, 1.0));
    }

    /// Inference-mode forward over a `±1` batch: running statistics, no
    /// dropout.
    pub fn forward_inference(&self, inputs: ArrayView2<f64>) -> Result<InferenceTrace> {
        self.check_width(inputs.ncols())?;
        let mut a = inputs.to_owned();
        let mut activations = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let std = layer.inference_std();
            let mut h = a.dot(&layer.binary_weights().t());
            for mut row in h.rows_mut() {
                for (j, v) in row.iter_mut().enumerate() {
                    let y = bn_inference(
                        *v,
                        layer.bias[j],
                        layer.gamma[j],
                        layer.beta[j],
                        layer.running_mean[j],
                        std[j],
                    );
                    *v = sign(y);
                }
            }
            activations.push(h.clone());
            a = h;
        }
        let logits = a.dot(&self.head.binary_weights().t()) * &self.head.scale + &self.head.shift;
        Ok(InferenceTrace { activations, logits })
    }

    pub fn logits(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_inference(inputs)?.logits)
    }

    /// Class probabilities per feature vector: one column in binary mode,
    /// one per class in multiclass mode.
    pub fn predict(&self, features: &[FeatureVector]) -> Result<Array2<f64>> {
        let x = features_to_matrix(features, self.input_width())?;
        let logits = self.logits(x.view())?;
        Ok(self.probabilities(logits.view()))
    }

    pub fn probabilities(&self, logits: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(logits.raw_dim());
        for (row, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
            let row = row.to_vec();
            probabilities_into(self.mode, &row, dst.as_slice_mut().expect("standard layout"));
        }
        out
    }

    /// Allocation-free single-message evaluator using real arithmetic.
    pub fn reference_evaluator(&self) -> ReferenceEvaluator {
        ReferenceEvaluator::new(self)
    }
}

/// Single-message forward in `f64` with preallocated scratch; the baseline
/// the packed engine is benchmarked against.
#[derive(Debug, Clone)]
pub struct ReferenceEvaluator {
    mode: Mode,
    layers: Vec<RefLayer>,
    head_weights: Vec<f64>,
    head_scale: Vec<f64>,
    head_shift: Vec<f64>,
    input: Vec<f64>,
    buffers: Vec<Vec<f64>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

#[derive(Debug, Clone)]
struct RefLayer {
    n_in: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
    gamma: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<f64>,
    std: Vec<f64>,
}

fn to_vec(a: ArrayView1<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

impl ReferenceEvaluator {
    fn new(model: &BnnModel) -> Self {
        let layers: Vec<RefLayer> = model
            .hidden
            .iter()
            .map(|l| RefLayer {
                n_in: l.n_in(),
                weights: l.binary_weights().iter().copied().collect(),
                bias: to_vec(l.bias.view()),
                gamma: to_vec(l.gamma.view()),
                beta: to_vec(l.beta.view()),
                mean: to_vec(l.running_mean.view()),
                std: to_vec(l.inference_std().view()),
            })
            .collect();
        let buffers = model.hidden.iter().map(|l| vec![0.0; l.n_out()]).collect();
        ReferenceEvaluator {
            mode: model.mode,
            layers,
            head_weights: model.head.binary_weights().iter().copied().collect(),
            head_scale: to_vec(model.head.scale.view()),
            head_shift: to_vec(model.head.shift.view()),
            input: vec![0.0; model.input_width()],
            buffers,
            logits: vec![0.0; model.output_width()],
            probs: vec![0.0; model.output_width()],
        }
    }

    pub fn infer(&mut self, x: &FeatureVector) -> Result<&[f64]> {
        if x.len() != self.input.len() {
            return Err(Error::Shape(format!("input has {} bits, model expects {}", x.len(), self.input.len())));
        }
        for (i, v) in self.input.iter_mut().enumerate() {
            *v = if x.get(i) { 1.0 } else { -1.0 };
        }
        for l in 0..self.layers.len() {
            let (before, after) = self.buffers.split_at_mut(l);
            let src: &[f64] = if l == 0 { &self.input } else { &before[l - 1] };
            let dst = &mut after[0];
            let layer = &self.layers[l];
            for (j, out) in dst.iter_mut().enumerate() {
                let row = &layer.weights[j * layer.n_in..(j + 1) * layer.n_in];
                let acc: f64 = row.iter().zip(src).map(|(w, a)| w * a).sum();
                *out = sign(bn_inference(acc, layer.bias[j], layer.gamma[j], layer.beta[j], layer.mean[j], layer.std[j]));
            }
        }
        let last = self.buffers.last().expect("at least one hidden layer");
        let n_in = last.len();
        for (k, logit) in self.logits.iter_mut().enumerate() {
            let row = &self.head_weights[k * n_in..(k + 1) * n_in];
            let acc: f64 = row.iter().zip(last).map(|(w, a)| w * a).sum();
            *logit = acc * self.head_scale[k] + self.head_shift[k];
        }
        probabilities_into(self.mode, &self.logits, &mut self.probs);
        Ok(&self.probs)
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn all_minus_one_inputs_against_plus_one_weights() {
        let mut model = BnnModel::new(&[73, 4, 1], Mode::Binary, 0.0, &mut rng()).unwrap();
        model.hidden[0].weights.fill(1.0);
        model.hidden[0].bias = Array1::from(vec![0.5, -2.0, 0.0, 3.0]);
        let inputs = features_to_matrix(&[FeatureVector::zeros(73), FeatureVector::zeros(73)], 73).unwrap();
        let acc = inputs.dot(&model.hidden[0].binary_weights().t()) + &model.hidden[0].bias;
        for row in acc.rows() {
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, -73.0 + model.hidden[0].bias[j]);
            }
        }
        let (logits, _) = model.forward_train(inputs.view(), &mut rng()).unwrap();
        assert_eq!(logits.dim(), (2, 1));
    }

    #[test]
    fn activations_are_exactly_plus_minus_one() {
        let mut r = rng();
        let mut model = BnnModel::standard(73, 4, Mode::Multiclass, 0.2, &mut r).unwrap();
        let inputs = Array2::from_shape_fn((32, 73), |_| if r.random::<bool>() { 1.0 } else { -1.0 });
        let (logits, cache) = model.forward_train(inputs.view(), &mut r).unwrap();
        assert_eq!(logits.dim(), (32, 4));
        for l in 0..cache.n_hidden() {
            assert!(cache.hidden_activations(l).iter().all(|&v| v == 1.0 || v == -1.0));
        }
        let trace = model.forward_inference(inputs.view()).unwrap();
        for a in &trace.activations {
            assert!(a.iter().all(|&v| v == 1.0 || v == -1.0));
        }
    }

    #[test]
    fn single_row_training_batch_is_rejected() {
        let mut model = BnnModel::new(&[9, 8, 3], Mode::Multiclass, 0.0, &mut rng()).unwrap();
        let x = Array2::from_elem((1, 9), 1.0);
        assert!(model.forward_train(x.view(), &mut rng()).is_err());
        let x = Array2::from_elem((4, 8), 1.0);
        assert!(model.forward_train(x.view(), &mut rng()).is_err());
    }

    #[test]
    fn topology_validation() {
        assert!(BnnModel::new(&[73, 128, 2], Mode::Binary, 0.0, &mut rng()).is_err());
        assert!(BnnModel::new(&[73, 128, 1], Mode::Multiclass, 0.0, &mut rng()).is_err());
        assert!(BnnModel::new(&[73, 1], Mode::Binary, 0.0, &mut rng()).is_err());
        assert!(BnnModel::new(&[73, 8, 1], Mode::Binary, 1.0, &mut rng()).is_err());
        let m = BnnModel::standard(73, 5, Mode::Multiclass, 0.2, &mut rng()).unwrap();
        assert_eq!(m.topology(), vec![73, 128, 128, 128, 5]);
        assert_eq!(BnnModel::standard(73, 5, Mode::Binary, 0.2, &mut rng()).unwrap().output_width(), 1);
    }

    #[test]
    fn ste_window_edges() {
        assert_eq!(ste_window(0.5), 1.0);
        assert_eq!(ste_window(-1.0), 1.0);
        assert_eq!(ste_window(2.0), 0.0);
        assert_eq!(sign(0.0), 1.0);
        assert_eq!(sign(-0.0), 1.0);
        assert_eq!(sign(-1e-300), -1.0);
    }

    #[test]
    fn straight_through_gradient_passes_inside_window_only() {
        // One hidden neuron whose BN output is steered to 0.5 or 2.0 via beta.
        for (beta, expect_pass) in [(0.5, true), (2.0, false)] {
            let mut model = BnnModel::new(&[2, 1, 1], Mode::Binary, 0.0, &mut rng()).unwrap();
            model.hidden[0].weights.fill(1.0);
            model.hidden[0].gamma.fill(0.0);
            model.hidden[0].beta.fill(beta);
            model.head.weights.fill(1.0);
            model.head.scale.fill(1.0);
            let x = Array2::from_shape_vec((2, 2), vec![1.0, 1.0, -1.0, 1.0]).unwrap();
            let (_, cache) = model.forward_train(x.view(), &mut rng()).unwrap();
            assert!(cache.pre_activations(0).iter().all(|&v| v == beta));
            let g = Array2::from_elem((2, 1), 0.25);
            let grads = model.backward_ste(&cache, g.view()).unwrap();
            let expected = if expect_pass { 0.5 } else { 0.0 };
            assert_eq!(grads.hidden[0].beta[0], expected);
        }
    }

    #[test]
    fn probabilities_and_decisions() {
        let mut p = [0.0];
        probabilities_into(Mode::Binary, &[0.0], &mut p);
        assert_eq!(p[0], 0.5);
        let mut p = [0.0; 4];
        probabilities_into(Mode::Multiclass, &[1.5; 4], &mut p);
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
        probabilities_into(Mode::Multiclass, &[3.0, -2.0, 700.0, 0.1], &mut p);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        assert_eq!(decide(Mode::Binary, &[0.5], 0.5), ClassLabel(1));
        assert_eq!(decide(Mode::Binary, &[0.49], 0.5), ClassLabel::BENIGN);
        assert_eq!(decide(Mode::Multiclass, &[0.1, 0.4, 0.1, 0.4], 0.5), ClassLabel(1));
    }

    #[test]
    fn reference_evaluator_matches_batch_forward() {
        let mut r = rng();
        let mut model = BnnModel::standard(73, 3, Mode::Multiclass, 0.0, &mut r).unwrap();
        for layer in &mut model.hidden {
            layer.running_mean.mapv_inplace(|_| r.random_range(-5.0..5.0));
            layer.running_var.mapv_inplace(|_| r.random_range(0.5..50.0));
            layer.gamma.mapv_inplace(|_| r.random_range(-2.0..2.0));
        }
        let feats: Vec<FeatureVector> =
            (0..50).map(|_| FeatureVector::from_bits((0..73).map(|_| r.random::<bool>()))).collect();
        let probs = model.predict(&feats).unwrap();
        let mut ev = model.reference_evaluator();
        for (f, row) in feats.iter().zip(probs.rows()) {
            assert_eq!(ev.infer(f).unwrap(), row.as_slice().unwrap());
        }
    }
}
