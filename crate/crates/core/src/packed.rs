//! Bit-packed inference.
//!
//! A trained [`BnnModel`] is compiled into one bit per weight (`1 ≡ +1`),
//! rows padded to whole 64-bit words, and batch norm + sign folded into a
//! per-neuron integer comparison on the `±1` accumulator
//! `a = 2·popcount(XNOR(w, x) & mask) − n`.
//!
//! # File layout
//!
//! All integers little-endian, reals as IEEE-754 bit patterns:
//!
//! ```text
//! magic "CANBNNPK" | version u32 | mode u8 (0 binary, 1 multiclass)
//! input width u32 | featurizer hash [32] | hidden layer count u32
//! per hidden layer: n_in u32 | n_out u32
//!                   weight words u64[n_out * ceil(n_in / 64)] (row-major)
//!                   thresholds i32[n_out] | orientations i8[n_out]
//! head: n_in u32 | n_out u32 | weight words u64[n_out * ceil(n_in / 64)]
//!       scale f64[n_out] | shift f64[n_out]
//! ```
//!
//! Within a row, weight `i` is bit `i % 64` of word `i / 64`; padding bits
//! are zero.

use std::io::{Read, Write};

use crate::bnn::{bn_inference, probabilities_into, sign, BnnModel, Mode};
use crate::error::{Error, Result};
use crate::featurizer::{hex_string, FeatureVector, FeaturizerConfig};
use crate::wire::{LeReader, LeWriter};

pub const PACKED_MAGIC: &[u8; 8] = b"CANBNNPK";
pub const PACKED_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 16;

#[inline(always)]
pub fn words_for(n: usize) -> usize {
    n.div_ceil(64)
}

/// Mask of the valid bits in word `k` of an `n`-bit row.
#[inline(always)]
fn word_mask(n: usize, k: usize) -> u64 {
    let valid = n - 64 * k;
    if valid >= 64 {
        u64::MAX
    } else {
        (1u64 << valid) - 1
    }
}

/// `±1` dot product of two packed `n`-bit vectors; bits past `n` are ignored.
#[inline(always)]
pub fn xnor_dot(w: &[u64], x: &[u64], n: usize) -> i32 {
    let words = words_for(n);
    let full = n / 64;
    let mut agree = 0u32;
    for k in 0..full {
        agree += (!(w[k] ^ x[k])).count_ones();
    }
    if words > full {
        agree += (!(w[full] ^ x[full]) & word_mask(n, full)).count_ones();
    }
    2 * agree as i32 - n as i32
}

/// Packs `±1` (or sign-of-real) values into words, `1 ≡ value >= 0`.
pub fn pack_signs<'a, I: IntoIterator<Item = &'a f64>>(values: I, n: usize) -> Vec<u64> {
    let mut out = vec![0u64; words_for(n)];
    for (i, v) in values.into_iter().take(n).enumerate() {
        if sign(*v) > 0.0 {
            out[i / 64] |= 1 << (i % 64);
        }
    }
    out
}

/// Folded batch norm + sign of one neuron: it outputs `+1` iff
/// `orientation · (a − threshold) >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threshold {
    pub threshold: i32,
    pub orientation: i8,
}

impl Threshold {
    #[inline(always)]
    pub fn fires(self, acc: i32) -> bool {
        if self.orientation >= 0 {
            acc >= self.threshold
        } else {
            acc <= self.threshold
        }
    }
}

/// Folds `sign(bn_inference(a, …))` over integer accumulators `a ∈ [−n, n]`
/// into a [`Threshold`].
///
/// The real-valued expression is monotone in `a` (non-decreasing when
/// `gamma >= 0`, non-increasing otherwise) because every rounded IEEE
/// operation is, so the crossing point is found by bisection on the exact
/// predicate rather than estimated from `μ − b − β·σ/γ`. `gamma == 0` gives a
/// constant neuron: always firing (`threshold = −n`) or never
/// (`threshold = n + 1`).
pub fn fold_batchnorm(bias: f64, gamma: f64, beta: f64, mean: f64, std: f64, n: usize) -> Threshold {
    let n = n as i32;
    let fires = |a: i32| bn_inference(a as f64, bias, gamma, beta, mean, std) >= 0.0;
    if gamma >= 0.0 {
        // Smallest firing accumulator, or n + 1 when none fires.
        let (mut lo, mut hi) = (-n, n + 1);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            if fires(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        Threshold {
            threshold: lo,
            orientation: 1,
        }
    } else {
        // Largest firing accumulator, or −n − 1 when none fires.
        let (mut lo, mut hi) = (-n - 1, n);
        while lo < hi {
            let mid = lo + (hi - lo + 1) / 2;
            if fires(mid) {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        Threshold {
            threshold: lo,
            orientation: -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    n_in: usize,
    n_out: usize,
    weights: Vec<u64>,
    thresholds: Vec<Threshold>,
}

impl PackedLayer {
    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    #[inline(always)]
    pub fn row(&self, j: usize) -> &[u64] {
        let wpr = words_for(self.n_in);
        &self.weights[j * wpr..(j + 1) * wpr]
    }

    pub fn thresholds(&self) -> &[Threshold] {
        &self.thresholds
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedHead {
    n_in: usize,
    n_out: usize,
    weights: Vec<u64>,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

impl PackedHead {
    #[inline(always)]
    pub fn row(&self, k: usize) -> &[u64] {
        let wpr = words_for(self.n_in);
        &self.weights[k * wpr..(k + 1) * wpr]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PackedModel {
    mode: Mode,
    input_width: usize,
    featurizer_hash: [u8; 32],
    layers: Vec<PackedLayer>,
    head: PackedHead,
}

/// Compiles a trained model. Running statistics must be finite.
pub fn pack(model: &BnnModel, featurizer_hash: [u8; 32]) -> Result<PackedModel> {
    let mut layers = Vec::with_capacity(model.hidden.len());
    for (l, layer) in model.hidden.iter().enumerate() {
        let params = [&layer.bias, &layer.gamma, &layer.beta, &layer.running_mean, &layer.running_var];
        if params.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFinite(format!("batch-norm parameters of hidden layer {l}")));
        }
        let n_in = layer.n_in();
        let std = layer.inference_std();
        let weights = layer
            .weights
            .rows()
            .into_iter()
            .flat_map(|row| pack_signs(row.iter(), n_in))
            .collect();
        let thresholds = (0..layer.n_out())
            .map(|j| {
                fold_batchnorm(
                    layer.bias[j],
                    layer.gamma[j],
                    layer.beta[j],
                    layer.running_mean[j],
                    std[j],
                    n_in,
                )
            })
            .collect();
        layers.push(PackedLayer {
            n_in,
            n_out: layer.n_out(),
            weights,
            thresholds,
        });
    }
    let head = &model.head;
    if head.scale.iter().chain(head.shift.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("output affine parameters".into()));
    }
    Ok(PackedModel {
        mode: model.mode(),
        input_width: model.input_width(),
        featurizer_hash,
        layers,
        head: PackedHead {
            n_in: head.n_in(),
            n_out: head.n_out(),
            weights: head
                .weights
                .rows()
                .into_iter()
                .flat_map(|row| pack_signs(row.iter(), head.n_in()))
                .collect(),
            scale: head.scale.to_vec(),
            shift: head.shift.to_vec(),
        },
    })
}

impl PackedModel {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn input_width(&self) -> usize {
        self.input_width
    }

    pub fn output_width(&self) -> usize {
        self.head.n_out
    }

    pub fn n_classes(&self) -> usize {
        match self.mode {
            Mode::Binary => 2,
            Mode::Multiclass => self.head.n_out,
        }
    }

    pub fn layers(&self) -> &[PackedLayer] {
        &self.layers
    }

    pub fn featurizer_hash(&self) -> [u8; 32] {
        self.featurizer_hash
    }

    /// Fails unless the model was compiled against `config`.
    pub fn check_featurizer(&self, config: &FeaturizerConfig) -> Result<()> {
        let found = config.hash();
        if found != self.featurizer_hash {
            return Err(Error::FeaturizerMismatch {
                expected: hex_string(&self.featurizer_hash),
                found: hex_string(&found),
            });
        }
        if config.input_width() != self.input_width {
            return Err(Error::Shape(format!(
                "featurizer produces {} bits, model expects {}",
                config.input_width(),
                self.input_width
            )));
        }
        Ok(())
    }

    /// `±1` weights of hidden layer `l`, row-major.
    pub fn unpack_signs(&self, l: usize) -> Vec<f64> {
        let layer = &self.layers[l];
        (0..layer.n_out)
            .flat_map(|j| {
                let row = layer.row(j);
                (0..layer.n_in).map(move |i| if row[i / 64] >> (i % 64) & 1 == 1 { 1.0 } else { -1.0 })
            })
            .collect()
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator::new(self)
    }

    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = LeWriter::new(out);
        w.bytes(PACKED_MAGIC)?;
        w.u32(PACKED_VERSION)?;
        w.u8(match self.mode {
            Mode::Binary => 0,
            Mode::Multiclass => 1,
        })?;
        w.u32(self.input_width as u32)?;
        w.bytes(&self.featurizer_hash)?;
        w.u32(self.layers.len() as u32)?;
        for layer in &self.layers {
            w.u32(layer.n_in as u32)?;
            w.u32(layer.n_out as u32)?;
            layer.weights.iter().try_for_each(|&x| w.u64(x))?;
            layer.thresholds.iter().try_for_each(|t| w.i32(t.threshold))?;
            layer.thresholds.iter().try_for_each(|t| w.u8(t.orientation as u8))?;
        }
        w.u32(self.head.n_in as u32)?;
        w.u32(self.head.n_out as u32)?;
        self.head.weights.iter().try_for_each(|&x| w.u64(x))?;
        w.f64s(self.head.scale.iter())?;
        w.f64s(self.head.shift.iter())?;
        w.finish()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input, "packed model");
        if &r.bytes::<8>()? != PACKED_MAGIC {
            return Err(r.fail("bad magic; not a packed model"));
        }
        let version = r.u32()?;
        if version != PACKED_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let mode = match r.u8()? {
            0 => Mode::Binary,
            1 => Mode::Multiclass,
            other => return Err(r.fail(format!("unknown mode {other}"))),
        };
        let input_width = r.dim(MAX_DIM)?;
        let featurizer_hash = r.bytes::<32>()?;
        let n_layers = r.dim(64)?;
        let mut layers = Vec::with_capacity(n_layers);
        let mut expected_in = input_width;
        for l in 0..n_layers {
            let n_in = r.dim(MAX_DIM)?;
            let n_out = r.dim(MAX_DIM)?;
            if n_in != expected_in {
                return Err(r.fail(format!("layer {l} takes {n_in} inputs, previous layer gives {expected_in}")));
            }
            let weights = (0..n_out * words_for(n_in)).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
            let thresholds = (0..n_out).map(|_| r.i32()).collect::<Result<Vec<_>>>()?;
            let orientations = (0..n_out).map(|_| r.u8().map(|b| b as i8)).collect::<Result<Vec<_>>>()?;
            if orientations.iter().any(|&o| o != 1 && o != -1) {
                return Err(r.fail(format!("layer {l} has an orientation other than ±1")));
            }
            check_padding(&weights, n_in).map_err(|e| r.fail(format!("layer {l}: {e}")))?;
            layers.push(PackedLayer {
                n_in,
                n_out,
                weights,
                thresholds: thresholds
                    .into_iter()
                    .zip(orientations)
                    .map(|(threshold, orientation)| Threshold { threshold, orientation })
                    .collect(),
            });
            expected_in = n_out;
        }
        let n_in = r.dim(MAX_DIM)?;
        let n_out = r.dim(MAX_DIM)?;
        if n_in != expected_in {
            return Err(r.fail(format!("head takes {n_in} inputs, last layer gives {expected_in}")));
        }
        let weights = (0..n_out * words_for(n_in)).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        check_padding(&weights, n_in).map_err(|e| r.fail(format!("head: {e}")))?;
        let scale = r.f64s(n_out)?;
        let shift = r.f64s(n_out)?;
        r.expect_end()?;
        if (mode == Mode::Binary) != (n_out == 1) {
            return Err(r.fail(format!("{n_out} outputs is inconsistent with the stored mode")));
        }
        Ok(PackedModel {
            mode,
            input_width,
            featurizer_hash,
            layers,
            head: PackedHead {
                n_in,
                n_out,
                weights,
                scale,
                shift,
            },
        })
    }
}

fn check_padding(words: &[u64], n_in: usize) -> std::result::Result<(), String> {
    let wpr = words_for(n_in);
    let last = wpr - 1;
    let mask = word_mask(n_in, last);
    for (j, row) in words.chunks(wpr).enumerate() {
        if row[last] & !mask != 0 {
            return Err(format!("row {j} has non-zero padding bits"));
        }
    }
    Ok(())
}

/// Inference context with preallocated scratch. Calls to [`Evaluator::infer`]
/// do not allocate. One evaluator per thread.
#[derive(Debug, Clone)]
pub struct Evaluator<'m> {
    model: &'m PackedModel,
    activations: Vec<Vec<u64>>,
    logits: Vec<f64>,
    probs: Vec<f64>,
    #[cfg(target_arch = "x86_64")]
    popcnt: bool,
}

impl<'m> Evaluator<'m> {
    pub fn new(model: &'m PackedModel) -> Self {
        Evaluator {
            model,
            activations: model.layers.iter().map(|l| vec![0u64; words_for(l.n_out)]).collect(),
            logits: vec![0.0; model.head.n_out],
            probs: vec![0.0; model.head.n_out],
            #[cfg(target_arch = "x86_64")]
            popcnt: std::arch::is_x86_feature_detected!("popcnt"),
        }
    }

    /// Runs packed input words through the network. `words` must hold at
    /// least `ceil(input_width / 64)` words; bits past the width are ignored.
    pub fn infer_words(&mut self, words: &[u64]) -> Result<&[f64]> {
        let model = self.model;
        if words.len() < words_for(model.input_width) {
            return Err(Error::Shape(format!(
                "{} input words, model needs {}",
                words.len(),
                words_for(model.input_width)
            )));
        }
        #[cfg(target_arch = "x86_64")]
        if self.popcnt {
            // SAFETY: the CPU was checked for POPCNT when the evaluator was built.
            unsafe { forward_popcnt(model, &mut self.activations, &mut self.logits, words) };
        } else {
            forward(model, &mut self.activations, &mut self.logits, words);
        }
        #[cfg(not(target_arch = "x86_64"))]
        forward(model, &mut self.activations, &mut self.logits, words);
        probabilities_into(model.mode, &self.logits, &mut self.probs);
        Ok(&self.probs)
    }

    pub fn infer(&mut self, x: &FeatureVector) -> Result<&[f64]> {
        if x.len() != self.model.input_width {
            return Err(Error::Shape(format!(
                "input has {} bits, model expects {}",
                x.len(),
                self.model.input_width
            )));
        }
        self.infer_words(x.words())
    }

    /// Packed outputs of hidden layer `l` from the last call.
    pub fn activations(&self, l: usize) -> &[u64] {
        &self.activations[l]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

#[inline(always)]
fn forward(model: &PackedModel, activations: &mut [Vec<u64>], logits: &mut [f64], words: &[u64]) {
    for (l, layer) in model.layers.iter().enumerate() {
        let (before, after) = activations.split_at_mut(l);
        let src: &[u64] = if l == 0 { words } else { &before[l - 1] };
        let dst = &mut after[0];
        dst.fill(0);
        for j in 0..layer.n_out {
            let acc = xnor_dot(layer.row(j), src, layer.n_in);
            if layer.thresholds[j].fires(acc) {
                dst[j / 64] |= 1 << (j % 64);
            }
        }
    }
    let head = &model.head;
    let last = activations.last().expect("at least one hidden layer");
    for k in 0..head.n_out {
        let acc = xnor_dot(head.row(k), last, head.n_in);
        logits[k] = acc as f64 * head.scale[k] + head.shift[k];
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "popcnt")]
unsafe fn forward_popcnt(model: &PackedModel, activations: &mut [Vec<u64>], logits: &mut [f64], words: &[u64]) {
    forward(model, activations, logits, words)
}
