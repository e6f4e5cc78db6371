//! Training checkpoint container. Layout, all integers little-endian and
//! every real stored as its IEEE-754 bit pattern:
//!
//! ```text
//! magic "CANBNNCK" | version u32 | mode u8 (0 binary, 1 multiclass)
//! seed u64 | featurizer hash [32] | dropout f64
//! input width u32 | hidden layer count u32 | hidden widths u32... | output width u32
//! per hidden layer: weights f64[out*in] (row-major), bias, gamma, beta,
//!                   running mean, running var: f64[out] each
//! head: weights f64[out*in], scale f64[out], shift f64[out]
//! ```

use std::io::{Read, Write};

use ndarray::{Array1, Array2};

use super::{BnnModel, HiddenLayer, Mode, OutputLayer};
use crate::error::Result;
use crate::wire::{LeReader, LeWriter};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CANBNNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
const MAX_DIM: u32 = 1 << 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: BnnModel,
    /// Hash of the featurizer config the model was trained with.
    pub featurizer_hash: [u8; 32],
    pub seed: u64,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, out: W) -> Result<()> {
        let m = &self.model;
        let mut w = LeWriter::new(out);
        w.bytes(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.u8(match m.mode {
            Mode::Binary => 0,
            Mode::Multiclass => 1,
        })?;
        w.u64(self.seed)?;
        w.bytes(&self.featurizer_hash)?;
        w.f64(m.dropout_rate)?;
        w.u32(m.input_width() as u32)?;
        w.u32(m.hidden.len() as u32)?;
        for layer in &m.hidden {
            w.u32(layer.n_out() as u32)?;
        }
        w.u32(m.output_width() as u32)?;
        for layer in &m.hidden {
            w.f64s(layer.weights.iter())?;
            for v in [&layer.bias, &layer.gamma, &layer.beta, &layer.running_mean, &layer.running_var] {
                w.f64s(v.iter())?;
            }
        }
        w.f64s(m.head.weights.iter())?;
        w.f64s(m.head.scale.iter())?;
        w.f64s(m.head.shift.iter())?;
        w.finish()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from<R: Read>(input: R) -> Result<Self> {
        let mut r = LeReader::new(input, "checkpoint");
        if &r.bytes::<8>()? != CHECKPOINT_MAGIC {
            return Err(r.fail("bad magic; not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported version {version}")));
        }
        let mode = match r.u8()? {
            0 => Mode::Binary,
            1 => Mode::Multiclass,
            other => return Err(r.fail(format!("unknown mode {other}"))),
        };
        let seed = r.u64()?;
        let featurizer_hash = r.bytes::<32>()?;
        let dropout_rate = r.f64()?;
        let input_width = r.dim(MAX_DIM)?;
        let n_hidden = r.dim(64)?;
        let widths = (0..n_hidden).map(|_| r.dim(MAX_DIM)).collect::<Result<Vec<_>>>()?;
        let output_width = r.dim(MAX_DIM)?;

        let mut hidden = Vec::with_capacity(n_hidden);
        let mut n_in = input_width;
        for &n_out in &widths {
            let weights = Array2::from_shape_vec((n_out, n_in), r.f64s(n_out * n_in)?).expect("sized");
            let mut vecs = (0..5).map(|_| r.f64s(n_out).map(Array1::from)).collect::<Result<Vec<_>>>()?;
            let running_var = vecs.pop().expect("five vectors");
            let running_mean = vecs.pop().expect("five vectors");
            let beta = vecs.pop().expect("five vectors");
            let gamma = vecs.pop().expect("five vectors");
            let bias = vecs.pop().expect("five vectors");
            hidden.push(HiddenLayer {
                weights,
                bias,
                gamma,
                beta,
                running_mean,
                running_var,
            });
            n_in = n_out;
        }
        let head = OutputLayer {
            weights: Array2::from_shape_vec((output_width, n_in), r.f64s(output_width * n_in)?).expect("sized"),
            scale: Array1::from(r.f64s(output_width)?),
            shift: Array1::from(r.f64s(output_width)?),
        };
        r.expect_end()?;
        Ok(Checkpoint {
            model: BnnModel::from_parts(mode, hidden, head, dropout_rate)?,
            featurizer_hash,
            seed,
        })
    }
}
