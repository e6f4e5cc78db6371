//! Binary encoding of CAN frames.
//!
//! Every frame becomes `bit_width + 3 + 64` bits laid out as
//! `[ID code | interval bucket | payload]`, most significant bit first
//! within each field:
//!
//! - the raw CAN ID is mapped to an ordinal code through an [`IdDictionary`]
//!   built from benign traffic; IDs never seen during fitting take the
//!   reserved all-ones code,
//! - the time since the previous frame with the same ID falls into one of
//!   three buckets split by two thresholds (`000`, `001`, `010`),
//! - each payload byte contributes its 8 bits; short frames are padded with
//!   zero bits on the right.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::frame::{CanFrame, ClassLabel};

pub const INTERVAL_BITS: usize = 3;
pub const PAYLOAD_BITS: usize = 64;
pub const DEFAULT_BIT_WIDTH: u8 = 6;
pub const DEFAULT_Q_LOW: f64 = 0.01;
pub const DEFAULT_Q_HIGH: f64 = 0.99;

/// Width of a feature vector for the given ID code width.
pub fn feature_width(bit_width: u8) -> usize {
    bit_width as usize + INTERVAL_BITS + PAYLOAD_BITS
}

/// Fixed-length bit vector, stored little-endian in 64-bit words: bit `i`
/// lives in `words[i / 64]` at position `i % 64`. Bits past `len` are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureVector {
    words: Vec<u64>,
    len: usize,
    pub label: Option<ClassLabel>,
}

impl FeatureVector {
    pub fn zeros(len: usize) -> Self {
        FeatureVector {
            words: vec![0; len.div_ceil(64)],
            len,
            label: None,
        }
    }

    pub fn from_bits<I: IntoIterator<Item = bool>>(bits: I) -> Self {
        let bits: Vec<bool> = bits.into_iter().collect();
        let mut v = FeatureVector::zeros(bits.len());
        for (i, b) in bits.into_iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    /// Parses a string of `0`/`1` characters; other characters are skipped.
    pub fn from_bit_str(s: &str) -> Self {
        FeatureVector::from_bits(s.chars().filter_map(|c| match c {
            '0' => Some(false),
            '1' => Some(true),
            _ => None,
        }))
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, bit: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let mask = 1u64 << (i % 64);
        if bit {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }

    /// Writes `width` bits of `value` at `offset`, most significant first.
    fn put_msb_first(&mut self, offset: usize, value: u64, width: usize) {
        for j in 0..width {
            self.set(offset + j, value >> (width - 1 - j) & 1 == 1);
        }
    }

    fn read_msb_first(&self, offset: usize, width: usize) -> u64 {
        (0..width).fold(0, |acc, j| acc << 1 | self.get(offset + j) as u64)
    }

    /// Splits a featurized vector back into (ID code, interval code, payload).
    pub fn decompose(&self, bit_width: u8) -> Result<(u8, IntervalCode, u64)> {
        let w = bit_width as usize;
        if self.len != feature_width(bit_width) {
            return Err(Error::Shape(format!(
                "vector has {} bits, layout for bit width {bit_width} needs {}",
                self.len,
                feature_width(bit_width)
            )));
        }
        let id = self.read_msb_first(0, w) as u8;
        let interval = match self.read_msb_first(w, INTERVAL_BITS) {
            0b000 => IntervalCode::Short,
            0b001 => IntervalCode::Medium,
            0b010 => IntervalCode::Long,
            other => return Err(Error::format("interval bits", format!("{other:03b} is not a valid code"))),
        };
        Ok((id, interval, self.read_msb_first(w + INTERVAL_BITS, PAYLOAD_BITS)))
    }
}

impl fmt::Display for FeatureVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.bits() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Ordinal codes for the CAN IDs of a network, assigned by first appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdDictionary {
    bit_width: u8,
    codes: HashMap<u32, u8>,
}

impl IdDictionary {
    pub fn build<'a, I>(frames: I, bit_width: u8) -> Result<Self>
    where
        I: IntoIterator<Item = &'a CanFrame>,
    {
        check_bit_width(bit_width)?;
        let mut codes = HashMap::new();
        let mut order = Vec::new();
        for frame in frames {
            if !codes.contains_key(&frame.can_id) {
                codes.insert(frame.can_id, order.len());
                order.push(frame.can_id);
            }
        }
        let capacity = (1usize << bit_width) - 1;
        if order.len() > capacity {
            let needed = (usize::BITS - order.len().leading_zeros()).max(6);
            return Err(Error::TooManyIds {
                distinct: order.len(),
                bit_width,
                needed,
            });
        }
        Ok(IdDictionary {
            bit_width,
            codes: codes.into_iter().map(|(id, c)| (id, c as u8)).collect(),
        })
    }

    /// Rebuilds a dictionary from explicit `(raw ID, code)` pairs.
    pub fn from_pairs<I: IntoIterator<Item = (u32, u8)>>(bit_width: u8, pairs: I) -> Result<Self> {
        check_bit_width(bit_width)?;
        let unknown = ((1u16 << bit_width) - 1) as u8;
        let mut codes = HashMap::new();
        let mut used = std::collections::HashSet::new();
        for (id, code) in pairs {
            if code >= unknown {
                return Err(Error::Config(format!(
                    "code {code} for ID {id:#x} is outside 0..{unknown} (the unknown code is reserved)"
                )));
            }
            if !used.insert(code) {
                return Err(Error::Config(format!("code {code} assigned twice")));
            }
            if codes.insert(id, code).is_some() {
                return Err(Error::Config(format!("ID {id:#x} listed twice")));
            }
        }
        Ok(IdDictionary { bit_width, codes })
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn unknown_code(&self) -> u8 {
        ((1u16 << self.bit_width) - 1) as u8
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, can_id: u32) -> u8 {
        self.codes.get(&can_id).copied().unwrap_or_else(|| self.unknown_code())
    }

    pub fn contains(&self, can_id: u32) -> bool {
        self.codes.contains_key(&can_id)
    }

    /// `(raw ID, code)` pairs sorted by code.
    pub fn entries(&self) -> Vec<(u32, u8)> {
        let mut e: Vec<(u32, u8)> = self.codes.iter().map(|(&id, &c)| (id, c)).collect();
        e.sort_by_key(|&(_, c)| c);
        e
    }
}

fn check_bit_width(bit_width: u8) -> Result<()> {
    if (6..=8).contains(&bit_width) {
        Ok(())
    } else {
        Err(Error::Config(format!("bit width {bit_width} outside 6..=8")))
    }
}

/// Big-endian binary expansion of the ID's code.
pub fn encode_id(dict: &IdDictionary, can_id: u32) -> Vec<bool> {
    let code = dict.code(can_id);
    let w = dict.bit_width as usize;
    (0..w).map(|j| code >> (w - 1 - j) & 1 == 1).collect()
}

/// Inter-arrival bucket of a frame relative to the previous frame with the
/// same ID.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntervalCode {
    /// `Δt < thres_1`
    Short,
    /// `thres_1 <= Δt < thres_2`
    Medium,
    /// `Δt >= thres_2`, or the first frame of an ID.
    Long,
}

impl IntervalCode {
    pub fn bits(self) -> [bool; 3] {
        match self {
            IntervalCode::Short => [false, false, false],
            IntervalCode::Medium => [false, false, true],
            IntervalCode::Long => [false, true, false],
        }
    }

    fn value(self) -> u64 {
        match self {
            IntervalCode::Short => 0b000,
            IntervalCode::Medium => 0b001,
            IntervalCode::Long => 0b010,
        }
    }
}

/// Per-ID inter-arrival state. One encoder per stream.
#[derive(Debug, Clone)]
pub struct IntervalEncoder {
    thres_1: f64,
    thres_2: f64,
    last_seen: HashMap<u32, f64>,
}

impl IntervalEncoder {
    pub fn new(thres_1: f64, thres_2: f64) -> Result<Self> {
        check_thresholds(thres_1, thres_2)?;
        Ok(IntervalEncoder {
            thres_1,
            thres_2,
            last_seen: HashMap::new(),
        })
    }

    pub fn thresholds(&self) -> (f64, f64) {
        (self.thres_1, self.thres_2)
    }

    pub fn bucket(&self, delta: f64) -> IntervalCode {
        if delta < self.thres_1 {
            IntervalCode::Short
        } else if delta < self.thres_2 {
            IntervalCode::Medium
        } else {
            IntervalCode::Long
        }
    }

    pub fn last_seen(&self, can_id: u32) -> Option<f64> {
        self.last_seen.get(&can_id).copied()
    }

    /// Buckets the frame's interval and records its timestamp.
    pub fn encode(&mut self, frame: &CanFrame) -> Result<IntervalCode> {
        let code = match self.last_seen.get(&frame.can_id) {
            None => IntervalCode::Long,
            Some(&prev) => {
                let delta = frame.timestamp - prev;
                if delta < 0.0 {
                    return Err(Error::NegativeInterval {
                        can_id: frame.can_id,
                        delta,
                    });
                }
                self.bucket(delta)
            }
        };
        self.last_seen.insert(frame.can_id, frame.timestamp);
        Ok(code)
    }

    pub fn reset(&mut self) {
        self.last_seen.clear();
    }
}

fn check_thresholds(thres_1: f64, thres_2: f64) -> Result<()> {
    if thres_1.is_finite() && thres_2.is_finite() && 0.0 < thres_1 && thres_1 < thres_2 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "interval thresholds must satisfy 0 < thres_1 < thres_2, got {thres_1} and {thres_2}"
        )))
    }
}

/// Payload as a 64-bit word read most significant bit first; short payloads
/// are zero-padded on the right.
pub fn payload_word(payload: &[u8]) -> u64 {
    let mut bytes = [0u8; 8];
    let n = payload.len().min(8);
    bytes[..n].copy_from_slice(&payload[..n]);
    u64::from_be_bytes(bytes)
}

pub fn encode_payload(payload: &[u8]) -> [bool; 64] {
    let word = payload_word(payload);
    std::array::from_fn(|j| word >> (63 - j) & 1 == 1)
}

/// Interval thresholds plus ID dictionary: everything needed to reproduce
/// the training-time encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturizerConfig {
    pub dictionary: IdDictionary,
    pub thres_1: f64,
    pub thres_2: f64,
}

#[derive(Serialize, Deserialize)]
struct ConfigFile {
    bit_width: u8,
    thres_1: f64,
    thres_2: f64,
    /// Hexadecimal CAN ID → code.
    ids: BTreeMap<String, u8>,
}

impl FeaturizerConfig {
    pub fn new(dictionary: IdDictionary, thres_1: f64, thres_2: f64) -> Result<Self> {
        check_thresholds(thres_1, thres_2)?;
        Ok(FeaturizerConfig {
            dictionary,
            thres_1,
            thres_2,
        })
    }

    pub fn input_width(&self) -> usize {
        feature_width(self.dictionary.bit_width)
    }

    pub fn to_toml(&self) -> String {
        let file = ConfigFile {
            bit_width: self.dictionary.bit_width,
            thres_1: self.thres_1,
            thres_2: self.thres_2,
            ids: self
                .dictionary
                .codes
                .iter()
                .map(|(id, code)| (format!("{id:X}"), *code))
                .collect(),
        };
        toml::to_string(&file).expect("featurizer config is always serializable")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ConfigFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("featurizer config: {e}")))?;
        let pairs = file
            .ids
            .iter()
            .map(|(hex, code)| {
                u32::from_str_radix(hex, 16)
                    .map(|id| (id, *code))
                    .map_err(|_| Error::Config(format!("featurizer config: `{hex}` is not a hex CAN ID")))
            })
            .collect::<Result<Vec<_>>>()?;
        let dictionary = IdDictionary::from_pairs(file.bit_width, pairs)?;
        FeaturizerConfig::new(dictionary, file.thres_1, file.thres_2)
    }

    /// SHA-256 of the canonical TOML form; formatting of the file on disk
    /// does not affect it.
    pub fn hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    pub fn hash_hex(&self) -> String {
        hex_string(&self.hash())
    }
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Stateful per-stream encoder.
#[derive(Debug, Clone)]
pub struct Featurizer {
    dictionary: IdDictionary,
    intervals: IntervalEncoder,
}

impl Featurizer {
    pub fn new(config: &FeaturizerConfig) -> Result<Self> {
        Ok(Featurizer {
            dictionary: config.dictionary.clone(),
            intervals: IntervalEncoder::new(config.thres_1, config.thres_2)?,
        })
    }

    pub fn from_parts(dictionary: IdDictionary, intervals: IntervalEncoder) -> Self {
        Featurizer { dictionary, intervals }
    }

    pub fn width(&self) -> usize {
        feature_width(self.dictionary.bit_width)
    }

    pub fn featurize(&mut self, frame: &CanFrame) -> Result<FeatureVector> {
        let mut out = FeatureVector::zeros(self.width());
        self.featurize_into(frame, &mut out)?;
        Ok(out)
    }

    /// Overwrites `out`, which must already have the featurizer's width.
    pub fn featurize_into(&mut self, frame: &CanFrame, out: &mut FeatureVector) -> Result<()> {
        if out.len() != self.width() {
            return Err(Error::Shape(format!("output vector has {} bits, need {}", out.len(), self.width())));
        }
        let w = self.dictionary.bit_width as usize;
        let interval = self.intervals.encode(frame)?;
        out.put_msb_first(0, self.dictionary.code(frame.can_id) as u64, w);
        out.put_msb_first(w, interval.value(), INTERVAL_BITS);
        out.put_msb_first(w + INTERVAL_BITS, payload_word(frame.payload()), PAYLOAD_BITS);
        out.label = frame.label;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.intervals.reset();
    }
}

/// Encodes a whole stream in order, carrying labels through.
pub fn featurize_stream(
    frames: &[CanFrame],
    dictionary: &IdDictionary,
    intervals: &mut IntervalEncoder,
) -> Result<Vec<FeatureVector>> {
    let mut featurizer = Featurizer::from_parts(dictionary.clone(), intervals.clone());
    let out = frames.iter().map(|f| featurizer.featurize(f)).collect::<Result<Vec<_>>>()?;
    *intervals = featurizer.intervals;
    Ok(out)
}

/// Per-ID inter-arrival times of a stream, in stream order.
pub fn interval_samples(frames: &[CanFrame]) -> Result<Vec<f64>> {
    let mut last: HashMap<u32, f64> = HashMap::new();
    let mut out = Vec::new();
    for f in frames {
        if let Some(prev) = last.insert(f.can_id, f.timestamp) {
            let delta = f.timestamp - prev;
            if delta < 0.0 {
                return Err(Error::NegativeInterval { can_id: f.can_id, delta });
            }
            out.push(delta);
        }
    }
    Ok(out)
}

/// Nearest-rank quantile of sorted data: the value at rank `ceil(q·n)`.
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    // Guard against 0.01 * 100 landing a hair above an integer.
    let rank = ((q * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Thresholds from pooled interval samples (possibly from several streams).
pub fn thresholds_from_intervals(mut samples: Vec<f64>, q_low: f64, q_high: f64) -> Result<(f64, f64)> {
    if !(0.0 < q_low && q_low < q_high && q_high < 1.0) {
        return Err(Error::Config(format!("quantiles must satisfy 0 < q_low < q_high < 1, got {q_low}, {q_high}")));
    }
    if samples.is_empty() {
        return Err(Error::NoIntervals);
    }
    samples.sort_by(f64::total_cmp);
    let t1 = nearest_rank(&samples, q_low);
    let t2 = nearest_rank(&samples, q_high);
    check_thresholds(t1, t2).map_err(|_| {
        Error::Config(format!(
            "fitted thresholds {t1} and {t2} are degenerate; pass explicit thresholds instead"
        ))
    })?;
    Ok((t1, t2))
}

/// Fits `(thres_1, thres_2)` as the `q_low`/`q_high` nearest-rank quantiles
/// of the per-ID inter-arrival times of benign traffic.
pub fn fit_thresholds(frames: &[CanFrame], q_low: f64, q_high: f64) -> Result<(f64, f64)> {
    thresholds_from_intervals(interval_samples(frames)?, q_low, q_high)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(ts: f64, id: u32) -> CanFrame {
        CanFrame::new(ts, id, &[0; 8]).unwrap()
    }

    fn bit_string(bits: &[bool]) -> String {
        bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    fn dict_with_code(target: u32, code: u8) -> IdDictionary {
        // Fill codes 0..code with filler IDs so `target` lands on `code`.
        let mut pairs: Vec<(u32, u8)> = (0..code).map(|c| (0x700 + c as u32, c)).collect();
        pairs.push((target, code));
        IdDictionary::from_pairs(6, pairs).unwrap()
    }

    #[test]
    fn dictionary_first_appearance_order() {
        let frames: Vec<_> = [0x316, 0x18F, 0x316, 0x260, 0x18F].iter().map(|&id| frame(0.0, id)).collect();
        let d = IdDictionary::build(&frames, 6).unwrap();
        assert_eq!(d.entries(), vec![(0x316, 0), (0x18F, 1), (0x260, 2)]);
        assert_eq!(d.unknown_code(), 63);
    }

    #[test]
    fn dictionary_capacity() {
        let frames: Vec<_> = (0..64).map(|id| frame(0.0, id)).collect();
        match IdDictionary::build(&frames, 6).unwrap_err() {
            Error::TooManyIds { distinct, needed, .. } => {
                assert_eq!(distinct, 64);
                assert_eq!(needed, 7);
            }
            e => panic!("unexpected {e:?}"),
        }
        assert!(IdDictionary::build(&frames[..63], 6).is_ok());
        let frames: Vec<_> = (0..70).map(|id| frame(0.0, id)).collect();
        let d = IdDictionary::build(&frames, 7).unwrap();
        assert_eq!(d.unknown_code(), 127);
        assert!(IdDictionary::build(&frames, 5).is_err());
        assert!(IdDictionary::build(&frames, 9).is_err());
    }

    #[test]
    fn id_encoding() {
        assert_eq!(bit_string(&encode_id(&dict_with_code(0x316, 25), 0x316)), "011001");
        assert_eq!(bit_string(&encode_id(&dict_with_code(0x316, 0), 0x316)), "000000");
        assert_eq!(bit_string(&encode_id(&dict_with_code(0x316, 0), 0x123)), "111111");
    }

    #[test]
    fn from_pairs_rejects_reserved_and_duplicate_codes() {
        assert!(IdDictionary::from_pairs(6, [(1, 63)]).is_err());
        assert!(IdDictionary::from_pairs(6, [(1, 3), (2, 3)]).is_err());
        assert!(IdDictionary::from_pairs(6, [(1, 3), (1, 4)]).is_err());
    }

    #[test]
    fn interval_buckets_and_state() {
        let mut enc = IntervalEncoder::new(0.0001, 0.05).unwrap();
        assert_eq!(enc.encode(&frame(1.0, 7)).unwrap(), IntervalCode::Long);
        assert_eq!(enc.encode(&frame(1.00001, 7)).unwrap(), IntervalCode::Short);
        assert_eq!(enc.last_seen(7), Some(1.00001));
        assert_eq!(enc.bucket(0.0001), IntervalCode::Medium);
        assert_eq!(enc.bucket(0.05), IntervalCode::Long);
        assert_eq!(enc.bucket(0.0), IntervalCode::Short);
        assert!(matches!(enc.encode(&frame(0.5, 7)), Err(Error::NegativeInterval { can_id: 7, .. })));
        assert!(IntervalEncoder::new(0.0, 1.0).is_err());
        assert!(IntervalEncoder::new(0.2, 0.1).is_err());
    }

    #[test]
    fn payload_worked_example() {
        let bits = encode_payload(&[0x05, 0x28, 0x84, 0x66, 0x6d, 0x00, 0x00, 0xa2]);
        assert_eq!(
            bit_string(&bits),
            "0000010100101000100001000110011001101101000000000000000010100010"
        );
        assert!(encode_payload(&[]).iter().all(|b| !b));
        let one = encode_payload(&[0xff]);
        assert!(one[..8].iter().all(|&b| b) && one[8..].iter().all(|&b| !b));
    }

    #[test]
    fn composed_vector() {
        let dict = dict_with_code(0x316, 25);
        let config = FeaturizerConfig::new(dict, 0.001, 0.05).unwrap();
        let mut fz = Featurizer::new(&config).unwrap();
        let payload = [0x05, 0x28, 0x84, 0x66, 0x6d, 0x00, 0x00, 0xa2];
        fz.featurize(&CanFrame::new(1.000, 0x316, &payload).unwrap()).unwrap();
        let v = fz.featurize(&CanFrame::new(1.010, 0x316, &payload).unwrap()).unwrap();
        assert_eq!(v.len(), 73);
        assert_eq!(
            v.to_string(),
            "011001001\
             0000010100101000100001000110011001101101000000000000000010100010"
        );
        assert_eq!(v.decompose(6).unwrap(), (25, IntervalCode::Medium, payload_word(&payload)));
    }

    #[test]
    fn consecutive_frames_same_id() {
        let frames = vec![frame(1.000, 0x10), frame(1.001, 0x10)];
        let dict = IdDictionary::build(&frames, 6).unwrap();
        let mut enc = IntervalEncoder::new(0.01, 0.1).unwrap();
        let v = featurize_stream(&frames, &dict, &mut enc).unwrap();
        assert_eq!(v[0].decompose(6).unwrap().1, IntervalCode::Long);
        assert_eq!(v[1].decompose(6).unwrap().1, IntervalCode::Short);
        assert_eq!(enc.last_seen(0x10), Some(1.001));
    }

    #[test]
    fn nearest_rank_on_one_to_hundred_ms() {
        // Sort-based oracle: rank ceil(q·n) on 1..=100 ms.
        let frames: Vec<_> = {
            let mut t = 0.0;
            let mut v = vec![frame(0.0, 1)];
            for ms in 1..=100 {
                t += ms as f64 / 1000.0;
                v.push(frame(t, 1));
            }
            v
        };
        let (t1, t2) = fit_thresholds(&frames, 0.01, 0.99).unwrap();
        assert!((t1 - 0.001).abs() < 1e-12, "{t1}");
        assert!((t2 - 0.099).abs() < 1e-12, "{t2}");
    }

    #[test]
    fn near_constant_intervals_straddle_period() {
        // 10 ms period with a deterministic ±0.5% wobble.
        let mut t = 0.0;
        let frames: Vec<_> = (0..1000)
            .map(|i| {
                let f = frame(t, 0x200);
                t += 0.010 * (1.0 + 0.005 * ((i as f64) * 0.7).sin());
                f
            })
            .collect();
        let mut oracle = interval_samples(&frames).unwrap();
        oracle.sort_by(f64::total_cmp);
        let (t1, t2) = fit_thresholds(&frames, DEFAULT_Q_LOW, DEFAULT_Q_HIGH).unwrap();
        assert_eq!(t1, oracle[(0.01f64 * oracle.len() as f64).ceil() as usize - 1]);
        assert_eq!(t2, oracle[(0.99f64 * oracle.len() as f64).ceil() as usize - 1]);
        assert!(t1 < 0.010 && 0.010 < t2);
        assert!(t1 > 0.0099 && t2 < 0.0101);
    }

    #[test]
    fn fit_thresholds_errors() {
        assert!(matches!(fit_thresholds(&[frame(0.0, 1)], 0.01, 0.99), Err(Error::NoIntervals)));
        let frames = vec![frame(0.0, 1), frame(0.1, 1), frame(0.2, 1)];
        assert!(fit_thresholds(&frames, 0.5, 0.4).is_err());
        assert!(fit_thresholds(&frames, 0.0, 0.4).is_err());
    }

    #[test]
    fn config_toml_round_trip_and_hash() {
        let frames: Vec<_> = [0x316, 0x18F, 0x1ABCDEF].iter().map(|&id| frame(0.0, id)).collect();
        let dict = IdDictionary::build(&frames, 7).unwrap();
        let config = FeaturizerConfig::new(dict, 0.0095123456789, 0.1049876).unwrap();
        let text = config.to_toml();
        let back = FeaturizerConfig::from_toml(&text).unwrap();
        assert_eq!(back, config);
        assert_eq!(back.hash(), config.hash());
        let other = FeaturizerConfig::new(config.dictionary.clone(), 0.0095, 0.1049876).unwrap();
        assert_ne!(other.hash(), config.hash());
        assert_eq!(config.input_width(), 74);
    }
}
