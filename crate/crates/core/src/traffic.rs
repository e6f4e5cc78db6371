//! Synthetic labeled CAN traffic.
//!
//! A scenario is a set of periodic benign sources plus zero or more attack
//! processes, each active over its own time window. Scenarios are TOML:
//!
//! ```toml
//! duration = 60.0
//! seed = 7
//!
//! [[benign]]
//! id = 0x316
//! period = 0.01
//! payload = [
//!     { kind = "const", value = 5 },
//!     { kind = "counter", step = 1, every = 1 },
//!     { kind = "walk", start = 64, min = 32, max = 128, max_step = 2 },
//!     { kind = "random" },
//! ]
//!
//! [[attack]]
//! kind = "spoofing"
//! target = 0x316
//! rate = 250.0
//! window = [20.0, 40.0]
//! mutation = { rule = "forge", payload = [255, 0, 255, 0] }
//! ```
//!
//! Time is kept in integer microseconds, so streams are exactly
//! reproducible. Each source draws from its own ChaCha8 stream derived
//! from the scenario seed.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{CanFrame, ClassLabel, MAX_EXTENDED_ID, MAX_STANDARD_ID};

pub use crate::parser::write_canonical;

pub const FLOODING: ClassLabel = ClassLabel(1);
pub const FUZZING: ClassLabel = ClassLabel(2);
pub const SPOOFING: ClassLabel = ClassLabel(3);
/// Names indexed by class code.
pub const CLASS_NAMES: [&str; 4] = ["benign", "flooding", "fuzzing", "spoofing"];

/// Relative standard deviation of benign inter-arrival jitter.
pub const JITTER_SIGMA: f64 = 0.02;
/// Benign jitter is truncated (by resampling) to this relative bound.
pub const JITTER_BOUND: f64 = 0.1;
const MAX_RATE: f64 = 1e6;
const MIN_PERIOD: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ByteGen {
    Const { value: u8 },
    /// Adds `step` (wrapping) every `every` frames.
    Counter {
        #[serde(default = "one_u8")]
        step: u8,
        #[serde(default = "one_u32")]
        every: u32,
    },
    /// Bounded random walk: each frame moves by a uniform step in
    /// `[-max_step, max_step]`, clamped to `[min, max]`.
    Walk { start: u8, min: u8, max: u8, max_step: u8 },
    Random,
}

fn one_u8() -> u8 {
    1
}

fn one_u32() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenignSource {
    pub id: u32,
    /// Nominal period in seconds.
    pub period: f64,
    /// One generator per payload byte; the length is the DLC.
    pub payload: Vec<ByteGen>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpoofMutation {
    /// Fixed forged payload, same length as the target's.
    Forge { payload: Vec<u8> },
    /// Target's current benign payload with one byte replaced by a
    /// different random value.
    RandomizeByte { index: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Attack {
    /// One ID injected at a fixed high rate.
    Flooding {
        id: u32,
        rate: f64,
        window: [f64; 2],
        #[serde(default = "zero_payload")]
        payload: Vec<u8>,
    },
    /// Uniform random standard IDs outside the benign set with uniform
    /// random 8-byte payloads.
    Fuzzing { rate: f64, window: [f64; 2] },
    /// A benign ID replayed with mutated payloads.
    Spoofing {
        target: u32,
        rate: f64,
        window: [f64; 2],
        mutation: SpoofMutation,
    },
}

fn zero_payload() -> Vec<u8> {
    vec![0; 8]
}

impl Attack {
    pub fn label(&self) -> ClassLabel {
        match self {
            Attack::Flooding { .. } => FLOODING,
            Attack::Fuzzing { .. } => FUZZING,
            Attack::Spoofing { .. } => SPOOFING,
        }
    }

    pub fn window(&self) -> [f64; 2] {
        match self {
            Attack::Flooding { window, .. } | Attack::Fuzzing { window, .. } | Attack::Spoofing { window, .. } => {
                *window
            }
        }
    }

    pub fn rate(&self) -> f64 {
        match self {
            Attack::Flooding { rate, .. } | Attack::Fuzzing { rate, .. } | Attack::Spoofing { rate, .. } => *rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Seconds.
    pub duration: f64,
    pub seed: u64,
    pub benign: Vec<BenignSource>,
    #[serde(default, rename = "attack", skip_serializing_if = "Vec::is_empty")]
    pub attacks: Vec<Attack>,
}

fn to_us(seconds: f64) -> u64 {
    (seconds * 1e6).round() as u64
}

fn check_id(id: u32, what: &str) -> Result<()> {
    if id > MAX_EXTENDED_ID {
        return Err(Error::Config(format!("{what} ID {id:#x} exceeds the 29-bit range")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("duration {} must be > 0", self.duration)));
        }
        if self.benign.is_empty() {
            return Err(Error::Config("scenario needs at least one benign source".into()));
        }
        let mut seen = HashSet::new();
        for src in &self.benign {
            check_id(src.id, "benign")?;
            if !seen.insert(src.id) {
                return Err(Error::Config(format!("benign ID {:#x} listed twice", src.id)));
            }
            if !(src.period.is_finite() && src.period >= MIN_PERIOD) {
                return Err(Error::Config(format!(
                    "period {} of ID {:#x} must be at least {MIN_PERIOD} s",
                    src.period, src.id
                )));
            }
            if src.payload.len() > 8 {
                return Err(Error::Config(format!("ID {:#x} has more than 8 payload bytes", src.id)));
            }
            for gen in &src.payload {
                match *gen {
                    ByteGen::Counter { every: 0, .. } => {
                        return Err(Error::Config(format!("counter of ID {:#x} has every = 0", src.id)))
                    }
                    ByteGen::Walk { start, min, max, .. } if !(min <= start && start <= max) => {
                        return Err(Error::Config(format!(
                            "walk of ID {:#x} needs min <= start <= max",
                            src.id
                        )))
                    }
                    _ => {}
                }
            }
        }
        for attack in &self.attacks {
            let [start, end] = attack.window();
            if !(start.is_finite() && end.is_finite() && 0.0 <= start && start < end && end <= self.duration) {
                return Err(Error::Config(format!(
                    "attack window [{start}, {end}] must satisfy 0 <= start < end <= duration"
                )));
            }
            let rate = attack.rate();
            if !(rate.is_finite() && rate > 0.0 && rate <= MAX_RATE) {
                return Err(Error::Config(format!("attack rate {rate} must be in (0, {MAX_RATE}]")));
            }
            match attack {
                Attack::Flooding { id, payload, .. } => {
                    check_id(*id, "flood")?;
                    if payload.len() > 8 {
                        return Err(Error::Config("flood payload exceeds 8 bytes".into()));
                    }
                }
                Attack::Fuzzing { .. } => {
                    let standard = self.benign.iter().filter(|s| s.id <= MAX_STANDARD_ID).count();
                    if standard as u32 > MAX_STANDARD_ID {
                        return Err(Error::Config("benign IDs leave no standard ID to fuzz".into()));
                    }
                }
                Attack::Spoofing { target, mutation, .. } => {
                    let Some(src) = self.benign.iter().find(|s| s.id == *target) else {
                        return Err(Error::Config(format!("spoof target {target:#x} is not a benign ID")));
                    };
                    let dlc = src.payload.len();
                    match mutation {
                        SpoofMutation::Forge { payload } if payload.len() != dlc || dlc == 0 => {
                            return Err(Error::Config(format!(
                                "forged payload has {} bytes, target {target:#x} sends {dlc} (must match and be > 0)",
                                payload.len()
                            )))
                        }
                        SpoofMutation::RandomizeByte { index } if *index >= dlc => {
                            return Err(Error::Config(format!(
                                "byte index {index} is outside the {dlc}-byte payload of {target:#x}"
                            )))
                        }
                        _ => {}
                    }
                }
            }
        }
        Ok(())
    }

    /// Named built-in scenario; see [`PRESETS`].
    pub fn preset(name: &str, seed: u64) -> Result<Self> {
        let (start, end) = (20.0, 30.0);
        let attacks = match name {
            "benign" => vec![],
            "flooding" => vec![flooding([start, end])],
            "fuzzing" => vec![fuzzing([start, end])],
            "spoofing" => vec![spoofing([20.0, 40.0])],
            "mixed" => vec![flooding([10.0, 20.0]), fuzzing([25.0, 35.0]), spoofing([40.0, 50.0])],
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?}; expected one of {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(ScenarioConfig {
            duration: 60.0,
            seed,
            benign: preset_benign(),
            attacks,
        })
    }
}

pub const PRESETS: [&str; 5] = ["benign", "flooding", "fuzzing", "spoofing", "mixed"];

const PRESET_IDS: [u32; 16] = [
    0x18F, 0x260, 0x2A0, 0x316, 0x329, 0x545, 0x153, 0x2C0, 0x130, 0x131, 0x140, 0x350, 0x43F, 0x370, 0x440, 0x4F0,
];
const SPOOF_TARGET: u32 = 0x316;
const FORGED: [u8; 8] = [0x05, 0x20, 0xEA, 0x0A, 0x20, 0x1A, 0x00, 0x7F];

fn preset_benign() -> Vec<BenignSource> {
    PRESET_IDS
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let period = match i {
                0..=5 => 0.010,
                6..=9 => 0.020,
                10..=12 => 0.050,
                _ => 0.100,
            };
            let k = i as u8;
            let payload = vec![
                ByteGen::Const {
                    value: k.wrapping_mul(37).wrapping_add(11),
                },
                ByteGen::Counter {
                    step: 1,
                    every: 1 + i as u32 % 4,
                },
                ByteGen::Walk {
                    start: 0x40 + k,
                    min: 0x20,
                    max: 0x80,
                    max_step: 2,
                },
                ByteGen::Const { value: k << 4 },
                ByteGen::Walk {
                    start: 0x10,
                    min: 0,
                    max: 0x3F,
                    max_step: 1,
                },
                ByteGen::Const { value: 0 },
                ByteGen::Counter { step: 0x10, every: 1 },
                if i % 3 == 0 {
                    ByteGen::Random
                } else {
                    ByteGen::Const { value: 0xA0 | k }
                },
            ];
            BenignSource { id, period, payload }
        })
        .collect()
}

fn flooding(window: [f64; 2]) -> Attack {
    Attack::Flooding {
        id: 0x000,
        rate: 1000.0,
        window,
        payload: zero_payload(),
    }
}

fn fuzzing(window: [f64; 2]) -> Attack {
    Attack::Fuzzing { rate: 500.0, window }
}

fn spoofing(window: [f64; 2]) -> Attack {
    Attack::Spoofing {
        target: SPOOF_TARGET,
        rate: 250.0,
        window,
        mutation: SpoofMutation::Forge { payload: FORGED.to_vec() },
    }
}

#[derive(Debug, Clone)]
enum ByteState {
    Const(u8),
    Counter { value: u8, step: u8, every: u32, tick: u32 },
    Walk { value: u8, min: u8, max: u8, max_step: u8 },
    Random,
}

impl ByteState {
    fn new(gen: &ByteGen) -> Self {
        match *gen {
            ByteGen::Const { value } => ByteState::Const(value),
            ByteGen::Counter { step, every } => ByteState::Counter {
                value: 0,
                step,
                every,
                tick: 0,
            },
            ByteGen::Walk {
                start,
                min,
                max,
                max_step,
            } => ByteState::Walk {
                value: start,
                min,
                max,
                max_step,
            },
            ByteGen::Random => ByteState::Random,
        }
    }

    fn next(&mut self, rng: &mut ChaCha8Rng) -> u8 {
        match self {
            ByteState::Const(v) => *v,
            ByteState::Counter {
                value,
                step,
                every,
                tick,
            } => {
                let out = *value;
                *tick += 1;
                if *tick == *every {
                    *tick = 0;
                    *value = value.wrapping_add(*step);
                }
                out
            }
            ByteState::Walk {
                value,
                min,
                max,
                max_step,
            } => {
                let out = *value;
                let delta = rng.random_range(-(*max_step as i32)..=*max_step as i32);
                *value = (*value as i32 + delta).clamp(*min as i32, *max as i32) as u8;
                out
            }
            ByteState::Random => rng.random(),
        }
    }
}

#[derive(Debug, Clone)]
enum Process {
    Benign {
        id: u32,
        period_us: f64,
        bytes: Vec<ByteState>,
        jitter: Normal<f64>,
    },
    Attack {
        attack: Attack,
        start_us: u64,
        end_us: u64,
        period_us: f64,
        emitted: u64,
    },
}

#[derive(Debug, Clone)]
struct Source {
    process: Process,
    rng: ChaCha8Rng,
}

/// Time-ordered frame iterator over a scenario. Ties are broken by source
/// order: benign sources in listed order, then attacks.
#[derive(Debug, Clone)]
pub struct Generator {
    sources: Vec<Source>,
    queue: BinaryHeap<Reverse<(u64, usize)>>,
    duration_us: u64,
    benign_ids: HashSet<u32>,
    last_benign: HashMap<u32, Vec<u8>>,
}

impl Generator {
    pub fn new(config: &ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let duration_us = to_us(config.duration);
        let jitter = Normal::new(0.0, JITTER_SIGMA).expect("positive sigma");
        let mut sources = Vec::new();
        let mut queue = BinaryHeap::new();
        for (i, src) in config.benign.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let period_us = src.period * 1e6;
            let phase = (rng.random::<f64>() * period_us).floor() as u64;
            if phase < duration_us {
                queue.push(Reverse((phase, sources.len())));
            }
            sources.push(Source {
                process: Process::Benign {
                    id: src.id,
                    period_us,
                    bytes: src.payload.iter().map(ByteState::new).collect(),
                    jitter,
                },
                rng,
            });
        }
        for (k, attack) in config.attacks.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream((config.benign.len() + k) as u64);
            let [start, end] = attack.window();
            let start_us = to_us(start);
            queue.push(Reverse((start_us, sources.len())));
            sources.push(Source {
                process: Process::Attack {
                    attack: attack.clone(),
                    start_us,
                    end_us: to_us(end),
                    period_us: 1e6 / attack.rate(),
                    emitted: 0,
                },
                rng,
            });
        }
        Ok(Generator {
            sources,
            queue,
            duration_us,
            benign_ids: config.benign.iter().map(|s| s.id).collect(),
            last_benign: HashMap::new(),
        })
    }

    fn emit(&mut self, t_us: u64, index: usize) -> (CanFrame, Option<u64>) {
        let timestamp = t_us as f64 / 1e6;
        let Source { process, rng } = &mut self.sources[index];
        match process {
            Process::Benign {
                id,
                period_us,
                bytes,
                jitter,
            } => {
                let payload: Vec<u8> = bytes.iter_mut().map(|b| b.next(rng)).collect();
                let eps = loop {
                    let e = jitter.sample(rng);
                    if e.abs() <= JITTER_BOUND {
                        break e;
                    }
                };
                let step = ((*period_us * (1.0 + eps)).round() as u64).max(1);
                let next = t_us + step;
                let frame = CanFrame::new(timestamp, *id, &payload)
                    .expect("validated")
                    .labeled(ClassLabel::BENIGN);
                self.last_benign.insert(*id, payload);
                (frame, (next < self.duration_us).then_some(next))
            }
            Process::Attack {
                attack,
                start_us,
                end_us,
                period_us,
                emitted,
            } => {
                let frame = match attack {
                    Attack::Flooding { id, payload, .. } => CanFrame::new(timestamp, *id, payload),
                    Attack::Fuzzing { .. } => {
                        let id = loop {
                            let id = rng.random_range(0..=MAX_STANDARD_ID);
                            if !self.benign_ids.contains(&id) {
                                break id;
                            }
                        };
                        CanFrame::new(timestamp, id, &rng.random::<[u8; 8]>())
                    }
                    Attack::Spoofing { target, mutation, .. } => {
                        let current = self.last_benign.get(target);
                        let payload = match mutation {
                            SpoofMutation::Forge { payload } => {
                                let mut forged = payload.clone();
                                if current == Some(&forged) {
                                    forged[0] ^= 0x01;
                                }
                                forged
                            }
                            SpoofMutation::RandomizeByte { index } => {
                                let mut p = match current {
                                    Some(p) => p.clone(),
                                    None => vec![0; *index + 1],
                                };
                                p[*index] = p[*index].wrapping_add(rng.random_range(1..=255u8));
                                p
                            }
                        };
                        CanFrame::new(timestamp, *target, &payload)
                    }
                }
                .expect("validated")
                .labeled(attack.label());
                *emitted += 1;
                let next = *start_us + (*emitted as f64 * *period_us).round() as u64;
                (frame, (next < *end_us).then_some(next))
            }
        }
    }
}

impl Iterator for Generator {
    type Item = CanFrame;

    fn next(&mut self) -> Option<CanFrame> {
        let Reverse((t_us, index)) = self.queue.pop()?;
        let (frame, next) = self.emit(t_us, index);
        if let Some(next) = next {
            self.queue.push(Reverse((next, index)));
        }
        Some(frame)
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<Vec<CanFrame>> {
    Ok(Generator::new(config)?.collect())
}

/// Streams a scenario as canonical CSV without buffering the frames.
pub fn generate_to<W: Write>(config: &ScenarioConfig, writer: W) -> Result<u64> {
    let mut writer = std::io::BufWriter::new(writer);
    writeln!(writer, "{}", crate::parser::CANONICAL_HEADER)?;
    let mut count = 0u64;
    for frame in Generator::new(config)? {
        writeln!(writer, "{}", crate::parser::canonical_row(&frame))?;
        count += 1;
    }
    writer.flush()?;
    Ok(count)
}
