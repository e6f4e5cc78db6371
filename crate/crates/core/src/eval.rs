//! Splitting, classification metrics and latency benchmarks.

use std::collections::BTreeMap;
use std::fmt;
use std::hint::black_box;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bnn::{BnnModel, Checkpoint};
use crate::error::{Error, Result};
use crate::featurizer::{nearest_rank, FeatureVector};
use crate::packed::PackedModel;

/// Index sets of a three-way split, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-class counts by largest remainder: each count is within one of the
/// exact share and they sum to `n`. Ties go to the earlier split.
fn apportion(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    counts
}

/// Splits sample indices so that every class is divided in the given
/// proportions. Each class is shuffled with a generator seeded from `seed`.
pub fn stratified_split(labels: &[u16], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let fractions = [fractions.0, fractions.1, fractions.2];
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions {fractions:?} must be positive and sum to 1"
        )));
    }
    if labels.is_empty() {
        return Err(Error::Empty("labels to split"));
    }
    let mut by_class: BTreeMap<u16, Vec<usize>> = BTreeMap::new();
    for (i, &c) in labels.iter().enumerate() {
        by_class.entry(c).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (class, mut indices) in by_class {
        let counts = apportion(indices.len(), fractions);
        if counts.contains(&0) {
            return Err(Error::ClassTooSmall {
                class,
                count: indices.len(),
                splits: 3,
            });
        }
        indices.shuffle(&mut rng);
        let (train, rest) = indices.split_at(counts[0]);
        let (val, test) = rest.split_at(counts[1]);
        split.train.extend_from_slice(train);
        split.val.extend_from_slice(val);
        split.test.extend_from_slice(test);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Scores of the attack class (code 1).
    Binary,
    /// Unweighted mean over all classes.
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassScores>,
}

/// `num / den`, or 0 with a warning when `den == 0`.
fn ratio(num: u64, den: u64, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::warn!("{what} of class {class} is 0/0; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics of `predictions` against `truths`. With two classes, precision,
/// recall and F1 are those of class 1; otherwise they are macro averages.
pub fn evaluate(predictions: &[u16], truths: &[u16], n_classes: usize) -> Result<Metrics> {
    if predictions.is_empty() {
        return Err(Error::Empty("predictions to evaluate"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if n_classes < 2 {
        return Err(Error::Config(format!("{n_classes} classes; need at least 2")));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p as usize >= n_classes || t as usize >= n_classes {
            return Err(Error::Shape(format!("label {} outside {n_classes} classes", p.max(t))));
        }
        confusion[t as usize][p as usize] += 1;
    }
    let total = predictions.len() as u64;
    let correct: u64 = (0..n_classes).map(|k| confusion[k][k]).sum();
    let per_class: Vec<ClassScores> = (0..n_classes)
        .map(|k| {
            let tp = confusion[k][k];
            let predicted: u64 = (0..n_classes).map(|t| confusion[t][k]).sum();
            let support: u64 = confusion[k].iter().sum();
            let precision = ratio(tp, predicted, "precision", k);
            let recall = ratio(tp, support, "recall", k);
            ClassScores {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let (averaging, precision, recall, f1) = if n_classes == 2 {
        let c = &per_class[1];
        (Averaging::Binary, c.precision, c.recall, c.f1)
    } else {
        let mean = |f: fn(&ClassScores) -> f64| per_class.iter().map(f).sum::<f64>() / n_classes as f64;
        (Averaging::Macro, mean(|c| c.precision), mean(|c| c.recall), mean(|c| c.f1))
    };
    Ok(Metrics {
        accuracy: correct as f64 / total as f64,
        precision,
        recall,
        f1,
        averaging,
        confusion,
        per_class,
    })
}

impl Metrics {
    pub fn n_samples(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

impl fmt::Display for Metrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let avg = match self.averaging {
            Averaging::Binary => "binary",
            Averaging::Macro => "macro",
        };
        writeln!(f, "samples    {}", self.n_samples())?;
        writeln!(f, "accuracy   {:.4}", self.accuracy)?;
        writeln!(f, "precision  {:.4} ({avg})", self.precision)?;
        writeln!(f, "recall     {:.4} ({avg})", self.recall)?;
        writeln!(f, "f1         {:.4} ({avg})", self.f1)?;
        writeln!(f, "confusion (rows true, columns predicted):")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(|c| format!("{c:>8}")).collect();
            writeln!(f, "{}", cells.join(""))?;
        }
        Ok(())
    }
}

/// Messages timed together per latency sample.
pub const BENCH_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub messages: usize,
    pub repetitions: usize,
    pub packed_median_us: f64,
    pub packed_p99_us: f64,
    pub reference_median_us: f64,
    pub reference_p99_us: f64,
    /// Reference median over packed median.
    pub speedup: f64,
    pub packed_bytes: usize,
    /// Size of the f64 checkpoint of the same model.
    pub reference_bytes: usize,
}

/// Single-thread per-message latency of the packed engine and the f64
/// reference forward on the same inputs.
///
/// After one untimed warm-up pass, each repetition walks `inputs` in chunks
/// of [`BENCH_CHUNK`], timing the two paths back to back on every chunk;
/// each chunk gives one per-message sample.
pub fn bench(
    packed: &PackedModel,
    reference: &BnnModel,
    inputs: &[FeatureVector],
    repetitions: usize,
) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Empty("bench repetitions"));
    }
    if inputs.is_empty() {
        return Err(Error::Empty("bench inputs"));
    }
    let mut fast = packed.evaluator();
    let mut slow = reference.reference_evaluator();
    for x in inputs {
        black_box(fast.infer(x)?);
        black_box(slow.infer(x)?);
    }
    let mut packed_us = Vec::new();
    let mut reference_us = Vec::new();
    for _ in 0..repetitions {
        for chunk in inputs.chunks(BENCH_CHUNK) {
            let start = Instant::now();
            for x in chunk {
                black_box(fast.infer(black_box(x))?);
            }
            packed_us.push(start.elapsed().as_secs_f64() * 1e6 / chunk.len() as f64);
            let start = Instant::now();
            for x in chunk {
                black_box(slow.infer(black_box(x))?);
            }
            reference_us.push(start.elapsed().as_secs_f64() * 1e6 / chunk.len() as f64);
        }
    }
    packed_us.sort_by(f64::total_cmp);
    reference_us.sort_by(f64::total_cmp);
    let packed_median_us = nearest_rank(&packed_us, 0.5);
    let reference_median_us = nearest_rank(&reference_us, 0.5);
    let reference_bytes = Checkpoint {
        model: reference.clone(),
        featurizer_hash: packed.featurizer_hash(),
        seed: 0,
    }
    .to_bytes()
    .len();
    Ok(BenchReport {
        messages: inputs.len(),
        repetitions,
        packed_median_us,
        packed_p99_us: nearest_rank(&packed_us, 0.99),
        reference_median_us,
        reference_p99_us: nearest_rank(&reference_us, 0.99),
        speedup: reference_median_us / packed_median_us.max(f64::MIN_POSITIVE),
        packed_bytes: packed.to_bytes().len(),
        reference_bytes,
    })
}
