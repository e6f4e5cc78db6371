//! Subcommands of the `canbnn` binary, plus the pipeline helpers they are
//! built from.

pub mod args;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use anyhow::Context;
use canbnn::bnn::train::{train, Dataset, TrainConfig, TrainLog};
use canbnn::bnn::{decide, Checkpoint, ReferenceEvaluator, CHECKPOINT_MAGIC};
use canbnn::eval::{bench, evaluate, stratified_split, Metrics, Split};
use canbnn::featurizer::{featurize_stream, thresholds_from_intervals, interval_samples};
use canbnn::packed::{pack, Evaluator, PackedModel, PACKED_MAGIC};
use canbnn::parser::{parse_dataset, CanonicalReader, DatasetFormat, LabelManifest, LabelRules, ParseOptions};
use canbnn::traffic::{generate_to, ScenarioConfig};
use canbnn::{BnnModel, CanFrame, ClassLabel, Error, ErrorCategory, FeatureVector, Featurizer, FeaturizerConfig};
use canbnn::{IdDictionary, IntervalEncoder, Mode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use args::Cli;
use args::{
    BenchArgs, Command, DataArgs, DetectArgs, EvalArgs, FitArgs, Format, GenerateArgs, ModeArg, PackArgs, TrainArgs,
};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TEST_METRICS_FILE: &str = "test_metrics.json";
pub const DETECT_HEADER: &str = "index,timestamp,can_id,probability,decision";

/// Process exit status for an error: 2 configuration, 3 data, 4 internal.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Internal => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    4
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let file = File::open(path).map_err(Error::from).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let file = File::create(path).map_err(Error::from).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn read_text(path: &Path) -> anyhow::Result<String> {
    let mut text = String::new();
    open(path)?
        .read_to_string(&mut text)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(text)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).map_err(Error::from).with_context(|| format!("writing {}", path.display()))
}

fn dataset_format(f: Format) -> DatasetFormat {
    match f {
        Format::Canonical => DatasetFormat::Canonical,
        Format::CarHacking => DatasetFormat::CarHacking,
        Format::CanIds => DatasetFormat::CanIds,
    }
}

fn load_manifest(path: Option<&Path>, format: Format) -> anyhow::Result<Option<LabelManifest>> {
    match path {
        Some(p) => Ok(Some(
            LabelManifest::parse(&read_text(p)?).with_context(|| format!("label manifest {}", p.display()))?,
        )),
        None if format != Format::Canonical => Err(config_error("--labels is required for dataset formats")),
        None => Ok(None),
    }
}

fn read_capture(
    path: &Path,
    format: Format,
    manifest: Option<&LabelManifest>,
    opts: ParseOptions,
) -> anyhow::Result<Vec<CanFrame>> {
    let rules = match manifest {
        Some(m) => m.rules_for(path.file_name().and_then(|n| n.to_str())),
        None => LabelRules::default(),
    };
    let frames = parse_dataset(open(path)?, dataset_format(format), &rules, opts)
        .with_context(|| format!("parsing {}", path.display()))?;
    log::info!("{}: {} frames", path.display(), frames.len());
    Ok(frames)
}

/// Captures, one frame stream per file, and the manifest used to label
/// them.
pub fn read_streams(data: &DataArgs) -> anyhow::Result<(Vec<Vec<CanFrame>>, Option<LabelManifest>)> {
    let manifest = load_manifest(data.labels.as_deref(), data.format)?;
    let opts = ParseOptions {
        allow_unordered: data.allow_unordered,
        ..ParseOptions::default()
    };
    let streams = data
        .data
        .iter()
        .map(|p| read_capture(p, data.format, manifest.as_ref(), opts))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((streams, manifest))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Quantiles { q_low: f64, q_high: f64 },
    Fixed { thres_1: f64, thres_2: f64 },
}

/// Fits a featurizer on the benign-labeled frames of each stream.
/// Intervals are measured within each stream and pooled.
pub fn fit_featurizer(
    streams: &[Vec<CanFrame>],
    bit_width: u8,
    thresholds: ThresholdSpec,
) -> canbnn::Result<FeaturizerConfig> {
    let benign: Vec<Vec<CanFrame>> = streams
        .iter()
        .map(|s| s.iter().filter(|f| f.label == Some(ClassLabel::BENIGN)).cloned().collect())
        .collect();
    if benign.iter().all(Vec::is_empty) {
        return Err(Error::Empty("benign-labeled frames to fit on"));
    }
    let dictionary = IdDictionary::build(benign.iter().flatten(), bit_width)?;
    let (t1, t2) = match thresholds {
        ThresholdSpec::Fixed { thres_1, thres_2 } => (thres_1, thres_2),
        ThresholdSpec::Quantiles { q_low, q_high } => {
            let mut samples = Vec::new();
            for s in &benign {
                match interval_samples(s) {
                    Ok(v) => samples.extend(v),
                    Err(Error::NoIntervals) => {}
                    Err(e) => return Err(e),
                }
            }
            thresholds_from_intervals(samples, q_low, q_high)?
        }
    };
    FeaturizerConfig::new(dictionary, t1, t2)
}

/// Feature vectors of every frame, streams featurized independently.
pub fn featurize_streams(config: &FeaturizerConfig, streams: &[Vec<CanFrame>]) -> canbnn::Result<Vec<FeatureVector>> {
    let mut out = Vec::with_capacity(streams.iter().map(Vec::len).sum());
    for s in streams {
        let mut intervals = IntervalEncoder::new(config.thres_1, config.thres_2)?;
        out.extend(featurize_stream(s, &config.dictionary, &mut intervals)?);
    }
    Ok(out)
}

fn labels_of(features: &[FeatureVector]) -> canbnn::Result<Vec<u16>> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            f.label
                .map(ClassLabel::code)
                .ok_or_else(|| Error::Config(format!("frame {i} has no label")))
        })
        .collect()
}

/// Class count of a multiclass run: the manifest's, else one past the
/// largest label seen.
pub fn class_count(labels: &[u16], manifest: Option<&LabelManifest>) -> usize {
    let seen = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
    manifest.map_or(seen, |m| m.n_classes().max(seen)).max(2)
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub split: Split,
    pub test_metrics: Metrics,
}

/// Splits stratified on the raw class codes, trains the default
/// topology and scores the best snapshot on the test part.
pub fn train_pipeline(
    features: &[FeatureVector],
    featurizer_hash: [u8; 32],
    mode: Mode,
    n_classes: usize,
    config: &TrainConfig,
    fractions: (f64, f64, f64),
) -> canbnn::Result<TrainOutcome> {
    config.validate()?;
    let labels = labels_of(features)?;
    let split = stratified_split(&labels, fractions, config.seed)?;
    let data = Dataset::from_features(features)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    init_rng.set_stream(1);
    let model = BnnModel::standard(data.width(), n_classes, mode, config.dropout_rate, &mut init_rng)?;
    log::info!(
        "training {:?} model {:?} on {} / {} / {} frames",
        mode,
        model.topology(),
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let (model, log) = train(model, &data.select(&split.train), &data.select(&split.val), config)?;
    let test: Vec<FeatureVector> = split.test.iter().map(|&i| features[i].clone()).collect();
    let scored = classify(&mut Runner::Reference(model.reference_evaluator()), mode, &test, 0.5)?;
    let predictions: Vec<u16> = scored.iter().map(|s| s.1).collect();
    let test_metrics = evaluate(&predictions, &truth_codes(&test, mode)?, model.n_classes())?;
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            featurizer_hash,
            seed: config.seed,
        },
        log,
        split,
        test_metrics,
    })
}

/// Class codes as the model sees them: `label != 0` in binary mode.
pub fn truth_codes(features: &[FeatureVector], mode: Mode) -> canbnn::Result<Vec<u16>> {
    let labels = labels_of(features)?;
    Ok(match mode {
        Mode::Binary => labels.into_iter().map(|c| u16::from(c != 0)).collect(),
        Mode::Multiclass => labels,
    })
}

/// A model read from disk; the two formats are told apart by magic.
#[derive(Debug, Clone)]
pub enum Model {
    Checkpoint(Checkpoint),
    Packed(PackedModel),
}

impl Model {
    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let bytes = fs::read(path).map_err(Error::from).with_context(|| format!("reading {}", path.display()))?;
        let ctx = || format!("loading {}", path.display());
        if bytes.starts_with(PACKED_MAGIC) {
            Ok(Model::Packed(PackedModel::read_from(bytes.as_slice()).with_context(ctx)?))
        } else if bytes.starts_with(CHECKPOINT_MAGIC) {
            Ok(Model::Checkpoint(Checkpoint::read_from(bytes.as_slice()).with_context(ctx)?))
        } else {
            Err(anyhow::Error::from(Error::Format {
                what: "model",
                reason: "neither a checkpoint nor a packed model".into(),
            }))
            .with_context(ctx)
        }
    }

    pub fn mode(&self) -> Mode {
        match self {
            Model::Checkpoint(c) => c.model.mode(),
            Model::Packed(p) => p.mode(),
        }
    }

    pub fn n_classes(&self) -> usize {
        match self {
            Model::Checkpoint(c) => c.model.n_classes(),
            Model::Packed(p) => p.n_classes(),
        }
    }

    /// Fails unless the model was trained with `config`.
    pub fn check_featurizer(&self, config: &FeaturizerConfig) -> canbnn::Result<()> {
        match self {
            Model::Packed(p) => p.check_featurizer(config),
            Model::Checkpoint(c) => {
                let found = config.hash();
                if found != c.featurizer_hash {
                    return Err(Error::FeaturizerMismatch {
                        expected: hex(&c.featurizer_hash),
                        found: hex(&found),
                    });
                }
                if config.input_width() != c.model.input_width() {
                    return Err(Error::Shape(format!(
                        "featurizer produces {} bits, model expects {}",
                        config.input_width(),
                        c.model.input_width()
                    )));
                }
                Ok(())
            }
        }
    }

    pub fn runner(&self) -> Runner<'_> {
        match self {
            Model::Checkpoint(c) => Runner::Reference(c.model.reference_evaluator()),
            Model::Packed(p) => Runner::Packed(p.evaluator()),
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub enum Runner<'a> {
    Reference(ReferenceEvaluator),
    Packed(Evaluator<'a>),
}

impl Runner<'_> {
    pub fn infer(&mut self, x: &FeatureVector) -> canbnn::Result<&[f64]> {
        match self {
            Runner::Reference(r) => r.infer(x),
            Runner::Packed(p) => p.infer(x),
        }
    }
}

fn check_tau(tau: f64) -> canbnn::Result<()> {
    if (0.0..=1.0).contains(&tau) {
        Ok(())
    } else {
        Err(Error::Config(format!("tau {tau} outside [0, 1]")))
    }
}

/// `(probability, decision)` per vector. The probability is that of the
/// attack class in binary mode and of the chosen class otherwise.
pub fn classify(runner: &mut Runner<'_>, mode: Mode, features: &[FeatureVector], tau: f64) -> canbnn::Result<Vec<(f64, u16)>> {
    check_tau(tau)?;
    features
        .iter()
        .map(|x| {
            let probs = runner.infer(x)?;
            let decision = decide(mode, probs, tau).code();
            let p = match mode {
                Mode::Binary => probs[0],
                Mode::Multiclass => probs[decision as usize],
            };
            Ok((p, decision))
        })
        .collect()
}

fn fractions(split: &[f64]) -> (f64, f64, f64) {
    (split[0], split[1], split[2])
}

fn cmd_generate(a: &GenerateArgs) -> anyhow::Result<()> {
    let mut config = match (&a.preset, &a.scenario) {
        (Some(name), _) => ScenarioConfig::preset(name, a.seed.unwrap_or(0))?,
        (None, Some(path)) => {
            ScenarioConfig::from_toml(&read_text(path)?).with_context(|| format!("scenario {}", path.display()))?
        }
        (None, None) => return Err(config_error("pass --preset or --scenario")),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let n = generate_to(&config, create(&a.out)?)?;
    log::info!("wrote {n} frames to {}", a.out.display());
    Ok(())
}

fn cmd_fit(a: &FitArgs) -> anyhow::Result<()> {
    let (streams, _) = read_streams(&a.data)?;
    let thresholds = match (a.thres1, a.thres2) {
        (Some(thres_1), Some(thres_2)) => ThresholdSpec::Fixed { thres_1, thres_2 },
        _ => ThresholdSpec::Quantiles {
            q_low: a.q_low,
            q_high: a.q_high,
        },
    };
    let config = fit_featurizer(&streams, a.bit_width, thresholds)?;
    log::info!(
        "{} IDs, thresholds {} s / {} s, hash {}",
        config.dictionary.len(),
        config.thres_1,
        config.thres_2,
        config.hash_hex()
    );
    write_bytes(&a.out, config.to_toml().as_bytes())
}

fn read_featurizer(path: &Path) -> anyhow::Result<FeaturizerConfig> {
    FeaturizerConfig::from_toml(&read_text(path)?).with_context(|| format!("featurizer config {}", path.display()))
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let featurizer = read_featurizer(&a.featurizer)?;
    let (streams, manifest) = read_streams(&a.data)?;
    let features = featurize_streams(&featurizer, &streams)?;
    let mode = match a.mode {
        ModeArg::Binary => Mode::Binary,
        ModeArg::Multi => Mode::Multiclass,
    };
    let n_classes = match mode {
        Mode::Binary => 2,
        Mode::Multiclass => {
            let n = class_count(&labels_of(&features)?, manifest.as_ref());
            if n == 2 {
                log::warn!("multiclass training on data with only two classes");
            }
            n
        }
    };
    let config = TrainConfig {
        learning_rate: a.lr,
        max_epochs: a.epochs,
        batch_size: a.batch_size,
        dropout_rate: a.dropout,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let outcome = train_pipeline(&features, featurizer.hash(), mode, n_classes, &config, fractions(&a.split))?;
    fs::create_dir_all(&a.out)
        .map_err(Error::from)
        .with_context(|| format!("creating {}", a.out.display()))?;
    write_bytes(&a.out.join(CHECKPOINT_FILE), &outcome.checkpoint.to_bytes())?;
    outcome.log.write_csv(create(&a.out.join(TRAIN_LOG_FILE))?).map_err(Error::from)?;
    let json = serde_json::to_string_pretty(&outcome.test_metrics)?;
    write_bytes(&a.out.join(TEST_METRICS_FILE), json.as_bytes())?;
    println!("test split:\n{}", outcome.test_metrics);
    Ok(())
}

fn cmd_pack(a: &PackArgs) -> anyhow::Result<()> {
    let ckpt = match Model::read(&a.checkpoint)? {
        Model::Checkpoint(c) => c,
        Model::Packed(_) => return Err(config_error(format!("{} is already packed", a.checkpoint.display()))),
    };
    let packed = pack(&ckpt.model, ckpt.featurizer_hash)?;
    let bytes = packed.to_bytes();
    log::info!("packed model: {} bytes", bytes.len());
    write_bytes(&a.out, &bytes)
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let model = Model::read(&a.model)?;
    let featurizer = read_featurizer(&a.featurizer)?;
    model.check_featurizer(&featurizer)?;
    let (streams, _) = read_streams(&a.data)?;
    let mut features = featurize_streams(&featurizer, &streams)?;
    if a.holdout {
        let split = stratified_split(&labels_of(&features)?, fractions(&a.split), a.seed)?;
        features = split.test.iter().map(|&i| features[i].clone()).collect();
    }
    let scored = classify(&mut model.runner(), model.mode(), &features, a.tau)?;
    let predictions: Vec<u16> = scored.iter().map(|s| s.1).collect();
    let metrics = evaluate(&predictions, &truth_codes(&features, model.mode())?, model.n_classes())?;
    print!("{metrics}");
    if let Some(out) = &a.out {
        write_bytes(out, serde_json::to_string_pretty(&metrics)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_bench(a: &BenchArgs) -> anyhow::Result<()> {
    let ckpt = match Model::read(&a.checkpoint)? {
        Model::Checkpoint(c) => c,
        Model::Packed(_) => return Err(config_error("bench needs a checkpoint; it packs it itself")),
    };
    let packed = pack(&ckpt.model, ckpt.featurizer_hash)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let width = ckpt.model.input_width();
    let inputs: Vec<FeatureVector> = (0..a.messages)
        .map(|_| FeatureVector::from_bits((0..width).map(|_| rng.random::<bool>())))
        .collect();
    let report = bench(&packed, &ckpt.model, &inputs, a.reps)?;
    println!(
        "packed     median {:.3} us  p99 {:.3} us  {} bytes",
        report.packed_median_us, report.packed_p99_us, report.packed_bytes
    );
    println!(
        "reference  median {:.3} us  p99 {:.3} us  {} bytes",
        report.reference_median_us, report.reference_p99_us, report.reference_bytes
    );
    println!("speedup    {:.2}x", report.speedup);
    if let Some(out) = &a.out {
        write_bytes(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    }
    Ok(())
}

/// Writes one decision row per frame of `frames`.
pub fn detect_frames<I, W>(
    frames: I,
    model: &Model,
    featurizer: &FeaturizerConfig,
    tau: f64,
    mut out: W,
) -> anyhow::Result<u64>
where
    I: IntoIterator<Item = canbnn::Result<CanFrame>>,
    W: Write,
{
    check_tau(tau)?;
    model.check_featurizer(featurizer)?;
    let mut featurizer = Featurizer::new(featurizer)?;
    let mut runner = model.runner();
    let mode = model.mode();
    let mut x = FeatureVector::zeros(featurizer.width());
    writeln!(out, "{DETECT_HEADER}").map_err(Error::from)?;
    let mut n = 0u64;
    for frame in frames {
        let frame = frame?;
        featurizer.featurize_into(&frame, &mut x)?;
        let probs = runner.infer(&x)?;
        let decision = decide(mode, probs, tau).code();
        let p = match mode {
            Mode::Binary => probs[0],
            Mode::Multiclass => probs[decision as usize],
        };
        writeln!(out, "{n},{},{:X},{p},{decision}", frame.timestamp, frame.can_id).map_err(Error::from)?;
        n += 1;
    }
    out.flush().map_err(Error::from)?;
    Ok(n)
}

fn cmd_detect(a: &DetectArgs) -> anyhow::Result<()> {
    let model = Model::read(&a.model)?;
    let featurizer = read_featurizer(&a.featurizer)?;
    let opts = ParseOptions {
        allow_unordered: a.allow_unordered,
        ..ParseOptions::default()
    };
    let out = create(&a.out)?;
    let n = if a.format == Format::Canonical {
        detect_frames(CanonicalReader::new(open(&a.data)?, opts), &model, &featurizer, a.tau, out)?
    } else {
        let manifest = load_manifest(a.labels.as_deref(), a.format)?;
        let frames = read_capture(&a.data, a.format, manifest.as_ref(), opts)?;
        detect_frames(frames.into_iter().map(Ok), &model, &featurizer, a.tau, out)?
    };
    log::info!("classified {n} frames");
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Train(a) => cmd_train(a),
        Command::Pack(a) => cmd_pack(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Detect(a) => cmd_detect(a),
    }
}
