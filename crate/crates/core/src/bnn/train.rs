//! Mini-batch training: Adam, global-norm gradient clipping, a plateau
//! learning-rate schedule and early stopping on validation loss.

use std::io::Write;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BnnModel, Mode};
use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub scheduler_factor: f64,
    /// Stagnant epochs before the learning rate is multiplied by
    /// `scheduler_factor`.
    pub scheduler_patience: usize,
    pub max_epochs: usize,
    /// Stagnant epochs before training stops.
    pub early_stop_patience: usize,
    pub grad_clip_max_norm: f64,
    pub batch_size: usize,
    pub dropout_rate: f64,
    pub seed: u64,
    /// A validation loss counts as an improvement only when it beats the
    /// best so far by more than this.
    pub min_improvement: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            scheduler_factor: 0.1,
            scheduler_patience: 3,
            max_epochs: 100,
            early_stop_patience: 6,
            grad_clip_max_norm: 1.0,
            batch_size: 256,
            dropout_rate: 0.2,
            seed: 0,
            min_improvement: 1e-4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        positive("learning rate", self.learning_rate)?;
        positive("gradient clip norm", self.grad_clip_max_norm)?;
        if !(self.scheduler_factor > 0.0 && self.scheduler_factor < 1.0) {
            return Err(Error::Config(format!("scheduler factor {} outside (0, 1)", self.scheduler_factor)));
        }
        if self.scheduler_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::Config("patience values must be positive".into()));
        }
        if self.scheduler_patience >= self.early_stop_patience {
            return Err(Error::Config(format!(
                "scheduler patience {} must be below early-stop patience {}",
                self.scheduler_patience, self.early_stop_patience
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} below 2", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        if !(self.min_improvement >= 0.0) {
            return Err(Error::Config("min_improvement must be >= 0".into()));
        }
        Ok(())
    }
}

/// `±1` inputs with integer class codes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Array2<f64>,
    labels: Vec<u16>,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<u16>) -> Result<Self> {
        if inputs.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} rows but {} labels", inputs.nrows(), labels.len())));
        }
        Ok(Dataset { inputs, labels })
    }

    /// Every vector must carry a label.
    pub fn from_features(features: &[FeatureVector]) -> Result<Self> {
        let width = features.first().map_or(0, FeatureVector::len);
        let labels = features
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.label
                    .map(|l| l.code())
                    .ok_or_else(|| Error::Config(format!("feature vector {i} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(super::features_to_matrix(features, width)?, labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.inputs.view()
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the logits.
///
/// Binary mode uses logistic loss on a single logit with target
/// `label != 0`; multiclass mode uses softmax cross-entropy.
pub fn loss_and_grad(mode: Mode, logits: ArrayView2<f64>, labels: &[u16]) -> Result<(f64, Array2<f64>)> {
    let n = logits.nrows();
    if n != labels.len() || n == 0 {
        return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    match mode {
        Mode::Binary => {
            for (i, &label) in labels.iter().enumerate() {
                let z = logits[[i, 0]];
                let y = if label != 0 { 1.0 } else { 0.0 };
                total += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
                let p = if z >= 0.0 {
                    1.0 / (1.0 + (-z).exp())
                } else {
                    z.exp() / (1.0 + z.exp())
                };
                grad[[i, 0]] = (p - y) / n as f64;
            }
        }
        Mode::Multiclass => {
            let c = logits.ncols();
            for (i, &label) in labels.iter().enumerate() {
                let label = label as usize;
                if label >= c {
                    return Err(Error::Shape(format!("label {label} but the model has {c} classes")));
                }
                let row = logits.row(i);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|z| (z - max).exp()).sum();
                total += max + sum.ln() - row[label];
                for k in 0..c {
                    let p = (row[k] - max).exp() / sum;
                    grad[[i, k]] = (p - if k == label { 1.0 } else { 0.0 }) / n as f64;
                }
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Mean inference-mode loss over a dataset.
pub fn evaluate_loss(model: &BnnModel, data: &Dataset) -> Result<f64> {
    const CHUNK: usize = 4096;
    let mut total = 0.0;
    for start in (0..data.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(data.len());
        let logits = model.logits(data.inputs.slice(ndarray::s![start..end, ..]))?;
        let (loss, _) = loss_and_grad(model.mode(), logits.view(), &data.labels[start..end])?;
        total += loss * (end - start) as f64;
    }
    Ok(total / data.len() as f64)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        if self.first.is_empty() {
            self.first = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub learning_rate: f64,
    pub grad_norm: f64,
    pub clipped_norm: f64,
}

/// Hooks into the training loop, used for instrumentation and tests.
pub trait TrainObserver {
    fn on_step(&mut self, _info: &StepInfo) {}

    /// May replace the validation loss computed for `epoch`.
    fn on_validation(&mut self, _epoch: usize, val_loss: f64) -> f64 {
        val_loss
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub learning_rate: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_loss,val_loss,lr,elapsed_s";

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{:.3}",
                r.epoch, r.train_loss, r.val_loss, r.learning_rate, r.elapsed_s
            )?;
        }
        out.flush()
    }
}

pub fn train(model: BnnModel, train_set: &Dataset, val_set: &Dataset, config: &TrainConfig) -> Result<(BnnModel, TrainLog)> {
    train_observed(model, train_set, val_set, config, &mut Silent)
}

/// Trains and returns the snapshot with the lowest validation loss.
pub fn train_observed(
    mut model: BnnModel,
    train_set: &Dataset,
    val_set: &Dataset,
    config: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<(BnnModel, TrainLog)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Empty("training and validation sets must be non-empty"));
    }
    for set in [train_set, val_set] {
        if set.width() != model.input_width() {
            return Err(Error::Shape(format!(
                "dataset width {} does not match model input {}",
                set.width(),
                model.input_width()
            )));
        }
    }
    model.dropout_rate = config.dropout_rate;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate);
    let mut log = TrainLog::default();
    let mut best_model = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut stagnant = 0;
    let mut plateau = 0;
    let started = Instant::now();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let lr = adam.learning_rate;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = train_set.inputs.select(Axis(0), chunk);
            let labels: Vec<u16> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (logits, cache) = model.forward_train(x.view(), &mut rng)?;
            let (loss, grad_logits) = loss_and_grad(model.mode(), logits.view(), &labels)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, lr });
            }
            let mut grads = model.backward_ste(&cache, grad_logits.view())?;
            let grad_norm = grads.global_norm();
            if !grad_norm.is_finite() {
                return Err(Error::Diverged { epoch, batch, lr });
            }
            let coef = config.grad_clip_max_norm / (grad_norm + 1e-6);
            if coef < 1.0 {
                grads.scale(coef);
            }
            let clipped_norm = grads.global_norm();
            observer.on_step(&StepInfo {
                epoch,
                batch,
                loss,
                learning_rate: lr,
                grad_norm,
                clipped_norm,
            });
            adam.step(model.parameters_mut(), grads.slices());
            model.clip_latent_weights();
            loss_sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }

        let val_loss = observer.on_validation(epoch, evaluate_loss(&model, val_set)?);
        if val_loss.is_nan() {
            return Err(Error::Diverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
                lr,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: if seen > 0 { loss_sum / seen as f64 } else { f64::NAN },
            val_loss,
            learning_rate: lr,
            elapsed_s: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5} lr {lr:e}",
            record.train_loss,
            record.val_loss
        );
        log.epochs.push(record);

        if val_loss < best_loss - config.min_improvement {
            best_loss = val_loss;
            best_model = model.clone();
            log.best_epoch = Some(epoch);
            stagnant = 0;
            plateau = 0;
        } else {
            stagnant += 1;
            plateau += 1;
            if plateau >= config.scheduler_patience {
                adam.learning_rate *= config.scheduler_factor;
                plateau = 0;
                log::info!("validation loss plateaued; learning rate now {:e}", adam.learning_rate);
            }
            if stagnant >= config.early_stop_patience {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok((best_model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn separable(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let plane: Vec<f64> = (0..73).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let x = Array2::from_shape_fn((n, 73), |_| if rng.random::<bool>() { 1.0 } else { -1.0 });
        let labels = x
            .rows()
            .into_iter()
            .map(|r| (r.iter().zip(&plane).map(|(a, b)| a * b).sum::<f64>() > 0.0) as u16)
            .collect();
        Dataset::new(x, labels).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { learning_rate: -1.0, ..Default::default() },
            TrainConfig { scheduler_patience: 6, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { dropout_rate: 1.0, ..Default::default() },
            TrainConfig { scheduler_factor: 1.0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn binary_loss_matches_closed_form() {
        let logits = Array2::from_shape_vec((2, 1), vec![0.0, 2.0]).unwrap();
        let (loss, grad) = loss_and_grad(Mode::Binary, logits.view(), &[1, 0]).unwrap();
        let expected = (2f64.ln() + (1.0 + 2f64.exp()).ln()) / 2.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((grad[[0, 0]] - (0.5 - 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn multiclass_loss_rejects_out_of_range_label() {
        let logits = Array2::zeros((1, 3));
        assert!(loss_and_grad(Mode::Multiclass, logits.view(), &[3]).is_err());
        let (loss, _) = loss_and_grad(Mode::Multiclass, logits.view(), &[2]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let data = separable(64, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = BnnModel::new(&[73, 16, 1], Mode::Binary, 0.2, &mut rng).unwrap();
        let config = TrainConfig { max_epochs: 0, ..Default::default() };
        let (out, log) = train(model.clone(), &data, &data, &config).unwrap();
        assert_eq!(out, model);
        assert!(log.epochs.is_empty());
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.01);
        let mut p = vec![1.0, -1.0];
        adam.step(vec![&mut p], vec![&[0.3, -2.0]]);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn log_csv_layout() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                learning_rate: 0.001,
                elapsed_s: 1.23456,
            }],
            ..Default::default()
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_loss,lr,elapsed_s\n1,0.5,0.25,0.001,1.235\n");
    }
}
