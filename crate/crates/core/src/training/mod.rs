//! Training loop: detection BCE plus the reversed table-classification loss,
//! cosine λ ramp, validation-AUC early stopping, optional per-sample column
//! permutation.

mod schedule;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use schedule::{lambda_at, Augment, TrainingSchedule};

use crate::corpus::{SplitPlan, TableRecord};
use crate::error::{Error, Result};
use crate::evaluation::{compute_auc, score_tables};
use crate::model::{Detector, DetectorConfig, RowScorer, RowSample};
use crate::numerics::{AdamState, Graph};
use crate::scalar::Scalar;
use crate::textualizer::build_vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationSource {
    ValidationTables,
    /// No validation tables were given; early stopping watched the train tables.
    TrainTables,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean total loss over the epoch's steps.
    pub train_loss: f64,
    pub detection_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub table_loss: Option<f64>,
    pub validation_auc: f64,
    pub lambda: f64,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stopping_reason: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_validation_auc: f64,
    pub stopping_reason: StopReason,
    pub validation_source: ValidationSource,
    pub total_steps: usize,
}

impl TrainingLog {
    /// One JSON object per epoch; the last carries the stopping reason.
    pub fn to_json_lines(&self) -> Result<String> {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write_json_lines(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_json_lines()?.as_bytes())?;
        Ok(())
    }
}

/// Pooled inference-mode AUC over `tables`.
pub fn evaluate_epoch(scorer: &dyn RowScorer, tables: &[TableRecord]) -> Result<f64> {
    if tables.is_empty() {
        return Err(Error::protocol("no tables to evaluate"));
    }
    let (scores, labels) = score_tables(scorer, tables)?;
    compute_auc(&scores, &labels)
}

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_SHUFFLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_PERMUTATION: u64 = 3;

/// Resolves a split plan against the corpus and trains on it.
pub fn train_split(
    plan: &SplitPlan,
    corpus: &[TableRecord],
    config: DetectorConfig,
    schedule: &TrainingSchedule,
) -> Result<(Detector<f32>, TrainingLog)> {
    let pick = |names: &std::collections::BTreeSet<String>| -> Result<Vec<TableRecord>> {
        names
            .iter()
            .map(|n| {
                corpus
                    .iter()
                    .find(|t| &t.name == n)
                    .cloned()
                    .ok_or_else(|| Error::protocol(format!("table {n:?} is not in the corpus")))
            })
            .collect()
    };
    train(config, &pick(&plan.train_tables)?, &pick(&plan.validation_tables)?, schedule)
}

/// Builds the vocabulary from the train tables, initializes a detector and
/// trains it. With adaptation the table-head classes are the train tables.
/// Returns the best-validation-AUC snapshot.
pub fn train<T: Scalar>(
    mut config: DetectorConfig,
    train_tables: &[TableRecord],
    validation_tables: &[TableRecord],
    schedule: &TrainingSchedule,
) -> Result<(Detector<T>, TrainingLog)> {
    if train_tables.is_empty() || train_tables.iter().all(|t| t.is_empty()) {
        return Err(Error::protocol("empty train split"));
    }
    if config.adaptation {
        config.table_names = train_tables.iter().map(|t| t.name.clone()).collect();
    }
    let vocab = build_vocabulary(train_tables, config.anonymize);
    let model = Detector::new(config, vocab, schedule.seed)?;
    train_model(model, train_tables, validation_tables, schedule)
}

/// Trains an existing detector.
pub fn train_model<T: Scalar>(
    mut model: Detector<T>,
    train_tables: &[TableRecord],
    validation_tables: &[TableRecord],
    schedule: &TrainingSchedule,
) -> Result<(Detector<T>, TrainingLog)> {
    schedule.validate()?;
    let config = model.config().clone();
    let samples: Vec<RowSample> = train_tables
        .iter()
        .flat_map(|t| RowSample::from_table(t, config.anonymize))
        .collect();
    if samples.is_empty() {
        return Err(Error::protocol("empty train split"));
    }
    let (watch, validation_source) = if validation_tables.is_empty() {
        log::warn!("no validation tables; early stopping watches the train tables");
        (train_tables, ValidationSource::TrainTables)
    } else {
        (validation_tables, ValidationSource::ValidationTables)
    };

    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * schedule.max_epochs;
    let mut adam = AdamState::new(model.params(), config.learning_rate);
    let mut shuffle_rng = stream(schedule.seed, STREAM_SHUFFLE);
    let mut dropout_rng = Some(stream(schedule.seed, STREAM_DROPOUT));
    let mut perm_rng = stream(schedule.seed, STREAM_PERMUTATION);

    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut best: Option<(f64, usize, Detector<T>)> = None;
    let mut since_best = 0;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut stopping_reason = StopReason::MaxEpochs;

    for epoch in 1..=schedule.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let (mut sum_total, mut sum_det, mut sum_table) = (0.0, 0.0, 0.0);
        let mut lambda = 0.0;
        for (k, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch_samples: Vec<RowSample> = chunk
                .iter()
                .map(|&i| {
                    let mut s = samples[i].clone();
                    if schedule.augment == Augment::DynamicPermutation {
                        s.datums.shuffle(&mut perm_rng);
                    }
                    s
                })
                .collect();
            let batch = model.encode(&batch_samples)?;
            lambda = lambda_at(step as f64, total_steps as f64, schedule.warmup_fraction);
            let mut g = Graph::training(dropout_rng.take().expect("dropout stream"));
            let fwd = model.forward(&mut g, &batch, lambda)?;
            let losses = model.loss(&mut g, &fwd, &batch)?;
            let total = g.value(losses.total).item().to_f64_lossy();
            if !total.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss {total} at epoch {epoch}, step {k} (global step {step})"
                )));
            }
            sum_total += total;
            sum_det += g.value(losses.detection).item().to_f64_lossy();
            if let Some(t) = losses.table {
                sum_table += g.value(t).item().to_f64_lossy();
            }
            let grads = g.backward(losses.total)?;
            model.absorb_batch_stats(&g, &fwd);
            dropout_rng = g.into_rng();
            let grads = grads.into_param_grads(model.params().len());
            adam.step(model.params_mut(), &grads).map_err(|e| match e {
                Error::Numeric(m) => Error::numeric(format!("{m} at epoch {epoch}, step {k} (global step {step})")),
                other => other,
            })?;
            step += 1;
        }
        let auc = evaluate_epoch(&model, watch)?;
        let n = steps_per_epoch as f64;
        let mut record = EpochRecord {
            epoch,
            steps: steps_per_epoch,
            train_loss: sum_total / n,
            detection_loss: sum_det / n,
            table_loss: config.adaptation.then_some(sum_table / n),
            validation_auc: auc,
            lambda,
            wall_seconds: started.elapsed().as_secs_f64(),
            stopping_reason: None,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} (detection {:.4}), validation AUC {auc:.4}, lambda {lambda:.3}",
            record.train_loss,
            record.detection_loss
        );
        if best.as_ref().is_none_or(|(b, _, _)| auc > *b) {
            best = Some((auc, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let stop = if since_best >= schedule.patience {
            Some(StopReason::Patience)
        } else if epoch == schedule.max_epochs {
            Some(StopReason::MaxEpochs)
        } else {
            None
        };
        record.stopping_reason = stop;
        epochs.push(record);
        if let Some(reason) = stop {
            stopping_reason = reason;
            break;
        }
    }
    let (best_auc, best_epoch, best_model) = best.expect("at least one epoch");
    Ok((
        best_model,
        TrainingLog {
            epochs,
            best_epoch,
            best_validation_auc: best_auc,
            stopping_reason,
            validation_source,
            total_steps,
        },
    ))
}

#[cfg(test)]
mod tests;
