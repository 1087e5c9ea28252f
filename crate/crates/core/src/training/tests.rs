use super::*;
use crate::corpus::{toy, Label};
use crate::model::Variant;

fn small(variant: Variant, adaptation: bool) -> DetectorConfig {
    DetectorConfig {
        embed_dim: 16,
        layers: 1,
        heads: 2,
        dropout: 0.0,
        batch_size: 16,
        learning_rate: 1e-3,
        variant,
        adaptation,
        ..DetectorConfig::default()
    }
}

fn tables() -> Vec<TableRecord> {
    toy::toy_corpus(24, 5).unwrap()
}

struct Fixed(f64);

impl RowScorer for Fixed {
    fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>> {
        Ok(vec![self.0; samples.len()])
    }
}

struct Truth;

impl RowScorer for Truth {
    fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>> {
        Ok(samples.iter().map(|s| s.label.target()).collect())
    }
}

#[test]
fn evaluate_epoch_examples() {
    let t = tables();
    assert_eq!(evaluate_epoch(&Truth, &t).unwrap(), 1.0);
    assert_eq!(evaluate_epoch(&Fixed(0.3), &t).unwrap(), 0.5);
    let mut real_only = t[0].clone();
    let keep: Vec<usize> = (0..real_only.len()).filter(|&i| real_only.labels[i] == Label::Real).collect();
    real_only.rows = keep.iter().map(|&i| real_only.rows[i].clone()).collect();
    real_only.labels = vec![Label::Real; keep.len()];
    real_only.generator_tags = vec![String::new(); keep.len()];
    assert!(matches!(evaluate_epoch(&Truth, &[real_only]), Err(Error::Metric(_))));
}

#[test]
fn empty_train_split() {
    let err = train::<f32>(small(Variant::DatumWise, false), &[], &[], &TrainingSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)));
}

#[test]
fn log_shape_and_reproducibility() {
    let t = tables();
    let schedule = TrainingSchedule {
        max_epochs: 3,
        seed: 11,
        ..Default::default()
    };
    let (_, log) = train::<f32>(small(Variant::DatumWise, true), &t[..3], &t[3..], &schedule).unwrap();
    assert!(!log.epochs.is_empty() && log.epochs.len() <= 3);
    for (i, e) in log.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i + 1);
        assert!(e.table_loss.is_some());
    }
    assert!(log.epochs.last().unwrap().stopping_reason.is_some());
    assert_eq!(log.validation_source, ValidationSource::ValidationTables);
    let best = log.epochs.iter().map(|e| e.validation_auc).fold(f64::MIN, f64::max);
    assert_eq!(log.best_validation_auc, best);
    let lines = log.to_json_lines().unwrap();
    assert_eq!(lines.lines().count(), log.epochs.len());

    let (_, again) = train::<f32>(small(Variant::DatumWise, true), &t[..3], &t[3..], &schedule).unwrap();
    let losses = |l: &TrainingLog| l.epochs.iter().map(|e| e.train_loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&log), losses(&again));
}

#[test]
fn adaptation_off_means_bce_only() {
    let t = tables();
    let schedule = TrainingSchedule {
        max_epochs: 1,
        ..Default::default()
    };
    let (m, log) = train::<f32>(small(Variant::FlatText, false), &t[..2], &[], &schedule).unwrap();
    assert!(m.table_head_params().is_empty());
    let e = &log.epochs[0];
    assert_eq!(e.train_loss, e.detection_loss);
    assert_eq!(log.validation_source, ValidationSource::TrainTables);
}

#[test]
fn permutation_augmentation_is_invisible_to_datum_wise() {
    let t = tables();
    let mut schedule = TrainingSchedule {
        max_epochs: 2,
        patience: 5,
        seed: 3,
        ..Default::default()
    };
    let (_, plain) = train::<f32>(small(Variant::DatumWise, false), &t, &[], &schedule).unwrap();
    schedule.augment = Augment::DynamicPermutation;
    let (_, permuted) = train::<f32>(small(Variant::DatumWise, false), &t, &[], &schedule).unwrap();
    for (a, b) in plain.epochs.iter().zip(&permuted.epochs) {
        assert!((a.train_loss - b.train_loss).abs() <= 1e-4 * a.train_loss.abs(), "{} vs {}", a.train_loss, b.train_loss);
    }
}
