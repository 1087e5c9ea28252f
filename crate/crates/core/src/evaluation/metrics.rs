use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::error::{Error, Result};

/// Fixed decision threshold; scores at or above it count as synthetic.
pub const DECISION_THRESHOLD: f64 = 0.5;

fn check_inputs(scores: &[f64], labels: &[Label]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::metric(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::metric(format!("score {s} is not a number")));
    }
    Ok(())
}

/// Integer Mann–Whitney counts: (synthetic-over-real wins, ties, #synthetic, #real).
pub fn pair_counts(scores: &[f64], labels: &[Label]) -> Result<(u64, u64, u64, u64)> {
    check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut wins, mut ties, mut reals_below) = (0u64, 0u64, 0u64);
    let (mut n_syn, mut n_real) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut syn, mut real) = (0u64, 0u64);
        // -0.0 and 0.0 compare equal as scores.
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            match labels[order[j]] {
                Label::Synthetic => syn += 1,
                Label::Real => real += 1,
            }
            j += 1;
        }
        wins += syn * reals_below;
        ties += syn * real;
        reals_below += real;
        n_syn += syn;
        n_real += real;
        i = j;
    }
    Ok((wins, ties, n_syn, n_real))
}

/// ROC-AUC with synthetic as the positive class, ties counting one half.
pub fn compute_auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    let (wins, ties, n_syn, n_real) = pair_counts(scores, labels)?;
    if n_syn == 0 || n_real == 0 {
        return Err(Error::metric(format!(
            "AUC needs both classes ({n_syn} synthetic, {n_real} real)"
        )));
    }
    Ok((2 * wins + ties) as f64 / (2 * n_syn * n_real) as f64)
}

pub fn compute_accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64> {
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::metric("accuracy of an empty set"));
    }
    let correct = scores
        .iter()
        .zip(labels)
        .filter(|(s, l)| (**s >= threshold) == l.is_synthetic())
        .count();
    Ok(correct as f64 / scores.len() as f64)
}

/// Pooled metrics; `auc` is `None` when only one class is present.
pub fn auc_and_accuracy(scores: &[f64], labels: &[Label]) -> Result<(Option<f64>, f64)> {
    let acc = compute_accuracy(scores, labels, DECISION_THRESHOLD)?;
    let auc = match compute_auc(scores, labels) {
        Ok(a) => Some(a),
        Err(Error::Metric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok((auc, acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub resamples: usize,
    pub level: f64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 500;
pub const BOOTSTRAP_LEVEL: f64 = 0.95;
const MAX_DRAW_ATTEMPTS: usize = 1000;

/// Linear-interpolation percentile of sorted values, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap. Each resample draws rows with replacement,
/// redrawing (up to 1000 times) until both classes are present.
pub fn bootstrap_metric<F>(
    scores: &[f64],
    labels: &[Label],
    mut metric: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: FnMut(&[f64], &[Label]) -> Result<f64>,
{
    check_inputs(scores, labels)?;
    if scores.is_empty() {
        return Err(Error::metric("bootstrap of an empty set"));
    }
    if resamples == 0 {
        return Err(Error::metric("bootstrap needs at least one resample"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::metric(format!("confidence level {level} outside (0, 1)")));
    }
    let n = scores.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(resamples);
    let mut s = vec![0.0; n];
    let mut l = vec![Label::Real; n];
    for _ in 0..resamples {
        let mut attempt = 0;
        loop {
            let (mut syn, mut real) = (false, false);
            for k in 0..n {
                let i = rng.random_range(0..n);
                s[k] = scores[i];
                l[k] = labels[i];
                syn |= labels[i].is_synthetic();
                real |= !labels[i].is_synthetic();
            }
            if syn && real {
                break;
            }
            attempt += 1;
            if attempt >= MAX_DRAW_ATTEMPTS {
                return Err(Error::metric(format!(
                    "no two-class resample in {MAX_DRAW_ATTEMPTS} draws"
                )));
            }
        }
        values.push(metric(&s, &l)?);
    }
    let mean = MeanSd::of(&values)?.mean;
    values.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    Ok(BootstrapResult {
        mean,
        ci_low: percentile(&values, tail),
        ci_high: percentile(&values, 1.0 - tail),
        resamples,
        level,
    })
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::metric("summary of no values"));
        }
        if values.iter().all(|v| *v == values[0]) {
            return Ok(Self { mean: values[0], sd: 0.0 });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, sd: var.sqrt() })
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use Label::{Real, Synthetic};

    fn brute_force(scores: &[f64], labels: &[Label]) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, li) in labels.iter().enumerate() {
            if !li.is_synthetic() {
                n += 1;
                continue;
            }
            p += 1;
            for (j, lj) in labels.iter().enumerate() {
                if lj.is_synthetic() {
                    continue;
                }
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auc_examples() {
        let l = [Synthetic, Synthetic, Real, Real];
        assert_eq!(compute_auc(&[0.9, 0.8, 0.1, 0.2], &l).unwrap(), 1.0);
        assert_eq!(compute_auc(&[0.4; 4], &l).unwrap(), 0.5);
        assert_eq!(compute_auc(&[0.8, 0.3, 0.5, 0.3], &l).unwrap(), 0.625);
        assert!(matches!(compute_auc(&[0.1, 0.2], &[Real, Real]), Err(Error::Metric(_))));
    }

    #[test]
    fn accuracy_examples() {
        let l = [Synthetic, Real];
        assert_eq!(compute_accuracy(&[1.0, 0.0], &l, 0.5).unwrap(), 1.0);
        assert_eq!(compute_accuracy(&[0.0, 1.0], &l, 0.5).unwrap(), 0.0);
        assert_eq!(compute_accuracy(&[0.5], &[Real], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn population_sd() {
        let s = MeanSd::of(&[0.6, 0.7, 0.8]).unwrap();
        assert!((s.mean - 0.7).abs() < 1e-12);
        assert!((s.sd - 0.0816).abs() < 5e-5);
        assert_eq!(MeanSd::of(&[0.4; 3]).unwrap().sd, 0.0);
    }

    #[test]
    fn bootstrap_basics() {
        let scores: Vec<f64> = (0..40).map(|i| (i % 7) as f64 / 7.0).collect();
        let labels: Vec<Label> = (0..40).map(|i| if i % 3 == 0 { Synthetic } else { Real }).collect();
        let mut calls = 0;
        let r = bootstrap_metric(&scores, &labels, |s, l| { calls += 1; compute_auc(s, l) }, 500, 0.95, 7).unwrap();
        assert_eq!(calls, 500);
        assert!(r.ci_low <= r.mean && r.mean <= r.ci_high);
        let again = bootstrap_metric(&scores, &labels, compute_auc, 500, 0.95, 7).unwrap();
        assert_eq!(r, again);
        let flat = bootstrap_metric(&scores, &labels, |_, _| Ok(0.25), 500, 0.95, 7).unwrap();
        assert_eq!((flat.ci_low, flat.mean, flat.ci_high), (0.25, 0.25, 0.25));
        assert!(bootstrap_metric(&[0.1], &[Real], compute_auc, 10, 0.95, 1).is_err());
    }

    proptest! {
        #[test]
        fn auc_matches_all_pairs(
            data in prop::collection::vec((0u8..12, any::<bool>()), 2..300)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 11.0).collect();
            let labels: Vec<Label> = data.iter().map(|(_, b)| if *b { Synthetic } else { Real }).collect();
            let both = labels.iter().any(|l| l.is_synthetic()) && labels.iter().any(|l| !l.is_synthetic());
            prop_assume!(both);
            prop_assert_eq!(compute_auc(&scores, &labels).unwrap(), brute_force(&scores, &labels));
            // Rank statistic: strictly monotone transforms leave it unchanged.
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
            prop_assert_eq!(compute_auc(&warped, &labels).unwrap(), compute_auc(&scores, &labels).unwrap());
        }

        #[test]
        fn accuracy_complement(data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 1..200)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            prop_assume!(scores.iter().all(|s| *s != 0.5));
            let labels: Vec<Label> = data.iter().map(|(_, b)| if *b { Synthetic } else { Real }).collect();
            let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
            let total = compute_accuracy(&scores, &labels, 0.5).unwrap() + compute_accuracy(&flipped, &labels, 0.5).unwrap();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
