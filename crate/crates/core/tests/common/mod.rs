//! Shared oracles and fixtures for the acceptance suite.

#![allow(dead_code)]

use rand::distr::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabwild_core::corpus::{toy, Cell, Domain, Label, TableRecord};
use tabwild_core::numerics::{Graph, ParamId, ParamStore, Tensor, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are judged by absolute error.
pub const FD_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

/// Checks `d/dx sum(out * r)` of the graph built by `build` against central
/// differences, for every element of every input. Returns the worst relative error.
pub fn check_layer<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("in{i}"), t.clone()))
        .collect();
    let mut weights: Option<Tensor<f64>> = None;
    let mut eval = |store: &ParamStore<f64>, want_grads: bool| {
        let mut g = Graph::training(ChaCha8Rng::seed_from_u64(seed));
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(store, id)).collect();
        let out = build(&mut g, &vars);
        let shape = g.value(out).shape().to_vec();
        let r = weights
            .get_or_insert_with(|| random_tensor(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed), &shape, 1.0))
            .clone();
        let r = g.input(r);
        let prod = g.mul(out, r);
        let loss = g.sum(prod);
        let value = g.value(loss).item();
        let grads = want_grads.then(|| g.backward(loss).expect("scalar loss").into_param_grads(store.len()));
        (value, grads)
    };
    let (_, grads) = eval(&store, true);
    let grads = grads.expect("gradients requested");
    let mut worst: f64 = 0.0;
    for &id in &ids {
        for i in 0..store.get(id).len() {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = eval(&store, false).0;
            store.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = eval(&store, false).0;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let analytic = grads[id.0].as_ref().map_or(0.0, |t| t.data()[i]);
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}

/// Brute-force Mann–Whitney numerator `2 * wins + ties` over all pairs.
pub fn auc_oracle(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut twice, mut pos, mut neg) = (0u64, 0u64, 0u64);
    for (i, li) in labels.iter().enumerate() {
        if li.is_synthetic() {
            pos += 1;
        } else {
            neg += 1;
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if lj.is_synthetic() {
                continue;
            }
            if scores[i] > scores[j] {
                twice += 2;
            } else if scores[i] == scores[j] {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

fn random_word(rng: &mut ChaCha8Rng, len: std::ops::Range<usize>) -> String {
    let len = rng.random_range(len);
    rng.sample_iter(Alphanumeric)
        .take(len)
        .map(|b| (b as char).to_ascii_lowercase())
        .collect()
}

/// A real table with a random schema: 2 to 8 columns, each numeric
/// (integer or decimal) or categorical over a small random vocabulary.
pub fn random_real_table(name: &str, rows: usize, seed: u64) -> TableRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.random_range(2..=8);
    let columns: Vec<String> = (0..width)
        .map(|i| format!("{}{i}", random_word(&mut rng, 2..8)))
        .collect();
    enum Kind {
        Int(i64, i64),
        Dec(f64, f64, usize),
        Cat(Vec<String>),
    }
    let kinds: Vec<Kind> = (0..width)
        .map(|_| match rng.random_range(0..3) {
            0 => {
                let lo = rng.random_range(-100..100);
                Kind::Int(lo, lo + rng.random_range(1..1000))
            }
            1 => {
                let lo = rng.random_range(-50.0..50.0);
                Kind::Dec(lo, lo + rng.random_range(0.5..100.0), rng.random_range(1..4))
            }
            _ => {
                let k = rng.random_range(2..7);
                Kind::Cat((0..k).map(|_| random_word(&mut rng, 3..9)).collect())
            }
        })
        .collect();
    let data = (0..rows)
        .map(|_| {
            kinds
                .iter()
                .map(|k| match k {
                    Kind::Int(lo, hi) => Cell::new(rng.random_range(*lo..=*hi).to_string()),
                    Kind::Dec(lo, hi, d) => Cell::new(format!("{:.*}", *d, rng.random_range(*lo..*hi))),
                    Kind::Cat(values) => Cell::new(values[rng.random_range(0..values.len())].clone()),
                })
                .collect()
        })
        .collect();
    TableRecord::from_real_rows(name, Domain::Other, &columns, data)
}

/// [`random_real_table`] mixed with surrogate synthetic rows.
pub fn random_mixed_table(name: &str, real_rows: usize, seed: u64) -> TableRecord {
    toy::mix_with_surrogates(&random_real_table(name, real_rows, seed), seed.wrapping_add(1)).expect("mixable table")
}

/// Prints one acceptance line and returns whether it passed.
pub fn report(id: usize, title: &str, passed: bool, detail: &str, seconds: f64) -> bool {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{status}] {title}: {detail} ({seconds:.1}s)");
    passed
}
