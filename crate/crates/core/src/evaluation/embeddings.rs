use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::protocol::csv_error;
use crate::corpus::Label;
use crate::error::{Error, Result};
use crate::model::EmbeddingRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingAnalytics {
    /// Mean over table pairs of 1 - cos between centroids of L2-normalized embeddings.
    pub centroid_mean_pairwise_cosine_distance: f64,
    /// Held-out accuracy of a multinomial logistic probe predicting the table.
    pub probe_accuracy: f64,
    pub tables: Vec<String>,
    /// Tables left out of the probe for having fewer than two rows.
    pub excluded_from_probe: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub export_path: Option<PathBuf>,
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (normalized(a), normalized(b));
    let dot: f64 = na.iter().zip(&nb).map(|(x, y)| x * y).sum();
    (1.0 - dot).max(0.0)
}

pub fn analyze_embeddings(records: &[EmbeddingRecord], seed: u64) -> Result<EmbeddingAnalytics> {
    let mut by_table: BTreeMap<&str, Vec<Vec<f64>>> = BTreeMap::new();
    let dim = records.first().map_or(0, |r| r.values.len());
    for r in records {
        if r.values.len() != dim {
            return Err(Error::metric("embeddings of different widths"));
        }
        by_table.entry(&r.table).or_default().push(normalized(&r.values));
    }
    if by_table.len() < 2 {
        return Err(Error::metric("embedding analytics need at least two tables"));
    }
    let centroids: Vec<Vec<f64>> = by_table
        .values()
        .map(|rows| {
            let mut c = vec![0.0; dim];
            for r in rows {
                for (ci, v) in c.iter_mut().zip(r) {
                    *ci += v;
                }
            }
            c.iter().map(|v| v / rows.len() as f64).collect()
        })
        .collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            total += cosine_distance(&centroids[i], &centroids[j]);
            pairs += 1;
        }
    }

    // Stratified 80/20 split.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut excluded = Vec::new();
    let (mut train_x, mut train_y, mut test_x, mut test_y) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut class = 0;
    for (name, rows) in &by_table {
        if rows.len() < 2 {
            log::warn!("table {name} has {} embedding rows; left out of the probe", rows.len());
            excluded.push(name.to_string());
            continue;
        }
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut rng);
        let n_test = ((rows.len() as f64 * 0.2).round() as usize).clamp(1, rows.len() - 1);
        for (k, &i) in order.iter().enumerate() {
            if k < n_test {
                test_x.push(rows[i].clone());
                test_y.push(class);
            } else {
                train_x.push(rows[i].clone());
                train_y.push(class);
            }
        }
        class += 1;
    }
    if class < 2 {
        return Err(Error::metric("probe needs at least two tables with two or more rows"));
    }
    let probe = Probe::fit(&train_x, &train_y, class);
    let correct = test_x
        .iter()
        .zip(&test_y)
        .filter(|(x, y)| probe.predict(x) == **y)
        .count();
    Ok(EmbeddingAnalytics {
        centroid_mean_pairwise_cosine_distance: total / pairs as f64,
        probe_accuracy: correct as f64 / test_x.len() as f64,
        tables: by_table.keys().map(|s| s.to_string()).collect(),
        excluded_from_probe: excluded,
        export_path: None,
    })
}

/// Multinomial logistic regression on whitened features, fitted by
/// full-batch gradient descent with a small L2 penalty. Whitening uses the
/// Cholesky factor of the training covariance, so gradient descent sees a
/// well-conditioned problem even when a few directions dominate.
#[derive(Debug, Clone)]
pub struct Probe {
    mean: Vec<f64>,
    /// Row-major lower-triangular factor, `dim x dim`.
    chol: Vec<f64>,
    /// `(dim + 1) x classes`, bias row last.
    weights: Vec<f64>,
    classes: usize,
}

const PROBE_STEPS: usize = 400;
const PROBE_RATE: f64 = 0.5;
const PROBE_L2: f64 = 1e-4;
/// Covariance ridge relative to the mean variance; directions quieter than
/// this are treated as noise.
const PROBE_RIDGE: f64 = 1e-6;

/// Lower Cholesky factor of a symmetric positive-definite `n x n` matrix.
fn cholesky(a: &[f64], n: usize) -> Vec<f64> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                l[i * n + i] = (a[i * n + i] - s).max(f64::MIN_POSITIVE).sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    l
}

impl Probe {
    pub fn fit(x: &[Vec<f64>], y: &[usize], classes: usize) -> Self {
        let n = x.len();
        let dim = x.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n as f64;
            }
        }
        let mut cov = vec![0.0; dim * dim];
        for row in x {
            let c: Vec<f64> = row.iter().zip(&mean).map(|(v, m)| v - m).collect();
            for i in 0..dim {
                for j in 0..=i {
                    cov[i * dim + j] += c[i] * c[j] / n as f64;
                }
            }
        }
        let trace: f64 = (0..dim).map(|i| cov[i * dim + i]).sum();
        let ridge = if trace > 0.0 {
            PROBE_RIDGE * trace / dim as f64
        } else {
            1.0
        };
        for i in 0..dim {
            cov[i * dim + i] += ridge;
            for j in 0..i {
                cov[j * dim + i] = cov[i * dim + j];
            }
        }
        let mut probe = Self {
            mean,
            chol: cholesky(&cov, dim),
            weights: vec![0.0; (dim + 1) * classes],
            classes,
        };
        let z: Vec<Vec<f64>> = x.iter().map(|r| probe.whiten(r)).collect();
        let mut grad = vec![0.0; probe.weights.len()];
        for _ in 0..PROBE_STEPS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for (row, &label) in z.iter().zip(y) {
                let p = probe.probabilities_whitened(row);
                for c in 0..classes {
                    let err = (p[c] - if c == label { 1.0 } else { 0.0 }) / n as f64;
                    for (j, v) in row.iter().enumerate() {
                        grad[j * classes + c] += err * v;
                    }
                    grad[dim * classes + c] += err;
                }
            }
            for (i, (w, g)) in probe.weights.iter_mut().zip(&grad).enumerate() {
                let penalty = if i < dim * classes { PROBE_L2 * *w } else { 0.0 };
                *w -= PROBE_RATE * (g + penalty);
            }
        }
        probe
    }

    /// Solves `L z = x - mean` by forward substitution.
    fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        let mut z = vec![0.0; dim];
        for i in 0..dim {
            let s: f64 = (0..i).map(|k| self.chol[i * dim + k] * z[k]).sum();
            z[i] = (x[i] - self.mean[i] - s) / self.chol[i * dim + i];
        }
        z
    }

    fn probabilities_whitened(&self, z: &[f64]) -> Vec<f64> {
        let k = self.classes;
        let dim = z.len();
        let mut logits: Vec<f64> = self.weights[dim * k..].to_vec();
        for (j, v) in z.iter().enumerate() {
            for (c, l) in logits.iter_mut().enumerate() {
                *l += self.weights[j * k + c] * v;
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in &mut logits {
            *l = (*l - max).exp();
            total += *l;
        }
        logits.iter().map(|l| l / total).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities_whitened(&self.whiten(x));
        (0..self.classes)
            .max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a)))
            .unwrap_or(0)
    }
}

/// Columns `row_id, table, label, e0..e{d-1}`.
pub fn write_embeddings_csv(path: impl AsRef<Path>, records: &[EmbeddingRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let dim = records.first().map_or(0, |r| r.values.len());
    let mut header = vec!["row_id".to_string(), "table".into(), "label".into()];
    header.extend((0..dim).map(|i| format!("e{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in records {
        let label = if r.label.is_synthetic() { "synthetic" } else { "real" };
        let mut rec = vec![r.row_id.to_string(), r.table.clone(), label.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<Vec<EmbeddingRecord>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let bad = |m: &str| Error::Ingestion {
            path: path.to_path_buf(),
            line: Some(i as u64 + 2),
            message: m.to_string(),
        };
        let row_id = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(|| bad("bad row_id"))?;
        let table = rec.get(1).ok_or_else(|| bad("missing table"))?.to_string();
        let label = match rec.get(2) {
            Some("real") => Label::Real,
            Some("synthetic") => Label::Synthetic,
            _ => return Err(bad("bad label")),
        };
        let values = rec
            .iter()
            .skip(3)
            .map(|s| s.parse::<f64>().map_err(|_| bad("bad embedding value")))
            .collect::<Result<_>>()?;
        out.push(EmbeddingRecord {
            row_id,
            table,
            label,
            values,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(table: &str, values: Vec<f64>) -> EmbeddingRecord {
        EmbeddingRecord {
            row_id: 0,
            table: table.into(),
            label: Label::Real,
            values,
        }
    }

    #[test]
    fn identical_embeddings() {
        let rs: Vec<_> = (0..20).map(|i| rec(if i % 2 == 0 { "a" } else { "b" }, vec![1.0, 2.0])).collect();
        let a = analyze_embeddings(&rs, 1).unwrap();
        assert!(a.centroid_mean_pairwise_cosine_distance.abs() < 1e-12);
    }

    #[test]
    fn orthogonal_centroids() {
        let rs: Vec<_> = (0..20)
            .map(|i| if i % 2 == 0 { rec("a", vec![3.0, 0.0]) } else { rec("b", vec![0.0, 0.5]) })
            .collect();
        let a = analyze_embeddings(&rs, 1).unwrap();
        assert!((a.centroid_mean_pairwise_cosine_distance - 1.0).abs() < 1e-12);
        assert_eq!(a.probe_accuracy, 1.0);
    }

    #[test]
    fn separable_tables() {
        let tables = ["a", "b", "c"];
        let rs: Vec<_> = (0..60)
            .map(|i| {
                let t = i % 3;
                let mut v = vec![0.1; 4];
                v[t] = 1.0 + (i as f64) * 1e-3;
                rec(tables[t], v)
            })
            .collect();
        assert_eq!(analyze_embeddings(&rs, 2).unwrap().probe_accuracy, 1.0);
    }

    #[test]
    fn tiny_tables_are_excluded() {
        let mut rs: Vec<_> = (0..20).map(|i| rec(if i % 2 == 0 { "a" } else { "b" }, vec![i as f64, 1.0])).collect();
        rs.push(rec("lonely", vec![1.0, 1.0]));
        let a = analyze_embeddings(&rs, 1).unwrap();
        assert_eq!(a.excluded_from_probe, ["lonely"]);
        assert_eq!(a.tables.len(), 3);
        assert!(analyze_embeddings(&rs[..1], 1).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let rs = vec![rec("a", vec![0.25, -1.5]), EmbeddingRecord { row_id: 1, label: Label::Synthetic, ..rec("b", vec![3.0, 0.0]) }];
        write_embeddings_csv(&path, &rs).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("row_id,table,label,e0,e1\n"));
        assert_eq!(read_embeddings_csv(&path).unwrap(), rs);
    }
}
