use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{auc_and_accuracy, bootstrap_metric, compute_auc, BootstrapResult, MeanSd};
use crate::corpus::{Domain, Label, SplitPlan, TableRecord};
use crate::error::{Error, Result};
use crate::model::RowScorer;
use crate::perturbation::{apply_protocol, PerturbationConfig};
use crate::textualizer::{apply_permutation, sample_permutation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableMetrics {
    /// `None` when the table holds a single class.
    pub auc: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance: f64,
    pub auc: f64,
}

/// Pooled metrics over a set of tables, plus the per-table breakdown.
/// Synthetic is the positive class; scores at 0.5 or above count as synthetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub scope: Scope,
    pub auc: f64,
    pub accuracy: f64,
    pub per_table: BTreeMap<String, TableMetrics>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap: Option<BootstrapResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub permutation_sweep: Option<Vec<SweepPoint>>,
}

/// Scores and labels of every row, pooled in table order.
pub fn score_tables(scorer: &dyn RowScorer, tables: &[TableRecord]) -> Result<(Vec<f64>, Vec<Label>)> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for t in tables {
        scores.extend(scorer.score_table(t)?);
        labels.extend_from_slice(&t.labels);
    }
    Ok((scores, labels))
}

pub fn evaluate_tables(scorer: &dyn RowScorer, tables: &[TableRecord], scope: Scope) -> Result<EvaluationReport> {
    if tables.is_empty() {
        return Err(Error::protocol("no tables to evaluate"));
    }
    let mut per_table = BTreeMap::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for t in tables {
        let s = scorer.score_table(t)?;
        let (auc, accuracy) = auc_and_accuracy(&s, &t.labels)?;
        per_table.insert(t.name.clone(), TableMetrics { auc, accuracy });
        scores.extend(s);
        labels.extend_from_slice(&t.labels);
    }
    let (auc, accuracy) = auc_and_accuracy(&scores, &labels)?;
    let auc = auc.ok_or_else(|| Error::metric("pooled tables hold a single class"))?;
    Ok(EvaluationReport {
        scope,
        auc,
        accuracy,
        per_table,
        bootstrap: None,
        permutation_sweep: None,
    })
}

fn tables_named<'a>(corpus: &'a [TableRecord], names: impl IntoIterator<Item = &'a String>) -> Result<Vec<TableRecord>> {
    names
        .into_iter()
        .map(|n| {
            corpus
                .iter()
                .find(|t| &t.name == n)
                .cloned()
                .ok_or_else(|| Error::protocol(format!("table {n:?} is not in the corpus")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold_id: usize,
    pub report: EvaluationReport,
}

/// Per-fold test reports and their mean ± population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTableReport {
    pub folds: Vec<FoldReport>,
    pub auc: MeanSd,
    pub accuracy: MeanSd,
    pub dispersion: String,
}

/// Trains one model per plan with `factory(plan, train, validation)` and
/// evaluates it on that plan's test tables.
pub fn run_cross_table<S, F>(mut factory: F, plans: &[SplitPlan], corpus: &[TableRecord]) -> Result<CrossTableReport>
where
    S: RowScorer,
    F: FnMut(&SplitPlan, &[TableRecord], &[TableRecord]) -> Result<S>,
{
    if plans.is_empty() {
        return Err(Error::protocol("cross-table protocol needs at least one split plan"));
    }
    let mut folds = Vec::new();
    for plan in plans {
        if !plan.is_disjoint() {
            return Err(Error::protocol(format!("fold {} reuses a table across roles", plan.fold_id)));
        }
        let train = tables_named(corpus, &plan.train_tables)?;
        let validation = tables_named(corpus, &plan.validation_tables)?;
        let test = tables_named(corpus, &plan.test_tables)?;
        log::info!("fold {}: {} train, {} validation, {} test tables", plan.fold_id, train.len(), validation.len(), test.len());
        let model = factory(plan, &train, &validation)?;
        let report = evaluate_tables(&model, &test, Scope::Test)?;
        log::info!("fold {}: test AUC {:.4}, accuracy {:.4}", plan.fold_id, report.auc, report.accuracy);
        folds.push(FoldReport {
            fold_id: plan.fold_id,
            report,
        });
    }
    let aucs: Vec<f64> = folds.iter().map(|f| f.report.auc).collect();
    let accs: Vec<f64> = folds.iter().map(|f| f.report.accuracy).collect();
    Ok(CrossTableReport {
        auc: MeanSd::of(&aucs)?,
        accuracy: MeanSd::of(&accs)?,
        dispersion: "population standard deviation across folds".into(),
        folds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainOptions {
    pub anonymize: bool,
    /// Noise for the source domain's synthetic rows; target tables are never perturbed.
    pub perturb: Option<PerturbationConfig>,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl CrossDomainOptions {
    /// `plain`, `AF`, `N` or `AFN`.
    pub fn row_label(&self) -> String {
        match (self.anonymize, self.perturb.is_some()) {
            (false, false) => "plain".into(),
            (true, false) => "AF".into(),
            (false, true) => "N".into(),
            (true, true) => "AFN".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainCell {
    pub target: Domain,
    pub tables: Vec<String>,
    pub bootstrap: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDomainReport {
    pub row_label: String,
    pub source: Domain,
    pub cells: Vec<CrossDomainCell>,
}

/// Trains on every source-domain table via `factory(train_tables, options)`
/// and bootstraps the AUC on each target domain.
pub fn run_cross_domain<S, F>(
    mut factory: F,
    corpus: &[TableRecord],
    source: Domain,
    targets: &[Domain],
    options: &CrossDomainOptions,
) -> Result<CrossDomainReport>
where
    S: RowScorer,
    F: FnMut(&[TableRecord], &CrossDomainOptions) -> Result<S>,
{
    if targets.is_empty() {
        return Err(Error::protocol("no target domains"));
    }
    if targets.contains(&source) {
        return Err(Error::protocol(format!("source domain {source} cannot also be a target")));
    }
    let in_domain = |d: Domain| corpus.iter().filter(|t| t.domain == d).cloned().collect::<Vec<_>>();
    let mut train = in_domain(source);
    if train.is_empty() {
        return Err(Error::protocol(format!("source domain {source} has no tables")));
    }
    if let Some(cfg) = &options.perturb {
        for (i, t) in train.iter_mut().enumerate() {
            let cfg = PerturbationConfig {
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            *t = apply_protocol(t, &cfg)?.table;
        }
    }
    let model = factory(&train, options)?;
    if model.anonymize() != options.anonymize {
        return Err(Error::protocol("model anonymization differs from the protocol options"));
    }
    let mut cells = Vec::new();
    for (k, &target) in targets.iter().enumerate() {
        let tables = in_domain(target);
        if tables.is_empty() {
            return Err(Error::protocol(format!("target domain {target} has no tables")));
        }
        let (scores, labels) = score_tables(&model, &tables)?;
        let bootstrap = bootstrap_metric(
            &scores,
            &labels,
            compute_auc,
            options.resamples,
            options.level,
            options.seed.wrapping_add(k as u64),
        )?;
        cells.push(CrossDomainCell {
            target,
            tables: tables.iter().map(|t| t.name.clone()).collect(),
            bootstrap,
        });
    }
    Ok(CrossDomainReport {
        row_label: options.row_label(),
        source,
        cells,
    })
}

/// Pooled AUC after permuting each table's columns at every distance.
/// Each (distance, table) pair draws its own permutation.
pub fn permutation_sweep(
    scorer: &dyn RowScorer,
    tables: &[TableRecord],
    distances: &[f64],
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(distances.len());
    for (k, &distance) in distances.iter().enumerate() {
        if !(0.0..=1.0).contains(&distance) {
            return Err(Error::protocol(format!("permutation distance {distance} outside [0, 1]")));
        }
        let permuted = tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let s = seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add((k as u64) << 32 | i as u64);
                let spec = sample_permutation(t.schema.len().max(1), distance, s);
                if t.schema.is_empty() {
                    Ok(t.clone())
                } else {
                    apply_permutation(t, &spec)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (scores, labels) = score_tables(scorer, &permuted)?;
        out.push(SweepPoint {
            distance,
            auc: compute_auc(&scores, &labels)?,
        });
    }
    Ok(out)
}

pub fn write_sweep_csv(path: impl AsRef<Path>, points: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| csv_error(path.as_ref(), e))?;
    w.write_record(["distance", "auc"]).map_err(|e| csv_error(path.as_ref(), e))?;
    for p in points {
        w.write_record([p.distance.to_string(), p.auc.to_string()])
            .map_err(|e| csv_error(path.as_ref(), e))?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        line: e.position().map(|p| p.line()),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::toy;
    use crate::model::RowSample;

    /// Scores 1 for synthetic rows, 0 for real ones.
    struct Oracle;

    impl RowScorer for Oracle {
        fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>> {
            Ok(samples.iter().map(|s| s.label.target()).collect())
        }
    }

    /// Depends on the first datum only, so column order matters.
    struct FirstDatum;

    impl RowScorer for FirstDatum {
        fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>> {
            Ok(samples
                .iter()
                .map(|s| {
                    let h = s.datums[0].bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
                    (h % 1000) as f64 / 1000.0
                })
                .collect())
        }
    }

    fn corpus() -> Vec<TableRecord> {
        toy::toy_corpus(40, 1).unwrap()
    }

    #[test]
    fn perfect_scorer() {
        let c = corpus();
        let r = evaluate_tables(&Oracle, &c, Scope::Test).unwrap();
        assert_eq!((r.auc, r.accuracy), (1.0, 1.0));
        assert_eq!(r.per_table.len(), c.len());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json.get("bootstrap").is_none());
    }

    #[test]
    fn cross_table_summary() {
        let c = corpus();
        let plans = crate::corpus::make_split_plans(&c, 2, (2, 1, 1), 3).unwrap();
        let r = run_cross_table(|_, _, _| Ok(Oracle), &plans, &c).unwrap();
        assert_eq!(r.folds.len(), 2);
        assert_eq!(r.auc, MeanSd { mean: 1.0, sd: 0.0 });
        for f in &r.folds {
            let plan = plans.iter().find(|p| p.fold_id == f.fold_id).unwrap();
            assert_eq!(f.report.per_table.keys().cloned().collect::<std::collections::BTreeSet<_>>(), plan.test_tables);
        }
    }

    #[test]
    fn cross_domain_layout() {
        let c = corpus();
        let mut opts = CrossDomainOptions {
            anonymize: false,
            perturb: None,
            resamples: 20,
            level: 0.95,
            seed: 1,
        };
        let r = run_cross_domain(|_, _| Ok(Oracle), &c, Domain::Social, &[Domain::Science], &opts).unwrap();
        assert_eq!(r.row_label, "plain");
        assert_eq!(r.cells.len(), 1);
        assert_eq!(r.cells[0].bootstrap.mean, 1.0);
        assert!(run_cross_domain(|_, _| Ok(Oracle), &c, Domain::Social, &[Domain::Social], &opts).is_err());
        assert!(run_cross_domain(|_, _| Ok(Oracle), &c, Domain::Finance, &[Domain::Science], &opts).is_err());
        opts.perturb = Some(PerturbationConfig::default());
        opts.anonymize = true;
        assert_eq!(opts.row_label(), "AFN");
        // The oracle does not anonymize, so the runner refuses the mismatch.
        assert!(run_cross_domain(|_, _| Ok(Oracle), &c, Domain::Social, &[Domain::Science], &opts).is_err());
    }

    #[test]
    fn sweep_at_zero_matches_plain_evaluation() {
        let c = corpus();
        let plain = evaluate_tables(&FirstDatum, &c, Scope::Test).unwrap().auc;
        let sweep = permutation_sweep(&FirstDatum, &c, &[0.0, 0.2, 0.5, 1.0], 9).unwrap();
        assert_eq!(sweep.len(), 4);
        assert_eq!(sweep[0].auc, plain);
        assert_eq!((sweep[0].distance, sweep[3].distance), (0.0, 1.0));
        let invariant = permutation_sweep(&Oracle, &c, &[0.0, 1.0], 9).unwrap();
        assert!(invariant.iter().all(|p| p.auc == 1.0));
    }

    #[test]
    fn sweep_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &[SweepPoint { distance: 0.5, auc: 0.75 }]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "distance,auc\n0.5,0.75\n");
    }
}
