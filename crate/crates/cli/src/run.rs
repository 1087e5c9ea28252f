//! Fully resolved commands. Each is written to `config.json` in the output
//! directory before it runs, and `tabwild replay` runs it again.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tabwild_core::corpus::{
    load_table, make_split_plans, surrogate_synthesize, Domain, SplitPlan, SurrogateMode, TableRecord,
};
use tabwild_core::evaluation::{
    analyze_embeddings, bootstrap_metric, compute_auc, evaluate_tables, permutation_sweep, run_cross_domain,
    run_cross_table, score_tables, write_embeddings_csv, write_sweep_csv, CrossDomainOptions, EvaluationReport,
    Scope,
};
use tabwild_core::model::{DetectorConfig, RowSample};
use tabwild_core::perturbation::{apply_protocol, PerturbationConfig};
use tabwild_core::training::{train, train_split, TrainingSchedule};
use tabwild_core::Detector;

use crate::error::CliError;
use crate::tables::{check_table_name, select, write_table_dir, CorpusSource};

pub const CONFIG_FILE: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "model.twld";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Run {
    Train(TrainRun),
    Evaluate(EvaluateRun),
    Protocol(ProtocolRun),
    Perturb(PerturbRun),
    Mix(MixRun),
    SynthesizeSurrogate(SurrogateRun),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub corpus: CorpusSource,
    pub split: SplitPlan,
    pub detector: DetectorConfig,
    pub schedule: TrainingSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateRun {
    pub checkpoint: PathBuf,
    pub corpus: CorpusSource,
    /// Tables to evaluate; every table of the corpus when empty.
    pub tables: Vec<String>,
    pub bootstrap: Option<usize>,
    pub level: f64,
    pub permute_distances: Vec<f64>,
    pub export_embeddings: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "setup", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Study {
    CrossTable {
        folds: usize,
        ratios: (usize, usize, usize),
        split_seed: u64,
    },
    CrossDomain {
        source: Domain,
        targets: Vec<Domain>,
        perturb: Option<PerturbationConfig>,
        resamples: usize,
        level: f64,
        bootstrap_seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolRun {
    pub corpus: CorpusSource,
    pub study: Study,
    pub detector: DetectorConfig,
    pub schedule: TrainingSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbRun {
    pub corpus: CorpusSource,
    /// Table `i` uses `perturbation.seed + i`.
    pub perturbation: PerturbationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRun {
    pub corpus: CorpusSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateRun {
    pub real: PathBuf,
    pub mode: SurrogateMode,
    /// Defaults to the real table's row count.
    pub rows: Option<usize>,
    pub seed: u64,
    pub output_name: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

impl Run {
    /// Freezes the run into `out/config.json`, then executes it.
    pub fn execute(&self, out: &Path) -> Result<(), CliError> {
        fs::create_dir_all(out)
            .map_err(|e| CliError::Config(format!("cannot create output directory {}: {e}", out.display())))?;
        write_json(&out.join(CONFIG_FILE), self)?;
        match self {
            Run::Train(r) => r.execute(out),
            Run::Evaluate(r) => r.execute(out),
            Run::Protocol(r) => r.execute(out),
            Run::Perturb(r) => r.execute(out),
            Run::Mix(r) => r.execute(out),
            Run::SynthesizeSurrogate(r) => r.execute(out),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    best_epoch: usize,
    best_validation_auc: f64,
    stopping_reason: tabwild_core::training::StopReason,
    validation_source: tabwild_core::training::ValidationSource,
    total_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    test: Option<&'a EvaluationReport>,
}

impl TrainRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        let corpus = self.corpus.load()?;
        let (model, log) = train_split(&self.split, &corpus, self.detector.clone(), &self.schedule)?;
        model.save(out.join(CHECKPOINT_FILE))?;
        log.write_json_lines(out.join("train_log.jsonl"))?;
        let test = if self.split.test_tables.is_empty() {
            None
        } else {
            let names: Vec<String> = self.split.test_tables.iter().cloned().collect();
            Some(evaluate_tables(&model, &select(corpus, &names)?, Scope::Test)?)
        };
        log::info!(
            "best epoch {} with validation AUC {:.4}",
            log.best_epoch,
            log.best_validation_auc
        );
        write_json(
            &out.join("summary.json"),
            &TrainSummary {
                best_epoch: log.best_epoch,
                best_validation_auc: log.best_validation_auc,
                stopping_reason: log.stopping_reason,
                validation_source: log.validation_source,
                total_steps: log.total_steps,
                test: test.as_ref(),
            },
        )
    }
}

impl EvaluateRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        let model = Detector::load(&self.checkpoint)?;
        let tables = select(self.corpus.load()?, &self.tables)?;
        let mut report = evaluate_tables(&model, &tables, Scope::Test)?;
        if let Some(resamples) = self.bootstrap {
            let (scores, labels) = score_tables(&model, &tables)?;
            report.bootstrap = Some(bootstrap_metric(&scores, &labels, compute_auc, resamples, self.level, self.seed)?);
        }
        if !self.permute_distances.is_empty() {
            let sweep = permutation_sweep(&model, &tables, &self.permute_distances, self.seed)?;
            write_sweep_csv(out.join("sweep.csv"), &sweep)?;
            report.permutation_sweep = Some(sweep);
        }
        if self.export_embeddings {
            let samples: Vec<RowSample> = tables
                .iter()
                .flat_map(|t| RowSample::from_table(t, model.config().anonymize))
                .collect();
            let records = model.extract_embeddings(&samples)?;
            let path = out.join("embeddings.csv");
            write_embeddings_csv(&path, &records)?;
            if tables.len() >= 2 {
                let mut analytics = analyze_embeddings(&records, self.seed)?;
                analytics.export_path = Some(path);
                write_json(&out.join("embedding_analytics.json"), &analytics)?;
            } else {
                log::warn!("embedding analytics need two tables; only the CSV was written");
            }
        }
        log::info!("AUC {:.4}, accuracy {:.4}", report.auc, report.accuracy);
        write_json(&out.join("report.json"), &report)
    }
}

impl ProtocolRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        let corpus = self.corpus.load()?;
        match &self.study {
            Study::CrossTable {
                folds,
                ratios,
                split_seed,
            } => {
                let plans = make_split_plans(&corpus, *folds, *ratios, *split_seed)?;
                let report = run_cross_table(
                    |plan, train_tables, validation| {
                        log::info!("fold {}: training on {} tables", plan.fold_id, train_tables.len());
                        let schedule = TrainingSchedule {
                            seed: self.schedule.seed.wrapping_add(plan.fold_id as u64),
                            ..self.schedule.clone()
                        };
                        Ok(train::<f32>(self.detector.clone(), train_tables, validation, &schedule)?.0)
                    },
                    &plans,
                    &corpus,
                )?;
                log::info!("AUC {:.4} ± {:.4}", report.auc.mean, report.auc.sd);
                write_json(&out.join("summary.json"), &report)
            }
            Study::CrossDomain {
                source,
                targets,
                perturb,
                resamples,
                level,
                bootstrap_seed,
            } => {
                let options = CrossDomainOptions {
                    anonymize: self.detector.anonymize,
                    perturb: perturb.clone(),
                    resamples: *resamples,
                    level: *level,
                    seed: *bootstrap_seed,
                };
                let report = run_cross_domain(
                    |train_tables, _| Ok(train::<f32>(self.detector.clone(), train_tables, &[], &self.schedule)?.0),
                    &corpus,
                    *source,
                    targets,
                    &options,
                )?;
                write_json(&out.join("summary.json"), &report)
            }
        }
    }
}

impl PerturbRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        let corpus = self.corpus.load()?;
        let mut replaced = BTreeMap::new();
        let mut tables = Vec::with_capacity(corpus.len());
        for (i, t) in corpus.iter().enumerate() {
            let config = PerturbationConfig {
                seed: self.perturbation.seed.wrapping_add(i as u64),
                ..self.perturbation.clone()
            };
            let p = apply_protocol(t, &config)?;
            replaced.insert(t.name.clone(), p.replaced.len());
            tables.push(p.table);
        }
        write_table_dir(&out.join("tables"), &tables)?;
        write_json(&out.join("summary.json"), &serde_json::json!({ "replaced_rows": replaced }))
    }
}

impl MixRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        let tables = self.corpus.load()?;
        write_table_dir(&out.join("tables"), &tables)?;
        let summary: BTreeMap<&str, serde_json::Value> = tables
            .iter()
            .map(|t: &TableRecord| {
                let synthetic = t.labels.iter().filter(|l| l.is_synthetic()).count();
                (
                    t.name.as_str(),
                    serde_json::json!({ "domain": t.domain, "real": t.len() - synthetic, "synthetic": synthetic }),
                )
            })
            .collect();
        write_json(&out.join("summary.json"), &summary)
    }
}

impl SurrogateRun {
    fn execute(&self, out: &Path) -> Result<(), CliError> {
        check_table_name(&self.output_name)?;
        let real = load_table(&self.real, &self.output_name, Domain::Other)?;
        let rows = surrogate_synthesize(&real, self.mode, self.rows.unwrap_or(real.len()), self.seed)?;
        let path = out.join(format!("{}.csv", self.output_name));
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Data(e.to_string()))?;
        let csv_err = |e: csv::Error| CliError::Data(format!("{}: {e}", path.display()));
        w.write_record(real.column_names()).map_err(csv_err)?;
        for row in &rows {
            w.write_record(row.iter().map(|c| c.text.as_str())).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}
