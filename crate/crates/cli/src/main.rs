//! `tabwild`: train and evaluate detectors of synthetic tabular rows.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.

mod error;
mod run;
mod tables;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tabwild_core::corpus::{Domain, SplitPlan, SurrogateMode};
use tabwild_core::evaluation::{BOOTSTRAP_LEVEL, BOOTSTRAP_RESAMPLES};
use tabwild_core::model::{DetectorConfig, Variant};
use tabwild_core::perturbation::PerturbationConfig;
use tabwild_core::training::{Augment, TrainingSchedule};

use error::CliError;
use run::{EvaluateRun, MixRun, PerturbRun, ProtocolRun, Run, Study, SurrogateRun, TrainRun};
use tables::CorpusSource;

#[derive(Parser)]
#[command(name = "tabwild", version, about = "Detect synthetic rows in tables with unseen schemas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one detector on a split and save its checkpoint.
    Train {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score tables with a saved checkpoint.
    Evaluate {
        #[arg(long = "ckpt")]
        checkpoint: PathBuf,
        #[command(flatten)]
        corpus: CorpusArgs,
        /// Evaluate only these tables (comma separated).
        #[arg(long = "table", value_delimiter = ',')]
        tables: Vec<String>,
        /// Bootstrap resamples for a confidence interval on the AUC.
        #[arg(long, num_args = 0..=1, default_missing_value = "500")]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = BOOTSTRAP_LEVEL)]
        level: f64,
        /// Column-permutation distances for an AUC sweep, e.g. 0,0.2,0.5,1.0.
        #[arg(long, value_delimiter = ',')]
        permute_distance: Vec<f64>,
        /// Write CLS-Target embeddings and their table-separability analytics.
        #[arg(long)]
        export_embeddings: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full cross-table or cross-domain study.
    Protocol {
        #[command(subcommand)]
        setup: ProtocolSetup,
    },
    /// Replace a fraction of each table's synthetic rows with noisy versions.
    Perturb {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Mix real and synthetic rows into balanced tables.
    Mix {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic rows imitating a real CSV with a simple surrogate generator.
    SynthesizeSurrogate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long, value_enum, default_value_t = SurrogateArg::Independent)]
        mode: SurrogateArg,
        /// Number of rows; defaults to the real table's row count.
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file stem; defaults to `<real stem>_<mode>`.
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a frozen `config.json` again.
    Replay {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ProtocolSetup {
    /// Rotating train/validation/test folds over tables.
    CrossTable {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 3)]
        folds: usize,
        /// Table counts for train, validation and test.
        #[arg(long, value_parser = parse_ratios, default_value = "8,3,3")]
        ratios: (usize, usize, usize),
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on one domain, bootstrap the AUC on the others.
    CrossDomain {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        source: Domain,
        /// Target domains; every other domain of the corpus when omitted.
        #[arg(long, value_delimiter = ',')]
        targets: Vec<Domain>,
        /// Add noise to the source domain's synthetic rows.
        #[arg(long)]
        perturb: bool,
        #[command(flatten)]
        noise: NoiseArgs,
        #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
        bootstrap: usize,
        #[arg(long, default_value_t = BOOTSTRAP_LEVEL)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        bootstrap_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "corpus_source")]
struct CorpusSourceArgs {
    /// JSON manifest of real and synthetic CSV files.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Use the built-in toy corpus with this many real rows per table.
    #[arg(long)]
    toy: Option<usize>,
    /// Directory of mixed tables written by `mix` or `perturb`.
    #[arg(long = "tables")]
    table_dir: Option<PathBuf>,
}

#[derive(Args)]
struct CorpusArgs {
    #[command(flatten)]
    source: CorpusSourceArgs,
    /// Seed of the real/synthetic mixing (manifest) or of the toy corpus.
    #[arg(long, default_value_t = 0)]
    corpus_seed: u64,
    /// Surrogate generator of the toy corpus.
    #[arg(long, value_enum, default_value_t = SurrogateArg::Jitter)]
    toy_surrogate: SurrogateArg,
}

#[derive(Args)]
struct SplitArgs {
    /// Fold index of a seeded rotation split.
    #[arg(long, conflicts_with = "train_tables")]
    fold: Option<usize>,
    #[arg(long, default_value_t = 3)]
    folds: usize,
    #[arg(long, value_parser = parse_ratios, default_value = "8,3,3")]
    ratios: (usize, usize, usize),
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// Explicit train tables (comma separated).
    #[arg(long = "train-tables", value_delimiter = ',')]
    train_tables: Vec<String>,
    #[arg(long = "validation-tables", value_delimiter = ',', requires = "train_tables")]
    validation_tables: Vec<String>,
    #[arg(long = "test-tables", value_delimiter = ',', requires = "train_tables")]
    test_tables: Vec<String>,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, value_enum, default_value_t = VariantArg::DatumWise)]
    variant: VariantArg,
    /// Adversarial table classifier behind gradient reversal.
    #[arg(long)]
    adapt: bool,
    /// Replace column names by their positions.
    #[arg(long)]
    anonymize: bool,
    #[arg(long, value_enum, default_value_t = AugmentArg::None)]
    augment: AugmentArg,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Share of steps before the adversarial weight starts rising.
    #[arg(long)]
    warmup: Option<f64>,
    /// Seed of initialization, shuffling, dropout and augmentation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NoiseArgs {
    #[arg(long, default_value_t = 0.2)]
    row_fraction: f64,
    #[arg(long, default_value_t = 0.5)]
    cell_probability: f64,
    /// Weights of placeholder, scramble and anagram noise.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    noise_weights: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    DatumWise,
    FlatText,
}

#[derive(Clone, Copy, ValueEnum)]
enum AugmentArg {
    None,
    DynamicPerm,
}

#[derive(Clone, Copy, ValueEnum)]
enum SurrogateArg {
    Independent,
    Jitter,
}

impl From<SurrogateArg> for SurrogateMode {
    fn from(a: SurrogateArg) -> Self {
        match a {
            SurrogateArg::Independent => SurrogateMode::IndependentMarginals,
            SurrogateArg::Jitter => SurrogateMode::Jitter,
        }
    }
}

fn parse_ratios(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse().map_err(|_| format!("bad table count {p:?}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err("expected three counts: train,validation,test".into()),
    }
}

/// Absolute form of an input path that must exist.
fn existing(path: &Path, what: &str) -> Result<PathBuf, CliError> {
    path.canonicalize()
        .map_err(|e| CliError::Config(format!("{what} {}: {e}", path.display())))
}

impl CorpusArgs {
    fn resolve(&self) -> Result<CorpusSource, CliError> {
        let s = &self.source;
        Ok(match (&s.manifest, s.toy, &s.table_dir) {
            (Some(path), _, _) => CorpusSource::Manifest {
                path: existing(path, "manifest")?,
                mix_seed: self.corpus_seed,
            },
            (_, Some(rows), _) => CorpusSource::Toy {
                rows,
                seed: self.corpus_seed,
                surrogate: self.toy_surrogate.into(),
            },
            (_, _, Some(dir)) => CorpusSource::Tables {
                dir: existing(dir, "table directory")?,
            },
            _ => unreachable!("clap requires one corpus source"),
        })
    }
}

impl SplitArgs {
    fn resolve(&self, corpus: &CorpusSource) -> Result<SplitPlan, CliError> {
        if !self.train_tables.is_empty() {
            fn names(v: &[String]) -> Vec<&str> {
                v.iter().map(String::as_str).collect()
            }
            let plan = SplitPlan::explicit(
                &names(&self.train_tables),
                &names(&self.validation_tables),
                &names(&self.test_tables),
            );
            if !plan.is_disjoint() {
                return Err(CliError::Config("a table appears in more than one split role".into()));
            }
            return Ok(plan);
        }
        let fold = self
            .fold
            .ok_or_else(|| CliError::Config("give --fold or --train-tables".into()))?;
        if fold >= self.folds {
            return Err(CliError::Config(format!("fold {fold} out of range for {} folds", self.folds)));
        }
        let tables = corpus.load()?;
        let plans = tabwild_core::corpus::make_split_plans(&tables, self.folds, self.ratios, self.split_seed)?;
        Ok(plans[fold].clone())
    }
}

impl ModelArgs {
    fn resolve(&self) -> Result<(DetectorConfig, TrainingSchedule), CliError> {
        let d = DetectorConfig::default();
        let detector = DetectorConfig {
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            layers: self.layers.unwrap_or(d.layers),
            heads: self.heads.unwrap_or(d.heads),
            dropout: self.dropout.unwrap_or(d.dropout),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            variant: match self.variant {
                VariantArg::DatumWise => Variant::DatumWise,
                VariantArg::FlatText => Variant::FlatText,
            },
            adaptation: self.adapt,
            anonymize: self.anonymize,
            ..d
        };
        let s = TrainingSchedule::default();
        let schedule = TrainingSchedule {
            max_epochs: self.epochs.unwrap_or(s.max_epochs),
            patience: self.patience.unwrap_or(s.patience),
            warmup_fraction: self.warmup.unwrap_or(s.warmup_fraction),
            augment: match self.augment {
                AugmentArg::None => Augment::None,
                AugmentArg::DynamicPerm => Augment::DynamicPermutation,
            },
            seed: self.seed,
        };
        schedule.validate()?;
        // Table classes are filled in from the train split at training time.
        let check = DetectorConfig {
            table_names: if detector.adaptation { vec!["a".into(), "b".into()] } else { Vec::new() },
            ..detector.clone()
        };
        check.validate()?;
        Ok((detector, schedule))
    }
}

impl NoiseArgs {
    fn resolve(&self, seed: u64) -> Result<PerturbationConfig, CliError> {
        let d = PerturbationConfig::default();
        let config = PerturbationConfig {
            row_fraction: self.row_fraction,
            cell_probability: self.cell_probability,
            categorical_noise_weights: match self.noise_weights.as_deref() {
                Some([a, b, c]) => [*a, *b, *c],
                _ => d.categorical_noise_weights,
            },
            seed,
            ..d
        };
        config.validate()?;
        Ok(config)
    }
}

fn default_targets(corpus: &CorpusSource, source: Domain) -> Result<Vec<Domain>, CliError> {
    let mut domains: Vec<Domain> = corpus.load()?.iter().map(|t| t.domain).filter(|d| *d != source).collect();
    domains.sort();
    domains.dedup();
    Ok(domains)
}

/// Resolves flags into a frozen run and its output directory.
fn resolve(command: Command) -> Result<(Run, PathBuf), CliError> {
    Ok(match command {
        Command::Train {
            corpus,
            split,
            model,
            out,
        } => {
            let corpus = corpus.resolve()?;
            let split = split.resolve(&corpus)?;
            let (detector, schedule) = model.resolve()?;
            let run = TrainRun {
                corpus,
                split,
                detector,
                schedule,
            };
            (Run::Train(run), out)
        }
        Command::Evaluate {
            checkpoint,
            corpus,
            tables,
            bootstrap,
            level,
            permute_distance,
            export_embeddings,
            seed,
            out,
        } => {
            let run = EvaluateRun {
                checkpoint: existing(&checkpoint, "checkpoint")?,
                corpus: corpus.resolve()?,
                tables,
                bootstrap,
                level,
                permute_distances: permute_distance,
                export_embeddings,
                seed,
            };
            (Run::Evaluate(run), out)
        }
        Command::Protocol { setup } => match setup {
            ProtocolSetup::CrossTable {
                corpus,
                model,
                folds,
                ratios,
                split_seed,
                out,
            } => {
                let (detector, schedule) = model.resolve()?;
                let run = ProtocolRun {
                    corpus: corpus.resolve()?,
                    study: Study::CrossTable {
                        folds,
                        ratios,
                        split_seed,
                    },
                    detector,
                    schedule,
                };
                (Run::Protocol(run), out)
            }
            ProtocolSetup::CrossDomain {
                corpus,
                model,
                source,
                targets,
                perturb,
                noise,
                bootstrap,
                level,
                bootstrap_seed,
                out,
            } => {
                let corpus = corpus.resolve()?;
                let (detector, schedule) = model.resolve()?;
                let targets = if targets.is_empty() {
                    default_targets(&corpus, source)?
                } else {
                    targets
                };
                let perturb = if perturb {
                    Some(noise.resolve(schedule.seed)?)
                } else {
                    None
                };
                let run = ProtocolRun {
                    corpus,
                    study: Study::CrossDomain {
                        source,
                        targets,
                        perturb,
                        resamples: bootstrap,
                        level,
                        bootstrap_seed,
                    },
                    detector,
                    schedule,
                };
                (Run::Protocol(run), out)
            }
        },
        Command::Perturb {
            corpus,
            noise,
            seed,
            out,
        } => {
            let run = PerturbRun {
                corpus: corpus.resolve()?,
                perturbation: noise.resolve(seed)?,
            };
            (Run::Perturb(run), out)
        }
        Command::Mix { corpus, out } => (
            Run::Mix(MixRun {
                corpus: corpus.resolve()?,
            }),
            out,
        ),
        Command::SynthesizeSurrogate {
            real,
            mode,
            rows,
            seed,
            name,
            out,
        } => {
            let real = existing(&real, "real table")?;
            let output_name = name.unwrap_or_else(|| {
                let stem = real.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let mode = match mode {
                    SurrogateArg::Independent => "independent",
                    SurrogateArg::Jitter => "jitter",
                };
                format!("{stem}_{mode}")
            });
            let run = SurrogateRun {
                real,
                mode: mode.into(),
                rows,
                seed,
                output_name,
            };
            (Run::SynthesizeSurrogate(run), out)
        }
        Command::Replay { config, out } => (Run::load(&config)?, out),
    })
}

/// Worker cap from `TABWILD_THREADS`. Training and inference run on one
/// thread, so the value is only validated and reported.
fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("TABWILD_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("TABWILD_THREADS={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = thread_cap().and_then(|threads| {
        if let Some(n) = threads {
            log::debug!("TABWILD_THREADS={n}; work runs on a single thread");
        }
        let (run, out) = resolve(cli.command)?;
        run.execute(&out)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tabwild: {e}");
            e.exit_code()
        }
    }
}
