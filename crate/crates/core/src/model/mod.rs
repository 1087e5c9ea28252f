//! The datum-wise detector, the flat-text baseline, their heads, and the
//! checkpoint format.

mod checkpoint;
mod config;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::{DetectorConfig, Variant};

use crate::corpus::{Label, TableRecord};
use crate::error::{Error, Result};
use crate::numerics::{Encoder, EncoderShape, Graph, ParamId, ParamStore, Var, INIT_STD};
use crate::scalar::Scalar;
use crate::textualizer::{
    batch_geometry, encode_flat, encode_row, flat_length, render_datums, EncodedRow, FlatEncodedRow,
    Vocabulary,
};

/// Running-statistics momentum of the head batch norms.
pub const BN_MOMENTUM: f64 = 0.1;

/// One row ready for encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSample {
    pub datums: Vec<String>,
    pub table: String,
    pub label: Label,
}

impl RowSample {
    pub fn from_table(table: &TableRecord, anonymize: bool) -> Vec<RowSample> {
        table
            .rows
            .iter()
            .zip(&table.labels)
            .map(|(row, label)| RowSample {
                datums: render_datums(row, &table.schema, anonymize),
                table: table.name.clone(),
                label: *label,
            })
            .collect()
    }
}

/// Anything that maps rows to synthetic-class probabilities.
pub trait RowScorer {
    fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>>;

    /// Whether rows should be rendered with anonymized column names.
    fn anonymize(&self) -> bool {
        false
    }

    fn score_table(&self, table: &TableRecord) -> Result<Vec<f64>> {
        self.score_rows(&RowSample::from_table(table, self.anonymize()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodedRows {
    DatumWise(Vec<EncodedRow>),
    FlatText(Vec<FlatEncodedRow>),
}

/// Encoded rows plus a fingerprint of the vocabulary that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub rows: EncodedRows,
    pub vocab_digest: u32,
}

impl Batch {
    pub fn len(&self) -> usize {
        match &self.rows {
            EncodedRows::DatumWise(r) => r.len(),
            EncodedRows::FlatText(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<Label> {
        match &self.rows {
            EncodedRows::DatumWise(r) => r.iter().map(|e| e.label).collect(),
            EncodedRows::FlatText(r) => r.iter().map(|e| e.label).collect(),
        }
    }

    pub fn tables(&self) -> Vec<&str> {
        match &self.rows {
            EncodedRows::DatumWise(r) => r.iter().map(|e| e.source_table.as_str()).collect(),
            EncodedRows::FlatText(r) => r.iter().map(|e| e.source_table.as_str()).collect(),
        }
    }
}

pub fn vocabulary_digest(vocab: &Vocabulary) -> u32 {
    let text: String = vocab.characters().collect();
    crc32fast::hash(text.as_bytes())
}

/// Inference-time batch-norm statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Scalar> RunningStats<T> {
    fn new(width: usize) -> Self {
        Self {
            mean: vec![T::zero(); width],
            var: vec![T::one(); width],
        }
    }

    fn absorb(&mut self, batch_mean: &[T], batch_var: &[T]) {
        let m = T::lit(BN_MOMENTUM);
        let keep = T::one() - m;
        for (r, b) in self.mean.iter_mut().zip(batch_mean) {
            *r = keep * *r + m * *b;
        }
        for (r, b) in self.var.iter_mut().zip(batch_var) {
            *r = keep * *r + m * *b;
        }
    }

    fn cast<U: Scalar>(&self) -> RunningStats<U> {
        let c = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
        RunningStats {
            mean: c(&self.mean),
            var: c(&self.var),
        }
    }
}

/// Batch norm, then a linear layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Head {
    gamma: ParamId,
    beta: ParamId,
    w: ParamId,
    b: ParamId,
}

impl Head {
    fn init<T: Scalar>(store: &mut ParamStore<T>, prefix: &str, d: usize, out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gamma: store.add_ones(format!("{prefix}.bn.gamma"), &[d]),
            beta: store.add_zeros(format!("{prefix}.bn.beta"), &[d]),
            w: store.add_normal(format!("{prefix}.linear.w"), &[d, out], INIT_STD, rng),
            b: store.add_zeros(format!("{prefix}.linear.b"), &[out]),
        }
    }

    fn lookup<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        Some(Self {
            gamma: store.find(&format!("{prefix}.bn.gamma"))?,
            beta: store.find(&format!("{prefix}.bn.beta"))?,
            w: store.find(&format!("{prefix}.linear.w"))?,
            b: store.find(&format!("{prefix}.linear.b"))?,
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    char_embedding: ParamId,
    position: ParamId,
    cls_target: Option<ParamId>,
    /// Datum encoder (datum-wise) or the only encoder (flat text).
    first: Encoder,
    row: Option<Encoder>,
    detection: Head,
    table: Option<Head>,
}

const DETECTION_HEAD: &str = "detection_head";
const TABLE_HEAD: &str = "table_head";

fn encoder_shape(config: &DetectorConfig) -> EncoderShape {
    EncoderShape {
        width: config.embed_dim,
        heads: config.heads,
        layers: config.layers,
        ff_width: 4 * config.embed_dim,
    }
}

fn position_rows(config: &DetectorConfig) -> usize {
    match config.variant {
        // Slot `datum_len_cap` is reserved for the CLS-Datum token.
        Variant::DatumWise => config.datum_len_cap + 1,
        Variant::FlatText => config.row_len_cap + 1,
    }
}

impl Layout {
    fn init<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &DetectorConfig,
        vocab_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.embed_dim;
        let shape = encoder_shape(config);
        let char_embedding = store.add_normal("char_embedding", &[vocab_size, d], INIT_STD, rng);
        match config.variant {
            Variant::DatumWise => {
                let position = store.add_normal("datum_position", &[position_rows(config), d], INIT_STD, rng);
                let first = Encoder::init(store, "datum_encoder", shape, rng);
                let cls_target = store.add_normal("cls_target", &[1, d], INIT_STD, rng);
                let row = Encoder::init(store, "row_encoder", shape, rng);
                let detection = Head::init(store, DETECTION_HEAD, d, 1, rng);
                let table = config
                    .adaptation
                    .then(|| Head::init(store, TABLE_HEAD, d, config.table_class_count(), rng));
                Self {
                    char_embedding,
                    position,
                    cls_target: Some(cls_target),
                    first,
                    row: Some(row),
                    detection,
                    table,
                }
            }
            Variant::FlatText => {
                let position = store.add_normal("row_position", &[position_rows(config), d], INIT_STD, rng);
                let first = Encoder::init(store, "text_encoder", shape, rng);
                let detection = Head::init(store, DETECTION_HEAD, d, 1, rng);
                let table = config
                    .adaptation
                    .then(|| Head::init(store, TABLE_HEAD, d, config.table_class_count(), rng));
                Self {
                    char_embedding,
                    position,
                    cls_target: None,
                    first,
                    row: None,
                    detection,
                    table,
                }
            }
        }
    }

    fn lookup<T: Scalar>(store: &ParamStore<T>, config: &DetectorConfig) -> Option<Self> {
        let shape = encoder_shape(config);
        let table = if config.adaptation {
            Some(Head::lookup(store, TABLE_HEAD)?)
        } else {
            None
        };
        let detection = Head::lookup(store, DETECTION_HEAD)?;
        let char_embedding = store.find("char_embedding")?;
        Some(match config.variant {
            Variant::DatumWise => Self {
                char_embedding,
                position: store.find("datum_position")?,
                cls_target: Some(store.find("cls_target")?),
                first: Encoder::lookup(store, "datum_encoder", shape)?,
                row: Some(Encoder::lookup(store, "row_encoder", shape)?),
                detection,
                table,
            },
            Variant::FlatText => Self {
                char_embedding,
                position: store.find("row_position")?,
                cls_target: None,
                first: Encoder::lookup(store, "text_encoder", shape)?,
                row: None,
                detection,
                table,
            },
        })
    }
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// `(B, 1)` synthetic-class probabilities.
    pub probability: Var,
    /// `(B, K)` table-class probabilities, when adaptation is on.
    pub table_probs: Option<Var>,
    /// `(B, d)` row embeddings taken before either head.
    pub embedding: Var,
    detection_bn: Var,
    table_bn: Option<Var>,
}

#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub total: Var,
    pub detection: Var,
    pub table: Option<Var>,
}

/// Inference outputs for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference<T> {
    pub probabilities: Vec<T>,
    pub embeddings: Vec<Vec<T>>,
    pub table_probabilities: Option<Vec<Vec<T>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub row_id: usize,
    pub table: String,
    pub label: Label,
    pub values: Vec<f64>,
}

/// A detector of either variant with its parameters, vocabulary and
/// batch-norm running statistics.
#[derive(Debug, Clone)]
pub struct Detector<T> {
    config: DetectorConfig,
    vocab: Vocabulary,
    vocab_digest: u32,
    params: ParamStore<T>,
    layout: Layout,
    detection_stats: RunningStats<T>,
    table_stats: Option<RunningStats<T>>,
}

impl<T: Scalar> Detector<T> {
    pub fn new(config: DetectorConfig, vocab: Vocabulary, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let layout = Layout::init(&mut params, &config, vocab.size(), &mut rng);
        let d = config.embed_dim;
        let table_stats = config.adaptation.then(|| RunningStats::new(d));
        Ok(Self {
            vocab_digest: vocabulary_digest(&vocab),
            detection_stats: RunningStats::new(d),
            table_stats,
            config,
            vocab,
            params,
            layout,
        })
    }

    pub(crate) fn from_parts(
        config: DetectorConfig,
        vocab: Vocabulary,
        params: ParamStore<T>,
        detection_stats: RunningStats<T>,
        table_stats: Option<RunningStats<T>>,
    ) -> Result<Self> {
        config.validate()?;
        let layout = Layout::lookup(&params, &config)
            .ok_or_else(|| Error::Checkpoint("parameter set does not match the configuration".into()))?;
        let expected = {
            let mut probe = ParamStore::<T>::new();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            Layout::init(&mut probe, &config, vocab.size(), &mut rng);
            probe
        };
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (_, name, t) in expected.iter() {
            let found = params.find(name).map(|id| params.get(id).shape());
            if found != Some(t.shape()) {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {found:?}, expected {:?}", t.shape())));
            }
        }
        let d = config.embed_dim;
        if detection_stats.mean.len() != d || table_stats.as_ref().is_some_and(|s| s.mean.len() != d) {
            return Err(Error::Checkpoint("running statistics have the wrong width".into()));
        }
        if table_stats.is_some() != config.adaptation {
            return Err(Error::Checkpoint("table-head statistics do not match the configuration".into()));
        }
        Ok(Self {
            vocab_digest: vocabulary_digest(&vocab),
            config,
            vocab,
            params,
            layout,
            detection_stats,
            table_stats,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn detection_stats(&self) -> &RunningStats<T> {
        &self.detection_stats
    }

    pub fn table_stats(&self) -> Option<&RunningStats<T>> {
        self.table_stats.as_ref()
    }

    /// Ids of the table-head parameters; empty without adaptation.
    pub fn table_head_params(&self) -> Vec<ParamId> {
        self.layout
            .table
            .map(|h| vec![h.gamma, h.beta, h.w, h.b])
            .unwrap_or_default()
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Detector<U> {
        Detector {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            vocab_digest: self.vocab_digest,
            params: self.params.cast(),
            layout: self.layout.clone(),
            detection_stats: self.detection_stats.cast(),
            table_stats: self.table_stats.as_ref().map(RunningStats::cast),
        }
    }

    /// Encodes rows against this model's vocabulary with per-batch geometry.
    pub fn encode(&self, samples: &[RowSample]) -> Result<Batch> {
        let rows = match self.config.variant {
            Variant::DatumWise => {
                let datums: Vec<&[String]> = samples.iter().map(|s| s.datums.as_slice()).collect();
                let (d_max, l_max) = batch_geometry(&datums);
                if l_max > self.config.datum_len_cap {
                    let long = samples
                        .iter()
                        .flat_map(|s| &s.datums)
                        .find(|d| d.chars().count() > self.config.datum_len_cap)
                        .cloned()
                        .unwrap_or_default();
                    return Err(Error::Encoding(format!(
                        "datum {long:?} exceeds the positional capacity of {} characters",
                        self.config.datum_len_cap
                    )));
                }
                EncodedRows::DatumWise(
                    samples
                        .iter()
                        .map(|s| encode_row(&s.datums, &self.vocab, d_max, l_max, &s.table, s.label))
                        .collect::<Result<_>>()?,
                )
            }
            Variant::FlatText => {
                let max_len = samples.iter().map(|s| flat_length(&s.datums)).max().unwrap_or(0);
                EncodedRows::FlatText(
                    samples
                        .iter()
                        .map(|s| {
                            encode_flat(&s.datums, &self.vocab, max_len, self.config.row_len_cap, &s.table, s.label)
                        })
                        .collect::<Result<_>>()?,
                )
            }
        };
        Ok(Batch {
            rows,
            vocab_digest: self.vocab_digest,
        })
    }

    /// Records the forward pass. Training graphs use batch statistics in the
    /// head batch norms and apply dropout; inference graphs use the running
    /// statistics. `lambda` scales the reversed table-head gradient.
    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch, lambda: f64) -> Result<Forward> {
        if batch.vocab_digest != self.vocab_digest {
            return Err(Error::VocabularyMismatch(
                "batch was encoded with a different vocabulary than the model".into(),
            ));
        }
        if batch.is_empty() {
            return Err(Error::protocol("empty batch"));
        }
        let embedding = match (&batch.rows, self.config.variant) {
            (EncodedRows::DatumWise(rows), Variant::DatumWise) => self.datum_wise_embed(g, rows)?,
            (EncodedRows::FlatText(rows), Variant::FlatText) => self.flat_text_embed(g, rows)?,
            _ => return Err(Error::protocol("batch encoding does not match the model variant")),
        };
        let (detection_bn, logit) = self.head(g, embedding, self.layout.detection, &self.detection_stats);
        let probability = g.sigmoid(logit);
        let (table_probs, table_bn) = match (self.layout.table, &self.table_stats) {
            (Some(head), Some(stats)) => {
                let reversed = g.grl(embedding, T::lit(lambda));
                let (bn, logits) = self.head(g, reversed, head, stats);
                (Some(g.softmax(logits)), Some(bn))
            }
            _ => (None, None),
        };
        Ok(Forward {
            probability,
            table_probs,
            embedding,
            detection_bn,
            table_bn,
        })
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        let size = self.vocab.size();
        match ids.iter().find(|&&i| i >= size) {
            Some(i) => Err(Error::VocabularyMismatch(format!(
                "token id {i} outside vocabulary of size {size}"
            ))),
            None => Ok(()),
        }
    }

    fn datum_wise_embed(&self, g: &mut Graph<T>, rows: &[EncodedRow]) -> Result<Var> {
        let (d_max, l_max) = (rows[0].d_max, rows[0].l_max);
        if rows.iter().any(|r| r.d_max != d_max || r.l_max != l_max) {
            return Err(Error::Encoding("rows of one batch must share geometry".into()));
        }
        if l_max > self.config.datum_len_cap {
            return Err(Error::Encoding(format!(
                "datum length {l_max} exceeds capacity {}",
                self.config.datum_len_cap
            )));
        }
        let seq = l_max + 1;
        let cls_slot = self.config.datum_len_cap;
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut char_mask = Vec::new();
        // Source rows of the row-transformer input, indexed into
        // [CLS-Target; datum-encoder outputs]. `None` marks dummy datums.
        let mut row_index = Vec::with_capacity(rows.len() * (d_max + 1));
        let mut row_mask = Vec::with_capacity(rows.len() * (d_max + 1));
        let mut real = 0usize;
        for row in rows {
            row_index.push(Some(0));
            row_mask.push(true);
            for i in 0..d_max {
                if row.datum_mask[i] {
                    ids.extend(row.datum_tokens(i).iter().map(|&t| t as usize));
                    char_mask.extend_from_slice(row.datum_char_mask(i));
                    positions.extend(0..l_max);
                    positions.push(cls_slot);
                    row_index.push(Some(1 + real * seq + l_max));
                    row_mask.push(true);
                    real += 1;
                } else {
                    row_index.push(None);
                    row_mask.push(false);
                }
            }
        }
        self.check_ids(&ids)?;
        let cls = g.param(&self.params, self.layout.cls_target.expect("datum-wise layout"));
        let source = if real > 0 {
            let table = g.param(&self.params, self.layout.char_embedding);
            let chars = g.embedding(table, &ids)?;
            let pos_table = g.param(&self.params, self.layout.position);
            let pos = g.embedding(pos_table, &positions)?;
            let x = g.add(chars, pos);
            let x = self.layout.first.forward(g, &self.params, x, seq, &char_mask, self.config.dropout)?;
            g.concat_rows(&[cls, x])
        } else {
            cls
        };
        let x = g.gather_rows(source, &row_index);
        let row_encoder = self.layout.row.as_ref().expect("datum-wise layout");
        let h = row_encoder.forward(g, &self.params, x, d_max + 1, &row_mask, self.config.dropout)?;
        let take: Vec<Option<usize>> = (0..rows.len()).map(|b| Some(b * (d_max + 1))).collect();
        Ok(g.gather_rows(h, &take))
    }

    fn flat_text_embed(&self, g: &mut Graph<T>, rows: &[FlatEncodedRow]) -> Result<Var> {
        let width = rows[0].tokens.len();
        if rows.iter().any(|r| r.tokens.len() != width) {
            return Err(Error::Encoding("rows of one batch must share length".into()));
        }
        if width > self.config.row_len_cap + 1 {
            return Err(Error::Encoding(format!(
                "row length {} exceeds capacity {}",
                width - 1,
                self.config.row_len_cap
            )));
        }
        let ids: Vec<usize> = rows.iter().flat_map(|r| r.tokens.iter().map(|&t| t as usize)).collect();
        self.check_ids(&ids)?;
        let mask: Vec<bool> = rows.iter().flat_map(|r| r.mask.iter().copied()).collect();
        let positions: Vec<usize> = (0..rows.len()).flat_map(|_| 0..width).collect();
        let table = g.param(&self.params, self.layout.char_embedding);
        let chars = g.embedding(table, &ids)?;
        let pos_table = g.param(&self.params, self.layout.position);
        let pos = g.embedding(pos_table, &positions)?;
        let x = g.add(chars, pos);
        let h = self.layout.first.forward(g, &self.params, x, width, &mask, self.config.dropout)?;
        let take: Vec<Option<usize>> = (0..rows.len()).map(|b| Some(b * width)).collect();
        Ok(g.gather_rows(h, &take))
    }

    fn head(&self, g: &mut Graph<T>, x: Var, head: Head, stats: &RunningStats<T>) -> (Var, Var) {
        let gamma = g.param(&self.params, head.gamma);
        let beta = g.param(&self.params, head.beta);
        let bn = if g.is_training() {
            g.batch_norm(x, gamma, beta)
        } else {
            g.batch_norm_frozen(x, gamma, beta, &stats.mean, &stats.var)
        };
        let w = g.param(&self.params, head.w);
        let b = g.param(&self.params, head.b);
        (bn, g.linear(bn, w, b))
    }

    /// Detection BCE, plus table cross-entropy when adaptation is on (1:1).
    pub fn loss(&self, g: &mut Graph<T>, fwd: &Forward, batch: &Batch) -> Result<Losses> {
        let targets: Vec<T> = batch.labels().iter().map(|l| T::lit(l.target())).collect();
        let detection = g.bce(fwd.probability, &targets);
        let Some(table_probs) = fwd.table_probs else {
            return Ok(Losses {
                total: detection,
                detection,
                table: None,
            });
        };
        let classes = batch
            .tables()
            .iter()
            .map(|t| {
                self.config
                    .table_index(t)
                    .ok_or_else(|| Error::protocol(format!("table {t:?} is not a table-head class")))
            })
            .collect::<Result<Vec<_>>>()?;
        let table = g.cross_entropy(table_probs, &classes)?;
        Ok(Losses {
            total: g.add(detection, table),
            detection,
            table: Some(table),
        })
    }

    /// Folds the batch statistics of a training forward pass into the running statistics.
    pub fn absorb_batch_stats(&mut self, g: &Graph<T>, fwd: &Forward) {
        if let Some((m, v)) = g.batch_stats(fwd.detection_bn) {
            self.detection_stats.absorb(m, v);
        }
        if let (Some(bn), Some(stats)) = (fwd.table_bn, self.table_stats.as_mut()) {
            if let Some((m, v)) = g.batch_stats(bn) {
                stats.absorb(m, v);
            }
        }
    }

    /// Inference-mode outputs for one encoded batch.
    pub fn infer(&self, batch: &Batch) -> Result<Inference<T>> {
        let mut g = Graph::new();
        let fwd = self.forward(&mut g, batch, 0.0)?;
        let d = self.config.embed_dim;
        let probabilities = g.value(fwd.probability).data().to_vec();
        let embeddings = g.value(fwd.embedding).data().chunks(d).map(<[T]>::to_vec).collect();
        let table_probabilities = fwd.table_probs.map(|p| {
            let v = g.value(p);
            v.data().chunks(v.last_dim()).map(<[T]>::to_vec).collect()
        });
        if !probabilities.iter().all(|p: &T| p.is_finite()) {
            return Err(Error::numeric("non-finite detection probability"));
        }
        Ok(Inference {
            probabilities,
            embeddings,
            table_probabilities,
        })
    }

    /// Probabilities and embeddings for any number of rows, in chunks of `batch_size`.
    pub fn infer_samples(&self, samples: &[RowSample]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let mut probs = Vec::with_capacity(samples.len());
        let mut embs = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(self.config.batch_size) {
            let out = self.infer(&self.encode(chunk)?)?;
            probs.extend(out.probabilities.iter().map(|p| p.to_f64_lossy()));
            embs.extend(
                out.embeddings
                    .into_iter()
                    .map(|e| e.into_iter().map(|x| x.to_f64_lossy()).collect()),
            );
        }
        Ok((probs, embs))
    }

    /// Row embeddings before either head, in inference mode.
    pub fn extract_embeddings(&self, samples: &[RowSample]) -> Result<Vec<EmbeddingRecord>> {
        let (_, embs) = self.infer_samples(samples)?;
        Ok(samples
            .iter()
            .zip(embs)
            .enumerate()
            .map(|(row_id, (s, values))| EmbeddingRecord {
                row_id,
                table: s.table.clone(),
                label: s.label,
                values,
            })
            .collect())
    }
}

impl<T: Scalar> RowScorer for Detector<T> {
    fn score_rows(&self, samples: &[RowSample]) -> Result<Vec<f64>> {
        Ok(self.infer_samples(samples)?.0)
    }

    fn anonymize(&self) -> bool {
        self.config.anonymize
    }
}
