//! Two-stage training: a sentence-level model first, then the graph-side
//! parameters with the sentence-level ones frozen.

mod checkpoint;
mod data;
mod optim;
mod pseudo;

pub use checkpoint::{Checkpoint, ParamRecord, MAGIC, VERSION};
pub use data::{
    graph_examples, load_parallel, parallel_from_text, sentence_example, sentence_examples, BatchCursor, GraphDocument, ParallelDocument,
};
pub use optim::{Adam, InverseSqrt};
pub use pseudo::{generate_pseudo_targets, graph_documents, PseudoTarget};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decode::{default_target_relations, DecodeError, TargetMode, DEFAULT_RADIUS};
use crate::graph::{GraphError, RelationSet};
use crate::model::{Example, Fwd, Model, ModelConfig, ModelError};
use crate::tensor::{ParamId, ParamStore, Stage, Tape, Tensor, TensorError};
use crate::tokenize::{BpeModel, TokenizeError};

use checkpoint::Reader;
use data::mix;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty training corpus")]
    EmptyCorpus,
    #[error("{doc_id}: {src} source sentences but {tgt} target sentences")]
    SentenceCount { doc_id: String, src: usize, tgt: usize },
    #[error("{src} source documents but {tgt} target documents")]
    DocumentCount { src: usize, tgt: usize },
    #[error("stage-2 training needs graphs for every document ({0})")]
    MissingGraphs(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("stage-1 parameter {0} changed during stage 2")]
    FreezeViolation(String),
    #[error("non-finite loss at step {0}")]
    NonFinite(usize),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        TrainError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

/// Training hyperparameters. `learning_rate` and `batch_tokens` are the
/// stage-1 values; stage 2 derives its own from them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub stage: Stage,
    pub learning_rate: f64,
    /// Replaces `learning_rate / 10` at stage 2.
    pub stage2_learning_rate: Option<f64>,
    pub warmup_steps: usize,
    pub batch_tokens: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub label_smoothing: f64,
    /// Stage 2: how target graphs are built.
    pub target_mode: TargetMode,
    pub target_relations: RelationSet,
    pub radius: usize,
    /// Stage 2: compare frozen parameters with their initial values every
    /// this many steps (0 disables).
    pub freeze_check_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: Stage::Stage1,
            learning_rate: 2e-3,
            stage2_learning_rate: None,
            warmup_steps: 200,
            batch_tokens: 256,
            max_steps: 1000,
            seed: 0,
            label_smoothing: 0.1,
            target_mode: TargetMode::Tgt,
            target_relations: default_target_relations(),
            radius: DEFAULT_RADIUS,
            freeze_check_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn peak_lr(&self) -> f64 {
        match self.stage {
            Stage::Stage1 => self.learning_rate,
            Stage::Stage2 => self.stage2_learning_rate.unwrap_or(self.learning_rate / 10.0),
        }
    }

    /// Target-token budget per batch; halved at stage 2.
    pub fn batch_budget(&self) -> usize {
        match self.stage {
            Stage::Stage1 => self.batch_tokens,
            Stage::Stage2 => (self.batch_tokens / 2).max(1),
        }
    }

    pub fn schedule(&self) -> InverseSqrt {
        InverseSqrt {
            peak: self.peak_lr(),
            warmup: self.warmup_steps,
        }
    }
}

/// One training-log line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    /// Mean per-token training loss of the batch, label smoothing included.
    pub loss: f64,
    pub lr: f64,
    pub tokens: usize,
}

pub const LOG_HEADER: &str = "step,loss,lr";

impl LogRow {
    pub fn csv(&self) -> String {
        format!("{},{:.6},{:.6e}", self.step, self.loss, self.lr)
    }
}

/// Summed loss, token count and per-parameter gradients of a batch.
struct BatchResult {
    loss: f64,
    tokens: usize,
    grads: Vec<Option<Tensor>>,
}

fn example_gradients(
    model: &Model,
    store: &ParamStore,
    ex: &Example,
    smoothing: f64,
    rng: ChaCha8Rng,
) -> Result<(f64, Vec<Option<Tensor>>), ModelError> {
    let tape = Tape::new();
    let fx = Fwd::new(&tape, store, true, rng);
    let loss = model.loss(&fx, ex, smoothing)?;
    let value = loss.value().item();
    let grads = tape.backward(loss)?;
    let per_param = store
        .ids()
        .map(|id| {
            if store.is_trainable(id) {
                grads.param(&tape, id).cloned()
            } else {
                None
            }
        })
        .collect();
    Ok((value, per_param))
}

/// Trainer state for either stage.
pub struct Trainer {
    pub model: Model,
    pub store: ParamStore,
    pub config: TrainConfig,
    bpe: BpeModel,
    docs: Vec<Vec<Example>>,
    adam: Adam,
    step: usize,
    cursor: BatchCursor,
    frozen_reference: Vec<(ParamId, Tensor)>,
}

impl Trainer {
    /// Sentence-level training from scratch; graph flags are switched off and
    /// zero vocabulary sizes are taken from `bpe`.
    pub fn stage1(corpus: &[ParallelDocument], bpe: &BpeModel, model_config: ModelConfig, config: TrainConfig) -> Result<Self, TrainError> {
        let v = bpe.vocab_size();
        let model_config = ModelConfig {
            src_vocab: if model_config.src_vocab == 0 { v } else { model_config.src_vocab },
            tgt_vocab: if model_config.tgt_vocab == 0 { v } else { model_config.tgt_vocab },
            ..model_config.sentence_level()
        };
        let (model, store) = Model::new(model_config, config.seed)?;
        let config = TrainConfig {
            stage: Stage::Stage1,
            ..config
        };
        Self::build(model, store, bpe.clone(), sentence_examples(corpus), config)
    }

    /// Graph-side training on top of a stage-1 checkpoint. `model_config`
    /// may change graph flags, scope, architecture and dropout only.
    pub fn stage2(stage1: &Checkpoint, model_config: ModelConfig, docs: &[GraphDocument], config: TrainConfig) -> Result<Self, TrainError> {
        if stage1.stage != Stage::Stage1 {
            return Err(TrainError::Checkpoint("stage 2 starts from a stage-1 checkpoint".into()));
        }
        let model_config = ModelConfig {
            use_tgt_graph: model_config.use_tgt_graph && config.target_mode.uses_target_graph(),
            ..model_config
        };
        let (model, mut store) = stage1.restore_with(model_config)?;
        store.freeze(Stage::Stage1);
        let config = TrainConfig {
            stage: Stage::Stage2,
            ..config
        };
        let examples = graph_examples(docs, config.target_mode, config.target_relations, config.radius)?;
        let mut t = Self::build(model, store, stage1.bpe().clone(), examples, config)?;
        t.frozen_reference = t
            .store
            .ids_in_stage(Stage::Stage1)
            .into_iter()
            .map(|id| (id, t.store.value(id).clone()))
            .collect();
        Ok(t)
    }

    fn build(model: Model, store: ParamStore, bpe: BpeModel, docs: Vec<Vec<Example>>, config: TrainConfig) -> Result<Self, TrainError> {
        if docs.iter().all(Vec::is_empty) {
            return Err(TrainError::EmptyCorpus);
        }
        let cursor = BatchCursor::new(&docs, config.seed, config.batch_budget());
        Ok(Trainer {
            adam: Adam::new(store.len()),
            model,
            store,
            bpe,
            docs,
            step: 0,
            cursor,
            config,
            frozen_reference: Vec::new(),
        })
    }

    /// Completed optimizer steps.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn examples(&self) -> &[Vec<Example>] {
        &self.docs
    }

    pub fn bpe(&self) -> &BpeModel {
        &self.bpe
    }

    fn batch_gradients(&self, batch: &[(usize, usize)]) -> Result<BatchResult, TrainError> {
        let smoothing = self.config.label_smoothing;
        let run = |(i, &(d, m)): (usize, &(usize, usize))| {
            let rng = ChaCha8Rng::seed_from_u64(mix(self.config.seed, self.step as u64, i as u64));
            example_gradients(&self.model, &self.store, &self.docs[d][m], smoothing, rng)
        };
        #[cfg(feature = "parallel")]
        let results: Vec<_> = {
            use rayon::prelude::*;
            batch.par_iter().enumerate().map(run).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let results: Vec<_> = batch.iter().enumerate().map(run).collect();

        let mut out = BatchResult {
            loss: 0.0,
            tokens: 0,
            grads: vec![None; self.store.len()],
        };
        for (r, &(d, m)) in results.into_iter().zip(batch) {
            let (loss, grads) = r?;
            out.loss += loss;
            out.tokens += self.docs[d][m].tgt_out.len();
            for (acc, g) in out.grads.iter_mut().zip(grads) {
                match (acc.as_mut(), g) {
                    (Some(a), Some(g)) => a.add_assign(&g),
                    (None, Some(g)) => *acc = Some(g),
                    _ => {}
                }
            }
        }
        Ok(out)
    }

    /// One optimizer step on the next batch.
    pub fn step(&mut self) -> Result<LogRow, TrainError> {
        let batch = self.cursor.next_batch(&self.docs);
        let mut r = self.batch_gradients(&batch)?;
        if !r.loss.is_finite() {
            return Err(TrainError::NonFinite(self.step));
        }
        let scale = 1.0 / r.tokens as f64;
        for g in r.grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
        let lr = self.config.schedule().lr(self.step + 1);
        self.adam.step(&mut self.store, &r.grads, lr);
        self.step += 1;
        let every = self.config.freeze_check_every;
        if every > 0 && self.step.is_multiple_of(every) {
            self.check_frozen()?;
        }
        Ok(LogRow {
            step: self.step,
            loss: r.loss * scale,
            lr,
            tokens: r.tokens,
        })
    }

    /// Bit-level comparison of frozen parameters with their stage-2 start.
    pub fn check_frozen(&self) -> Result<(), TrainError> {
        for (id, t) in &self.frozen_reference {
            let now = self.store.value(*id);
            if now.data().iter().zip(t.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(TrainError::FreezeViolation(self.store.get(*id).name.clone()));
            }
        }
        Ok(())
    }

    /// Train until `max_steps`, reporting each step to `log`.
    pub fn run(&mut self, mut log: impl FnMut(&LogRow)) -> Result<(), TrainError> {
        while self.step < self.config.max_steps {
            let row = self.step()?;
            log(&row);
        }
        Ok(())
    }

    /// Run and write the CSV log to `out`.
    pub fn run_logged(&mut self, out: &mut dyn std::io::Write) -> Result<(), TrainError> {
        let mut err = None;
        let _ = writeln!(out, "{LOG_HEADER}");
        self.run(|row| {
            if let Err(e) = writeln!(out, "{}", row.csv()) {
                err.get_or_insert(e);
            }
        })?;
        match err {
            Some(e) => Err(TrainError::Io {
                path: "training log".into(),
                message: e.to_string(),
            }),
            None => Ok(()),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.model.config, self.config.stage, &self.bpe, &self.store)
    }

    /// Mean per-token loss over `examples` in evaluation mode.
    pub fn eval_loss(&self, examples: &[Example], smoothing: f64) -> Result<f64, TrainError> {
        let mut total = 0.0;
        let mut tokens = 0;
        for ex in examples {
            let tape = Tape::new();
            let fx = Fwd::eval(&tape, &self.store);
            total += self.model.loss(&fx, ex, smoothing)?.value().item();
            tokens += ex.tgt_out.len();
        }
        Ok(total / tokens.max(1) as f64)
    }

    /// Exact training state: step, `f64` parameters and Adam moments.
    pub fn state_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&(self.step as u64).to_le_bytes());
        out.extend_from_slice(&self.adam.t.to_le_bytes());
        out.extend_from_slice(&(self.store.len() as u64).to_le_bytes());
        for (i, (_, p)) in self.store.iter().enumerate() {
            put_f64s(&mut out, Some(&p.value));
            put_f64s(&mut out, self.adam.m[i].as_ref());
            put_f64s(&mut out, self.adam.v[i].as_ref());
        }
        out
    }

    /// Restore a state written by [`Trainer::state_bytes`] into a trainer
    /// built with the same data and configuration.
    pub fn load_state(&mut self, bytes: &[u8]) -> Result<(), TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(STATE_MAGIC.len())? != STATE_MAGIC {
            return Err(TrainError::Checkpoint("bad training-state magic".into()));
        }
        let step = r.u64()? as usize;
        let t = r.u64()?;
        let n = r.u64()? as usize;
        if n != self.store.len() {
            return Err(TrainError::Checkpoint(format!(
                "state has {n} parameters, model has {}",
                self.store.len()
            )));
        }
        let mut adam = Adam::new(n);
        adam.t = t;
        for i in 0..n {
            let id = ParamId(i);
            let shape = self.store.value(id).shape().to_vec();
            let value = get_f64s(&mut r, &shape)?
                .ok_or_else(|| TrainError::Checkpoint(format!("missing value for {}", self.store.get(id).name)))?;
            self.store.get_mut(id).value = value;
            adam.m[i] = get_f64s(&mut r, &shape)?;
            adam.v[i] = get_f64s(&mut r, &shape)?;
        }
        if r.pos != bytes.len() {
            return Err(TrainError::Checkpoint("trailing bytes in training state".into()));
        }
        self.adam = adam;
        self.cursor = BatchCursor::new(&self.docs, self.config.seed, self.config.batch_budget());
        for _ in 0..step {
            self.cursor.next_batch(&self.docs);
        }
        self.step = step;
        Ok(())
    }

    pub fn save_state(&self, path: &Path) -> Result<(), TrainError> {
        std::fs::write(path, self.state_bytes()).map_err(|e| TrainError::io(path, e))
    }

    pub fn resume(&mut self, path: &Path) -> Result<(), TrainError> {
        let bytes = std::fs::read(path).map_err(|e| TrainError::io(path, e))?;
        self.load_state(&bytes)
    }
}

const STATE_MAGIC: &[u8; 8] = b"DGNMTST\0";

fn put_f64s(out: &mut Vec<u8>, t: Option<&Tensor>) {
    match t {
        None => out.push(0),
        Some(t) => {
            out.push(1);
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

fn get_f64s(r: &mut Reader<'_>, shape: &[usize]) -> Result<Option<Tensor>, TrainError> {
    match r.take(1)?[0] {
        0 => Ok(None),
        1 => {
            let n: usize = shape.iter().product();
            let raw = r.take(n * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Some(Tensor::new(shape.to_vec(), data)?))
        }
        b => Err(TrainError::Checkpoint(format!("bad presence flag {b}"))),
    }
}

/// Stage-1 training to completion.
pub fn train_stage1(
    corpus: &[ParallelDocument],
    bpe: &BpeModel,
    model_config: ModelConfig,
    config: TrainConfig,
    log: impl FnMut(&LogRow),
) -> Result<Checkpoint, TrainError> {
    let mut t = Trainer::stage1(corpus, bpe, model_config, config)?;
    t.run(log)?;
    Ok(t.checkpoint())
}

/// Stage-2 training to completion.
pub fn train_stage2(
    stage1: &Checkpoint,
    model_config: ModelConfig,
    docs: &[GraphDocument],
    config: TrainConfig,
    log: impl FnMut(&LogRow),
) -> Result<Checkpoint, TrainError> {
    let mut t = Trainer::stage2(stage1, model_config, docs, config)?;
    t.run(log)?;
    t.check_frozen()?;
    Ok(t.checkpoint())
}

/// Teacher-forced argmax prediction at every target position.
pub fn predict(model: &Model, store: &ParamStore, ex: &Example) -> Result<Vec<usize>, ModelError> {
    let tape = Tape::new();
    let fx = Fwd::eval(&tape, store);
    let lp = model.log_probs(&fx, ex.input(), &ex.tgt_in)?;
    let v = lp.value();
    Ok((0..v.rows())
        .map(|r| {
            let row = v.row(r);
            row.iter().enumerate().fold(0, |b, (i, &x)| if x > row[b] { i } else { b })
        })
        .collect())
}

/// Token accuracy over every target position of `examples`.
pub fn token_accuracy(model: &Model, store: &ParamStore, examples: &[Example]) -> Result<f64, ModelError> {
    let (mut correct, mut total) = (0, 0);
    for ex in examples {
        let p = predict(model, store, ex)?;
        correct += p.iter().zip(&ex.tgt_out).filter(|(a, b)| a == b).count();
        total += ex.tgt_out.len();
    }
    Ok(correct as f64 / total.max(1) as f64)
}
