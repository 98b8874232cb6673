use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::graph_encoder::{average_rows, init_weight, GraphEncoder};
use crate::tensor::{Mask, ParamId, ParamStore, Stage, Tape, Tensor, Var};

use super::context::{GraphContext, GraphState};
use super::layers::{FeedForward, Fwd, Gate, LayerNorm, Linear, MultiHeadAttention};
use super::{ModelConfig, ModelError};

/// Stage-2 parameters draw from their own stream so that adding them never
/// perturbs stage-1 initialization.
const STAGE2_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;

fn columns_mask(rows: usize, cols: &[bool]) -> Mask {
    Mask::columns(rows, cols)
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    self_attn: MultiHeadAttention,
    ln_self: LayerNorm,
    graph_attn: MultiHeadAttention,
    gate: Gate,
    ffn: FeedForward,
    ln_ffn: LayerNorm,
}

impl EncoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng1: &mut ChaCha8Rng, rng2: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let d = c.hidden;
        Ok(EncoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, c.heads, Stage::Stage1, rng1)?,
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d, Stage::Stage1)?,
            graph_attn: MultiHeadAttention::new(store, &format!("{name}.graph_attn"), d, c.heads, Stage::Stage2, rng2)?,
            gate: Gate::new(store, &format!("{name}.gate"), d, Stage::Stage2, rng2)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, c.ffn, Stage::Stage1, rng1)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d, Stage::Stage1)?,
        })
    }

    /// Post-norm layer; with a graph, the gate takes the place of the
    /// cross sublayer's residual.
    pub fn forward<'t>(
        &self,
        fx: &Fwd<'t, '_>,
        h: Var<'t>,
        graph: Option<&GraphState<'t>>,
        serial: bool,
        dropout: f64,
    ) -> Result<Var<'t>, ModelError> {
        let sa = fx.dropout(self.self_attn.forward(fx, h, h, None)?, dropout);
        let h_a = self.ln_self.forward(fx, h.add(sa)?)?;
        let mixed = match graph {
            Some(g) => {
                let q = if serial { h_a } else { h };
                let mask = columns_mask(q.rows(), &g.columns);
                let c = fx.dropout(self.graph_attn.forward(fx, q, g.repr, Some(&mask))?, dropout);
                self.gate.forward(fx, h_a, c)?
            }
            None => h_a,
        };
        let f = fx.dropout(self.ffn.forward(fx, mixed, dropout)?, dropout);
        Ok(self.ln_ffn.forward(fx, mixed.add(f)?)?)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln_self: LayerNorm,
    src_attn: MultiHeadAttention,
    ln_src: LayerNorm,
    /// Shared by the target-graph and source-graph attentions.
    graph_attn: MultiHeadAttention,
    gate_tgt: Gate,
    gate_src: Gate,
    ffn: FeedForward,
    ln_ffn: LayerNorm,
}

impl DecoderLayer {
    fn new(store: &mut ParamStore, name: &str, c: &ModelConfig, rng1: &mut ChaCha8Rng, rng2: &mut ChaCha8Rng) -> Result<Self, ModelError> {
        let d = c.hidden;
        Ok(DecoderLayer {
            self_attn: MultiHeadAttention::new(store, &format!("{name}.self_attn"), d, c.heads, Stage::Stage1, rng1)?,
            ln_self: LayerNorm::new(store, &format!("{name}.ln_self"), d, Stage::Stage1)?,
            src_attn: MultiHeadAttention::new(store, &format!("{name}.src_attn"), d, c.heads, Stage::Stage1, rng1)?,
            ln_src: LayerNorm::new(store, &format!("{name}.ln_src"), d, Stage::Stage1)?,
            graph_attn: MultiHeadAttention::new(store, &format!("{name}.graph_attn"), d, c.heads, Stage::Stage2, rng2)?,
            gate_tgt: Gate::new(store, &format!("{name}.gate_tgt"), d, Stage::Stage2, rng2)?,
            gate_src: Gate::new(store, &format!("{name}.gate_src"), d, Stage::Stage2, rng2)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), d, c.ffn, Stage::Stage1, rng1)?,
            ln_ffn: LayerNorm::new(store, &format!("{name}.ln_ffn"), d, Stage::Stage1)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t>(
        &self,
        fx: &Fwd<'t, '_>,
        y: Var<'t>,
        memory: Var<'t>,
        src_graph: Option<&GraphState<'t>>,
        tgt_graph: Option<&GraphState<'t>>,
        serial: bool,
        dropout: f64,
    ) -> Result<Var<'t>, ModelError> {
        let causal = Mask::causal(y.rows());
        let sa = fx.dropout(self.self_attn.forward(fx, y, y, Some(&causal))?, dropout);
        let s = self.ln_self.forward(fx, y.add(sa)?)?;
        let h_a = match tgt_graph {
            Some(g) => {
                let q = if serial { s } else { y };
                let mask = columns_mask(q.rows(), &g.columns);
                let c = fx.dropout(self.graph_attn.forward(fx, q, g.repr, Some(&mask))?, dropout);
                self.gate_tgt.forward(fx, s, c)?
            }
            None => s,
        };
        let ca = fx.dropout(self.src_attn.forward(fx, h_a, memory, None)?, dropout);
        let c = self.ln_src.forward(fx, h_a.add(ca)?)?;
        let h_c = match src_graph {
            Some(g) => {
                let q = if serial { c } else { h_a };
                let mask = columns_mask(q.rows(), &g.columns);
                let gc = fx.dropout(self.graph_attn.forward(fx, q, g.repr, Some(&mask))?, dropout);
                self.gate_src.forward(fx, c, gc)?
            }
            None => c,
        };
        let f = fx.dropout(self.ffn.forward(fx, h_c, dropout)?, dropout);
        Ok(self.ln_ffn.forward(fx, h_c.add(f)?)?)
    }
}

/// Source sentence and optional graph contexts for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelInput<'a> {
    pub src: &'a [usize],
    pub src_graph: Option<&'a GraphContext>,
    pub tgt_graph: Option<&'a GraphContext>,
}

/// A training or evaluation pair with its precomputed graph contexts.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    /// Source subwords followed by EOS.
    pub src: Vec<usize>,
    /// BOS followed by target subwords.
    pub tgt_in: Vec<usize>,
    /// Target subwords followed by EOS.
    pub tgt_out: Vec<usize>,
    pub src_graph: Option<GraphContext>,
    pub tgt_graph: Option<GraphContext>,
}

impl Example {
    pub fn input(&self) -> ModelInput<'_> {
        ModelInput {
            src: &self.src,
            src_graph: self.src_graph.as_ref(),
            tgt_graph: self.tgt_graph.as_ref(),
        }
    }
}

/// Encoder memory and encoded graphs.
#[derive(Clone, Debug)]
pub struct EncodedContext<'t> {
    pub memory: Var<'t>,
    pub src_graph: Option<GraphState<'t>>,
    pub tgt_graph: Option<GraphState<'t>>,
}

/// Tape-independent copy of an [`EncodedContext`], reused across decoding steps.
#[derive(Clone, Debug)]
pub struct FrozenContext {
    memory: Tensor,
    src_graph: Option<(Tensor, Vec<bool>)>,
    tgt_graph: Option<(Tensor, Vec<bool>)>,
}

impl<'t> EncodedContext<'t> {
    pub fn freeze(&self) -> FrozenContext {
        let f = |g: &Option<GraphState<'t>>| g.as_ref().map(|g| (g.repr.value().as_ref().clone(), g.columns.clone()));
        FrozenContext {
            memory: self.memory.value().as_ref().clone(),
            src_graph: f(&self.src_graph),
            tgt_graph: f(&self.tgt_graph),
        }
    }
}

impl FrozenContext {
    pub fn attach<'t>(&self, tape: &'t Tape) -> EncodedContext<'t> {
        let f = |g: &Option<(Tensor, Vec<bool>)>| {
            g.as_ref().map(|(t, c)| GraphState {
                repr: tape.constant(t.clone()),
                columns: c.clone(),
            })
        };
        EncodedContext {
            memory: tape.constant(self.memory.clone()),
            src_graph: f(&self.src_graph),
            tgt_graph: f(&self.tgt_graph),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    src_embed: ParamId,
    tgt_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    output: Option<Linear>,
    src_graph_encoder: GraphEncoder,
    tgt_graph_encoder: GraphEncoder,
}

impl Model {
    /// Allocate every parameter, graph-side ones included, regardless of the
    /// graph flags.
    pub fn new(config: ModelConfig, seed: u64) -> Result<(Model, ParamStore), ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng1 = ChaCha8Rng::seed_from_u64(seed);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ STAGE2_STREAM);
        let c = &config;
        let d = c.hidden;
        let src_embed = store.add("embed.src", init_weight(c.src_vocab, d, d, &mut rng1), Stage::Stage1)?;
        let tgt_embed = store.add("embed.tgt", init_weight(c.tgt_vocab, d, d, &mut rng1), Stage::Stage1)?;
        let encoder = (0..c.layers)
            .map(|l| EncoderLayer::new(&mut store, &format!("encoder.layer{l}"), c, &mut rng1, &mut rng2))
            .collect::<Result<_, _>>()?;
        let decoder = (0..c.layers)
            .map(|l| DecoderLayer::new(&mut store, &format!("decoder.layer{l}"), c, &mut rng1, &mut rng2))
            .collect::<Result<_, _>>()?;
        let output = if c.tied_softmax {
            None
        } else {
            Some(Linear::new(
                &mut store,
                "output",
                (d, c.tgt_vocab),
                d,
                true,
                Stage::Stage1,
                &mut rng1,
            )?)
        };
        let ge = c.graph_encoder();
        let src_graph_encoder = GraphEncoder::new(&mut store, "graph_encoder.src", ge.clone(), Stage::Stage2, &mut rng2)?;
        let tgt_graph_encoder = GraphEncoder::new(&mut store, "graph_encoder.tgt", ge, Stage::Stage2, &mut rng2)?;
        let model = Model {
            config,
            src_embed,
            tgt_embed,
            encoder,
            decoder,
            output,
            src_graph_encoder,
            tgt_graph_encoder,
        };
        Ok((model, store))
    }

    /// Same parameters viewed under a different set of graph flags or
    /// architecture; dimensions must agree.
    pub fn with_config(&self, config: ModelConfig) -> Result<Model, ModelError> {
        let same_shape = ModelConfig {
            architecture: self.config.architecture,
            use_src_graph: self.config.use_src_graph,
            use_tgt_graph: self.config.use_tgt_graph,
            context_scope: self.config.context_scope,
            dropout: self.config.dropout,
            ..config.clone()
        };
        if same_shape != self.config {
            return Err(ModelError::InvalidConfig(
                "only graph flags, scope, architecture and dropout may change".into(),
            ));
        }
        Ok(Model { config, ..self.clone() })
    }

    fn check_ids(ids: &[usize], size: usize, what: &'static str) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::EmptySequence(what));
        }
        match ids.iter().find(|&&id| id >= size) {
            Some(&id) => Err(ModelError::TokenOutOfRange { id, size }),
            None => Ok(()),
        }
    }

    fn embed<'t>(&self, fx: &Fwd<'t, '_>, table: ParamId, ids: &[usize]) -> Result<Var<'t>, ModelError> {
        let d = self.config.hidden;
        let e = fx.param(table).gather_rows(ids)?.scale((d as f64).sqrt());
        let x = e.add(fx.constant(positional_encoding(ids.len(), d)))?;
        Ok(fx.dropout(x, self.config.dropout))
    }

    fn encode_graph<'t>(
        &self,
        fx: &Fwd<'t, '_>,
        ctx: &GraphContext,
        encoder: &GraphEncoder,
        table: ParamId,
    ) -> Result<Option<GraphState<'t>>, ModelError> {
        let columns = ctx.columns(self.config.context_scope);
        let Some(props) = &ctx.props else {
            return Ok(None);
        };
        if !columns.iter().any(|&c| c) {
            return Ok(None);
        }
        let h0 = average_rows(fx.param(table), &ctx.node_subwords)?;
        let repr = fx.with_rng(|rng| encoder.encode(fx.tape, fx.store, h0, props, fx.training, rng))?;
        Ok(Some(GraphState { repr, columns }))
    }

    pub fn encode<'t>(&self, fx: &Fwd<'t, '_>, input: ModelInput<'_>) -> Result<EncodedContext<'t>, ModelError> {
        let c = &self.config;
        Self::check_ids(input.src, c.src_vocab, "source")?;
        let src_graph = if c.use_src_graph {
            let g = input.src_graph.ok_or(ModelError::MissingGraph("source"))?;
            self.encode_graph(fx, g, &self.src_graph_encoder, self.src_embed)?
        } else {
            None
        };
        let tgt_graph = if c.use_tgt_graph {
            let g = input.tgt_graph.ok_or(ModelError::MissingGraph("target"))?;
            self.encode_graph(fx, g, &self.tgt_graph_encoder, self.tgt_embed)?
        } else {
            None
        };
        let mut h = self.embed(fx, self.src_embed, input.src)?;
        for layer in &self.encoder {
            h = layer.forward(fx, h, src_graph.as_ref(), c.architecture.encoder_serial(), c.dropout)?;
        }
        Ok(EncodedContext {
            memory: h,
            src_graph,
            tgt_graph,
        })
    }

    /// Log-probabilities (`|tgt_in| × V`) of the next target token at every
    /// position.
    pub fn decode<'t>(&self, fx: &Fwd<'t, '_>, ctx: &EncodedContext<'t>, tgt_in: &[usize]) -> Result<Var<'t>, ModelError> {
        let c = &self.config;
        Self::check_ids(tgt_in, c.tgt_vocab, "target")?;
        let mut y = self.embed(fx, self.tgt_embed, tgt_in)?;
        for layer in &self.decoder {
            y = layer.forward(
                fx,
                y,
                ctx.memory,
                ctx.src_graph.as_ref(),
                ctx.tgt_graph.as_ref(),
                c.architecture.decoder_serial(),
                c.dropout,
            )?;
        }
        let logits = match &self.output {
            Some(out) => out.forward(fx, y)?,
            None => y.matmul(fx.param(self.tgt_embed).transpose())?,
        };
        Ok(logits.log_softmax_rows()?)
    }

    pub fn log_probs<'t>(&self, fx: &Fwd<'t, '_>, input: ModelInput<'_>, tgt_in: &[usize]) -> Result<Var<'t>, ModelError> {
        let ctx = self.encode(fx, input)?;
        self.decode(fx, &ctx, tgt_in)
    }

    /// Summed label-smoothed cross-entropy over target positions.
    pub fn loss<'t>(&self, fx: &Fwd<'t, '_>, example: &Example, smoothing: f64) -> Result<Var<'t>, ModelError> {
        let lp = self.log_probs(fx, example.input(), &example.tgt_in)?;
        let v = self.config.tgt_vocab;
        Self::check_ids(&example.tgt_out, v, "target")?;
        if example.tgt_out.len() != example.tgt_in.len() {
            return Err(ModelError::InvalidConfig("tgt_in and tgt_out lengths differ".into()));
        }
        let mut q = Tensor::full(vec![example.tgt_out.len(), v], smoothing / v as f64);
        for (r, &y) in example.tgt_out.iter().enumerate() {
            q.set(r, y, 1.0 - smoothing + smoothing / v as f64);
        }
        Ok(lp.mul(fx.constant(q))?.sum().scale(-1.0))
    }

    pub fn embeddings(&self) -> (ParamId, ParamId) {
        (self.src_embed, self.tgt_embed)
    }
}

/// Sinusoidal position table, `n × d`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(vec![n, d]);
    for pos in 0..n {
        for i in 0..d {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}
