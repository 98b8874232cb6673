//! Stacked direction-typed GCN over a pruned document graph.
//!
//! Each layer runs one propagation pass per edge direction,
//! `Ĥ_t = σ(P_t (H W_t + B_t))`, then merges the three results per node
//! either by dot-product type attention or by normalized sigmoid gates.

use rand::{Rng, RngCore};

use crate::graph::{EdgeDirection, GraphError, PropagationMatrices};
use crate::tensor::{ParamId, ParamStore, Stage, Tape, Tensor, TensorError, Var};
use crate::tokenize::AnnotatedDocument;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    TypeAttention,
    GatingUnits,
}

impl std::str::FromStr for Aggregation {
    type Err = GraphEncoderError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "type_attention" | "typeattention" | "attention" => Ok(Aggregation::TypeAttention),
            "gating_units" | "gatingunits" | "gating" => Ok(Aggregation::GatingUnits),
            other => Err(GraphEncoderError::InvalidConfig(format!("unknown aggregation {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphEncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub aggregation: Aggregation,
    pub dropout: f64,
}

impl Default for GraphEncoderConfig {
    fn default() -> Self {
        GraphEncoderConfig {
            num_layers: 2,
            hidden: 32,
            aggregation: Aggregation::TypeAttention,
            dropout: 0.1,
        }
    }
}

impl GraphEncoderConfig {
    pub fn validate(&self) -> Result<(), GraphEncoderError> {
        if self.num_layers == 0 {
            return Err(GraphEncoderError::InvalidConfig("num_layers must be at least 1".into()));
        }
        if self.hidden == 0 {
            return Err(GraphEncoderError::InvalidConfig("hidden size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(GraphEncoderError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GraphEncoderError {
    #[error("invalid graph encoder config: {0}")]
    InvalidConfig(String),
    #[error("{doc_id}: token {token} ({surface:?}) has no subword ids")]
    MissingSubwords { doc_id: String, token: usize, surface: String },
    #[error("node {0} is not a word of the document")]
    UnknownNode(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Uniform(±√(6/(2d))) weight of shape `rows × cols`.
pub(crate) fn init_weight<R: Rng + ?Sized>(rows: usize, cols: usize, d: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(vec![rows, cols], (6.0 / (2.0 * d as f64)).sqrt(), rng)
}

/// Mean of each node's subword embedding rows.
///
/// `nodes` are global word indices; `embedding` is the `V × d` table.
pub fn init_node_embeddings<'t>(doc: &AnnotatedDocument, nodes: &[usize], embedding: Var<'t>) -> Result<Var<'t>, GraphEncoderError> {
    let mut pieces = Vec::with_capacity(nodes.len());
    for &g in nodes {
        let p = doc.subword_map.get(g).ok_or(GraphEncoderError::UnknownNode(g))?;
        if p.is_empty() {
            return Err(GraphEncoderError::MissingSubwords {
                doc_id: doc.doc_id.clone(),
                token: g,
                surface: doc.token(g).map(|t| t.surface.clone()).unwrap_or_default(),
            });
        }
        pieces.push(p.iter().map(|&id| id as usize).collect::<Vec<_>>());
    }
    average_rows(embedding, &pieces)
}

/// Row `i` of the result is the mean of `embedding` rows `groups[i]`.
pub fn average_rows<'t>(embedding: Var<'t>, groups: &[Vec<usize>]) -> Result<Var<'t>, GraphEncoderError> {
    if groups.is_empty() {
        return Err(GraphError::EmptyGraph.into());
    }
    let ids: Vec<usize> = groups.concat();
    let rows = embedding.gather_rows(&ids)?;
    let mut avg = Tensor::zeros(vec![groups.len(), ids.len()]);
    let mut offset = 0;
    for (i, g) in groups.iter().enumerate() {
        let w = 1.0 / g.len() as f64;
        for j in offset..offset + g.len() {
            avg.set(i, j, w);
        }
        offset += g.len();
    }
    Ok(embedding.tape().constant(avg).matmul(rows)?)
}

/// One direction's propagation: `σ(P (H W + B))` with `B` a `1 × d` row.
pub fn gcn_direction_pass<'t>(h: Var<'t>, p: Var<'t>, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>, TensorError> {
    Ok(p.matmul(h.matmul(w)?.add_row(b)?)?.sigmoid())
}

/// Per-node softmax over `score_t(i) = H_i · Ĥ_t,i / √d`, returning the
/// weighted sum and the `L × 3` weights.
pub fn type_attention<'t>(h: Var<'t>, outs: [Var<'t>; 3]) -> Result<(Var<'t>, Var<'t>), TensorError> {
    let scale = 1.0 / (h.cols() as f64).sqrt();
    let scores: Vec<Var<'t>> = outs
        .iter()
        .map(|o| Ok(h.mul(*o)?.sum_cols().scale(scale)))
        .collect::<Result<_, TensorError>>()?;
    let alpha = Var::concat_cols(&scores)?.softmax_rows(None)?;
    let mut out = outs[0].mul_col(alpha.slice_cols(0, 1)?)?;
    for (t, o) in outs.iter().enumerate().skip(1) {
        out = out.add(o.mul_col(alpha.slice_cols(t, 1)?)?)?;
    }
    Ok((out, alpha))
}

/// `Σ_t g_t ⊙ Ĥ_t / Σ_t g_t` with `g_t = σ(H U_t + c_t)`.
pub fn gating_units<'t>(h: Var<'t>, outs: [Var<'t>; 3], gates: [(Var<'t>, Var<'t>); 3]) -> Result<Var<'t>, TensorError> {
    let mut num: Option<Var<'t>> = None;
    let mut den: Option<Var<'t>> = None;
    for (o, (u, c)) in outs.iter().zip(gates) {
        let g = h.matmul(u)?.add_row(c)?.sigmoid();
        let term = g.mul(*o)?;
        num = Some(match num {
            Some(n) => n.add(term)?,
            None => term,
        });
        den = Some(match den {
            Some(d) => d.add(g)?,
            None => g,
        });
    }
    num.expect("three directions").mul(den.expect("three directions").recip())
}

#[derive(Clone, Debug)]
struct GcnLayer {
    w: [ParamId; 3],
    b: [ParamId; 3],
    gates: Option<[(ParamId, ParamId); 3]>,
}

/// Parameters of a stacked graph encoder, named `{prefix}.layer{l}.*`.
#[derive(Clone, Debug)]
pub struct GraphEncoder {
    config: GraphEncoderConfig,
    layers: Vec<GcnLayer>,
}

impl GraphEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        config: GraphEncoderConfig,
        stage: Stage,
        rng: &mut R,
    ) -> Result<Self, GraphEncoderError> {
        config.validate()?;
        let d = config.hidden;
        let mut layers = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let mut w = Vec::new();
            let mut b = Vec::new();
            for dir in EdgeDirection::ALL {
                let name = format!("{prefix}.layer{l}.{}", dir.as_str());
                w.push(store.add(format!("{name}.w"), init_weight(d, d, d, rng), stage)?);
                b.push(store.add(format!("{name}.b"), Tensor::zeros(vec![1, d]), stage)?);
            }
            let gates = match config.aggregation {
                Aggregation::TypeAttention => None,
                Aggregation::GatingUnits => {
                    let mut g = Vec::new();
                    for dir in EdgeDirection::ALL {
                        let name = format!("{prefix}.layer{l}.gate_{}", dir.as_str());
                        let u = store.add(format!("{name}.w"), init_weight(d, d, d, rng), stage)?;
                        let c = store.add(format!("{name}.b"), Tensor::zeros(vec![1, d]), stage)?;
                        g.push((u, c));
                    }
                    Some([g[0], g[1], g[2]])
                }
            };
            layers.push(GcnLayer {
                w: [w[0], w[1], w[2]],
                b: [b[0], b[1], b[2]],
                gates,
            });
        }
        Ok(GraphEncoder { config, layers })
    }

    pub fn config(&self) -> &GraphEncoderConfig {
        &self.config
    }

    /// Run every layer from initial node states `h0` (`L × d`).
    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        h0: Var<'t>,
        props: &PropagationMatrices,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<Var<'t>, GraphEncoderError> {
        if h0.rows() != props.node_count() {
            return Err(TensorError::mismatch("encode_graph", &h0.shape(), &[props.node_count()]).into());
        }
        let p: Vec<Var<'t>> = EdgeDirection::ALL
            .iter()
            .map(|&dir| tape.constant(props.get(dir).normalized.clone()))
            .collect();
        let mut h = h0;
        for layer in &self.layers {
            let mut outs = Vec::with_capacity(3);
            for t in 0..3 {
                let w = tape.param(store, layer.w[t]);
                let b = tape.param(store, layer.b[t]);
                outs.push(gcn_direction_pass(h, p[t], w, b)?);
            }
            let outs = [outs[0], outs[1], outs[2]];
            let next = match &layer.gates {
                None => type_attention(h, outs)?.0,
                Some(g) => {
                    let gv = g.map(|(u, c)| (tape.param(store, u), tape.param(store, c)));
                    gating_units(h, outs, gv)?
                }
            };
            h = next.dropout(self.config.dropout, training, rng);
        }
        Ok(h)
    }
}
