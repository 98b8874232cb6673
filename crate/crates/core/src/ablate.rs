//! Grids of stage-2 runs over architectures, graph sides and source
//! relation subsets, each trained from one stage-1 checkpoint.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{bleu, default_target_relations, BleuMode, DecodeError, DecodeSettings, TargetMode, Translator};
use crate::graph::{build_document_graph_with, RelationSet};
use crate::model::{Architecture, ModelConfig};
use crate::tensor::Stage;
use crate::tokenize::AnnotatedDocument;
use crate::train::{generate_pseudo_targets, train_stage2, Checkpoint, GraphDocument, ParallelDocument, TrainConfig, TrainError};

/// Which graphs feed the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GraphSides {
    Src,
    SrcTgt,
    SrcTgtPrev,
}

impl GraphSides {
    pub const ALL: [GraphSides; 3] = [GraphSides::Src, GraphSides::SrcTgt, GraphSides::SrcTgtPrev];

    pub fn as_str(self) -> &'static str {
        match self {
            GraphSides::Src => "src",
            GraphSides::SrcTgt => "src+tgt",
            GraphSides::SrcTgtPrev => "src+tgt-prev",
        }
    }

    pub fn target_mode(self) -> TargetMode {
        match self {
            GraphSides::Src => TargetMode::NoTgt,
            GraphSides::SrcTgt => TargetMode::Tgt,
            GraphSides::SrcTgtPrev => TargetMode::TgtPrev,
        }
    }
}

impl fmt::Display for GraphSides {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GraphSides {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        GraphSides::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| format!("unknown graph sides {s:?} (expected src, src+tgt or src+tgt-prev)"))
    }
}

impl TryFrom<String> for GraphSides {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<GraphSides> for String {
    fn from(g: GraphSides) -> String {
        g.as_str().to_string()
    }
}

/// Stage-2 hyperparameters shared by every cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellTraining {
    pub max_steps: usize,
    /// Stage-1 rate; stage 2 uses a tenth unless `stage2_learning_rate` is set.
    pub learning_rate: f64,
    pub stage2_learning_rate: Option<f64>,
    pub warmup_steps: usize,
    pub batch_tokens: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for CellTraining {
    fn default() -> Self {
        let t = TrainConfig::default();
        CellTraining {
            max_steps: 200,
            learning_rate: t.learning_rate,
            stage2_learning_rate: None,
            warmup_steps: 50,
            batch_tokens: t.batch_tokens,
            label_smoothing: t.label_smoothing,
            seed: 0,
        }
    }
}

/// Grid description, read from TOML. Relation subsets are `all` or names
/// joined with `+`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationGrid {
    pub architectures: Vec<Architecture>,
    pub sides: Vec<GraphSides>,
    pub relations: Vec<String>,
    pub train: CellTraining,
    pub decode: DecodeSettings,
    /// Smoothed BLEU for tiny evaluation sets.
    pub smooth_bleu: bool,
}

impl Default for AblationGrid {
    fn default() -> Self {
        AblationGrid {
            architectures: Architecture::ALL.to_vec(),
            sides: GraphSides::ALL.to_vec(),
            relations: vec!["all".into()],
            train: CellTraining::default(),
            decode: DecodeSettings::default(),
            smooth_bleu: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cell {
    pub architecture: Architecture,
    pub sides: GraphSides,
    pub relations: RelationSet,
}

impl AblationGrid {
    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let grid: AblationGrid = toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        grid.cells()?;
        Ok(grid)
    }

    /// Cells in row order: relations, then architectures, then sides.
    pub fn cells(&self) -> Result<Vec<Cell>, TrainError> {
        let mut out = Vec::new();
        for r in &self.relations {
            let relations: RelationSet = r.parse()?;
            for &architecture in &self.architectures {
                for &sides in &self.sides {
                    out.push(Cell {
                        architecture,
                        sides,
                        relations,
                    });
                }
            }
        }
        Ok(out)
    }

    fn train_config(&self, mode: TargetMode) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            stage: Stage::Stage2,
            learning_rate: t.learning_rate,
            stage2_learning_rate: t.stage2_learning_rate,
            warmup_steps: t.warmup_steps,
            batch_tokens: t.batch_tokens,
            max_steps: t.max_steps,
            seed: t.seed,
            label_smoothing: t.label_smoothing,
            target_mode: mode,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub cell: Cell,
    /// Source-graph edges over the training corpus under the cell's relations.
    pub edges: usize,
    pub final_loss: f64,
    pub bleu: f64,
}

pub const ABLATION_HEADER: &str = "architecture,sides,relations,edges,final_loss,bleu";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("{ABLATION_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6},{:.2}\n",
            r.cell.architecture.as_str(),
            r.cell.sides,
            r.cell.relations,
            r.edges,
            r.final_loss,
            r.bleu
        ));
    }
    out
}

/// Corpus shared by every cell: parallel documents with their pseudo targets.
#[derive(Clone, Debug)]
pub struct AblationData {
    pub train: Vec<(ParallelDocument, AnnotatedDocument)>,
    pub eval: Vec<(ParallelDocument, AnnotatedDocument)>,
}

impl AblationData {
    pub fn prepare(
        stage1: &Checkpoint,
        train: &[ParallelDocument],
        eval: &[ParallelDocument],
        settings: DecodeSettings,
    ) -> Result<Self, TrainError> {
        let pseudo = |docs: &[ParallelDocument]| -> Result<Vec<_>, TrainError> {
            let srcs: Vec<_> = docs.iter().map(|d| d.src.clone()).collect();
            let p = generate_pseudo_targets(stage1, &srcs, settings, default_target_relations())?;
            Ok(docs.iter().cloned().zip(p.into_iter().map(|p| p.doc)).collect())
        };
        Ok(AblationData {
            train: pseudo(train)?,
            eval: pseudo(eval)?,
        })
    }
}

fn with_graphs(docs: &[(ParallelDocument, AnnotatedDocument)], relations: RelationSet) -> Vec<GraphDocument> {
    docs.iter()
        .map(|(pair, pseudo)| GraphDocument {
            src_graph: build_document_graph_with(&pair.src, relations),
            pair: pair.clone(),
            pseudo: pseudo.clone(),
        })
        .collect()
}

/// Stage-2 training and evaluation of one cell.
pub fn run_cell(grid: &AblationGrid, cell: Cell, stage1: &Checkpoint, data: &AblationData) -> Result<AblationRow, TrainError> {
    let train_docs = with_graphs(&data.train, cell.relations);
    let edges = train_docs.iter().map(|d| d.src_graph.edge_count()).sum();
    let mode = cell.sides.target_mode();
    let model_config = ModelConfig {
        architecture: cell.architecture,
        use_src_graph: true,
        use_tgt_graph: mode.uses_target_graph(),
        ..stage1.config().clone()
    };
    let mut final_loss = f64::NAN;
    let ck = train_stage2(stage1, model_config, &train_docs, grid.train_config(mode), |r| final_loss = r.loss)?;

    let (model, store) = ck.restore()?;
    let translator = Translator {
        settings: grid.decode,
        ..Translator::new(&model, &store, ck.bpe())
    };
    let (mut hyps, mut refs) = (Vec::new(), Vec::new());
    for d in with_graphs(&data.eval, cell.relations) {
        let out = translator.translate_document(&d.pair.src, &d.src_graph, mode, Some(&d.pseudo))?;
        hyps.push(translator.words(&out));
        refs.push(
            (0..d.pair.num_sentences())
                .map(|m| d.pair.tgt.sentence_words(m).iter().map(|w| w.to_string()).collect())
                .collect(),
        );
    }
    let report = bleu(&hyps, &refs, BleuMode::Sentence, grid.smooth_bleu).map_err(DecodeError::from)?;
    Ok(AblationRow {
        cell,
        edges,
        final_loss,
        bleu: report.score,
    })
}

/// Every cell of `grid`, in [`AblationGrid::cells`] order.
pub fn run_ablation(grid: &AblationGrid, stage1: &Checkpoint, data: &AblationData) -> Result<Vec<AblationRow>, TrainError> {
    grid.cells()?.into_iter().map(|c| run_cell(grid, c, stage1, data)).collect()
}
