use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use docgraph::ablate::{ablation_csv, run_ablation, AblationData, AblationGrid};
use docgraph::decode::{bleu, BleuMode, DecodeSettings, TargetMode, Translator, DEFAULT_RADIUS};
use docgraph::graph::{
    aggregate_stats, build_document_graph, build_document_graph_with, growth_ratio, sentence_stats, stats_csv, to_dot, GraphRecord,
    RelationSet,
};
use docgraph::model::ModelConfig;
use docgraph::synth::{context_text, corpus_text, repeat_corpus, ContextTaskConfig, RepeatCorpusConfig};
use docgraph::tensor::Stage;
use docgraph::tokenize::{learn_bpe, load_documents, parse_corpus, AnnotatedDocument};
use docgraph::train::{generate_pseudo_targets, graph_documents, load_parallel, Checkpoint, TrainConfig, Trainer};

#[derive(Parser)]
#[command(name = "docgraph", version, about = "Document-graph NMT at desk scale")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum GraphFormat {
    Json,
    Dot,
}

#[derive(Subcommand)]
enum Command {
    /// Build document graphs from a corpus and optional annotations.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        conllu: Option<PathBuf>,
        #[arg(long)]
        coref: Option<PathBuf>,
        /// `all` or relation names joined with `+`.
        #[arg(long, default_value = "all")]
        relations: String,
        #[arg(long, value_enum, default_value = "json")]
        format: GraphFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train stage 1 from scratch or stage 2 from a stage-1 checkpoint.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// Model config in TOML; vocabulary sizes may be left at zero.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Directory with src.txt and tgt.txt, optionally src.conllu and src.coref.
        #[arg(long)]
        data: PathBuf,
        /// Stage-1 checkpoint (stage 2 only).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Stage-1 peak learning rate; stage 2 uses a tenth unless --stage2-lr is given.
        #[arg(long, default_value_t = 2e-3)]
        lr: f64,
        #[arg(long)]
        stage2_lr: Option<f64>,
        #[arg(long, default_value_t = 200)]
        warmup: usize,
        #[arg(long, default_value_t = 256)]
        batch_tokens: usize,
        #[arg(long, default_value_t = 0.1)]
        label_smoothing: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// BPE merges learned jointly over both sides at stage 1.
        #[arg(long, default_value_t = 8000)]
        merges: usize,
        #[arg(long, default_value = "tgt")]
        mode: String,
        /// Training log CSV; standard output when absent.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the exact training state here for later resumption.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Continue from a saved training state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a corpus document by document.
    Translate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        conllu: Option<PathBuf>,
        #[arg(long)]
        coref: Option<PathBuf>,
        #[arg(long, default_value = "tgt")]
        mode: String,
        #[arg(long, default_value_t = 4)]
        beam: usize,
        #[arg(long, default_value_t = 0.6)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corpus BLEU of hypotheses against references.
    Evaluate {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value = "sentence")]
        mode: String,
        #[arg(long)]
        smooth: bool,
    },
    /// Pruned graph size against text distance, bucketed.
    Stats {
        /// JSON-lines graph file from build-graph.
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RADIUS)]
        radius: usize,
        #[arg(long, default_value_t = 10)]
        bucket: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage-2 runs over a grid of architectures, graph sides and relations.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        init: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Evaluation directory; the training data when absent.
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// train/ and heldout/ directories for the context-disambiguation task.
    Context,
    /// A single corpus file of documents with one long-range repeat each.
    Repeat,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn optional(dir: &Path, name: &str) -> Option<PathBuf> {
    let p = dir.join(name);
    p.exists().then_some(p)
}

fn build_graph(
    corpus: &Path,
    conllu: Option<&Path>,
    coref: Option<&Path>,
    relations: &str,
    format: GraphFormat,
    out: Option<&Path>,
) -> Result<()> {
    let relations: RelationSet = relations.parse()?;
    let text = read(corpus)?;
    let words: Vec<Vec<String>> = parse_corpus(&text).into_iter().flatten().collect();
    // Graphs ignore subwords, so a character-level model is enough here.
    let bpe = learn_bpe(&words, 1)?;
    let docs = load_documents(corpus, conllu, coref, &bpe)?;
    let mut s = String::new();
    for doc in &docs {
        let g = build_document_graph_with(doc, relations);
        match format {
            GraphFormat::Json => {
                s.push_str(&GraphRecord::from_graph(doc, &g).to_json());
                s.push('\n');
            }
            GraphFormat::Dot => s.push_str(&to_dot(&g, Some(doc))),
        }
    }
    write_output(out, &s)
}

struct TrainArgs {
    stage: u8,
    config: Option<PathBuf>,
    data: PathBuf,
    init: Option<PathBuf>,
    out: PathBuf,
    train: TrainConfig,
    merges: usize,
    log: Option<PathBuf>,
    state: Option<PathBuf>,
    resume: Option<PathBuf>,
}

fn train(a: TrainArgs) -> Result<()> {
    let model_config = match &a.config {
        Some(p) => ModelConfig::from_text(&read(p)?)?,
        None => ModelConfig::default(),
    };
    let (src, tgt) = (a.data.join("src.txt"), a.data.join("tgt.txt"));
    let conllu = optional(&a.data, "src.conllu");
    let coref = optional(&a.data, "src.coref");

    let mut trainer = if a.stage == 1 {
        if a.init.is_some() {
            bail!("--init is only used at stage 2");
        }
        let sentences: Vec<Vec<String>> = [read(&src)?, read(&tgt)?]
            .iter()
            .flat_map(|t| parse_corpus(t).into_iter().flatten())
            .collect();
        let bpe = learn_bpe(&sentences, a.merges.max(1))?;
        let corpus = load_parallel(&src, &tgt, conllu.as_deref(), coref.as_deref(), &bpe)?;
        Trainer::stage1(
            &corpus,
            &bpe,
            model_config,
            TrainConfig {
                stage: Stage::Stage1,
                ..a.train
            },
        )?
    } else {
        let init = a.init.as_deref().context("stage 2 needs --init with a stage-1 checkpoint")?;
        let ck = Checkpoint::load(init)?;
        let corpus = load_parallel(&src, &tgt, conllu.as_deref(), coref.as_deref(), ck.bpe())?;
        let docs = graph_documents(&ck, &corpus, DecodeSettings::default(), a.train.target_relations)?;
        let model_config = match &a.config {
            Some(_) => model_config,
            None => ModelConfig {
                use_src_graph: true,
                use_tgt_graph: true,
                ..ck.config().clone()
            },
        };
        Trainer::stage2(
            &ck,
            model_config,
            &docs,
            TrainConfig {
                stage: Stage::Stage2,
                ..a.train
            },
        )?
    };
    if let Some(r) = &a.resume {
        trainer.resume(r)?;
    }

    match &a.log {
        Some(p) => {
            let mut f = std::io::BufWriter::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?);
            trainer.run_logged(&mut f)?;
            f.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            trainer.run_logged(&mut stdout.lock())?;
        }
    }
    trainer.check_frozen()?;
    trainer.checkpoint().save(&a.out)?;
    if let Some(p) = &a.state {
        trainer.save_state(p)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn translate(
    ckpt: &Path,
    input: &Path,
    conllu: Option<&Path>,
    coref: Option<&Path>,
    mode: &str,
    settings: DecodeSettings,
    out: Option<&Path>,
) -> Result<()> {
    let mode: TargetMode = mode.parse()?;
    let ck = Checkpoint::load(ckpt)?;
    let (model, store) = ck.restore()?;
    let docs = load_documents(input, conllu, coref, ck.bpe())?;
    let pseudo: Vec<Option<AnnotatedDocument>> = if mode == TargetMode::Tgt && model.config.use_tgt_graph {
        generate_pseudo_targets(&ck, &docs, settings, docgraph::decode::default_target_relations())?
            .into_iter()
            .map(|p| Some(p.doc))
            .collect()
    } else {
        vec![None; docs.len()]
    };
    let translator = Translator {
        settings,
        ..Translator::new(&model, &store, ck.bpe())
    };
    let mut words = Vec::with_capacity(docs.len());
    for (doc, p) in docs.iter().zip(&pseudo) {
        let g = build_document_graph(doc);
        let out = translator.translate_document(doc, &g, mode, p.as_ref())?;
        words.push(translator.words(&out));
    }
    write_output(out, &corpus_text(&words))
}

/// Split hypothesis lines along the reference's document layout. Lines are
/// taken by count, so empty translations (empty lines) stay aligned; one
/// blank separator line between documents is skipped.
fn align_to_reference(hyp: &str, reference: &[Vec<Vec<String>>]) -> Result<Vec<Vec<Vec<String>>>> {
    let mut lines = hyp.lines();
    let mut out = Vec::with_capacity(reference.len());
    for (d, doc) in reference.iter().enumerate() {
        if d > 0 {
            match lines.next() {
                Some(l) if l.trim().is_empty() => {}
                _ => bail!("hypothesis document {d} is not preceded by a blank line"),
            }
        }
        let mut sentences = Vec::with_capacity(doc.len());
        for m in 0..doc.len() {
            let line = lines
                .next()
                .with_context(|| format!("hypothesis ends inside document {d} at sentence {m}"))?;
            sentences.push(line.split_whitespace().map(str::to_string).collect());
        }
        out.push(sentences);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        bail!("hypothesis has more sentences than the reference");
    }
    Ok(out)
}

fn evaluate(hyp: &Path, reference: &Path, mode: &str, smooth: bool) -> Result<()> {
    let mode: BleuMode = mode.parse()?;
    let r = parse_corpus(&read(reference)?);
    let h = align_to_reference(&read(hyp)?, &r)?;
    let report = bleu(&h, &r, mode, smooth)?;
    let p = report.precisions.map(|p| format!("{:.2}", 100.0 * p));
    println!(
        "BLEU = {:.2} ({}) BP = {:.3} hyp_len = {} ref_len = {}",
        report.score,
        p.join("/"),
        report.brevity_penalty,
        report.hyp_len,
        report.ref_len
    );
    Ok(())
}

fn stats(graphs: &Path, radius: usize, bucket: usize, out: Option<&Path>) -> Result<()> {
    if bucket == 0 {
        bail!("--bucket must be positive");
    }
    let mut all = Vec::new();
    for (i, line) in read(graphs)?.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec = GraphRecord::from_json(line).with_context(|| format!("{}:{}", graphs.display(), i + 1))?;
        let g = rec.to_graph()?;
        all.extend(sentence_stats(&rec.doc_id, &g, &rec.sentence_ranges()?, radius));
    }
    let rows = aggregate_stats(&all, bucket);
    write_output(out, &stats_csv(&rows))?;
    if let Some(r) = growth_ratio(&rows) {
        eprintln!("graph-size growth per word of text distance: {r:.4}");
    }
    Ok(())
}

fn ablate(grid: &Path, init: &Path, data: &Path, eval: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let grid = AblationGrid::from_toml(&read(grid)?)?;
    let ck = Checkpoint::load(init)?;
    let load = |dir: &Path| {
        let (c, k) = (optional(dir, "src.conllu"), optional(dir, "src.coref"));
        load_parallel(&dir.join("src.txt"), &dir.join("tgt.txt"), c.as_deref(), k.as_deref(), ck.bpe())
    };
    let train = load(data)?;
    let eval = match eval {
        Some(d) => load(d)?,
        None => train.clone(),
    };
    let prepared = AblationData::prepare(&ck, &train, &eval, grid.decode)?;
    let rows = run_ablation(&grid, &ck, &prepared)?;
    write_output(out, &ablation_csv(&rows))
}

fn synth(kind: SynthKind, out: &Path, seed: u64) -> Result<()> {
    match kind {
        SynthKind::Context => {
            let (train, heldout) = context_text(&ContextTaskConfig {
                seed,
                ..Default::default()
            });
            for (name, docs) in [("train", train), ("heldout", heldout)] {
                let dir = out.join(name);
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                let (src, tgt): (Vec<_>, Vec<_>) = docs.into_iter().unzip();
                fs::write(dir.join("src.txt"), corpus_text(&src))?;
                fs::write(dir.join("tgt.txt"), corpus_text(&tgt))?;
            }
            Ok(())
        }
        SynthKind::Repeat => {
            let docs = repeat_corpus(&RepeatCorpusConfig {
                seed,
                ..Default::default()
            });
            fs::write(out, corpus_text(&docs)).with_context(|| format!("writing {}", out.display()))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildGraph {
            corpus,
            conllu,
            coref,
            relations,
            format,
            out,
        } => build_graph(&corpus, conllu.as_deref(), coref.as_deref(), &relations, format, out.as_deref()),
        Command::Train {
            stage,
            config,
            data,
            init,
            out,
            steps,
            lr,
            stage2_lr,
            warmup,
            batch_tokens,
            label_smoothing,
            seed,
            merges,
            mode,
            log,
            state,
            resume,
        } => train(TrainArgs {
            stage,
            config,
            data,
            init,
            out,
            train: TrainConfig {
                learning_rate: lr,
                stage2_learning_rate: stage2_lr,
                warmup_steps: warmup,
                batch_tokens,
                max_steps: steps,
                seed,
                label_smoothing,
                target_mode: mode.parse()?,
                ..TrainConfig::default()
            },
            merges,
            log,
            state,
            resume,
        }),
        Command::Translate {
            ckpt,
            input,
            conllu,
            coref,
            mode,
            beam,
            alpha,
            out,
        } => {
            if beam == 0 {
                bail!("--beam must be positive");
            }
            translate(
                &ckpt,
                &input,
                conllu.as_deref(),
                coref.as_deref(),
                &mode,
                DecodeSettings { beam, alpha },
                out.as_deref(),
            )
        }
        Command::Evaluate {
            hyp,
            reference,
            mode,
            smooth,
        } => evaluate(&hyp, &reference, &mode, smooth),
        Command::Stats {
            graphs,
            radius,
            bucket,
            out,
        } => stats(&graphs, radius, bucket, out.as_deref()),
        Command::Ablate {
            grid,
            init,
            data,
            eval,
            out,
        } => ablate(&grid, &init, &data, eval.as_deref(), out.as_deref()),
        Command::Synth { kind, out, seed } => synth(kind, &out, seed),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
