use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use clap::Args;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use keyphrase::corpus::{find_brat_pairs, read_brat_dir, read_brat_files, read_column, write_column, LabeledSentence};
use keyphrase::encoder::{
    load_embeddings_with_dim, train_supervised, CharVocab, EmbeddingTable, ModelDims, ModelParams, TrainConfig,
};
use keyphrase::eval::{span_prf, to_key_value, to_tsv, token_prf, MetricReport, Subtask};
use keyphrase::graph::{PropagationConfig, PropagationGraph, SigmaMode, PCA_DIM};
use keyphrase::ssl::{self, rounds_tsv, ConfidenceSource, Setting, SslConfig, SslData, SslMode};

use crate::config::{usage, Settings};
use crate::Context;

pub const MODEL_FILE: &str = "model.bin";
pub const GRAPH_FILE: &str = "graph.bin";
pub const ROUNDS_FILE: &str = "rounds.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const METRICS_KV_FILE: &str = "metrics.txt";
pub const TAGGED_FILE: &str = "tagged.col";

/// Reads a BRAT directory or a column file.
fn load_corpus(path: &Path) -> Result<Vec<LabeledSentence>> {
    if path.is_dir() {
        let doc = read_brat_dir(path)?;
        if !doc.warnings.is_empty() {
            log::warn!("{}: {} annotation repairs", path.display(), doc.warnings.len());
        }
        Ok(doc.sentences)
    } else {
        Ok(read_column(path)?)
    }
}

fn load_labeled(path: &Path) -> Result<Vec<LabeledSentence>> {
    let corpus = load_corpus(path)?;
    if let Some(s) = corpus.iter().find(|s| s.labels.is_none()) {
        bail!("{}: sentence {} has no labels", path.display(), s.sentence_index);
    }
    Ok(corpus)
}

fn write(out: &Path, name: &str, content: impl AsRef<[u8]>) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(name);
    std::fs::write(&path, content).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

pub fn convert(dir: &Path, output: &Path) -> Result<()> {
    let (pairs, orphans) = find_brat_pairs(dir)?;
    let mut failed = 0;
    for o in &orphans {
        eprintln!("{}: no matching .txt/.ann partner", o.display());
        failed += 1;
    }
    let mut sentences = Vec::new();
    let mut warnings = 0;
    for pair in &pairs {
        match read_brat_files(&pair.txt, &pair.ann) {
            Ok(doc) => {
                for w in &doc.warnings {
                    log::warn!("{}:{}: {}", pair.ann.display(), w.line, w.message);
                }
                warnings += doc.warnings.len();
                sentences.extend(doc.sentences);
            }
            Err(e) => {
                eprintln!("{}: {e}", pair.ann.display());
                failed += 1;
            }
        }
    }
    if failed > 0 {
        bail!("{failed} file(s) could not be converted");
    }
    std::fs::write(output, write_column(&sentences)).with_context(|| format!("writing {}", output.display()))?;
    println!(
        "converted {} documents, {} sentences, {warnings} warnings",
        pairs.len(),
        sentences.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Labeled training corpus (column file or BRAT directory)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Labeled development corpus used for model selection
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Word vectors in text format; random vectors when absent
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Maximum training epochs [default: 100]
    #[arg(long)]
    epochs: Option<usize>,
    /// SGD learning rate [default: 0.05]
    #[arg(long)]
    lr: Option<f64>,
    /// Epochs without dev improvement before stopping [default: 10]
    #[arg(long)]
    patience: Option<usize>,
    /// Clip each sentence gradient to this norm [default: off]
    #[arg(long)]
    clip_norm: Option<f64>,
    /// [default: 250]
    #[arg(long)]
    word_dim: Option<usize>,
    /// [default: 25]
    #[arg(long)]
    char_dim: Option<usize>,
    /// [default: 25]
    #[arg(long)]
    char_hidden: Option<usize>,
    /// [default: 25]
    #[arg(long)]
    feature_dim: Option<usize>,
    /// [default: 100]
    #[arg(long)]
    token_hidden: Option<usize>,
}

struct TrainSetup {
    train: Vec<LabeledSentence>,
    dev: Vec<LabeledSentence>,
    embeddings: Option<PathBuf>,
    dims: ModelDims,
    config: TrainConfig,
}

impl TrainArgs {
    fn resolve(self, settings: &mut Settings) -> Result<TrainSetup> {
        let d = ModelDims::default();
        let t = TrainConfig::default();
        let train = settings.require("train", self.train)?;
        let dev = settings.get::<PathBuf>("dev", self.dev)?;
        let embeddings = settings.get("embeddings", self.embeddings)?;
        let dims = ModelDims {
            word_dim: settings.get_or("word-dim", self.word_dim, d.word_dim)?,
            char_dim: settings.get_or("char-dim", self.char_dim, d.char_dim)?,
            char_hidden: settings.get_or("char-hidden", self.char_hidden, d.char_hidden)?,
            feature_dim: settings.get_or("feature-dim", self.feature_dim, d.feature_dim)?,
            token_hidden: settings.get_or("token-hidden", self.token_hidden, d.token_hidden)?,
        };
        let config = TrainConfig {
            learning_rate: settings.get_or("lr", self.lr, t.learning_rate)?,
            max_epochs: settings.get_or("epochs", self.epochs, t.max_epochs)?,
            patience: settings.get_or("patience", self.patience, t.patience)?,
            clip_norm: settings.get("clip-norm", self.clip_norm)?,
        };
        Ok(TrainSetup {
            train: load_labeled(&train)?,
            dev: dev.as_deref().map(load_labeled).transpose()?.unwrap_or_default(),
            embeddings,
            dims,
            config,
        })
    }
}

/// Draws from `rng` in this order: word vectors (only when no embedding
/// file is given; one draw per word and dimension, words in first-seen
/// order over `corpora`), then the network weights.
fn init_model(
    setup: &TrainSetup,
    corpora: &[&[LabeledSentence]],
    rng: &mut ChaCha8Rng,
) -> Result<ModelParams> {
    let all = corpora.iter().flat_map(|c| c.iter());
    let table = match &setup.embeddings {
        Some(path) => load_embeddings_with_dim(path, setup.dims.word_dim)?,
        None => EmbeddingTable::random(all.clone(), setup.dims.word_dim, rng),
    };
    let chars = CharVocab::build(all);
    Ok(ModelParams::new(setup.dims, table, chars, rng)?)
}

fn graph_q(graph: Option<&PropagationGraph>, s: &LabeledSentence) -> Option<ndarray::Array2<f64>> {
    graph.and_then(|g| g.q_for(&s.doc_id, s.sentence_index))
}

fn predict(model: &ModelParams, corpus: &[LabeledSentence], graph: Option<&PropagationGraph>) -> Result<Vec<LabeledSentence>> {
    use rayon::prelude::*;
    corpus
        .par_iter()
        .map(|s| {
            let labels = model.tag(s, graph_q(graph, s).as_ref())?;
            Ok(LabeledSentence {
                labels: Some(labels),
                ..s.clone()
            })
        })
        .collect()
}

fn score(gold: &[LabeledSentence], pred: &[LabeledSentence]) -> Result<Vec<MetricReport>> {
    if gold.len() != pred.len() {
        bail!("gold has {} sentences, predictions {}", gold.len(), pred.len());
    }
    let spans = |c: &[LabeledSentence]| c.iter().map(|s| s.spans()).collect::<Vec<_>>();
    let labels = |c: &[LabeledSentence]| c.iter().map(|s| s.labels.clone().unwrap_or_default()).collect::<Vec<_>>();
    let (g, p) = (spans(gold), spans(pred));
    Ok(vec![
        span_prf(&g, &p, Subtask::Classification)?,
        span_prf(&g, &p, Subtask::Identification)?,
        token_prf(&labels(gold), &labels(pred))?,
    ])
}

fn report_dev(
    ctx: &Context,
    model: &ModelParams,
    dev: &[LabeledSentence],
    graph: Option<&PropagationGraph>,
) -> Result<()> {
    if dev.is_empty() {
        return Ok(());
    }
    let reports = score(dev, &predict(model, dev, graph)?)?;
    write(&ctx.out, METRICS_FILE, to_tsv(&reports))?;
    println!("dev span classification F1 = {:.3}", reports[0].overall.f1);
    Ok(())
}

pub fn train(ctx: &Context, args: TrainArgs, mut settings: Settings) -> Result<()> {
    let setup = args.resolve(&mut settings)?;
    settings.finish()?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let model = init_model(&setup, &[&setup.train, &setup.dev], &mut rng)?;
    let outcome = train_supervised(model, &setup.train, &setup.dev, &setup.config, &mut rng)?;
    for r in &outcome.history {
        let f1 = r.dev.as_ref().map_or(String::from("-"), |d| format!("{:.3}", d.overall.f1));
        log::info!("epoch {} loss {:.4} dev F1 {f1} ({:.1}s)", r.epoch, r.loss, r.seconds);
    }
    let path = write(&ctx.out, MODEL_FILE, outcome.model.to_bytes())?;
    log::info!("best epoch {}; model written to {}", outcome.best_epoch, path.display());
    report_dev(ctx, &outcome.model, &setup.dev, None)
}

#[derive(Args, Debug)]
pub struct SslArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Start from this checkpoint instead of training a supervised model
    #[arg(long)]
    model: Option<PathBuf>,
    /// Unlabeled corpus; repeat for several
    #[arg(long)]
    unlabeled: Vec<PathBuf>,
    /// interp, feat, hard or ulm [default: interp]
    #[arg(long)]
    mode: Option<SslMode>,
    /// inductive or transductive [default: inductive]
    #[arg(long)]
    setting: Option<Setting>,
    /// Weight of the CRF marginals when interpolating [default: 0.3]
    #[arg(long)]
    alpha: Option<f64>,
    /// Confidence threshold [default: 0.4]
    #[arg(long)]
    eta: Option<f64>,
    /// Self-training rounds [default: 5]
    #[arg(long)]
    rounds: Option<usize>,
    /// fused or crf [default: fused]
    #[arg(long)]
    confidence: Option<ConfidenceSource>,
    /// Weight of pseudo-labeled sentences [default: 1]
    #[arg(long)]
    pseudo_weight: Option<f64>,
    #[command(flatten)]
    graph: GraphOptions,
    #[command(flatten)]
    propagation: PropagationOptions,
}

#[derive(Args, Debug)]
struct GraphOptions {
    /// Nearest neighbors per node [default: 10]
    #[arg(long)]
    k: Option<usize>,
    /// Projected feature width [default: 100]
    #[arg(long)]
    pca_dim: Option<usize>,
    /// Kernel width, or `mean` for the mean neighbor distance [default: mean]
    #[arg(long)]
    sigma: Option<String>,
}

#[derive(Args, Debug)]
struct PropagationOptions {
    /// Graph smoothness weight [default: 1e-6]
    #[arg(long)]
    mu: Option<f64>,
    /// Weight of the pull toward the CRF marginals [default: 1e-5]
    #[arg(long)]
    nu: Option<f64>,
    /// Maximum propagation sweeps [default: 100]
    #[arg(long)]
    prop_iters: Option<usize>,
    /// Relative objective decrease that ends propagation [default: 1e-6]
    #[arg(long)]
    prop_tol: Option<f64>,
}

fn parse_sigma(value: Option<String>) -> Result<SigmaMode> {
    match value.as_deref() {
        None | Some("mean") => Ok(SigmaMode::MeanKnnDistance),
        Some(v) => match v.parse::<f64>() {
            Ok(s) if s >= 0.0 && s.is_finite() => Ok(SigmaMode::Fixed(s)),
            _ => Err(usage(format!("bad sigma `{v}`"))),
        },
    }
}

impl GraphOptions {
    /// `(k, pca_dim, sigma)`.
    fn resolve(self, settings: &mut Settings) -> Result<(usize, usize, SigmaMode)> {
        let k = settings.get_or("k", self.k, PropagationConfig::default().k)?;
        let pca_dim = settings.get_or("pca-dim", self.pca_dim, PCA_DIM)?;
        let sigma = parse_sigma(settings.get("sigma", self.sigma)?)?;
        Ok((k, pca_dim, sigma))
    }
}

impl PropagationOptions {
    fn resolve(self, settings: &mut Settings, base: PropagationConfig) -> Result<PropagationConfig> {
        Ok(PropagationConfig {
            mu: settings.get_or("mu", self.mu, base.mu)?,
            nu: settings.get_or("nu", self.nu, base.nu)?,
            max_iters: settings.get_or("prop-iters", self.prop_iters, base.max_iters)?,
            tol: settings.get_or("prop-tol", self.prop_tol, base.tol)?,
            ..base
        })
    }
}

pub fn ssl_train(ctx: &Context, args: SslArgs, mut settings: Settings) -> Result<()> {
    let setup = args.train.resolve(&mut settings)?;
    let start = settings.get::<PathBuf>("model", args.model)?;
    let unlabeled_paths = settings.paths("unlabeled", args.unlabeled);
    let d = SslConfig::default();
    let (k, pca_dim, sigma_mode) = args.graph.resolve(&mut settings)?;
    let base = PropagationConfig {
        k,
        sigma_mode,
        ..PropagationConfig::default()
    };
    let config = SslConfig {
        mode: settings.get_or("mode", args.mode, d.mode)?,
        setting: settings.get_or("setting", args.setting, d.setting)?,
        alpha: settings.get_or("alpha", args.alpha, d.alpha)?,
        eta: settings.get_or("eta", args.eta, d.eta)?,
        max_rounds: settings.get_or("rounds", args.rounds, d.max_rounds)?,
        confidence: settings.get_or("confidence", args.confidence, d.confidence)?,
        pseudo_weight: settings.get_or("pseudo-weight", args.pseudo_weight, d.pseudo_weight)?,
        propagation: args.propagation.resolve(&mut settings, base)?,
        pca_dim,
        train: setup.config,
    };
    settings.finish()?;
    config.validate().map_err(|e| usage(e.to_string()))?;

    let mut unlabeled = Vec::new();
    for p in &unlabeled_paths {
        unlabeled.extend(load_corpus(p)?.iter().map(LabeledSentence::unlabeled));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let model = match start {
        Some(path) => ModelParams::load(&path)?,
        None => {
            let model = init_model(&setup, &[&setup.train, &setup.dev, &unlabeled], &mut rng)?;
            let sup = train_supervised(model, &setup.train, &setup.dev, &setup.config, &mut rng)?;
            log::info!("supervised model: best epoch {}", sup.best_epoch);
            sup.model
        }
    };
    let data = SslData {
        labeled: &setup.train,
        dev: &setup.dev,
        unlabeled: &unlabeled,
    };
    let outcome = ssl::ssl_train(model, &data, &config, &mut rng)?;
    println!("round 0 dev span classification F1 = {:.3}", outcome.round0.overall.f1);
    for r in &outcome.rounds {
        println!(
            "round {} dev span classification F1 = {:.3} ({} pseudo-labeled, {} infeasible)",
            r.round, r.dev.overall.f1, r.pseudo_sentences, r.infeasible
        );
    }
    println!("selected round {}", outcome.best_round);
    write(&ctx.out, MODEL_FILE, outcome.model.to_bytes())?;
    write(&ctx.out, ROUNDS_FILE, rounds_tsv(&outcome.rounds))?;
    if let Some(g) = &outcome.graph {
        write(&ctx.out, GRAPH_FILE, g.to_bytes())?;
    }
    report_dev(ctx, &outcome.model, &setup.dev, outcome.graph.as_ref())
}

#[derive(Args, Debug)]
pub struct TagArgs {
    /// Model checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Corpus to tag (column file or BRAT directory)
    #[arg(long)]
    input: Option<PathBuf>,
    /// Graph checkpoint supplying propagated distributions
    #[arg(long)]
    graph: Option<PathBuf>,
    /// Output file [default: <out>/tagged.col]
    #[arg(long)]
    output: Option<PathBuf>,
}

pub fn tag(ctx: &Context, args: TagArgs, mut settings: Settings) -> Result<()> {
    let model_path: PathBuf = settings.require("model", args.model)?;
    let input: PathBuf = settings.require("input", args.input)?;
    let graph_path = settings.get::<PathBuf>("graph", args.graph)?;
    let output = settings.get::<PathBuf>("output", args.output)?;
    settings.finish()?;
    let model = ModelParams::load(&model_path)?;
    let graph = graph_path.as_deref().map(PropagationGraph::load).transpose()?;
    let corpus = load_corpus(&input)?;
    if let Some(g) = &graph {
        let missing = corpus.iter().filter(|s| graph_q(Some(g), s).is_none()).count();
        if missing > 0 {
            log::warn!("{missing} sentences are not in the graph and are tagged without it");
        }
    }
    let tagged = predict(&model, &corpus, graph.as_ref())?;
    let path = match output {
        Some(p) => {
            std::fs::write(&p, write_column(&tagged)).with_context(|| format!("writing {}", p.display()))?;
            p
        }
        None => write(&ctx.out, TAGGED_FILE, write_column(&tagged))?,
    };
    println!("tagged {} sentences into {}", tagged.len(), path.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Gold corpus
    #[arg(long)]
    gold: Option<PathBuf>,
    /// Predicted corpus, sentence-aligned with the gold one
    #[arg(long)]
    pred: Option<PathBuf>,
}

pub fn eval(ctx: &Context, args: EvalArgs, mut settings: Settings) -> Result<()> {
    let gold: PathBuf = settings.require("gold", args.gold)?;
    let pred: PathBuf = settings.require("pred", args.pred)?;
    settings.finish()?;
    let gold = load_labeled(&gold)?;
    let pred = load_labeled(&pred)?;
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        if g.len() != p.len() {
            bail!("sentence {i}: gold has {} tokens, predictions {}", g.len(), p.len());
        }
    }
    let reports = score(&gold, &pred)?;
    print!("{}", to_tsv(&reports));
    write(&ctx.out, METRICS_FILE, to_tsv(&reports))?;
    write(&ctx.out, METRICS_KV_FILE, to_key_value(&reports))?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    /// Model checkpoint providing word vectors and marginals
    #[arg(long)]
    model: Option<PathBuf>,
    /// Labeled corpus whose gold labels anchor the graph; repeat for several
    #[arg(long)]
    labeled: Vec<PathBuf>,
    /// Corpus entering the graph without labels; repeat for several
    #[arg(long)]
    unlabeled: Vec<PathBuf>,
    #[command(flatten)]
    graph: GraphOptions,
}

pub fn build_graph(ctx: &Context, args: GraphArgs, mut settings: Settings) -> Result<()> {
    use rayon::prelude::*;
    let model_path: PathBuf = settings.require("model", args.model)?;
    let labeled_paths = settings.paths("labeled", args.labeled);
    let unlabeled_paths = settings.paths("unlabeled", args.unlabeled);
    let (k, pca_dim, sigma) = args.graph.resolve(&mut settings)?;
    settings.finish()?;
    if labeled_paths.is_empty() && unlabeled_paths.is_empty() {
        return Err(usage("missing required input --labeled or --unlabeled"));
    }
    let model = ModelParams::load(&model_path)?;
    let mut sentences = Vec::new();
    let mut flags = Vec::new();
    for p in &labeled_paths {
        let c = load_labeled(p)?;
        flags.extend(std::iter::repeat_n(true, c.len()));
        sentences.extend(c);
    }
    for p in &unlabeled_paths {
        let c = load_corpus(p)?;
        flags.extend(std::iter::repeat_n(false, c.len()));
        sentences.extend(c);
    }
    let refs: Vec<&LabeledSentence> = sentences.iter().collect();
    let mut graph = PropagationGraph::build(&refs, &flags, &model.word_table, pca_dim, k, sigma)?;
    let marginals = refs
        .par_iter()
        .map(|s| model.marginals(s, None))
        .collect::<keyphrase::Result<Vec<_>>>()?;
    graph.set_p_tilde(&marginals)?;
    write(&ctx.out, GRAPH_FILE, graph.to_bytes())?;
    println!(
        "graph: {} nodes, {} edges, sigma {:.4}",
        graph.node_count(),
        graph.edges.len(),
        graph.sigma
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PropagateArgs {
    /// Graph checkpoint
    #[arg(long)]
    graph: Option<PathBuf>,
    #[command(flatten)]
    propagation: PropagationOptions,
}

pub fn propagate(ctx: &Context, args: PropagateArgs, mut settings: Settings) -> Result<()> {
    let path: PathBuf = settings.require("graph", args.graph)?;
    let config = args.propagation.resolve(&mut settings, PropagationConfig::default())?;
    settings.finish()?;
    let mut graph = PropagationGraph::load(&path)?;
    let result = graph.propagate(&config)?;
    let first = result.objective_trace.first().copied().unwrap_or(0.0);
    let last = result.objective_trace.last().copied().unwrap_or(0.0);
    println!(
        "objective {first:.6} -> {last:.6} in {} sweeps{}",
        result.iterations,
        if result.converged { "" } else { " (not converged)" }
    );
    write(&ctx.out, GRAPH_FILE, graph.to_bytes())?;
    Ok(())
}
