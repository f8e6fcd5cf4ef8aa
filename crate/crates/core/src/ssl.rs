//! Self-training with graph-smoothed posteriors and confidence-gated
//! lattices.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::corpus::{LabeledSentence, NUM_LABELS};
use crate::crf::{is_impossible, EmissionMatrix, TagLattice, TransitionMatrix};
use crate::encoder::{evaluate_spans, train_examples, EvalSentence, ModelParams, TrainConfig, TrainingExample};
use crate::eval::MetricReport;
use crate::graph::{PropagationConfig, PropagationGraph, PropagationResult, PCA_DIM};
use crate::{Error, Result};

/// How graph distributions reach the tagger.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SslMode {
    /// Interpolate CRF marginals with propagated distributions.
    Interp,
    /// Feed propagated distributions into the emissions through a learned
    /// mixing matrix.
    Feat,
    /// Retrain on the posterior-decoded path of every unlabeled sentence.
    HardSelfTrain,
    /// Confidence lattices from CRF marginals alone, no graph.
    UlmOnly,
}

impl SslMode {
    pub fn uses_graph(self) -> bool {
        matches!(self, SslMode::Interp | SslMode::Feat)
    }
}

impl FromStr for SslMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "interp" => Ok(SslMode::Interp),
            "feat" => Ok(SslMode::Feat),
            "hard" | "hard-self-train" => Ok(SslMode::HardSelfTrain),
            "ulm" | "ulm-only" => Ok(SslMode::UlmOnly),
            _ => Err(Error::InvalidParameter(format!("unknown mode {s:?}"))),
        }
    }
}

/// Whether test-article text is part of the unlabeled scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    Inductive,
    Transductive,
}

impl FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inductive" => Ok(Setting::Inductive),
            "transductive" => Ok(Setting::Transductive),
            _ => Err(Error::InvalidParameter(format!("unknown setting {s:?}"))),
        }
    }
}

/// Which distribution is compared against the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfidenceSource {
    Fused,
    CrfMarginal,
}

impl FromStr for ConfidenceSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fused" => Ok(ConfidenceSource::Fused),
            "crf" | "crf-marginal" => Ok(ConfidenceSource::CrfMarginal),
            _ => Err(Error::InvalidParameter(format!("unknown confidence source {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SslConfig {
    pub mode: SslMode,
    pub setting: Setting,
    /// Weight of the CRF marginals when interpolating.
    pub alpha: f64,
    /// Confidence threshold.
    pub eta: f64,
    pub max_rounds: usize,
    pub propagation: PropagationConfig,
    pub pca_dim: usize,
    pub confidence: ConfidenceSource,
    /// Weight of pseudo-labeled sentences relative to gold ones.
    pub pseudo_weight: f64,
    /// Retraining schedule for each round.
    pub train: TrainConfig,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            mode: SslMode::Interp,
            setting: Setting::Inductive,
            alpha: 0.3,
            eta: 0.4,
            max_rounds: 5,
            propagation: PropagationConfig::default(),
            pca_dim: PCA_DIM,
            confidence: ConfidenceSource::Fused,
            pseudo_weight: 1.0,
            train: TrainConfig::default(),
        }
    }
}

impl SslConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("alpha", self.alpha)?;
        unit("eta", self.eta)?;
        if self.mode == SslMode::Feat && self.setting != Setting::Transductive {
            return Err(Error::InvalidParameter("feat mode requires the transductive setting".into()));
        }
        if !(self.pseudo_weight >= 0.0 && self.pseudo_weight.is_finite()) {
            return Err(Error::InvalidParameter(format!("pseudo weight {}", self.pseudo_weight)));
        }
        Ok(())
    }
}

/// `α·p + (1−α)·q`, row by row.
pub fn graph_interp(p: &Array2<f64>, q: &Array2<f64>, alpha: f64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha = {alpha} outside [0, 1]")));
    }
    if p.dim() != q.dim() {
        return Err(Error::shape("interpolated rows", format!("{:?}", p.dim()), format!("{:?}", q.dim())));
    }
    Ok(p * alpha + q * (1.0 - alpha))
}

/// `P̃[t] = P[t] + M·Q[t]` for every token `t`.
pub fn graph_feat_emissions(p: &EmissionMatrix, q: &Array2<f64>, m: &Array2<f64>) -> Result<EmissionMatrix> {
    if q.dim() != (p.n(), p.m()) {
        return Err(Error::shape("graph rows", format!("({}, {})", p.n(), p.m()), format!("{:?}", q.dim())));
    }
    if m.dim() != (p.m(), p.m()) {
        return Err(Error::shape("mixing matrix", format!("({0}, {0})", p.m()), format!("{:?}", m.dim())));
    }
    EmissionMatrix::new(&p.scores() + &q.dot(&m.t()))
}

/// Per-row argmax, lower index on ties.
pub fn posterior_decode(p_hat: &Array2<f64>) -> Vec<usize> {
    p_hat
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// A singleton at the argmax label where its probability exceeds `eta`,
/// every label elsewhere.
pub fn build_confidence_lattice(p_hat: &Array2<f64>, eta: f64) -> TagLattice {
    let m = p_hat.ncols();
    let allowed = posterior_decode(p_hat)
        .into_iter()
        .enumerate()
        .map(|(t, y)| if p_hat[[t, y]] > eta { vec![y] } else { (0..m).collect() })
        .collect();
    TagLattice::new(allowed, m).expect("non-empty label sets")
}

/// Whether at least one path through the lattice avoids forbidden
/// transitions.
pub fn lattice_is_feasible(lattice: &TagLattice, t: &TransitionMatrix) -> bool {
    let ok = |a: usize, b: usize| !is_impossible(t.get(a, b));
    if lattice.is_empty() {
        return ok(t.start(), t.stop());
    }
    let mut reach: Vec<usize> = lattice.allowed(0).iter().copied().filter(|&y| ok(t.start(), y)).collect();
    for pos in 1..lattice.len() {
        reach = lattice
            .allowed(pos)
            .iter()
            .copied()
            .filter(|&y| reach.iter().any(|&x| ok(x, y)))
            .collect();
        if reach.is_empty() {
            return false;
        }
    }
    reach.iter().any(|&x| ok(x, t.stop()))
}

/// Corpora taking part in semi-supervised training.
#[derive(Debug, Clone, Copy)]
pub struct SslData<'a> {
    pub labeled: &'a [LabeledSentence],
    pub dev: &'a [LabeledSentence],
    /// Unlabeled text; under the transductive setting it includes the
    /// test articles.
    pub unlabeled: &'a [LabeledSentence],
}

impl<'a> SslData<'a> {
    /// Labeled, then dev, then unlabeled: the graph's sentence order.
    pub fn scope(&self) -> Vec<&'a LabeledSentence> {
        self.labeled.iter().chain(self.dev).chain(self.unlabeled).collect()
    }

    fn unlabeled_offset(&self) -> usize {
        self.labeled.len() + self.dev.len()
    }
}

/// Builds the token graph over the whole scope. Only training sentences
/// contribute empirical label distributions.
pub fn build_scope_graph(data: &SslData<'_>, model: &ModelParams, config: &SslConfig) -> Result<PropagationGraph> {
    let scope = data.scope();
    let labeled: Vec<bool> = (0..scope.len()).map(|i| i < data.labeled.len()).collect();
    PropagationGraph::build(
        &scope,
        &labeled,
        &model.word_table,
        config.pca_dim,
        config.propagation.k,
        config.propagation.sigma_mode,
    )
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub model: ModelParams,
    /// Training loss of the retained epoch.
    pub objective: f64,
    pub dev: Option<MetricReport>,
    pub pseudo_sentences: usize,
    /// Pseudo-label lattices with no legal path, left out of training.
    pub infeasible: usize,
    pub propagation: Option<PropagationResult>,
}

fn per_sentence_q(graph: Option<&PropagationGraph>, mode: SslMode, count: usize) -> Vec<Option<Array2<f64>>> {
    match graph {
        Some(g) if mode == SslMode::Feat => (0..count).map(|i| Some(g.sentence_q(i).to_owned())).collect(),
        _ => vec![None; count],
    }
}

/// One round: CRF marginals on every graph node, propagation, posterior
/// fusion, confidence lattices on unlabeled sentences and retraining from
/// the current weights on gold plus pseudo-labeled data.
pub fn self_train_round<R: Rng>(
    model: ModelParams,
    graph: Option<&mut PropagationGraph>,
    data: &SslData<'_>,
    config: &SslConfig,
    rng: &mut R,
) -> Result<RoundOutcome> {
    let scope = data.scope();
    let offset = data.unlabeled_offset();
    let mode = config.mode;
    let mut graph = graph;
    if mode.uses_graph() && graph.is_none() {
        return Err(Error::InvalidParameter("graph modes need a propagation graph".into()));
    }

    let mut propagation = None;
    let crf_rows: Vec<Array2<f64>>;
    if let Some(g) = graph.as_deref_mut().filter(|_| mode.uses_graph()) {
        let q_old = per_sentence_q(Some(g), mode, scope.len());
        let p_tilde = scope
            .par_iter()
            .zip(&q_old)
            .map(|(s, q)| model.marginals(s, q.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        g.set_p_tilde(&p_tilde)?;
        propagation = Some(g.propagate(&config.propagation)?);
        crf_rows = p_tilde.into_iter().skip(offset).collect();
    } else {
        crf_rows = data
            .unlabeled
            .par_iter()
            .map(|s| model.marginals(s, None))
            .collect::<Result<Vec<_>>>()?;
    }
    let graph_q = per_sentence_q(graph.as_deref(), mode, scope.len());

    let lattices: Vec<Option<TagLattice>> = data
        .unlabeled
        .par_iter()
        .enumerate()
        .map(|(j, s)| {
            let crf = &crf_rows[j];
            let fused = match mode {
                SslMode::Interp => {
                    let g = graph.as_deref().expect("checked above");
                    graph_interp(crf, &g.sentence_q(offset + j).to_owned(), config.alpha)?
                }
                SslMode::Feat => model.marginals(s, graph_q[offset + j].as_ref())?,
                SslMode::HardSelfTrain | SslMode::UlmOnly => crf.clone(),
            };
            let lattice = match (mode, config.confidence) {
                (SslMode::HardSelfTrain, _) => TagLattice::from_path(&posterior_decode(&fused)),
                (SslMode::Feat, _) | (_, ConfidenceSource::Fused) => build_confidence_lattice(&fused, config.eta),
                (_, ConfidenceSource::CrfMarginal) => build_confidence_lattice(crf, config.eta),
            };
            Ok(lattice_is_feasible(&lattice, &model.weights.transitions).then_some(lattice))
        })
        .collect::<Result<Vec<_>>>()?;
    let infeasible = lattices.iter().filter(|l| l.is_none()).count();
    if infeasible > 0 {
        log::warn!("{infeasible} pseudo-labeled sentences have no legal path and are skipped");
    }

    let mut examples = Vec::with_capacity(data.labeled.len() + lattices.len());
    for (i, s) in data.labeled.iter().enumerate() {
        let mut ex = TrainingExample::gold(s)?;
        ex.graph_q = graph_q[i].as_ref();
        examples.push(ex);
    }
    let mut pseudo_sentences = 0;
    for (j, lattice) in lattices.into_iter().enumerate() {
        if let Some(lattice) = lattice {
            pseudo_sentences += 1;
            examples.push(TrainingExample {
                sentence: &data.unlabeled[j],
                lattice,
                graph_q: graph_q[offset + j].as_ref(),
                weight: config.pseudo_weight,
            });
        }
    }
    let dev: Vec<EvalSentence> = data
        .dev
        .iter()
        .enumerate()
        .map(|(i, s)| EvalSentence {
            sentence: s,
            graph_q: graph_q[data.labeled.len() + i].as_ref(),
        })
        .collect();
    let outcome = train_examples(model, &examples, &dev, &config.train, rng)?;
    let record = outcome.best_record().or(outcome.history.last());
    let objective = record.map_or(0.0, |r| r.loss);
    let dev_report = record.and_then(|r| r.dev.clone());
    Ok(RoundOutcome {
        model: outcome.model,
        objective,
        dev: dev_report,
        pseudo_sentences,
        infeasible,
        propagation,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub objective: f64,
    pub dev: MetricReport,
    pub seconds: f64,
    pub pseudo_sentences: usize,
    pub infeasible: usize,
}

#[derive(Debug, Clone)]
pub struct SslOutcome {
    pub model: ModelParams,
    /// Graph whose distributions belong to the selected round.
    pub graph: Option<PropagationGraph>,
    pub round0: MetricReport,
    pub rounds: Vec<RoundRecord>,
    /// 0 when no round beat the starting model.
    pub best_round: usize,
}

impl SslOutcome {
    pub fn best_dev_f1(&self) -> f64 {
        match self.best_round {
            0 => self.round0.overall.f1,
            r => self.rounds[r - 1].dev.overall.f1,
        }
    }
}

/// `round  objective  dev-P  dev-R  dev-F1  seconds` per line.
pub fn rounds_tsv(rounds: &[RoundRecord]) -> String {
    let mut out = String::new();
    for r in rounds {
        writeln!(
            out,
            "{}\t{:.6}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            r.round, r.objective, r.dev.overall.precision, r.dev.overall.recall, r.dev.overall.f1, r.seconds
        )
        .unwrap();
    }
    out
}

/// Runs up to `max_rounds` rounds from a supervised model and keeps the
/// model with the best dev span-classification F1, round 0 included. With
/// an empty dev set the last round is kept.
pub fn ssl_train<R: Rng>(model: ModelParams, data: &SslData<'_>, config: &SslConfig, rng: &mut R) -> Result<SslOutcome> {
    config.validate()?;
    let zero_q: Vec<Array2<f64>> = data.dev.iter().map(|s| Array2::zeros((s.len(), NUM_LABELS))).collect();
    let dev0: Vec<EvalSentence> = data
        .dev
        .iter()
        .zip(&zero_q)
        .map(|(s, q)| EvalSentence {
            sentence: s,
            graph_q: (config.mode == SslMode::Feat).then_some(q),
        })
        .collect();
    let round0 = evaluate_spans(&model, &dev0)?;
    let mut outcome = SslOutcome {
        model,
        graph: None,
        round0,
        rounds: Vec::new(),
        best_round: 0,
    };
    if config.max_rounds == 0 {
        return Ok(outcome);
    }
    if data.unlabeled.is_empty() {
        log::warn!("no unlabeled sentences; keeping the supervised model");
        return Ok(outcome);
    }

    let mut graph = if config.mode.uses_graph() {
        let mut g = build_scope_graph(data, &outcome.model, config)?;
        if config.mode == SslMode::Feat {
            g.q.fill(0.0);
        }
        Some(g)
    } else {
        None
    };
    let mut best_f1 = outcome.round0.overall.f1;
    let mut current = outcome.model.clone();
    for round in 1..=config.max_rounds {
        let started = Instant::now();
        let result = self_train_round(current, graph.as_mut(), data, config, rng)?;
        current = result.model;
        let dev = match result.dev {
            Some(d) => d,
            None => evaluate_spans(&current, &[])?,
        };
        let f1 = dev.overall.f1;
        log::info!(
            "round {round}: objective {:.4}, dev F1 {f1:.3}, {} pseudo-labeled",
            result.objective,
            result.pseudo_sentences
        );
        outcome.rounds.push(RoundRecord {
            round,
            objective: result.objective,
            dev,
            seconds: started.elapsed().as_secs_f64(),
            pseudo_sentences: result.pseudo_sentences,
            infeasible: result.infeasible,
        });
        if data.dev.is_empty() || f1 > best_f1 {
            best_f1 = f1;
            outcome.best_round = round;
            outcome.model = current.clone();
            outcome.graph = graph.clone();
        }
    }
    if outcome.graph.is_none() {
        outcome.graph = graph;
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn interpolation_examples() {
        let p = array![[0.8, 0.2]];
        let q = array![[0.2, 0.8]];
        assert_eq!(graph_interp(&p, &q, 1.0).unwrap(), p);
        assert_eq!(graph_interp(&p, &q, 0.0).unwrap(), q);
        let mixed = graph_interp(&p, &q, 0.3).unwrap();
        assert!((mixed[[0, 0]] - 0.38).abs() < 1e-12 && (mixed[[0, 1]] - 0.62).abs() < 1e-12);
        assert!(graph_interp(&p, &q, 1.5).is_err());
    }

    #[test]
    fn feat_emissions() {
        let p = EmissionMatrix::new(array![[1.0, 2.0], [0.5, -1.0]]).unwrap();
        let q = array![[1.0, 0.0], [0.0, 1.0]];
        let zero = Array2::zeros((2, 2));
        assert_eq!(graph_feat_emissions(&p, &q, &zero).unwrap().scores(), p.scores());
        let eye = Array2::eye(2);
        let out = graph_feat_emissions(&p, &q, &eye).unwrap();
        assert_eq!(out.scores(), array![[2.0, 2.0], [0.5, 0.0]]);
        let m = array![[0.0, 1.0], [2.0, 0.0]];
        let q = array![[0.25, 0.75], [0.5, 0.5]];
        let out = graph_feat_emissions(&p, &q, &m).unwrap();
        assert_eq!(out.scores(), array![[1.75, 2.5], [1.0, 0.0]]);
        assert!(graph_feat_emissions(&p, &zero, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn confidence_lattice_rule() {
        let p = array![[0.9, 0.05, 0.05], [0.3, 0.3, 0.4], [0.5, 0.25, 0.25]];
        let l = build_confidence_lattice(&p, 0.4);
        assert_eq!(l.allowed(0), &[0]);
        assert_eq!(l.allowed(1).len(), 3);
        assert_eq!(l.allowed(2), &[0]);
        let never = build_confidence_lattice(&p, 1.0);
        assert!((0..3).all(|t| never.allowed(t).len() == 3));
    }

    #[test]
    fn feasibility() {
        let t = TransitionMatrix::iobes();
        let b_task = "B-Task".parse::<crate::corpus::Label>().unwrap().index();
        let e_task = "E-Task".parse::<crate::corpus::Label>().unwrap().index();
        assert!(lattice_is_feasible(&TagLattice::from_path(&[b_task, e_task]), &t));
        assert!(!lattice_is_feasible(&TagLattice::from_path(&[b_task, 0]), &t));
        assert!(lattice_is_feasible(&TagLattice::full(3, NUM_LABELS), &t));
    }

    #[test]
    fn feat_requires_transductive() {
        let config = SslConfig {
            mode: SslMode::Feat,
            ..SslConfig::default()
        };
        assert!(config.validate().is_err());
        assert!(SslConfig { setting: Setting::Transductive, ..config }.validate().is_ok());
    }
}
