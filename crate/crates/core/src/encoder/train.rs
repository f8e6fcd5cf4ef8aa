use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{ModelParams, Weights};
use crate::corpus::{iobes_to_spans, LabeledSentence};
use crate::crf::{is_impossible, TagLattice};
use crate::eval::{span_prf, MetricReport, Subtask};
use crate::{Error, Result};

/// Step size and the seed the epoch shuffles were drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub rng_seed: u64,
    /// Epochs completed.
    pub epoch: usize,
}

impl Default for OptimizerState {
    fn default() -> Self {
        OptimizerState {
            learning_rate: 0.05,
            rng_seed: 0,
            epoch: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Rescale each sentence gradient to at most this norm.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            max_epochs: 100,
            patience: 10,
            clip_norm: None,
        }
    }
}

/// One sentence with its target lattice.
#[derive(Debug, Clone)]
pub struct TrainingExample<'a> {
    pub sentence: &'a LabeledSentence,
    pub lattice: TagLattice,
    pub graph_q: Option<&'a Array2<f64>>,
    pub weight: f64,
}

impl<'a> TrainingExample<'a> {
    /// Gold path as an all-singleton lattice.
    pub fn gold(sentence: &'a LabeledSentence) -> Result<Self> {
        let path = sentence
            .label_indices()
            .ok_or_else(|| Error::InvalidParameter(format!("sentence {}#{} has no labels", sentence.doc_id, sentence.sentence_index)))?;
        Ok(TrainingExample {
            sentence,
            lattice: TagLattice::from_path(&path),
            graph_q: None,
            weight: 1.0,
        })
    }
}

/// A labeled sentence to score, with graph distributions when the model
/// consumes them.
#[derive(Debug, Clone, Copy)]
pub struct EvalSentence<'a> {
    pub sentence: &'a LabeledSentence,
    pub graph_q: Option<&'a Array2<f64>>,
}

impl<'a> From<&'a LabeledSentence> for EvalSentence<'a> {
    fn from(sentence: &'a LabeledSentence) -> Self {
        EvalSentence { sentence, graph_q: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Negative weighted log-likelihood summed over the epoch, each term
    /// taken before its own update.
    pub loss: f64,
    pub dev: Option<MetricReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    pub history: Vec<EpochRecord>,
    /// 0 when no epoch beat the starting point.
    pub best_epoch: usize,
    pub optimizer: OptimizerState,
}

impl TrainOutcome {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.history.iter().find(|r| r.epoch == self.best_epoch)
    }
}

/// `θ ← θ + lr · g`. Structurally forbidden entries stay untouched.
pub fn sgd_step(weights: &mut Weights, grads: &Weights, lr: f64) -> Result<()> {
    let grads = grads.blocks();
    let mut params = weights.blocks_mut();
    if params.len() != grads.len() {
        return Err(Error::shape("parameter blocks", params.len(), grads.len()));
    }
    for ((name, shape, data), (_, gshape, g)) in params.iter_mut().zip(&grads) {
        if shape != gshape {
            return Err(Error::shape(name, format!("{shape:?}"), format!("{gshape:?}")));
        }
        for (p, &g) in data.iter_mut().zip(g.iter()) {
            if !is_impossible(*p) {
                *p += lr * g;
            }
        }
    }
    Ok(())
}

/// Scales `grads` to global norm `max_norm` if larger; returns the norm before.
pub fn clip_gradients(grads: &mut Weights, max_norm: f64) -> f64 {
    let norm = grads
        .blocks()
        .iter()
        .flat_map(|(_, _, d)| d.iter())
        .map(|g| g * g)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, _, data) in grads.blocks_mut() {
            data.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

/// Viterbi-decodes every sentence and scores span classification.
pub fn evaluate_spans(model: &ModelParams, sentences: &[EvalSentence<'_>]) -> Result<MetricReport> {
    let pred = sentences
        .par_iter()
        .map(|e| model.tag(e.sentence, e.graph_q).map(|l| iobes_to_spans(&l)))
        .collect::<Result<Vec<_>>>()?;
    let gold: Vec<_> = sentences.iter().map(|e| e.sentence.spans()).collect();
    span_prf(&gold, &pred, Subtask::Classification)
}

/// Supervised training on gold paths.
pub fn train_supervised<R: Rng>(
    model: ModelParams,
    corpus: &[LabeledSentence],
    dev: &[LabeledSentence],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    let examples = corpus.iter().map(TrainingExample::gold).collect::<Result<Vec<_>>>()?;
    let dev: Vec<EvalSentence> = dev.iter().map(EvalSentence::from).collect();
    train_examples(model, &examples, &dev, config, rng)
}

/// Sentence-level SGD on lattice likelihoods, shuffling each epoch.
///
/// With a dev set, training stops after `patience` epochs without a strict
/// improvement in span-classification F1 and the best epoch's weights are
/// returned. Without one, all `max_epochs` run and the last weights are
/// returned.
pub fn train_examples<R: Rng>(
    mut model: ModelParams,
    examples: &[TrainingExample<'_>],
    dev: &[EvalSentence<'_>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome> {
    if examples.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!("learning rate {}", config.learning_rate)));
    }
    let mut optimizer = OptimizerState {
        learning_rate: config.learning_rate,
        ..OptimizerState::default()
    };
    let mut best: Option<(f64, Weights)> = None;
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut grads = model.weights.zeros_like();

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(rng);
        let mut loss = 0.0;
        for &i in &order {
            let ex = &examples[i];
            for (_, _, g) in grads.blocks_mut() {
                g.fill(0.0);
            }
            let ll = model.accumulate_gradient(ex.sentence, ex.graph_q, &ex.lattice, ex.weight, &mut grads)?;
            loss -= ex.weight * ll;
            if let Some(max) = config.clip_norm {
                clip_gradients(&mut grads, max);
            }
            sgd_step(&mut model.weights, &grads, config.learning_rate)?;
        }
        optimizer.epoch = epoch;
        let dev_report = if dev.is_empty() { None } else { Some(evaluate_spans(&model, dev)?) };
        log::debug!(
            "epoch {epoch}: loss {loss:.4}{}",
            dev_report.as_ref().map(|r| format!(", dev F1 {:.3}", r.overall.f1)).unwrap_or_default()
        );
        history.push(EpochRecord {
            epoch,
            loss,
            dev: dev_report.clone(),
            seconds: started.elapsed().as_secs_f64(),
        });
        let Some(report) = dev_report else {
            best_epoch = epoch;
            continue;
        };
        if best.as_ref().is_none_or(|(f1, _)| report.overall.f1 > *f1) {
            best = Some((report.overall.f1, model.weights.clone()));
            best_epoch = epoch;
        } else if epoch - best_epoch >= config.patience {
            break;
        }
    }
    if let Some((_, weights)) = best {
        model.weights = weights;
    }
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        optimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{CharVocab, EmbeddingTable, ModelDims};
    use crate::synthetic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            word_dim: 8,
            char_dim: 4,
            char_hidden: 4,
            feature_dim: 3,
            token_hidden: 8,
        }
    }

    fn setup(corpus: &[LabeledSentence], seed: u64) -> (ModelParams, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = EmbeddingTable::random(corpus, 8, &mut rng);
        let chars = CharVocab::build(corpus);
        let model = ModelParams::new(small_dims(), table, chars, &mut rng).unwrap();
        (model, rng)
    }

    #[test]
    fn zero_gradient_and_unit_gradient_steps() {
        let corpus = synthetic::labeled_corpus(1, 0);
        let (model, _) = setup(&corpus, 0);
        let mut w = model.weights.clone();
        sgd_step(&mut w, &model.weights.zeros_like(), 0.05).unwrap();
        assert_eq!(w, model.weights);

        let mut ones = model.weights.zeros_like();
        for (_, _, d) in ones.blocks_mut() {
            d.fill(1.0);
        }
        sgd_step(&mut w, &ones, 0.05).unwrap();
        for ((_, _, after), (_, _, before)) in w.blocks().iter().zip(model.weights.blocks().iter()) {
            for (a, b) in after.iter().zip(before.iter()) {
                if is_impossible(*b) {
                    assert_eq!(a, b);
                } else {
                    assert!((a - b - 0.05).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_half_steps_equal_one_step() {
        let corpus = synthetic::labeled_corpus(1, 0);
        let (model, mut rng) = setup(&corpus, 1);
        let mut g = model.weights.zeros_like();
        for (_, _, d) in g.blocks_mut() {
            d.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let mut once = model.weights.clone();
        sgd_step(&mut once, &g, 0.1).unwrap();
        let mut twice = model.weights.clone();
        sgd_step(&mut twice, &g, 0.05).unwrap();
        sgd_step(&mut twice, &g, 0.05).unwrap();
        for ((_, _, a), (_, _, b)) in once.blocks().iter().zip(twice.blocks().iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let corpus = synthetic::labeled_corpus(1, 0);
        let (model, _) = setup(&corpus, 2);
        let mut g = model.weights.zeros_like();
        g.proj_b.fill(10.0);
        let before = clip_gradients(&mut g, 5.0);
        assert!(before > 5.0);
        let after: f64 = g.proj_b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
    }

    #[test]
    fn one_sentence_loss_decreases() {
        let corpus = synthetic::labeled_corpus(1, 3);
        let (model, mut rng) = setup(&corpus, 3);
        let config = TrainConfig {
            max_epochs: 5,
            ..TrainConfig::default()
        };
        let out = train_supervised(model, &corpus, &[], &config, &mut rng).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.loss).collect();
        assert_eq!(losses.len(), 5);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let corpus = synthetic::labeled_corpus(3, 4);
        let (model, mut rng) = setup(&corpus, 4);
        let config = TrainConfig {
            learning_rate: 0.0,
            max_epochs: 2,
            ..TrainConfig::default()
        };
        let out = train_supervised(model.clone(), &corpus, &corpus, &config, &mut rng).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn empty_corpus_rejected() {
        let corpus = synthetic::labeled_corpus(1, 0);
        let (model, mut rng) = setup(&corpus, 0);
        let err = train_supervised(model, &[], &[], &TrainConfig::default(), &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }
}
