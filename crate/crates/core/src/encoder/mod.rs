//! Neural emission scorer: character BiLSTM, word/feature embeddings and a
//! token-level BiLSTM projected to one score per label, feeding the CRF.

mod embeddings;
mod lstm;
mod train;

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

pub use embeddings::{
    load_embeddings, load_embeddings_with_dim, parse_embeddings, CharVocab, EmbeddingTable, BOS, EOS, UNK, WORD_DIM,
};
pub use lstm::{Lstm, LstmTrace};
pub use train::{
    clip_gradients, evaluate_spans, sgd_step, train_examples, train_supervised, EpochRecord, EvalSentence,
    OptimizerState, TrainConfig, TrainOutcome, TrainingExample,
};

use crate::checkpoint::{read_container, Blocks, ContainerWriter};
use crate::corpus::{CapClass, Label, LabeledSentence, Pos, NUM_LABELS};
use crate::crf::{self, crf_gradients, EmissionMatrix, TagLattice, TransitionMatrix};
use crate::{Error, Result};

const MODEL_MAGIC: &[u8; 6] = b"STSSL1";
const MODEL_VERSION: u8 = 1;

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Per direction.
    pub char_hidden: usize,
    /// Width of each of the capitalization and POS embeddings.
    pub feature_dim: usize,
    /// Per direction.
    pub token_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            word_dim: WORD_DIM,
            char_dim: 25,
            char_hidden: 25,
            feature_dim: 25,
            token_hidden: 100,
        }
    }
}

impl ModelDims {
    pub fn token_input(&self) -> usize {
        self.word_dim + 2 * self.char_hidden + 2 * self.feature_dim
    }
}

/// Every trainable parameter block. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub char_table: Array2<f64>,
    pub char_fwd: Lstm,
    pub char_bwd: Lstm,
    pub cap_emb: Array2<f64>,
    pub pos_emb: Array2<f64>,
    pub token_fwd: Lstm,
    pub token_bwd: Lstm,
    /// `m × 2H`.
    pub proj_w: Array2<f64>,
    pub proj_b: Array1<f64>,
    pub transitions: TransitionMatrix,
    /// Mixes graph label distributions into emissions (`m × m`).
    pub feat_mix: Array2<f64>,
}

impl Weights {
    pub fn zeros(dims: &ModelDims, num_chars: usize) -> Self {
        let m = NUM_LABELS;
        Weights {
            char_table: Array2::zeros((num_chars, dims.char_dim)),
            char_fwd: Lstm::zeros(dims.char_dim, dims.char_hidden),
            char_bwd: Lstm::zeros(dims.char_dim, dims.char_hidden),
            cap_emb: Array2::zeros((CapClass::COUNT, dims.feature_dim)),
            pos_emb: Array2::zeros((Pos::COUNT, dims.feature_dim)),
            token_fwd: Lstm::zeros(dims.token_input(), dims.token_hidden),
            token_bwd: Lstm::zeros(dims.token_input(), dims.token_hidden),
            proj_w: Array2::zeros((m, 2 * dims.token_hidden)),
            proj_b: Array1::zeros(m),
            transitions: TransitionMatrix::iobes(),
            feat_mix: Array2::zeros((m, m)),
        }
    }

    /// Gradient buffer matching `self`, transitions included as plain zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, _, data) in out.blocks_mut() {
            data.fill(0.0);
        }
        out
    }

    /// Random initialization drawn in a fixed order: character table, char
    /// LSTMs (forward, backward), capitalization and POS embeddings, token
    /// LSTMs (forward, backward), projection, transitions. The feature mixing
    /// matrix starts at zero.
    pub fn random<R: Rng>(dims: &ModelDims, num_chars: usize, rng: &mut R) -> Self {
        let m = NUM_LABELS;
        let char_table = Array2::from_shape_fn((num_chars, dims.char_dim), |_| rng.random_range(-0.1..=0.1));
        let char_fwd = Lstm::glorot(dims.char_dim, dims.char_hidden, rng);
        let char_bwd = Lstm::glorot(dims.char_dim, dims.char_hidden, rng);
        let cap_emb = Array2::from_shape_fn((CapClass::COUNT, dims.feature_dim), |_| rng.random_range(-0.1..=0.1));
        let pos_emb = Array2::from_shape_fn((Pos::COUNT, dims.feature_dim), |_| rng.random_range(-0.1..=0.1));
        let token_fwd = Lstm::glorot(dims.token_input(), dims.token_hidden, rng);
        let token_bwd = Lstm::glorot(dims.token_input(), dims.token_hidden, rng);
        let bound = (6.0 / (2 * dims.token_hidden + m) as f64).sqrt();
        let proj_w = Array2::from_shape_fn((m, 2 * dims.token_hidden), |_| rng.random_range(-bound..=bound));
        let bound = (6.0 / (2 * (m + 2)) as f64).sqrt();
        let raw = Array2::from_shape_fn((m + 2, m + 2), |_| rng.random_range(-bound..=bound));
        let mut transitions = TransitionMatrix::from_scores(raw).unwrap();
        transitions.forbid_illegal_iobes();
        Weights {
            char_table,
            char_fwd,
            char_bwd,
            cap_emb,
            pos_emb,
            token_fwd,
            token_bwd,
            proj_w,
            proj_b: Array1::zeros(m),
            transitions,
            feat_mix: Array2::zeros((m, m)),
        }
    }

    /// Named parameter blocks with their shapes, in checkpoint order.
    pub fn blocks(&self) -> Vec<(&'static str, Vec<usize>, &[f64])> {
        fn lstm<'a>(prefix: [&'static str; 3], l: &'a Lstm, out: &mut Vec<(&'static str, Vec<usize>, &'a [f64])>) {
            out.push((prefix[0], l.wx.shape().to_vec(), l.wx.as_slice().unwrap()));
            out.push((prefix[1], l.wh.shape().to_vec(), l.wh.as_slice().unwrap()));
            out.push((prefix[2], l.b.shape().to_vec(), l.b.as_slice().unwrap()));
        }
        let mut out = Vec::with_capacity(17);
        out.push(("char_table", self.char_table.shape().to_vec(), self.char_table.as_slice().unwrap()));
        lstm(["char_fwd.wx", "char_fwd.wh", "char_fwd.b"], &self.char_fwd, &mut out);
        lstm(["char_bwd.wx", "char_bwd.wh", "char_bwd.b"], &self.char_bwd, &mut out);
        out.push(("cap_emb", self.cap_emb.shape().to_vec(), self.cap_emb.as_slice().unwrap()));
        out.push(("pos_emb", self.pos_emb.shape().to_vec(), self.pos_emb.as_slice().unwrap()));
        lstm(["token_fwd.wx", "token_fwd.wh", "token_fwd.b"], &self.token_fwd, &mut out);
        lstm(["token_bwd.wx", "token_bwd.wh", "token_bwd.b"], &self.token_bwd, &mut out);
        out.push(("proj_w", self.proj_w.shape().to_vec(), self.proj_w.as_slice().unwrap()));
        out.push(("proj_b", self.proj_b.shape().to_vec(), self.proj_b.as_slice().unwrap()));
        let t = self.transitions.scores();
        out.push(("transitions", t.shape().to_vec(), t.to_slice().unwrap()));
        out.push(("feat_mix", self.feat_mix.shape().to_vec(), self.feat_mix.as_slice().unwrap()));
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, Vec<usize>, &mut [f64])> {
        fn lstm<'a>(prefix: [&'static str; 3], l: &'a mut Lstm, out: &mut Vec<(&'static str, Vec<usize>, &'a mut [f64])>) {
            out.push((prefix[0], l.wx.shape().to_vec(), l.wx.as_slice_mut().unwrap()));
            out.push((prefix[1], l.wh.shape().to_vec(), l.wh.as_slice_mut().unwrap()));
            out.push((prefix[2], l.b.shape().to_vec(), l.b.as_slice_mut().unwrap()));
        }
        let mut out = Vec::with_capacity(17);
        out.push(("char_table", self.char_table.shape().to_vec(), self.char_table.as_slice_mut().unwrap()));
        lstm(["char_fwd.wx", "char_fwd.wh", "char_fwd.b"], &mut self.char_fwd, &mut out);
        lstm(["char_bwd.wx", "char_bwd.wh", "char_bwd.b"], &mut self.char_bwd, &mut out);
        out.push(("cap_emb", self.cap_emb.shape().to_vec(), self.cap_emb.as_slice_mut().unwrap()));
        out.push(("pos_emb", self.pos_emb.shape().to_vec(), self.pos_emb.as_slice_mut().unwrap()));
        lstm(["token_fwd.wx", "token_fwd.wh", "token_fwd.b"], &mut self.token_fwd, &mut out);
        lstm(["token_bwd.wx", "token_bwd.wh", "token_bwd.b"], &mut self.token_bwd, &mut out);
        out.push(("proj_w", self.proj_w.shape().to_vec(), self.proj_w.as_slice_mut().unwrap()));
        out.push(("proj_b", self.proj_b.shape().to_vec(), self.proj_b.as_slice_mut().unwrap()));
        let t = self.transitions.scores_mut();
        out.push(("transitions", t.shape().to_vec(), t.as_slice_mut().unwrap()));
        out.push(("feat_mix", self.feat_mix.shape().to_vec(), self.feat_mix.as_slice_mut().unwrap()));
        out
    }
}

/// A complete tagger: frozen word vectors, character inventory and the
/// trainable weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub word_table: EmbeddingTable,
    pub char_vocab: CharVocab,
    pub weights: Weights,
}

struct CharTrace {
    ids: Vec<usize>,
    fwd: LstmTrace,
    bwd: LstmTrace,
}

/// Intermediate activations of one sentence.
pub struct SentenceTrace {
    chars: Vec<Option<CharTrace>>,
    caps: Vec<usize>,
    pos: Vec<usize>,
    fwd: LstmTrace,
    bwd: LstmTrace,
    hidden: Array2<f64>,
}

fn reversed(a: &Array2<f64>) -> Array2<f64> {
    a.slice(s![..;-1, ..]).to_owned()
}

impl ModelParams {
    pub fn new<R: Rng>(dims: ModelDims, word_table: EmbeddingTable, char_vocab: CharVocab, rng: &mut R) -> Result<Self> {
        if word_table.dim() != dims.word_dim {
            return Err(Error::shape("word embedding width", dims.word_dim, word_table.dim()));
        }
        let weights = Weights::random(&dims, char_vocab.size(), rng);
        Ok(ModelParams {
            dims,
            word_table,
            char_vocab,
            weights,
        })
    }

    pub fn with_weights(dims: ModelDims, word_table: EmbeddingTable, char_vocab: CharVocab, weights: Weights) -> Result<Self> {
        let expected = Weights::zeros(&dims, char_vocab.size());
        for ((name, want, _), (_, got, _)) in expected.blocks().iter().zip(weights.blocks().iter()) {
            if want != got {
                return Err(Error::shape(name, format!("{want:?}"), format!("{got:?}")));
            }
        }
        if word_table.dim() != dims.word_dim {
            return Err(Error::shape("word embedding width", dims.word_dim, word_table.dim()));
        }
        Ok(ModelParams {
            dims,
            word_table,
            char_vocab,
            weights,
        })
    }

    fn char_forward(&self, surface: &str) -> Option<CharTrace> {
        if surface.is_empty() {
            return None;
        }
        let ids: Vec<usize> = surface.chars().map(|c| self.char_vocab.lookup(c)).collect();
        let xs = self.weights.char_table.select(Axis(0), &ids);
        let rev = reversed(&xs);
        let fwd = self.weights.char_fwd.forward(xs);
        let bwd = self.weights.char_bwd.forward(rev);
        Some(CharTrace { ids, fwd, bwd })
    }

    fn char_output(&self, trace: Option<&CharTrace>) -> Array1<f64> {
        match trace {
            None => Array1::zeros(2 * self.dims.char_hidden),
            Some(t) => {
                let last = t.fwd.hs.nrows() - 1;
                concatenate![Axis(0), t.fwd.hs.row(last), t.bwd.hs.row(last)]
            }
        }
    }

    /// Final forward state concatenated with final backward state of the
    /// character LSTMs; zeros for an empty surface.
    pub fn char_embed(&self, surface: &str) -> Array1<f64> {
        self.char_output(self.char_forward(surface).as_ref())
    }

    /// Runs the encoder, returning `n × m` emission scores and the trace.
    pub fn forward(&self, sentence: &LabeledSentence) -> (Array2<f64>, SentenceTrace) {
        let n = sentence.len();
        let d = &self.dims;
        let mut x = Array2::zeros((n, d.token_input()));
        let mut chars = Vec::with_capacity(n);
        let mut caps = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        for (t, tok) in sentence.tokens.iter().enumerate() {
            let word = self.word_table.vector(self.word_table.lookup(&tok.surface));
            let ct = self.char_forward(&tok.surface);
            let mut row = x.row_mut(t);
            let mut off = 0;
            row.slice_mut(s![off..off + d.word_dim]).assign(&word);
            off += d.word_dim;
            row.slice_mut(s![off..off + 2 * d.char_hidden]).assign(&self.char_output(ct.as_ref()));
            off += 2 * d.char_hidden;
            row.slice_mut(s![off..off + d.feature_dim]).assign(&self.weights.cap_emb.row(tok.cap.index()));
            off += d.feature_dim;
            row.slice_mut(s![off..off + d.feature_dim]).assign(&self.weights.pos_emb.row(tok.pos.index()));
            chars.push(ct);
            caps.push(tok.cap.index());
            pos.push(tok.pos.index());
        }
        let rev = reversed(&x);
        let fwd = self.weights.token_fwd.forward(x);
        let bwd = self.weights.token_bwd.forward(rev);
        let hidden = concatenate![Axis(1), fwd.hs, reversed(&bwd.hs)];
        let mut scores = hidden.dot(&self.weights.proj_w.t());
        scores += &self.weights.proj_b;
        let trace = SentenceTrace {
            chars,
            caps,
            pos,
            fwd,
            bwd,
            hidden,
        };
        (scores, trace)
    }

    /// Accumulates into `grads` the gradient of an objective whose gradient
    /// w.r.t. the emission scores is `d_scores`.
    pub fn backward(&self, trace: &SentenceTrace, d_scores: &Array2<f64>, grads: &mut Weights) {
        let d = &self.dims;
        let w = &self.weights;
        grads.proj_w += &d_scores.t().dot(&trace.hidden);
        grads.proj_b += &d_scores.sum_axis(Axis(0));
        let d_hidden = d_scores.dot(&w.proj_w);
        let h = d.token_hidden;
        let d_fwd = d_hidden.slice(s![.., ..h]).to_owned();
        let d_bwd = reversed(&d_hidden.slice(s![.., h..]).to_owned());
        let mut dx = w.token_fwd.backward(&trace.fwd, &d_fwd, &mut grads.token_fwd);
        dx += &reversed(&w.token_bwd.backward(&trace.bwd, &d_bwd, &mut grads.token_bwd));

        let char_off = d.word_dim;
        let cap_off = char_off + 2 * d.char_hidden;
        let pos_off = cap_off + d.feature_dim;
        for t in 0..dx.nrows() {
            let row = dx.row(t);
            let mut cap = grads.cap_emb.row_mut(trace.caps[t]);
            cap += &row.slice(s![cap_off..cap_off + d.feature_dim]);
            let mut pos = grads.pos_emb.row_mut(trace.pos[t]);
            pos += &row.slice(s![pos_off..pos_off + d.feature_dim]);
            if let Some(ct) = &trace.chars[t] {
                self.char_backward(ct, row.slice(s![char_off..cap_off]), grads);
            }
        }
    }

    fn char_backward(&self, trace: &CharTrace, d_out: ArrayView1<f64>, grads: &mut Weights) {
        let hc = self.dims.char_hidden;
        let len = trace.ids.len();
        let mut dh_fwd = Array2::zeros((len, hc));
        dh_fwd.row_mut(len - 1).assign(&d_out.slice(s![..hc]));
        let mut dh_bwd = Array2::zeros((len, hc));
        dh_bwd.row_mut(len - 1).assign(&d_out.slice(s![hc..]));
        let dx_fwd = self.weights.char_fwd.backward(&trace.fwd, &dh_fwd, &mut grads.char_fwd);
        let dx_bwd = self.weights.char_bwd.backward(&trace.bwd, &dh_bwd, &mut grads.char_bwd);
        for (k, &id) in trace.ids.iter().enumerate() {
            let mut row = grads.char_table.row_mut(id);
            row += &dx_fwd.row(k);
            row += &dx_bwd.row(len - 1 - k);
        }
    }

    /// Emission scores, without graph features.
    pub fn encode_sentence(&self, sentence: &LabeledSentence) -> EmissionMatrix {
        EmissionMatrix::new(self.forward(sentence).0).expect("finite emissions")
    }

    /// Emission scores, adding `Q Mᵀ` when graph distributions are supplied.
    pub fn emissions(&self, sentence: &LabeledSentence, graph_q: Option<&Array2<f64>>) -> Result<EmissionMatrix> {
        let (mut scores, _) = self.forward(sentence);
        if let Some(q) = graph_q {
            check_graph_q(q, sentence.len())?;
            scores += &q.dot(&self.weights.feat_mix.t());
        }
        EmissionMatrix::new(scores)
    }

    /// Viterbi decode.
    pub fn tag(&self, sentence: &LabeledSentence, graph_q: Option<&Array2<f64>>) -> Result<Vec<Label>> {
        let p = self.emissions(sentence, graph_q)?;
        let (path, _) = crf::viterbi(&p, &self.weights.transitions)?;
        Ok(path.into_iter().map(Label::from_index).collect())
    }

    /// Token marginals, `n × m`.
    pub fn marginals(&self, sentence: &LabeledSentence, graph_q: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        let p = self.emissions(sentence, graph_q)?;
        crf::token_marginals(&p, &self.weights.transitions)
    }

    /// Lattice log-likelihood of one sentence; adds `weight ×` its gradient
    /// to `grads`.
    pub fn accumulate_gradient(
        &self,
        sentence: &LabeledSentence,
        graph_q: Option<&Array2<f64>>,
        lattice: &TagLattice,
        weight: f64,
        grads: &mut Weights,
    ) -> Result<f64> {
        let (mut scores, trace) = self.forward(sentence);
        if let Some(q) = graph_q {
            check_graph_q(q, sentence.len())?;
            scores += &q.dot(&self.weights.feat_mix.t());
        }
        let p = EmissionMatrix::new(scores)?;
        let g = crf_gradients(&p, &self.weights.transitions, lattice)?;
        let mut d_scores = g.emissions;
        d_scores *= weight;
        if let Some(q) = graph_q {
            grads.feat_mix += &d_scores.t().dot(q);
        }
        grads.transitions.scores_mut().scaled_add(weight, &g.transitions);
        self.backward(&trace, &d_scores, grads);
        Ok(g.log_likelihood)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = &self.dims;
        let mut w = ContainerWriter::new(MODEL_MAGIC, MODEL_VERSION);
        let dims = [d.word_dim, d.char_dim, d.char_hidden, d.feature_dim, d.token_hidden, NUM_LABELS];
        w.naturals("dims", &[dims.len()], &dims.map(|v| v as u64));
        w.strings("word_vocab", self.word_table.words());
        let vectors = self.word_table.vectors();
        w.reals("word_vectors", vectors.shape(), vectors.as_slice().unwrap());
        let chars: Vec<String> = self.char_vocab.chars().iter().map(|c| c.to_string()).collect();
        w.strings("char_vocab", &chars);
        for (name, shape, data) in self.weights.blocks() {
            w.reals(name, &shape, data);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (version, blocks) = read_container(bytes, MODEL_MAGIC)?;
        if version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!("unsupported model version {version}")));
        }
        let blocks = Blocks::new(blocks);
        let (_, dims) = blocks.naturals("dims")?;
        let [word_dim, char_dim, char_hidden, feature_dim, token_hidden, m] = dims[..] else {
            return Err(Error::Checkpoint("dims block must hold 6 values".into()));
        };
        if m as usize != NUM_LABELS {
            return Err(Error::Checkpoint(format!("model has {m} labels, expected {NUM_LABELS}")));
        }
        let dims = ModelDims {
            word_dim: word_dim as usize,
            char_dim: char_dim as usize,
            char_hidden: char_hidden as usize,
            feature_dim: feature_dim as usize,
            token_hidden: token_hidden as usize,
        };
        let words = blocks.strings("word_vocab")?.to_vec();
        let (shape, values) = blocks.reals("word_vectors")?;
        let vectors = Array2::from_shape_vec((shape[0], *shape.get(1).unwrap_or(&0)), values.to_vec())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let word_table = EmbeddingTable::from_rows(words, vectors)?;
        let chars = blocks
            .strings("char_vocab")?
            .iter()
            .map(|s| {
                let mut it = s.chars();
                match (it.next(), it.next()) {
                    (Some(c), None) => Ok(c),
                    _ => Err(Error::Checkpoint(format!("bad character entry {s:?}"))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let char_vocab = CharVocab::from_chars(chars);
        let mut weights = Weights::zeros(&dims, char_vocab.size());
        for (name, shape, data) in weights.blocks_mut() {
            let (got_shape, values) = blocks.reals(name)?;
            if got_shape != shape.as_slice() {
                return Err(Error::Checkpoint(format!("block {name:?} has shape {got_shape:?}, expected {shape:?}")));
            }
            data.copy_from_slice(values);
        }
        ModelParams::with_weights(dims, word_table, char_vocab, weights)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn check_graph_q(q: &Array2<f64>, n: usize) -> Result<()> {
    if q.dim() != (n, NUM_LABELS) {
        return Err(Error::shape("graph distributions", format!("({n}, {NUM_LABELS})"), format!("{:?}", q.dim())));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_column_str;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_dims() -> ModelDims {
        ModelDims {
            word_dim: 4,
            char_dim: 3,
            char_hidden: 2,
            feature_dim: 2,
            token_hidden: 3,
        }
    }

    fn sentence() -> LabeledSentence {
        read_column_str("t", "We\tPRP\tO\nuse\tVBP\tO\nCu40Zn\tNN\tS-Material\n")
            .unwrap()
            .remove(0)
    }

    fn tiny_model(seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sentence();
        let table = EmbeddingTable::random([&s], 4, &mut rng);
        let chars = CharVocab::build([&s]);
        let mut model = ModelParams::new(tiny_dims(), table, chars, &mut rng).unwrap();
        for (name, _, data) in model.weights.blocks_mut() {
            if name != "transitions" {
                data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
            }
        }
        model
    }

    #[test]
    fn default_widths() {
        let d = ModelDims::default();
        assert_eq!(d.token_input(), 350);
        assert_eq!(2 * d.token_hidden, 200);
    }

    #[test]
    fn zero_weights_emit_bias() {
        let s = sentence();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = EmbeddingTable::random([&s], 4, &mut rng);
        let chars = CharVocab::build([&s]);
        let mut weights = Weights::zeros(&tiny_dims(), chars.size());
        weights.proj_b = Array1::from_shape_fn(NUM_LABELS, |i| i as f64 * 0.5 - 1.0);
        let model = ModelParams::with_weights(tiny_dims(), table, chars, weights).unwrap();
        let p = model.encode_sentence(&s);
        assert_eq!(p.n(), 3);
        assert_eq!(p.m(), NUM_LABELS);
        for t in 0..3 {
            assert_eq!(p.scores().row(t), model.weights.proj_b.view());
        }
    }

    #[test]
    fn one_char_word_single_step() {
        let mut model = tiny_model(2);
        model.weights.char_fwd.wx.fill(0.0);
        model.weights.char_fwd.wh.fill(0.0);
        model.weights.char_bwd = model.weights.char_fwd.clone();
        let b = model.weights.char_fwd.b.clone();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let v = model.char_embed("x");
        for k in 0..2 {
            let expected = sig(b[6 + k]) * (sig(b[k]) * b[4 + k].tanh()).tanh();
            assert!((v[k] - expected).abs() < 1e-15);
            assert!((v[2 + k] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn palindrome_with_tied_directions() {
        let mut model = tiny_model(3);
        model.weights.char_bwd = model.weights.char_fwd.clone();
        let v = model.char_embed("level");
        assert_eq!(v.slice(s![..2]), v.slice(s![2..]));
        assert_eq!(model.char_embed(""), Array1::<f64>::zeros(4));
    }

    #[test]
    fn equal_surfaces_equal_vectors() {
        let model = tiny_model(4);
        let s = read_column_str("t", "use\tVB\tO\nuse\tVB\tO\n").unwrap().remove(0);
        let (_, trace) = model.forward(&s);
        let a = model.char_output(trace.chars[0].as_ref());
        let b = model.char_output(trace.chars[1].as_ref());
        assert_eq!(a, b);
    }

    fn block_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
        let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|a| a * a).sum::<f64>().sqrt());
        if scale == 0.0 { 0.0 } else { diff / scale }
    }

    #[test]
    fn char_embedding_gradient() {
        let model = tiny_model(5);
        let coef = Array1::from_vec(vec![0.3, -1.2, 0.8, 0.5]);
        let loss = |m: &ModelParams| m.char_embed("Cu40Zn").dot(&coef);
        let trace = model.char_forward("Cu40Zn").unwrap();
        let mut grads = model.weights.zeros_like();
        model.char_backward(&trace, coef.view(), &mut grads);
        let h = 1e-5;
        let analytic: Vec<(&str, Vec<f64>)> = grads.blocks().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
        for (b, (name, a)) in analytic.iter().enumerate() {
            if !name.starts_with("char") {
                continue;
            }
            let mut numeric = Vec::new();
            for i in 0..a.len() {
                let mut plus = model.clone();
                plus.weights.blocks_mut()[b].2[i] += h;
                let mut minus = model.clone();
                minus.weights.blocks_mut()[b].2[i] -= h;
                numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
            }
            let err = block_rel_error(a, &numeric);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn full_network_gradient() {
        let model = tiny_model(6);
        let s = sentence();
        let lattice = TagLattice::from_path(&s.label_indices().unwrap());
        let ll = |m: &ModelParams| {
            let p = m.encode_sentence(&s);
            crf::lattice_log_likelihood(&p, &m.weights.transitions, &lattice).unwrap()
        };
        let mut grads = model.weights.zeros_like();
        let value = model.accumulate_gradient(&s, None, &lattice, 1.0, &mut grads).unwrap();
        assert!((value - ll(&model)).abs() < 1e-12);
        let h = 1e-5;
        let analytic: Vec<(&str, Vec<f64>)> = grads.blocks().into_iter().map(|(n, _, d)| (n, d.to_vec())).collect();
        for (b, (name, a)) in analytic.iter().enumerate() {
            if *name == "feat_mix" {
                assert!(a.iter().all(|v| *v == 0.0));
                continue;
            }
            let base = model.weights.blocks()[b].2.to_vec();
            let mut numeric = Vec::new();
            for i in 0..a.len() {
                if crf::is_impossible(base[i]) {
                    numeric.push(0.0);
                    continue;
                }
                let mut plus = model.clone();
                plus.weights.blocks_mut()[b].2[i] += h;
                let mut minus = model.clone();
                minus.weights.blocks_mut()[b].2[i] -= h;
                numeric.push((ll(&plus) - ll(&minus)) / (2.0 * h));
            }
            let err = block_rel_error(a, &numeric);
            assert!(err < 1e-4, "{name}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let model = tiny_model(7);
        let bytes = model.to_bytes();
        assert_eq!(&bytes[..6], b"STSSL1");
        let loaded = ModelParams::from_bytes(&bytes).unwrap();
        assert_eq!(loaded, model);
        assert_eq!(loaded.to_bytes(), bytes);
    }
}
