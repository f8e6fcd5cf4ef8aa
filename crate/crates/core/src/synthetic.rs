//! Templated toy corpora for tests, examples and smoke runs.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{spans_to_iobes, Category, LabeledSentence, Pos, Span, Token};

const TASKS: &[&[(&str, &str)]] = &[
    &[("named", "VBN"), ("entity", "NN"), ("recognition", "NN")],
    &[("parsing", "NN")],
    &[("keyphrase", "NN"), ("extraction", "NN")],
    &[("crack", "NN"), ("detection", "NN")],
    &[("segmentation", "NN")],
];

const PROCESSES: &[&[(&str, &str)]] = &[
    &[("CRFs", "NNS")],
    &[("gradient", "NN"), ("descent", "NN")],
    &[("annealing", "NN")],
    &[("label", "NN"), ("propagation", "NN")],
    &[("SVM", "NNP")],
];

const MATERIALS: &[&[(&str, &str)]] = &[
    &[("Cu40Zn", "NN")],
    &[("steel", "NN"), ("samples", "NNS")],
    &[("news", "NN"), ("articles", "NNS")],
    &[("graphene", "NN")],
    &[("TiO2", "NN"), ("films", "NNS")],
];

enum Slot {
    Word(&'static str, &'static str),
    Phrase(Category),
}

use Slot::{Phrase, Word};

const TEMPLATES: &[&[Slot]] = &[
    &[Word("We", "PRP"), Word("address", "VBP"), Phrase(Category::Task), Word("using", "VBG"), Phrase(Category::Process), Word(".", ".")],
    &[Word("This", "DT"), Word("paper", "NN"), Word("studies", "VBZ"), Phrase(Category::Task), Word("on", "IN"), Phrase(Category::Material), Word(".", ".")],
    &[Phrase(Category::Process), Word("is", "VBZ"), Word("applied", "VBN"), Word("to", "TO"), Phrase(Category::Material), Word(".", ".")],
    &[Word("Results", "NNS"), Word("show", "VBP"), Word("that", "IN"), Phrase(Category::Process), Word("improves", "VBZ"), Phrase(Category::Task), Word(".", ".")],
    &[Word("We", "PRP"), Word("measured", "VBD"), Phrase(Category::Material), Word(".", ".")],
];

fn pool(c: Category) -> &'static [&'static [(&'static str, &'static str)]] {
    match c {
        Category::Task => TASKS,
        Category::Process => PROCESSES,
        Category::Material => MATERIALS,
    }
}

/// `n` gold-labeled sentences drawn from fixed templates; deterministic in
/// `seed`.
pub fn labeled_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sentence(&mut rng, "synthetic", i)).collect()
}

/// Like [`labeled_corpus`] but with labels removed.
pub fn unlabeled_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    labeled_corpus(n, seed).iter().map(LabeledSentence::unlabeled).collect()
}

fn sentence<R: Rng>(rng: &mut R, doc_id: &str, index: usize) -> LabeledSentence {
    let template = TEMPLATES.choose(rng).unwrap();
    let mut words: Vec<(&str, &str)> = Vec::new();
    let mut spans = Vec::new();
    for slot in template.iter() {
        match slot {
            Word(w, pos) => words.push((w, pos)),
            Phrase(c) => {
                let phrase = pool(*c).choose(rng).unwrap();
                spans.push(Span::new(words.len(), words.len() + phrase.len() - 1, *c));
                words.extend(phrase.iter().copied());
            }
        }
    }
    let mut offset = 0;
    let tokens = words
        .iter()
        .map(|(w, pos)| {
            let t = Token::new(*w, (offset, offset + w.len()), Pos::from_tag(pos)).unwrap();
            offset += w.len() + 1;
            t
        })
        .collect::<Vec<_>>();
    let labels = spans_to_iobes(tokens.len(), &spans).unwrap();
    LabeledSentence {
        tokens,
        labels: Some(labels),
        doc_id: doc_id.to_string(),
        sentence_index: index,
    }
}
