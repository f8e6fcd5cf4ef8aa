use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::corpus::LabeledSentence;
use crate::{Error, Result};

pub const UNK: &str = "<UNK>";
pub const BOS: &str = "<BOS>";
pub const EOS: &str = "<EOS>";

/// Width of the pre-trained word vectors the tagger expects.
pub const WORD_DIM: usize = 250;

/// Word vectors with reserved unknown/begin/end rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    words: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Array2<f64>,
    unk: usize,
    bos: usize,
    eos: usize,
}

impl EmbeddingTable {
    /// Builds a table from rows, appending `<UNK>` (mean vector), `<BOS>`
    /// and `<EOS>` (zero vectors) when absent.
    pub fn from_rows(words: Vec<String>, vectors: Array2<f64>) -> Result<Self> {
        if words.len() != vectors.nrows() {
            return Err(Error::shape("embedding rows", words.len(), vectors.nrows()));
        }
        let dim = vectors.ncols();
        let mut index = HashMap::with_capacity(words.len() + 3);
        for (i, w) in words.iter().enumerate() {
            index.entry(w.clone()).or_insert(i);
        }
        let mut table = EmbeddingTable {
            words,
            index,
            vectors,
            unk: 0,
            bos: 0,
            eos: 0,
        };
        let mean = if table.vectors.nrows() == 0 {
            Array1::zeros(dim)
        } else {
            table.vectors.mean_axis(Axis(0)).unwrap()
        };
        table.unk = table.reserve(UNK, mean.view());
        table.bos = table.reserve(BOS, Array1::zeros(dim).view());
        table.eos = table.reserve(EOS, Array1::zeros(dim).view());
        Ok(table)
    }

    fn reserve(&mut self, word: &str, init: ArrayView1<f64>) -> usize {
        if let Some(&i) = self.index.get(word) {
            return i;
        }
        let i = self.words.len();
        self.words.push(word.to_string());
        self.index.insert(word.to_string(), i);
        self.vectors.push_row(init).expect("row width matches");
        i
    }

    /// Random vectors, uniform in `[-0.1, 0.1]`, for the distinct surfaces of
    /// the given corpora in first-seen order.
    pub fn random<'a, R: Rng>(
        corpora: impl IntoIterator<Item = &'a LabeledSentence>,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut seen = HashMap::new();
        let mut words = Vec::new();
        for s in corpora {
            for t in &s.tokens {
                if !seen.contains_key(&t.surface) {
                    seen.insert(t.surface.clone(), ());
                    words.push(t.surface.clone());
                }
            }
        }
        let vectors = Array2::from_shape_fn((words.len(), dim), |_| rng.random_range(-0.1..=0.1));
        Self::from_rows(words, vectors).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    /// Row for a surface: exact match, then lowercased, then `<UNK>`.
    pub fn lookup(&self, surface: &str) -> usize {
        if let Some(&i) = self.index.get(surface) {
            return i;
        }
        self.index.get(&surface.to_lowercase()).copied().unwrap_or(self.unk)
    }

    pub fn vector(&self, row: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(row)
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn bos(&self) -> usize {
        self.bos
    }

    pub fn eos(&self) -> usize {
        self.eos
    }
}

/// Parses the word2vec text format: a `vocab_size dim` header, then one
/// word followed by `dim` reals per line.
pub fn parse_embeddings(source_name: &str, content: &str, expected_dim: usize) -> Result<EmbeddingTable> {
    let mut lines = content.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(source_name, 1, "missing `vocab_size dim` header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let parse_n = |s: &str| s.parse::<usize>().ok();
    let (Some(vocab), Some(dim)) = (
        head.first().copied().and_then(parse_n),
        head.get(1).copied().and_then(parse_n),
    ) else {
        return Err(Error::parse(source_name, 1, "malformed header"));
    };
    if head.len() != 2 {
        return Err(Error::parse(source_name, 1, "malformed header"));
    }
    if dim != expected_dim {
        return Err(Error::parse(
            source_name,
            1,
            format!("embedding dimension {dim}, expected {expected_dim}"),
        ));
    }

    let mut words = Vec::with_capacity(vocab);
    let mut values = Vec::with_capacity(vocab * dim);
    for (i, line) in lines {
        let mut fields = line.split_whitespace();
        let word = fields.next().unwrap();
        let row: Vec<f64> = fields
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(source_name, i + 1, "non-numeric vector component"))?;
        if row.len() != dim {
            return Err(Error::parse(
                source_name,
                i + 1,
                format!("expected {dim} components, found {}", row.len()),
            ));
        }
        words.push(word.to_string());
        values.extend(row);
    }
    if words.len() != vocab {
        return Err(Error::parse(
            source_name,
            1,
            format!("header declares {vocab} words, file has {}", words.len()),
        ));
    }
    let vectors = Array2::from_shape_vec((vocab, dim), values).expect("row lengths checked");
    EmbeddingTable::from_rows(words, vectors)
}

/// Loads 250-dimensional word vectors.
pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    load_embeddings_with_dim(path, WORD_DIM)
}

pub fn load_embeddings_with_dim(path: &Path, dim: usize) -> Result<EmbeddingTable> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_embeddings(&path.display().to_string(), &content, dim)
}

/// Character inventory; index 0 is the unknown character.
#[derive(Debug, Clone, PartialEq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    pub fn build<'a>(corpora: impl IntoIterator<Item = &'a LabeledSentence>) -> Self {
        let mut vocab = CharVocab::from_chars(Vec::new());
        for s in corpora {
            for t in &s.tokens {
                for c in t.surface.chars() {
                    if !vocab.index.contains_key(&c) {
                        vocab.index.insert(c, vocab.chars.len() + 1);
                        vocab.chars.push(c);
                    }
                }
            }
        }
        vocab
    }

    /// Known characters in index order (index `i + 1`).
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 1)).collect();
        CharVocab { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Table rows needed, including the unknown slot.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn lookup(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_words(dim: usize) -> String {
        let row = |v: f64| vec![v.to_string(); dim].join(" ");
        format!("2 {dim}\nalpha {}\nbeta {}\n", row(1.0), row(3.0))
    }

    #[test]
    fn two_word_file_gets_reserved_rows() {
        let table = parse_embeddings("e", &two_words(WORD_DIM), WORD_DIM).unwrap();
        assert_eq!(table.len(), 5);
        assert_eq!(table.vector(table.unk())[0], 2.0);
        assert_eq!(table.vector(table.bos()).sum(), 0.0);
        assert_eq!(table.vector(table.eos()).sum(), 0.0);
        assert_eq!(table.lookup("zzz-unseen"), table.unk());
        assert_eq!(table.lookup("Alpha"), table.lookup("alpha"));
    }

    #[test]
    fn wrong_dimension_rejected() {
        assert!(parse_embeddings("e", &two_words(4), WORD_DIM).is_err());
    }

    #[test]
    fn short_file_rejected() {
        let content = two_words(3).replacen("2 3", "3 3", 1);
        assert!(parse_embeddings("e", &content, 3).is_err());
    }

    #[test]
    fn ragged_line_reports_line_number() {
        let content = "2 3\na 1 2 3\nb 1 2\n";
        match parse_embeddings("e", content, 3).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn char_vocab_unknown_slot() {
        let v = CharVocab::from_chars(vec!['a', 'b']);
        assert_eq!(v.size(), 3);
        assert_eq!(v.lookup('b'), 2);
        assert_eq!(v.lookup('z'), 0);
    }
}
