use ndarray::{s, Array2, ArrayViewMut1};
use rayon::prelude::*;

use crate::corpus::{CapClass, LabeledSentence, Pos};
use crate::encoder::EmbeddingTable;

/// Raw feature width for word vectors of width `d`: a 5-gram window, the
/// closest verb, a POS one-hot and a capitalization one-hot.
pub fn raw_width(d: usize) -> usize {
    6 * d + Pos::COUNT + CapClass::COUNT
}

/// Index of the verb nearest to `t`, excluding `t` itself; the preceding
/// verb wins a distance tie.
pub fn closest_verb(sentence: &LabeledSentence, t: usize) -> Option<usize> {
    let n = sentence.len();
    (1..n).find_map(|d| {
        let before = t.checked_sub(d).filter(|&j| sentence.tokens[j].pos.is_verb());
        let after = Some(t + d).filter(|&j| j < n && sentence.tokens[j].pos.is_verb());
        before.or(after)
    })
}

fn fill_row(row: &mut ArrayViewMut1<f64>, sentence: &LabeledSentence, t: usize, table: &EmbeddingTable) {
    let d = table.dim();
    let n = sentence.len() as isize;
    for (slot, offset) in (-2isize..=2).enumerate() {
        let j = t as isize + offset;
        let id = if j < 0 {
            table.bos()
        } else if j >= n {
            table.eos()
        } else {
            table.lookup(&sentence.tokens[j as usize].surface)
        };
        row.slice_mut(s![slot * d..(slot + 1) * d]).assign(&table.vector(id));
    }
    if let Some(v) = closest_verb(sentence, t) {
        let id = table.lookup(&sentence.tokens[v].surface);
        row.slice_mut(s![5 * d..6 * d]).assign(&table.vector(id));
    }
    let tok = &sentence.tokens[t];
    row[6 * d + tok.pos.index()] = 1.0;
    row[6 * d + Pos::COUNT + tok.cap.index()] = 1.0;
}

/// One row per token occurrence, sentences in order.
pub fn node_features(sentences: &[&LabeledSentence], table: &EmbeddingTable) -> Array2<f64> {
    let total: usize = sentences.iter().map(|s| s.len()).sum();
    let mut out = Array2::zeros((total, raw_width(table.dim())));
    let mut chunks = Vec::with_capacity(sentences.len());
    let mut rest = out.view_mut();
    for s in sentences {
        let (head, tail) = rest.split_at(ndarray::Axis(0), s.len());
        chunks.push((*s, head));
        rest = tail;
    }
    chunks.into_par_iter().for_each(|(s, mut block)| {
        for t in 0..s.len() {
            fill_row(&mut block.row_mut(t), s, t, table);
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::read_column_str;
    use ndarray::Array2;

    fn table() -> EmbeddingTable {
        let words = ["we", "use", "crfs", "for", "tagging", "x"].map(String::from).to_vec();
        let vectors = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 + 1.0);
        EmbeddingTable::from_rows(words, vectors).unwrap()
    }

    #[test]
    fn single_token_padding() {
        let s = read_column_str("t", "x\tNN\n").unwrap().remove(0);
        let tab = table();
        let f = node_features(&[&s], &tab);
        assert_eq!(f.ncols(), raw_width(3));
        let slot = |k: usize| f.slice(s![0, k * 3..(k + 1) * 3]).to_owned();
        assert_eq!(slot(0), tab.vector(tab.bos()));
        assert_eq!(slot(1), tab.vector(tab.bos()));
        assert_eq!(slot(2), tab.vector(tab.lookup("x")));
        assert_eq!(slot(3), tab.vector(tab.eos()));
        assert_eq!(slot(4), tab.vector(tab.eos()));
        assert!(slot(5).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mid_sentence_assembly() {
        let s = read_column_str("t", "We\tPRP\nuse\tVBP\nCRFs\tNNS\nfor\tIN\ntagging\tVBG\n")
            .unwrap()
            .remove(0);
        let tab = table();
        let f = node_features(&[&s], &tab);
        let d = 3;
        let row = f.row(2);
        let mut expected = Vec::new();
        for w in ["We", "use", "CRFs", "for", "tagging"] {
            expected.extend(tab.vector(tab.lookup(w)).iter().copied());
        }
        // "use" is one step away, "tagging" two.
        expected.extend(tab.vector(tab.lookup("use")).iter().copied());
        let mut onehots = vec![0.0; Pos::COUNT + CapClass::COUNT];
        onehots[Pos::from_tag("NNS").index()] = 1.0;
        onehots[Pos::COUNT + CapClass::FirstCap.index()] = 1.0;
        expected.extend(onehots);
        assert_eq!(row.to_vec(), expected);
        assert_eq!(f.ncols(), 6 * d + 47);
    }

    #[test]
    fn verb_excludes_itself_and_prefers_preceding() {
        let s = read_column_str("t", "use\tVB\nCRFs\tNNS\n").unwrap().remove(0);
        assert_eq!(closest_verb(&s, 0), None);
        assert_eq!(closest_verb(&s, 1), Some(0));
        let s = read_column_str("t", "use\tVB\nCRFs\tNNS\ntag\tVB\n").unwrap().remove(0);
        assert_eq!(closest_verb(&s, 1), Some(0));
        let s = read_column_str("t", "CRFs\tNNS\nhelp\tNN\n").unwrap().remove(0);
        assert_eq!(closest_verb(&s, 0), None);
    }

    #[test]
    fn default_width() {
        assert_eq!(raw_width(250), 1547);
    }
}
