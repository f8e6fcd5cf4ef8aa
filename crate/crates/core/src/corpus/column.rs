use std::fmt::Write as _;
use std::path::Path;

use super::{iobes_to_spans, is_valid_iobes, spans_to_iobes, Label, LabeledSentence, Pos, Token};
use crate::{Error, Result};

/// Parses `surface<TAB>pos[<TAB>label]` lines, blank-line separated.
///
/// Every line in a file must have the same number of columns. Label
/// sequences that are not well-formed IOBES are repaired through the span
/// decoder. Offsets are synthesized as if the tokens were joined by single
/// spaces.
pub fn read_column_str(source_name: &str, content: &str) -> Result<Vec<LabeledSentence>> {
    let mut sentences = Vec::new();
    let mut columns: Option<usize> = None;
    let mut tokens: Vec<Token> = Vec::new();
    let mut labels: Vec<Label> = Vec::new();
    let mut offset = 0;

    let mut flush = |tokens: &mut Vec<Token>, labels: &mut Vec<Label>, offset: &mut usize, labeled: bool| {
        if tokens.is_empty() {
            return;
        }
        let labels = labeled.then(|| {
            let labels = std::mem::take(labels);
            if is_valid_iobes(&labels) {
                labels
            } else {
                spans_to_iobes(labels.len(), &iobes_to_spans(&labels))
                    .expect("decoded spans are well-formed")
            }
        });
        let index = sentences.len();
        sentences.push(LabeledSentence {
            tokens: std::mem::take(tokens),
            labels,
            doc_id: source_name.to_string(),
            sentence_index: index,
        });
        *offset = 0;
    };

    for (i, line) in content.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut labels, &mut offset, columns == Some(3));
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let expected = *columns.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::parse(
                source_name,
                lineno,
                format!("expected {expected} columns, found {}", fields.len()),
            ));
        }
        if !(2..=3).contains(&fields.len()) {
            return Err(Error::parse(
                source_name,
                lineno,
                "expected `surface<TAB>pos[<TAB>label]`",
            ));
        }
        let surface = fields[0];
        if surface.is_empty() {
            return Err(Error::parse(source_name, lineno, "empty surface"));
        }
        let token = Token::new(surface, (offset, offset + surface.len()), Pos::from_tag(fields[1]))
            .map_err(|e| Error::parse(source_name, lineno, e.to_string()))?;
        offset += surface.len() + 1;
        tokens.push(token);
        if fields.len() == 3 {
            let label = fields[2]
                .parse()
                .map_err(|e: Error| Error::parse(source_name, lineno, e.to_string()))?;
            labels.push(label);
        }
    }
    flush(&mut tokens, &mut labels, &mut offset, columns == Some(3));
    Ok(sentences)
}

/// Reads a column file; the document id of every sentence is the file stem.
pub fn read_column(path: &Path) -> Result<Vec<LabeledSentence>> {
    let content = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_column_str(&name, &content)
}

/// Renders sentences in column format. Unlabeled sentences get two columns.
pub fn write_column(sentences: &[LabeledSentence]) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (t, tok) in s.tokens.iter().enumerate() {
            match &s.labels {
                Some(labels) => writeln!(out, "{}\t{}\t{}", tok.surface, tok.pos.tag(), labels[t]),
                None => writeln!(out, "{}\t{}", tok.surface, tok.pos.tag()),
            }
            .unwrap();
        }
    }
    out
}
