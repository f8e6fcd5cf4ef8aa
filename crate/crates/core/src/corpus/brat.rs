use std::path::{Path, PathBuf};

use super::{spans_to_iobes, split_sentences, tokenize, Category, LabeledSentence, Pos, Span, Token};
use crate::{Error, Result};

/// Something the reader fixed up rather than rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BratWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct BratDocument {
    pub sentences: Vec<LabeledSentence>,
    pub warnings: Vec<BratWarning>,
}

struct Entity {
    line: usize,
    category: Category,
    /// Byte range in the text.
    range: (usize, usize),
}

/// Reads one BRAT document. Annotation offsets are character (code point)
/// offsets into `text`, as written by the standard BRAT tools.
pub fn read_brat(doc_id: &str, text: &str, ann: &str) -> Result<BratDocument> {
    let source = format!("{doc_id}.ann");
    let byte_of_char: Vec<usize> = text
        .char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(text.len()))
        .collect();

    let mut entities = Vec::new();
    for (i, line) in ann.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match line.chars().next() {
            Some('T') => {}
            Some('R' | 'A' | 'E' | 'M' | 'N' | '*' | '#') => continue,
            _ => return Err(Error::parse(&source, lineno, "unrecognized annotation line")),
        }
        let mut fields = line.splitn(3, '\t');
        let id = fields.next().unwrap_or_default();
        let (Some(body), Some(surface)) = (fields.next(), fields.next()) else {
            return Err(Error::parse(&source, lineno, "expected three tab-separated fields"));
        };
        if id.len() < 2 {
            return Err(Error::parse(&source, lineno, "missing entity id"));
        }
        if body.contains(';') {
            return Err(Error::parse(&source, lineno, "discontinuous spans are not supported"));
        }
        let parts: Vec<&str> = body.split(' ').collect();
        let [cat, start, end] = parts[..] else {
            return Err(Error::parse(&source, lineno, "expected `<Category> <start> <end>`"));
        };
        let category: Category = cat
            .parse()
            .map_err(|_| Error::parse(&source, lineno, format!("unknown category {cat:?}")))?;
        let parse_offset = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::parse(&source, lineno, format!("bad offset {s:?}")))
        };
        let (start, end) = (parse_offset(start)?, parse_offset(end)?);
        if start >= end || end >= byte_of_char.len() {
            return Err(Error::parse(
                &source,
                lineno,
                format!("offsets {start}..{end} outside document"),
            ));
        }
        let range = (byte_of_char[start], byte_of_char[end]);
        let found = &text[range.0..range.1];
        if found != surface {
            return Err(Error::TextMismatch {
                source_name: source,
                line: lineno,
                expected: surface.to_string(),
                found: found.to_string(),
            });
        }
        entities.push(Entity {
            line: lineno,
            category,
            range,
        });
    }

    let token_ranges = tokenize(text);
    let sentence_ranges = split_sentences(text, &token_ranges);
    let mut sentence_of_token = vec![0; token_ranges.len()];
    for (s, r) in sentence_ranges.iter().enumerate() {
        for t in r.clone() {
            sentence_of_token[t] = s;
        }
    }

    let mut warnings = Vec::new();
    let mut per_sentence: Vec<Vec<(usize, Span)>> = vec![Vec::new(); sentence_ranges.len()];
    for e in &entities {
        let covered: Vec<usize> = token_ranges
            .iter()
            .enumerate()
            .filter(|(_, r)| r.start < e.range.1 && r.end > e.range.0)
            .map(|(i, _)| i)
            .collect();
        let (Some(&first), Some(&last)) = (covered.first(), covered.last()) else {
            warnings.push(BratWarning {
                line: e.line,
                message: "annotation covers no token; dropped".into(),
            });
            continue;
        };
        if token_ranges[first].start != e.range.0 || token_ranges[last].end != e.range.1 {
            warnings.push(BratWarning {
                line: e.line,
                message: format!(
                    "span {:?} splits a token; snapped to {:?}",
                    &text[e.range.0..e.range.1],
                    &text[token_ranges[first].start..token_ranges[last].end]
                ),
            });
        }
        let sent = sentence_of_token[first];
        let mut last = last;
        if sentence_of_token[last] != sent {
            last = sentence_ranges[sent].end - 1;
            warnings.push(BratWarning {
                line: e.line,
                message: "span crosses a sentence boundary; clipped to the first sentence".into(),
            });
        }
        let offset = sentence_ranges[sent].start;
        per_sentence[sent].push((e.line, Span::new(first - offset, last - offset, e.category)));
    }

    let mut sentences = Vec::with_capacity(sentence_ranges.len());
    for (s, range) in sentence_ranges.iter().enumerate() {
        let tokens = token_ranges[range.clone()]
            .iter()
            .map(|r| Token::new(&text[r.clone()], (r.start, r.end), Pos::UNKNOWN))
            .collect::<Result<Vec<_>>>()?;

        // Keep the earliest (then longest) of any overlapping group.
        let mut candidates = std::mem::take(&mut per_sentence[s]);
        candidates.sort_by_key(|(_, sp)| (sp.start, std::cmp::Reverse(sp.end)));
        let mut kept: Vec<Span> = Vec::new();
        for (line, span) in candidates {
            if kept.contains(&span) {
                continue;
            }
            if kept.iter().any(|k| k.overlaps(&span)) {
                warnings.push(BratWarning {
                    line,
                    message: format!("overlapping keyphrase {span:?} dropped"),
                });
                continue;
            }
            kept.push(span);
        }
        let labels = spans_to_iobes(tokens.len(), &kept)?;
        sentences.push(LabeledSentence {
            tokens,
            labels: Some(labels),
            doc_id: doc_id.to_string(),
            sentence_index: s,
        });
    }

    Ok(BratDocument { sentences, warnings })
}

/// Reads a `.txt`/`.ann` pair; the document id is the file stem.
pub fn read_brat_files(txt: &Path, ann: &Path) -> Result<BratDocument> {
    let text = std::fs::read_to_string(txt).map_err(|e| Error::file(txt, e))?;
    let annotations = std::fs::read_to_string(ann).map_err(|e| Error::file(ann, e))?;
    let doc_id = txt
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    read_brat(&doc_id, &text, &annotations)
}

/// `.txt`/`.ann` files of one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BratPair {
    pub stem: String,
    pub txt: PathBuf,
    pub ann: PathBuf,
}

/// Pairs the `.txt` and `.ann` files of a directory by stem, sorted by stem.
/// Files lacking their partner are returned separately.
pub fn find_brat_pairs(dir: &Path) -> Result<(Vec<BratPair>, Vec<PathBuf>)> {
    let mut txt = std::collections::BTreeMap::new();
    let mut ann = std::collections::BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        match (path.extension().and_then(|e| e.to_str()), stem) {
            (Some("txt"), Some(stem)) => {
                txt.insert(stem, path);
            }
            (Some("ann"), Some(stem)) => {
                ann.insert(stem, path);
            }
            _ => {}
        }
    }
    let mut pairs = Vec::new();
    let mut orphans = Vec::new();
    for (stem, t) in txt {
        match ann.remove(&stem) {
            Some(a) => pairs.push(BratPair { stem, txt: t, ann: a }),
            None => orphans.push(t),
        }
    }
    orphans.extend(ann.into_values());
    orphans.sort();
    Ok((pairs, orphans))
}

/// Reads every document of a directory in stem order, failing on the first
/// unpaired file or malformed document.
pub fn read_brat_dir(dir: &Path) -> Result<BratDocument> {
    let (pairs, orphans) = find_brat_pairs(dir)?;
    if let Some(o) = orphans.first() {
        return Err(Error::parse(o.display().to_string(), 0, "no matching .txt/.ann partner"));
    }
    let mut sentences = Vec::new();
    let mut warnings = Vec::new();
    for pair in pairs {
        let doc = read_brat_files(&pair.txt, &pair.ann)?;
        sentences.extend(doc.sentences);
        warnings.extend(doc.warnings);
    }
    Ok(BratDocument { sentences, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Label;

    const TEXT: &str = "This paper addresses named entity recognition. Alloys like Cu40Zn melt.";

    fn labels(doc: &BratDocument, s: usize) -> Vec<String> {
        doc.sentences[s]
            .labels
            .as_ref()
            .unwrap()
            .iter()
            .map(Label::to_string)
            .collect()
    }

    #[test]
    fn single_task_span() {
        let ann = "T1\tTask 21 45\tnamed entity recognition\n";
        let doc = read_brat("d", TEXT, ann).unwrap();
        assert_eq!(doc.sentences.len(), 2);
        assert_eq!(
            labels(&doc, 0),
            vec!["O", "O", "O", "B-Task", "I-Task", "E-Task", "O"]
        );
        assert!(doc.warnings.is_empty());
        assert_eq!(doc.sentences[1].tokens[2].surface, "Cu40Zn");
    }

    #[test]
    fn empty_annotations_give_outside_labels() {
        let doc = read_brat("d", TEXT, "").unwrap();
        for s in 0..doc.sentences.len() {
            assert!(labels(&doc, s).iter().all(|l| l == "O"));
        }
    }

    #[test]
    fn split_token_is_snapped_with_warning() {
        // "Cu40" inside "Cu40Zn"
        let start = TEXT.find("Cu40Zn").unwrap();
        let ann = format!("T1\tMaterial {} {}\tCu40\n", start, start + 4);
        let doc = read_brat("d", TEXT, &ann).unwrap();
        assert_eq!(labels(&doc, 1), vec!["O", "O", "S-Material", "O", "O"]);
        assert_eq!(doc.warnings.len(), 1);
        assert!(doc.warnings[0].message.contains("snapped"));
    }

    #[test]
    fn relation_lines_ignored() {
        let ann = "T1\tTask 21 45\tnamed entity recognition\nR1\tSynonym-of Arg1:T1 Arg2:T1\n*\tSynonym-of T1 T1\n";
        assert!(read_brat("d", TEXT, ann).is_ok());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let ann = "T1\tTask 21 45\tnamed entity recognition\nT2\tTask twenty 45\tx\n";
        match read_brat("d", TEXT, ann).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn text_mismatch_is_error() {
        let ann = "T1\tTask 21 45\tnamed entity recognizer\n";
        assert!(matches!(
            read_brat("d", TEXT, ann),
            Err(Error::TextMismatch { line: 1, .. })
        ));
    }

    #[test]
    fn char_offsets_with_multibyte_text() {
        let text = "Über Lösungen sprechen.";
        let ann = "T1\tMaterial 5 13\tLösungen\n";
        let doc = read_brat("d", text, ann).unwrap();
        assert_eq!(labels(&doc, 0), vec!["O", "S-Material", "O", "O"]);
    }

    #[test]
    fn overlapping_annotations_keep_longest() {
        let ann = "T1\tTask 21 45\tnamed entity recognition\nT2\tProcess 27 45\tentity recognition\n";
        let doc = read_brat("d", TEXT, ann).unwrap();
        assert_eq!(labels(&doc, 0)[3], "B-Task");
        assert_eq!(doc.warnings.len(), 1);
    }
}
