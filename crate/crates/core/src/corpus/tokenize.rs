use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

fn word_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\p{L}\p{N}]+(?:[-'.][\p{L}\p{N}]+)*").unwrap())
}

fn formula_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\p{L}\p{N}][\p{L}\p{N}/.+\-]*$").unwrap())
}

const TRAILING_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?'];

/// Splits text into byte-offset ranges.
///
/// Whitespace-delimited chunks containing `=`, or made only of
/// letters/digits/`/.+-` with at least one letter and one digit, stay whole
/// (minus trailing sentence punctuation). Everything else splits into word
/// runs (internal `-`, `'`, `.` allowed) and single punctuation characters.
pub fn tokenize(text: &str) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut chunk_start = None;
    for (i, c) in text.char_indices().chain(std::iter::once((text.len(), ' '))) {
        if c.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                tokenize_chunk(text, s, i, &mut out);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    out
}

fn is_special(core: &str) -> bool {
    if core.contains('=') {
        return true;
    }
    formula_re().is_match(core)
        && core.chars().any(char::is_alphabetic)
        && core.chars().any(|c| c.is_ascii_digit())
}

fn tokenize_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Range<usize>>) {
    let chunk = &text[start..end];
    let core = chunk.trim_end_matches(TRAILING_PUNCT);
    if !core.is_empty() && is_special(core) {
        let core_end = start + core.len();
        out.push(start..core_end);
        let mut pos = core_end;
        for c in text[core_end..end].chars() {
            out.push(pos..pos + c.len_utf8());
            pos += c.len_utf8();
        }
        return;
    }

    let mut pos = start;
    while pos < end {
        let rest = &text[pos..end];
        if let Some(m) = word_re().find(rest) {
            out.push(pos..pos + m.end());
            pos += m.end();
        } else {
            let c = rest.chars().next().unwrap();
            out.push(pos..pos + c.len_utf8());
            pos += c.len_utf8();
        }
    }
}

/// Groups tokens into sentences: a boundary falls after a `.`, `?` or `!`
/// token that is followed by whitespace and a token starting with an
/// uppercase letter. Returns token index ranges.
pub fn split_sentences(text: &str, tokens: &[Range<usize>]) -> Vec<Range<usize>> {
    let mut sentences = Vec::new();
    let mut start = 0;
    for i in 0..tokens.len() {
        let tok = &text[tokens[i].clone()];
        if i + 1 == tokens.len() {
            break;
        }
        if !matches!(tok, "." | "?" | "!") {
            continue;
        }
        let next = &tokens[i + 1];
        let gap = &text[tokens[i].end..next.start];
        let starts_upper = text[next.clone()].chars().next().is_some_and(char::is_uppercase);
        if !gap.is_empty() && gap.chars().all(char::is_whitespace) && starts_upper {
            sentences.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        sentences.push(start..tokens.len());
    }
    sentences
}
