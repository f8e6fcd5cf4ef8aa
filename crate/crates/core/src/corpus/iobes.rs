use super::{Label, Position, Span};
use crate::{Error, Result};

/// Encodes non-overlapping spans over a sentence of `len` tokens.
pub fn spans_to_iobes(len: usize, spans: &[Span]) -> Result<Vec<Label>> {
    let mut sorted = spans.to_vec();
    sorted.sort();
    sorted.dedup();
    for span in &sorted {
        if span.start > span.end || span.end >= len {
            return Err(Error::SpanOutOfBounds { span: *span, len });
        }
    }
    for pair in sorted.windows(2) {
        if pair[0].overlaps(&pair[1]) {
            return Err(Error::OverlappingSpans {
                first: pair[0],
                second: pair[1],
            });
        }
    }

    let mut labels = vec![Label::Outside; len];
    for span in sorted {
        let c = span.category;
        if span.start == span.end {
            labels[span.start] = Label::Tagged(Position::Single, c);
        } else {
            labels[span.start] = Label::Tagged(Position::Begin, c);
            for l in &mut labels[span.start + 1..span.end] {
                *l = Label::Tagged(Position::Inside, c);
            }
            labels[span.end] = Label::Tagged(Position::End, c);
        }
    }
    Ok(labels)
}

/// Decodes spans from any label sequence.
///
/// A label that cannot continue the open bracket closes it at the previous
/// position and is then read as if no bracket were open. With no bracket
/// open, `B`/`I` open one and `S`/`E` produce a single-token span.
/// Brackets still open at the end close on the last token.
pub fn iobes_to_spans(labels: &[Label]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<(usize, super::Category)> = None;

    for (t, &label) in labels.iter().enumerate() {
        if let Some((start, c)) = open {
            match label {
                Label::Tagged(Position::Inside, d) if d == c => continue,
                Label::Tagged(Position::End, d) if d == c => {
                    spans.push(Span::new(start, t, c));
                    open = None;
                    continue;
                }
                _ => {
                    spans.push(Span::new(start, t - 1, c));
                    open = None;
                }
            }
        }
        match label {
            Label::Outside => {}
            Label::Tagged(Position::Begin | Position::Inside, c) => open = Some((t, c)),
            Label::Tagged(Position::End | Position::Single, c) => spans.push(Span::new(t, t, c)),
        }
    }
    if let Some((start, c)) = open {
        spans.push(Span::new(start, labels.len() - 1, c));
    }
    spans
}

pub fn is_valid_iobes(labels: &[Label]) -> bool {
    let mut prev: Option<Label> = None;
    for &l in labels {
        let ok = match prev {
            None => l.may_open(),
            Some(p) => p.may_precede(l),
        };
        if !ok {
            return false;
        }
        prev = Some(l);
    }
    prev.is_none_or(Label::may_close)
}
