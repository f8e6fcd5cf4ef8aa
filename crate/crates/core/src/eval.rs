//! Exact-match span scoring and token-level category scoring.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::corpus::{Category, Label, Span};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Span,
    Token,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subtask {
    /// Boundaries only.
    Identification,
    /// Boundaries and category.
    Classification,
}

/// Raw counts with derived precision, recall and F1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    /// When both sides are empty every score is 1; otherwise an empty side
    /// scores 0.
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let (precision, recall) = if predicted == 0 && gold == 0 {
            (1.0, 1.0)
        } else {
            let ratio = |n: usize| if n == 0 { 0.0 } else { true_positives as f64 / n as f64 };
            (ratio(predicted), ratio(gold))
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            true_positives,
            predicted,
            gold,
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub level: Level,
    pub subtask: Subtask,
    pub overall: Prf,
    /// Indexed by [`Category::index`].
    pub per_category: [Prf; 3],
}

impl MetricReport {
    pub fn category(&self, c: Category) -> &Prf {
        &self.per_category[c.index()]
    }

    fn name(&self) -> &'static str {
        match (self.level, self.subtask) {
            (Level::Span, Subtask::Identification) => "span-identification",
            (Level::Span, Subtask::Classification) => "span-classification",
            (Level::Token, Subtask::Identification) => "token-identification",
            (Level::Token, Subtask::Classification) => "token-classification",
        }
    }

    fn rows(&self) -> impl Iterator<Item = (&'static str, &Prf)> {
        std::iter::once(("overall", &self.overall)).chain(Category::ALL.iter().map(|c| (c.name(), self.category(*c))))
    }
}

fn check_aligned(gold: usize, pred: usize) -> Result<()> {
    if gold != pred {
        return Err(Error::LengthMismatch {
            expected: gold,
            found: pred,
        });
    }
    Ok(())
}

/// Micro-averaged exact-match span scores. Duplicate predictions count
/// once.
pub fn span_prf(gold: &[Vec<Span>], pred: &[Vec<Span>], subtask: Subtask) -> Result<MetricReport> {
    check_aligned(gold.len(), pred.len())?;
    let key = |s: &Span| match subtask {
        Subtask::Identification => (s.start, s.end, None),
        Subtask::Classification => (s.start, s.end, Some(s.category)),
    };
    let mut overall = [0usize; 3];
    let mut per_cat = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(pred) {
        let gs: BTreeSet<_> = g.iter().map(key).collect();
        let ps: BTreeSet<_> = p.iter().map(key).collect();
        overall[0] += gs.intersection(&ps).count();
        overall[1] += ps.len();
        overall[2] += gs.len();
        for c in Category::ALL {
            let gc: BTreeSet<_> = g.iter().filter(|s| s.category == c).map(|s| (s.start, s.end)).collect();
            let pc: BTreeSet<_> = p.iter().filter(|s| s.category == c).map(|s| (s.start, s.end)).collect();
            let counts = &mut per_cat[c.index()];
            counts[0] += gc.intersection(&pc).count();
            counts[1] += pc.len();
            counts[2] += gc.len();
        }
    }
    Ok(MetricReport {
        level: Level::Span,
        subtask,
        overall: Prf::from_counts(overall[0], overall[1], overall[2]),
        per_category: per_cat.map(|[tp, p, g]| Prf::from_counts(tp, p, g)),
    })
}

/// Token-level scores per category (B/I/E/S collapse to the category) and
/// overall keyphrase identification (any category against O).
pub fn token_prf(gold: &[Vec<Label>], pred: &[Vec<Label>]) -> Result<MetricReport> {
    check_aligned(gold.len(), pred.len())?;
    let mut overall = [0usize; 3];
    let mut per_cat = [[0usize; 3]; 3];
    for (g, p) in gold.iter().zip(pred) {
        check_aligned(g.len(), p.len())?;
        for (gl, pl) in g.iter().zip(p) {
            let (gc, pc) = (gl.category(), pl.category());
            overall[0] += usize::from(gc.is_some() && pc.is_some());
            overall[1] += usize::from(pc.is_some());
            overall[2] += usize::from(gc.is_some());
            for c in Category::ALL {
                let counts = &mut per_cat[c.index()];
                counts[0] += usize::from(gc == Some(c) && pc == Some(c));
                counts[1] += usize::from(pc == Some(c));
                counts[2] += usize::from(gc == Some(c));
            }
        }
    }
    Ok(MetricReport {
        level: Level::Token,
        subtask: Subtask::Identification,
        overall: Prf::from_counts(overall[0], overall[1], overall[2]),
        per_category: per_cat.map(|[tp, p, g]| Prf::from_counts(tp, p, g)),
    })
}

/// Tab-separated table, scores to 3 decimals.
pub fn to_tsv(reports: &[MetricReport]) -> String {
    let mut out = String::from("report\tscope\tprecision\trecall\tf1\ttp\tpredicted\tgold\n");
    for r in reports {
        for (scope, m) in r.rows() {
            writeln!(
                out,
                "{}\t{scope}\t{:.3}\t{:.3}\t{:.3}\t{}\t{}\t{}",
                r.name(),
                m.precision,
                m.recall,
                m.f1,
                m.true_positives,
                m.predicted,
                m.gold
            )
            .unwrap();
        }
    }
    out
}

/// `report.scope.metric = value` lines.
pub fn to_key_value(reports: &[MetricReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for (scope, m) in r.rows() {
            let name = r.name();
            writeln!(out, "{name}.{scope}.precision = {:.3}", m.precision).unwrap();
            writeln!(out, "{name}.{scope}.recall = {:.3}", m.recall).unwrap();
            writeln!(out, "{name}.{scope}.f1 = {:.3}", m.f1).unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Category::*;

    fn sp(start: usize, end: usize, c: Category) -> Span {
        Span::new(start, end, c)
    }

    #[test]
    fn hand_counted_spans() {
        let gold = vec![vec![sp(0, 1, Task), sp(4, 4, Material)]];
        let pred = vec![vec![sp(0, 1, Task), sp(2, 2, Process), sp(4, 5, Material)]];
        let r = span_prf(&gold, &pred, Subtask::Classification).unwrap();
        assert_eq!(format!("{:.3} {:.3} {:.3}", r.overall.precision, r.overall.recall, r.overall.f1), "0.333 0.500 0.400");
        assert_eq!(r.category(Task).f1, 1.0);
        assert_eq!(r.category(Material).f1, 0.0);
    }

    #[test]
    fn identity_and_disjoint() {
        let gold = vec![vec![sp(0, 0, Task)], vec![]];
        let r = span_prf(&gold, &gold, Subtask::Classification).unwrap();
        assert_eq!(r.overall.f1, 1.0);
        let pred = vec![vec![sp(1, 1, Task)], vec![sp(0, 2, Process)]];
        let r = span_prf(&gold, &pred, Subtask::Classification).unwrap();
        assert_eq!((r.overall.precision, r.overall.recall, r.overall.f1), (0.0, 0.0, 0.0));
        assert!(span_prf(&gold, &pred[..1], Subtask::Identification).is_err());
    }

    #[test]
    fn duplicates_count_once() {
        let gold = vec![vec![sp(0, 0, Task)]];
        let pred = vec![vec![sp(0, 0, Task), sp(0, 0, Task)]];
        assert_eq!(span_prf(&gold, &pred, Subtask::Classification).unwrap().overall.precision, 1.0);
    }

    #[test]
    fn category_mismatch_counts_for_identification_only() {
        let gold = vec![vec![sp(0, 2, Task)]];
        let pred = vec![vec![sp(0, 2, Process)]];
        assert_eq!(span_prf(&gold, &pred, Subtask::Identification).unwrap().overall.f1, 1.0);
        assert_eq!(span_prf(&gold, &pred, Subtask::Classification).unwrap().overall.f1, 0.0);
    }

    fn labels(s: &str) -> Vec<Label> {
        s.split_whitespace().map(|l| l.parse().unwrap()).collect()
    }

    #[test]
    fn token_level_hand_count() {
        let gold = vec![labels("B-Task E-Task O S-Material O S-Process")];
        let pred = vec![labels("B-Task E-Task S-Task S-Process O S-Process")];
        let r = token_prf(&gold, &pred).unwrap();
        // Task: 2 of 3 predicted are right, both gold found.
        let t = r.category(Task);
        assert_eq!((t.true_positives, t.predicted, t.gold), (2, 3, 2));
        assert!((t.f1 - 0.8).abs() < 1e-12);
        let p = r.category(Process);
        assert_eq!((p.true_positives, p.predicted, p.gold), (1, 2, 1));
        assert_eq!(r.category(Material).recall, 0.0);
        assert_eq!((r.overall.true_positives, r.overall.predicted, r.overall.gold), (4, 5, 4));
    }

    #[test]
    fn all_outside_prediction_has_zero_recall() {
        let gold = vec![labels("S-Task O")];
        let pred = vec![labels("O O")];
        let r = token_prf(&gold, &pred).unwrap();
        assert_eq!((r.overall.recall, r.overall.f1), (0.0, 0.0));
        assert!(token_prf(&gold, &[labels("O")]).is_err());
    }

    #[test]
    fn reports_render_three_decimals() {
        let gold = vec![vec![sp(0, 0, Task)]];
        let r = span_prf(&gold, &gold, Subtask::Classification).unwrap();
        let tsv = to_tsv(&[r.clone()]);
        assert!(tsv.contains("span-classification\toverall\t1.000\t1.000\t1.000\t1\t1\t1"));
        assert!(to_key_value(&[r]).contains("span-classification.overall.f1 = 1.000"));
    }

    fn span_sets() -> impl Strategy<Value = Vec<Vec<Span>>> {
        let span = (0usize..8, 0usize..3, 0usize..3).prop_map(|(s, len, c)| sp(s, s + len, Category::ALL[c]));
        prop::collection::vec(prop::collection::vec(span, 0..4), 1..5)
    }

    proptest! {
        #[test]
        fn swapping_sides_swaps_precision_and_recall(gold in span_sets(), pred in span_sets()) {
            let n = gold.len().min(pred.len());
            let (gold, pred) = (&gold[..n], &pred[..n]);
            let a = span_prf(gold, pred, Subtask::Classification).unwrap();
            let b = span_prf(pred, gold, Subtask::Classification).unwrap();
            prop_assert_eq!(a.overall.precision, b.overall.recall);
            prop_assert_eq!(a.overall.recall, b.overall.precision);
            prop_assert_eq!(span_prf(gold, gold, Subtask::Classification).unwrap().overall.f1, 1.0);
        }

        #[test]
        fn order_invariant(gold in span_sets(), pred in span_sets()) {
            let n = gold.len().min(pred.len());
            let (mut g, mut p) = (gold[..n].to_vec(), pred[..n].to_vec());
            let a = span_prf(&g, &p, Subtask::Identification).unwrap();
            g.reverse();
            p.reverse();
            prop_assert_eq!(a, span_prf(&g, &p, Subtask::Identification).unwrap());
        }
    }
}
