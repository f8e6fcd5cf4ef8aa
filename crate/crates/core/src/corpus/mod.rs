//! Corpus data model: tokens, IOBES labels, keyphrase spans and the
//! readers for BRAT standoff and column files.

mod brat;
mod column;
mod iobes;
mod tokenize;

use std::fmt;
use std::str::FromStr;

pub use brat::{find_brat_pairs, read_brat, read_brat_dir, read_brat_files, BratDocument, BratPair, BratWarning};
pub use column::{read_column, read_column_str, write_column};
pub use iobes::{iobes_to_spans, is_valid_iobes, spans_to_iobes};
pub use tokenize::{split_sentences, tokenize};

use crate::{Error, Result};

/// Keyphrase category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    Task,
    Process,
    Material,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Task, Category::Process, Category::Material];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Task => "Task",
            Category::Process => "Process",
            Category::Material => "Material",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "task" => Ok(Category::Task),
            "process" => Ok(Category::Process),
            "material" => Ok(Category::Material),
            _ => Err(Error::InvalidParameter(format!("unknown category {s:?}"))),
        }
    }
}

/// Position of a token inside a keyphrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Position {
    Begin,
    Inside,
    End,
    Single,
}

/// One IOBES tag. Index layout: `O` is 0, then `B,I,E,S` for Task,
/// Process and Material in that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Outside,
    Tagged(Position, Category),
}

/// Number of real labels (`m`).
pub const NUM_LABELS: usize = 13;
/// Index of the START boundary symbol in a transition matrix.
pub const START: usize = NUM_LABELS;
/// Index of the STOP boundary symbol in a transition matrix.
pub const STOP: usize = NUM_LABELS + 1;

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Outside => 0,
            Label::Tagged(pos, cat) => {
                let p = match pos {
                    Position::Begin => 0,
                    Position::Inside => 1,
                    Position::End => 2,
                    Position::Single => 3,
                };
                1 + 4 * cat.index() + p
            }
        }
    }

    pub fn from_index(index: usize) -> Label {
        assert!(index < NUM_LABELS, "label index {index} out of range");
        if index == 0 {
            return Label::Outside;
        }
        let cat = Category::ALL[(index - 1) / 4];
        let pos = match (index - 1) % 4 {
            0 => Position::Begin,
            1 => Position::Inside,
            2 => Position::End,
            _ => Position::Single,
        };
        Label::Tagged(pos, cat)
    }

    pub fn all() -> impl Iterator<Item = Label> {
        (0..NUM_LABELS).map(Label::from_index)
    }

    pub fn category(self) -> Option<Category> {
        match self {
            Label::Outside => None,
            Label::Tagged(_, c) => Some(c),
        }
    }

    /// Whether `next` may directly follow `self` in a well-formed IOBES sequence.
    pub fn may_precede(self, next: Label) -> bool {
        use Position::*;
        match self {
            Label::Tagged(Begin | Inside, c) => {
                matches!(next, Label::Tagged(Inside | End, d) if d == c)
            }
            _ => Label::may_open(next),
        }
    }

    /// Labels that may start a sequence or follow a closed bracket.
    pub fn may_open(self) -> bool {
        matches!(
            self,
            Label::Outside | Label::Tagged(Position::Begin | Position::Single, _)
        )
    }

    /// Labels that may end a sequence.
    pub fn may_close(self) -> bool {
        !matches!(self, Label::Tagged(Position::Begin | Position::Inside, _))
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Outside => f.write_str("O"),
            Label::Tagged(pos, cat) => {
                let p = match pos {
                    Position::Begin => 'B',
                    Position::Inside => 'I',
                    Position::End => 'E',
                    Position::Single => 'S',
                };
                write!(f, "{p}-{cat}")
            }
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Label::Outside);
        }
        let bad = || Error::InvalidParameter(format!("unknown label {s:?}"));
        let (p, cat) = s.split_once('-').ok_or_else(bad)?;
        let pos = match p {
            "B" => Position::Begin,
            "I" => Position::Inside,
            "E" => Position::End,
            "S" => Position::Single,
            _ => return Err(bad()),
        };
        Ok(Label::Tagged(pos, cat.parse().map_err(|_| bad())?))
    }
}

/// Capitalization class of a surface form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CapClass {
    AllCaps,
    FirstCap,
    AllLower,
    AnyCapNotFirst,
}

impl CapClass {
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }
}

pub fn cap_class(surface: &str) -> Result<CapClass> {
    let mut chars = surface.chars();
    let first = chars.next().ok_or(Error::EmptySurface)?;
    let cased: Vec<char> = surface
        .chars()
        .filter(|c| c.is_uppercase() || c.is_lowercase())
        .collect();
    if !cased.is_empty() && cased.iter().all(|c| c.is_uppercase()) {
        return Ok(CapClass::AllCaps);
    }
    if first.is_uppercase() {
        return Ok(CapClass::FirstCap);
    }
    if first.is_lowercase() && chars.any(char::is_uppercase) {
        return Ok(CapClass::AnyCapNotFirst);
    }
    Ok(CapClass::AllLower)
}

/// Fixed part-of-speech inventory: the 36 Penn Treebank word tags, six
/// punctuation classes and a reserved slot for anything else.
pub const POS_TAGS: [&str; 43] = [
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP",
    "NNPS", "PDT", "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB",
    "VBD", "VBG", "VBN", "VBP", "VBZ", "WDT", "WP", "WP$", "WRB", ".", ",", ":", "-LRB-",
    "-RRB-", "``", "UNK_POS",
];

/// Index into [`POS_TAGS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Pos(u8);

impl Pos {
    pub const COUNT: usize = POS_TAGS.len();
    pub const UNKNOWN: Pos = Pos(42);

    /// Maps a tag symbol onto the inventory. Common aliases (`(`, `''`,
    /// `#`, `$`, `HYPH`) fold into their class; anything else is `UNK_POS`.
    pub fn from_tag(tag: &str) -> Pos {
        let canonical = match tag {
            "(" | "-LCB-" | "-LSB-" => "-LRB-",
            ")" | "-RCB-" | "-RSB-" => "-RRB-",
            "''" | "\"" => "``",
            "#" | "$" => "SYM",
            "HYPH" | "NFP" => ":",
            other => other,
        };
        POS_TAGS
            .iter()
            .position(|t| *t == canonical)
            .map_or(Pos::UNKNOWN, |i| Pos(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn tag(self) -> &'static str {
        POS_TAGS[self.index()]
    }

    pub fn is_verb(self) -> bool {
        self.tag().starts_with("VB")
    }
}

impl Default for Pos {
    fn default() -> Self {
        Pos::UNKNOWN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub surface: String,
    /// Byte offsets `[start, end)` in the source document.
    pub offsets: (usize, usize),
    pub pos: Pos,
    pub cap: CapClass,
}

impl Token {
    pub fn new(surface: impl Into<String>, offsets: (usize, usize), pos: Pos) -> Result<Self> {
        let surface = surface.into();
        let cap = cap_class(&surface)?;
        if offsets.0 >= offsets.1 {
            return Err(Error::InvalidParameter(format!(
                "token {surface:?} has empty offsets {offsets:?}"
            )));
        }
        Ok(Token {
            surface,
            offsets,
            pos,
            cap,
        })
    }
}

/// A keyphrase over an inclusive token range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub category: Category,
}

impl Span {
    pub fn new(start: usize, end: usize, category: Category) -> Self {
        debug_assert!(start <= end);
        Span {
            start,
            end,
            category,
        }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSentence {
    pub tokens: Vec<Token>,
    pub labels: Option<Vec<Label>>,
    pub doc_id: String,
    pub sentence_index: usize,
}

impl LabeledSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Gold spans, empty when the sentence is unlabeled.
    pub fn spans(&self) -> Vec<Span> {
        self.labels.as_deref().map(iobes_to_spans).unwrap_or_default()
    }

    pub fn label_indices(&self) -> Option<Vec<usize>> {
        self.labels
            .as_ref()
            .map(|l| l.iter().map(|l| l.index()).collect())
    }

    /// Copy without gold labels.
    pub fn unlabeled(&self) -> LabeledSentence {
        LabeledSentence {
            labels: None,
            ..self.clone()
        }
    }
}
