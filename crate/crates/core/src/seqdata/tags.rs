use std::fmt;

use crate::error::{Error, Result};

pub const NUM_TAGS: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityType {
    Per,
    Loc,
    Org,
    Misc,
}

impl EntityType {
    pub const ALL: [EntityType; 4] = [EntityType::Per, EntityType::Loc, EntityType::Org, EntityType::Misc];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Org => "ORG",
            EntityType::Misc => "MISC",
        }
    }

    /// Accepts the CoNLL names plus `OTHER`, which the Twitter corpora use
    /// for the miscellaneous class.
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "PER" => Some(EntityType::Per),
            "LOC" => Some(EntityType::Loc),
            "ORG" => Some(EntityType::Org),
            "MISC" | "OTHER" => Some(EntityType::Misc),
            _ => None,
        }
    }

    fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A BIO2 label. Index order is fixed: `O, B-PER, I-PER, B-LOC, I-LOC,
/// B-ORG, I-ORG, B-MISC, I-MISC`; transition matrices rely on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    O,
    B(EntityType),
    I(EntityType),
}

impl Tag {
    pub fn index(self) -> usize {
        match self {
            Tag::O => 0,
            Tag::B(t) => 1 + 2 * t.ordinal(),
            Tag::I(t) => 2 + 2 * t.ordinal(),
        }
    }

    pub fn from_index(i: usize) -> Option<Tag> {
        match i {
            0 => Some(Tag::O),
            1..=8 => {
                let t = EntityType::ALL[(i - 1) / 2];
                Some(if i % 2 == 1 { Tag::B(t) } else { Tag::I(t) })
            }
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Tag> {
        if s == "O" {
            return Some(Tag::O);
        }
        let (prefix, kind) = s.split_once('-')?;
        let kind = EntityType::parse(kind)?;
        match prefix {
            "B" => Some(Tag::B(kind)),
            "I" => Some(Tag::I(kind)),
            _ => None,
        }
    }

    pub fn entity(self) -> Option<EntityType> {
        match self {
            Tag::O => None,
            Tag::B(t) | Tag::I(t) => Some(t),
        }
    }

    pub fn all() -> impl Iterator<Item = Tag> {
        (0..NUM_TAGS).map(|i| Tag::from_index(i).expect("in range"))
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => f.write_str("O"),
            Tag::B(t) => write!(f, "B-{t}"),
            Tag::I(t) => write!(f, "I-{t}"),
        }
    }
}

/// The closed BIO2 label set with its index map and legality predicate.
#[derive(Clone, Debug)]
pub struct TagScheme {
    labels: Vec<String>,
}

impl Default for TagScheme {
    fn default() -> Self {
        Self::bio2()
    }
}

impl TagScheme {
    pub fn bio2() -> Self {
        TagScheme {
            labels: Tag::all().map(|t| t.to_string()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        Tag::parse(label).map(Tag::index)
    }

    /// `I-X` may only follow `B-X` or `I-X`; `prev = None` is the sentence start.
    pub fn is_legal(prev: Option<Tag>, next: Tag) -> bool {
        match next {
            Tag::I(t) => matches!(prev, Some(Tag::B(p)) | Some(Tag::I(p)) if p == t),
            _ => true,
        }
    }

    pub fn check_sequence(tags: &[Tag]) -> Result<()> {
        let mut prev = None;
        for (i, &t) in tags.iter().enumerate() {
            if !Self::is_legal(prev, t) {
                let p = prev.map_or_else(|| "<start>".to_string(), |p: Tag| p.to_string());
                return Err(Error::contract(format!(
                    "illegal BIO2 transition {p} -> {t} at position {}",
                    i + 1
                )));
            }
            prev = Some(t);
        }
        Ok(())
    }

    /// Rewrites every illegal `I-X` into `B-X`. Returns the repaired positions.
    pub fn repair(tags: &mut [Tag]) -> Vec<usize> {
        let mut fixed = Vec::new();
        let mut prev = None;
        for (i, t) in tags.iter_mut().enumerate() {
            if !Self::is_legal(prev, *t) {
                if let Tag::I(k) = *t {
                    *t = Tag::B(k);
                    fixed.push(i);
                }
            }
            prev = Some(*t);
        }
        fixed
    }
}

/// An entity span with 1-based inclusive bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityType,
}

/// Maximal `B-X (I-X)*` runs of a BIO2-legal sequence.
pub fn extract_spans(tags: &[Tag]) -> Result<Vec<EntitySpan>> {
    TagScheme::check_sequence(tags)?;
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &t) in tags.iter().enumerate() {
        let pos = i + 1;
        match t {
            Tag::I(_) => {
                if let Some(s) = open.as_mut() {
                    s.end = pos;
                }
            }
            Tag::B(kind) => {
                spans.extend(open.take());
                open = Some(EntitySpan {
                    start: pos,
                    end: pos,
                    kind,
                });
            }
            Tag::O => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    Ok(spans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| Tag::parse(t).unwrap()).collect()
    }

    #[test]
    fn scheme_has_nine_labels_in_fixed_order() {
        let scheme = TagScheme::bio2();
        assert_eq!(scheme.len(), 9);
        assert_eq!(
            scheme.labels(),
            ["O", "B-PER", "I-PER", "B-LOC", "I-LOC", "B-ORG", "I-ORG", "B-MISC", "I-MISC"]
        );
        for (i, l) in scheme.labels().iter().enumerate() {
            assert_eq!(scheme.index_of(l), Some(i));
            if let Some(kind) = l.strip_prefix("I-") {
                assert!(scheme.labels().contains(&format!("B-{kind}")));
            }
        }
    }

    #[test]
    fn other_is_an_alias_for_misc() {
        assert_eq!(Tag::parse("B-OTHER"), Some(Tag::B(EntityType::Misc)));
        assert_eq!(Tag::parse("X-PER"), None);
    }

    #[test]
    fn spans_of_simple_sequences() {
        assert_eq!(
            extract_spans(&tags("B-PER I-PER O")).unwrap(),
            vec![EntitySpan {
                start: 1,
                end: 2,
                kind: EntityType::Per
            }]
        );
        assert!(extract_spans(&tags("O O O")).unwrap().is_empty());
        let s = extract_spans(&tags("B-LOC B-LOC I-LOC O B-ORG")).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(
            s[1],
            EntitySpan {
                start: 2,
                end: 3,
                kind: EntityType::Loc
            }
        );
        assert_eq!(
            s[2],
            EntitySpan {
                start: 5,
                end: 5,
                kind: EntityType::Org
            }
        );
    }

    #[test]
    fn illegal_sequences_are_rejected_or_repaired() {
        assert!(extract_spans(&tags("O I-PER")).is_err());
        assert!(extract_spans(&tags("B-LOC I-PER")).is_err());
        let mut t = tags("I-PER I-PER B-LOC I-ORG");
        assert_eq!(TagScheme::repair(&mut t), vec![0, 3]);
        assert_eq!(t, tags("B-PER I-PER B-LOC B-ORG"));
    }
}
