//! Word-level tag sets for the two classification tasks.
//!
//! Number-case tags follow the IOB scheme over four span categories, giving
//! nine classes. Punctuation tags mark the symbol that follows a word, with
//! `None` for no mark, giving five classes.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Span categories handled by the number-case task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Case,
    Number,
    Date,
    Phone,
}

pub const CATEGORIES: [Category; 4] = [
    Category::Case,
    Category::Number,
    Category::Date,
    Category::Phone,
];

impl Category {
    pub fn name(self) -> &'static str {
        match self {
            Category::Case => "CASE",
            Category::Number => "NUMBER",
            Category::Date => "DATE",
            Category::Phone => "PHONE",
        }
    }

    fn index(self) -> usize {
        match self {
            Category::Case => 0,
            Category::Number => 1,
            Category::Date => 2,
            Category::Phone => 3,
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Number-case tag of one word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NcTag {
    Outside,
    Begin(Category),
    Inside(Category),
}

/// Number of number-case classes (O plus B/I per category).
pub const NC_CLASSES: usize = 9;

impl NcTag {
    pub fn id(self) -> usize {
        match self {
            NcTag::Outside => 0,
            NcTag::Begin(c) => 1 + 2 * c.index(),
            NcTag::Inside(c) => 2 + 2 * c.index(),
        }
    }

    pub fn from_id(id: usize) -> Option<NcTag> {
        if id == 0 {
            return Some(NcTag::Outside);
        }
        if id >= NC_CLASSES {
            return None;
        }
        let cat = CATEGORIES[(id - 1) / 2];
        Some(if (id - 1) % 2 == 0 {
            NcTag::Begin(cat)
        } else {
            NcTag::Inside(cat)
        })
    }

    pub fn category(self) -> Option<Category> {
        match self {
            NcTag::Outside => None,
            NcTag::Begin(c) | NcTag::Inside(c) => Some(c),
        }
    }

    pub fn label(self) -> String {
        match self {
            NcTag::Outside => "O".to_string(),
            NcTag::Begin(c) => format!("B-{}", c.name()),
            NcTag::Inside(c) => format!("I-{}", c.name()),
        }
    }

    pub fn parse(s: &str) -> Option<NcTag> {
        if s == "O" {
            return Some(NcTag::Outside);
        }
        let (prefix, name) = s.split_once('-')?;
        let cat = CATEGORIES.iter().copied().find(|c| c.name() == name)?;
        match prefix {
            "B" => Some(NcTag::Begin(cat)),
            "I" => Some(NcTag::Inside(cat)),
            _ => None,
        }
    }
}

impl Serialize for NcTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for NcTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        NcTag::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad nc tag: {s}")))
    }
}

/// Punctuation tag of one word: the mark that directly follows it, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PunctTag {
    None,
    Comma,
    Exclamation,
    Period,
    Question,
}

/// Number of punctuation classes.
pub const PUNCT_CLASSES: usize = 5;

pub const PUNCT_TAGS: [PunctTag; 5] = [
    PunctTag::None,
    PunctTag::Comma,
    PunctTag::Exclamation,
    PunctTag::Period,
    PunctTag::Question,
];

impl PunctTag {
    pub fn id(self) -> usize {
        match self {
            PunctTag::None => 0,
            PunctTag::Comma => 1,
            PunctTag::Exclamation => 2,
            PunctTag::Period => 3,
            PunctTag::Question => 4,
        }
    }

    pub fn from_id(id: usize) -> Option<PunctTag> {
        PUNCT_TAGS.get(id).copied()
    }

    /// The character this tag appends after its word, if any.
    pub fn mark(self) -> Option<char> {
        match self {
            PunctTag::None => None,
            PunctTag::Comma => Some(','),
            PunctTag::Exclamation => Some('!'),
            PunctTag::Period => Some('.'),
            PunctTag::Question => Some('?'),
        }
    }

    /// True for marks that end a sentence (the next word is capitalized).
    pub fn ends_sentence(self) -> bool {
        matches!(
            self,
            PunctTag::Period | PunctTag::Exclamation | PunctTag::Question
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            PunctTag::None => "O",
            PunctTag::Comma => "COMMA",
            PunctTag::Exclamation => "EXCLAMATION",
            PunctTag::Period => "PERIOD",
            PunctTag::Question => "QUESTION",
        }
    }

    pub fn parse(s: &str) -> Option<PunctTag> {
        PUNCT_TAGS.iter().copied().find(|t| t.label() == s)
    }
}

impl Serialize for PunctTag {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.label())
    }
}

impl<'de> Deserialize<'de> for PunctTag {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        PunctTag::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("bad punct tag: {s}")))
    }
}

/// Rewrite any I-X with no preceding B-X/I-X of the same category into B-X.
///
/// Scans left to right; the check at each position uses the already repaired
/// tag of the previous position.
pub fn repair_iob(tags: &mut [NcTag]) {
    for i in 0..tags.len() {
        if let NcTag::Inside(cat) = tags[i] {
            let ok = i > 0
                && match tags[i - 1] {
                    NcTag::Begin(p) | NcTag::Inside(p) => p == cat,
                    NcTag::Outside => false,
                };
            if !ok {
                tags[i] = NcTag::Begin(cat);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nc_ids_round_trip() {
        for id in 0..NC_CLASSES {
            let tag = NcTag::from_id(id).unwrap();
            assert_eq!(tag.id(), id);
            assert_eq!(NcTag::parse(&tag.label()), Some(tag));
        }
        assert!(NcTag::from_id(NC_CLASSES).is_none());
    }

    #[test]
    fn punct_ids_round_trip() {
        for id in 0..PUNCT_CLASSES {
            let tag = PunctTag::from_id(id).unwrap();
            assert_eq!(tag.id(), id);
            assert_eq!(PunctTag::parse(tag.label()), Some(tag));
        }
    }

    #[test]
    fn repair_rewrites_leading_inside() {
        use Category::*;
        let mut tags = vec![NcTag::Outside, NcTag::Inside(Date)];
        repair_iob(&mut tags);
        assert_eq!(tags, vec![NcTag::Outside, NcTag::Begin(Date)]);

        // Category switch also counts as a leading I.
        let mut tags = vec![NcTag::Begin(Number), NcTag::Inside(Date)];
        repair_iob(&mut tags);
        assert_eq!(tags, vec![NcTag::Begin(Number), NcTag::Begin(Date)]);

        // Valid continuation untouched.
        let mut tags = vec![NcTag::Begin(Number), NcTag::Inside(Number)];
        repair_iob(&mut tags);
        assert_eq!(tags, vec![NcTag::Begin(Number), NcTag::Inside(Number)]);
    }
}
