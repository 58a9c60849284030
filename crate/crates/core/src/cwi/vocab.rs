use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Printable ASCII plus PAD and UNK. Any other character folds to UNK.
#[derive(Clone, Copy, Debug, Default)]
pub struct CharVocab;

impl CharVocab {
    const FIRST: u32 = 0x20;
    const LAST: u32 = 0x7e;

    pub fn len(&self) -> usize {
        2 + (Self::LAST - Self::FIRST + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, c: char) -> usize {
        let v = c as u32;
        if (Self::FIRST..=Self::LAST).contains(&v) {
            2 + (v - Self::FIRST) as usize
        } else {
            UNK
        }
    }

    /// Character ids truncated or PAD-extended to `width`.
    pub fn encode(&self, word: &str, width: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = word.chars().take(width).map(|c| self.index(c)).collect();
        ids.resize(width, PAD);
        ids
    }
}

/// Image class labels with PAD and UNK at indices 0 and 1. Labels are
/// matched case-insensitively.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
    capacity: usize,
}

impl ClassVocab {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity < 2 {
            return Err(Error::Config(format!(
                "class vocabulary capacity {capacity} leaves no room for PAD and UNK"
            )));
        }
        Ok(ClassVocab {
            names: vec!["<pad>".into(), "<unk>".into()],
            index: HashMap::new(),
            capacity,
        })
    }

    /// Sorted, de-duplicated labels; those beyond capacity map to UNK.
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>, capacity: usize) -> Result<Self> {
        let mut sorted: Vec<String> = labels.into_iter().map(str::to_lowercase).collect();
        sorted.sort();
        sorted.dedup();
        let mut vocab = Self::new(capacity)?;
        let room = capacity - 2;
        if sorted.len() > room {
            log::warn!(
                "{} image classes exceed capacity {capacity}; the rest map to UNK",
                sorted.len()
            );
        }
        for name in sorted.into_iter().take(room) {
            vocab.push(name);
        }
        Ok(vocab)
    }

    /// Rebuilds the vocabulary in stored order (as written by [`ClassVocab::names`]).
    pub fn from_names(names: &[String], capacity: usize) -> Result<Self> {
        if names.len() < 2 || names.len() > capacity {
            return Err(Error::Checkpoint(format!(
                "{} class names for capacity {capacity}",
                names.len()
            )));
        }
        let mut vocab = Self::new(capacity)?;
        for name in &names[2..] {
            vocab.push(name.clone());
        }
        Ok(vocab)
    }

    fn push(&mut self, name: String) {
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.len() <= 2
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index(&self, label: &str) -> usize {
        self.index.get(&label.to_lowercase()).copied().unwrap_or(UNK)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chars_fold_and_pad() {
        let v = CharVocab;
        assert_eq!(v.len(), 97);
        assert_eq!(v.encode("a", 3), vec![v.index('a'), PAD, PAD]);
        assert_eq!(v.encode("é", 1), vec![UNK]);
        assert_eq!(v.encode("abcdef", 2).len(), 2);
        assert_ne!(v.index('a'), v.index('A'));
    }

    #[test]
    fn classes_are_sorted_and_bounded() {
        let v = ClassVocab::from_labels(["Dog", "cat", "dog", "ant"], 4).unwrap();
        assert_eq!(v.names(), ["<pad>", "<unk>", "ant", "cat"]);
        assert_eq!(v.index("CAT"), 3);
        assert_eq!(v.index("dog"), UNK);
        let back = ClassVocab::from_names(v.names(), 4).unwrap();
        assert_eq!(back, v);
    }
}
