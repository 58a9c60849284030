use std::collections::HashMap;
use std::io::BufRead;
use std::ops::Range;

use crate::error::{Error, Result};
use crate::seqdata::ImageWord;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";
/// Prefix of pieces that continue a word.
pub const CONTINUATION: &str = "##";
/// Longer words become a single `[UNK]`.
pub const MAX_WORD_CHARS: usize = 100;

/// Ordered subword vocabulary; a token's line index is its id.
#[derive(Clone, Debug)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    lowercase: bool,
    pad: usize,
    unk: usize,
    cls: usize,
    sep: usize,
    mask: usize,
}

impl SubwordVocab {
    /// Uncased vocabulary: input words are lowercased before matching.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        Self::with_case(tokens, true)
    }

    pub fn with_case(tokens: Vec<String>, lowercase: bool) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Config("subword vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::Config(format!("subword vocabulary line {} is empty", i + 1)));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Config(format!("subword {t:?} appears twice (line {})", i + 1)));
            }
        }
        let special = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::Config(format!("subword vocabulary lacks {name}")))
        };
        Ok(SubwordVocab {
            pad: special(PAD_TOKEN)?,
            unk: special(UNK_TOKEN)?,
            cls: special(CLS_TOKEN)?,
            sep: special(SEP_TOKEN)?,
            mask: special(MASK_TOKEN)?,
            tokens,
            index,
            lowercase,
        })
    }

    /// One token per line.
    pub fn load<R: BufRead>(reader: R) -> Result<Self> {
        let tokens = reader
            .lines()
            .map(|l| l.map(|s| s.trim_end_matches('\r').to_string()))
            .collect::<std::io::Result<Vec<_>>>()?;
        Self::new(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn unk(&self) -> usize {
        self.unk
    }

    pub fn cls(&self) -> usize {
        self.cls
    }

    pub fn sep(&self) -> usize {
        self.sep
    }

    pub fn mask(&self) -> usize {
        self.mask
    }

    pub fn is_special(&self, id: usize) -> bool {
        [self.pad, self.unk, self.cls, self.sep, self.mask].contains(&id)
    }

    /// Greedy longest-match pieces of one word. Matching stops at the
    /// first position no piece covers; the unmatched rest becomes `[UNK]`.
    pub fn tokenize_word(&self, word: &str) -> Vec<usize> {
        if word.is_empty() {
            return Vec::new();
        }
        if self.index.contains_key(word) {
            return vec![self.index[word]];
        }
        let folded;
        let word = if self.lowercase {
            folded = word.to_lowercase();
            folded.as_str()
        } else {
            word
        };
        if word.chars().count() > MAX_WORD_CHARS {
            return vec![self.unk];
        }
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        let mut candidate = String::new();
        while start + 1 < bounds.len() {
            let mut found = None;
            for end in (start + 1..bounds.len()).rev() {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION);
                }
                candidate.push_str(&word[bounds[start]..bounds[end]]);
                if let Some(&id) = self.index.get(&candidate) {
                    found = Some((id, end));
                    break;
                }
            }
            match found {
                Some((id, end)) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    pieces.push(self.unk);
                    break;
                }
            }
        }
        pieces
    }

    /// Whitespace-splits `text` and tokenizes every word.
    pub fn tokenize(&self, text: &str) -> Tokenized {
        let words: Vec<&str> = text.split_whitespace().collect();
        self.tokenize_words(&words)
    }

    pub fn tokenize_words<S: AsRef<str>>(&self, words: &[S]) -> Tokenized {
        let mut out = Tokenized::default();
        for (w, word) in words.iter().enumerate() {
            let pieces = self.tokenize_word(word.as_ref());
            out.first_piece.push(out.ids.len());
            out.word_of.extend(std::iter::repeat_n(w, pieces.len()));
            out.ids.extend(pieces);
        }
        out
    }

    /// Joins pieces back into text: continuation pieces attach to their
    /// predecessor, everything else is space-separated.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            let tok = self.token(id).unwrap_or(UNK_TOKEN);
            match tok.strip_prefix(CONTINUATION) {
                Some(rest) if i > 0 => out.push_str(rest),
                _ => {
                    if i > 0 {
                        out.push(' ');
                    }
                    out.push_str(tok);
                }
            }
        }
        out
    }
}

/// Subword ids plus their alignment to the source words.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Tokenized {
    pub ids: Vec<usize>,
    /// Source word of every piece.
    pub word_of: Vec<usize>,
    /// Index into `ids` of each word's first piece. Words that produced no
    /// pieces point at the next word's first piece.
    pub first_piece: Vec<usize>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn num_words(&self) -> usize {
        self.first_piece.len()
    }

    /// Pieces of word `w`.
    pub fn pieces_of(&self, w: usize) -> Range<usize> {
        let start = self.first_piece[w];
        let end = self.first_piece.get(w + 1).copied().unwrap_or(self.ids.len());
        start..end
    }
}

/// Encoder input: `[CLS] text [SEP] image labels [SEP]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MsbInput {
    pub ids: Vec<usize>,
    /// 0 up to and including the first `[SEP]`, 1 after it.
    pub segments: Vec<usize>,
    /// False only on padding.
    pub mask: Vec<bool>,
    /// Position of each kept word's first piece.
    pub word_positions: Vec<usize>,
    /// Text pieces dropped to fit `max_positions`.
    pub truncated: usize,
}

impl MsbInput {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Appends `n` masked padding positions.
    pub fn pad_to(&mut self, len: usize, pad_id: usize) {
        while self.ids.len() < len {
            self.ids.push(pad_id);
            self.segments.push(1);
            self.mask.push(false);
        }
    }
}

/// Pieces of the image labels, joined in order. Multi-word labels such as
/// `street_sign` are split on underscores.
pub fn image_pieces(vocab: &SubwordVocab, image_words: &[ImageWord]) -> Vec<usize> {
    let words: Vec<&str> = image_words
        .iter()
        .flat_map(|w| w.label.split(['_', ' ']).filter(|s| !s.is_empty()))
        .collect();
    vocab.tokenize_words(&words).ids
}

/// Builds the two-segment input. Text is truncated from the end when the
/// whole does not fit; image labels never are.
pub fn assemble_input(
    vocab: &SubwordVocab,
    text: &Tokenized,
    image_words: &[ImageWord],
    max_positions: usize,
) -> Result<MsbInput> {
    let image = image_pieces(vocab, image_words);
    let budget = max_positions.checked_sub(3 + image.len()).ok_or_else(|| {
        Error::contract(format!(
            "{} image pieces leave no room within {max_positions} positions",
            image.len()
        ))
    })?;
    let kept = text.len().min(budget);
    let truncated = text.len() - kept;
    if truncated > 0 {
        log::warn!("input truncated: dropped {truncated} of {} text pieces", text.len());
    }
    let mut ids = Vec::with_capacity(kept + image.len() + 3);
    ids.push(vocab.cls());
    ids.extend_from_slice(&text.ids[..kept]);
    ids.push(vocab.sep());
    let second = ids.len();
    ids.extend_from_slice(&image);
    ids.push(vocab.sep());
    let segments = (0..ids.len()).map(|i| usize::from(i >= second)).collect();
    let word_positions = text.first_piece.iter().filter(|&&p| p < kept).map(|&p| p + 1).collect();
    Ok(MsbInput {
        mask: vec![true; ids.len()],
        ids,
        segments,
        word_positions,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab(extra: &[&str]) -> SubwordVocab {
        let mut t: Vec<String> = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        t.extend(extra.iter().map(|s| s.to_string()));
        SubwordVocab::new(t).unwrap()
    }

    #[test]
    fn longest_match_wins() {
        let v = vocab(&["un", "unaff", "##aff", "##able", "##a", "##ble"]);
        let ids = v.tokenize_word("unaffable");
        let toks: Vec<&str> = ids.iter().map(|&i| v.token(i).unwrap()).collect();
        assert_eq!(toks, ["unaff", "##able"]);
        assert_eq!(v.detokenize(&ids), "unaffable");
    }

    #[test]
    fn unmatched_rest_is_unknown() {
        let v = vocab(&["ab", "##c"]);
        assert_eq!(
            v.tokenize_word("abcz"),
            vec![v.id("ab").unwrap(), v.id("##c").unwrap(), v.unk()]
        );
        assert_eq!(v.tokenize_word("z"), vec![v.unk()]);
        assert_eq!(v.tokenize_word(&"a".repeat(101)), vec![v.unk()]);
    }

    #[test]
    fn uncased_matching_and_specials() {
        let v = vocab(&["paris"]);
        assert_eq!(v.tokenize_word("PARIS"), vec![v.id("paris").unwrap()]);
        assert_eq!(v.tokenize_word("[SEP]"), vec![v.sep()]);
        assert!(v.tokenize("").is_empty());
    }

    #[test]
    fn alignment_tracks_first_pieces() {
        let v = vocab(&["a", "##b", "c"]);
        let t = v.tokenize("ab c ab");
        assert_eq!(t.ids.len(), 5);
        assert_eq!(t.first_piece, vec![0, 2, 3]);
        assert_eq!(t.word_of, vec![0, 0, 1, 2, 2]);
        assert_eq!(t.pieces_of(2), 3..5);
    }

    #[test]
    fn missing_specials_or_duplicates_are_rejected() {
        assert!(SubwordVocab::new(vec![]).is_err());
        assert!(SubwordVocab::new(vec!["[PAD]".into(), "[UNK]".into()]).is_err());
        let mut t: Vec<String> = vocab(&[]).tokens().to_vec();
        t.push("[PAD]".into());
        assert!(SubwordVocab::new(t).is_err());
    }

    #[test]
    fn assembly_layout_and_truncation() {
        let v = vocab(&["a", "b", "dog", "street", "sign"]);
        let text = v.tokenize("a b a");
        let img = [ImageWord::new("street_sign", 0.5), ImageWord::new("dog", 0.2)];
        let x = assemble_input(&v, &text, &img, 32).unwrap();
        assert_eq!(v.detokenize(&x.ids), "[CLS] a b a [SEP] street sign dog [SEP]");
        assert_eq!(x.segments, vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
        assert_eq!(x.word_positions, vec![1, 2, 3]);

        let short = assemble_input(&v, &text, &img, 8).unwrap();
        assert_eq!(short.truncated, 1);
        assert_eq!(short.word_positions, vec![1, 2]);
        assert!(assemble_input(&v, &text, &img, 5).is_err());

        let none = assemble_input(&v, &text, &[], 32).unwrap();
        assert_eq!(v.detokenize(&none.ids), "[CLS] a b a [SEP] [SEP]");
    }
}
