//! CoNLL-style corpora.
//!
//! Both formats are token-per-line with the tag in the last whitespace
//! separated column and a blank line between sentences. `-DOCSTART-` lines
//! are skipped.
//!
//! The TMN (Twitter multimodal) format additionally opens each sentence with
//! an image id line, `IMGID:<id>`; the id keys the image-descriptor sidecar.

use std::io::BufRead;

use log::warn;

use super::sidecar::{ImageWord, Sidecar, MAX_IMAGE_WORDS};
use super::tags::{Tag, TagScheme};
use crate::error::{Error, Result};

pub const IMAGE_ID_PREFIX: &str = "IMGID:";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// Illegal BIO2 transitions and missing sidecar entries are errors.
    #[default]
    Strict,
    /// Illegal `I-X` is rewritten to `B-X`; missing sidecar entries become
    /// empty image words. Each repair is logged.
    Lenient,
}

/// One post: tokens, their BIO2 tags and the image's top-k labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
    pub image_words: Vec<ImageWord>,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, tags: Vec<Tag>) -> Self {
        Example {
            id: id.into(),
            tokens,
            tags,
            image_words: Vec::new(),
        }
    }

    /// An untagged example (all `O`), as used for inference.
    pub fn untagged(id: impl Into<String>, tokens: Vec<String>) -> Self {
        let n = tokens.len();
        Self::new(id, tokens, vec![Tag::O; n])
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::contract(format!("example `{}` has no tokens", self.id)));
        }
        if self.tokens.len() != self.tags.len() {
            return Err(Error::contract(format!(
                "example `{}` has {} tokens but {} tags",
                self.id,
                self.tokens.len(),
                self.tags.len()
            )));
        }
        TagScheme::check_sequence(&self.tags)?;
        if self.image_words.len() > MAX_IMAGE_WORDS {
            return Err(Error::contract(format!(
                "example `{}` has {} image words",
                self.id,
                self.image_words.len()
            )));
        }
        let mut total = 0.0;
        for w in &self.image_words {
            if !(0.0..=1.0).contains(&w.probability) {
                return Err(Error::contract(format!(
                    "image probability {} outside [0, 1]",
                    w.probability
                )));
            }
            total += w.probability;
        }
        if total > 1.0 + 1e-9 {
            return Err(Error::contract(format!("image probabilities sum to {total} > 1")));
        }
        Ok(())
    }
}

struct Pending {
    id: Option<String>,
    tokens: Vec<String>,
    tags: Vec<Tag>,
    first_line: usize,
}

fn read_sentences<R: BufRead>(reader: R, mode: ParseMode, mut emit: impl FnMut(Pending) -> Result<()>) -> Result<()> {
    let mut cur = Pending {
        id: None,
        tokens: Vec::new(),
        tags: Vec::new(),
        first_line: 1,
    };
    let mut flush = |cur: &mut Pending, next_line: usize| -> Result<()> {
        if !cur.tokens.is_empty() {
            let mut done = std::mem::replace(
                cur,
                Pending {
                    id: None,
                    tokens: Vec::new(),
                    tags: Vec::new(),
                    first_line: next_line,
                },
            );
            if let Err(e) = TagScheme::check_sequence(&done.tags) {
                match mode {
                    ParseMode::Strict => {
                        return Err(Error::Validation {
                            line: done.first_line,
                            msg: e.to_string(),
                        })
                    }
                    ParseMode::Lenient => {
                        let fixed = TagScheme::repair(&mut done.tags);
                        warn!(
                            "sentence at line {}: repaired I- tags at positions {fixed:?}",
                            done.first_line
                        );
                    }
                }
            }
            emit(done)?;
        } else {
            cur.first_line = next_line;
        }
        Ok(())
    };

    let mut last_line = 0;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        last_line = line_no;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            flush(&mut cur, line_no + 1)?;
            continue;
        }
        if text.starts_with("-DOCSTART-") {
            continue;
        }
        if let Some(id) = text.strip_prefix(IMAGE_ID_PREFIX) {
            flush(&mut cur, line_no)?;
            cur.id = Some(id.trim().to_string());
            cur.first_line = line_no;
            continue;
        }
        let cols: Vec<&str> = text.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `token ... tag`, got `{text}`"),
            });
        }
        let label = cols[cols.len() - 1];
        let tag = Tag::parse(label).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unknown tag `{label}`"),
        })?;
        if cur.tokens.is_empty() && cur.id.is_none() {
            cur.first_line = line_no;
        }
        cur.tokens.push(cols[0].to_string());
        cur.tags.push(tag);
    }
    flush(&mut cur, last_line + 1)
}

/// Parses a CoNLL column file. Examples are numbered `sent-1`, `sent-2`, …
pub fn parse_conll<R: BufRead>(reader: R, mode: ParseMode) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    read_sentences(reader, mode, |p| {
        let id = p.id.unwrap_or_else(|| format!("sent-{}", out.len() + 1));
        out.push(Example::new(id, p.tokens, p.tags));
        Ok(())
    })?;
    Ok(out)
}

/// Parses a TMN file and attaches image words from `sidecar`. Without a
/// sidecar every sentence gets no image words.
pub fn parse_tmn<R: BufRead>(reader: R, sidecar: Option<&Sidecar>, mode: ParseMode) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    read_sentences(reader, mode, |p| {
        let id = match p.id {
            Some(id) => id,
            None if mode == ParseMode::Strict => {
                return Err(Error::Parse {
                    line: p.first_line,
                    msg: format!("sentence without an `{IMAGE_ID_PREFIX}` line"),
                })
            }
            None => format!("sent-{}", out.len() + 1),
        };
        let Some(sidecar) = sidecar else {
            out.push(Example {
                id,
                tokens: p.tokens,
                tags: p.tags,
                image_words: Vec::new(),
            });
            return Ok(());
        };
        let image_words = match sidecar.get(&id) {
            Some(words) => words.to_vec(),
            None if mode == ParseMode::Strict => {
                return Err(Error::Validation {
                    line: p.first_line,
                    msg: format!("image id `{id}` missing from sidecar"),
                })
            }
            None => {
                warn!("image id `{id}` missing from sidecar; using no image words");
                Vec::new()
            }
        };
        out.push(Example {
            id,
            tokens: p.tokens,
            tags: p.tags,
            image_words,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn serialize_conll(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        for (tok, tag) in ex.tokens.iter().zip(&ex.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn serialize_tmn(examples: &[Example]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(IMAGE_ID_PREFIX);
        out.push_str(&ex.id);
        out.push('\n');
        for (tok, tag) in ex.tokens.iter().zip(&ex.tags) {
            out.push_str(tok);
            out.push('\t');
            out.push_str(&tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// Sidecar holding the image words of every example, keyed by example id.
pub fn sidecar_of(examples: &[Example]) -> Sidecar {
    let mut s = Sidecar::new();
    for ex in examples {
        s.insert(ex.id.clone(), ex.image_words.clone());
    }
    s
}
