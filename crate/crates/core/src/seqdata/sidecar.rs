//! Image-descriptor sidecar: the top-k classifier labels of each post's image.
//!
//! One record per line, tab separated:
//!
//! ```text
//! <image-id>\t<label-1>\t<prob-1>\t<label-2>\t<prob-2> ... (at most 5 pairs)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};

pub const MAX_IMAGE_WORDS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ImageWord {
    pub label: String,
    pub probability: f64,
}

impl ImageWord {
    pub fn new(label: impl Into<String>, probability: f64) -> Self {
        ImageWord {
            label: label.into(),
            probability,
        }
    }
}

/// Indices of the `k` largest probabilities, largest first. Ties go to the
/// lower index.
pub fn top_k_indices(probs: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    let k = k.min(probs.len());
    if k == 0 {
        return Vec::new();
    }
    let by_prob = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    idx.select_nth_unstable_by(k - 1, by_prob);
    idx.truncate(k);
    idx.sort_by(by_prob);
    idx
}

/// The top-`k` entries of a classifier's probability vector as image words.
pub fn image_words_from_probabilities(probs: &[f64], class_names: &[String], k: usize) -> Result<Vec<ImageWord>> {
    if probs.len() != class_names.len() {
        return Err(Error::shape("image_words", &[probs.len()], &[class_names.len()]));
    }
    Ok(top_k_indices(probs, k)
        .into_iter()
        .map(|i| ImageWord::new(class_names[i].clone(), probs[i]))
        .collect())
}

pub fn sort_image_words(words: &mut [ImageWord]) {
    words.sort_by(|a, b| b.probability.total_cmp(&a.probability));
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sidecar {
    entries: HashMap<String, Vec<ImageWord>>,
}

impl Sidecar {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, mut words: Vec<ImageWord>) {
        sort_image_words(&mut words);
        self.entries.insert(id.into(), words);
    }

    pub fn get(&self, id: &str) -> Option<&[ImageWord]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Sidecar> {
        let mut sidecar = Sidecar::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            let id = cols[0].trim();
            if id.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "empty image id".into(),
                });
            }
            let pairs = &cols[1..];
            if !pairs.len().is_multiple_of(2) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "expected label/probability pairs".into(),
                });
            }
            if pairs.len() / 2 > MAX_IMAGE_WORDS {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("{} pairs, at most {MAX_IMAGE_WORDS} allowed", pairs.len() / 2),
                });
            }
            let mut words = Vec::with_capacity(pairs.len() / 2);
            for pair in pairs.chunks(2) {
                let p: f64 = pair[1].trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad probability `{}`", pair[1]),
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Validation {
                        line: line_no,
                        msg: format!("probability {p} outside [0, 1]"),
                    });
                }
                words.push(ImageWord::new(pair[0].trim(), p));
            }
            let total: f64 = words.iter().map(|w| w.probability).sum();
            if total > 1.0 + 1e-9 {
                return Err(Error::Validation {
                    line: line_no,
                    msg: format!("probabilities sum to {total} > 1"),
                });
            }
            if sidecar.entries.contains_key(id) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate image id `{id}`"),
                });
            }
            sidecar.insert(id, words);
        }
        Ok(sidecar)
    }

    /// Serialises records sorted by image id.
    pub fn to_tsv(&self) -> String {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        let mut out = String::new();
        for id in ids {
            out.push_str(id);
            for w in &self.entries[id] {
                out.push('\t');
                out.push_str(&w.label);
                out.push('\t');
                out.push_str(&w.probability.to_string());
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_orders_descending() {
        let text = "# comment\nimg1\tjersey\t0.20\tballplayer\t0.61\tscoreboard\t0.05\nimg2\n";
        let s = Sidecar::parse(text.as_bytes()).unwrap();
        let w = s.get("img1").unwrap();
        assert_eq!(w[0].label, "ballplayer");
        assert_eq!(w[1].label, "jersey");
        assert_eq!(w[2].label, "scoreboard");
        assert!(s.get("img2").unwrap().is_empty());
        assert_eq!(Sidecar::parse(s.to_tsv().as_bytes()).unwrap(), s);
    }

    #[test]
    fn rejects_malformed_rows() {
        assert!(matches!(
            Sidecar::parse("a\tb\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            Sidecar::parse("a\tb\tx\n".as_bytes()),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            Sidecar::parse("\n\na\tb\t1.5\n".as_bytes()),
            Err(Error::Validation { line: 3, .. })
        ));
        assert!(matches!(
            Sidecar::parse("a\tb\t0.7\tc\t0.6\n".as_bytes()),
            Err(Error::Validation { .. })
        ));
        let six = "a".to_string() + &"\tl\t0.1".repeat(6);
        assert!(Sidecar::parse(six.as_bytes()).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k_indices(&[0.1, 0.3, 0.3, 0.2], 2), vec![1, 2]);
        assert_eq!(top_k_indices(&[0.5], 5), vec![0]);
        assert!(top_k_indices(&[], 5).is_empty());
    }
}
