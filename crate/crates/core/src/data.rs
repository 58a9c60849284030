//! File loading with the path attached to every error, plus the bundled
//! synthetic corpus.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::msb::SubwordVocab;
use crate::seqdata::{parse_conll, parse_tmn, EmbeddingTable, Example, ParseMode, Sidecar};

/// Directory holding the bundled 20-sentence corpus, sidecar, 50-word
/// embedding files and 1000-entry subword vocabulary.
pub fn synthetic_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("synthetic")
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::in_file(path, e.into()))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::in_file(path, e.into()))
}

pub fn load_sidecar(path: &Path) -> Result<Sidecar> {
    Sidecar::parse(open(path)?).map_err(|e| Error::in_file(path, e))
}

/// TMN corpus; image words come from `sidecar` when given.
pub fn load_tmn(path: &Path, sidecar: Option<&Sidecar>, mode: ParseMode) -> Result<Vec<Example>> {
    parse_tmn(open(path)?, sidecar, mode).map_err(|e| Error::in_file(path, e))
}

/// CoNLL column corpus (no image words).
pub fn load_conll(path: &Path, mode: ParseMode) -> Result<Vec<Example>> {
    parse_conll(open(path)?, mode).map_err(|e| Error::in_file(path, e))
}

pub fn load_embeddings(path: &Path, dim: usize, oov_seed: u64) -> Result<EmbeddingTable> {
    EmbeddingTable::load(open(path)?, dim, oov_seed).map_err(|e| Error::in_file(path, e))
}

/// One subword piece per line.
pub fn load_subword_vocab(path: &Path) -> Result<SubwordVocab> {
    SubwordVocab::load(open(path)?).map_err(|e| Error::in_file(path, e))
}

/// The bundled 1000-entry subword vocabulary.
pub fn synthetic_vocab() -> Result<SubwordVocab> {
    load_subword_vocab(&synthetic_dir().join("vocab.txt"))
}

/// The bundled corpus with its image words attached.
pub fn synthetic_corpus() -> Result<Vec<Example>> {
    let dir = synthetic_dir();
    let sidecar = load_sidecar(&dir.join("sidecar.tsv"))?;
    load_tmn(&dir.join("train.txt"), Some(&sidecar), ParseMode::Strict)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_corpus_has_twenty_tagged_sentences_with_images() {
        let corpus = synthetic_corpus().unwrap();
        assert_eq!(corpus.len(), 20);
        assert!(corpus
            .iter()
            .all(|e| e.tags.len() == e.len() && !e.image_words.is_empty()));
        let dir = synthetic_dir();
        assert_eq!(load_embeddings(&dir.join("glove.txt"), 200, 0).unwrap().len(), 50);
        assert_eq!(load_embeddings(&dir.join("fasttext.txt"), 300, 0).unwrap().len(), 50);
    }

    #[test]
    fn missing_file_names_the_path() {
        let err = load_sidecar(Path::new("/nonexistent/side.tsv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/side.tsv"));
        assert!(matches!(err.root(), Error::Io(_)));
    }
}
