//! Fixtures shared by the benchmarks in `benches/`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mner_core::config::KvConfig;
use mner_core::crf::CrfParams;
use mner_core::data::synthetic_corpus;
use mner_core::model::ModelKind;
use mner_core::pipeline::{build, Resources, Tagger};
use mner_core::seqdata::{Example, NUM_TAGS};
use mner_core::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
    Tensor::uniform(vec![rows, cols], -1.0, 1.0, &mut rng(seed))
}

/// Random nine-tag CRF parameters and `len` emission rows.
pub fn crf_problem(len: usize, seed: u64) -> (Tensor, CrfParams) {
    let mut r = rng(seed);
    let params = CrfParams {
        transitions: Tensor::uniform(vec![NUM_TAGS, NUM_TAGS], -1.0, 1.0, &mut r),
        start: Tensor::uniform(vec![1, NUM_TAGS], -1.0, 1.0, &mut r),
        stop: Tensor::uniform(vec![1, NUM_TAGS], -1.0, 1.0, &mut r),
    };
    (Tensor::uniform(vec![len, NUM_TAGS], -3.0, 3.0, &mut r), params)
}

/// A freshly initialised model over the bundled corpus, and that corpus.
pub fn synthetic_model(kind: ModelKind) -> (Tagger, Vec<Example>) {
    let corpus = synthetic_corpus().expect("bundled corpus");
    let model = build(kind, &KvConfig::new(), &Resources::synthetic(), &corpus, 0).expect("model builds");
    (model, corpus)
}
