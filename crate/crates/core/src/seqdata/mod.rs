//! Data model and readers: tag scheme, corpora, image sidecars, embeddings.

pub mod corpus;
pub mod embeddings;
pub mod sidecar;
pub mod stats;
pub mod tags;
pub mod text;

pub use corpus::{parse_conll, parse_tmn, serialize_conll, serialize_tmn, Example, ParseMode};
pub use embeddings::{oov_vector, EmbeddingTable, OOV_RANGE};
pub use sidecar::{image_words_from_probabilities, top_k_indices, ImageWord, Sidecar, MAX_IMAGE_WORDS};
pub use stats::{tmn_reference, DatasetStats, SplitStats, TMN_PUBLISHED_TOTAL_ENTITIES};
pub use tags::{extract_spans, EntitySpan, EntityType, Tag, TagScheme, NUM_TAGS};
pub use text::{is_url, preprocess_text, strip_urls};
