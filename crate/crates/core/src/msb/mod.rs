//! MSB: a BERT-style encoder reading `[CLS] text [SEP] image labels [SEP]`
//! with a per-word tag head and an optional CRF.
//!
//! Words are split into subword pieces by greedy longest match; each word's
//! tag is read from its first piece, and image-segment pieces are never
//! tagged.

mod encoder;
mod tokenizer;

pub use encoder::{
    scaled_dot_product_attention, Attended, Encoder, EncoderLayer, EncoderOutput, LayerNorm, MultiHeadAttention,
    ATTENTION_MASK_VALUE, EMBEDDING_INIT_RANGE, LAYER_NORM_EPS,
};
pub use tokenizer::{
    assemble_input, image_pieces, MsbInput, SubwordVocab, Tokenized, CLS_TOKEN, CONTINUATION, MASK_TOKEN,
    MAX_WORD_CHARS, PAD_TOKEN, SEP_TOKEN, UNK_TOKEN,
};

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::config::KvConfig;
use crate::crf::Crf;
use crate::error::{Error, Result};
use crate::layers::Linear;
use crate::model::{ModelKind, SequenceTagger};
use crate::seqdata::{Example, ImageWord, Tag, NUM_TAGS};
use crate::tensor::Tensor;

/// Size of the released uncased subword vocabulary.
pub const RELEASED_VOCAB_SIZE: usize = 30522;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MsbSize {
    Tiny,
    Small,
}

impl MsbSize {
    pub fn as_str(self) -> &'static str {
        match self {
            MsbSize::Tiny => "tiny",
            MsbSize::Small => "small",
        }
    }
}

impl fmt::Display for MsbSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsbSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiny" => Ok(MsbSize::Tiny),
            "small" => Ok(MsbSize::Small),
            _ => Err(Error::Config(format!("unknown MSB size {s:?}; expected tiny or small"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MsbConfig {
    /// Label only; the dimensions below define the network.
    pub size: MsbSize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
    /// Feed-forward inner width.
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub use_crf: bool,
    /// Forbid `O → I-X` style transitions when decoding with the CRF.
    pub mask_illegal: bool,
    pub num_tags: usize,
}

impl MsbConfig {
    /// 128 hidden, 2 heads, 2 layers.
    pub fn tiny() -> Self {
        Self::sized(MsbSize::Tiny, 128, 2, 2)
    }

    /// 512 hidden, 8 heads, 4 layers.
    pub fn small() -> Self {
        Self::sized(MsbSize::Small, 512, 8, 4)
    }

    pub fn for_size(size: MsbSize) -> Self {
        match size {
            MsbSize::Tiny => Self::tiny(),
            MsbSize::Small => Self::small(),
        }
    }

    fn sized(size: MsbSize, hidden: usize, heads: usize, layers: usize) -> Self {
        MsbConfig {
            size,
            hidden,
            heads,
            layers,
            intermediate: 4 * hidden,
            vocab_size: RELEASED_VOCAB_SIZE,
            max_positions: 512,
            use_crf: false,
            mask_illegal: false,
            num_tags: NUM_TAGS,
        }
    }

    /// Two layers of width 16 with two heads, for gradient checks.
    pub fn miniature(vocab_size: usize) -> Self {
        MsbConfig {
            intermediate: 32,
            vocab_size,
            max_positions: 24,
            ..Self::sized(MsbSize::Tiny, 16, 2, 2)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("layers", self.layers),
            ("intermediate", self.intermediate),
            ("vocab_size", self.vocab_size),
            ("num_tags", self.num_tags),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("MSB {name} must be positive")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.max_positions < 4 {
            return Err(Error::Config(format!(
                "max_positions {} leaves no room for text",
                self.max_positions
            )));
        }
        Ok(())
    }

    /// `(path, shape)` of every parameter, in creation order, computed
    /// without allocating.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden;
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("embeddings/token".into(), vec![self.vocab_size, h]),
            ("embeddings/position".into(), vec![self.max_positions, h]),
            ("embeddings/segment".into(), vec![2, h]),
            ("embeddings/norm/gamma".into(), vec![1, h]),
            ("embeddings/norm/beta".into(), vec![1, h]),
        ];
        let linear = |out: &mut Vec<(String, Vec<usize>)>, p: String, i: usize, o: usize| {
            out.push((format!("{p}/w"), vec![i, o]));
            out.push((format!("{p}/b"), vec![1, o]));
        };
        let norm = |out: &mut Vec<(String, Vec<usize>)>, p: String| {
            out.push((format!("{p}/gamma"), vec![1, h]));
            out.push((format!("{p}/beta"), vec![1, h]));
        };
        for l in 0..self.layers {
            for part in ["query", "key", "value", "output"] {
                linear(&mut out, format!("layer{l}/attention/{part}"), h, h);
            }
            norm(&mut out, format!("layer{l}/attention/norm"));
            linear(&mut out, format!("layer{l}/ffn/inner"), h, self.intermediate);
            linear(&mut out, format!("layer{l}/ffn/outer"), self.intermediate, h);
            norm(&mut out, format!("layer{l}/ffn/norm"));
        }
        linear(&mut out, "head".into(), h, self.num_tags);
        if self.use_crf {
            let k = self.num_tags;
            out.push(("crf/transitions".into(), vec![k, k]));
            out.push(("crf/start".into(), vec![1, k]));
            out.push(("crf/stop".into(), vec![1, k]));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("size", self.size);
        kv.set("hidden", self.hidden);
        kv.set("heads", self.heads);
        kv.set("layers", self.layers);
        kv.set("intermediate", self.intermediate);
        kv.set("vocab_size", self.vocab_size);
        kv.set("max_positions", self.max_positions);
        kv.set("use_crf", self.use_crf);
        kv.set("mask_illegal", self.mask_illegal);
        kv.set("num_tags", self.num_tags);
        kv
    }

    /// Absent keys take the defaults of the named size (tiny if unnamed).
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let size: MsbSize = kv.parsed_or("size", MsbSize::Tiny)?;
        let d = Self::for_size(size);
        Ok(MsbConfig {
            size,
            hidden: kv.parsed_or("hidden", d.hidden)?,
            heads: kv.parsed_or("heads", d.heads)?,
            layers: kv.parsed_or("layers", d.layers)?,
            intermediate: kv.parsed_or("intermediate", d.intermediate)?,
            vocab_size: kv.parsed_or("vocab_size", d.vocab_size)?,
            max_positions: kv.parsed_or("max_positions", d.max_positions)?,
            use_crf: kv.parsed_or("use_crf", d.use_crf)?,
            mask_illegal: kv.parsed_or("mask_illegal", d.mask_illegal)?,
            num_tags: kv.parsed_or("num_tags", d.num_tags)?,
        })
    }
}

pub struct MsbOutput {
    /// Encoder states for every position.
    pub hidden: Var,
    /// Tag scores `[words × num_tags]`, one row per word's first piece.
    pub emissions: Var,
    /// Per layer, per head attention weights.
    pub attention: Vec<Vec<Var>>,
}

pub struct MsbModel {
    config: MsbConfig,
    vocab: SubwordVocab,
    store: ParamStore,
    encoder: Encoder,
    head: Linear,
    crf: Option<Crf>,
}

impl MsbModel {
    pub fn new(config: MsbConfig, vocab: SubwordVocab, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab.len() != config.vocab_size {
            return Err(Error::Config(format!(
                "subword vocabulary has {} entries, config expects {}",
                vocab.len(),
                config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::new(
            &mut store,
            config.vocab_size,
            config.max_positions,
            config.hidden,
            config.heads,
            config.layers,
            config.intermediate,
            &mut rng,
        )?;
        let head = Linear::new(&mut store, "head", config.hidden, config.num_tags, &mut rng)?;
        let crf = if config.use_crf {
            Some(Crf::new(&mut store, "crf", config.num_tags)?)
        } else {
            None
        };
        Ok(MsbModel {
            config,
            vocab,
            store,
            encoder,
            head,
            crf,
        })
    }

    pub fn msb_config(&self) -> &MsbConfig {
        &self.config
    }

    pub fn vocab(&self) -> &SubwordVocab {
        &self.vocab
    }

    pub fn crf(&self) -> Option<&Crf> {
        self.crf.as_ref()
    }

    /// Splits the words into consecutive windows whose pieces fit next to
    /// the image labels. A single over-long word gets a window of its own
    /// and is truncated.
    pub fn windows(&self, text: &Tokenized, image_words: &[ImageWord]) -> Result<Vec<Range<usize>>> {
        let image = image_pieces(&self.vocab, image_words).len();
        let budget = self
            .config
            .max_positions
            .checked_sub(3 + image)
            .filter(|&b| b > 0)
            .ok_or_else(|| {
                Error::contract(format!(
                    "{image} image pieces leave no room within {} positions",
                    self.config.max_positions
                ))
            })?;
        let mut out = Vec::new();
        let mut start = 0;
        let mut used = 0;
        for w in 0..text.num_words() {
            let n = text.pieces_of(w).len();
            if w > start && used + n > budget {
                out.push(start..w);
                start = w;
                used = 0;
            }
            used += n;
        }
        if start < text.num_words() {
            out.push(start..text.num_words());
        }
        Ok(out)
    }

    /// Input for words `range` of `text`.
    pub fn window_input(&self, text: &Tokenized, range: Range<usize>, image_words: &[ImageWord]) -> Result<MsbInput> {
        let pieces = text.first_piece[range.start]..text.pieces_of(range.end - 1).end;
        let sub = Tokenized {
            ids: text.ids[pieces.clone()].to_vec(),
            word_of: text.word_of[pieces.clone()].iter().map(|w| w - range.start).collect(),
            first_piece: text.first_piece[range].iter().map(|p| p - pieces.start).collect(),
        };
        assemble_input(&self.vocab, &sub, image_words, self.config.max_positions)
    }

    /// Encodes `input` and scores each word in `input.word_positions`.
    pub fn forward<'a>(&'a self, g: &mut Graph<'a>, input: &MsbInput) -> Result<MsbOutput> {
        let enc = self.encoder.forward(g, &self.store, input)?;
        let words = g.gather_rows(enc.hidden, &input.word_positions)?;
        let emissions = self.head.forward(g, &self.store, words)?;
        Ok(MsbOutput {
            hidden: enc.hidden,
            emissions,
            attention: enc.attention,
        })
    }

    /// Loss of one window against `tags`: CRF negative log-likelihood, or
    /// summed per-word cross-entropy without a CRF.
    pub fn window_loss<'a>(&'a self, g: &mut Graph<'a>, input: &MsbInput, tags: &[usize]) -> Result<Var> {
        if tags.len() != input.word_positions.len() {
            return Err(Error::contract(format!(
                "{} tags for {} tagged positions",
                tags.len(),
                input.word_positions.len()
            )));
        }
        let out = self.forward(g, input)?;
        match &self.crf {
            Some(crf) => crf.loss(g, &self.store, out.emissions, tags),
            None => {
                let mean = g.cross_entropy(out.emissions, tags)?;
                Ok(g.scale(mean, tags.len() as f64))
            }
        }
    }

    /// Tag indices from emissions `[words × num_tags]`.
    pub fn decode(&self, emissions: &Tensor) -> Result<Vec<usize>> {
        match &self.crf {
            Some(crf) => crf.decode(&self.store, emissions, self.config.mask_illegal),
            None => {
                let (n, k) = emissions.dims2()?;
                Ok((0..n)
                    .map(|r| {
                        let row = emissions.row_slice(r);
                        (0..k).fold(0, |best, j| if row[j] > row[best] { j } else { best })
                    })
                    .collect())
            }
        }
    }

    fn tag_windows(&self, example: &Example) -> Result<(Tokenized, Vec<Range<usize>>)> {
        let text = self.vocab.tokenize_words(&example.tokens);
        let windows = self.windows(&text, &example.image_words)?;
        Ok((text, windows))
    }
}

impl SequenceTagger for MsbModel {
    fn kind(&self) -> ModelKind {
        match self.config.size {
            MsbSize::Tiny => ModelKind::MsbTiny,
            MsbSize::Small => ModelKind::MsbSmall,
        }
    }

    fn config(&self) -> KvConfig {
        self.config.to_kv()
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Summed over windows. The encoder has no stochastic layers, so `rng`
    /// is unused.
    fn loss<'a>(&'a self, g: &mut Graph<'a>, example: &Example, _rng: &mut ChaCha8Rng) -> Result<Var> {
        let tags: Vec<usize> = example.tags.iter().map(|t| t.index()).collect();
        if tags.len() != example.len() {
            return Err(Error::contract(format!("example {} is not fully tagged", example.id)));
        }
        let (text, windows) = self.tag_windows(example)?;
        let mut total: Option<Var> = None;
        for range in windows {
            let input = self.window_input(&text, range.clone(), &example.image_words)?;
            let kept = input.word_positions.len();
            let loss = self.window_loss(g, &input, &tags[range.start..range.start + kept])?;
            total = Some(match total {
                None => loss,
                Some(t) => g.add(t, loss)?,
            });
        }
        total.ok_or_else(|| Error::contract(format!("example {} is empty", example.id)))
    }

    /// Words cut off by truncation are tagged `O`.
    fn predict(&self, example: &Example) -> Result<Vec<Tag>> {
        let (text, windows) = self.tag_windows(example)?;
        let mut tags = Vec::with_capacity(example.len());
        for range in windows {
            let input = self.window_input(&text, range.clone(), &example.image_words)?;
            let mut g = Graph::inference();
            let out = self.forward(&mut g, &input)?;
            let path = self.decode(g.value(out.emissions))?;
            tags.extend(
                path.into_iter()
                    .map(|i| Tag::from_index(i).expect("head emits tag indices")),
            );
            tags.resize(tags.len() + range.len() - input.word_positions.len(), Tag::O);
        }
        Ok(tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_sizes() {
        let t = MsbConfig::tiny();
        assert_eq!((t.hidden, t.heads, t.layers, t.vocab_size), (128, 2, 2, 30522));
        let s = MsbConfig::small();
        assert_eq!((s.hidden, s.heads, s.layers, s.intermediate), (512, 8, 4, 2048));
        assert!(s.num_parameters() > t.num_parameters());
    }

    #[test]
    fn indivisible_heads_are_rejected() {
        let mut c = MsbConfig::tiny();
        c.heads = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn config_round_trips_through_kv() {
        let mut c = MsbConfig::small();
        c.use_crf = true;
        c.vocab_size = 1000;
        let back = MsbConfig::from_kv(&KvConfig::parse(&c.to_kv().to_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
