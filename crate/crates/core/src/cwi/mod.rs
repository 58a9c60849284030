//! The CWI tagger: character CNN, word embeddings and image words fused by
//! a BiLSTM under a CRF, plus the modality-attention variant.
//!
//! Character extractor per word (`L` = `max_chars`, pool `p`):
//!
//! ```text
//!  2  embedding              L      × char_emb
//!  3  conv k0/c0, 4 pool     L/p    × c0
//!  5  conv k1/c1, 6 pool     L/p²   × c1
//!  7  conv k2/c2, 8 pool     L/p³   × c2
//!  9  conv k3/c3             L/p³   × c3      (c3 = c2)
//! 10  concat(8, 9)           2L/p³  × c2
//! 11  conv k4/c4                              (c4 = c1)
//! 12  concat(6, 11)          L/p² + 2L/p³
//! 13  conv k5/c5                              (c5 = c0)
//! 14  concat(4, 13)          L/p + L/p² + 2L/p³
//! 15  targeted dropout, 16 SineRelu, 17 group norm, flatten
//! ```
//!
//! Lengths use ceiling division and convolutions use same padding, so the
//! skip concatenations join along the length axis where channel counts
//! agree. With the default 40 characters that is 40 × 16 = 640 features.

mod vocab;

pub use vocab::{CharVocab, ClassVocab, PAD, UNK};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Padding, ParamId, ParamStore, Var};
use crate::config::KvConfig;
use crate::crf::Crf;
use crate::error::{Error, Result};
use crate::layers::{BiLstm, DropTarget, Embedding, GroupNorm, Linear, Lstm, ModalityAttention, TargetedDropout};
use crate::model::{chunks, ModelKind, SequenceTagger};
use crate::seqdata::{EmbeddingTable, Example, ImageWord, Tag, NUM_TAGS};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub channels: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CwiConfig {
    pub max_words: usize,
    pub max_chars: usize,
    pub char_emb: usize,
    pub conv: [ConvSpec; 6],
    pub pool: usize,
    pub drop_rate: f64,
    pub target_rate: f64,
    pub drop_target: DropTarget,
    pub epsilon: f64,
    pub groups: usize,
    /// When false the dropout / SineRelu / group-norm stack is skipped.
    pub regularizers: bool,
    pub glove_dim: usize,
    pub fasttext_dim: usize,
    pub word_lstm: usize,
    pub image_classes: usize,
    pub image_emb: usize,
    pub image_lstm: usize,
    pub fusion_lstm: usize,
    pub use_attention: bool,
    pub attention_dim: usize,
    pub num_tags: usize,
    /// Forbid BIO2-illegal transitions when decoding.
    pub mask_illegal: bool,
}

impl Default for CwiConfig {
    fn default() -> Self {
        let spec = |kernel, channels| ConvSpec { kernel, channels };
        CwiConfig {
            max_words: 35,
            max_chars: 40,
            char_emb: 40,
            conv: [
                spec(2, 16),
                spec(3, 32),
                spec(4, 64),
                spec(4, 64),
                spec(3, 32),
                spec(2, 16),
            ],
            pool: 2,
            drop_rate: 0.25,
            target_rate: 0.4,
            drop_target: DropTarget::LowestMagnitude,
            epsilon: 0.0025,
            groups: 16,
            regularizers: true,
            glove_dim: 200,
            fasttext_dim: 300,
            word_lstm: 100,
            image_classes: 1000,
            image_emb: 50,
            image_lstm: 50,
            fusion_lstm: 100,
            use_attention: false,
            attention_dim: 200,
            num_tags: NUM_TAGS,
            mask_illegal: false,
        }
    }
}

/// Widths derived from a validated [`CwiConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CwiDims {
    /// Rows of the final character map (layer 14).
    pub char_rows: usize,
    pub char_features: usize,
    pub word_embedding: usize,
    pub word_features: usize,
    pub image_features: usize,
    pub fusion_input: usize,
    pub fusion_output: usize,
}

impl CwiConfig {
    /// A scaled-down configuration (3 words of 2 characters, every width a
    /// handful of units) for finite-difference checks of the whole stack.
    pub fn miniature() -> Self {
        let spec = |kernel, channels| ConvSpec { kernel, channels };
        CwiConfig {
            max_words: 3,
            max_chars: 2,
            char_emb: 3,
            conv: [spec(2, 2), spec(2, 3), spec(2, 4), spec(2, 4), spec(2, 3), spec(2, 2)],
            groups: 2,
            glove_dim: 3,
            fasttext_dim: 2,
            word_lstm: 2,
            image_classes: 8,
            image_emb: 3,
            image_lstm: 2,
            fusion_lstm: 2,
            attention_dim: 4,
            ..CwiConfig::default()
        }
    }

    /// Checks that every layer's dimensions chain and returns the derived
    /// widths.
    pub fn validate(&self) -> Result<CwiDims> {
        let bad = |msg: String| Err(Error::Config(msg));
        let positive = [
            ("max_words", self.max_words),
            ("max_chars", self.max_chars),
            ("char_emb", self.char_emb),
            ("pool", self.pool),
            ("groups", self.groups),
            ("glove_dim", self.glove_dim),
            ("fasttext_dim", self.fasttext_dim),
            ("word_lstm", self.word_lstm),
            ("image_emb", self.image_emb),
            ("image_lstm", self.image_lstm),
            ("fusion_lstm", self.fusion_lstm),
            ("attention_dim", self.attention_dim),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{name} must be positive"));
        }
        if self.conv.iter().any(|c| c.kernel == 0 || c.channels == 0) {
            return bad("convolution kernels and channels must be positive".into());
        }
        if self.num_tags != NUM_TAGS {
            return bad(format!("the CRF needs {NUM_TAGS} tags, got {}", self.num_tags));
        }
        if self.image_classes < 2 {
            return bad("image class vocabulary needs room for PAD and UNK".into());
        }
        let c = &self.conv;
        for (a, b, rows) in [(2, 3, "8 and 9"), (1, 4, "6 and 11"), (0, 5, "4 and 13")] {
            if c[a].channels != c[b].channels {
                return bad(format!(
                    "character layers {rows} are concatenated but have {} and {} channels",
                    c[a].channels, c[b].channels
                ));
            }
        }
        if !c[5].channels.is_multiple_of(self.groups) {
            return bad(format!(
                "{} character channels do not split into {} groups",
                c[5].channels, self.groups
            ));
        }
        for (name, v) in [("drop_rate", self.drop_rate), ("target_rate", self.target_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon {} must be positive", self.epsilon));
        }

        let l4 = self.max_chars.div_ceil(self.pool);
        let l6 = l4.div_ceil(self.pool);
        let l8 = l6.div_ceil(self.pool);
        let l10 = 2 * l8;
        let l12 = l6 + l10;
        let l14 = l4 + l12;
        let char_features = l14 * c[5].channels;
        let word_features = 2 * self.word_lstm;
        let fusion_input = if self.use_attention {
            self.attention_dim
        } else {
            char_features + word_features + self.image_lstm
        };
        Ok(CwiDims {
            char_rows: l14,
            char_features,
            word_embedding: self.glove_dim + self.fasttext_dim,
            word_features,
            image_features: self.image_lstm,
            fusion_input,
            fusion_output: 2 * self.fusion_lstm,
        })
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set("max_words", self.max_words);
        kv.set("max_chars", self.max_chars);
        kv.set("char_emb", self.char_emb);
        let conv: Vec<String> = self
            .conv
            .iter()
            .map(|c| format!("{}x{}", c.kernel, c.channels))
            .collect();
        kv.set("conv", conv.join(","));
        kv.set("pool", self.pool);
        kv.set("drop_rate", self.drop_rate);
        kv.set("target_rate", self.target_rate);
        kv.set(
            "drop_target",
            match self.drop_target {
                DropTarget::LowestMagnitude => "lowest",
                DropTarget::HighestMagnitude => "highest",
            },
        );
        kv.set("epsilon", self.epsilon);
        kv.set("groups", self.groups);
        kv.set("regularizers", self.regularizers);
        kv.set("glove_dim", self.glove_dim);
        kv.set("fasttext_dim", self.fasttext_dim);
        kv.set("word_lstm", self.word_lstm);
        kv.set("image_classes", self.image_classes);
        kv.set("image_emb", self.image_emb);
        kv.set("image_lstm", self.image_lstm);
        kv.set("fusion_lstm", self.fusion_lstm);
        kv.set("use_attention", self.use_attention);
        kv.set("attention_dim", self.attention_dim);
        kv.set("num_tags", self.num_tags);
        kv.set("mask_illegal", self.mask_illegal);
        kv
    }

    /// Reads every key written by [`CwiConfig::to_kv`]; absent keys keep
    /// their defaults.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = CwiConfig::default();
        let conv = match kv.get("conv") {
            None => d.conv,
            Some(text) => {
                let specs = text
                    .split(',')
                    .map(|s| {
                        let (k, c) = s
                            .trim()
                            .split_once('x')
                            .ok_or_else(|| Error::Config(format!("conv entry {s:?} is not KxC")))?;
                        let parse = |v: &str| {
                            v.parse::<usize>()
                                .map_err(|e| Error::Config(format!("conv {s:?}: {e}")))
                        };
                        Ok(ConvSpec {
                            kernel: parse(k)?,
                            channels: parse(c)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                specs
                    .try_into()
                    .map_err(|v: Vec<ConvSpec>| Error::Config(format!("expected 6 conv layers, got {}", v.len())))?
            }
        };
        let drop_target = match kv.get("drop_target").unwrap_or("lowest") {
            "lowest" => DropTarget::LowestMagnitude,
            "highest" => DropTarget::HighestMagnitude,
            other => return Err(Error::Config(format!("drop_target {other:?} is not lowest or highest"))),
        };
        Ok(CwiConfig {
            max_words: kv.parsed_or("max_words", d.max_words)?,
            max_chars: kv.parsed_or("max_chars", d.max_chars)?,
            char_emb: kv.parsed_or("char_emb", d.char_emb)?,
            conv,
            pool: kv.parsed_or("pool", d.pool)?,
            drop_rate: kv.parsed_or("drop_rate", d.drop_rate)?,
            target_rate: kv.parsed_or("target_rate", d.target_rate)?,
            drop_target,
            epsilon: kv.parsed_or("epsilon", d.epsilon)?,
            groups: kv.parsed_or("groups", d.groups)?,
            regularizers: kv.parsed_or("regularizers", d.regularizers)?,
            glove_dim: kv.parsed_or("glove_dim", d.glove_dim)?,
            fasttext_dim: kv.parsed_or("fasttext_dim", d.fasttext_dim)?,
            word_lstm: kv.parsed_or("word_lstm", d.word_lstm)?,
            image_classes: kv.parsed_or("image_classes", d.image_classes)?,
            image_emb: kv.parsed_or("image_emb", d.image_emb)?,
            image_lstm: kv.parsed_or("image_lstm", d.image_lstm)?,
            fusion_lstm: kv.parsed_or("fusion_lstm", d.fusion_lstm)?,
            use_attention: kv.parsed_or("use_attention", d.use_attention)?,
            attention_dim: kv.parsed_or("attention_dim", d.attention_dim)?,
            num_tags: kv.parsed_or("num_tags", d.num_tags)?,
            mask_illegal: kv.parsed_or("mask_illegal", d.mask_illegal)?,
        })
    }
}

/// How the image modality enters a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ImageInput {
    #[default]
    Full,
    /// Image features replaced by zeros.
    Zeroed,
    /// Text-only ablation: the image block is removed from the fusion
    /// input (and its weight rows unused).
    Absent,
}

struct AttentionBlock {
    char_proj: Linear,
    word_proj: Linear,
    image_proj: Linear,
    attention: ModalityAttention,
}

struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

pub struct CwiOutput {
    /// `[n × 9]` over the real tokens.
    pub emissions: Var,
    /// Modality weights `[n × M]` in the attention variant.
    pub attention: Option<Var>,
}

pub struct CwiModel {
    config: CwiConfig,
    dims: CwiDims,
    store: ParamStore,
    chars: CharVocab,
    classes: ClassVocab,
    glove: EmbeddingTable,
    fasttext: EmbeddingTable,
    char_emb: Embedding,
    convs: Vec<Conv>,
    dropout: TargetedDropout,
    norm: GroupNorm,
    word_lstm: BiLstm,
    class_emb: Embedding,
    image_lstm: Lstm,
    attention: Option<AttentionBlock>,
    fusion: BiLstm,
    head: Linear,
    crf: Crf,
}

impl CwiModel {
    /// Builds a randomly initialised model. The word tables stay frozen.
    pub fn new(
        config: CwiConfig,
        glove: EmbeddingTable,
        fasttext: EmbeddingTable,
        classes: ClassVocab,
        seed: u64,
    ) -> Result<Self> {
        let dims = config.validate()?;
        if glove.dim() != config.glove_dim || fasttext.dim() != config.fasttext_dim {
            return Err(Error::Config(format!(
                "word tables have dims {}+{}, config expects {}+{}",
                glove.dim(),
                fasttext.dim(),
                config.glove_dim,
                config.fasttext_dim
            )));
        }
        if classes.capacity() != config.image_classes {
            return Err(Error::Config(format!(
                "class vocabulary capacity {} differs from image_classes {}",
                classes.capacity(),
                config.image_classes
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let chars = CharVocab;
        let char_emb = Embedding::uniform(
            &mut store,
            "char/embedding",
            chars.len(),
            config.char_emb,
            0.25,
            &mut rng,
        )?;
        let mut convs = Vec::with_capacity(6);
        let in_channels = [
            config.char_emb,
            config.conv[0].channels,
            config.conv[1].channels,
            config.conv[2].channels,
            config.conv[3].channels,
            config.conv[4].channels,
        ];
        for (i, (spec, &cin)) in config.conv.iter().zip(&in_channels).enumerate() {
            let k = Tensor::glorot(spec.kernel * cin, spec.channels, &mut rng).reshape(vec![
                spec.kernel,
                cin,
                spec.channels,
            ])?;
            convs.push(Conv {
                kernel: store.add(format!("char/conv{i}/kernel"), k)?,
                bias: store.add(format!("char/conv{i}/bias"), Tensor::zeros(vec![1, spec.channels]))?,
            });
        }
        let dropout = TargetedDropout::new(config.drop_rate, config.target_rate, config.drop_target)?;
        let norm = GroupNorm::new(&mut store, "char/group_norm", config.conv[5].channels, config.groups)?;
        let word_lstm = BiLstm::new(
            &mut store,
            "word/bilstm",
            dims.word_embedding,
            config.word_lstm,
            &mut rng,
        )?;
        let class_emb = Embedding::uniform(
            &mut store,
            "image/embedding",
            config.image_classes,
            config.image_emb,
            0.25,
            &mut rng,
        )?;
        let image_lstm = Lstm::new(&mut store, "image/lstm", config.image_emb, config.image_lstm, &mut rng)?;
        let attention = if config.use_attention {
            let d = config.attention_dim;
            Some(AttentionBlock {
                char_proj: Linear::new(&mut store, "attention/char_proj", dims.char_features, d, &mut rng)?,
                word_proj: Linear::new(&mut store, "attention/word_proj", dims.word_features, d, &mut rng)?,
                image_proj: Linear::new(&mut store, "attention/image_proj", dims.image_features, d, &mut rng)?,
                attention: ModalityAttention::new(&mut store, "attention/modality", d, &mut rng)?,
            })
        } else {
            None
        };
        let fusion = BiLstm::new(
            &mut store,
            "fusion/bilstm",
            dims.fusion_input,
            config.fusion_lstm,
            &mut rng,
        )?;
        let head = Linear::new(
            &mut store,
            "fusion/projection",
            dims.fusion_output,
            config.num_tags,
            &mut rng,
        )?;
        let crf = Crf::new(&mut store, "crf", config.num_tags)?;
        Ok(CwiModel {
            config,
            dims,
            store,
            chars,
            classes,
            glove,
            fasttext,
            char_emb,
            convs,
            dropout,
            norm,
            word_lstm,
            class_emb,
            image_lstm,
            attention,
            fusion,
            head,
            crf,
        })
    }

    pub fn cwi_config(&self) -> &CwiConfig {
        &self.config
    }

    pub fn dims(&self) -> CwiDims {
        self.dims
    }

    pub fn classes(&self) -> &ClassVocab {
        &self.classes
    }

    pub fn glove(&self) -> &EmbeddingTable {
        &self.glove
    }

    pub fn fasttext(&self) -> &EmbeddingTable {
        &self.fasttext
    }

    pub fn crf(&self) -> &Crf {
        &self.crf
    }

    fn conv<'a>(&'a self, g: &mut Graph<'a>, x: Var, layer: usize) -> Result<Var> {
        let k = g.param(&self.store, self.convs[layer].kernel);
        let b = g.param(&self.store, self.convs[layer].bias);
        let y = g.conv1d(x, k, Padding::Same)?;
        g.add_row(y, b)
    }

    /// Features of one word (layers 2–17), `[1 × F_c]`.
    fn char_word<'a, R: Rng + ?Sized>(
        &'a self,
        g: &mut Graph<'a>,
        word: &str,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let p = self.config.pool;
        let ids = self.chars.encode(word, self.config.max_chars);
        let x2 = self.char_emb.forward(g, &self.store, &ids)?;
        let x3 = self.conv(g, x2, 0)?;
        let x4 = g.maxpool1d(x3, p)?;
        let x5 = self.conv(g, x4, 1)?;
        let x6 = g.maxpool1d(x5, p)?;
        let x7 = self.conv(g, x6, 2)?;
        let x8 = g.maxpool1d(x7, p)?;
        let x9 = self.conv(g, x8, 3)?;
        let x10 = g.concat(&[x8, x9], 0)?;
        let x11 = self.conv(g, x10, 4)?;
        let x12 = g.concat(&[x6, x11], 0)?;
        let x13 = self.conv(g, x12, 5)?;
        let mut x = g.concat(&[x4, x13], 0)?;
        if self.config.regularizers {
            x = self.dropout.apply(g, x, training, rng)?;
            x = g.sine_relu(x, self.config.epsilon);
            x = self.norm.forward(g, &self.store, x)?;
        }
        g.reshape(x, &[1, self.dims.char_features])
    }

    /// Character features `[n × F_c]`, each word processed independently.
    pub fn char_features<'a, R: Rng + ?Sized>(
        &'a self,
        g: &mut Graph<'a>,
        tokens: &[String],
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        let rows = tokens
            .iter()
            .map(|t| self.char_word(g, t, training, rng))
            .collect::<Result<Vec<_>>>()?;
        g.concat(&rows, 0)
    }

    /// Frozen GloVe ∘ fastText rows `[n × (glove + fasttext)]`.
    pub fn word_embeddings(&self, tokens: &[String]) -> Result<Tensor> {
        let width = self.dims.word_embedding;
        let mut data = Vec::with_capacity(tokens.len() * width);
        for t in tokens {
            data.extend_from_slice(&self.glove.lookup(t));
            data.extend_from_slice(&self.fasttext.lookup(t));
        }
        Tensor::new(vec![tokens.len(), width], data)
    }

    /// Word BiLSTM features `[n × 2·word_lstm]`.
    pub fn word_features<'a>(&'a self, g: &mut Graph<'a>, tokens: &[String]) -> Result<Var> {
        let emb = g.constant(self.word_embeddings(tokens)?);
        self.word_lstm.run(g, &self.store, emb)
    }

    /// Final hidden state of the image-word LSTM, `[1 × image_lstm]`. No
    /// image words means a single PAD step.
    pub fn image_features<'a>(&'a self, g: &mut Graph<'a>, words: &[ImageWord]) -> Result<Var> {
        let mut ids: Vec<usize> = words
            .iter()
            .take(crate::seqdata::MAX_IMAGE_WORDS)
            .map(|w| self.classes.index(&w.label))
            .collect();
        if ids.is_empty() {
            ids.push(PAD);
        }
        let emb = self.class_emb.forward(g, &self.store, &ids)?;
        self.image_lstm.last_state(g, &self.store, emb)
    }

    /// Emission scores over a window of at most `max_words` tokens.
    pub fn forward<'a, R: Rng + ?Sized>(
        &'a self,
        g: &mut Graph<'a>,
        tokens: &[String],
        image_words: &[ImageWord],
        image: ImageInput,
        training: bool,
        rng: &mut R,
    ) -> Result<CwiOutput> {
        let n = tokens.len();
        if n == 0 || n > self.config.max_words {
            return Err(Error::contract(format!(
                "CWI forward takes 1..={} tokens, got {n}",
                self.config.max_words
            )));
        }
        let chars = self.char_features(g, tokens, training, rng)?;
        let words = self.word_features(g, tokens)?;
        let img = match image {
            ImageInput::Full => Some(self.image_features(g, image_words)?),
            ImageInput::Zeroed => Some(g.constant(Tensor::zeros(vec![1, self.dims.image_features]))),
            ImageInput::Absent => None,
        };
        let (hidden, weights) = match &self.attention {
            None => {
                let text_width = self.dims.char_features + self.dims.word_features;
                let hidden = match img {
                    Some(img) => {
                        let img = g.broadcast_rows(img, n)?;
                        let x = g.concat(&[chars, words, img], 1)?;
                        self.fusion.run(g, &self.store, x)?
                    }
                    None => {
                        let x = g.concat(&[chars, words], 1)?;
                        self.fusion.run_input_rows(g, &self.store, x, 0..text_width)?
                    }
                };
                (hidden, None)
            }
            Some(block) => {
                let mut modalities = vec![
                    block.char_proj.forward(g, &self.store, chars)?,
                    block.word_proj.forward(g, &self.store, words)?,
                ];
                if let Some(img) = img {
                    let p = block.image_proj.forward(g, &self.store, img)?;
                    modalities.push(g.broadcast_rows(p, n)?);
                }
                let out = block.attention.forward(g, &self.store, &modalities)?;
                (self.fusion.run(g, &self.store, out.fused)?, Some(out.weights))
            }
        };
        let emissions = self.head.forward(g, &self.store, hidden)?;
        Ok(CwiOutput {
            emissions,
            attention: weights,
        })
    }

    /// Emissions for a window padded with zero rows to `[max_words × 9]`,
    /// plus the mask of real positions.
    pub fn padded_emissions(&self, example: &Example) -> Result<(Tensor, Vec<bool>)> {
        let mut g = Graph::inference();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.forward(
            &mut g,
            &example.tokens,
            &example.image_words,
            ImageInput::Full,
            false,
            &mut rng,
        )?;
        let e = g.value(out.emissions);
        let (n, k) = e.dims2()?;
        let mut data = e.data().to_vec();
        data.resize(self.config.max_words * k, 0.0);
        let mut mask = vec![true; n];
        mask.resize(self.config.max_words, false);
        Ok((Tensor::new(vec![self.config.max_words, k], data)?, mask))
    }

    /// Decodes with an explicit image mode; used by ablations.
    pub fn predict_with(&self, example: &Example, image: ImageInput) -> Result<Vec<Tag>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut tags = Vec::with_capacity(example.len());
        for range in chunks(example.len(), self.config.max_words) {
            let mut g = Graph::inference();
            let out = self.forward(
                &mut g,
                &example.tokens[range],
                &example.image_words,
                image,
                false,
                &mut rng,
            )?;
            let path = self
                .crf
                .decode(&self.store, g.value(out.emissions), self.config.mask_illegal)?;
            tags.extend(
                path.into_iter()
                    .map(|i| Tag::from_index(i).expect("CRF emits tag indices")),
            );
        }
        Ok(tags)
    }
}

impl SequenceTagger for CwiModel {
    fn kind(&self) -> ModelKind {
        if self.config.use_attention {
            ModelKind::CwiAttention
        } else {
            ModelKind::Cwi
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

    /// CRF negative log-likelihood summed over `max_words` windows.
    fn loss<'a>(&'a self, g: &mut Graph<'a>, example: &Example, rng: &mut ChaCha8Rng) -> Result<Var> {
        let tags: Vec<usize> = example.tags.iter().map(|t| t.index()).collect();
        if tags.len() != example.len() {
            return Err(Error::contract(format!("example {} is not fully tagged", example.id)));
        }
        let mut total: Option<Var> = None;
        for range in chunks(example.len(), self.config.max_words) {
            let out = self.forward(
                g,
                &example.tokens[range.clone()],
                &example.image_words,
                ImageInput::Full,
                true,
                rng,
            )?;
            let loss = self.crf.loss(g, &self.store, out.emissions, &tags[range])?;
            total = Some(match total {
                None => loss,
                Some(t) => g.add(t, loss)?,
            });
        }
        total.ok_or_else(|| Error::contract(format!("example {} is empty", example.id)))
    }

    fn predict(&self, example: &Example) -> Result<Vec<Tag>> {
        self.predict_with(example, ImageInput::Full)
    }
}
