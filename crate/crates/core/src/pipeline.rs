//! Building any tagger from its external resources, and rebuilding it from
//! a checkpoint.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::checkpoint::Checkpoint;
use crate::config::KvConfig;
use crate::cwi::{ClassVocab, CwiConfig, CwiModel};
use crate::data::{load_embeddings, load_subword_vocab};
use crate::error::{Error, Result};
use crate::model::{ModelKind, SequenceTagger};
use crate::msb::{MsbConfig, MsbModel, MsbSize, SubwordVocab};
use crate::seqdata::{Example, Tag};

/// Files a model needs besides its weights. CWI uses the two embedding
/// files, MSB the subword vocabulary.
#[derive(Clone, Debug, Default)]
pub struct Resources {
    pub glove: Option<PathBuf>,
    pub fasttext: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
}

impl Resources {
    /// The bundled synthetic files.
    pub fn synthetic() -> Self {
        let dir = crate::data::synthetic_dir();
        Resources {
            glove: Some(dir.join("glove.txt")),
            fasttext: Some(dir.join("fasttext.txt")),
            vocab: Some(dir.join("vocab.txt")),
        }
    }

    fn require(path: &Option<PathBuf>, what: &str, kind: ModelKind) -> Result<PathBuf> {
        path.clone()
            .ok_or_else(|| Error::Config(format!("model {kind} needs a {what} file")))
    }
}

/// Either architecture behind one [`SequenceTagger`].
#[allow(clippy::large_enum_variant)]
pub enum Tagger {
    Cwi(CwiModel),
    Msb(MsbModel),
}

impl Tagger {
    fn inner(&self) -> &dyn SequenceTagger {
        match self {
            Tagger::Cwi(m) => m,
            Tagger::Msb(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn SequenceTagger {
        match self {
            Tagger::Cwi(m) => m,
            Tagger::Msb(m) => m,
        }
    }
}

impl SequenceTagger for Tagger {
    fn kind(&self) -> ModelKind {
        self.inner().kind()
    }

    fn config(&self) -> KvConfig {
        self.inner().config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn loss<'a>(&'a self, g: &mut Graph<'a>, example: &Example, rng: &mut ChaCha8Rng) -> Result<Var> {
        self.inner().loss(g, example, rng)
    }

    fn predict(&self, example: &Example) -> Result<Vec<Tag>> {
        self.inner().predict(example)
    }
}

/// Architecture settings for `kind` with `overrides` applied. Unknown keys
/// are rejected.
pub fn model_config(kind: ModelKind, overrides: &KvConfig) -> Result<KvConfig> {
    let mut kv = match kind {
        ModelKind::Cwi | ModelKind::CwiAttention => CwiConfig {
            use_attention: kind == ModelKind::CwiAttention,
            ..CwiConfig::default()
        }
        .to_kv(),
        ModelKind::MsbTiny => MsbConfig::tiny().to_kv(),
        ModelKind::MsbSmall => MsbConfig::small().to_kv(),
    };
    for key in overrides.keys() {
        if !kv.contains(key) {
            let known: Vec<&str> = kv.keys().collect();
            return Err(Error::Config(format!(
                "unknown {kind} setting {key:?}; known: {}",
                known.join(", ")
            )));
        }
        kv.set(key, overrides.get(key).unwrap_or_default());
    }
    Ok(kv)
}

const CLASSES: &str = "cwi.classes";
const GLOVE: &str = "cwi.glove_fingerprint";
const FASTTEXT: &str = "cwi.fasttext_fingerprint";
const OOV_SEED: &str = "cwi.oov_seed";
const VOCAB: &str = "msb.vocab";

fn cwi_from_parts(
    config: CwiConfig,
    resources: &Resources,
    classes: ClassVocab,
    seed: u64,
    oov_seed: u64,
    kind: ModelKind,
) -> Result<CwiModel> {
    let glove = load_embeddings(
        &Resources::require(&resources.glove, "GloVe embedding", kind)?,
        config.glove_dim,
        oov_seed,
    )?;
    let fasttext = load_embeddings(
        &Resources::require(&resources.fasttext, "fastText embedding", kind)?,
        config.fasttext_dim,
        oov_seed,
    )?;
    CwiModel::new(config, glove, fasttext, classes, seed)
}

fn msb_config(kv: &KvConfig, kind: ModelKind, vocab: &SubwordVocab, explicit_vocab_size: bool) -> Result<MsbConfig> {
    let mut config = MsbConfig::from_kv(kv)?;
    config.size = if kind == ModelKind::MsbSmall {
        MsbSize::Small
    } else {
        MsbSize::Tiny
    };
    if !explicit_vocab_size {
        config.vocab_size = vocab.len();
    }
    Ok(config)
}

/// A freshly initialised model. CWI's image-class vocabulary is collected
/// from `training` image words.
pub fn build(
    kind: ModelKind,
    overrides: &KvConfig,
    resources: &Resources,
    training: &[Example],
    seed: u64,
) -> Result<Tagger> {
    let kv = model_config(kind, overrides)?;
    match kind {
        ModelKind::Cwi | ModelKind::CwiAttention => {
            let config = CwiConfig::from_kv(&kv)?;
            let labels = training
                .iter()
                .flat_map(|e| e.image_words.iter().map(|w| w.label.as_str()));
            let classes = ClassVocab::from_labels(labels, config.image_classes)?;
            Ok(Tagger::Cwi(cwi_from_parts(
                config, resources, classes, seed, seed, kind,
            )?))
        }
        ModelKind::MsbTiny | ModelKind::MsbSmall => {
            let vocab = load_subword_vocab(&Resources::require(&resources.vocab, "subword vocabulary", kind)?)?;
            let config = msb_config(&kv, kind, &vocab, overrides.contains("vocab_size"))?;
            Ok(Tagger::Msb(MsbModel::new(config, vocab, seed)?))
        }
    }
}

/// Everything needed to rebuild `model` later, plus `extra` entries.
pub fn to_checkpoint(model: &Tagger, mut extra: BTreeMap<String, String>) -> Checkpoint {
    match model {
        Tagger::Cwi(m) => {
            extra.insert(CLASSES.into(), m.classes().names().join("\n"));
            extra.insert(GLOVE.into(), format!("{:016x}", m.glove().fingerprint()));
            extra.insert(FASTTEXT.into(), format!("{:016x}", m.fasttext().fingerprint()));
            extra.insert(OOV_SEED.into(), m.glove().seed().to_string());
        }
        Tagger::Msb(m) => {
            extra.insert(VOCAB.into(), m.vocab().tokens().join("\n"));
        }
    }
    Checkpoint::from_model(model, extra)
}

/// Rebuilds the model saved in `ckpt`. CWI checks that the embedding files
/// are the ones it was trained with.
pub fn from_checkpoint(ckpt: &Checkpoint, resources: &Resources) -> Result<Tagger> {
    let kind = ckpt.kind;
    let mut model = match kind {
        ModelKind::Cwi | ModelKind::CwiAttention => {
            let config = CwiConfig::from_kv(&ckpt.config)?;
            let names: Vec<String> = ckpt.meta(CLASSES)?.split('\n').map(str::to_string).collect();
            let classes = ClassVocab::from_names(&names, config.image_classes)?;
            let oov_seed: u64 = ckpt
                .meta(OOV_SEED)?
                .parse()
                .map_err(|e| Error::Checkpoint(format!("bad {OOV_SEED}: {e}")))?;
            let model = cwi_from_parts(config, resources, classes, 0, oov_seed, kind)?;
            for (key, table, what) in [
                (GLOVE, model.glove(), "GloVe"),
                (FASTTEXT, model.fasttext(), "fastText"),
            ] {
                if ckpt.meta(key)? != format!("{:016x}", table.fingerprint()) {
                    return Err(Error::Checkpoint(format!(
                        "the {what} file differs from the one used in training"
                    )));
                }
            }
            Tagger::Cwi(model)
        }
        ModelKind::MsbTiny | ModelKind::MsbSmall => {
            let vocab = SubwordVocab::new(ckpt.meta(VOCAB)?.split('\n').map(str::to_string).collect())?;
            let config = msb_config(&ckpt.config, kind, &vocab, true)?;
            Tagger::Msb(MsbModel::new(config, vocab, 0)?)
        }
    };
    ckpt.restore_into(&mut model)?;
    Ok(model)
}
