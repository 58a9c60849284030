//! The interface shared by every tagger the trainer and CLI drive.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, ParamStore, Var};
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::seqdata::{Example, Tag};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Cwi,
    CwiAttention,
    MsbTiny,
    MsbSmall,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Cwi,
        ModelKind::CwiAttention,
        ModelKind::MsbTiny,
        ModelKind::MsbSmall,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Cwi => "cwi",
            ModelKind::CwiAttention => "cwi-attn",
            ModelKind::MsbTiny => "msb-tiny",
            ModelKind::MsbSmall => "msb-small",
        }
    }

    pub fn is_msb(self) -> bool {
        matches!(self, ModelKind::MsbTiny | ModelKind::MsbSmall)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| {
            Error::Config(format!(
                "unknown model {s:?}; expected cwi, cwi-attn, msb-tiny or msb-small"
            ))
        })
    }
}

/// A trainable sequence tagger over the nine BIO2 tags.
pub trait SequenceTagger: Sync {
    fn kind(&self) -> ModelKind;

    /// Architecture settings; their hash identifies compatible checkpoints.
    fn config(&self) -> KvConfig;

    fn params(&self) -> &ParamStore;

    fn params_mut(&mut self) -> &mut ParamStore;

    /// Training-mode loss for one example. `rng` drives stochastic layers.
    fn loss<'a>(&'a self, g: &mut Graph<'a>, example: &Example, rng: &mut ChaCha8Rng) -> Result<Var>;

    /// One tag per token.
    fn predict(&self, example: &Example) -> Result<Vec<Tag>>;
}

/// Splits `0..len` into consecutive windows of at most `width`.
pub fn chunks(len: usize, width: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..len).step_by(width.max(1)).map(move |s| s..(s + width).min(len))
}
