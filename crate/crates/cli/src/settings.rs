//! Settings from the optional key=value file merged under command-line
//! flags, and resolution of data paths.
//!
//! Recognised file keys: `model`, `train`, `dev`, `data`, `checkpoint`,
//! `sidecar`, `format`, `lenient`, `glove`, `fasttext`, `vocab`, `epochs`,
//! `learning_rate`, `batch_size`, `seed`, `stop_at_train_f1`, `use_crf`,
//! and `model.<setting>` for any architecture setting.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::anyhow;

use mner_core::config::KvConfig;
use mner_core::data::{load_conll, load_sidecar, load_tmn, read_to_string, synthetic_dir};
use mner_core::pipeline::Resources;
use mner_core::seqdata::{Example, ParseMode};

use crate::{CorpusArgs, Failure, ModelArgs, ResourceArgs, EXIT_DATA};

const KEYS: [&str; 17] = [
    "model",
    "train",
    "dev",
    "data",
    "checkpoint",
    "sidecar",
    "format",
    "lenient",
    "glove",
    "fasttext",
    "vocab",
    "epochs",
    "learning_rate",
    "batch_size",
    "seed",
    "stop_at_train_f1",
    "use_crf",
];
const MODEL_PREFIX: &str = "model.";

pub struct Settings {
    file: KvConfig,
    data_root: Option<PathBuf>,
}

impl Settings {
    pub fn load(config: Option<&Path>, data_root: Option<PathBuf>) -> Result<Self, Failure> {
        let file = match config {
            Some(path) => KvConfig::parse(&read_to_string(path)?)
                .map_err(|e| Failure::usage(anyhow!("{}: {e}", path.display())))?,
            None => KvConfig::new(),
        };
        if let Some(bad) = file.keys().find(|k| !KEYS.contains(k) && !k.starts_with(MODEL_PREFIX)) {
            return Err(Failure::usage(anyhow!(
                "unknown setting {bad:?} in the config file; known: {}, model.<setting>",
                KEYS.join(", ")
            )));
        }
        Ok(Settings { file, data_root })
    }

    /// The flag value, else the file value, else `None`.
    pub fn value<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, Failure>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| Failure::usage(anyhow!("config file setting {key}={raw:?}: {e}"))),
        }
    }

    pub fn flag(&self, flag: bool, key: &str) -> Result<bool, Failure> {
        Ok(flag || self.value::<bool>(None, key)?.unwrap_or(false))
    }

    pub fn required<T: FromStr>(&self, flag: Option<T>, key: &str, option: &str) -> Result<T, Failure>
    where
        T::Err: std::fmt::Display,
    {
        self.value(flag, key)?
            .ok_or_else(|| Failure::usage(anyhow!("missing {option} (or `{key}` in the config file)")))
    }

    /// A relative path that does not exist as given is looked up under the
    /// data root.
    pub fn resolve(&self, path: PathBuf) -> PathBuf {
        match &self.data_root {
            Some(root) if path.is_relative() && !path.exists() => root.join(path),
            _ => path,
        }
    }

    pub fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<Option<PathBuf>, Failure> {
        Ok(self.value(flag, key)?.map(|p| self.resolve(p)))
    }

    /// An input file that must exist.
    pub fn input(&self, flag: Option<PathBuf>, key: &str, option: &str) -> Result<PathBuf, Failure> {
        let path = self.resolve(self.required(flag, key, option)?);
        require_file(&path, option)?;
        Ok(path)
    }

    pub fn resources(&self, args: ResourceArgs) -> Result<Resources, Failure> {
        let bundled = synthetic_dir();
        let pick = |flag: Option<PathBuf>, key: &str, default: &str| -> Result<Option<PathBuf>, Failure> {
            let path = self.path(flag, key)?.unwrap_or_else(|| bundled.join(default));
            require_file(&path, &format!("--{key}"))?;
            Ok(Some(path))
        };
        Ok(Resources {
            glove: pick(args.glove, "glove", "glove.txt")?,
            fasttext: pick(args.fasttext, "fasttext", "fasttext.txt")?,
            vocab: pick(args.vocab, "vocab", "vocab.txt")?,
        })
    }

    /// `model.*` file entries overlaid by the flags.
    pub fn model_overrides(&self, args: &ModelArgs) -> Result<KvConfig, Failure> {
        let mut kv = KvConfig::new();
        for key in self.file.keys().filter(|k| k.starts_with(MODEL_PREFIX)) {
            kv.set(&key[MODEL_PREFIX.len()..], self.file.get(key).unwrap_or_default());
        }
        if self.flag(args.use_crf, "use_crf")? {
            kv.set("use_crf", true);
        }
        if args.no_regularizers {
            kv.set("regularizers", false);
        }
        if let Some(d) = args.glove_dim {
            kv.set("glove_dim", d);
        }
        if let Some(d) = args.fasttext_dim {
            kv.set("fasttext_dim", d);
        }
        for entry in &args.overrides {
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| Failure::usage(anyhow!("--set expects KEY=VALUE, got {entry:?}")))?;
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }

    /// A tagged corpus with its image words.
    pub fn corpus(&self, path: &Path, args: &CorpusArgs) -> Result<Vec<Example>, Failure> {
        let mode = if self.flag(args.lenient, "lenient")? {
            ParseMode::Lenient
        } else {
            ParseMode::Strict
        };
        let sidecar = match self.path(args.sidecar.clone(), "sidecar")? {
            Some(p) => {
                require_file(&p, "--sidecar")?;
                Some(load_sidecar(&p)?)
            }
            None => None,
        };
        let format = self
            .value(args.format.clone(), "format")?
            .unwrap_or_else(|| "tmn".into());
        let examples = match format.as_str() {
            "tmn" => load_tmn(path, sidecar.as_ref(), mode)?,
            "conll" => load_conll(path, mode)?,
            other => {
                return Err(Failure::usage(anyhow!(
                    "unknown corpus format {other:?}; expected tmn or conll"
                )))
            }
        };
        Ok(examples)
    }
}

pub fn require_file(path: &Path, what: &str) -> Result<(), Failure> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_DATA,
            error: anyhow!("{what}: no such file {}", path.display()),
        })
    }
}
