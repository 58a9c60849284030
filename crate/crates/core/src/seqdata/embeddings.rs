//! Pretrained word vectors in the GloVe / fastText text format.

use std::borrow::Cow;
use std::collections::HashMap;
use std::hash::Hasher;
use std::io::BufRead;

use fnv::FnvHasher;
use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Range of the uniform initialisation for out-of-vocabulary tokens.
pub const OOV_RANGE: f64 = 0.25;

/// A frozen token → vector table.
///
/// Lookups try the token as written, then lowercased. Misses get a vector
/// drawn uniformly from `[-0.25, 0.25]`, seeded by `(token, seed)` so the
/// same token always maps to the same vector.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
    seed: u64,
}

impl EmbeddingTable {
    pub fn new(dim: usize, seed: u64) -> Self {
        EmbeddingTable {
            dim,
            index: HashMap::new(),
            data: Vec::new(),
            seed,
        }
    }

    /// Reads `token v1 … vd` lines. A leading fastText `count dim` header is
    /// skipped. Duplicate tokens keep their first vector.
    pub fn load<R: BufRead>(reader: R, expected_dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::new(expected_dim, seed);
        let mut duplicates = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let values: Vec<&str> = fields.collect();
            if line_no == 1 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok()
            {
                continue;
            }
            if values.len() != expected_dim {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("vector of dimension {} where {expected_dim} was expected", values.len()),
                });
            }
            if table.index.contains_key(token) {
                duplicates += 1;
                continue;
            }
            let start = table.data.len();
            for v in values {
                table.data.push(v.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("bad number `{v}`"),
                })?);
            }
            table.index.insert(token.to_string(), start / expected_dim.max(1));
        }
        if duplicates > 0 {
            warn!("embedding file: {duplicates} duplicate tokens ignored (first occurrence kept)");
        }
        debug!("loaded {} vectors of dimension {expected_dim}", table.len());
        Ok(table)
    }

    pub fn insert(&mut self, token: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::shape("embedding insert", &[self.dim], &[vector.len()]));
        }
        let token = token.into();
        if !self.index.contains_key(&token) {
            self.index.insert(token, self.data.len() / self.dim.max(1));
            self.data.extend(vector);
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        let i = match self.index.get(token) {
            Some(&i) => i,
            None => *self.index.get(&token.to_lowercase())?,
        };
        Some(&self.data[i * self.dim..(i + 1) * self.dim])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    /// Order-independent content hash of the dimension and every entry.
    pub fn fingerprint(&self) -> u64 {
        let mut tokens: Vec<(&String, &usize)> = self.index.iter().collect();
        tokens.sort_unstable();
        let mut h = FnvHasher::default();
        h.write_u64(self.dim as u64);
        for (token, &i) in tokens {
            h.write(token.as_bytes());
            h.write_u8(0);
            for v in &self.data[i * self.dim..(i + 1) * self.dim] {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    pub fn lookup(&self, token: &str) -> Cow<'_, [f64]> {
        match self.get(token) {
            Some(v) => Cow::Borrowed(v),
            None => Cow::Owned(oov_vector(token, self.seed, self.dim)),
        }
    }
}

/// Deterministic out-of-vocabulary vector for `(token, seed)`.
pub fn oov_vector(token: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut h = FnvHasher::default();
    h.write(token.as_bytes());
    h.write_u64(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
    (0..dim).map(|_| rng.random_range(-OOV_RANGE..=OOV_RANGE)).collect()
}
