//! Binary model checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "MNERCKPT" | u32 version | str kind | str config | u64 config hash
//! u32 n_meta  { str key | str value }
//! u32 n_tensors { str name | u32 rank | u64 dims… | f64 data… }
//! u64 FNV-1a checksum of every preceding byte
//! ```
//!
//! A `str` is a `u32` byte length followed by UTF-8.

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::io::{self, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use fnv::FnvHasher;

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::model::{ModelKind, SequenceTagger};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"MNERCKPT";
pub const VERSION: u32 = 1;
const MAX_STRING: u32 = 1 << 30;
const MAX_RANK: u32 = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: KvConfig,
    /// Free-form provenance: training settings, resource fingerprints,
    /// vocabularies needed to rebuild the model.
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

/// Hashes everything written or read through it.
struct Hashing<T> {
    inner: T,
    hasher: FnvHasher,
}

impl<T> Hashing<T> {
    fn new(inner: T) -> Self {
        Hashing {
            inner,
            hasher: FnvHasher::default(),
        }
    }
}

impl<W: Write> Write for Hashing<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.write(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

impl<R: Read> Read for Hashing<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.write(&buf[..n]);
        Ok(n)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    let len = u32::try_from(s.len()).ok().filter(|&l| l <= MAX_STRING);
    let len = len.ok_or_else(|| Error::Checkpoint(format!("string of {} bytes is too long", s.len())))?;
    w.write_u32::<LittleEndian>(len)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R, what: &str) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()?;
    if len > MAX_STRING {
        return Err(Error::Checkpoint(format!("{what}: implausible length {len}")));
    }
    let mut buf = vec![0; len as usize];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
}

fn truncated(e: Error) -> Error {
    match e {
        Error::Io(io) if io.kind() == io::ErrorKind::UnexpectedEof => Error::Checkpoint("file is truncated".into()),
        other => other,
    }
}

impl Checkpoint {
    pub fn from_model<M: SequenceTagger + ?Sized>(model: &M, meta: BTreeMap<String, String>) -> Self {
        Checkpoint {
            kind: model.kind(),
            config: model.config(),
            meta,
            tensors: model.params().iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
        }
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = Hashing::new(writer);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_str(&mut w, self.kind.as_str())?;
        write_str(&mut w, &self.config.to_text())?;
        w.write_u64::<LittleEndian>(self.config.hash())?;
        w.write_u32::<LittleEndian>(self.meta.len() as u32)?;
        for (k, v) in &self.meta {
            write_str(&mut w, k)?;
            write_str(&mut w, v)?;
        }
        w.write_u32::<LittleEndian>(self.tensors.len() as u32)?;
        for (name, t) in &self.tensors {
            write_str(&mut w, name)?;
            w.write_u32::<LittleEndian>(t.rank() as u32)?;
            for &d in t.shape() {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
            for &v in t.data() {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        let sum = w.hasher.finish();
        w.inner.write_u64::<LittleEndian>(sum)?;
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        Self::read_inner(reader).map_err(truncated)
    }

    fn read_inner<R: Read>(reader: R) -> Result<Self> {
        let mut r = Hashing::new(reader);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic bytes)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Version(format!(
                "checkpoint format {version}, this build reads {VERSION}"
            )));
        }
        let kind: ModelKind = read_str(&mut r, "model kind")?.parse()?;
        let config = KvConfig::parse(&read_str(&mut r, "config")?)?;
        let hash = r.read_u64::<LittleEndian>()?;
        if hash != config.hash() {
            return Err(Error::Checkpoint("config hash does not match the stored config".into()));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.read_u32::<LittleEndian>()? {
            let k = read_str(&mut r, "meta key")?;
            let v = read_str(&mut r, "meta value")?;
            meta.insert(k, v);
        }
        let count = r.read_u32::<LittleEndian>()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = read_str(&mut r, "tensor name")?;
            let rank = r.read_u32::<LittleEndian>()?;
            if rank > MAX_RANK {
                return Err(Error::Checkpoint(format!("tensor {name}: implausible rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| Ok(r.read_u64::<LittleEndian>()? as usize))
                .collect::<Result<Vec<usize>>>()?;
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&l| l <= (MAX_STRING as usize) * 4)
                .ok_or_else(|| Error::Checkpoint(format!("tensor {name}: implausible shape {shape:?}")))?;
            let mut data = vec![0.0; len];
            r.read_f64_into::<LittleEndian>(&mut data)?;
            tensors.push((name, Tensor::new(shape, data)?));
        }
        let expected = r.hasher.finish();
        let stored = r.inner.read_u64::<LittleEndian>()?;
        if stored != expected {
            return Err(Error::Checkpoint("checksum mismatch (file is corrupted)".into()));
        }
        let mut rest = [0u8; 1];
        if r.inner.read(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after checksum".into()));
        }
        Ok(Checkpoint {
            kind,
            config,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::in_file(path, e.into()))?;
        let mut w = io::BufWriter::new(file);
        self.write(&mut w).map_err(|e| Error::in_file(path, e))?;
        w.flush().map_err(|e| Error::in_file(path, e.into()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::in_file(path, e.into()))?;
        Self::read(io::BufReader::new(file)).map_err(|e| Error::in_file(path, e))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing metadata {key:?}")))
    }

    /// Copies the weights into `model`, which must have the same kind and
    /// architecture.
    pub fn restore_into<M: SequenceTagger + ?Sized>(&self, model: &mut M) -> Result<()> {
        if model.kind() != self.kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, not {}",
                self.kind,
                model.kind()
            )));
        }
        if model.config().hash() != self.config.hash() {
            return Err(Error::Checkpoint(
                "model architecture differs from the checkpoint's".into(),
            ));
        }
        model.params_mut().load(&self.tensors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut config = KvConfig::new();
        config.set("hidden", 4);
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), "7".to_string());
        Checkpoint {
            kind: ModelKind::MsbTiny,
            config,
            meta,
            tensors: vec![
                (
                    "a".into(),
                    Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap(),
                ),
                ("b".into(), Tensor::scalar(0.25)),
            ],
        }
    }

    fn bytes(c: &Checkpoint) -> Vec<u8> {
        let mut out = Vec::new();
        c.write(&mut out).unwrap();
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::read(bytes(&c).as_slice()).unwrap();
        assert_eq!(back, c);
        assert!(back.tensors[0].1.data()[1].is_sign_negative());
    }

    #[test]
    fn every_flipped_byte_is_detected() {
        let good = bytes(&sample());
        for i in 0..good.len() {
            let mut bad = good.clone();
            bad[i] ^= 0x10;
            assert!(
                Checkpoint::read(bad.as_slice()).is_err(),
                "flip at byte {i} went unnoticed"
            );
        }
    }

    #[test]
    fn truncation_and_versions_are_reported() {
        let good = bytes(&sample());
        let err = Checkpoint::read(&good[..good.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
        let mut future = good.clone();
        future[8] = 9;
        assert!(matches!(Checkpoint::read(future.as_slice()), Err(Error::Version(_))));
        assert!(Checkpoint::read(&b"NOTACKPT"[..]).is_err());
    }
}
