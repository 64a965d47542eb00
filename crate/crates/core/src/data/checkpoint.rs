//! Versioned binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "CALTEXT\0"
//! version    u32
//! header     u32 count, then (str key, str value) pairs
//! vocabulary u32 count, then str symbols in index order (index 0 implicit)
//! arrays     u32 count, then records
//! optimizer  u8 present flag, then u32 count and records when present
//! checksum   u32 CRC-32 of every preceding byte
//!
//! str        u32 byte length + UTF-8 bytes
//! record     str name, u8 role, u8 dtype (1 = f64), u32 rank, u64 dims, raw data
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{LayerKind, Tensor};
use crate::vocab::Vocabulary;

pub const MAGIC: &[u8; 8] = b"CALTEXT\0";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;
const META_PREFIX: &str = "meta.";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayRole {
    Convolutional,
    NonConvolutional,
    Buffer,
}

impl ArrayRole {
    fn code(self) -> u8 {
        match self {
            ArrayRole::Convolutional => 0,
            ArrayRole::NonConvolutional => 1,
            ArrayRole::Buffer => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(ArrayRole::Convolutional),
            1 => Some(ArrayRole::NonConvolutional),
            2 => Some(ArrayRole::Buffer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub role: ArrayRole,
    pub value: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    /// Parameters and batchnorm running statistics.
    pub arrays: Vec<NamedArray>,
    pub optimizer: Option<Vec<NamedArray>>,
    /// Free-form string metadata (epoch counter, seed, ...).
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let mut arrays = Vec::new();
        for p in model.store.params() {
            let role = match p.kind {
                LayerKind::Convolutional => ArrayRole::Convolutional,
                LayerKind::NonConvolutional => ArrayRole::NonConvolutional,
            };
            arrays.push(NamedArray {
                name: p.name.clone(),
                role,
                value: p.value.clone(),
            });
        }
        for (name, value) in model.store.buffers() {
            arrays.push(NamedArray {
                name: name.to_string(),
                role: ArrayRole::Buffer,
                value: value.clone(),
            });
        }
        Checkpoint {
            config: model.config.clone(),
            vocab: model.vocab.clone(),
            arrays,
            optimizer: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Builds a model of the stored architecture and fills every array,
    /// failing on missing, surplus or mis-shaped entries.
    pub fn to_model(&self) -> Result<Model> {
        let mut model = Model::new(self.config.clone(), self.vocab.clone(), 0)?;
        let expected = model.store.len() + model.store.buffers().count();
        if self.arrays.len() != expected {
            return Err(CheckpointError::Malformed(format!(
                "{} arrays stored but the architecture has {expected}",
                self.arrays.len()
            ))
            .into());
        }
        for a in &self.arrays {
            if a.role == ArrayRole::Buffer {
                let id = model
                    .store
                    .buffer_id(&a.name)
                    .ok_or_else(|| CheckpointError::Malformed(format!("unknown buffer `{}`", a.name)))?;
                let slot = model.store.buffer_mut(id);
                if slot.shape() != a.value.shape() {
                    return Err(CheckpointError::Malformed(format!(
                        "buffer `{}` has shape {:?}, expected {:?}",
                        a.name,
                        a.value.shape(),
                        slot.shape()
                    ))
                    .into());
                }
                *slot = a.value.clone();
            } else {
                model
                    .store
                    .assign(&a.name, a.value.clone())
                    .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
            }
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut header = self.config.to_pairs();
        for (k, v) in &self.metadata {
            header.insert(format!("{META_PREFIX}{k}"), v.clone());
        }
        put_u32(&mut out, header.len());
        for (k, v) in &header {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.vocab.symbols().len());
        for s in self.vocab.symbols() {
            put_str(&mut out, s);
        }
        put_records(&mut out, &self.arrays);
        match &self.optimizer {
            None => out.push(0),
            Some(records) => {
                out.push(1);
                put_records(&mut out, records);
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len(), "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic.into());
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CheckpointError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            }
            .into());
        }
        let n = r.u32("header")?;
        let mut pairs = BTreeMap::new();
        let mut metadata = BTreeMap::new();
        for _ in 0..n {
            let k = r.string("header key")?;
            let v = r.string("header value")?;
            match k.strip_prefix(META_PREFIX) {
                Some(meta) => metadata.insert(meta.to_string(), v),
                None => pairs.insert(k, v),
            };
        }
        let n = r.u32("vocabulary")?;
        let symbols = (0..n).map(|_| r.string("vocabulary")).collect::<Result<Vec<_>>>()?;
        let arrays = r.records()?;
        let optimizer = match r.take(1, "optimizer flag")?[0] {
            0 => None,
            1 => Some(r.records()?),
            other => return Err(CheckpointError::Malformed(format!("optimizer flag {other}")).into()),
        };
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::ChecksumMismatch { stored, computed }.into());
        }
        let config = ModelConfig::from_pairs(&pairs).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let vocab = Vocabulary::new(symbols).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        Ok(Checkpoint {
            config,
            vocab,
            arrays,
            optimizer,
            metadata,
        })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = std::path::PathBuf::from(tmp);
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn put_records(out: &mut Vec<u8>, records: &[NamedArray]) {
    put_u32(out, records.len());
    for a in records {
        put_str(out, &a.name);
        out.push(a.role.code());
        out.push(DTYPE_F64);
        put_u32(out, a.value.rank());
        for &d in a.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in a.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated(what).into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &'static str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CheckpointError::Malformed(format!("{what} is not UTF-8")).into())
    }

    fn records(&mut self) -> Result<Vec<NamedArray>> {
        let n = self.u32("array count")?;
        let mut out = Vec::new();
        for _ in 0..n {
            let name = self.string("array name")?;
            let role = self.take(1, "array role")?[0];
            let role = ArrayRole::from_code(role)
                .ok_or_else(|| CheckpointError::Malformed(format!("array `{name}` has role {role}")))?;
            let dtype = self.take(1, "array dtype")?[0];
            if dtype != DTYPE_F64 {
                return Err(CheckpointError::Malformed(format!("array `{name}` has dtype {dtype}")).into());
            }
            let rank = self.u32("array rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(self.u64("array shape")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| CheckpointError::Malformed(format!("array `{name}` shape overflows")))?;
            let raw = self.take(numel, "array data")?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let value = Tensor::new(&shape, data).map_err(|e| CheckpointError::Malformed(format!("array `{name}`: {e}")))?;
            out.push(NamedArray { name, role, value });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Preset;

    fn toy_model() -> Model {
        let vocab = Vocabulary::new(["a", "b", "c"]).unwrap();
        Model::new(ModelConfig::preset(Preset::Toy, 4), vocab, 11).unwrap()
    }

    fn sample_checkpoint() -> Checkpoint {
        let mut ck = Checkpoint::from_model(&toy_model());
        ck.metadata.insert("epoch".into(), "3".into());
        ck.optimizer = Some(vec![NamedArray {
            name: "decoder.out.w_o#acc_grad".into(),
            role: ArrayRole::Buffer,
            value: Tensor::from_fn(&[4, 16], |i| (i as f64).sqrt() * 1e-3),
        }]);
        ck
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.config, ck.config);
        assert_eq!(back.vocab, ck.vocab);
        assert_eq!(back.metadata, ck.metadata);
        for (a, b) in ck.arrays.iter().zip(&back.arrays).chain(ck.optimizer.iter().flatten().zip(back.optimizer.iter().flatten())) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let ab: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
        assert_eq!(back.to_bytes(), ck.to_bytes());
        assert!(!dir.path().join("m.ckpt.tmp").exists());
    }

    #[test]
    fn reloaded_model_infers_identically() {
        let model = toy_model();
        let back = Checkpoint::from_bytes(&Checkpoint::from_model(&model).to_bytes()).unwrap().to_model().unwrap();
        let img = Tensor::from_fn(&[32, 256, 1], |i| ((i * 31) % 17) as f64 / 16.0);
        let (a, b) = (model.recognize(&img, 2).unwrap(), back.recognize(&img, 2).unwrap());
        assert_eq!(a.indices, b.indices);
        assert_eq!(a.log_prob.to_bits(), b.log_prob.to_bits());
    }

    fn err_of(bytes: &[u8]) -> CheckpointError {
        match Checkpoint::from_bytes(bytes).unwrap_err() {
            Error::Checkpoint(e) => e,
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn corruption_yields_distinct_errors() {
        let bytes = sample_checkpoint().to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(err_of(&bad), CheckpointError::BadMagic);

        let mut bad = bytes.clone();
        bad[8] = 9;
        assert_eq!(err_of(&bad), CheckpointError::VersionMismatch { found: 9, expected: 1 });

        assert!(matches!(err_of(&bytes[..bytes.len() - 2]), CheckpointError::Truncated(_)));
        assert!(matches!(err_of(&bytes[..bytes.len() / 2]), CheckpointError::Truncated(_)));
        assert!(matches!(err_of(&bytes[..5]), CheckpointError::Truncated("magic")));

        let mut bad = bytes.clone();
        let i = bytes.len() - 100;
        bad[i] ^= 0x40;
        assert!(matches!(err_of(&bad), CheckpointError::ChecksumMismatch { .. }));
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let mut ck = Checkpoint::from_model(&toy_model());
        ck.arrays.pop();
        assert!(ck.to_model().is_err());
        let mut ck = Checkpoint::from_model(&toy_model());
        ck.arrays[0].value = Tensor::zeros(&[1]);
        assert!(ck.to_model().is_err());
    }
}
