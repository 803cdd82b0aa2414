//! Weight snapshots and the tensor-vault format (TVF).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TVF1"                      4 bytes magic
//! N                           u64, header length in bytes
//! header                      N bytes of UTF-8:
//!     #key=value\n            zero or more metadata lines, sorted by key
//!     name\tf32\td0,d1,..\toffset\tlength\n
//!                             one index line per tensor, sorted by name;
//!                             offset is relative to the data section
//! data                        raw little-endian f32 values
//! ```
//!
//! The snapshot hash is FNV-1a/64 over the index lines followed by the data
//! section. Metadata does not participate, so relabelling a snapshot keeps
//! its identity.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TVF_MAGIC: &[u8; 4] = b"TVF1";
pub const ENCODER_PREFIX: &str = "encoder.";
pub const HEAD_PREFIX: &str = "head.";

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Incremental FNV-1a/64 hasher.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a64(u64);

impl Default for Fnv1a64 {
    fn default() -> Self {
        Fnv1a64(FNV_OFFSET)
    }
}

impl Fnv1a64 {
    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = Fnv1a64::default();
    h.update(bytes);
    h.finish()
}

/// Identity of a snapshot's tensors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SnapshotHash(pub u64);

impl fmt::Display for SnapshotHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.0)
    }
}

impl std::str::FromStr for SnapshotHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        u64::from_str_radix(s, 16)
            .map(SnapshotHash)
            .map_err(|_| Error::invalid(format!("bad snapshot hash {s:?}")))
    }
}

/// Which parameter namespace a path belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Namespace {
    Encoder,
    Head,
}

impl Namespace {
    pub fn of(path: &str) -> Option<Namespace> {
        if path.len() > ENCODER_PREFIX.len() && path.starts_with(ENCODER_PREFIX) {
            Some(Namespace::Encoder)
        } else if path.len() > HEAD_PREFIX.len() && path.starts_with(HEAD_PREFIX) {
            Some(Namespace::Head)
        } else {
            None
        }
    }
}

pub mod meta_keys {
    pub const ROLE: &str = "role";
    pub const SCHEME: &str = "scheme";
    pub const TASK_ID: &str = "task-id";
    pub const SEED: &str = "seed";
    pub const BASE_HASH: &str = "base-hash";
    pub const REGIME: &str = "regime";
    pub const ACCURACY: &str = "accuracy";
}

/// Ordered map from parameter path to tensor, plus string metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightSnapshot {
    entries: BTreeMap<String, Tensor>,
    meta: BTreeMap<String, String>,
}

impl WeightSnapshot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a tensor. The path must live under `encoder.` or `head.`.
    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) -> Result<()> {
        let path = path.into();
        if Namespace::of(&path).is_none() {
            return Err(Error::InvalidIndex(format!(
                "parameter path {path:?} is not under encoder. or head."
            )));
        }
        if path.contains(['\t', '\n']) {
            return Err(Error::InvalidIndex(format!(
                "parameter path {path:?} contains a tab or newline"
            )));
        }
        self.entries.insert(path, tensor);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn entries(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    pub fn meta(&self) -> &BTreeMap<String, String> {
        &self.meta
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.get(key).map(String::as_str)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) -> Result<()> {
        let key = key.into();
        let value = value.into();
        if key.is_empty() || key.contains(['=', '\n', '\t']) {
            return Err(Error::invalid(format!("bad metadata key {key:?}")));
        }
        if value.contains('\n') {
            return Err(Error::invalid(format!("metadata value for {key:?} contains a newline")));
        }
        self.meta.insert(key, value);
        Ok(())
    }

    pub fn remove_meta(&mut self, key: &str) {
        self.meta.remove(key);
    }

    /// Copy holding only the paths of one namespace (metadata is kept).
    pub fn restrict(&self, ns: Namespace) -> WeightSnapshot {
        WeightSnapshot {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| Namespace::of(k) == Some(ns))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
            meta: self.meta.clone(),
        }
    }

    pub fn encoder(&self) -> WeightSnapshot {
        self.restrict(Namespace::Encoder)
    }

    pub fn head(&self) -> WeightSnapshot {
        self.restrict(Namespace::Head)
    }

    /// Adds every tensor of `other`, replacing existing paths. Metadata of
    /// `self` wins.
    pub fn extend_from(&mut self, other: &WeightSnapshot) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Bitwise equality of the tensors in one namespace.
    pub fn namespace_bit_eq(&self, other: &WeightSnapshot, ns: Namespace) -> bool {
        let a: Vec<_> = self.entries.iter().filter(|(k, _)| Namespace::of(k) == Some(ns)).collect();
        let b: Vec<_> = other.entries.iter().filter(|(k, _)| Namespace::of(k) == Some(ns)).collect();
        a.len() == b.len()
            && a.iter().zip(&b).all(|((ka, ta), (kb, tb))| ka == kb && ta.bit_eq(tb))
    }

    fn index_block(&self) -> String {
        let mut out = String::new();
        let mut offset = 0usize;
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let len = t.len() * 4;
            out.push_str(&format!("{name}\tf32\t{}\t{offset}\t{len}\n", dims.join(",")));
            offset += len;
        }
        out
    }

    fn meta_block(&self) -> String {
        self.meta
            .iter()
            .map(|(k, v)| format!("#{k}={v}\n"))
            .collect()
    }

    /// Canonical TVF byte image.
    pub fn to_tvf_bytes(&self) -> Vec<u8> {
        let header = format!("{}{}", self.meta_block(), self.index_block());
        let data_len: usize = self.entries.values().map(|t| t.len() * 4).sum();
        let mut out = Vec::with_capacity(12 + header.len() + data_len);
        out.extend_from_slice(TVF_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        for t in self.entries.values() {
            out.extend_from_slice(&t.to_le_bytes());
        }
        out
    }

    pub fn hash(&self) -> SnapshotHash {
        snapshot_hash(self)
    }

    /// Hash of the encoder namespace alone; the identity used for
    /// base-hash compatibility checks.
    pub fn encoder_hash(&self) -> SnapshotHash {
        snapshot_hash(&self.encoder())
    }
}

/// FNV-1a/64 over the index block, then the data section.
pub fn snapshot_hash(snapshot: &WeightSnapshot) -> SnapshotHash {
    let mut h = Fnv1a64::default();
    h.update(snapshot.index_block().as_bytes());
    for t in snapshot.entries.values() {
        for v in t.data() {
            h.update(&v.to_le_bytes());
        }
    }
    SnapshotHash(h.finish())
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

pub fn save_tvf(snapshot: &WeightSnapshot, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &snapshot.to_tvf_bytes())
}

pub fn load_tvf(path: impl AsRef<Path>) -> Result<WeightSnapshot> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_tvf(&bytes, path)
}

/// Parses a TVF byte image. `origin` is only used in error messages.
pub fn parse_tvf(bytes: &[u8], origin: &Path) -> Result<WeightSnapshot> {
    let corrupt = |reason: &str| Error::Corrupt {
        path: origin.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 4 || &bytes[..4] != TVF_MAGIC {
        return Err(Error::NotTvf(origin.to_path_buf()));
    }
    if bytes.len() < 12 {
        return Err(corrupt("truncated header length"));
    }
    let header_len = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
    let header_end = 12u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| corrupt("header extends past end of file"))? as usize;
    let header = std::str::from_utf8(&bytes[12..header_end])
        .map_err(|_| corrupt("header is not UTF-8"))?;
    let data = &bytes[header_end..];

    let mut snapshot = WeightSnapshot::new();
    for (lineno, line) in header.split_terminator('\n').enumerate() {
        if let Some(kv) = line.strip_prefix('#') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::InvalidIndex(format!("metadata line {} lacks '='", lineno + 1)))?;
            snapshot.set_meta(k, v).map_err(|e| Error::InvalidIndex(e.to_string()))?;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::InvalidIndex(format!(
                "index line {} has {} fields, expected 5",
                lineno + 1,
                fields.len()
            )));
        }
        let name = fields[0];
        if fields[1] != "f32" {
            return Err(Error::InvalidIndex(format!("{name}: unsupported dtype {:?}", fields[1])));
        }
        let shape = if fields[2].is_empty() {
            Vec::new()
        } else {
            fields[2]
                .split(',')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::InvalidIndex(format!("{name}: bad shape {:?}", fields[2])))?
        };
        let offset: u64 = fields[3]
            .parse()
            .map_err(|_| Error::InvalidIndex(format!("{name}: bad offset {:?}", fields[3])))?;
        let length: u64 = fields[4]
            .parse()
            .map_err(|_| Error::InvalidIndex(format!("{name}: bad length {:?}", fields[4])))?;
        let numel = shape
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::InvalidIndex(format!("{name}: shape overflows")))?;
        if numel.checked_mul(4) != Some(length) {
            return Err(Error::InvalidIndex(format!(
                "{name}: length {length} does not match shape {shape:?}"
            )));
        }
        let end = offset
            .checked_add(length)
            .filter(|&e| e <= data.len() as u64)
            .ok_or_else(|| corrupt(&format!("{name}: data range past end of file")))?;
        if snapshot.get(name).is_some() {
            return Err(Error::InvalidIndex(format!("duplicate path {name:?}")));
        }
        let values = data[offset as usize..end as usize]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, values)?;
        snapshot
            .insert(name, tensor)
            .map_err(|e| Error::InvalidIndex(e.to_string()))?;
    }
    Ok(snapshot)
}
