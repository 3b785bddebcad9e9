//! Little-endian binary formats for embedding sets and checkpoints, plus
//! atomic file replacement and configuration hashing.
//!
//! Embedding file (`REMB`):
//!
//! ```text
//! magic "REMB" | version u16 | count u32 | dim u32 | precision u8 (0 = binary32, 1 = binary16)
//! count × { person_id u32 | camera_id u16 | role u8 | dim × f32 }
//! ```
//!
//! Checkpoint file (`RCKP`):
//!
//! ```text
//! magic "RCKP" | version u16 | config_hash u64 | step u64
//! network: u32 length + JSON | plan: u32 length + `name,precision` text
//! u32 tensor count × { name | u8 rank | rank × u32 dims | master f32s | m f32s | v f32s }
//! adam: t u64 | beta1 f32 | beta2 f32 | eps f32
//! u32 bn count × { name | u32 channels | mean f32s | var f32s }
//! ```
//!
//! Names are a u16 byte length followed by UTF-8.

use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{BnStats, NetworkSpec, ParamSet};
use crate::planner::PrecisionPlan;
use crate::retrieval::{EmbeddingSet, Record, Role};
use crate::tensor::{Precision, Tensor};
use crate::trainer::{AdamState, MixedModel};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"REMB";
pub const EMBEDDING_VERSION: u16 = 1;
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"RCKP";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    // temporary files are created owner-only; keep an existing file's mode
    let perms = match std::fs::metadata(path) {
        Ok(meta) => meta.permissions(),
        Err(_) => default_permissions(tmp.as_file())?,
    };
    tmp.as_file().set_permissions(perms)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[cfg(unix)]
fn default_permissions(_: &std::fs::File) -> Result<std::fs::Permissions> {
    use std::os::unix::fs::PermissionsExt;
    Ok(std::fs::Permissions::from_mode(0o644))
}

#[cfg(not(unix))]
fn default_permissions(file: &std::fs::File) -> Result<std::fs::Permissions> {
    Ok(file.metadata()?.permissions())
}

/// First eight bytes (little-endian) of the SHA-256 of `value`'s JSON form.
pub fn config_hash<T: Serialize>(value: &T) -> u64 {
    let json = serde_json::to_vec(value).expect("configuration serializes to JSON");
    let digest = Sha256::digest(&json);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn len32(&mut self, n: usize, what: &str) -> Result<()> {
        let n = u32::try_from(n)
            .map_err(|_| Error::InvalidArgument(format!("{what} too large: {n}")))?;
        self.u32(n);
        Ok(())
    }
    fn name(&mut self, s: &str) -> Result<()> {
        let n = u16::try_from(s.len())
            .map_err(|_| Error::InvalidArgument(format!("name too long: {s}")))?;
        self.u16(n);
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn blob(&mut self, bytes: &[u8]) -> Result<()> {
        self.len32(bytes.len(), "section")?;
        self.0.extend_from_slice(bytes);
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.what,
                    format!("truncated at byte {} (need {n} more)", self.pos),
                )
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(
            n.checked_mul(4)
                .ok_or_else(|| Error::format(self.what, "length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn name(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| Error::format(self.what, e.to_string()))
    }
    fn blob(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn magic(&mut self, magic: [u8; 4], version: u16) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.what, "bad magic"));
        }
        let v = self.u16()?;
        if v != version {
            return Err(Error::format(self.what, format!("unsupported version {v}")));
        }
        Ok(())
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_embeddings(set: &EmbeddingSet) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::with_capacity(15 + set.len() * (7 + 4 * set.dim())));
    w.0.extend_from_slice(&EMBEDDING_MAGIC);
    w.u16(EMBEDDING_VERSION);
    w.len32(set.len(), "record count")?;
    w.len32(set.dim(), "dimension")?;
    w.u8(match set.precision() {
        Precision::Binary32 => 0,
        Precision::Binary16 => 1,
    });
    for r in set.records() {
        w.u32(r.person_id);
        w.u16(r.camera_id);
        w.u8(r.role.code());
        w.f32s(&r.vector);
    }
    Ok(w.0)
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingSet> {
    let mut r = Reader::new(bytes, "embedding file");
    r.magic(EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let precision = match r.u8()? {
        0 => Precision::Binary32,
        1 => Precision::Binary16,
        f => {
            return Err(Error::format(
                "embedding file",
                format!("precision flag {f}"),
            ))
        }
    };
    let record_bytes = 7 + 4 * dim;
    let expected = count
        .checked_mul(record_bytes)
        .and_then(|b| b.checked_add(r.pos));
    if expected != Some(bytes.len()) {
        return Err(Error::format(
            "embedding file",
            format!(
                "{count} records of dimension {dim} do not fill {} bytes",
                bytes.len()
            ),
        ));
    }
    let mut set = EmbeddingSet::new(dim, precision);
    for _ in 0..count {
        let person_id = r.u32()?;
        let camera_id = r.u16()?;
        let code = r.u8()?;
        let role = Role::from_code(code)
            .ok_or_else(|| Error::format("embedding file", format!("role {code}")))?;
        let vector = r.f32s(dim)?;
        set.push(Record {
            person_id,
            camera_id,
            role,
            vector,
        })?;
    }
    r.finish()?;
    Ok(set)
}

pub fn write_embeddings(path: &Path, set: &EmbeddingSet) -> Result<()> {
    write_atomic(path, &encode_embeddings(set)?)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSet> {
    decode_embeddings(&std::fs::read(path)?)
}

/// Everything needed to resume or deploy a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    /// Training steps taken so far.
    pub step: u64,
    pub model: MixedModel,
    pub opt: AdamState,
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Result<Vec<u8>> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(&CHECKPOINT_MAGIC);
    w.u16(CHECKPOINT_VERSION);
    w.u64(ck.config_hash);
    w.u64(ck.step);
    let spec = serde_json::to_vec(&ck.model.spec)
        .map_err(|e| Error::format("checkpoint", e.to_string()))?;
    w.blob(&spec)?;
    w.blob(ck.model.plan.to_text().as_bytes())?;
    w.len32(ck.model.masters.len(), "tensor count")?;
    for (key, master) in &ck.model.masters {
        let (m, v) = match (ck.opt.m.get(key), ck.opt.v.get(key)) {
            (Some(m), Some(v)) if m.len() == master.len() && v.len() == master.len() => (m, v),
            _ => return Err(Error::ShapeMismatch(format!("optimizer state for `{key}`"))),
        };
        w.name(key)?;
        w.u8(master.shape().len() as u8);
        for &d in master.shape() {
            w.len32(d, "dimension")?;
        }
        w.f32s(master.data());
        w.f32s(m);
        w.f32s(v);
    }
    w.u64(ck.opt.t);
    w.f32s(&[ck.opt.beta1, ck.opt.beta2, ck.opt.eps]);
    w.len32(ck.model.bn.layers.len(), "batch-norm count")?;
    for (name, (mean, var)) in &ck.model.bn.layers {
        w.name(name)?;
        w.len32(mean.len(), "channels")?;
        w.f32s(mean);
        w.f32s(var);
    }
    Ok(w.0)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let config_hash = r.u64()?;
    let step = r.u64()?;
    let spec: NetworkSpec = serde_json::from_slice(r.blob()?)
        .map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let plan_text =
        std::str::from_utf8(r.blob()?).map_err(|e| Error::format("checkpoint", e.to_string()))?;
    let plan = PrecisionPlan::parse(plan_text)?;
    let count = r.u32()? as usize;
    let mut masters = ParamSet::new();
    let (mut m, mut v) = (IndexMap::new(), IndexMap::new());
    for _ in 0..count {
        let key = r.name()?;
        let rank = r.u8()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        masters.insert(key.clone(), Tensor::from_vec(shape, r.f32s(n)?)?);
        m.insert(key.clone(), r.f32s(n)?);
        v.insert(key, r.f32s(n)?);
    }
    let t = r.u64()?;
    let (beta1, beta2, eps) = (r.f32()?, r.f32()?, r.f32()?);
    let mut bn = BnStats::default();
    for _ in 0..r.u32()? {
        let name = r.name()?;
        let c = r.u32()? as usize;
        bn.layers.insert(name, (r.f32s(c)?, r.f32s(c)?));
    }
    r.finish()?;
    if bn
        .layers
        .keys()
        .ne(spec.batchnorm_layers().iter().map(|(n, _)| n))
    {
        return Err(Error::format(
            "checkpoint",
            "batch-norm layers do not match the network",
        ));
    }
    let model = MixedModel::from_parts(spec, plan, masters, Some(bn))?;
    Ok(Checkpoint {
        config_hash,
        step,
        model,
        opt: AdamState {
            m,
            v,
            t,
            beta1,
            beta2,
            eps,
        },
    })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&std::fs::read(path)?)
}
