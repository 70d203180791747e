//! Binary model file.
//!
//! ```text
//! magic        4 bytes  "AFGM"
//! version      u32 LE
//! payload_len  u64 LE
//! payload      payload_len bytes
//! checksum     32 bytes, SHA-256 of payload
//! ```
//!
//! All payload integers are u64 LE and all reals f64 LE. Payload fields in
//! order: train config (epochs, class_weight_fussy, learning_rate,
//! adam_beta1, adam_beta2, adam_epsilon, batch_size, seed, branch_width,
//! embedding_width, top_k), window config (short_s, long_face_s,
//! long_body_s, success_fraction, max_long_s, bin_width_s), fold_id,
//! group count, then per group: group id, k, and k records of
//! (index, t, df, p, mean, std); finally the parameter count and the flat
//! parameter vector in network order.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{GroupedModel, Network, Standardization, TrainConfig};
use crate::error::{Error, Result};
use crate::preprocess::FeatureGroupId;
use crate::select::{FeatureSelection, FeatureTest, GroupSelection};
use crate::windows::WindowConfig;

pub const MAGIC: [u8; 4] = *b"AFGM";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

struct Enc(Vec<u8>);

impl Enc {
    fn u(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Dec<'_> {
    fn take8(&mut self) -> Result<[u8; 8]> {
        let bytes = self
            .buf
            .get(self.pos..self.pos + 8)
            .ok_or_else(|| Error::CorruptFile("payload ends early".into()))?;
        self.pos += 8;
        Ok(bytes.try_into().expect("slice of length 8"))
    }
    fn u(&mut self) -> Result<u64> {
        self.take8().map(u64::from_le_bytes)
    }
    fn size(&mut self) -> Result<usize> {
        let v = self.u()?;
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile(format!("implausible size {v}")))
    }
    fn f(&mut self) -> Result<f64> {
        self.take8().map(f64::from_le_bytes)
    }
}

fn encode_payload(model: &GroupedModel) -> Vec<u8> {
    let mut e = Enc(Vec::new());
    let t = &model.train_config;
    e.u(t.epochs as u64);
    e.f(t.class_weight_fussy);
    e.f(t.learning_rate);
    e.f(t.adam_beta1);
    e.f(t.adam_beta2);
    e.f(t.adam_epsilon);
    e.u(t.batch_size as u64);
    e.u(t.seed);
    e.u(t.branch_width as u64);
    e.u(t.embedding_width as u64);
    e.u(t.top_k as u64);
    let w = &model.window_config;
    for v in [w.short_s, w.long_face_s, w.long_body_s, w.success_fraction, w.max_long_s, w.bin_width_s] {
        e.f(v);
    }
    e.u(model.selection.fold_id as u64);
    e.u(model.groups.len() as u64);
    for (gs, stats) in model.selection.groups.iter().zip(&model.standardization.per_group) {
        e.u(gs.group.index() as u64);
        e.u(gs.chosen.len() as u64);
        for (c, (mean, std)) in gs.chosen.iter().zip(stats) {
            e.u(c.index as u64);
            e.f(c.t);
            e.f(c.df);
            e.f(c.p);
            e.f(*mean);
            e.f(*std);
        }
    }
    e.u(model.network.params.len() as u64);
    for &p in &model.network.params {
        e.f(p);
    }
    e.0
}

fn decode_payload(buf: &[u8]) -> Result<GroupedModel> {
    let mut d = Dec { buf, pos: 0 };
    let train_config = TrainConfig {
        epochs: d.u()? as usize,
        class_weight_fussy: d.f()?,
        learning_rate: d.f()?,
        adam_beta1: d.f()?,
        adam_beta2: d.f()?,
        adam_epsilon: d.f()?,
        batch_size: d.u()? as usize,
        seed: d.u()?,
        branch_width: d.size()?,
        embedding_width: d.size()?,
        top_k: d.u()? as usize,
    };
    let window_config = WindowConfig {
        short_s: d.f()?,
        long_face_s: d.f()?,
        long_body_s: d.f()?,
        success_fraction: d.f()?,
        max_long_s: d.f()?,
        bin_width_s: d.f()?,
    };
    let fold_id = d.u()? as usize;
    let n_groups = d.size()?;
    let mut groups = Vec::with_capacity(n_groups);
    let mut selection = Vec::with_capacity(n_groups);
    let mut per_group = Vec::with_capacity(n_groups);
    for _ in 0..n_groups {
        let gid = d.u()?;
        let group = FeatureGroupId::from_index(gid as usize)
            .ok_or_else(|| Error::CorruptFile(format!("unknown feature group {gid}")))?;
        let k = d.size()?;
        let mut chosen = Vec::with_capacity(k);
        let mut stats = Vec::with_capacity(k);
        for _ in 0..k {
            chosen.push(FeatureTest {
                index: d.u()? as usize,
                t: d.f()?,
                df: d.f()?,
                p: d.f()?,
            });
            stats.push((d.f()?, d.f()?));
        }
        groups.push(group);
        selection.push(GroupSelection { group, chosen });
        per_group.push(stats);
    }
    let widths: Vec<usize> = selection.iter().map(|g| g.chosen.len()).collect();
    let mut network = Network::zeros(widths, train_config.branch_width, train_config.embedding_width);
    let n_params = d.size()?;
    if n_params != network.n_params() {
        return Err(Error::CorruptFile(format!(
            "{n_params} parameters stored, architecture needs {}",
            network.n_params()
        )));
    }
    for p in network.params.iter_mut() {
        *p = d.f()?;
    }
    if d.pos != buf.len() {
        return Err(Error::CorruptFile("trailing bytes in payload".into()));
    }
    Ok(GroupedModel {
        groups,
        selection: FeatureSelection {
            fold_id,
            groups: selection,
        },
        standardization: Standardization { per_group },
        network,
        train_config,
        window_config,
    })
}

pub fn write_model<W: Write>(model: &GroupedModel, mut out: W) -> Result<()> {
    let payload = encode_payload(model);
    out.write_all(&MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(payload.len() as u64).to_le_bytes())?;
    out.write_all(&payload)?;
    out.write_all(&Sha256::digest(&payload))?;
    out.flush()?;
    Ok(())
}

pub fn read_model<R: Read>(mut input: R) -> Result<GroupedModel> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptFile("file shorter than its header".into()));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::CorruptFile("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version > FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(Error::CorruptFile("version 0".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN as u64).checked_add(len).and_then(|v| v.checked_add(CHECKSUM_LEN as u64));
    if expected != Some(bytes.len() as u64) {
        return Err(Error::CorruptFile(format!(
            "file is {} bytes, header declares a {len}-byte payload",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + len as usize];
    let checksum = &bytes[HEADER_LEN + len as usize..];
    if Sha256::digest(payload).as_slice() != checksum {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }
    decode_payload(payload)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_model(model: &GroupedModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    crate::eval::write_atomic(path, &buf)
}

pub fn load_model(path: &Path) -> Result<GroupedModel> {
    read_model(std::fs::File::open(path)?)
}
