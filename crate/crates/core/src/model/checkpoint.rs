//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `b"MHQGCKPT"`, `u32` format version, `u64` header length, JSON header,
//! `u64` array count, then per array: `u32` name length, UTF-8 name,
//! `u64` rows, `u64` cols, `rows · cols` `f64` values.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Adam, AdamState, Matrix, Params, RngState};

const MAGIC: &[u8; 8] = b"MHQGCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    /// `"generator"` or `"qa"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub vocab_hash: String,
    pub rng_state: Option<RngState>,
    pub epoch: usize,
    pub step: u64,
    pub adam: Option<AdamMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamMeta {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: BTreeMap<String, Matrix>,
}

fn adam_key(moment: &str, name: &str) -> String {
    format!("adam.{moment}.{name}")
}

impl Checkpoint {
    /// Snapshot of `params` and, optionally, optimizer moments.
    pub fn capture<P: Params + ?Sized>(mut header: CheckpointHeader, params: &P, adam: Option<&Adam>) -> Self {
        let mut arrays = BTreeMap::new();
        for (name, p) in params.named_params() {
            arrays.insert(name, p.value.clone());
        }
        header.adam = None;
        if let Some(adam) = adam {
            for (name, s) in adam.states() {
                arrays.insert(adam_key("m", name), s.m.clone());
                arrays.insert(adam_key("v", name), s.v.clone());
            }
            let step_count = adam.states().first().map_or(0, |(_, s)| s.step_count);
            header.adam = Some(AdamMeta {
                lr: adam.config.lr,
                beta1: adam.config.beta1,
                beta2: adam.config.beta2,
                eps: adam.config.eps,
                step_count,
            });
        }
        header.format_version = FORMAT_VERSION;
        Self { header, arrays }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| Error::json("checkpoint header", e))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u64).to_le_bytes());
        for (name, m) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(read_array(&mut r)?);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = read_len(&mut r)?;
        let header: CheckpointHeader =
            serde_json::from_slice(take(&mut r, header_len)?).map_err(|e| Error::json("checkpoint header", e))?;
        let count = read_len(&mut r)?;
        let mut arrays = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32::from_le_bytes(read_array(&mut r)?) as usize;
            let name = String::from_utf8(take(&mut r, name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let rows = read_len(&mut r)?;
            let cols = read_len(&mut r)?;
            let n = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| Error::Checkpoint(format!("array {name} too large")))?;
            let data = take(&mut r, n)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            arrays.insert(name, Matrix::new(rows, cols, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self { header, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies the stored arrays into `params`. Every parameter must be
    /// present with its exact shape and no unknown non-optimizer arrays may
    /// remain.
    pub fn restore<P: Params + ?Sized>(&self, params: &mut P) -> Result<()> {
        let mut seen = 0;
        for (name, p) in params.named_params_mut() {
            let stored = self
                .arrays
                .get(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
            if stored.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "array {name}: stored shape {:?}, model expects {:?}",
                    stored.shape(),
                    p.value.shape()
                )));
            }
            p.value = stored.clone();
            p.zero_grad();
            seen += 1;
        }
        let model_arrays = self.arrays.keys().filter(|k| !k.starts_with("adam.")).count();
        if model_arrays != seen {
            let known: Vec<String> = params.named_params().into_iter().map(|(n, _)| n).collect();
            let extra: Vec<&String> = self
                .arrays
                .keys()
                .filter(|k| !k.starts_with("adam.") && !known.contains(k))
                .collect();
            return Err(Error::Checkpoint(format!("unexpected arrays {extra:?}")));
        }
        Ok(())
    }

    /// Rebuilds optimizer state for `params` if moments were saved.
    pub fn restore_adam<P: Params + ?Sized>(&self, params: &P, adam: &mut Adam) -> Result<()> {
        let Some(meta) = self.header.adam else {
            return Ok(());
        };
        let mut states = Vec::new();
        for (name, p) in params.named_params() {
            let get = |moment: &str| {
                let key = adam_key(moment, &name);
                let m = self
                    .arrays
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing array {key}")))?;
                if m.shape() != p.value.shape() {
                    return Err(Error::Checkpoint(format!("array {key} has wrong shape")));
                }
                Ok(m.clone())
            };
            states.push((
                name.clone(),
                AdamState {
                    m: get("m")?,
                    v: get("v")?,
                    step_count: meta.step_count,
                    lr: meta.lr,
                    beta1: meta.beta1,
                    beta2: meta.beta2,
                    eps: meta.eps,
                },
            ));
        }
        adam.config.lr = meta.lr;
        adam.config.beta1 = meta.beta1;
        adam.config.beta2 = meta.beta2;
        adam.config.eps = meta.eps;
        adam.restore_states(states);
        Ok(())
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of file".into()))
}

fn read_array<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn read_len(r: &mut &[u8]) -> Result<usize> {
    usize::try_from(u64::from_le_bytes(read_array(r)?))
        .map_err(|_| Error::Checkpoint("length does not fit in memory".into()))
}

fn take<'a>(r: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if r.len() < n {
        return Err(Error::Checkpoint("unexpected end of file".into()));
    }
    let (head, tail) = r.split_at(n);
    *r = tail;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Seq2Seq};
    use crate::numeric::{AdamConfig, Rng};

    fn header() -> CheckpointHeader {
        CheckpointHeader {
            format_version: FORMAT_VERSION,
            kind: "generator".into(),
            config: serde_json::json!({}),
            vocab_hash: "abc".into(),
            rng_state: Some(Rng::new(3).state()),
            epoch: 2,
            step: 17,
            adam: None,
        }
    }

    #[test]
    fn round_trip_bit_identical() {
        let mut m = Seq2Seq::init(ModelConfig::grad_check(15)).unwrap();
        for (_, p) in m.named_params_mut() {
            p.grad.fill(0.01);
        }
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut m).unwrap();
        let ck = Checkpoint::capture(header(), &m, Some(&adam));
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.header.step, 17);
        assert_eq!(back.header.adam.unwrap().step_count, 1);
        let mut fresh = Seq2Seq::init(ModelConfig { seed: 9, ..ModelConfig::grad_check(15) }).unwrap();
        back.restore(&mut fresh).unwrap();
        let mut adam2 = Adam::new(AdamConfig::default());
        back.restore_adam(&fresh, &mut adam2).unwrap();
        assert_eq!(Checkpoint::capture(header(), &fresh, Some(&adam2)).to_bytes().unwrap(), bytes);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let m = Seq2Seq::init(ModelConfig::grad_check(15)).unwrap();
        let ck = Checkpoint::capture(header(), &m, None);
        let mut other = Seq2Seq::init(ModelConfig::grad_check(16)).unwrap();
        let err = ck.restore(&mut other).unwrap_err().to_string();
        assert!(err.contains("token_embedding"), "{err}");
    }

    #[test]
    fn truncated_file_rejected() {
        let m = Seq2Seq::init(ModelConfig::grad_check(15)).unwrap();
        let bytes = Checkpoint::capture(header(), &m, None).to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
