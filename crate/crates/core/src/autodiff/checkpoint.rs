//! Checkpoint layout: a directory holding
//!
//! * `params.bin`: `DTCKPT01`, a little-endian `u32` entry count, then per
//!   entry a `u32` name length, the UTF-8 name, a `u32` rank, `u64` extents
//!   and the little-endian `f64` payload. Adam moments are stored as
//!   `adam.m/<name>` and `adam.v/<name>`.
//! * `manifest.json`: config hash, step counter, Adam hyperparameters and a
//!   free-form `extra` object owned by the caller.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AdamConfig, AdamState, ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"DTCKPT01";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub config_hash: String,
    pub step: u64,
    pub params: Vec<String>,
    pub adam: Option<AdamManifest>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamManifest {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamStore,
    pub adam: Option<AdamState>,
    pub manifest: Manifest,
}

/// Hex SHA-256 of any serializable config.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn write_archive(path: &Path, entries: &[(String, &Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated archive".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_archive(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|_| Error::MissingPath(path.to_path_buf()))?
        .read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let count = cur.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(len)?)
            .map_err(|_| Error::Checkpoint("non-UTF-8 name".into()))?
            .to_string();
        let rank = cur.u32()? as usize;
        let shape = (0..rank)
            .map(|_| cur.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = cur
            .take(n * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore,
    adam: Option<&AdamState>,
    config_hash: &str,
    step: u64,
    extra: serde_json::Value,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries: Vec<(String, &Tensor)> =
        params.iter().map(|(_, n, t)| (n.to_string(), t)).collect();
    if let Some(st) = adam {
        for (id, name, _) in params.iter() {
            entries.push((format!("adam.m/{name}"), &st.m[id.0]));
        }
        for (id, name, _) in params.iter() {
            entries.push((format!("adam.v/{name}"), &st.v[id.0]));
        }
    }
    write_archive(&dir.join(PARAMS_FILE), &entries)?;
    let manifest = Manifest {
        format: 1,
        config_hash: config_hash.to_string(),
        step,
        params: params.iter().map(|(_, n, _)| n.to_string()).collect(),
        adam: adam.map(|st| AdamManifest {
            config: st.config,
            step: st.step,
        }),
        extra,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text =
        fs::read_to_string(&manifest_path).map_err(|_| Error::MissingPath(manifest_path.clone()))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let mut archive: std::collections::HashMap<String, Tensor> =
        read_archive(&dir.join(PARAMS_FILE))?.into_iter().collect();

    let mut params = ParamStore::new();
    for name in &manifest.params {
        let t = archive
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        params.insert(name.clone(), t)?;
    }
    let adam = match &manifest.adam {
        None => None,
        Some(am) => {
            let mut st = AdamState::new(am.config, &params);
            st.step = am.step;
            for (id, name, t) in params.iter() {
                for (prefix, slot) in [("adam.m/", &mut st.m), ("adam.v/", &mut st.v)] {
                    let key = format!("{prefix}{name}");
                    let m = archive
                        .remove(&key)
                        .ok_or_else(|| Error::Checkpoint(format!("missing {key}")))?;
                    if m.shape() != t.shape() {
                        return Err(Error::Checkpoint(format!("shape of {key}")));
                    }
                    slot[id.0] = m;
                }
            }
            Some(st)
        }
    };
    if let Some(name) = archive.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected entry {name}")));
    }
    Ok(Checkpoint {
        params,
        adam,
        manifest,
    })
}
