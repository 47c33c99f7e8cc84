//! Binary container for trained adapter stacks.
//!
//! Layout: the magic `OHAD`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then the tensor
//! payload as little-endian `f64` in row-major order. Tensor offsets in the
//! header count `f64` elements from the start of the payload.

use std::io::{Read, Write};
use std::path::Path;

use ortho_hydra_core::adapter::AdapterState;
use ortho_hydra_core::router::RouterConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"OHAD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHeader {
    pub variant: String,
    pub experts: usize,
    pub rank: usize,
    pub alpha: f64,
    pub d_in: usize,
    pub d_out: usize,
    pub fallback_shared_basis: bool,
    pub router: RouterConfig,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub layers: Vec<LayerHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: Header,
    pub payload: Vec<f64>,
}

impl Container {
    pub fn from_stack(layers: &[AdapterState]) -> Self {
        let mut payload = Vec::new();
        let mut headers = Vec::new();
        for st in layers {
            let tensors = st
                .named_tensors()
                .into_iter()
                .map(|(name, shape, data)| {
                    let offset = payload.len();
                    payload.extend_from_slice(data);
                    TensorEntry { name, shape, offset }
                })
                .collect();
            headers.push(LayerHeader {
                variant: st.variant.name().to_string(),
                experts: st.experts,
                rank: st.rank,
                alpha: st.alpha,
                d_in: st.d_in(),
                d_out: st.d_out(),
                fallback_shared_basis: st.fallback_shared_basis,
                router: st.router.config.clone(),
                tensors,
            });
        }
        Self {
            header: Header { layers: headers },
            payload,
        }
    }

    /// Elements of one tensor, by layer and name.
    pub fn tensor(&self, layer: usize, name: &str) -> Option<&[f64]> {
        let entry = self.header.layers.get(layer)?.tensors.iter().find(|t| t.name == name)?;
        let len: usize = entry.shape.iter().product();
        self.payload.get(entry.offset..entry.offset + len)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header is serializable");
        let mut out = Vec::with_capacity(16 + header.len() + 8 * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| CliError::Container(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing OHAD magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < hlen || (body.len() - hlen) % 8 != 0 {
            return Err(bad("truncated container"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&e.to_string()))?;
        let payload: Vec<f64> = body[hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        for layer in &header.layers {
            for t in &layer.tensors {
                let len: usize = t.shape.iter().product();
                if t.offset + len > payload.len() {
                    return Err(bad(&format!("tensor {} runs past the payload", t.name)));
                }
            }
        }
        Ok(Self { header, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
