//! `ETPC` checkpoint container: magic, `u32` header length, JSON header, then
//! for every network its parameters, first moments and second moments as
//! little-endian `f32` arrays in declaration order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::network::{Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::field::io::read_exact_or;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ETPC";

/// A network with its optimizer state, stored under a role name such as `"pick"`.
#[derive(Clone, Debug)]
pub struct TrainedNetwork {
    pub role: String,
    pub net: Network<f32>,
    pub adam: AdamState<f32>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub networks: Vec<TrainedNetwork>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn get(&self, role: &str) -> Result<&TrainedNetwork> {
        self.networks
            .iter()
            .find(|t| t.role == role)
            .ok_or_else(|| Error::Format(format!("checkpoint has no network {role:?}")))
    }
}

#[derive(Serialize, Deserialize)]
struct EntryHeader {
    role: String,
    spec: NetworkSpec,
    adam: AdamConfig,
    adam_step: u64,
    param_lens: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    networks: Vec<EntryHeader>,
    meta: serde_json::Value,
}

fn write_arrays<W: Write>(w: &mut W, arrays: &[Vec<f32>]) -> Result<()> {
    let mut bytes = Vec::new();
    for v in arrays.iter().flatten() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_arrays<R: Read>(r: &mut R, lens: &[usize]) -> Result<Vec<Vec<f32>>> {
    lens.iter()
        .map(|&len| {
            if len > 1 << 28 {
                return Err(Error::Format("parameter array too large".into()));
            }
            let mut bytes = vec![0u8; len * 4];
            read_exact_or(r, &mut bytes, "checkpoint arrays")?;
            Ok(bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect())
        })
        .collect()
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        networks: ckpt
            .networks
            .iter()
            .map(|t| EntryHeader {
                role: t.role.clone(),
                spec: t.net.spec().clone(),
                adam: t.adam.config,
                adam_step: t.adam.step,
                param_lens: t.net.params().iter().map(Vec::len).collect(),
            })
            .collect(),
        meta: ckpt.meta.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &ckpt.networks {
        write_arrays(&mut w, t.net.params())?;
        write_arrays(&mut w, &t.adam.m)?;
        write_arrays(&mut w, &t.adam.v)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "checkpoint magic")?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    read_exact_or(&mut r, &mut len, "checkpoint header length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 24 {
        return Err(Error::Format("checkpoint header too large".into()));
    }
    let mut json = vec![0u8; len];
    read_exact_or(&mut r, &mut json, "checkpoint header")?;
    let header: Header = serde_json::from_slice(&json)?;
    let mut networks = Vec::with_capacity(header.networks.len());
    for e in header.networks {
        let params = read_arrays(&mut r, &e.param_lens)?;
        let m = read_arrays(&mut r, &e.param_lens)?;
        let v = read_arrays(&mut r, &e.param_lens)?;
        let net = Network::from_params(e.spec, params).map_err(|err| Error::Format(err.to_string()))?;
        networks.push(TrainedNetwork {
            role: e.role,
            net,
            adam: AdamState {
                config: e.adam,
                step: e.adam_step,
                m,
                v,
            },
        });
    }
    Ok(Checkpoint {
        networks,
        meta: header.meta,
    })
}
