//! `ETPD` dataset container: magic, `u32` version, `u32` episode count, then
//! per episode a `u32`-length-prefixed JSON action record followed by the
//! observation in `ETPF` form. Integers are little-endian.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Task;
use crate::error::{Error, Result};
use crate::field::io::read_exact_or;
use crate::field::{read_field, write_field};
use crate::transporter::{Demonstration, PickAction, PlaceAction};

pub const DATASET_MAGIC: &[u8; 4] = b"ETPD";
pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub task: Task,
    pub seed: u64,
    pub demo: Demonstration,
}

#[derive(Serialize, Deserialize)]
struct Record {
    task: Task,
    seed: u64,
    pick: PickAction,
    place: PlaceAction,
}

pub fn write_dataset<W: Write>(mut w: W, episodes: &[Episode]) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(episodes.len() as u32).to_le_bytes())?;
    for e in episodes {
        let json = serde_json::to_vec(&Record {
            task: e.task,
            seed: e.seed,
            pick: e.demo.pick,
            place: e.demo.place,
        })?;
        w.write_all(&(json.len() as u32).to_le_bytes())?;
        w.write_all(&json)?;
        write_field(&mut w, &e.demo.observation)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Vec<Episode>> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "dataset magic")?;
    if &magic != DATASET_MAGIC {
        return Err(Error::Format(format!("bad dataset magic {magic:?}")));
    }
    let version = read_u32(&mut r, "dataset version")?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let count = read_u32(&mut r, "episode count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = read_u32(&mut r, "record length")? as usize;
        if len > 1 << 20 {
            return Err(Error::Format("action record too large".into()));
        }
        let mut json = vec![0u8; len];
        read_exact_or(&mut r, &mut json, "action record")?;
        let rec: Record = serde_json::from_slice(&json)?;
        let observation = read_field(&mut r)?;
        out.push(Episode {
            task: rec.task,
            seed: rec.seed,
            demo: Demonstration {
                observation,
                pick: rec.pick,
                place: rec.place,
            },
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after last episode".into()));
    }
    Ok(out)
}

pub fn digest_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of the serialized dataset.
pub fn dataset_digest(episodes: &[Episode]) -> Result<String> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, episodes)?;
    Ok(digest_hex(&buf))
}
