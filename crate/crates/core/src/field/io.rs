//! `ETPF` field container: magic, `u32` header length, JSON header, then
//! little-endian `f32` values in row-major `channels × height × width` order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{FeatureField, FieldType};
use crate::error::{Error, Result};
use crate::group::{RepKind, Representation};

pub const FIELD_MAGIC: &[u8; 4] = b"ETPF";

#[derive(Debug, Serialize, Deserialize)]
struct FieldHeader {
    shape: [usize; 3],
    rep_kind: String,
    n: usize,
    k: Option<usize>,
    multiplicity: usize,
}

pub fn write_field<W: Write>(mut w: W, field: &FeatureField<f32>) -> Result<()> {
    let rep = field.rep();
    let (rep_kind, k) = match rep.kind {
        RepKind::Trivial => ("trivial", None),
        RepKind::Standard => ("standard", None),
        RepKind::Regular => ("regular", None),
        RepKind::Quotient { k } => ("quotient", Some(k)),
    };
    let header = FieldHeader {
        shape: [field.channels(), field.height(), field.width()],
        rep_kind: rep_kind.to_string(),
        n: rep.n,
        k,
        multiplicity: field.ftype().multiplicity,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let mut bytes = Vec::with_capacity(field.data().len() * 4);
    for v in field.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

pub(crate) fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Format(format!("truncated {what}"))
        } else {
            Error::Io(e)
        }
    })
}

pub fn read_field<R: Read>(mut r: R) -> Result<FeatureField<f32>> {
    let mut magic = [0u8; 4];
    read_exact_or(&mut r, &mut magic, "field magic")?;
    if &magic != FIELD_MAGIC {
        return Err(Error::Format(format!("bad field magic {magic:?}")));
    }
    let mut len = [0u8; 4];
    read_exact_or(&mut r, &mut len, "field header length")?;
    let len = u32::from_le_bytes(len) as usize;
    if len > 1 << 20 {
        return Err(Error::Format("field header too large".into()));
    }
    let mut json = vec![0u8; len];
    read_exact_or(&mut r, &mut json, "field header")?;
    let header: FieldHeader = serde_json::from_slice(&json)?;
    let kind = match (header.rep_kind.as_str(), header.k) {
        ("trivial", _) => RepKind::Trivial,
        ("standard", _) => RepKind::Standard,
        ("regular", _) => RepKind::Regular,
        ("quotient", Some(k)) => RepKind::Quotient { k },
        (other, _) => return Err(Error::Format(format!("unknown representation {other}"))),
    };
    let rep = Representation::checked(kind, header.n).map_err(|e| Error::Format(e.to_string()))?;
    let ftype = FieldType::new(rep, header.multiplicity);
    let [c, h, w] = header.shape;
    if ftype.channels() != c {
        return Err(Error::Format(format!("header shape {c} channels disagrees with {ftype}")));
    }
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .filter(|&v| v <= 1 << 28)
        .ok_or_else(|| Error::Format("field too large".into()))?;
    let mut bytes = vec![0u8; count * 4];
    read_exact_or(&mut r, &mut bytes, "field data")?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureField::new(ftype, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let t = FieldType::quotient(8, 2, 3).unwrap();
        let f = FeatureField::from_fn(t, 4, 5, |c, r, col| ((c * 31 + r * 7 + col) as f32).sin() * 1e-3);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(&buf[..4], FIELD_MAGIC);
        let back = read_field(&buf[..]).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn truncation_and_magic_errors() {
        let f = FeatureField::<f32>::zeros(FieldType::trivial(1, 1).unwrap(), 2, 2);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert!(matches!(read_field(&buf[..buf.len() - 1]), Err(Error::Format(_))));
        buf[0] = b'X';
        assert!(matches!(read_field(&buf[..]), Err(Error::Format(_))));
    }
}
