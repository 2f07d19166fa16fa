//! Heatmap export: binary 16-bit PGM (`P5`) per channel plus CSV, with the
//! min-max scaling of every image recorded in a JSON sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transporter::{PickMaps, PlaceMap};

pub const PGM_MAXVAL: u16 = 65535;
pub const SIDECAR: &str = "maps.json";

/// Scaling of one exported image: `value = min + level / 65535 · (max − min)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedImage {
    pub map: String,
    pub channel: usize,
    pub pgm: String,
    pub csv: String,
    pub height: usize,
    pub width: usize,
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportSidecar {
    pub task: String,
    pub seed: u64,
    pub n: usize,
    pub images: Vec<ExportedImage>,
}

/// 16-bit big-endian `P5` image with levels min-max scaled to `0..=65535`.
/// A constant image maps to level 0. Returns the bytes and `(min, max)`.
pub fn encode_pgm(values: &[f32], height: usize, width: usize) -> Result<(Vec<u8>, f64, f64)> {
    if values.len() != height * width || values.is_empty() {
        return Err(Error::Shape(format!("{} values for a {height}x{width} image", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value in heatmap".into()));
    }
    let min = values.iter().fold(f64::INFINITY, |m, &v| m.min(v as f64));
    let max = values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let span = max - min;
    let mut out = format!("P5\n{width} {height}\n{PGM_MAXVAL}\n").into_bytes();
    for &v in values {
        let level = if span > 0.0 {
            ((v as f64 - min) / span * PGM_MAXVAL as f64).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    Ok((out, min, max))
}

/// Parses a 16-bit `P5` image written by [`encode_pgm`] into `(width, height, levels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u16>)> {
    let bad = |m: &str| Error::Format(format!("pgm: {m}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a P5 image"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != PGM_MAXVAL as usize {
        return Err(bad("expected 16-bit levels"));
    }
    let body = bytes.get(pos..).ok_or_else(|| bad("missing data"))?;
    if body.len() != 2 * width * height {
        return Err(bad("data length disagrees with header"));
    }
    let levels = body.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    Ok((width, height, levels))
}

/// One row per image row, comma-separated, shortest round-trip formatting.
pub fn encode_csv(values: &[f32], width: usize) -> String {
    let mut out = String::new();
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

fn write_image(dir: &Path, map: &str, channel: Option<usize>, values: &[f32], height: usize, width: usize) -> Result<ExportedImage> {
    let stem = match channel {
        Some(c) => format!("{map}_{c:02}"),
        None => map.to_string(),
    };
    let (pgm, min, max) = encode_pgm(values, height, width)?;
    let (pgm_name, csv_name) = (format!("{stem}.pgm"), format!("{stem}.csv"));
    fs::write(dir.join(&pgm_name), pgm)?;
    fs::write(dir.join(&csv_name), encode_csv(values, width))?;
    Ok(ExportedImage {
        map: map.to_string(),
        channel: channel.unwrap_or(0),
        pgm: pgm_name,
        csv: csv_name,
        height,
        width,
        min,
        max,
    })
}

/// Writes `p(u,v)`, `p(θ|u,v)` at the chosen pick and one image per rotation
/// channel of `p(a_place)`, then the sidecar. Returns the sidecar path.
pub fn export_maps(dir: &Path, task: &str, seed: u64, pick: &PickMaps<f32>, place: &PlaceMap<f32>) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = &pick.position;
    let mut images = vec![
        write_image(dir, "pick_position", None, p.data(), p.height(), p.width())?,
        write_image(dir, "pick_angle", None, &pick.angle, 1, pick.angle.len())?,
    ];
    let m = &place.data;
    for c in 0..m.channels() {
        images.push(write_image(dir, "place", Some(c), m.channel(c), m.height(), m.width())?);
    }
    let sidecar = ExportSidecar {
        task: task.to_string(),
        seed,
        n: m.channels(),
        images,
    };
    let path = dir.join(SIDECAR);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n")?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_and_scaling() {
        let v = [0.0f32, 0.25, 0.5, 1.0, 2.0, 4.0];
        let (bytes, min, max) = encode_pgm(&v, 2, 3).unwrap();
        assert_eq!((min, max), (0.0, 4.0));
        assert!(bytes.starts_with(b"P5\n3 2\n65535\n"));
        let (w, h, levels) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (3, 2));
        assert_eq!(levels[0], 0);
        assert_eq!(levels[5], 65535);
        assert_eq!(levels[4], 32768);
    }

    #[test]
    fn constant_image_is_black() {
        let (bytes, min, max) = encode_pgm(&[0.5f32; 4], 2, 2).unwrap();
        assert_eq!(min, max);
        assert!(decode_pgm(&bytes).unwrap().2.iter().all(|&l| l == 0));
    }

    #[test]
    fn pgm_errors() {
        assert!(encode_pgm(&[1.0f32; 3], 2, 2).is_err());
        assert!(encode_pgm(&[f32::NAN; 4], 2, 2).is_err());
        assert!(decode_pgm(b"P2\n1 1\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 1\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n1").is_err());
    }

    #[test]
    fn csv_rows() {
        assert_eq!(encode_csv(&[1.0, 0.5, -2.0, 3.0], 2), "1,0.5\n-2,3\n");
    }
}
