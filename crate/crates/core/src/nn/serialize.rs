//! Versioned binary model files.
//!
//! Layout: `MAGIC`, `u32` version, `u32` header length, JSON header, `u32`
//! block count, then per parameter block a `u64` length followed by that
//! many little-endian `f64` values. All integers are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LayerSpec, NnError, Parameterized, Result};

pub const MAGIC: [u8; 4] = *b"NRNN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub kind: String,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_params(w: &mut impl Write, header: &ModelHeader, model: &impl Parameterized) -> Result<()> {
    let mut blocks = Vec::new();
    model.visit_params(&mut |p| blocks.push(p.value.clone()));
    let refs: Vec<&[f64]> = blocks.iter().map(Vec::as_slice).collect();
    write_raw(w, header, &refs)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Reads a whole model file without validating it against a model.
pub fn read_raw(r: &mut impl Read) -> Result<(ModelHeader, Vec<Vec<f64>>)> {
    let header = read_header(r)?;
    let count = read_u32(r)? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u64(r)? as usize;
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        blocks.push(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
    }
    Ok((header, blocks))
}

/// Writes raw blocks under a header (for models that are not [`Parameterized`]).
pub fn write_raw(w: &mut impl Write, header: &ModelHeader, blocks: &[&[f64]]) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| NnError::Format(e.to_string()))?;
    w.write_all(&MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(blocks.len() as u32).to_le_bytes())?;
    for block in blocks {
        w.write_all(&(block.len() as u64).to_le_bytes())?;
        for v in block.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_header(r: &mut impl Read) -> Result<ModelHeader> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(NnError::Format("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != FORMAT_VERSION {
        return Err(NnError::Format(format!("unsupported version {version}")));
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    serde_json::from_slice(&json).map_err(|e| NnError::Format(e.to_string()))
}

/// Reads a model file into `model`, rejecting any header whose kind or
/// layer list differs from `expected`, or whose blocks do not line up.
pub fn read_params(r: &mut impl Read, expected: &ModelHeader, model: &mut impl Parameterized) -> Result<ModelHeader> {
    let header = read_header(r)?;
    if header.kind != expected.kind || header.layers != expected.layers {
        return Err(NnError::Format(format!(
            "layer spec mismatch: file has {} {:?}, expected {} {:?}",
            header.kind, header.layers, expected.kind, expected.layers
        )));
    }
    let mut lens = Vec::new();
    model.visit_params(&mut |p| lens.push(p.len()));
    let count = read_u32(r)? as usize;
    if count != lens.len() {
        return Err(NnError::Format(format!("expected {} blocks, file has {count}", lens.len())));
    }
    let mut flat = Vec::with_capacity(lens.iter().sum());
    for &want in &lens {
        let got = read_u64(r)? as usize;
        if got != want {
            return Err(NnError::Format(format!("block length {got}, expected {want}")));
        }
        let mut buf = vec![0u8; got * 8];
        r.read_exact(&mut buf)?;
        flat.extend(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))));
    }
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("model file parameters".into()));
    }
    model.set_flat_params(&flat)?;
    Ok(header)
}

pub fn save_params(path: &Path, header: &ModelHeader, model: &impl Parameterized) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_params(&mut w, header, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_params(path: &Path, expected: &ModelHeader, model: &mut impl Parameterized) -> Result<ModelHeader> {
    let mut r = BufReader::new(File::open(path)?);
    read_params(&mut r, expected, model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Dense, Layer, Sequential};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(seed: u64, hidden: usize) -> Sequential {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Sequential::new(
            vec![3],
            vec![
                Layer::Dense(Dense::new(3, hidden, &mut rng)),
                Layer::relu(),
                Layer::Dense(Dense::new(hidden, 2, &mut rng)),
            ],
        )
        .unwrap()
    }

    fn header(n: &Sequential) -> ModelHeader {
        ModelHeader {
            kind: "test".into(),
            layers: n.specs(),
            meta: serde_json::Value::Null,
        }
    }

    #[test]
    fn round_trip_restores_parameters() {
        let a = net(1, 4);
        let mut buf = Vec::new();
        write_params(&mut buf, &header(&a), &a).unwrap();
        let mut b = net(2, 4);
        read_params(&mut buf.as_slice(), &header(&b), &mut b).unwrap();
        assert_eq!(a.flat_params(), b.flat_params());
    }

    #[test]
    fn mismatched_spec_is_rejected() {
        let a = net(1, 4);
        let mut buf = Vec::new();
        write_params(&mut buf, &header(&a), &a).unwrap();
        let mut c = net(3, 5);
        let h = header(&c);
        assert!(matches!(read_params(&mut buf.as_slice(), &h, &mut c), Err(NnError::Format(_))));
    }

    #[test]
    fn corrupt_magic_is_rejected() {
        let a = net(1, 4);
        let mut buf = Vec::new();
        write_params(&mut buf, &header(&a), &a).unwrap();
        buf[0] = b'X';
        let mut b = net(1, 4);
        assert!(read_params(&mut buf.as_slice(), &header(&a), &mut b).is_err());
    }
}
