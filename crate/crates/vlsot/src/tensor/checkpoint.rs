//! Checkpoint format: a self-describing binary map from parameter name to
//! (shape, f64 values). Layout, all integers little-endian:
//!
//! ```text
//! magic  b"VLSOTCK1"
//! u32    metadata byte length, then that many UTF-8 bytes (config text)
//! u64    entry count
//! entry: u32 name length, name bytes,
//!        u32 rank, u64 * rank extents,
//!        f64 * numel values (IEEE 754 bit patterns)
//! ```
//!
//! Values round-trip bit-exactly at 64-bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::params::ParamSet;
use super::Tensor;

const MAGIC: &[u8; 8] = b"VLSOTCK1";

pub fn save_checkpoint(path: &Path, metadata: &str, params: &ParamSet) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    let meta = metadata.as_bytes();
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for p in params.iter() {
        let name = p.name().as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let shape = p.value().shape();
        w.write_all(&(shape.len() as u32).to_le_bytes())?;
        for &d in shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in p.value().data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::dataset(path, "not a checkpoint file (bad magic)"));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta)?;
    let metadata = String::from_utf8(meta)
        .map_err(|_| Error::dataset(path, "checkpoint metadata is not UTF-8"))?;
    let count = read_u64(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::dataset(path, "parameter name is not UTF-8"))?;
        let rank = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        let mut buf = [0u8; 8];
        for _ in 0..numel {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        entries.push((name, Tensor::new(shape, data)?));
    }
    Ok((metadata, entries))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let mut ps = ParamSet::new();
        let exact = vec![0.1, -1.0 / 3.0, f64::MIN_POSITIVE, 1e300, -0.0];
        ps.register("layer.w", Tensor::new(vec![5], exact.clone()).unwrap());
        ps.register_no_decay("layer.b", Tensor::matrix(1, 2, vec![2.5, -7.25]).unwrap());
        save_checkpoint(&path, "k = v", &ps).unwrap();

        let (meta, entries) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, "k = v");
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].0, "layer.w");
        for (a, b) in entries[0].1.data().iter().zip(&exact) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(entries[1].1.shape(), &[1, 2]);

        let mut ps2 = ParamSet::new();
        ps2.register("layer.w", Tensor::zeros(vec![5]));
        ps2.register_no_decay("layer.b", Tensor::zeros(vec![1, 2]));
        ps2.load_values(&entries).unwrap();
        assert_eq!(ps2.by_name("layer.w").unwrap().value().data(), &exact[..]);
    }

    #[test]
    fn rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPTxxxxxxxx").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
