//! Versioned binary checkpoints for parameter sets.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "NDCK"
//! version u32      currently 1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name UTF-8 bytes, rows u32, cols u32,
//!   rows*cols f64 values (little-endian IEEE 754)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::neuralcore::params::ParamSet;
use crate::neuralcore::tensor::Tensor;

const MAGIC: &[u8; 4] = b"NDCK";
const VERSION: u32 = 1;

pub fn save(params: &ParamSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(params.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, tensor) in params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&(tensor.rows() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(tensor.cols() as u32).to_le_bytes()).map_err(io)?;
        for v in tensor.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, path)?;
    if &magic != MAGIC {
        return Err(Error::Validation(format!(
            "{} is not a checkpoint (bad magic {:02x?})",
            path.display(),
            magic
        )));
    }
    let version = read_u32(&mut r, path)?;
    if version != VERSION {
        return Err(Error::Validation(format!(
            "unsupported checkpoint version {version} in {}",
            path.display()
        )));
    }
    let count = read_u32(&mut r, path)?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r, path)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        read_exact(&mut r, &mut name_bytes, path)?;
        let name = String::from_utf8(name_bytes).map_err(|e| {
            Error::Validation(format!(
                "checkpoint {} has a non-UTF-8 tensor name: {e}",
                path.display()
            ))
        })?;
        let rows = read_u32(&mut r, path)? as usize;
        let cols = read_u32(&mut r, path)? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        let mut buf = [0u8; 8];
        for _ in 0..rows * cols {
            read_exact(&mut r, &mut buf, path)?;
            data.push(f64::from_le_bytes(buf));
        }
        params.insert(&name, Tensor::from_vec(rows, cols, data)?)?;
    }
    // A trailing byte means the file was not produced by this writer.
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(params),
        Ok(_) => Err(Error::Validation(format!(
            "checkpoint {} has trailing bytes",
            path.display()
        ))),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::io(path, e))
}

fn read_u32<R: Read>(r: &mut R, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, path)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w1", Tensor::from_vec(2, 3, vec![1.0, -2.5, 0.0, 3.25, 1e-300, -0.75]).unwrap())
            .unwrap();
        p.insert("b1", Tensor::vector(&[0.5, -0.5])).unwrap();
        p
    }

    #[test]
    fn roundtrip_preserves_names_order_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = sample_params();
        save(&params, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded, params);
        let names: Vec<_> = loaded.names().collect();
        assert_eq!(names, ["w1", "b1"]);
    }

    #[test]
    fn identical_params_produce_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.ckpt");
        let b = dir.path().join("b.ckpt");
        save(&sample_params(), &a).unwrap();
        save(&sample_params(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"JUNKJUNKJUNK").unwrap();
        let err = load(&path).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&sample_params(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(load(&path).is_err());
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save(&sample_params(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(load(&path).is_err());
    }
}
