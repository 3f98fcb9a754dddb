//! Binary checkpoints of a [`ParamStore`].
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "DGNCKPT\0"
//! version  u32
//! count    u32
//! count × { name_len u32, name bytes, ndim u32, dims u64 × ndim, data f64 × prod(dims) }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use dgn_core::{Matrix, ParamStore};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 8] = b"DGNCKPT\0";
pub const VERSION: u32 = 1;

fn err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Checkpoint(msg.into())
}

pub fn write_checkpoint<W: Write>(mut w: W, store: &ParamStore) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (_, name, value) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&2u32.to_le_bytes())?;
        for d in [value.nrows(), value.ncols()] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for x in value.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| err(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_array(r)?))
}

/// Reads every named tensor in file order.
pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<(String, Matrix)>> {
    if &read_array::<8, _>(&mut r)? != MAGIC {
        return Err(err("bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(err(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|e| err(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name).map_err(|_| err("name is not utf-8"))?;
        let ndim = read_u32(&mut r)?;
        if ndim != 2 {
            return Err(err(format!("{name}: expected 2 dims, found {ndim}")));
        }
        let rows = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let cols = u64::from_le_bytes(read_array(&mut r)?) as usize;
        let data = (0..rows * cols)
            .map(|_| Ok(f64::from_le_bytes(read_array(&mut r)?)))
            .collect::<Result<Vec<_>>>()?;
        let m = Matrix::from_shape_vec((rows, cols), data).map_err(|e| err(e.to_string()))?;
        out.push((name, m));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(err(format!("{} trailing bytes", rest.len())));
    }
    Ok(out)
}

/// Overwrites `store` with checkpoint tensors; names and shapes must match exactly.
pub fn restore(store: &mut ParamStore, tensors: Vec<(String, Matrix)>) -> Result<()> {
    if tensors.len() != store.len() {
        return Err(err(format!("checkpoint has {} tensors, model has {}", tensors.len(), store.len())));
    }
    for (name, value) in tensors {
        let id = store.find(&name).ok_or_else(|| err(format!("unknown tensor {name:?}")))?;
        let want = store.get(id).dim();
        if value.dim() != want {
            return Err(err(format!("{name}: shape {:?} does not match model shape {want:?}", value.dim())));
        }
        store.set(id, value)?;
    }
    Ok(())
}

pub fn save(path: &Path, store: &ParamStore) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(&mut w, store)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path, store: &mut ParamStore) -> Result<()> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    restore(store, read_checkpoint(r)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", array![[1.5, -0.25], [3.0, f64::MIN_POSITIVE]]).unwrap();
        s.add("b.bias", array![[7.0]]).unwrap();
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let s = store();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &s).unwrap();
        let mut t = store();
        for id in t.clone().ids() {
            t.get_mut(id).fill(0.0);
        }
        restore(&mut t, read_checkpoint(bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(s, t);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut other = ParamStore::new();
        other.add("a", array![[1.0, 2.0]]).unwrap();
        other.add("b.bias", array![[7.0]]).unwrap();
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &other).unwrap();
        let mut s = store();
        let e = restore(&mut s, read_checkpoint(bytes.as_slice()).unwrap()).unwrap_err();
        assert!(matches!(e, HarnessError::Checkpoint(_)), "{e}");
    }

    #[test]
    fn corrupt_input_is_rejected() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &store()).unwrap();
        bytes.pop();
        assert!(read_checkpoint(bytes.as_slice()).is_err());
    }
}
