//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "HOPGENCK" | u32 version | u8 kind | 6 x u32 dims
//!   | u64 vocab_hash | u32 tensor count
//!   | per tensor: u32 name_len, name bytes, u32 rows, u32 cols
//!   | per tensor: rows*cols f32 values, row-major

use std::io::{Cursor, Read};
use std::path::Path;

use super::params::{Mat, ModelDims, ModelKind, ParameterStore};
use super::Scalar;
use crate::artifact::write_atomic;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HOPGENCK";
const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint {
    pub store: ParameterStore<f32>,
    pub vocab_hash: u64,
}

pub fn checkpoint_bytes<F: Scalar>(store: &ParameterStore<F>, vocab_hash: u64) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match store.kind {
        ModelKind::Labeller => 1u8,
        ModelKind::Realizer => 2u8,
    });
    let d = store.dims;
    for v in [d.vocab, d.d_model, d.heads, d.ff, d.enc_layers, d.dec_layers] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&vocab_hash.to_le_bytes());
    out.extend_from_slice(&(store.tensor_count() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u32).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u32).to_le_bytes());
    }
    for (_, t) in store.iter() {
        for v in t.iter() {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint<F: Scalar>(
    path: impl AsRef<Path>,
    store: &ParameterStore<F>,
    vocab_hash: u64,
) -> Result<()> {
    write_atomic(path, &checkpoint_bytes(store, vocab_hash))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 8];
    read_exact(&mut cur, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = match read_u8(&mut cur)? {
        1 => ModelKind::Labeller,
        2 => ModelKind::Realizer,
        k => return Err(Error::Checkpoint(format!("unknown model kind {k}"))),
    };
    let dims = ModelDims {
        vocab: read_u32(&mut cur)? as usize,
        d_model: read_u32(&mut cur)? as usize,
        heads: read_u32(&mut cur)? as usize,
        ff: read_u32(&mut cur)? as usize,
        enc_layers: read_u32(&mut cur)? as usize,
        dec_layers: read_u32(&mut cur)? as usize,
    };
    dims.validate()
        .map_err(|e| Error::Checkpoint(format!("bad dims: {e}")))?;
    let vocab_hash = read_u64(&mut cur)?;
    let count = read_u32(&mut cur)? as usize;

    let mut table = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut cur)? as usize;
        if name_len > 1024 {
            return Err(Error::Checkpoint("tensor name too long".into()));
        }
        let mut name = vec![0u8; name_len];
        read_exact(&mut cur, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name not UTF-8".into()))?;
        let rows = read_u32(&mut cur)? as usize;
        let cols = read_u32(&mut cur)? as usize;
        table.push((name, rows, cols));
    }

    let mut store = empty_store(dims, kind);
    for (name, rows, cols) in table {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(read_f32(&mut cur)?);
        }
        let tensor = Mat::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("bad tensor shape for {name}: {e}")))?;
        if !tensor.iter().all(|v| v.is_finite()) {
            return Err(Error::Checkpoint(format!("non-finite values in {name}")));
        }
        store.insert(&name, tensor);
    }
    if cur.position() != bytes.len() as u64 {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { store, vocab_hash })
}

fn empty_store(dims: ModelDims, kind: ModelKind) -> ParameterStore<f32> {
    // Start from a zero-seeded skeleton and strip it: insertion order comes
    // from the file's own table.
    let mut store = match kind {
        ModelKind::Labeller => super::params::labeller_params::<f32>(dims, 0),
        ModelKind::Realizer => super::params::realizer_params::<f32>(dims, 0),
    };
    store.clear_tensors();
    store
}

fn read_exact(cur: &mut Cursor<&[u8]>, buf: &mut [u8]) -> Result<()> {
    cur.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated file".into()))
}

fn read_u8(cur: &mut Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(cur, &mut b)?;
    Ok(b[0])
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(cur, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(cur: &mut Cursor<&[u8]>) -> Result<f32> {
    let mut b = [0u8; 4];
    read_exact(cur, &mut b)?;
    Ok(f32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::params::{realizer_params, ModelDims};

    fn dims() -> ModelDims {
        ModelDims {
            vocab: 10,
            d_model: 8,
            heads: 2,
            ff: 16,
            enc_layers: 2,
            dec_layers: 2,
        }
    }

    #[test]
    fn round_trip_preserves_everything() {
        let store = realizer_params::<f32>(dims(), 77);
        let bytes = checkpoint_bytes(&store, 0xDEADBEEF);
        let ckpt = parse_checkpoint(&bytes).unwrap();
        assert_eq!(ckpt.vocab_hash, 0xDEADBEEF);
        assert_eq!(ckpt.store.kind, ModelKind::Realizer);
        assert_eq!(ckpt.store.dims, dims());
        assert_eq!(ckpt.store.tensor_count(), store.tensor_count());
        for ((na, ta), (nb, tb)) in store.iter().zip(ckpt.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let store = realizer_params::<f32>(dims(), 77);
        let bytes = checkpoint_bytes(&store, 1);
        assert!(parse_checkpoint(&bytes[..20]).is_err()); // truncated
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(parse_checkpoint(&bad_magic).is_err());
        let mut trailing = bytes.clone();
        trailing.push(0);
        assert!(parse_checkpoint(&trailing).is_err());
    }

    #[test]
    fn write_and_read_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = realizer_params::<f32>(dims(), 5);
        write_checkpoint(&path, &store, 99).unwrap();
        let ckpt = read_checkpoint(&path).unwrap();
        assert_eq!(ckpt.vocab_hash, 99);
        assert_eq!(ckpt.store.get("embed"), store.get("embed"));
    }
}
