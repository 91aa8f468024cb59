//! Named-tensor container.
//!
//! Layout: magic `TEDK`, one version byte, a length-prefixed metadata blob,
//! a tensor count, then per tensor a length-prefixed UTF-8 name, rows and
//! cols as u64, and `rows * cols` f64 values. All integers and floats are
//! little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{ParamStore, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"TEDK";
pub const VERSION: u8 = 1;

/// Refuses absurd headers before allocating.
const MAX_ELEMS: u64 = 1 << 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u8),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("missing parameter `{0}`")]
    Missing(String),
    #[error("parameter `{name}` has shape {found:?}, expected {expected:?}")]
    Shape { name: String, expected: (usize, usize), found: (usize, usize) },
    #[error("unexpected parameter `{0}`")]
    Unexpected(String),
}

pub fn write<S: Scalar>(w: &mut impl Write, meta: &[u8], store: &ParamStore<S>) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(meta.len() as u64).to_le_bytes())?;
    w.write_all(meta)?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        let t = store.get(id);
        w.write_all(&(t.rows() as u64).to_le_bytes())?;
        w.write_all(&(t.cols() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(t.len() * 8);
        for x in t.data() {
            buf.extend_from_slice(&x.f64().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Metadata blob and tensors in file order.
pub type Contents = (Vec<u8>, Vec<(String, Tensor<f64>)>);

pub fn read(r: &mut impl Read) -> Result<Contents, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 1];
    r.read_exact(&mut v)?;
    if v[0] != VERSION {
        return Err(CheckpointError::Version(v[0]));
    }
    let meta_len = read_u64(r)?;
    if meta_len > MAX_ELEMS {
        return Err(CheckpointError::Corrupt(format!("metadata length {meta_len}")));
    }
    let meta = read_bytes(r, meta_len as usize)?;
    let count = read_u32(r)?;
    let mut tensors = Vec::new();
    for _ in 0..count {
        let n = read_u32(r)? as usize;
        let name = String::from_utf8(read_bytes(r, n)?).map_err(|_| CheckpointError::Corrupt("name is not UTF-8".into()))?;
        let (rows, cols) = (read_u64(r)?, read_u64(r)?);
        let elems = rows.checked_mul(cols).filter(|&e| e <= MAX_ELEMS);
        let Some(elems) = elems else {
            return Err(CheckpointError::Corrupt(format!("tensor `{name}` shape {rows}x{cols}")));
        };
        let raw = read_bytes(r, elems as usize * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        tensors.push((name, Tensor::from_vec(rows as usize, cols as usize, data)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(CheckpointError::Corrupt("trailing bytes".into()));
    }
    Ok((meta, tensors))
}

/// Overwrites every parameter of `store` by name; names and shapes must
/// match exactly.
pub fn load_into<S: Scalar>(store: &mut ParamStore<S>, tensors: &[(String, Tensor<f64>)]) -> Result<(), CheckpointError> {
    let mut seen = vec![false; store.len()];
    for (name, t) in tensors {
        let id = store.id(name).ok_or_else(|| CheckpointError::Unexpected(name.clone()))?;
        let expected = store.get(id).shape();
        if expected != t.shape() {
            return Err(CheckpointError::Shape { name: name.clone(), expected, found: t.shape() });
        }
        let data = t.data().iter().map(|&x| S::c(x)).collect();
        *store.get_mut(id) = Tensor::from_vec(expected.0, expected.1, data);
        seen[id.0] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(CheckpointError::Missing(store.name(super::ParamId(i)).to_string()));
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_bytes(r: &mut impl Read, n: usize) -> io::Result<Vec<u8>> {
    let mut out = Vec::new();
    r.take(n as u64).read_to_end(&mut out)?;
    if out.len() != n {
        return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated checkpoint"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("a", Tensor::from_f64(2, 3, &[1.0, -2.5, 3.25, 0.0, 1e-300, -7.0]));
        s.add("b.bias", Tensor::from_f64(1, 1, &[0.125]));
        s
    }

    #[test]
    fn round_trip() {
        let s = store();
        let mut buf = Vec::new();
        write(&mut buf, b"hello", &s).unwrap();
        assert_eq!(&buf[..4], MAGIC);
        assert_eq!(buf[4], VERSION);
        let (meta, tensors) = read(&mut buf.as_slice()).unwrap();
        assert_eq!(meta, b"hello");
        let mut fresh = ParamStore::new();
        fresh.add("a", Tensor::zeros(2, 3));
        fresh.add("b.bias", Tensor::zeros(1, 1));
        load_into(&mut fresh, &tensors).unwrap();
        assert_eq!(fresh.get(fresh.id("a").unwrap()), s.get(s.id("a").unwrap()));
        assert_eq!(fresh.get(fresh.id("b.bias").unwrap()).data(), &[0.125]);
    }

    #[test]
    fn rejects_damage() {
        let mut buf = Vec::new();
        write(&mut buf, b"", &store()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read(&mut bad.as_slice()), Err(CheckpointError::BadMagic)));
        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(read(&mut bad.as_slice()), Err(CheckpointError::Version(9))));
        let short = &buf[..buf.len() - 3];
        assert!(matches!(read(&mut &short[..]), Err(CheckpointError::Io(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read(&mut long.as_slice()), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn shape_and_name_mismatches() {
        let mut buf = Vec::new();
        write(&mut buf, b"", &store()).unwrap();
        let (_, tensors) = read(&mut buf.as_slice()).unwrap();
        let mut wrong = ParamStore::<f64>::new();
        wrong.add("a", Tensor::zeros(3, 2));
        wrong.add("b.bias", Tensor::zeros(1, 1));
        assert!(matches!(load_into(&mut wrong, &tensors), Err(CheckpointError::Shape { .. })));
        let mut extra = ParamStore::<f64>::new();
        extra.add("a", Tensor::zeros(2, 3));
        extra.add("b.bias", Tensor::zeros(1, 1));
        extra.add("c", Tensor::zeros(1, 1));
        assert!(matches!(load_into(&mut extra, &tensors), Err(CheckpointError::Missing(n)) if n == "c"));
    }
}
