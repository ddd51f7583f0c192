//! Binary checkpoints of a [`FieldSet`].
//!
//! Layout (all little endian): `b"BELH"`, `u32` version, three `u32` grid
//! dimensions, `f64` box scale, eight `f64` parameters
//! (L, mu, Gamma, a, b, c, xi, eps), `f64` time, then the five Q coefficient
//! fields followed by the three velocity components, each `n^3` `f64` values
//! of the physical view in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::spectral::{FieldSet, Grid};
use crate::tensor::BulkParams;

pub const MAGIC: [u8; 4] = *b"BELH";
pub const VERSION: u32 = 1;

fn fail(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.into() }
}

pub fn write_checkpoint(path: &Path, state: &FieldSet, params: &BulkParams) -> Result<()> {
    let n = state.grid.n() as u32;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for _ in 0..3 {
        w.write_all(&n.to_le_bytes())?;
    }
    w.write_all(&state.grid.scale().to_le_bytes())?;
    let p = params;
    for v in [p.elastic, p.viscosity, p.relaxation, p.a, p.b, p.c, p.tumbling, p.hyperviscosity] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&state.time.to_le_bytes())?;
    for field in state.q_physical().iter().chain(state.u_physical().iter()) {
        for v in field.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Cursor<R: Read> {
    inner: R,
}

impl<R: Read> Cursor<R> {
    fn bytes<const K: usize>(&mut self) -> std::io::Result<[u8; K]> {
        let mut b = [0u8; K];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u32(&mut self) -> std::io::Result<u32> {
        self.bytes::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> std::io::Result<f64> {
        self.bytes::<8>().map(f64::from_le_bytes)
    }
}

/// Read a checkpoint back as a physical-only state and the stored parameters.
pub fn read_checkpoint(path: &Path) -> Result<(FieldSet, BulkParams)> {
    let file = File::open(path).map_err(|e| fail(path, e.to_string()))?;
    let mut c = Cursor { inner: BufReader::new(file) };
    let trunc = |e: std::io::Error| fail(path, format!("truncated or unreadable: {e}"));
    if c.bytes::<4>().map_err(trunc)? != MAGIC {
        return Err(fail(path, "bad magic bytes"));
    }
    let version = c.u32().map_err(trunc)?;
    if version != VERSION {
        return Err(fail(path, format!("unsupported format version {version}")));
    }
    let dims = [c.u32().map_err(trunc)?, c.u32().map_err(trunc)?, c.u32().map_err(trunc)?];
    if dims[0] != dims[1] || dims[1] != dims[2] {
        return Err(fail(path, format!("anisotropic grid {dims:?} is not supported")));
    }
    let scale = c.f64().map_err(trunc)?;
    let grid = Grid::new(dims[0] as usize, scale).map_err(|e| fail(path, e.to_string()))?;
    let mut raw = [0.0; 8];
    for v in raw.iter_mut() {
        *v = c.f64().map_err(trunc)?;
    }
    let [elastic, viscosity, relaxation, a, b, cc, tumbling, hyperviscosity] = raw;
    let params = BulkParams { elastic, viscosity, relaxation, a, b, c: cc, tumbling, hyperviscosity };
    let time = c.f64().map_err(trunc)?;
    let len = grid.len_physical();
    let mut read_field = || -> Result<Vec<f64>> {
        let mut buf = vec![0u8; 8 * len];
        c.inner.read_exact(&mut buf).map_err(trunc)?;
        Ok(buf.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    };
    let mut fields = Vec::with_capacity(8);
    for _ in 0..8 {
        fields.push(read_field()?);
    }
    let mut rest = Vec::new();
    c.inner.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(fail(path, format!("{} trailing bytes", rest.len())));
    }
    let mut it = fields.into_iter();
    let q: [Vec<f64>; 5] = std::array::from_fn(|_| it.next().expect("field"));
    let u: [Vec<f64>; 3] = std::array::from_fn(|_| it.next().expect("field"));
    let mut state = FieldSet::from_physical(&grid, q, u, time)?;
    state.projected = true;
    Ok((state, params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let grid = Grid::new(8, 1.5).unwrap();
        let q = std::array::from_fn(|c| grid.sample(|x| (x[0] + c as f64).sin() * 1e-3));
        let u = std::array::from_fn(|c| grid.sample(|x| (x[2] * (c + 1) as f64).cos() / 7.0));
        let state = FieldSet::from_physical(&grid, q, u, 0.125).unwrap();
        let params = BulkParams::new(0.5, 0.25, 2.0, -1.0, 0.5, 3.0, 0.3, 1e-2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.bin");
        write_checkpoint(&path, &state, &params).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"BELH");
        assert_eq!(bytes.len(), 4 + 4 + 12 + 8 + 64 + 8 + 8 * 8 * 512);
        let (back, p2) = read_checkpoint(&path).unwrap();
        assert_eq!(p2, params);
        assert_eq!(back.time, 0.125);
        assert_eq!(back.grid, grid);
        for c in 0..5 {
            assert_eq!(back.q_physical()[c], state.q_physical()[c]);
        }
        for c in 0..3 {
            assert_eq!(back.u_physical()[c], state.u_physical()[c]);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint { .. })));
        let grid = Grid::new(8, 1.0).unwrap();
        let state = FieldSet::zeros(&grid);
        let params = BulkParams::new(1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0).unwrap();
        write_checkpoint(&path, &state, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint { .. })));
        assert!(read_checkpoint(&dir.path().join("missing.bin")).is_err());
    }
}
