//! Binary MPS checkpoints, all numbers little-endian:
//!
//! ```text
//! magic    8 bytes  "GCMPS\0\0\x01"
//! sites    u64
//! centre   u64
//! time     f64
//! dims     sites × (χ_l u64, d u64, χ_r u64)
//! data     per site, row-major over (χ_l, d, χ_r): re f64, im f64
//! ```

use std::path::Path;

use super::{CMatrix, MatrixProductState};
use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};
use crate::trace::write_atomic;

pub const CHECKPOINT_MAGIC: [u8; 8] = *b"GCMPS\0\0\x01";

pub fn write_checkpoint<T: Real>(path: impl AsRef<Path>, psi: &MatrixProductState<T>, time: f64) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(psi.len() as u64).to_le_bytes());
    buf.extend_from_slice(&(psi.center() as u64).to_le_bytes());
    buf.extend_from_slice(&time.to_le_bytes());
    for i in 0..psi.len() {
        let (dl, dr) = psi.tensor(i)[0].shape();
        for d in [dl, 2, dr] {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for i in 0..psi.len() {
        let t = psi.tensor(i);
        let (dl, dr) = t[0].shape();
        for l in 0..dl {
            for slice in t {
                for r in 0..dr {
                    let z = slice[(l, r)];
                    buf.extend_from_slice(&z.re.as_f64().to_le_bytes());
                    buf.extend_from_slice(&z.im.as_f64().to_le_bytes());
                }
            }
        }
    }
    write_atomic(path.as_ref(), &buf)
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take8(&mut self) -> Result<[u8; 8]> {
        let end = self.at + 8;
        let chunk = self
            .bytes
            .get(self.at..end)
            .ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        self.at = end;
        Ok(chunk.try_into().expect("8-byte slice"))
    }

    fn u64(&mut self) -> Result<usize> {
        usize::try_from(u64::from_le_bytes(self.take8()?)).map_err(|_| Error::Format("dimension overflow".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take8()?))
    }
}

/// Reads a checkpoint; returns the state and the stored time.
pub fn read_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(MatrixProductState<T>, f64)> {
    let bytes = std::fs::read(path)?;
    let mut rd = Reader { bytes: &bytes, at: 0 };
    if rd.take8()? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not an MPS checkpoint".into()));
    }
    let n = rd.u64()?;
    let center = rd.u64()?;
    let time = rd.f64()?;
    let mut dims = Vec::with_capacity(n);
    for _ in 0..n {
        let (dl, d, dr) = (rd.u64()?, rd.u64()?, rd.u64()?);
        if d != 2 {
            return Err(Error::Format(format!("physical dimension {d}, expected 2")));
        }
        dims.push((dl, dr));
    }
    let mut tensors = Vec::with_capacity(n);
    for &(dl, dr) in &dims {
        let mut t = [CMatrix::zeros(dl, dr), CMatrix::zeros(dl, dr)];
        for l in 0..dl {
            for slice in t.iter_mut() {
                for r in 0..dr {
                    let (re, im) = (rd.f64()?, rd.f64()?);
                    slice[(l, r)] = Complex::new(T::c(re), T::c(im));
                }
            }
        }
        tensors.push(t);
    }
    if rd.at != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint data".into()));
    }
    Ok((MatrixProductState::from_tensors(tensors, center)?, time))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mps::Truncation;

    #[test]
    fn round_trip_is_exact() {
        let mut psi = MatrixProductState::<f64>::product(&[true, false, true, true]).unwrap();
        let g = CMatrix::from_fn(4, 4, |i, j| Complex::new((i + 2 * j) as f64 * 0.1, (i as f64 - j as f64) * 0.05));
        let g = g.qr().q();
        psi.apply_two_site(1, &g, &Truncation::default(), true).unwrap();
        psi.apply_two_site(2, &g, &Truncation::default(), false).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.mps");
        write_checkpoint(&path, &psi, 12.5).unwrap();
        let (back, t) = read_checkpoint::<f64>(&path).unwrap();
        assert_eq!(t, 12.5);
        assert_eq!(back, psi);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.mps");
        std::fs::write(&path, b"GCMPS\0\0\x01\x01").unwrap();
        assert!(matches!(read_checkpoint::<f64>(&path), Err(Error::Format(_))));
        std::fs::write(&path, b"notanmps").unwrap();
        assert!(read_checkpoint::<f64>(&path).is_err());
    }
}
