//! Binary layout (little endian):
//!
//! ```text
//! magic "MTFMEM\0\0" | version u32 | d_feat u32 | k_sub u32 | mode u8 | cursor u32 | n u32
//! per entry: key_len u32, key utf8 | hits u64 | seeded u8 | block_len u32, block u32..
//!            | warp f64 (k*k, row major) | cov f64 (k*k, row major)
//! ```

use std::io::{Read, Write};

use super::{MemoryBank, MemoryConfig, MemoryEntry, MemoryError, OrthoMode};
use crate::numkernel::Mat;
use crate::signature::SpectralKey;

const MAGIC: &[u8; 8] = b"MTFMEM\0\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<(), MemoryError> {
    let v = u32::try_from(v).map_err(|_| MemoryError::InvalidConfig(format!("{v} does not fit the file format")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_mat<W: Write>(w: &mut W, m: &Mat) -> Result<(), MemoryError> {
    for v in m.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn save_bank<W: Write>(mut w: W, bank: &MemoryBank) -> Result<(), MemoryError> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    put_u32(&mut w, bank.d_feat())?;
    put_u32(&mut w, bank.k_sub())?;
    w.write_all(&[match bank.config().ortho {
        OrthoMode::Hard => 0,
        OrthoMode::Soft => 1,
    }])?;
    put_u32(&mut w, bank.cursor())?;
    put_u32(&mut w, bank.len())?;
    for e in bank.entries() {
        let key = e.key.canonical();
        put_u32(&mut w, key.len())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&e.hits.to_le_bytes())?;
        w.write_all(&[u8::from(e.cov_seeded)])?;
        put_u32(&mut w, e.block.len())?;
        for &i in &e.block {
            put_u32(&mut w, i)?;
        }
        put_mat(&mut w, &e.warp)?;
        put_mat(&mut w, &e.cov)?;
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], MemoryError> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }

    fn u8(&mut self) -> Result<u8, MemoryError> {
        Ok(self.bytes::<1>()?[0])
    }

    fn u32(&mut self) -> Result<usize, MemoryError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64, MemoryError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn mat(&mut self, n: usize) -> Result<Mat, MemoryError> {
        let data = (0..n * n).map(|_| Ok(f64::from_le_bytes(self.bytes()?))).collect::<Result<Vec<_>, MemoryError>>()?;
        Mat::from_vec(n, n, data).map_err(|_| MemoryError::FormatVersion("non-finite matrix entry".into()))
    }
}

/// Reads a bank written by [`save_bank`]. Tuning parameters come from `cfg`; the
/// layout (dimensions, mode, entries) comes from the file.
pub fn load_bank<R: Read>(r: R, cfg: MemoryConfig) -> Result<MemoryBank, MemoryError> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(MemoryError::FormatVersion("bad magic".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != FORMAT_VERSION {
        return Err(MemoryError::FormatVersion(format!("version {version}, expected {FORMAT_VERSION}")));
    }
    let d_feat = r.u32()?;
    let k_sub = r.u32()?;
    let ortho = match r.u8()? {
        0 => OrthoMode::Hard,
        1 => OrthoMode::Soft,
        m => return Err(MemoryError::FormatVersion(format!("unknown mode byte {m}"))),
    };
    let cursor = r.u32()?;
    let n = r.u32()?;
    let mut entries = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = r.u32()?;
        let mut buf = vec![0u8; len];
        r.inner.read_exact(&mut buf)?;
        let text = String::from_utf8(buf).map_err(|_| MemoryError::FormatVersion("key is not utf-8".into()))?;
        let key: SpectralKey = text.parse().map_err(|_| MemoryError::FormatVersion(format!("bad key {text:?}")))?;
        let hits = r.u64()?;
        let cov_seeded = r.u8()? != 0;
        let blen = r.u32()?;
        if blen != k_sub {
            return Err(MemoryError::FormatVersion(format!("block of {blen} coordinates, expected {k_sub}")));
        }
        let block = (0..blen).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        if block.iter().any(|&i| i >= d_feat) {
            return Err(MemoryError::FormatVersion("block index out of range".into()));
        }
        let warp = r.mat(k_sub)?;
        let cov = r.mat(k_sub)?;
        entries.push(MemoryEntry { key, block, warp, cov, hits, cov_seeded });
    }
    Ok(MemoryBank::from_parts(MemoryConfig { ortho, ..cfg }, d_feat, k_sub, cursor, entries))
}
