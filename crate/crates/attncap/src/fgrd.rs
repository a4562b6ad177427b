//! Feature-grid files: magic `FGRD`, u32 version 1, u32 region count, u32
//! feature dimension, then `L·D` little-endian f64 values in row-major order.

use std::fs;
use std::path::Path;

use attncap_core::model::FeatureGrid;

use crate::error::{CliError, FormatError};

pub const MAGIC: &[u8; 4] = b"FGRD";
pub const VERSION: u32 = 1;

/// Cursor over a byte buffer that reports the offset of whatever it failed on.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> ByteReader<'a> {
        ByteReader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], FormatError> {
        if self.pos + n > self.buf.len() {
            return Err(FormatError::new(
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32, FormatError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64, FormatError> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, FormatError> {
        let b = self.take(n * 8, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn done(&self) -> Result<(), FormatError> {
        if self.pos != self.buf.len() {
            return Err(FormatError::new(self.pos, "trailing bytes after payload"));
        }
        Ok(())
    }
}

pub fn encode(grid: &FeatureGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + grid.values().len() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.regions() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for v in grid.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FeatureGrid, FormatError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(FormatError::new(0, format!("bad magic {magic:?}")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(FormatError::new(4, format!("unsupported version {version}")));
    }
    let regions = r.u32("region count")? as usize;
    let dim = r.u32("feature dimension")? as usize;
    if regions == 0 || dim == 0 {
        return Err(FormatError::new(8, format!("bad shape {regions}x{dim}")));
    }
    let header_end = r.offset();
    let values = r.f64s(regions * dim, "feature values")?;
    r.done()?;
    FeatureGrid::new(regions, dim, values)
        .map_err(|e| FormatError::new(header_end, e.to_string()))
}

pub fn write(path: &Path, grid: &FeatureGrid) -> Result<(), CliError> {
    fs::write(path, encode(grid))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn read(path: &Path) -> Result<FeatureGrid, CliError> {
    let bytes =
        fs::read(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}
