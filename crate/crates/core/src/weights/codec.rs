//! Binary weight-head format.
//!
//! ```text
//! "BKWH0001"
//! u32 levels
//! 4 x { u32 rank, rank x u32 dim }      conv1.weight, conv1.bias, conv2.weight, conv2.bias
//! f32 data of the four tensors, in the same order
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::head::{WeightHead, HEAD_HIDDEN, HEAD_INPUTS};
use crate::error::{BokehError, Result};

pub const HEAD_MAGIC: &[u8; 8] = b"BKWH0001";

pub fn encode_head(head: &WeightHead) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 4 * head.num_params());
    out.extend_from_slice(HEAD_MAGIC);
    out.extend_from_slice(&(head.levels() as u32).to_le_bytes());
    for shape in head.shapes() {
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    write_tensors(&mut out, head);
    out
}

pub(crate) fn write_tensors(out: &mut Vec<u8>, head: &WeightHead) {
    for t in head.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

/// Little-endian cursor over a byte buffer.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| BokehError::ModelFormat("truncated file".into()))?;
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn fill_tensors(&mut self, head: &mut WeightHead) -> Result<()> {
        for t in head.tensors_mut() {
            for v in t.iter_mut() {
                *v = self.f32()?;
            }
        }
        if head.is_finite() {
            Ok(())
        } else {
            Err(BokehError::ModelFormat("non-finite parameter".into()))
        }
    }
}

/// Parses a head from the front of `bytes`; returns it with the number of
/// bytes consumed.
pub fn decode_head(bytes: &[u8]) -> Result<(WeightHead, usize)> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != HEAD_MAGIC {
        return Err(BokehError::ModelFormat("missing BKWH0001 header".into()));
    }
    let levels = r.u32()? as usize;
    if levels < 2 {
        return Err(BokehError::ModelFormat(format!("bad level count {levels}")));
    }
    let mut head = WeightHead::<f32>::zeros(levels);
    for expected in head.shapes() {
        let rank = r.u32()? as usize;
        let dims = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != expected {
            return Err(BokehError::ModelFormat(format!(
                "tensor shape {dims:?}, expected {expected:?} (head is {HEAD_INPUTS}->{HEAD_HIDDEN}->{levels})"
            )));
        }
    }
    r.fill_tensors(&mut head)?;
    Ok((head, r.position()))
}

pub fn save_head(head: &WeightHead, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_file(path.as_ref(), &encode_head(head))
}

/// Loads a head file. Trailing data (such as optimizer state in a training
/// checkpoint) is ignored.
pub fn load_head(path: impl AsRef<Path>) -> Result<WeightHead> {
    let bytes = crate::io::read_file(path.as_ref())?;
    Ok(decode_head(&bytes)?.0)
}
