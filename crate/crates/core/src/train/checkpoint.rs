//! Training checkpoint: the weight-head file followed by the optimizer
//! state.
//!
//! ```text
//! <weight-head bytes>
//! "BKAS0001"
//! u64 step
//! first moments, then second moments, each as the head's four tensors
//! ```
//!
//! A checkpoint is therefore also a valid head file.

use std::path::Path;

use super::adam::AdamState;
use crate::error::{BokehError, Result};
use crate::weights::codec::{write_tensors, Reader};
use crate::weights::{decode_head, encode_head, WeightHead};

pub const ADAM_MAGIC: &[u8; 8] = b"BKAS0001";

pub fn encode_checkpoint(head: &WeightHead, adam: &AdamState) -> Vec<u8> {
    let mut out = encode_head(head);
    out.extend_from_slice(ADAM_MAGIC);
    out.extend_from_slice(&adam.step.to_le_bytes());
    write_tensors(&mut out, &adam.m);
    write_tensors(&mut out, &adam.v);
    out
}

/// Decodes a checkpoint. A bare head file yields `None` for the optimizer
/// state.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(WeightHead, Option<AdamState>)> {
    let (head, used) = decode_head(bytes)?;
    let rest = &bytes[used..];
    if rest.is_empty() {
        return Ok((head, None));
    }
    let mut r = Reader::new(rest);
    if r.take(8)? != ADAM_MAGIC {
        return Err(BokehError::ModelFormat("missing BKAS0001 optimizer header".into()));
    }
    let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let mut adam = AdamState::new(&head);
    adam.step = step;
    r.fill_tensors(&mut adam.m)?;
    r.fill_tensors(&mut adam.v)?;
    if r.position() != rest.len() {
        return Err(BokehError::ModelFormat("trailing bytes after optimizer state".into()));
    }
    if adam.v.flat().iter().any(|&v| v < 0.0) {
        return Err(BokehError::ModelFormat("negative second moment".into()));
    }
    Ok((head, Some(adam)))
}

pub fn save_checkpoint(head: &WeightHead, adam: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    crate::io::write_file(path.as_ref(), &encode_checkpoint(head, adam))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(WeightHead, Option<AdamState>)> {
    decode_checkpoint(&crate::io::read_file(path.as_ref())?)
}
