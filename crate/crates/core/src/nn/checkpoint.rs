//! Versioned binary checkpoints for policy parameters.
//!
//! Layout: magic `GTAC`, format version, a schema hash binding the file
//! to one encoder variant, action layout, and parameter table, then each
//! parameter as name + shape + row-major little-endian f64 payload.
//! Optimizer moments are not stored; a resumed run restarts them.

use crate::nn::net::Policy;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"GTAC";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("checkpoint was written for a different encoder, action layout, or parameter set (schema {found:#018x}, expected {expected:#018x})")]
    SchemaMismatch { expected: u64, found: u64 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// FNV-1a over the encoder name, the action layout dimensions, and every
/// parameter's name and shape, in registry order.
pub fn schema_hash(policy: &Policy) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(PRIME);
        }
    };
    eat(policy.encoder().name().as_bytes());
    eat(&[0]);
    let layout = policy.layout();
    for e in 0..layout.n_elements() {
        eat(&(layout.dim(e) as u64).to_le_bytes());
    }
    for (name, value) in policy.params.iter() {
        eat(name.as_bytes());
        eat(&[0]);
        eat(&(value.nrows() as u64).to_le_bytes());
        eat(&(value.ncols() as u64).to_le_bytes());
    }
    h
}

pub fn save(policy: &Policy, path: &Path) -> io::Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&schema_hash(policy).to_le_bytes());
    out.extend_from_slice(&(policy.params.len() as u32).to_le_bytes());
    for (name, value) in policy.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(value.ncols() as u64).to_le_bytes());
        for &x in value.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = File::create(path)?;
    f.write_all(&out)
}

/// Load parameters saved by [`save`] into a policy of the same schema.
pub fn load_into(policy: &mut Policy, path: &Path) -> Result<(), CheckpointError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let mut at = 0usize;

    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        if at + n > bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "truncated at byte {at}, wanted {n} more"
            )));
        }
        let s = &bytes[at..at + n];
        at += n;
        Ok(s)
    };

    if take(4)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let found = u64::from_le_bytes(take(8)?.try_into().unwrap());
    let expected = schema_hash(policy);
    if found != expected {
        return Err(CheckpointError::SchemaMismatch { expected, found });
    }
    let n_params = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    if n_params != policy.params.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{n_params} parameters in file, policy has {}",
            policy.params.len()
        )));
    }

    // The schema hash already pins names and shapes in order; re-check
    // while reading so a corrupt payload cannot be half-applied.
    let mut loaded = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Corrupt(format!("parameter {i} name not utf-8")))?;
        let rows = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let cols = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        let payload = take(rows * cols * 8)?;
        let mut values = Vec::with_capacity(rows * cols);
        for chunk in payload.chunks_exact(8) {
            values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
        }
        let array = ndarray::Array2::from_shape_vec((rows, cols), values)
            .map_err(|e| CheckpointError::Corrupt(format!("parameter {name}: {e}")))?;
        loaded.push((name, array));
    }
    if at != bytes.len() {
        return Err(CheckpointError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - at
        )));
    }
    for ((name, array), dst) in loaded.into_iter().zip(policy.params.values_mut()) {
        if array.dim() != dst.dim() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                array.dim(),
                dst.dim()
            )));
        }
        *dst = array;
    }
    Ok(())
}
