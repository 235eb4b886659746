//! Append-only binary checkpoint of finished tiles.
//!
//! Layout, all little-endian: an 8-byte magic, the u64 config hash and the
//! u64 dimension d, then one fixed-size record per tile:
//! `tile_index u64, n_sims u64, false_rej_count u64, d × f64 score_sum`.

use std::fs::{File, OpenOptions};
use std::io::{BufReader, Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Mutex;

use crate::engine::TileSummary;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"TBCKPT01";
const HEADER_LEN: u64 = 24;

fn record_len(dim: usize) -> u64 {
    24 + 8 * dim as u64
}

pub fn encode_record(s: &TileSummary) -> Vec<u8> {
    let mut buf = Vec::with_capacity(record_len(s.dim()) as usize);
    buf.extend_from_slice(&s.tile_index.to_le_bytes());
    buf.extend_from_slice(&s.n_sims.to_le_bytes());
    buf.extend_from_slice(&s.false_rej_count.to_le_bytes());
    for x in s.score_sum() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

pub fn decode_record(buf: &[u8], dim: usize) -> Result<TileSummary> {
    if buf.len() as u64 != record_len(dim) {
        return Err(Error::Checkpoint("record has the wrong length".into()));
    }
    let word = |i: usize| u64::from_le_bytes(buf[8 * i..8 * i + 8].try_into().unwrap());
    let score: Vec<f64> = (0..dim).map(|k| f64::from_bits(word(3 + k))).collect();
    Ok(TileSummary::from_parts(word(0), word(1), word(2), &score))
}

/// Shared appender; safe to call from many workers.
#[derive(Debug)]
pub struct CheckpointWriter {
    file: Mutex<File>,
    dim: usize,
}

impl CheckpointWriter {
    /// Start a fresh checkpoint, truncating any existing file.
    pub fn create(path: &Path, config_hash: u64, dim: usize) -> Result<Self> {
        let mut file = File::create(path)?;
        file.write_all(MAGIC)?;
        file.write_all(&config_hash.to_le_bytes())?;
        file.write_all(&(dim as u64).to_le_bytes())?;
        file.flush()?;
        Ok(Self {
            file: Mutex::new(file),
            dim,
        })
    }

    /// Open `path` for resuming, or create it when absent.
    ///
    /// Returns the writer plus every complete record already on disk. A
    /// trailing partial record (interrupted write) is discarded.
    pub fn resume(path: &Path, config_hash: u64, dim: usize) -> Result<(Self, Vec<TileSummary>)> {
        if !path.exists() {
            return Ok((Self::create(path, config_hash, dim)?, Vec::new()));
        }
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut header = [0u8; HEADER_LEN as usize];
        BufReader::new(&mut file)
            .read_exact(&mut header)
            .map_err(|_| Error::Checkpoint("file too short for a header".into()))?;
        if &header[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let stored_hash = u64::from_le_bytes(header[8..16].try_into().unwrap());
        let stored_dim = u64::from_le_bytes(header[16..24].try_into().unwrap());
        if stored_hash != config_hash {
            return Err(Error::Checkpoint(format!(
                "config hash {stored_hash:016x} does not match current config {config_hash:016x}"
            )));
        }
        if stored_dim != dim as u64 {
            return Err(Error::Checkpoint(format!("dimension {stored_dim} does not match {dim}")));
        }
        file.seek(SeekFrom::Start(HEADER_LEN))?;
        let mut body = Vec::new();
        file.read_to_end(&mut body)?;
        let rec = record_len(dim) as usize;
        let complete = body.len() / rec;
        let mut out = Vec::with_capacity(complete);
        for chunk in body.chunks_exact(rec) {
            out.push(decode_record(chunk, dim)?);
        }
        file.set_len(HEADER_LEN + (complete * rec) as u64)?;
        file.seek(SeekFrom::End(0))?;
        Ok((
            Self {
                file: Mutex::new(file),
                dim,
            },
            out,
        ))
    }

    pub fn append(&self, s: &TileSummary) -> Result<()> {
        if s.dim() != self.dim {
            return Err(Error::Checkpoint("summary dimension differs from checkpoint".into()));
        }
        let buf = encode_record(s);
        let mut f = self
            .file
            .lock()
            .map_err(|_| Error::Internal("checkpoint lock poisoned".into()))?;
        f.write_all(&buf)?;
        f.flush()?;
        Ok(())
    }
}
