//! Transfer-time estimates and wall-clock load timing.

use std::fs::File;
use std::io::Read;
use std::path::Path;
use std::time::Instant;

use crate::codec;
use crate::error::{Error, Result};
use crate::tensor_store;

/// Link model for estimates: `latency + bits / bandwidth`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferModel {
    pub bandwidth_bits_per_sec: f64,
    pub fixed_latency_sec: f64,
}

impl TransferModel {
    pub fn new(bandwidth_bits_per_sec: f64, fixed_latency_sec: f64) -> Result<Self> {
        if !(bandwidth_bits_per_sec > 0.0 && bandwidth_bits_per_sec.is_finite()) {
            return Err(Error::InvalidBench(format!(
                "bandwidth {bandwidth_bits_per_sec} must be positive"
            )));
        }
        if !(fixed_latency_sec >= 0.0 && fixed_latency_sec.is_finite()) {
            return Err(Error::InvalidBench(format!(
                "latency {fixed_latency_sec} must be non-negative"
            )));
        }
        Ok(TransferModel {
            bandwidth_bits_per_sec,
            fixed_latency_sec,
        })
    }
}

pub fn estimate_transfer(size_bits: u64, tm: &TransferModel) -> f64 {
    tm.fixed_latency_sec + size_bits as f64 / tm.bandwidth_bits_per_sec
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadMode {
    /// Read the file and decode it fully.
    Decode,
    /// Read the bytes only.
    ReadOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub trials: usize,
    pub mean_sec: f64,
    /// Population standard deviation over trials.
    pub std_sec: f64,
    /// File size in bits.
    pub size_bits: u64,
}

#[cfg(unix)]
fn evict(file: &File) {
    use std::os::unix::io::AsRawFd;
    // Best effort: ask the kernel to forget cached pages for this file.
    unsafe {
        libc::posix_fadvise(file.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED);
    }
}

#[cfg(not(unix))]
fn evict(_file: &File) {}

fn decode_any(bytes: &[u8]) -> Result<()> {
    if bytes.starts_with(tensor_store::CONTAINER_MAGIC) {
        tensor_store::parse_container(bytes).map(drop)
    } else if bytes.starts_with(codec::BLOB_MAGIC) {
        codec::decode(bytes).map(drop)
    } else {
        Err(Error::InvalidBench("file is neither a TVC1 container nor a CPT1 blob".into()))
    }
}

/// Times `trials` full loads of `path`.
pub fn bench_load(
    path: impl AsRef<Path>,
    trials: usize,
    drop_caches: bool,
    mode: LoadMode,
) -> Result<BenchReport> {
    if trials == 0 {
        return Err(Error::InvalidBench("at least one trial is required".into()));
    }
    let path = path.as_ref();
    let size_bits = std::fs::metadata(path)?.len() * 8;
    let mut times = Vec::with_capacity(trials);
    for _ in 0..trials {
        if drop_caches {
            evict(&File::open(path)?);
        }
        let start = Instant::now();
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        if mode == LoadMode::Decode {
            decode_any(&bytes)?;
        }
        times.push(start.elapsed().as_secs_f64());
    }
    let n = trials as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(BenchReport {
        trials,
        mean_sec: mean,
        std_sec: var.sqrt(),
        size_bits,
    })
}
