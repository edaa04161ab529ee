//! Deterministic random byte streams.
//!
//! Every random byte in the simulator comes from SplitMix64 so that a run is
//! a pure function of its seeds and bit-exact across platforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// SplitMix64 generator. Output words are emitted as little-endian bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Fill `buf` with the next bytes of the stream.
    pub fn fill(&mut self, buf: &mut [u8]) {
        for chunk in buf.chunks_mut(8) {
            let word = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&word[..chunk.len()]);
        }
    }

    /// First `len` bytes of the stream for `seed`.
    pub fn bytes(seed: u64, len: usize) -> Vec<u8> {
        let mut out = vec![0u8; len];
        Self::new(seed).fill(&mut out);
        out
    }
}

/// Where overwrite data comes from: carried with the request by the host, or
/// produced by the device-internal generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RandomSource {
    HostSupplied {
        #[serde(with = "crate::serde_hex")]
        bytes: Vec<u8>,
    },
    DeviceInternal {
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RngError {
    #[error("host-supplied buffer holds {have} bytes, {need} required")]
    InsufficientHostData { have: usize, need: usize },
    #[error("requested length must be at least 1")]
    ZeroLength,
}

/// Produce `len` bytes from a source. Host buffers are consumed from the
/// front; device-internal sources emit the stream for their seed.
pub fn generate_random_data(source: &RandomSource, len: usize) -> Result<Vec<u8>, RngError> {
    if len == 0 {
        return Err(RngError::ZeroLength);
    }
    match source {
        RandomSource::HostSupplied { bytes } => {
            if bytes.len() < len {
                Err(RngError::InsufficientHostData {
                    have: bytes.len(),
                    need: len,
                })
            } else {
                Ok(bytes[..len].to_vec())
            }
        }
        RandomSource::DeviceInternal { seed } => Ok(SplitMix64::bytes(*seed, len)),
    }
}
