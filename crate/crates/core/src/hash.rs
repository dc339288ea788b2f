//! Content hashes shared by the mock providers, the expansion cache and
//! index fingerprints.

use sha2::{Digest, Sha256};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Short prompt identifier used in logs and errors in place of the prompt body.
pub fn prompt_hash(prompt: &str) -> String {
    format!("{:016x}", fnv1a64(prompt.as_bytes()))
}

/// Incremental SHA-256 over length-prefixed fields, so that field boundaries
/// cannot be shifted to produce a colliding concatenation.
#[derive(Default, Clone)]
pub struct FieldDigest(Sha256);

impl FieldDigest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn field(mut self, bytes: impl AsRef<[u8]>) -> Self {
        self.push(bytes);
        self
    }

    pub fn push(&mut self, bytes: impl AsRef<[u8]>) {
        let bytes = bytes.as_ref();
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    pub fn hex(self) -> String {
        hex::encode(self.0.finalize())
    }
}
