//! Content hashing for provenance tracking.
//!
//! Every artifact (weights, datasets, triggers, configs) is identified by the
//! SHA-256 of a canonical byte encoding, rendered as lowercase hex.

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// Hashes a float slice via its little-endian byte image.
pub fn sha256_f32s(values: &[f32]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

pub fn sha256_f64s(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Hashes any serializable value through its canonical JSON encoding.
pub fn sha256_json<T: serde::Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    sha256_hex(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_digest_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn float_hash_sensitive_to_bits() {
        let a = sha256_f32s(&[0.0, 1.0]);
        let b = sha256_f32s(&[-0.0, 1.0]);
        assert_ne!(a, b);
    }
}
