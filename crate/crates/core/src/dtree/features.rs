//! Quad-word feature extraction.

use serde::{Deserialize, Serialize};

/// A fixed-length vector of unsigned 64-bit words plus a class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub words: Vec<u64>,
    pub label: i64,
}

/// Splits object content into 8-byte little-endian words and zero-pads to
/// exactly `l` words. Content longer than `8 * l` is truncated.
pub fn extract_features(content: &[u8], l: usize) -> Vec<u64> {
    let mut words = Vec::with_capacity(l);
    for chunk in content.chunks(8).take(l) {
        let mut buf = [0u8; 8];
        buf[..chunk.len()].copy_from_slice(chunk);
        words.push(u64::from_le_bytes(buf));
    }
    words.resize(l, 0);
    words
}
