//! SHA-256 digests over canonical JSON encodings.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::tensor::TensorF;

/// Hex SHA-256 of the JSON encoding of `value`. Field order is the struct
/// declaration order and maps are `BTreeMap`s, so the encoding is stable.
pub fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable value");
    bytes_hex(&bytes)
}

pub fn bytes_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn tensor(t: &TensorF) -> String {
    json(t)
}

pub fn tensors(ts: &[TensorF]) -> String {
    json(ts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_content() {
        let a = TensorF::from_vec(vec![1.0, 2.0]).unwrap();
        let b = TensorF::from_vec(vec![1.0, 2.000001]).unwrap();
        assert_eq!(tensor(&a), tensor(&a.clone()));
        assert_ne!(tensor(&a), tensor(&b));
        assert_eq!(tensor(&a).len(), 64);
    }
}
