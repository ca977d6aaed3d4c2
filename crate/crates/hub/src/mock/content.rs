use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Pseudo-random object payload, reproducible from the key alone.
pub fn object_bytes(key: &str, size: u64) -> Vec<u8> {
    let seed: [u8; 32] = Sha256::digest(key.as_bytes()).into();
    let mut out = vec![0u8; size as usize];
    ChaCha8Rng::from_seed(seed).fill_bytes(&mut out);
    out
}

pub fn sha256_of_object(key: &str, size: u64) -> String {
    hex::encode(Sha256::digest(object_bytes(key, size)))
}
