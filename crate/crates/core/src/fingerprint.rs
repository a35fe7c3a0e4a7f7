//! SHA-256 content hashes used to tie artifacts to the schema and encoder
//! that produced them.

use std::io::Read;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub fn of_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the compact JSON serialization.
pub fn of_json<T: Serialize + ?Sized>(value: &T) -> String {
    of_bytes(&serde_json::to_vec(value).expect("value serializes to JSON"))
}

pub fn of_file(path: &Path) -> std::io::Result<String> {
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}
