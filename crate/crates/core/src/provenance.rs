//! Content hashes that tie artifacts to the configuration that produced them.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Lowercase hex SHA-256 of `bytes`.
pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Fails with a provenance error unless `found` equals `expected`.
pub fn verify(what: &str, expected: &str, found: &str) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Provenance(format!(
            "{what}: artifact was built with {found}, current configuration hashes to {expected}"
        )))
    }
}
