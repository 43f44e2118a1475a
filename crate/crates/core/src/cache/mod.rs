//! Three-tier content-addressed cache of pipeline checkpoints.
//!
//! Keys hash the datasource configuration, the transform prefix up to the
//! checkpoint and the code fingerprint. Lookup prefers the fully
//! preprocessed entry, then cache-point boundaries from the last one
//! backwards, then the loaded-and-split entry.

mod codec;
mod key;
mod store;

use std::path::PathBuf;

pub use codec::{
    deserialize_checkpoint, deserialize_container, serialize_checkpoint, serialize_container, FORMAT_VERSION,
};
pub use key::{cache_key, canonical_bytes, CacheKey, CacheKeys, Tier};
pub use store::{CacheStore, LoadOutcome, ENTRY_VERSION};

use crate::error::Result;

/// The fingerprint of the source tree this library was built from.
pub const CODE_FINGERPRINT: &str = env!("PHM_CODE_FINGERPRINT");

/// One key checked during lookup.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Consulted {
    pub tier: Tier,
    pub key: String,
    pub hit: bool,
}

#[derive(Debug)]
pub struct CacheHit<T> {
    pub tier: Tier,
    pub value: T,
    /// First stage that still has to run.
    pub resume_from: usize,
}

#[derive(Debug)]
pub struct Lookup<T> {
    pub hit: Option<CacheHit<T>>,
    pub consulted: Vec<Consulted>,
    pub quarantined: Vec<PathBuf>,
}

/// Walks the tiers deepest first and returns the first entry that both
/// validates on disk and decodes. Entries that fail either check are
/// quarantined and the search continues.
pub fn lookup<T>(store: &CacheStore, keys: &CacheKeys, decode: impl Fn(&[u8]) -> Result<T>) -> Result<Lookup<T>> {
    let mut out = Lookup {
        hit: None,
        consulted: Vec::new(),
        quarantined: Vec::new(),
    };
    for key in keys.lookup_order() {
        let outcome = store.load(key)?;
        let mut record = Consulted {
            tier: key.tier,
            key: key.hex(),
            hit: false,
        };
        match outcome {
            LoadOutcome::Hit(bytes) => match decode(&bytes) {
                Ok(value) => {
                    record.hit = true;
                    out.consulted.push(record);
                    out.hit = Some(CacheHit {
                        tier: key.tier,
                        value,
                        resume_from: key.tier.resume_from(keys.n_stages),
                    });
                    return Ok(out);
                }
                Err(_) => out.quarantined.push(store.quarantine(key)?),
            },
            LoadOutcome::Quarantined(path) => out.quarantined.push(path),
            LoadOutcome::Miss => {}
        }
        out.consulted.push(record);
    }
    Ok(out)
}
