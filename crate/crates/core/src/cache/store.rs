use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use super::key::CacheKey;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"PHMC";
pub const ENTRY_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 32 + 32;
const LOCK_TIMEOUT: Duration = Duration::from_secs(10);

/// Result of reading one entry.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadOutcome {
    Hit(Vec<u8>),
    Miss,
    /// The entry failed validation and was moved aside.
    Quarantined(PathBuf),
}

/// Content-addressed entries under `<dir>/<tier>/<key>.bin`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheStore {
    dir: PathBuf,
    lock_timeout: Duration,
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl CacheStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            lock_timeout: LOCK_TIMEOUT,
        }
    }

    pub fn with_lock_timeout(mut self, timeout: Duration) -> Self {
        self.lock_timeout = timeout;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.tier.dir_name()).join(format!("{}.bin", key.hex()))
    }

    fn lock_path(&self, key: &CacheKey) -> PathBuf {
        self.dir.join(key.tier.dir_name()).join(format!("{}.lock", key.hex()))
    }

    fn ensure_tier_dir(&self, key: &CacheKey) -> Result<PathBuf> {
        let dir = self.dir.join(key.tier.dir_name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }

    fn lock(&self, key: &CacheKey) -> Result<LockGuard> {
        let path = self.lock_path(key);
        let start = Instant::now();
        loop {
            match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(LockGuard(path)),
                Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                    if start.elapsed() >= self.lock_timeout {
                        return Err(Error::CacheBusy(path));
                    }
                    std::thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(Error::io(&path, e)),
            }
        }
    }

    /// The on-disk form: magic, version, key digest, payload checksum, payload.
    pub fn encode_entry(key: &CacheKey, payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&ENTRY_VERSION.to_le_bytes());
        out.extend_from_slice(key.digest());
        out.extend_from_slice(&Sha256::digest(payload));
        out.extend_from_slice(payload);
        out
    }

    fn decode_entry(key: &CacheKey, bytes: &[u8]) -> std::result::Result<Vec<u8>, String> {
        if bytes.len() < HEADER_LEN {
            return Err("entry shorter than its header".into());
        }
        if &bytes[..4] != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != ENTRY_VERSION {
            return Err(format!("entry version {version}, expected {ENTRY_VERSION}"));
        }
        if &bytes[6..38] != key.digest() {
            return Err("key mismatch".into());
        }
        let payload = &bytes[HEADER_LEN..];
        if Sha256::digest(payload).as_slice() != &bytes[38..70] {
            return Err("checksum mismatch".into());
        }
        Ok(payload.to_vec())
    }

    /// Atomically writes the entry. Writers of one key are serialized by a
    /// lock file; storing an identical payload again leaves the file as is.
    pub fn store(&self, key: &CacheKey, payload: &[u8]) -> Result<PathBuf> {
        let dir = self.ensure_tier_dir(key)?;
        let path = self.entry_path(key);
        let encoded = Self::encode_entry(key, payload);
        let _guard = self.lock(key)?;
        if let Ok(existing) = fs::read(&path) {
            if existing == encoded {
                return Ok(path);
            }
        }
        let nanos = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos())
            .unwrap_or_default();
        let tmp = dir.join(format!("{}.tmp-{}-{nanos}", key.hex(), std::process::id()));
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&encoded)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)
        };
        if let Err(e) = write() {
            let _ = fs::remove_file(&tmp);
            return Err(Error::io(&path, e));
        }
        Ok(path)
    }

    /// Reads and validates an entry; invalid entries are renamed to
    /// `<key>.corrupt` and reported as such.
    pub fn load(&self, key: &CacheKey) -> Result<LoadOutcome> {
        if self.dir.exists() && !self.dir.is_dir() {
            return Err(Error::io(
                &self.dir,
                std::io::Error::new(ErrorKind::NotADirectory, "cache path is not a directory"),
            ));
        }
        let path = self.entry_path(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(LoadOutcome::Miss),
            Err(e) => return Err(Error::io(&path, e)),
        };
        match Self::decode_entry(key, &bytes) {
            Ok(payload) => Ok(LoadOutcome::Hit(payload)),
            Err(_) => Ok(LoadOutcome::Quarantined(self.quarantine(key)?)),
        }
    }

    /// Moves an entry aside so it is neither read again nor lost.
    pub fn quarantine(&self, key: &CacheKey) -> Result<PathBuf> {
        let path = self.entry_path(key);
        let target = path.with_extension("corrupt");
        fs::rename(&path, &target).map_err(|e| Error::io(&path, e))?;
        Ok(target)
    }
}

#[cfg(test)]
mod tests {
    use super::super::key::{cache_key, Tier};
    use super::*;
    use serde_json::json;

    fn key() -> CacheKey {
        cache_key(&json!({"d": 1}), &json!([]), "fp", Tier::Loaded).unwrap()
    }

    #[test]
    fn store_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::new(dir.path());
        assert_eq!(store.load(&key()).unwrap(), LoadOutcome::Miss);
        let path = store.store(&key(), b"payload").unwrap();
        assert!(path.ends_with(format!("loaded/{}.bin", key().hex())));
        assert_eq!(store.load(&key()).unwrap(), LoadOutcome::Hit(b"payload".to_vec()));
        let first = fs::read(&path).unwrap();
        store.store(&key(), b"payload").unwrap();
        assert_eq!(fs::read(&path).unwrap(), first);
    }

    #[test]
    fn flipped_byte_is_quarantined() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::new(dir.path());
        let path = store.store(&key(), b"payload").unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&path, bytes).unwrap();
        match store.load(&key()).unwrap() {
            LoadOutcome::Quarantined(p) => assert!(p.exists() && !path.exists()),
            other => panic!("expected quarantine, got {other:?}"),
        }
        assert_eq!(store.load(&key()).unwrap(), LoadOutcome::Miss);
    }

    #[test]
    fn held_lock_times_out_as_busy() {
        let dir = tempfile::tempdir().unwrap();
        let store = CacheStore::new(dir.path()).with_lock_timeout(Duration::from_millis(50));
        fs::create_dir_all(dir.path().join("loaded")).unwrap();
        fs::write(store.lock_path(&key()), b"").unwrap();
        assert!(matches!(store.store(&key(), b"x"), Err(Error::CacheBusy(_))));
    }
}
