use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::transforms::StageSpec;

/// Which checkpoint of the pipeline a key addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tier {
    /// Loaded and split raw data, before any stage.
    Loaded,
    /// State after the stage with this index (a cache point).
    Boundary(usize),
    /// State after the whole pipeline.
    Preprocessed,
}

impl Tier {
    /// Directory holding entries of this tier.
    pub fn dir_name(self) -> &'static str {
        match self {
            Tier::Loaded => "loaded",
            Tier::Boundary(_) => "boundary",
            Tier::Preprocessed => "preprocessed",
        }
    }

    /// The tag mixed into the digest, so equal bodies under different tiers
    /// never share a key.
    pub fn tag(self) -> String {
        match self {
            Tier::Loaded => "loaded".into(),
            Tier::Boundary(b) => format!("boundary:{b}"),
            Tier::Preprocessed => "preprocessed".into(),
        }
    }

    /// Index of the first stage still to run after a hit on this tier.
    pub fn resume_from(self, n_stages: usize) -> usize {
        match self {
            Tier::Loaded => 0,
            Tier::Boundary(b) => b + 1,
            Tier::Preprocessed => n_stages,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub tier: Tier,
    digest: [u8; 32],
}

impl CacheKey {
    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    /// 64 lowercase hex characters.
    pub fn hex(&self) -> String {
        hex::encode(self.digest)
    }
}

/// Canonical JSON bytes: sorted object keys, no insignificant whitespace,
/// shortest round-trip floats, UTF-8.
pub fn canonical_bytes(value: &Value) -> Result<Vec<u8>> {
    check_canonicalizable(value, "$")?;
    Ok(serde_json::to_vec(value)?)
}

fn check_canonicalizable(value: &Value, path: &str) -> Result<()> {
    match value {
        Value::Number(n) if n.as_f64().is_some_and(|f| !f.is_finite()) => {
            Err(Error::Canonicalization(format!("non-finite number at {path}")))
        }
        Value::Array(items) => items
            .iter()
            .enumerate()
            .try_for_each(|(i, v)| check_canonicalizable(v, &format!("{path}[{i}]"))),
        Value::Object(map) => map
            .iter()
            .try_for_each(|(k, v)| check_canonicalizable(v, &format!("{path}.{k}"))),
        _ => Ok(()),
    }
}

/// SHA-256 over (tier tag, 0x00, canonical bytes of the key body).
pub fn cache_key(
    datasource_config: &Value,
    transform_prefix: &Value,
    code_fingerprint: &str,
    tier: Tier,
) -> Result<CacheKey> {
    let body = json!({
        "code": code_fingerprint,
        "datasource": datasource_config,
        "transforms": transform_prefix,
    });
    let mut h = Sha256::new();
    h.update(tier.tag().as_bytes());
    h.update([0u8]);
    h.update(canonical_bytes(&body)?);
    Ok(CacheKey {
        tier,
        digest: h.finalize().into(),
    })
}

/// Every key a pipeline run may consult, deepest tier first.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheKeys {
    pub preprocessed: CacheKey,
    /// Cache-point boundaries in ascending stage order.
    pub boundaries: Vec<CacheKey>,
    pub loaded: CacheKey,
    pub n_stages: usize,
}

impl CacheKeys {
    /// `datasource_config` covers everything that determines the loaded and
    /// split container. Boundary b hashes only stages 0..=b.
    pub fn new(datasource_config: &Value, stages: &[StageSpec], code_fingerprint: &str) -> Result<Self> {
        let configs = stages
            .iter()
            .map(StageSpec::to_config_value)
            .collect::<Result<Vec<_>>>()?;
        let prefix = |end: usize| Value::Array(configs[..end].to_vec());
        let mut boundaries = Vec::new();
        for (b, spec) in stages.iter().enumerate() {
            if spec.cache_point {
                boundaries.push(cache_key(
                    datasource_config,
                    &prefix(b + 1),
                    code_fingerprint,
                    Tier::Boundary(b),
                )?);
            }
        }
        Ok(Self {
            preprocessed: cache_key(
                datasource_config,
                &prefix(stages.len()),
                code_fingerprint,
                Tier::Preprocessed,
            )?,
            boundaries,
            loaded: cache_key(datasource_config, &prefix(0), code_fingerprint, Tier::Loaded)?,
            n_stages: stages.len(),
        })
    }

    /// Keys in lookup order: preprocessed, boundaries from the last back, loaded.
    pub fn lookup_order(&self) -> Vec<&CacheKey> {
        let mut out = vec![&self.preprocessed];
        out.extend(self.boundaries.iter().rev());
        out.push(&self.loaded);
        out
    }

    pub fn boundary(&self, stage: usize) -> Option<&CacheKey> {
        self.boundaries.iter().find(|k| k.tier == Tier::Boundary(stage))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_sorts_keys_and_drops_whitespace() {
        let v: Value = serde_json::from_str("{ \"b\": 1.5, \"a\": [true, null] }").unwrap();
        assert_eq!(canonical_bytes(&v).unwrap(), b"{\"a\":[true,null],\"b\":1.5}");
    }

    #[test]
    fn tiers_separate_equal_bodies() {
        let ds = json!({"x": 1});
        let a = cache_key(&ds, &json!([]), "fp", Tier::Loaded).unwrap();
        let b = cache_key(&ds, &json!([]), "fp", Tier::Preprocessed).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.hex().len(), 64);
    }
}
