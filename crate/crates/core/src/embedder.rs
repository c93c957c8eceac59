//! Text embedders and the per-namespace registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::RwLock;

use crate::model::{Namespace, DEFAULT_HIGH_DIM};
use crate::vector::normalize;
use crate::{Error, Result};

/// Maps text to a unit vector. Must be deterministic for a fixed name and
/// input.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f32>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Hashes lowercase alphanumeric tokens into signed buckets.
///
/// Each token adds ±1 to one bucket chosen by its hash; a second hash picks
/// the sign. Text without tokens maps to a fixed sentinel direction.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    name: String,
    dimension: usize,
    seed: u64,
}

impl HashEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedder dimension must be positive");
        HashEmbedder {
            name: format!("hash-{dimension}-{seed}"),
            dimension,
            seed,
        }
    }

    pub fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
        text.split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder::new(DEFAULT_HIGH_DIM, 0)
    }
}

impl Embedder for HashEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0.0f32; self.dimension];
        for token in Self::tokens(text) {
            let h = fnv1a(self.seed, token.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if fnv1a(self.seed ^ 0x5bd1_e995, token.as_bytes()) & 1 == 0 {
                1.0
            } else {
                -1.0
            };
            acc[bucket] += sign;
        }
        match normalize(&acc) {
            Ok(v) => v,
            Err(_) => {
                let mut v = vec![0.0f32; self.dimension];
                v[0] = 1.0;
                v
            }
        }
    }
}

/// Chooses the embedder for each namespace, with an optional fallback.
#[derive(Default)]
pub struct EmbedderRegistry {
    by_namespace: RwLock<BTreeMap<Namespace, Arc<dyn Embedder>>>,
    default: RwLock<Option<Arc<dyn Embedder>>>,
}

impl EmbedderRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_default(embedder: Arc<dyn Embedder>) -> Self {
        let r = Self::default();
        r.set_default(embedder);
        r
    }

    pub fn set_default(&self, embedder: Arc<dyn Embedder>) {
        *self.default.write() = Some(embedder);
    }

    pub fn register(&self, ns: Namespace, embedder: Arc<dyn Embedder>) {
        self.by_namespace.write().insert(ns, embedder);
    }

    pub fn get(&self, ns: &Namespace) -> Result<Arc<dyn Embedder>> {
        if let Some(e) = self.by_namespace.read().get(ns) {
            return Ok(e.clone());
        }
        self.default
            .read()
            .clone()
            .ok_or_else(|| Error::EmbedderMissing(ns.clone()))
    }
}

impl std::fmt::Debug for EmbedderRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmbedderRegistry")
            .field(
                "namespaces",
                &self
                    .by_namespace
                    .read()
                    .keys()
                    .map(|k| k.as_str().to_string())
                    .collect::<Vec<_>>(),
            )
            .field("default", &self.default.read().as_ref().map(|e| e.name().to_string()))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::is_unit;

    #[test]
    fn deterministic_and_unit() {
        let e = HashEmbedder::new(64, 7);
        let a = e.embed("The quick brown fox");
        assert_eq!(a, e.embed("the QUICK brown, fox!"));
        assert!(is_unit(&a));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn empty_text_maps_to_sentinel() {
        let e = HashEmbedder::new(8, 0);
        let v = e.embed("  ...  ");
        assert_eq!(v[0], 1.0);
        assert!(is_unit(&v));
    }

    #[test]
    fn seeds_differ() {
        let a = HashEmbedder::new(64, 1).embed("memory engine");
        let b = HashEmbedder::new(64, 2).embed("memory engine");
        assert_ne!(a, b);
    }

    #[test]
    fn registry_falls_back_to_default() {
        let ns = Namespace::new("agent").unwrap();
        let r = EmbedderRegistry::new();
        assert!(matches!(r.get(&ns), Err(Error::EmbedderMissing(_))));
        r.set_default(Arc::new(HashEmbedder::new(16, 0)));
        assert_eq!(r.get(&ns).unwrap().dimension(), 16);
        r.register(ns.clone(), Arc::new(HashEmbedder::new(32, 0)));
        assert_eq!(r.get(&ns).unwrap().dimension(), 32);
    }
}
