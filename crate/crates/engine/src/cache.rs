//! Prompt-keyed function cache scoped to one query execution.
//!
//! Keys are rendered prompts tagged with the output type. Each key maps to a
//! once-cell: the first caller computes the answer and every concurrent or
//! later caller observes that value, so a key is answered exactly once even
//! under parallel evaluation.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use dashmap::DashMap;
use semplan_core::Value;

use crate::oracle::OracleError;

/// Cached outcome of one prompt: the typed answer (NULL when the answer did
/// not parse) and whether parsing failed.
#[derive(Clone, Debug, PartialEq)]
pub struct Answer {
    pub value: Value,
    pub malformed: bool,
}

pub type CachedAnswer = Result<Answer, OracleError>;

#[derive(Default)]
pub struct FunctionCache {
    entries: DashMap<String, Arc<OnceLock<CachedAnswer>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl FunctionCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the cached answer for `key`, computing it with `compute` on
    /// the first probe. The flag is true when this call computed it.
    pub fn get_or_compute(&self, key: &str, compute: impl FnOnce() -> CachedAnswer) -> (CachedAnswer, bool) {
        let cell = match self.entries.get(key) {
            Some(c) => Arc::clone(&c),
            None => Arc::clone(&self.entries.entry(key.to_string()).or_default()),
        };
        let mut computed = false;
        let value = cell
            .get_or_init(|| {
                computed = true;
                compute()
            })
            .clone();
        if computed {
            self.misses.fetch_add(1, Ordering::Relaxed);
        } else {
            self.hits.fetch_add(1, Ordering::Relaxed);
        }
        (value, computed)
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&self) {
        self.entries.clear();
        self.hits.store(0, Ordering::Relaxed);
        self.misses.store(0, Ordering::Relaxed);
    }
}
