use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use dashmap::DashMap;

use crate::sql::Scalar;

/// Monotonic milliseconds. Injectable so TTL expiry can be tested.
pub trait Clock: Send + Sync + fmt::Debug {
    fn now_millis(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    start: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        SystemClock {
            start: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_millis(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Default)]
pub struct ManualClock {
    millis: AtomicU64,
}

impl ManualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.millis
            .fetch_add(by.as_millis() as u64, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_millis(&self) -> u64 {
        self.millis.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheConfig {
    pub ttl: Duration,
    /// Most values kept per (user, point); the oldest go first.
    pub capacity: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            ttl: Duration::from_secs(300),
            capacity: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct Key {
    user: String,
    point: String,
}

#[derive(Debug, Default)]
struct Entry {
    /// value -> insertion time
    values: HashMap<Scalar, u64>,
    /// insertion order; stale pairs (value re-inserted later) are skipped
    order: VecDeque<(Scalar, u64)>,
}

impl Entry {
    fn insert(&mut self, value: Scalar, now: u64) {
        self.values.insert(value.clone(), now);
        self.order.push_back((value, now));
    }

    fn pop_oldest(&mut self) -> Option<(Scalar, u64)> {
        while let Some((v, t)) = self.order.pop_front() {
            if self.values.get(&v) == Some(&t) {
                self.values.remove(&v);
                return Some((v, t));
            }
        }
        None
    }

    fn oldest(&mut self) -> Option<u64> {
        while let Some((v, t)) = self.order.front() {
            if self.values.get(v) == Some(t) {
                return Some(*t);
            }
            self.order.pop_front();
        }
        None
    }

    fn compact(&mut self) {
        if self.order.len() > 2 * self.values.len() + 64 {
            let mut live: Vec<(Scalar, u64)> =
                self.values.iter().map(|(v, t)| (v.clone(), *t)).collect();
            live.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
            self.order = live.into();
        }
    }
}

/// Resource IDs seen in producer responses, per user and injection point.
///
/// Each key is guarded by its own shard lock, so a response's values for one
/// key become visible all at once.
#[derive(Debug, Clone)]
pub struct IdCache {
    entries: Arc<DashMap<Key, Entry>>,
    config: CacheConfig,
    clock: Arc<dyn Clock>,
}

impl IdCache {
    pub fn new(config: CacheConfig) -> Self {
        Self::with_clock(config, Arc::new(SystemClock::new()))
    }

    pub fn with_clock(config: CacheConfig, clock: Arc<dyn Clock>) -> Self {
        IdCache {
            entries: Arc::new(DashMap::new()),
            config,
            clock,
        }
    }

    pub fn config(&self) -> CacheConfig {
        self.config
    }

    fn ttl_millis(&self) -> u64 {
        self.config.ttl.as_millis() as u64
    }

    /// Adds `values` under one key in a single critical section.
    pub fn insert_all(&self, user: &str, point: &str, values: impl IntoIterator<Item = Scalar>) {
        let now = self.clock.now_millis();
        let ttl = self.ttl_millis();
        let key = Key {
            user: user.to_string(),
            point: point.to_string(),
        };
        let mut entry = self.entries.entry(key).or_default();
        while entry.oldest().is_some_and(|t| now.saturating_sub(t) >= ttl) {
            entry.pop_oldest();
        }
        for v in values {
            entry.insert(v, now);
        }
        while entry.values.len() > self.config.capacity {
            entry.pop_oldest();
        }
        entry.compact();
    }

    /// Whether `value` was cached for the key and has not expired.
    pub fn contains(&self, user: &str, point: &str, value: &Scalar) -> bool {
        let key = Key {
            user: user.to_string(),
            point: point.to_string(),
        };
        let Some(entry) = self.entries.get(&key) else {
            return false;
        };
        match entry.values.get(value) {
            Some(t) => self.clock.now_millis().saturating_sub(*t) < self.ttl_millis(),
            None => false,
        }
    }

    /// Live values under one key.
    pub fn len(&self, user: &str, point: &str) -> usize {
        let key = Key {
            user: user.to_string(),
            point: point.to_string(),
        };
        let now = self.clock.now_millis();
        let ttl = self.ttl_millis();
        self.entries
            .get(&key)
            .map(|e| {
                e.values
                    .values()
                    .filter(|t| now.saturating_sub(**t) < ttl)
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.iter().all(|e| e.values.is_empty())
    }

    /// Drops expired values and empty keys.
    pub fn purge_expired(&self) {
        let now = self.clock.now_millis();
        let ttl = self.ttl_millis();
        self.entries.retain(|_, e| {
            while e.oldest().is_some_and(|t| now.saturating_sub(t) >= ttl) {
                e.pop_oldest();
            }
            !e.values.is_empty()
        });
    }

    pub fn clear(&self) {
        self.entries.clear();
    }
}
