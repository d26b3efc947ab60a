//! Key management entities with an ETSI GS QKD 014 style delivery interface.
//!
//! Each registered master/slave SAE pair is backed by two key stores, one per
//! KME, filled from the two ends of a QKD link. `get_enc_keys` reserves keys
//! from the master side and releases the peer copies for exactly one
//! `get_dec_keys` delivery on the slave side.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

use crate::session::{KeyBlock, KEY_BITS, KEY_BYTES};

pub const DEFAULT_MAX_KEY_COUNT: usize = 100_000;
pub const DEFAULT_MAX_KEYS_PER_REQUEST: usize = 1024;
pub const DEFAULT_RESERVATION_TTL_S: f64 = 3600.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KmsError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("unknown or already delivered key IDs: {}", .0.iter().map(Uuid::to_string).collect::<Vec<_>>().join(", "))]
    UnknownKeys(Vec<Uuid>),
    #[error("insufficient keys: requested {requested}, stored {stored}")]
    ResourceExhausted { requested: usize, stored: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("key streams of the two endpoints disagree at position {0}")]
    EndpointMismatch(usize),
}

/// Identifier of a secure application entity.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SaeId(String);

impl SaeId {
    pub fn new(id: impl Into<String>) -> Result<Self, KmsError> {
        let id = id.into();
        if id.trim().is_empty() {
            return Err(KmsError::InvalidArgument("SAE ID must be non-empty".into()));
        }
        Ok(Self(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for SaeId {
    type Error = KmsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::new(s)
    }
}

impl From<SaeId> for String {
    fn from(id: SaeId) -> Self {
        id.0
    }
}

impl fmt::Display for SaeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Status data model, field names as on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeStatus {
    #[serde(rename = "source_KME_ID")]
    pub source_kme: String,
    #[serde(rename = "target_KME_ID")]
    pub target_kme: String,
    #[serde(rename = "master_SAE_ID")]
    pub master_sae: SaeId,
    #[serde(rename = "slave_SAE_ID")]
    pub slave_sae: SaeId,
    #[serde(rename = "key_size")]
    pub key_size_bits: u64,
    pub stored_key_count: usize,
    pub max_key_count: usize,
    pub max_key_per_request: usize,
    pub max_key_size: u64,
    pub min_key_size: u64,
    #[serde(rename = "max_SAE_ID_count")]
    pub max_sae_id_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyEntry {
    #[serde(rename = "key_ID")]
    pub key_id: Uuid,
    /// Standard base64 of exactly 32 octets.
    pub key: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyContainer {
    pub keys: Vec<KeyEntry>,
}

/// A key as handed to an SAE.
#[derive(Clone, PartialEq, Eq)]
pub struct DeliveredKey {
    pub key_id: Uuid,
    pub material: [u8; KEY_BYTES],
}

impl fmt::Debug for DeliveredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeliveredKey")
            .field("key_id", &self.key_id)
            .field("material", &"<redacted>")
            .finish()
    }
}

impl KeyContainer {
    fn from_blocks<'a>(blocks: impl IntoIterator<Item = &'a KeyBlock>) -> Self {
        Self {
            keys: blocks
                .into_iter()
                .map(|b| KeyEntry {
                    key_id: b.key_id,
                    key: BASE64.encode(b.material),
                })
                .collect(),
        }
    }

    /// Checks the container invariants and decodes the key material.
    pub fn decode(&self) -> Result<Vec<DeliveredKey>, KmsError> {
        let mut seen = std::collections::HashSet::new();
        self.keys
            .iter()
            .map(|e| {
                if !seen.insert(e.key_id) {
                    return Err(KmsError::InvalidArgument(format!("duplicate key_ID {}", e.key_id)));
                }
                let raw = BASE64
                    .decode(&e.key)
                    .map_err(|err| KmsError::InvalidArgument(format!("key {}: {err}", e.key_id)))?;
                let material: [u8; KEY_BYTES] = raw.try_into().map_err(|v: Vec<u8>| {
                    KmsError::InvalidArgument(format!("key {} has {} bits", e.key_id, v.len() * 8))
                })?;
                Ok(DeliveredKey {
                    key_id: e.key_id,
                    material,
                })
            })
            .collect()
    }

    pub fn key_ids(&self) -> Vec<Uuid> {
        self.keys.iter().map(|k| k.key_id).collect()
    }
}

/// Source of "now" for reservation expiry.
pub trait Clock: Send + Sync {
    fn now_s(&self) -> f64;
}

/// Manually advanced clock for simulated time.
#[derive(Debug, Default)]
pub struct SimClock(AtomicU64);

impl SimClock {
    pub fn new(t: f64) -> Self {
        Self(AtomicU64::new(t.to_bits()))
    }

    pub fn set(&self, t: f64) {
        self.0.store(t.to_bits(), Ordering::SeqCst);
    }
}

impl Clock for SimClock {
    fn now_s(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::SeqCst))
    }
}

/// Wall-clock seconds since construction.
#[derive(Debug)]
pub struct SystemClock(Instant);

impl Default for SystemClock {
    fn default() -> Self {
        Self(Instant::now())
    }
}

impl Clock for SystemClock {
    fn now_s(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_s(&self) -> f64 {
        (**self).now_s()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmsConfig {
    pub max_key_count: usize,
    pub max_keys_per_request: usize,
    pub reservation_ttl_s: f64,
}

impl Default for KmsConfig {
    fn default() -> Self {
        Self {
            max_key_count: DEFAULT_MAX_KEY_COUNT,
            max_keys_per_request: DEFAULT_MAX_KEYS_PER_REQUEST,
            reservation_ttl_s: DEFAULT_RESERVATION_TTL_S,
        }
    }
}

#[derive(Debug)]
struct Reserved {
    block: KeyBlock,
    at_s: f64,
}

#[derive(Debug)]
struct PairStore {
    master_kme: String,
    slave_kme: String,
    /// Master-side key store, oldest first.
    master: VecDeque<KeyBlock>,
    /// Slave-side copies not yet released, same order as `master`.
    slave: VecDeque<KeyBlock>,
    /// Slave-side copies released by `get_enc_keys`, awaiting `get_dec_keys`.
    reserved: HashMap<Uuid, Reserved>,
    delivered_enc: u64,
    delivered_dec: u64,
    expired: u64,
    dropped: u64,
}

impl PairStore {
    fn purge_expired(&mut self, now: f64, ttl: f64) {
        let before = self.reserved.len();
        self.reserved.retain(|_, r| now - r.at_s <= ttl);
        self.expired += (before - self.reserved.len()) as u64;
    }
}

/// Delivery counters for one SAE pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounters {
    pub stored: usize,
    pub reserved: usize,
    pub delivered_enc: u64,
    pub delivered_dec: u64,
    pub expired: u64,
    pub dropped: u64,
}

/// The key manager for a deployment of SAE pairs. Each pair's store is a
/// single critical section.
pub struct KeyManager {
    pairs: RwLock<HashMap<(SaeId, SaeId), Arc<Mutex<PairStore>>>>,
    config: KmsConfig,
    clock: Arc<dyn Clock>,
}

impl fmt::Debug for KeyManager {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyManager").field("config", &self.config).finish_non_exhaustive()
    }
}

impl KeyManager {
    pub fn new(config: KmsConfig, clock: Arc<dyn Clock>) -> Self {
        Self {
            pairs: RwLock::new(HashMap::new()),
            config,
            clock,
        }
    }

    pub fn config(&self) -> &KmsConfig {
        &self.config
    }

    pub fn register_pair(&self, master: &SaeId, slave: &SaeId) -> Result<(), KmsError> {
        if master == slave {
            return Err(KmsError::InvalidArgument("master and slave must differ".into()));
        }
        let mut pairs = self.pairs.write().expect("pair table poisoned");
        let key = (master.clone(), slave.clone());
        if pairs.contains_key(&key) {
            return Err(KmsError::InvalidArgument(format!("pair {master} -> {slave} already registered")));
        }
        pairs.insert(
            key,
            Arc::new(Mutex::new(PairStore {
                master_kme: format!("KME-{master}"),
                slave_kme: format!("KME-{slave}"),
                master: VecDeque::new(),
                slave: VecDeque::new(),
                reserved: HashMap::new(),
                delivered_enc: 0,
                delivered_dec: 0,
                expired: 0,
                dropped: 0,
            })),
        );
        Ok(())
    }

    fn store(&self, master: &SaeId, slave: &SaeId) -> Result<Arc<Mutex<PairStore>>, KmsError> {
        self.pairs
            .read()
            .expect("pair table poisoned")
            .get(&(master.clone(), slave.clone()))
            .cloned()
            .ok_or_else(|| KmsError::NotFound(format!("no key stream between {master} and {slave}")))
    }

    /// Adds freshly carved keys from the master-side and slave-side QKD
    /// endpoints. Keys beyond `max_key_count` are discarded. Returns how many
    /// were stored.
    pub fn deposit(
        &self,
        master: &SaeId,
        slave: &SaeId,
        master_side: Vec<KeyBlock>,
        slave_side: Vec<KeyBlock>,
    ) -> Result<usize, KmsError> {
        if master_side.len() != slave_side.len() {
            return Err(KmsError::EndpointMismatch(master_side.len().min(slave_side.len())));
        }
        if let Some(i) = master_side.iter().zip(&slave_side).position(|(a, b)| a != b) {
            return Err(KmsError::EndpointMismatch(i));
        }
        let store = self.store(master, slave)?;
        let mut s = store.lock().expect("key store poisoned");
        let room = self.config.max_key_count.saturating_sub(s.master.len());
        let take = room.min(master_side.len());
        s.dropped += (master_side.len() - take) as u64;
        s.master.extend(master_side.into_iter().take(take));
        s.slave.extend(slave_side.into_iter().take(take));
        Ok(take)
    }

    pub fn get_status(&self, requester: &SaeId, slave: &SaeId) -> Result<KmeStatus, KmsError> {
        let store = self.store(requester, slave)?;
        let s = store.lock().expect("key store poisoned");
        Ok(KmeStatus {
            source_kme: s.master_kme.clone(),
            target_kme: s.slave_kme.clone(),
            master_sae: requester.clone(),
            slave_sae: slave.clone(),
            key_size_bits: KEY_BITS,
            stored_key_count: s.master.len(),
            max_key_count: self.config.max_key_count,
            max_key_per_request: self.config.max_keys_per_request,
            max_key_size: KEY_BITS,
            min_key_size: KEY_BITS,
            max_sae_id_count: 0,
        })
    }

    /// Reserves `number` keys for the master SAE; all or nothing.
    pub fn get_enc_keys(
        &self,
        master: &SaeId,
        slave: &SaeId,
        number: usize,
        size_bits: u64,
    ) -> Result<KeyContainer, KmsError> {
        if number == 0 {
            return Err(KmsError::InvalidArgument("number must be >= 1".into()));
        }
        if size_bits != KEY_BITS {
            return Err(KmsError::InvalidArgument(format!(
                "key size {size_bits} not supported, only {KEY_BITS}"
            )));
        }
        if number > self.config.max_keys_per_request {
            return Err(KmsError::InvalidArgument(format!(
                "number {number} exceeds max_key_per_request {}",
                self.config.max_keys_per_request
            )));
        }
        let store = self.store(master, slave)?;
        let now = self.clock.now_s();
        let mut s = store.lock().expect("key store poisoned");
        s.purge_expired(now, self.config.reservation_ttl_s);
        if s.master.len() < number {
            return Err(KmsError::ResourceExhausted {
                requested: number,
                stored: s.master.len(),
            });
        }
        let out: Vec<KeyBlock> = s.master.drain(..number).collect();
        let peers: Vec<KeyBlock> = s.slave.drain(..number).collect();
        for block in peers {
            s.reserved.insert(block.key_id, Reserved { block, at_s: now });
        }
        s.delivered_enc += number as u64;
        Ok(KeyContainer::from_blocks(&out))
    }

    /// Delivers the slave-side copies of previously reserved keys, each at
    /// most once. A request naming any unknown ID fails without consuming
    /// the valid ones.
    pub fn get_dec_keys(&self, slave: &SaeId, master: &SaeId, key_ids: &[Uuid]) -> Result<KeyContainer, KmsError> {
        if key_ids.is_empty() {
            return Err(KmsError::InvalidArgument("key_IDs must be non-empty".into()));
        }
        let mut uniq = std::collections::HashSet::new();
        if let Some(dup) = key_ids.iter().find(|id| !uniq.insert(**id)) {
            return Err(KmsError::InvalidArgument(format!("key_ID {dup} requested twice")));
        }
        let store = self.store(master, slave)?;
        let now = self.clock.now_s();
        let mut s = store.lock().expect("key store poisoned");
        s.purge_expired(now, self.config.reservation_ttl_s);
        let missing: Vec<Uuid> = key_ids.iter().filter(|id| !s.reserved.contains_key(id)).copied().collect();
        if !missing.is_empty() {
            return Err(KmsError::UnknownKeys(missing));
        }
        let out: Vec<KeyBlock> = key_ids
            .iter()
            .map(|id| s.reserved.remove(id).expect("checked above").block)
            .collect();
        s.delivered_dec += out.len() as u64;
        Ok(KeyContainer::from_blocks(&out))
    }

    pub fn counters(&self, master: &SaeId, slave: &SaeId) -> Result<PairCounters, KmsError> {
        let store = self.store(master, slave)?;
        let s = store.lock().expect("key store poisoned");
        Ok(PairCounters {
            stored: s.master.len(),
            reserved: s.reserved.len(),
            delivered_enc: s.delivered_enc,
            delivered_dec: s.delivered_dec,
            expired: s.expired,
            dropped: s.dropped,
        })
    }
}

/// Client view of a key delivery service, in-process or remote.
pub trait KeyDelivery {
    fn enc_keys(&self, master: &SaeId, slave: &SaeId, number: usize) -> Result<Vec<DeliveredKey>, KmsError>;
    fn dec_keys(&self, slave: &SaeId, master: &SaeId, key_ids: &[Uuid]) -> Result<Vec<DeliveredKey>, KmsError>;
}

impl KeyDelivery for KeyManager {
    fn enc_keys(&self, master: &SaeId, slave: &SaeId, number: usize) -> Result<Vec<DeliveredKey>, KmsError> {
        self.get_enc_keys(master, slave, number, KEY_BITS)?.decode()
    }

    fn dec_keys(&self, slave: &SaeId, master: &SaeId, key_ids: &[Uuid]) -> Result<Vec<DeliveredKey>, KmsError> {
        self.get_dec_keys(slave, master, key_ids)?.decode()
    }
}
