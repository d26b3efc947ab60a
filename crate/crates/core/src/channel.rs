//! AES-256-GCM data channel between two SAEs, re-keyed from the KMS on a
//! fixed cadence, and the capacity arithmetic relating key rate to the number
//! of channels a link can protect.

use std::collections::VecDeque;
use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Key, Nonce, Tag};
use thiserror::Error;
use uuid::Uuid;

use crate::kms::{DeliveredKey, KeyDelivery, KmsError, SaeId};
use crate::scalar::Real;

/// Keys from this many earlier epochs still open frames.
pub const RETAINED_EPOCHS: usize = 2;
pub const NONCE_BYTES: usize = 12;
pub const TAG_BYTES: usize = 16;
/// Top bit of the counter half of the nonce marks the slave's sending direction.
const SLAVE_DIRECTION: u64 = 1 << 63;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("session establishment failed: {0}")]
    Establish(KmsError),
    #[error("key delivery failed: {0}")]
    Kms(#[from] KmsError),
    #[error("frame sealed under unknown key {0}")]
    UnknownKey(Uuid),
    #[error("frame failed authentication")]
    AuthFailure,
    #[error("nonce space exhausted under key {0}")]
    NonceExhausted(Uuid),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Master,
    Slave,
}

#[derive(Clone)]
struct SessionKey {
    key_id: Uuid,
    epoch: u32,
    cipher: Aes256Gcm,
}

impl SessionKey {
    fn new(k: &DeliveredKey, epoch: u32) -> Self {
        Self {
            key_id: k.key_id,
            epoch,
            cipher: Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&k.material)),
        }
    }
}

/// One end of an encrypted channel.
#[derive(Clone)]
pub struct ChannelSession {
    pub master: SaeId,
    pub slave: SaeId,
    pub role: Role,
    pub refresh_hz: f64,
    current: SessionKey,
    retained: VecDeque<SessionKey>,
    frame_counter: u64,
    keys_consumed: u64,
    auth_failures: u64,
    starved: bool,
}

impl fmt::Debug for ChannelSession {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChannelSession")
            .field("master", &self.master)
            .field("slave", &self.slave)
            .field("role", &self.role)
            .field("key_id", &self.current.key_id)
            .field("epoch", &self.current.epoch)
            .field("frame_counter", &self.frame_counter)
            .field("keys_consumed", &self.keys_consumed)
            .finish()
    }
}

/// Simulation framing of one encrypted payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub key_id: Uuid,
    pub nonce: [u8; NONCE_BYTES],
    pub aad: Vec<u8>,
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_BYTES],
}

impl Frame {
    /// `key_id (16) ‖ nonce (12) ‖ aad_len (u16) ‖ aad ‖ ct_len (u32) ‖ ct ‖ tag (16)`,
    /// integers big-endian.
    pub fn encode(&self) -> Result<Vec<u8>, ChannelError> {
        let aad_len = u16::try_from(self.aad.len())
            .map_err(|_| ChannelError::InvalidArgument(format!("aad of {} octets", self.aad.len())))?;
        let ct_len = u32::try_from(self.ciphertext.len())
            .map_err(|_| ChannelError::InvalidArgument("ciphertext too long".into()))?;
        let mut out = Vec::with_capacity(16 + NONCE_BYTES + 2 + self.aad.len() + 4 + self.ciphertext.len() + TAG_BYTES);
        out.extend_from_slice(self.key_id.as_bytes());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&aad_len.to_be_bytes());
        out.extend_from_slice(&self.aad);
        out.extend_from_slice(&ct_len.to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ChannelError> {
        let mut rest = bytes;
        let mut take = |n: usize, what: &str| -> Result<&[u8], ChannelError> {
            if rest.len() < n {
                return Err(ChannelError::Malformed(format!("truncated {what}")));
            }
            let (head, tail) = rest.split_at(n);
            rest = tail;
            Ok(head)
        };
        let key_id = Uuid::from_slice(take(16, "key_id")?).expect("16 octets");
        let nonce: [u8; NONCE_BYTES] = take(NONCE_BYTES, "nonce")?.try_into().expect("12 octets");
        let aad_len = u16::from_be_bytes(take(2, "aad_len")?.try_into().expect("2 octets")) as usize;
        let aad = take(aad_len, "aad")?.to_vec();
        let ct_len = u32::from_be_bytes(take(4, "ct_len")?.try_into().expect("4 octets")) as usize;
        let ciphertext = take(ct_len, "ciphertext")?.to_vec();
        let tag: [u8; TAG_BYTES] = take(TAG_BYTES, "tag")?.try_into().expect("16 octets");
        if !rest.is_empty() {
            return Err(ChannelError::Malformed(format!("{} trailing octets", rest.len())));
        }
        Ok(Self {
            key_id,
            nonce,
            aad,
            ciphertext,
            tag,
        })
    }
}

impl ChannelSession {
    fn new(master: SaeId, slave: SaeId, role: Role, key: &DeliveredKey, refresh_hz: f64) -> Self {
        Self {
            master,
            slave,
            role,
            refresh_hz,
            current: SessionKey::new(key, 0),
            retained: VecDeque::new(),
            frame_counter: 0,
            keys_consumed: 0,
            auth_failures: 0,
            starved: false,
        }
    }

    pub fn key_id(&self) -> Uuid {
        self.current.key_id
    }

    pub fn epoch(&self) -> u32 {
        self.current.epoch
    }

    pub fn frame_counter(&self) -> u64 {
        self.frame_counter
    }

    /// Keys adopted by refreshes; the establishment key is not counted.
    pub fn keys_consumed(&self) -> u64 {
        self.keys_consumed
    }

    pub fn auth_failures(&self) -> u64 {
        self.auth_failures
    }

    /// True while the last refresh found the KMS empty.
    pub fn is_starved(&self) -> bool {
        self.starved
    }

    fn rotate(&mut self, key: &DeliveredKey) {
        let epoch = self.current.epoch.wrapping_add(1);
        let old = std::mem::replace(&mut self.current, SessionKey::new(key, epoch));
        self.retained.push_front(old);
        self.retained.truncate(RETAINED_EPOCHS);
        self.frame_counter = 0;
        self.keys_consumed += 1;
        self.starved = false;
    }

    fn nonce(&self) -> [u8; NONCE_BYTES] {
        let dir = match self.role {
            Role::Master => 0,
            Role::Slave => SLAVE_DIRECTION,
        };
        let mut n = [0u8; NONCE_BYTES];
        n[..4].copy_from_slice(&self.current.epoch.to_be_bytes());
        n[4..].copy_from_slice(&(dir | self.frame_counter).to_be_bytes());
        n
    }

    pub fn seal(&mut self, plaintext: &[u8], aad: &[u8]) -> Result<Frame, ChannelError> {
        if self.frame_counter >= SLAVE_DIRECTION - 1 {
            return Err(ChannelError::NonceExhausted(self.current.key_id));
        }
        if aad.len() > u16::MAX as usize {
            return Err(ChannelError::InvalidArgument(format!("aad of {} octets", aad.len())));
        }
        let nonce = self.nonce();
        let mut buf = plaintext.to_vec();
        let tag = self
            .current
            .cipher
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), aad, &mut buf)
            .map_err(|_| ChannelError::InvalidArgument("payload too long for GCM".into()))?;
        self.frame_counter += 1;
        Ok(Frame {
            key_id: self.current.key_id,
            nonce,
            aad: aad.to_vec(),
            ciphertext: buf,
            tag: tag.into(),
        })
    }

    pub fn open(&mut self, frame: &Frame) -> Result<Vec<u8>, ChannelError> {
        let key = std::iter::once(&self.current)
            .chain(self.retained.iter())
            .find(|k| k.key_id == frame.key_id)
            .ok_or(ChannelError::UnknownKey(frame.key_id))?;
        let mut buf = frame.ciphertext.clone();
        let result = key.cipher.decrypt_in_place_detached(
            Nonce::from_slice(&frame.nonce),
            &frame.aad,
            &mut buf,
            Tag::from_slice(&frame.tag),
        );
        match result {
            Ok(()) => Ok(buf),
            Err(_) => {
                self.auth_failures += 1;
                Err(ChannelError::AuthFailure)
            }
        }
    }
}

/// Result of one refresh attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refresh {
    Rotated(Uuid),
    /// KMS had no key; both ends keep the current key.
    Starved,
}

/// The two ends of one channel.
#[derive(Debug, Clone)]
pub struct SessionPair {
    pub master: ChannelSession,
    pub slave: ChannelSession,
    refresh_debt: f64,
}

/// Master pulls one key with `enc_keys`, slave pulls the same key by ID with
/// `dec_keys`.
pub fn establish<K: KeyDelivery + ?Sized>(
    master: &SaeId,
    slave: &SaeId,
    kms: &K,
    refresh_hz: f64,
) -> Result<SessionPair, ChannelError> {
    if !(refresh_hz > 0.0) || !refresh_hz.is_finite() {
        return Err(ChannelError::InvalidArgument(format!("refresh_hz = {refresh_hz}")));
    }
    let (m, s) = fetch_pair(master, slave, kms).map_err(ChannelError::Establish)?;
    Ok(SessionPair {
        master: ChannelSession::new(master.clone(), slave.clone(), Role::Master, &m, refresh_hz),
        slave: ChannelSession::new(master.clone(), slave.clone(), Role::Slave, &s, refresh_hz),
        refresh_debt: 0.0,
    })
}

fn fetch_pair<K: KeyDelivery + ?Sized>(
    master: &SaeId,
    slave: &SaeId,
    kms: &K,
) -> Result<(DeliveredKey, DeliveredKey), KmsError> {
    let m = kms
        .enc_keys(master, slave, 1)?
        .pop()
        .ok_or_else(|| KmsError::NotFound("empty enc_keys response".into()))?;
    let s = kms
        .dec_keys(slave, master, &[m.key_id])?
        .pop()
        .ok_or_else(|| KmsError::NotFound("empty dec_keys response".into()))?;
    if s.key_id != m.key_id || s.material != m.material {
        return Err(KmsError::EndpointMismatch(0));
    }
    Ok((m, s))
}

impl SessionPair {
    /// Pulls exactly one fresh key into both ends. An exhausted KMS leaves
    /// both ends on their current key and marks them starved.
    pub fn refresh_tick<K: KeyDelivery + ?Sized>(&mut self, kms: &K) -> Result<Refresh, ChannelError> {
        match fetch_pair(&self.master.master, &self.master.slave, kms) {
            Ok((m, s)) => {
                self.master.rotate(&m);
                self.slave.rotate(&s);
                Ok(Refresh::Rotated(m.key_id))
            }
            Err(KmsError::ResourceExhausted { .. }) => {
                self.master.starved = true;
                self.slave.starved = true;
                Ok(Refresh::Starved)
            }
            Err(e) => Err(e.into()),
        }
    }

    /// Number of refreshes due after `dt` seconds at the session's rate.
    pub fn refreshes_due(&mut self, dt: f64) -> u64 {
        self.refresh_debt += dt * self.master.refresh_hz;
        let due = (self.refresh_debt + 1e-9).floor();
        self.refresh_debt -= due;
        due as u64
    }

    /// Keys taken from the KMS so far, including the establishment key.
    pub fn keys_fetched(&self) -> u64 {
        1 + self.master.keys_consumed
    }
}

/// How many channels a key rate sustains at one `key_bits` key per channel
/// every `1/refresh_hz` seconds.
pub fn channels_supported<T: Real>(skr_bps: T, key_bits: T, refresh_hz: T) -> Result<u64, ChannelError> {
    for (name, v) in [("skr_bps", skr_bps), ("key_bits", key_bits), ("refresh_hz", refresh_hz)] {
        if !(v > T::zero()) || !v.is_finite() {
            return Err(ChannelError::InvalidArgument(format!("{name} = {v} must be > 0")));
        }
    }
    Ok((skr_bps / (key_bits * refresh_hz)).floor().to_u64().unwrap_or(u64::MAX))
}
