use thiserror::Error;
use uuid::Uuid;

use super::field::{Field, Gf2_64};
use crate::kms::DeliveredKey;

/// Longest message the byte MAC accepts, in 8-octet blocks.
pub const MAX_BLOCKS: usize = 1 << 16;
pub const BLOCK_BYTES: usize = 8;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MacError {
    #[error("one-time key already used")]
    KeyReused,
    #[error("message of {blocks} blocks exceeds the {max}-block bound")]
    TooLong { blocks: usize, max: usize },
}

/// `sum_i m_i * k1^i` for `i = 1..=len`; zero for an empty message.
pub fn poly_hash<F: Field>(k1: F, blocks: &[F]) -> F {
    blocks.iter().rev().fold(F::ZERO, |acc, &m| (acc + m) * k1)
}

/// Wegman-Carter key: a reusable hash key and a one-time pad.
#[derive(Clone, PartialEq, Eq)]
pub struct WcKey<F> {
    pub k1: F,
    k2: Option<F>,
    /// KMS key the material came from, if any.
    pub source: Option<Uuid>,
}

impl<F: Field> std::fmt::Debug for WcKey<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WcKey")
            .field("used", &self.k2.is_none())
            .field("source", &self.source)
            .finish_non_exhaustive()
    }
}

impl<F: Field> WcKey<F> {
    pub fn new(k1: F, k2: F) -> Self {
        Self {
            k1,
            k2: Some(k2),
            source: None,
        }
    }

    pub fn is_used(&self) -> bool {
        self.k2.is_none()
    }

    fn take_k2(&mut self) -> Result<F, MacError> {
        self.k2.take().ok_or(MacError::KeyReused)
    }

    /// Tags a block message. Consumes the one-time pad.
    pub fn tag_blocks(&mut self, blocks: &[F]) -> Result<F, MacError> {
        let k2 = self.take_k2()?;
        Ok(poly_hash(self.k1, blocks) + k2)
    }

    /// Recomputes and compares. Also consumes the pad.
    pub fn verify_blocks(&mut self, blocks: &[F], tag: F) -> Result<bool, MacError> {
        Ok(self.tag_blocks(blocks)? == tag)
    }
}

/// MAC key over GF(2^64) for octet strings.
pub type AuthKey = WcKey<Gf2_64>;

impl AuthKey {
    /// `k1` from octets 0..8, `k2` from octets 8..16 of a KMS key.
    pub fn from_kms(key: &DeliveredKey) -> Self {
        let word = |r: std::ops::Range<usize>| u64::from_be_bytes(key.material[r].try_into().expect("8 octets"));
        Self {
            k1: Gf2_64(word(0..8)),
            k2: Some(Gf2_64(word(8..16))),
            source: Some(key.key_id),
        }
    }
}

/// 8-octet big-endian blocks, the last zero-padded, then the octet length
/// so that padding cannot alias a different message.
pub fn message_blocks(msg: &[u8]) -> Result<Vec<Gf2_64>, MacError> {
    let data_blocks = msg.len().div_ceil(BLOCK_BYTES);
    if data_blocks > MAX_BLOCKS {
        return Err(MacError::TooLong {
            blocks: data_blocks,
            max: MAX_BLOCKS,
        });
    }
    let mut blocks: Vec<Gf2_64> = msg
        .chunks(BLOCK_BYTES)
        .map(|c| {
            let mut b = [0u8; BLOCK_BYTES];
            b[..c.len()].copy_from_slice(c);
            Gf2_64(u64::from_be_bytes(b))
        })
        .collect();
    blocks.push(Gf2_64(msg.len() as u64));
    Ok(blocks)
}

pub fn wc_tag(key: &mut AuthKey, msg: &[u8]) -> Result<u64, MacError> {
    let blocks = message_blocks(msg)?;
    Ok(key.tag_blocks(&blocks)?.0)
}

pub fn wc_verify(key: &mut AuthKey, msg: &[u8], tag: u64) -> Result<bool, MacError> {
    let blocks = message_blocks(msg)?;
    key.verify_blocks(&blocks, Gf2_64(tag))
}
