//! Permissioned-ledger transport over QKD-keyed links: secret sharing of
//! transactions, one-time polynomial MACs, and quorum reconstruction.

mod consensus;
pub mod field;
pub mod mac;
pub mod shamir;

pub use consensus::{
    demo_transaction, propagate, ChainError, ConsensusResult, KeyAudit, Outcome, PropagateConfig, RejectReason,
    Transaction, MAX_VALIDATORS, ORIGIN,
};
pub use field::{Field, Fp, Gf2_64, Gf251, Gf256, Gf7};
pub use mac::{poly_hash, wc_tag, wc_verify, AuthKey, MacError, WcKey};
pub use shamir::{reconstruct, shamir_reconstruct, shamir_split, split, Share, ShamirError};
