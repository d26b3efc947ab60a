use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;
use uuid::Uuid;

use super::field::Gf256;
use super::mac::{wc_tag, wc_verify, AuthKey, MacError};
use super::shamir::{shamir_reconstruct, shamir_split, Share, ShamirError};
use crate::channel::{establish, ChannelError, Frame, SessionPair};
use crate::kms::{KeyDelivery, KeyManager, KmsConfig, KmsError, SaeId, SimClock};
use crate::session::{AlarmThresholds, QkdLink, KEY_BITS};

/// Largest validator set the demo accepts; keeps quorum enumeration small.
pub const MAX_VALIDATORS: usize = 16;
/// Quorums are listed one per transcript line up to this many.
const QUORUM_LINES: usize = 20;

pub const ORIGIN: &str = "origin";

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Shamir(#[from] ShamirError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Kms(#[from] KmsError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub origin: String,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Transaction {
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(&self.payload).into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropagateConfig {
    /// Number of validators `n`.
    pub validators: usize,
    pub k: usize,
    /// Share index (1-based) whose transport frame is corrupted.
    pub tamper: Option<u32>,
    /// Validator indices (1-based) that receive nothing and send nothing.
    pub offline: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RejectReason {
    InsufficientShares { intact: usize, need: usize },
    Disagreement,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    /// `flagged` lists shares excluded after a tag failure.
    Accepted { digest: [u8; 32], flagged: Vec<u32> },
    Rejected(RejectReason),
}

/// Every KMS key drawn during a run and what it was used for.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KeyAudit {
    pub uses: Vec<(Uuid, String)>,
}

impl KeyAudit {
    fn record(&mut self, id: Uuid, purpose: String) {
        self.uses.push((id, purpose));
    }

    pub fn distinct(&self) -> usize {
        self.uses.iter().map(|(id, _)| id).collect::<HashSet<_>>().len()
    }

    /// True when no KMS key served two purposes.
    pub fn is_clean(&self) -> bool {
        self.distinct() == self.uses.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusResult {
    pub outcome: Outcome,
    /// Digest reached by each quorum, in enumeration order.
    pub quorum_digests: Vec<(Vec<u32>, [u8; 32])>,
    pub audit: KeyAudit,
    pub transcript: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

fn node_name(i: usize) -> String {
    if i == 0 {
        ORIGIN.to_string()
    } else {
        format!("v{i}")
    }
}

struct Envelope {
    from: usize,
    to: usize,
    wire: Vec<u8>,
    tag: u64,
}

/// The complete graph of QKD-keyed sessions between the origin (node 0) and
/// validators `1..=n`.
struct Mesh {
    names: Vec<SaeId>,
    kms: KeyManager,
    sessions: BTreeMap<(usize, usize), SessionPair>,
}

impl Mesh {
    fn build(n: usize, seed: u64, audit: &mut KeyAudit) -> Result<Self, ChainError> {
        let names: Vec<SaeId> = (0..=n).map(|i| SaeId::new(node_name(i))).collect::<Result<_, _>>()?;
        let kms = KeyManager::new(KmsConfig::default(), Arc::new(SimClock::new(0.0)));
        let mut sessions = BTreeMap::new();
        let mut pair_seed = seed;
        for i in 0..=n {
            for j in i + 1..=n {
                // One session key plus one pad per direction.
                let keys = 3;
                kms.register_pair(&names[i], &names[j])?;
                pair_seed = pair_seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let mut link = QkdLink::new(pair_seed, AlarmThresholds::default());
                link.tick((keys * KEY_BITS) as f64, 0.0, 1.0)
                    .map_err(|e| ChainError::InvalidArgument(e.to_string()))?;
                let carved = link.carve_keys();
                kms.deposit(&names[i], &names[j], carved.alice, carved.bob)?;
                let pair = establish(&names[i], &names[j], &kms, 1.0)?;
                audit.record(pair.master.key_id(), format!("session {}-{}", node_name(i), node_name(j)));
                sessions.insert((i, j), pair);
            }
        }
        Ok(Self { names, kms, sessions })
    }

    /// Fresh one-time MAC key for a message between `a` and `b`, held by both.
    fn auth_key(&self, a: usize, b: usize) -> Result<(AuthKey, AuthKey), ChainError> {
        let (m, s) = (a.min(b), a.max(b));
        let sent = self
            .kms
            .enc_keys(&self.names[m], &self.names[s], 1)?
            .pop()
            .ok_or_else(|| KmsError::NotFound("empty enc_keys response".into()))?;
        let got = self
            .kms
            .dec_keys(&self.names[s], &self.names[m], &[sent.key_id])?
            .pop()
            .ok_or_else(|| KmsError::NotFound("empty dec_keys response".into()))?;
        Ok((AuthKey::from_kms(&sent), AuthKey::from_kms(&got)))
    }

    /// Encrypts on `from`'s end of the session and tags the encoded frame.
    fn send(&mut self, from: usize, to: usize, msg: &[u8], aad: &[u8], audit: &mut KeyAudit) -> Result<(Envelope, AuthKey), ChainError> {
        let (mut send_key, recv_key) = self.auth_key(from, to)?;
        audit.record(send_key.source.expect("kms key"), format!("mac {}->{}", node_name(from), node_name(to)));
        let pair = self.sessions.get_mut(&(from.min(to), from.max(to))).expect("complete graph");
        let end = if from < to { &mut pair.master } else { &mut pair.slave };
        let wire = end.seal(msg, aad)?.encode()?;
        let tag = wc_tag(&mut send_key, &wire)?;
        Ok((Envelope { from, to, wire, tag }, recv_key))
    }

    /// Checks the tag before touching the ciphertext; `None` on tag failure.
    fn receive(&mut self, env: &Envelope, key: &mut AuthKey) -> Result<Option<Vec<u8>>, ChainError> {
        if !wc_verify(key, &env.wire, env.tag)? {
            return Ok(None);
        }
        let frame = Frame::decode(&env.wire)?;
        let pair = self.sessions.get_mut(&(env.from.min(env.to), env.from.max(env.to))).expect("complete graph");
        let end = if env.to < env.from { &mut pair.master } else { &mut pair.slave };
        Ok(Some(end.open(&frame)?))
    }
}

fn k_subsets(items: &[u32], k: usize) -> Vec<Vec<u32>> {
    fn go(items: &[u32], k: usize, start: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            if items.len() - i < k - cur.len() {
                break;
            }
            cur.push(items[i]);
            go(items, k, i + 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(items, k, 0, &mut Vec::new(), &mut out);
    out
}

/// Splits `tx` into one share per validator, sends each over its
/// QKD-keyed session with a Wegman-Carter tag, lets validators with intact
/// shares exchange them, and checks that every `k`-quorum reconstructs the
/// same payload.
pub fn propagate(tx: &Transaction, cfg: &PropagateConfig) -> Result<ConsensusResult, ChainError> {
    let n = cfg.validators;
    if tx.payload.is_empty() {
        return Err(ChainError::InvalidArgument("transaction payload is empty".into()));
    }
    if n == 0 || n > MAX_VALIDATORS || cfg.k == 0 || cfg.k > n {
        return Err(ChainError::InvalidArgument(format!(
            "need 1 <= k <= n <= {MAX_VALIDATORS}, got k = {}, n = {n}",
            cfg.k
        )));
    }
    let in_range = |i: u32| (1..=n as u32).contains(&i);
    if cfg.tamper.is_some_and(|t| !in_range(t)) || cfg.offline.iter().any(|&o| !in_range(o)) {
        return Err(ChainError::InvalidArgument(format!("node index outside 1..={n}")));
    }

    let mut t = Vec::new();
    let mut audit = KeyAudit::default();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let tamper = cfg.tamper.map_or("none".to_string(), |i| i.to_string());
    t.push(format!("chain-demo validators={n} k={} tamper={tamper} seed={}", cfg.k, cfg.seed));
    t.push(format!(
        "tx origin={} seq={} octets={} digest={}",
        tx.origin,
        tx.seq,
        tx.payload.len(),
        hex(&tx.digest()[..8])
    ));

    let mut mesh = Mesh::build(n, cfg.seed, &mut audit)?;
    t.push(format!("mesh nodes={} sessions={}", n + 1, mesh.sessions.len()));
    let online = |v: usize| !cfg.offline.contains(&(v as u32));

    let shares = shamir_split(&tx.payload, cfg.k, n, rng.random())?;
    t.push(format!("split shares={n} threshold={}", cfg.k));

    // Origin -> validator i carries share i.
    let mut outbox = Vec::with_capacity(n);
    for share in &shares {
        let to = share.index as usize;
        let aad = format!("{}:{}:{}", tx.origin, tx.seq, share.index);
        let (mut env, key) = mesh.send(0, to, &share.to_bytes(), aad.as_bytes(), &mut audit)?;
        if cfg.tamper == Some(share.index) {
            // One ciphertext bit flipped in transit.
            let frame = Frame::decode(&env.wire)?;
            let ct_start = env.wire.len() - frame.ciphertext.len() - frame.tag.len();
            let bit = rng.random_range(0..frame.ciphertext.len() * 8);
            env.wire[ct_start + bit / 8] ^= 1 << (bit % 8);
        }
        outbox.push((env, key));
    }
    outbox.shuffle(&mut rng);

    let mut own: BTreeMap<u32, Share<Gf256>> = BTreeMap::new();
    let mut flagged = Vec::new();
    for (seq, (env, mut key)) in outbox.into_iter().enumerate() {
        let idx = env.to as u32;
        let route = format!("deliver #{} share={idx} origin->v{idx}", seq + 1);
        if !online(env.to) {
            t.push(format!("{route} dropped offline"));
            continue;
        }
        match mesh.receive(&env, &mut key)? {
            None => {
                t.push(format!("{route} tag=FAIL excluded"));
                flagged.push(idx);
            }
            Some(bytes) => {
                let share = Share::from_bytes(&bytes)?;
                if share.index != idx || share.values.len() != tx.payload.len() {
                    return Err(ChainError::InvalidArgument(format!("v{idx} got a malformed share")));
                }
                t.push(format!("{route} tag=ok"));
                own.insert(idx, share);
            }
        }
    }
    flagged.sort_unstable();

    // Validators holding an intact share send it to every other holder.
    let holders: Vec<u32> = own.keys().copied().collect();
    let mut views: BTreeMap<u32, BTreeMap<u32, Share<Gf256>>> =
        holders.iter().map(|&v| (v, BTreeMap::from([(v, own[&v].clone())]))).collect();
    let mut exchange = Vec::new();
    for &a in &holders {
        for &b in &holders {
            if a != b {
                let aad = format!("{}:{}:{}", tx.origin, tx.seq, a);
                exchange.push(mesh.send(a as usize, b as usize, &own[&a].to_bytes(), aad.as_bytes(), &mut audit)?);
            }
        }
    }
    exchange.shuffle(&mut rng);
    let (sent, mut verified) = (exchange.len(), 0usize);
    for (env, mut key) in exchange {
        if let Some(bytes) = mesh.receive(&env, &mut key)? {
            let share = Share::from_bytes(&bytes)?;
            views.get_mut(&(env.to as u32)).expect("holder").insert(share.index, share);
            verified += 1;
        }
    }
    t.push(format!("exchange messages={sent} verified={verified}"));

    let mut quorum_digests = Vec::new();
    let outcome = if holders.len() < cfg.k {
        t.push(format!("quorum none intact={} need={}", holders.len(), cfg.k));
        Outcome::Rejected(RejectReason::InsufficientShares {
            intact: holders.len(),
            need: cfg.k,
        })
    } else {
        for q in k_subsets(&holders, cfg.k) {
            // Every member pools the same shares; the first member's view stands for all.
            let view = &views[&q[0]];
            let pooled: Vec<Share<Gf256>> = q.iter().map(|i| view[i].clone()).collect();
            let digest: [u8; 32] = Sha256::digest(shamir_reconstruct(&pooled, cfg.k)?).into();
            quorum_digests.push((q, digest));
        }
        for (q, d) in quorum_digests.iter().take(QUORUM_LINES) {
            let members: Vec<String> = q.iter().map(|i| format!("v{i}")).collect();
            t.push(format!("quorum {} digest={}", members.join(","), hex(&d[..8])));
        }
        let first = quorum_digests[0].1;
        let agree = quorum_digests.iter().all(|(_, d)| *d == first);
        t.push(format!(
            "quorums={} agree={}",
            quorum_digests.len(),
            if agree { "yes" } else { "no" }
        ));
        if agree {
            Outcome::Accepted { digest: first, flagged: flagged.clone() }
        } else {
            Outcome::Rejected(RejectReason::Disagreement)
        }
    };

    t.push(format!(
        "audit keys={} distinct={} {}",
        audit.uses.len(),
        audit.distinct(),
        if audit.is_clean() { "ok" } else { "REUSE" }
    ));
    t.push(match &outcome {
        Outcome::Accepted { flagged, .. } if flagged.is_empty() => "result ACCEPTED".to_string(),
        Outcome::Accepted { flagged, .. } => format!(
            "result ACCEPTED flagged={}",
            flagged.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
        ),
        Outcome::Rejected(RejectReason::InsufficientShares { intact, need }) => {
            format!("result REJECTED insufficient-shares intact={intact} need={need}")
        }
        Outcome::Rejected(RejectReason::Disagreement) => "result REJECTED disagreement".to_string(),
    });

    Ok(ConsensusResult {
        outcome,
        quorum_digests,
        audit,
        transcript: t,
    })
}

/// Deterministic demo transaction for a seed.
pub fn demo_transaction(seed: u64) -> Transaction {
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x7478);
    let amount: u32 = rng.random_range(1..10_000);
    Transaction {
        origin: ORIGIN.to_string(),
        seq: 1,
        payload: format!("transfer {amount} units from acct-{} to acct-{}", rng.random_range(100..999), rng.random_range(100..999))
            .into_bytes(),
    }
}
