//! QKD link endpoints: integrate the modelled key rate into a key buffer,
//! carve fixed-size keys and raise degradation alarms ahead of an outage.
//!
//! Key material comes from a seeded ChaCha stream shared by the two
//! endpoints; it stands in for the sifted and distilled key the hardware
//! would produce.

use std::collections::BTreeSet;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use uuid::Uuid;

pub const KEY_BITS: u64 = 256;
pub const KEY_BYTES: usize = (KEY_BITS / 8) as usize;
/// A link with zero key rate for longer than this is declared halted.
pub const HALT_GRACE_S: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("tick length must be > 0, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid model output: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStatus {
    Running,
    Degraded,
    Halted,
}

impl fmt::Display for LinkStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkStatus::Running => "Running",
            LinkStatus::Degraded => "Degraded",
            LinkStatus::Halted => "Halted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AlarmKind {
    QberWarn,
    SkrLow,
    KeyStarvation,
    Halt,
}

impl fmt::Display for AlarmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlarmKind::QberWarn => "QberWarn",
            AlarmKind::SkrLow => "SkrLow",
            AlarmKind::KeyStarvation => "KeyStarvation",
            AlarmKind::Halt => "Halt",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alarm {
    pub kind: AlarmKind,
    pub raised_at_s: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlarmThresholds {
    pub qber_warn: f64,
    pub skr_low: f64,
    pub buffer_low: u64,
}

impl Default for AlarmThresholds {
    /// QBER warning just above the 10-channel operating point; SKR floor at the
    /// key demand of ten channels refreshed once per second.
    fn default() -> Self {
        Self {
            qber_warn: 0.044,
            skr_low: 10.0 * KEY_BITS as f64,
            buffer_low: 0,
        }
    }
}

/// A 256-bit key as held by one endpoint. `Debug` never prints the material.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyBlock {
    pub key_id: Uuid,
    pub material: [u8; KEY_BYTES],
    pub epoch: u64,
}

impl fmt::Debug for KeyBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyBlock")
            .field("key_id", &self.key_id)
            .field("material", &"<redacted>")
            .field("epoch", &self.epoch)
            .finish()
    }
}

/// Live observables of one link endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct QkdLinkState {
    pub qber_current: f64,
    pub skr_current: f64,
    pub key_buffer_bits: u64,
    pub status: LinkStatus,
    /// Every alarm ever raised, in order.
    pub alarms: Vec<Alarm>,
    pub sim_time_s: f64,
    /// Sub-bit remainder of the rate integration.
    carry_bits: f64,
    zero_rate_s: f64,
    starved: bool,
    active: BTreeSet<AlarmKind>,
    thresholds: AlarmThresholds,
}

/// Per-tick record handed to the scenario log.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkLogRecord {
    pub sim_time_s: f64,
    pub qber: f64,
    pub skr_bps: f64,
    pub buffer_bits: u64,
    pub status: LinkStatus,
}

impl QkdLinkState {
    pub fn new(thresholds: AlarmThresholds) -> Self {
        Self {
            qber_current: 0.0,
            skr_current: 0.0,
            key_buffer_bits: 0,
            status: LinkStatus::Running,
            alarms: Vec::new(),
            sim_time_s: 0.0,
            carry_bits: 0.0,
            zero_rate_s: 0.0,
            starved: false,
            active: BTreeSet::new(),
            thresholds,
        }
    }

    /// State with the given observables and no history, for evaluating alarms.
    pub fn snapshot(qber: f64, skr: f64, buffer_bits: u64, sim_time_s: f64) -> Self {
        let mut s = Self::new(AlarmThresholds::default());
        s.qber_current = qber;
        s.skr_current = skr;
        s.key_buffer_bits = buffer_bits;
        s.sim_time_s = sim_time_s;
        s
    }

    pub fn thresholds(&self) -> &AlarmThresholds {
        &self.thresholds
    }

    pub fn active_alarms(&self) -> impl Iterator<Item = AlarmKind> + '_ {
        self.active.iter().copied()
    }

    pub fn is_active(&self, kind: AlarmKind) -> bool {
        self.active.contains(&kind)
    }

    /// Advances simulated time by `dt`, crediting `model_skr * dt` bits.
    /// Returns the whole bits credited this tick.
    pub fn tick(&mut self, model_skr: f64, model_qber: f64, dt: f64) -> Result<u64, SessionError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SessionError::NonPositiveDt(dt));
        }
        if !(model_skr >= 0.0) || !model_skr.is_finite() {
            return Err(SessionError::InvalidInput(format!("skr {model_skr}")));
        }
        if !(0.0..=0.5).contains(&model_qber) {
            return Err(SessionError::InvalidInput(format!("qber {model_qber}")));
        }
        let gained = model_skr * dt + self.carry_bits;
        let whole = gained.floor();
        self.carry_bits = gained - whole;
        let credited = whole as u64;
        self.key_buffer_bits += credited;
        self.qber_current = model_qber;
        self.skr_current = model_skr;
        self.sim_time_s += dt;
        if model_skr == 0.0 {
            self.zero_rate_s += dt;
        } else {
            self.zero_rate_s = 0.0;
        }
        self.starved = false;
        self.reevaluate();
        Ok(credited)
    }

    /// Takes `count` keys worth of bits out of the buffer; caller has checked.
    fn take_keys(&mut self, count: u64) {
        self.key_buffer_bits -= count * KEY_BITS;
    }

    /// Marks that a key consumer went without a key during this tick.
    pub fn report_starvation(&mut self) {
        self.starved = true;
        self.reevaluate();
    }

    fn conditions(&self, th: &AlarmThresholds) -> BTreeSet<AlarmKind> {
        let mut set = BTreeSet::new();
        let halted = self.zero_rate_s > HALT_GRACE_S;
        if self.qber_current >= th.qber_warn {
            set.insert(AlarmKind::QberWarn);
        }
        if halted {
            set.insert(AlarmKind::Halt);
        } else if self.skr_current <= th.skr_low {
            set.insert(AlarmKind::SkrLow);
        }
        if self.key_buffer_bits < th.buffer_low || self.starved {
            set.insert(AlarmKind::KeyStarvation);
        }
        set
    }

    fn describe(&self, kind: AlarmKind, th: &AlarmThresholds) -> String {
        match kind {
            AlarmKind::QberWarn => format!("qber {:.5} >= {:.5}", self.qber_current, th.qber_warn),
            AlarmKind::SkrLow => format!("skr {:.1} bps <= {:.1}", self.skr_current, th.skr_low),
            AlarmKind::KeyStarvation if self.starved => "key consumer starved".to_string(),
            AlarmKind::KeyStarvation => format!("buffer {} bits < {}", self.key_buffer_bits, th.buffer_low),
            AlarmKind::Halt => format!("no key for {:.0} s", self.zero_rate_s),
        }
    }

    /// Alarms whose condition holds now but was not active before: each
    /// threshold crossing is reported once.
    pub fn alarm_eval(&self, thresholds: &AlarmThresholds) -> Vec<Alarm> {
        self.conditions(thresholds)
            .difference(&self.active)
            .map(|&kind| Alarm {
                kind,
                raised_at_s: self.sim_time_s,
                detail: self.describe(kind, thresholds),
            })
            .collect()
    }

    fn reevaluate(&mut self) {
        let th = self.thresholds;
        let raised = self.alarm_eval(&th);
        self.active = self.conditions(&th);
        self.alarms.extend(raised);
        self.status = if self.active.contains(&AlarmKind::Halt) {
            LinkStatus::Halted
        } else if self.active.is_empty() {
            LinkStatus::Running
        } else {
            LinkStatus::Degraded
        };
    }

    pub fn log_record(&self) -> LinkLogRecord {
        LinkLogRecord {
            sim_time_s: self.sim_time_s,
            qber: self.qber_current,
            skr_bps: self.skr_current,
            buffer_bits: self.key_buffer_bits,
            status: self.status,
        }
    }
}

/// Deterministic key stream; both ends of a link seed it identically.
#[derive(Debug, Clone)]
pub struct KeyStream {
    rng: ChaCha20Rng,
    next_epoch: u64,
}

impl KeyStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            next_epoch: 0,
        }
    }

    pub fn next_block(&mut self) -> KeyBlock {
        let mut id = [0u8; 16];
        self.rng.fill_bytes(&mut id);
        let mut material = [0u8; KEY_BYTES];
        self.rng.fill_bytes(&mut material);
        let epoch = self.next_epoch;
        self.next_epoch += 1;
        KeyBlock {
            key_id: uuid::Builder::from_random_bytes(id).into_uuid(),
            material,
            epoch,
        }
    }
}

/// One side of a QKD link: its observable state and its key stream.
#[derive(Debug, Clone)]
pub struct QkdEndpoint {
    pub state: QkdLinkState,
    stream: KeyStream,
    carved_total: u64,
}

impl QkdEndpoint {
    pub fn new(seed: u64, thresholds: AlarmThresholds) -> Self {
        Self {
            state: QkdLinkState::new(thresholds),
            stream: KeyStream::new(seed),
            carved_total: 0,
        }
    }

    pub fn tick(&mut self, model_skr: f64, model_qber: f64, dt: f64) -> Result<u64, SessionError> {
        self.state.tick(model_skr, model_qber, dt)
    }

    /// Cuts every whole 256-bit key out of the buffer.
    pub fn carve_keys(&mut self) -> Vec<KeyBlock> {
        let count = self.state.key_buffer_bits / KEY_BITS;
        self.state.take_keys(count);
        self.carved_total += count;
        (0..count).map(|_| self.stream.next_block()).collect()
    }

    pub fn carved_total(&self) -> u64 {
        self.carved_total
    }
}

/// Both endpoints of one link, driven by the same model outputs.
#[derive(Debug, Clone)]
pub struct QkdLink {
    pub alice: QkdEndpoint,
    pub bob: QkdEndpoint,
}

/// Keys carved on both ends in one step; position `i` on each side is the same key.
#[derive(Debug, Clone, PartialEq)]
pub struct CarvedKeys {
    pub alice: Vec<KeyBlock>,
    pub bob: Vec<KeyBlock>,
}

impl QkdLink {
    pub fn new(seed: u64, thresholds: AlarmThresholds) -> Self {
        Self {
            alice: QkdEndpoint::new(seed, thresholds),
            bob: QkdEndpoint::new(seed, thresholds),
        }
    }

    pub fn tick(&mut self, model_skr: f64, model_qber: f64, dt: f64) -> Result<u64, SessionError> {
        let a = self.alice.tick(model_skr, model_qber, dt)?;
        self.bob.tick(model_skr, model_qber, dt)?;
        Ok(a)
    }

    pub fn carve_keys(&mut self) -> CarvedKeys {
        CarvedKeys {
            alice: self.alice.carve_keys(),
            bob: self.bob.carve_keys(),
        }
    }

    /// Alice's view; Bob's is identical by construction.
    pub fn state(&self) -> &QkdLinkState {
        &self.alice.state
    }

    pub fn report_starvation(&mut self) {
        self.alice.state.report_starvation();
        self.bob.state.report_starvation();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn link() -> QkdLink {
        QkdLink::new(7, AlarmThresholds::default())
    }

    #[test]
    fn tick_integrates_rate() {
        let mut l = link();
        assert_eq!(l.tick(66163.0, 0.0414, 1.0).unwrap(), 66163);
        assert_eq!(l.state().key_buffer_bits, 66163);
        let before = l.state().key_buffer_bits;
        l.tick(0.0, 0.0414, 1.0).unwrap();
        assert_eq!(l.state().key_buffer_bits, before);
    }

    #[test]
    fn fractional_rate_carries() {
        let mut l = link();
        for _ in 0..4 {
            l.tick(0.25, 0.04, 1.0).unwrap();
        }
        assert_eq!(l.state().key_buffer_bits, 1);
    }

    #[test]
    fn tick_rejects_bad_dt() {
        let mut l = link();
        assert_eq!(l.tick(1.0, 0.04, 0.0), Err(SessionError::NonPositiveDt(0.0)));
        assert!(l.tick(1.0, 0.04, -1.0).is_err());
        assert!(l.tick(-1.0, 0.04, 1.0).is_err());
        assert!(l.tick(1.0, 0.7, 1.0).is_err());
    }

    #[test]
    fn long_zero_rate_halts() {
        let mut l = link();
        l.tick(66163.0, 0.0414, 1.0).unwrap();
        assert_ne!(l.state().status, LinkStatus::Halted);
        l.tick(0.0, 0.0414, HALT_GRACE_S + 1.0).unwrap();
        assert_eq!(l.state().status, LinkStatus::Halted);
        assert!(l.state().alarms.iter().any(|a| a.kind == AlarmKind::Halt));
    }

    #[test]
    fn halt_needs_more_than_grace() {
        let mut l = link();
        for _ in 0..10 {
            l.tick(0.0, 0.0414, 1.0).unwrap();
        }
        assert_ne!(l.state().status, LinkStatus::Halted);
        l.tick(0.0, 0.0414, 1.0).unwrap();
        assert_eq!(l.state().status, LinkStatus::Halted);
        // recovery clears the halt
        l.tick(66163.0, 0.0414, 1.0).unwrap();
        assert_eq!(l.state().status, LinkStatus::Running);
    }

    #[test]
    fn carve_examples() {
        let mut e = QkdEndpoint::new(1, AlarmThresholds::default());
        e.tick(66163.0, 0.04, 1.0).unwrap();
        let keys = e.carve_keys();
        assert_eq!(keys.len(), 258);
        assert_eq!(e.state.key_buffer_bits, 115);

        let mut e = QkdEndpoint::new(1, AlarmThresholds::default());
        e.tick(255.0, 0.04, 1.0).unwrap();
        assert!(e.carve_keys().is_empty());
        assert_eq!(e.state.key_buffer_bits, 255);

        let mut e = QkdEndpoint::new(1, AlarmThresholds::default());
        e.tick(512.0, 0.04, 1.0).unwrap();
        assert_eq!(e.carve_keys().len(), 2);
        assert_eq!(e.state.key_buffer_bits, 0);
    }

    #[test]
    fn carved_ids_unique_and_epochs_increase() {
        let mut l = link();
        l.tick(256.0 * 500.0, 0.04, 1.0).unwrap();
        let keys = l.carve_keys().alice;
        let ids: BTreeSet<_> = keys.iter().map(|k| k.key_id).collect();
        assert_eq!(ids.len(), keys.len());
        assert!(keys.windows(2).all(|w| w[1].epoch == w[0].epoch + 1));
    }

    #[test]
    fn alarm_examples() {
        let th = AlarmThresholds::default();
        let warn = QkdLinkState::snapshot(0.045, 66163.0, 1 << 20, 5.0);
        let raised = warn.alarm_eval(&th);
        assert_eq!(raised.iter().map(|a| a.kind).collect::<Vec<_>>(), vec![AlarmKind::QberWarn]);
        assert_eq!(raised[0].raised_at_s, 5.0);

        let healthy = QkdLinkState::snapshot(0.0414, 66163.0, 1 << 20, 5.0);
        assert!(healthy.alarm_eval(&th).is_empty());

        let low = QkdLinkState::snapshot(0.0414, 2000.0, 1 << 20, 5.0);
        assert_eq!(
            low.alarm_eval(&th).iter().map(|a| a.kind).collect::<Vec<_>>(),
            vec![AlarmKind::SkrLow]
        );

        let th2 = AlarmThresholds {
            buffer_low: 1024,
            ..th
        };
        let starving = QkdLinkState::snapshot(0.0414, 66163.0, 100, 5.0);
        assert_eq!(
            starving.alarm_eval(&th2).iter().map(|a| a.kind).collect::<Vec<_>>(),
            vec![AlarmKind::KeyStarvation]
        );
    }

    #[test]
    fn alarms_are_edge_triggered() {
        let mut l = link();
        for _ in 0..5 {
            l.tick(66163.0, 0.046, 1.0).unwrap();
        }
        let warns = l.state().alarms.iter().filter(|a| a.kind == AlarmKind::QberWarn).count();
        assert_eq!(warns, 1);
        assert_eq!(l.state().status, LinkStatus::Degraded);
        l.tick(66163.0, 0.041, 1.0).unwrap();
        assert_eq!(l.state().status, LinkStatus::Running);
        l.tick(66163.0, 0.046, 1.0).unwrap();
        let warns = l.state().alarms.iter().filter(|a| a.kind == AlarmKind::QberWarn).count();
        assert_eq!(warns, 2);
    }

    #[test]
    fn starvation_report_raises_once_per_tick() {
        let mut l = link();
        l.tick(66163.0, 0.04, 1.0).unwrap();
        l.report_starvation();
        l.report_starvation();
        assert!(l.state().is_active(AlarmKind::KeyStarvation));
        assert_eq!(l.state().alarms.len(), 1);
        l.tick(66163.0, 0.04, 1.0).unwrap();
        assert!(!l.state().is_active(AlarmKind::KeyStarvation));
    }

    #[test]
    fn key_block_debug_is_redacted() {
        let k = KeyStream::new(3).next_block();
        let dbg = format!("{k:?}");
        assert!(dbg.contains("redacted"));
        assert!(!dbg.contains(&format!("{:?}", k.material)));
    }

    proptest! {
        #[test]
        fn buffer_conservation(steps in proptest::collection::vec((0.0..200_000.0f64, 0.1..3.0f64, any::<bool>()), 1..60)) {
            let mut e = QkdEndpoint::new(11, AlarmThresholds::default());
            for (skr, dt, carve) in steps {
                let before = e.state.key_buffer_bits;
                let credited = e.tick(skr, 0.04, dt).unwrap();
                // whole bits credited never drift from the integral by a bit or more
                prop_assert!((credited as f64 - skr * dt).abs() < 1.0 + 1e-6);
                let keys = if carve { e.carve_keys().len() as u64 } else { 0 };
                prop_assert_eq!(e.state.key_buffer_bits, before + credited - KEY_BITS * keys);
                if carve {
                    prop_assert!(e.state.key_buffer_bits < KEY_BITS);
                }
            }
        }

        #[test]
        fn endpoints_agree(seed in any::<u64>(), steps in proptest::collection::vec(0.0..5_000.0f64, 1..30)) {
            let mut a = QkdEndpoint::new(seed, AlarmThresholds::default());
            let mut b = QkdEndpoint::new(seed, AlarmThresholds::default());
            for skr in steps {
                a.tick(skr, 0.04, 1.0).unwrap();
                b.tick(skr, 0.04, 1.0).unwrap();
                let ka = a.carve_keys();
                let kb = b.carve_keys();
                prop_assert_eq!(&ka, &kb);
                prop_assert!(ka.iter().all(|k| k.material.len() * 8 == KEY_BITS as usize));
            }
        }

        #[test]
        fn degraded_implies_alarm(steps in proptest::collection::vec((0.0..100_000.0f64, 0.0..0.5f64), 1..40)) {
            let mut l = link();
            for (skr, q) in steps {
                l.tick(skr, q, 1.0).unwrap();
                let s = l.state();
                if s.status == LinkStatus::Degraded {
                    prop_assert!(s.active_alarms().next().is_some());
                }
                prop_assert!(s.alarms.iter().all(|a| a.raised_at_s <= s.sim_time_s));
            }
        }
    }
}
