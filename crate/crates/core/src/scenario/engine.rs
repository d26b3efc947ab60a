use std::sync::Arc;

use super::{Event, EventKind, RunLog, RunMeta, RunRow, Scenario, ScenarioError};
use crate::channel::{establish, ChannelError, Refresh, SessionPair};
use crate::kms::{KeyManager, KmsConfig, KmsError, SaeId, SimClock};
use crate::phys::{evaluate, QkdModelParams, SopState};
use crate::session::QkdLink;

/// SAE identities of the two Waveserver endpoints the link keys.
pub const MASTER_SAE: &str = "waveserver-a";
pub const SLAVE_SAE: &str = "waveserver-b";

const TICK_S: f64 = 1.0;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's seed.
    pub seed: Option<u64>,
    pub kms: KmsConfig,
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    rad_s: f64,
    start_s: f64,
    duration_s: f64,
}

impl Burst {
    /// SOP state seen over `[t0, t1)`: how long the burst has lasted by the
    /// end of the tick, or `None` if it does not touch the tick.
    fn during(&self, t0: f64, t1: f64) -> Option<SopState<f64>> {
        let end = self.start_s + self.duration_s;
        if self.start_s >= t1 || end < t0 || (end == t0 && self.duration_s > 0.0) {
            return None;
        }
        Some(SopState {
            angular_velocity_rad_s: self.rad_s,
            duration_s: end.min(t1) - self.start_s,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct PendingSessions {
    count: usize,
    refresh_hz: f64,
}

/// Runs a scenario one simulated second per tick. Events stamped in
/// `[k, k+1)` apply before tick `k` is evaluated; the row for tick `k` is
/// stamped `k + 1`.
pub fn run(scenario: &Scenario, params: &QkdModelParams<f64>, opts: &RunOptions) -> Result<RunLog, ScenarioError> {
    let events = scenario.validate()?;
    params.validate()?;
    let seed = opts.seed.unwrap_or(scenario.seed);
    let thresholds = scenario.thresholds.unwrap_or_default();

    let mut plan = scenario.initial.plan.resolve()?;
    let mut span = scenario.initial.span;
    let mut link = QkdLink::new(seed, thresholds);
    let clock = Arc::new(SimClock::new(0.0));
    let kms = KeyManager::new(opts.kms.clone(), clock.clone());
    let master = SaeId::new(MASTER_SAE).expect("static id");
    let slave = SaeId::new(SLAVE_SAE).expect("static id");
    kms.register_pair(&master, &slave).map_err(runtime)?;

    let mut sessions: Vec<SessionPair> = Vec::new();
    let mut pending: Vec<PendingSessions> = Vec::new();
    let mut bursts: Vec<Burst> = Vec::new();
    let mut next_event = 0usize;
    let ticks = scenario.duration_s.ceil() as u64;
    let mut rows = Vec::with_capacity(ticks as usize);

    for k in 0..ticks {
        let t0 = k as f64;
        let t1 = t0 + TICK_S;
        while next_event < events.len() && events[next_event].at_s < t1 {
            let Event { at_s, kind } = &events[next_event];
            match kind {
                EventKind::SetDistance { km } => span.length_km = *km,
                EventKind::SetLaunchPower {
                    wavelength_nm,
                    power_dbm,
                } => plan.set_power(*wavelength_nm, *power_dbm)?,
                EventKind::AddChannel { channel } => plan.add_channel(channel.clone())?,
                EventKind::AttenuationStep { db } => span.extra_loss_db += db,
                EventKind::SopBurst { rad_s, duration_s } => bursts.push(Burst {
                    rad_s: *rad_s,
                    start_s: *at_s,
                    duration_s: *duration_s,
                }),
                EventKind::StartSessions { count, refresh_hz } => pending.push(PendingSessions {
                    count: *count,
                    refresh_hz: *refresh_hz,
                }),
            }
            next_event += 1;
        }
        bursts.retain(|b| b.start_s + b.duration_s >= t0);

        // The most damaging burst touching this tick decides the gate.
        let sop = bursts
            .iter()
            .filter_map(|b| b.during(t0, t1))
            .max_by(|a, b| {
                crate::phys::sop_factor(b)
                    .total_cmp(&crate::phys::sop_factor(a))
                    .then(a.angular_velocity_rad_s.total_cmp(&b.angular_velocity_rad_s))
            })
            .unwrap_or_else(SopState::calm);

        let eval = evaluate(&plan, &span, &sop, params);
        link.tick(eval.skr_bps, eval.qber, TICK_S).map_err(runtime)?;
        let carved = link.carve_keys();
        kms.deposit(&master, &slave, carved.alice, carved.bob).map_err(runtime)?;
        clock.set(t1);

        let mut starved = false;
        let established_before = sessions.len();
        let mut still_pending = Vec::new();
        for mut p in pending.drain(..) {
            while p.count > 0 {
                match establish(&master, &slave, &kms, p.refresh_hz) {
                    Ok(pair) => {
                        sessions.push(pair);
                        p.count -= 1;
                    }
                    Err(ChannelError::Establish(KmsError::ResourceExhausted { .. })) => {
                        starved = true;
                        break;
                    }
                    Err(e) => return Err(runtime(e)),
                }
            }
            if p.count > 0 {
                still_pending.push(p);
            }
        }
        pending = still_pending;

        for pair in sessions.iter_mut().take(established_before) {
            for _ in 0..pair.refreshes_due(TICK_S) {
                if pair.refresh_tick(&kms).map_err(runtime)? == Refresh::Starved {
                    starved = true;
                }
            }
        }
        if starved {
            link.report_starvation();
        }

        let state = link.state();
        let stored = kms.counters(&master, &slave).map_err(runtime)?.stored;
        rows.push(RunRow {
            sim_time_s: t1,
            qber: state.qber_current,
            skr_bps: state.skr_current,
            buffer_bits: state.key_buffer_bits,
            status: state.status,
            active_alarms: state.active_alarms().collect(),
            keys_consumed_total: sessions.iter().map(SessionPair::keys_fetched).sum(),
            keys_carved_total: link.alice.carved_total(),
            kms_stored_keys: stored as u64,
            channels: plan.channels.len(),
            distance_km: span.length_km,
            extra_loss_db: span.extra_loss_db,
            sop_rad_s: if sop.duration_s > 0.0 || sop.angular_velocity_rad_s > 0.0 {
                sop.angular_velocity_rad_s
            } else {
                0.0
            },
        });
    }

    Ok(RunLog {
        meta: RunMeta {
            name: scenario.name.clone(),
            experiment: scenario.experiment,
            seed,
        },
        rows,
    })
}

fn runtime(e: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Runtime(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{AlarmKind, LinkStatus};

    fn params() -> QkdModelParams<f64> {
        QkdModelParams {
            s0_cps: 6.2308e7,
            dark_cps: 3003.9,
            raman_cps_per_mw_km: 489.6,
            e_det: 0.03503,
            f_ec: 1.4114,
            q_sift: 0.5,
            qber_abort: 0.08645,
        }
    }

    fn scenario(body: &str) -> Scenario {
        Scenario::from_json(&format!(
            r#"{{ "schema_version": 1, "name": "t", "seed": 5,
                 "initial": {{ "plan": {{ "lineup": 10 }}, "span": {{ "length_km": 70 }} }},
                 {body} }}"#
        ))
        .unwrap()
    }

    #[test]
    fn quiet_run_is_steady() {
        let s = scenario(r#""duration_s": 30, "events": []"#);
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        assert_eq!(log.rows.len(), 30);
        let first = &log.rows[0];
        assert_eq!(first.sim_time_s, 1.0);
        for r in &log.rows {
            assert_eq!((r.qber, r.skr_bps, r.status), (first.qber, first.skr_bps, first.status));
            assert!(r.active_alarms.is_empty());
        }
        assert_eq!(first.status, LinkStatus::Running);
        let last = log.rows.last().unwrap();
        assert_eq!(last.keys_carved_total, last.kms_stored_keys);
    }

    #[test]
    fn same_seed_same_bytes() {
        let s = scenario(
            r#""duration_s": 40, "events": [
                { "at_s": 2, "kind": "start_sessions", "count": 5, "refresh_hz": 2 },
                { "at_s": 10.5, "kind": "sop_burst", "rad_s": 80, "duration_s": 15 }
            ]"#,
        );
        let a = run(&s, &params(), &RunOptions::default()).unwrap().to_csv();
        let b = run(&s, &params(), &RunOptions::default()).unwrap().to_csv();
        assert_eq!(a, b);
        let c = run(&s, &params(), &RunOptions { seed: Some(6), ..Default::default() }).unwrap();
        assert_eq!(c.meta.seed, 6);
    }

    #[test]
    fn event_applies_in_its_own_tick() {
        let s = scenario(r#""duration_s": 5, "events": [ { "at_s": 2.5, "kind": "set_distance", "km": 90 } ]"#);
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        let d: Vec<f64> = log.rows.iter().map(|r| r.distance_km).collect();
        assert_eq!(d, vec![70.0, 70.0, 90.0, 90.0, 90.0]);
    }

    #[test]
    fn sessions_consume_and_conserve() {
        let s = scenario(
            r#""duration_s": 20, "events": [ { "at_s": 0, "kind": "start_sessions", "count": 10, "refresh_hz": 1 } ]"#,
        );
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        for r in &log.rows {
            assert!(r.keys_consumed_total <= r.keys_carved_total);
            assert_eq!(r.keys_carved_total, r.keys_consumed_total + r.kms_stored_keys);
        }
        // 10 establishment keys, then 10 refreshes on each later tick.
        assert_eq!(log.rows[0].keys_consumed_total, 10);
        assert_eq!(log.rows.last().unwrap().keys_consumed_total, 10 + 19 * 10);
    }

    #[test]
    fn demand_beyond_rate_starves() {
        let s = scenario(
            r#""duration_s": 20, "events": [ { "at_s": 0, "kind": "start_sessions", "count": 400, "refresh_hz": 1 } ]"#,
        );
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        assert!(log.rows.iter().any(|r| r.active_alarms.contains(&AlarmKind::KeyStarvation)));
        assert!(log.rows.iter().all(|r| r.keys_consumed_total <= r.keys_carved_total));
    }

    #[test]
    fn sustained_sop_halts_and_short_burst_does_not() {
        let s = scenario(r#""duration_s": 40, "events": [ { "at_s": 5, "kind": "sop_burst", "rad_s": 50, "duration_s": 20 } ]"#);
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        assert!(log.rows.iter().any(|r| r.status == LinkStatus::Halted));
        assert_eq!(log.rows.last().unwrap().status, LinkStatus::Running);

        let s = scenario(
            r#""duration_s": 40, "events": [ { "at_s": 5, "kind": "sop_burst", "rad_s": 5.1e6, "duration_s": 0.0005 } ]"#,
        );
        let log = run(&s, &params(), &RunOptions::default()).unwrap();
        assert!(log.rows.iter().all(|r| r.status != LinkStatus::Halted));
        assert_eq!(log.rows[5].sop_rad_s, 5.1e6);
        assert_eq!(log.rows[6].sop_rad_s, 0.0);
    }

    #[test]
    fn burst_window() {
        let b = Burst {
            rad_s: 60.0,
            start_s: 2.5,
            duration_s: 1.0,
        };
        assert!(b.during(1.0, 2.0).is_none());
        assert_eq!(b.during(2.0, 3.0).unwrap().duration_s, 0.5);
        assert_eq!(b.during(3.0, 4.0).unwrap().duration_s, 1.0);
        assert!(b.during(4.0, 5.0).is_none());
    }

    #[test]
    fn invalid_params_rejected_before_running() {
        let s = scenario(r#""duration_s": 5"#);
        let mut p = params();
        p.f_ec = 0.5;
        assert!(matches!(run(&s, &p, &RunOptions::default()), Err(ScenarioError::Invalid(_))));
    }
}
