//! Scripted experiments over simulated time.
//!
//! A [`Scenario`] is a JSON document: an initial channel plan and fiber span,
//! a seed, a duration and a time-ordered list of events. [`run`] drives the
//! link model, the QKD endpoints, the KMS and any key-refresh sessions one
//! simulated second at a time and records a [`RunLog`].

mod engine;
mod log;
mod report;

pub use engine::{run, RunOptions};
pub use log::{fmt_sig, RunLog, RunLogError, RunMeta, RunRow, RUNLOG_VERSION};
pub use report::{report, Cell, ReportError, ReportKind, SummaryTable};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phys::{ChannelPlan, ClassicalChannel, FiberSpan, ModelError};
use crate::session::AlarmThresholds;

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SECONDS_PER_HOUR: f64 = 60.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("simulation error: {0}")]
    Runtime(String),
}

impl From<ModelError> for ScenarioError {
    fn from(e: ModelError) -> Self {
        ScenarioError::Invalid(e.to_string())
    }
}

/// Which lab experiment a scenario reproduces; decides which report fits its log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ChannelAddup,
    DistanceSweep,
    AttenuationRamp,
    SopTransients,
    #[default]
    Custom,
}

impl Experiment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::ChannelAddup => "channel_addup",
            Experiment::DistanceSweep => "distance_sweep",
            Experiment::AttenuationRamp => "attenuation_ramp",
            Experiment::SopTransients => "sop_transients",
            Experiment::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Experiment::ChannelAddup,
            Experiment::DistanceSweep,
            Experiment::AttenuationRamp,
            Experiment::SopTransients,
            Experiment::Custom,
        ]
        .into_iter()
        .find(|e| e.as_str() == s)
    }
}

/// Initial plan: either a prefix of the lab lineup or an explicit plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PlanSpec {
    Lineup {
        lineup: usize,
        #[serde(default)]
        waveserver_dbm: f64,
    },
    Explicit(ChannelPlan<f64>),
}

impl PlanSpec {
    pub fn resolve(&self) -> Result<ChannelPlan<f64>, ModelError> {
        match self {
            PlanSpec::Lineup { lineup, waveserver_dbm } => ChannelPlan::lineup(*lineup, *waveserver_dbm),
            PlanSpec::Explicit(plan) => {
                plan.validate()?;
                Ok(plan.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Initial {
    pub plan: PlanSpec,
    pub span: FiberSpan<f64>,
    /// Relative paths resolve against the scenario file's directory.
    #[serde(default)]
    pub params_file: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SetDistance {
        km: f64,
    },
    /// Changes the launch power of the channel at `wavelength_nm`.
    SetLaunchPower {
        wavelength_nm: f64,
        power_dbm: f64,
    },
    AddChannel {
        #[serde(flatten)]
        channel: ClassicalChannel<f64>,
    },
    /// Adds `db` to the inserted loss on the quantum channel.
    AttenuationStep {
        db: f64,
    },
    SopBurst {
        rad_s: f64,
        duration_s: f64,
    },
    StartSessions {
        count: usize,
        #[serde(default = "default_refresh_hz")]
        refresh_hz: f64,
    },
}

fn default_refresh_hz() -> f64 {
    1.0
}

impl EventKind {
    /// Order among events sharing a timestamp.
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::SetDistance { .. } => 0,
            EventKind::SetLaunchPower { .. } => 1,
            EventKind::AddChannel { .. } => 2,
            EventKind::AttenuationStep { .. } => 3,
            EventKind::SopBurst { .. } => 4,
            EventKind::StartSessions { .. } => 5,
        }
    }
}

/// An event as written in the file: timed in seconds or in simulated hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_hour: Option<f64>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub at_s: f64,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub experiment: Experiment,
    pub seed: u64,
    pub duration_s: f64,
    #[serde(default = "default_seconds_per_hour")]
    pub seconds_per_hour: f64,
    pub initial: Initial,
    #[serde(default)]
    pub thresholds: Option<AlarmThresholds>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
}

fn default_seconds_per_hour() -> f64 {
    DEFAULT_SECONDS_PER_HOUR
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        serde_json::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))
    }

    /// Loads a scenario and resolves its params file path.
    pub fn load(path: &Path) -> Result<(Self, Option<PathBuf>), ScenarioError> {
        let text = std::fs::read_to_string(path)?;
        let scenario = Self::from_json(&text)?;
        let params = scenario.initial.params_file.as_ref().map(|p| {
            if p.is_absolute() {
                p.clone()
            } else {
                path.parent().unwrap_or(Path::new(".")).join(p)
            }
        });
        Ok((scenario, params))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Checks every payload against the model invariants and returns the
    /// events in application order.
    pub fn validate(&self) -> Result<Vec<Event>, ScenarioError> {
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(invalid(format!(
                "schema_version {} unsupported (expected {SCENARIO_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(invalid(format!("duration_s = {}", self.duration_s)));
        }
        if !(self.seconds_per_hour > 0.0) {
            return Err(invalid(format!("seconds_per_hour = {}", self.seconds_per_hour)));
        }
        if let Some(th) = &self.thresholds {
            if !(0.0..=0.5).contains(&th.qber_warn) || !(th.skr_low >= 0.0) {
                return Err(invalid("alarm thresholds out of range"));
            }
        }
        let mut plan = self.initial.plan.resolve()?;
        let mut span = self.initial.span;
        span.validate()?;

        let mut events = Vec::with_capacity(self.events.len());
        let mut last = f64::NEG_INFINITY;
        for (i, e) in self.events.iter().enumerate() {
            let at_s = match (e.at_s, e.at_hour) {
                (Some(s), None) => s,
                (None, Some(h)) => h * self.seconds_per_hour,
                _ => return Err(invalid(format!("event {i}: give exactly one of at_s, at_hour"))),
            };
            if !(at_s >= 0.0) || at_s > self.duration_s {
                return Err(invalid(format!("event {i}: time {at_s} outside [0, {}]", self.duration_s)));
            }
            if at_s < last {
                return Err(invalid(format!("event {i}: events must be sorted by time")));
            }
            last = at_s;
            events.push(Event {
                at_s,
                kind: e.kind.clone(),
            });
        }
        // Same-timestamp events apply in kind priority, file order otherwise.
        events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s).then(a.kind.priority().cmp(&b.kind.priority())));

        // Dry-run the payloads so a bad event fails before any simulation.
        for (i, e) in events.iter().enumerate() {
            let ctx = |err: ModelError| invalid(format!("event at {} s: {err}", e.at_s));
            match &e.kind {
                EventKind::SetDistance { km } => {
                    span.length_km = *km;
                    span.validate().map_err(ctx)?;
                }
                EventKind::SetLaunchPower {
                    wavelength_nm,
                    power_dbm,
                } => plan.set_power(*wavelength_nm, *power_dbm).map_err(ctx)?,
                EventKind::AddChannel { channel } => plan.add_channel(channel.clone()).map_err(ctx)?,
                EventKind::AttenuationStep { db } => {
                    span.extra_loss_db += db;
                    span.validate().map_err(ctx)?;
                }
                EventKind::SopBurst { rad_s, duration_s } => {
                    if !(*rad_s >= 0.0) || !(*duration_s >= 0.0) || !rad_s.is_finite() || !duration_s.is_finite() {
                        return Err(invalid(format!("event {i}: SOP burst needs rad_s, duration_s >= 0")));
                    }
                }
                EventKind::StartSessions { count, refresh_hz } => {
                    if *count == 0 || !(*refresh_hz > 0.0) {
                        return Err(invalid(format!("event {i}: start_sessions needs count >= 1, refresh_hz > 0")));
                    }
                }
            }
        }
        Ok(events)
    }
}
