use std::fmt::Write as _;

use thiserror::Error;

use super::Experiment;
use crate::session::{AlarmKind, LinkStatus};

pub const RUNLOG_VERSION: u32 = 1;

const MAGIC: &str = "# qkdsim-runlog";

pub const COLUMNS: [&str; 13] = [
    "sim_time_s",
    "qber",
    "skr_bps",
    "buffer_bits",
    "status",
    "active_alarms",
    "keys_consumed_total",
    "keys_carved_total",
    "kms_stored_keys",
    "channels",
    "distance_km",
    "extra_loss_db",
    "sop_rad_s",
];

#[derive(Debug, Error)]
pub enum RunLogError {
    #[error("run log header: {0}")]
    Header(String),
    #[error("run log line {line}: {msg}")]
    Row { line: usize, msg: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub name: String,
    pub experiment: Experiment,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub sim_time_s: f64,
    pub qber: f64,
    pub skr_bps: f64,
    pub buffer_bits: u64,
    pub status: LinkStatus,
    pub active_alarms: Vec<AlarmKind>,
    /// Keys drawn from the KMS by every session so far.
    pub keys_consumed_total: u64,
    pub keys_carved_total: u64,
    pub kms_stored_keys: u64,
    pub channels: usize,
    pub distance_km: f64,
    pub extra_loss_db: f64,
    pub sop_rad_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub meta: RunMeta,
    pub rows: Vec<RunRow>,
}

/// `printf("%g")`: 6 significant digits, trailing zeros stripped, exponent
/// form outside `[1e-4, 1e6)`.
pub fn fmt_sig(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() { "nan" } else if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp) as usize;
        strip_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn status_str(s: LinkStatus) -> &'static str {
    match s {
        LinkStatus::Running => "Running",
        LinkStatus::Degraded => "Degraded",
        LinkStatus::Halted => "Halted",
    }
}

fn parse_status(s: &str) -> Option<LinkStatus> {
    match s {
        "Running" => Some(LinkStatus::Running),
        "Degraded" => Some(LinkStatus::Degraded),
        "Halted" => Some(LinkStatus::Halted),
        _ => None,
    }
}

fn parse_alarm(s: &str) -> Option<AlarmKind> {
    match s {
        "QberWarn" => Some(AlarmKind::QberWarn),
        "SkrLow" => Some(AlarmKind::SkrLow),
        "KeyStarvation" => Some(AlarmKind::KeyStarvation),
        "Halt" => Some(AlarmKind::Halt),
        _ => None,
    }
}

impl RunLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "{MAGIC} v{RUNLOG_VERSION} name={} experiment={} seed={}",
            self.meta.name.replace(char::is_whitespace, "_"),
            self.meta.experiment.as_str(),
            self.meta.seed
        )
        .unwrap();
        out.push_str(&COLUMNS.join(","));
        out.push('\n');
        for r in &self.rows {
            let alarms = if r.active_alarms.is_empty() {
                "-".to_string()
            } else {
                r.active_alarms.iter().map(|a| a.to_string()).collect::<Vec<_>>().join("|")
            };
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                fmt_sig(r.sim_time_s),
                fmt_sig(r.qber),
                fmt_sig(r.skr_bps),
                r.buffer_bits,
                status_str(r.status),
                alarms,
                r.keys_consumed_total,
                r.keys_carved_total,
                r.kms_stored_keys,
                r.channels,
                fmt_sig(r.distance_km),
                fmt_sig(r.extra_loss_db),
                fmt_sig(r.sop_rad_s),
            )
            .unwrap();
        }
        out
    }

    /// Reads a log back; floats come back at the 6 significant digits written.
    pub fn from_csv(text: &str) -> Result<Self, RunLogError> {
        let (header, body) = text.split_once('\n').ok_or_else(|| RunLogError::Header("empty file".into()))?;
        let meta = parse_header(header.trim_end())?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let cols: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if cols != COLUMNS {
            return Err(RunLogError::Header(format!("unexpected columns {}", cols.join(","))));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 3;
            let err = |msg: String| RunLogError::Row { line, msg };
            let f = |j: usize| -> Result<f64, RunLogError> {
                rec[j].parse::<f64>().map_err(|e| err(format!("{}: {e}", COLUMNS[j])))
            };
            let u = |j: usize| -> Result<u64, RunLogError> {
                rec[j].parse::<u64>().map_err(|e| err(format!("{}: {e}", COLUMNS[j])))
            };
            let status = parse_status(&rec[4]).ok_or_else(|| err(format!("status {:?}", &rec[4])))?;
            let active_alarms = if &rec[5] == "-" {
                Vec::new()
            } else {
                rec[5]
                    .split('|')
                    .map(|a| parse_alarm(a).ok_or_else(|| err(format!("alarm {a:?}"))))
                    .collect::<Result<_, _>>()?
            };
            rows.push(RunRow {
                sim_time_s: f(0)?,
                qber: f(1)?,
                skr_bps: f(2)?,
                buffer_bits: u(3)?,
                status,
                active_alarms,
                keys_consumed_total: u(6)?,
                keys_carved_total: u(7)?,
                kms_stored_keys: u(8)?,
                channels: u(9)? as usize,
                distance_km: f(10)?,
                extra_loss_db: f(11)?,
                sop_rad_s: f(12)?,
            });
        }
        if rows.windows(2).any(|w| !(w[1].sim_time_s > w[0].sim_time_s)) {
            return Err(RunLogError::Header("sim_time_s not strictly increasing".into()));
        }
        Ok(RunLog { meta, rows })
    }
}

fn parse_header(line: &str) -> Result<RunMeta, RunLogError> {
    let rest = line
        .strip_prefix(MAGIC)
        .ok_or_else(|| RunLogError::Header("not a qkdsim run log".into()))?;
    let mut parts = rest.split_whitespace();
    let version = parts.next().unwrap_or_default();
    if version != format!("v{RUNLOG_VERSION}") {
        return Err(RunLogError::Header(format!("unsupported version {version:?}")));
    }
    let (mut name, mut experiment, mut seed) = (None, None, None);
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| RunLogError::Header(format!("bad field {kv:?}")))?;
        match k {
            "name" => name = Some(v.to_string()),
            "experiment" => {
                experiment =
                    Some(Experiment::parse(v).ok_or_else(|| RunLogError::Header(format!("experiment {v:?}")))?)
            }
            "seed" => seed = Some(v.parse().map_err(|_| RunLogError::Header(format!("seed {v:?}")))?),
            _ => {}
        }
    }
    Ok(RunMeta {
        name: name.ok_or_else(|| RunLogError::Header("missing name".into()))?,
        experiment: experiment.unwrap_or_default(),
        seed: seed.ok_or_else(|| RunLogError::Header("missing seed".into()))?,
    })
}
