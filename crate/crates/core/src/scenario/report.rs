use std::fmt;

use thiserror::Error;

use super::log::fmt_sig;
use super::{Experiment, RunLog, RunRow};
use crate::session::LinkStatus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    QberVsChannels,
    SkrVsDistance,
    AttenuationProfile,
    SopTimeline,
}

impl ReportKind {
    pub const ALL: [ReportKind; 4] = [
        ReportKind::QberVsChannels,
        ReportKind::SkrVsDistance,
        ReportKind::AttenuationProfile,
        ReportKind::SopTimeline,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ReportKind::QberVsChannels => "qber_vs_channels",
            ReportKind::SkrVsDistance => "skr_vs_distance",
            ReportKind::AttenuationProfile => "attenuation_profile",
            ReportKind::SopTimeline => "sop_timeline",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    fn experiment(&self) -> Experiment {
        match self {
            ReportKind::QberVsChannels => Experiment::ChannelAddup,
            ReportKind::SkrVsDistance => Experiment::DistanceSweep,
            ReportKind::AttenuationProfile => Experiment::AttenuationRamp,
            ReportKind::SopTimeline => Experiment::SopTransients,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("run log has no rows")]
    EmptyLog,
    #[error("invalid argument: report {kind} does not apply to a {experiment} log")]
    Mismatch { kind: &'static str, experiment: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => f.write_str(&fmt_sig(*v)),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            Cell::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    pub kind: ReportKind,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl SummaryTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| *c == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(Cell::to_string).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

/// Space-aligned text, one line per row.
impl fmt::Display for SummaryTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::to_string).collect()).collect();
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| cells.iter().map(|r| r[i].len()).chain([c.len()]).max().unwrap_or(0))
            .collect();
        let line = |f: &mut fmt::Formatter<'_>, items: &mut dyn Iterator<Item = &str>| -> fmt::Result {
            let parts: Vec<String> = items.zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            writeln!(f, "{}", parts.join("  "))
        };
        line(f, &mut self.columns.iter().copied())?;
        for r in &cells {
            line(f, &mut r.iter().map(String::as_str))?;
        }
        Ok(())
    }
}

/// Aggregates a run log into the table for `kind`. A log tagged with a
/// specific experiment only accepts that experiment's report.
pub fn report(log: &RunLog, kind: ReportKind) -> Result<SummaryTable, ReportError> {
    if log.rows.is_empty() {
        return Err(ReportError::EmptyLog);
    }
    let exp = log.meta.experiment;
    if exp != Experiment::Custom && exp != kind.experiment() {
        return Err(ReportError::Mismatch {
            kind: kind.as_str(),
            experiment: exp.as_str(),
        });
    }
    let rows = &log.rows;
    Ok(match kind {
        ReportKind::QberVsChannels => grouped(
            kind,
            rows,
            |r| r.channels as f64,
            &["channels", "ticks", "qber_mean", "skr_mean_bps"],
            |key, g| {
                vec![
                    Cell::Int(key as u64),
                    Cell::Int(g.len() as u64),
                    Cell::Num(mean(g, |r| r.qber)),
                    Cell::Num(mean(g, |r| r.skr_bps)),
                ]
            },
        ),
        ReportKind::SkrVsDistance => grouped(
            kind,
            rows,
            |r| r.distance_km,
            &["distance_km", "ticks", "skr_mean_bps", "qber_mean", "channels"],
            |key, g| {
                vec![
                    Cell::Num(key),
                    Cell::Int(g.len() as u64),
                    Cell::Num(mean(g, |r| r.skr_bps)),
                    Cell::Num(mean(g, |r| r.qber)),
                    Cell::Int(g.last().map_or(0, |r| r.channels as u64)),
                ]
            },
        ),
        ReportKind::AttenuationProfile => grouped(
            kind,
            rows,
            |r| r.extra_loss_db,
            &[
                "extra_loss_db",
                "ticks",
                "qber_mean",
                "skr_mean_bps",
                "skr_min_bps",
                "first_halted_s",
            ],
            |key, g| {
                let halted = g
                    .iter()
                    .find(|r| r.status == LinkStatus::Halted)
                    .map_or(Cell::Text("-".into()), |r| Cell::Num(r.sim_time_s));
                vec![
                    Cell::Num(key),
                    Cell::Int(g.len() as u64),
                    Cell::Num(mean(g, |r| r.qber)),
                    Cell::Num(mean(g, |r| r.skr_bps)),
                    Cell::Num(g.iter().map(|r| r.skr_bps).fold(f64::INFINITY, f64::min)),
                    halted,
                ]
            },
        ),
        ReportKind::SopTimeline => sop_timeline(rows),
    })
}

fn mean(rows: &[RunRow], f: impl Fn(&RunRow) -> f64) -> f64 {
    rows.iter().map(f).sum::<f64>() / rows.len() as f64
}

/// One table row per distinct key, in order of first appearance.
fn grouped(
    kind: ReportKind,
    rows: &[RunRow],
    key: impl Fn(&RunRow) -> f64,
    columns: &[&'static str],
    summarize: impl Fn(f64, &[RunRow]) -> Vec<Cell>,
) -> SummaryTable {
    let mut keys: Vec<f64> = Vec::new();
    let mut groups: Vec<Vec<RunRow>> = Vec::new();
    for r in rows {
        let k = key(r);
        match keys.iter().position(|x| *x == k) {
            Some(i) => groups[i].push(r.clone()),
            None => {
                keys.push(k);
                groups.push(vec![r.clone()]);
            }
        }
    }
    SummaryTable {
        kind,
        columns: columns.to_vec(),
        rows: keys.iter().zip(&groups).map(|(k, g)| summarize(*k, g)).collect(),
    }
}

/// Runs of consecutive rows sharing status and SOP rate. A row stamped `t`
/// covers `(t - 1, t]`.
fn sop_timeline(rows: &[RunRow]) -> SummaryTable {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=rows.len() {
        let split = i == rows.len() || rows[i].status != rows[start].status || rows[i].sop_rad_s != rows[start].sop_rad_s;
        if split {
            let seg = &rows[start..i];
            out.push(vec![
                Cell::Num(seg[0].sim_time_s - 1.0),
                Cell::Num(seg[seg.len() - 1].sim_time_s),
                Cell::Text(seg[0].status.to_string()),
                Cell::Num(seg[0].sop_rad_s),
                Cell::Num(mean(seg, |r| r.skr_bps)),
            ]);
            start = i;
        }
    }
    SummaryTable {
        kind: ReportKind::SopTimeline,
        columns: vec!["start_s", "end_s", "status", "sop_rad_s", "skr_mean_bps"],
        rows: out,
    }
}
