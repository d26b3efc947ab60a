//! Calibration anchor files: one record per line, `#` starts a comment.
//!
//! ```text
//! # distance_km, channel_count, skr_bps[, waveserver_dbm]
//! 70, 10, 66163
//! 80, 10, 30500, 2
//! # qber, distance_km, channel_count, qber[, waveserver_dbm]
//! qber, 70, 2, 0.0394
//! ```
//!
//! Channel counts select a prefix of the lab lineup; `waveserver_dbm` sets
//! the launch power of its two Waveserver channels (default 0 dBm).

use thiserror::Error;

use super::{ChannelPlan, QberAnchor, SkrAnchor};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {msg}")]
pub struct AnchorsFileError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnchorSet {
    pub skr: Vec<SkrAnchor>,
    pub qber: Vec<QberAnchor>,
}

pub fn parse_anchors(text: &str) -> Result<AnchorSet, AnchorsFileError> {
    let mut set = AnchorSet::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| AnchorsFileError { line, msg };
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = content.split(',').map(str::trim).collect();
        let is_qber = fields[0].eq_ignore_ascii_case("qber");
        if is_qber {
            fields.remove(0);
        }
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!("expected 3 or 4 fields, got {}", fields.len())));
        }
        let num = |j: usize, name: &str| -> Result<f64, AnchorsFileError> {
            fields[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("{name}: cannot parse {:?}", fields[j])))
        };
        let distance_km = num(0, "distance_km")?;
        let count: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("channel_count: cannot parse {:?}", fields[1])))?;
        let value = num(2, if is_qber { "qber" } else { "skr_bps" })?;
        let dbm = if fields.len() == 4 { num(3, "waveserver_dbm")? } else { 0.0 };
        let plan = ChannelPlan::lineup(count, dbm).map_err(|e| err(e.to_string()))?;
        if is_qber {
            set.qber.push(QberAnchor {
                distance_km,
                plan,
                qber: value,
            });
        } else {
            set.skr.push(SkrAnchor {
                distance_km,
                plan,
                skr_bps: value,
            });
        }
    }
    Ok(set)
}
