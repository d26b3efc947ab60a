//! Versioned `key = value` text format for [`QkdModelParams`].
//!
//! ```text
//! # qkdsim link model parameters
//! format = qkdsim-params
//! version = 1
//! s0_cps = 62308536.7
//! ...
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write/parse cycle is lossless.

use std::collections::BTreeMap;

use thiserror::Error;

use super::QkdModelParams;

pub const PARAMS_FORMAT_VERSION: u32 = 1;
const FORMAT_TAG: &str = "qkdsim-params";
const KEYS: [&str; 7] = [
    "s0_cps",
    "dark_cps",
    "raman_cps_per_mw_km",
    "e_det",
    "f_ec",
    "q_sift",
    "qber_abort",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unsupported params format {0}")]
    Format(String),
    #[error("missing key `{0}`")]
    Missing(&'static str),
    #[error("invalid parameters: {0}")]
    Invalid(String),
}

pub fn write_params(params: &QkdModelParams<f64>) -> String {
    let values = [
        params.s0_cps,
        params.dark_cps,
        params.raman_cps_per_mw_km,
        params.e_det,
        params.f_ec,
        params.q_sift,
        params.qber_abort,
    ];
    let mut out = String::from("# qkdsim link model parameters\n");
    out.push_str(&format!("format = {FORMAT_TAG}\nversion = {PARAMS_FORMAT_VERSION}\n"));
    for (k, v) in KEYS.iter().zip(values) {
        out.push_str(&format!("{k} = {v:?}\n"));
    }
    out
}

pub fn parse_params(text: &str) -> Result<QkdModelParams<f64>, ParamsFileError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ParamsFileError::Syntax {
            line: i + 1,
            msg: "expected `key = value`".into(),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if map.insert(k.to_string(), (i + 1, v.to_string())).is_some() {
            return Err(ParamsFileError::Syntax {
                line: i + 1,
                msg: format!("duplicate key `{k}`"),
            });
        }
    }
    match map.remove("format") {
        Some((_, f)) if f == FORMAT_TAG => {}
        Some((_, f)) => return Err(ParamsFileError::Format(f)),
        None => return Err(ParamsFileError::Missing("format")),
    }
    match map.remove("version") {
        Some((_, v)) if v == PARAMS_FORMAT_VERSION.to_string() => {}
        Some((_, v)) => return Err(ParamsFileError::Format(format!("version {v}"))),
        None => return Err(ParamsFileError::Missing("version")),
    }
    let mut values = [0.0; KEYS.len()];
    for (slot, key) in values.iter_mut().zip(KEYS) {
        let (line, v) = map.remove(key).ok_or(ParamsFileError::Missing(key))?;
        *slot = v.parse().map_err(|_| ParamsFileError::Syntax {
            line,
            msg: format!("`{v}` is not a number"),
        })?;
    }
    if let Some((k, (line, _))) = map.into_iter().next() {
        return Err(ParamsFileError::Syntax {
            line,
            msg: format!("unknown key `{k}`"),
        });
    }
    let [s0_cps, dark_cps, raman_cps_per_mw_km, e_det, f_ec, q_sift, qber_abort] = values;
    let params = QkdModelParams {
        s0_cps,
        dark_cps,
        raman_cps_per_mw_km,
        e_det,
        f_ec,
        q_sift,
        qber_abort,
    };
    params.validate().map_err(|e| ParamsFileError::Invalid(e.to_string()))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "format = qkdsim-params\nversion = 1\ns0_cps = 6e7\ndark_cps = 3000\n\
raman_cps_per_mw_km = 490.5\ne_det = 0.035\nf_ec = 1.4\nq_sift = 0.5\nqber_abort = 0.09\n";

    #[test]
    fn parses_sample() {
        let p = parse_params(SAMPLE).unwrap();
        assert_eq!(p.s0_cps, 6e7);
        assert_eq!(p.raman_cps_per_mw_km, 490.5);
    }

    #[test]
    fn rejects_bad_files() {
        assert_eq!(
            parse_params(&SAMPLE.replace("version = 1", "version = 2")),
            Err(ParamsFileError::Format("version 2".into()))
        );
        assert_eq!(
            parse_params(&SAMPLE.replace("f_ec = 1.4\n", "")),
            Err(ParamsFileError::Missing("f_ec"))
        );
        assert!(matches!(
            parse_params(&format!("{SAMPLE}bogus = 1\n")),
            Err(ParamsFileError::Syntax { line: 10, .. })
        ));
        assert!(matches!(
            parse_params(&SAMPLE.replace("0.035", "abc")),
            Err(ParamsFileError::Syntax { line: 6, .. })
        ));
        assert!(matches!(
            parse_params(&SAMPLE.replace("f_ec = 1.4", "f_ec = 0.5")),
            Err(ParamsFileError::Invalid(_))
        ));
        assert!(matches!(parse_params("s0_cps 5"), Err(ParamsFileError::Syntax { line: 1, .. })));
    }

    proptest! {
        #[test]
        fn write_parse_lossless(
            s0 in 1.0..1e10f64, dark in 0.0..1e6f64, raman in 0.0..1e5f64,
            e_det in 0.0..0.05f64, f_ec in 1.0..3.0f64, q in 0.01..1.0f64, abort in 0.06..0.49f64,
        ) {
            let p = QkdModelParams { s0_cps: s0, dark_cps: dark, raman_cps_per_mw_km: raman, e_det, f_ec, q_sift: q, qber_abort: abort };
            prop_assert_eq!(parse_params(&write_params(&p)).unwrap(), p);
        }
    }
}
