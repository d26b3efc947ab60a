//! Parametric physical-layer model of a DWDM fiber carrying an O-band quantum
//! channel alongside C-band classical channels.
//!
//! The model maps fiber and channel configuration to a detected signal rate,
//! a noise rate (detector dark counts plus forward Raman crosstalk), the
//! resulting QBER and a secure key rate. All functions are pure and generic
//! over [`Real`].

mod anchors_file;
mod calibrate;
mod params_file;

pub use anchors_file::{parse_anchors, AnchorSet, AnchorsFileError};
pub use calibrate::{
    calibrate, lab_anchors, Calibration, CalibrationError, CalibrationOptions, CeilingConstraint,
    QberAnchor, SkrAnchor,
};
pub use params_file::{parse_params, write_params, ParamsFileError, PARAMS_FORMAT_VERSION};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// SMF-28 attenuation near 1550 nm.
pub const ALPHA_C_DB_PER_KM: f64 = 0.18;
/// SMF-28 attenuation near 1310 nm.
pub const ALPHA_O_DB_PER_KM: f64 = 0.32;
/// Quantum channel wavelength of the trial hardware.
pub const QUANTUM_WAVELENGTH_NM: f64 = 1312.73;

pub const C_BAND_NM: (f64, f64) = (1528.0, 1570.0);
pub const O_BAND_NM: (f64, f64) = (1260.0, 1360.0);
/// Launch power range over which the linear Raman term is trusted.
pub const LAUNCH_POWER_DBM: (f64, f64) = (-10.0, 5.0);

/// Sustained SOP angular velocity at which key generation stops.
pub const SOP_HALT_RAD_S: f64 = 50.0;
/// How long the SOP must stay above [`SOP_HALT_RAD_S`] before the gate closes.
pub const SOP_HOLD_S: f64 = 1.0;

/// Default abort threshold (standard BB84 region).
pub const DEFAULT_QBER_ABORT: f64 = 0.11;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("QBER undefined: signal and noise rates are both zero")]
    UndefinedQber,
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
}

fn invalid(what: &'static str, detail: impl Into<String>) -> ModelError {
    ModelError::Invalid {
        what,
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Band {
    O,
    C,
}

/// A fiber span between the two QKD endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct FiberSpan<T> {
    pub length_km: T,
    #[serde(default = "default_alpha_c")]
    pub alpha_c_db_per_km: T,
    #[serde(default = "default_alpha_o")]
    pub alpha_o_db_per_km: T,
    /// Inserted loss on the quantum channel (VOA or induced attenuation).
    #[serde(default)]
    pub extra_loss_db: T,
}

fn default_alpha_c<T: Real>() -> T {
    T::lit(ALPHA_C_DB_PER_KM)
}

fn default_alpha_o<T: Real>() -> T {
    T::lit(ALPHA_O_DB_PER_KM)
}

impl<T: Real> FiberSpan<T> {
    /// SMF-28 span of the given length with no extra loss.
    pub fn smf28(length_km: T) -> Result<Self, ModelError> {
        let span = Self {
            length_km,
            alpha_c_db_per_km: default_alpha_c(),
            alpha_o_db_per_km: default_alpha_o(),
            extra_loss_db: T::zero(),
        };
        span.validate()?;
        Ok(span)
    }

    pub fn with_extra_loss(mut self, extra_loss_db: T) -> Result<Self, ModelError> {
        self.extra_loss_db = extra_loss_db;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.length_km >= T::zero()) || !self.length_km.is_finite() {
            return Err(invalid("span", format!("length_km = {}", self.length_km)));
        }
        if !(self.alpha_c_db_per_km > T::zero()) || !(self.alpha_o_db_per_km > T::zero()) {
            return Err(invalid("span", "attenuation coefficients must be > 0"));
        }
        if !(self.extra_loss_db >= T::zero()) || !self.extra_loss_db.is_finite() {
            return Err(invalid("span", format!("extra_loss_db = {}", self.extra_loss_db)));
        }
        Ok(())
    }
}

/// A classical C-band data channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ClassicalChannel<T> {
    pub wavelength_nm: T,
    pub power_dbm: T,
    pub rate_gbps: T,
    #[serde(default)]
    pub label: String,
}

impl<T: Real> ClassicalChannel<T> {
    pub fn new(label: impl Into<String>, wavelength_nm: T, power_dbm: T, rate_gbps: T) -> Self {
        Self {
            wavelength_nm,
            power_dbm,
            rate_gbps,
            label: label.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (lo, hi) = C_BAND_NM;
        if !(self.wavelength_nm >= T::lit(lo) && self.wavelength_nm <= T::lit(hi)) {
            return Err(invalid(
                "channel",
                format!("{} nm outside C-band [{lo}, {hi}]", self.wavelength_nm),
            ));
        }
        let (plo, phi) = LAUNCH_POWER_DBM;
        if !(self.power_dbm >= T::lit(plo) && self.power_dbm <= T::lit(phi)) {
            return Err(invalid(
                "channel",
                format!("{} dBm outside [{plo}, {phi}]", self.power_dbm),
            ));
        }
        if !(self.rate_gbps >= T::zero()) {
            return Err(invalid("channel", "negative line rate"));
        }
        Ok(())
    }

    pub fn power_mw(&self) -> T {
        dbm_to_mw(self.power_dbm)
    }
}

/// One row of the lab channel lineup: label, wavelength in nm, line rate in Gb/s.
pub const CHANNEL_LINEUP: [(&str, f64, f64); 10] = [
    ("CUT", 1531.51, 800.0),
    ("Second 800G", 1532.68, 800.0),
    ("100G No. 1", 1533.86, 100.0),
    ("100G No. 2", 1534.25, 100.0),
    ("100G No. 3", 1534.64, 100.0),
    ("100G No. 4", 1535.04, 100.0),
    ("100G No. 5", 1535.43, 100.0),
    ("100G No. 6", 1535.82, 100.0),
    ("100G No. 7", 1536.22, 100.0),
    ("100G No. 8", 1536.61, 100.0),
];

/// The DWDM lineup sharing the fiber with the quantum channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real + Serialize + serde::de::DeserializeOwned")]
pub struct ChannelPlan<T> {
    #[serde(default)]
    pub channels: Vec<ClassicalChannel<T>>,
    #[serde(default = "default_quantum_wavelength")]
    pub quantum_wavelength_nm: T,
}

fn default_quantum_wavelength<T: Real>() -> T {
    T::lit(QUANTUM_WAVELENGTH_NM)
}

impl<T: Real> Default for ChannelPlan<T> {
    fn default() -> Self {
        Self {
            channels: Vec::new(),
            quantum_wavelength_nm: default_quantum_wavelength(),
        }
    }
}

impl<T: Real> ChannelPlan<T> {
    pub fn new(channels: Vec<ClassicalChannel<T>>, quantum_wavelength_nm: T) -> Result<Self, ModelError> {
        let plan = Self {
            channels,
            quantum_wavelength_nm,
        };
        plan.validate()?;
        Ok(plan)
    }

    /// The first `count` channels of [`CHANNEL_LINEUP`]. The two 800G
    /// channels launch at `waveserver_dbm`, the 100G channels at 0 dBm.
    pub fn lineup(count: usize, waveserver_dbm: T) -> Result<Self, ModelError> {
        if count > CHANNEL_LINEUP.len() {
            return Err(invalid(
                "plan",
                format!("lineup has {} channels, asked for {count}", CHANNEL_LINEUP.len()),
            ));
        }
        let channels = CHANNEL_LINEUP[..count]
            .iter()
            .map(|&(label, wl, rate)| {
                let power = if rate >= 800.0 { waveserver_dbm } else { T::zero() };
                ClassicalChannel::new(label, T::lit(wl), power, T::lit(rate))
            })
            .collect();
        Self::new(channels, default_quantum_wavelength())
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (lo, hi) = O_BAND_NM;
        if !(self.quantum_wavelength_nm >= T::lit(lo) && self.quantum_wavelength_nm <= T::lit(hi)) {
            return Err(invalid(
                "plan",
                format!("quantum wavelength {} nm outside O-band", self.quantum_wavelength_nm),
            ));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            ch.validate()?;
            if self.channels[..i].iter().any(|o| o.wavelength_nm == ch.wavelength_nm) {
                return Err(invalid(
                    "plan",
                    format!("duplicate wavelength {} nm", ch.wavelength_nm),
                ));
            }
        }
        Ok(())
    }

    pub fn add_channel(&mut self, channel: ClassicalChannel<T>) -> Result<(), ModelError> {
        self.channels.push(channel);
        if let Err(e) = self.validate() {
            self.channels.pop();
            return Err(e);
        }
        Ok(())
    }

    /// Re-provisions the launch power of the channel at `wavelength_nm`.
    pub fn set_power(&mut self, wavelength_nm: T, power_dbm: T) -> Result<(), ModelError> {
        let idx = self
            .channels
            .iter()
            .position(|c| c.wavelength_nm == wavelength_nm)
            .ok_or_else(|| invalid("plan", format!("no channel at {wavelength_nm} nm")))?;
        let old = self.channels[idx].power_dbm;
        self.channels[idx].power_dbm = power_dbm;
        if let Err(e) = self.channels[idx].validate() {
            self.channels[idx].power_dbm = old;
            return Err(e);
        }
        Ok(())
    }
}

/// Calibratable constants of the statistical link model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QkdModelParams<T> {
    /// Detected signal rate at 0 dB quantum-channel loss.
    pub s0_cps: T,
    pub dark_cps: T,
    /// Raman crosstalk counts per mW of launch power per km.
    pub raman_cps_per_mw_km: T,
    /// Intrinsic (misalignment) error.
    pub e_det: T,
    /// Error-correction inefficiency, >= 1.
    pub f_ec: T,
    pub q_sift: T,
    pub qber_abort: T,
}

impl<T: Real> QkdModelParams<T> {
    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [
            self.s0_cps,
            self.dark_cps,
            self.raman_cps_per_mw_km,
            self.e_det,
            self.f_ec,
            self.q_sift,
            self.qber_abort,
        ];
        if all.iter().any(|v| !(*v >= T::zero()) || !v.is_finite()) {
            return Err(invalid("params", "all parameters must be finite and >= 0"));
        }
        if self.f_ec < T::one() {
            return Err(invalid("params", format!("f_ec = {} < 1", self.f_ec)));
        }
        if !(self.q_sift > T::zero() && self.q_sift <= T::one()) {
            return Err(invalid("params", format!("q_sift = {} not in (0, 1]", self.q_sift)));
        }
        if !(self.qber_abort > T::zero() && self.qber_abort < T::lit(0.5)) {
            return Err(invalid("params", format!("qber_abort = {} not in (0, 0.5)", self.qber_abort)));
        }
        if !(self.e_det < self.qber_abort) {
            return Err(invalid("params", "e_det must be below qber_abort"));
        }
        Ok(())
    }

    /// Converts between scalar precisions.
    pub fn cast<U: Real>(&self) -> QkdModelParams<U> {
        let c = |v: T| U::from_f64(v.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan);
        QkdModelParams {
            s0_cps: c(self.s0_cps),
            dark_cps: c(self.dark_cps),
            raman_cps_per_mw_km: c(self.raman_cps_per_mw_km),
            e_det: c(self.e_det),
            f_ec: c(self.f_ec),
            q_sift: c(self.q_sift),
            qber_abort: c(self.qber_abort),
        }
    }
}

/// Polarization drift seen by the quantum channel.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SopState<T> {
    pub angular_velocity_rad_s: T,
    pub duration_s: T,
}

impl<T: Real> SopState<T> {
    pub fn calm() -> Self {
        Self {
            angular_velocity_rad_s: T::zero(),
            duration_s: T::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.angular_velocity_rad_s >= T::zero()) || !(self.duration_s >= T::zero()) {
            return Err(invalid("sop", "angular velocity and duration must be >= 0"));
        }
        Ok(())
    }
}

pub fn dbm_to_mw<T: Real>(dbm: T) -> T {
    T::lit(10.0).powf(dbm / T::lit(10.0))
}

/// Linear transmittance of a loss given in dB.
pub fn db_to_transmittance<T: Real>(db: T) -> T {
    T::lit(10.0).powf(-db / T::lit(10.0))
}

/// Shannon binary entropy in bits, with `0 log 0 = 0`.
pub fn binary_entropy<T: Real>(x: T) -> Result<T, ModelError> {
    if !(x >= T::zero() && x <= T::one()) {
        return Err(ModelError::Domain(format!("binary entropy of {x}")));
    }
    let term = |p: T| if p > T::zero() { -p * p.log2() } else { T::zero() };
    let h = term(x) + term(T::one() - x);
    Ok(h.max(T::zero()).min(T::one()))
}

pub fn link_loss_db<T: Real>(span: &FiberSpan<T>, band: Band) -> T {
    match band {
        Band::O => span.alpha_o_db_per_km * span.length_km + span.extra_loss_db,
        Band::C => span.alpha_c_db_per_km * span.length_km,
    }
}

/// Total classical launch power in mW. An empty plan launches nothing.
pub fn total_launch_power_mw<T: Real>(plan: &ChannelPlan<T>) -> T {
    plan.channels.iter().fold(T::zero(), |acc, c| acc + c.power_mw())
}

/// Forward-scattered Raman photons reaching the quantum receiver, single-pass
/// approximation: linear in launch power and fiber length, with the scattered
/// light attenuated at the O-band coefficient. The VOA sits at the receiver on
/// the quantum path, so `extra_loss_db` does not attenuate this term.
pub fn raman_noise_rate<T: Real>(plan: &ChannelPlan<T>, span: &FiberSpan<T>, params: &QkdModelParams<T>) -> T {
    let fiber_loss = span.alpha_o_db_per_km * span.length_km;
    params.raman_cps_per_mw_km * total_launch_power_mw(plan) * span.length_km * db_to_transmittance(fiber_loss)
}

pub fn detected_signal_rate<T: Real>(span: &FiberSpan<T>, params: &QkdModelParams<T>) -> T {
    params.s0_cps * db_to_transmittance(link_loss_db(span, Band::O))
}

/// Noise clicks are uniformly random (error probability 1/2); signal clicks
/// err with the intrinsic probability `e_det`.
pub fn qber<T: Real>(signal_cps: T, noise_cps: T, e_det: T) -> Result<T, ModelError> {
    if !(signal_cps >= T::zero()) || !(noise_cps >= T::zero()) {
        return Err(ModelError::Domain(format!(
            "negative rate: signal {signal_cps}, noise {noise_cps}"
        )));
    }
    let total = signal_cps + noise_cps;
    if total == T::zero() {
        return Err(ModelError::UndefinedQber);
    }
    let e = (e_det * signal_cps + T::lit(0.5) * noise_cps) / total;
    Ok(e.max(T::zero()).min(T::lit(0.5)))
}

/// Key-generation gate for polarization scrambling: closed (0) once the SOP
/// has moved at >= 50 rad/s for at least the hold time, open (1) otherwise.
pub fn sop_factor<T: Real>(sop: &SopState<T>) -> T {
    if sop.angular_velocity_rad_s >= T::lit(SOP_HALT_RAD_S) && sop.duration_s >= T::lit(SOP_HOLD_S) {
        T::zero()
    } else {
        T::one()
    }
}

/// Fraction of sifted bits surviving error correction and privacy amplification.
pub fn secure_fraction<T: Real>(e: T, f_ec: T) -> T {
    let h = binary_entropy(e.max(T::zero()).min(T::one())).unwrap_or(T::one());
    T::one() - f_ec * h - h
}

/// Every intermediate of a model evaluation, for logging and diagnosis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEval<T> {
    pub signal_cps: T,
    pub noise_cps: T,
    pub qber: T,
    pub skr_bps: T,
}

pub fn evaluate<T: Real>(
    plan: &ChannelPlan<T>,
    span: &FiberSpan<T>,
    sop: &SopState<T>,
    params: &QkdModelParams<T>,
) -> LinkEval<T> {
    let signal = detected_signal_rate(span, params);
    let noise = params.dark_cps + raman_noise_rate(plan, span, params);
    // No clicks at all carries no information.
    let e = qber(signal, noise, params.e_det).unwrap_or_else(|_| T::lit(0.5));
    let gate = sop_factor(sop);
    let skr = if e >= params.qber_abort || gate == T::zero() {
        T::zero()
    } else {
        gate * params.q_sift * signal * secure_fraction(e, params.f_ec).max(T::zero())
    };
    LinkEval {
        signal_cps: signal,
        noise_cps: noise,
        qber: e,
        skr_bps: skr,
    }
}

/// Secure key rate in bits/s; never negative.
pub fn skr<T: Real>(
    plan: &ChannelPlan<T>,
    span: &FiberSpan<T>,
    sop: &SopState<T>,
    params: &QkdModelParams<T>,
) -> T {
    evaluate(plan, span, sop, params).skr_bps
}
