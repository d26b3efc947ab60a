//! Fitting [`QkdModelParams`] to measured key rates and QBERs.
//!
//! The fit is a fixed coarse grid over the shape parameters followed by a
//! Nelder-Mead refinement with a fixed iteration budget. There is no random
//! seed anywhere, so identical anchors always give identical parameters.

use thiserror::Error;

use super::{evaluate, secure_fraction, ChannelPlan, FiberSpan, QkdModelParams, SopState, DEFAULT_QBER_ABORT};

/// A measured secure key rate at a given distance and channel plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SkrAnchor {
    pub distance_km: f64,
    pub plan: ChannelPlan<f64>,
    pub skr_bps: f64,
}

/// A measured QBER at a given distance and channel plan.
#[derive(Debug, Clone, PartialEq)]
pub struct QberAnchor {
    pub distance_km: f64,
    pub plan: ChannelPlan<f64>,
    pub qber: f64,
}

/// The attenuation ceiling: key survives `tolerated_db` of inserted loss on
/// top of the reference span and stops at `fatal_db`.
#[derive(Debug, Clone, PartialEq)]
pub struct CeilingConstraint {
    pub distance_km: f64,
    pub plan: ChannelPlan<f64>,
    pub tolerated_db: f64,
    pub fatal_db: f64,
}

impl Default for CeilingConstraint {
    fn default() -> Self {
        Self {
            distance_km: 70.0,
            plan: ChannelPlan::lineup(10, 0.0).expect("lineup is valid"),
            tolerated_db: 9.0,
            fatal_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOptions {
    pub ceiling: CeilingConstraint,
    /// Sifting ratio; held fixed because only `q_sift * s0_cps` is observable.
    pub q_sift: f64,
    /// Upper bound for the fitted abort threshold.
    pub qber_abort_max: f64,
    /// QBER residuals are divided by this before squaring.
    pub qber_scale: f64,
    /// Required secure fraction at the tolerated ceiling.
    pub ceiling_margin: f64,
    pub iterations: usize,
    pub restarts: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            ceiling: CeilingConstraint::default(),
            q_sift: 0.5,
            qber_abort_max: DEFAULT_QBER_ABORT,
            qber_scale: 5e-4,
            ceiling_margin: 0.02,
            iterations: 3000,
            restarts: 3,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("under-determined: {skr} SKR and {qber} QBER anchors, need at least {min_skr} and {min_qber}")]
    UnderDetermined {
        skr: usize,
        qber: usize,
        min_skr: usize,
        min_qber: usize,
    },
    #[error("invalid anchor: {0}")]
    InvalidAnchor(String),
    #[error("calibration failed: {0}")]
    Infeasible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub params: QkdModelParams<f64>,
    /// Relative error of the model against each SKR anchor, in input order.
    pub skr_relative_errors: Vec<f64>,
    /// Absolute QBER error against each QBER anchor, in input order.
    pub qber_errors: Vec<f64>,
    pub objective: f64,
}

pub const MIN_SKR_ANCHORS: usize = 4;
pub const MIN_QBER_ANCHORS: usize = 2;
const FREE_PARAMS: usize = 5;

/// The lab measurements: key rate over distance (the 800G channels raised to
/// 2 dBm from 80 km on) and QBER with 2 and 10 channels at 70 km.
pub fn lab_anchors() -> (Vec<SkrAnchor>, Vec<QberAnchor>) {
    let plan = |n, dbm| ChannelPlan::lineup(n, dbm).expect("lineup is valid");
    let skr = [(70.0, 0.0, 66163.0), (80.0, 2.0, 30500.0), (90.0, 2.0, 12000.0), (100.0, 2.0, 2000.0)]
        .into_iter()
        .map(|(d, dbm, r)| SkrAnchor {
            distance_km: d,
            plan: plan(10, dbm),
            skr_bps: r,
        })
        .collect();
    let qber = [(2, 0.0394), (10, 0.0414)]
        .into_iter()
        .map(|(n, q)| QberAnchor {
            distance_km: 70.0,
            plan: plan(n, 0.0),
            qber: q,
        })
        .collect();
    (skr, qber)
}

/// Point in the search space: ln s0, ln dark, ln raman, e_det, f_ec.
type Point = [f64; FREE_PARAMS];

struct Problem<'a> {
    skr: &'a [SkrAnchor],
    qber: &'a [QberAnchor],
    skr_spans: Vec<FiberSpan<f64>>,
    qber_spans: Vec<FiberSpan<f64>>,
    tolerated: FiberSpan<f64>,
    fatal: FiberSpan<f64>,
    opts: &'a CalibrationOptions,
}

impl Problem<'_> {
    fn params(&self, x: &Point, qber_abort: f64) -> QkdModelParams<f64> {
        QkdModelParams {
            s0_cps: x[0].exp(),
            dark_cps: x[1].exp(),
            raman_cps_per_mw_km: x[2].exp(),
            e_det: x[3],
            f_ec: x[4],
            q_sift: self.opts.q_sift,
            qber_abort,
        }
    }

    fn objective(&self, x: &Point) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        // Abort disabled while fitting; it is placed afterwards.
        let p = self.params(x, 0.5);
        let calm = SopState::calm();
        let mut sum = 0.0;
        for (a, span) in self.skr.iter().zip(&self.skr_spans) {
            let r = evaluate(&a.plan, span, &calm, &p).skr_bps / a.skr_bps - 1.0;
            sum += r * r;
        }
        for (a, span) in self.qber.iter().zip(&self.qber_spans) {
            let r = (evaluate(&a.plan, span, &calm, &p).qber - a.qber) / self.opts.qber_scale;
            sum += r * r;
        }
        // Box constraints on the shape parameters.
        let box_pen = |v: f64, lo: f64, hi: f64| {
            if v < lo {
                (lo - v) * (lo - v)
            } else if v > hi {
                (v - hi) * (v - hi)
            } else {
                0.0
            }
        };
        sum += 1e6 * (box_pen(x[3], 0.0, 0.1) + box_pen(x[4], 1.0, 3.0));
        // Key must survive the tolerated ceiling with some margin.
        let tol = evaluate(&self.opts.ceiling.plan, &self.tolerated, &calm, &p);
        let frac = secure_fraction(tol.qber, p.f_ec);
        if frac < self.opts.ceiling_margin {
            let d = (self.opts.ceiling_margin - frac) / self.opts.ceiling_margin;
            sum += 1e2 * d * d;
        }
        if tol.qber >= self.opts.qber_abort_max {
            let d = (tol.qber - self.opts.qber_abort_max) / self.opts.qber_scale;
            sum += 1e2 * d * d;
        }
        sum
    }

    /// Closed-form best s0 for fixed shape (key rate is linear in s0 when
    /// dark and Raman counts scale with it).
    fn grid_point(&self, e_det: f64, f_ec: f64, dark_ratio: f64, raman_ratio: f64) -> Point {
        let calm = SopState::calm();
        let shape = QkdModelParams {
            s0_cps: 1.0,
            dark_cps: dark_ratio,
            raman_cps_per_mw_km: raman_ratio,
            e_det,
            f_ec,
            q_sift: self.opts.q_sift,
            qber_abort: 0.5,
        };
        let g: Vec<f64> = self
            .skr
            .iter()
            .zip(&self.skr_spans)
            .map(|(a, span)| evaluate(&a.plan, span, &calm, &shape).skr_bps / a.skr_bps)
            .collect();
        let num: f64 = g.iter().sum();
        let den: f64 = g.iter().map(|v| v * v).sum();
        let s0 = if den > 0.0 && num > 0.0 { num / den } else { 1e6 };
        [s0.ln(), (dark_ratio * s0).ln(), (raman_ratio * s0).ln(), e_det, f_ec]
    }

    fn raman_seed(&self, e_det: f64) -> f64 {
        // QBER slope against launch power, relative to s0.
        let mut best: Option<(f64, f64, f64)> = None;
        for a in self.qber {
            let p = super::total_launch_power_mw(&a.plan);
            for b in self.qber {
                let q = super::total_launch_power_mw(&b.plan);
                if q > p && a.distance_km == b.distance_km && a.distance_km > 0.0 && best.map_or(true, |c| q - p > c.0) {
                    best = Some((q - p, b.qber - a.qber, a.distance_km));
                }
            }
        }
        match best {
            Some((dp, dq, len)) if dq > 0.0 => dq / (0.5 - e_det) / (dp * len),
            _ => 1e-6,
        }
    }
}

fn nelder_mead(f: &dyn Fn(&Point) -> f64, start: Point, scale: Point, iterations: usize) -> (Point, f64) {
    const N: usize = FREE_PARAMS;
    let mut simplex: Vec<(Point, f64)> = Vec::with_capacity(N + 1);
    simplex.push((start, f(&start)));
    for i in 0..N {
        let mut p = start;
        p[i] += scale[i];
        simplex.push((p, f(&p)));
    }
    let sort = |s: &mut Vec<(Point, f64)>| s.sort_by(|a, b| a.1.total_cmp(&b.1));
    for _ in 0..iterations {
        sort(&mut simplex);
        let mut centroid = [0.0; N];
        for (p, _) in &simplex[..N] {
            for i in 0..N {
                centroid[i] += p[i] / N as f64;
            }
        }
        let along = |t: f64| -> Point {
            let worst = simplex[N].0;
            std::array::from_fn(|i| centroid[i] + t * (worst[i] - centroid[i]))
        };
        let reflected = along(-1.0);
        let fr = f(&reflected);
        if fr < simplex[0].1 {
            let expanded = along(-2.0);
            let fe = f(&expanded);
            simplex[N] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[N - 1].1 {
            simplex[N] = (reflected, fr);
        } else {
            let contracted = if fr < simplex[N].1 { along(-0.5) } else { along(0.5) };
            let fc = f(&contracted);
            if fc < fr.min(simplex[N].1) {
                simplex[N] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for entry in simplex.iter_mut().skip(1) {
                    let p: Point = std::array::from_fn(|i| best[i] + 0.5 * (entry.0[i] - best[i]));
                    *entry = (p, f(&p));
                }
            }
        }
    }
    sort(&mut simplex);
    simplex[0]
}

/// Fits model parameters to SKR and QBER anchors, then places the abort
/// threshold between the QBER at the tolerated and the fatal ceiling.
pub fn calibrate(
    skr_anchors: &[SkrAnchor],
    qber_anchors: &[QberAnchor],
    opts: &CalibrationOptions,
) -> Result<Calibration, CalibrationError> {
    if skr_anchors.len() < MIN_SKR_ANCHORS
        || qber_anchors.len() < MIN_QBER_ANCHORS
        || skr_anchors.len() + qber_anchors.len() < FREE_PARAMS
    {
        return Err(CalibrationError::UnderDetermined {
            skr: skr_anchors.len(),
            qber: qber_anchors.len(),
            min_skr: MIN_SKR_ANCHORS,
            min_qber: MIN_QBER_ANCHORS,
        });
    }
    let span = |d: f64| FiberSpan::smf28(d).map_err(|e| CalibrationError::InvalidAnchor(e.to_string()));
    for a in skr_anchors {
        a.plan.validate().map_err(|e| CalibrationError::InvalidAnchor(e.to_string()))?;
        if !(a.skr_bps > 0.0) {
            return Err(CalibrationError::InvalidAnchor(format!(
                "SKR anchor at {} km must be > 0, got {}",
                a.distance_km, a.skr_bps
            )));
        }
    }
    for a in qber_anchors {
        a.plan.validate().map_err(|e| CalibrationError::InvalidAnchor(e.to_string()))?;
        if !(a.qber > 0.0 && a.qber < 0.5) {
            return Err(CalibrationError::InvalidAnchor(format!("QBER anchor {} out of (0, 0.5)", a.qber)));
        }
    }
    let ceiling = &opts.ceiling;
    let reference = span(ceiling.distance_km)?;
    let problem = Problem {
        skr: skr_anchors,
        qber: qber_anchors,
        skr_spans: skr_anchors.iter().map(|a| span(a.distance_km)).collect::<Result<_, _>>()?,
        qber_spans: qber_anchors.iter().map(|a| span(a.distance_km)).collect::<Result<_, _>>()?,
        tolerated: reference
            .with_extra_loss(ceiling.tolerated_db)
            .map_err(|e| CalibrationError::InvalidAnchor(e.to_string()))?,
        fatal: reference
            .with_extra_loss(ceiling.fatal_db)
            .map_err(|e| CalibrationError::InvalidAnchor(e.to_string()))?,
        opts,
    };
    let f = |x: &Point| problem.objective(x);

    let mut grid: Vec<(Point, f64)> = Vec::new();
    for &e_det in &[0.01, 0.02, 0.03] {
        let raman = problem.raman_seed(e_det);
        for &f_ec in &[1.1, 1.3, 1.6] {
            for &dark in &[1e-5, 1e-4, 1e-3] {
                for &raman_mult in &[0.5, 1.0, 2.0] {
                    let x = problem.grid_point(e_det, f_ec, dark, raman * raman_mult);
                    grid.push((x, f(&x)));
                }
            }
        }
    }
    grid.sort_by(|a, b| a.1.total_cmp(&b.1));

    let scale: Point = [0.5, 0.5, 0.5, 0.005, 0.1];
    let mut best: Option<(Point, f64)> = None;
    for (start, _) in grid.iter().take(3) {
        let mut cur = (*start, f(start));
        for _ in 0..opts.restarts.max(1) {
            cur = nelder_mead(&f, cur.0, scale, opts.iterations);
        }
        if best.map_or(true, |b| cur.1 < b.1) {
            best = Some(cur);
        }
    }
    let (x, objective) = best.expect("grid is non-empty");

    let unclamped = problem.params(&x, 0.5);
    let calm = SopState::calm();
    let tol = evaluate(&ceiling.plan, &problem.tolerated, &calm, &unclamped);
    let fatal = evaluate(&ceiling.plan, &problem.fatal, &calm, &unclamped);
    if !(tol.skr_bps > 0.0) {
        return Err(CalibrationError::Infeasible(format!(
            "no key left at +{} dB (QBER {:.4})",
            ceiling.tolerated_db, tol.qber
        )));
    }
    let anchor_max = skr_anchors
        .iter()
        .zip(&problem.skr_spans)
        .map(|(a, s)| evaluate(&a.plan, s, &calm, &unclamped).qber)
        .fold(tol.qber, f64::max);
    if !(anchor_max < opts.qber_abort_max && anchor_max < fatal.qber) {
        return Err(CalibrationError::Infeasible(format!(
            "no abort threshold separates QBER {:.5} (must keep key) from {:.5} at +{} dB",
            anchor_max, fatal.qber, ceiling.fatal_db
        )));
    }
    let qber_abort = (0.5 * (anchor_max + fatal.qber)).min(opts.qber_abort_max);
    let params = problem.params(&x, qber_abort);
    params
        .validate()
        .map_err(|e| CalibrationError::Infeasible(format!("fitted parameters invalid: {e}")))?;
    if evaluate(&ceiling.plan, &problem.fatal, &calm, &params).skr_bps != 0.0 {
        return Err(CalibrationError::Infeasible(format!(
            "key survives +{} dB",
            ceiling.fatal_db
        )));
    }

    let skr_relative_errors = skr_anchors
        .iter()
        .zip(&problem.skr_spans)
        .map(|(a, s)| evaluate(&a.plan, s, &calm, &params).skr_bps / a.skr_bps - 1.0)
        .collect();
    let qber_errors = qber_anchors
        .iter()
        .zip(&problem.qber_spans)
        .map(|(a, s)| evaluate(&a.plan, s, &calm, &params).qber - a.qber)
        .collect();
    Ok(Calibration {
        params,
        skr_relative_errors,
        qber_errors,
        objective,
    })
}
