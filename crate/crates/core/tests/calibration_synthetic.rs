use qkdsim_core::phys::{
    calibrate, evaluate, lab_anchors, CalibrationOptions, ChannelPlan, FiberSpan, QberAnchor, QkdModelParams,
    SkrAnchor, SopState,
};

fn truth() -> QkdModelParams<f64> {
    QkdModelParams {
        s0_cps: 5.8e7,
        dark_cps: 2.5e3,
        raman_cps_per_mw_km: 520.0,
        e_det: 0.034,
        f_ec: 1.38,
        q_sift: 0.5,
        qber_abort: 0.11,
    }
}

fn eval(distance_km: f64, plan: &ChannelPlan<f64>, p: &QkdModelParams<f64>) -> (f64, f64) {
    let span = FiberSpan::smf28(distance_km).unwrap();
    let e = evaluate(plan, &span, &SopState::calm(), p);
    (e.skr_bps, e.qber)
}

/// Anchors generated from known parameters are reproduced by the fit.
#[test]
fn recovers_synthetic_anchors() {
    let p = truth();
    let (lab_skr, lab_qber) = lab_anchors();
    let skr: Vec<SkrAnchor> = lab_skr
        .iter()
        .map(|a| SkrAnchor {
            skr_bps: eval(a.distance_km, &a.plan, &p).0,
            ..a.clone()
        })
        .collect();
    let qber: Vec<QberAnchor> = lab_qber
        .iter()
        .map(|a| QberAnchor {
            qber: eval(a.distance_km, &a.plan, &p).1,
            ..a.clone()
        })
        .collect();
    assert!(skr.iter().all(|a| a.skr_bps > 0.0));

    let fit = calibrate(&skr, &qber, &CalibrationOptions::default()).unwrap();
    for (a, err) in skr.iter().zip(&fit.skr_relative_errors) {
        let (model, _) = eval(a.distance_km, &a.plan, &fit.params);
        let independent = (model - a.skr_bps) / a.skr_bps;
        assert!((independent - err).abs() < 1e-9);
        assert!(err.abs() < 0.01, "{} km: relative error {err}", a.distance_km);
    }
    for (a, err) in qber.iter().zip(&fit.qber_errors) {
        assert!(err.abs() < 1e-4, "{} km {} ch: qber error {err}", a.distance_km, a.plan.channels.len());
    }
}
