use proptest::prelude::*;
use qdae::classical::{forward_euler, rk4, rmse, Event, ParameterChange, Trace, TraceMeta};
use qdae::dae::OdeSystem;
use qdae::expr::parse_expression;

fn decay() -> OdeSystem {
    OdeSystem::explicit(
        vec!["x".into()],
        vec![parse_expression("-lambda*x").unwrap()],
        vec![("lambda".into(), 1.0)],
    )
    .unwrap()
}

fn oscillator() -> OdeSystem {
    OdeSystem::explicit(
        vec!["q".into(), "p".into()],
        vec![parse_expression("p").unwrap(), parse_expression("-q").unwrap()],
        vec![],
    )
    .unwrap()
}

fn smib() -> OdeSystem {
    qdae::powsys::build_smib()
}

fn final_error(trace: &Trace) -> f64 {
    (trace.final_value("x").unwrap() - (-1.0f64).exp()).abs()
}

#[test]
fn euler_converges_at_first_order() {
    let coarse = final_error(&forward_euler(&decay(), &[1.0], 0.01, 1.0, &[]).unwrap());
    let fine = final_error(&forward_euler(&decay(), &[1.0], 0.005, 1.0, &[]).unwrap());
    let order = (coarse / fine).log2();
    assert!((order - 1.0).abs() < 0.05, "{order}");
}

#[test]
fn rk4_converges_at_fourth_order() {
    let coarse = final_error(&rk4(&decay(), &[1.0], 0.1, 1.0, &[]).unwrap());
    let fine = final_error(&rk4(&decay(), &[1.0], 0.05, 1.0, &[]).unwrap());
    let order = (coarse / fine).log2();
    assert!((order - 4.0).abs() < 0.1, "{order}");
}

#[test]
fn rk4_oscillator_energy_drift_is_small() {
    let trace = rk4(&oscillator(), &[1.0, 0.0], 0.01, 20.0, &[]).unwrap();
    let worst = trace
        .values
        .iter()
        .map(|z| (0.5 * (z[0] * z[0] + z[1] * z[1]) - 0.5).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn documented_single_steps() {
    let still = OdeSystem::explicit(vec!["x".into()], vec![parse_expression("0").unwrap()], vec![])
        .unwrap();
    let trace = forward_euler(&still, &[2.5], 0.1, 1.0, &[]).unwrap();
    assert!(trace.values.iter().all(|z| z[0] == 2.5));
    let one = forward_euler(&decay(), &[1.0], 0.01, 0.01, &[]).unwrap();
    assert!((one.final_value("x").unwrap() - 0.99).abs() < 1e-15);
    let exp = rk4(&decay(), &[1.0], 0.01, 1.0, &[]).unwrap();
    assert!(final_error(&exp) < 1e-9);
}

#[test]
fn rk4_energy_over_hundred_periods() {
    let tmax = 100.0 * std::f64::consts::TAU;
    let trace = rk4(&oscillator(), &[1.0, 0.0], 1e-3, tmax, &[]).unwrap();
    let worst = trace
        .values
        .iter()
        .map(|z| (0.5 * (z[0] * z[0] + z[1] * z[1]) - 0.5).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn smib_endpoint_against_fine_rk4() {
    let euler = forward_euler(&smib(), &[-1.0, 7.0], 0.01, 20.0, &[]).unwrap();
    let oracle = rk4(&smib(), &[-1.0, 7.0], 1e-4, 20.0, &[]).unwrap();
    let (a, b) = (euler.last().unwrap(), oracle.last().unwrap());
    assert!((a[0] - b[0]).abs() <= 0.05 && (a[1] - b[1]).abs() <= 0.05);
    assert!((b[0] - 0.5f64.asin()).abs() <= 0.05 && b[1].abs() <= 0.05);
}

#[test]
fn euler_error_on_smib_is_first_order() {
    let oracle = rk4(&smib(), &[-1.0, 7.0], 1e-4, 2.0, &[]).unwrap();
    let gap = |dt: f64| {
        let e = forward_euler(&smib(), &[-1.0, 7.0], dt, 2.0, &[]).unwrap();
        (e.final_value("delta").unwrap() - oracle.final_value("delta").unwrap()).abs()
    };
    let ratio = gap(0.01) / gap(0.005);
    assert!((ratio - 2.0).abs() < 0.2, "{ratio}");
}

#[test]
fn scheduled_change_applies_at_boundary() {
    let events = [Event {
        time: 0.5,
        changes: vec![ParameterChange {
            parameter: "lambda".into(),
            value: 0.0,
        }],
    }];
    let trace = forward_euler(&decay(), &[1.0], 0.1, 1.0, &events).unwrap();
    let at = trace.at(0.5).unwrap()[0];
    assert!((trace.final_value("x").unwrap() - at).abs() < 1e-15);
    assert!((at - 0.9f64.powi(5)).abs() < 1e-12);
}

#[test]
fn csv_round_trip_is_lossless() {
    let trace = rk4(&oscillator(), &[0.3, -0.1], 0.1, 1.0, &[]).unwrap();
    let mut buf = Vec::new();
    trace.write_csv(&mut buf).unwrap();
    let back = Trace::read_csv(buf.as_slice(), TraceMeta::default()).unwrap();
    assert_eq!(back.names, trace.names);
    assert_eq!(back.times, trace.times);
    assert_eq!(back.values, trace.values);
}

proptest! {
    #[test]
    fn rmse_is_symmetric_and_zero_on_self(a in prop::collection::vec(-10.0f64..10.0, 1..20), shift in -1.0f64..1.0) {
        let mut x = Trace::new(vec!["v".into()], TraceMeta::default());
        let mut y = Trace::new(vec!["v".into()], TraceMeta::default());
        for (i, v) in a.iter().enumerate() {
            x.push(i as f64 * 0.1, vec![*v]);
            y.push(i as f64 * 0.1, vec![v + shift]);
        }
        prop_assert_eq!(rmse(&x, &x, "v").unwrap(), 0.0);
        let d = rmse(&x, &y, "v").unwrap();
        prop_assert_eq!(d, rmse(&y, &x, "v").unwrap());
        prop_assert!((d - shift.abs()).abs() < 1e-12);
    }
}
