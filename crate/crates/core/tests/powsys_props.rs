use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use proptest::prelude::*;
use qdae::classical::{rk4, Trace};
use qdae::powsys::{
    build_generic_dae, build_internal_node, electrical_power, readout_power, Case, Disturbance,
    LoadChange, ModelKind, Scenario, SystemData, MACHINE_STATES,
};

fn scenario(name: &str) -> Scenario {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "data", "scenarios", &format!("{name}.toml")]
        .iter()
        .collect();
    Scenario::load(&path).unwrap()
}

fn column_at(trace: &Trace, name: &str, t: f64) -> f64 {
    trace.at(t).unwrap()[trace.index_of(name).unwrap()]
}

#[test]
fn variable_counts() {
    let data = SystemData::wscc9();
    assert_eq!(build_internal_node(&data).unwrap().ode.dim(), 12);
    let generic = build_generic_dae(&data).unwrap();
    assert_eq!(generic.dae.states.len(), 27);
    assert_eq!(generic.dae.algebraics.len(), 24);
    assert_eq!(generic.dae.g.len(), 24);
    assert_eq!(&generic.dae.states[..9], &MACHINE_STATES.map(|s| format!("{s}1"))[..]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn reduced_admittance_matches_full_network(
        parts in prop::collection::vec((0.8f64..1.2, -1.0f64..1.0), 3),
    ) {
        let data = SystemData::wscc9();
        let r = build_internal_node(&data).unwrap().reduction;
        let (m, n) = (r.y_a.nrows(), r.y_d.nrows());
        let e = DVector::from_iterator(m, parts.iter().map(|(a, th)| Complex64::from_polar(*a, *th)));
        // Full system [Y_A Y_B; Y_C Y_D] [E; V] = [I; 0] solved directly.
        let mut full = DMatrix::zeros(m + n, m + n);
        full.view_mut((0, 0), (m, m)).copy_from(&r.y_a);
        full.view_mut((0, m), (m, n)).copy_from(&r.y_b);
        full.view_mut((m, 0), (n, m)).copy_from(&r.y_c);
        full.view_mut((m, m), (n, n)).copy_from(&r.y_d);
        let block = full.view((m, m), (n, n)).into_owned();
        let rhs = -(&r.y_c * &e);
        let v = block.lu().solve(&rhs).unwrap();
        let mut stacked = DVector::zeros(m + n);
        stacked.rows_mut(0, m).copy_from(&e);
        stacked.rows_mut(m, n).copy_from(&v);
        let currents = &full * stacked;
        prop_assert!(currents.rows(m, n).camax() < 1e-10);
        let reduced = &r.y_int * &e;
        for i in 0..m {
            prop_assert!((reduced[i] - currents[i]).norm() < 1e-10);
        }
    }
}

#[test]
fn internal_power_is_phasor_power() {
    let data = SystemData::wscc9();
    let r = build_internal_node(&data).unwrap().reduction;
    let delta = [0.1, 0.5, -0.2];
    let e = DVector::from_iterator(3, (0..3).map(|i| Complex64::from_polar(r.emf[i], delta[i])));
    let i = &r.y_int * &e;
    for k in 0..3 {
        let oracle = (e[k] * i[k].conj()).re;
        assert!((electrical_power(k, &delta, &r) - oracle).abs() < 1e-12);
    }
}

#[test]
fn equilibrium_power_matches_mechanical_input() {
    let node = build_internal_node(&SystemData::wscc9()).unwrap();
    for k in 0..3 {
        let pe = electrical_power(k, &node.reduction.angle, &node.reduction);
        assert!((pe - node.initial[4 * k + 2]).abs() <= 1e-6, "{k}: {pe}");
    }
}

#[test]
fn generic_equilibrium_is_stationary() {
    let model = build_generic_dae(&SystemData::wscc9()).unwrap();
    let ode = qdae::dae::to_explicit_ode(&model.dae).unwrap();
    let rates = ode.rhs(&model.equilibrium).unwrap();
    let worst = rates.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    assert!(worst < 1e-6, "{worst}");
    assert!(ode.constraint_residual(&model.equilibrium) < 1e-6);
}

#[test]
fn readout_matches_dispatch() {
    let data = SystemData::wscc9();
    let model = build_generic_dae(&data).unwrap();
    let (x, y) = model.equilibrium.split_at(27);
    for (k, mach) in data.machines.iter().enumerate() {
        let g = &mach.generator;
        let p = readout_power(x[9 * k], x[9 * k + 1], y[2 * k], y[2 * k + 1], g.xd_prime, g.xq_prime);
        assert!((p - model.flow.generation[k].re).abs() <= 1e-4);
    }
}

#[test]
fn unsaturated_field_at_zero() {
    let data = SystemData::wscc9();
    let model = build_generic_dae(&data).unwrap();
    let ode = qdae::dae::to_explicit_ode(&model.dae).unwrap();
    let mut z = model.equilibrium.clone();
    z[4] = 0.0;
    z[6] = 0.0;
    assert_eq!(ode.rhs(&z).unwrap()[4], 0.0);
}

#[test]
fn steady_state_holds() {
    let data = SystemData::wscc9();
    let steady = Scenario::steady("steady", 10.0);
    for kind in [ModelKind::WsccInternal, ModelKind::WsccDae] {
        let case = Case::prepare(&kind, &steady, &data).unwrap();
        let trace = rk4(&case.ode, &case.z0, case.dt, case.tmax, &case.events).unwrap();
        for row in &trace.values {
            for (a, b) in row.iter().zip(&case.z0) {
                assert!((a - b).abs() <= 1e-4, "{kind}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn scenario_totals() {
    assert!((scenario("decrease").events[0].total_active() + 0.2).abs() < 1e-12);
    assert!((scenario("increase").events[0].total_active() - 0.2).abs() < 1e-12);
    assert!((scenario("large").events[0].total_active() - 1.2).abs() < 1e-12);
}

#[test]
fn zero_event_leaves_model_unchanged() {
    let data = SystemData::wscc9();
    let node = build_internal_node(&data).unwrap();
    let zero = Disturbance {
        time: 1.0,
        changes: vec![LoadChange { bus: 6, p: 0.0, q: 0.0 }],
    };
    let (after, loads) = zero.apply_to_reduction(&node.reduction, &data.loads()).unwrap();
    assert_eq!(loads, data.loads());
    assert_eq!(after, node.reduction);
}

#[test]
fn angles_follow_load_direction() {
    let data = SystemData::wscc9();
    for (name, sign) in [("decrease", 1.0), ("increase", -1.0)] {
        let s = scenario(name);
        let case = Case::prepare(&ModelKind::WsccInternal, &s, &data).unwrap();
        let trace = rk4(&case.ode, &case.z0, case.dt, case.tmax, &case.events).unwrap();
        for i in 1..=3 {
            let var = format!("delta{i}");
            let before = column_at(&trace, &var, 4.99);
            let after = trace.final_value(&var).unwrap();
            assert!(sign * (after - before) > 0.0, "{name} {var}: {before} -> {after}");
            assert!(trace.final_value(&format!("dw{i}")).unwrap().abs() <= 1e-3);
        }
    }
}
