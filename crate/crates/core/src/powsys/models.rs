use std::f64::consts::FRAC_PI_2;

use super::network::{admittance, kron_reduce, power_flow, InternalNodeModel, PowerFlow};
use super::{PowsysError, SystemData, C64};
use crate::dae::{DaeSystem, OdeSystem};
use crate::expr::Expr;

/// Per-machine differential states of the generic model, in order.
pub const MACHINE_STATES: [&str; 9] = ["Ed", "Eq", "delta", "w", "Efd", "Rf", "VR", "TM", "PSV"];

fn var(name: String) -> Expr {
    Expr::var(name)
}

fn num(c: f64) -> Expr {
    Expr::constant(c)
}

/// Rotor angle and speed deviation of one machine against a stiff bus.
pub fn build_smib() -> OdeSystem {
    let (delta, w) = (Expr::var("delta"), Expr::var("w"));
    let accel = Expr::var("K1") - Expr::var("K2") * Expr::sin(delta) - Expr::var("K3") * w.clone();
    OdeSystem::explicit(
        vec!["delta".into(), "w".into()],
        vec![w, accel],
        vec![("K1".into(), 5.0), ("K2".into(), 10.0), ("K3".into(), 1.7)],
    )
    .expect("fixed model is well formed")
}

/// `E'_d I_d + E'_q I_q + (X'_q − X'_d) I_d I_q`.
pub fn readout_power(ed: f64, eq: f64, id: f64, iq: f64, xd_prime: f64, xq_prime: f64) -> f64 {
    ed * id + eq * iq + (xq_prime - xd_prime) * id * iq
}

fn readout_expr(i: usize, xd_prime: f64, xq_prime: f64) -> Expr {
    let (id, iq) = (var(format!("Id{i}")), var(format!("Iq{i}")));
    var(format!("Ed{i}")) * id.clone()
        + var(format!("Eq{i}")) * iq.clone()
        + num(xq_prime - xd_prime) * id * iq
}

/// Internal-node ODEs with their reduction and operating point.
#[derive(Debug, Clone)]
pub struct InternalNode {
    pub reduction: InternalNodeModel,
    pub ode: OdeSystem,
    pub initial: Vec<f64>,
    pub flow: PowerFlow,
}

impl InternalNode {
    /// Parameter values of a reduction, for scheduling as events.
    pub fn network_parameters(model: &InternalNodeModel) -> Vec<(String, f64)> {
        let m = model.machine_count();
        let mut out = Vec::new();
        for i in 0..m {
            out.push((format!("gii{}", i + 1), model.emf[i].powi(2) * model.y_int[(i, i)].re));
            for j in (0..m).filter(|&j| j != i) {
                out.push((format!("cs{}_{}", i + 1, j + 1), model.sin_coefficient(i, j)));
                out.push((format!("cc{}_{}", i + 1, j + 1), model.cos_coefficient(i, j)));
            }
        }
        out
    }
}

/// States per machine: angle, speed deviation from synchronous, mechanical
/// torque and valve position. Set-points `P_C` follow the running change of
/// total electrical output through the participation factors.
pub fn build_internal_node(data: &SystemData) -> Result<InternalNode, PowsysError> {
    let loads = data.loads();
    let flow = power_flow(data, &loads)?;
    let reduction = kron_reduce(data, &loads, &flow)?;
    let m = data.machine_count();
    let ws = data.omega_s();
    let pe = |i: usize| {
        let mut p = var(format!("gii{i}"));
        for j in (1..=m).filter(|&j| j != i) {
            let d = var(format!("delta{i}")) - var(format!("delta{j}"));
            p = p + var(format!("cs{i}_{j}")) * Expr::sin(d.clone())
                + var(format!("cc{i}_{j}")) * Expr::cos(d);
        }
        p
    };
    let mut total = num(0.0);
    for i in 1..=m {
        total = total + pe(i);
    }
    let mut names = Vec::new();
    let mut rhs = Vec::new();
    let mut initial = Vec::new();
    let mut params = InternalNode::network_parameters(&reduction);
    let mut output0 = 0.0;
    for (k, mach) in data.machines.iter().enumerate() {
        let i = k + 1;
        let g = &mach.generator;
        let gov = &mach.governor;
        let (dw, tm, psv) = (var(format!("dw{i}")), var(format!("tm{i}")), var(format!("psv{i}")));
        let inertia = 2.0 * g.h / ws;
        let setpoint = var(format!("pc{i}"))
            + num(gov.participation) * (total.clone() - var("pe0".into()));
        rhs.push(dw.clone());
        rhs.push((tm.clone() - pe(i) - num(g.damping) * dw.clone()) / num(inertia));
        rhs.push((psv.clone() - tm) / num(gov.t_ch));
        rhs.push((setpoint - psv - dw / num(gov.r_d * ws)) / num(gov.t_sv));
        for s in ["delta", "dw", "tm", "psv"] {
            names.push(format!("{s}{i}"));
        }
        let p = flow.generation[k].re;
        initial.extend([reduction.angle[k], 0.0, p, p]);
        params.push((format!("pc{i}"), p));
        output0 += p;
    }
    params.push(("pe0".into(), output0));
    let ode = OdeSystem::explicit(names, rhs, params)?;
    Ok(InternalNode {
        reduction,
        ode,
        initial,
        flow,
    })
}

/// Machine/network DAE with its consistent operating point.
#[derive(Debug, Clone)]
pub struct GenericModel {
    pub dae: DaeSystem,
    pub flow: PowerFlow,
    /// Equilibrium `[x; y]`.
    pub equilibrium: Vec<f64>,
}

/// Back-solves machine states and set-points from a power flow.
/// Returns `(x, y, params)`, parameters being `vref`, `pc` and `pe0`.
pub fn generic_equilibrium(
    data: &SystemData,
    pf: &PowerFlow,
) -> (Vec<f64>, Vec<f64>, Vec<(String, f64)>) {
    let ws = data.omega_s();
    let mut x = Vec::new();
    let mut currents = Vec::new();
    let mut params = Vec::new();
    let mut output0 = 0.0;
    for (k, mach) in data.machines.iter().enumerate() {
        let i = k + 1;
        let (g, exc) = (&mach.generator, &mach.exciter);
        let v = pf.phasor(k);
        let current = (pf.generation[k] / v).conj();
        let delta = (v + C64::new(g.rs, g.xq) * current).arg();
        let rotate = C64::from_polar(1.0, -(delta - FRAC_PI_2));
        let (idq, vdq) = (current * rotate, v * rotate);
        let (id, iq) = (idq.re, idq.im);
        let ed = (g.xq - g.xq_prime) * iq;
        let eq = vdq.im + g.rs * iq + g.xd_prime * id;
        let efd = eq + (g.xd - g.xd_prime) * id;
        let vr = (exc.ke + exc.saturation_at(efd)) * efd;
        let rf = exc.kf / exc.tf * efd;
        let tm = readout_power(ed, eq, id, iq, g.xd_prime, g.xq_prime);
        x.extend([ed, eq, delta, ws, efd, rf, vr, tm, tm]);
        currents.extend([id, iq]);
        params.push((format!("vref{i}"), pf.voltage[k] + vr / exc.ka));
        params.push((format!("pc{i}"), tm));
        output0 += tm;
    }
    params.push(("pe0".into(), output0));
    let mut y = currents;
    for k in 0..data.bus_count() {
        y.extend([pf.voltage[k], pf.angle[k]]);
    }
    (x, y, params)
}

/// Two-axis machines with type-1 exciters and governors on the full
/// network. Algebraic unknowns are `I_d, I_q` per machine, then `V, θ` per
/// bus; demands `pl{k}`, `ql{k}` are parameters.
pub fn build_generic_dae(data: &SystemData) -> Result<GenericModel, PowsysError> {
    let loads = data.loads();
    let flow = power_flow(data, &loads)?;
    let (x0, y0, setpoints) = generic_equilibrium(data, &flow);
    let ybus = admittance(data);
    let ws = data.omega_s();
    let (m, n) = (data.machine_count(), data.bus_count());

    let mut total = num(0.0);
    for (k, mach) in data.machines.iter().enumerate() {
        total = total + readout_expr(k + 1, mach.generator.xd_prime, mach.generator.xq_prime);
    }

    let mut states = Vec::new();
    let mut f = Vec::new();
    for (k, mach) in data.machines.iter().enumerate() {
        let i = k + 1;
        let (g, exc, gov) = (&mach.generator, &mach.exciter, &mach.governor);
        let s = |name: &str| var(format!("{name}{i}"));
        let (id, iq) = (s("Id"), s("Iq"));
        let pe = readout_expr(i, g.xd_prime, g.xq_prime);
        let slip = s("w") - num(ws);
        let feedback = num(exc.kf / exc.tf);
        let saturation = num(exc.saturation[0]) * Expr::exp(num(exc.saturation[1]) * s("Efd"));
        let setpoint = s("pc") + num(gov.participation) * (total.clone() - var("pe0".into()));
        f.push((num(g.xq - g.xq_prime) * iq - s("Ed")) / num(g.tq0_prime));
        f.push((s("Efd") - s("Eq") - num(g.xd - g.xd_prime) * id) / num(g.td0_prime));
        f.push(slip.clone());
        f.push((s("TM") - pe - num(g.damping) * slip) * num(ws / (2.0 * g.h)));
        f.push((s("VR") - (num(exc.ke) + saturation) * s("Efd")) / num(exc.te));
        f.push((feedback.clone() * s("Efd") - s("Rf")) / num(exc.tf));
        f.push(
            (num(exc.ka) * s("Rf") - s("VR") - num(exc.ka) * feedback * s("Efd")
                + num(exc.ka) * (s("vref") - var(format!("V{i}"))))
                / num(exc.ta),
        );
        f.push((s("PSV") - s("TM")) / num(gov.t_ch));
        f.push((setpoint - s("PSV") - (s("w") / num(ws) - num(1.0)) / num(gov.r_d)) / num(gov.t_sv));
        for (name, value) in MACHINE_STATES.iter().zip(&x0[9 * k..9 * k + 9]) {
            states.push((format!("{name}{i}"), *value));
        }
    }

    let mut algebraics = Vec::new();
    let mut g = Vec::new();
    let mut labels = Vec::new();
    for (k, mach) in data.machines.iter().enumerate() {
        let i = k + 1;
        let gen = &mach.generator;
        let angle = var(format!("delta{i}")) - var(format!("theta{i}"));
        let v = var(format!("V{i}"));
        let (id, iq) = (var(format!("Id{i}")), var(format!("Iq{i}")));
        g.push(
            var(format!("Ed{i}")) - v.clone() * Expr::sin(angle.clone()) - num(gen.rs) * id.clone()
                + num(gen.xq_prime) * iq.clone(),
        );
        g.push(
            var(format!("Eq{i}")) - v * Expr::cos(angle) - num(gen.rs) * iq - num(gen.xd_prime) * id,
        );
        labels.push(format!("stator_d{i}"));
        labels.push(format!("stator_q{i}"));
        algebraics.push((format!("Id{i}"), y0[2 * k]));
        algebraics.push((format!("Iq{i}"), y0[2 * k + 1]));
    }
    for b in 0..n {
        let k = b + 1;
        let (vk, tk) = (var(format!("V{k}")), var(format!("theta{k}")));
        let mut p = num(0.0);
        let mut q = num(0.0);
        for j in 0..n {
            let y = ybus[(b, j)];
            if y.norm() == 0.0 {
                continue;
            }
            let d = tk.clone() - var(format!("theta{}", j + 1));
            let vv = vk.clone() * var(format!("V{}", j + 1));
            p = p + vv.clone() * (num(y.re) * Expr::cos(d.clone()) + num(y.im) * Expr::sin(d.clone()));
            q = q + vv * (num(y.re) * Expr::sin(d.clone()) - num(y.im) * Expr::cos(d));
        }
        let (mut gen_p, mut gen_q) = (num(0.0), num(0.0));
        if b < m {
            let angle = var(format!("delta{k}")) - tk.clone();
            let (id, iq) = (var(format!("Id{k}")), var(format!("Iq{k}")));
            gen_p = (id.clone() * Expr::sin(angle.clone()) + iq.clone() * Expr::cos(angle.clone()))
                * vk.clone();
            gen_q = (id * Expr::cos(angle.clone()) - iq * Expr::sin(angle)) * vk.clone();
        }
        g.push(gen_p - var(format!("pl{k}")) - p);
        g.push(gen_q - var(format!("ql{k}")) - q);
        labels.push(format!("P{k}"));
        labels.push(format!("Q{k}"));
        algebraics.push((format!("V{k}"), y0[2 * m + 2 * b]));
        algebraics.push((format!("theta{k}"), y0[2 * m + 2 * b + 1]));
    }

    let mut params = setpoints;
    for (k, s) in loads.iter().enumerate() {
        params.push((format!("pl{}", k + 1), s.re));
        params.push((format!("ql{}", k + 1), s.im));
    }
    let dae = DaeSystem::new(states, algebraics, params, f, g)?.with_labels(labels);
    let equilibrium = x0.into_iter().chain(y0).collect();
    Ok(GenericModel {
        dae,
        flow,
        equilibrium,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smib_rates() {
        let ode = build_smib();
        assert_eq!(ode.rhs(&[0.0, 0.0]).unwrap(), vec![0.0, 5.0]);
        let eq = ode.rhs(&[0.5f64.asin(), 0.0]).unwrap();
        assert!(eq[1].abs() < 1e-12);
    }

    #[test]
    fn readout_cases() {
        assert_eq!(readout_power(1.0, 1.1, 0.0, 0.0, 0.2, 0.3), 0.0);
        assert_eq!(readout_power(0.5, 1.1, 0.3, 0.7, 0.2, 0.2), 0.5 * 0.3 + 1.1 * 0.7);
    }

    #[test]
    fn internal_node_shape() {
        let model = build_internal_node(&SystemData::wscc9()).unwrap();
        assert_eq!(model.ode.dim(), 12);
        let rates = model.ode.rhs(&model.initial).unwrap();
        assert!(rates.iter().all(|r| r.abs() < 1e-8), "{rates:?}");
    }

    #[test]
    fn generic_shape() {
        let model = build_generic_dae(&SystemData::wscc9()).unwrap();
        assert_eq!(model.dae.states.len(), 27);
        assert_eq!(model.dae.algebraics.len(), 24);
    }
}
