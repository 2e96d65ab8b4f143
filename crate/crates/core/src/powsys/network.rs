use nalgebra::DMatrix;

use super::{BusKind, PowsysError, SystemData, C64};
use crate::dae::{consistent_initialize, DaeSystem};
use crate::expr::Expr;

/// Bus admittance matrix from the branch table.
pub(crate) fn admittance(data: &SystemData) -> DMatrix<C64> {
    let n = data.bus_count();
    let mut y = DMatrix::from_element(n, n, C64::new(0.0, 0.0));
    for br in &data.branches {
        let (a, b) = (br.from - 1, br.to - 1);
        let series = C64::new(1.0, 0.0) / C64::new(br.r, br.x);
        let shunt = C64::new(0.0, br.b / 2.0);
        y[(a, a)] += series + shunt;
        y[(b, b)] += series + shunt;
        y[(a, b)] -= series;
        y[(b, a)] -= series;
    }
    y
}

/// Solved operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlow {
    pub voltage: Vec<f64>,
    pub angle: Vec<f64>,
    /// Net complex injection at every bus.
    pub injection: Vec<C64>,
    /// Complex output of each machine (injection plus local demand).
    pub generation: Vec<C64>,
}

impl PowerFlow {
    pub fn phasor(&self, bus: usize) -> C64 {
        C64::from_polar(self.voltage[bus], self.angle[bus])
    }

    /// Largest scheduled-quantity mismatch.
    pub fn mismatch(&self, data: &SystemData, loads: &[C64]) -> f64 {
        let mut worst = 0.0f64;
        for (i, bus) in data.buses.iter().enumerate() {
            let s = self.injection[i];
            match bus.kind {
                BusKind::Slack => {
                    worst = worst.max((self.voltage[i] - bus.voltage).abs());
                    worst = worst.max(self.angle[i].abs());
                }
                BusKind::Pv => {
                    worst = worst.max((s.re - (bus.generation - loads[i].re)).abs());
                    worst = worst.max((self.voltage[i] - bus.voltage).abs());
                }
                BusKind::Pq => worst = worst.max((s + loads[i]).norm()),
            }
        }
        worst
    }
}

/// Newton power flow in polar form. The slack angle is the reference.
pub fn power_flow(data: &SystemData, loads: &[C64]) -> Result<PowerFlow, PowsysError> {
    let y = admittance(data);
    let n = data.bus_count();
    let mut vm: Vec<Expr> = Vec::with_capacity(n);
    let mut va: Vec<Expr> = Vec::with_capacity(n);
    let mut unknowns = Vec::new();
    for bus in &data.buses {
        let k = bus.id;
        if bus.kind == BusKind::Slack {
            va.push(Expr::constant(0.0));
        } else {
            va.push(Expr::var(format!("theta{k}")));
            unknowns.push((format!("theta{k}"), 0.0));
        }
        if bus.kind == BusKind::Pq {
            vm.push(Expr::var(format!("v{k}")));
            unknowns.push((format!("v{k}"), bus.voltage));
        } else {
            vm.push(Expr::constant(bus.voltage));
        }
    }
    let flow = |i: usize, reactive: bool| {
        let mut sum = Expr::constant(0.0);
        for k in 0..n {
            let (g, b) = (y[(i, k)].re, y[(i, k)].im);
            if g == 0.0 && b == 0.0 {
                continue;
            }
            let d = va[i].clone() - va[k].clone();
            let term = if reactive {
                Expr::constant(g) * Expr::sin(d.clone()) - Expr::constant(b) * Expr::cos(d)
            } else {
                Expr::constant(g) * Expr::cos(d.clone()) + Expr::constant(b) * Expr::sin(d)
            };
            sum = sum + vm[i].clone() * vm[k].clone() * term;
        }
        sum
    };
    let mut equations = Vec::new();
    let mut labels = Vec::new();
    for (i, bus) in data.buses.iter().enumerate() {
        match bus.kind {
            BusKind::Slack => {}
            BusKind::Pv => {
                equations.push(flow(i, false) - Expr::constant(bus.generation - loads[i].re));
                labels.push(format!("P{}", bus.id));
            }
            BusKind::Pq => {
                equations.push(flow(i, false) + Expr::constant(loads[i].re));
                equations.push(flow(i, true) + Expr::constant(loads[i].im));
                labels.push(format!("P{}", bus.id));
                labels.push(format!("Q{}", bus.id));
            }
        }
    }
    // Equation order differs from unknown order; Newton only needs the count.
    let guess: Vec<f64> = unknowns.iter().map(|(_, v)| *v).collect();
    let system = DaeSystem::new(vec![], unknowns.clone(), vec![], vec![], equations)
        .map_err(PowsysError::PowerFlow)?
        .with_labels(labels);
    let solution = consistent_initialize(&system, &[], &guess).map_err(PowsysError::PowerFlow)?;
    let value = |name: String| {
        unknowns
            .iter()
            .position(|(u, _)| *u == name)
            .map(|i| solution[i])
    };
    let mut voltage = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    for bus in &data.buses {
        voltage.push(value(format!("v{}", bus.id)).unwrap_or(bus.voltage));
        angle.push(value(format!("theta{}", bus.id)).unwrap_or(0.0));
    }
    let phasors: Vec<C64> = (0..n).map(|i| C64::from_polar(voltage[i], angle[i])).collect();
    let injection: Vec<C64> = (0..n)
        .map(|i| {
            let current: C64 = (0..n).map(|k| y[(i, k)] * phasors[k]).sum();
            phasors[i] * current.conj()
        })
        .collect();
    let generation = (0..data.machine_count())
        .map(|i| injection[i] + loads[i])
        .collect();
    Ok(PowerFlow {
        voltage,
        angle,
        injection,
        generation,
    })
}

/// Network reduced to the machine internal nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct InternalNodeModel {
    /// Internal voltage magnitudes `E_i`, held constant.
    pub emf: Vec<f64>,
    /// Internal angles at the operating point.
    pub angle: Vec<f64>,
    /// Constant-impedance loads per bus.
    pub load_admittance: Vec<C64>,
    pub y_a: DMatrix<C64>,
    pub y_b: DMatrix<C64>,
    pub y_c: DMatrix<C64>,
    pub y_d: DMatrix<C64>,
    pub y_int: DMatrix<C64>,
    /// Bus voltages at which demands were converted to admittances.
    pub(crate) voltage: Vec<f64>,
    pub(crate) network: DMatrix<C64>,
    pub(crate) transient_reactance: Vec<f64>,
}

impl InternalNodeModel {
    pub fn machine_count(&self) -> usize {
        self.emf.len()
    }

    /// `E_i E_j B_ij`.
    pub fn sin_coefficient(&self, i: usize, j: usize) -> f64 {
        self.emf[i] * self.emf[j] * self.y_int[(i, j)].im
    }

    /// `E_i E_j G_ij`.
    pub fn cos_coefficient(&self, i: usize, j: usize) -> f64 {
        self.emf[i] * self.emf[j] * self.y_int[(i, j)].re
    }

    /// Same reduction with new demands, converted at the stored voltages.
    pub fn with_loads(&self, loads: &[C64]) -> Result<Self, PowsysError> {
        reduce(
            &self.network,
            &self.transient_reactance,
            loads,
            &self.voltage,
            self.emf.clone(),
            self.angle.clone(),
        )
    }
}

/// Kron reduction at a solved operating point. Demands become shunt
/// admittances `(P - jQ)/V²`.
pub fn kron_reduce(
    data: &SystemData,
    loads: &[C64],
    pf: &PowerFlow,
) -> Result<InternalNodeModel, PowsysError> {
    let xdp: Vec<f64> = data.machines.iter().map(|m| m.generator.xd_prime).collect();
    let mut emf = Vec::new();
    let mut angle = Vec::new();
    for (i, x) in xdp.iter().enumerate() {
        let v = pf.phasor(i);
        let current = (pf.generation[i] / v).conj();
        let e = v + C64::new(0.0, *x) * current;
        emf.push(e.norm());
        angle.push(e.arg());
    }
    reduce(&admittance(data), &xdp, loads, &pf.voltage, emf, angle)
}

fn reduce(
    network: &DMatrix<C64>,
    xdp: &[f64],
    loads: &[C64],
    voltage: &[f64],
    emf: Vec<f64>,
    angle: Vec<f64>,
) -> Result<InternalNodeModel, PowsysError> {
    let n = network.nrows();
    let m = xdp.len();
    let zero = C64::new(0.0, 0.0);
    let y: Vec<C64> = xdp.iter().map(|x| C64::new(1.0, 0.0) / C64::new(0.0, *x)).collect();
    let load_admittance: Vec<C64> = loads
        .iter()
        .zip(voltage)
        .map(|(s, v)| s.conj() / (v * v))
        .collect();
    let y_a = DMatrix::from_fn(m, m, |i, j| if i == j { y[i] } else { zero });
    let y_b = DMatrix::from_fn(m, n, |i, k| if i == k { -y[i] } else { zero });
    let y_c = y_b.transpose();
    let mut y_d = network.clone();
    for k in 0..n {
        y_d[(k, k)] += load_admittance[k];
        if k < m {
            y_d[(k, k)] += y[k];
        }
    }
    let inverse = y_d.clone().try_inverse().ok_or(PowsysError::SingularNetwork)?;
    let y_int = &y_a - &y_b * inverse * &y_c;
    Ok(InternalNodeModel {
        emf,
        angle,
        load_admittance,
        y_a,
        y_b,
        y_c,
        y_d,
        y_int,
        voltage: voltage.to_vec(),
        network: network.clone(),
        transient_reactance: xdp.to_vec(),
    })
}

/// Real power out of internal node `i` (0-based) at rotor angles `delta`.
pub fn electrical_power(i: usize, delta: &[f64], model: &InternalNodeModel) -> f64 {
    let mut p = model.emf[i].powi(2) * model.y_int[(i, i)].re;
    for j in 0..model.machine_count() {
        if j != i {
            let d = delta[i] - delta[j];
            p += model.sin_coefficient(i, j) * d.sin() + model.cos_coefficient(i, j) * d.cos();
        }
    }
    p
}
