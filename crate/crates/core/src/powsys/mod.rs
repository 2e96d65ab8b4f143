//! Power-system models: single machine against an infinite bus, the
//! multi-machine internal-node reduction and the full machine/network DAE.
//!
//! Network and machine data are read from TOML; see `data/wscc9.toml` for
//! the field names.

mod models;
mod network;
mod scenario;

use std::path::Path;

use num_complex::Complex64;
use serde::Deserialize;
use thiserror::Error;

use crate::dae::DaeError;

pub use models::{
    build_generic_dae, build_internal_node, build_smib, generic_equilibrium, readout_power,
    GenericModel, InternalNode, MACHINE_STATES,
};
pub use network::{electrical_power, kron_reduce, power_flow, InternalNodeModel, PowerFlow};
pub use scenario::{Case, Disturbance, LoadChange, ModelKind, Scenario};

pub type C64 = Complex64;

#[derive(Debug, Error)]
pub enum PowsysError {
    #[error("data: {0}")]
    Data(String),
    #[error("cannot parse {path}: {source}")]
    Toml {
        path: String,
        source: toml::de::Error,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("bus {0} does not exist")]
    UnknownBus(usize),
    #[error("network block of eliminated buses is singular")]
    SingularNetwork,
    #[error("power flow: {0}")]
    PowerFlow(DaeError),
    #[error(transparent)]
    Dae(#[from] DaeError),
}

/// Two-axis machine constants in per unit on the system base.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub td0_prime: f64,
    pub tq0_prime: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub xq: f64,
    pub xq_prime: f64,
    #[serde(default)]
    pub rs: f64,
    /// Inertia constant (s); the same constant scales both swing forms.
    pub h: f64,
    /// Torque per rad/s of speed deviation.
    #[serde(default)]
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExciterParams {
    pub ke: f64,
    pub te: f64,
    pub kf: f64,
    pub tf: f64,
    pub ka: f64,
    pub ta: f64,
    /// `S_E(E_fd) = saturation[0] · exp(saturation[1] · E_fd)`.
    pub saturation: [f64; 2],
}

impl ExciterParams {
    pub fn saturation_at(&self, efd: f64) -> f64 {
        self.saturation[0] * (self.saturation[1] * efd).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernorParams {
    pub t_ch: f64,
    pub t_sv: f64,
    pub r_d: f64,
    pub participation: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Machine {
    pub bus: usize,
    pub generator: GeneratorParams,
    pub exciter: ExciterParams,
    pub governor: GovernorParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Voltage set-point (slack/PV) or flat-start guess (PQ).
    #[serde(default = "unit")]
    pub voltage: f64,
    /// Scheduled active generation of a PV bus.
    #[serde(default)]
    pub generation: f64,
    /// `[P, Q]` demand.
    #[serde(default)]
    pub load: [f64; 2],
}

fn unit() -> f64 {
    1.0
}

impl Bus {
    pub fn load(&self) -> C64 {
        C64::new(self.load[0], self.load[1])
    }
}

/// Series branch with total line charging `b`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
}

/// Buses `1..=n` in order; machines sit on buses `1..=m`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemData {
    /// Nominal frequency (Hz).
    pub frequency: f64,
    #[serde(rename = "bus")]
    pub buses: Vec<Bus>,
    #[serde(rename = "branch")]
    pub branches: Vec<Branch>,
    #[serde(rename = "machine")]
    pub machines: Vec<Machine>,
}

impl SystemData {
    pub fn from_toml(text: &str) -> Result<Self, PowsysError> {
        let data: SystemData = toml::from_str(text).map_err(|source| PowsysError::Toml {
            path: "<string>".into(),
            source,
        })?;
        data.validate()?;
        Ok(data)
    }

    pub fn load(path: &Path) -> Result<Self, PowsysError> {
        let text = std::fs::read_to_string(path).map_err(|source| PowsysError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let data: SystemData = toml::from_str(&text).map_err(|source| PowsysError::Toml {
            path: path.display().to_string(),
            source,
        })?;
        data.validate()?;
        Ok(data)
    }

    /// The bundled three-machine nine-bus case.
    pub fn wscc9() -> Self {
        Self::from_toml(include_str!("../../data/wscc9.toml")).expect("bundled data is valid")
    }

    pub fn omega_s(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.frequency
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    pub fn machine_count(&self) -> usize {
        self.machines.len()
    }

    pub fn loads(&self) -> Vec<C64> {
        self.buses.iter().map(Bus::load).collect()
    }

    fn validate(&self) -> Result<(), PowsysError> {
        let bad = |m: String| Err(PowsysError::Data(m));
        if self.frequency.is_nan() || self.frequency <= 0.0 {
            return bad("frequency must be positive".into());
        }
        for (i, b) in self.buses.iter().enumerate() {
            if b.id != i + 1 {
                return bad(format!("bus ids must run 1..n in order; found {} at {}", b.id, i + 1));
            }
            if b.voltage.is_nan() || b.voltage <= 0.0 {
                return bad(format!("bus {} voltage must be positive", b.id));
            }
        }
        if self.buses.iter().filter(|b| b.kind == BusKind::Slack).count() != 1 {
            return bad("exactly one slack bus required".into());
        }
        let n = self.buses.len();
        for br in &self.branches {
            if br.from == 0 || br.to == 0 || br.from > n || br.to > n || br.from == br.to {
                return bad(format!("branch {}-{} has bad endpoints", br.from, br.to));
            }
            if br.r == 0.0 && br.x == 0.0 {
                return bad(format!("branch {}-{} has zero impedance", br.from, br.to));
            }
        }
        for (i, m) in self.machines.iter().enumerate() {
            let g = &m.generator;
            if m.bus != i + 1 || self.buses[i].kind == BusKind::Pq {
                return bad(format!("machine {} must sit on generator bus {}", i + 1, i + 1));
            }
            if !(g.td0_prime > 0.0 && g.tq0_prime > 0.0 && g.h > 0.0) {
                return bad(format!("machine {}: time constants must be positive", i + 1));
            }
            if !(g.xd >= g.xd_prime && g.xd_prime > 0.0 && g.xq >= g.xq_prime && g.xq_prime > 0.0)
            {
                return bad(format!("machine {}: reactance ordering violated", i + 1));
            }
            let e = &m.exciter;
            if !(e.te > 0.0 && e.tf > 0.0 && e.ta > 0.0) {
                return bad(format!("machine {}: exciter time constants", i + 1));
            }
            let gov = &m.governor;
            if !(gov.t_ch > 0.0 && gov.t_sv > 0.0 && gov.r_d > 0.0) {
                return bad(format!("machine {}: governor constants", i + 1));
            }
        }
        if self.buses.iter().skip(self.machines.len()).any(|b| b.kind != BusKind::Pq) {
            return bad("generator buses must come first".into());
        }
        let kpf: f64 = self.machines.iter().map(|m| m.governor.participation).sum();
        if (kpf - 1.0).abs() > 1e-9 {
            return bad(format!("participation factors sum to {kpf}, not 1"));
        }
        Ok(())
    }
}
