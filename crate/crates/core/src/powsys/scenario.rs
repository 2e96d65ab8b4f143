use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

use super::models::{build_generic_dae, build_internal_node, build_smib, InternalNode};
use super::network::InternalNodeModel;
use super::{PowsysError, SystemData, C64};
use crate::classical::{Event, ParameterChange};
use crate::dae::{
    consistent_initialize, parse_model, pantelides_reduce, to_explicit_ode, DaeSystem, OdeSystem,
};

/// Demand step at one bus.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadChange {
    pub bus: usize,
    #[serde(default)]
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

/// Simultaneous load changes at `time`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    pub time: f64,
    pub changes: Vec<LoadChange>,
}

impl Disturbance {
    /// Net active-demand change `Z`.
    pub fn total_active(&self) -> f64 {
        self.changes.iter().map(|c| c.p).sum()
    }

    /// Demands after this event.
    pub fn apply(&self, loads: &[C64]) -> Result<Vec<C64>, PowsysError> {
        let mut out = loads.to_vec();
        for c in &self.changes {
            let slot = c
                .bus
                .checked_sub(1)
                .and_then(|i| out.get_mut(i))
                .ok_or(PowsysError::UnknownBus(c.bus))?;
            *slot += C64::new(c.p, c.q);
        }
        Ok(out)
    }

    /// Internal-node update: the reduction redone with the new demands.
    pub fn apply_to_reduction(
        &self,
        model: &InternalNodeModel,
        loads: &[C64],
    ) -> Result<(InternalNodeModel, Vec<C64>), PowsysError> {
        let after = self.apply(loads)?;
        Ok((model.with_loads(&after)?, after))
    }
}

/// Experiment description read from TOML.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Default model id when none is given on the command line.
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_step")]
    pub step: f64,
    pub horizon: f64,
    /// Parameter overrides.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Absolute initial values.
    #[serde(default)]
    pub initial: BTreeMap<String, f64>,
    /// Additive perturbations of the initial point.
    #[serde(default)]
    pub offsets: BTreeMap<String, f64>,
    #[serde(default, rename = "event")]
    pub events: Vec<Disturbance>,
}

fn default_step() -> f64 {
    0.01
}

impl Scenario {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, PowsysError> {
        let s: Scenario = toml::from_str(text).map_err(|source| PowsysError::Toml {
            path: origin.to_string(),
            source,
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, PowsysError> {
        let text = std::fs::read_to_string(path).map_err(|source| PowsysError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Unperturbed run of `horizon` seconds.
    pub fn steady(name: &str, horizon: f64) -> Self {
        Scenario {
            name: name.to_string(),
            model: None,
            step: default_step(),
            horizon,
            parameters: BTreeMap::new(),
            initial: BTreeMap::new(),
            offsets: BTreeMap::new(),
            events: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), PowsysError> {
        if !(self.step > 0.0 && self.horizon >= self.step) {
            return Err(PowsysError::Data(format!(
                "scenario {}: need step > 0 and horizon >= step",
                self.name
            )));
        }
        if let Some(e) = self.events.iter().find(|e| !(0.0..=self.horizon).contains(&e.time)) {
            return Err(PowsysError::Data(format!(
                "scenario {}: event at {} outside [0, {}]",
                self.name, e.time, self.horizon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelKind {
    Smib,
    WsccInternal,
    WsccDae,
    File(PathBuf),
}

impl FromStr for ModelKind {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "smib" => ModelKind::Smib,
            "wscc-internal" => ModelKind::WsccInternal,
            "wscc-dae" => ModelKind::WsccDae,
            path => ModelKind::File(PathBuf::from(path)),
        })
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::Smib => f.write_str("smib"),
            ModelKind::WsccInternal => f.write_str("wscc-internal"),
            ModelKind::WsccDae => f.write_str("wscc-dae"),
            ModelKind::File(p) => write!(f, "{}", p.display()),
        }
    }
}

/// A model instantiated for one scenario, ready to integrate.
#[derive(Debug, Clone)]
pub struct Case {
    pub ode: OdeSystem,
    pub z0: Vec<f64>,
    pub events: Vec<Event>,
    pub dt: f64,
    pub tmax: f64,
    /// Source DAE (after index reduction) for constraint checks.
    pub dae: Option<DaeSystem>,
}

impl Case {
    pub fn prepare(
        kind: &ModelKind,
        scenario: &Scenario,
        data: &SystemData,
    ) -> Result<Self, PowsysError> {
        let (ode, z0, events, dae) = match kind {
            ModelKind::Smib => {
                let ode = build_smib();
                let k1 = scenario.parameters.get("K1").copied().unwrap_or(5.0);
                let k2 = scenario.parameters.get("K2").copied().unwrap_or(10.0);
                let z0 = vec![(k1 / k2).clamp(-1.0, 1.0).asin(), 0.0];
                no_load_events(scenario)?;
                (ode, z0, Vec::new(), None)
            }
            ModelKind::WsccInternal => {
                let node = build_internal_node(data)?;
                let mut loads = data.loads();
                let mut reduction = node.reduction.clone();
                let mut events = Vec::new();
                for d in sorted(&scenario.events) {
                    (reduction, loads) = d.apply_to_reduction(&reduction, &loads)?;
                    events.push(Event {
                        time: d.time,
                        changes: assignments(InternalNode::network_parameters(&reduction)),
                    });
                }
                (node.ode, node.initial, events, None)
            }
            ModelKind::WsccDae => {
                let model = build_generic_dae(data)?;
                let reduced = pantelides_reduce(&model.dae)?;
                let ode = to_explicit_ode(&reduced)?;
                let mut loads = data.loads();
                let mut events = Vec::new();
                for d in sorted(&scenario.events) {
                    loads = d.apply(&loads)?;
                    let mut changes = Vec::new();
                    for c in &d.changes {
                        let s = loads[c.bus - 1];
                        changes.push((format!("pl{}", c.bus), s.re));
                        changes.push((format!("ql{}", c.bus), s.im));
                    }
                    events.push(Event {
                        time: d.time,
                        changes: assignments(changes),
                    });
                }
                (ode, model.equilibrium, events, Some(reduced))
            }
            ModelKind::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| PowsysError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                let mut parsed = parse_model(&text)?;
                for (name, value) in &scenario.parameters {
                    parsed.set_parameter(name, *value)?;
                }
                let reduced = pantelides_reduce(&parsed)?;
                let ode = to_explicit_ode(&reduced)?;
                let y = consistent_initialize(&reduced, &reduced.state_init, &reduced.algebraic_guess)?;
                let z0 = reduced.state_init.iter().copied().chain(y).collect();
                no_load_events(scenario)?;
                (ode, z0, Vec::new(), Some(reduced))
            }
        };
        let mut ode = ode;
        let mut dae = dae;
        for (name, value) in &scenario.parameters {
            ode.set_parameter(name, *value)?;
            if let Some(d) = dae.as_mut() {
                d.set_parameter(name, *value)?;
            }
        }
        let mut z0 = z0;
        let index = |name: &str| {
            ode.variables()
                .iter()
                .position(|v| v == name)
                .ok_or_else(|| PowsysError::Data(format!("no variable `{name}` to initialize")))
        };
        for (name, value) in &scenario.initial {
            z0[index(name)?] = *value;
        }
        for (name, delta) in &scenario.offsets {
            z0[index(name)?] += delta;
        }
        if !(scenario.initial.is_empty() && scenario.offsets.is_empty()) {
            ode.project(&mut z0)?;
        }
        Ok(Case {
            ode,
            z0,
            events,
            dt: scenario.step,
            tmax: scenario.horizon,
            dae,
        })
    }

    /// DAE parameters in force at time `t`, for residual checks.
    pub fn dae_at(&self, t: f64) -> Option<DaeSystem> {
        let mut d = self.dae.clone()?;
        for e in self.events.iter().filter(|e| e.time <= t + 1e-9) {
            for c in &e.changes {
                d.set_parameter(&c.parameter, c.value).ok()?;
            }
        }
        Some(d)
    }
}

fn sorted(events: &[Disturbance]) -> Vec<&Disturbance> {
    let mut v: Vec<&Disturbance> = events.iter().collect();
    v.sort_by(|a, b| a.time.total_cmp(&b.time));
    v
}

fn assignments(values: Vec<(String, f64)>) -> Vec<ParameterChange> {
    values
        .into_iter()
        .map(|(parameter, value)| ParameterChange { parameter, value })
        .collect()
}

fn no_load_events(scenario: &Scenario) -> Result<(), PowsysError> {
    if scenario.events.is_empty() {
        Ok(())
    } else {
        Err(PowsysError::Data(format!(
            "scenario {}: load events need a network model",
            scenario.name
        )))
    }
}
