//! Reference integrators, trajectory container and error metrics.

use std::fmt;
use std::io::{self, BufRead, Write};

use crate::dae::{DaeError, OdeSystem};

/// Parameter assignment applied at a scheduled time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterChange {
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub changes: Vec<ParameterChange>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TraceMeta {
    pub method: String,
    pub dt: f64,
    pub scenario: String,
}

/// Sampled trajectory on a uniform grid `t_n = n·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub meta: TraceMeta,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TraceError {
    #[error("time grids differ")]
    GridMismatch,
    #[error("no variable `{0}` in trace")]
    UnknownVariable(String),
    #[error("bad CSV at line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Integration stopped early; `trace` holds every completed step.
#[derive(Debug, Clone)]
pub struct IntegrationError {
    pub trace: Box<Trace>,
    pub time: f64,
    pub reason: String,
}

impl fmt::Display for IntegrationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "integration aborted at t = {}: {}", self.time, self.reason)
    }
}

impl std::error::Error for IntegrationError {}

impl Trace {
    pub fn new(names: Vec<String>, meta: TraceMeta) -> Self {
        Trace {
            names,
            times: Vec::new(),
            values: Vec::new(),
            meta,
        }
    }

    pub fn push(&mut self, t: f64, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.names.len());
        self.times.push(t);
        self.values.push(row);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, TraceError> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| TraceError::UnknownVariable(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>, TraceError> {
        let i = self.index_of(name)?;
        Ok(self.values.iter().map(|r| r[i]).collect())
    }

    pub fn last(&self) -> Option<&[f64]> {
        self.values.last().map(Vec::as_slice)
    }

    pub fn final_value(&self, name: &str) -> Result<f64, TraceError> {
        let i = self.index_of(name)?;
        self.values
            .last()
            .map(|r| r[i])
            .ok_or_else(|| TraceError::UnknownVariable(name.to_string()))
    }

    /// Row closest to time `t`.
    pub fn at(&self, t: f64) -> Option<&[f64]> {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))?
            .0;
        Some(&self.values[i])
    }

    /// CSV with header `t,<names>` and 17 significant digits per value.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,{}", self.names.join(","))?;
        for (t, row) in self.times.iter().zip(&self.values) {
            write!(w, "{t:.16e}")?;
            for v in row {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R, meta: TraceMeta) -> Result<Trace, TraceError> {
        let mut lines = r.lines().enumerate();
        let csv = |line: usize, message: String| TraceError::Csv {
            line: line + 1,
            message,
        };
        let (_, header) = lines
            .next()
            .ok_or_else(|| csv(0, "empty file".into()))?;
        let header = header.map_err(|e| csv(0, e.to_string()))?;
        let mut cols = header.trim().split(',');
        if cols.next() != Some("t") {
            return Err(csv(0, "first column must be `t`".into()));
        }
        let mut trace = Trace::new(cols.map(str::to_string).collect(), meta);
        for (i, line) in lines {
            let line = line.map_err(|e| csv(i, e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let nums = line
                .trim()
                .split(',')
                .map(|s| s.parse::<f64>().map_err(|e| csv(i, format!("`{s}`: {e}"))))
                .collect::<Result<Vec<_>, _>>()?;
            if nums.len() != trace.names.len() + 1 {
                return Err(csv(i, format!("expected {} fields", trace.names.len() + 1)));
            }
            trace.push(nums[0], nums[1..].to_vec());
        }
        Ok(trace)
    }
}

pub fn rmse(a: &Trace, b: &Trace, variable: &str) -> Result<f64, TraceError> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9)
    {
        return Err(TraceError::GridMismatch);
    }
    let (xa, xb) = (a.column(variable)?, b.column(variable)?);
    if xa.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = xa.iter().zip(&xb).map(|(p, q)| (p - q).powi(2)).sum();
    Ok((sum / xa.len() as f64).sqrt())
}

/// Number of whole steps covering `[0, tmax]`.
pub fn step_count(dt: f64, tmax: f64) -> usize {
    (tmax / dt - 1e-9).ceil().max(0.0) as usize
}

/// Drives a one-step map over the grid, applying due events at step
/// boundaries and re-solving algebraic variables after each event.
pub fn run_schedule<F>(
    ode: &OdeSystem,
    z0: &[f64],
    dt: f64,
    tmax: f64,
    events: &[Event],
    meta: TraceMeta,
    mut step: F,
) -> Result<Trace, IntegrationError>
where
    F: FnMut(&OdeSystem, &[f64], f64) -> Result<Vec<f64>, String>,
{
    let mut ode = ode.clone();
    let mut trace = Trace::new(ode.variables().to_vec(), meta);
    let mut z = z0.to_vec();
    let mut pending: Vec<&Event> = events.iter().collect();
    pending.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut next_event = 0;
    let steps = step_count(dt, tmax);
    let abort = |trace: Trace, t: f64, reason: String| IntegrationError {
        trace: Box::new(trace),
        time: t,
        reason,
    };
    for n in 0..=steps {
        let t = n as f64 * dt;
        while next_event < pending.len() && pending[next_event].time <= t + 1e-9 * dt.max(1.0) {
            for c in &pending[next_event].changes {
                if let Err(e) = ode.set_parameter(&c.parameter, c.value) {
                    return Err(abort(trace, t, e.to_string()));
                }
            }
            if let Err(e) = ode.project(&mut z) {
                return Err(abort(trace, t, e.to_string()));
            }
            next_event += 1;
        }
        trace.push(t, z.clone());
        if n == steps {
            break;
        }
        match step(&ode, &z, dt) {
            Ok(next) if next.iter().all(|x| x.is_finite()) => z = next,
            Ok(_) => return Err(abort(trace, t, "non-finite state".into())),
            Err(reason) => return Err(abort(trace, t, reason)),
        }
    }
    Ok(trace)
}

fn meta(method: &str, dt: f64) -> TraceMeta {
    TraceMeta {
        method: method.to_string(),
        dt,
        scenario: String::new(),
    }
}

fn eval(ode: &OdeSystem, z: &[f64]) -> Result<Vec<f64>, String> {
    ode.rhs(z).map_err(|e: DaeError| e.to_string())
}

pub fn euler_step(ode: &OdeSystem, z: &[f64], dt: f64) -> Result<Vec<f64>, String> {
    let f = eval(ode, z)?;
    Ok(z.iter().zip(&f).map(|(a, b)| a + dt * b).collect())
}

pub fn rk4_step(ode: &OdeSystem, z: &[f64], dt: f64) -> Result<Vec<f64>, String> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + s * y).collect()
    };
    let k1 = eval(ode, z)?;
    let k2 = eval(ode, &axpy(z, dt / 2.0, &k1))?;
    let k3 = eval(ode, &axpy(z, dt / 2.0, &k2))?;
    let k4 = eval(ode, &axpy(z, dt, &k3))?;
    Ok((0..z.len())
        .map(|i| z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub fn forward_euler(
    ode: &OdeSystem,
    z0: &[f64],
    dt: f64,
    tmax: f64,
    events: &[Event],
) -> Result<Trace, IntegrationError> {
    run_schedule(ode, z0, dt, tmax, events, meta("euler", dt), euler_step)
}

pub fn rk4(
    ode: &OdeSystem,
    z0: &[f64],
    dt: f64,
    tmax: f64,
    events: &[Event],
) -> Result<Trace, IntegrationError> {
    run_schedule(ode, z0, dt, tmax, events, meta("rk4", dt), rk4_step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    fn ode(rhs: &[&str], vars: &[&str]) -> OdeSystem {
        OdeSystem::explicit(
            vars.iter().map(|s| s.to_string()).collect(),
            rhs.iter().map(|s| parse_expression(s).unwrap()).collect(),
            vec![("k".into(), 1.0)],
        )
        .unwrap()
    }

    #[test]
    fn euler_single_step() {
        let tr = forward_euler(&ode(&["-z"], &["z"]), &[1.0], 0.01, 0.01, &[]).unwrap();
        assert_eq!(tr.len(), 2);
        assert_eq!(tr.final_value("z").unwrap(), 0.99);
    }

    #[test]
    fn constant_trace() {
        let tr = forward_euler(&ode(&["0"], &["z"]), &[3.0], 0.1, 1.0, &[]).unwrap();
        assert!(tr.values.iter().all(|r| r[0] == 3.0));
        assert_eq!(tr.len(), 11);
    }

    #[test]
    fn rk4_exponential() {
        let tr = rk4(&ode(&["-z"], &["z"]), &[1.0], 0.01, 1.0, &[]).unwrap();
        assert!((tr.final_value("z").unwrap() - (-1.0f64).exp()).abs() < 1e-9);
        assert!((tr.times.last().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn events_apply_at_boundaries() {
        let sys = ode(&["k"], &["z"]);
        let ev = Event {
            time: 0.5,
            changes: vec![ParameterChange {
                parameter: "k".into(),
                value: 0.0,
            }],
        };
        let tr = forward_euler(&sys, &[0.0], 0.1, 1.0, &[ev]).unwrap();
        assert!((tr.final_value("z").unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_aborts_with_partial_trace() {
        let sys = ode(&["z^2"], &["z"]);
        let err = forward_euler(&sys, &[1e200], 1.0, 10.0, &[]).unwrap_err();
        assert!(!err.trace.is_empty());
        assert!(err.trace.len() < 11);
    }

    #[test]
    fn rmse_offset_and_grid() {
        let mut a = Trace::new(vec!["x".into()], TraceMeta::default());
        let mut b = a.clone();
        for n in 0..5 {
            a.push(n as f64, vec![n as f64]);
            b.push(n as f64, vec![n as f64 + 0.25]);
        }
        assert_eq!(rmse(&a, &a, "x").unwrap(), 0.0);
        assert_eq!(rmse(&a, &b, "x").unwrap(), 0.25);
        b.times[2] = 7.0;
        assert_eq!(rmse(&a, &b, "x"), Err(TraceError::GridMismatch));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut a = Trace::new(vec!["x".into(), "y".into()], TraceMeta::default());
        a.push(0.0, vec![1.0 / 3.0, -2.0e-17]);
        a.push(0.01, vec![std::f64::consts::PI, 7.0]);
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let b = Trace::read_csv(&buf[..], TraceMeta::default()).unwrap();
        assert_eq!(a, b);
    }
}
