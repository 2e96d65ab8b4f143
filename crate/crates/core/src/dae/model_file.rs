//! Line-oriented model text:
//!
//! ```text
//! param K1 = 5
//! state delta = -1
//! alg V = 1.0
//! eq der(delta) = w
//! eq 0 = V - 1
//! ```

use super::{DaeError, DaeSystem};
use crate::expr::{parse_expression, Expr, ParseError};

pub fn parse_model(text: &str) -> Result<DaeSystem, DaeError> {
    let mut params = Vec::new();
    let mut states: Vec<(String, f64)> = Vec::new();
    let mut algs = Vec::new();
    let mut derivatives: Vec<(String, Expr, usize)> = Vec::new();
    let mut constraints = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| DaeError::Parse {
            line: line_no,
            message,
        };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (keyword, rest) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| err(format!("incomplete statement `{line}`")))?;
        let (lhs, rhs) = rest
            .split_once('=')
            .ok_or_else(|| err("expected `=`".into()))?;
        let (lhs, rhs) = (lhs.trim(), rhs.trim());
        let number = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| err(format!("expected a number, got `{s}`")))
        };
        let ident = |s: &str| {
            let ok = s
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
                && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
            if ok {
                Ok(s.to_string())
            } else {
                Err(err(format!("bad name `{s}`")))
            }
        };
        let expr = |s: &str| {
            parse_expression(s).map_err(|e| match e {
                ParseError::Syntax {
                    column, message, ..
                } => err(format!("column {column}: {message}")),
                ParseError::UnknownFunction { name, .. } => {
                    err(format!("unknown function `{name}`"))
                }
            })
        };
        match keyword {
            "param" => params.push((ident(lhs)?, number(rhs)?)),
            "state" => states.push((ident(lhs)?, number(rhs)?)),
            "alg" => algs.push((ident(lhs)?, number(rhs)?)),
            "eq" if lhs == "0" => constraints.push(expr(rhs)?),
            "eq" => match expr(lhs)? {
                Expr::Der(name, 1) => derivatives.push((name, expr(rhs)?, line_no)),
                _ => return Err(err("left side must be `0` or `der(NAME)`".into())),
            },
            other => return Err(err(format!("unknown statement `{other}`"))),
        }
    }

    let mut f = Vec::with_capacity(states.len());
    for (x, _) in &states {
        let mut matches = derivatives.iter().filter(|(n, _, _)| n == x);
        let (_, rhs, _) = matches
            .next()
            .ok_or_else(|| DaeError::MissingDerivative(x.clone()))?;
        if let Some((_, _, line)) = matches.next() {
            return Err(DaeError::Parse {
                line: *line,
                message: format!("second equation for der({x})"),
            });
        }
        f.push(rhs.clone());
    }
    if let Some((n, _, line)) = derivatives
        .iter()
        .find(|(n, _, _)| !states.iter().any(|(s, _)| s == n))
    {
        return Err(DaeError::Parse {
            line: *line,
            message: format!("der({n}) of undeclared state"),
        });
    }
    DaeSystem::new(states, algs, params, f, constraints)
}
