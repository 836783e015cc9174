//! JSON document format for automata.
//!
//! Reals are written by `serde_json` in shortest round-trip form, so every
//! `f64` parses back to the identical bit pattern.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::engine::{ClosureMode, FixedPointParams, Pfa, PfaParts};
use crate::error::{PfaError, Result};
use crate::stochastic::{AcceptIndicator, Matrix, ProbVector, StochasticKind, StochasticMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PfaDocument {
    pub n: usize,
    pub alphabet: Vec<String>,
    pub transitions: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<Vec<Vec<f64>>>,
    pub initial: Vec<f64>,
    pub accepting: Vec<usize>,
    pub closure_mode: ClosureMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_point: Option<FixedPointParams>,
}

pub(crate) fn parse_symbol(s: &str) -> Result<char> {
    let mut chars = s.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(PfaError::Format(format!(
            "alphabet entries must be single characters, got '{s}'"
        ))),
    }
}

fn square(rows: &[Vec<f64>], n: usize, what: &str) -> Result<Matrix> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(PfaError::Format(format!("{what} must be {n}x{n}")));
    }
    Matrix::from_rows(rows)
}

impl PfaDocument {
    pub fn into_pfa(self) -> Result<Pfa> {
        let n = self.n;
        let alphabet = self
            .alphabet
            .iter()
            .map(|s| parse_symbol(s))
            .collect::<Result<Vec<_>>>()?;
        if self.transitions.len() != alphabet.len() {
            return Err(PfaError::Format(format!(
                "{} transition matrices for {} symbols",
                self.transitions.len(),
                alphabet.len()
            )));
        }
        let transitions = self
            .alphabet
            .iter()
            .map(|s| {
                let rows = self
                    .transitions
                    .get(s)
                    .ok_or_else(|| PfaError::Format(format!("no transitions for '{s}'")))?;
                StochasticMatrix::new(
                    square(rows, n, "transition matrix")?,
                    StochasticKind::RowStochastic,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let epsilon = match &self.epsilon {
            None => None,
            Some(rows) => {
                let m = square(rows, n, "epsilon matrix")?;
                let kind = match self.closure_mode {
                    ClosureMode::RestMass => StochasticKind::RowSubstochastic,
                    ClosureMode::FixedPoint => StochasticKind::RowStochastic,
                    _ => {
                        if StochasticMatrix::new(m.clone(), StochasticKind::RowStochastic).is_ok() {
                            StochasticKind::RowStochastic
                        } else {
                            StochasticKind::RowSubstochastic
                        }
                    }
                };
                Some(StochasticMatrix::new(m, kind)?)
            }
        };
        if self.initial.len() != n {
            return Err(PfaError::Format(format!("initial must have {n} entries")));
        }
        Pfa::new(PfaParts {
            alphabet,
            transitions,
            epsilon,
            initial: ProbVector::new(self.initial)?,
            accepting: AcceptIndicator::from_states(n, &self.accepting)?,
            closure_mode: self.closure_mode,
            fixed_point: self.fixed_point,
        })
    }
}

impl Pfa {
    pub fn to_document(&self) -> PfaDocument {
        PfaDocument {
            n: self.n(),
            alphabet: self.alphabet().iter().map(|c| c.to_string()).collect(),
            transitions: self
                .alphabet()
                .iter()
                .zip(self.transitions())
                .map(|(c, t)| (c.to_string(), t.to_rows()))
                .collect(),
            epsilon: self.epsilon().map(StochasticMatrix::to_rows),
            initial: self.initial().as_slice().to_vec(),
            accepting: self.accepting().states(),
            closure_mode: self.closure_mode(),
            fixed_point: match self.closure_mode() {
                ClosureMode::FixedPoint => Some(self.fixed_point_params()),
                _ => None,
            },
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<PfaDocument>(text)?.into_pfa()
    }
}
