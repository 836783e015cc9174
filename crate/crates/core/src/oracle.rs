//! Reference computations that share no arithmetic with the engine.
//!
//! Everything here reads raw matrix entries through index loops. The engine's
//! kernels ([`crate::stochastic::row_times`], compiled closure matrices) are
//! never called, so a bug in one path cannot silently agree with itself.

#![allow(clippy::needless_range_loop)]

use crate::engine::{ClosureMode, Pfa};
use crate::error::{PfaError, Result};
use crate::stochastic::{Normalization, ProbVector, StochasticMatrix};

/// Limits for [`enumerate_paths_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathEnumerationBudget {
    pub max_paths: u64,
    /// Cap on ε-hops within one gap between symbols; a path that would reach
    /// the cap is rejected as cyclic. `None` means `n`, which admits every
    /// path of an acyclic ε-graph.
    pub max_epsilon_hops: Option<usize>,
}

impl Default for PathEnumerationBudget {
    fn default() -> Self {
        Self {
            max_paths: 10_000_000,
            max_epsilon_hops: None,
        }
    }
}

impl PathEnumerationBudget {
    fn hops_for(&self, n: usize) -> Result<usize> {
        let hops = self.max_epsilon_hops.unwrap_or(n);
        if hops == 0 || self.max_paths == 0 {
            return Err(PfaError::InvalidArgument(
                "path enumeration budget must be positive".into(),
            ));
        }
        Ok(hops)
    }
}

/// ε-structure the oracles understand: none at all, or rest-mass termination.
enum EpsilonView<'a> {
    Absent,
    RestMass {
        e: &'a StochasticMatrix,
        rest: Vec<f64>,
    },
}

fn epsilon_view(pfa: &Pfa) -> Result<EpsilonView<'_>> {
    match (pfa.epsilon(), pfa.closure_mode()) {
        (None, _) => Ok(EpsilonView::Absent),
        (Some(e), ClosureMode::RestMass) => {
            let n = e.n();
            let rest = (0..n)
                .map(|i| {
                    let mut out = 0.0;
                    for j in 0..n {
                        out += e.get(i, j);
                    }
                    (1.0 - out).max(0.0)
                })
                .collect();
            Ok(EpsilonView::RestMass { e, rest })
        }
        (Some(_), mode) => Err(PfaError::ClosureModeMismatch {
            mode: mode.name(),
            reason: "the oracles (exact regimes are NONE and acyclic REST_MASS)".into(),
        }),
    }
}

/// Scalar ε-expansion: up to `max_hops` explicit hop passes, then rest-mass weighting.
fn expand_epsilon(alpha: &[f64], view: &EpsilonView<'_>, max_hops: usize) -> Result<Vec<f64>> {
    let (e, rest) = match view {
        EpsilonView::Absent => return Ok(alpha.to_vec()),
        EpsilonView::RestMass { e, rest } => (*e, rest),
    };
    let n = alpha.len();
    let mut reached = alpha.to_vec();
    let mut frontier = alpha.to_vec();
    let mut hops = 0;
    loop {
        let mut next = vec![0.0; n];
        let mut any = false;
        for i in 0..n {
            if frontier[i] == 0.0 {
                continue;
            }
            for j in 0..n {
                let w = e.get(i, j);
                if w != 0.0 {
                    next[j] += frontier[i] * w;
                    any = true;
                }
            }
        }
        if !any {
            break;
        }
        // n states admit at most n − 1 hops along an acyclic ε-graph.
        if hops + 1 >= max_hops {
            return Err(PfaError::BudgetExceeded(format!(
                "ε-paths longer than {max_hops} hops (cyclic ε-graph)"
            )));
        }
        hops += 1;
        for j in 0..n {
            reached[j] += next[j];
        }
        frontier = next;
    }
    Ok((0..n).map(|j| reached[j] * rest[j]).collect())
}

/// Forward recursion returning the marginals after every prefix, `α_0 … α_L`.
pub fn forward_dp_trace(pfa: &Pfa, string: &str) -> Result<Vec<Vec<f64>>> {
    forward_dp_trace_with(pfa, string, PathEnumerationBudget::default())
}

pub fn forward_dp_trace_with(
    pfa: &Pfa,
    string: &str,
    budget: PathEnumerationBudget,
) -> Result<Vec<Vec<f64>>> {
    let n = pfa.n();
    let view = epsilon_view(pfa)?;
    let max_hops = budget.hops_for(n)?;
    let symbols = pfa.encode(string)?;
    let mut alpha = expand_epsilon(pfa.initial().as_slice(), &view, max_hops)?;
    let mut trace = Vec::with_capacity(symbols.len() + 1);
    trace.push(alpha.clone());
    for &x in &symbols {
        let t = &pfa.transitions()[x];
        let mut next = vec![0.0; n];
        for j in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                acc += alpha[i] * t.get(i, j);
            }
            next[j] = acc;
        }
        alpha = expand_epsilon(&next, &view, max_hops)?;
        trace.push(alpha.clone());
    }
    Ok(trace)
}

/// Per-state marginal after the whole string.
pub fn forward_dp_marginals(pfa: &Pfa, string: &str) -> Result<ProbVector> {
    let last = forward_dp_trace(pfa, string)?
        .pop()
        .expect("trace holds the initial marginal");
    ProbVector::with_kind(last, Normalization::Subnormalized)
}

/// Acceptance probability by summing every explicit state path, ε-hops included.
pub fn enumerate_paths_probability(
    pfa: &Pfa,
    string: &str,
    budget: PathEnumerationBudget,
) -> Result<f64> {
    let n = pfa.n();
    let max_hops = budget.hops_for(n)?;
    let view = epsilon_view(pfa)?;
    let symbols = pfa.encode(string)?;
    let bound = (n as f64).powi(symbols.len() as i32);
    if matches!(view, EpsilonView::Absent) && bound > budget.max_paths as f64 {
        return Err(PfaError::BudgetExceeded(format!(
            "{n}^{} paths exceeds the budget of {}",
            symbols.len(),
            budget.max_paths
        )));
    }
    let mut walker = PathWalker {
        pfa,
        view,
        symbols,
        max_hops,
        max_paths: budget.max_paths,
        paths: 0,
        total: 0.0,
    };
    let initial = pfa.initial().as_slice();
    for q in 0..n {
        if initial[q] > 0.0 {
            walker.epsilon_phase(0, q, initial[q], 0)?;
        }
    }
    Ok(walker.total)
}

struct PathWalker<'a> {
    pfa: &'a Pfa,
    view: EpsilonView<'a>,
    symbols: Vec<usize>,
    max_hops: usize,
    max_paths: u64,
    paths: u64,
    total: f64,
}

impl PathWalker<'_> {
    /// At position `pos`, either stop ε-hopping (weight = rest mass) or take one more hop.
    fn epsilon_phase(&mut self, pos: usize, state: usize, prob: f64, hops: usize) -> Result<()> {
        let (e, rest) = match &self.view {
            EpsilonView::Absent => return self.symbol_phase(pos, state, prob),
            EpsilonView::RestMass { e, rest } => (*e, rest[state]),
        };
        if rest > 0.0 {
            self.symbol_phase(pos, state, prob * rest)?;
        }
        let n = self.pfa.n();
        for j in 0..n {
            let w = e.get(state, j);
            if w == 0.0 {
                continue;
            }
            if hops + 1 >= self.max_hops {
                return Err(PfaError::BudgetExceeded(format!(
                    "ε-paths longer than {} hops (cyclic ε-graph)",
                    self.max_hops
                )));
            }
            self.epsilon_phase(pos, j, prob * w, hops + 1)?;
        }
        Ok(())
    }

    fn symbol_phase(&mut self, pos: usize, state: usize, prob: f64) -> Result<()> {
        if pos == self.symbols.len() {
            self.paths += 1;
            if self.paths > self.max_paths {
                return Err(PfaError::BudgetExceeded(format!(
                    "more than {} paths",
                    self.max_paths
                )));
            }
            if self.pfa.accepting().contains(state) {
                self.total += prob;
            }
            return Ok(());
        }
        let t = &self.pfa.transitions()[self.symbols[pos]];
        for j in 0..self.pfa.n() {
            let w = t.get(state, j);
            if w > 0.0 {
                self.epsilon_phase(pos + 1, j, prob * w, 0)?;
            }
        }
        Ok(())
    }
}

/// Long-horizon power iteration `p ← p·E` used as the reference fixed point.
///
/// Returns the final iterate and whether the entrywise change fell to `tol`.
pub fn power_iteration_reference(
    start: &[f64],
    e: &StochasticMatrix,
    steps: usize,
    tol: f64,
) -> (Vec<f64>, bool) {
    let n = start.len();
    let mut p = start.to_vec();
    for _ in 0..steps {
        let mut next = vec![0.0; n];
        for i in 0..n {
            let pi = p[i];
            if pi == 0.0 {
                continue;
            }
            for j in 0..n {
                next[j] += pi * e.get(i, j);
            }
        }
        let mut change: f64 = 0.0;
        for j in 0..n {
            change = change.max((next[j] - p[j]).abs());
        }
        p = next;
        if change <= tol {
            return (p, true);
        }
    }
    (p, false)
}
