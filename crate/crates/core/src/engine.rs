//! The automaton model and its exact simulation semantics.
//!
//! A [`Pfa`] advances a belief vector by `s · T^x` for each symbol and then
//! applies the probabilistic ε-closure selected by its [`ClosureMode`]. The
//! closure is also applied once to the initial distribution before the first
//! symbol.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, PfaError, Result};
use crate::stochastic::{
    power_sum, row_times, AcceptIndicator, Matrix, Normalization, ProbVector, StochasticKind,
    StochasticMatrix, SUM_TOL,
};

/// How ε-transitions are folded into the belief state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClosureMode {
    /// No ε-transitions.
    None,
    /// `p · Σ_{m<n} E^m`, renormalized back onto the simplex.
    PaperSum,
    /// ε-paths terminate at state `i` with its rest mass `1 − Σ_j E[i][j]`.
    RestMass,
    /// Iterates `p ← p · E` until the entrywise change drops to `tol`.
    FixedPoint,
}

impl ClosureMode {
    pub fn name(self) -> &'static str {
        match self {
            ClosureMode::None => "NONE",
            ClosureMode::PaperSum => "PAPER_SUM",
            ClosureMode::RestMass => "REST_MASS",
            ClosureMode::FixedPoint => "FIXED_POINT",
        }
    }
}

impl std::str::FromStr for ClosureMode {
    type Err = PfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "NONE" => Ok(ClosureMode::None),
            "PAPER_SUM" => Ok(ClosureMode::PaperSum),
            "REST_MASS" => Ok(ClosureMode::RestMass),
            "FIXED_POINT" => Ok(ClosureMode::FixedPoint),
            other => Err(PfaError::InvalidArgument(format!(
                "unknown closure mode '{other}'"
            ))),
        }
    }
}

/// Stopping rule for [`ClosureMode::FixedPoint`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedPointParams {
    pub max_iters: usize,
    pub tol: f64,
}

impl FixedPointParams {
    pub const DEFAULT_TOL: f64 = 1e-12;

    /// `tol = 1e-12`, `max_iters = 10·n`.
    pub fn default_for(n: usize) -> Self {
        Self {
            max_iters: 10 * n,
            tol: Self::DEFAULT_TOL,
        }
    }
}

/// Result of one closure application with its diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosureOutcome {
    pub vector: ProbVector,
    /// Number of `p · E` products taken (FIXED_POINT only; zero otherwise).
    pub iterations: usize,
    /// False only when FIXED_POINT ran out of iterations.
    pub converged: bool,
    pub renormalized: bool,
}

/// Applies the ε-closure of `p` under `e` in the given mode.
///
/// `tol` is the FIXED_POINT stopping threshold, or for REST_MASS the mass
/// deficit below which the result is renormalized.
pub fn closure_apply(
    p: &ProbVector,
    e: &StochasticMatrix,
    mode: ClosureMode,
    max_iters: usize,
    tol: f64,
) -> Result<ClosureOutcome> {
    check_dim(e.n(), p.len())?;
    let n = e.n();
    match mode {
        ClosureMode::None => Err(PfaError::ClosureModeMismatch {
            mode: mode.name(),
            reason: "an explicit closure application".into(),
        }),
        ClosureMode::PaperSum => {
            let mut acc = p.as_slice().to_vec();
            let mut frontier = acc.clone();
            for _ in 1..n {
                frontier = row_times(&frontier, e.as_matrix());
                acc.iter_mut().zip(&frontier).for_each(|(a, f)| *a += f);
            }
            let (vector, renormalized) = renormalize(acc, 0.0)?;
            Ok(ClosureOutcome {
                vector,
                iterations: 0,
                converged: true,
                renormalized,
            })
        }
        ClosureMode::RestMass => {
            require_kind(mode, e, StochasticKind::RowSubstochastic)?;
            let rest = e.rest_mass();
            let mut acc = p.as_slice().to_vec();
            let mut frontier = acc.clone();
            for _ in 1..n {
                frontier = row_times(&frontier, e.as_matrix());
                if frontier.iter().all(|&x| x == 0.0) {
                    break;
                }
                acc.iter_mut().zip(&frontier).for_each(|(a, f)| *a += f);
            }
            acc.iter_mut().zip(&rest).for_each(|(a, r)| *a *= r);
            let (vector, renormalized) = renormalize_if_short(acc, tol)?;
            Ok(ClosureOutcome {
                vector,
                iterations: 0,
                converged: true,
                renormalized,
            })
        }
        ClosureMode::FixedPoint => {
            require_kind(mode, e, StochasticKind::RowStochastic)?;
            let (vector, iterations, converged) = iterate_fixed_point(p, e, max_iters, tol);
            Ok(ClosureOutcome {
                vector,
                iterations,
                converged,
                renormalized: false,
            })
        }
    }
}

fn require_kind(mode: ClosureMode, e: &StochasticMatrix, kind: StochasticKind) -> Result<()> {
    if e.kind() == kind {
        Ok(())
    } else {
        Err(PfaError::ClosureModeMismatch {
            mode: mode.name(),
            reason: format!("an ε-matrix of kind {:?}", e.kind()),
        })
    }
}

fn iterate_fixed_point(
    p: &ProbVector,
    e: &StochasticMatrix,
    max_iters: usize,
    tol: f64,
) -> (ProbVector, usize, bool) {
    let mut current = p.as_slice().to_vec();
    let mut next = vec![0.0; current.len()];
    for iter in 0..max_iters {
        crate::stochastic::row_times_into(&current, e.as_matrix(), &mut next);
        let change = current
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut current, &mut next);
        if change <= tol {
            return (ProbVector::from_raw(current, p.kind()), iter + 1, true);
        }
    }
    (ProbVector::from_raw(current, p.kind()), max_iters, max_iters == 0)
}

/// Rescales to unit mass (always, when the sum differs from one).
fn renormalize(v: Vec<f64>, slack: f64) -> Result<(ProbVector, bool)> {
    let sum: f64 = v.iter().sum();
    if !(sum > 0.0 && sum.is_finite()) {
        return Err(PfaError::InvalidProbability(format!(
            "closure produced total mass {sum}"
        )));
    }
    if (sum - 1.0).abs() <= slack {
        return Ok((ProbVector::from_raw(v, Normalization::Normalized), false));
    }
    Ok((
        ProbVector::from_raw(v.into_iter().map(|x| x / sum).collect(), Normalization::Normalized),
        true,
    ))
}

/// Rescales only when the mass dropped below `1 − tol`.
fn renormalize_if_short(v: Vec<f64>, tol: f64) -> Result<(ProbVector, bool)> {
    let sum: f64 = v.iter().sum();
    if sum >= 1.0 - tol {
        return Ok((ProbVector::from_raw(v, Normalization::Normalized), false));
    }
    renormalize(v, 0.0)
}

/// Constructor input for [`Pfa::new`]. `transitions[k]` belongs to `alphabet[k]`.
#[derive(Debug, Clone)]
pub struct PfaParts {
    pub alphabet: Vec<char>,
    pub transitions: Vec<StochasticMatrix>,
    pub epsilon: Option<StochasticMatrix>,
    pub initial: ProbVector,
    pub accepting: AcceptIndicator,
    pub closure_mode: ClosureMode,
    /// Defaults to [`FixedPointParams::default_for`] when absent.
    pub fixed_point: Option<FixedPointParams>,
}

/// A probabilistic finite automaton with optional ε-transitions.
#[derive(Debug, Clone)]
pub struct Pfa {
    n: usize,
    alphabet: Vec<char>,
    transitions: Vec<StochasticMatrix>,
    epsilon: Option<StochasticMatrix>,
    initial: ProbVector,
    accepting: AcceptIndicator,
    accept_weights: Vec<f64>,
    closure_mode: ClosureMode,
    fixed_point: FixedPointParams,
    /// Linear part of the closure for PAPER_SUM / REST_MASS, compiled once.
    closure_matrix: Option<Matrix>,
}

impl PartialEq for Pfa {
    fn eq(&self, other: &Self) -> bool {
        self.alphabet == other.alphabet
            && self.transitions == other.transitions
            && self.epsilon == other.epsilon
            && self.initial == other.initial
            && self.accepting == other.accepting
            && self.closure_mode == other.closure_mode
            && self.fixed_point == other.fixed_point
    }
}

impl Pfa {
    pub fn new(parts: PfaParts) -> Result<Self> {
        let PfaParts {
            alphabet,
            transitions,
            epsilon,
            initial,
            accepting,
            closure_mode,
            fixed_point,
        } = parts;
        let n = initial.len();
        if n == 0 {
            return Err(PfaError::InvalidArgument("a PFA needs at least one state".into()));
        }
        if alphabet.is_empty() {
            return Err(PfaError::InvalidArgument("alphabet is empty".into()));
        }
        for (i, c) in alphabet.iter().enumerate() {
            if alphabet[..i].contains(c) {
                return Err(PfaError::InvalidArgument(format!("duplicate symbol '{c}'")));
            }
        }
        check_dim(alphabet.len(), transitions.len())?;
        for t in &transitions {
            check_dim(n, t.n())?;
            if t.kind() != StochasticKind::RowStochastic {
                return Err(PfaError::InvalidProbability(
                    "symbol transition matrices must be row-stochastic".into(),
                ));
            }
        }
        if initial.kind() != Normalization::Normalized {
            return Err(PfaError::InvalidProbability(
                "initial distribution must be normalized".into(),
            ));
        }
        check_dim(n, accepting.len())?;
        match (&epsilon, closure_mode) {
            (None, ClosureMode::None) => {}
            (None, mode) => {
                return Err(PfaError::ClosureModeMismatch {
                    mode: mode.name(),
                    reason: "a PFA without an ε-matrix".into(),
                })
            }
            (Some(_), ClosureMode::None) => {
                return Err(PfaError::ClosureModeMismatch {
                    mode: "NONE",
                    reason: "a PFA that has an ε-matrix".into(),
                })
            }
            (Some(e), mode) => {
                check_dim(n, e.n())?;
                match mode {
                    ClosureMode::RestMass => {
                        require_kind(mode, e, StochasticKind::RowSubstochastic)?
                    }
                    ClosureMode::FixedPoint => require_kind(mode, e, StochasticKind::RowStochastic)?,
                    _ => {}
                }
            }
        }
        let fixed_point = fixed_point.unwrap_or_else(|| FixedPointParams::default_for(n));
        let closure_matrix = match (&epsilon, closure_mode) {
            (Some(e), ClosureMode::PaperSum) => Some(power_sum(e, n)?),
            (Some(e), ClosureMode::RestMass) => {
                let mut c = power_sum(e, n)?;
                let rest = e.rest_mass();
                for i in 0..n {
                    for (x, r) in c.row_mut(i).iter_mut().zip(&rest) {
                        *x *= r;
                    }
                }
                Some(c)
            }
            _ => None,
        };
        let accept_weights = accepting.weights();
        Ok(Self {
            n,
            alphabet,
            transitions,
            epsilon,
            initial,
            accepting,
            accept_weights,
            closure_mode,
            fixed_point,
            closure_matrix,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn transitions(&self) -> &[StochasticMatrix] {
        &self.transitions
    }

    pub fn transition(&self, symbol: char) -> Result<&StochasticMatrix> {
        Ok(&self.transitions[self.symbol_index(symbol)?])
    }

    pub fn epsilon(&self) -> Option<&StochasticMatrix> {
        self.epsilon.as_ref()
    }

    pub fn initial(&self) -> &ProbVector {
        &self.initial
    }

    pub fn accepting(&self) -> &AcceptIndicator {
        &self.accepting
    }

    pub fn closure_mode(&self) -> ClosureMode {
        self.closure_mode
    }

    pub fn fixed_point_params(&self) -> FixedPointParams {
        self.fixed_point
    }

    /// The pre-renormalization closure operator for PAPER_SUM and REST_MASS.
    pub fn closure_matrix(&self) -> Option<&Matrix> {
        self.closure_matrix.as_ref()
    }

    pub fn symbol_index(&self, symbol: char) -> Result<usize> {
        self.alphabet
            .iter()
            .position(|&c| c == symbol)
            .ok_or(PfaError::UnknownSymbol(symbol))
    }

    pub fn encode(&self, string: &str) -> Result<Vec<usize>> {
        string.chars().map(|c| self.symbol_index(c)).collect()
    }

    /// Number of stored reals: `k·n² + n`, plus `n²` when an ε-matrix is present.
    pub fn parameter_count(&self) -> usize {
        let n2 = self.n * self.n;
        let eps = usize::from(self.epsilon.is_some());
        (self.alphabet.len() + eps) * n2 + self.n
    }

    /// The ε-closure of `p` under this automaton's mode (identity for NONE).
    pub fn closure(&self, p: &ProbVector) -> Result<ClosureOutcome> {
        check_dim(self.n, p.len())?;
        match (&self.epsilon, self.closure_mode) {
            (None, _) | (_, ClosureMode::None) => Ok(ClosureOutcome {
                vector: p.clone(),
                iterations: 0,
                converged: true,
                renormalized: false,
            }),
            (Some(e), ClosureMode::FixedPoint) => {
                let (vector, iterations, converged) =
                    iterate_fixed_point(p, e, self.fixed_point.max_iters, self.fixed_point.tol);
                Ok(ClosureOutcome {
                    vector,
                    iterations,
                    converged,
                    renormalized: false,
                })
            }
            (Some(_), mode) => {
                let c = self
                    .closure_matrix
                    .as_ref()
                    .expect("compiled closure for linear modes");
                let raw = row_times(p.as_slice(), c);
                let (vector, renormalized) = if mode == ClosureMode::PaperSum {
                    renormalize(raw, 0.0)?
                } else {
                    renormalize_if_short(raw, SUM_TOL)?
                };
                Ok(ClosureOutcome {
                    vector,
                    iterations: 0,
                    converged: true,
                    renormalized,
                })
            }
        }
    }

    fn step_index(&self, s: &ProbVector, symbol: usize) -> Result<ClosureOutcome> {
        let t = &self.transitions[symbol];
        let moved = ProbVector::from_raw(row_times(s.as_slice(), t.as_matrix()), s.kind());
        self.closure(&moved)
    }

    /// `s · T^symbol` followed by the closure.
    pub fn step(&self, s: &ProbVector, symbol: char) -> Result<ProbVector> {
        check_dim(self.n, s.len())?;
        let idx = self.symbol_index(symbol)?;
        Ok(self.step_index(s, idx)?.vector)
    }

    /// Every post-closure belief state, from `t = 0` through the end of the string.
    pub fn state_trace(&self, string: &str) -> Result<StateTrace> {
        let symbols = self.encode(string)?;
        let first = self.closure(&self.initial)?;
        let mut converged = first.converged;
        let mut states = Vec::with_capacity(symbols.len() + 1);
        states.push(first.vector);
        for &x in &symbols {
            let next = self.step_index(states.last().expect("non-empty trace"), x)?;
            converged &= next.converged;
            states.push(next.vector);
        }
        Ok(StateTrace { states, converged })
    }

    /// `⟨s_L, 1_F⟩` after consuming the whole string.
    pub fn accept_probability(&self, string: &str) -> Result<f64> {
        let symbols = self.encode(string)?;
        let mut s = self.closure(&self.initial)?.vector;
        for &x in &symbols {
            s = self.step_index(&s, x)?.vector;
        }
        Ok(s.dot(&self.accept_weights))
    }

    /// Thresholded decision: accept iff the acceptance probability strictly exceeds `tau`.
    pub fn recognize(&self, string: &str, tau: f64) -> Result<bool> {
        check_threshold(tau)?;
        Ok(self.accept_probability(string)? > tau)
    }
}

pub(crate) fn check_threshold(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(PfaError::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {tau}"
        )))
    }
}

/// Belief states `s_0 … s_L` recorded by [`Pfa::state_trace`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrace {
    pub states: Vec<ProbVector>,
    /// False if any FIXED_POINT closure along the way hit its iteration cap.
    pub converged: bool,
}

impl StateTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn last(&self) -> &ProbVector {
        self.states.last().expect("trace always holds the initial state")
    }
}

/// Two-state reference automaton used throughout the tests and docs.
///
/// `Σ = {a, b}`, start in state 0, accept in state 1, no ε-transitions,
/// `T^a = [[0.7, 0.3], [0.4, 0.6]]`, `T^b = [[0.1, 0.9], [0.5, 0.5]]`.
pub fn two_state_fixture() -> Pfa {
    Pfa::new(PfaParts {
        alphabet: vec!['a', 'b'],
        transitions: vec![
            StochasticMatrix::row_stochastic(&[vec![0.7, 0.3], vec![0.4, 0.6]]).unwrap(),
            StochasticMatrix::row_stochastic(&[vec![0.1, 0.9], vec![0.5, 0.5]]).unwrap(),
        ],
        epsilon: None,
        initial: ProbVector::one_hot(2, 0).unwrap(),
        accepting: AcceptIndicator::from_states(2, &[1]).unwrap(),
        closure_mode: ClosureMode::None,
        fixed_point: None,
    })
    .expect("fixture is valid")
}
