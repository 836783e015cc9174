//! Trainable symbolic simulator.
//!
//! Every transition matrix is the row-softmax of an unconstrained logit
//! matrix, so any parameter vector projects to a valid automaton. Gradients
//! are computed by hand-written reverse accumulation ([`backward`]) and
//! checked against central differences ([`finite_difference_grad`]).

mod adam;
mod autodiff;
mod gradcheck;
mod train;

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamParams, AdamState};
pub use autodiff::{backward, forward, OperatorGrads, Projection, Tape};
pub use gradcheck::{finite_difference_grad, max_relative_error, output_gradients, GRAD_REL_FLOOR};
pub use train::{
    evaluate_accuracy, loss_bce, loss_bce_grad, train, LabelMode, LossLog, LossRecord, Split,
    TrainConfig,
};

use crate::engine::{ClosureMode, FixedPointParams, Pfa, PfaParts};
use crate::error::{PfaError, Result};
use crate::format::{parse_symbol, PfaDocument};
use crate::stochastic::{softmax_rows, AcceptIndicator, Matrix, ProbVector, StochasticKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum HeadMode {
    /// `⟨s_L, 1_F⟩` clipped to `[clip_eps, 1 − clip_eps]`.
    RawClipped,
    /// `σ(a·⟨s_L, 1_F⟩ + b)` with trainable `a`, `b`.
    AffineSigmoid,
}

impl std::str::FromStr for HeadMode {
    type Err = PfaError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "RAW_CLIPPED" | "RAW" => Ok(HeadMode::RawClipped),
            "AFFINE_SIGMOID" | "SIGMOID" => Ok(HeadMode::AffineSigmoid),
            other => Err(PfaError::InvalidArgument(format!("unknown head '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputHead {
    pub mode: HeadMode,
    pub clip_eps: f64,
}

impl OutputHead {
    pub const DEFAULT_CLIP: f64 = 1e-6;
    /// Affine initialization; maps a raw score of 0.5 to an output of 0.5.
    pub const AFFINE_INIT: (f64, f64) = (8.0, -4.0);
}

/// Where each parameter group lives inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub n: usize,
    pub symbols: usize,
    pub epsilon: bool,
    pub affine: bool,
}

impl ParamLayout {
    pub fn len(&self) -> usize {
        let n2 = self.n * self.n;
        (self.symbols + usize::from(self.epsilon)) * n2 + if self.affine { 2 } else { 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn symbol_range(&self, k: usize) -> std::ops::Range<usize> {
        let n2 = self.n * self.n;
        k * n2..(k + 1) * n2
    }

    pub fn epsilon_range(&self) -> Option<std::ops::Range<usize>> {
        self.epsilon.then(|| self.symbol_range(self.symbols))
    }

    /// Index of `a`; `b` follows it.
    pub fn affine_offset(&self) -> Option<usize> {
        self.affine.then(|| self.len() - 2)
    }
}

/// Gradient vector laid out like [`LearnableModel::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layout: ParamLayout,
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            layout,
            values: vec![0.0; layout.len()],
        }
    }

    pub fn symbol(&self, k: usize) -> &[f64] {
        &self.values[self.layout.symbol_range(k)]
    }

    pub fn epsilon(&self) -> Option<&[f64]> {
        self.layout.epsilon_range().map(|r| &self.values[r])
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Construction options for [`LearnableModel::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub head: HeadMode,
    pub clip_eps: f64,
    pub epsilon: bool,
    /// ε-applications after each symbol; `None` means `n`.
    pub closure_unroll: Option<usize>,
    /// Standard deviation of the i.i.d. normal logit initialization.
    pub init_std: f64,
    /// Initial diagonal weight of the unrolled closure `(T^ε)^K`. The ε-logit
    /// diagonal is offset so that each state keeps about this much of its
    /// own mass after `K` applications. `None` leaves ε-logits unbiased.
    pub epsilon_self_retention: Option<f64>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            head: HeadMode::RawClipped,
            clip_eps: OutputHead::DEFAULT_CLIP,
            epsilon: true,
            closure_unroll: None,
            init_std: 0.1,
            epsilon_self_retention: Some(0.9),
        }
    }
}

/// Softmax-parameterized automaton with fixed start distribution and accepting set.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableModel {
    alphabet: Vec<char>,
    n: usize,
    params: Vec<f64>,
    layout: ParamLayout,
    head: OutputHead,
    accepting: AcceptIndicator,
    initial: ProbVector,
    closure_unroll: usize,
}

impl LearnableModel {
    /// Random initialization with a one-hot start at state 0.
    pub fn random<R: Rng + ?Sized>(
        alphabet: Vec<char>,
        accepting: AcceptIndicator,
        options: ModelOptions,
        rng: &mut R,
    ) -> Result<Self> {
        let n = accepting.len();
        if n == 0 || alphabet.is_empty() {
            return Err(PfaError::InvalidArgument(
                "model needs at least one state and one symbol".into(),
            ));
        }
        let layout = ParamLayout {
            n,
            symbols: alphabet.len(),
            epsilon: options.epsilon,
            affine: options.head == HeadMode::AffineSigmoid,
        };
        let closure_unroll = options.closure_unroll.unwrap_or(n);
        let normal = Normal::new(0.0, options.init_std)
            .map_err(|e| PfaError::InvalidArgument(format!("init_std: {e}")))?;
        let mut params: Vec<f64> = (0..layout.len()).map(|_| normal.sample(rng)).collect();
        if let (Some(range), Some(retention)) =
            (layout.epsilon_range(), options.epsilon_self_retention)
        {
            let bias = epsilon_diagonal_bias(n, closure_unroll, retention)?;
            let eps = &mut params[range];
            for i in 0..n {
                eps[i * n + i] += bias;
            }
        }
        if let Some(off) = layout.affine_offset() {
            params[off] = OutputHead::AFFINE_INIT.0;
            params[off + 1] = OutputHead::AFFINE_INIT.1;
        }
        Self::from_parts(
            alphabet,
            params,
            layout,
            OutputHead {
                mode: options.head,
                clip_eps: options.clip_eps,
            },
            accepting,
            ProbVector::one_hot(n, 0)?,
            closure_unroll,
        )
    }

    fn from_parts(
        alphabet: Vec<char>,
        params: Vec<f64>,
        layout: ParamLayout,
        head: OutputHead,
        accepting: AcceptIndicator,
        initial: ProbVector,
        closure_unroll: usize,
    ) -> Result<Self> {
        if params.len() != layout.len() {
            return Err(PfaError::DimensionMismatch {
                expected: layout.len(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PfaError::NonFinite("model parameters".into()));
        }
        if !(head.clip_eps > 0.0 && head.clip_eps < 0.5) {
            return Err(PfaError::InvalidArgument(format!(
                "clip_eps {} outside (0, 0.5)",
                head.clip_eps
            )));
        }
        if initial.len() != layout.n || accepting.len() != layout.n {
            return Err(PfaError::DimensionMismatch {
                expected: layout.n,
                found: initial.len(),
            });
        }
        Ok(Self {
            alphabet,
            n: layout.n,
            params,
            layout,
            head,
            accepting,
            initial,
            closure_unroll,
        })
    }

    /// Embeds a fixed automaton by taking logs of its matrix entries.
    ///
    /// The ε-matrix, if any, must be row-stochastic under FIXED_POINT; its
    /// iteration cap becomes `closure_unroll`.
    pub fn from_pfa(pfa: &Pfa, head: HeadMode) -> Result<Self> {
        let n = pfa.n();
        let closure_unroll = match (pfa.epsilon(), pfa.closure_mode()) {
            (None, _) => 0,
            (Some(_), ClosureMode::FixedPoint) => pfa.fixed_point_params().max_iters,
            (Some(_), mode) => {
                return Err(PfaError::ClosureModeMismatch {
                    mode: mode.name(),
                    reason: "embedding into a learnable model".into(),
                })
            }
        };
        let layout = ParamLayout {
            n,
            symbols: pfa.alphabet().len(),
            epsilon: pfa.epsilon().is_some(),
            affine: head == HeadMode::AffineSigmoid,
        };
        let log = |x: f64| x.max(f64::MIN_POSITIVE).ln();
        let mut params = Vec::with_capacity(layout.len());
        for t in pfa.transitions() {
            params.extend(t.as_matrix().as_slice().iter().map(|&x| log(x)));
        }
        if let Some(e) = pfa.epsilon() {
            params.extend(e.as_matrix().as_slice().iter().map(|&x| log(x)));
        }
        if layout.affine {
            params.extend([OutputHead::AFFINE_INIT.0, OutputHead::AFFINE_INIT.1]);
        }
        Self::from_parts(
            pfa.alphabet().to_vec(),
            params,
            layout,
            OutputHead {
                mode: head,
                clip_eps: OutputHead::DEFAULT_CLIP,
            },
            pfa.accepting().clone(),
            pfa.initial().clone(),
            closure_unroll,
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn accepting(&self) -> &AcceptIndicator {
        &self.accepting
    }

    pub fn initial(&self) -> &ProbVector {
        &self.initial
    }

    pub fn closure_unroll(&self) -> usize {
        self.closure_unroll
    }

    pub fn has_epsilon(&self) -> bool {
        self.layout.epsilon
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(k + [ε])·n²`, plus 2 for the affine head.
    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn symbol_logits(&self, k: usize) -> Result<Matrix> {
        Matrix::from_vec(self.n, self.n, self.params[self.layout.symbol_range(k)].to_vec())
    }

    pub fn epsilon_logits(&self) -> Option<Matrix> {
        self.layout.epsilon_range().map(|r| {
            Matrix::from_vec(self.n, self.n, self.params[r].to_vec()).expect("n×n slice")
        })
    }

    pub fn affine(&self) -> Option<(f64, f64)> {
        self.layout
            .affine_offset()
            .map(|o| (self.params[o], self.params[o + 1]))
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

    /// Head output for one string.
    pub fn predict(&self, string: &str) -> Result<f64> {
        Ok(forward(self, string)?.0)
    }
}

/// Diagonal logit offset giving self-probability `retention^(1/K)` per application.
fn epsilon_diagonal_bias(n: usize, unroll: usize, retention: f64) -> Result<f64> {
    if !(retention > 0.0 && retention < 1.0) {
        return Err(PfaError::InvalidArgument(format!(
            "epsilon_self_retention {retention} outside (0, 1)"
        )));
    }
    if n < 2 || unroll == 0 {
        return Ok(0.0);
    }
    let self_prob = retention.powf(1.0 / unroll as f64);
    Ok((self_prob * (n - 1) as f64 / (1.0 - self_prob)).ln())
}

/// Projects every logit matrix and returns the automaton the model computes.
///
/// The unrolled closure becomes a FIXED_POINT ε-matrix with `tol = 0`, which
/// applies exactly `closure_unroll` products (stopping early only at an exact
/// fixed point, where further products change nothing).
pub fn extract_pfa(model: &LearnableModel) -> Result<Pfa> {
    let transitions = (0..model.alphabet.len())
        .map(|k| softmax_rows(&model.symbol_logits(k)?))
        .collect::<Result<Vec<_>>>()?;
    let epsilon = match model.epsilon_logits() {
        Some(logits) if model.closure_unroll > 0 => Some(softmax_rows(&logits)?),
        _ => None,
    };
    let closure_mode = if epsilon.is_some() {
        ClosureMode::FixedPoint
    } else {
        ClosureMode::None
    };
    debug_assert!(epsilon
        .as_ref()
        .is_none_or(|e| e.kind() == StochasticKind::RowStochastic));
    Pfa::new(PfaParts {
        alphabet: model.alphabet.clone(),
        transitions,
        epsilon,
        initial: model.initial.clone(),
        accepting: model.accepting.clone(),
        closure_mode,
        fixed_point: Some(FixedPointParams {
            max_iters: model.closure_unroll,
            tol: 0.0,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogitsDocument {
    symbols: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    epsilon: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadDocument {
    mode: HeadMode,
    clip_eps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
}

/// Trained-model file: the extracted automaton plus raw logits and head parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(flatten)]
    pfa: PfaDocument,
    logits: LogitsDocument,
    head: HeadDocument,
    closure_unroll: usize,
}

impl LearnableModel {
    pub fn to_document(&self) -> Result<ModelDocument> {
        let pfa = extract_pfa(self)?.to_document();
        let symbols = self
            .alphabet
            .iter()
            .enumerate()
            .map(|(k, c)| Ok((c.to_string(), self.symbol_logits(k)?.to_rows())))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let (a, b) = self.affine().map_or((None, None), |(a, b)| (Some(a), Some(b)));
        Ok(ModelDocument {
            pfa,
            logits: LogitsDocument {
                symbols,
                epsilon: self.epsilon_logits().map(|m| m.to_rows()),
            },
            head: HeadDocument {
                mode: self.head.mode,
                clip_eps: self.head.clip_eps,
                a,
                b,
            },
            closure_unroll: self.closure_unroll,
        })
    }

    pub fn from_document(doc: ModelDocument) -> Result<Self> {
        let n = doc.pfa.n;
        let alphabet = doc
            .pfa
            .alphabet
            .iter()
            .map(|s| parse_symbol(s))
            .collect::<Result<Vec<_>>>()?;
        let layout = ParamLayout {
            n,
            symbols: alphabet.len(),
            epsilon: doc.logits.epsilon.is_some(),
            affine: doc.head.mode == HeadMode::AffineSigmoid,
        };
        let mut params = Vec::with_capacity(layout.len());
        let mut push_rows = |rows: &Vec<Vec<f64>>, what: &str| -> Result<()> {
            if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                return Err(PfaError::Format(format!("{what} logits must be {n}x{n}")));
            }
            rows.iter().for_each(|r| params.extend_from_slice(r));
            Ok(())
        };
        for s in &doc.pfa.alphabet {
            let rows = doc
                .logits
                .symbols
                .get(s)
                .ok_or_else(|| PfaError::Format(format!("no logits for '{s}'")))?;
            push_rows(rows, s)?;
        }
        if let Some(rows) = &doc.logits.epsilon {
            push_rows(rows, "epsilon")?;
        }
        if layout.affine {
            let (a, b) = doc
                .head
                .a
                .zip(doc.head.b)
                .ok_or_else(|| PfaError::Format("affine head needs a and b".into()))?;
            params.extend([a, b]);
        }
        Self::from_parts(
            alphabet,
            params,
            layout,
            OutputHead {
                mode: doc.head.mode,
                clip_eps: doc.head.clip_eps,
            },
            AcceptIndicator::from_states(n, &doc.pfa.accepting)?,
            ProbVector::new(doc.pfa.initial)?,
            doc.closure_unroll,
        )
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document()?)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(serde_json::from_str(text)?)
    }
}
