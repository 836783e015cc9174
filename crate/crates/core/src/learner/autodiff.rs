//! Reverse-mode gradients through the softmax projection, the unrolled
//! ε-closure and the per-symbol product chain.
//!
//! The forward pass folds the closure into one operator per symbol,
//! `M^x = T^x · P` with `P = (T^ε)^K`, and the start state into `s_0 = π₀ · P`.
//! The backward pass first accumulates `∂L/∂M^x` and `∂L/∂s_0` per example
//! ([`OperatorGrads`]), and only once per parameter snapshot pushes those
//! through `P`, the power chain and the row-softmax Jacobians.

use std::sync::Arc;

use super::{Gradients, HeadMode, LearnableModel, ParamLayout};
use crate::error::{PfaError, Result};
use crate::stochastic::{row_times, row_times_into, softmax_into, Matrix};

/// Projected matrices for one parameter snapshot.
#[derive(Debug, Clone)]
pub struct Projection {
    layout: ParamLayout,
    transitions: Vec<Matrix>,
    epsilon: Option<Matrix>,
    /// `E^0 … E^{K−1}`, kept for the power-chain backward pass.
    epsilon_powers: Vec<Matrix>,
    /// `P = E^K`, or `None` when the closure is the identity.
    closure: Option<Matrix>,
    operators: Vec<Matrix>,
    initial: Vec<f64>,
    start: Vec<f64>,
    accept: Vec<f64>,
    head: HeadMode,
    clip_eps: f64,
    affine: (f64, f64),
}

fn project_logits(n: usize, logits: &[f64]) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        softmax_into(&logits[i * n..(i + 1) * n], m.row_mut(i));
    }
    m
}

impl Projection {
    pub fn new(model: &LearnableModel) -> Result<Self> {
        let layout = model.layout();
        let n = model.n();
        let params = model.params();
        if params.iter().any(|p| !p.is_finite()) {
            return Err(PfaError::NonFinite("model parameters".into()));
        }
        let transitions: Vec<Matrix> = (0..layout.symbols)
            .map(|k| project_logits(n, &params[layout.symbol_range(k)]))
            .collect();
        let epsilon = layout
            .epsilon_range()
            .map(|r| project_logits(n, &params[r]));
        let unroll = model.closure_unroll();
        let mut epsilon_powers = Vec::new();
        let closure = match &epsilon {
            Some(e) if unroll > 0 => {
                let mut power = Matrix::identity(n);
                for _ in 0..unroll {
                    let next = power.matmul(e)?;
                    epsilon_powers.push(power);
                    power = next;
                }
                Some(power)
            }
            _ => None,
        };
        let operators = match &closure {
            Some(p) => transitions
                .iter()
                .map(|t| t.matmul(p))
                .collect::<Result<Vec<_>>>()?,
            None => transitions.clone(),
        };
        let initial = model.initial().as_slice().to_vec();
        let start = match &closure {
            Some(p) => row_times(&initial, p),
            None => initial.clone(),
        };
        Ok(Self {
            layout,
            transitions,
            epsilon,
            epsilon_powers,
            closure,
            operators,
            initial,
            start,
            accept: model.accepting().weights(),
            head: model.head().mode,
            clip_eps: model.head().clip_eps,
            affine: model.affine().unwrap_or((1.0, 0.0)),
        })
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn transitions(&self) -> &[Matrix] {
        &self.transitions
    }

    pub fn epsilon(&self) -> Option<&Matrix> {
        self.epsilon.as_ref()
    }

    /// The folded per-symbol operators `T^x · (T^ε)^K`.
    pub fn operators(&self) -> &[Matrix] {
        &self.operators
    }

    /// Runs the product chain for an encoded string.
    pub fn forward_encoded(self: &Arc<Self>, symbols: &[usize]) -> Result<Tape> {
        let n = self.layout.n;
        let mut states = Vec::with_capacity(symbols.len() + 1);
        states.push(self.start.clone());
        let mut next = vec![0.0; n];
        for &x in symbols {
            let op = self.operators.get(x).ok_or_else(|| {
                PfaError::InvalidArgument(format!("symbol index {x} out of range"))
            })?;
            row_times_into(states.last().expect("non-empty"), op, &mut next);
            states.push(next.clone());
        }
        let last = states.last().expect("non-empty");
        let raw: f64 = last.iter().zip(&self.accept).map(|(s, f)| s * f).sum();
        let (prob, pre_activation) = match self.head {
            HeadMode::RawClipped => (raw.clamp(self.clip_eps, 1.0 - self.clip_eps), raw),
            HeadMode::AffineSigmoid => {
                let z = self.affine.0 * raw + self.affine.1;
                (1.0 / (1.0 + (-z).exp()), z)
            }
        };
        Ok(Tape {
            projection: Arc::clone(self),
            symbols: symbols.to_vec(),
            states,
            raw,
            pre_activation,
            prob,
        })
    }

    /// Adds one example's contribution, scaled by the upstream gradient `d_prob`.
    pub fn accumulate(&self, tape: &Tape, d_prob: f64, grads: &mut OperatorGrads) {
        let n = self.layout.n;
        let d_raw = match self.head {
            HeadMode::RawClipped => {
                let inside = tape.raw > self.clip_eps && tape.raw < 1.0 - self.clip_eps;
                if inside {
                    d_prob
                } else {
                    0.0
                }
            }
            HeadMode::AffineSigmoid => {
                let dz = d_prob * tape.prob * (1.0 - tape.prob);
                grads.d_affine.0 += dz * tape.raw;
                grads.d_affine.1 += dz;
                dz * self.affine.0
            }
        };
        if d_raw == 0.0 {
            return;
        }
        let mut g: Vec<f64> = self.accept.iter().map(|f| f * d_raw).collect();
        let mut g_prev = vec![0.0; n];
        for t in (1..=tape.symbols.len()).rev() {
            let x = tape.symbols[t - 1];
            let s_prev = &tape.states[t - 1];
            let d_op = &mut grads.d_operators[x];
            for (i, &si) in s_prev.iter().enumerate() {
                if si == 0.0 {
                    continue;
                }
                for (d, &gj) in d_op.row_mut(i).iter_mut().zip(&g) {
                    *d += si * gj;
                }
            }
            let op = &self.operators[x];
            for (i, gp) in g_prev.iter_mut().enumerate() {
                *gp = op.row(i).iter().zip(&g).map(|(m, gj)| m * gj).sum();
            }
            std::mem::swap(&mut g, &mut g_prev);
        }
        grads.d_start.iter_mut().zip(&g).for_each(|(d, gi)| *d += gi);
        grads.examples += 1;
    }

    /// Pushes accumulated operator gradients down to logit space.
    pub fn finish(&self, grads: &OperatorGrads) -> Result<Gradients> {
        let layout = self.layout;
        let n = layout.n;
        let mut out = Gradients::zeros(layout);
        let d_transitions: Vec<Matrix> = match &self.closure {
            Some(p) => grads
                .d_operators
                .iter()
                .map(|d| d.matmul_transpose_rhs(p))
                .collect::<Result<_>>()?,
            None => grads.d_operators.clone(),
        };
        for (k, (t, dt)) in self.transitions.iter().zip(&d_transitions).enumerate() {
            softmax_backward(t, dt, &mut out.values[layout.symbol_range(k)]);
        }
        if let (Some(e), Some(_), Some(range)) =
            (&self.epsilon, &self.closure, layout.epsilon_range())
        {
            // dP = Σ_x (T^x)ᵀ dM^x + π₀ᵀ d_s0
            let mut d_closure = Matrix::zeros(n, n);
            for (t, d) in self.transitions.iter().zip(&grads.d_operators) {
                d_closure.add_assign(&t.transpose_matmul(d)?)?;
            }
            for (i, &pi) in self.initial.iter().enumerate() {
                if pi == 0.0 {
                    continue;
                }
                for (dp, &ds) in d_closure.row_mut(i).iter_mut().zip(&grads.d_start) {
                    *dp += pi * ds;
                }
            }
            // P_k = P_{k−1} E: dE += P_{k−1}ᵀ G_k, G_{k−1} = G_k Eᵀ.
            let mut d_eps = Matrix::zeros(n, n);
            let mut upstream = d_closure;
            for power in self.epsilon_powers.iter().rev() {
                d_eps.add_assign(&power.transpose_matmul(&upstream)?)?;
                upstream = upstream.matmul_transpose_rhs(e)?;
            }
            softmax_backward(e, &d_eps, &mut out.values[range]);
        }
        if let Some(off) = layout.affine_offset() {
            out.values[off] = grads.d_affine.0;
            out.values[off + 1] = grads.d_affine.1;
        }
        Ok(out)
    }
}

/// Row-softmax Jacobian: `∂L/∂z_ij = T_ij (∂L/∂T_ij − Σ_k T_ik ∂L/∂T_ik)`.
fn softmax_backward(t: &Matrix, d_t: &Matrix, out: &mut [f64]) {
    let n = t.cols();
    for i in 0..t.rows() {
        let row = t.row(i);
        let d_row = d_t.row(i);
        let inner: f64 = row.iter().zip(d_row).map(|(a, b)| a * b).sum();
        for j in 0..n {
            out[i * n + j] = row[j] * (d_row[j] - inner);
        }
    }
}

/// Gradients with respect to the folded operators, summed over examples.
#[derive(Debug, Clone)]
pub struct OperatorGrads {
    pub d_operators: Vec<Matrix>,
    pub d_start: Vec<f64>,
    pub d_affine: (f64, f64),
    pub examples: usize,
}

impl OperatorGrads {
    pub fn zeros(layout: ParamLayout) -> Self {
        Self {
            d_operators: vec![Matrix::zeros(layout.n, layout.n); layout.symbols],
            d_start: vec![0.0; layout.n],
            d_affine: (0.0, 0.0),
            examples: 0,
        }
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    projection: Arc<Projection>,
    symbols: Vec<usize>,
    states: Vec<Vec<f64>>,
    raw: f64,
    pre_activation: f64,
    prob: f64,
}

impl Tape {
    pub fn prob(&self) -> f64 {
        self.prob
    }

    /// `⟨s_L, 1_F⟩` before the head.
    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn pre_activation(&self) -> f64 {
        self.pre_activation
    }

    /// Belief states `s_0 … s_L` (each after its closure).
    pub fn states(&self) -> &[Vec<f64>] {
        &self.states
    }

    pub fn projection(&self) -> &Arc<Projection> {
        &self.projection
    }
}

/// Head output and tape for one string.
pub fn forward(model: &LearnableModel, string: &str) -> Result<(f64, Tape)> {
    let symbols = model.encode(string)?;
    let projection = Arc::new(Projection::new(model)?);
    let tape = projection.forward_encoded(&symbols)?;
    Ok((tape.prob, tape))
}

/// Exact gradient of `d_prob · output` with respect to every model parameter.
pub fn backward(model: &LearnableModel, tape: &Tape, d_prob: f64) -> Result<Gradients> {
    let projection = &tape.projection;
    if projection.layout != model.layout() {
        return Err(PfaError::TapeMismatch(format!(
            "tape layout {:?} vs model layout {:?}",
            projection.layout,
            model.layout()
        )));
    }
    if !d_prob.is_finite() {
        return Err(PfaError::NonFinite("upstream gradient".into()));
    }
    let mut grads = OperatorGrads::zeros(projection.layout);
    projection.accumulate(tape, d_prob, &mut grads);
    projection.finish(&grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{ModelOptions, LearnableModel};
    use crate::stochastic::{seeded_rng, AcceptIndicator};

    fn model(seed: u64, head: HeadMode) -> LearnableModel {
        LearnableModel::random(
            vec!['a', 'b'],
            AcceptIndicator::from_states(3, &[0, 2]).unwrap(),
            ModelOptions {
                head,
                init_std: 1.0,
                ..ModelOptions::default()
            },
            &mut seeded_rng(seed),
        )
        .unwrap()
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for head in [HeadMode::RawClipped, HeadMode::AffineSigmoid] {
            let m = model(1, head);
            let (_, tape) = forward(&m, "abba").unwrap();
            let g = backward(&m, &tape, 0.0).unwrap();
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn shifting_a_logit_row_changes_nothing() {
        let m = model(2, HeadMode::AffineSigmoid);
        let mut shifted = m.clone();
        let n = m.n();
        for k in 0..3 {
            let row = k * n * n + n;
            for j in 0..n {
                shifted.params_mut()[row + j] += 3.7;
            }
        }
        for s in ["a", "ba", "abbab"] {
            let (p1, t1) = forward(&m, s).unwrap();
            let (p2, t2) = forward(&shifted, s).unwrap();
            assert!((p1 - p2).abs() < 1e-12);
            let g1 = backward(&m, &t1, 1.0).unwrap();
            let g2 = backward(&shifted, &t2, 1.0).unwrap();
            for (a, b) in g1.values.iter().zip(&g2.values) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn intermediate_states_stay_on_simplex() {
        let m = model(3, HeadMode::RawClipped);
        let (_, tape) = forward(&m, "abbbaabab").unwrap();
        for s in tape.states() {
            assert!(crate::stochastic::is_simplex_point(s));
        }
    }

    #[test]
    fn mismatched_tape_is_rejected() {
        let m = model(4, HeadMode::RawClipped);
        let other = model(4, HeadMode::AffineSigmoid);
        let (_, tape) = forward(&m, "ab").unwrap();
        assert!(matches!(
            backward(&other, &tape, 1.0),
            Err(PfaError::TapeMismatch(_))
        ));
    }

    #[test]
    fn unknown_symbol_is_rejected() {
        let m = model(5, HeadMode::RawClipped);
        assert!(matches!(forward(&m, "abc"), Err(PfaError::UnknownSymbol('c'))));
    }
}
