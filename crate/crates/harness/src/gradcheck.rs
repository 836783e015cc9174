use pfa_core::learner::{
    backward, finite_difference_grad, forward, loss_bce, loss_bce_grad, max_relative_error,
    HeadMode, LearnableModel, ModelOptions, GRAD_REL_FLOOR,
};
use pfa_core::stochastic::{seeded_rng, AcceptIndicator};
use pfa_core::PfaError;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const MAX_REL_ERROR: f64 = 1e-4;

/// One randomly drawn gradient-check configuration and its outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCase {
    pub index: usize,
    pub n: usize,
    pub symbols: usize,
    pub epsilon: bool,
    pub head: HeadMode,
    pub string: String,
    pub label: f64,
    pub parameters: usize,
    pub rel_error: f64,
}

impl GradCase {
    pub fn passed(&self) -> bool {
        self.rel_error < MAX_REL_ERROR
    }
}

/// Analytic versus central-difference BCE gradients over `cases` random configurations,
/// cycling through both heads with and without ε.
pub fn gradcheck_suite(cases: usize, seed: u64) -> Result<Vec<GradCase>, PfaError> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(cases);
    for index in 0..cases {
        let n = rng.random_range(2..=4);
        let symbols = rng.random_range(1..=3);
        let epsilon = index % 2 == 1;
        let head = if (index / 2) % 2 == 0 {
            HeadMode::RawClipped
        } else {
            HeadMode::AffineSigmoid
        };
        let alphabet: Vec<char> = ('a'..).take(symbols).collect();
        let len = rng.random_range(1..=5);
        let string: String = (0..len)
            .map(|_| alphabet[rng.random_range(0..symbols)])
            .collect();
        let label = f64::from(rng.random_range(0..=1u8));
        let mut bits: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if !bits.iter().any(|&b| b) {
            bits[n - 1] = true;
        }
        let model = LearnableModel::random(
            alphabet,
            AcceptIndicator::from_bits(bits),
            ModelOptions {
                head,
                epsilon,
                init_std: 1.0,
                ..ModelOptions::default()
            },
            &mut rng,
        )?;
        let (prob, tape) = forward(&model, &string)?;
        let analytic = backward(&model, &tape, loss_bce_grad(prob, label))?;
        let numeric = finite_difference_grad(&model, FD_STEP, |m| {
            Ok(loss_bce(m.predict(&string)?, label))
        })?;
        out.push(GradCase {
            index,
            n,
            symbols,
            epsilon,
            head,
            string,
            label,
            parameters: model.parameter_count(),
            rel_error: max_relative_error(&analytic.values, &numeric, GRAD_REL_FLOOR),
        });
    }
    Ok(out)
}
