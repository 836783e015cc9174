use super::{backward, forward, Gradients, LearnableModel};
use crate::error::Result;

/// Denominator floor for relative errors between tiny gradients.
pub const GRAD_REL_FLOOR: f64 = 1e-5;

/// Central-difference gradient of `f(model)` with step `h` per parameter.
pub fn finite_difference_grad<F>(model: &LearnableModel, h: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&LearnableModel) -> Result<f64>,
{
    let mut probe = model.clone();
    let mut out = Vec::with_capacity(model.parameter_count());
    for i in 0..model.parameter_count() {
        let x = model.params()[i];
        probe.params_mut()[i] = x + h;
        let up = f(&probe)?;
        probe.params_mut()[i] = x - h;
        let down = f(&probe)?;
        probe.params_mut()[i] = x;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// `max_i |a_i − f_i| / max(|a_i|, |f_i|, floor)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Analytic and numeric gradients of the head output on one string.
pub fn output_gradients(model: &LearnableModel, string: &str, h: f64) -> Result<(Gradients, Vec<f64>)> {
    let (_, tape) = forward(model, string)?;
    let analytic = backward(model, &tape, 1.0)?;
    let numeric = finite_difference_grad(model, h, |m| m.predict(string))?;
    Ok((analytic, numeric))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{HeadMode, ModelOptions};
    use crate::stochastic::{seeded_rng, AcceptIndicator};

    #[test]
    fn relative_error_uses_floor() {
        assert_eq!(max_relative_error(&[1e-9], &[0.0], 1e-5), 1e-4);
        assert!((max_relative_error(&[2.0, 1.0], &[2.0, 1.1], 1e-5) - 0.1 / 1.1).abs() < 1e-15);
    }

    #[test]
    fn analytic_matches_numeric_on_small_models() {
        for (seed, head) in [(0, HeadMode::RawClipped), (1, HeadMode::AffineSigmoid)] {
            let model = LearnableModel::random(
                vec!['a', 'b', 'c'],
                AcceptIndicator::from_states(4, &[1, 3]).unwrap(),
                ModelOptions {
                    head,
                    init_std: 1.0,
                    ..ModelOptions::default()
                },
                &mut seeded_rng(seed),
            )
            .unwrap();
            let (a, f) = output_gradients(&model, "abcab", 1e-6).unwrap();
            let err = max_relative_error(&a.values, &f, GRAD_REL_FLOOR);
            assert!(err < 1e-4, "{head:?}: {err}");
        }
    }
}
