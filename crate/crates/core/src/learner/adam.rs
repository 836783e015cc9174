use crate::error::{PfaError, Result};

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: AdamParams,
) -> Result<()> {
    let len = params.len();
    if grads.len() != len || state.m.len() != len || state.v.len() != len {
        return Err(PfaError::DimensionMismatch {
            expected: len,
            found: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(PfaError::NonFinite(format!("gradient entry {i}")));
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powf(state.t as f64);
    let c2 = 1.0 - cfg.beta2.powf(state.t as f64);
    for i in 0..len {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const CFG: AdamParams = AdamParams {
        lr: 0.1,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[3.0, -0.01, 0.0], &mut s, CFG).unwrap();
        assert_eq!(s.t, 1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-5);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut p = vec![5.0, -3.0];
        let mut s = AdamState::new(2);
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam_step(&mut p, &g, &mut s, CFG).unwrap();
        }
        assert!(p.iter().all(|x| x.abs() < 1e-2));
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let mut p = vec![0.0; 2];
        let mut s = AdamState::new(2);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut s, CFG).is_err());
        assert_eq!(s.t, 0);
        assert_eq!(p, vec![0.0; 2]);
    }
}
