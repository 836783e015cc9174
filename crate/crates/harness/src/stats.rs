use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::HarnessError;

/// Sample summary with a two-sided Student-t interval for the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (ddof = 1).
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Upper `p`-quantile of Student's t with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> Result<f64, HarnessError> {
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| HarnessError::Stats(format!("t distribution with df={df}: {e}")))?;
    Ok(dist.inverse_cdf(p))
}

pub fn student_t_ci(samples: &[f64], confidence: f64) -> Result<Summary, HarnessError> {
    let k = samples.len();
    if k < 2 {
        return Err(HarnessError::Stats(format!(
            "confidence interval needs at least 2 samples, got {k}"
        )));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(HarnessError::Stats(format!(
            "confidence {confidence} outside (0, 1)"
        )));
    }
    let kf = k as f64;
    let mean = samples.iter().sum::<f64>() / kf;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (kf - 1.0);
    let std = var.sqrt();
    let half = if std == 0.0 {
        0.0
    } else {
        t_quantile((1.0 + confidence) / 2.0, kf - 1.0)? * std / kf.sqrt()
    };
    Ok(Summary {
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_match_reference_table() {
        let table = [
            (1.0, 12.706204736432095),
            (2.0, 4.302652729696142),
            (3.0, 3.182446305284263),
            (4.0, 2.7764451051977987),
            (5.0, 2.570581835636314),
            (10.0, 2.2281388519649385),
            (29.0, 2.045229642132703),
            (30.0, 2.0422724563012373),
        ];
        for (df, expected) in table {
            let q = t_quantile(0.975, df).unwrap();
            assert!((q - expected).abs() < 1e-6, "df={df}: {q}");
        }
    }

    #[test]
    fn constant_samples_have_degenerate_interval() {
        let s = student_t_ci(&[1.0; 5], 0.95).unwrap();
        assert_eq!((s.mean, s.std, s.ci_low, s.ci_high), (1.0, 0.0, 1.0, 1.0));
    }

    #[test]
    fn interval_from_mean_and_std() {
        // Five samples with mean 0.9976 and sample std 0.0013.
        let d = 0.0013 * (4.0f64 / 2.0).sqrt();
        let samples = [0.9976 - d, 0.9976, 0.9976, 0.9976, 0.9976 + d];
        let s = student_t_ci(&samples, 0.95).unwrap();
        assert!((s.mean - 0.9976).abs() < 1e-12);
        assert!((s.std - 0.0013).abs() < 1e-12);
        let half = 2.776_445_105_197_799 * 0.0013 / 5f64.sqrt();
        assert!((s.ci_high - s.mean - half).abs() < 1e-12);
        // The published interval was built from unrounded statistics.
        assert!((s.ci_low - 0.9959).abs() < 2e-4);
        assert!((s.ci_high - 0.9993).abs() < 2e-4);
        assert!(((s.mean - s.ci_low) - (s.ci_high - s.mean)).abs() < 1e-12);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(student_t_ci(&[0.5], 0.95).is_err());
        assert!(student_t_ci(&[], 0.95).is_err());
    }
}
