//! Estimation-accuracy metrics: prediction error, error-estimation rate, and
//! range coverage.

use crate::nn::{Loss, Tensor};

use super::{EstimatorError, RatePrediction};

/// Floor for the prediction magnitude in the error denominator, in the
/// model's normalized units. Keeps early-training predictions near zero from
/// blowing the loss up.
pub const ANPE_FLOOR: f64 = 1e-6;

/// Absolute normalized prediction error: `|actual - predicted| / |predicted|`
/// with the denominator floored at [`ANPE_FLOOR`].
pub fn anpe(actual: f64, predicted: f64) -> f64 {
    (actual - predicted).abs() / predicted.abs().max(ANPE_FLOOR)
}

/// d(anpe)/d(predicted), with `sign(0) = 0` at the kinks and no derivative
/// through the denominator while it sits on the floor.
pub(crate) fn anpe_grad(actual: f64, predicted: f64) -> f64 {
    fn sign(x: f64) -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.signum()
        }
    }
    let m = predicted.abs().max(ANPE_FLOOR);
    let num = sign(predicted - actual) / m;
    if predicted.abs() > ANPE_FLOOR {
        num - (actual - predicted).abs() * sign(predicted) / (m * m)
    } else {
        num
    }
}

/// Error-estimation rate: one minus the RMSE between estimated and actual
/// absolute errors. 1.0 is perfect; large misestimates drive it negative.
pub fn eer(estimated_errors: &[f64], actual_errors: &[f64]) -> Result<f64, EstimatorError> {
    if estimated_errors.len() != actual_errors.len() {
        return Err(EstimatorError::LengthMismatch {
            left: estimated_errors.len(),
            right: actual_errors.len(),
        });
    }
    if estimated_errors.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let mse: f64 = estimated_errors
        .iter()
        .zip(actual_errors)
        .map(|(e, a)| (e - a) * (e - a))
        .sum::<f64>()
        / estimated_errors.len() as f64;
    Ok(1.0 - mse.sqrt())
}

/// Fraction of actuals falling inside the closed range
/// `[baseline - half_width, baseline + half_width]`.
pub fn coverage_rate(
    predictions: &[RatePrediction],
    actuals: &[f64],
) -> Result<f64, EstimatorError> {
    if predictions.len() != actuals.len() {
        return Err(EstimatorError::LengthMismatch {
            left: predictions.len(),
            right: actuals.len(),
        });
    }
    if predictions.is_empty() {
        return Err(EstimatorError::EmptyDataset);
    }
    let covered = predictions
        .iter()
        .zip(actuals)
        .filter(|(p, &a)| a >= p.min_kbps() && a <= p.max_kbps())
        .count();
    Ok(covered as f64 / predictions.len() as f64)
}

/// [`anpe`] as a loss over a scalar network output in normalized units.
pub struct AnpeLoss {
    pub actual: f64,
}

impl Loss for AnpeLoss {
    fn value(&self, output: &Tensor) -> f64 {
        anpe(self.actual, output.data()[0])
    }

    fn grad(&self, output: &Tensor) -> Tensor {
        Tensor::scalar(anpe_grad(self.actual, output.data()[0]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anpe_examples() {
        assert_eq!(anpe(3.0, 2.0), 0.5);
        assert_eq!(anpe(7.25, 7.25), 0.0);
        assert_eq!(anpe(0.0, 4.0), 1.0);
    }

    #[test]
    fn anpe_is_scale_invariant() {
        for (y, yh) in [(3.0, 2.0), (0.4, 1.9), (-2.0, 5.0)] {
            for c in [0.5, 2.0, 1000.0] {
                assert!((anpe(c * y, c * yh) - anpe(y, yh)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn anpe_grad_matches_finite_difference() {
        let eps = 1e-7;
        for (y, yh) in [(3.0, 2.0), (0.4, 1.9), (2.0, -1.5), (5.0, 4.0)] {
            let num = (anpe(y, yh + eps) - anpe(y, yh - eps)) / (2.0 * eps);
            let ana = anpe_grad(y, yh);
            assert!((num - ana).abs() < 1e-5, "y={y} yh={yh}: {num} vs {ana}");
        }
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert_eq!(eer(&[1.0, 1.0], &[0.0, 2.0]).unwrap(), 0.0);
        assert_eq!(eer(&[2.0], &[2.5]).unwrap(), 0.5);
        assert!(eer(&[1.0], &[1.0, 2.0]).is_err());
        assert!(eer(&[], &[]).is_err());
    }

    #[test]
    fn coverage_examples() {
        let p = |vf: f64, ve: f64| RatePrediction::new(vf, ve);
        assert_eq!(
            coverage_rate(&[p(5.0, 1.0), p(5.0, 2.0)], &[6.5, 6.5]).unwrap(),
            0.5
        );
        // Boundary membership is closed on both ends.
        assert_eq!(coverage_rate(&[p(5.0, 1.5)], &[6.5]).unwrap(), 1.0);
        assert_eq!(coverage_rate(&[p(5.0, 1.5)], &[3.5]).unwrap(), 1.0);
        assert_eq!(
            coverage_rate(&[p(10.0, 2.0), p(10.0, 2.0)], &[9.0, 11.0]).unwrap(),
            1.0
        );
        assert!(coverage_rate(&[], &[]).is_err());
    }
}
