//! Scalar-output linear models shared by the general and private experts.
//!
//! Regression uses the identity link, binary classification the logistic
//! link. Gradients are analytic and take the upstream derivative of the loss
//! with respect to the model output, so the mixture layer can chain through.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{axpy, check_dim, dot, ln, sigmoid};

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]` inside the
/// cross-entropy.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Regression,
    BinaryClassification,
}

/// Weights and bias of a linear model. Also used as the shape of its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearParams {
    pub fn zeros(dim: usize) -> Self {
        LinearParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Affine score `w·x + b`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .fold(self.bias.abs(), |m, w| if w.abs() > m { w.abs() } else { m })
    }

    /// Flattened view `[w_0, .., w_{d-1}, b]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.dim() + 1);
        flat.extend_from_slice(&self.weights);
        flat.push(self.bias);
        flat
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let (bias, weights) = flat.split_last().expect("flat parameters are never empty");
        LinearParams {
            weights: weights.to_vec(),
            bias: *bias,
        }
    }

    /// `self -= lr * grad` for a flattened gradient.
    pub fn apply_flat(&mut self, lr: f64, grad: &[f64]) -> Result<()> {
        check_dim(self.dim() + 1, grad.len())?;
        axpy(-lr, &grad[..self.dim()], &mut self.weights);
        self.bias -= lr * grad[self.dim()];
        Ok(())
    }

    /// `self -= lr * grad` for a gradient of the same shape.
    pub fn apply(&mut self, lr: f64, grad: &LinearParams) -> Result<()> {
        check_dim(self.dim(), grad.dim())?;
        axpy(-lr, &grad.weights, &mut self.weights);
        self.bias -= lr * grad.bias;
        Ok(())
    }
}

/// Model output: `w·x + b` for regression, `sigmoid(w·x + b)` for
/// classification.
pub fn predict(params: &LinearParams, x: &[f64], task: TaskKind) -> Result<f64> {
    let z = params.score(x)?;
    Ok(match task {
        TaskKind::Regression => z,
        TaskKind::BinaryClassification => sigmoid(z),
    })
}

/// Squared error for regression, clamped binary cross-entropy for
/// classification.
pub fn loss(prediction: f64, target: f64, task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => (prediction - target) * (prediction - target),
        TaskKind::BinaryClassification => {
            let p = prediction.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -(target * ln(p) + (1.0 - target) * ln(1.0 - p))
        }
    }
}

/// Derivative of [`loss`] with respect to the prediction.
pub fn loss_derivative(prediction: f64, target: f64, task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => 2.0 * (prediction - target),
        TaskKind::BinaryClassification => {
            let p = prediction.clamp(PROB_EPS, 1.0 - PROB_EPS);
            -target / p + (1.0 - target) / (1.0 - p)
        }
    }
}

/// Gradient of `upstream * M(x; params)` with respect to the parameters.
pub fn grad_params(
    params: &LinearParams,
    x: &[f64],
    upstream: f64,
    task: TaskKind,
) -> Result<LinearParams> {
    let scale = match task {
        TaskKind::Regression => {
            check_dim(params.dim(), x.len())?;
            upstream
        }
        TaskKind::BinaryClassification => {
            let p = predict(params, x, task)?;
            upstream * p * (1.0 - p)
        }
    };
    Ok(LinearParams {
        weights: x.iter().map(|xi| scale * xi).collect(),
        bias: scale,
    })
}

/// Loss and flattened parameter gradient for a standalone model.
///
/// Classification uses the fused form `(p - y)·x`, which stays exact where the
/// chained `loss_derivative * p(1-p)` would underflow.
pub fn loss_and_flat_grad(
    params: &LinearParams,
    x: &[f64],
    target: f64,
    task: TaskKind,
) -> Result<(f64, Vec<f64>)> {
    let pred = predict(params, x, task)?;
    let scale = match task {
        TaskKind::Regression => 2.0 * (pred - target),
        TaskKind::BinaryClassification => pred - target,
    };
    let mut grad = Vec::with_capacity(x.len() + 1);
    grad.extend(x.iter().map(|xi| scale * xi));
    grad.push(scale);
    Ok((loss(pred, target, task), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lp(w: &[f64], b: f64) -> LinearParams {
        LinearParams {
            weights: w.to_vec(),
            bias: b,
        }
    }

    #[test]
    fn predict_examples() {
        let zero = lp(&[0.0, 0.0], 0.0);
        assert_eq!(predict(&zero, &[3.0, 4.0], TaskKind::Regression).unwrap(), 0.0);
        assert_eq!(
            predict(&zero, &[3.0, 4.0], TaskKind::BinaryClassification).unwrap(),
            0.5
        );
        let w = lp(&[5.0, -2.0], 0.0);
        assert_eq!(predict(&w, &[1.0, 1.0], TaskKind::Regression).unwrap(), 3.0);
    }

    #[test]
    fn predict_rejects_wrong_dimension() {
        let err = predict(&LinearParams::zeros(2), &[1.0], TaskKind::Regression).unwrap_err();
        assert_eq!(err, Error::DimensionMismatch { expected: 2, found: 1 });
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(3.5, 3.5, TaskKind::Regression), 0.0);
        assert!((loss(0.5, 1.0, TaskKind::BinaryClassification) - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss(2.0, 0.0, TaskKind::Regression), 4.0);
        // clamped: finite even at the boundary
        assert!(loss(0.0, 1.0, TaskKind::BinaryClassification).is_finite());
    }

    #[test]
    fn grad_params_examples() {
        let g = grad_params(&LinearParams::zeros(2), &[1.0, 2.0], 3.0, TaskKind::Regression).unwrap();
        assert_eq!(g.weights, vec![3.0, 6.0]);
        assert_eq!(g.bias, 3.0);
        let g = grad_params(&lp(&[0.3, -1.0], 0.2), &[1.0, 2.0], 0.0, TaskKind::BinaryClassification)
            .unwrap();
        assert!(g.weights.iter().all(|&v| v == 0.0) && g.bias == 0.0);
    }

    /// Central finite differences of `loss(predict(.))` over every parameter.
    fn fd_grad(params: &LinearParams, x: &[f64], y: f64, task: TaskKind, h: f64) -> Vec<f64> {
        let flat = params.to_flat();
        (0..flat.len())
            .map(|k| {
                let mut plus = flat.clone();
                let mut minus = flat.clone();
                plus[k] += h;
                minus[k] -= h;
                let lp = loss(predict(&LinearParams::from_flat(&plus), x, task).unwrap(), y, task);
                let lm = loss(predict(&LinearParams::from_flat(&minus), x, task).unwrap(), y, task);
                (lp - lm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..200 {
            let task = if trial % 2 == 0 {
                TaskKind::Regression
            } else {
                TaskKind::BinaryClassification
            };
            let dim = rng.gen_range(1..6);
            let params = LinearParams {
                weights: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                bias: rng.gen_range(-1.0..1.0),
            };
            let x: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y = match task {
                TaskKind::Regression => rng.gen_range(-3.0..3.0),
                TaskKind::BinaryClassification => f64::from(rng.gen_bool(0.5) as u8),
            };
            let pred = predict(&params, &x, task).unwrap();
            let chained = grad_params(&params, &x, loss_derivative(pred, y, task), task)
                .unwrap()
                .to_flat();
            let (_, fused) = loss_and_flat_grad(&params, &x, y, task).unwrap();
            let fd = fd_grad(&params, &x, y, task, 1e-5);
            for k in 0..fd.len() {
                assert!(rel_err(chained[k], fd[k]) < 1e-4, "chained {k}: {} vs {}", chained[k], fd[k]);
                assert!(rel_err(fused[k], fd[k]) < 1e-4, "fused {k}: {} vs {}", fused[k], fd[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn classification_output_in_open_unit_interval(
            w in proptest::collection::vec(-20.0f64..20.0, 3),
            b in -20.0f64..20.0,
            x in proptest::collection::vec(-1.5f64..1.5, 3),
        ) {
            let p = predict(&lp(&w, b), &x, TaskKind::BinaryClassification).unwrap();
            prop_assert!(p > 0.0 && p < 1.0);
        }

        #[test]
        fn regression_is_linear_in_params(
            w1 in proptest::collection::vec(-5.0f64..5.0, 3),
            w2 in proptest::collection::vec(-5.0f64..5.0, 3),
            b1 in -5.0f64..5.0,
            b2 in -5.0f64..5.0,
            a in -3.0f64..3.0,
            x in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            let combined = LinearParams {
                weights: w1.iter().zip(&w2).map(|(p, q)| a * p + q).collect(),
                bias: a * b1 + b2,
            };
            let lhs = predict(&combined, &x, TaskKind::Regression).unwrap();
            let rhs = a * predict(&lp(&w1, b1), &x, TaskKind::Regression).unwrap()
                + predict(&lp(&w2, b2), &x, TaskKind::Regression).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        }
    }
}
