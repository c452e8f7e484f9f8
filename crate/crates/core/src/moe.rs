//! Two-expert mixture: the shared general model and one party's private model,
//! combined through a sigmoid gate `alpha(x) = sigmoid(w·x + b)`.
//!
//! The mixed prediction is `alpha * y_general + (1 - alpha) * y_private`. With
//! `u = dL/dy_mixed`, the backward pass splits into four gradient groups:
//!
//! ```text
//! d_general = u * alpha       * dM_G/dTheta_G
//! d_private = u * (1 - alpha) * dM_P/dTheta_P
//! d_gate_w  = u * (y_G - y_P) * alpha * (1 - alpha) * x
//! d_gate_b  = u * (y_G - y_P) * alpha * (1 - alpha)
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math::{check_dim, dot, sigmoid};
use crate::models::{grad_params, loss, loss_derivative, predict, LinearParams, TaskKind};

/// Gating parameters `(w_i, b_i)` of one party.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl GateParams {
    /// `w = 0, b = 0`, i.e. `alpha = 0.5` everywhere.
    pub fn neutral(dim: usize) -> Self {
        GateParams {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }
}

/// Everything a party keeps to itself in FL+DE.
#[derive(Debug, Clone, PartialEq)]
pub struct PrivateState {
    pub model: LinearParams,
    pub gate: GateParams,
}

impl PrivateState {
    /// Private expert copied from the current general model, neutral gate.
    pub fn from_general(general: &LinearParams) -> Self {
        PrivateState {
            model: general.clone(),
            gate: GateParams::neutral(general.dim()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.model.is_finite()
            && self.gate.bias.is_finite()
            && self.gate.weights.iter().all(|w| w.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.gate
            .weights
            .iter()
            .fold(self.model.max_abs().max(self.gate.bias.abs()), |m, w| m.max(w.abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MoeGradients {
    pub d_general: LinearParams,
    pub d_private: LinearParams,
    pub d_gate_w: Vec<f64>,
    pub d_gate_b: f64,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoeForward {
    pub alpha: f64,
    pub y_general: f64,
    pub y_private: f64,
    pub y_mixed: f64,
}

/// Gate value `sigmoid(w·x + b)`.
pub fn gate(gate: &GateParams, x: &[f64]) -> Result<f64> {
    check_dim(gate.dim(), x.len())?;
    Ok(sigmoid(dot(&gate.weights, x) + gate.bias))
}

/// Convex combination of the two expert outputs.
#[inline]
pub fn mix(alpha: f64, y_general: f64, y_private: f64) -> f64 {
    alpha * y_general + (1.0 - alpha) * y_private
}

/// Forward pass. `alpha_override` replaces the learned gate value, which
/// pins the mixture to one expert for ablations.
pub fn forward(
    general: &LinearParams,
    private: &PrivateState,
    x: &[f64],
    task: TaskKind,
    alpha_override: Option<f64>,
) -> Result<MoeForward> {
    check_dim(general.dim(), private.model.dim())?;
    let alpha = match alpha_override {
        Some(a) => {
            check_dim(general.dim(), x.len())?;
            a
        }
        None => gate(&private.gate, x)?,
    };
    let y_general = predict(general, x, task)?;
    let y_private = predict(&private.model, x, task)?;
    Ok(MoeForward {
        alpha,
        y_general,
        y_private,
        y_mixed: mix(alpha, y_general, y_private),
    })
}

/// Mixed prediction for one input.
pub fn predict_mixed(
    general: &LinearParams,
    private: &PrivateState,
    x: &[f64],
    task: TaskKind,
) -> Result<f64> {
    Ok(forward(general, private, x, task, None)?.y_mixed)
}

/// End-to-end loss of the mixture at `(x, y)` and its gradient with respect to
/// all four parameter groups.
pub fn moe_forward_backward(
    general: &LinearParams,
    private: &PrivateState,
    x: &[f64],
    y: f64,
    task: TaskKind,
) -> Result<(f64, MoeGradients)> {
    moe_forward_backward_with(general, private, x, y, task, None)
}

/// As [`moe_forward_backward`], optionally with the gate pinned to a fixed
/// value. A pinned gate receives zero gradient.
pub fn moe_forward_backward_with(
    general: &LinearParams,
    private: &PrivateState,
    x: &[f64],
    y: f64,
    task: TaskKind,
    alpha_override: Option<f64>,
) -> Result<(f64, MoeGradients)> {
    let fwd = forward(general, private, x, task, alpha_override)?;
    let alpha = fwd.alpha;
    let u = loss_derivative(fwd.y_mixed, y, task);

    let d_general = grad_params(general, x, u * alpha, task)?;
    let d_private = grad_params(&private.model, x, u * (1.0 - alpha), task)?;
    let gate_scale = if alpha_override.is_some() {
        0.0
    } else {
        u * (fwd.y_general - fwd.y_private) * alpha * (1.0 - alpha)
    };
    let grads = MoeGradients {
        d_general,
        d_private,
        d_gate_w: x.iter().map(|xi| gate_scale * xi).collect(),
        d_gate_b: gate_scale,
    };
    Ok((loss(fwd.y_mixed, y, task), grads))
}
