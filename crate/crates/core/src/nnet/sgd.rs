use serde::{Deserialize, Serialize};

use super::model::Gradients;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    #[serde(skip)]
    velocity: Vec<Matrix>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {learning_rate}"
            )));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !(weight_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "weight decay must be non-negative, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        })
    }

    pub fn velocity(&self) -> &[Matrix] {
        &self.velocity
    }
}

pub fn sgd_step(params: &mut [&mut Matrix], grads: &Gradients, state: &mut SgdState) -> Result<()> {
    if params.len() != grads.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} parameter tensors but {} gradients",
            params.len(),
            grads.tensors.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(&grads.tensors).enumerate() {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {i}: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    if state.velocity.is_empty() {
        state.velocity = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
    } else if state.velocity.len() != params.len()
        || state.velocity.iter().zip(params.iter()).any(|(v, p)| v.shape() != p.shape())
    {
        return Err(Error::ShapeMismatch("velocity buffers do not match parameters".into()));
    }
    let (lr, mu, wd) = (state.learning_rate, state.momentum, state.weight_decay);
    for ((p, g), v) in params.iter_mut().zip(&grads.tensors).zip(&mut state.velocity) {
        for ((pi, gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vi = mu * *vi + gi + wd * *pi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}
