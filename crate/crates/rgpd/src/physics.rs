//! DeepHPM dynamics network and the four physics residual losses with their
//! weighted total.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};

/// Weights on the four physics terms. Members of the Q-agents' action spaces
/// when RL drives them, fixed config constants otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicsWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
}

impl PhysicsWeights {
    pub fn new(w1: f64, w2: f64, w3: f64, w4: f64) -> Result<PhysicsWeights> {
        for (name, w) in [("w1", w1), ("w2", w2), ("w3", w3), ("w4", w4)] {
            if w < 0.0 || !w.is_finite() {
                return Err(Error::invalid(format!("physics weight {name} = {w} must be >= 0")));
            }
        }
        Ok(PhysicsWeights { w1, w2, w3, w4 })
    }

    pub fn uniform(w: f64) -> PhysicsWeights {
        PhysicsWeights::new(w, w, w, w).expect("nonnegative")
    }
}

/// Residual tensors, the four scalar terms, and the weighted total for one
/// batch. Scalars are tracked both as tensors (for backward) and as f64.
pub struct PhysicsReport {
    pub diff1: Tensor,
    pub diff2: Tensor,
    pub residual: Tensor,
    pub monotonicity: Tensor,
    pub smoothness: Tensor,
    pub consistency: Tensor,
    pub broken: Tensor,
    pub total: Tensor,
    pub weights: PhysicsWeights,
}

impl PhysicsReport {
    pub fn term_values(&self) -> [f64; 4] {
        [
            self.monotonicity.item(),
            self.smoothness.item(),
            self.consistency.item(),
            self.broken.item(),
        ]
    }

    /// CSV with one row per (sample, step) carrying the residual series; the
    /// data behind the weight-dynamics plots.
    pub fn to_csv(&self) -> String {
        let d1 = self.diff1.values();
        let d2 = self.diff2.values();
        let res = self.residual.values();
        let [b, t1] = [self.diff1.shape()[0], self.diff1.shape()[1]];
        let t2 = self.diff2.shape()[1];
        let mut out = String::from("sample,step,diff1,diff2,residual\n");
        for s in 0..b {
            for k in 0..t1 {
                let diff2 = if k < t2 {
                    format!("{}", d2[s * t2 + k])
                } else {
                    String::new()
                };
                out.push_str(&format!("{s},{k},{},{diff2},{}\n", d1[s * t1 + k], res[s * t1 + k]));
            }
        }
        out
    }
}

/// diff1 = ŷ_{t+1} − ŷ_t over a B×T batch; loss = mean(max(0, diff1)²).
pub fn monotonicity_loss(y_hat: &Tensor) -> Result<(Tensor, Tensor)> {
    let shape = y_hat.shape();
    if shape.len() != 2 || shape[1] < 2 {
        return Err(Error::invalid("monotonicity_loss needs B×T with T >= 2"));
    }
    let t = shape[1];
    let diff1 = y_hat.slice_cols(1, t)?.sub(&y_hat.slice_cols(0, t - 1)?)?;
    let loss = diff1.relu().square().mean();
    Ok((diff1, loss))
}

/// diff2 = (ŷ_{t+2} − ŷ_{t+1}) − (ŷ_{t+1} − ŷ_t); loss = mean(diff2²).
pub fn smoothness_loss(y_hat: &Tensor) -> Result<(Tensor, Tensor)> {
    let shape = y_hat.shape();
    if shape.len() != 2 || shape[1] < 3 {
        return Err(Error::invalid("smoothness_loss needs B×T with T >= 3"));
    }
    let t = shape[1];
    let head = y_hat.slice_cols(0, t - 2)?;
    let mid = y_hat.slice_cols(1, t - 1)?;
    let tail = y_hat.slice_cols(2, t)?;
    let diff2 = tail.sub(&mid.mul_scalar(2.0))?.add(&head)?;
    let loss = diff2.square().mean();
    Ok((diff2, loss))
}

/// residual = diff1 − N_u[:, :T−1]; loss = mean(residual²).
pub fn hpm_consistency_loss(diff1: &Tensor, n_u: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = diff1.shape();
    let n = n_u.shape();
    if n.len() != 2 || n[0] != d[0] || n[1] != d[1] + 1 {
        return Err(Error::ShapeMismatch {
            op: "hpm_consistency_loss",
            lhs: d,
            rhs: n,
        });
    }
    let residual = diff1.sub(&n_u.slice_cols(0, n[1] - 1)?)?;
    let loss = residual.square().mean();
    Ok((residual, loss))
}

/// broken_loss = mean(broken_mask ⊙ ŷ_last²) over the full batch.
pub fn broken_loss(y_last: &Tensor, broken_mask: &[f64]) -> Result<Tensor> {
    if y_last.numel() != broken_mask.len() {
        return Err(Error::invalid("broken_loss: mask length mismatch"));
    }
    if broken_mask.iter().any(|&m| m != 0.0 && m != 1.0) {
        return Err(Error::invalid("broken_loss: mask must be binary"));
    }
    let b = broken_mask.len();
    let mask = Tensor::new(vec![b, 1], broken_mask.to_vec())?;
    y_last.reshape(vec![b, 1])?.square().mul(&mask)?.mean_axis(0)?.reshape(vec![1])
}

/// pde_loss = w1·mono + w2·smooth + w3·consistency + w4·broken.
pub fn total_pde_loss(
    monotonicity: &Tensor,
    smoothness: &Tensor,
    consistency: &Tensor,
    broken: &Tensor,
    weights: &PhysicsWeights,
) -> Result<Tensor> {
    monotonicity
        .mul_scalar(weights.w1)
        .add(&smoothness.mul_scalar(weights.w2))?
        .add(&consistency.mul_scalar(weights.w3))?
        .add(&broken.mul_scalar(weights.w4))
}

/// MLP approximating the unknown dynamics: per-step
/// [features, ŷ_t, t_norm] → scalar.
pub struct DynamicsNet {
    pub mlp: Mlp,
}

impl DynamicsNet {
    pub fn new(rng: &mut ChaCha8Rng, feature_dim: usize, hidden: usize) -> DynamicsNet {
        DynamicsNet {
            mlp: Mlp::new(rng, &[feature_dim + 2, hidden, hidden, 1], Activation::Tanh),
        }
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.mlp.params()
    }

    /// features T×F, y_hat T×1, t_norm T×1 (values in [0,1]) → N_u T×1.
    pub fn forward(&self, features: &Tensor, y_hat: &Tensor, t_norm: &Tensor) -> Result<Tensor> {
        if cfg!(debug_assertions)
            && t_norm.values().iter().any(|&t| !(0.0..=1.0).contains(&t))
        {
            return Err(Error::invalid("dynamics_forward: t_norm outside [0,1]"));
        }
        let input = Tensor::concat(&[features.clone(), y_hat.clone(), t_norm.clone()], 1)?;
        self.mlp.forward(&input)
    }
}

/// Full physics report for a batch of per-step prediction sequences.
pub fn physics_report(
    y_hat: &Tensor,       // B×T
    n_u: &Tensor,         // B×T dynamics outputs
    broken_mask: &[f64],  // B
    weights: &PhysicsWeights,
) -> Result<PhysicsReport> {
    let t = y_hat.shape()[1];
    let (diff1, mono) = monotonicity_loss(y_hat)?;
    let (diff2, smooth) = smoothness_loss(y_hat)?;
    let (residual, consistency) = hpm_consistency_loss(&diff1, n_u)?;
    let y_last = y_hat.slice_cols(t - 1, t)?;
    let broken = broken_loss(&y_last, broken_mask)?;
    let total = total_pde_loss(&mono, &smooth, &consistency, &broken, weights)?;
    Ok(PhysicsReport {
        diff1,
        diff2,
        residual,
        monotonicity: mono,
        smoothness: smooth,
        consistency,
        broken,
        total,
        weights: *weights,
    })
}
