//! Shared building blocks: parameter init, a small MLP, and Adam.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::Result;

/// Xavier-uniform matrix of shape rows×cols, registered as a parameter.
pub fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let v: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::param(vec![rows, cols], v).expect("xavier init")
}

pub fn zeros_param(shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, vec![0.0; n]).expect("zeros init")
}

pub fn full_param(shape: Vec<usize>, v: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::param(shape, vec![v; n]).expect("const init")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

/// Fully connected stack; rows of the input are independent samples.
pub struct Mlp {
    pub weights: Vec<Tensor>, // in×out each
    pub biases: Vec<Tensor>,  // 1×out each
    pub hidden_act: Activation,
}

impl Mlp {
    pub fn new(rng: &mut ChaCha8Rng, dims: &[usize], hidden_act: Activation) -> Mlp {
        assert!(dims.len() >= 2);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            weights.push(xavier(rng, w[0], w[1]));
            biases.push(zeros_param(vec![1, w[1]]));
        }
        Mlp {
            weights,
            biases,
            hidden_act,
        }
    }

    /// Output layer is linear; hidden layers use `hidden_act`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        let last = self.weights.len() - 1;
        for (i, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            h = h.matmul(w)?.add_row_broadcast(b)?;
            if i < last {
                h = match self.hidden_act {
                    Activation::Tanh => h.tanh(),
                    Activation::Relu => h.relu(),
                    Activation::Identity => h,
                };
            }
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.weights.iter().chain(&self.biases).cloned().collect()
    }
}

/// Adam with optional decoupled step-decay handled by the caller via `set_lr`.
pub struct Adam {
    params: Vec<Tensor>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(params: Vec<Tensor>, lr: f64) -> Adam {
        let m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        let v = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Adam {
            params,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m,
            v,
            t: 0,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.zero_grad();
        }
    }

    /// One update from accumulated gradients; parameters without a gradient
    /// are skipped.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in self.params.iter().enumerate() {
            let grad = match p.grad() {
                Some(g) => g,
                None => continue,
            };
            let mut vals = p.values();
            for (j, g) in grad.iter().enumerate() {
                self.m[i][j] = self.beta1 * self.m[i][j] + (1.0 - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (1.0 - self.beta2) * g * g;
                let mh = self.m[i][j] / bc1;
                let vh = self.v[i][j] / bc2;
                vals[j] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
            p.set_values(vals)?;
        }
        Ok(())
    }
}
