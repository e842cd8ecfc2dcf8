//! Central finite-difference verification of backward rules.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ConvPadding, Tensor};
use crate::error::{Error, Result};

/// Max relative error between analytic gradient of `f` at `x` and a central
/// finite difference with step `eps`. `f` must map a tensor to a scalar.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let leaf = Tensor::param(x.shape(), x.values())?;
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(Error::invalid("finite_diff_check: f must return a scalar"));
    }
    if !y.item().is_finite() {
        return Err(Error::NonFinite("finite_diff_check: f(x)".into()));
    }
    y.backward()?;
    let analytic = leaf
        .grad()
        .ok_or_else(|| Error::invalid("finite_diff_check: no gradient produced"))?;

    let base = x.values();
    let eval = |vals: Vec<f64>| -> Result<f64> {
        let t = Tensor::new(x.shape(), vals)?;
        Ok(f(&t)?.item())
    };
    let mut max_err = 0.0f64;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += eps;
        let mut minus = base.clone();
        minus[i] -= eps;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * eps);
        let a = analytic[i];
        let err = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

/// One named gradient check over a randomized input.
pub struct OpCheck {
    pub name: &'static str,
    run: fn(&mut ChaCha8Rng) -> Result<f64>,
}

impl OpCheck {
    pub fn run(&self, rng: &mut ChaCha8Rng) -> Result<f64> {
        (self.run)(rng)
    }
}

/// Random values bounded away from activation kinks at zero.
fn rand_vals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.2..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn rt(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, rand_vals(rng, n)).expect("random tensor")
}

const EPS: f64 = 1e-5;

macro_rules! check {
    ($name:literal, $body:expr) => {
        OpCheck {
            name: $name,
            run: $body,
        }
    };
}

/// Every registered primitive op, each checked through a scalar-valued
/// composition so the finite difference sees the full backward rule.
pub fn op_checks() -> Vec<OpCheck> {
    vec![
        check!("add", |rng| {
            let b = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.add(&b)?.square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("sub", |rng| {
            let b = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.sub(&b)?.square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("mul", |rng| {
            let b = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.mul(&b)?.sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("div", |rng| {
            let b = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.div(&b)?.sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("neg", |rng| {
            finite_diff_check(|x| Ok(x.neg().square().sum()), &rt(rng, vec![2, 5]), EPS)
        }),
        check!("add_scalar", |rng| {
            finite_diff_check(|x| Ok(x.add_scalar(0.7).square().sum()), &rt(rng, vec![2, 3]), EPS)
        }),
        check!("mul_scalar", |rng| {
            finite_diff_check(|x| Ok(x.mul_scalar(-1.3).square().sum()), &rt(rng, vec![2, 3]), EPS)
        }),
        check!("matmul", |rng| {
            let b = rt(rng, vec![4, 2]);
            finite_diff_check(|x| Ok(x.matmul(&b)?.square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("matmul_rhs", |rng| {
            let a = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(a.matmul(x)?.square().sum()), &rt(rng, vec![4, 2]), EPS)
        }),
        check!("transpose", |rng| {
            let b = rt(rng, vec![4, 3]);
            finite_diff_check(|x| Ok(x.transpose()?.mul(&b)?.sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("reshape", |rng| {
            finite_diff_check(|x| Ok(x.reshape(vec![6, 2])?.square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("relu", |rng| {
            finite_diff_check(|x| Ok(x.relu().square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("leaky_relu", |rng| {
            finite_diff_check(|x| Ok(x.leaky_relu(0.2).square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("elu", |rng| {
            finite_diff_check(|x| Ok(x.elu().square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("sigmoid", |rng| {
            finite_diff_check(|x| Ok(x.sigmoid().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("tanh", |rng| {
            finite_diff_check(|x| Ok(x.tanh().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("exp", |rng| {
            finite_diff_check(|x| Ok(x.exp().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("ln", |rng| {
            let x = Tensor::new(
                vec![3, 4],
                (0..12).map(|_| rng.gen_range(0.3..2.0)).collect(),
            )?;
            finite_diff_check(|x| Ok(x.ln().sum()), &x, EPS)
        }),
        check!("square", |rng| {
            finite_diff_check(|x| Ok(x.square().sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("softmax_rows", |rng| {
            let w = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.softmax(1)?.mul(&w)?.sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("softmax_cols", |rng| {
            let w = rt(rng, vec![3, 4]);
            finite_diff_check(|x| Ok(x.softmax(0)?.mul(&w)?.sum()), &rt(rng, vec![3, 4]), EPS)
        }),
        check!("softmax_1d", |rng| {
            let w = rt(rng, vec![5]);
            finite_diff_check(|x| Ok(x.softmax(0)?.mul(&w)?.sum()), &rt(rng, vec![5]), EPS)
        }),
        check!("sum", |rng| {
            finite_diff_check(|x| Ok(x.square().sum()), &rt(rng, vec![4, 4]), EPS)
        }),
        check!("mean", |rng| {
            finite_diff_check(|x| Ok(x.square().mean()), &rt(rng, vec![4, 4]), EPS)
        }),
        check!("mean_axis0", |rng| {
            finite_diff_check(|x| Ok(x.mean_axis(0)?.square().sum()), &rt(rng, vec![3, 5]), EPS)
        }),
        check!("mean_axis1", |rng| {
            finite_diff_check(|x| Ok(x.mean_axis(1)?.square().sum()), &rt(rng, vec![3, 5]), EPS)
        }),
        check!("concat_rows", |rng| {
            let b = rt(rng, vec![2, 3]);
            finite_diff_check(
                |x| Ok(Tensor::concat(&[x.clone(), b.clone()], 0)?.square().sum()),
                &rt(rng, vec![2, 3]),
                EPS,
            )
        }),
        check!("concat_cols", |rng| {
            let b = rt(rng, vec![3, 2]);
            finite_diff_check(
                |x| Ok(Tensor::concat(&[x.clone(), b.clone()], 1)?.square().sum()),
                &rt(rng, vec![3, 2]),
                EPS,
            )
        }),
        check!("slice_rows", |rng| {
            finite_diff_check(|x| Ok(x.slice_rows(1, 3)?.square().sum()), &rt(rng, vec![4, 3]), EPS)
        }),
        check!("slice_cols", |rng| {
            finite_diff_check(|x| Ok(x.slice_cols(1, 4)?.square().sum()), &rt(rng, vec![3, 5]), EPS)
        }),
        check!("add_row_broadcast", |rng| {
            let b = rt(rng, vec![1, 4]);
            finite_diff_check(
                |x| Ok(x.add_row_broadcast(&b)?.square().sum()),
                &rt(rng, vec![3, 4]),
                EPS,
            )
        }),
        check!("add_row_broadcast_bias", |rng| {
            let a = rt(rng, vec![3, 4]);
            finite_diff_check(
                |x| Ok(a.add_row_broadcast(x)?.square().sum()),
                &rt(rng, vec![1, 4]),
                EPS,
            )
        }),
        check!("mul_col_broadcast", |rng| {
            let v = rt(rng, vec![3, 1]);
            finite_diff_check(
                |x| Ok(x.mul_col_broadcast(&v)?.square().sum()),
                &rt(rng, vec![3, 5]),
                EPS,
            )
        }),
        check!("mul_col_broadcast_vec", |rng| {
            let a = rt(rng, vec![3, 5]);
            finite_diff_check(
                |x| Ok(a.mul_col_broadcast(x)?.square().sum()),
                &rt(rng, vec![3, 1]),
                EPS,
            )
        }),
        check!("div_col_broadcast", |rng| {
            let v = Tensor::new(vec![3, 1], (0..3).map(|_| rng.gen_range(0.5..2.0)).collect())?;
            finite_diff_check(
                |x| Ok(x.div_col_broadcast(&v)?.square().sum()),
                &rt(rng, vec![3, 5]),
                EPS,
            )
        }),
        check!("div_col_broadcast_vec", |rng| {
            let a = rt(rng, vec![3, 5]);
            let v = Tensor::new(vec![3, 1], (0..3).map(|_| rng.gen_range(0.5..2.0)).collect())?;
            finite_diff_check(
                |x| Ok(a.div_col_broadcast(x)?.square().sum()),
                &v,
                EPS,
            )
        }),
        check!("depthwise_conv1d", |rng| {
            let k = rt(rng, vec![2, 3]);
            finite_diff_check(
                |x| Ok(x.depthwise_conv1d(&k)?.square().sum()),
                &rt(rng, vec![2, 7]),
                EPS,
            )
        }),
        check!("depthwise_conv1d_kernel", |rng| {
            let x = rt(rng, vec![2, 7]);
            finite_diff_check(
                |k| Ok(x.depthwise_conv1d(k)?.square().sum()),
                &rt(rng, vec![2, 3]),
                EPS,
            )
        }),
        check!("dilated_depthwise_conv1d", |rng| {
            let k = rt(rng, vec![2, 3]);
            finite_diff_check(
                |x| Ok(x.dilated_depthwise_conv1d(&k, 2, ConvPadding::Same)?.square().sum()),
                &rt(rng, vec![2, 9]),
                EPS,
            )
        }),
        check!("causal_dilated_conv1d", |rng| {
            let k = rt(rng, vec![2, 2]);
            finite_diff_check(
                |x| Ok(x.dilated_depthwise_conv1d(&k, 2, ConvPadding::Causal)?.square().sum()),
                &rt(rng, vec![2, 8]),
                EPS,
            )
        }),
        check!("pointwise_conv", |rng| {
            let k = rt(rng, vec![3, 2]);
            finite_diff_check(
                |x| Ok(x.pointwise_conv(&k)?.square().sum()),
                &rt(rng, vec![3, 6]),
                EPS,
            )
        }),
        check!("pointwise_conv_kernel", |rng| {
            let x = rt(rng, vec![3, 6]);
            finite_diff_check(
                |k| Ok(x.pointwise_conv(k)?.square().sum()),
                &rt(rng, vec![3, 2]),
                EPS,
            )
        }),
    ]
}
