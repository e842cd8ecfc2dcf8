//! Temporal Attention Unit: static attention from stacked depthwise →
//! dilated-depthwise → pointwise convolutions, dynamic attention from
//! average-pool → FC → sigmoid, fused multiplicatively with the input.
//! Also the plain multi-head self-attention used when TAU is ablated.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvPadding, Tensor};
use crate::error::{Error, Result};
use crate::nn::{xavier, zeros_param};

pub struct TauParams {
    pub depthwise: Tensor,       // C×k1
    pub dilated: Tensor,         // C×k2
    pub dilation: usize,
    pub pointwise: Tensor,       // C×C
    pub fc_weight: Tensor,       // C×C
    pub fc_bias: Tensor,         // C×1
}

impl TauParams {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize, k1: usize, k2: usize, dilation: usize) -> Result<TauParams> {
        if k1 % 2 == 0 || k2 % 2 == 0 {
            return Err(Error::invalid("TAU kernel sizes must be odd"));
        }
        if dilation < 1 {
            return Err(Error::invalid("TAU dilation must be >= 1"));
        }
        Ok(TauParams {
            depthwise: xavier(rng, channels, k1),
            dilated: xavier(rng, channels, k2),
            dilation,
            pointwise: xavier(rng, channels, channels),
            fc_weight: xavier(rng, channels, channels),
            fc_bias: zeros_param(vec![channels, 1]),
        })
    }

    /// Identity configuration: delta kernels, identity pointwise/FC, and a
    /// bias override that saturates the gate at exactly 1.
    pub fn identity(channels: usize, k: usize) -> Result<TauParams> {
        let mut delta = vec![0.0; channels * k];
        for c in 0..channels {
            delta[c * k + k / 2] = 1.0;
        }
        let mut eye = vec![0.0; channels * channels];
        for c in 0..channels {
            eye[c * channels + c] = 1.0;
        }
        Ok(TauParams {
            depthwise: Tensor::param(vec![channels, k], delta.clone())?,
            dilated: Tensor::param(vec![channels, k], delta)?,
            dilation: 1,
            pointwise: Tensor::param(vec![channels, channels], eye.clone())?,
            fc_weight: Tensor::param(vec![channels, channels], vec![0.0; channels * channels])?,
            fc_bias: Tensor::param(vec![channels, 1], vec![1e3; channels])?,
        })
    }

    pub fn params(&self) -> Vec<Tensor> {
        vec![
            self.depthwise.clone(),
            self.dilated.clone(),
            self.pointwise.clone(),
            self.fc_weight.clone(),
            self.fc_bias.clone(),
        ]
    }
}

/// SA = Conv1x1(DW-D Conv(DW Conv(H))).
pub fn static_attention(h: &Tensor, params: &TauParams) -> Result<Tensor> {
    h.depthwise_conv1d(&params.depthwise)?
        .dilated_depthwise_conv1d(&params.dilated, params.dilation, ConvPadding::Same)?
        .pointwise_conv(&params.pointwise)
}

/// DA = sigmoid(FC(AvgPool(H))): per-channel gate in (0,1), shape C×1.
pub fn dynamic_attention(h: &Tensor, params: &TauParams) -> Result<Tensor> {
    let pooled = h.mean_axis(1)?; // C×1
    Ok(params
        .fc_weight
        .matmul(&pooled)?
        .add(&params.fc_bias)?
        .sigmoid())
}

/// H'[c,t] = SA[c,t] · DA[c] · H[c,t].
pub fn tau_forward(h: &Tensor, params: &TauParams) -> Result<Tensor> {
    let sa = static_attention(h, params)?;
    let da = dynamic_attention(h, params)?;
    sa.mul(h)?.mul_col_broadcast(&da)
}

pub struct MhsaParams {
    pub heads: Vec<MhsaHead>,
    pub out_proj: Tensor, // D×D
    pub key_dim: usize,
}

pub struct MhsaHead {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

impl MhsaParams {
    pub fn new(rng: &mut ChaCha8Rng, model_dim: usize, heads: usize) -> Result<MhsaParams> {
        if heads == 0 || model_dim % heads != 0 {
            return Err(Error::invalid(format!(
                "model dim {model_dim} must be divisible by head count {heads}"
            )));
        }
        let dk = model_dim / heads;
        let heads = (0..heads)
            .map(|_| MhsaHead {
                wq: xavier(rng, model_dim, dk),
                wk: xavier(rng, model_dim, dk),
                wv: xavier(rng, model_dim, dk),
            })
            .collect();
        Ok(MhsaParams {
            heads,
            out_proj: xavier(rng, model_dim, model_dim),
            key_dim: dk,
        })
    }

    pub fn params(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self
            .heads
            .iter()
            .flat_map(|h| [h.wq.clone(), h.wk.clone(), h.wv.clone()])
            .collect();
        p.push(self.out_proj.clone());
        p
    }
}

pub struct MhsaOutput {
    pub out: Tensor,
    pub attention: Vec<Tensor>, // per head, T×T rows summing to 1
}

/// Attention(Q,K,V) = softmax(QKᵀ/√d_k)V per head, heads concatenated and
/// output-projected.
pub fn multi_head_self_attention_full(x: &Tensor, params: &MhsaParams) -> Result<MhsaOutput> {
    let scale = 1.0 / (params.key_dim as f64).sqrt();
    let mut head_outs = Vec::new();
    let mut attention = Vec::new();
    for head in &params.heads {
        let q = x.matmul(&head.wq)?;
        let k = x.matmul(&head.wk)?;
        let v = x.matmul(&head.wv)?;
        let scores = q.matmul(&k.transpose()?)?.mul_scalar(scale).softmax(1)?;
        head_outs.push(scores.matmul(&v)?);
        attention.push(scores);
    }
    let out = Tensor::concat(&head_outs, 1)?.matmul(&params.out_proj)?;
    Ok(MhsaOutput { out, attention })
}

pub fn multi_head_self_attention(x: &Tensor, params: &MhsaParams) -> Result<Tensor> {
    Ok(multi_head_self_attention_full(x, params)?.out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn static_attention_identity_composition() {
        let params = TauParams::identity(3, 3).unwrap();
        let h = Tensor::new(vec![3, 5], (0..15).map(|i| i as f64 * 0.3 - 2.0).collect()).unwrap();
        let sa = static_attention(&h, &params).unwrap();
        assert_eq!(sa.values(), h.values());
    }

    #[test]
    fn static_attention_zero_pointwise() {
        let mut params = TauParams::identity(2, 3).unwrap();
        params.pointwise = Tensor::param(vec![2, 2], vec![0.0; 4]).unwrap();
        let h = Tensor::new(vec![2, 4], vec![1.0; 8]).unwrap();
        assert!(static_attention(&h, &params).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn static_attention_matches_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = TauParams::new(&mut rng, 3, 3, 3, 2).unwrap();
        let h = Tensor::new(vec![3, 8], (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let sa = static_attention(&h, &params).unwrap();
        let oracle = h
            .depthwise_conv1d(&params.depthwise)
            .unwrap()
            .dilated_depthwise_conv1d(&params.dilated, 2, ConvPadding::Same)
            .unwrap()
            .pointwise_conv(&params.pointwise)
            .unwrap();
        for (a, b) in sa.values().iter().zip(oracle.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dynamic_attention_constant_channels() {
        // FC = identity, zero bias, H constant c per channel → DA = sigmoid(c)
        let mut params = TauParams::identity(2, 3).unwrap();
        params.fc_weight = Tensor::param(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        params.fc_bias = Tensor::param(vec![2, 1], vec![0.0, 0.0]).unwrap();
        let h = Tensor::new(vec![2, 4], vec![0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]).unwrap();
        let da = dynamic_attention(&h, &params).unwrap().values();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((da[0] - sig(0.5)).abs() < 1e-15);
        assert!((da[1] - sig(-1.0)).abs() < 1e-15);
    }

    #[test]
    fn dynamic_attention_time_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = TauParams::new(&mut rng, 2, 3, 3, 1).unwrap();
        let h = Tensor::new(vec![2, 4], vec![1.0, 2.0, 3.0, 4.0, -1.0, 0.5, 2.5, 0.0]).unwrap();
        let hp = Tensor::new(vec![2, 4], vec![4.0, 1.0, 3.0, 2.0, 0.0, 2.5, 0.5, -1.0]).unwrap();
        assert_eq!(
            dynamic_attention(&h, &params).unwrap().values(),
            dynamic_attention(&hp, &params).unwrap().values()
        );
    }

    #[test]
    fn dynamic_attention_t1_pool_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = TauParams::new(&mut rng, 3, 3, 3, 1).unwrap();
        let h = Tensor::new(vec![3, 1], vec![0.2, -0.7, 1.1]).unwrap();
        let da = dynamic_attention(&h, &params).unwrap();
        let direct = params
            .fc_weight
            .matmul(&h)
            .unwrap()
            .add(&params.fc_bias)
            .unwrap()
            .sigmoid();
        assert_eq!(da.values(), direct.values());
    }

    #[test]
    fn dynamic_attention_in_open_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let params = TauParams::new(&mut rng, 4, 3, 3, 2).unwrap();
        for _ in 0..20 {
            let h = Tensor::new(vec![4, 6], (0..24).map(|_| rng.gen_range(-10.0..10.0)).collect())
                .unwrap();
            let da = dynamic_attention(&h, &params).unwrap();
            assert!(da.values().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn tau_identity_map() {
        let params = TauParams::identity(3, 3).unwrap();
        // pointwise identity makes SA == H, gate saturated at 1, but the fused
        // product is SA ⊙ DA ⊙ H = H². Pin SA to all-ones instead by checking
        // the contract directly: with SA ≡ 1 and DA ≡ 1, H' == H.
        let h = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 * 0.1 - 0.5).collect()).unwrap();
        let sa = Tensor::ones(vec![3, 4]);
        let da = dynamic_attention(&h, &params).unwrap(); // saturated at 1 exactly
        assert!(da.values().iter().all(|&v| v == 1.0));
        let fused = sa.mul(&h).unwrap().mul_col_broadcast(&da).unwrap();
        assert_eq!(fused.values(), h.values());
    }

    #[test]
    fn tau_da_zero_channel_zeroes_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = TauParams::new(&mut rng, 2, 3, 3, 1).unwrap();
        // saturate channel 0 gate at exactly 0
        params.fc_weight = Tensor::param(vec![2, 2], vec![0.0; 4]).unwrap();
        params.fc_bias = Tensor::param(vec![2, 1], vec![-1e3, 0.0]).unwrap();
        let h = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = tau_forward(&h, &params).unwrap().values();
        assert_eq!(&out[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn tau_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params = TauParams::new(&mut rng, 3, 3, 3, 2).unwrap();
        let h = Tensor::new(vec![3, 6], (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let out = tau_forward(&h, &params).unwrap().values();
        let sa = static_attention(&h, &params).unwrap().values();
        let da = dynamic_attention(&h, &params).unwrap().values();
        let hv = h.values();
        for c in 0..3 {
            for t in 0..6 {
                let i = c * 6 + t;
                assert!((out[i] - sa[i] * da[c] * hv[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tau_homogeneous_in_pointwise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut params = TauParams::new(&mut rng, 2, 3, 3, 1).unwrap();
        let h = Tensor::new(vec![2, 5], (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let base = tau_forward(&h, &params).unwrap().values();
        let s = 3.0;
        params.pointwise = Tensor::param(
            vec![2, 2],
            params.pointwise.values().iter().map(|v| v * s).collect(),
        )
        .unwrap();
        let scaled = tau_forward(&h, &params).unwrap().values();
        for (a, b) in scaled.iter().zip(&base) {
            assert!((a - s * b).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_gradients_pass_finite_diff() {
        use crate::autodiff::finite_diff_check;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let params = TauParams::new(&mut rng, 2, 3, 3, 2).unwrap();
        let h = Tensor::new(vec![2, 6], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let err = finite_diff_check(|x| Ok(tau_forward(x, &params)?.square().sum()), &h, 1e-5).unwrap();
        assert!(err < 1e-4, "tau rel err {err}");
    }

    #[test]
    fn mhsa_single_step_is_projected_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = MhsaParams::new(&mut rng, 4, 2).unwrap();
        let x = Tensor::new(vec![1, 4], vec![0.3, -0.2, 0.8, 0.1]).unwrap();
        let full = multi_head_self_attention_full(&x, &params).unwrap();
        for a in &full.attention {
            assert_eq!(a.values(), vec![1.0]);
        }
        let vs: Vec<Tensor> = params
            .heads
            .iter()
            .map(|h| x.matmul(&h.wv).unwrap())
            .collect();
        let expect = Tensor::concat(&vs, 1).unwrap().matmul(&params.out_proj).unwrap();
        assert_eq!(full.out.values(), expect.values());
    }

    #[test]
    fn mhsa_attention_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = MhsaParams::new(&mut rng, 4, 2).unwrap();
        for _ in 0..100 {
            let t = rng.gen_range(2..6);
            let x = Tensor::new(vec![t, 4], (0..t * 4).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .unwrap();
            let full = multi_head_self_attention_full(&x, &params).unwrap();
            for a in &full.attention {
                let v = a.values();
                for r in 0..t {
                    let s: f64 = v[r * t..(r + 1) * t].iter().sum();
                    assert!((s - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn mhsa_identical_rows_give_identical_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = MhsaParams::new(&mut rng, 4, 2).unwrap();
        let row = [0.4, -0.6, 0.2, 0.9];
        let x = Tensor::new(vec![3, 4], row.repeat(3)).unwrap();
        let full = multi_head_self_attention_full(&x, &params).unwrap();
        for a in &full.attention {
            let v = a.values();
            for r in 1..3 {
                assert_eq!(&v[r * 3..(r + 1) * 3], &v[0..3]);
            }
        }
    }

    #[test]
    fn mhsa_rejects_indivisible_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        assert!(MhsaParams::new(&mut rng, 5, 2).is_err());
    }
}
