//! Model assembly: graph attention → graph-convolutional recurrence →
//! (optional) SAC feature modulation → temporal attention → time embedding →
//! linear head, with the dynamics net for the physics residuals.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::config::{GraphMode, ModelConfig};
use crate::data::SensorWindow;
use crate::error::{Error, Result};
use crate::graph::{gat_forward, gcrn_unroll, GatParams, GcrnParams, Graph};
use crate::nn::{xavier, zeros_param, Activation, Mlp};
use crate::physics::DynamicsNet;
use crate::sac::{modulate, summarize_state};
use crate::tau::{multi_head_self_attention, tau_forward, MhsaParams, TauParams};

pub struct ModelState {
    pub gat: GatParams,
    pub gcrn: GcrnParams,
    /// Exactly one of `tau` / `mhsa` is present (the use_tau ablation swap).
    pub tau: Option<TauParams>,
    pub mhsa: Option<MhsaParams>,
    pub dynamics: DynamicsNet,
    pub time_embed: Mlp,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub graph_mode: GraphMode,
    pub in_channels: usize,
    pub hidden: usize,
    /// Targets are trained divided by this (RUL cap, or 1 for SOH).
    pub target_scale: f64,
}

impl ModelState {
    pub fn new(
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        in_channels: usize,
        use_tau: bool,
        graph_mode: GraphMode,
        target_scale: f64,
    ) -> Result<ModelState> {
        let gat_in = match graph_mode {
            GraphMode::Temporal => in_channels,
            GraphMode::ChannelCorrelation => 1,
        };
        let gat = GatParams::new(rng, gat_in, cfg.gat_out, cfg.gat_heads, cfg.gat_slope)?;
        let gcrn = GcrnParams::new(rng, cfg.gat_out, cfg.hidden);
        let (tau, mhsa) = if use_tau {
            (
                Some(TauParams::new(rng, cfg.hidden, cfg.tau_k1, cfg.tau_k2, cfg.tau_dilation)?),
                None,
            )
        } else {
            (None, Some(MhsaParams::new(rng, cfg.hidden, cfg.mhsa_heads)?))
        };
        let dynamics = DynamicsNet::new(rng, cfg.hidden, cfg.dynamics_hidden);
        let time_embed = Mlp::new(
            rng,
            &[1, cfg.time_embed_hidden, cfg.time_embed_dim],
            Activation::Tanh,
        );
        let head_w = xavier(rng, cfg.hidden + cfg.time_embed_dim, 1);
        let head_b = zeros_param(vec![1, 1]);
        Ok(ModelState {
            gat,
            gcrn,
            tau,
            mhsa,
            dynamics,
            time_embed,
            head_w,
            head_b,
            graph_mode,
            in_channels,
            hidden: cfg.hidden,
            target_scale,
        })
    }

    pub fn param_groups(&self) -> Vec<(&'static str, Vec<Tensor>)> {
        let mut groups = vec![
            ("gat", self.gat.params()),
            ("gcrn", self.gcrn.params()),
        ];
        if let Some(tau) = &self.tau {
            groups.push(("tau", tau.params()));
        }
        if let Some(mhsa) = &self.mhsa {
            groups.push(("mhsa", mhsa.params()));
        }
        groups.push(("dynamics", self.dynamics.params()));
        groups.push(("time_embed", self.time_embed.params()));
        groups.push(("head", vec![self.head_w.clone(), self.head_b.clone()]));
        groups
    }

    pub fn params(&self) -> Vec<Tensor> {
        self.param_groups()
            .into_iter()
            .flat_map(|(_, p)| p)
            .collect()
    }

    pub fn param_counts(&self) -> Vec<(&'static str, usize)> {
        self.param_groups()
            .into_iter()
            .map(|(name, ps)| (name, ps.iter().map(Tensor::numel).sum()))
            .collect()
    }

    /// The graph for a window of length T in the current mode. Channel mode
    /// ignores T; the caller passes the correlation graph explicitly instead.
    pub fn temporal_graph(window_len: usize) -> Result<Graph> {
        Graph::temporal_chain(window_len)
    }
}

/// Per-step features S (T×hidden) for one window.
fn encode_window(model: &ModelState, w: &SensorWindow, graph: &Graph) -> Result<Tensor> {
    let t = w.size();
    let d = w.data[0].len();
    match model.graph_mode {
        GraphMode::Temporal => {
            if graph.num_nodes != t {
                return Err(Error::invalid(format!(
                    "gat: temporal graph has {} nodes but the window has {t} steps",
                    graph.num_nodes
                )));
            }
            let x = Tensor::new(vec![t, d], w.data.concat())?;
            let h = gat_forward(&x, graph, &model.gat)
                .map_err(|e| Error::invalid(format!("gat: {e}")))?;
            let states = gcrn_unroll(&[h], graph, &model.gcrn, None)
                .map_err(|e| Error::invalid(format!("gcrn: {e}")))?;
            Ok(states.into_iter().next().unwrap())
        }
        GraphMode::ChannelCorrelation => {
            if graph.num_nodes != d {
                return Err(Error::invalid(format!(
                    "gat: channel graph has {} nodes but the window has {d} channels",
                    graph.num_nodes
                )));
            }
            let mut xs = Vec::with_capacity(t);
            for row in &w.data {
                let x = Tensor::new(vec![d, 1], row.clone())?;
                xs.push(
                    gat_forward(&x, graph, &model.gat)
                        .map_err(|e| Error::invalid(format!("gat: {e}")))?,
                );
            }
            let states = gcrn_unroll(&xs, graph, &model.gcrn, None)
                .map_err(|e| Error::invalid(format!("gcrn: {e}")))?;
            // pool each step's node states into one feature row
            let rows: Vec<Tensor> = states
                .iter()
                .map(|h| h.mean_axis(0))
                .collect::<Result<_>>()?;
            Tensor::concat(&rows, 0)
        }
    }
}

pub struct EncodedBatch {
    pub features: Vec<Tensor>, // S per window, each T×hidden
    /// Batch-mean pooled hidden summary: the SAC state.
    pub state: Vec<f64>,
}

pub fn encode_batch(
    model: &ModelState,
    windows: &[&SensorWindow],
    graph: &Graph,
) -> Result<EncodedBatch> {
    if windows.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let t = windows[0].size();
    if windows.iter().any(|w| w.size() != t) {
        return Err(Error::invalid("batch windows must share one window size"));
    }
    let features: Vec<Tensor> = windows
        .iter()
        .map(|w| encode_window(model, w, graph))
        .collect::<Result<_>>()?;
    let mut state = vec![0.0; model.hidden];
    for s in &features {
        for (acc, v) in state.iter_mut().zip(summarize_state(s)?) {
            *acc += v;
        }
    }
    for v in &mut state {
        *v /= features.len() as f64;
    }
    Ok(EncodedBatch { state, features })
}

pub struct ForwardOutput {
    /// Last-step predictions, B×1, in target-scale units.
    pub preds: Tensor,
    /// Full predicted sequences, B×T.
    pub y_seq: Tensor,
    /// Dynamics-net outputs, B×T.
    pub n_u: Tensor,
}

/// Finish the forward pass from encoded features. `action = None` is the
/// no-RL ablation (modulation skipped entirely); `Some(a)` scales features
/// by (1+a) first — with a = 0 both paths are bit-identical.
pub fn decode_batch(
    model: &ModelState,
    encoded: &EncodedBatch,
    windows: &[&SensorWindow],
    action: Option<&[f64]>,
) -> Result<ForwardOutput> {
    let t = windows[0].size();
    let mut seq_rows = Vec::with_capacity(windows.len());
    let mut nu_rows = Vec::with_capacity(windows.len());
    let mut pred_rows = Vec::with_capacity(windows.len());
    for (s, w) in encoded.features.iter().zip(windows) {
        let s_mod = match action {
            Some(a) => modulate(s, a).map_err(|e| Error::invalid(format!("modulate: {e}")))?,
            None => s.clone(),
        };
        let attended = match (&model.tau, &model.mhsa) {
            (Some(tau), _) => tau_forward(&s_mod.transpose()?, tau)
                .map_err(|e| Error::invalid(format!("tau: {e}")))?
                .transpose()?,
            (None, Some(mhsa)) => multi_head_self_attention(&s_mod, mhsa)
                .map_err(|e| Error::invalid(format!("mhsa: {e}")))?,
            (None, None) => unreachable!("model always has an attention path"),
        };
        let t_col = Tensor::new(vec![t, 1], w.t_norm.clone())?;
        let t_emb = model
            .time_embed
            .forward(&t_col)
            .map_err(|e| Error::invalid(format!("time_embed: {e}")))?;
        let feats = Tensor::concat(&[attended, t_emb], 1)?;
        let y_seq = feats
            .matmul(&model.head_w)?
            .add_row_broadcast(&model.head_b)?; // T×1
        let n_u = model
            .dynamics
            .forward(&feats.slice_cols(0, model.hidden)?, &y_seq, &t_col)
            .map_err(|e| Error::invalid(format!("dynamics: {e}")))?;
        pred_rows.push(y_seq.slice_rows(t - 1, t)?);
        seq_rows.push(y_seq.transpose()?);
        nu_rows.push(n_u.transpose()?);
    }
    Ok(ForwardOutput {
        preds: Tensor::concat(&pred_rows, 0)?,
        y_seq: Tensor::concat(&seq_rows, 0)?,
        n_u: Tensor::concat(&nu_rows, 0)?,
    })
}

/// Convenience single-shot forward with a fixed action.
pub fn forward_batch(
    model: &ModelState,
    windows: &[&SensorWindow],
    graph: &Graph,
    action: Option<&[f64]>,
) -> Result<ForwardOutput> {
    let encoded = encode_batch(model, windows, graph)?;
    decode_batch(model, &encoded, windows, action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{label_rul, make_windows, synth_degradation, SynthConfig};
    use rand::SeedableRng;

    fn toy_windows(t: usize, n: usize) -> Vec<SensorWindow> {
        let cfg = SynthConfig {
            n_units: n,
            min_len: t + 5,
            max_len: t + 10,
            n_channels: 3,
            noise_sigma: 0.01,
        };
        synth_degradation(&cfg, 11)
            .iter()
            .map(|u| {
                let labels = label_rul(u, 50.0).unwrap();
                make_windows(u, &labels, &[t], 1, 0.0).unwrap().pop().unwrap()
            })
            .collect()
    }

    fn small_model(use_tau: bool, mode: GraphMode) -> ModelState {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = ModelConfig {
            gat_out: 4,
            gat_heads: 2,
            hidden: 4,
            dynamics_hidden: 4,
            time_embed_hidden: 4,
            time_embed_dim: 2,
            ..ModelConfig::default()
        };
        ModelState::new(&mut rng, &cfg, 3, use_tau, mode, 50.0).unwrap()
    }

    #[test]
    fn batch_of_b_windows_gives_b_predictions() {
        let model = small_model(true, GraphMode::Temporal);
        let ws = toy_windows(8, 5);
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        let graph = Graph::temporal_chain(8).unwrap();
        let out = forward_batch(&model, &refs, &graph, Some(&[0.1])).unwrap();
        assert_eq!(out.preds.shape(), vec![5, 1]);
        assert_eq!(out.y_seq.shape(), vec![5, 8]);
        assert_eq!(out.n_u.shape(), vec![5, 8]);
        // prediction is the sequence's last step
        for b in 0..5 {
            assert_eq!(out.preds.value_at(b), out.y_seq.value_at(b * 8 + 7));
        }
    }

    #[test]
    fn no_rl_path_equals_pinned_zero_action_bitwise() {
        let model = small_model(true, GraphMode::Temporal);
        let ws = toy_windows(8, 3);
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        let graph = Graph::temporal_chain(8).unwrap();
        let skipped = forward_batch(&model, &refs, &graph, None).unwrap();
        let pinned = forward_batch(&model, &refs, &graph, Some(&[0.0])).unwrap();
        for (a, b) in skipped.y_seq.values().iter().zip(pinned.y_seq.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in skipped.n_u.values().iter().zip(pinned.n_u.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn every_parameter_group_receives_gradient() {
        for use_tau in [true, false] {
            let model = small_model(use_tau, GraphMode::Temporal);
            let ws = toy_windows(8, 4);
            let refs: Vec<&SensorWindow> = ws.iter().collect();
            let graph = Graph::temporal_chain(8).unwrap();
            let out = forward_batch(&model, &refs, &graph, Some(&[0.1])).unwrap();
            // supervised + physics-flavored probe loss touching n_u as well
            let loss = out.preds.square().mean().add(&out.n_u.square().mean()).unwrap();
            loss.backward().unwrap();
            for (name, params) in model.param_groups() {
                let touched = params.iter().any(|p| {
                    p.grad()
                        .map(|g| g.iter().any(|&v| v != 0.0))
                        .unwrap_or(false)
                });
                assert!(touched, "group {name} got no gradient (use_tau={use_tau})");
            }
        }
    }

    #[test]
    fn ablation_swaps_exactly_the_attention_group() {
        let with_tau = small_model(true, GraphMode::Temporal);
        let with_mhsa = small_model(false, GraphMode::Temporal);
        let a: Vec<(&str, usize)> = with_tau.param_counts();
        let b: Vec<(&str, usize)> = with_mhsa.param_counts();
        let names_a: Vec<&str> = a.iter().map(|(n, _)| *n).collect();
        let names_b: Vec<&str> = b.iter().map(|(n, _)| *n).collect();
        assert_eq!(names_a, vec!["gat", "gcrn", "tau", "dynamics", "time_embed", "head"]);
        assert_eq!(names_b, vec!["gat", "gcrn", "mhsa", "dynamics", "time_embed", "head"]);
        for ((na, ca), (nb, cb)) in a.iter().zip(&b) {
            if *na != "tau" {
                assert_eq!(na, nb);
                assert_eq!(ca, cb, "group {na} changed size under the ablation");
            }
        }
    }

    #[test]
    fn channel_correlation_mode_runs() {
        let model = small_model(true, GraphMode::ChannelCorrelation);
        let ws = toy_windows(6, 2);
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        // channels of the first window drive the graph
        let cols: Vec<Vec<f64>> = (0..3)
            .map(|c| ws[0].data.iter().map(|r| r[c]).collect())
            .collect();
        let graph = Graph::channel_correlation(&cols, 0.5).unwrap();
        assert_eq!(graph.num_nodes, 3);
        let out = forward_batch(&model, &refs, &graph, Some(&[0.0])).unwrap();
        assert_eq!(out.preds.shape(), vec![2, 1]);
        assert_eq!(out.y_seq.shape(), vec![2, 6]);
    }

    #[test]
    fn forward_is_deterministic() {
        let model = small_model(true, GraphMode::Temporal);
        let ws = toy_windows(8, 3);
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        let graph = Graph::temporal_chain(8).unwrap();
        let a = forward_batch(&model, &refs, &graph, Some(&[0.2])).unwrap();
        let b = forward_batch(&model, &refs, &graph, Some(&[0.2])).unwrap();
        assert_eq!(a.y_seq.values(), b.y_seq.values());
    }

    #[test]
    fn mismatched_graph_is_named_in_the_error() {
        let model = small_model(true, GraphMode::Temporal);
        let ws = toy_windows(8, 1);
        let refs: Vec<&SensorWindow> = ws.iter().collect();
        let graph = Graph::temporal_chain(5).unwrap();
        match forward_batch(&model, &refs, &graph, None) {
            Err(err) => assert!(err.to_string().contains("gat"), "error was: {err}"),
            Ok(_) => panic!("mismatched graph should fail"),
        }
    }
}
