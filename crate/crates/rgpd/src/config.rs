//! Run configuration: a sectioned key = value (TOML) file mirrored by serde
//! defaults, so a minimal config stays minimal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ScoreConvention;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GraphMode {
    /// Nodes are time steps on a chain; node features are the channels.
    #[default]
    Temporal,
    /// Nodes are channels, linked where |pearson| exceeds the threshold;
    /// the recurrence runs over time steps.
    ChannelCorrelation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// CMAPSS-format text file; mutually exclusive with the synthetic source.
    pub cmapss_path: Option<String>,
    /// Sensor indices (0-based) to drop as uninformative.
    pub drop_channels: Vec<usize>,
    pub synthetic: bool,
    pub synth_units: usize,
    pub synth_min_len: usize,
    pub synth_max_len: usize,
    pub synth_channels: usize,
    pub synth_noise: f64,
    /// Label windows with the SOH series instead of RUL (synthetic only).
    pub soh_mode: bool,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            cmapss_path: None,
            drop_channels: Vec::new(),
            synthetic: true,
            synth_units: 50,
            synth_min_len: 60,
            synth_max_len: 100,
            synth_channels: 6,
            synth_noise: 0.02,
            soh_mode: false,
            train_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gat_out: usize,
    pub gat_heads: usize,
    pub gat_slope: f64,
    pub hidden: usize,
    pub tau_k1: usize,
    pub tau_k2: usize,
    pub tau_dilation: usize,
    pub mhsa_heads: usize,
    pub dynamics_hidden: usize,
    pub time_embed_hidden: usize,
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gat_out: 16,
            gat_heads: 2,
            gat_slope: 0.2,
            hidden: 16,
            tau_k1: 3,
            tau_k2: 3,
            tau_dilation: 2,
            mhsa_heads: 2,
            dynamics_hidden: 16,
            time_embed_hidden: 8,
            time_embed_dim: 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Step scheduler: lr ← lr × factor every `lr_decay_every` epochs.
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
    /// Parameter update every k accumulated batches.
    pub grad_accum_k: usize,
    pub alpha_mixup: f64,
    pub use_rl: bool,
    pub use_mixup: bool,
    pub use_tau: bool,
    pub graph_mode: GraphMode,
    pub window_sizes: Vec<usize>,
    pub stride: usize,
    pub rul_cap: f64,
    /// |pearson| threshold for the channel-correlation graph.
    pub corr_tau: f64,
    /// Outer multiplier on the physics loss.
    pub w_pde: f64,
    /// Fixed inner physics weights when RL is off.
    pub fixed_physics_weight: f64,
    /// Validate (and step the Q-agents) every this many epochs.
    pub valid_every: usize,
    pub score_convention: ScoreConvention,
    pub sac_batch: usize,
    pub sac_capacity: usize,
    pub sac_a_max: f64,
    pub sac_alpha_ent: f64,
    pub sac_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            lr_decay_factor: 0.5,
            lr_decay_every: 20,
            grad_accum_k: 1,
            alpha_mixup: 0.2,
            use_rl: true,
            use_mixup: true,
            use_tau: true,
            graph_mode: GraphMode::Temporal,
            window_sizes: vec![20, 30, 40],
            stride: 1,
            rul_cap: 125.0,
            corr_tau: 0.5,
            w_pde: 1.0,
            fixed_physics_weight: 1.0,
            valid_every: 1,
            score_convention: ScoreConvention::Paper,
            sac_batch: 32,
            sac_capacity: 10_000,
            sac_a_max: 0.5,
            sac_alpha_ent: 0.2,
            sac_lr: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        for (name, v) in [
            ("epochs", t.epochs),
            ("batch_size", t.batch_size),
            ("grad_accum_k", t.grad_accum_k),
            ("stride", t.stride),
            ("valid_every", t.valid_every),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("train.{name} must be positive")));
            }
        }
        if t.window_sizes.is_empty() || t.window_sizes.contains(&0) {
            return Err(Error::invalid("train.window_sizes must be nonempty and positive"));
        }
        if !(t.lr > 0.0 && t.rul_cap > 0.0 && t.w_pde >= 0.0) {
            return Err(Error::invalid("train.lr, rul_cap must be > 0 and w_pde >= 0"));
        }
        if !(0.0 < t.sac_a_max && t.sac_a_max < 1.0) {
            return Err(Error::invalid("train.sac_a_max must lie in (0, 1)"));
        }
        if self.data.cmapss_path.is_some() && self.data.synthetic {
            return Err(Error::invalid(
                "data.cmapss_path and data.synthetic are mutually exclusive",
            ));
        }
        if self.data.cmapss_path.is_none() && !self.data.synthetic {
            return Err(Error::invalid("no dataset source configured"));
        }
        if self.data.soh_mode && self.data.cmapss_path.is_some() {
            return Err(Error::invalid("soh_mode applies to the synthetic source only"));
        }
        if !(0.0 < self.data.train_fraction && self.data.train_fraction < 1.0) {
            return Err(Error::invalid("data.train_fraction must lie in (0, 1)"));
        }
        if self.model.hidden % self.model.mhsa_heads != 0 {
            return Err(Error::invalid(format!(
                "model.hidden {} must divide by mhsa_heads {}",
                self.model.hidden, self.model.mhsa_heads
            )));
        }
        if self.model.tau_k1 % 2 == 0 || self.model.tau_k2 % 2 == 0 {
            return Err(Error::invalid("TAU kernel sizes must be odd"));
        }
        Ok(())
    }
}
