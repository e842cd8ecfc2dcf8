//! Versioned JSON checkpoint: model parameters, normalizer statistics,
//! Q-tables, and SAC parameters, restorable into a ready-to-evaluate state.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GraphMode, ModelConfig};
use crate::data::Normalizer;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::metrics::ScoreConvention;
use crate::model::ModelState;
use crate::rl::AgentBank;
use crate::sac::{SacConfig, SacPolicy};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedParam {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub graph_mode: GraphMode,
    pub in_channels: usize,
    pub use_tau: bool,
    pub model_cfg: ModelConfig,
    pub target_scale: f64,
    pub score_convention: ScoreConvention,
    pub soh_mode: bool,
    pub params: Vec<NamedParam>,
    pub sac_cfg: Option<SacConfig>,
    pub sac_params: Vec<NamedParam>,
    pub qbank: Option<AgentBank>,
    pub normalizer: Normalizer,
    /// Edge-list text of the channel-correlation graph, when that mode is on.
    pub channel_graph: Option<String>,
}

fn dump_params(params: &[crate::Tensor]) -> Vec<NamedParam> {
    params
        .iter()
        .map(|p| NamedParam {
            shape: p.shape(),
            values: p.values(),
        })
        .collect()
}

fn restore_params(params: &[crate::Tensor], saved: &[NamedParam], what: &str) -> Result<()> {
    if params.len() != saved.len() {
        return Err(Error::Checkpoint(format!(
            "{what}: expected {} parameter tensors, found {}",
            params.len(),
            saved.len()
        )));
    }
    for (i, (p, s)) in params.iter().zip(saved).enumerate() {
        if p.shape() != s.shape {
            return Err(Error::Checkpoint(format!(
                "{what}: tensor {i} shape {:?} != saved {:?}",
                p.shape(),
                s.shape
            )));
        }
        p.set_values(s.values.clone())?;
    }
    Ok(())
}

impl Checkpoint {
    pub fn capture(
        model: &ModelState,
        model_cfg: &ModelConfig,
        policy: Option<&SacPolicy>,
        qbank: Option<&AgentBank>,
        normalizer: &Normalizer,
        score_convention: ScoreConvention,
        soh_mode: bool,
        channel_graph: Option<&Graph>,
    ) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            graph_mode: model.graph_mode,
            in_channels: model.in_channels,
            use_tau: model.tau.is_some(),
            model_cfg: model_cfg.clone(),
            target_scale: model.target_scale,
            score_convention,
            soh_mode,
            params: dump_params(&model.params()),
            sac_cfg: policy.map(|p| p.cfg.clone()),
            sac_params: policy.map(|p| dump_params(&p.params())).unwrap_or_default(),
            qbank: qbank.cloned(),
            normalizer: normalizer.clone(),
            channel_graph: channel_graph.map(Graph::to_edge_list),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        std::fs::write(path, json).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("parse: {e}")))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version {} does not match supported version {CHECKPOINT_VERSION}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn restore_model(&self) -> Result<ModelState> {
        let mut rng = ChaCha8Rng::seed_from_u64(0); // overwritten below
        let model = ModelState::new(
            &mut rng,
            &self.model_cfg,
            self.in_channels,
            self.use_tau,
            self.graph_mode,
            self.target_scale,
        )?;
        restore_params(&model.params(), &self.params, "model")?;
        Ok(model)
    }

    pub fn restore_policy(&self) -> Result<Option<SacPolicy>> {
        let Some(cfg) = &self.sac_cfg else {
            return Ok(None);
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let policy = SacPolicy::new(&mut rng, cfg.clone())?;
        restore_params(&policy.params(), &self.sac_params, "sac")?;
        policy.sync_targets();
        Ok(Some(policy))
    }

    pub fn restore_channel_graph(&self) -> Result<Option<Graph>> {
        self.channel_graph
            .as_deref()
            .map(Graph::from_edge_list)
            .transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::data::{Normalizer, SensorWindow};

    fn toy_checkpoint() -> Checkpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ModelConfig {
            gat_out: 4,
            gat_heads: 2,
            hidden: 4,
            dynamics_hidden: 4,
            time_embed_hidden: 4,
            time_embed_dim: 2,
            ..ModelConfig::default()
        };
        let model =
            ModelState::new(&mut rng, &cfg, 3, true, GraphMode::Temporal, 50.0).unwrap();
        let window = SensorWindow {
            unit_id: 1,
            data: vec![vec![1.0, 2.0, 3.0]; 4],
            t_norm: vec![0.25, 0.5, 0.75, 1.0],
            label: 1.0,
            broken: false,
            padded: false,
            end_cycle: 4,
        };
        let norm = Normalizer::fit(std::slice::from_ref(&window)).unwrap();
        Checkpoint::capture(
            &model,
            &cfg,
            None,
            None,
            &norm,
            ScoreConvention::Paper,
            false,
            None,
        )
    }

    #[test]
    fn round_trip_preserves_parameters() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = toy_checkpoint();
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        let model = loaded.restore_model().unwrap();
        for (p, s) in model.params().iter().zip(&ckpt.params) {
            assert_eq!(p.values(), s.values);
        }
        assert_eq!(loaded.normalizer, ckpt.normalizer);
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut ckpt = toy_checkpoint();
        ckpt.version = 99;
        ckpt.save(&path).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("version")),
            other => panic!("expected version error, got {:?}", other.err()),
        }
    }

    #[test]
    fn corrupt_file_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        std::fs::write(&path, "{ not json").unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("parse")),
            other => panic!("expected parse error, got {:?}", other.err()),
        }
    }
}
