//! Four independent tabular Q-learning agents, one per physics-loss weight,
//! rewarded by validation-RMSE improvement.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::PhysicsWeights;

pub const AGENT1_ACTIONS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
pub const AGENT2_ACTIONS: [f64; 6] = [0.01, 0.05, 0.1, 0.5, 1.0, 2.0];
pub const AGENT3_ACTIONS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];
pub const AGENT4_ACTIONS: [f64; 6] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0];

/// Log-spaced interior edges; bin count = edges.len() + 1.
pub fn log_spaced_edges(lo: f64, hi: f64, n_edges: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi > lo && n_edges >= 1);
    let (llo, lhi) = (lo.log10(), hi.log10());
    (0..n_edges)
        .map(|i| {
            let f = if n_edges == 1 {
                0.0
            } else {
                i as f64 / (n_edges - 1) as f64
            };
            10f64.powf(llo + f * (lhi - llo))
        })
        .collect()
}

/// Index of the half-open interval containing `x`; underflow clamps to bin 0,
/// overflow to the last bin.
pub fn discretize_state(x: f64, bin_edges: &[f64]) -> Result<usize> {
    if x.is_nan() {
        return Err(Error::NonFinite("discretize_state".into()));
    }
    Ok(bin_edges.iter().filter(|&&e| e <= x).count())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAgent {
    pub action_space: Vec<f64>,
    pub q_table: Vec<Vec<f64>>, // bins × actions
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
    pub bin_edges: Vec<f64>,
}

impl QAgent {
    pub fn new(
        action_space: Vec<f64>,
        bin_edges: Vec<f64>,
        alpha: f64,
        gamma: f64,
        epsilon: f64,
        epsilon_decay: f64,
        epsilon_floor: f64,
    ) -> QAgent {
        let bins = bin_edges.len() + 1;
        QAgent {
            q_table: vec![vec![0.0; action_space.len()]; bins],
            action_space,
            alpha,
            gamma,
            epsilon,
            epsilon_decay,
            epsilon_floor,
            bin_edges,
        }
    }

    pub fn state_bin(&self, x: f64) -> Result<usize> {
        discretize_state(x, &self.bin_edges)
    }

    /// ε-greedy; greedy ties break toward the lowest index (smallest weight).
    pub fn select_action(&self, state_bin: usize, rng: &mut ChaCha8Rng) -> (usize, f64) {
        let idx = if rng.gen::<f64>() < self.epsilon {
            rng.gen_range(0..self.action_space.len())
        } else {
            let row = &self.q_table[state_bin];
            let mut best = 0;
            for (i, &q) in row.iter().enumerate() {
                if q > row[best] {
                    best = i;
                }
            }
            best
        };
        (idx, self.action_space[idx])
    }

    /// Q(s,a) ← Q(s,a) + α[r + γ max_a' Q(s',a') − Q(s,a)].
    pub fn q_update(&mut self, s: usize, a: usize, r: f64, s_next: usize) {
        let max_next = self.q_table[s_next]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let q = self.q_table[s][a];
        self.q_table[s][a] = q + self.alpha * (r + self.gamma * max_next - q);
    }

    pub fn decay_epsilon(&mut self) {
        self.epsilon = (self.epsilon * self.epsilon_decay).max(self.epsilon_floor);
    }
}

/// r = 10 · (prev_rmse − valid_rmse).
pub fn compute_reward(prev_rmse: f64, valid_rmse: f64) -> f64 {
    10.0 * (prev_rmse - valid_rmse)
}

/// The four agents plus the transition bookkeeping shared between validation
/// rounds. All four share one reward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentBank {
    pub agents: [QAgent; 4],
    pub last: Option<[(usize, usize); 4]>, // (state bin, action index) per agent
    pub prev_rmse: Option<f64>,
}

pub struct BankConfig {
    pub bins: usize,
    pub state_lo: f64,
    pub state_hi: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub epsilon_decay: f64,
    pub epsilon_floor: f64,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig {
            bins: 8,
            state_lo: 1e-6,
            state_hi: 1e2,
            alpha: 0.1,
            gamma: 0.9,
            epsilon: 0.3,
            epsilon_decay: 0.95,
            epsilon_floor: 0.02,
        }
    }
}

impl AgentBank {
    pub fn new(cfg: &BankConfig) -> AgentBank {
        let edges = log_spaced_edges(cfg.state_lo, cfg.state_hi, cfg.bins - 1);
        let mk = |actions: &[f64]| {
            QAgent::new(
                actions.to_vec(),
                edges.clone(),
                cfg.alpha,
                cfg.gamma,
                cfg.epsilon,
                cfg.epsilon_decay,
                cfg.epsilon_floor,
            )
        };
        AgentBank {
            agents: [
                mk(&AGENT1_ACTIONS),
                mk(&AGENT2_ACTIONS),
                mk(&AGENT3_ACTIONS),
                mk(&AGENT4_ACTIONS),
            ],
            last: None,
            prev_rmse: None,
        }
    }

    /// One validation round: update all four agents with the shared reward
    /// against their stored transition, pick new actions from the fresh
    /// states, decay ε, and return the chosen weights. The first call only
    /// selects (no prior transition exists).
    pub fn step(
        &mut self,
        states: [f64; 4],
        valid_rmse: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(PhysicsWeights, Option<f64>)> {
        let bins: Vec<usize> = self
            .agents
            .iter()
            .zip(states)
            .map(|(a, s)| a.state_bin(s))
            .collect::<Result<_>>()?;
        let reward = match (self.prev_rmse, self.last) {
            (Some(prev), Some(last)) => {
                let r = compute_reward(prev, valid_rmse);
                for (i, agent) in self.agents.iter_mut().enumerate() {
                    let (s, a) = last[i];
                    agent.q_update(s, a, r, bins[i]);
                }
                Some(r)
            }
            _ => None,
        };
        let mut picks = [(0usize, 0usize); 4];
        let mut weights = [0.0f64; 4];
        for (i, agent) in self.agents.iter_mut().enumerate() {
            let (idx, w) = agent.select_action(bins[i], rng);
            picks[i] = (bins[i], idx);
            weights[i] = w;
            agent.decay_epsilon();
        }
        self.last = Some(picks);
        self.prev_rmse = Some(valid_rmse);
        Ok((
            PhysicsWeights::new(weights[0], weights[1], weights[2], weights[3])?,
            reward,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn test_agent(epsilon: f64) -> QAgent {
        QAgent::new(
            AGENT1_ACTIONS.to_vec(),
            log_spaced_edges(1e-6, 1e2, 7),
            0.5,
            0.9,
            epsilon,
            0.95,
            0.02,
        )
    }

    #[test]
    fn discretize_cases() {
        let edges = [1e-4, 1e-2, 1.0];
        assert_eq!(discretize_state(0.0, &edges).unwrap(), 0);
        assert_eq!(discretize_state(0.5, &edges).unwrap(), 2);
        assert_eq!(discretize_state(50.0, &edges).unwrap(), 3);
        assert!(discretize_state(f64::NAN, &edges).is_err());
    }

    #[test]
    fn greedy_selection_and_tie_break() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut agent = test_agent(0.0);
        agent.q_table[0] = vec![0.0, 5.0, 1.0, 0.0, 0.0, 0.0];
        assert_eq!(agent.select_action(0, &mut rng).0, 1);
        agent.q_table[0] = vec![0.0; 6];
        assert_eq!(agent.select_action(0, &mut rng).0, 0, "ties break to the smallest weight");
    }

    #[test]
    fn epsilon_one_is_near_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let agent = test_agent(1.0);
        let n = 10_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            counts[agent.select_action(0, &mut rng).0] += 1;
        }
        // binomial 3σ bound around n/6
        let p = 1.0 / 6.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
    }

    #[test]
    fn q_update_hand_cases() {
        let mut agent = test_agent(0.0);
        agent.q_update(0, 2, 1.0, 1); // zero table, α=0.5: Q = 0.5·1
        assert_eq!(agent.q_table[0][2], 0.5);

        let mut agent = test_agent(0.0);
        agent.alpha = 0.0;
        agent.q_table[0][1] = 3.0;
        agent.q_update(0, 1, 7.0, 0);
        assert_eq!(agent.q_table[0][1], 3.0, "α = 0 leaves the table unchanged");

        let mut agent = test_agent(0.0);
        agent.alpha = 1.0;
        agent.gamma = 0.0;
        agent.q_table[0][1] = 2.0;
        agent.q_update(0, 1, 0.0, 0);
        assert_eq!(agent.q_table[0][1], 0.0, "rule collapses to r");
    }

    #[test]
    fn q_update_touches_one_cell() {
        let mut agent = test_agent(0.0);
        let before = agent.q_table.clone();
        agent.q_update(2, 3, 1.5, 4);
        for (s, row) in agent.q_table.iter().enumerate() {
            for (a, &q) in row.iter().enumerate() {
                if (s, a) != (2, 3) {
                    assert_eq!(q, before[s][a]);
                }
            }
        }
    }

    #[test]
    fn reward_formula() {
        assert!((compute_reward(0.5, 0.4) - 1.0).abs() < 1e-12);
        assert_eq!(compute_reward(0.7, 0.7), 0.0);
        assert!((compute_reward(0.4, 0.5) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn bank_first_call_selects_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bank = AgentBank::new(&BankConfig::default());
        let (_, reward) = bank.step([0.1; 4], 1.0, &mut rng).unwrap();
        assert!(reward.is_none());
        assert!(bank.last.is_some());
    }

    #[test]
    fn improving_rmse_raises_all_updated_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bank = AgentBank::new(&BankConfig::default());
        let (_, _) = bank.step([0.1; 4], 1.0, &mut rng).unwrap();
        let picked = bank.last.unwrap();
        let (_, reward) = bank.step([0.1; 4], 0.5, &mut rng).unwrap();
        assert!(reward.unwrap() > 0.0);
        for (i, agent) in bank.agents.iter().enumerate() {
            let (s, a) = picked[i];
            assert!(agent.q_table[s][a] > 0.0, "agent {i} entry must strictly increase");
        }
    }

    #[test]
    fn emitted_weights_stay_in_action_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bank = AgentBank::new(&BankConfig::default());
        for round in 0..50 {
            let rmse = 1.0 / (round + 1) as f64;
            let (w, _) = bank.step([0.3, 0.01, 2.0, 0.0], rmse, &mut rng).unwrap();
            assert!(AGENT1_ACTIONS.contains(&w.w1));
            assert!(AGENT2_ACTIONS.contains(&w.w2));
            assert!(AGENT3_ACTIONS.contains(&w.w3));
            assert!(AGENT4_ACTIONS.contains(&w.w4));
        }
    }

    #[test]
    fn greedy_fixpoint_with_converged_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut bank = AgentBank::new(&BankConfig {
            epsilon: 0.0,
            epsilon_floor: 0.0,
            ..BankConfig::default()
        });
        for agent in &mut bank.agents {
            for row in &mut agent.q_table {
                row[3] = 10.0;
            }
        }
        let (w1, _) = bank.step([0.1; 4], 1.0, &mut rng).unwrap();
        let (w2, _) = bank.step([0.1; 4], 1.0, &mut rng).unwrap();
        assert_eq!(w1, w2, "greedy policy on identical states is a fixpoint");
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut bank = AgentBank::new(&BankConfig::default());
        let mut prev = bank.agents[0].epsilon;
        for _ in 0..200 {
            bank.step([0.1; 4], 1.0, &mut rng).unwrap();
            let e = bank.agents[0].epsilon;
            assert!(e <= prev);
            assert!(e >= 0.02);
            prev = e;
        }
        assert_eq!(prev, 0.02);
    }

    #[test]
    fn bandit_convergence_greedy_picks_best_action() {
        // deterministic 1-state, 6-action bandit: action 4 (weight 5.0) pays 1,
        // the rest pay 0; after ε-decayed rounds the greedy policy must pick it
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut agent = QAgent::new(
                AGENT1_ACTIONS.to_vec(),
                vec![],
                0.1,
                0.9,
                0.3,
                0.99,
                0.02,
            );
            for _ in 0..500 {
                let (a, _) = agent.select_action(0, &mut rng);
                let r = if a == 4 { 1.0 } else { 0.0 };
                agent.q_update(0, a, r, 0);
                agent.decay_epsilon();
            }
            agent.epsilon = 0.0;
            assert_eq!(agent.select_action(0, &mut rng).0, 4, "seed {seed}");
        }
    }
}
