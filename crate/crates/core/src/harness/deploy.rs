//! The per-slot observe, route, act, learn loop.

use std::path::Path;
use std::time::Instant;

use crate::agent::{encode_pooled, select_action, Agent, EpisodeBatch, MapFeaturizer, PolicyInput, UpdateStats};
use crate::error::{Error, Result};
use crate::gate::{gate_objective, Expert, GateInput, GateLearner, GateMode, GateSample, GATE_INPUT_DIM, NUM_EXPERTS};
use crate::link::NUM_MCS;
use crate::nn::{Activation, Architecture, Net};
use crate::rng::{labels, RngStream, SeedTree};
use crate::world_model::{
    counterfactual_filter, frame_from, imagine_and_update_policy, wm_input_dim, ReplayBuffer, Transition, WmState, WorldModel,
    WM_OUTPUT_DIM,
};

use super::config::{ExperimentConfig, Scheme};
use super::env::RealEnv;
use super::metrics::MetricsRow;

/// Every learned component of one replica.
#[derive(Debug, Clone)]
pub struct Models {
    pub encoder: Net,
    pub agent: Agent,
    pub gate: GateLearner,
    pub wm: WorldModel,
}

const CHECKPOINTS: [&str; 5] = ["encoder.net", "policy.net", "baseline.net", "gate.net", "world_model.net"];

pub fn encoder_arch(cfg: &ExperimentConfig) -> Architecture {
    Architecture::mlp(crate::agent::ENCODER_INPUT_DIM, &[cfg.net.encoder_hidden], 1, Activation::Relu)
}

pub fn gate_arch(cfg: &ExperimentConfig) -> Architecture {
    Architecture::mlp(GATE_INPUT_DIM, &[cfg.gate.hidden], NUM_EXPERTS, Activation::Tanh)
}

impl Models {
    /// Freshly initialised nets with seeds drawn from `seeds`.
    pub fn fresh(cfg: &ExperimentConfig, seeds: &SeedTree) -> Result<Self> {
        let init = seeds.child(labels::POLICY_INIT);
        let policy = Net::build(
            &Architecture::tier(cfg.net.policy_tier, crate::agent::POLICY_INPUT_DIM, NUM_MCS),
            init.seed("policy"),
        )?;
        let baseline = Net::build(
            &Architecture::mlp(crate::agent::POLICY_INPUT_DIM, &[cfg.net.baseline_hidden], 1, Activation::Tanh),
            init.seed("baseline"),
        )?;
        let gate = Net::build(&gate_arch(cfg), init.seed("gate"))?;
        let encoder = Net::build(&encoder_arch(cfg), seeds.seed(labels::ENCODER))?;
        let wm = Net::build(
            &Architecture::mlp(wm_input_dim(cfg.wm.history), &cfg.net.wm_hidden, WM_OUTPUT_DIM, Activation::Tanh),
            seeds.seed(labels::WORLD_MODEL),
        )?;
        Self::assemble(cfg, encoder, policy, baseline, gate, wm)
    }

    fn assemble(cfg: &ExperimentConfig, encoder: Net, policy: Net, baseline: Net, gate: Net, wm: Net) -> Result<Self> {
        Ok(Self {
            encoder,
            agent: Agent::new(policy, baseline, cfg.train.policy_lr, cfg.train.baseline_lr, cfg.train.entropy_beta)?,
            gate: GateLearner::new(gate, cfg.gate.lr, cfg.gate_config(), cfg.gate.baseline_decay)?,
            wm: WorldModel::new(wm, cfg.wm.lr, cfg.wm.reward_weight, cfg.wm.batch)?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let nets = [&self.encoder, &self.agent.policy, &self.agent.baseline, &self.gate.net, &self.wm.net];
        for (name, net) in CHECKPOINTS.iter().zip(nets) {
            net.save(&dir.join(name))?;
        }
        Ok(())
    }

    /// Loads every checkpoint in `dir`; optimizer state starts fresh and the
    /// world model counts as trained.
    pub fn load(cfg: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let mut nets = Vec::with_capacity(CHECKPOINTS.len());
        for name in CHECKPOINTS {
            nets.push(Net::load(&dir.join(name))?);
        }
        let mut it = nets.into_iter();
        let mut next = || it.next().expect("five checkpoints");
        let mut models = Self::assemble(cfg, next(), next(), next(), next(), next())?;
        models.wm.trained = true;
        Ok(models)
    }

    /// Replaces the gate with a freshly initialised one.
    pub fn reset_gate(&mut self, cfg: &ExperimentConfig, seed: u64) -> Result<()> {
        self.gate = GateLearner::new(Net::build(&gate_arch(cfg), seed)?, cfg.gate.lr, cfg.gate_config(), cfg.gate.baseline_decay)?;
        Ok(())
    }
}

/// What the loop learns from its own slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Joint policy, baseline and gate REINFORCE plus supervised world model.
    Pretrain,
    /// Only the gate learns; the policy acts greedily.
    GateTraining,
    /// Greedy, no learning.
    Evaluate,
    /// Sampled actions, no learning; fills the replay buffer.
    Collect,
    Online(Scheme),
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Phase::Pretrain => "pretrain",
            Phase::GateTraining => "gate_training",
            Phase::Evaluate => "evaluate",
            Phase::Collect => "collect",
            Phase::Online(s) => s.as_str(),
        }
    }

    fn greedy_policy(self) -> bool {
        matches!(self, Phase::Evaluate | Phase::GateTraining | Phase::Online(Scheme::Frozen))
    }

    fn greedy_gate(self) -> bool {
        !matches!(self, Phase::Pretrain | Phase::GateTraining)
    }
}

#[derive(Debug, Clone)]
struct Pending {
    state: WmState,
    action: usize,
    reward: f64,
    map_present: bool,
}

/// Diagnostics of the most recent pretraining update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateLog {
    pub policy: Option<UpdateStats>,
    pub wm_loss: Option<f64>,
}

/// One replica's loop state.
pub struct Deployment {
    pub env: RealEnv,
    pub models: Models,
    pub phase: Phase,
    pub gate_mode: GateMode,
    pub filter: bool,
    pub oracle: bool,
    pub seed: u64,
    cfg: ExperimentConfig,
    featurizer: MapFeaturizer,
    action_rng: RngStream,
    gate_rng: RngStream,
    replay_rng: RngStream,
    pub replay: ReplayBuffer,
    wm_state: Option<WmState>,
    pending: Option<Pending>,
    last_map: f64,
    batch: EpisodeBatch,
    gate_batch: Vec<GateSample>,
    slots_run: u64,
    pub encode_calls: u64,
    pub filter_overrides: u64,
    pub last_update: UpdateLog,
}

impl Deployment {
    /// `seeds` names the replica's sampling streams; the environment carries its own.
    pub fn new(env: RealEnv, models: Models, phase: Phase, cfg: &ExperimentConfig, seeds: &SeedTree, seed: u64) -> Self {
        let featurizer = MapFeaturizer::new(&env.scene, cfg.scene.resolution);
        Self {
            featurizer,
            models,
            phase,
            gate_mode: cfg.gate.mode,
            filter: false,
            oracle: false,
            seed,
            cfg: cfg.clone(),
            action_rng: seeds.stream(labels::ACTIONS),
            gate_rng: seeds.stream(labels::GATE),
            replay_rng: seeds.stream(labels::REPLAY),
            replay: ReplayBuffer::new(cfg.wm.replay_capacity),
            wm_state: None,
            pending: None,
            last_map: 0.0,
            batch: EpisodeBatch::default(),
            gate_batch: Vec::new(),
            slots_run: 0,
            encode_calls: 0,
            filter_overrides: 0,
            last_update: UpdateLog::default(),
            env,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Policy input for a user position and feedback under the current gate.
    pub fn featurize(&mut self, user: &crate::scene::Point, fb: &crate::channel::FeedbackFeatures, greedy_gate: bool) -> Result<(Expert, GateInput, PolicyInput)> {
        let gate_input = GateInput::from_scene(&self.env.scene, user, self.cfg.scene.resolution);
        let expert = self.models.gate.choose(self.gate_mode, &gate_input, &mut self.gate_rng, greedy_gate)?;
        let map_power = if expert == Expert::PilotMap {
            self.encode_calls += 1;
            let dbm = encode_pooled(&self.featurizer.pooled(user), &self.models.encoder, &self.cfg.norm)?;
            Some(self.cfg.norm.power(dbm))
        } else {
            None
        };
        let input = PolicyInput {
            feedback: self.cfg.norm.feedback(fb),
            map_power,
        };
        Ok((expert, gate_input, input))
    }

    /// Executes one slot and returns its metrics row.
    pub fn run_slot(&mut self) -> Result<MetricsRow> {
        let started = Instant::now();
        let view = self.env.observe()?.clone();
        let (expert, gate_input, input) = self.featurize(&view.user.pos, &view.feedback, self.phase.greedy_gate())?;
        if view.dropped {
            self.last_map = 0.0;
        }
        if let Some(p) = input.map_power {
            self.last_map = p;
        }

        let frame = frame_from(self.last_map, &input.feedback);
        let state = match (&self.wm_state, view.dropped) {
            (Some(prev), false) => prev.pushed(frame),
            _ => WmState::filled(frame, self.cfg.wm.history),
        };
        if let Some(p) = self.pending.take() {
            if !view.dropped {
                self.replay.push(Transition {
                    state: p.state,
                    action: p.action,
                    reward: p.reward,
                    next_state: state.clone(),
                    map_present: p.map_present,
                });
            }
        }

        let proposed = if self.oracle {
            self.env.table().genie_best(&view.snr).0
        } else {
            let probs = self.models.agent.distribution(&input)?;
            select_action(&probs, &mut self.action_rng, self.phase.greedy_policy())
        };
        let action = if self.filter && self.models.wm.trained {
            let d = counterfactual_filter(&state, proposed, &mut self.models.wm, self.cfg.wm.safety_fraction)?;
            self.filter_overrides += u64::from(d.overridden);
            d.action
        } else {
            proposed
        };

        let tx = self.env.transmit(action)?;
        let reward = tx.throughput;
        self.pending = Some(Pending {
            state: state.clone(),
            action,
            reward,
            map_present: input.map_power.is_some(),
        });
        self.wm_state = Some(state);
        self.slots_run += 1;

        let (stage1, stage2) = self.learn(input, action, reward, gate_input, expert)?;
        Ok(MetricsRow {
            slot: view.slot,
            scheme: self.phase.label().to_string(),
            seed: self.seed,
            lambda: self.models.gate.config.lambda,
            expert: expert.label(),
            mcs: action,
            throughput: reward,
            genie_throughput: tx.genie_throughput,
            interactions: self.env.interactions(),
            wall_clock_ms: started.elapsed().as_secs_f64() * 1e3,
            stage1_loss: stage1,
            stage2_pred_reward: stage2,
            filter_overrides: self.filter_overrides,
        })
    }

    fn train_wm(&mut self, steps: usize) -> Result<Option<f64>> {
        if self.replay.len() < self.models.wm.batch {
            return Ok(None);
        }
        let mut loss = None;
        for _ in 0..steps {
            loss = Some(self.models.wm.train_step(&self.replay, &mut self.replay_rng)?);
        }
        Ok(loss)
    }

    fn learn(&mut self, input: PolicyInput, action: usize, reward: f64, gate_input: GateInput, expert: Expert) -> Result<(Option<f64>, Option<f64>)> {
        let objective = gate_objective(reward, expert, &self.models.gate.config);
        match self.phase {
            Phase::Evaluate | Phase::Collect | Phase::Online(Scheme::Frozen) => Ok((None, None)),
            Phase::Pretrain => {
                self.batch.push(input, action, reward);
                if self.gate_mode == GateMode::Learned {
                    self.gate_batch.push(GateSample {
                        input: gate_input,
                        expert,
                        objective,
                    });
                }
                if self.batch.len() < self.cfg.train.batch_slots {
                    return Ok((None, None));
                }
                let stats = self.models.agent.reinforce_update(&self.batch)?;
                self.batch.clear();
                if !self.gate_batch.is_empty() {
                    self.models.gate.update(&self.gate_batch)?;
                    self.gate_batch.clear();
                }
                let wm_loss = self.train_wm(self.cfg.train.wm_steps_per_update)?;
                self.last_update = UpdateLog {
                    policy: Some(stats),
                    wm_loss,
                };
                Ok((wm_loss, None))
            }
            Phase::GateTraining => {
                self.gate_batch.push(GateSample {
                    input: gate_input,
                    expert,
                    objective,
                });
                if self.gate_batch.len() >= self.cfg.train.batch_slots {
                    self.models.gate.update(&self.gate_batch)?;
                    self.gate_batch.clear();
                }
                Ok((None, None))
            }
            Phase::Online(Scheme::DirectRl) => {
                self.batch.push(input, action, reward);
                if self.batch.len() >= self.cfg.online.update_every {
                    self.models.agent.reinforce_update(&self.batch)?;
                    self.batch.clear();
                }
                Ok((None, None))
            }
            Phase::Online(Scheme::WorldModel) => {
                let stage1 = self.train_wm(1)?;
                let mut stage2 = None;
                if self.slots_run % self.cfg.online.update_every as u64 == 0 && self.models.wm.trained && !self.replay.is_empty() {
                    let cfg = self.cfg.imagine_config();
                    for _ in 0..self.cfg.wm.stage2_updates {
                        let s = imagine_and_update_policy(&self.replay, &mut self.models.wm, &mut self.models.agent, &cfg, &mut self.replay_rng)?;
                        stage2 = Some(s.mean_predicted_reward);
                    }
                }
                Ok((stage1, stage2))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ScenarioTag};

    fn deployment(cfg: &ExperimentConfig, seed: u64, phase: Phase) -> Deployment {
        let tree = SeedTree::new(seed);
        let scene = generate_scene(&cfg.scene_config(ScenarioTag::NlosDominated), seed).unwrap();
        let env = RealEnv::new(scene, cfg, &tree).unwrap();
        let models = Models::fresh(cfg, &tree).unwrap();
        Deployment::new(env, models, phase, cfg, &tree, seed)
    }

    fn hashes(m: &Models) -> [u64; 5] {
        [
            m.encoder.param_hash(),
            m.agent.policy.param_hash(),
            m.agent.baseline.param_hash(),
            m.gate.net.param_hash(),
            m.wm.net.param_hash(),
        ]
    }

    #[test]
    fn frozen_scheme_leaves_parameters_unchanged() {
        let cfg = ExperimentConfig::default();
        let mut dep = deployment(&cfg, 3, Phase::Online(Scheme::Frozen));
        let before = hashes(&dep.models);
        for _ in 0..500 {
            dep.run_slot().unwrap();
        }
        assert_eq!(hashes(&dep.models), before);
    }

    #[test]
    fn pilot_expert_never_calls_the_encoder() {
        let cfg = ExperimentConfig::default();
        let mut dep = deployment(&cfg, 4, Phase::Pretrain);
        dep.gate_mode = GateMode::AlwaysPilot;
        for _ in 0..300 {
            let row = dep.run_slot().unwrap();
            assert_eq!(row.expert, Expert::PilotOnly.label());
        }
        assert_eq!(dep.encode_calls, 0);

        dep.gate_mode = GateMode::AlwaysMap;
        for _ in 0..10 {
            dep.run_slot().unwrap();
        }
        assert_eq!(dep.encode_calls, 10);
    }

    #[test]
    fn throughput_never_exceeds_genie() {
        let cfg = ExperimentConfig::default();
        let mut dep = deployment(&cfg, 5, Phase::Collect);
        dep.gate_mode = GateMode::Uniform;
        for _ in 0..10_000 {
            let row = dep.run_slot().unwrap();
            assert!(row.throughput <= row.genie_throughput + 1e-12, "{row:?}");
        }
    }

    #[test]
    fn oracle_matches_genie_every_slot() {
        let cfg = ExperimentConfig::default();
        let mut dep = deployment(&cfg, 6, Phase::Evaluate);
        dep.oracle = true;
        for _ in 0..500 {
            let row = dep.run_slot().unwrap();
            assert_eq!(row.throughput, row.genie_throughput);
        }
    }

    #[test]
    fn world_model_scheme_counts_only_real_slots() {
        let mut cfg = ExperimentConfig::default();
        cfg.wm.batch = 16;
        let mut dep = deployment(&cfg, 7, Phase::Online(Scheme::WorldModel));
        dep.models.wm.trained = true;
        let before = dep.models.agent.policy.param_hash();
        let slots = 200;
        let mut last = None;
        for _ in 0..slots {
            last = Some(dep.run_slot().unwrap());
        }
        assert_eq!(last.unwrap().interactions, slots);
        assert!(dep.models.wm.predict_calls() > 0);
        assert_ne!(dep.models.agent.policy.param_hash(), before);
    }
}
