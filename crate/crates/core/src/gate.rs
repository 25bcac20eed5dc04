//! Cost-regularized router between the pilot-only expert and the
//! pilot-plus-map expert.

use std::str::FromStr;

use crate::agent::{argmax, select_action, softmax};
use crate::error::{Error, Result};
use crate::nn::{Adam, GradientSet, Net};
use crate::rng::RngStream;
use crate::scene::{rasterize, Point, Scene};

pub const GATE_INPUT_DIM: usize = 4;
pub const NUM_EXPERTS: usize = 2;
/// Blockage counts at or above this saturate the normalized feature.
pub const BLOCKAGE_SATURATION: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Expert {
    PilotOnly = 0,
    PilotMap = 1,
}

impl Expert {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Expert {
        match i {
            0 => Expert::PilotOnly,
            1 => Expert::PilotMap,
            _ => panic!("expert index {i} out of range"),
        }
    }

    /// One-based label used in logs and CSVs.
    pub fn label(self) -> u8 {
        self as u8 + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    pub lambda: f64,
    pub costs: [f64; NUM_EXPERTS],
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            lambda: 0.1,
            costs: [1.0, 10.0],
        }
    }
}

impl GateConfig {
    pub fn new(lambda: f64, costs: [f64; NUM_EXPERTS]) -> Result<Self> {
        let cfg = Self { lambda, costs };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("gate lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(self.costs[0] > 0.0 && self.costs[1] > self.costs[0]) {
            return Err(Error::Config(format!(
                "expert costs must satisfy 0 < c1 < c2, got {:?}",
                self.costs
            )));
        }
        Ok(())
    }

    /// Lambda above which the pilot-only expert dominates for any rewards in `[0, max_reward]`.
    pub fn dominance_lambda(&self, max_reward: f64) -> f64 {
        max_reward / (self.costs[1] - self.costs[0])
    }
}

/// Cheap geometric summary of the map, all entries in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateInput {
    pub distance: f64,
    pub blockage: f64,
    pub scenario: [f64; 2],
}

impl GateInput {
    /// Pixel distance is normalized by the raster diagonal.
    pub fn from_scene(scene: &Scene, user: &Point, resolution: usize) -> Self {
        let (uc, ur) = rasterize(scene, user, resolution);
        let (bc, br) = rasterize(scene, &scene.bs_pos, resolution);
        let dx = uc as f64 - bc as f64;
        let dy = ur as f64 - br as f64;
        let diag = resolution as f64 * std::f64::consts::SQRT_2;
        let blocks = scene.blockage_count(&scene.bs_pos, user) as f64;
        Self {
            distance: ((dx * dx + dy * dy).sqrt() / diag).min(1.0),
            blockage: (blocks / BLOCKAGE_SATURATION).min(1.0),
            scenario: scene.scenario.one_hot(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.distance, self.blockage, self.scenario[0], self.scenario[1]]
    }
}

pub fn gate_probs(input: &GateInput, gate: &Net) -> Result<[f64; NUM_EXPERTS]> {
    let p = softmax(&gate.forward(&input.to_vec())?);
    Ok([p[0], p[1]])
}

/// `J = reward - lambda * cost(expert)`.
pub fn gate_objective(reward: f64, expert: Expert, cfg: &GateConfig) -> f64 {
    reward - cfg.lambda * cfg.costs[expert.index()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    AlwaysPilot,
    AlwaysMap,
    Uniform,
}

impl FromStr for GateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "learned" => Ok(GateMode::Learned),
            "always_pilot" => Ok(GateMode::AlwaysPilot),
            "always_map" => Ok(GateMode::AlwaysMap),
            "uniform" => Ok(GateMode::Uniform),
            other => Err(Error::Config(format!(
                "unknown gate mode `{other}` (learned|always_pilot|always_map|uniform)"
            ))),
        }
    }
}

impl std::fmt::Display for GateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateMode::Learned => "learned",
            GateMode::AlwaysPilot => "always_pilot",
            GateMode::AlwaysMap => "always_map",
            GateMode::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSample {
    pub input: GateInput,
    pub expert: Expert,
    pub objective: f64,
}

/// Gate net, its optimizer and the moving-average baseline.
#[derive(Debug, Clone)]
pub struct GateLearner {
    pub net: Net,
    pub opt: Adam,
    pub config: GateConfig,
    /// Weight on the previous baseline when folding in a new batch mean.
    pub baseline_decay: f64,
    pub baseline: Option<f64>,
}

impl GateLearner {
    pub fn new(net: Net, lr: f64, config: GateConfig, baseline_decay: f64) -> Result<Self> {
        config.validate()?;
        if net.input_dim() != GATE_INPUT_DIM || net.output_dim() != NUM_EXPERTS {
            return Err(Error::Contract(format!(
                "gate must map {GATE_INPUT_DIM} inputs to {NUM_EXPERTS} logits"
            )));
        }
        Ok(Self {
            opt: Adam::new(&net, lr),
            net,
            config,
            baseline_decay,
            baseline: None,
        })
    }

    pub fn probs(&self, input: &GateInput) -> Result<[f64; NUM_EXPERTS]> {
        gate_probs(input, &self.net)
    }

    /// Expert choice under `mode`; `greedy` only affects the learned gate.
    pub fn choose(&self, mode: GateMode, input: &GateInput, rng: &mut RngStream, greedy: bool) -> Result<Expert> {
        Ok(match mode {
            GateMode::AlwaysPilot => Expert::PilotOnly,
            GateMode::AlwaysMap => Expert::PilotMap,
            GateMode::Uniform => Expert::from_index(select_action(&[0.5, 0.5], rng, false)),
            GateMode::Learned => {
                let p = self.probs(input)?;
                Expert::from_index(if greedy { argmax(&p) } else { select_action(&p, rng, false) })
            }
        })
    }

    /// REINFORCE on the categorical expert choice. The baseline is seeded
    /// with the first batch mean, so constant objectives give zero advantage.
    pub fn update(&mut self, batch: &[GateSample]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Precondition("gate update on an empty batch".into()));
        }
        if let Some(bad) = batch.iter().find(|s| !s.objective.is_finite()) {
            return Err(Error::Training(format!(
                "non-finite gate objective {} for expert {} in a batch of {}",
                bad.objective,
                bad.expert.label(),
                batch.len()
            )));
        }
        let n = batch.len() as f64;
        let mean_j = batch.iter().map(|s| s.objective).sum::<f64>() / n;
        let baseline = *self.baseline.get_or_insert(mean_j);
        let mut grads = GradientSet::zeros_like(&self.net);
        for s in batch {
            let trace = self.net.trace(&s.input.to_vec())?;
            let p = softmax(trace.output());
            let adv = s.objective - baseline;
            let dlogits: Vec<f64> = (0..NUM_EXPERTS)
                .map(|j| {
                    let onehot = if j == s.expert.index() { 1.0 } else { 0.0 };
                    -adv * (onehot - p[j]) / n
                })
                .collect();
            self.net.accumulate(&trace, &dlogits, &mut grads)?;
        }
        if !grads.is_zero() {
            self.opt.step(&mut self.net, &grads)?;
        }
        self.baseline = Some(self.baseline_decay * baseline + (1.0 - self.baseline_decay) * mean_j);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Architecture};
    use crate::rng::stream_from_seed;
    use crate::scene::ScenarioTag;
    use rand::Rng;

    fn learner(lambda: f64, seed: u64) -> GateLearner {
        let net = Net::build(&Architecture::mlp(GATE_INPUT_DIM, &[16], NUM_EXPERTS, Activation::Tanh), seed).unwrap();
        GateLearner::new(net, 0.01, GateConfig::new(lambda, [1.0, 10.0]).unwrap(), 0.9).unwrap()
    }

    fn some_input(rng: &mut RngStream) -> GateInput {
        GateInput {
            distance: rng.random(),
            blockage: rng.random(),
            scenario: ScenarioTag::NlosDominated.one_hot(),
        }
    }

    #[test]
    fn zero_head_is_even_split() {
        let l = learner(0.1, 1);
        let mut rng = stream_from_seed(2);
        assert_eq!(l.probs(&some_input(&mut rng)).unwrap(), [0.5, 0.5]);
        let p = softmax(&[2.0, 0.0]);
        assert!((p[0] - 0.881).abs() < 1e-3 && (p[1] - 0.119).abs() < 1e-3);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn objective_arithmetic() {
        let cfg = GateConfig::new(0.1, [1.0, 10.0]).unwrap();
        assert!((gate_objective(3.0, Expert::PilotMap, &cfg) - 2.0).abs() < 1e-12);
        assert!((gate_objective(3.0, Expert::PilotOnly, &cfg) - 2.9).abs() < 1e-12);
        let free = GateConfig::new(0.0, [1.0, 10.0]).unwrap();
        assert_eq!(gate_objective(3.0, Expert::PilotOnly, &free), 3.0);
        assert_eq!(gate_objective(3.0, Expert::PilotMap, &free), 3.0);
        assert!((cfg.dominance_lambda(8.0) - 8.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(GateConfig::new(-0.1, [1.0, 10.0]).is_err());
        assert!(GateConfig::new(0.1, [10.0, 1.0]).is_err());
        assert!(GateConfig::new(0.1, [0.0, 1.0]).is_err());
        assert!("always_map".parse::<GateMode>().is_ok());
        assert!("sometimes".parse::<GateMode>().is_err());
    }

    #[test]
    fn equal_objectives_leave_gate() {
        let mut l = learner(0.1, 3);
        let mut rng = stream_from_seed(4);
        let before = l.net.clone();
        for _ in 0..5 {
            let batch: Vec<GateSample> = (0..32)
                .map(|i| GateSample {
                    input: some_input(&mut rng),
                    expert: Expert::from_index(i % 2),
                    objective: 1.5,
                })
                .collect();
            l.update(&batch).unwrap();
        }
        assert_eq!(l.net, before);
    }

    #[test]
    fn rejects_bad_batches() {
        let mut l = learner(0.1, 3);
        assert!(matches!(l.update(&[]), Err(Error::Precondition(_))));
        let mut rng = stream_from_seed(4);
        let bad = GateSample {
            input: some_input(&mut rng),
            expert: Expert::PilotMap,
            objective: f64::INFINITY,
        };
        assert!(matches!(l.update(&[bad]), Err(Error::Training(_))));
    }

    fn converge(lambda: f64, seed: u64) -> f64 {
        let mut l = learner(lambda, seed);
        let mut rng = stream_from_seed(seed + 10);
        for _ in 0..600 {
            let batch: Vec<GateSample> = (0..32)
                .map(|_| {
                    let input = some_input(&mut rng);
                    let expert = l.choose(GateMode::Learned, &input, &mut rng, false).unwrap();
                    let base: f64 = rng.random_range(0.0..4.0);
                    let reward = base + if expert == Expert::PilotMap { 2.0 } else { 0.0 };
                    GateSample {
                        input,
                        expert,
                        objective: gate_objective(reward, expert, &l.config),
                    }
                })
                .collect();
            l.update(&batch).unwrap();
        }
        let n = 2000;
        let map = (0..n)
            .filter(|_| l.choose(GateMode::Learned, &some_input(&mut rng), &mut rng, false).unwrap() == Expert::PilotMap)
            .count();
        map as f64 / n as f64
    }

    #[test]
    fn learns_to_pay_for_useful_map() {
        assert!(converge(0.05, 1) >= 0.95);
    }

    #[test]
    fn learns_to_skip_expensive_map() {
        assert!(converge(1.0, 2) <= 0.05);
    }

    #[test]
    fn fixed_modes() {
        let l = learner(0.1, 1);
        let mut rng = stream_from_seed(9);
        let x = some_input(&mut rng);
        assert_eq!(l.choose(GateMode::AlwaysPilot, &x, &mut rng, false).unwrap(), Expert::PilotOnly);
        assert_eq!(l.choose(GateMode::AlwaysMap, &x, &mut rng, false).unwrap(), Expert::PilotMap);
        let maps = (0..10_000)
            .filter(|_| l.choose(GateMode::Uniform, &x, &mut rng, false).unwrap() == Expert::PilotMap)
            .count();
        assert!((maps as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn input_is_normalized() {
        use crate::scene::{generate_scene, SceneConfig};
        let scene = generate_scene(&SceneConfig::nlos(), 3).unwrap();
        let x = GateInput::from_scene(&scene, &Point::new(120.0, 120.0), 128);
        assert!(x.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(x.scenario, [0.0, 1.0]);
        let here = GateInput::from_scene(&scene, &scene.bs_pos, 128);
        assert_eq!(here.distance, 0.0);
        assert_eq!(here.blockage, 0.0);
    }
}
