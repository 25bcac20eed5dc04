//! Flat `section.key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{EncoderTraining, Normalization};
use crate::channel::{ChannelParams, Density};
use crate::error::{Error, Result};
use crate::gate::{GateConfig, GateMode};
use crate::link::{McsTable, SuccessModel};
use crate::nn::Tier;
use crate::scene::{PathlossModel, ScenarioTag, SceneConfig};
use crate::world_model::ImagineConfig;

/// Online update rule after the scene shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Frozen,
    DirectRl,
    WorldModel,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Frozen, Scheme::DirectRl, Scheme::WorldModel];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Frozen => "frozen",
            Scheme::DirectRl => "direct_rl",
            Scheme::WorldModel => "world_model",
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "frozen" => Ok(Scheme::Frozen),
            "direct_rl" => Ok(Scheme::DirectRl),
            "world_model" => Ok(Scheme::WorldModel),
            other => Err(Error::Config(format!("unknown scheme `{other}` (frozen|direct_rl|world_model)"))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value that can be read from and written to a config line.
pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn render(&self) -> String;
}

macro_rules! display_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.trim().parse::<$t>().map_err(|e| e.to_string())
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

display_value!(f64, u64, usize, bool, String, Density, ScenarioTag, Tier, GateMode, Scheme, SuccessModel);

impl ConfigValue for PathBuf {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        Ok(PathBuf::from(s.trim()))
    }

    fn render(&self) -> String {
        self.display().to_string()
    }
}

impl<T: ConfigValue> ConfigValue for Vec<T> {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        if s.trim().is_empty() {
            return Ok(Vec::new());
        }
        s.split(',').map(T::parse_value).collect()
    }

    fn render(&self) -> String {
        self.iter().map(ConfigValue::render).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSection {
    pub size_m: f64,
    pub grid_pitch_m: f64,
    pub street_m: f64,
    pub los_buildings_min: usize,
    pub los_buildings_max: usize,
    pub nlos_buildings_min: usize,
    pub nlos_buildings_max: usize,
    pub building_min_m: f64,
    pub building_max_m: f64,
    pub max_retries: usize,
    pub resolution: usize,
    pub user_speed_mps: f64,
    pub drop_slots: usize,
    pub pretrain_scenario: ScenarioTag,
    pub deploy_scenario: ScenarioTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSection {
    pub taps: usize,
    pub decay: f64,
    pub rho: f64,
    pub subcarriers: usize,
    pub noise_power_dbm: f64,
    pub tx_power_dbm: f64,
    pub slot_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSection {
    pub density: Density,
    pub noise_std_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateSection {
    pub mode: GateMode,
    pub lambda: f64,
    pub cost_pilot: f64,
    pub cost_map: f64,
    pub hidden: usize,
    pub lr: f64,
    pub baseline_decay: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetSection {
    pub policy_tier: Tier,
    pub compare_tiers: Vec<Tier>,
    pub baseline_hidden: usize,
    pub encoder_hidden: usize,
    pub wm_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub policy_lr: f64,
    pub baseline_lr: f64,
    pub entropy_beta: f64,
    pub batch_slots: usize,
    pub updates: usize,
    pub log_every: usize,
    pub wm_steps_per_update: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmSection {
    pub history: usize,
    pub horizon: usize,
    pub n_starts: usize,
    pub batch: usize,
    pub reward_weight: f64,
    pub safety_fraction: f64,
    pub lr: f64,
    pub replay_capacity: usize,
    pub stage2_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineSection {
    pub scheme: Scheme,
    pub slots: usize,
    pub update_every: usize,
    pub filter: bool,
    pub gate_mode: GateMode,
    pub probe_slots: usize,
    pub probe_every: usize,
    pub converged_probes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSection {
    pub slots: usize,
    pub oracle: bool,
    pub filter: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub scenario: ScenarioTag,
    pub gate_updates: usize,
}

/// Every tunable of every experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub scene: SceneSection,
    pub pathloss: PathlossModel,
    pub channel: ChannelSection,
    pub pilots: PilotSection,
    pub link: SuccessModel,
    pub norm: Normalization,
    pub gate: GateSection,
    pub net: NetSection,
    pub train: TrainSection,
    pub encoder: EncoderTraining,
    pub encoder_samples: usize,
    pub wm: WmSection,
    pub online: OnlineSection,
    pub eval: EvalSection,
    pub sweep: SweepSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let scene = SceneConfig::los();
        let nlos = SceneConfig::nlos();
        let ch = ChannelParams::default();
        Self {
            run: RunSection {
                seeds: vec![1, 2, 3, 4, 5],
                output_dir: PathBuf::from("out"),
            },
            scene: SceneSection {
                size_m: scene.size_m,
                grid_pitch_m: scene.grid_pitch_m,
                street_m: scene.street_m,
                los_buildings_min: scene.building_count.0,
                los_buildings_max: scene.building_count.1,
                nlos_buildings_min: nlos.building_count.0,
                nlos_buildings_max: nlos.building_count.1,
                building_min_m: scene.building_size_m.0,
                building_max_m: scene.building_size_m.1,
                max_retries: scene.max_retries,
                resolution: 128,
                user_speed_mps: 1.0,
                drop_slots: 50,
                pretrain_scenario: ScenarioTag::LosDominated,
                deploy_scenario: ScenarioTag::NlosDominated,
            },
            pathloss: PathlossModel::default(),
            channel: ChannelSection {
                taps: ch.taps,
                decay: ch.decay,
                rho: ch.rho,
                subcarriers: ch.subcarriers,
                noise_power_dbm: ch.noise_power_dbm,
                tx_power_dbm: 40.0,
                slot_ms: 10.0,
            },
            pilots: PilotSection {
                density: Density::new(1, 32).expect("static density"),
                noise_std_db: 16.0,
            },
            link: SuccessModel::HardThreshold,
            norm: Normalization::default(),
            gate: GateSection {
                mode: GateMode::Learned,
                lambda: 0.1,
                cost_pilot: 1.0,
                cost_map: 10.0,
                hidden: 16,
                lr: 0.01,
                baseline_decay: 0.9,
            },
            net: NetSection {
                policy_tier: Tier::Small,
                compare_tiers: Tier::ALL.to_vec(),
                baseline_hidden: 32,
                encoder_hidden: 32,
                wm_hidden: vec![64, 64],
            },
            train: TrainSection {
                policy_lr: 1e-3,
                baseline_lr: 1e-2,
                entropy_beta: 0.01,
                batch_slots: 64,
                updates: 4000,
                log_every: 25,
                wm_steps_per_update: 2,
            },
            encoder: EncoderTraining::default(),
            encoder_samples: 4000,
            wm: WmSection {
                history: 4,
                horizon: 5,
                n_starts: 32,
                batch: 64,
                reward_weight: 5.0,
                safety_fraction: 0.5,
                lr: 3e-3,
                replay_capacity: 4096,
                stage2_updates: 8,
            },
            online: OnlineSection {
                scheme: Scheme::WorldModel,
                slots: 6000,
                update_every: 10,
                filter: true,
                gate_mode: GateMode::AlwaysMap,
                probe_slots: 400,
                probe_every: 10,
                converged_probes: 50,
            },
            eval: EvalSection {
                slots: 4000,
                oracle: false,
                filter: false,
            },
            sweep: SweepSection {
                lambdas: vec![0.0, 0.05, 0.2, 0.5, 1.0],
                scenario: ScenarioTag::NlosDominated,
                gate_updates: 300,
            },
        }
    }
}

macro_rules! config_keys {
    ($( $key:literal => $($field:ident).+ : $doc:literal ;)*) => {
        impl ExperimentConfig {
            /// Sets one dotted key from its textual value.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $( $key => {
                        self.$($field).+ = ConfigValue::parse_value(value)
                            .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))?;
                    } )*
                    _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
                }
                Ok(())
            }

            /// `(key, current value, description)` for every key, in file order.
            pub fn entries(&self) -> Vec<(&'static str, String, &'static str)> {
                vec![ $( ($key, ConfigValue::render(&self.$($field).+), $doc) ),* ]
            }
        }
    };
}

config_keys! {
    "run.seeds" => run.seeds : "master seeds, comma separated; each runs as an independent replica";
    "run.output_dir" => run.output_dir : "directory receiving checkpoints, metrics and plots";
    "scene.size_m" => scene.size_m : "side of the square scene in meters";
    "scene.grid_pitch_m" => scene.grid_pitch_m : "street-grid block pitch in meters";
    "scene.street_m" => scene.street_m : "minimum street width between buildings in meters";
    "scene.los_buildings_min" => scene.los_buildings_min : "fewest buildings in a LoS-dominated scene";
    "scene.los_buildings_max" => scene.los_buildings_max : "most buildings in a LoS-dominated scene";
    "scene.nlos_buildings_min" => scene.nlos_buildings_min : "fewest buildings in an NLoS-dominated scene";
    "scene.nlos_buildings_max" => scene.nlos_buildings_max : "most buildings in an NLoS-dominated scene";
    "scene.building_min_m" => scene.building_min_m : "smallest building side in meters";
    "scene.building_max_m" => scene.building_max_m : "largest building side in meters";
    "scene.max_retries" => scene.max_retries : "generation attempts before giving up";
    "scene.resolution" => scene.resolution : "aerial raster side in pixels (multiple of 16)";
    "scene.user_speed_mps" => scene.user_speed_mps : "random-waypoint walking speed";
    "scene.drop_slots" => scene.drop_slots : "slots between user re-drops at a fresh position (0 = never)";
    "scene.pretrain_scenario" => scene.pretrain_scenario : "scenario used for pretraining (los|nlos)";
    "scene.deploy_scenario" => scene.deploy_scenario : "scenario entered after the shift (los|nlos)";
    "pathloss.pl0_db" => pathloss.pl0_db : "pathloss at the reference distance";
    "pathloss.d0_m" => pathloss.d0_m : "reference distance in meters";
    "pathloss.exponent" => pathloss.exponent : "log-distance exponent";
    "pathloss.block_loss_db" => pathloss.block_loss_db : "extra loss per building crossed by the BS-user segment";
    "channel.taps" => channel.taps : "multipath taps";
    "channel.decay" => channel.decay : "exponential power-delay-profile decay per tap";
    "channel.rho" => channel.rho : "Gauss-Markov correlation between consecutive slots";
    "channel.subcarriers" => channel.subcarriers : "subcarriers per slot";
    "channel.noise_power_dbm" => channel.noise_power_dbm : "noise power per subcarrier";
    "channel.tx_power_dbm" => channel.tx_power_dbm : "transmit power; received power is this minus pathloss";
    "channel.slot_ms" => channel.slot_ms : "slot duration in milliseconds";
    "pilots.density" => pilots.density : "fraction of subcarriers carrying pilots, as a/b";
    "pilots.noise_std_db" => pilots.noise_std_db : "Gaussian estimation error on each pilot SNR in dB";
    "link.success_model" => link : "per-subcarrier success rule (hard|logistic)";
    "norm.snr_center_db" => norm.snr_center_db : "feedback SNR normalization center";
    "norm.snr_scale_db" => norm.snr_scale_db : "feedback SNR normalization scale";
    "norm.std_center_db" => norm.std_center_db : "feedback spread normalization center";
    "norm.std_scale_db" => norm.std_scale_db : "feedback spread normalization scale";
    "norm.power_center_dbm" => norm.power_center_dbm : "map power normalization center; zero-head encoders output this";
    "norm.power_scale_db" => norm.power_scale_db : "map power normalization scale";
    "gate.mode" => gate.mode : "expert routing (learned|always_pilot|always_map|uniform)";
    "gate.lambda" => gate.lambda : "cost regularization weight in J = reward - lambda * cost";
    "gate.cost_pilot" => gate.cost_pilot : "cost units of the pilot-only expert";
    "gate.cost_map" => gate.cost_map : "cost units of the pilot-plus-map expert";
    "gate.hidden" => gate.hidden : "gate hidden units (at most 16)";
    "gate.lr" => gate.lr : "gate learning rate";
    "gate.baseline_decay" => gate.baseline_decay : "moving-average weight of the gate baseline";
    "net.policy_tier" => net.policy_tier : "policy capacity tier (small|medium|large)";
    "net.compare_tiers" => net.compare_tiers : "tiers compared in the zero-shot transfer experiment";
    "net.baseline_hidden" => net.baseline_hidden : "value baseline hidden units";
    "net.encoder_hidden" => net.encoder_hidden : "map encoder hidden units";
    "net.wm_hidden" => net.wm_hidden : "world-model hidden layer widths, comma separated";
    "train.policy_lr" => train.policy_lr : "policy learning rate";
    "train.baseline_lr" => train.baseline_lr : "value baseline learning rate";
    "train.entropy_beta" => train.entropy_beta : "entropy bonus coefficient";
    "train.batch_slots" => train.batch_slots : "slots per pretraining update";
    "train.updates" => train.updates : "pretraining updates";
    "train.log_every" => train.log_every : "updates per training-log window";
    "train.wm_steps_per_update" => train.wm_steps_per_update : "world-model steps per pretraining update";
    "encoder.samples" => encoder_samples : "supervised map-encoder samples";
    "encoder.holdout_fraction" => encoder.holdout_fraction : "share of encoder samples held out for early stopping";
    "encoder.lr" => encoder.lr : "map encoder learning rate";
    "encoder.batch" => encoder.batch : "map encoder minibatch";
    "encoder.eval_every" => encoder.eval_every : "encoder steps between held-out evaluations";
    "encoder.patience" => encoder.patience : "evaluations without improvement before stopping";
    "encoder.max_steps" => encoder.max_steps : "hard cap on encoder steps";
    "wm.history" => wm.history : "frames stacked in the world-model state";
    "wm.horizon" => wm.horizon : "imagined rollout length";
    "wm.n_starts" => wm.n_starts : "real start states per imagined update";
    "wm.batch" => wm.batch : "world-model minibatch; also the minimum buffer size for training";
    "wm.reward_weight" => wm.reward_weight : "weight of the reward term in the world-model loss";
    "wm.safety_fraction" => wm.safety_fraction : "filter keeps actions predicted within this fraction of the best";
    "wm.lr" => wm.lr : "world-model learning rate";
    "wm.replay_capacity" => wm.replay_capacity : "replay ring capacity";
    "wm.stage2_updates" => wm.stage2_updates : "imagined policy updates per update period";
    "online.scheme" => online.scheme : "update scheme after the shift (frozen|direct_rl|world_model)";
    "online.slots" => online.slots : "deployment slots after the shift";
    "online.update_every" => online.update_every : "slots between policy updates";
    "online.filter" => online.filter : "apply the counterfactual filter in the world_model scheme";
    "online.gate_mode" => online.gate_mode : "expert routing during deployment";
    "online.probe_slots" => online.probe_slots : "recorded slots in the fixed convergence probe set";
    "online.probe_every" => online.probe_every : "slots between probe evaluations";
    "online.converged_probes" => online.converged_probes : "trailing probe evaluations averaged into the converged level";
    "eval.slots" => eval.slots : "greedy evaluation slots per seed";
    "eval.oracle" => eval.oracle : "evaluate the genie instead of the policy";
    "eval.filter" => eval.filter : "pass greedy actions through the counterfactual filter";
    "sweep.lambdas" => sweep.lambdas : "lambda grid, comma separated";
    "sweep.scenario" => sweep.scenario : "scenario in which the gate is trained for the sweep";
    "sweep.gate_updates" => sweep.gate_updates : "gate updates per grid point";
}

impl ExperimentConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str, location: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(location, i + 1, format!("expected `key = value`, got `{line}`")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| match e {
                Error::Config(msg) => Error::parse(location, i + 1, msg),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Every key with its current value; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, value, _) in self.entries() {
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Commented listing of every key and its default.
    pub fn reference() -> String {
        let mut out = String::from("# Every configuration key with its default value.\n");
        let mut section = "";
        for (key, value, doc) in Self::default().entries() {
            let head = key.split('.').next().unwrap_or("");
            if head != section {
                let _ = writeln!(out, "\n# [{head}]");
                section = head;
            }
            let _ = writeln!(out, "# {doc}\n{key} = {value}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        if self.run.seeds.is_empty() {
            return Err(Error::Config("run.seeds must list at least one seed".into()));
        }
        if let Some(dup) = self.run.seeds.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::Config(format!("seed {dup} listed twice in run.seeds")));
        }
        self.scene_config(ScenarioTag::LosDominated).validate()?;
        self.scene_config(ScenarioTag::NlosDominated).validate()?;
        self.channel_params().validate()?;
        self.gate_config().validate()?;
        if self.scene.resolution == 0 || self.scene.resolution % crate::agent::POOLED_SIDE != 0 {
            return Err(Error::Config(format!(
                "scene.resolution must be a positive multiple of {}",
                crate::agent::POOLED_SIDE
            )));
        }
        if self.gate.hidden == 0 || self.gate.hidden > 16 {
            return Err(Error::Config("gate.hidden must lie in 1..=16".into()));
        }
        if !(self.wm.safety_fraction > 0.0 && self.wm.safety_fraction <= 1.0) {
            return Err(Error::Config("wm.safety_fraction must lie in (0, 1]".into()));
        }
        if self.sweep.lambdas.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("sweep.lambdas must be non-negative".into()));
        }
        let positive = [
            ("train.batch_slots", self.train.batch_slots),
            ("train.log_every", self.train.log_every),
            ("wm.history", self.wm.history),
            ("wm.horizon", self.wm.horizon),
            ("wm.n_starts", self.wm.n_starts),
            ("wm.batch", self.wm.batch),
            ("wm.replay_capacity", self.wm.replay_capacity),
            ("online.update_every", self.online.update_every),
            ("online.probe_slots", self.online.probe_slots),
            ("online.probe_every", self.online.probe_every),
            ("online.converged_probes", self.online.converged_probes),
            ("eval.slots", self.eval.slots),
            ("encoder.batch", self.encoder.batch),
            ("encoder.eval_every", self.encoder.eval_every),
        ];
        if let Some((key, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{key} must be positive")));
        }
        if !(self.channel.slot_ms > 0.0) || !(self.scene.user_speed_mps >= 0.0) {
            return Err(Error::Config("slot duration must be positive and speed non-negative".into()));
        }
        Ok(())
    }

    pub fn scene_config(&self, tag: ScenarioTag) -> SceneConfig {
        let building_count = match tag {
            ScenarioTag::LosDominated => (self.scene.los_buildings_min, self.scene.los_buildings_max),
            ScenarioTag::NlosDominated => (self.scene.nlos_buildings_min, self.scene.nlos_buildings_max),
        };
        SceneConfig {
            scenario: tag,
            size_m: self.scene.size_m,
            grid_pitch_m: self.scene.grid_pitch_m,
            street_m: self.scene.street_m,
            building_count,
            building_size_m: (self.scene.building_min_m, self.scene.building_max_m),
            max_retries: self.scene.max_retries,
        }
    }

    pub fn channel_params(&self) -> ChannelParams {
        ChannelParams {
            taps: self.channel.taps,
            decay: self.channel.decay,
            rho: self.channel.rho,
            subcarriers: self.channel.subcarriers,
            noise_power_dbm: self.channel.noise_power_dbm,
        }
    }

    pub fn gate_config(&self) -> GateConfig {
        GateConfig {
            lambda: self.gate.lambda,
            costs: [self.gate.cost_pilot, self.gate.cost_map],
        }
    }

    pub fn mcs_table(&self) -> McsTable {
        McsTable::with_model(self.link)
    }

    pub fn imagine_config(&self) -> ImagineConfig {
        ImagineConfig {
            horizon: self.wm.horizon,
            n_starts: self.wm.n_starts,
        }
    }

    pub fn slot_seconds(&self) -> f64 {
        self.channel.slot_ms / 1000.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("gate.lambda", "0.35").unwrap();
        cfg.set("pilots.density", "1/4").unwrap();
        cfg.set("net.wm_hidden", "32,16").unwrap();
        cfg.set("online.scheme", "direct_rl").unwrap();
        let back = ExperimentConfig::parse(&cfg.to_text(), "mem").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_blank_lines_and_errors() {
        let cfg = ExperimentConfig::parse("# header\n\ngate.lambda = 0.2 # inline\n", "mem").unwrap();
        assert_eq!(cfg.gate.lambda, 0.2);
        match ExperimentConfig::parse("gate.lambda = 0.2\nnot.a.key = 1\n", "mem") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("gate.lambda 0.2", "mem"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(ExperimentConfig::parse("run.seeds = 1,2,1", "mem"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::parse("pilots.density = 3/2", "mem"), Err(Error::Parse { .. })));
        assert!(matches!(ExperimentConfig::parse("online.scheme = sometimes", "mem"), Err(Error::Parse { .. })));
    }

    #[test]
    fn reference_lists_every_key() {
        let text = ExperimentConfig::reference();
        for (key, _, _) in ExperimentConfig::default().entries() {
            assert!(text.contains(&format!("\n{key} = ")), "{key}");
        }
        let stripped: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
        assert_eq!(ExperimentConfig::parse(&stripped, "ref").unwrap(), ExperimentConfig::default());
    }
}
