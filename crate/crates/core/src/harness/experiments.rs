//! Experiment drivers: pretraining, evaluation, side-information and tier
//! comparisons, lambda sweeps and online adaptation after a scene shift.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::agent::{argmax, pretrain_map_encoder, EncoderReport, MapFeaturizer, MapSample, PolicyInput};
use crate::channel::{Density, SnrVector};
use crate::error::{Error, Result};
use crate::gate::{gate_objective, Expert, GateMode};
use crate::link::{SuccessModel, NUM_MCS};
use crate::nn::{Net, Tier};
use crate::rng::{labels, SeedTree};
use crate::scene::{generate_scene, random_free_point, ScenarioTag, Scene};
use crate::world_model::{ReplayBuffer, Transition, WorldModel};

use super::config::{ExperimentConfig, Scheme};
use super::deploy::{Deployment, Models, Phase};
use super::env::RealEnv;
use super::metrics::{ci95, mean, median, std_dev, write_metrics, write_table, MetricsRow};
use super::plots::{write_series, SeriesPoint};

const ROLE_PRETRAIN: &str = "pretrain";
const ROLE_EVAL: &str = "eval";
const ROLE_ONLINE: &str = "online";

/// The scene of a given scenario for a master seed; every experiment using
/// that (seed, scenario) pair sees the same geometry.
pub fn scene_for(cfg: &ExperimentConfig, seed: u64, tag: ScenarioTag) -> Result<Scene> {
    let tree = SeedTree::new(seed).child(tag.as_str());
    generate_scene(&cfg.scene_config(tag), tree.seed(labels::SCENE))
}

fn role_tree(seed: u64, role: &str, tag: ScenarioTag) -> SeedTree {
    SeedTree::new(seed).child(role).child(tag.as_str())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn seed_dir(root: &Path, seed: u64) -> PathBuf {
    root.join(format!("seed_{seed}"))
}

/// Copy of `cfg` that skips world-model fitting during pretraining, for
/// experiments that never consult the world model.
fn without_world_model(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.train.wm_steps_per_update = 0;
    c
}

/// Supervised encoder fit on random free positions of `scene`.
pub fn train_encoder(cfg: &ExperimentConfig, seed: u64, scene: &Scene) -> Result<(Net, EncoderReport)> {
    let tree = SeedTree::new(seed).child(labels::ENCODER).child(scene.scenario.as_str());
    let featurizer = MapFeaturizer::new(scene, cfg.scene.resolution);
    let env = RealEnv::new(scene.clone(), cfg, &tree)?;
    let mut rng = tree.stream("positions");
    let mut data = Vec::with_capacity(cfg.encoder_samples);
    for _ in 0..cfg.encoder_samples {
        let p = random_free_point(scene, &mut rng, 10_000).ok_or_else(|| Error::Generation("no free position for encoder data".into()))?;
        data.push(MapSample {
            pooled: featurizer.pooled(&p),
            power_dbm: env.received_power_dbm(&p),
        });
    }
    let encoder = Models::fresh(cfg, &SeedTree::new(seed))?.encoder;
    let opts = crate::agent::EncoderTraining {
        seed: tree.seed("train"),
        ..cfg.encoder.clone()
    };
    let (net, report) = pretrain_map_encoder(&data, encoder, &cfg.norm, &opts)?;
    log::info!(
        "seed {seed}: map encoder held-out RMSE {:.2} dB (target std {:.2} dB, {} steps)",
        report.holdout_rmse_db,
        report.holdout_target_std_db,
        report.steps
    );
    Ok((net, report))
}

/// One row of the pretraining convergence log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub window: usize,
    pub updates: usize,
    pub slots: u64,
    pub mean_throughput: f64,
    pub mean_genie: f64,
    pub expert2_fraction: f64,
    pub policy_loss: f64,
    pub baseline_loss: f64,
    pub wm_loss: Option<f64>,
    pub mcs_counts: [u64; NUM_MCS],
}

impl LogRow {
    pub fn genie_ratio(&self) -> f64 {
        self.mean_throughput / self.mean_genie.max(f64::MIN_POSITIVE)
    }
}

pub const LOG_HEADER: [&str; 15] = [
    "window",
    "updates",
    "slots",
    "mean_throughput",
    "mean_genie",
    "genie_ratio",
    "expert2_fraction",
    "policy_loss",
    "baseline_loss",
    "wm_loss",
    "mcs0",
    "mcs1",
    "mcs2",
    "mcs3",
    "mcs4",
];

fn log_record(r: &LogRow) -> Vec<String> {
    let mut v = vec![
        r.window.to_string(),
        r.updates.to_string(),
        r.slots.to_string(),
        r.mean_throughput.to_string(),
        r.mean_genie.to_string(),
        r.genie_ratio().to_string(),
        r.expert2_fraction.to_string(),
        r.policy_loss.to_string(),
        r.baseline_loss.to_string(),
        r.wm_loss.map(|x| x.to_string()).unwrap_or_default(),
    ];
    v.extend(r.mcs_counts.iter().map(|c| c.to_string()));
    v
}

pub struct PretrainOutcome {
    pub seed: u64,
    pub models: Models,
    pub scene: Scene,
    pub log: Vec<LogRow>,
    pub encoder_report: Option<EncoderReport>,
}

/// Encoder fit, then joint RL pretraining with a supervised world model.
/// A supplied encoder skips the supervised fit, as does a gate that never
/// routes to the map.
pub fn pretrain_seed(cfg: &ExperimentConfig, seed: u64, encoder: Option<(Net, EncoderReport)>) -> Result<PretrainOutcome> {
    let tag = cfg.scene.pretrain_scenario;
    let scene = scene_for(cfg, seed, tag)?;
    let mut models = Models::fresh(cfg, &SeedTree::new(seed))?;
    let encoder_report = match encoder {
        Some((net, report)) => {
            models.encoder = net;
            Some(report)
        }
        // the map branch never runs, so the encoder stays untrained
        None if cfg.gate.mode == GateMode::AlwaysPilot => None,
        None => {
            let (net, report) = train_encoder(cfg, seed, &scene)?;
            models.encoder = net;
            Some(report)
        }
    };
    let tree = role_tree(seed, ROLE_PRETRAIN, tag);
    let env = RealEnv::new(scene.clone(), cfg, &tree)?;
    let mut dep = Deployment::new(env, models, Phase::Pretrain, cfg, &tree, seed);

    let window_slots = (cfg.train.log_every * cfg.train.batch_slots) as u64;
    let total = (cfg.train.updates * cfg.train.batch_slots) as u64;
    let mut log = Vec::new();
    let (mut thr, mut genie, mut maps, mut n) = (0.0, 0.0, 0u64, 0u64);
    let mut counts = [0u64; NUM_MCS];
    for slot in 1..=total {
        let row = dep.run_slot()?;
        thr += row.throughput;
        genie += row.genie_throughput;
        maps += u64::from(row.expert == Expert::PilotMap.label());
        counts[row.mcs] += 1;
        n += 1;
        if slot % window_slots == 0 || slot == total {
            let stats = dep.last_update.policy;
            log.push(LogRow {
                window: log.len(),
                updates: (slot / cfg.train.batch_slots as u64) as usize,
                slots: slot,
                mean_throughput: thr / n as f64,
                mean_genie: genie / n as f64,
                expert2_fraction: maps as f64 / n as f64,
                policy_loss: stats.map_or(f64::NAN, |s| s.policy_loss),
                baseline_loss: stats.map_or(f64::NAN, |s| s.baseline_loss),
                wm_loss: dep.last_update.wm_loss,
                mcs_counts: counts,
            });
            (thr, genie, maps, n) = (0.0, 0.0, 0, 0);
            counts = [0; NUM_MCS];
        }
    }
    if let Some(last) = log.last() {
        log::info!(
            "seed {seed}: pretraining done, last window throughput {:.3} ({:.1}% of genie)",
            last.mean_throughput,
            100.0 * last.genie_ratio()
        );
    }
    Ok(PretrainOutcome {
        seed,
        models: dep.models,
        scene,
        log,
        encoder_report,
    })
}

fn save_outcome(cfg: &ExperimentConfig, dir: &Path, o: &PretrainOutcome) -> Result<()> {
    o.models.save(dir)?;
    write_text(&dir.join("scene.txt"), &o.scene.to_text())?;
    write_text(&dir.join("config.txt"), &cfg.to_text())?;
    let rows: Vec<Vec<String>> = o.log.iter().map(log_record).collect();
    write_table(&dir.join("train_log.csv"), &LOG_HEADER, &rows)
}

/// Pretrains every seed and writes `<root>/seed_<s>/` checkpoint sets.
pub fn pretrain_experiment(cfg: &ExperimentConfig, root: &Path) -> Result<Vec<PretrainOutcome>> {
    let outcomes: Vec<PretrainOutcome> = cfg.run.seeds.par_iter().map(|&s| pretrain_seed(cfg, s, None)).collect::<Result<_>>()?;
    for o in &outcomes {
        save_outcome(cfg, &seed_dir(root, o.seed), o)?;
    }
    let mut series = Vec::new();
    for o in &outcomes {
        for r in &o.log {
            let total: u64 = r.mcs_counts.iter().sum();
            for (m, c) in r.mcs_counts.iter().enumerate() {
                series.push(SeriesPoint::new("training_mcs", &format!("mcs{m}"), o.seed, r.updates as f64, *c as f64 / total.max(1) as f64));
            }
            series.push(SeriesPoint::new("training_mcs", "throughput", o.seed, r.updates as f64, r.mean_throughput));
        }
    }
    write_series(&root.join("series_training.csv"), &series)?;
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub label: String,
    pub seed: u64,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    pub mean_genie: f64,
    pub expert2_fraction: f64,
    pub mean_objective: f64,
    pub encode_calls: u64,
    pub filter_overrides: u64,
    pub rows: Vec<MetricsRow>,
}

impl EvalSummary {
    pub fn genie_ratio(&self) -> f64 {
        self.mean_throughput / self.mean_genie.max(f64::MIN_POSITIVE)
    }
}

/// Greedy evaluation of `models` in the scenario `tag` of `seed`. Channel
/// realizations depend only on (seed, scenario), so variants are paired.
pub fn evaluate_models(cfg: &ExperimentConfig, models: Models, seed: u64, tag: ScenarioTag, label: &str) -> Result<EvalSummary> {
    let scene = scene_for(cfg, seed, tag)?;
    let tree = role_tree(seed, ROLE_EVAL, tag);
    let env = RealEnv::new(scene, cfg, &tree)?;
    let mut dep = Deployment::new(env, models, Phase::Evaluate, cfg, &tree, seed);
    dep.oracle = cfg.eval.oracle;
    dep.filter = cfg.eval.filter;
    let mut rows = Vec::with_capacity(cfg.eval.slots);
    for _ in 0..cfg.eval.slots {
        rows.push(dep.run_slot()?);
    }
    let thr: Vec<f64> = rows.iter().map(|r| r.throughput).collect();
    let gate_cfg = dep.models.gate.config;
    let objective: Vec<f64> = rows
        .iter()
        .map(|r| gate_objective(r.throughput, Expert::from_index(r.expert as usize - 1), &gate_cfg))
        .collect();
    Ok(EvalSummary {
        label: label.to_string(),
        seed,
        mean_throughput: mean(&thr),
        std_throughput: std_dev(&thr),
        mean_genie: mean(&rows.iter().map(|r| r.genie_throughput).collect::<Vec<_>>()),
        expert2_fraction: rows.iter().filter(|r| r.expert == Expert::PilotMap.label()).count() as f64 / rows.len().max(1) as f64,
        mean_objective: mean(&objective),
        encode_calls: dep.encode_calls,
        filter_overrides: dep.filter_overrides,
        rows,
    })
}

const EVAL_HEADER: [&str; 9] = [
    "label",
    "seed",
    "mean_throughput",
    "std_throughput",
    "mean_genie",
    "genie_ratio",
    "expert2_fraction",
    "mean_objective",
    "encode_calls",
];

fn eval_record(s: &EvalSummary) -> Vec<String> {
    vec![
        s.label.clone(),
        s.seed.to_string(),
        s.mean_throughput.to_string(),
        s.std_throughput.to_string(),
        s.mean_genie.to_string(),
        s.genie_ratio().to_string(),
        s.expert2_fraction.to_string(),
        s.mean_objective.to_string(),
        s.encode_calls.to_string(),
    ]
}

/// Mean and 95% interval across seeds per label, in first-seen label order.
pub fn compare_labels(summaries: &[EvalSummary]) -> Vec<(String, f64, f64, usize)> {
    let mut labels: Vec<&str> = Vec::new();
    for s in summaries {
        if !labels.contains(&s.label.as_str()) {
            labels.push(&s.label);
        }
    }
    labels
        .into_iter()
        .map(|l| {
            let v: Vec<f64> = summaries.iter().filter(|s| s.label == l).map(|s| s.mean_throughput).collect();
            (l.to_string(), mean(&v), ci95(&v), v.len())
        })
        .collect()
}

fn write_comparison(path: &Path, summaries: &[EvalSummary]) -> Result<()> {
    let rows: Vec<Vec<String>> = compare_labels(summaries)
        .into_iter()
        .map(|(l, m, ci, n)| vec![l, m.to_string(), (m - ci).to_string(), (m + ci).to_string(), n.to_string()])
        .collect();
    write_table(path, &["label", "mean_throughput", "ci95_low", "ci95_high", "seeds"], &rows)
}

/// Evaluates each checkpoint root (holding `seed_<s>/` sets) for every seed.
pub fn evaluate_checkpoints(cfg: &ExperimentConfig, roots: &[PathBuf], tag: ScenarioTag, out: &Path) -> Result<Vec<EvalSummary>> {
    ensure_dir(out)?;
    let mut jobs = Vec::new();
    for root in roots {
        let label = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoints".into());
        for &seed in &cfg.run.seeds {
            jobs.push((label.clone(), seed_dir(root, seed), seed));
        }
    }
    let summaries: Vec<EvalSummary> = jobs
        .par_iter()
        .map(|(label, dir, seed)| {
            let models = Models::load(cfg, dir)?;
            evaluate_models(cfg, models, *seed, tag, label)
        })
        .collect::<Result<_>>()?;
    let provenance = cfg.mcs_table().describe();
    for s in &summaries {
        write_metrics(&out.join(format!("metrics_evaluate_{}_seed{}.csv", s.label, s.seed)), &provenance, &s.rows)?;
    }
    write_table(&out.join("evaluate.csv"), &EVAL_HEADER, &summaries.iter().map(eval_record).collect::<Vec<_>>())?;
    if roots.len() > 1 {
        write_comparison(&out.join("comparison.csv"), &summaries)?;
    }
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SideInfoRow {
    pub seed: u64,
    pub density: Density,
    pub pilot_only: f64,
    pub pilot_map: f64,
    pub genie: f64,
}

impl SideInfoRow {
    pub fn relative_gain(&self) -> f64 {
        self.pilot_map / self.pilot_only.max(f64::MIN_POSITIVE) - 1.0
    }
}

/// Pilot-only versus pilot-plus-map agents trained and evaluated in the
/// deployment scenario, per seed and pilot density, on shared channels.
pub fn side_information_experiment(cfg: &ExperimentConfig, densities: &[Density], out: &Path) -> Result<Vec<SideInfoRow>> {
    let tag = cfg.scene.deploy_scenario;
    let rows: Vec<Vec<SideInfoRow>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut base = without_world_model(cfg);
            base.scene.pretrain_scenario = tag;
            let scene = scene_for(&base, seed, tag)?;
            let encoder = train_encoder(&base, seed, &scene)?;
            let mut rows = Vec::new();
            for &density in densities {
                let mut thr = [0.0; 2];
                let mut genie = 0.0;
                for (i, mode) in [GateMode::AlwaysPilot, GateMode::AlwaysMap].into_iter().enumerate() {
                    let mut c = base.clone();
                    c.pilots.density = density;
                    c.gate.mode = mode;
                    let o = pretrain_seed(&c, seed, Some(encoder.clone()))?;
                    let s = evaluate_models(&c, o.models, seed, tag, &mode.to_string())?;
                    thr[i] = s.mean_throughput;
                    genie = s.mean_genie;
                }
                log::info!("seed {seed} density {density}: pilot-only {:.3}, pilot+map {:.3}", thr[0], thr[1]);
                rows.push(SideInfoRow {
                    seed,
                    density,
                    pilot_only: thr[0],
                    pilot_map: thr[1],
                    genie,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SideInfoRow> = rows.into_iter().flatten().collect();
    ensure_dir(out)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.seed.to_string(),
                r.density.to_string(),
                r.pilot_only.to_string(),
                r.pilot_map.to_string(),
                r.genie.to_string(),
                r.relative_gain().to_string(),
            ]
        })
        .collect();
    write_table(&out.join("side_information.csv"), &["seed", "density", "pilot_only", "pilot_map", "genie", "relative_gain"], &table)?;
    let mut series = Vec::new();
    for r in &rows {
        series.push(SeriesPoint::new("side_information", "pilot_only", r.seed, r.density.value(), r.pilot_only));
        series.push(SeriesPoint::new("side_information", "pilot_map", r.seed, r.density.value(), r.pilot_map));
    }
    write_series(&out.join("series_side_information.csv"), &series)?;
    Ok(rows)
}

/// Median relative gain across seeds at one density.
pub fn median_gain(rows: &[SideInfoRow], density: Density) -> f64 {
    median(&rows.iter().filter(|r| r.density == density).map(|r| r.relative_gain()).collect::<Vec<_>>())
}

/// Each policy tier is pretrained in the pretraining scenario and evaluated
/// zero-shot in the deployment scenario. The encoder is shared across tiers.
pub fn tier_transfer_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<EvalSummary>> {
    let per_seed: Vec<Vec<EvalSummary>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let scene = scene_for(cfg, seed, cfg.scene.pretrain_scenario)?;
            let encoder = train_encoder(cfg, seed, &scene)?;
            cfg.net
                .compare_tiers
                .iter()
                .map(|&tier| {
                    let mut c = without_world_model(cfg);
                    c.net.policy_tier = tier;
                    let o = pretrain_seed(&c, seed, Some(encoder.clone()))?;
                    evaluate_models(&c, o.models, seed, cfg.scene.deploy_scenario, tier.as_str())
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let summaries: Vec<EvalSummary> = per_seed.into_iter().flatten().collect();
    ensure_dir(out)?;
    write_table(&out.join("tiers.csv"), &EVAL_HEADER, &summaries.iter().map(eval_record).collect::<Vec<_>>())?;
    write_comparison(&out.join("tiers_comparison.csv"), &summaries)?;
    let series: Vec<SeriesPoint> = summaries
        .iter()
        .map(|s| {
            let x = Tier::ALL.iter().position(|t| t.as_str() == s.label).unwrap_or(0) as f64;
            SeriesPoint::new("tier_transfer", &s.label, s.seed, x, s.mean_throughput)
        })
        .collect();
    write_series(&out.join("series_tiers.csv"), &series)?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub lambda: f64,
    pub seed: u64,
    pub expert2_fraction: f64,
    pub mean_throughput: f64,
    pub mean_objective: f64,
}

/// Per seed: pretrain with a uniform router so the policy knows both input
/// kinds, then for each lambda train a fresh gate on the frozen policy and
/// evaluate it greedily.
pub fn sweep_lambda(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SweepRow>> {
    if cfg.sweep.lambdas.is_empty() {
        return Err(Error::Config("sweep.lambdas is empty".into()));
    }
    let mut lambdas = cfg.sweep.lambdas.clone();
    lambdas.sort_by(f64::total_cmp);
    let tag = cfg.sweep.scenario;
    let per_seed: Vec<Vec<SweepRow>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let mut base = without_world_model(cfg);
            base.scene.pretrain_scenario = tag;
            base.gate.mode = GateMode::Uniform;
            let pre = pretrain_seed(&base, seed, None)?;
            let scene = pre.scene.clone();
            lambdas
                .iter()
                .enumerate()
                .map(|(i, &lambda)| {
                    let mut c = base.clone();
                    c.gate.mode = GateMode::Learned;
                    c.gate.lambda = lambda;
                    let mut models = pre.models.clone();
                    let tree = SeedTree::new(seed).child("sweep").child(&i.to_string());
                    models.reset_gate(&c, tree.seed(labels::POLICY_INIT))?;
                    let env = RealEnv::new(scene.clone(), &c, &tree)?;
                    let mut dep = Deployment::new(env, models, Phase::GateTraining, &c, &tree, seed);
                    for _ in 0..c.sweep.gate_updates * c.train.batch_slots {
                        dep.run_slot()?;
                    }
                    let s = evaluate_models(&c, dep.models, seed, tag, &format!("lambda_{lambda}"))?;
                    log::info!("seed {seed} lambda {lambda}: expert-2 fraction {:.3}, throughput {:.3}", s.expert2_fraction, s.mean_throughput);
                    Ok(SweepRow {
                        lambda,
                        seed,
                        expert2_fraction: s.expert2_fraction,
                        mean_throughput: s.mean_throughput,
                        mean_objective: s.mean_objective,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<SweepRow> = per_seed.into_iter().flatten().collect();
    ensure_dir(out)?;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.lambda.to_string(),
                r.seed.to_string(),
                r.expert2_fraction.to_string(),
                r.mean_throughput.to_string(),
                r.mean_objective.to_string(),
            ]
        })
        .collect();
    let header = ["lambda", "seed", "expert2_fraction", "mean_throughput", "mean_objective"];
    write_table(&out.join("sweep_lambda.csv"), &header, &table)?;
    let summary: Vec<Vec<String>> = sweep_aggregate(&rows)
        .into_iter()
        .map(|(l, f, t, j)| vec![l.to_string(), "mean".into(), f.to_string(), t.to_string(), j.to_string()])
        .collect();
    write_table(&out.join("sweep_lambda_summary.csv"), &header, &summary)?;
    let mut series = Vec::new();
    for r in &rows {
        series.push(SeriesPoint::new("lambda_tradeoff", "expert2_fraction", r.seed, r.lambda, r.expert2_fraction));
        series.push(SeriesPoint::new("lambda_tradeoff", "throughput", r.seed, r.lambda, r.mean_throughput));
    }
    write_series(&out.join("series_sweep.csv"), &series)?;
    Ok(rows)
}

/// `(lambda, mean expert-2 fraction, mean throughput, mean objective)` per
/// grid point, sorted by lambda.
pub fn sweep_aggregate(rows: &[SweepRow]) -> Vec<(f64, f64, f64, f64)> {
    let mut lambdas: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    lambdas
        .into_iter()
        .map(|l| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.lambda == l).collect();
            let avg = |f: fn(&SweepRow) -> f64| mean(&sel.iter().map(|r| f(r)).collect::<Vec<_>>());
            (l, avg(|r| r.expert2_fraction), avg(|r| r.mean_throughput), avg(|r| r.mean_objective))
        })
        .collect()
}

/// Fixed recorded slots on which a policy's greedy throughput is measured.
#[derive(Debug, Clone)]
pub struct ProbeSet {
    pub inputs: Vec<PolicyInput>,
    pub snrs: Vec<SnrVector>,
}

impl ProbeSet {
    /// Records slots from a dedicated stream of the scenario `tag`, routed and
    /// encoded by the (frozen) gate and encoder of `models`. The user is
    /// re-dropped every slot so the set covers the whole scene.
    pub fn record(cfg: &ExperimentConfig, models: &Models, seed: u64, tag: ScenarioTag) -> Result<Self> {
        let scene = scene_for(cfg, seed, tag)?;
        let tree = role_tree(seed, labels::PROBE, tag);
        let mut probe_cfg = cfg.clone();
        probe_cfg.scene.drop_slots = 1;
        let env = RealEnv::new(scene, &probe_cfg, &tree)?;
        let mut dep = Deployment::new(env, models.clone(), Phase::Evaluate, cfg, &tree, seed);
        dep.gate_mode = cfg.online.gate_mode;
        let mut inputs = Vec::with_capacity(cfg.online.probe_slots);
        let mut snrs = Vec::with_capacity(cfg.online.probe_slots);
        for _ in 0..cfg.online.probe_slots {
            let view = dep.env.observe()?.clone();
            let (_, _, input) = dep.featurize(&view.user.pos, &view.feedback, true)?;
            inputs.push(input);
            snrs.push(view.snr);
        }
        Ok(Self { inputs, snrs })
    }

    /// Mean throughput of the greedy policy over the probe slots.
    pub fn score(&self, models: &Models, table: &crate::link::McsTable) -> Result<f64> {
        let mut total = 0.0;
        for (input, snr) in self.inputs.iter().zip(&self.snrs) {
            let a = argmax(&models.agent.distribution(input)?);
            total += table.throughput(snr, a);
        }
        Ok(total / self.inputs.len().max(1) as f64)
    }

    pub fn genie(&self, table: &crate::link::McsTable) -> f64 {
        mean(&self.snrs.iter().map(|s| table.genie_best(s).1).collect::<Vec<_>>())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbePoint {
    pub slot: u64,
    pub interactions: u64,
    pub throughput: f64,
}

#[derive(Debug, Clone)]
pub struct OnlineRun {
    pub scheme: Scheme,
    pub seed: u64,
    pub rows: Vec<MetricsRow>,
    pub probes: Vec<ProbePoint>,
    pub converged: f64,
    pub interactions_to_90: u64,
    pub predict_calls: u64,
}

/// Mean of the trailing `k` probe values.
pub fn converged_level(probes: &[ProbePoint], k: usize) -> f64 {
    let tail = &probes[probes.len().saturating_sub(k)..];
    mean(&tail.iter().map(|p| p.throughput).collect::<Vec<_>>())
}

/// Real interactions at the first probe reaching `fraction` of `level`.
pub fn interactions_to_reach(probes: &[ProbePoint], level: f64, fraction: f64) -> u64 {
    probes
        .iter()
        .find(|p| p.throughput >= fraction * level)
        .or(probes.last())
        .map_or(0, |p| p.interactions)
}

/// Deploys pretrained `models` into the shifted scenario under `scheme`.
pub fn online_adapt_seed(cfg: &ExperimentConfig, models: &Models, seed: u64, scheme: Scheme, probe: &ProbeSet) -> Result<OnlineRun> {
    let tag = cfg.scene.deploy_scenario;
    let scene = scene_for(cfg, seed, tag)?;
    let tree = role_tree(seed, ROLE_ONLINE, tag);
    let env = RealEnv::new(scene, cfg, &tree)?;
    let mut dep = Deployment::new(env, models.clone(), Phase::Online(scheme), cfg, &tree, seed);
    dep.gate_mode = cfg.online.gate_mode;
    dep.filter = scheme == Scheme::WorldModel && cfg.online.filter;
    let table = cfg.mcs_table();
    let calls_before = dep.models.wm.predict_calls();
    let mut probes = vec![ProbePoint {
        slot: 0,
        interactions: 0,
        throughput: probe.score(&dep.models, &table)?,
    }];
    let mut rows = Vec::with_capacity(cfg.online.slots);
    for i in 1..=cfg.online.slots {
        let row = dep.run_slot()?;
        if i % cfg.online.probe_every == 0 {
            probes.push(ProbePoint {
                slot: i as u64,
                interactions: row.interactions,
                throughput: probe.score(&dep.models, &table)?,
            });
        }
        rows.push(row);
    }
    let converged = converged_level(&probes, cfg.online.converged_probes);
    Ok(OnlineRun {
        scheme,
        seed,
        interactions_to_90: interactions_to_reach(&probes, converged, 0.9),
        converged,
        probes,
        rows,
        predict_calls: dep.models.wm.predict_calls() - calls_before,
    })
}

/// Runs `schemes` for every seed from checkpoints under `root`, or from
/// fresh pretraining when `root` is `None`.
pub fn online_adapt_experiment(cfg: &ExperimentConfig, root: Option<&Path>, schemes: &[Scheme], out: &Path) -> Result<Vec<OnlineRun>> {
    let per_seed: Vec<Vec<OnlineRun>> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| {
            let models = match root {
                Some(r) => Models::load(cfg, &seed_dir(r, seed))?,
                None => pretrain_seed(cfg, seed, None)?.models,
            };
            let probe = ProbeSet::record(cfg, &models, seed, cfg.scene.deploy_scenario)?;
            schemes.iter().map(|&s| online_adapt_seed(cfg, &models, seed, s, &probe)).collect()
        })
        .collect::<Result<_>>()?;
    let runs: Vec<OnlineRun> = per_seed.into_iter().flatten().collect();
    ensure_dir(out)?;
    let provenance = cfg.mcs_table().describe();
    let mut series = Vec::new();
    let mut summary = Vec::new();
    for r in &runs {
        write_metrics(&out.join(format!("metrics_{}_seed{}.csv", r.scheme, r.seed)), &provenance, &r.rows)?;
        for p in &r.probes {
            series.push(SeriesPoint::new("online_adaptation", r.scheme.as_str(), r.seed, p.slot as f64, p.throughput));
        }
        summary.push(vec![
            r.scheme.to_string(),
            r.seed.to_string(),
            r.converged.to_string(),
            r.interactions_to_90.to_string(),
            r.probes[0].throughput.to_string(),
            r.rows.last().map_or(0, |x| x.interactions).to_string(),
            r.predict_calls.to_string(),
        ]);
    }
    write_series(&out.join("series_online.csv"), &series)?;
    write_table(
        &out.join("online_summary.csv"),
        &["scheme", "seed", "converged", "interactions_to_90", "initial", "interactions", "wm_predict_calls"],
        &summary,
    )?;
    Ok(runs)
}

/// A static-user, full-pilot, noiseless variant of `cfg` whose rewards are
/// expected throughputs, so the current feedback nearly determines them.
pub fn stationary_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.pilots.density = Density::FULL;
    c.pilots.noise_std_db = 0.0;
    c.scene.user_speed_mps = 0.0;
    c.link = SuccessModel::Logistic;
    c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationReport {
    /// Held-out one-step reward RMSE of the fitted world model, in bits.
    pub rmse: f64,
    /// The same for a model fitted on shuffled rewards.
    pub control_rmse: f64,
    pub target_std: f64,
    pub train_transitions: usize,
    pub holdout_transitions: usize,
}

fn collect_transitions(cfg: &ExperimentConfig, models: &Models, seed: u64, tree: &SeedTree, slots: usize) -> Result<ReplayBuffer> {
    let scene = scene_for(cfg, seed, cfg.scene.pretrain_scenario)?;
    let env = RealEnv::new(scene, cfg, tree)?;
    let mut dep = Deployment::new(env, models.clone(), Phase::Collect, cfg, tree, seed);
    dep.replay = ReplayBuffer::new(slots);
    for _ in 0..slots {
        dep.run_slot()?;
    }
    Ok(dep.replay)
}

/// Fits the world model for `steps` Stage-1 steps on uniformly explored
/// transitions of `cfg`'s pretraining scene and scores one-step reward
/// predictions on transitions from independent streams.
pub fn world_model_calibration(cfg: &ExperimentConfig, seed: u64, slots: usize, steps: usize) -> Result<CalibrationReport> {
    calibrated_world_model(cfg, seed, slots, steps).map(|(report, _)| report)
}

/// [`world_model_calibration`] that also returns the fitted model.
pub fn calibrated_world_model(cfg: &ExperimentConfig, seed: u64, slots: usize, steps: usize) -> Result<(CalibrationReport, WorldModel)> {
    let root = SeedTree::new(seed).child("calibration");
    let models = Models::fresh(cfg, &root)?;
    let train = collect_transitions(cfg, &models, seed, &root.child("train"), slots)?;
    let hold = collect_transitions(cfg, &models, seed, &root.child("holdout"), slots / 4)?;
    let fit = |buffer: &ReplayBuffer| -> Result<(f64, WorldModel)> {
        let mut wm = models.wm.clone();
        let mut rng = root.stream(labels::REPLAY);
        for _ in 0..steps {
            wm.train_step(buffer, &mut rng)?;
        }
        Ok((wm.reward_rmse(hold.iter())?, wm))
    };
    let (rmse, wm) = fit(&train)?;
    let mut shuffled: Vec<Transition> = train.iter().cloned().collect();
    let mut rewards: Vec<f64> = shuffled.iter().map(|t| t.reward).collect();
    rewards.shuffle(&mut root.stream("shuffle"));
    let mut control = ReplayBuffer::new(shuffled.len());
    for (t, r) in shuffled.iter_mut().zip(rewards) {
        t.reward = r;
        control.push(t.clone());
    }
    let (control_rmse, _) = fit(&control)?;
    let report = CalibrationReport {
        rmse,
        control_rmse,
        target_std: std_dev(&hold.iter().map(|t| t.reward).collect::<Vec<_>>()),
        train_transitions: train.len(),
        holdout_transitions: hold.len(),
    };
    Ok((report, wm))
}

#[derive(Debug, Clone)]
pub struct StationaryReport {
    pub seed: u64,
    pub calibration: CalibrationReport,
    pub greedy: EvalSummary,
    pub filtered: EvalSummary,
    pub models: Models,
}

impl StationaryReport {
    /// Relative throughput lost by filtering the greedy policy.
    pub fn filter_loss(&self) -> f64 {
        (self.greedy.mean_throughput - self.filtered.mean_throughput) / self.greedy.mean_throughput
    }
}

/// Pilot-only policy trained in the stationary version of scenario `tag`, a
/// world model calibrated there, and paired greedy evaluations with and
/// without the counterfactual filter.
pub fn stationary_experiment(cfg: &ExperimentConfig, seed: u64, tag: ScenarioTag, wm_slots: usize, wm_steps: usize) -> Result<StationaryReport> {
    let mut cfg = stationary_config(cfg);
    cfg.scene.pretrain_scenario = tag;
    cfg.gate.mode = GateMode::AlwaysPilot;
    cfg.train.wm_steps_per_update = 0;
    let pre = pretrain_seed(&cfg, seed, None)?;
    let (calibration, wm) = calibrated_world_model(&cfg, seed, wm_slots, wm_steps)?;
    let mut models = pre.models;
    models.wm = wm;
    let greedy = evaluate_models(&cfg, models.clone(), seed, tag, "greedy")?;
    cfg.eval.filter = true;
    let filtered = evaluate_models(&cfg, models.clone(), seed, tag, "filtered")?;
    Ok(StationaryReport {
        seed,
        calibration,
        greedy,
        filtered,
        models,
    })
}
