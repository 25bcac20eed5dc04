use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eiw_core::channel::Density;
use eiw_core::harness::config::{ExperimentConfig, Scheme};
use eiw_core::harness::experiments::{
    compare_labels, evaluate_checkpoints, median_gain, online_adapt_experiment, pretrain_experiment, scene_for,
    side_information_experiment, sweep_aggregate, sweep_lambda, tier_transfer_experiment,
};
use eiw_core::harness::plots::emit_plots;
use eiw_core::harness::selftest::run_selftest;
use eiw_core::scene::ScenarioTag;
use eiw_core::{Error, Result};

#[derive(Parser)]
#[command(name = "eiw", about = "Map-aided link adaptation with a world model: experiment harness")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, env = "EIW_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set gate.lambda=0.2`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE", env = "EIW_SET", value_delimiter = ';')]
    overrides: Vec<String>,
    /// Comma-separated master seeds (overrides run.seeds).
    #[arg(long, global = true, env = "EIW_SEEDS")]
    seeds: Option<String>,
    /// Output directory (overrides run.output_dir).
    #[arg(long, global = true, env = "EIW_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and write it in text form.
    GenScene {
        #[arg(long, env = "EIW_SCENARIO", default_value = "los")]
        scenario: ScenarioTag,
        #[arg(long, env = "EIW_SEED", default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "EIW_OUT")]
        out: PathBuf,
    },
    /// Pretrain encoder, policy, gate and world model for every seed.
    Pretrain,
    /// Greedy evaluation of checkpoints, or a paired comparison experiment.
    Evaluate {
        /// Checkpoint roots holding `seed_<s>/` sets. Repeatable.
        #[arg(long, env = "EIW_CHECKPOINTS", value_delimiter = ',')]
        checkpoints: Vec<PathBuf>,
        #[arg(long, env = "EIW_SCENARIO", default_value = "nlos")]
        scenario: ScenarioTag,
        /// Replace the policy by the genie.
        #[arg(long, env = "EIW_ORACLE")]
        oracle: bool,
        /// Pilot-only versus pilot-plus-map at the given densities.
        #[arg(long, env = "EIW_SIDE_INFORMATION", value_delimiter = ',', num_args = 1..)]
        side_information: Vec<Density>,
        /// Zero-shot transfer of every tier in `net.compare_tiers`.
        #[arg(long, env = "EIW_TIERS")]
        tiers: bool,
    },
    /// Train and evaluate the gate over the `sweep.lambdas` grid.
    SweepLambda,
    /// Deploy pretrained models after the scene shift.
    OnlineAdapt {
        /// Checkpoint root from `pretrain`; pretrains in memory when absent.
        #[arg(long, env = "EIW_CHECKPOINTS")]
        checkpoints: Option<PathBuf>,
        /// Scheme to run, or `all`.
        #[arg(long, env = "EIW_SCHEME")]
        scheme: Option<String>,
    },
    /// Aggregate series files into per-figure CSV and SVG.
    Plot {
        /// Series files; defaults to every `series_*.csv` under the output directory.
        #[arg(long, env = "EIW_INPUTS", value_delimiter = ',')]
        inputs: Vec<PathBuf>,
    },
    /// Print every config key with its default and meaning.
    ConfigReference,
    /// Gradient checks and oracle invariants.
    Selftest {
        #[arg(long, env = "EIW_SEED", default_value_t = 1)]
        seed: u64,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    for o in &c.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = &c.seeds {
        cfg.set("run.seeds", s)?;
    }
    if let Some(d) = &c.output_dir {
        cfg.run.output_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn find_series(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        if p.is_dir() {
            find_series(&p, found)?;
        } else if p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("series_") && n.ends_with(".csv")) {
            found.push(p);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::ConfigReference = cli.command {
        print!("{}", ExperimentConfig::reference());
        return Ok(());
    }
    let cfg = load_config(&cli.common)?;
    let out = cfg.run.output_dir.clone();
    match cli.command {
        Command::ConfigReference => unreachable!(),
        Command::GenScene { scenario, seed, out } => {
            let scene = scene_for(&cfg, seed, scenario)?;
            std::fs::write(&out, scene.to_text()).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            println!(
                "{} scene, {} buildings, coverage {:.3} -> {}",
                scenario,
                scene.buildings.len(),
                scene.coverage_fraction(),
                out.display()
            );
        }
        Command::Pretrain => {
            let root = out.join("pretrain");
            for o in pretrain_experiment(&cfg, &root)? {
                if let Some(last) = o.log.last() {
                    let encoder = o
                        .encoder_report
                        .map_or_else(|| "not trained".to_string(), |r| format!("RMSE {:.2} dB", r.holdout_rmse_db));
                    println!(
                        "seed {}: throughput {:.3} ({:.1}% of genie), encoder {encoder}",
                        o.seed,
                        last.mean_throughput,
                        100.0 * last.genie_ratio(),
                    );
                }
            }
            println!("checkpoints under {}", root.display());
        }
        Command::Evaluate {
            checkpoints,
            scenario,
            oracle,
            side_information,
            tiers,
        } => {
            let mut cfg = cfg;
            cfg.eval.oracle |= oracle;
            if !side_information.is_empty() {
                let rows = side_information_experiment(&cfg, &side_information, &out.join("side_information"))?;
                for d in &side_information {
                    println!("density {d}: median relative gain of the map {:+.2}%", 100.0 * median_gain(&rows, *d));
                }
            }
            if tiers {
                let summaries = tier_transfer_experiment(&cfg, &out.join("tiers"))?;
                for (label, m, ci, n) in compare_labels(&summaries) {
                    println!("{label}: {m:.3} +/- {ci:.3} over {n} seeds");
                }
            }
            if !checkpoints.is_empty() || (side_information.is_empty() && !tiers) {
                if checkpoints.is_empty() {
                    return Err(Error::Config("evaluate needs --checkpoints, --side-information or --tiers".into()));
                }
                let summaries = evaluate_checkpoints(&cfg, &checkpoints, scenario, &out.join("evaluate"))?;
                for s in &summaries {
                    println!(
                        "{} seed {}: throughput {:.3} +/- {:.3}, genie ratio {:.3}, expert-2 fraction {:.3}",
                        s.label,
                        s.seed,
                        s.mean_throughput,
                        s.std_throughput,
                        s.genie_ratio(),
                        s.expert2_fraction
                    );
                }
            }
        }
        Command::SweepLambda => {
            let rows = sweep_lambda(&cfg, &out.join("sweep"))?;
            for (l, f, t, j) in sweep_aggregate(&rows) {
                println!("lambda {l}: expert-2 fraction {f:.3}, throughput {t:.3}, objective {j:.3}");
            }
        }
        Command::OnlineAdapt { checkpoints, scheme } => {
            let schemes = match scheme.as_deref() {
                Some("all") => Scheme::ALL.to_vec(),
                Some(s) => vec![s.parse()?],
                None => vec![cfg.online.scheme],
            };
            for r in online_adapt_experiment(&cfg, checkpoints.as_deref(), &schemes, &out.join("online"))? {
                println!(
                    "{} seed {}: converged {:.3}, interactions to 90% {}",
                    r.scheme, r.seed, r.converged, r.interactions_to_90
                );
            }
        }
        Command::Plot { inputs } => {
            let mut inputs = inputs;
            if inputs.is_empty() {
                find_series(&out, &mut inputs)?;
            }
            for p in emit_plots(&inputs, &out.join("plots"))? {
                println!("{}", p.display());
            }
        }
        Command::Selftest { seed } => {
            let mut failed = false;
            for c in run_selftest(seed)? {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed |= !c.passed;
            }
            if failed {
                return Err(Error::Training("selftest failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
