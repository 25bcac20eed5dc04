//! Built-in checks: finite-difference gradients on random nets, genie
//! dominance, and the filter's safety bound.

use rand::Rng;

use crate::channel::SnrVector;
use crate::error::Result;
use crate::link::{McsTable, SuccessModel, NUM_MCS};
use crate::nn::{finite_diff_check, randomize, Activation, Architecture, Net};
use crate::rng::SeedTree;
use crate::world_model::{counterfactual_filter, wm_input_dim, WmState, WorldModel, DEFAULT_HISTORY, FRAME_DIM, WM_OUTPUT_DIM};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_NETS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Largest relative finite-difference error over `count` random small nets
/// (plain tanh stacks and residual stacks).
pub fn gradient_suite(seed: u64, count: usize) -> Result<f64> {
    let tree = SeedTree::new(seed).child("selftest");
    let mut rng = tree.stream("nets");
    let mut worst = 0.0f64;
    for i in 0..count {
        let inputs = rng.random_range(1..6);
        let outputs = rng.random_range(1..5);
        let depth = rng.random_range(0..3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(2..17)).collect();
        let mut arch = Architecture::mlp(inputs, &hidden, outputs, Activation::Tanh);
        if i % 4 == 3 {
            arch = Architecture::mlp(inputs, &[12, 12, 12], outputs, Activation::Tanh);
            arch.layers[1].residual = true;
            arch.layers[2].residual = true;
        }
        let mut net = Net::build(&arch, tree.seed(&format!("net{i}")))?;
        randomize(&mut net, tree.seed(&format!("params{i}")), 0.5);
        let x: Vec<f64> = (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(finite_diff_check(&net, &x, GRAD_TOLERANCE)?.max_rel_error);
    }
    Ok(worst)
}

/// Number of random SNR vectors on which some MCS beats the genie choice.
pub fn genie_violations(seed: u64, vectors: usize) -> usize {
    let mut rng = SeedTree::new(seed).stream("selftest-snr");
    let tables = [McsTable::with_model(SuccessModel::HardThreshold), McsTable::with_model(SuccessModel::Logistic)];
    let mut bad = 0;
    for _ in 0..vectors {
        let db: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..40.0)).collect();
        let snr = SnrVector::from_db(&db);
        for t in &tables {
            let (_, g) = t.genie_best(&snr);
            bad += usize::from((0..NUM_MCS).any(|m| t.throughput(&snr, m) > g));
        }
    }
    bad
}

/// Number of random states where the filter returns an action predicted
/// below `safety_fraction` of the best prediction, for a random world model.
pub fn filter_violations(seed: u64, states: usize, safety_fraction: f64) -> Result<usize> {
    let tree = SeedTree::new(seed).child("selftest-filter");
    let mut net = Net::build(&Architecture::mlp(wm_input_dim(DEFAULT_HISTORY), &[16], WM_OUTPUT_DIM, Activation::Tanh), tree.seed("init"))?;
    randomize(&mut net, tree.seed("params"), 1.0);
    let mut wm = WorldModel::new(net, 1e-3, 5.0, 32)?;
    filter_bound_violations(&mut wm, DEFAULT_HISTORY, seed, states, safety_fraction)
}

/// [`filter_violations`] for a given world model over `history`-frame states.
pub fn filter_bound_violations(wm: &mut WorldModel, history: usize, seed: u64, states: usize, safety_fraction: f64) -> Result<usize> {
    let mut rng = SeedTree::new(seed).child("selftest-filter").stream("states");
    let mut bad = 0;
    for _ in 0..states {
        let frames = (0..history).map(|_| {
            let mut f = [0.0; FRAME_DIM];
            f.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
            f
        });
        let state = WmState::from_frames(frames.collect())?;
        let proposed = rng.random_range(0..NUM_MCS);
        let d = counterfactual_filter(&state, proposed, wm, safety_fraction)?;
        let best = d.predicted.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        bad += usize::from(d.predicted[d.action] < safety_fraction * best);
    }
    Ok(bad)
}

pub fn run_selftest(seed: u64) -> Result<Vec<CheckResult>> {
    let worst = gradient_suite(seed, GRAD_NETS)?;
    let genie = genie_violations(seed, 1000);
    let filter = filter_violations(seed, 1000, 0.5)?;
    Ok(vec![
        CheckResult {
            name: "gradients",
            passed: worst <= GRAD_TOLERANCE,
            detail: format!("max relative error {worst:.3e} over {GRAD_NETS} nets"),
        },
        CheckResult {
            name: "genie-dominance",
            passed: genie == 0,
            detail: format!("{genie} violations over 1000 SNR vectors x 2 success models"),
        },
        CheckResult {
            name: "filter-bound",
            passed: filter == 0,
            detail: format!("{filter} violations over 1000 random states"),
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selftest_passes() {
        for c in run_selftest(3).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
