//! The MCS agent: map encoder, policy head, value baseline and
//! policy-gradient training.

use rand::Rng;

use crate::channel::FeedbackFeatures;
use crate::error::{Error, Result};
use crate::link::NUM_MCS;
use crate::nn::{Adam, GradientSet, Net};
use crate::rng::{stream_from_seed, RngStream};
use crate::scene::{rasterize, render_aerial, AerialRaster, Point, Scene, UserState, CH_USER, RASTER_CHANNELS};

/// Side length of the pooled raster fed to the map encoder.
pub const POOLED_SIDE: usize = 16;
pub const ENCODER_INPUT_DIM: usize = RASTER_CHANNELS * POOLED_SIDE * POOLED_SIDE;
/// Four feedback features, the map estimate and its presence flag.
pub const POLICY_INPUT_DIM: usize = 6;

/// Fixed affine maps bringing dB quantities to roughly `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub snr_center_db: f64,
    pub snr_scale_db: f64,
    pub std_center_db: f64,
    pub std_scale_db: f64,
    pub power_center_dbm: f64,
    pub power_scale_db: f64,
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            snr_center_db: 15.0,
            snr_scale_db: 20.0,
            std_center_db: 4.0,
            std_scale_db: 4.0,
            power_center_dbm: -75.0,
            power_scale_db: 30.0,
        }
    }
}

impl Normalization {
    pub fn feedback(&self, fb: &FeedbackFeatures) -> [f64; 4] {
        let snr = |v: f64| (v - self.snr_center_db) / self.snr_scale_db;
        [
            snr(fb.mean_db),
            (fb.std_db - self.std_center_db) / self.std_scale_db,
            snr(fb.p10_db),
            snr(fb.p90_db),
        ]
    }

    pub fn power(&self, dbm: f64) -> f64 {
        (dbm - self.power_center_dbm) / self.power_scale_db
    }

    pub fn power_dbm(&self, normalized: f64) -> f64 {
        self.power_center_dbm + self.power_scale_db * normalized
    }
}

/// Normalized policy observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyInput {
    pub feedback: [f64; 4],
    /// Normalized map power estimate, present only when the map expert ran.
    pub map_power: Option<f64>,
}

impl PolicyInput {
    /// Fixed-width encoding: absent estimates become `(0, flag 0)`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(POLICY_INPUT_DIM);
        v.extend_from_slice(&self.feedback);
        match self.map_power {
            Some(p) => v.extend_from_slice(&[p, 1.0]),
            None => v.extend_from_slice(&[0.0, 0.0]),
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.feedback.iter().all(|v| v.is_finite()) && self.map_power.is_none_or(f64::is_finite)
    }
}

/// Average-pools every raster plane to `16 x 16` and flattens channel-major.
pub fn pool_raster(raster: &AerialRaster) -> Vec<f64> {
    let r = raster.resolution;
    assert!(r % POOLED_SIDE == 0, "raster resolution {r} not divisible by {POOLED_SIDE}");
    let block = r / POOLED_SIDE;
    let norm = 1.0 / (block * block) as f64;
    let mut out = vec![0.0; ENCODER_INPUT_DIM];
    for c in 0..RASTER_CHANNELS {
        let plane = raster.plane(c);
        let dst = &mut out[c * POOLED_SIDE * POOLED_SIDE..(c + 1) * POOLED_SIDE * POOLED_SIDE];
        for row in 0..r {
            let prow = row / block;
            for (col, &v) in plane[row * r..(row + 1) * r].iter().enumerate() {
                dst[prow * POOLED_SIDE + col / block] += f64::from(v);
            }
        }
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    out
}

/// Pooled raster of one scene for any user position, without re-rendering.
/// Only the user-mask plane depends on the user, and pooling is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MapFeaturizer {
    scene: Scene,
    resolution: usize,
    static_pooled: Vec<f64>,
}

impl MapFeaturizer {
    pub fn new(scene: &Scene, resolution: usize) -> Self {
        let mut raster = render_aerial(scene, &UserState::at(scene.bs_pos, 0.0), resolution);
        let n = resolution * resolution;
        raster.data[CH_USER * n..(CH_USER + 1) * n].fill(0.0);
        Self {
            scene: scene.clone(),
            resolution,
            static_pooled: pool_raster(&raster),
        }
    }

    pub fn pooled(&self, user: &Point) -> Vec<f64> {
        let r = self.resolution;
        let block = r / POOLED_SIDE;
        let weight = 1.0 / (block * block) as f64;
        let mut out = self.static_pooled.clone();
        let base = CH_USER * POOLED_SIDE * POOLED_SIDE;
        let (col, row) = rasterize(&self.scene, user, r);
        for rr in row.saturating_sub(1)..=(row + 1).min(r - 1) {
            for cc in col.saturating_sub(1)..=(col + 1).min(r - 1) {
                out[base + (rr / block) * POOLED_SIDE + cc / block] += weight;
            }
        }
        out
    }
}

/// Received-power estimate in dBm from an already pooled raster.
pub fn encode_pooled(pooled: &[f64], encoder: &Net, norm: &Normalization) -> Result<f64> {
    let out = encoder.forward(pooled)?;
    Ok(norm.power_dbm(out[0]))
}

pub fn encode_map(raster: &AerialRaster, encoder: &Net, norm: &Normalization) -> Result<f64> {
    encode_pooled(&pool_raster(raster), encoder, norm)
}

/// One supervised sample for the map encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSample {
    pub pooled: Vec<f64>,
    pub power_dbm: f64,
}

impl MapSample {
    pub fn from_raster(raster: &AerialRaster, power_dbm: f64) -> Self {
        Self {
            pooled: pool_raster(raster),
            power_dbm,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderTraining {
    pub lr: f64,
    pub batch: usize,
    pub holdout_fraction: f64,
    /// Optimizer steps between held-out evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    pub max_steps: usize,
    pub seed: u64,
}

impl Default for EncoderTraining {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            batch: 32,
            holdout_fraction: 0.2,
            eval_every: 200,
            patience: 10,
            max_steps: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderReport {
    /// Held-out RMSE of the returned checkpoint, in dB.
    pub holdout_rmse_db: f64,
    /// Standard deviation of the held-out targets, in dB.
    pub holdout_target_std_db: f64,
    pub steps: usize,
    pub degenerate: bool,
}

fn rmse_db(encoder: &Net, data: &[MapSample], norm: &Normalization) -> Result<f64> {
    let mut sse = 0.0;
    for s in data {
        let e = encode_pooled(&s.pooled, encoder, norm)? - s.power_dbm;
        sse += e * e;
    }
    Ok((sse / data.len() as f64).sqrt())
}

fn std_of(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    (values.map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Mean-squared-error regression of the normalized power target, with early
/// stopping on held-out RMSE. The last `holdout_fraction` of `data` is held out.
pub fn pretrain_map_encoder(data: &[MapSample], encoder: Net, norm: &Normalization, opts: &EncoderTraining) -> Result<(Net, EncoderReport)> {
    if data.len() < 100 {
        return Err(Error::Precondition(format!(
            "map encoder pretraining needs at least 100 samples, got {}",
            data.len()
        )));
    }
    let n_hold = ((data.len() as f64 * opts.holdout_fraction).round() as usize).clamp(1, data.len() - 1);
    let (train, hold) = data.split_at(data.len() - n_hold);
    let hold_std = std_of(hold.iter().map(|s| s.power_dbm));
    let all_std = std_of(data.iter().map(|s| s.power_dbm));
    let mut encoder = encoder;

    if all_std == 0.0 {
        log::warn!("map encoder targets have zero variance; returning a constant predictor");
        let last = encoder.layers.len() - 1;
        for l in &mut encoder.layers[last..] {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
            l.bias[0] = norm.power(data[0].power_dbm);
        }
        let rmse = rmse_db(&encoder, hold, norm)?;
        return Ok((
            encoder,
            EncoderReport {
                holdout_rmse_db: rmse,
                holdout_target_std_db: hold_std,
                steps: 0,
                degenerate: true,
            },
        ));
    }

    let (offset, scale) = input_standardization(train);
    let standardize = |set: &[MapSample]| -> Vec<MapSample> {
        set.iter()
            .map(|s| MapSample {
                pooled: s.pooled.iter().zip(&offset).zip(&scale).map(|((x, m), k)| (x - m) * k).collect(),
                power_dbm: s.power_dbm,
            })
            .collect()
    };
    let (train, hold_z) = (standardize(train), standardize(hold));

    let mut rng = stream_from_seed(opts.seed);
    let mut opt = Adam::new(&encoder, opts.lr);
    let mut best = (rmse_db(&encoder, &hold_z, norm)?, encoder.clone());
    let mut stale = 0;
    let mut steps = 0;
    while steps < opts.max_steps && stale < opts.patience {
        for _ in 0..opts.eval_every {
            let mut grads = GradientSet::zeros_like(&encoder);
            for _ in 0..opts.batch {
                let s = &train[rng.random_range(0..train.len())];
                let trace = encoder.trace(&s.pooled)?;
                let err = trace.output()[0] - norm.power(s.power_dbm);
                encoder.accumulate(&trace, &[2.0 * err / opts.batch as f64], &mut grads)?;
            }
            opt.step(&mut encoder, &grads)?;
            steps += 1;
        }
        let rmse = rmse_db(&encoder, &hold_z, norm)?;
        if !rmse.is_finite() {
            return Err(Error::Training(format!("map encoder RMSE became {rmse} at step {steps}")));
        }
        if rmse < best.0 {
            best = (rmse, encoder.clone());
            stale = 0;
        } else {
            stale += 1;
        }
    }
    let folded = fold_standardization(best.1, &offset, &scale);
    Ok((
        folded,
        EncoderReport {
            holdout_rmse_db: best.0,
            holdout_target_std_db: hold_std,
            steps,
            degenerate: false,
        },
    ))
}

/// Per-input mean over `data`, and one common scale that gives the centered
/// inputs unit mean squared norm. Inputs that never vary get a zero scale.
fn input_standardization(data: &[MapSample]) -> (Vec<f64>, Vec<f64>) {
    let dim = data[0].pooled.len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in data {
        mean.iter_mut().zip(&s.pooled).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for s in data {
        var.iter_mut().zip(&s.pooled).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2) / n);
    }
    let total: f64 = var.iter().sum();
    let k = if total > 1e-12 { 1.0 / total.sqrt() } else { 0.0 };
    let scale = var.iter().map(|v| if *v > 1e-12 { k } else { 0.0 }).collect();
    (mean, scale)
}

/// Rewrites the first layer so the net takes raw inputs:
/// `W (x - m) * k + b` becomes `(W k) x + (b - W (m k))`.
fn fold_standardization(mut net: Net, offset: &[f64], scale: &[f64]) -> Net {
    let first = &mut net.layers[0];
    for o in 0..first.outputs {
        let row = &mut first.weights[o * first.inputs..(o + 1) * first.inputs];
        let mut shift = 0.0;
        for ((w, m), k) in row.iter_mut().zip(offset).zip(scale) {
            *w *= k;
            shift += *w * m;
        }
        first.bias[o] -= shift;
    }
    net
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn policy_distribution(input: &PolicyInput, policy: &Net) -> Result<Vec<f64>> {
    Ok(softmax(&policy.forward(&input.to_vec())?))
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy argmax or inverse-CDF sampling.
pub fn select_action(probs: &[f64], rng: &mut RngStream, greedy: bool) -> usize {
    if greedy {
        return argmax(probs);
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One observed slot: what the policy saw, what it did, what it earned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub input: PolicyInput,
    pub action: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeBatch {
    pub steps: Vec<Step>,
}

impl EpisodeBatch {
    pub fn push(&mut self, input: PolicyInput, action: usize, reward: f64) {
        self.steps.push(Step { input, action, reward });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn clear(&mut self) {
        self.steps.clear();
    }

    pub fn mean_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

/// Gradient of the REINFORCE surrogate
/// `-(1/N) sum_i [A_i log pi(a_i|s_i) + beta H(pi(.|s_i))]`
/// given `(input vector, action, advantage)` triples. Returns the loss too.
pub fn policy_gradient(policy: &Net, samples: &[(Vec<f64>, usize, f64)], beta: f64) -> Result<(GradientSet, f64)> {
    let n = samples.len() as f64;
    let mut grads = GradientSet::zeros_like(policy);
    let mut loss = 0.0;
    for (x, action, adv) in samples {
        let trace = policy.trace(x)?;
        let probs = softmax(trace.output());
        let log_probs: Vec<f64> = probs.iter().map(|p| p.max(1e-300).ln()).collect();
        let entropy: f64 = -probs.iter().zip(&log_probs).map(|(p, lp)| p * lp).sum::<f64>();
        loss -= (adv * log_probs[*action] + beta * entropy) / n;
        let dlogits: Vec<f64> = probs
            .iter()
            .zip(&log_probs)
            .enumerate()
            .map(|(j, (&p, &lp))| {
                let onehot = if j == *action { 1.0 } else { 0.0 };
                let d_logpi = adv * (onehot - p);
                let d_entropy = -p * (lp + entropy);
                -(d_logpi + beta * d_entropy) / n
            })
            .collect();
        policy.accumulate(&trace, &dlogits, &mut grads)?;
    }
    Ok((grads, loss))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub baseline_loss: f64,
    pub mean_reward: f64,
    pub mean_advantage: f64,
}

/// Policy and baseline nets with their own optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub policy: Net,
    pub baseline: Net,
    pub policy_opt: Adam,
    pub baseline_opt: Adam,
    pub entropy_beta: f64,
}

impl Agent {
    pub fn new(policy: Net, baseline: Net, policy_lr: f64, baseline_lr: f64, entropy_beta: f64) -> Result<Self> {
        if policy.input_dim() != POLICY_INPUT_DIM || policy.output_dim() != NUM_MCS {
            return Err(Error::Contract(format!(
                "policy must map {POLICY_INPUT_DIM} inputs to {NUM_MCS} logits"
            )));
        }
        if baseline.input_dim() != POLICY_INPUT_DIM || baseline.output_dim() != 1 {
            return Err(Error::Contract(format!("baseline must map {POLICY_INPUT_DIM} inputs to 1 value")));
        }
        Ok(Self {
            policy_opt: Adam::new(&policy, policy_lr),
            baseline_opt: Adam::new(&baseline, baseline_lr),
            policy,
            baseline,
            entropy_beta,
        })
    }

    pub fn distribution(&self, input: &PolicyInput) -> Result<Vec<f64>> {
        policy_distribution(input, &self.policy)
    }

    /// One REINFORCE step with a learned baseline. A step whose gradient is
    /// exactly zero is skipped, so zero-advantage batches leave the net as is.
    pub fn reinforce_update(&mut self, batch: &EpisodeBatch) -> Result<UpdateStats> {
        if batch.is_empty() {
            return Err(Error::Precondition("REINFORCE update on an empty batch".into()));
        }
        let n = batch.len() as f64;
        let mut samples = Vec::with_capacity(batch.len());
        let mut base_grads = GradientSet::zeros_like(&self.baseline);
        let mut baseline_loss = 0.0;
        let mut adv_sum = 0.0;
        for s in &batch.steps {
            if !s.reward.is_finite() || !s.input.is_finite() {
                return Err(self.diagnose(batch, "non-finite reward or input"));
            }
            let x = s.input.to_vec();
            let trace = self.baseline.trace(&x)?;
            let value = trace.output()[0];
            let adv = s.reward - value;
            baseline_loss += adv * adv / n;
            adv_sum += adv;
            self.baseline.accumulate(&trace, &[-2.0 * adv / n], &mut base_grads)?;
            samples.push((x, s.action, adv));
        }
        let (policy_grads, policy_loss) = policy_gradient(&self.policy, &samples, self.entropy_beta)?;
        if !policy_loss.is_finite() || !baseline_loss.is_finite() {
            return Err(self.diagnose(batch, "non-finite loss"));
        }
        if !policy_grads.is_zero() {
            self.policy_opt.step(&mut self.policy, &policy_grads)?;
        }
        if !base_grads.is_zero() {
            self.baseline_opt.step(&mut self.baseline, &base_grads)?;
        }
        Ok(UpdateStats {
            policy_loss,
            baseline_loss,
            mean_reward: batch.mean_reward(),
            mean_advantage: adv_sum / n,
        })
    }

    fn diagnose(&self, batch: &EpisodeBatch, what: &str) -> Error {
        let rewards: Vec<f64> = batch.steps.iter().map(|s| s.reward).collect();
        Error::Training(format!(
            "{what}: batch of {} steps, rewards min {:?} max {:?}, policy finite {}, baseline finite {}",
            batch.len(),
            rewards.iter().copied().fold(f64::INFINITY, f64::min),
            rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            self.policy.is_finite(),
            self.baseline.is_finite()
        ))
    }
}
