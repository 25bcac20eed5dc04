//! Time-correlated frequency-selective multicarrier channel, sparse pilot
//! observation and feedback compression.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{stream_from_seed, RngStream};

/// Lower clamp applied when converting linear SNR to dB, so a dead
/// subcarrier maps to a finite value.
pub const SNR_DB_FLOOR: f64 = -50.0;

/// Quantization step of the fed-back features.
pub const FEEDBACK_STEP_DB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    /// Number of delay taps.
    pub taps: usize,
    /// Ratio between consecutive tap powers of the exponential profile.
    pub decay: f64,
    /// Per-slot Gauss-Markov correlation.
    pub rho: f64,
    /// Subcarrier count, a power of two.
    pub subcarriers: usize,
    pub noise_power_dbm: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            taps: 8,
            decay: 0.5,
            rho: 0.99,
            subcarriers: 64,
            noise_power_dbm: -90.0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::Config("channel needs at least one tap".into()));
        }
        if !self.subcarriers.is_power_of_two() {
            return Err(Error::Config(format!(
                "subcarrier count {} is not a power of two",
                self.subcarriers
            )));
        }
        if self.taps > self.subcarriers {
            return Err(Error::Config("more taps than subcarriers".into()));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("rho {} outside [0, 1)", self.rho)));
        }
        if !(self.decay > 0.0) || !self.noise_power_dbm.is_finite() {
            return Err(Error::Config("decay must be positive and noise power finite".into()));
        }
        Ok(())
    }

    /// Exponential power-delay profile normalised to unit sum.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.taps).map(|l| self.decay.powi(l as i32)).collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelState {
    pub taps: Vec<Complex64>,
    pub tap_powers: Vec<f64>,
    pub rho: f64,
    /// Mean received power in dBm (transmit power minus pathloss).
    pub large_scale_gain_db: f64,
    pub noise_power_dbm: f64,
    pub subcarriers: usize,
}

fn draw_tap(power: f64, rng: &mut RngStream) -> Complex64 {
    let scale = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * scale, im * scale)
}

/// Draws the initial taps; the large-scale gain starts at 0 dBm and is set by
/// the first [`step_channel`].
pub fn init_channel(params: &ChannelParams, seed: u64) -> Result<ChannelState> {
    params.validate()?;
    let mut rng = stream_from_seed(seed);
    Ok(init_channel_with(params, &mut rng))
}

/// Same as [`init_channel`] but drawing from a caller-owned stream.
pub fn init_channel_with(params: &ChannelParams, rng: &mut RngStream) -> ChannelState {
    let tap_powers = params.tap_powers();
    let taps = tap_powers.iter().map(|&p| draw_tap(p, rng)).collect();
    ChannelState {
        taps,
        tap_powers,
        rho: params.rho,
        large_scale_gain_db: 0.0,
        noise_power_dbm: params.noise_power_dbm,
        subcarriers: params.subcarriers,
    }
}

/// One Gauss-Markov step `h <- rho h + sqrt(1 - rho^2) w`.
pub fn step_channel(state: &ChannelState, large_scale_db: f64, rng: &mut RngStream) -> ChannelState {
    let innov = (1.0 - state.rho * state.rho).sqrt();
    let taps = state
        .taps
        .iter()
        .zip(&state.tap_powers)
        .map(|(h, &p)| h * state.rho + draw_tap(p, rng) * innov)
        .collect();
    ChannelState {
        taps,
        large_scale_gain_db: large_scale_db,
        ..state.clone()
    }
}

/// Per-subcarrier SNR on a linear scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrVector(pub Vec<f64>);

impl SnrVector {
    pub fn flat(value: f64, k: usize) -> Self {
        SnrVector(vec![value; k])
    }

    pub fn from_db(db: &[f64]) -> Self {
        SnrVector(db.iter().map(|d| 10f64.powf(d / 10.0)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_db(&self) -> Vec<f64> {
        self.0.iter().map(|&s| lin_to_db(s)).collect()
    }
}

pub fn lin_to_db(x: f64) -> f64 {
    if x > 0.0 {
        (10.0 * x.log10()).max(SNR_DB_FLOOR)
    } else {
        SNR_DB_FLOOR
    }
}

/// K-point DFT of the zero-padded taps, without normalisation, so that the
/// mean of `|H_k|^2` equals the total tap energy.
pub fn frequency_response(taps: &[Complex64], k: usize) -> Vec<Complex64> {
    (0..k)
        .map(|sc| {
            taps.iter()
                .enumerate()
                .map(|(l, h)| {
                    let angle = -2.0 * std::f64::consts::PI * ((sc * l) % k) as f64 / k as f64;
                    h * Complex64::from_polar(1.0, angle)
                })
                .sum()
        })
        .collect()
}

pub fn subcarrier_snr(state: &ChannelState) -> SnrVector {
    let gain = 10f64.powf((state.large_scale_gain_db - state.noise_power_dbm) / 10.0);
    SnrVector(
        frequency_response(&state.taps, state.subcarriers)
            .into_iter()
            .map(|h| h.norm_sqr() * gain)
            .collect(),
    )
}

/// Pilot density as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Density {
    pub num: u32,
    pub den: u32,
}

impl Density {
    /// Every subcarrier carries a pilot.
    pub const FULL: Density = Density { num: 1, den: 1 };

    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 || num > den {
            return Err(Error::Config(format!("pilot density {num}/{den} outside (0, 1]")));
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        f64::from(self.num) / f64::from(self.den)
    }

    /// Number of pilots on `k` subcarriers.
    pub fn pilot_count(&self, k: usize) -> usize {
        ((k as f64 * self.value()).round() as usize).clamp(1, k)
    }

    /// Evenly spaced indices starting at 0.
    pub fn pilot_indices(&self, k: usize) -> Vec<usize> {
        let count = self.pilot_count(k);
        (0..count).map(|i| i * k / count).collect()
    }
}

impl FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Config(format!("cannot parse pilot density `{s}` (expected a/b)"));
        match s.split_once('/') {
            Some((a, b)) => Density::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?),
            None => Density::new(s.parse().map_err(|_| bad())?, 1),
        }
    }
}

impl fmt::Display for Density {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotObservation {
    pub pilot_indices: Vec<usize>,
    pub snr_est_db: Vec<f64>,
    pub density: Density,
}

/// Noisy dB-domain SNR estimates on the pilot subcarriers.
pub fn observe_pilots(snr: &SnrVector, density: Density, noise_std_db: f64, rng: &mut RngStream) -> PilotObservation {
    let pilot_indices = density.pilot_indices(snr.len());
    let noise = Normal::new(0.0, noise_std_db.max(0.0)).expect("finite std");
    let snr_est_db = pilot_indices
        .iter()
        .map(|&k| {
            let e: f64 = noise.sample(rng);
            lin_to_db(snr.0[k]) + e
        })
        .collect();
    PilotObservation {
        pilot_indices,
        snr_est_db,
        density,
    }
}

/// Compact feedback: four order statistics quantized to 0.5 dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackFeatures {
    pub mean_db: f64,
    pub std_db: f64,
    pub p10_db: f64,
    pub p90_db: f64,
}

impl FeedbackFeatures {
    pub fn as_array(&self) -> [f64; 4] {
        [self.mean_db, self.std_db, self.p10_db, self.p90_db]
    }
}

pub fn quantize_db(x: f64) -> f64 {
    (x / FEEDBACK_STEP_DB).round() * FEEDBACK_STEP_DB
}

fn nearest_rank(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    let rank = ((pct / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Summarises dB values by mean, population std and nearest-rank p10/p90.
pub fn summarize_db(values: &[f64]) -> FeedbackFeatures {
    assert!(!values.is_empty(), "feedback needs at least one pilot");
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean_q = quantize_db(mean);
    // Nearest-rank percentiles of skewed sets can miss the mean; the bracket
    // is widened so that p10 <= mean <= p90 always holds.
    FeedbackFeatures {
        mean_db: mean_q,
        std_db: quantize_db(var.sqrt()),
        p10_db: quantize_db(nearest_rank(&sorted, 10.0)).min(mean_q),
        p90_db: quantize_db(nearest_rank(&sorted, 90.0)).max(mean_q),
    }
}

pub fn compress_feedback(obs: &PilotObservation) -> FeedbackFeatures {
    summarize_db(&obs.snr_est_db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state_with_taps(taps: Vec<Complex64>, k: usize, snr_db: f64) -> ChannelState {
        let l = taps.len();
        ChannelState {
            taps,
            tap_powers: vec![1.0 / l as f64; l],
            rho: 0.0,
            large_scale_gain_db: snr_db - 90.0,
            noise_power_dbm: -90.0,
            subcarriers: k,
        }
    }

    #[test]
    fn flat_single_tap() {
        let params = ChannelParams { taps: 1, rho: 0.0, ..Default::default() };
        let st = init_channel(&params, 3).unwrap();
        assert_eq!(st.taps.len(), 1);
        assert_eq!(st.tap_powers, vec![1.0]);

        let st = state_with_taps(vec![Complex64::new(0.6, 0.8)], 16, 10.0);
        for s in subcarrier_snr(&st).0 {
            assert!((s - 10.0).abs() < 1e-9);
        }
    }

    #[test]
    fn tap_powers_normalised() {
        let p = ChannelParams::default().tap_powers();
        let total: f64 = p.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        // geometric series: first weight is (1 - 0.5) / (1 - 0.5^8)
        assert!((p[0] - 0.5 / (1.0 - 0.5f64.powi(8))).abs() < 1e-12);
    }

    #[test]
    fn invalid_params_rejected() {
        for bad in [
            ChannelParams { taps: 0, ..Default::default() },
            ChannelParams { subcarriers: 48, ..Default::default() },
            ChannelParams { rho: 1.0, ..Default::default() },
            ChannelParams { rho: -0.1, ..Default::default() },
        ] {
            assert!(matches!(init_channel(&bad, 0), Err(Error::Config(_))));
        }
    }

    #[test]
    fn init_is_deterministic() {
        let p = ChannelParams::default();
        assert_eq!(init_channel(&p, 9).unwrap(), init_channel(&p, 9).unwrap());
    }

    #[test]
    fn dead_channel_and_four_point_transform() {
        let dead = state_with_taps(vec![Complex64::new(0.0, 0.0); 3], 8, 10.0);
        assert!(subcarrier_snr(&dead).0.iter().all(|&s| s == 0.0));

        let two = state_with_taps(vec![Complex64::new(1.0, 0.0); 2], 4, 10.0);
        let snr = subcarrier_snr(&two).0;
        let expected = [40.0, 20.0, 0.0, 20.0];
        for (a, e) in snr.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9, "{snr:?}");
        }
    }

    #[test]
    fn memoryless_step_redraws() {
        let p = ChannelParams { rho: 0.0, ..Default::default() };
        let st = init_channel(&p, 1).unwrap();
        let mut rng = stream_from_seed(2);
        let next = step_channel(&st, -60.0, &mut rng);
        assert_eq!(next.large_scale_gain_db, -60.0);
        assert!(next.taps.iter().zip(&st.taps).all(|(a, b)| a != b));
    }

    #[test]
    fn gauss_markov_statistics() {
        let p = ChannelParams::default();
        let mut st = init_channel(&p, 4).unwrap();
        let mut rng = stream_from_seed(5);
        let n = 10_000;
        let mut series = Vec::with_capacity(n);
        for _ in 0..n {
            st = step_channel(&st, 0.0, &mut rng);
            series.push(st.taps[0]);
        }
        let power: f64 = series.iter().map(|h| h.norm_sqr()).sum::<f64>() / n as f64;
        let lag1: Complex64 = series.windows(2).map(|w| w[1] * w[0].conj()).sum::<Complex64>() / (n - 1) as f64;
        let rho_hat = lag1.re / power;
        assert!((rho_hat - 0.99).abs() < 0.02, "rho {rho_hat}");
        // slow mixing at rho=0.99: average the tap power over many
        // independent chains instead of one long one
        let mut total = 0.0;
        let chains = 200;
        for c in 0..chains {
            let mut st = init_channel(&p, 100 + c).unwrap();
            let mut rng = stream_from_seed(1000 + c);
            for _ in 0..50 {
                st = step_channel(&st, 0.0, &mut rng);
                total += st.taps[1].norm_sqr();
            }
        }
        let mean_power = total / (chains * 50) as f64;
        assert!((mean_power - p.tap_powers()[1]).abs() / p.tap_powers()[1] < 0.05, "{mean_power}");
    }

    #[test]
    fn pilot_indices_for_sparse_density() {
        let d: Density = "1/32".parse().unwrap();
        assert_eq!(d.pilot_indices(64), vec![0, 32]);
        let d: Density = "1/4".parse().unwrap();
        assert_eq!(d.pilot_indices(64).len(), 16);
        assert!("0/4".parse::<Density>().is_err());
        assert!("5/4".parse::<Density>().is_err());
    }

    #[test]
    fn noiseless_full_observation_is_exact() {
        let snr = SnrVector(vec![0.5, 2.0, 10.0, 0.0]);
        let obs = observe_pilots(&snr, Density::new(1, 1).unwrap(), 0.0, &mut stream_from_seed(0));
        assert_eq!(obs.snr_est_db, snr.to_db());
        assert_eq!(obs.pilot_indices, vec![0, 1, 2, 3]);
    }

    #[test]
    fn pilot_noise_mean_absolute_error() {
        let snr = SnrVector::flat(10.0, 1);
        let mut rng = stream_from_seed(17);
        let n = 10_000;
        let mae: f64 = (0..n)
            .map(|_| (observe_pilots(&snr, Density::new(1, 1).unwrap(), 1.0, &mut rng).snr_est_db[0] - 10.0).abs())
            .sum::<f64>()
            / n as f64;
        let expected = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mae - expected).abs() < 0.02, "{mae}");
    }

    fn obs(values: &[f64]) -> PilotObservation {
        PilotObservation {
            pilot_indices: (0..values.len()).collect(),
            snr_est_db: values.to_vec(),
            density: Density::new(1, 1).unwrap(),
        }
    }

    #[test]
    fn feedback_examples() {
        let f = compress_feedback(&obs(&[7.3]));
        assert_eq!(f.as_array(), [7.5, 0.0, 7.5, 7.5]);
        let f = compress_feedback(&obs(&[10.0; 5]));
        assert_eq!(f.as_array(), [10.0, 0.0, 10.0, 10.0]);
        let f = compress_feedback(&obs(&[0.0, 10.0]));
        assert_eq!(f.as_array(), [5.0, 5.0, 0.0, 10.0]);
    }

    #[test]
    fn full_noiseless_feedback_reproduces_true_summary() {
        let p = ChannelParams::default();
        let mut st = init_channel(&p, 8).unwrap();
        st.large_scale_gain_db = -70.0;
        let snr = subcarrier_snr(&st);
        let obs = observe_pilots(&snr, Density::new(1, 1).unwrap(), 0.0, &mut stream_from_seed(0));
        let fb = compress_feedback(&obs);
        let db = snr.to_db();
        let mean = db.iter().sum::<f64>() / db.len() as f64;
        assert!((fb.mean_db - mean).abs() <= FEEDBACK_STEP_DB);
    }

    proptest! {
        #[test]
        fn parseval(seed in 0u64..1000, k_pow in 3u32..8) {
            let p = ChannelParams { subcarriers: 1 << k_pow, ..Default::default() };
            let st = init_channel(&p, seed).unwrap();
            let h = frequency_response(&st.taps, st.subcarriers);
            let mean_freq = h.iter().map(|c| c.norm_sqr()).sum::<f64>() / h.len() as f64;
            let energy: f64 = st.taps.iter().map(|c| c.norm_sqr()).sum();
            prop_assert!((mean_freq - energy).abs() < 1e-9);
        }

        #[test]
        fn feedback_bracket_holds(values in prop::collection::vec(-40.0f64..60.0, 1..64)) {
            let f = compress_feedback(&obs(&values));
            prop_assert!(f.p10_db <= f.mean_db + FEEDBACK_STEP_DB);
            prop_assert!(f.mean_db <= f.p90_db + FEEDBACK_STEP_DB);
            prop_assert!(f.std_db >= 0.0);
            for v in f.as_array() {
                prop_assert!(((v / FEEDBACK_STEP_DB).round() * FEEDBACK_STEP_DB - v).abs() < 1e-12);
            }
        }

        #[test]
        fn step_is_deterministic(seed in 0u64..100) {
            let st = init_channel(&ChannelParams::default(), seed).unwrap();
            let a = step_channel(&st, -70.0, &mut stream_from_seed(seed));
            let b = step_channel(&st, -70.0, &mut stream_from_seed(seed));
            prop_assert_eq!(a, b);
        }
    }
}
