//! MCS action set, per-subcarrier success model, throughput reward and the
//! exhaustive genie.

use std::str::FromStr;

use crate::channel::SnrVector;
use crate::error::{Error, Result};

/// Bits per symbol of each modulation order, lowest first.
pub const MCS_RATES: [f64; 5] = [1.0, 2.0, 4.0, 6.0, 8.0];
pub const MCS_NAMES: [&str; 5] = ["BPSK", "QPSK", "16QAM", "64QAM", "256QAM"];
pub const NUM_MCS: usize = MCS_RATES.len();
/// Capacity margin, in bits, required on top of the modulation rate.
pub const RATE_MARGIN_BITS: f64 = 0.5;
/// Largest possible per-slot throughput.
pub const MAX_THROUGHPUT: f64 = 8.0;
/// Slope, per bit, of the logistic success curve.
pub const LOGISTIC_SLOPE: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SuccessModel {
    /// Subcarrier succeeds iff `log2(1 + snr) >= rate + margin`.
    #[default]
    HardThreshold,
    /// Expected success probability `1 / (1 + exp(-4 (capacity - rate - margin)))`.
    Logistic,
}

impl FromStr for SuccessModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "hard" => Ok(SuccessModel::HardThreshold),
            "logistic" => Ok(SuccessModel::Logistic),
            other => Err(Error::Config(format!("unknown success model `{other}` (hard|logistic)"))),
        }
    }
}

impl std::fmt::Display for SuccessModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuccessModel::HardThreshold => "hard",
            SuccessModel::Logistic => "logistic",
        })
    }
}

/// Ordered modulation table with a shared margin.
#[derive(Debug, Clone, PartialEq)]
pub struct McsTable {
    rates: Vec<f64>,
    margin: f64,
    model: SuccessModel,
}

impl Default for McsTable {
    fn default() -> Self {
        Self::new(MCS_RATES.to_vec(), RATE_MARGIN_BITS, SuccessModel::HardThreshold).expect("static table")
    }
}

impl McsTable {
    pub fn new(rates: Vec<f64>, margin: f64, model: SuccessModel) -> Result<Self> {
        if rates.is_empty() {
            return Err(Error::Config("MCS table is empty".into()));
        }
        if rates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("MCS rates must be strictly increasing".into()));
        }
        Ok(Self { rates, margin, model })
    }

    pub fn with_model(model: SuccessModel) -> Self {
        Self { model, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn rate(&self, mcs: usize) -> f64 {
        self.rates[mcs]
    }

    pub fn model(&self) -> SuccessModel {
        self.model
    }

    /// One-line provenance string echoed into metrics headers.
    pub fn describe(&self) -> String {
        let rates: Vec<String> = self.rates.iter().map(|r| r.to_string()).collect();
        format!("mcs_rates={} margin_bits={} success_model={}", rates.join(","), self.margin, self.model)
    }

    fn check(&self, mcs: usize) {
        assert!(mcs < self.rates.len(), "MCS index {mcs} outside table of {}", self.rates.len());
    }

    /// Hard-threshold success of each subcarrier.
    pub fn success_mask(&self, snr: &SnrVector, mcs: usize) -> Vec<bool> {
        self.check(mcs);
        let need = self.rates[mcs] + self.margin;
        snr.0.iter().map(|&s| (1.0 + s).log2() >= need).collect()
    }

    /// Per-subcarrier success probability under the configured model.
    pub fn success_prob(&self, snr: &SnrVector, mcs: usize) -> Vec<f64> {
        match self.model {
            SuccessModel::HardThreshold => self
                .success_mask(snr, mcs)
                .into_iter()
                .map(|ok| if ok { 1.0 } else { 0.0 })
                .collect(),
            SuccessModel::Logistic => {
                self.check(mcs);
                let need = self.rates[mcs] + self.margin;
                snr.0
                    .iter()
                    .map(|&s| 1.0 / (1.0 + (-LOGISTIC_SLOPE * ((1.0 + s).log2() - need)).exp()))
                    .collect()
            }
        }
    }

    /// Mean bits per symbol per subcarrier delivered by `mcs`.
    pub fn throughput(&self, snr: &SnrVector, mcs: usize) -> f64 {
        if snr.is_empty() {
            return 0.0;
        }
        let ok: f64 = self.success_prob(snr, mcs).iter().sum();
        self.rates[mcs] * ok / snr.len() as f64
    }

    /// Throughput of every table entry.
    pub fn all_throughputs(&self, snr: &SnrVector) -> Vec<f64> {
        (0..self.len()).map(|m| self.throughput(snr, m)).collect()
    }

    /// Best MCS with full knowledge of the SNR vector; ties go to the lower rate.
    pub fn genie_best(&self, snr: &SnrVector) -> (usize, f64) {
        let mut best = (0, self.throughput(snr, 0));
        for m in 1..self.len() {
            let t = self.throughput(snr, m);
            if t > best.1 {
                best = (m, t);
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn dead_channel_fails_everything() {
        let t = McsTable::default();
        let snr = SnrVector::flat(0.0, 8);
        for m in 0..NUM_MCS {
            assert!(t.success_mask(&snr, m).iter().all(|&ok| !ok));
        }
        assert_eq!(t.genie_best(&snr), (0, 0.0));
    }

    #[test]
    fn ten_db_thresholds() {
        let t = McsTable::default();
        let snr = SnrVector::flat(10.0, 16);
        // log2(11) = 3.459
        assert!(t.success_mask(&snr, 1).iter().all(|&ok| ok));
        assert!(t.success_mask(&snr, 2).iter().all(|&ok| !ok));
        assert_eq!(t.throughput(&snr, 1), 2.0);
        assert_eq!(t.genie_best(&snr), (1, 2.0));
    }

    #[test]
    fn mixed_two_subcarriers() {
        let t = McsTable::default();
        let snr = SnrVector::from_db(&[20.0, 0.0]);
        assert_eq!(t.success_mask(&snr, 3), vec![true, false]);
        assert_eq!(t.throughput(&snr, 3), 3.0);
        assert_eq!(t.all_throughputs(&snr), vec![0.5, 1.0, 2.0, 3.0, 0.0]);
        assert_eq!(t.genie_best(&snr), (3, 3.0));
    }

    #[test]
    fn table_validation() {
        assert!(McsTable::new(vec![], 0.5, SuccessModel::HardThreshold).is_err());
        assert!(McsTable::new(vec![2.0, 1.0], 0.5, SuccessModel::HardThreshold).is_err());
    }

    #[test]
    fn logistic_is_half_at_threshold() {
        let t = McsTable::with_model(SuccessModel::Logistic);
        let s = 2f64.powf(2.5) - 1.0;
        let p = t.success_prob(&SnrVector::flat(s, 1), 1)[0];
        assert!((p - 0.5).abs() < 1e-12);
    }

    fn snr_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0f64..45.0, 1..64)
    }

    proptest! {
        #[test]
        fn genie_dominates(db in snr_strategy(), logistic in any::<bool>()) {
            let t = McsTable::with_model(if logistic { SuccessModel::Logistic } else { SuccessModel::HardThreshold });
            let snr = SnrVector::from_db(&db);
            let (_, best) = t.genie_best(&snr);
            for m in 0..NUM_MCS {
                prop_assert!(t.throughput(&snr, m) <= best);
            }
        }

        #[test]
        fn throughput_monotone_in_snr(db in snr_strategy(), bumps in prop::collection::vec(0.0f64..10.0, 64), m in 0usize..NUM_MCS) {
            let t = McsTable::default();
            let raised: Vec<f64> = db.iter().zip(&bumps).map(|(a, b)| a + b).collect();
            prop_assert!(t.throughput(&SnrVector::from_db(&db), m) <= t.throughput(&SnrVector::from_db(&raised), m));
        }

        #[test]
        fn mask_monotone_in_rate(db in snr_strategy()) {
            let t = McsTable::default();
            let snr = SnrVector::from_db(&db);
            for m in 1..NUM_MCS {
                let lo = t.success_mask(&snr, m - 1);
                let hi = t.success_mask(&snr, m);
                for (a, b) in lo.iter().zip(&hi) {
                    prop_assert!(!(*b && !*a));
                }
            }
        }
    }
}
