//! The real link: scene, user, fading channel and pilots, with an exact
//! count of transmissions.

use crate::channel::{
    compress_feedback, init_channel_with, observe_pilots, step_channel, subcarrier_snr, ChannelParams, ChannelState, Density,
    FeedbackFeatures, SnrVector,
};
use crate::error::{Error, Result};
use crate::link::McsTable;
use crate::rng::{labels, RngStream, SeedTree};
use crate::scene::{pathloss_db, random_free_point, step_mobility, PathlossModel, Point, Scene, UserState};

use super::config::ExperimentConfig;

const DROP_TRIES: usize = 10_000;

/// Everything the link exposes about one slot before the MCS is chosen.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotView {
    pub slot: u64,
    pub user: UserState,
    /// True when the user was placed at a fresh position this slot.
    pub dropped: bool,
    pub received_power_dbm: f64,
    pub snr: SnrVector,
    pub feedback: FeedbackFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transmission {
    pub throughput: f64,
    pub genie_mcs: usize,
    pub genie_throughput: f64,
}

#[derive(Debug, Clone)]
pub struct RealEnv {
    pub scene: Scene,
    pathloss: PathlossModel,
    params: ChannelParams,
    table: McsTable,
    tx_power_dbm: f64,
    density: Density,
    pilot_noise_db: f64,
    drop_slots: usize,
    speed: f64,
    dt: f64,
    user: Option<UserState>,
    channel: ChannelState,
    mobility_rng: RngStream,
    channel_rng: RngStream,
    pilot_rng: RngStream,
    slot: u64,
    interactions: u64,
    current: Option<SlotView>,
}

impl RealEnv {
    /// Streams come from `seeds`, so two environments built from the same
    /// tree see identical channel and pilot realizations.
    pub fn new(scene: Scene, cfg: &ExperimentConfig, seeds: &SeedTree) -> Result<Self> {
        let params = cfg.channel_params();
        params.validate()?;
        let mut channel_rng = seeds.stream(labels::CHANNEL);
        let channel = init_channel_with(&params, &mut channel_rng);
        Ok(Self {
            scene,
            pathloss: cfg.pathloss,
            table: cfg.mcs_table(),
            tx_power_dbm: cfg.channel.tx_power_dbm,
            density: cfg.pilots.density,
            pilot_noise_db: cfg.pilots.noise_std_db,
            drop_slots: cfg.scene.drop_slots,
            speed: cfg.scene.user_speed_mps,
            dt: cfg.slot_seconds(),
            params,
            user: None,
            channel,
            mobility_rng: seeds.stream(labels::MOBILITY),
            channel_rng,
            pilot_rng: seeds.stream(labels::PILOTS),
            slot: 0,
            interactions: 0,
            current: None,
        })
    }

    pub fn set_density(&mut self, density: Density) {
        self.density = density;
    }

    pub fn set_pilot_noise(&mut self, std_db: f64) {
        self.pilot_noise_db = std_db;
    }

    pub fn table(&self) -> &McsTable {
        &self.table
    }

    /// Real transmissions so far.
    pub fn interactions(&self) -> u64 {
        self.interactions
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn received_power_dbm(&self, p: &Point) -> f64 {
        self.tx_power_dbm - pathloss_db(&self.scene, &self.scene.bs_pos, p, &self.pathloss)
    }

    fn drop_user(&mut self) -> Result<UserState> {
        let pos = random_free_point(&self.scene, &mut self.mobility_rng, DROP_TRIES)
            .ok_or_else(|| Error::Generation("no free position for the user".into()))?;
        self.channel = init_channel_with(&self.params, &mut self.channel_rng);
        Ok(step_mobility(&self.scene, &UserState::at(pos, self.speed), self.dt, &mut self.mobility_rng))
    }

    /// Advances one slot: mobility or re-drop, channel step, pilots, feedback.
    pub fn observe(&mut self) -> Result<&SlotView> {
        let due = self.drop_slots > 0 && self.slot % self.drop_slots as u64 == 0;
        let (user, dropped) = match self.user {
            Some(u) if !due => (
                if self.speed > 0.0 {
                    step_mobility(&self.scene, &u, self.dt, &mut self.mobility_rng)
                } else {
                    u
                },
                false,
            ),
            _ => (self.drop_user()?, true),
        };
        self.user = Some(user);
        let power = self.received_power_dbm(&user.pos);
        self.channel = step_channel(&self.channel, power, &mut self.channel_rng);
        let snr = subcarrier_snr(&self.channel);
        let obs = observe_pilots(&snr, self.density, self.pilot_noise_db, &mut self.pilot_rng);
        let view = SlotView {
            slot: self.slot,
            user,
            dropped,
            received_power_dbm: power,
            feedback: compress_feedback(&obs),
            snr,
        };
        self.slot += 1;
        Ok(self.current.insert(view))
    }

    /// Transmits with `mcs` on the slot last returned by [`RealEnv::observe`].
    /// This is the only call that counts as a real interaction.
    pub fn transmit(&mut self, mcs: usize) -> Result<Transmission> {
        let view = self
            .current
            .take()
            .ok_or_else(|| Error::Staging("transmit called without a fresh observation".into()))?;
        if mcs >= self.table.len() {
            return Err(Error::Contract(format!("MCS index {mcs} outside the table")));
        }
        self.interactions += 1;
        let (genie_mcs, genie_throughput) = self.table.genie_best(&view.snr);
        Ok(Transmission {
            throughput: self.table.throughput(&view.snr, mcs),
            genie_mcs,
            genie_throughput,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, ScenarioTag};

    fn env(seed: u64) -> RealEnv {
        let cfg = ExperimentConfig::default();
        let scene = generate_scene(&cfg.scene_config(ScenarioTag::LosDominated), seed).unwrap();
        RealEnv::new(scene, &cfg, &SeedTree::new(seed)).unwrap()
    }

    #[test]
    fn ledger_counts_transmissions_only() {
        let mut e = env(1);
        assert!(matches!(e.transmit(0), Err(Error::Staging(_))));
        for i in 0..120 {
            let v = e.observe().unwrap();
            assert_eq!(v.dropped, i % 50 == 0);
            let t = e.transmit(2).unwrap();
            assert!(t.throughput <= t.genie_throughput);
        }
        assert_eq!(e.interactions(), 120);
        assert!(e.transmit(0).is_err());
        assert_eq!(e.interactions(), 120);
    }

    #[test]
    fn same_seed_same_realization() {
        let mut a = env(4);
        let mut b = env(4);
        for _ in 0..60 {
            assert_eq!(a.observe().unwrap(), b.observe().unwrap());
            a.transmit(0).unwrap();
            b.transmit(4).unwrap();
        }
    }
}
