//! Named, counter-based random streams.
//!
//! A master seed is expanded into a ChaCha key; each component draws from its
//! own ChaCha stream id derived from a label. Because ChaCha is a
//! counter-mode generator, two labels never share keystream, so adding draws
//! to one component leaves every other component's sequence untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random stream type passed explicitly to every stochastic operation.
pub type RngStream = ChaCha8Rng;

/// Stream labels used by the harness. Keeping them in one place makes
/// accidental sharing between components easy to spot.
pub mod labels {
    pub const SCENE: &str = "scene";
    pub const CHANNEL: &str = "channel";
    pub const MOBILITY: &str = "mobility";
    pub const PILOTS: &str = "pilots";
    pub const POLICY_INIT: &str = "policy-init";
    pub const ACTIONS: &str = "action-sampling";
    pub const GATE: &str = "gate-sampling";
    pub const REPLAY: &str = "replay";
    pub const ENCODER: &str = "encoder";
    pub const WORLD_MODEL: &str = "world-model";
    pub const PROBE: &str = "probe";
}

/// Derives independent streams from one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedTree {
    master: u64,
}

impl SeedTree {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Stream for a named component.
    pub fn stream(&self, label: &str) -> RngStream {
        self.stream_indexed(label, 0)
    }

    /// Stream for the `index`-th instance of a named component.
    pub fn stream_indexed(&self, label: &str, index: u64) -> RngStream {
        let mut rng = ChaCha8Rng::from_seed(expand_key(self.master));
        rng.set_stream(mix64(fnv1a64(label.as_bytes()) ^ mix64(index)));
        rng
    }

    /// Child tree, used to give each phase of an experiment its own key.
    pub fn child(&self, label: &str) -> SeedTree {
        SeedTree::new(mix64(self.master ^ fnv1a64(label.as_bytes())))
    }

    /// Integer seed for initialising nets.
    pub fn seed(&self, label: &str) -> u64 {
        mix64(self.master.wrapping_add(mix64(fnv1a64(label.as_bytes()))))
    }
}

fn expand_key(master: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = master;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix64(state).to_le_bytes());
    }
    key
}

/// SplitMix64 finaliser.
pub(crate) fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Seeded stream for ad-hoc uses (tests, net initialisation).
pub fn stream_from_seed(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_label_same_sequence() {
        let tree = SeedTree::new(42);
        let a: Vec<u64> = (0..8).map(|_| tree.stream("channel").random()).collect();
        let mut s1 = tree.stream("channel");
        let mut s2 = tree.stream("channel");
        let x: Vec<u64> = (0..8).map(|_| s1.random()).collect();
        let y: Vec<u64> = (0..8).map(|_| s2.random()).collect();
        assert_eq!(x, y);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn labels_are_independent() {
        let tree = SeedTree::new(42);
        let mut a = tree.stream("channel");
        let mut b = tree.stream("pilots");
        let x: Vec<u64> = (0..4).map(|_| a.random()).collect();
        let y: Vec<u64> = (0..4).map(|_| b.random()).collect();
        assert_ne!(x, y);
        assert_ne!(
            tree.stream_indexed("channel", 1).random::<u64>(),
            tree.stream_indexed("channel", 2).random::<u64>()
        );
    }

    #[test]
    fn consuming_one_stream_does_not_perturb_another() {
        let tree = SeedTree::new(7);
        let mut pilots = tree.stream("pilots");
        let reference: u64 = pilots.random();
        let mut channel = tree.stream("channel");
        for _ in 0..1000 {
            let _: u64 = channel.random();
        }
        let mut pilots_again = tree.stream("pilots");
        assert_eq!(pilots_again.random::<u64>(), reference);
    }
}
