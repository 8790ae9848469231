//! Named, independent random streams derived from one master seed.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed and addressed
//! by a stream id hashed from `(name, index)`. Streams never overlap, so
//! drawing more from one (say, an extra augmentation) cannot shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Streams {
    master: u64,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    pub fn get(&self, name: &str, index: u64) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(stream_id(name, index));
        rng
    }
}

fn stream_id(name: &str, index: u64) -> u64 {
    // FNV-1a over the name, then a splitmix finalizer over (hash, index).
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Symmetric Dirichlet(α, …, α) draw over `k` categories via normalized
/// Gamma(α, 1) variates.
pub fn dirichlet<R: rand::Rng + ?Sized>(alpha: f64, k: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, Gamma};
    let gamma = Gamma::new(alpha, 1.0).expect("alpha must be positive");
    loop {
        let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        // tiny alphas can underflow every draw to zero; redraw
        if total > 0.0 && total.is_finite() {
            return draws.into_iter().map(|g| g / total).collect();
        }
    }
}

/// Derives an independent child generator from a parent stream.
pub fn split(parent: &mut StreamRng) -> StreamRng {
    use rand::Rng;
    ChaCha8Rng::from_seed(parent.random())
}
