//! Seeded random streams with lineage.
//!
//! A [`RandomStream`] is identified by a master seed and a path of child
//! indices. The generator state of a stream is a pure function of that
//! lineage, so a child derived before a parallel task is dispatched yields
//! the same numbers no matter which thread runs it or in what order.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A single-owner random stream whose state is fixed by its lineage.
#[derive(Debug, Clone)]
pub struct RandomStream {
    master_seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lineage_key(master_seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = splitmix64(master_seed);
    for &i in path {
        // Mixing the depth in keeps [a, b] and [a ^ .., ..] from colliding.
        h = splitmix64(h ^ splitmix64(i.wrapping_add(0x632b_e59b_d9b4_e019)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

impl RandomStream {
    /// Root stream for a master seed.
    pub fn root(master_seed: u64) -> Self {
        Self::from_lineage(master_seed, Vec::new())
    }

    fn from_lineage(master_seed: u64, path: Vec<u64>) -> Self {
        let rng = ChaCha8Rng::from_seed(lineage_key(master_seed, &path));
        Self {
            master_seed,
            path,
            rng,
        }
    }

    /// Child stream `child_index` of this stream.
    ///
    /// Depends only on the lineage, never on how many values the parent
    /// has already produced.
    pub fn derive(&self, child_index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(child_index);
        Self::from_lineage(self.master_seed, path)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniformly distributed unit vector in `d` dimensions, drawn as a
    /// normalized isotropic Gaussian.
    pub fn random_unit_direction(&mut self, d: usize) -> Result<Vec<f64>> {
        if d == 0 {
            return Err(Error::invalid("direction dimension must be at least 1"));
        }
        loop {
            let v: Vec<f64> = (0..d).map(|_| self.standard_normal()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-150 && norm.is_finite() {
                return Ok(v.into_iter().map(|x| x / norm).collect());
            }
        }
    }
}
