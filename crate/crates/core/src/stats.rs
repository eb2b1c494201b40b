//! Single-pass central moments with a parallel merge.
//!
//! Updates follow Welford for the mean and second moment and Pébay's
//! extension for the third and fourth; [`Moments::merge`] combines two
//! partial accumulators exactly as if their samples had been streamed
//! through one.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
    m3: f64,
    m4: f64,
}

impl Moments {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let n1 = self.count as f64;
        self.count += 1;
        let n = self.count as f64;
        let delta = x - self.mean;
        let delta_n = delta / n;
        let delta_n2 = delta_n * delta_n;
        let term1 = delta * delta_n * n1;
        self.mean += delta_n;
        self.m4 += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * self.m2
            - 4.0 * delta_n * self.m3;
        self.m3 += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * self.m2;
        self.m2 += term1;
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let na = self.count as f64;
        let nb = other.count as f64;
        let n = na + nb;
        let delta = other.mean - self.mean;
        let d2 = delta * delta;
        let d3 = d2 * delta;
        let d4 = d2 * d2;

        let mean = self.mean + delta * nb / n;
        let m2 = self.m2 + other.m2 + d2 * na * nb / n;
        let m3 = self.m3
            + other.m3
            + d3 * na * nb * (na - nb) / (n * n)
            + 3.0 * delta * (na * other.m2 - nb * self.m2) / n;
        let m4 = self.m4
            + other.m4
            + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n)
            + 6.0 * d2 * (na * na * other.m2 + nb * nb * self.m2) / (n * n)
            + 4.0 * delta * (na * other.m3 - nb * self.m3) / n;

        self.count += other.count;
        self.mean = mean;
        self.m2 = m2;
        self.m3 = m3;
        self.m4 = m4;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Population (biased) central moment of order 2.
    pub fn central_m2(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }

    pub fn central_m4(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.m4 / self.count as f64
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    /// Large-sample standard error of the sample variance,
    /// `sqrt((mu4 - sigma^4) / N)`.
    pub fn variance_stderr(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let s2 = self.central_m2();
        ((self.central_m4() - s2 * s2).max(0.0) / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::new();
        for x in iter {
            m.push(x);
        }
        m
    }
}

/// Samples per Monte Carlo block.
pub const MC_BLOCK: u64 = 4096;

/// Splits `samples` draws into fixed blocks of [`MC_BLOCK`], runs
/// `block(index, len, rng)` on up to `threads` workers and returns the block
/// results in block order. Block `i` always sees the generator seeded with
/// `derive_seed(seed, &[i])`, so merged results do not depend on `threads`.
pub fn run_blocks<A, F>(samples: u64, seed: u64, threads: usize, block: F) -> Vec<A>
where
    A: Send,
    F: Fn(u64, u64, &mut crate::rng::Rng) -> A + Sync,
{
    use crate::rng::{derive_seed, rng_from_seed};
    let n_blocks = samples.div_ceil(MC_BLOCK);
    let len = |i: u64| MC_BLOCK.min(samples - i * MC_BLOCK);
    let run = |i: u64| block(i, len(i), &mut rng_from_seed(derive_seed(seed, &[i])));
    let threads = threads.max(1).min(n_blocks.max(1) as usize);
    if threads == 1 {
        return (0..n_blocks).map(run).collect();
    }
    let mut out: Vec<Option<A>> = (0..n_blocks).map(|_| None).collect();
    std::thread::scope(|s| {
        let chunks: Vec<_> = out.chunks_mut(n_blocks.div_ceil(threads as u64) as usize).collect();
        let mut start = 0u64;
        for chunk in chunks {
            let first = start;
            start += chunk.len() as u64;
            let run = &run;
            s.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(run(first + k as u64));
                }
            });
        }
    });
    out.into_iter().map(|a| a.expect("every block ran")).collect()
}
