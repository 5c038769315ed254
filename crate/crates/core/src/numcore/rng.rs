use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Seeded generator. Identical seeds give identical streams on every platform.
///
/// Not shareable between threads; derive one instance per worker with
/// [`Rng::substream`] or [`Rng::fork`].
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent generator keyed by `name`, derived from the seed only (not
    /// from how much of this stream has been consumed).
    pub fn substream(&self, name: &str) -> Rng {
        Rng::new(derive_seed(self.seed, name.as_bytes()))
    }

    /// Independent generator keyed by an index, e.g. a fold or worker id.
    pub fn fork(&self, index: u64) -> Rng {
        Rng::new(derive_seed(self.seed, &index.to_le_bytes()))
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        self.inner.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// Draw from Beta(a, b).
    ///
    /// Uses Jöhnk's rejection method (in log space) when both shapes are below
    /// one, and the ratio of two Gamma draws otherwise.
    pub fn beta(&mut self, a: f64, b: f64) -> Result<f64> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Domain(format!(
                "Beta parameters must be positive, got ({a}, {b})"
            )));
        }
        if a.max(b) < 1.0 {
            loop {
                let u = self.uniform();
                let v = self.uniform();
                if u == 0.0 || v == 0.0 {
                    continue;
                }
                let lx = u.ln() / a;
                let ly = v.ln() / b;
                let m = lx.max(ly);
                let lsum = m + ((lx - m).exp() + (ly - m).exp()).ln();
                if lsum <= 0.0 {
                    return Ok((lx - lsum).exp().clamp(0.0, 1.0));
                }
            }
        }
        let x = self.gamma(a);
        let y = self.gamma(b);
        Ok((x / (x + y)).clamp(0.0, 1.0))
    }

    /// Gamma(shape, 1) by Marsaglia–Tsang, with the `U^(1/shape)` boost for
    /// shapes below one.
    fn gamma(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let u = loop {
                let u = self.uniform();
                if u > 0.0 {
                    break u;
                }
            };
            return self.gamma(shape + 1.0) * u.powf(1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.normal();
            let v = 1.0 + c * x;
            if v <= 0.0 {
                continue;
            }
            let v = v * v * v;
            let u = self.uniform();
            if u < 1.0 - 0.0331 * x.powi(4) {
                return d * v;
            }
            if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }
}

/// SplitMix64 finalizer over the seed and an FNV-1a hash of `key`.
fn derive_seed(seed: u64, key: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in key {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    let mut z = seed ^ h.rotate_left(17);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    #[test]
    fn beta_symmetric_small_shape() {
        let mut rng = Rng::new(11);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.beta(0.2, 0.2).unwrap()).collect();
        assert!(xs.iter().all(|x| (0.0..=1.0).contains(x)));
        let (mean, var) = moments(&xs);
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        // ab / ((a+b)^2 (a+b+1)) = 0.04 / (0.16 * 1.4)
        let expected: f64 = 0.04 / (0.16 * 1.4);
        assert!((expected - 0.178_571).abs() < 1e-5);
        assert!((var - expected).abs() < 0.01, "var {var}");
    }

    #[test]
    fn beta_one_one_is_uniform() {
        let mut rng = Rng::new(5);
        let mut xs: Vec<f64> = (0..100_000).map(|_| rng.beta(1.0, 1.0).unwrap()).collect();
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        let ks = xs
            .iter()
            .enumerate()
            .map(|(i, &x)| ((i + 1) as f64 / n - x).abs().max((x - i as f64 / n).abs()))
            .fold(0.0, f64::max);
        assert!(ks < 0.01, "KS {ks}");
    }

    #[test]
    fn beta_mean_large_shapes() {
        let mut rng = Rng::new(3);
        let xs: Vec<f64> = (0..100_000).map(|_| rng.beta(2.0, 5.0).unwrap()).collect();
        let (mean, _) = moments(&xs);
        assert!((mean - 2.0 / 7.0).abs() < 0.01);
    }

    #[test]
    fn beta_rejects_nonpositive() {
        let mut rng = Rng::new(0);
        assert!(matches!(rng.beta(0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(rng.beta(1.0, -2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..10_000 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn substreams_differ_and_are_stable() {
        let base = Rng::new(1);
        let mut x = base.substream("gbt");
        let mut y = base.substream("fusenet");
        assert_ne!(x.uniform(), y.uniform());
        assert_eq!(
            base.substream("gbt").uniform(),
            Rng::new(1).substream("gbt").uniform()
        );
    }
}
