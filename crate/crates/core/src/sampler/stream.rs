//! Counter-based keyed randomness.
//!
//! Every random quantity attached to an element is drawn from a ChaCha
//! stream whose 256-bit seed is `SHA-256(seed ‖ domain ‖ key)`. The value an
//! element receives therefore depends only on the run seed, the purpose of the
//! draw and the element's own key: never on input order, shard layout or
//! thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use sha2::{Digest, Sha256};

/// A key that identifies a sampled element.
pub trait SampleKey: Ord + Clone + std::fmt::Debug + Send + Sync {
    /// Appends an unambiguous byte encoding of the key.
    fn write_key(&self, out: &mut Vec<u8>);
}

pub(crate) fn write_component(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(bytes);
}

impl SampleKey for String {
    fn write_key(&self, out: &mut Vec<u8>) {
        write_component(out, self.as_bytes());
    }
}

impl SampleKey for (String, String) {
    fn write_key(&self, out: &mut Vec<u8>) {
        write_component(out, self.0.as_bytes());
        write_component(out, self.1.as_bytes());
    }
}

impl SampleKey for u64 {
    fn write_key(&self, out: &mut Vec<u8>) {
        write_component(out, &self.to_le_bytes());
    }
}

/// The random stream for `key` under `seed`, separated by `domain`.
pub fn keyed_rng<K: SampleKey>(seed: u64, domain: &str, key: &K) -> ChaCha8Rng {
    let mut buf = Vec::with_capacity(64);
    buf.extend_from_slice(&seed.to_le_bytes());
    write_component(&mut buf, domain.as_bytes());
    key.write_key(&mut buf);
    let digest: [u8; 32] = Sha256::digest(&buf).into();
    ChaCha8Rng::from_seed(digest)
}

/// Uniform on `(0, 1]`, so its logarithm is always finite.
pub fn uniform_open_closed<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

/// `Exp(rate)` by inversion: `-ln(U) / rate` with `U ∈ (0, 1]`.
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -uniform_open_closed(rng).ln() / rate
}

/// `Pois(mean)`; zero for a non-positive mean.
///
/// `rand_distr` uses Knuth's multiplication method for means below 12 and a
/// rejection method above that.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> u64 {
    if mean.is_nan() || mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("finite positive mean");
    let draw: f64 = dist.sample(rng);
    draw as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_keyed_and_domain_separated() {
        let k = "item".to_string();
        let a: u64 = keyed_rng(7, "clock", &k).random();
        let b: u64 = keyed_rng(7, "clock", &k).random();
        let c: u64 = keyed_rng(7, "count", &k).random();
        let d: u64 = keyed_rng(8, "clock", &k).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn pair_keys_are_unambiguous() {
        let x = ("ab".to_string(), "c".to_string());
        let y = ("a".to_string(), "bc".to_string());
        let a: u64 = keyed_rng(1, "d", &x).random();
        let b: u64 = keyed_rng(1, "d", &y).random();
        assert_ne!(a, b);
    }

    #[test]
    fn poisson_of_zero_mean_is_zero() {
        let mut rng = keyed_rng(0, "p", &0u64);
        assert_eq!(poisson(&mut rng, 0.0), 0);
        let mean: f64 = (0..20_000).map(|_| poisson(&mut rng, 3.5) as f64).sum::<f64>() / 20_000.0;
        assert!((mean - 3.5).abs() < 0.1, "{mean}");
        let big: f64 = (0..20_000).map(|_| poisson(&mut rng, 40.0) as f64).sum::<f64>() / 20_000.0;
        assert!((big - 40.0).abs() < 0.3, "{big}");
    }
}
