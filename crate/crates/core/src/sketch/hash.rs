//! k-wise independent hash families: polynomials of degree k-1 over the
//! Mersenne prime field GF(2^61 - 1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub const MERSENNE_61: u64 = (1 << 61) - 1;

#[inline]
fn reduce(x: u64) -> u64 {
    let y = (x & MERSENNE_61) + (x >> 61);
    if y >= MERSENNE_61 {
        y - MERSENNE_61
    } else {
        y
    }
}

#[inline]
fn mul_mod(a: u64, b: u64) -> u64 {
    let p = (a as u128) * (b as u128);
    let lo = (p as u64) & MERSENNE_61;
    let hi = (p >> 61) as u64;
    reduce(lo + hi)
}

/// A random polynomial `sum_k c_k x^k mod p` with `degree + 1` coefficients,
/// reduced to `[0, range)`.
///
/// Degree 1 gives a 2-wise independent bucket hash, degree 3 a 4-wise
/// independent hash whose parity is used as a Rademacher sign.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashFamily {
    pub degree: usize,
    /// Low-order coefficient first; every entry lies in `[0, p)`.
    pub coefficients: Vec<u64>,
    pub domain_size: usize,
    pub range: u64,
}

impl HashFamily {
    pub fn sample<R: Rng + ?Sized>(
        degree: usize,
        domain_size: usize,
        range: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if domain_size == 0 {
            return Err(config("hash domain must be non-empty"));
        }
        if range == 0 {
            return Err(config("hash range must be positive"));
        }
        if domain_size as u64 >= MERSENNE_61 {
            return Err(config("hash domain exceeds the field size"));
        }
        let coefficients = (0..=degree)
            .map(|_| rng.random_range(0..MERSENNE_61))
            .collect();
        Ok(Self {
            degree,
            coefficients,
            domain_size,
            range,
        })
    }

    /// 2-wise independent bucket hash `[d] -> [m]`.
    pub fn bucket<R: Rng + ?Sized>(domain_size: usize, m: usize, rng: &mut R) -> Result<Self> {
        Self::sample(1, domain_size, m as u64, rng)
    }

    /// 4-wise independent sign hash `[d] -> {-1, +1}`.
    pub fn sign<R: Rng + ?Sized>(domain_size: usize, rng: &mut R) -> Result<Self> {
        Self::sample(3, domain_size, 2, rng)
    }

    /// Field value of the polynomial at `i` (Horner evaluation).
    #[inline]
    pub fn field_value(&self, i: usize) -> u64 {
        let x = i as u64;
        self.coefficients
            .iter()
            .rev()
            .fold(0u64, |acc, &c| reduce(mul_mod(acc, x) + c))
    }

    #[inline]
    pub fn eval(&self, i: usize) -> u64 {
        self.field_value(i) % self.range
    }

    /// `+1` for even field values, `-1` for odd ones.
    #[inline]
    pub fn sign_at(&self, i: usize) -> f64 {
        if self.field_value(i) & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Bucket table over the whole domain.
    pub fn bucket_table(&self) -> Vec<u32> {
        (0..self.domain_size).map(|i| self.eval(i) as u32).collect()
    }

    pub fn sign_table(&self) -> Vec<f64> {
        (0..self.domain_size).map(|i| self.sign_at(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn modular_arithmetic_agrees_with_u128() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let a = rng.random_range(0..MERSENNE_61);
            let b = rng.random_range(0..MERSENNE_61);
            let expect = ((a as u128 * b as u128) % MERSENNE_61 as u128) as u64;
            assert_eq!(mul_mod(a, b), expect);
        }
        assert_eq!(reduce(MERSENNE_61), 0);
        assert_eq!(reduce(u64::MAX), (u64::MAX as u128 % MERSENNE_61 as u128) as u64);
    }

    #[test]
    fn horner_matches_direct_power_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = HashFamily::sample(3, 100, 1 << 20, &mut rng).unwrap();
        for i in [0usize, 1, 7, 99] {
            let mut acc: u128 = 0;
            let mut pow: u128 = 1;
            for &c in &h.coefficients {
                acc = (acc + c as u128 * pow) % MERSENNE_61 as u128;
                pow = pow * i as u128 % MERSENNE_61 as u128;
            }
            assert_eq!(h.field_value(i), acc as u64);
        }
    }

    #[test]
    fn outputs_lie_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = HashFamily::bucket(64, 16, &mut rng).unwrap();
        let s = HashFamily::sign(64, &mut rng).unwrap();
        assert!(h.bucket_table().iter().all(|&b| b < 16));
        assert!(s.sign_table().iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn evaluation_is_pure() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = HashFamily::bucket(32, 8, &mut rng).unwrap();
        let again = h.clone();
        assert_eq!(h.bucket_table(), again.bucket_table());
    }

    #[test]
    fn rejects_empty_domain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(HashFamily::bucket(0, 8, &mut rng).is_err());
        assert!(HashFamily::sample(1, 4, 0, &mut rng).is_err());
    }
}
