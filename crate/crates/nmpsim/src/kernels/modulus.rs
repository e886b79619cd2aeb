//! Word-sized prime moduli and modular arithmetic.
//!
//! Residues are stored as `u32` (the storage layout elsewhere assumes 32-bit
//! columns) and reduced with a precomputed Barrett constant, so no division
//! appears on the multiply path. The performance model charges one multiplier
//! slot per `mul` regardless of the reduction scheme.

use super::KernelError;

/// An odd prime `q < 2^32` with its Barrett reduction constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Modulus {
    q: u32,
    /// floor(2^64 / q); fits in u64 for q >= 3.
    barrett: u64,
}

impl Modulus {
    /// Creates a modulus, rejecting composites, even numbers and q < 3.
    pub fn new(q: u32) -> Result<Self, KernelError> {
        if q < 3 || q % 2 == 0 || !is_prime_u32(q) {
            return Err(KernelError::InvalidModulus(q));
        }
        let barrett = ((1u128 << 64) / q as u128) as u64;
        Ok(Self { q, barrett })
    }

    #[inline]
    pub fn value(&self) -> u32 {
        self.q
    }

    /// Whether a 2n-th primitive root of unity exists, i.e. q ≡ 1 (mod 2n).
    pub fn supports_ntt(&self, degree: usize) -> bool {
        degree.is_power_of_two() && (self.q as u64 - 1) % (2 * degree as u64) == 0
    }

    #[inline]
    pub fn add(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        let s = a as u64 + b as u64;
        if s >= self.q as u64 {
            (s - self.q as u64) as u32
        } else {
            s as u32
        }
    }

    #[inline]
    pub fn sub(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        if a >= b {
            a - b
        } else {
            self.q - b + a
        }
    }

    #[inline]
    pub fn neg(&self, a: u32) -> u32 {
        debug_assert!(a < self.q);
        if a == 0 {
            0
        } else {
            self.q - a
        }
    }

    /// Barrett-reduced product. Estimates the quotient from the high half of
    /// t * floor(2^64/q); the estimate is off by at most two, fixed up with
    /// conditional subtractions.
    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        debug_assert!(a < self.q && b < self.q);
        let t = a as u64 * b as u64;
        let quot = ((t as u128 * self.barrett as u128) >> 64) as u64;
        let mut r = t - quot * self.q as u64;
        while r >= self.q as u64 {
            r -= self.q as u64;
        }
        r as u32
    }

    pub fn pow(&self, mut base: u32, mut exp: u64) -> u32 {
        let mut acc: u32 = 1;
        base %= self.q;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat: a^(q-2) mod q.
    pub fn inv(&self, a: u32) -> Result<u32, KernelError> {
        if a == 0 {
            return Err(KernelError::NotInvertible);
        }
        Ok(self.pow(a, self.q as u64 - 2))
    }

    /// Reduces an arbitrary u64 into [0, q).
    #[inline]
    pub fn reduce_u64(&self, a: u64) -> u32 {
        (a % self.q as u64) as u32
    }
}

/// Eq. of the stage butterfly: (a + b·w, a − b·w) mod q.
#[inline]
pub fn butterfly(a: u32, b: u32, w: u32, q: &Modulus) -> (u32, u32) {
    let t = q.mul(b, w);
    (q.add(a, t), q.sub(a, t))
}

/// Deterministic Miller-Rabin; bases {2, 7, 61} decide primality for all u32.
fn is_prime_u32(n: u32) -> bool {
    if n < 2 {
        return false;
    }
    for p in [2u32, 3, 5, 7, 11, 13] {
        if n == p {
            return true;
        }
        if n % p == 0 {
            return false;
        }
    }
    let n64 = n as u64;
    let mut d = n64 - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in [2u64, 7, 61] {
        let mut x = pow_mod_u64(a, d, n64);
        if x == 1 || x == n64 - 1 {
            continue;
        }
        for _ in 0..s - 1 {
            x = (x * x) % n64;
            if x == n64 - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

fn pow_mod_u64(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = acc * base % m;
        }
        base = base * base % m;
        exp >>= 1;
    }
    acc
}
