//! Reference-correct modular and RNS polynomial arithmetic.
//!
//! Everything here is a pure function over immutable inputs; the simulator
//! co-computes against these kernels to check every schedule it times.

mod modulus;
mod ntt;
mod rns;

pub use modulus::{butterfly, Modulus};
pub use ntt::{bitrev, intt, intt_scale, intt_stage, ntt, ntt_stage, stage_pairs, TwiddleTable};
pub use rns::{
    bconv, bconv_with_table, elementwise, reduce_sum, BconvTable, EwOp, RnsBasis, RnsPolynomial,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("{0} is not an odd prime >= 3 below 2^32")]
    InvalidModulus(u32),
    #[error("no primitive 2n-th root of unity mod {q} for degree {degree}")]
    InvalidRoot { q: u32, degree: usize },
    #[error("degree {0} is not a power of two")]
    InvalidDegree(usize),
    #[error("zero has no modular inverse")]
    NotInvertible,
    #[error("basis has no moduli")]
    EmptyBasis,
    #[error("modulus {0} appears twice in one basis")]
    DuplicateModulus(u32),
    #[error("channel count mismatch: expected {expected}, got {got}")]
    BasisMismatch { expected: usize, got: usize },
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error("coefficient not reduced below modulus {0}")]
    ResidueOutOfRange(u32),
    #[error("reduction over an empty input set")]
    EmptyInput,
}

/// Negacyclic product of two channels via transform, pointwise multiply and
/// inverse transform. Used directly by the multiply operators and as the
/// fast route of the convolution-theorem checks.
pub fn negacyclic_mul(a: &[u32], b: &[u32], tw: &TwiddleTable) -> Vec<u32> {
    let m = tw.modulus();
    let fa = ntt(a, tw);
    let fb = ntt(b, tw);
    let prod: Vec<u32> = fa.iter().zip(&fb).map(|(&x, &y)| m.mul(x, y)).collect();
    intt(&prod, tw)
}

/// Schoolbook negacyclic product (x^n = -1), the O(n^2) oracle.
pub fn negacyclic_mul_schoolbook(a: &[u32], b: &[u32], q: &Modulus) -> Vec<u32> {
    let n = a.len();
    let mut out = vec![0u32; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.mul(a[i], b[j]);
            let k = i + j;
            if k < n {
                out[k] = q.add(out[k], p);
            } else {
                out[k - n] = q.sub(out[k - n], p);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn convolution_theorem_holds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for n in [4usize, 32, 256] {
            for q in [12289u32, 998244353] {
                let m = Modulus::new(q).unwrap();
                let tw = TwiddleTable::new(n, m).unwrap();
                let a: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
                let b: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
                assert_eq!(
                    negacyclic_mul(&a, &b, &tw),
                    negacyclic_mul_schoolbook(&a, &b, &m),
                    "n={n} q={q}"
                );
            }
        }
    }

    #[test]
    fn negacyclic_wraparound_sign() {
        // x^(n-1) * x = x^n = -1
        let n = 8;
        let q = Modulus::new(17).unwrap();
        let tw = TwiddleTable::new(n, q).unwrap();
        let mut a = vec![0u32; n];
        a[n - 1] = 1;
        let mut b = vec![0u32; n];
        b[1] = 1;
        let mut expect = vec![0u32; n];
        expect[0] = 16; // -1 mod 17
        assert_eq!(negacyclic_mul(&a, &b, &tw), expect);
    }
}
