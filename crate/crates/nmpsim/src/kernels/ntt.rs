//! Negacyclic number-theoretic transform over one RNS channel.
//!
//! The transform is the radix-2 butterfly cascade of the stage recurrence
//! (a, b) -> (a + b·w, a − b·w) with the 2n-th root powers merged into the
//! stage twiddles, so no separate pre/post twist and no explicit bit-reversal
//! pass exist. Stage `s` pairs coefficients at distance `2^s`; the forward
//! transform consumes natural coefficient order and walks the stages from
//! `log2(n)-1` down to 0, the inverse walks them back up and ends in natural
//! order again. The NTT-domain enumeration this produces (`out[i]` holds the
//! evaluation at ψ^(2·bitrev(i)+1)) is the canonical order used everywhere;
//! elementwise products in that domain realize negacyclic convolution.

use super::modulus::{butterfly, Modulus};
use super::KernelError;

/// Per-modulus, per-stage powers of the 2n-th primitive root.
#[derive(Debug, Clone)]
pub struct TwiddleTable {
    degree: usize,
    modulus: Modulus,
    /// psi^bitrev(i) for CT stages, indexed by butterfly group.
    fwd: Vec<u32>,
    /// psi^-bitrev(i) for GS stages.
    inv: Vec<u32>,
    n_inv: u32,
}

impl TwiddleTable {
    /// Builds the table for ring degree `n`, searching for a 2n-th primitive
    /// root and validating ψ^n ≡ −1 before use.
    pub fn new(degree: usize, modulus: Modulus) -> Result<Self, KernelError> {
        if !degree.is_power_of_two() || degree < 2 {
            return Err(KernelError::InvalidDegree(degree));
        }
        if !modulus.supports_ntt(degree) {
            return Err(KernelError::InvalidRoot {
                q: modulus.value(),
                degree,
            });
        }
        let psi = find_primitive_2n_root(&modulus, degree)?;
        Self::with_root(degree, modulus, psi)
    }

    /// Builds the table from an explicit root candidate; InvalidRoot unless
    /// ψ^2n ≡ 1 and ψ^n ≡ −1.
    pub fn with_root(degree: usize, modulus: Modulus, psi: u32) -> Result<Self, KernelError> {
        let n = degree as u64;
        let q = modulus.value();
        if modulus.pow(psi, 2 * n) != 1 || modulus.pow(psi, n) != q - 1 {
            return Err(KernelError::InvalidRoot { q, degree });
        }
        let log_n = degree.trailing_zeros();
        let psi_inv = modulus.inv(psi)?;
        let mut fwd = vec![0u32; degree];
        let mut inv = vec![0u32; degree];
        for i in 0..degree {
            let r = bitrev(i, log_n) as u64;
            fwd[i] = modulus.pow(psi, r);
            inv[i] = modulus.pow(psi_inv, r);
        }
        let n_inv = modulus.inv(modulus.reduce_u64(n))?;
        Ok(Self {
            degree,
            modulus,
            fwd,
            inv,
            n_inv,
        })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn modulus(&self) -> &Modulus {
        &self.modulus
    }

    pub fn stages(&self) -> u32 {
        self.degree.trailing_zeros()
    }
}

/// Butterfly pairs of stage `s`: all (i, i + 2^s) with bit `s` of `i` clear.
pub fn stage_pairs(degree: usize, stage: u32) -> impl Iterator<Item = (usize, usize)> {
    let d = 1usize << stage;
    (0..degree / 2).map(move |k| {
        let lo = k & (d - 1);
        let hi = (k >> stage) << (stage + 1);
        (hi + lo, hi + lo + d)
    })
}

/// Applies one forward stage in place. Pair distance is exactly 2^stage.
pub fn ntt_stage(a: &mut [u32], tw: &TwiddleTable, stage: u32) {
    let n = a.len();
    let t = 1usize << stage;
    let groups = n / (2 * t);
    for i in 0..groups {
        let w = tw.fwd[groups + i];
        let base = 2 * i * t;
        for j in base..base + t {
            let (x, y) = butterfly(a[j], a[j + t], w, &tw.modulus);
            a[j] = x;
            a[j + t] = y;
        }
    }
}

/// Applies one inverse stage in place (GS butterfly), same pair distance rule.
pub fn intt_stage(a: &mut [u32], tw: &TwiddleTable, stage: u32) {
    let n = a.len();
    let t = 1usize << stage;
    let groups = n / (2 * t);
    for i in 0..groups {
        let w = tw.inv[groups + i];
        let base = 2 * i * t;
        for j in base..base + t {
            let u = a[j];
            let v = a[j + t];
            a[j] = tw.modulus.add(u, v);
            a[j + t] = tw.modulus.mul(tw.modulus.sub(u, v), w);
        }
    }
}

/// Final 1/n scaling of the inverse transform.
pub fn intt_scale(a: &mut [u32], tw: &TwiddleTable) {
    for x in a.iter_mut() {
        *x = tw.modulus.mul(*x, tw.n_inv);
    }
}

/// Forward negacyclic NTT of one channel, natural coefficient order in.
pub fn ntt(p: &[u32], tw: &TwiddleTable) -> Vec<u32> {
    assert_eq!(p.len(), tw.degree, "channel length must match table degree");
    let mut a = p.to_vec();
    for s in (0..tw.stages()).rev() {
        ntt_stage(&mut a, tw, s);
    }
    a
}

/// Inverse transform; intt(ntt(x)) == x.
pub fn intt(p: &[u32], tw: &TwiddleTable) -> Vec<u32> {
    assert_eq!(p.len(), tw.degree, "channel length must match table degree");
    let mut a = p.to_vec();
    for s in 0..tw.stages() {
        intt_stage(&mut a, tw, s);
    }
    intt_scale(&mut a, tw);
    a
}

/// Bit reversal of `i` over `bits` bits.
pub fn bitrev(i: usize, bits: u32) -> usize {
    i.reverse_bits() >> (usize::BITS - bits)
}

fn find_primitive_2n_root(modulus: &Modulus, degree: usize) -> Result<u32, KernelError> {
    let q = modulus.value();
    let exp = (q as u64 - 1) / (2 * degree as u64);
    for g in 2..q {
        let cand = modulus.pow(g, exp);
        // primitive iff psi^n == -1 (then psi^2n == 1 and no smaller power hits 1
        // at the orders that matter for the stage tables)
        if modulus.pow(cand, degree as u64) == q - 1 {
            return Ok(cand);
        }
    }
    Err(KernelError::InvalidRoot { q, degree })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn table(n: usize, q: u32) -> TwiddleTable {
        TwiddleTable::new(n, Modulus::new(q).unwrap()).unwrap()
    }

    /// Brute-force negacyclic DFT in the canonical enumeration:
    /// out[i] = sum_j x[j] * psi^((2*bitrev(i)+1)*j).
    fn naive_ntt(x: &[u32], tw: &TwiddleTable, psi: u32) -> Vec<u32> {
        let n = x.len();
        let m = &tw.modulus;
        let bits = n.trailing_zeros();
        (0..n)
            .map(|i| {
                let k = bitrev(i, bits) as u64;
                let root = m.pow(psi, 2 * k + 1);
                let mut acc = 0u32;
                let mut rp = 1u32; // root^j
                for &c in x {
                    acc = m.add(acc, m.mul(c, rp));
                    rp = m.mul(rp, root);
                }
                acc
            })
            .collect()
    }

    fn find_psi(n: usize, q: u32) -> u32 {
        let m = Modulus::new(q).unwrap();
        super::find_primitive_2n_root(&m, n).unwrap()
    }

    #[test]
    fn rejects_bad_roots() {
        let q = Modulus::new(17).unwrap();
        assert!(TwiddleTable::with_root(8, q, 1).is_err());
        // q = 5 has no 8th root of unity, so degree 4 is unsupported
        let q5 = Modulus::new(5).unwrap();
        assert!(matches!(
            TwiddleTable::new(4, q5),
            Err(KernelError::InvalidRoot { .. })
        ));
    }

    #[test]
    fn delta_transforms_to_all_ones() {
        // delta evaluates to x(r) = 1 at every root power
        for (n, q) in [(2usize, 5u32), (4, 17), (8, 17), (16, 97)] {
            let tw = table(n, q);
            let mut x = vec![0u32; n];
            x[0] = 1;
            assert_eq!(ntt(&x, &tw), vec![1u32; n], "n={n} q={q}");
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let tw = table(64, 12289);
        assert_eq!(ntt(&vec![0; 64], &tw), vec![0; 64]);
        assert_eq!(intt(&vec![0; 64], &tw), vec![0; 64]);
    }

    #[test]
    fn matches_naive_dft_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for n in [8usize, 16, 32, 64, 128, 256] {
            for q in [12289u32, 998244353] {
                let tw = table(n, q);
                let psi = find_psi(n, q);
                let x: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
                assert_eq!(ntt(&x, &tw), naive_ntt(&x, &tw, psi), "n={n} q={q}");
            }
        }
    }

    #[test]
    fn roundtrip_is_identity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for n in [2usize, 8, 64, 1024, 4096] {
            let q = 998244353;
            let tw = table(n, q);
            let x: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
            assert_eq!(intt(&ntt(&x, &tw), &tw), x, "n={n}");
        }
    }

    #[test]
    fn intt_matches_naive_inverse() {
        // inverse oracle: x[j] = n^-1 * sum_i out[i] * psi^-((2*bitrev(i)+1)*j)
        let n = 8;
        let q = 17u32;
        let tw = table(n, q);
        let psi = find_psi(n, q);
        let m = Modulus::new(q).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let y: Vec<u32> = (0..n).map(|_| rng.random_range(0..q)).collect();
        let bits = n.trailing_zeros();
        let n_inv = m.inv(n as u32 % q).unwrap();
        let expect: Vec<u32> = (0..n)
            .map(|j| {
                let mut acc = 0u32;
                for (i, &v) in y.iter().enumerate() {
                    let k = bitrev(i, bits) as u64;
                    let e = (2 * k + 1) * j as u64;
                    let root = m.inv(m.pow(psi, e)).unwrap();
                    acc = m.add(acc, m.mul(v, root));
                }
                m.mul(acc, n_inv)
            })
            .collect();
        assert_eq!(intt(&y, &tw), expect);
    }

    #[test]
    fn stage_pairs_have_distance_two_to_the_s() {
        for n in [8usize, 64, 256] {
            for s in 0..n.trailing_zeros() {
                let mut seen = vec![false; n];
                for (i, j) in stage_pairs(n, s) {
                    assert_eq!(j - i, 1 << s, "stage {s}");
                    assert!(!seen[i] && !seen[j]);
                    seen[i] = true;
                    seen[j] = true;
                }
                assert!(seen.iter().all(|&b| b), "stage {s} must cover all slots");
            }
        }
    }

    #[test]
    fn staged_application_composes_to_full_transform() {
        // the engine replays transforms stage by stage; both paths must agree
        let n = 64;
        let tw = table(n, 12289);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        let x: Vec<u32> = (0..n).map(|_| rng.random_range(0..12289)).collect();
        let mut staged = x.clone();
        for s in (0..tw.stages()).rev() {
            ntt_stage(&mut staged, &tw, s);
        }
        assert_eq!(staged, ntt(&x, &tw));
    }
}
