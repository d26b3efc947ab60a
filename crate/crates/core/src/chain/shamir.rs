use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use super::field::{Field, Gf256};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ShamirError {
    #[error("need {need} shares, got {got}")]
    InsufficientShares { need: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// One share: the evaluation of every per-element polynomial at `index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Share<F> {
    pub index: u32,
    pub values: Vec<F>,
}

impl Share<Gf256> {
    /// `index ‖ values`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.values.len());
        out.push(self.index as u8);
        out.extend(self.values.iter().map(|v| v.0));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ShamirError> {
        match bytes.split_first() {
            Some((&i, rest)) if i != 0 => Ok(Share {
                index: i as u32,
                values: rest.iter().map(|&b| Gf256(b)).collect(),
            }),
            _ => Err(ShamirError::InvalidArgument("share encoding needs a nonzero index octet".into())),
        }
    }
}

fn check_kn<F: Field>(k: usize, n: usize) -> Result<(), ShamirError> {
    if k == 0 || k > n || (n as u128) >= F::ORDER {
        return Err(ShamirError::InvalidArgument(format!(
            "need 1 <= k <= n < {}, got k = {k}, n = {n}",
            F::ORDER
        )));
    }
    Ok(())
}

fn eval<F: Field>(coeffs: &[F], x: F) -> F {
    coeffs.iter().rev().fold(F::ZERO, |acc, &c| acc * x + c)
}

/// Shares at indices `1..=n` for explicit polynomials; `polys[j][0]` is the
/// secret element `j`.
pub fn shares_from_polynomials<F: Field>(polys: &[Vec<F>], n: usize) -> Vec<Share<F>> {
    (1..=n as u64)
        .map(|i| Share {
            index: i as u32,
            values: polys.iter().map(|p| eval(p, F::from_u64(i))).collect(),
        })
        .collect()
}

/// Splits `secret` into `n` shares, any `k` of which reconstruct it. Each
/// element gets its own degree `k - 1` polynomial with coefficients drawn
/// from `rng`.
pub fn split<F: Field, R: Rng + ?Sized>(secret: &[F], k: usize, n: usize, rng: &mut R) -> Result<Vec<Share<F>>, ShamirError> {
    check_kn::<F>(k, n)?;
    let polys: Vec<Vec<F>> = secret
        .iter()
        .map(|&s| std::iter::once(s).chain((1..k).map(|_| F::random(rng))).collect())
        .collect();
    Ok(shares_from_polynomials(&polys, n))
}

/// Lagrange interpolation at zero over the first `k` shares.
pub fn reconstruct<F: Field>(shares: &[Share<F>], k: usize) -> Result<Vec<F>, ShamirError> {
    if k == 0 {
        return Err(ShamirError::InvalidArgument("k must be >= 1".into()));
    }
    if shares.len() < k {
        return Err(ShamirError::InsufficientShares {
            need: k,
            got: shares.len(),
        });
    }
    let used = &shares[..k];
    for (i, s) in used.iter().enumerate() {
        if s.index == 0 || (s.index as u128) >= F::ORDER {
            return Err(ShamirError::InvalidArgument(format!("share index {} out of range", s.index)));
        }
        if used[..i].iter().any(|t| t.index == s.index) {
            return Err(ShamirError::InvalidArgument(format!("duplicate share index {}", s.index)));
        }
        if s.values.len() != used[0].values.len() {
            return Err(ShamirError::InvalidArgument("shares differ in length".into()));
        }
    }
    let xs: Vec<F> = used.iter().map(|s| F::from_u64(s.index as u64)).collect();
    let weights: Vec<F> = (0..k)
        .map(|i| {
            let (num, den) = (0..k).filter(|&j| j != i).fold((F::ONE, F::ONE), |(num, den), j| {
                (num * xs[j], den * (xs[j] - xs[i]))
            });
            num * den.inv().expect("distinct indices")
        })
        .collect();
    Ok((0..used[0].values.len())
        .map(|e| used.iter().zip(&weights).fold(F::ZERO, |acc, (s, &w)| acc + s.values[e] * w))
        .collect())
}

/// Byte-oriented split over GF(256) with a seeded coefficient stream.
pub fn shamir_split(secret: &[u8], k: usize, n: usize, seed: u64) -> Result<Vec<Share<Gf256>>, ShamirError> {
    let elems: Vec<Gf256> = secret.iter().map(|&b| Gf256(b)).collect();
    split(&elems, k, n, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn shamir_reconstruct(shares: &[Share<Gf256>], k: usize) -> Result<Vec<u8>, ShamirError> {
    Ok(reconstruct(shares, k)?.into_iter().map(|v| v.0).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::field::Gf7;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m >> i & 1 == 1).collect())
            .collect()
    }

    #[test]
    fn two_of_three() {
        let secret = b"settle 42 units";
        let shares = shamir_split(secret, 2, 3, 9).unwrap();
        for pick in subsets(3, 2) {
            let s: Vec<_> = pick.iter().map(|&i| shares[i].clone()).collect();
            assert_eq!(shamir_reconstruct(&s, 2).unwrap(), secret);
        }
    }

    #[test]
    fn one_of_one_is_the_secret() {
        let shares = shamir_split(b"abc", 1, 1, 0).unwrap();
        assert_eq!(shares[0].values, b"abc".map(Gf256).to_vec());
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(shamir_split(b"x", 0, 3, 0), Err(ShamirError::InvalidArgument(_))));
        assert!(matches!(shamir_split(b"x", 4, 3, 0), Err(ShamirError::InvalidArgument(_))));
        assert!(shamir_split(b"x", 2, 255, 0).is_ok());
        assert!(shamir_split(b"x", 2, 256, 0).is_err());
        let shares = shamir_split(b"xy", 3, 4, 0).unwrap();
        assert_eq!(
            shamir_reconstruct(&shares[..2], 3),
            Err(ShamirError::InsufficientShares { need: 3, got: 2 })
        );
        let dup = vec![shares[0].clone(), shares[1].clone(), shares[0].clone()];
        assert!(matches!(shamir_reconstruct(&dup, 3), Err(ShamirError::InvalidArgument(_))));
        assert!(Share::from_bytes(&[0, 1]).is_err());
        assert_eq!(Share::from_bytes(&shares[2].to_bytes()).unwrap(), shares[2]);
    }

    #[test]
    fn exhaustive_subsets_small_schemes() {
        for n in 1..=6 {
            for k in 1..=n {
                let secret: Vec<u8> = (0..64).map(|i| (i * 37 + n * 11 + k) as u8).collect();
                let shares = shamir_split(&secret, k, n, (n * 10 + k) as u64).unwrap();
                for pick in subsets(n, k) {
                    let s: Vec<_> = pick.iter().map(|&i| shares[i].clone()).collect();
                    assert_eq!(shamir_reconstruct(&s, k).unwrap(), secret, "k={k} n={n} {pick:?}");
                }
            }
        }
    }

    /// Over GF(7) with k = 2, n = 3, enumerates every line `s + a x` and
    /// counts how often each single share value occurs per secret. Share
    /// values are recomputed with plain modular integers.
    #[test]
    fn gf7_single_share_reveals_nothing() {
        let n = 3usize;
        for idx in 0..n {
            let mut counts: HashMap<(u64, u64), usize> = HashMap::new();
            for s in 0..7u64 {
                for a in 0..7u64 {
                    let shares = shares_from_polynomials(&[vec![Gf7::new(s), Gf7::new(a)]], n);
                    let x = (idx + 1) as u64;
                    let oracle = (s + a * x) % 7;
                    assert_eq!(shares[idx].values[0].value(), oracle);
                    *counts.entry((s, oracle)).or_default() += 1;
                }
            }
            // Every (secret, observed value) pair arises from exactly one polynomial.
            for s in 0..7 {
                for v in 0..7 {
                    assert_eq!(counts.get(&(s, v)), Some(&1), "share {idx}, secret {s}, value {v}");
                }
            }
        }
    }

    /// Same property for k = 3, n = 4: any two shares have an identical
    /// joint distribution under every secret.
    #[test]
    fn gf7_any_k_minus_one_shares_are_uniform() {
        let n = 4;
        for pick in subsets(n, 2) {
            let mut per_secret: Vec<HashMap<(u64, u64), usize>> = vec![HashMap::new(); 7];
            for s in 0..7u64 {
                for a1 in 0..7u64 {
                    for a2 in 0..7u64 {
                        let shares = shares_from_polynomials(&[vec![Gf7::new(s), Gf7::new(a1), Gf7::new(a2)]], n);
                        let obs = |i: usize| {
                            let x = (i + 1) as u64;
                            let v = (s + a1 * x + a2 * x * x) % 7;
                            assert_eq!(shares[i].values[0].value(), v);
                            v
                        };
                        *per_secret[s as usize].entry((obs(pick[0]), obs(pick[1]))).or_default() += 1;
                    }
                }
            }
            for s in 1..7 {
                assert_eq!(per_secret[s], per_secret[0]);
            }
            assert_eq!(per_secret[0].len(), 49);
            assert!(per_secret[0].values().all(|&c| c == 1));
        }
    }

    proptest! {
        #[test]
        fn any_k_subset_reconstructs(
            secret in proptest::collection::vec(any::<u8>(), 0..64),
            n in 1usize..10,
            kk in 0usize..10,
            seed: u64,
            rot in 0usize..10,
        ) {
            let k = kk % n + 1;
            let mut shares = shamir_split(&secret, k, n, seed).unwrap();
            shares.rotate_left(rot % n);
            prop_assert_eq!(shamir_reconstruct(&shares[..k], k).unwrap(), secret);
        }
    }
}
