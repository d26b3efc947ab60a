use std::fmt;
use std::ops::{Add, Mul, Sub};

use rand::Rng;

/// A finite field. Elements are small `Copy` values; `from_u64` maps
/// integers into the field (reducing or truncating as the field requires).
pub trait Field:
    Copy + Eq + fmt::Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Send + Sync + 'static
{
    /// Number of elements.
    const ORDER: u128;
    const ZERO: Self;
    const ONE: Self;

    fn from_u64(v: u64) -> Self;
    fn to_u64(self) -> u64;

    /// Multiplicative inverse; `None` for zero.
    fn inv(self) -> Option<Self>;

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self;

    fn pow(self, mut e: u128) -> Self {
        let mut base = self;
        let mut acc = Self::ONE;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            e >>= 1;
        }
        acc
    }
}

/// GF(2^8) with the AES reduction polynomial x^8 + x^4 + x^3 + x + 1.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Gf256(pub u8);

impl fmt::Debug for Gf256 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf256({:#04x})", self.0)
    }
}

impl Add for Gf256 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Gf256(self.0 ^ rhs.0)
    }
}

impl Sub for Gf256 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Gf256(self.0 ^ rhs.0)
    }
}

impl Mul for Gf256 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (mut a, mut b, mut p) = (self.0, rhs.0, 0u8);
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let hi = a & 0x80;
            a <<= 1;
            if hi != 0 {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        Gf256(p)
    }
}

impl Field for Gf256 {
    const ORDER: u128 = 256;
    const ZERO: Self = Gf256(0);
    const ONE: Self = Gf256(1);

    fn from_u64(v: u64) -> Self {
        Gf256(v as u8)
    }

    fn to_u64(self) -> u64 {
        self.0 as u64
    }

    fn inv(self) -> Option<Self> {
        (self.0 != 0).then(|| self.pow(254))
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Gf256(rng.random())
    }
}

/// GF(2^64) modulo x^64 + x^4 + x^3 + x + 1.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Gf2_64(pub u64);

impl fmt::Debug for Gf2_64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Gf2_64({:#018x})", self.0)
    }
}

impl Add for Gf2_64 {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Gf2_64(self.0 ^ rhs.0)
    }
}

impl Sub for Gf2_64 {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Gf2_64(self.0 ^ rhs.0)
    }
}

impl Mul for Gf2_64 {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (mut a, mut b, mut p) = (self.0, rhs.0, 0u64);
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let hi = a >> 63;
            a <<= 1;
            if hi != 0 {
                a ^= 0x1b;
            }
            b >>= 1;
        }
        Gf2_64(p)
    }
}

impl Field for Gf2_64 {
    const ORDER: u128 = 1 << 64;
    const ZERO: Self = Gf2_64(0);
    const ONE: Self = Gf2_64(1);

    fn from_u64(v: u64) -> Self {
        Gf2_64(v)
    }

    fn to_u64(self) -> u64 {
        self.0
    }

    fn inv(self) -> Option<Self> {
        (self.0 != 0).then(|| self.pow(u64::MAX as u128 - 1))
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Gf2_64(rng.random())
    }
}

/// The prime field Z/PZ. `P` must be prime and below 2^32.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp<const P: u64>(u64);

impl<const P: u64> Fp<P> {
    pub const fn new(v: u64) -> Self {
        Fp(v % P)
    }

    pub const fn value(self) -> u64 {
        self.0
    }
}

impl<const P: u64> fmt::Debug for Fp<P> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (mod {P})", self.0)
    }
}

impl<const P: u64> Add for Fp<P> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Fp((self.0 + rhs.0) % P)
    }
}

impl<const P: u64> Sub for Fp<P> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Fp((self.0 + P - rhs.0) % P)
    }
}

impl<const P: u64> Mul for Fp<P> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Fp(self.0 * rhs.0 % P)
    }
}

impl<const P: u64> Field for Fp<P> {
    const ORDER: u128 = P as u128;
    const ZERO: Self = Fp(0);
    const ONE: Self = Fp(1 % P);

    fn from_u64(v: u64) -> Self {
        Fp(v % P)
    }

    fn to_u64(self) -> u64 {
        self.0
    }

    fn inv(self) -> Option<Self> {
        (self.0 != 0).then(|| self.pow(P as u128 - 2))
    }

    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Fp(rng.random_range(0..P))
    }
}

pub type Gf7 = Fp<7>;
pub type Gf251 = Fp<251>;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Schoolbook carry-less product reduced bit by bit, as an independent
    /// reference for the shift-and-add loops.
    fn clmul_reduce(a: u128, b: u128, bits: u32, poly: u128) -> u128 {
        let mut prod = 0u128;
        for i in 0..bits {
            if (b >> i) & 1 == 1 {
                prod ^= a << i;
            }
        }
        for i in (bits..2 * bits).rev() {
            if (prod >> i) & 1 == 1 {
                prod ^= poly << (i - bits);
            }
        }
        prod
    }

    #[test]
    fn aes_field_known_products() {
        // FIPS-197 worked example: {57} * {83} = {c1}.
        assert_eq!(Gf256(0x57) * Gf256(0x83), Gf256(0xc1));
        assert_eq!(Gf256(0x53).inv(), Some(Gf256(0xca)));
        assert_eq!(Gf256(0).inv(), None);
        for a in 1..=255u8 {
            assert_eq!(Gf256(a) * Gf256(a).inv().unwrap(), Gf256::ONE);
        }
    }

    #[test]
    fn gf256_matches_reference_exhaustively() {
        for a in 0..=255u128 {
            for b in 0..=255u128 {
                let want = clmul_reduce(a, b, 8, 0x11b);
                assert_eq!((Gf256(a as u8) * Gf256(b as u8)).0 as u128, want);
            }
        }
    }

    #[test]
    fn prime_field_inverses() {
        for a in 1..251 {
            let x = Gf251::new(a);
            assert_eq!((x * x.inv().unwrap()).value(), 1);
        }
        assert_eq!(Gf7::new(3) - Gf7::new(5), Gf7::new(5));
        assert_eq!(Gf7::ONE.value(), 1);
    }

    proptest! {
        #[test]
        fn gf2_64_matches_reference(a: u64, b: u64) {
            let poly = (1u128 << 64) | 0x1b;
            prop_assert_eq!((Gf2_64(a) * Gf2_64(b)).0 as u128, clmul_reduce(a as u128, b as u128, 64, poly));
        }

        #[test]
        fn gf2_64_inverse(a in 1u64..) {
            prop_assert_eq!(Gf2_64(a) * Gf2_64(a).inv().unwrap(), Gf2_64::ONE);
        }

        #[test]
        fn distributive(a: u64, b: u64, c: u64) {
            let (a, b, c) = (Gf2_64(a), Gf2_64(b), Gf2_64(c));
            prop_assert_eq!(a * (b + c), a * b + a * c);
        }
    }
}
