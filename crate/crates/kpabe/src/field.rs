//! Arithmetic in a prime field `Z_p` and the serialisable scalar type.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Element of `Z_p`; always reduced below the modulus it was made for.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Scalar(pub BigUint);

impl Scalar {
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl Serialize for Scalar {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(self.0.to_bytes_be()))
    }
}

impl<'de> Deserialize<'de> for Scalar {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        Ok(Scalar(BigUint::from_bytes_be(&bytes)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Zp {
    p: BigUint,
}

impl Zp {
    /// `p` must be prime.
    pub fn new(p: BigUint) -> Self {
        Self { p }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    pub fn reduce(&self, x: BigUint) -> Scalar {
        Scalar(x % &self.p)
    }

    pub fn from_i64(&self, x: i64) -> Scalar {
        let mag = BigUint::from(x.unsigned_abs()) % &self.p;
        if x < 0 {
            self.neg(&Scalar(mag))
        } else {
            Scalar(mag)
        }
    }

    pub fn zero(&self) -> Scalar {
        Scalar(BigUint::zero())
    }

    pub fn one(&self) -> Scalar {
        Scalar(BigUint::one())
    }

    pub fn add(&self, a: &Scalar, b: &Scalar) -> Scalar {
        self.reduce(&a.0 + &b.0)
    }

    pub fn sub(&self, a: &Scalar, b: &Scalar) -> Scalar {
        self.reduce(&a.0 + &self.p - &b.0)
    }

    pub fn neg(&self, a: &Scalar) -> Scalar {
        self.reduce(&self.p - &a.0)
    }

    pub fn mul(&self, a: &Scalar, b: &Scalar) -> Scalar {
        self.reduce(&a.0 * &b.0)
    }

    /// `None` for zero.
    pub fn inv(&self, a: &Scalar) -> Option<Scalar> {
        if a.is_zero() {
            return None;
        }
        Some(Scalar(a.0.modpow(&(&self.p - 2u32), &self.p)))
    }

    /// Uniform up to a bias below `2^-128`.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        let mut buf = vec![0u8; (self.p.bits() as usize).div_ceil(8) + 16];
        rng.fill(&mut buf[..]);
        self.reduce(BigUint::from_bytes_be(&buf))
    }

    pub fn random_nonzero<R: Rng + ?Sized>(&self, rng: &mut R) -> Scalar {
        loop {
            let s = self.random(rng);
            if !s.is_zero() {
                return s;
            }
        }
    }
}
