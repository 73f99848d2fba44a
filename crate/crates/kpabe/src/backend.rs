//! Abstract bilinear group `e: G1 x G1 -> GT` and the symbolic backend.

use std::fmt::Debug;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use num_bigint::BigUint;
use num_traits::One;
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::field::{Scalar, Zp};

/// A symmetric pairing over groups of prime order. A curve implementation
/// plugs in here; the scheme only uses these operations.
pub trait Backend {
    type G1: Clone + PartialEq + Debug + Serialize + DeserializeOwned;
    type Gt: Clone + PartialEq + Debug + Serialize + DeserializeOwned;

    fn field(&self) -> &Zp;
    fn generator(&self) -> Self::G1;
    fn random_g1<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::G1;
    fn g1_mul(&self, a: &Self::G1, b: &Self::G1) -> Self::G1;
    fn g1_pow(&self, a: &Self::G1, k: &Scalar) -> Self::G1;
    fn pair(&self, a: &Self::G1, b: &Self::G1) -> Self::Gt;
    fn gt_mul(&self, a: &Self::Gt, b: &Self::Gt) -> Self::Gt;
    fn gt_pow(&self, a: &Self::Gt, k: &Scalar) -> Self::Gt;
    fn gt_inv(&self, a: &Self::Gt) -> Self::Gt;
    /// Injective map from 32-byte messages into `GT`.
    fn encode(&self, msg: &[u8; 32]) -> Self::Gt;
    /// Inverse of `encode`; `None` outside its image.
    fn decode(&self, m: &Self::Gt) -> Option<[u8; 32]>;

    fn g1_inv(&self, a: &Self::G1) -> Self::G1 {
        self.g1_pow(a, &self.field().from_i64(-1))
    }

    fn gt_div(&self, a: &Self::Gt, b: &Self::Gt) -> Self::Gt {
        self.gt_mul(a, &self.gt_inv(b))
    }
}

/// Group element stored as its discrete logarithm to the generator
/// (`g^e` in G1, `e(g,g)^e` in GT).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Exp(pub BigUint);

/// Fixed-width big-endian bytes of the Mersenne modulus below.
const EXP_BYTES: usize = 66;

impl Serialize for Exp {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let raw = self.0.to_bytes_be();
        let mut buf = vec![0u8; EXP_BYTES - raw.len()];
        buf.extend_from_slice(&raw);
        s.serialize_str(&STANDARD.encode(buf))
    }
}

impl<'de> Deserialize<'de> for Exp {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = STANDARD.decode(text).map_err(serde::de::Error::custom)?;
        if bytes.len() != EXP_BYTES {
            return Err(serde::de::Error::custom(format!("group element must be {EXP_BYTES} bytes")));
        }
        let e = BigUint::from_bytes_be(&bytes);
        if e >= symbolic_modulus() {
            return Err(serde::de::Error::custom("group element out of range"));
        }
        Ok(Exp(e))
    }
}

/// `2^521 - 1`, a Mersenne prime.
pub fn symbolic_modulus() -> BigUint {
    (BigUint::one() << 521u32) - 1u32
}

/// Exponent-tracking backend over `Z_p` with `p = 2^521 - 1`. Every
/// identity the scheme relies on holds here exactly as it would in a real
/// pairing group, but discrete logs are public, so it offers no security.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Symbolic {
    zp: Zp,
}

impl Default for Symbolic {
    fn default() -> Self {
        Self { zp: Zp::new(symbolic_modulus()) }
    }
}

impl Backend for Symbolic {
    type G1 = Exp;
    type Gt = Exp;

    fn field(&self) -> &Zp {
        &self.zp
    }

    fn generator(&self) -> Exp {
        Exp(BigUint::one())
    }

    fn random_g1<R: Rng + ?Sized>(&self, rng: &mut R) -> Exp {
        Exp(self.zp.random_nonzero(rng).0)
    }

    fn g1_mul(&self, a: &Exp, b: &Exp) -> Exp {
        Exp(self.zp.add(&Scalar(a.0.clone()), &Scalar(b.0.clone())).0)
    }

    fn g1_pow(&self, a: &Exp, k: &Scalar) -> Exp {
        Exp(self.zp.mul(&Scalar(a.0.clone()), k).0)
    }

    fn pair(&self, a: &Exp, b: &Exp) -> Exp {
        Exp(self.zp.mul(&Scalar(a.0.clone()), &Scalar(b.0.clone())).0)
    }

    fn gt_mul(&self, a: &Exp, b: &Exp) -> Exp {
        self.g1_mul(a, b)
    }

    fn gt_pow(&self, a: &Exp, k: &Scalar) -> Exp {
        self.g1_pow(a, k)
    }

    fn gt_inv(&self, a: &Exp) -> Exp {
        Exp(self.zp.neg(&Scalar(a.0.clone())).0)
    }

    fn encode(&self, msg: &[u8; 32]) -> Exp {
        Exp(BigUint::from_bytes_be(msg))
    }

    fn decode(&self, m: &Exp) -> Option<[u8; 32]> {
        let raw = m.0.to_bytes_be();
        if m.0.bits() > 256 {
            return None;
        }
        let mut out = [0u8; 32];
        out[32 - raw.len()..].copy_from_slice(&raw);
        Some(out)
    }
}
