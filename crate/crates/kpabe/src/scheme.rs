//! Setup, KeyGen, Encrypt and Decrypt of the time-sensitive KP-ABE scheme.
//!
//! Two algebra variants exist. `Literal` uses row
//! keys `D_i' = (g h_rho(i)^beta)^(lambda ID)`, `k_y = (g^beta h_y^beta)^-1`
//! and the time key of the key's own node. It does not decrypt: the `h`
//! factors leave `beta * eta_y` cross terms that the quotient never cancels,
//! and a key node above the ciphertext node pairs against the wrong time
//! polynomial. `Corrected` (the default) uses `D_i' = g^(lambda_i ID)`,
//! `k_y = (g^beta)^-1` and adds delegation components `V_j^w` below each
//! key node, so `D''` can be extended to the exact ciphertext node. The
//! quotient then reduces to the message.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::field::Scalar;
use crate::lsss::{lsss_satisfy, shares, AccessStructure};
use crate::time::{covers, Node, PeriodSet, TimeTree, DEPTH};
use crate::KpAbeError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algebra {
    #[default]
    Corrected,
    Literal,
}

/// Which share enters `D_i'`: the row's own `lambda_i` or `lambda_1` for
/// every row.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShareIndex {
    #[default]
    PerRow,
    FirstRow,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub algebra: Algebra,
    pub share_index: ShareIndex,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PublicParams<B: Backend> {
    pub variant: Variant,
    pub tree: TimeTree,
    /// Attribute universe; `h_beta[i]` belongs to `attributes[i]`.
    pub attributes: Vec<String>,
    pub g: B::G1,
    pub g_alpha: B::G1,
    pub g_alpha2: B::G1,
    pub g_inv_alpha: B::G1,
    pub g_beta: B::G1,
    pub g_beta2: B::G1,
    pub egg_alpha: B::Gt,
    pub h_beta: Vec<B::G1>,
    /// `V_0 .. V_DEPTH`.
    pub v: Vec<B::G1>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MasterKey {
    pub alpha: Scalar,
    pub beta: Scalar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeKey<B: Backend> {
    pub node: Node,
    /// `(V_0 prod V_j^tau_j)^w`.
    pub d: B::G1,
    /// `V_j^w` for every level below `node`; empty under `Literal`.
    pub delegate: Vec<B::G1>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct RowKey<B: Backend> {
    pub d: B::G1,
    pub d_prime: B::G1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PrivateKey<B: Backend> {
    pub id: Scalar,
    pub policy: AccessStructure,
    pub periods: PeriodSet,
    pub d0: B::Gt,
    pub d0_prime: B::G1,
    pub time: Vec<TimeKey<B>>,
    pub rows: Vec<RowKey<B>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeCiphertext<B: Backend> {
    pub c0: B::G1,
    pub c1: B::G1,
}

/// Group elements of a ciphertext.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct CiphertextBody<B: Backend> {
    pub c0: B::Gt,
    pub c0_prime: B::G1,
    pub k: BTreeMap<String, B::G1>,
    /// One pair per node of the ciphertext's period set, in order.
    pub time: Vec<TimeCiphertext<B>>,
}

/// Ciphertext with its attribute set and periods in the clear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Ciphertext<B: Backend> {
    pub attributes: BTreeSet<String>,
    pub periods: PeriodSet,
    pub body: CiphertextBody<B>,
}

/// Decryption output `⊥`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum Denied {
    #[error("ciphertext attributes do not satisfy the key's policy")]
    AttributeMismatch,
    #[error("ciphertext periods are not covered by the key's periods")]
    TimeMismatch,
    #[error("ciphertext or key components are inconsistent")]
    Malformed,
}

fn scalar<B: Backend>(b: &B, x: u64) -> Scalar {
    b.field().reduce(x.into())
}

/// `V_0 prod_j V_j^tau_j` for `node`.
pub fn time_element<B: Backend>(b: &B, pk: &PublicParams<B>, node: &Node) -> B::G1 {
    pk.tree
        .scalar_path(node)
        .iter()
        .enumerate()
        .fold(pk.v[0].clone(), |acc, (j, &t)| b.g1_mul(&acc, &b.g1_pow(&pk.v[j + 1], &scalar(b, t))))
}

pub fn setup<B: Backend, R: Rng + ?Sized>(
    b: &B,
    attributes: &[String],
    tree: TimeTree,
    variant: Variant,
    rng: &mut R,
) -> Result<(PublicParams<B>, MasterKey), KpAbeError> {
    if attributes.is_empty() {
        return Err(KpAbeError::Setup("at least one attribute is required".into()));
    }
    if attributes.iter().collect::<BTreeSet<_>>().len() != attributes.len() {
        return Err(KpAbeError::Setup("attribute names must be distinct".into()));
    }
    let zp = b.field();
    let alpha = zp.random_nonzero(rng);
    let beta = zp.random_nonzero(rng);
    let g = b.generator();
    let pow = |k: &Scalar| b.g1_pow(&g, k);
    let h: Vec<B::G1> = attributes.iter().map(|_| b.random_g1(rng)).collect();
    let v = (0..=DEPTH).map(|_| b.random_g1(rng)).collect();
    let pk = PublicParams {
        variant,
        tree,
        attributes: attributes.to_vec(),
        g_alpha: pow(&alpha),
        g_alpha2: pow(&zp.mul(&alpha, &alpha)),
        g_inv_alpha: pow(&zp.inv(&alpha).expect("alpha is nonzero")),
        g_beta: pow(&beta),
        g_beta2: pow(&zp.mul(&beta, &beta)),
        egg_alpha: b.gt_pow(&b.pair(&g, &g), &alpha),
        h_beta: h.iter().map(|h| b.g1_pow(h, &beta)).collect(),
        v,
        g,
    };
    Ok((pk, MasterKey { alpha, beta }))
}

/// Fresh nonzero pseudo-identity for one purchase.
pub fn fresh_identity<B: Backend, R: Rng + ?Sized>(b: &B, rng: &mut R) -> Scalar {
    b.field().random_nonzero(rng)
}

fn attribute_index<B: Backend>(pk: &PublicParams<B>, name: &str) -> Result<usize, KpAbeError> {
    pk.attributes.iter().position(|a| a == name).ok_or_else(|| KpAbeError::UnknownAttribute(name.to_string()))
}

pub fn keygen<B: Backend, R: Rng + ?Sized>(
    b: &B,
    pk: &PublicParams<B>,
    mk: &MasterKey,
    id: &Scalar,
    periods: &PeriodSet,
    policy: &AccessStructure,
    rng: &mut R,
) -> Result<PrivateKey<B>, KpAbeError> {
    if id.is_zero() {
        return Err(KpAbeError::InvalidIdentity);
    }
    if !policy.is_well_formed() {
        return Err(KpAbeError::Setup("access structure rows and labels disagree".into()));
    }
    let attr_idx = policy.rho.iter().map(|a| attribute_index(pk, a)).collect::<Result<Vec<_>, _>>()?;
    for node in periods.nodes() {
        pk.tree.validate(node)?;
    }
    let zp = b.field();
    let vector: Vec<Scalar> = (0..policy.cols()).map(|_| zp.random(rng)).collect();
    let w = vector[0].clone();
    let lambda = shares(policy, &vector, zp);
    let corrected = pk.variant.algebra == Algebra::Corrected;

    let time = periods
        .nodes()
        .iter()
        .map(|node| TimeKey {
            node: node.clone(),
            d: b.g1_pow(&time_element(b, pk, node), &w),
            delegate: if corrected {
                pk.v[node.depth() + 1..DEPTH].iter().map(|v| b.g1_pow(v, &w)).collect()
            } else {
                Vec::new()
            },
        })
        .collect();
    let rows = lambda
        .iter()
        .zip(&attr_idx)
        .map(|(l, &a)| {
            let used = match pk.variant.share_index {
                ShareIndex::PerRow => l,
                ShareIndex::FirstRow => &lambda[0],
            };
            let base = match pk.variant.algebra {
                Algebra::Corrected => pk.g.clone(),
                Algebra::Literal => b.g1_mul(&pk.g, &pk.h_beta[a]),
            };
            RowKey { d: b.g1_pow(&pk.g_beta, l), d_prime: b.g1_pow(&base, &zp.mul(used, id)) }
        })
        .collect();
    Ok(PrivateKey {
        id: id.clone(),
        policy: policy.clone(),
        periods: periods.clone(),
        d0: b.gt_pow(&pk.egg_alpha, &w),
        d0_prime: b.g1_pow(&pk.g, &zp.mul(&w, &zp.inv(&mk.alpha).expect("alpha is nonzero"))),
        time,
        rows,
    })
}

pub fn encrypt<B: Backend, R: Rng + ?Sized>(
    b: &B,
    pk: &PublicParams<B>,
    message: &B::Gt,
    periods: &PeriodSet,
    attributes: &BTreeSet<String>,
    rng: &mut R,
) -> Result<Ciphertext<B>, KpAbeError> {
    if periods.is_empty() {
        return Err(KpAbeError::Range("a ciphertext needs at least one period".into()));
    }
    for node in periods.nodes() {
        pk.tree.validate(node)?;
    }
    let zp = b.field();
    let x = zp.random(rng);
    let g_alpha_x = b.g1_pow(&pk.g_alpha, &x);
    let time = periods
        .nodes()
        .iter()
        .map(|node| {
            let v = zp.random(rng);
            let tail = b.g1_pow(&time_element(b, pk, node), &v);
            TimeCiphertext { c0: b.g1_pow(&pk.g, &v), c1: b.g1_mul(&b.g1_mul(&g_alpha_x, &pk.g_beta2), &tail) }
        })
        .collect();
    let k = attributes
        .iter()
        .map(|y| {
            let i = attribute_index(pk, y)?;
            let inner = match pk.variant.algebra {
                Algebra::Corrected => pk.g_beta.clone(),
                Algebra::Literal => b.g1_mul(&pk.g_beta, &pk.h_beta[i]),
            };
            Ok((y.clone(), b.g1_inv(&inner)))
        })
        .collect::<Result<_, KpAbeError>>()?;
    Ok(Ciphertext {
        attributes: attributes.clone(),
        periods: periods.clone(),
        body: CiphertextBody {
            c0: b.gt_mul(message, &b.gt_pow(&pk.egg_alpha, &x)),
            c0_prime: b.g1_pow(&pk.g_alpha2, &x),
            k,
            time,
        },
    })
}

/// Checks the policy, then the periods, then evaluates
/// `C_0 e(D'', C_0t) e(C_0', D_0') / (e(C_0', g^(1/alpha))
///  prod_i e(C_1t, D_i'^(omega_i/ID)) e(D_i, k_rho(i))^omega_i)`
/// on the first ciphertext node.
pub fn decrypt<B: Backend>(
    b: &B,
    pk: &PublicParams<B>,
    ct: &Ciphertext<B>,
    sk: &PrivateKey<B>,
) -> Result<B::Gt, Denied> {
    if ct.body.time.len() != ct.periods.len() || sk.rows.len() != sk.policy.rows() || ct.periods.is_empty() {
        return Err(Denied::Malformed);
    }
    let zp = b.field();
    let omega = lsss_satisfy(&sk.policy, &ct.attributes, zp).ok_or(Denied::AttributeMismatch)?;
    if !covers(&sk.periods, &ct.periods) {
        return Err(Denied::TimeMismatch);
    }
    let target = &ct.periods.nodes()[0];
    let pair = &ct.body.time[0];
    let tk = sk.time.iter().find(|t| t.node.is_prefix_of(target)).ok_or(Denied::Malformed)?;
    let d_time = match pk.variant.algebra {
        Algebra::Corrected => {
            let path = pk.tree.scalar_path(target);
            let mut d = tk.d.clone();
            let below = &path[tk.node.depth()..target.depth()];
            if tk.delegate.len() < below.len() {
                return Err(Denied::Malformed);
            }
            for (comp, &c) in tk.delegate.iter().zip(below) {
                d = b.g1_mul(&d, &b.g1_pow(comp, &scalar(b, c)));
            }
            d
        }
        Algebra::Literal => tk.d.clone(),
    };
    let numerator = b.gt_mul(
        &b.gt_mul(&ct.body.c0, &b.pair(&d_time, &pair.c0)),
        &b.pair(&ct.body.c0_prime, &sk.d0_prime),
    );
    let inv_id = zp.inv(&sk.id).ok_or(Denied::Malformed)?;
    let mut denominator = b.pair(&ct.body.c0_prime, &pk.g_inv_alpha);
    for (i, w) in &omega {
        let row = &sk.rows[*i];
        let k = ct.body.k.get(&sk.policy.rho[*i]).ok_or(Denied::Malformed)?;
        let left = b.pair(&pair.c1, &b.g1_pow(&row.d_prime, &zp.mul(w, &inv_id)));
        let right = b.gt_pow(&b.pair(&row.d, k), w);
        denominator = b.gt_mul(&denominator, &b.gt_mul(&left, &right));
    }
    Ok(b.gt_div(&numerator, &denominator))
}
