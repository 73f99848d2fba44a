//! Time-sensitive key-policy attribute-based encryption.
//!
//! Keys carry a monotone policy over attributes and a set of calendar
//! periods; ciphertexts carry an attribute set and periods. A key opens a
//! ciphertext iff its policy accepts the attributes and every ciphertext
//! period lies under one of its own. Content is sealed with AES-256-GCM
//! and only the AES key goes through the pairing scheme.
//!
//! The public parameters include `g^(1/alpha)`, and every ciphertext
//! carries `C_0' = g^(alpha^2 x)`. Hence `e(C_0', g^(1/alpha)) =
//! e(g,g)^(alpha x)` is public, and `C_0 / e(C_0', g^(1/alpha))` reveals
//! the message to anyone. The construction is kept unchanged so its
//! algebra can be checked, but it must not protect real content.

pub mod backend;
pub mod field;
pub mod lsss;
pub mod scheme;
pub mod seal;
pub mod time;

use thiserror::Error;

pub use backend::{Backend, Symbolic};
pub use lsss::{formula_to_lsss, lsss_satisfy, AccessStructure, Formula};
pub use scheme::{
    decrypt, encrypt, fresh_identity, keygen, setup, Algebra, Ciphertext, Denied, MasterKey, PrivateKey,
    PublicParams, ShareIndex, Variant,
};
pub use seal::{open, seal};
pub use time::{covers, parse_date, Node, PeriodSet, TimeTree};

#[derive(Debug, Error)]
pub enum KpAbeError {
    #[error("time range: {0}")]
    Range(String),
    #[error("unsupported policy: {0}")]
    UnsupportedFormula(String),
    #[error("attribute {0:?} is not in the universe")]
    UnknownAttribute(String),
    #[error("pseudo-identity must be nonzero")]
    InvalidIdentity,
    #[error("setup: {0}")]
    Setup(String),
    #[error("content to seal is empty")]
    EmptyContent,
    #[error("malformed sealed file: {0}")]
    MalformedSealedFile(String),
    #[error("authenticated decryption failed")]
    Aead,
    #[error("decryption denied: {0}")]
    Denied(#[from] Denied),
}
