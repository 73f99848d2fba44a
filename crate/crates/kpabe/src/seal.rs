//! Hybrid content protection: AES-256-GCM over the content under a fresh
//! key, with the key itself KP-ABE encrypted into a trailer.
//!
//! Layout (integers big-endian):
//!
//! ```text
//! nonce[12] | aes-gcm(content)            body
//! "IOVKPABE" | version u8 | ct_len u32 | ct JSON[ct_len]
//!   | attr_count u16 | { len u16 | utf8[len] }*
//!   | period_count u16 | { depth u8 | component u16 * depth }*   trailer
//! trailer_len u32
//! ```
//!
//! The trailer is the AEAD associated data, so it cannot be swapped
//! without failing authentication.

use std::collections::BTreeSet;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use rand::Rng;

use crate::backend::Backend;
use crate::scheme::{decrypt, encrypt, Ciphertext, CiphertextBody, PrivateKey, PublicParams};
use crate::time::{Node, PeriodSet};
use crate::KpAbeError;

pub const MAGIC: &[u8; 8] = b"IOVKPABE";
pub const VERSION: u8 = 1;
const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

fn encode_trailer<B: Backend>(ct: &Ciphertext<B>) -> Result<Vec<u8>, KpAbeError> {
    let json = serde_json::to_vec(&ct.body).map_err(|e| KpAbeError::MalformedSealedFile(e.to_string()))?;
    let too_long = || KpAbeError::MalformedSealedFile("trailer field too long".into());
    let mut out = Vec::with_capacity(json.len() + 64);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| too_long())?.to_be_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&u16::try_from(ct.attributes.len()).map_err(|_| too_long())?.to_be_bytes());
    for a in &ct.attributes {
        out.extend_from_slice(&u16::try_from(a.len()).map_err(|_| too_long())?.to_be_bytes());
        out.extend_from_slice(a.as_bytes());
    }
    out.extend_from_slice(&u16::try_from(ct.periods.len()).map_err(|_| too_long())?.to_be_bytes());
    for node in ct.periods.nodes() {
        out.push(node.depth() as u8);
        for c in &node.0 {
            out.extend_from_slice(&c.to_be_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], KpAbeError> {
        if self.buf.len() < n {
            return Err(KpAbeError::MalformedSealedFile("truncated trailer".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, KpAbeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, KpAbeError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self) -> Result<u32, KpAbeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("four bytes")))
    }
}

fn decode_trailer<B: Backend>(trailer: &[u8]) -> Result<Ciphertext<B>, KpAbeError> {
    let malformed = |m: &str| KpAbeError::MalformedSealedFile(m.to_string());
    let mut r = Reader { buf: trailer };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(malformed("bad magic"));
    }
    let version = r.u8()?;
    if version != VERSION {
        return Err(KpAbeError::MalformedSealedFile(format!("unsupported version {version}")));
    }
    let len = r.u32()? as usize;
    let body: CiphertextBody<B> =
        serde_json::from_slice(r.take(len)?).map_err(|e| KpAbeError::MalformedSealedFile(e.to_string()))?;
    let mut attributes = BTreeSet::new();
    for _ in 0..r.u16()? {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| malformed("attribute is not utf-8"))?;
        attributes.insert(name.to_string());
    }
    let mut nodes = Vec::new();
    for _ in 0..r.u16()? {
        let depth = r.u8()?;
        nodes.push(Node((0..depth).map(|_| r.u16()).collect::<Result<_, _>>()?));
    }
    if !r.buf.is_empty() {
        return Err(malformed("trailing bytes in trailer"));
    }
    let periods = PeriodSet::new(nodes).map_err(|e| KpAbeError::MalformedSealedFile(e.to_string()))?;
    if body.time.len() != periods.len() {
        return Err(malformed("period count does not match ciphertext"));
    }
    Ok(Ciphertext { attributes, periods, body })
}

/// Splits a sealed file into `(body, trailer)`.
fn split(sealed: &[u8]) -> Result<(&[u8], &[u8]), KpAbeError> {
    let malformed = |m: &str| KpAbeError::MalformedSealedFile(m.to_string());
    let n = sealed.len();
    if n < 4 {
        return Err(malformed("file too short"));
    }
    let trailer_len = u32::from_be_bytes(sealed[n - 4..].try_into().expect("four bytes")) as usize;
    let body_len = (n - 4).checked_sub(trailer_len).ok_or_else(|| malformed("trailer length exceeds file"))?;
    if body_len < NONCE_LEN + TAG_LEN {
        return Err(malformed("body too short"));
    }
    Ok((&sealed[..body_len], &sealed[body_len..n - 4]))
}

pub fn seal<B: Backend, R: Rng + ?Sized>(
    b: &B,
    pk: &PublicParams<B>,
    content: &[u8],
    periods: &PeriodSet,
    attributes: &BTreeSet<String>,
    rng: &mut R,
) -> Result<Vec<u8>, KpAbeError> {
    if content.is_empty() {
        return Err(KpAbeError::EmptyContent);
    }
    let mut key = [0u8; 32];
    rng.fill(&mut key);
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill(&mut nonce);
    let ct = encrypt(b, pk, &b.encode(&key), periods, attributes, rng)?;
    let trailer = encode_trailer(&ct)?;
    let cipher = Aes256Gcm::new_from_slice(&key).expect("32-byte key");
    let body = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: content, aad: &trailer })
        .map_err(|_| KpAbeError::Aead)?;
    let mut out = Vec::with_capacity(NONCE_LEN + body.len() + trailer.len() + 4);
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&body);
    out.extend_from_slice(&trailer);
    out.extend_from_slice(&(trailer.len() as u32).to_be_bytes());
    Ok(out)
}

/// Reads the ciphertext carried by a sealed file without opening it.
pub fn inspect<B: Backend>(sealed: &[u8]) -> Result<Ciphertext<B>, KpAbeError> {
    decode_trailer(split(sealed)?.1)
}

/// Policy and time checks run before the AES body is touched.
pub fn open<B: Backend>(
    b: &B,
    pk: &PublicParams<B>,
    sealed: &[u8],
    sk: &PrivateKey<B>,
) -> Result<Vec<u8>, KpAbeError> {
    let (body, trailer) = split(sealed)?;
    let ct = decode_trailer::<B>(trailer)?;
    let m = decrypt(b, pk, &ct, sk).map_err(KpAbeError::Denied)?;
    let key = b.decode(&m).ok_or(KpAbeError::Aead)?;
    let cipher = Aes256Gcm::new_from_slice(&key).expect("32-byte key");
    cipher
        .decrypt(Nonce::from_slice(&body[..NONCE_LEN]), Payload { msg: &body[NONCE_LEN..], aad: trailer })
        .map_err(|_| KpAbeError::Aead)
}
