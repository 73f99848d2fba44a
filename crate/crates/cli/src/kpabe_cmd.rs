//! `kpabe` verbs over JSON key files and sealed content files.
//!
//! Only the symbolic backend exists, whose group elements are their own
//! discrete logarithms. These verbs exercise the scheme end to end; they do
//! not protect anything.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::UNIX_EPOCH;

use iov_bazaar_core::net::{ContentClass, ContentEntry};
use iov_bazaar_kpabe::seal::inspect;
use iov_bazaar_kpabe::{
    formula_to_lsss, fresh_identity, keygen, open, parse_date, seal, setup, Formula, KpAbeError, MasterKey,
    PeriodSet, PrivateKey, PublicParams, Symbolic, TimeTree, Variant,
};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::{io_error, CliError};

fn kpabe_error(e: KpAbeError) -> CliError {
    match e {
        KpAbeError::Range(_)
        | KpAbeError::UnsupportedFormula(_)
        | KpAbeError::UnknownAttribute(_)
        | KpAbeError::Setup(_)
        | KpAbeError::EmptyContent => CliError::Config(e.to_string()),
        KpAbeError::InvalidIdentity
        | KpAbeError::MalformedSealedFile(_)
        | KpAbeError::Aead
        | KpAbeError::Denied(_) => CliError::Runtime(e.to_string()),
    }
}

/// Seeded runs are reproducible; without a seed the thread CSPRNG is used.
fn rng(seed: Option<u64>) -> Box<dyn RngCore> {
    match seed {
        Some(s) => Box::new(ChaCha20Rng::seed_from_u64(s)),
        None => Box::new(rand::rng()),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    serde_json::from_slice(&read_input(path)?)
        .map_err(|e| CliError::Config(format!("{} is not a valid key file: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut s = serde_json::to_vec_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push(b'\n');
    write_file(path, &s)
}

pub fn attribute_set(list: &str) -> BTreeSet<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

/// Minimal cover of `from..=to` (`to` defaults to `from`).
pub fn period_cover(tree: &TimeTree, from: &str, to: Option<&str>) -> Result<PeriodSet, CliError> {
    let start = parse_date(from).map_err(kpabe_error)?;
    let end = parse_date(to.unwrap_or(from)).map_err(kpabe_error)?;
    tree.set_cover(start, end).map_err(kpabe_error)
}

pub struct SetupArgs {
    pub attributes: String,
    pub first_year: u16,
    pub years: u16,
    pub variant: Variant,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Writes `pk.json` and `mk.json` into `out`.
pub fn cmd_setup(a: &SetupArgs) -> Result<Vec<PathBuf>, CliError> {
    let names: Vec<String> = attribute_set(&a.attributes).into_iter().collect();
    if names.is_empty() {
        return Err(CliError::Config("--attributes: at least one attribute is required".into()));
    }
    let tree = TimeTree::new(a.first_year, a.years).map_err(kpabe_error)?;
    let (pk, mk) = setup(&Symbolic::default(), &names, tree, a.variant, &mut *rng(a.seed)).map_err(kpabe_error)?;
    let paths = vec![a.out.join("pk.json"), a.out.join("mk.json")];
    write_json(&paths[0], &pk)?;
    write_json(&paths[1], &mk)?;
    Ok(paths)
}

pub struct KeygenArgs {
    pub pk: PathBuf,
    pub mk: PathBuf,
    pub policy: String,
    pub from: String,
    pub to: String,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Issues a key under a fresh pseudo-identity; returns its periods.
pub fn cmd_keygen(a: &KeygenArgs) -> Result<PeriodSet, CliError> {
    let b = Symbolic::default();
    let pk: PublicParams<Symbolic> = read_json(&a.pk)?;
    let mk: MasterKey = read_json(&a.mk)?;
    let formula = Formula::parse(&a.policy).map_err(kpabe_error)?;
    let periods = period_cover(&pk.tree, &a.from, Some(&a.to))?;
    let mut rng = rng(a.seed);
    let id = fresh_identity(&b, &mut *rng);
    let sk = keygen(&b, &pk, &mk, &id, &periods, &formula_to_lsss(&formula), &mut *rng).map_err(kpabe_error)?;
    write_json(&a.out, &sk)?;
    Ok(periods)
}

pub struct SealArgs {
    pub pk: PathBuf,
    pub input: PathBuf,
    pub attributes: String,
    pub from: String,
    pub to: Option<String>,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Seals `input` and returns the directory entry of the sealed bytes.
pub fn cmd_seal(a: &SealArgs) -> Result<ContentEntry, CliError> {
    let pk: PublicParams<Symbolic> = read_json(&a.pk)?;
    let content = read_input(&a.input)?;
    let periods = period_cover(&pk.tree, &a.from, a.to.as_deref())?;
    let attrs = attribute_set(&a.attributes);
    let sealed =
        seal(&Symbolic::default(), &pk, &content, &periods, &attrs, &mut *rng(a.seed)).map_err(kpabe_error)?;
    write_file(&a.out, &sealed)?;
    let modified = fs::metadata(&a.input)
        .and_then(|m| m.modified())
        .ok()
        .and_then(|t| t.duration_since(UNIX_EPOCH).ok())
        .map_or(0, |d| d.as_secs());
    let name = a.out.file_name().map_or_else(|| "sealed".into(), |n| n.to_string_lossy().into_owned());
    Ok(ContentEntry::for_bytes(name, &sealed, modified, ContentClass::Other))
}

pub struct OpenArgs {
    pub pk: PathBuf,
    pub key: PathBuf,
    pub input: PathBuf,
    pub out: PathBuf,
}

pub fn cmd_open(a: &OpenArgs) -> Result<usize, CliError> {
    let pk: PublicParams<Symbolic> = read_json(&a.pk)?;
    let sk: PrivateKey<Symbolic> = read_json(&a.key)?;
    let sealed = read_input(&a.input)?;
    let content = open(&Symbolic::default(), &pk, &sealed, &sk).map_err(kpabe_error)?;
    write_file(&a.out, &content)?;
    Ok(content.len())
}

/// Attributes and periods carried by a sealed file.
pub fn cmd_inspect(input: &Path) -> Result<(BTreeSet<String>, PeriodSet), CliError> {
    let ct = inspect::<Symbolic>(&read_input(input)?).map_err(kpabe_error)?;
    Ok((ct.attributes, ct.periods))
}

pub fn cmd_cover(first_year: u16, years: u16, from: &str, to: &str) -> Result<PeriodSet, CliError> {
    let tree = TimeTree::new(first_year, years).map_err(kpabe_error)?;
    period_cover(&tree, from, Some(to))
}
