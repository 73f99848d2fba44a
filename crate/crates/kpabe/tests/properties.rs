use std::collections::BTreeSet;

use chrono::{Datelike, NaiveDate};
use iov_bazaar_kpabe::backend::Backend;
use iov_bazaar_kpabe::lsss::shares;
use iov_bazaar_kpabe::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

fn days(start: NaiveDate, end: NaiveDate) -> impl Iterator<Item = NaiveDate> {
    start.iter_days().take_while(move |d| *d <= end)
}

fn last_of_month(y: i32, m: u32) -> NaiveDate {
    let next = if m == 12 { date(y + 1, 1, 1) } else { date(y, m + 1, 1) };
    next.pred_opt().unwrap()
}

/// Node count of the minimal cover, merged bottom-up from single days.
fn oracle_count(first_year: i32, years: i32, s: NaiveDate, e: NaiveDate) -> usize {
    let inside = |lo: NaiveDate, hi: NaiveDate| s <= lo && hi <= e;
    if inside(date(first_year, 1, 1), date(first_year + years - 1, 12, 31)) {
        return 1;
    }
    let mut count = 0;
    for y in first_year..first_year + years {
        if inside(date(y, 1, 1), date(y, 12, 31)) {
            count += 1;
            continue;
        }
        for m in 1..=12 {
            let (lo, hi) = (date(y, m, 1), last_of_month(y, m));
            if inside(lo, hi) {
                count += 1;
            } else if lo <= e && s <= hi {
                count += ((hi.min(e) - lo.max(s)).num_days() + 1) as usize;
            }
        }
    }
    count
}

#[test]
fn set_cover_is_exact_and_minimal_over_three_years() {
    let tree = TimeTree::new(2023, 3).unwrap();
    let all: Vec<NaiveDate> = days(date(2023, 1, 1), date(2025, 12, 31)).collect();
    for (i, &s) in all.iter().enumerate() {
        for &e in &all[i..] {
            let cover = tree.set_cover(s, e).unwrap();
            let mut total = 0;
            for node in cover.nodes() {
                let (lo, hi) = tree.span(node);
                assert!(s <= lo && hi <= e, "{node} leaves [{s}, {e}]");
                total += (hi - lo).num_days() + 1;
            }
            assert_eq!(total, (e - s).num_days() + 1, "[{s}, {e}] not fully covered");
            assert_eq!(cover.len(), oracle_count(2023, 3, s, e), "[{s}, {e}]");
        }
    }
}

#[test]
fn covers_matches_date_containment_over_one_year() {
    let tree = TimeTree::new(2022, 1).unwrap();
    let all: Vec<NaiveDate> = days(date(2022, 1, 1), date(2022, 12, 31)).collect();
    let keys = [
        (date(2022, 7, 1), date(2022, 9, 2)),
        (date(2022, 1, 1), date(2022, 12, 31)),
        (date(2022, 2, 28), date(2022, 3, 1)),
        (date(2022, 6, 15), date(2022, 6, 15)),
        (date(2022, 1, 31), date(2022, 11, 30)),
    ];
    for (ks, ke) in keys {
        let key = tree.set_cover(ks, ke).unwrap();
        for (i, &s) in all.iter().enumerate() {
            for &e in &all[i..] {
                let ct = tree.set_cover(s, e).unwrap();
                assert_eq!(covers(&key, &ct), ks <= s && e <= ke, "key [{ks}, {ke}] ct [{s}, {e}]");
            }
        }
    }
}

fn random_formula(rng: &mut ChaCha8Rng, attrs: &[&str], depth: u32) -> Formula {
    if depth == 0 || rng.random_bool(0.3) {
        return Formula::Attr(attrs[rng.random_range(0..attrs.len())].to_string());
    }
    let l = Box::new(random_formula(rng, attrs, depth - 1));
    let r = Box::new(random_formula(rng, attrs, depth - 1));
    if rng.random() {
        Formula::And(l, r)
    } else {
        Formula::Or(l, r)
    }
}

#[test]
fn lsss_accepts_exactly_the_satisfying_sets() {
    let b = Symbolic::default();
    let zp = b.field();
    let attrs = ["a", "b", "c", "d", "e", "f"];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..400 {
        let f = random_formula(&mut rng, &attrs, 4);
        let a = formula_to_lsss(&f);
        assert!(a.matrix.iter().flatten().all(|x| (-1..=1).contains(x)));
        let v: Vec<_> = (0..a.cols()).map(|_| zp.random(&mut rng)).collect();
        let lambda = shares(&a, &v, zp);
        for mask in 0u32..64 {
            let set: BTreeSet<String> =
                attrs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, s)| s.to_string()).collect();
            match lsss_satisfy(&a, &set, zp) {
                Some(omega) => {
                    assert!(f.eval(&set), "{f} accepted {set:?}");
                    let w = omega.iter().fold(zp.zero(), |acc, (i, o)| zp.add(&acc, &zp.mul(o, &lambda[*i])));
                    assert_eq!(w, v[0]);
                }
                None => assert!(!f.eval(&set), "{f} rejected {set:?}"),
            }
        }
    }
}

struct Fixture {
    b: Symbolic,
    pk: PublicParams<Symbolic>,
    mk: MasterKey,
    rng: ChaCha8Rng,
}

fn fixture(variant: Variant, seed: u64) -> Fixture {
    let b = Symbolic::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = ["gold", "silver", "hd", "sd", "kids"].iter().map(|s| s.to_string()).collect();
    let (pk, mk) = setup(&b, &names, TimeTree::new(2020, 10).unwrap(), variant, &mut rng).unwrap();
    Fixture { b, pk, mk, rng }
}

fn attrs(xs: &[&str]) -> BTreeSet<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

fn periods(tree: &TimeTree, from: &str, to: &str) -> PeriodSet {
    tree.set_cover(parse_date(from).unwrap(), parse_date(to).unwrap()).unwrap()
}

/// Key for gold AND (hd OR sd) over 2022-07-01..2022-09-02; ciphertext for
/// {gold, sd} on 2022-08-14.
fn decrypts(variant: Variant) -> bool {
    let Fixture { b, pk, mk, mut rng } = fixture(variant, 3);
    let policy = formula_to_lsss(&Formula::parse("gold AND (hd OR sd)").unwrap());
    let key_periods = periods(&pk.tree, "2022-07-01", "2022-09-02");
    let sk = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &key_periods, &policy, &mut rng).unwrap();
    let m = b.encode(&[0x5a; 32]);
    let ct = encrypt(&b, &pk, &m, &periods(&pk.tree, "2022-08-14", "2022-08-14"), &attrs(&["gold", "sd"]), &mut rng)
        .unwrap();
    decrypt(&b, &pk, &ct, &sk) == Ok(m)
}

#[test]
fn only_the_corrected_per_row_variant_round_trips() {
    assert!(decrypts(Variant { algebra: Algebra::Corrected, share_index: ShareIndex::PerRow }));
    assert!(!decrypts(Variant { algebra: Algebra::Corrected, share_index: ShareIndex::FirstRow }));
    assert!(!decrypts(Variant { algebra: Algebra::Literal, share_index: ShareIndex::PerRow }));
    assert!(!decrypts(Variant { algebra: Algebra::Literal, share_index: ShareIndex::FirstRow }));
}

#[test]
fn public_parameters_alone_recover_the_message() {
    let Fixture { b, pk, mut rng, .. } = fixture(Variant::default(), 8);
    let m = b.encode(&[9; 32]);
    let ct = encrypt(&b, &pk, &m, &periods(&pk.tree, "2022-01-01", "2022-01-31"), &attrs(&["gold"]), &mut rng).unwrap();
    let leaked = b.gt_div(&ct.body.c0, &b.pair(&ct.body.c0_prime, &pk.g_inv_alpha));
    assert_eq!(leaked, m);
}

#[test]
fn every_purchase_gets_a_fresh_identity() {
    let Fixture { b, pk, mk, mut rng } = fixture(Variant::default(), 4);
    let policy = formula_to_lsss(&Formula::parse("gold").unwrap());
    let p = periods(&pk.tree, "2022-01-01", "2022-03-31");
    let k1 = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &p, &policy, &mut rng).unwrap();
    let k2 = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &p, &policy, &mut rng).unwrap();
    assert_ne!(k1.id, k2.id);
    assert_ne!(k1.rows[0].d_prime, k2.rows[0].d_prime);
}

#[test]
fn keygen_is_deterministic_per_seed() {
    let key = || {
        let Fixture { b, pk, mk, mut rng } = fixture(Variant::default(), 12);
        let policy = formula_to_lsss(&Formula::parse("gold AND hd").unwrap());
        let id = fresh_identity(&b, &mut rng);
        keygen(&b, &pk, &mk, &id, &periods(&pk.tree, "2022-01-01", "2022-12-31"), &policy, &mut rng).unwrap()
    };
    assert_eq!(key(), key());
}

#[test]
fn keys_and_parameters_survive_json() {
    let Fixture { b, pk, mk, mut rng } = fixture(Variant::default(), 5);
    let policy = formula_to_lsss(&Formula::parse("silver OR kids").unwrap());
    let sk = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &periods(&pk.tree, "2021-03-04", "2021-05-06"), &policy, &mut rng)
        .unwrap();
    let pk2: PublicParams<Symbolic> = serde_json::from_str(&serde_json::to_string(&pk).unwrap()).unwrap();
    let mk2: MasterKey = serde_json::from_str(&serde_json::to_string(&mk).unwrap()).unwrap();
    let sk2: PrivateKey<Symbolic> = serde_json::from_str(&serde_json::to_string(&sk).unwrap()).unwrap();
    assert_eq!((pk2, mk2, sk2), (pk, mk, sk));
}

fn sealed_fixture() -> (Fixture, PrivateKey<Symbolic>, Vec<u8>, Vec<u8>) {
    let mut f = fixture(Variant::default(), 6);
    let policy = formula_to_lsss(&Formula::parse("gold AND hd").unwrap());
    let key_periods = periods(&f.pk.tree, "2022-07-01", "2022-09-02");
    let id = fresh_identity(&f.b, &mut f.rng);
    let sk = keygen(&f.b, &f.pk, &f.mk, &id, &key_periods, &policy, &mut f.rng).unwrap();
    let content: Vec<u8> = (0..200u32).map(|i| (i * 7 % 251) as u8).collect();
    let ct_periods = periods(&f.pk.tree, "2022-08-01", "2022-08-31");
    let sealed = seal(&f.b, &f.pk, &content, &ct_periods, &attrs(&["gold", "hd"]), &mut f.rng).unwrap();
    (f, sk, content, sealed)
}

#[test]
fn sealed_content_round_trips() {
    let (f, sk, content, sealed) = sealed_fixture();
    assert_eq!(open(&f.b, &f.pk, &sealed, &sk).unwrap(), content);
    assert!(matches!(seal(&f.b, &f.pk, &[], &sk.periods, &attrs(&["gold"]), &mut ChaCha8Rng::seed_from_u64(0)), Err(KpAbeError::EmptyContent)));
}

#[test]
fn sealed_layout_is_bit_exact() {
    let (_, _, content, sealed) = sealed_fixture();
    let n = sealed.len();
    let trailer_len = u32::from_be_bytes(sealed[n - 4..].try_into().unwrap()) as usize;
    let body_len = n - 4 - trailer_len;
    assert_eq!(body_len, 12 + content.len() + 16);
    let t = &sealed[body_len..n - 4];
    assert_eq!(&t[..8], b"IOVKPABE");
    assert_eq!(t[8], 1);
    let ct_len = u32::from_be_bytes(t[9..13].try_into().unwrap()) as usize;
    let body: serde_json::Value = serde_json::from_slice(&t[13..13 + ct_len]).unwrap();
    assert_eq!(body["time"].as_array().unwrap().len(), 1);
    let mut rest = &t[13 + ct_len..];
    assert_eq!(&rest[..2], &[0, 2]);
    assert_eq!(&rest[2..8], &[0, 4, b'g', b'o', b'l', b'd']);
    assert_eq!(&rest[8..12], &[0, 2, b'h', b'd']);
    rest = &rest[12..];
    assert_eq!(rest, &[0, 1, 2, 0x07, 0xe6, 0, 8]);
    let ct = seal::inspect::<Symbolic>(&sealed).unwrap();
    assert_eq!(ct.periods.nodes(), &[Node(vec![2022, 8])]);
}

#[test]
fn any_body_byte_flip_fails_authentication() {
    let (f, sk, _, sealed) = sealed_fixture();
    let n = sealed.len();
    let body_len = n - 4 - u32::from_be_bytes(sealed[n - 4..].try_into().unwrap()) as usize;
    for i in 0..body_len {
        let mut bad = sealed.clone();
        bad[i] ^= 0x01;
        assert!(matches!(open(&f.b, &f.pk, &bad, &sk), Err(KpAbeError::Aead)), "byte {i}");
    }
}

#[test]
fn trailer_tampering_is_rejected() {
    let (f, sk, _, sealed) = sealed_fixture();
    let n = sealed.len();
    let body_len = n - 4 - u32::from_be_bytes(sealed[n - 4..].try_into().unwrap()) as usize;
    for i in body_len..n {
        let mut bad = sealed.clone();
        bad[i] ^= 0x01;
        assert!(open(&f.b, &f.pk, &bad, &sk).is_err(), "byte {i}");
    }
    assert!(matches!(open(&f.b, &f.pk, &sealed[..3], &sk), Err(KpAbeError::MalformedSealedFile(_))));
}

#[test]
fn expired_subscriber_is_denied_before_the_body_is_read() {
    let mut f = fixture(Variant::default(), 7);
    let policy = formula_to_lsss(&Formula::parse("gold").unwrap());
    let expired = periods(&f.pk.tree, "2022-07-01", "2022-09-02");
    let id = fresh_identity(&f.b, &mut f.rng);
    let sk = keygen(&f.b, &f.pk, &f.mk, &id, &expired, &policy, &mut f.rng).unwrap();
    let later = periods(&f.pk.tree, "2022-09-03", "2022-09-30");
    let mut sealed = seal(&f.b, &f.pk, b"episode 7", &later, &attrs(&["gold"]), &mut f.rng).unwrap();
    for byte in &mut sealed[..20] {
        *byte = 0;
    }
    assert!(matches!(open(&f.b, &f.pk, &sealed, &sk), Err(KpAbeError::Denied(Denied::TimeMismatch))));
}

#[test]
fn every_day_encodes_to_its_own_leaf() {
    let tree = TimeTree::new(2022, 1).unwrap();
    for d in days(date(2022, 1, 1), date(2022, 12, 31)) {
        let node = tree.encode_period(d).unwrap();
        assert_eq!(tree.span(&node), (d, d));
        assert_eq!(node.0, vec![2022, d.month() as u16, d.day() as u16]);
    }
}
