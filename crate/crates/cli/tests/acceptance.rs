//! Acceptance checks. Each test prints one `PASS` or `FAIL` line per
//! criterion to the uncaptured stdout and appends it to
//! `$CARGO_TARGET_TMPDIR/acceptance.txt`.
//!
//! Criteria 1 to 8 assert. The learning and trend criteria (9, 10) report
//! their verdict and numbers without panicking: their outcome depends on
//! training noise and on the simulated network, and a FAIL there is a
//! measured result to report rather than a broken build.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::time::Instant;

use chrono::NaiveDate;
use iov_bazaar_core::auction::{clear_mundane, clear_urgent, BuyerPool, Clearing, PoolEntry, SellerPool, UrgentMode, UrgentResult};
use iov_bazaar_core::gossip::{merge_tables, rounds_to_converge, GossipGraph, PriceTable, TableEntry, Timestamp};
use iov_bazaar_core::market::{Submarket, Trader, VehicleId};
use iov_bazaar_core::world::WorldConfig;
use iov_bazaar_kpabe::backend::Backend;
use iov_bazaar_kpabe::{
    decrypt, encrypt, formula_to_lsss, fresh_identity, keygen, setup, Algebra, Denied, Formula, Node, Symbolic,
    TimeTree, Variant,
};
use iov_bazaar_marl::nn::Mlp;
use iov_bazaar_marl::ppo::{ppo_loss, PolicyBatch, PpoConfig, ValueBatch};
use iov_bazaar_marl::{evaluate, run_baseline, Actor, Agents, MarketEnv, Mechanism, TrainConfig, Trainer};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(n: u32, title: &str, pass: bool, detail: &str) -> bool {
    let line = format!("criterion {n:>2} {} {title}: {detail}", if pass { "PASS" } else { "FAIL" });
    let _ = writeln!(std::io::stdout().lock(), "{line}");
    let path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance.txt");
    if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
        let _ = writeln!(f, "{line}");
    }
    pass
}

fn note(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "             {text}");
}

/// Nondecreasing sequences of length `0..=max_len` over `0..=max_value`.
fn multisets(max_len: usize, max_value: u8) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for seq in &frontier {
            let lo = seq.last().copied().unwrap_or(0);
            for v in lo..=max_value {
                let mut s: Vec<u8> = seq.clone();
                s.push(v);
                next.push(s);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

const SELLER_BASE: u32 = 100;

fn buyer_pool(values: &[f64]) -> BuyerPool {
    BuyerPool::new(values.iter().enumerate().map(|(i, &v)| PoolEntry::new(VehicleId(i as u32), v)))
}

fn seller_pool(values: &[f64]) -> SellerPool {
    SellerPool::new(values.iter().enumerate().map(|(i, &v)| PoolEntry::new(VehicleId(SELLER_BASE + i as u32), v)))
}

/// Textbook trade reduction on `(id, value)` lists: returns the clearing and
/// the `(buyer, seller, pay, receive)` trades.
fn mcafee_oracle(buyers: &[(u32, f64)], sellers: &[(u32, f64)]) -> (Clearing, Vec<(u32, u32, f64, f64)>) {
    let mut b = buyers.to_vec();
    let mut s = sellers.to_vec();
    b.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap().then(x.0.cmp(&y.0)));
    s.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap().then(x.0.cmp(&y.0)));
    let mut k = 0;
    while k < b.len() && k < s.len() && b[k].1 >= s[k].1 {
        k += 1;
    }
    if k == 0 {
        return (Clearing::NoTrade, vec![]);
    }
    if k < b.len() && k < s.len() {
        let p0 = (b[k].1 + s[k].1) / 2.0;
        if s[k - 1].1 <= p0 && p0 <= b[k - 1].1 {
            let trades = (0..k).map(|i| (b[i].0, s[i].0, p0, p0)).collect();
            return (Clearing::Uniform { k, price: p0 }, trades);
        }
    }
    let (pb, ps) = (b[k - 1].1, s[k - 1].1);
    let trades = (0..k - 1).map(|i| (b[i].0, s[i].0, pb, ps)).collect();
    (Clearing::TradeReduction { k, buyer_price: pb, seller_price: ps }, trades)
}

/// Pools are sorted by the mechanism, so instances are enumerated up to
/// relabelling: every pair of value multisets, ids assigned in order.
#[test]
fn mcafee_matches_a_straight_line_oracle() {
    let start = Instant::now();
    let sets = multisets(6, 9);
    let entries: Vec<Vec<f64>> = sets.iter().map(|s| s.iter().map(|&v| f64::from(v)).collect()).collect();
    let buyers: Vec<BuyerPool> = entries.iter().map(|v| buyer_pool(v)).collect();
    let sellers: Vec<SellerPool> = entries.iter().map(|v| seller_pool(v)).collect();
    let tagged_b: Vec<Vec<(u32, f64)>> =
        entries.iter().map(|v| v.iter().enumerate().map(|(i, &x)| (i as u32, x)).collect()).collect();
    let tagged_s: Vec<Vec<(u32, f64)>> =
        entries.iter().map(|v| v.iter().enumerate().map(|(i, &x)| (SELLER_BASE + i as u32, x)).collect()).collect();
    let mut instances = 0u64;
    let mut mismatches = 0u64;
    let mut first = None;
    for (bi, bp) in buyers.iter().enumerate() {
        for (si, sp) in sellers.iter().enumerate() {
            instances += 1;
            let got = clear_mundane(bp, sp);
            let (clearing, trades) = mcafee_oracle(&tagged_b[bi], &tagged_s[si]);
            let same = got.clearing == clearing
                && got.trades.len() == trades.len()
                && got.trades.iter().zip(&trades).all(|(t, &(b, s, pay, rec))| {
                    t.buyer == VehicleId(b) && t.seller == VehicleId(s) && t.buyer_payment == pay && t.seller_revenue == rec
                });
            if !same {
                mismatches += 1;
                first.get_or_insert((sets[bi].clone(), sets[si].clone()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && secs < 60.0;
    report(
        1,
        "McAfee oracle equivalence",
        pass,
        &format!("{instances} instances, {mismatches} mismatches (first {first:?}), {secs:.1} s"),
    );
    assert!(pass);
}

/// Half-integer grid: every McAfee price on integer reports is a multiple
/// of 0.5, so these reports reach every distinct outcome.
fn deviations() -> Vec<f64> {
    (0..=21).map(|i| f64::from(i) * 0.5).collect()
}

fn mundane_utility(buyers: &[f64], sellers: &[f64], agent: usize, truth: f64) -> f64 {
    let result = clear_mundane(&buyer_pool(buyers), &seller_pool(sellers));
    let nb = buyers.len();
    if agent < nb {
        let id = VehicleId(agent as u32);
        result.trades.iter().find(|t| t.buyer == id).map_or(0.0, |t| truth - t.buyer_payment)
    } else {
        let id = VehicleId(SELLER_BASE + (agent - nb) as u32);
        result.trades.iter().find(|t| t.seller == id).map_or(0.0, |t| t.seller_revenue - truth)
    }
}

#[test]
fn no_profitable_unilateral_misreport() {
    let start = Instant::now();
    let sets = multisets(4, 9);
    let devs = deviations();
    let mut checked = 0u64;
    let mut violations = Vec::new();
    for bs in &sets {
        let b: Vec<f64> = bs.iter().map(|&v| f64::from(v)).collect();
        for ss in &sets {
            let s: Vec<f64> = ss.iter().map(|&v| f64::from(v)).collect();
            for agent in 0..b.len() + s.len() {
                let truth = if agent < b.len() { b[agent] } else { s[agent - b.len()] };
                let honest = mundane_utility(&b, &s, agent, truth);
                for &d in &devs {
                    let (mut b2, mut s2) = (b.clone(), s.clone());
                    if agent < b.len() {
                        b2[agent] = d;
                    } else {
                        s2[agent - b.len()] = d;
                    }
                    checked += 1;
                    if mundane_utility(&b2, &s2, agent, truth) > honest + 1e-12 && violations.len() < 3 {
                        violations.push((bs.clone(), ss.clone(), agent, d));
                    }
                }
            }
        }
    }
    let mut urgent_checked = 0u64;
    let mut urgent_violations = 0u64;
    for ss in sets.iter().filter(|s| s.len() >= 2) {
        let pool = seller_pool(&ss.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
        let utility = |bid: f64, truth: f64| match clear_urgent(bid, &pool, UrgentMode::LowestAsk).unwrap() {
            UrgentResult::Trade(t) => truth - t.buyer_payment,
            UrgentResult::ReserveNotMet { .. } => 0.0,
        };
        for v in 0..=9 {
            let truth = f64::from(v);
            let honest = utility(truth, truth);
            for &d in &devs {
                urgent_checked += 1;
                if utility(d, truth) > honest + 1e-12 {
                    urgent_violations += 1;
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = violations.is_empty() && urgent_violations == 0 && secs < 60.0;
    report(
        2,
        "truthfulness",
        pass,
        &format!(
            "{checked} mundane deviations, {} profitable {violations:?}; {urgent_checked} lowest-ask urgent buyer deviations, {urgent_violations} profitable; {secs:.1} s",
            violations.len()
        ),
    );
    assert!(pass);
}

/// Urgent (action 0) or mundane (action 1) choices for one slot.
fn choose(env: &MarketEnv, buyers: &[VehicleId], mech: Mechanism, agents: &Agents, rng: &mut ChaCha8Rng) -> Vec<(VehicleId, usize)> {
    buyers
        .iter()
        .map(|&b| {
            let a = match mech {
                Mechanism::Random => rng.random_range(0..2),
                Mechanism::SecondPrice => 0,
                Mechanism::DoubleAuction => 1,
                Mechanism::Madrl => {
                    let obs = env.observe(b);
                    let obs = Array2::from_shape_vec((1, obs.len()), obs).unwrap();
                    let p = agents.action_probs(agents.owner(b), &obs).unwrap();
                    usize::from(rng.random::<f64>() >= p[[0, 0]])
                }
            };
            (b, a)
        })
        .collect()
}

#[test]
fn trades_are_individually_rational() {
    let cases = [
        (Mechanism::Madrl, UrgentMode::HighestAsk),
        (Mechanism::Random, UrgentMode::HighestAsk),
        (Mechanism::SecondPrice, UrgentMode::HighestAsk),
        (Mechanism::DoubleAuction, UrgentMode::HighestAsk),
        (Mechanism::Random, UrgentMode::LowestAsk),
        (Mechanism::SecondPrice, UrgentMode::LowestAsk),
    ];
    let mut all_ok = true;
    let mut details = Vec::new();
    for (mech, mode) in cases {
        let cfg = WorldConfig { urgent_mode: mode, ..WorldConfig::default() };
        let agents = Agents::init(&TrainConfig { world: cfg.clone(), ..TrainConfig::default() }, &mut ChaCha8Rng::seed_from_u64(1));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let (mut slots, mut trades, mut violations, mut untruthful) = (0, 0, 0, 0);
        for episode in 0..100 {
            let mut env = MarketEnv::new(cfg.clone(), 1000 + episode).unwrap();
            for _ in 0..100 {
                let buyers = env.begin().unwrap();
                let actions = choose(&env, &buyers, mech, &agents, &mut rng);
                let state = env.context().unwrap().state.clone();
                let report = env.step(&actions).unwrap();
                slots += 1;
                for v in &state.vehicles {
                    match &v.trader {
                        Trader::Buyer(b) if b.bid != b.valuation => untruthful += 1,
                        Trader::Seller(s) if s.ask != s.valuation => untruthful += 1,
                        _ => {}
                    }
                }
                for m in &report.outcome.matches {
                    trades += 1;
                    let buyer = state.buyer(m.buyer).unwrap().valuation - m.buyer_payment;
                    let seller = m.seller_revenue - state.seller(m.seller).unwrap().valuation;
                    if buyer < 0.0 || seller < 0.0 {
                        violations += 1;
                    }
                }
            }
        }
        let ok = violations == 0 && untruthful == 0 && slots == 10_000 && trades > 0;
        all_ok &= ok;
        details.push(format!("{mech}/{mode:?}: {slots} slots, {trades} trades, {violations} negative"));
    }
    report(3, "individual rationality", all_ok, &details.join("; "));
    assert!(all_ok);
}

#[test]
fn double_auction_budget_is_never_negative() {
    let cfg = WorldConfig::default();
    let (mut slots, mut negative, mut uniform, mut uniform_nonzero, mut reduced, mut surplus) = (0, 0, 0, 0, 0, 0);
    for episode in 0..100 {
        let mut env = MarketEnv::new(cfg.clone(), 5000 + episode).unwrap();
        for _ in 0..100 {
            let buyers = env.begin().unwrap();
            let actions: Vec<_> = buyers.iter().map(|&b| (b, 1)).collect();
            let state = env.context().unwrap().state.clone();
            assert!(state.buyers().all(|(_, b)| b.submarket == Submarket::Mundane));
            let out = env.step(&actions).unwrap().outcome;
            slots += 1;
            for (r, clearing) in out.clearings.iter().enumerate() {
                let budget = out.mundane_budgets[r];
                if budget < 0.0 || out.budgets[r] != budget {
                    negative += 1;
                }
                match clearing {
                    Some(Clearing::Uniform { .. }) => {
                        uniform += 1;
                        if budget != 0.0 {
                            uniform_nonzero += 1;
                        }
                    }
                    Some(Clearing::TradeReduction { .. }) => {
                        reduced += 1;
                        if budget > 0.0 {
                            surplus += 1;
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    let pass = negative == 0 && uniform_nonzero == 0 && uniform > 0;
    report(
        4,
        "double-auction budget",
        pass,
        &format!(
            "{slots} slots x 4 RSUs: {negative} negative, {uniform} uniform clearings ({uniform_nonzero} nonzero), {reduced} trade reductions ({surplus} with surplus)"
        ),
    );
    assert!(pass);
}

const ATTRS: [&str; 6] = ["gold", "silver", "hd", "sd", "kids", "news"];

fn random_formula(rng: &mut ChaCha8Rng, depth: u32) -> Formula {
    if depth == 0 || rng.random_bool(0.35) {
        return Formula::Attr(ATTRS[rng.random_range(0..ATTRS.len())].to_string());
    }
    let l = Box::new(random_formula(rng, depth - 1));
    let r = Box::new(random_formula(rng, depth - 1));
    if rng.random() {
        Formula::And(l, r)
    } else {
        Formula::Or(l, r)
    }
}

fn random_subset(rng: &mut ChaCha8Rng) -> BTreeSet<String> {
    ATTRS.iter().filter(|_| rng.random_bool(0.5)).map(|s| s.to_string()).collect()
}

fn random_day(rng: &mut ChaCha8Rng, lo: NaiveDate, hi: NaiveDate) -> NaiveDate {
    lo + chrono::Duration::days(rng.random_range(0..=(hi - lo).num_days()))
}

#[test]
fn kpabe_round_trips_and_denials() {
    let start = Instant::now();
    let b = Symbolic::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let names: Vec<String> = ATTRS.iter().map(|s| s.to_string()).collect();
    let first = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap();
    let last = NaiveDate::from_ymd_opt(2024, 12, 31).unwrap();
    let (mut ok, mut bad, mut denied, mut leaked) = (0, 0, 0, 0);
    let (mut time_draws, mut attr_draws) = (0, 0);
    for draw in 0..2000 {
        // Fresh alpha, beta and v_tau per draw; keygen draws ID and w,
        // encrypt draws x.
        let variant = Variant::default();
        let (pk, mk) = setup(&b, &names, TimeTree::new(2021, 4).unwrap(), variant, &mut rng).unwrap();
        let formula = random_formula(&mut rng, 3);
        let policy = formula_to_lsss(&formula);
        let (s, e) = {
            let x = random_day(&mut rng, first, last);
            let y = random_day(&mut rng, first, last);
            (x.min(y), x.max(y))
        };
        let key_periods = pk.tree.set_cover(s, e).unwrap();
        let sk = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &key_periods, &policy, &mut rng).unwrap();
        let mut key = [0u8; 32];
        rng.fill(&mut key);
        let m = b.encode(&key);
        if draw < 1000 {
            let mut attrs = random_subset(&mut rng);
            while !formula.eval(&attrs) {
                attrs.insert(ATTRS[rng.random_range(0..ATTRS.len())].to_string());
            }
            let cs = random_day(&mut rng, s, e);
            let ce = random_day(&mut rng, cs, e);
            let ct = encrypt(&b, &pk, &m, &pk.tree.set_cover(cs, ce).unwrap(), &attrs, &mut rng).unwrap();
            match decrypt(&b, &pk, &ct, &sk) {
                Ok(got) if got == m => ok += 1,
                _ => bad += 1,
            }
        } else {
            let time_attack = draw % 2 == 0 && (s > first || e < last);
            let (attrs, day) = if time_attack {
                time_draws += 1;
                let mut attrs = random_subset(&mut rng);
                while !formula.eval(&attrs) {
                    attrs.insert(ATTRS[rng.random_range(0..ATTRS.len())].to_string());
                }
                let day = if s > first && (e == last || rng.random()) {
                    random_day(&mut rng, first, s.pred_opt().unwrap())
                } else {
                    random_day(&mut rng, e.succ_opt().unwrap(), last)
                };
                (attrs, day)
            } else {
                attr_draws += 1;
                let mut attrs = random_subset(&mut rng);
                while formula.eval(&attrs) {
                    let victim = attrs.iter().next().cloned().unwrap();
                    attrs.remove(&victim);
                }
                (attrs, random_day(&mut rng, s, e))
            };
            let ct = encrypt(&b, &pk, &m, &pk.tree.set_cover(day, day).unwrap(), &attrs, &mut rng).unwrap();
            let expected = if time_attack { Denied::TimeMismatch } else { Denied::AttributeMismatch };
            match decrypt(&b, &pk, &ct, &sk) {
                Err(d) if d == expected => denied += 1,
                Ok(got) if got == m => leaked += 1,
                _ => {}
            }
        }
    }
    // The literal algebra, kept behind a flag.
    let mut literal_ok = 0;
    for _ in 0..20 {
        let variant = Variant { algebra: Algebra::Literal, ..Variant::default() };
        let (pk, mk) = setup(&b, &names, TimeTree::new(2021, 4).unwrap(), variant, &mut rng).unwrap();
        let policy = formula_to_lsss(&Formula::parse("gold AND hd").unwrap());
        let periods = pk.tree.set_cover(first, last).unwrap();
        let sk = keygen(&b, &pk, &mk, &fresh_identity(&b, &mut rng), &periods, &policy, &mut rng).unwrap();
        let m = b.encode(&[7; 32]);
        let day = pk.tree.set_cover(first, first).unwrap();
        let attrs: BTreeSet<String> = ["gold", "hd"].iter().map(|s| s.to_string()).collect();
        let ct = encrypt(&b, &pk, &m, &day, &attrs, &mut rng).unwrap();
        if decrypt(&b, &pk, &ct, &sk) == Ok(m) {
            literal_ok += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = ok == 1000 && bad == 0 && denied == 1000 && leaked == 0 && secs < 30.0;
    report(
        5,
        "KP-ABE round trip",
        pass,
        &format!(
            "corrected algebra: {ok}/1000 round trips, {denied}/1000 adversarial draws denied ({time_draws} time, {attr_draws} attribute), {leaked} leaked; literal algebra {literal_ok}/20 round trips; {secs:.1} s"
        ),
    );
    assert!(pass);
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Every node of `year` (year, months, days) with its span.
fn year_nodes(tree: &TimeTree, year: u16) -> Vec<(Node, NaiveDate, NaiveDate)> {
    let mut out = Vec::new();
    let mut stack = vec![Node(vec![year])];
    while let Some(n) = stack.pop() {
        let (lo, hi) = tree.span(&n);
        stack.extend(tree.children(&n));
        out.push((n, lo, hi));
    }
    out
}

#[test]
fn set_cover_is_the_minimal_antichain() {
    let start = Instant::now();
    let tree = TimeTree::new(2020, 10).unwrap();
    let nodes = year_nodes(&tree, 2023);
    let days: Vec<NaiveDate> = date(2023, 1, 1).iter_days().take_while(|d| *d <= date(2023, 12, 31)).collect();
    let (mut ranges, mut wrong_nodes, mut wrong_coverage) = (0, 0, 0);
    for (i, &s) in days.iter().enumerate() {
        for &e in &days[i..] {
            ranges += 1;
            let inside = |lo: NaiveDate, hi: NaiveDate| s <= lo && hi <= e;
            // A node is in the minimal antichain iff it fits and its parent does not.
            let expected: BTreeSet<Node> = nodes
                .iter()
                .filter(|(n, lo, hi)| {
                    inside(*lo, *hi) && {
                        let parent = Node(n.0[..n.0.len() - 1].to_vec());
                        parent.0.is_empty() || {
                            let (plo, phi) = tree.span(&parent);
                            !inside(plo, phi)
                        }
                    }
                })
                .map(|(n, _, _)| n.clone())
                .collect();
            let cover = tree.set_cover(s, e).unwrap();
            let got: BTreeSet<Node> = cover.nodes().iter().cloned().collect();
            if got != expected || got.len() != cover.len() {
                wrong_nodes += 1;
            }
            let days_covered: i64 = cover.nodes().iter().map(|n| {
                let (lo, hi) = tree.span(n);
                if inside(lo, hi) { (hi - lo).num_days() + 1 } else { i64::MIN / 4 }
            }).sum();
            if days_covered != (e - s).num_days() + 1 {
                wrong_coverage += 1;
            }
        }
    }
    let example = tree.set_cover(date(2022, 7, 1), date(2022, 9, 2)).unwrap();
    let names: Vec<String> = example.nodes().iter().map(ToString::to_string).collect();
    let example_ok = names == ["2022-07", "2022-08", "2022-09-01", "2022-09-02"];
    let secs = start.elapsed().as_secs_f64();
    let pass = wrong_nodes == 0 && wrong_coverage == 0 && example_ok && secs < 60.0;
    report(
        6,
        "time-tree set cover",
        pass,
        &format!(
            "{ranges} ranges over 2023, {wrong_nodes} node-set mismatches, {wrong_coverage} coverage mismatches; 2022-07-01..2022-09-02 -> {names:?}; {secs:.1} s"
        ),
    );
    assert!(pass);
}

fn random_table(rng: &mut ChaCha8Rng) -> PriceTable {
    let mut t = PriceTable::default();
    for _ in 0..rng.random_range(0..6) {
        // Small stamp and origin ranges force equal-stamp conflicts.
        let entry = TableEntry {
            value: f64::from(rng.random_range(0..4u8)),
            ts: Timestamp::new(rng.random_range(0..3), rng.random_range(0..2)),
            origin: rng.random_range(0..2),
        };
        t.write(format!("k{}", rng.random_range(0..4)), entry);
    }
    t
}

#[test]
fn gossip_converges_and_merge_is_a_join() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut converged = 0;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=50usize);
        let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, rng.random_range(0..i))).collect();
        for _ in 0..rng.random_range(0..n) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b {
                edges.push((a, b));
            }
        }
        let graph = GossipGraph::from_edges(n, edges);
        assert!(graph.is_connected());
        let mut tables: Vec<PriceTable> = (0..n)
            .map(|i| {
                let mut t = PriceTable::default();
                let entry = TableEntry { value: i as f64, ts: Timestamp::new(rng.random_range(0..5), 0), origin: i as u32 };
                t.write(format!("price/rsu/{}", i % 4), entry);
                t
            })
            .collect();
        let bound = (10.0 * n as f64 * (n as f64).ln()).floor() as usize;
        if let Some(rounds) = rounds_to_converge(&graph, &mut tables, bound, &mut rng) {
            converged += 1;
            worst = worst.max(rounds as f64 / bound as f64);
        }
    }
    let mut law_failures = 0;
    for _ in 0..10_000 {
        let (a, b, c) = (random_table(&mut rng), random_table(&mut rng), random_table(&mut rng));
        if merge_tables(&a, &b) != merge_tables(&b, &a)
            || merge_tables(&merge_tables(&a, &b), &c) != merge_tables(&a, &merge_tables(&b, &c))
            || merge_tables(&a, &a) != a
        {
            law_failures += 1;
        }
    }
    let pass = converged >= 99 && law_failures == 0;
    report(
        7,
        "gossip convergence and CRDT laws",
        pass,
        &format!(
            "{converged}/100 graphs converged within 10 n ln n rounds (slowest used {:.1}% of the bound); {law_failures}/10000 law violations",
            worst * 100.0
        ),
    );
    assert!(pass);
}

#[test]
fn ppo_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut policy = Mlp::zeros(&[1, 2]);
    policy.set_flat(&[0.4, -0.3, 0.1, 0.2]);
    let critic = Mlp::zeros(&[1, 1]);
    let obs = array![[0.5], [-1.2], [2.0], [0.9], [-0.3]];
    let logits = policy.forward(obs.view());
    let actions = vec![0, 1, 1, 0, 1];
    // Two ratios stay inside the clip range, three leave it.
    let shifts = [0.05, -0.4, 0.1, 0.5, -0.3];
    let old_logp = actions
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let row = logits.row(i);
            let lse = row.iter().map(|z| z.exp()).sum::<f64>().ln();
            row[a] - lse + shifts[i]
        })
        .collect();
    let pb = PolicyBatch { obs, actions, old_logp, advantages: vec![1.0, -0.7, 2.0, -1.5, 0.4] };
    let vb = ValueBatch { states: Array2::zeros((0, 1)), targets: vec![] };
    let cfg = PpoConfig::default();
    let (_, analytic, _) = ppo_loss(&policy, &critic, &pb, &vb, &cfg);
    let analytic = analytic.flatten();
    let base = policy.flatten();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut probe = policy.clone();
        let mut v = base.clone();
        v[i] += h;
        probe.set_flat(&v);
        let up = ppo_loss(&probe, &critic, &pb, &vb, &cfg).0.total;
        v[i] -= 2.0 * h;
        probe.set_flat(&v);
        let down = ppo_loss(&probe, &critic, &pb, &vb, &cfg).0.total;
        let numeric = (up - down) / (2.0 * h);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-8 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = base.len() == 4 && worst <= 1e-4 && secs < 10.0;
    report(
        8,
        "gradient check",
        pass,
        &format!("{} parameters, worst relative error {worst:.2e}, {secs:.3} s", base.len()),
    );
    assert!(pass);
}

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EVAL_EPISODES: u32 = 20;

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-seed greedy evaluation of the trained policy at V = 40 next to the
/// random baseline on the same evaluation worlds; then the baseline
/// orderings at V in {20, 40, 80}.
#[test]
fn learning_and_figure_trends() {
    let start = Instant::now();
    let mut cfg = TrainConfig::default();
    cfg.world.population.vehicles = 40;
    let slots = cfg.episode_slots;
    let epochs = 300;
    let curves_path = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("training_curves.csv");
    let mut curves = String::from("seed,epoch,reward,social_welfare,budget,latency_s,entropy\n");
    let (mut trained, mut random) = (Vec::new(), Vec::new());
    let (mut first_epoch, mut last_twenty) = (Vec::new(), Vec::new());
    for seed in SEEDS {
        let mut trainer = Trainer::new(cfg.clone(), seed).unwrap();
        let mut episode_rewards = Vec::new();
        for _ in 0..epochs {
            let m = trainer.train_epoch().unwrap();
            curves.push_str(&format!(
                "{seed},{},{},{},{},{},{}\n",
                m.epoch, m.reward, m.social_welfare, m.budget, m.latency, m.entropy
            ));
            if m.epoch == 0 {
                first_epoch.push(mean(m.episode_rewards.iter().copied()));
            }
            episode_rewards.extend(m.episode_rewards);
        }
        last_twenty.push(mean(episode_rewards[episode_rewards.len() - 20..].iter().copied()));
        let agents = trainer.agents();
        let t = evaluate(Actor::Learned { agents: &agents, greedy: true }, &cfg.world, EVAL_EPISODES, slots, seed).unwrap();
        let r = evaluate(Actor::Fixed(Mechanism::Random), &cfg.world, EVAL_EPISODES, slots, seed).unwrap();
        trained.push((mean(t.iter().map(|e| e.reward)), mean(t.iter().map(|e| e.latency))));
        random.push((mean(r.iter().map(|e| e.reward)), mean(r.iter().map(|e| e.latency))));
    }
    let _ = std::fs::write(&curves_path, curves);
    let (tr, tl) = (mean(trained.iter().map(|x| x.0)), mean(trained.iter().map(|x| x.1)));
    let (rr, rl) = (mean(random.iter().map(|x| x.0)), mean(random.iter().map(|x| x.1)));
    let minutes = start.elapsed().as_secs_f64() / 60.0;
    // Rewards are negative, so "1.05x better" means 5% closer to zero.
    let reward_target = rr + 0.05 * rr.abs();
    let latency_target = 0.90 * rl;
    let pass9 = tr >= reward_target && tl <= latency_target && minutes <= 30.0;
    report(
        9,
        "learning at desk scale",
        pass9,
        &format!(
            "V=40, {epochs} epochs, 5 seeds: trained reward {tr:.3} vs random {rr:.3} (target >= {reward_target:.3}, {:+.1}%), latency {tl:.3} vs {rl:.3} s (target <= {latency_target:.3}, {:+.1}%), {minutes:.1} min",
            100.0 * (tr - rr) / rr.abs(),
            100.0 * (tl - rl) / rl
        ),
    );
    let (f, l) = (mean(first_epoch.iter().copied()), mean(last_twenty.iter().copied()));
    note(&format!(
        "training improvement: last-20-episode mean reward {l:.3} vs epoch-0 mean {f:.3} ({:+.1}%); per-seed trained rewards {:?}; curves in {}",
        100.0 * (l - f) / f.abs(),
        trained.iter().map(|x| (x.0 * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        curves_path.display()
    ));

    let mut lines = Vec::new();
    let (mut sw_ok, mut lat_ok) = (true, true);
    let mut sp_budget = Vec::new();
    for v in [20u32, 40, 80] {
        let mut world = WorldConfig::default();
        world.population.vehicles = v;
        let stats = |m: Mechanism| {
            let runs: Vec<_> = SEEDS.iter().map(|&s| run_baseline(m, &world, EVAL_EPISODES, slots, s).unwrap()).collect();
            (mean(runs.iter().map(|r| r.social_welfare)), mean(runs.iter().map(|r| r.budget)), mean(runs.iter().map(|r| r.latency)))
        };
        let (rs, _, rlat) = stats(Mechanism::Random);
        let (ss, sb, slat) = stats(Mechanism::SecondPrice);
        let (ds, _, dlat) = stats(Mechanism::DoubleAuction);
        sw_ok &= ss > rs && ss > ds;
        let mut others = vec![rlat, slat];
        if v == 40 {
            others.push(tl);
        }
        lat_ok &= others.iter().all(|&o| dlat < o);
        sp_budget.push(sb.abs());
        lines.push(format!(
            "V={v}: SW sp {ss:.3} rnd {rs:.3} da {ds:.3}; |budget| sp {:.3}; latency da {dlat:.3} rnd {rlat:.3} sp {slat:.3}{}",
            sb.abs(),
            if v == 40 { format!(" madrl {tl:.3}") } else { String::new() }
        ));
    }
    let budget_ok = sp_budget.windows(2).all(|w| w[1] > w[0]);
    let pass10 = sw_ok && budget_ok && lat_ok;
    report(
        10,
        "trends over V",
        pass10,
        &format!(
            "second-price highest SW: {sw_ok}; second-price |budget| grows with V: {budget_ok}; double-auction lowest latency: {lat_ok}"
        ),
    );
    for l in lines {
        note(&l);
    }
}
