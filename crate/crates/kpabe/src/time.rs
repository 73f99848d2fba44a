//! Calendar time tree (root, year, month, day), period encoding and the
//! minimal set-cover of a date range.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::KpAbeError;

/// Tree depth counting the root level; paths have at most `DEPTH - 1`
/// components.
pub const DEPTH: usize = 4;

/// Path from the root in calendar components: `[]` is the root,
/// `[2022]` a year, `[2022, 9]` a month, `[2022, 9, 22]` a day.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Node(pub Vec<u16>);

impl Node {
    pub fn root() -> Self {
        Node(Vec::new())
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Ancestor-or-self test.
    pub fn is_prefix_of(&self, other: &Node) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0[..] {
            [] => f.write_str("*"),
            [y] => write!(f, "{y:04}"),
            [y, m] => write!(f, "{y:04}-{m:02}"),
            [y, m, d, ..] => write!(f, "{y:04}-{m:02}-{d:02}"),
        }
    }
}

impl FromStr for Node {
    type Err = KpAbeError;

    /// Accepts `*`, `YYYY`, `YYYY-MM` and `YYYY-MM-DD`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "*" {
            return Ok(Node::root());
        }
        let parts = s
            .split('-')
            .map(|p| p.parse::<u16>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| KpAbeError::Range(format!("cannot parse period {s:?}")))?;
        if parts.len() >= DEPTH {
            return Err(KpAbeError::Range(format!("period {s:?} is deeper than a day")));
        }
        Ok(Node(parts))
    }
}

pub fn parse_date(s: &str) -> Result<NaiveDate, KpAbeError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|_| KpAbeError::Range(format!("cannot parse date {s:?}")))
}

/// Years `first_year .. first_year + years`; months have 12 children, days
/// follow the real calendar (at most 31).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeTree {
    pub first_year: u16,
    pub years: u16,
}

fn days_in_month(year: i32, month: u32) -> u32 {
    let next = if month == 12 { (year + 1, 1) } else { (year, month + 1) };
    let first_next = NaiveDate::from_ymd_opt(next.0, next.1, 1).expect("valid month start");
    first_next.pred_opt().expect("has predecessor").day()
}

impl TimeTree {
    pub fn new(first_year: u16, years: u16) -> Result<Self, KpAbeError> {
        if years == 0 || u32::from(first_year) + u32::from(years) > 10_000 || first_year == 0 {
            return Err(KpAbeError::Range(format!("invalid year span {first_year}+{years}")));
        }
        Ok(Self { first_year, years })
    }

    pub fn last_year(&self) -> u16 {
        self.first_year + self.years - 1
    }

    pub fn validate(&self, node: &Node) -> Result<(), KpAbeError> {
        let bad = || KpAbeError::Range(format!("period {node} is outside the time tree"));
        match node.0[..] {
            [] => Ok(()),
            [y, ..] if y < self.first_year || y > self.last_year() => Err(bad()),
            [_] => Ok(()),
            [_, m, ..] if !(1..=12).contains(&m) => Err(bad()),
            [_, _] => Ok(()),
            [y, m, d] if d >= 1 && u32::from(d) <= days_in_month(i32::from(y), u32::from(m)) => Ok(()),
            _ => Err(bad()),
        }
    }

    pub fn encode_period(&self, date: NaiveDate) -> Result<Node, KpAbeError> {
        let year = u16::try_from(date.year()).map_err(|_| KpAbeError::Range(format!("{date} is out of span")))?;
        let node = Node(vec![year, date.month() as u16, date.day() as u16]);
        self.validate(&node)?;
        Ok(node)
    }

    /// 1-based child index at each level; these are the exponents of
    /// `V_1 .. V_k`.
    pub fn scalar_path(&self, node: &Node) -> Vec<u64> {
        node.0
            .iter()
            .enumerate()
            .map(|(level, &c)| if level == 0 { u64::from(c - self.first_year) + 1 } else { u64::from(c) })
            .collect()
    }

    /// First and last day under `node`; the node must be valid.
    pub fn span(&self, node: &Node) -> (NaiveDate, NaiveDate) {
        let ymd = |y: u16, m: u16, d: u32| NaiveDate::from_ymd_opt(i32::from(y), u32::from(m), d).expect("valid node");
        match node.0[..] {
            [] => (ymd(self.first_year, 1, 1), ymd(self.last_year(), 12, 31)),
            [y] => (ymd(y, 1, 1), ymd(y, 12, 31)),
            [y, m] => (ymd(y, m, 1), ymd(y, m, days_in_month(i32::from(y), u32::from(m)))),
            [y, m, d, ..] => (ymd(y, m, u32::from(d)), ymd(y, m, u32::from(d))),
        }
    }

    pub fn children(&self, node: &Node) -> Vec<Node> {
        let extend = |c: u16| {
            let mut p = node.0.clone();
            p.push(c);
            Node(p)
        };
        match node.0[..] {
            [] => (self.first_year..=self.last_year()).map(extend).collect(),
            [_] => (1..=12).map(extend).collect(),
            [y, m] => (1..=days_in_month(i32::from(y), u32::from(m)) as u16).map(extend).collect(),
            _ => Vec::new(),
        }
    }

    /// The unique minimal antichain whose leaves are exactly `[start, end]`.
    pub fn set_cover(&self, start: NaiveDate, end: NaiveDate) -> Result<PeriodSet, KpAbeError> {
        self.encode_period(start)?;
        self.encode_period(end)?;
        if start > end {
            return Err(KpAbeError::Range(format!("inverted range {start} .. {end}")));
        }
        let mut out = Vec::new();
        let mut stack = vec![Node::root()];
        while let Some(node) = stack.pop() {
            let (lo, hi) = self.span(&node);
            if hi < start || lo > end {
                continue;
            }
            if start <= lo && hi <= end {
                out.push(node);
            } else {
                stack.extend(self.children(&node));
            }
        }
        Ok(PeriodSet::new(out).expect("disjoint subtrees form an antichain"))
    }
}

/// Sorted antichain of tree nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Node>", into = "Vec<Node>")]
pub struct PeriodSet(Vec<Node>);

impl PeriodSet {
    pub fn new(mut nodes: Vec<Node>) -> Result<Self, KpAbeError> {
        nodes.sort();
        nodes.dedup();
        for (i, a) in nodes.iter().enumerate() {
            if let Some(b) = nodes.iter().skip(i + 1).find(|b| a.is_prefix_of(b)) {
                return Err(KpAbeError::Range(format!("{a} is an ancestor of {b}")));
            }
        }
        if nodes.iter().any(|n| n.depth() >= DEPTH) {
            return Err(KpAbeError::Range("period deeper than a day".into()));
        }
        Ok(Self(nodes))
    }

    pub fn nodes(&self) -> &[Node] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The member equal to or above `node`.
    pub fn ancestor_of(&self, node: &Node) -> Option<&Node> {
        self.0.iter().find(|k| k.is_prefix_of(node))
    }
}

impl TryFrom<Vec<Node>> for PeriodSet {
    type Error = KpAbeError;

    fn try_from(v: Vec<Node>) -> Result<Self, Self::Error> {
        PeriodSet::new(v)
    }
}

impl From<PeriodSet> for Vec<Node> {
    fn from(p: PeriodSet) -> Self {
        p.0
    }
}

/// Every ciphertext node equals or descends from a key node.
pub fn covers(key: &PeriodSet, ct: &PeriodSet) -> bool {
    ct.nodes().iter().all(|n| key.ancestor_of(n).is_some())
}
