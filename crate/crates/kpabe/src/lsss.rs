//! Monotone boolean policies and their linear secret-sharing matrices.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::field::{Scalar, Zp};
use crate::KpAbeError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Formula {
    Attr(String),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    And,
    Or,
    Not,
    Open,
    Close,
}

fn tokenize(s: &str) -> Result<Vec<Token>, KpAbeError> {
    let mut out = Vec::new();
    let mut chars = s.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' | ')' | '&' | '|' | '!' => {
                chars.next();
                out.push(match c {
                    '(' => Token::Open,
                    ')' => Token::Close,
                    '&' => Token::And,
                    '|' => Token::Or,
                    _ => Token::Not,
                });
            }
            c if c.is_alphanumeric() || "_-.:".contains(c) => {
                let mut word = String::new();
                while let Some(&c) = chars.peek().filter(|c| c.is_alphanumeric() || "_-.:".contains(**c)) {
                    word.push(c);
                    chars.next();
                }
                out.push(match word.to_ascii_uppercase().as_str() {
                    "AND" => Token::And,
                    "OR" => Token::Or,
                    "NOT" => Token::Not,
                    _ => Token::Ident(word),
                });
            }
            other => return Err(KpAbeError::UnsupportedFormula(format!("unexpected character {other:?}"))),
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn expr(&mut self) -> Result<Formula, KpAbeError> {
        let mut f = self.term()?;
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            f = Formula::Or(Box::new(f), Box::new(self.term()?));
        }
        Ok(f)
    }

    fn term(&mut self) -> Result<Formula, KpAbeError> {
        let mut f = self.factor()?;
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            f = Formula::And(Box::new(f), Box::new(self.factor()?));
        }
        Ok(f)
    }

    fn factor(&mut self) -> Result<Formula, KpAbeError> {
        let tok = self.peek().cloned();
        self.pos += 1;
        match tok {
            Some(Token::Ident(a)) => Ok(Formula::Attr(a)),
            Some(Token::Open) => {
                let f = self.expr()?;
                if self.peek() != Some(&Token::Close) {
                    return Err(KpAbeError::UnsupportedFormula("missing ')'".into()));
                }
                self.pos += 1;
                Ok(f)
            }
            Some(Token::Not) => Err(KpAbeError::UnsupportedFormula("negation is not monotone".into())),
            Some(t) => Err(KpAbeError::UnsupportedFormula(format!("unexpected {t:?}"))),
            None => Err(KpAbeError::UnsupportedFormula("unexpected end of policy".into())),
        }
    }
}

impl Formula {
    /// `AND` binds tighter than `OR`; `&` and `|` are accepted too.
    pub fn parse(s: &str) -> Result<Formula, KpAbeError> {
        let mut p = Parser { tokens: tokenize(s)?, pos: 0 };
        let f = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(KpAbeError::UnsupportedFormula(format!("trailing input in {s:?}")));
        }
        Ok(f)
    }

    pub fn eval(&self, attrs: &BTreeSet<String>) -> bool {
        match self {
            Formula::Attr(a) => attrs.contains(a),
            Formula::And(l, r) => l.eval(attrs) && r.eval(attrs),
            Formula::Or(l, r) => l.eval(attrs) || r.eval(attrs),
        }
    }

    pub fn attributes(&self) -> BTreeSet<String> {
        match self {
            Formula::Attr(a) => BTreeSet::from([a.clone()]),
            Formula::And(l, r) | Formula::Or(l, r) => &l.attributes() | &r.attributes(),
        }
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Formula::Attr(a) => f.write_str(a),
            Formula::And(l, r) => write!(f, "({l} AND {r})"),
            Formula::Or(l, r) => write!(f, "({l} OR {r})"),
        }
    }
}

/// Share-generating matrix `M` (`l x n`, entries in {-1, 0, 1}) with row
/// labels `rho`; the shared secret is recovered against `(1, 0, ..., 0)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessStructure {
    pub matrix: Vec<Vec<i64>>,
    pub rho: Vec<String>,
}

impl AccessStructure {
    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.matrix.first().map_or(0, Vec::len)
    }

    pub fn is_well_formed(&self) -> bool {
        let n = self.cols();
        n > 0 && self.rho.len() == self.rows() && self.matrix.iter().all(|r| r.len() == n)
    }
}

fn label(f: &Formula, v: Vec<i64>, width: &mut usize, rows: &mut Vec<(Vec<i64>, String)>) {
    match f {
        Formula::Attr(a) => rows.push((v, a.clone())),
        Formula::Or(l, r) => {
            label(l, v.clone(), width, rows);
            label(r, v, width, rows);
        }
        Formula::And(l, r) => {
            let mut left = v;
            left.resize(*width, 0);
            left.push(1);
            let mut right = vec![0; *width];
            right.push(-1);
            *width += 1;
            label(l, left, width, rows);
            label(r, right, width, rows);
        }
    }
}

/// Lewko-Waters conversion: one row per leaf, one column per AND gate
/// plus one.
pub fn formula_to_lsss(f: &Formula) -> AccessStructure {
    let mut width = 1;
    let mut rows = Vec::new();
    label(f, vec![1], &mut width, &mut rows);
    let (matrix, rho) = rows
        .into_iter()
        .map(|(mut v, a)| {
            v.resize(width, 0);
            (v, a)
        })
        .unzip();
    AccessStructure { matrix, rho }
}

/// `lambda_i = v . M_i`.
pub fn shares(a: &AccessStructure, v: &[Scalar], zp: &Zp) -> Vec<Scalar> {
    a.matrix
        .iter()
        .map(|row| row.iter().zip(v).fold(zp.zero(), |acc, (&m, x)| zp.add(&acc, &zp.mul(&zp.from_i64(m), x))))
        .collect()
}

/// Coefficients `(row, omega_row)` over the rows labelled by `attrs` with
/// `sum omega_i M_i = (1, 0, ..., 0)`, or `None` if those rows do not span
/// the target.
pub fn lsss_satisfy(a: &AccessStructure, attrs: &BTreeSet<String>, zp: &Zp) -> Option<Vec<(usize, Scalar)>> {
    let rows: Vec<usize> = (0..a.rows()).filter(|&i| attrs.contains(&a.rho[i])).collect();
    let (n, m) = (a.cols(), rows.len());
    if m == 0 || n == 0 {
        return None;
    }
    // Column c of the system is sum_j omega_j M[rows[j]][c] = target[c].
    let mut aug: Vec<Vec<Scalar>> = (0..n)
        .map(|c| {
            let mut eq: Vec<Scalar> = rows.iter().map(|&r| zp.from_i64(a.matrix[r][c])).collect();
            eq.push(if c == 0 { zp.one() } else { zp.zero() });
            eq
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for col in 0..m {
        let Some(p) = (r..n).find(|&i| !aug[i][col].is_zero()) else { continue };
        aug.swap(r, p);
        let inv = zp.inv(&aug[r][col]).expect("nonzero pivot");
        for x in aug[r].iter_mut() {
            *x = zp.mul(x, &inv);
        }
        let pivot_row = aug[r].clone();
        for (i, eq) in aug.iter_mut().enumerate() {
            if i != r && !eq[col].is_zero() {
                let factor = eq[col].clone();
                for (x, p) in eq.iter_mut().zip(&pivot_row) {
                    *x = zp.sub(x, &zp.mul(&factor, p));
                }
            }
        }
        pivots.push(col);
        r += 1;
    }
    if aug[r..].iter().any(|eq| !eq[m].is_zero()) {
        return None;
    }
    let mut omega = vec![zp.zero(); m];
    for (i, &col) in pivots.iter().enumerate() {
        omega[col] = aug[i][m].clone();
    }
    Some(rows.into_iter().zip(omega).collect())
}
