//! Spin-1/2 Pauli operators and the textual Pauli-sum format used in
//! experiment configs, e.g. `0.5 * X[last_A] X[first_B] + 0.5 * Y[last_A] Y[first_B]`.
//!
//! Site 0 is the leftmost tensor factor and `|0⟩` is the `σ^z = +1` state.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::operator::{kron, OperatorMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> OperatorMatrix {
        let (o, l, i) = (C64::new(0.0, 0.0), C64::new(1.0, 0.0), C64::new(0.0, 1.0));
        let m = match self {
            Pauli::I => [l, o, o, l],
            Pauli::X => [o, l, l, o],
            Pauli::Y => [o, -i, i, o],
            Pauli::Z => [l, o, o, -l],
        };
        OperatorMatrix::hermitian(DMatrix::from_row_slice(2, 2, &m)).expect("Pauli matrices are Hermitian")
    }

    fn from_symbol(s: &str) -> Option<Self> {
        match s {
            "I" => Some(Pauli::I),
            "X" => Some(Pauli::X),
            "Y" => Some(Pauli::Y),
            "Z" => Some(Pauli::Z),
            _ => None,
        }
    }
}

/// Product of single-site Paulis on an `n_sites` chain. Repeated sites are
/// multiplied in the order given.
pub fn site_operator(factors: &[(usize, Pauli)], n_sites: usize) -> Result<OperatorMatrix> {
    let mut locals = vec![Pauli::I.matrix(); n_sites];
    for &(site, p) in factors {
        if site >= n_sites {
            return Err(Error::Model(format!("site {site} out of range for a {n_sites}-site chain")));
        }
        locals[site] = &locals[site] * &p.matrix();
    }
    let mut iter = locals.into_iter();
    let first = iter.next().ok_or_else(|| Error::Model("chain needs at least one site".into()))?;
    let product = iter.try_fold(first, |acc, m| kron(&acc, &m))?;
    // products of Paulis on distinct sites stay Hermitian; same-site products may not
    if product.hermitian_residual() == 0.0 {
        OperatorMatrix::hermitian(product.into_entries())
    } else {
        Ok(product)
    }
}

/// `Σ_i σ^p_i` over all sites.
pub fn total(p: Pauli, n_sites: usize) -> Result<OperatorMatrix> {
    let mut acc = OperatorMatrix::zeros(1 << n_sites);
    for i in 0..n_sites {
        acc = &acc + &site_operator(&[(i, p)], n_sites)?;
    }
    Ok(acc)
}

/// How site labels in an expression resolve to chain positions.
#[derive(Clone, Copy, Debug)]
pub enum SiteLayout {
    /// One chain; labels are integers, `first`, `last`.
    Single { n_sites: usize },
    /// Two chains A then B; labels are `first_A`, `last_A`, `first_B`,
    /// `last_B`, `A<k>`, `B<k>`.
    Joint { n_a: usize, n_b: usize },
}

impl SiteLayout {
    fn n_sites(self) -> usize {
        match self {
            SiteLayout::Single { n_sites } => n_sites,
            SiteLayout::Joint { n_a, n_b } => n_a + n_b,
        }
    }

    fn resolve(self, label: &str) -> Result<usize> {
        let bad = || Error::Config(format!("unknown site label '{label}' for layout {self:?}"));
        let site = match self {
            SiteLayout::Single { n_sites } => match label {
                "first" => 0,
                "last" => n_sites - 1,
                _ => label.parse().map_err(|_| bad())?,
            },
            SiteLayout::Joint { n_a, n_b } => match label {
                "first_A" => 0,
                "last_A" => n_a - 1,
                "first_B" => n_a,
                "last_B" => n_a + n_b - 1,
                _ => {
                    let (side, k) = label.split_at(1);
                    let k: usize = k.parse().map_err(|_| bad())?;
                    match side {
                        "A" if k < n_a => k,
                        "B" if k < n_b => n_a + k,
                        _ => return Err(bad()),
                    }
                }
            },
        };
        if site >= self.n_sites() {
            return Err(bad());
        }
        Ok(site)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauliTerm {
    pub coefficient: f64,
    pub factors: Vec<(usize, Pauli)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PauliSum {
    pub n_sites: usize,
    pub terms: Vec<PauliTerm>,
}

impl PauliSum {
    pub fn to_operator(&self) -> Result<OperatorMatrix> {
        let dim = 1usize << self.n_sites;
        let mut acc = DMatrix::<C64>::zeros(dim, dim);
        for term in &self.terms {
            let op = site_operator(&term.factors, self.n_sites)?;
            acc += op.entries() * C64::new(term.coefficient, 0.0);
        }
        OperatorMatrix::hermitian(acc)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    Open,
    Close,
    Plus,
    Minus,
    Star,
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    let chars: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '[' => {
                out.push(Token::Open);
                i += 1
            }
            ']' => {
                out.push(Token::Close);
                i += 1
            }
            '+' => {
                out.push(Token::Plus);
                i += 1
            }
            '-' => {
                out.push(Token::Minus);
                i += 1
            }
            '*' => {
                out.push(Token::Star);
                i += 1
            }
            c if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < chars.len() {
                    let d = chars[i];
                    let exp_sign = (d == '+' || d == '-') && matches!(chars[i - 1], 'e' | 'E');
                    if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                        i += 1;
                    } else {
                        break;
                    }
                }
                let text: String = chars[start..i].iter().collect();
                let v = text.parse().map_err(|_| Error::Config(format!("bad number '{text}' in Pauli expression")))?;
                out.push(Token::Number(v));
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                out.push(Token::Ident(chars[start..i].iter().collect()));
            }
            other => return Err(Error::Config(format!("unexpected character '{other}' in Pauli expression"))),
        }
    }
    Ok(out)
}

/// Parses a real linear combination of Pauli strings.
pub fn parse_pauli_sum(src: &str, layout: SiteLayout) -> Result<PauliSum> {
    let tokens = tokenize(src)?;
    let mut pos = 0;
    let mut terms = Vec::new();
    let err = |msg: &str| Error::Config(format!("Pauli expression '{src}': {msg}"));

    while pos < tokens.len() || terms.is_empty() {
        let mut sign = 1.0;
        while let Some(Token::Plus | Token::Minus) = tokens.get(pos) {
            if tokens[pos] == Token::Minus {
                sign = -sign;
            }
            pos += 1;
        }
        let mut coefficient = None;
        if let Some(Token::Number(v)) = tokens.get(pos) {
            coefficient = Some(*v);
            pos += 1;
            if tokens.get(pos) == Some(&Token::Star) {
                pos += 1;
            }
        }
        let mut factors = Vec::new();
        while let Some(Token::Ident(name)) = tokens.get(pos) {
            let p = Pauli::from_symbol(name).ok_or_else(|| err(&format!("unknown operator '{name}'")))?;
            if tokens.get(pos + 1) != Some(&Token::Open) {
                return Err(err(&format!("expected '[' after {name}")));
            }
            let label = match (tokens.get(pos + 2), tokens.get(pos + 3)) {
                (Some(Token::Ident(s)), Some(Token::Close)) => s.clone(),
                (Some(Token::Number(v)), Some(Token::Close)) if v.fract() == 0.0 && *v >= 0.0 => {
                    format!("{}", *v as usize)
                }
                _ => return Err(err("expected a site label followed by ']'")),
            };
            factors.push((layout.resolve(&label)?, p));
            pos += 4;
        }
        if coefficient.is_none() && factors.is_empty() {
            return Err(err("empty term"));
        }
        terms.push(PauliTerm { coefficient: sign * coefficient.unwrap_or(1.0), factors });
        match tokens.get(pos) {
            None => break,
            Some(Token::Plus | Token::Minus) => {}
            Some(t) => return Err(err(&format!("unexpected token {t:?}"))),
        }
    }
    Ok(PauliSum { n_sites: layout.n_sites(), terms })
}
