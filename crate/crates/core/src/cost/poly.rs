use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Serialize, Serializer};

/// A variable of a cost formula: a tensor dimension size or a mesh
/// dimension size.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Symbol {
    Dim(String),
    Mesh(String),
}

/// A product of symbols raised to integer powers.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(BTreeMap<Symbol, i32>);

impl Monomial {
    pub fn one() -> Self {
        Self::default()
    }

    pub fn symbol(s: Symbol) -> Self {
        Self(BTreeMap::from([(s, 1)]))
    }

    /// Builds `Π dims^e / Π mesh^e` from exponent lists.
    ///
    /// ```
    /// use meshtensor::cost::Monomial;
    /// let m = Monomial::new(&[("batch", 1), ("io", 1)], &[("rows", -1)]);
    /// assert_eq!(m.to_string(), "batch*io/|rows|");
    /// ```
    pub fn new(dims: &[(&str, i32)], mesh: &[(&str, i32)]) -> Self {
        let mut m = Self::one();
        for (d, e) in dims {
            m.raise(Symbol::Dim(d.to_string()), *e);
        }
        for (d, e) in mesh {
            m.raise(Symbol::Mesh(d.to_string()), *e);
        }
        m
    }

    fn raise(&mut self, s: Symbol, e: i32) {
        let slot = self.0.entry(s.clone()).or_insert(0);
        *slot += e;
        if *slot == 0 {
            self.0.remove(&s);
        }
    }

    pub fn exponents(&self) -> impl Iterator<Item = (&Symbol, i32)> {
        self.0.iter().map(|(s, e)| (s, *e))
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        let mut out = self.clone();
        for (s, e) in &other.0 {
            out.raise(s.clone(), *e);
        }
        out
    }

    pub fn div(&self, other: &Monomial) -> Monomial {
        let mut out = self.clone();
        for (s, e) in &other.0 {
            out.raise(s.clone(), -*e);
        }
        out
    }

    /// Sum of exponents over tensor-dimension symbols.
    pub fn dim_degree(&self) -> i32 {
        self.0.iter().filter(|(s, _)| matches!(s, Symbol::Dim(_))).map(|(_, e)| *e).sum()
    }

    /// True when `self` grows strictly faster than `other` in the tensor
    /// dimensions: the quotient has no negative dimension exponent and at
    /// least one positive one. Mesh sizes are treated as bounded.
    pub fn dominates(&self, other: &Monomial) -> bool {
        let q = self.div(other);
        let dims_nonneg = q.0.iter().all(|(s, e)| !matches!(s, Symbol::Dim(_)) || *e >= 0);
        dims_nonneg && q.dim_degree() >= 1
    }

    pub fn eval(&self, value: &impl Fn(&Symbol) -> f64) -> f64 {
        self.0.iter().map(|(s, e)| value(s).powi(*e)).product()
    }
}

impl Monomial {
    /// Renders `coef * self / divisor`, folding the factors into the
    /// numerator and denominator products.
    fn render(&self, coef: Option<String>, divisor: Option<String>) -> String {
        let name = |s: &Symbol| match s {
            Symbol::Dim(d) => d.clone(),
            Symbol::Mesh(m) => format!("|{m}|"),
        };
        let part = |positive: bool, lead: Option<String>| -> Vec<String> {
            lead.into_iter()
                .chain(self.0.iter().filter(|(_, e)| (**e > 0) == positive).map(|(s, e)| match e.abs() {
                    1 => name(s),
                    k => format!("{}^{k}", name(s)),
                }))
                .collect()
        };
        let (num, den) = (part(true, coef), part(false, divisor));
        let mut out = if num.is_empty() { "1".to_string() } else { num.join("*") };
        match den.len() {
            0 => {}
            1 => out += &format!("/{}", den[0]),
            _ => out += &format!("/({})", den.join("*")),
        }
        out
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(None, None))
    }
}

/// A Laurent polynomial over [`Symbol`]s with real coefficients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

const NEGLIGIBLE: f64 = 1e-12;

impl Poly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self::term(c, Monomial::one())
    }

    pub fn term(c: f64, m: Monomial) -> Self {
        let mut p = Self::zero();
        p.add_term(m, c);
        p
    }

    pub fn symbol(s: Symbol) -> Self {
        Self::term(1.0, Monomial::symbol(s))
    }

    fn add_term(&mut self, m: Monomial, c: f64) {
        let slot = self.terms.entry(m.clone()).or_insert(0.0);
        *slot += c;
        if slot.abs() < NEGLIGIBLE {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn monomials(&self) -> impl Iterator<Item = &Monomial> {
        self.terms.keys()
    }

    pub fn scale(&self, k: f64) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * k);
        }
        out
    }

    pub fn div_monomial(&self, d: &Monomial) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            out.add_term(m.div(d), *c);
        }
        out
    }

    pub fn eval(&self, value: impl Fn(&Symbol) -> f64) -> f64 {
        self.terms.iter().map(|(m, c)| c * m.eval(&value)).sum()
    }

    /// Terms not dominated by any other term.
    pub fn leading(&self) -> Poly {
        let mut out = Poly::zero();
        for (m, c) in &self.terms {
            if !self.terms.keys().any(|o| o != m && o.dominates(m)) {
                out.add_term(m.clone(), *c);
            }
        }
        out
    }

    /// Monomial-wise maximum of coefficients. For non-negative polynomials
    /// this bounds every input and is within a constant factor of their
    /// pointwise maximum, whichever input attains it.
    pub fn envelope<'a>(polys: impl IntoIterator<Item = &'a Poly>) -> Poly {
        let mut out = Poly::zero();
        for p in polys {
            for (m, c) in &p.terms {
                let slot = out.terms.entry(m.clone()).or_insert(*c);
                *slot = slot.max(*c);
            }
        }
        out
    }

    /// Everything [`Poly::leading`] drops.
    pub fn lower_order(&self) -> Poly {
        self.clone() - self.leading()
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        for (m, c) in rhs.terms {
            self.add_term(m, c);
        }
        self
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(self, rhs: Poly) -> Poly {
        self + rhs.scale(-1.0)
    }
}

impl Mul for &Poly {
    type Output = Poly;
    fn mul(self, rhs: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (a, x) in &self.terms {
            for (b, y) in &rhs.terms {
                out.add_term(a.mul(b), x * y);
            }
        }
        out
    }
}

impl std::iter::Sum for Poly {
    fn sum<I: Iterator<Item = Poly>>(iter: I) -> Poly {
        iter.fold(Poly::zero(), |a, b| a + b)
    }
}

fn fmt_coef(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{}", c as i64)
    } else {
        format!("{c}")
    }
}

impl fmt::Display for Poly {
    /// Highest dimension degree first.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut order: Vec<(&Monomial, f64)> = self.terms().collect();
        order.sort_by(|a, b| b.0.dim_degree().cmp(&a.0.dim_degree()).then_with(|| a.0.cmp(b.0)));
        for (i, (m, c)) in order.into_iter().enumerate() {
            let (sign, mag) = if c < 0.0 { ("-", -c) } else { ("+", c) };
            match (i, sign) {
                (0, "-") => write!(f, "-")?,
                (0, _) => {}
                _ => write!(f, " {sign} ")?,
            }
            let inverse = 1.0 / mag;
            let text = if mag == 1.0 {
                m.render(None, None)
            } else if mag < 1.0 && (inverse - inverse.round()).abs() < 1e-9 * inverse {
                m.render(None, Some(fmt_coef(inverse.round())))
            } else {
                m.render(Some(fmt_coef(mag)), None)
            };
            f.write_str(&text)?;
        }
        Ok(())
    }
}

impl Serialize for Poly {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}
