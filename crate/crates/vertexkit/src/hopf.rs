//! The divided-power Hopf algebra `H = Q[T]`.
//!
//! Elements are finite rational combinations of the divided powers
//! `D(i) = T^i / i!`.  Structure maps:
//!
//! * multiplication      `D(i) * D(j) = C(i+j, i) D(i+j)`
//! * comultiplication    `Delta(D(i)) = sum_{p+q=i} D(p) (x) D(q)`
//! * counit              `eps(D(i)) = [i = 0]`
//! * antipode            `S(D(i)) = (-1)^i D(i)`

use std::collections::BTreeMap;
use std::fmt;

use num::{One, Zero};

use crate::util::{binom, fmt_rat, parse_rat, sign, Rat};

/// A finite rational combination of divided powers `D(i)`.
///
/// Canonical sparse form: no stored coefficient is zero.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct HopfElement {
    terms: BTreeMap<u32, Rat>,
}

impl HopfElement {
    pub fn zero() -> Self {
        HopfElement::default()
    }

    /// The basis element `D(i)`.
    pub fn d(i: u32) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(i, Rat::one());
        HopfElement { terms }
    }

    /// Build from `(index, coefficient)` pairs, dropping zeros.
    pub fn from_terms<I: IntoIterator<Item = (u32, Rat)>>(iter: I) -> Self {
        let mut e = HopfElement::zero();
        for (i, c) in iter {
            e.add_term(i, c);
        }
        e
    }

    pub fn add_term(&mut self, i: u32, c: Rat) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(i).or_insert_with(Rat::zero);
        *entry += c;
        if entry.is_zero() {
            self.terms.remove(&i);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (u32, &Rat)> {
        self.terms.iter().map(|(i, c)| (*i, c))
    }

    pub fn coeff(&self, i: u32) -> Rat {
        self.terms.get(&i).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn scale(&self, c: &Rat) -> Self {
        if c.is_zero() {
            return HopfElement::zero();
        }
        HopfElement {
            terms: self.terms.iter().map(|(i, v)| (*i, v * c)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (i, c) in other.terms() {
            out.add_term(i, c.clone());
        }
        out
    }
}

/// `mu(D(i) (x) D(j)) = C(i+j, i) D(i+j)`, extended bilinearly.
pub fn hopf_mul(a: &HopfElement, b: &HopfElement) -> HopfElement {
    let mut out = HopfElement::zero();
    for (i, ca) in a.terms() {
        for (j, cb) in b.terms() {
            let c = binom((i + j) as i64, i as i64) * ca * cb;
            out.add_term(i + j, c);
        }
    }
    out
}

/// A Sweedler summand `coeff * left (x) right`.
pub type SweedlerTerm = (HopfElement, HopfElement, Rat);

/// `Delta(D(i)) = sum_{p+q=i} D(p) (x) D(q)`, as an explicit term list
/// ordered by the left index.
pub fn hopf_comul(a: &HopfElement) -> Vec<SweedlerTerm> {
    let mut out = Vec::new();
    // Collect coefficients per (p, q) so linear combinations stay canonical.
    let mut acc: BTreeMap<(u32, u32), Rat> = BTreeMap::new();
    for (i, c) in a.terms() {
        for p in 0..=i {
            let q = i - p;
            let entry = acc.entry((p, q)).or_insert_with(Rat::zero);
            *entry += c;
        }
    }
    for ((p, q), c) in acc {
        if !c.is_zero() {
            out.push((HopfElement::d(p), HopfElement::d(q), c));
        }
    }
    out
}

/// `S(D(i)) = (-1)^i D(i)`, extended linearly.
pub fn hopf_antipode(a: &HopfElement) -> HopfElement {
    HopfElement::from_terms(a.terms().map(|(i, c)| (i, sign(i as i64) * c)))
}

/// `eps(a)` = coefficient of `D(0)`.
pub fn hopf_counit(a: &HopfElement) -> Rat {
    a.coeff(0)
}

impl fmt::Display for HopfElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (i, c) in self.terms.iter() {
            let mag = if c < &Rat::zero() { -c.clone() } else { c.clone() };
            if first {
                if c < &Rat::zero() {
                    write!(f, "-")?;
                }
                first = false;
            } else if c < &Rat::zero() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            if mag.is_one() {
                write!(f, "D({})", i)?;
            } else {
                write!(f, "{}*D({})", fmt_rat(&mag), i)?;
            }
        }
        Ok(())
    }
}

/// Parse the text form produced by `Display`, e.g. `3/2*D(2) + D(0)`.
pub fn parse_hopf(s: &str) -> Result<HopfElement, String> {
    let s = s.trim();
    if s == "0" {
        return Ok(HopfElement::zero());
    }
    let mut out = HopfElement::zero();
    // Tokenize on +/- while keeping signs attached to each term.
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut cur = String::new();
    let mut neg = s.starts_with('-');
    let body = s.strip_prefix('-').unwrap_or(s);
    for ch in body.chars() {
        match ch {
            '+' => {
                terms.push((neg, cur.trim().to_string()));
                cur = String::new();
                neg = false;
            }
            '-' => {
                terms.push((neg, cur.trim().to_string()));
                cur = String::new();
                neg = true;
            }
            _ => cur.push(ch),
        }
    }
    terms.push((neg, cur.trim().to_string()));
    for (neg, t) in terms {
        if t.is_empty() {
            return Err(format!("empty term in {s:?}"));
        }
        let (coeff, dpart) = match t.split_once('*') {
            Some((c, d)) => {
                let c = parse_rat(c).ok_or_else(|| format!("bad coefficient in {t:?}"))?;
                (c, d.trim())
            }
            None => (Rat::one(), t.as_str()),
        };
        let inner = dpart
            .strip_prefix("D(")
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| format!("expected D(i) in {t:?}"))?;
        let i: u32 = inner
            .trim()
            .parse()
            .map_err(|_| format!("bad divided-power index in {t:?}"))?;
        out.add_term(i, if neg { -coeff } else { coeff });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::{rat, ratio};

    #[test]
    fn multiplication_table() {
        assert_eq!(
            hopf_mul(&HopfElement::d(1), &HopfElement::d(1)),
            HopfElement::from_terms([(2, rat(2))])
        );
        for k in 0..8 {
            assert_eq!(hopf_mul(&HopfElement::d(0), &HopfElement::d(k)), HopfElement::d(k));
        }
        assert_eq!(
            hopf_mul(&HopfElement::d(2), &HopfElement::d(3)),
            HopfElement::from_terms([(5, rat(10))])
        );
    }

    #[test]
    fn comultiplication() {
        let d2 = hopf_comul(&HopfElement::d(2));
        let expect: Vec<(u32, u32)> = vec![(0, 2), (1, 1), (2, 0)];
        let got: Vec<(u32, u32)> = d2
            .iter()
            .map(|(l, r, c)| {
                assert_eq!(*c, rat(1));
                (
                    l.terms().next().unwrap().0,
                    r.terms().next().unwrap().0,
                )
            })
            .collect();
        assert_eq!(got, expect);

        let d0 = hopf_comul(&HopfElement::d(0));
        assert_eq!(d0.len(), 1);
    }

    /// Expand (Delta (x) 1) Delta and (1 (x) Delta) Delta on D(3) termwise.
    /// Both sides are triples (p, q, r) with p+q+r = 3; there are C(5,2) = 10.
    #[test]
    fn coassociativity_on_d3_term_count() {
        let mut left: BTreeMap<(u32, u32, u32), Rat> = BTreeMap::new();
        for (l, r, c) in hopf_comul(&HopfElement::d(3)) {
            for (l2, r2, c2) in hopf_comul(&l) {
                let p = l2.terms().next().unwrap().0;
                let q = r2.terms().next().unwrap().0;
                let rr = r.terms().next().unwrap().0;
                *left.entry((p, q, rr)).or_insert_with(Rat::zero) += &c * &c2;
            }
        }
        let mut right: BTreeMap<(u32, u32, u32), Rat> = BTreeMap::new();
        for (l, r, c) in hopf_comul(&HopfElement::d(3)) {
            for (l2, r2, c2) in hopf_comul(&r) {
                let p = l.terms().next().unwrap().0;
                let q = l2.terms().next().unwrap().0;
                let rr = r2.terms().next().unwrap().0;
                *right.entry((p, q, rr)).or_insert_with(Rat::zero) += &c * &c2;
            }
        }
        assert_eq!(left, right);
        assert_eq!(left.len(), 10);
    }

    #[test]
    fn antipode() {
        assert_eq!(hopf_antipode(&HopfElement::d(3)), HopfElement::d(3).scale(&rat(-1)));
        assert_eq!(hopf_antipode(&HopfElement::d(0)), HopfElement::d(0));
        // mu (S (x) 1) Delta (D(1)) = 0 = eps(D(1)) D(0)
        let mut acc = HopfElement::zero();
        for (l, r, c) in hopf_comul(&HopfElement::d(1)) {
            acc = acc.add(&hopf_mul(&hopf_antipode(&l), &r).scale(&c));
        }
        assert!(acc.is_zero());
    }

    #[test]
    fn counit() {
        assert_eq!(hopf_counit(&HopfElement::d(0)), rat(1));
        assert_eq!(hopf_counit(&HopfElement::d(5)), rat(0));
        let e = HopfElement::from_terms([(0, rat(3)), (1, rat(2))]);
        assert_eq!(hopf_counit(&e), rat(3));
    }

    #[test]
    fn text_round_trip() {
        let e = HopfElement::from_terms([(0, rat(1)), (2, ratio(3, 2)), (5, rat(-4))]);
        let s = format!("{e}");
        assert_eq!(s, "D(0) + 3/2*D(2) - 4*D(5)");
        assert_eq!(parse_hopf(&s).unwrap(), e);
        assert_eq!(parse_hopf("3/2*D(2) + D(0)").unwrap(), parse_hopf("D(0)+3/2*D(2)").unwrap());
    }
}
