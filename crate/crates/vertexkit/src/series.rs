//! Truncated multivariate series over a coefficient module, with formal
//! negative powers of variable differences.
//!
//! A `LocalizedSeries` is a finite sum of terms
//!
//! ```text
//!   coeff_vector * x1^e1 ... xn^en * (xi-xj)^k ...
//! ```
//!
//! where the difference exponents `k` are strictly negative (non-negative
//! powers of a difference are eagerly expanded) and every exponent lies
//! inside an explicit `TruncationWindow`.  Equality of two series is decided
//! by expanding every difference symbol into its iterated-Laurent form (the
//! first variable of each declared pair collects the negative powers) and
//! comparing coefficientwise inside the window; the expansion is a ring
//! embedding, so no information is lost beyond the window itself.
//!
//! The normal form additionally eliminates polynomial powers of the first
//! variable of a pair against a negative power of that pair, via
//! `x_i = (x_i - x_j) + x_j`.  This keeps simple products such as
//! `(x-y)^-1 * (x - y)` literally equal to `1`.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use num::{One, Signed, Zero};
use thiserror::Error;

use crate::hopf::HopfElement;
use crate::util::{binom, fmt_rat, parse_rat, sign, Rat};

/// Sparse coefficient vector over a module basis.
pub type Vect = BTreeMap<usize, Rat>;

pub fn vect_scale(v: &Vect, c: &Rat) -> Vect {
    if c.is_zero() {
        return Vect::new();
    }
    v.iter().map(|(i, x)| (*i, x * c)).collect()
}

pub fn vect_add_assign(a: &mut Vect, b: &Vect) {
    for (i, c) in b {
        let e = a.entry(*i).or_insert_with(Rat::zero);
        *e += c;
        if e.is_zero() {
            a.remove(i);
        }
    }
}

pub fn vect_single(i: usize) -> Vect {
    let mut v = Vect::new();
    v.insert(i, Rat::one());
    v
}

/// A coefficient module for series: an ordered basis with weights and the
/// matrix of the translation operator `T`.  Entries of `t_action` that
/// would leave the basis are dropped; the `cutoff` records the weight bound
/// that makes this truncation meaningful.  `t_lowers` marks modules (such as
/// truncated polynomial algebras with `T = d/dt`) where `T` lowers the
/// grading instead of raising it; series over such modules must carry a
/// homogeneity degree so that truncation stays explicit.
#[derive(Debug, PartialEq, Eq)]
pub struct GModule {
    pub name: String,
    pub basis: Vec<String>,
    pub weight: Vec<i64>,
    pub t_action: Vec<Vect>,
    pub t_lowers: bool,
    pub cutoff: Option<i64>,
    pub mult: Option<Vec<Vec<Vect>>>,
    pub vacuum: Option<usize>,
}

impl GModule {
    /// The scalar module: one basis vector `1` of weight zero, `T = 0`.
    pub fn scalar() -> Arc<GModule> {
        Arc::new(GModule {
            name: "Q".into(),
            basis: vec!["1".into()],
            weight: vec![0],
            t_action: vec![Vect::new()],
            t_lowers: false,
            cutoff: None,
            mult: Some(vec![vec![vect_single(0)]]),
            vacuum: Some(0),
        })
    }

    /// Truncated polynomial algebra `Q[t]` with `t^(cutoff+1) = 0` and
    /// `T = d/dt`.  Basis `1, t, t^2, ...`; weight = degree.
    pub fn poly(cutoff: i64) -> Arc<GModule> {
        let n = (cutoff + 1) as usize;
        let basis = (0..n)
            .map(|k| if k == 0 { "1".to_string() } else { format!("t{k}") })
            .collect();
        let weight = (0..n as i64).collect();
        let mut t_action = Vec::new();
        for k in 0..n {
            let mut v = Vect::new();
            if k >= 1 {
                v.insert(k - 1, Rat::from_integer(num::BigInt::from(k)));
            }
            t_action.push(v);
        }
        let mut mult = Vec::new();
        for i in 0..n {
            let mut row = Vec::new();
            for j in 0..n {
                let mut v = Vect::new();
                if i + j < n {
                    v.insert(i + j, Rat::one());
                }
                row.push(v);
            }
            mult.push(row);
        }
        Arc::new(GModule {
            name: format!("poly{cutoff}"),
            basis,
            weight,
            t_action,
            t_lowers: true,
            cutoff: Some(cutoff),
            mult: Some(mult),
            vacuum: Some(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.basis.len() == 1 && self.weight[0] == 0 && self.t_action[0].is_empty()
    }

    pub fn basis_index(&self, name: &str) -> Option<usize> {
        self.basis.iter().position(|b| b == name)
    }

    /// Apply `T` linearly.
    pub fn t_vect(&self, v: &Vect) -> Vect {
        let mut out = Vect::new();
        for (i, c) in v {
            vect_add_assign(&mut out, &vect_scale(&self.t_action[*i], c));
        }
        out
    }

    /// Apply the divided power `T^k / k!`.
    pub fn d_vect(&self, k: i64, v: &Vect) -> Vect {
        let mut out = v.clone();
        for step in 1..=k {
            out = self.t_vect(&out);
            let inv = Rat::one() / Rat::from_integer(num::BigInt::from(step));
            out = vect_scale(&out, &inv);
        }
        out
    }

    /// Multiply two vectors using the algebra structure, if present.
    pub fn mul_vect(&self, a: &Vect, b: &Vect) -> Result<Vect, SeriesError> {
        let table = self.mult.as_ref().ok_or(SeriesError::NonAlgebraCoefficients)?;
        let mut out = Vect::new();
        for (i, ca) in a {
            for (j, cb) in b {
                vect_add_assign(&mut out, &vect_scale(&table[*i][*j], &(ca * cb)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeriesError {
    #[error("incompatible truncation windows")]
    IncompatibleWindows,
    #[error("coefficient module is not an algebra")]
    NonAlgebraCoefficients,
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("unknown variable pair ({0}, {1})")]
    UnknownPair(String, String),
    #[error("window floor too shallow to expand a difference power")]
    FloorTooShallow,
    #[error("substitution cannot resolve a singular symbol into pair-plus-shift form")]
    UnsupportedSubstitution,
    #[error("series is singular at {0} = 0")]
    SingularAtZero(String),
    #[error("series is not invariant")]
    NotInvariant,
    #[error("parse error: {0}")]
    Parse(String),
}

/// The finite exponent region within which all series identities are
/// asserted: per-variable floors, per-pair difference floors, and a ceiling
/// on the total degree (variable exponents plus difference exponents).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncationWindow {
    pub vars: Vec<String>,
    pub ceiling: i64,
    pub floors: Vec<i64>,
    pub pairs: Vec<(usize, usize)>,
    pub diff_floors: Vec<i64>,
}

impl TruncationWindow {
    pub fn new(vars: Vec<String>, ceiling: i64) -> Self {
        let n = vars.len();
        TruncationWindow {
            vars,
            ceiling,
            floors: vec![0; n],
            pairs: Vec::new(),
            diff_floors: Vec::new(),
        }
    }

    pub fn with_floor(mut self, var: &str, floor: i64) -> Self {
        let i = self.var_index(var).expect("unknown variable");
        self.floors[i] = floor;
        self
    }

    pub fn with_all_floors(mut self, floor: i64) -> Self {
        for f in self.floors.iter_mut() {
            *f = floor;
        }
        self
    }

    /// Declare a difference pair; the pair is stored with the variable that
    /// comes first in declaration order first.
    pub fn with_pair(mut self, a: &str, b: &str, diff_floor: i64) -> Self {
        let i = self.var_index(a).expect("unknown variable");
        let j = self.var_index(b).expect("unknown variable");
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.push((i, j));
        self.diff_floors.push(diff_floor);
        self
    }

    pub fn var_index(&self, v: &str) -> Option<usize> {
        self.vars.iter().position(|x| x == v)
    }

    /// Index of the declared pair containing variables `i` and `j` (in
    /// either order), together with `+1` if `(i, j)` matches the stored
    /// orientation and `-1` if it is reversed.
    pub fn pair_index(&self, i: usize, j: usize) -> Option<(usize, i64)> {
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            if (a, b) == (i, j) {
                return Some((p, 1));
            }
            if (a, b) == (j, i) {
                return Some((p, -1));
            }
        }
        None
    }

    pub fn contains(&self, m: &Mono) -> bool {
        for (v, e) in m.vexp.iter().enumerate() {
            if *e < self.floors[v] {
                return false;
            }
        }
        for (p, k) in m.dexp.iter().enumerate() {
            if *k < self.diff_floors[p] || *k > 0 {
                return false;
            }
        }
        m.total() <= self.ceiling
    }

    /// Intersection; requires identical variable and pair declarations.
    pub fn intersect(&self, other: &TruncationWindow) -> Result<TruncationWindow, SeriesError> {
        if self.vars != other.vars || self.pairs != other.pairs {
            return Err(SeriesError::IncompatibleWindows);
        }
        Ok(TruncationWindow {
            vars: self.vars.clone(),
            ceiling: self.ceiling.min(other.ceiling),
            floors: self
                .floors
                .iter()
                .zip(&other.floors)
                .map(|(a, b)| *a.max(b))
                .collect(),
            pairs: self.pairs.clone(),
            diff_floors: self
                .diff_floors
                .iter()
                .zip(&other.diff_floors)
                .map(|(a, b)| *a.max(b))
                .collect(),
        })
    }

    /// Sum of all floors: a lower bound for the total degree of any
    /// representable monomial.
    pub fn structural_min(&self) -> i64 {
        self.floors.iter().sum::<i64>() + self.diff_floors.iter().sum::<i64>()
    }

    /// Header line, e.g.
    /// `window ceiling=3 floors={x:-2,y:0} diffs={(x,y):-4}`.
    pub fn header(&self) -> String {
        let floors: Vec<String> = self
            .vars
            .iter()
            .zip(&self.floors)
            .map(|(v, f)| format!("{v}:{f}"))
            .collect();
        let diffs: Vec<String> = self
            .pairs
            .iter()
            .zip(&self.diff_floors)
            .map(|(&(i, j), f)| format!("({},{}):{f}", self.vars[i], self.vars[j]))
            .collect();
        format!(
            "window ceiling={} floors={{{}}} diffs={{{}}}",
            self.ceiling,
            floors.join(","),
            diffs.join(",")
        )
    }
}

/// Exponent data of one term: variable exponents (aligned with the window's
/// variables) and difference exponents (aligned with the declared pairs,
/// always `<= 0`, with `0` meaning the symbol is absent).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Mono {
    pub vexp: Vec<i64>,
    pub dexp: Vec<i64>,
}

impl Mono {
    pub fn unit(window: &TruncationWindow) -> Self {
        Mono {
            vexp: vec![0; window.vars.len()],
            dexp: vec![0; window.pairs.len()],
        }
    }

    pub fn total(&self) -> i64 {
        self.vexp.iter().sum::<i64>() + self.dexp.iter().sum::<i64>()
    }

    pub fn is_symbol_free(&self) -> bool {
        self.dexp.iter().all(|k| *k == 0)
    }
}

/// A truncated multivariate series with formal difference singularities.
#[derive(Clone, Debug)]
pub struct LocalizedSeries {
    pub window: TruncationWindow,
    pub module: Arc<GModule>,
    pub terms: BTreeMap<Mono, Vect>,
    /// Joint homogeneity degree (module weight plus total variable degree)
    /// of the untruncated series, when known.  Required for `t_apply` over
    /// modules where `T` lowers the grading.
    pub homog: Option<i64>,
    /// Cells with total degree below this bound are unreliable (they were
    /// affected by module truncation) and are dropped; comparisons skip
    /// them.
    pub vis_floor: Option<i64>,
}

impl LocalizedSeries {
    pub fn zero(window: TruncationWindow, module: Arc<GModule>) -> Self {
        LocalizedSeries {
            window,
            module,
            terms: BTreeMap::new(),
            homog: None,
            vis_floor: None,
        }
    }

    /// Constant series with the given coefficient vector.
    pub fn constant(window: TruncationWindow, module: Arc<GModule>, v: Vect) -> Self {
        let mut s = LocalizedSeries::zero(window, module);
        let m = Mono::unit(&s.window);
        s.insert(m, v);
        s
    }

    pub fn scalar_one(window: TruncationWindow) -> Self {
        LocalizedSeries::constant(window, GModule::scalar(), vect_single(0))
    }

    fn visible(&self, m: &Mono) -> bool {
        match self.vis_floor {
            Some(v) => m.total() >= v,
            None => true,
        }
    }

    /// Insert a term, normalizing the monomial and dropping anything
    /// outside the window.
    pub fn insert(&mut self, m: Mono, v: Vect) {
        if v.is_empty() {
            return;
        }
        let mut parts = Vec::new();
        normalize_into(&self.window, m, Rat::one(), &mut parts);
        for (mono, c) in parts {
            if !self.window.contains(&mono) || !self.visible(&mono) {
                continue;
            }
            let scaled = vect_scale(&v, &c);
            let entry = self.terms.entry(mono.clone()).or_insert_with(Vect::new);
            vect_add_assign(entry, &scaled);
            if entry.is_empty() {
                self.terms.remove(&mono);
            }
        }
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Minimal total degree among stored terms.
    pub fn min_total(&self) -> Option<i64> {
        self.terms.keys().map(Mono::total).min()
    }

    pub fn scale(&self, c: &Rat) -> Self {
        let mut out = self.clone();
        if c.is_zero() {
            out.terms.clear();
            return out;
        }
        for v in out.terms.values_mut() {
            *v = vect_scale(v, c);
        }
        out
    }

    pub fn neg(&self) -> Self {
        self.scale(&-Rat::one())
    }
}

fn normalize_into(window: &TruncationWindow, m: Mono, c: Rat, out: &mut Vec<(Mono, Rat)>) {
    // Expand any non-negative stored difference power (these arise only
    // transiently, from substitution and reduction).
    if let Some(p) = m.dexp.iter().position(|k| *k > 0) {
        let (i, j) = window.pairs[p];
        let k = m.dexp[p];
        for t in 0..=k {
            let mut m2 = m.clone();
            m2.dexp[p] = 0;
            m2.vexp[i] += t;
            m2.vexp[j] += k - t;
            let coeff = binom(k, t) * sign(k - t) * &c;
            normalize_into(window, m2, coeff, out);
        }
        return;
    }
    // Eliminate a positive power of the first variable of a pair against a
    // negative power of that pair: x_i = (x_i - x_j) + x_j.
    for (p, &(i, j)) in window.pairs.iter().enumerate() {
        if m.dexp[p] < 0 && m.vexp[i] > 0 {
            // x_i^a = ((x_i - x_j) + x_j)^a, expanded binomially in one step.
            let a = m.vexp[i];
            for t in 0..=a {
                let mut m2 = m.clone();
                m2.vexp[i] = 0;
                m2.dexp[p] += t;
                m2.vexp[j] += a - t;
                normalize_into(window, m2, binom(a, t) * &c, out);
            }
            return;
        }
    }
    out.push((m, c));
}

fn combine_vis(a: &LocalizedSeries, b: &LocalizedSeries, la: i64, lb: i64) -> Option<i64> {
    let sa = a.window.structural_min();
    let sb = b.window.structural_min();
    match (a.vis_floor, b.vis_floor) {
        (None, None) => None,
        (va, vb) => {
            let mut v = i64::MIN;
            if let Some(va) = va {
                v = v.max(va + lb.min(sb));
            }
            if let Some(vb) = vb {
                v = v.max(vb + la.min(sa));
            }
            Some(v)
        }
    }
}

/// Sum; output window is the intersection.
pub fn series_add(a: &LocalizedSeries, b: &LocalizedSeries) -> Result<LocalizedSeries, SeriesError> {
    assert!(Arc::ptr_eq(&a.module, &b.module) || a.module == b.module);
    let window = a.window.intersect(&b.window)?;
    let mut out = LocalizedSeries::zero(window, a.module.clone());
    out.homog = match (a.homog, b.homog) {
        (Some(x), Some(y)) if x == y => Some(x),
        (Some(x), _) if b.is_structurally_zero() => Some(x),
        (_, Some(y)) if a.is_structurally_zero() => Some(y),
        _ => None,
    };
    out.vis_floor = match (a.vis_floor, b.vis_floor) {
        (None, None) => None,
        (va, vb) => Some(va.unwrap_or(i64::MIN).max(vb.unwrap_or(i64::MIN))),
    };
    for (m, v) in &a.terms {
        out.insert(m.clone(), v.clone());
    }
    for (m, v) in &b.terms {
        out.insert(m.clone(), v.clone());
    }
    Ok(out)
}

/// Product.  Requires identical variable/pair declarations.  The output
/// ceiling is `min(ceil_a + min_b, ceil_b + min_a)` where `min_x` is the
/// minimal total degree present in `x`: exactly the degrees whose
/// coefficients need no discarded data.
pub fn series_mul(a: &LocalizedSeries, b: &LocalizedSeries) -> Result<LocalizedSeries, SeriesError> {
    if a.window.vars != b.window.vars || a.window.pairs != b.window.pairs {
        return Err(SeriesError::IncompatibleWindows);
    }
    // Decide the coefficient arithmetic.
    enum Kind {
        ScalarScalar,
        ScalarLeft,
        ScalarRight,
        Algebra,
    }
    let kind = if a.module.is_scalar() && b.module.is_scalar() {
        Kind::ScalarScalar
    } else if a.module.is_scalar() {
        Kind::ScalarLeft
    } else if b.module.is_scalar() {
        Kind::ScalarRight
    } else if a.module == b.module && a.module.mult.is_some() {
        Kind::Algebra
    } else {
        return Err(SeriesError::NonAlgebraCoefficients);
    };
    let module = match kind {
        Kind::ScalarScalar | Kind::ScalarRight => a.module.clone(),
        Kind::ScalarLeft => b.module.clone(),
        Kind::Algebra => a.module.clone(),
    };
    let la = a.min_total();
    let lb = b.min_total();
    let base = a.window.intersect(&b.window)?;
    let ceiling = match (la, lb) {
        (Some(la), Some(lb)) => (a.window.ceiling + lb).min(b.window.ceiling + la),
        _ => base.ceiling,
    };
    let mut window = base;
    window.ceiling = ceiling;
    let mut out = LocalizedSeries::zero(window, module);
    out.homog = match (a.homog, b.homog) {
        (Some(x), Some(y)) => Some(x + y),
        _ => None,
    };
    out.vis_floor = combine_vis(a, b, la.unwrap_or(0), lb.unwrap_or(0));
    for (ma, va) in &a.terms {
        for (mb, vb) in &b.terms {
            let mono = Mono {
                vexp: ma.vexp.iter().zip(&mb.vexp).map(|(x, y)| x + y).collect(),
                dexp: ma.dexp.iter().zip(&mb.dexp).map(|(x, y)| x + y).collect(),
            };
            let v = match kind {
                Kind::ScalarScalar | Kind::ScalarLeft => {
                    let c = va.get(&0).cloned().unwrap_or_else(Rat::zero);
                    vect_scale(vb, &c)
                }
                Kind::ScalarRight => {
                    let c = vb.get(&0).cloned().unwrap_or_else(Rat::zero);
                    vect_scale(va, &c)
                }
                Kind::Algebra => out.module.mul_vect(va, vb)?,
            };
            out.insert(mono, v);
        }
    }
    Ok(out)
}

/// Formal partial derivative; the ceiling drops by one.
pub fn series_derive(a: &LocalizedSeries, v: &str) -> Result<LocalizedSeries, SeriesError> {
    let vi = a
        .window
        .var_index(v)
        .ok_or_else(|| SeriesError::UnknownVariable(v.to_string()))?;
    let mut window = a.window.clone();
    window.ceiling -= 1;
    // Differentiation shifts every cell down by one in `v`, so the region
    // where the result is exact extends one step deeper.
    window.floors[vi] -= 1;
    for (p, &(i, j)) in a.window.pairs.iter().enumerate() {
        if i == vi || j == vi {
            window.diff_floors[p] -= 1;
        }
    }
    let mut out = LocalizedSeries::zero(window, a.module.clone());
    out.homog = a.homog.map(|h| h - 1);
    out.vis_floor = a.vis_floor.map(|f| f - 1);
    for (m, coeff) in &a.terms {
        let e = m.vexp[vi];
        if e != 0 {
            let mut m2 = m.clone();
            m2.vexp[vi] -= 1;
            out.insert(m2, vect_scale(coeff, &crate::util::rat(e)));
        }
        for (p, &(i, j)) in a.window.pairs.iter().enumerate() {
            let k = m.dexp[p];
            if k == 0 || (i != vi && j != vi) {
                continue;
            }
            let s = if i == vi { 1 } else { -1 };
            let mut m2 = m.clone();
            m2.dexp[p] -= 1;
            out.insert(m2, vect_scale(coeff, &crate::util::rat(k * s)));
        }
    }
    Ok(out)
}

/// Divided derivative `(1/j!) * d^j/dv^j`.
pub fn divided_derive(a: &LocalizedSeries, v: &str, j: i64) -> Result<LocalizedSeries, SeriesError> {
    let mut out = a.clone();
    for step in 1..=j {
        out = series_derive(&out, v)?;
        out = out.scale(&(Rat::one() / Rat::from_integer(num::BigInt::from(step))));
    }
    Ok(out)
}

/// Apply the module's `T` to every coefficient.
pub fn t_apply(a: &LocalizedSeries) -> LocalizedSeries {
    let mut out = LocalizedSeries::zero(a.window.clone(), a.module.clone());
    let dir = if a.module.t_lowers { -1 } else { 1 };
    out.homog = a.homog.map(|h| h + dir);
    out.vis_floor = a.vis_floor;
    if a.module.t_lowers {
        // Cells whose true coefficient had components above the cutoff would
        // receive those components back under T; mask them out.  Without a
        // homogeneity degree no cell can be trusted.
        let mask = match (a.homog, a.module.cutoff) {
            (Some(h), Some(cutoff)) => h - cutoff,
            _ => a.window.ceiling + 1,
        };
        out.vis_floor = Some(a.vis_floor.unwrap_or(i64::MIN).max(mask));
    }
    for (m, v) in &a.terms {
        out.insert(m.clone(), a.module.t_vect(v));
    }
    out
}

/// Apply the divided power `T^k / k!` to every coefficient.
pub fn d_apply(a: &LocalizedSeries, k: i64) -> LocalizedSeries {
    let mut out = a.clone();
    for step in 1..=k {
        out = t_apply(&out);
        out = out.scale(&(Rat::one() / Rat::from_integer(num::BigInt::from(step))));
    }
    out
}

/// All compositions of `i` into `n` non-negative parts.
fn compositions(i: i64, n: usize) -> Vec<Vec<i64>> {
    if n == 0 {
        return if i == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in 0..=i {
        for mut rest in compositions(i - first, n - 1) {
            let mut v = vec![first];
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}

/// The action of a divided power on a series:
///
/// `D(i) . b = sum_{j0+...+jn=i} (-1)^(j1+...+jn) D(j0)_B D(j1)_{x1} ... b`
///
/// with `D_B` the module translation and `D(j)_x` the divided derivative.
pub fn hopf_act(h: &HopfElement, a: &LocalizedSeries) -> Result<LocalizedSeries, SeriesError> {
    let n = a.window.vars.len();
    let mut window = a.window.clone();
    let max_i = h.terms().map(|(i, _)| i as i64).max().unwrap_or(0);
    window.ceiling -= max_i;
    let mut acc = LocalizedSeries::zero(window, a.module.clone());
    let mut first = true;
    for (i, c) in h.terms() {
        let i = i as i64;
        for comp in compositions(i, n + 1) {
            let j0 = comp[0];
            let mut s = a.clone();
            for (k, jk) in comp[1..].iter().enumerate() {
                if *jk > 0 {
                    s = divided_derive(&s, &a.window.vars[k].clone(), *jk)?;
                }
            }
            s = d_apply(&s, j0);
            let sgn = sign(i - j0) * c;
            s = s.scale(&sgn);
            // Unify ceilings before summing.
            s.window.ceiling = s.window.ceiling.min(acc.window.ceiling);
            if first {
                let mut z = LocalizedSeries::zero(s.window.clone(), a.module.clone());
                z.homog = s.homog;
                z.vis_floor = s.vis_floor;
                acc = series_add(&z, &s)?;
                first = false;
            } else {
                acc = series_add(&acc, &s)?;
            }
        }
    }
    Ok(acc)
}

/// True iff `D(i) . a` vanishes within the (shrunk) window for all
/// `1 <= i <= max(1, ceiling)`.
///
/// Over a grading-lowering module the translation mask needs a homogeneity
/// degree; an inhomogeneous series is split into its joint-degree layers
/// first (the action preserves layers, lowering the degree by `i`).
pub fn is_invariant(a: &LocalizedSeries) -> bool {
    if a.module.t_lowers && a.homog.is_none() {
        return homogeneous_layers(a).iter().all(is_invariant);
    }
    let top = a.window.ceiling.max(1);
    for i in 1..=top {
        let acted = match hopf_act(&HopfElement::d(i as u32), a) {
            Ok(s) => s,
            Err(_) => return false,
        };
        if !is_zero_within(&acted) {
            return false;
        }
    }
    true
}

/// Reconstruction mode for two-variable invariant series.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconstructMode {
    /// `b_{i,j} = sum_{p+q=j} (-1)^p C(i+p, i) D(q) b_{i+p, 0}`
    Di0,
    /// `b_{i,j} = sum_{p+q=i} (-1)^q C(j+q, j) D(p) b_{0, j+q}`
    D0i,
}

/// Rebuild every coefficient of an invariant two-variable series from one
/// of its boundary slices; the result equals the input within the window.
pub fn reconstruct_invariant(
    a: &LocalizedSeries,
    mode: ReconstructMode,
) -> Result<LocalizedSeries, SeriesError> {
    if a.window.vars.len() != 2
        || !a.terms.keys().all(|m| m.is_symbol_free() && m.vexp.iter().all(|e| *e >= 0))
    {
        return Err(SeriesError::NotInvariant);
    }
    if !is_invariant(a) {
        return Err(SeriesError::NotInvariant);
    }
    let cell = |i: i64, j: i64| -> Vect {
        let m = Mono {
            vexp: vec![i, j],
            dexp: vec![0; a.window.pairs.len()],
        };
        a.terms.get(&m).cloned().unwrap_or_default()
    };
    let mut out = LocalizedSeries::zero(a.window.clone(), a.module.clone());
    out.homog = a.homog;
    out.vis_floor = a.vis_floor;
    for i in 0..=a.window.ceiling {
        for j in 0..=(a.window.ceiling - i) {
            let mut v = Vect::new();
            match mode {
                ReconstructMode::Di0 => {
                    for p in 0..=j {
                        let q = j - p;
                        let c = sign(p) * binom(i + p, i);
                        let b = a.module.d_vect(q, &cell(i + p, 0));
                        vect_add_assign(&mut v, &vect_scale(&b, &c));
                    }
                }
                ReconstructMode::D0i => {
                    for q in 0..=i {
                        let p = i - q;
                        let c = sign(q) * binom(j + q, j);
                        let b = a.module.d_vect(p, &cell(0, j + q));
                        vect_add_assign(&mut v, &vect_scale(&b, &c));
                    }
                }
            }
            out.insert(
                Mono {
                    vexp: vec![i, j],
                    dexp: vec![0; a.window.pairs.len()],
                },
                v,
            );
        }
    }
    Ok(out)
}

/// `(x_a - x_b)^k` as a scalar series: expanded binomially for `k >= 0`,
/// a formal symbol for `k < 0`.
pub fn localize(
    window: &TruncationWindow,
    k: i64,
    pair: (&str, &str),
) -> Result<LocalizedSeries, SeriesError> {
    let i = window
        .var_index(pair.0)
        .ok_or_else(|| SeriesError::UnknownVariable(pair.0.to_string()))?;
    let j = window
        .var_index(pair.1)
        .ok_or_else(|| SeriesError::UnknownVariable(pair.1.to_string()))?;
    let mut out = LocalizedSeries::zero(window.clone(), GModule::scalar());
    if k >= 0 {
        for t in 0..=k {
            let mut m = Mono::unit(window);
            m.vexp[i] += t;
            m.vexp[j] += k - t;
            let c = binom(k, t) * sign(k - t);
            out.insert(m, vect_scale(&vect_single(0), &c));
        }
    } else {
        let (p, orient) = window
            .pair_index(i, j)
            .ok_or_else(|| SeriesError::UnknownPair(pair.0.to_string(), pair.1.to_string()))?;
        let mut m = Mono::unit(window);
        m.dexp[p] = k;
        let c = if orient == 1 { Rat::one() } else { sign(k) };
        out.insert(m, vect_scale(&vect_single(0), &c));
    }
    Ok(out)
}

/// Replace every negative power of the pair by its iterated-Laurent
/// expansion, with ascending powers of `subordinate`.  With pair `(x, y)`
/// and subordinate `y` this is the `i_{x,y}` expansion
/// `(x-y)^(-j-1) -> sum_n C(n+j, j) x^(-n-j-1) y^n`; with subordinate `x`
/// it is `i_{y,x}`, which carries the sign `(-1)^(j+1)`.
pub fn expand_diff(
    a: &LocalizedSeries,
    pair: (&str, &str),
    subordinate: &str,
) -> Result<LocalizedSeries, SeriesError> {
    expand_diff_impl(a, pair, subordinate, true)
}

/// Like [`expand_diff`], but silently drops expansion terms whose deep-variable
/// exponent falls below the window floor instead of failing.  Sound whenever
/// the dropped cells lie outside the window the caller will read from.
pub fn expand_diff_lenient(
    a: &LocalizedSeries,
    pair: (&str, &str),
    subordinate: &str,
) -> Result<LocalizedSeries, SeriesError> {
    expand_diff_impl(a, pair, subordinate, false)
}

fn expand_diff_impl(
    a: &LocalizedSeries,
    pair: (&str, &str),
    subordinate: &str,
    strict: bool,
) -> Result<LocalizedSeries, SeriesError> {
    let i = a
        .window
        .var_index(pair.0)
        .ok_or_else(|| SeriesError::UnknownVariable(pair.0.to_string()))?;
    let j = a
        .window
        .var_index(pair.1)
        .ok_or_else(|| SeriesError::UnknownVariable(pair.1.to_string()))?;
    let (p, orient) = a
        .window
        .pair_index(i, j)
        .ok_or_else(|| SeriesError::UnknownPair(pair.0.to_string(), pair.1.to_string()))?;
    // Work with the stored orientation (first declared variable first).
    let (vi, vj) = a.window.pairs[p];
    let sub = a
        .window
        .var_index(subordinate)
        .ok_or_else(|| SeriesError::UnknownVariable(subordinate.to_string()))?;
    if sub != vi && sub != vj {
        return Err(SeriesError::UnknownVariable(subordinate.to_string()));
    }
    let _ = orient;
    let mut out = LocalizedSeries::zero(a.window.clone(), a.module.clone());
    out.homog = a.homog;
    out.vis_floor = a.vis_floor;
    for (m, v) in &a.terms {
        let k = m.dexp[p];
        if k == 0 {
            out.insert(m.clone(), v.clone());
            continue;
        }
        let jj = -k - 1; // k = -(jj+1)
        let (deep, shallow, sgn) = if sub == vj {
            (vi, vj, Rat::one())
        } else {
            (vj, vi, sign(jj + 1))
        };
        if strict && a.window.floors[deep] > m.vexp[deep] + k {
            // Even the leading expansion term falls outside the window.
            return Err(SeriesError::FloorTooShallow);
        }
        let mut n = 0i64;
        loop {
            let deep_exp = m.vexp[deep] - n - jj - 1;
            if deep_exp < a.window.floors[deep] {
                break;
            }
            let mut m2 = m.clone();
            m2.dexp[p] = 0;
            m2.vexp[deep] = deep_exp;
            m2.vexp[shallow] += n;
            let c = binom(n + jj, jj) * &sgn;
            out.insert(m2, vect_scale(v, &c));
            n += 1;
        }
    }
    Ok(out)
}

/// Coefficientwise equality of the canonical forms inside the intersection
/// window; cells below either visibility floor are skipped.  The canonical
/// form (negative difference powers symbolic, polynomial powers of the
/// first pair variable eliminated) is maintained by every operation, so
/// stored tuples compare directly.
pub fn eq_within(a: &LocalizedSeries, b: &LocalizedSeries) -> bool {
    diff_cells(a, b).is_empty()
}

/// The maximal pole depth of each declared pair in the stored presentation.
pub(crate) fn pole_depths(a: &LocalizedSeries) -> Vec<i64> {
    let mut out = vec![0i64; a.window.pairs.len()];
    for m in a.terms.keys() {
        for (q, d) in m.dexp.iter().enumerate() {
            out[q] = out[q].max(-d);
        }
    }
    out
}

/// Expand every difference symbol of `a` into its region-consistent power
/// series inside the working window `work`, whose floors must be deep
/// enough to hold every cell that can contribute to the region of
/// interest.  Pairs are processed with the deep index ascending, so a
/// variable's shallow roles are exhausted before its deep ones.  Positive
/// symbol powers reintroduced by intermediate canonicalisation are
/// multiplied out exactly, so the returned cells carry no symbols.
pub(crate) fn laurent_cells(a: &LocalizedSeries, work: &TruncationWindow) -> BTreeMap<Mono, Vect> {
    let mut cur = LocalizedSeries::zero(work.clone(), a.module.clone());
    cur.homog = a.homog;
    cur.vis_floor = a.vis_floor;
    for (m, v) in &a.terms {
        cur.insert(m.clone(), v.clone());
    }
    let mut order: Vec<usize> = (0..work.pairs.len()).collect();
    order.sort_by_key(|&p| work.pairs[p]);
    for p in order {
        if cur.terms.keys().all(|m| m.dexp[p] == 0) {
            continue;
        }
        let (i, j) = cur.window.pairs[p];
        let ni = cur.window.vars[i].clone();
        let nj = cur.window.vars[j].clone();
        if let Ok(e) = expand_diff_lenient(&cur, (&ni, &nj), &nj) {
            cur = e;
        }
    }
    let mut out: BTreeMap<Mono, Vect> = BTreeMap::new();
    let mut stack: Vec<(Mono, Vect)> = cur.terms.into_iter().collect();
    while let Some((m, v)) = stack.pop() {
        match (0..m.dexp.len()).find(|&q| m.dexp[q] > 0) {
            None => vect_add_assign(out.entry(m).or_default(), &v),
            Some(q) => {
                let k = m.dexp[q];
                let (i, j) = work.pairs[q];
                for t in 0..=k {
                    let sign = if t % 2 == 0 { Rat::one() } else { -Rat::one() };
                    let c = binom(k, t) * sign;
                    let mut m2 = m.clone();
                    m2.dexp[q] = 0;
                    m2.vexp[i] += k - t;
                    m2.vexp[j] += t;
                    stack.push((m2, vect_scale(&v, &c)));
                }
            }
        }
    }
    out.retain(|_, v| !v.is_empty());
    out
}

/// The cells where the two series differ within the intersection window.
/// Stored tuples are compared directly first; symbol presentations of the
/// same function are not unique once several pairs interact, so on a
/// syntactic mismatch both sides are expanded to plain Laurent cells in the
/// shared window and compared again.
pub fn diff_cells(a: &LocalizedSeries, b: &LocalizedSeries) -> Vec<Mono> {
    let window = match a.window.intersect(&b.window) {
        Ok(w) => w,
        Err(_) => return vec![Mono { vexp: vec![], dexp: vec![] }],
    };
    let vis = match (a.vis_floor, b.vis_floor) {
        (None, None) => i64::MIN,
        (x, y) => x.unwrap_or(i64::MIN).max(y.unwrap_or(i64::MIN)),
    };
    let collect = |a: &LocalizedSeries, b: &LocalizedSeries| -> Vec<Mono> {
        let mut bad = Vec::new();
        let empty = Vect::new();
        let mut keys: Vec<&Mono> = a.terms.keys().collect();
        keys.extend(b.terms.keys());
        keys.sort();
        keys.dedup();
        for m in keys {
            if !window.contains(m) || m.total() < vis {
                continue;
            }
            let va = a.terms.get(m).unwrap_or(&empty);
            let vb = b.terms.get(m).unwrap_or(&empty);
            if va != vb {
                bad.push(m.clone());
            }
        }
        bad
    };
    let bad = collect(a, b);
    if bad.is_empty() {
        return bad;
    }
    // Presentation mismatch: compare the underlying functions on their
    // Laurent cells.  The comparison box extends below the declared floor
    // of each variable by the pole depth the expansion can push it to, so
    // singular content is visible; it must not go deeper, because cells
    // beyond a pair's declared pole-order bound also receive contributions
    // from content that bound already discarded.  The working floors extend
    // much further so every contribution to a compared cell survives the
    // staged expansion.
    let da = pole_depths(a);
    let db = pole_depths(b);
    let depth: i64 = da.iter().zip(&db).map(|(x, y)| (*x).max(*y)).sum();
    let floor_sum: i64 = window.floors.iter().sum();
    let spread = (window.ceiling - floor_sum).max(0) + depth + 4;
    let mut cmp = window.clone();
    for (v, f) in cmp.floors.iter_mut().enumerate() {
        for (p, &(i, _)) in window.pairs.iter().enumerate() {
            if i == v {
                *f -= da[p].max(db[p]).min(-window.diff_floors[p]);
            }
        }
    }
    let mut work = cmp.clone();
    for f in &mut work.floors {
        *f -= depth + spread;
    }
    for f in &mut work.diff_floors {
        *f -= depth + spread;
    }
    let ea = laurent_cells(a, &work);
    let eb = laurent_cells(b, &work);
    let empty = Vect::new();
    let mut bad = Vec::new();
    let mut keys: Vec<&Mono> = ea.keys().collect();
    keys.extend(eb.keys());
    keys.sort();
    keys.dedup();
    for m in keys {
        let in_box = m.total() <= cmp.ceiling
            && m.total() >= vis
            && m.vexp.iter().zip(&cmp.floors).all(|(e, f)| e >= f);
        if !in_box {
            continue;
        }
        let va = ea.get(m).unwrap_or(&empty);
        let vb = eb.get(m).unwrap_or(&empty);
        if va != vb {
            bad.push(m.clone());
        }
    }
    bad
}

/// True iff the series vanishes within its window (expanded form).
pub fn is_zero_within(a: &LocalizedSeries) -> bool {
    let z = LocalizedSeries::zero(a.window.clone(), a.module.clone());
    eq_within(a, &z)
}

/// The pole order of the represented function along the diagonal of pair
/// `p`.  Stored presentations are not unique, so the raw exponent range can
/// overstate the order; the true order is recovered by clearing the pole
/// and measuring the vanishing order of the result along the diagonal.
pub fn pair_pole_order(a: &LocalizedSeries, p: usize) -> i64 {
    // Expand every other pair into its region-consistent Laurent form so
    // only pair `p` stays symbolic.  The working floors extend below the
    // declared ones by a pole-depth budget so no contributing cell is lost.
    let depths = pole_depths(a);
    let depth: i64 = depths.iter().sum();
    let floor_sum: i64 = a.window.floors.iter().sum();
    let spread = (a.window.ceiling - floor_sum).max(0) + depth + 4;
    let mut work = a.window.clone();
    for f in &mut work.floors {
        *f -= 2 * depth + spread;
    }
    for f in &mut work.diff_floors {
        *f -= 2 * depth + spread;
    }
    let mut cur = LocalizedSeries::zero(work, a.module.clone());
    cur.homog = a.homog;
    cur.vis_floor = a.vis_floor;
    for (m, v) in &a.terms {
        cur.insert(m.clone(), v.clone());
    }
    let mut order: Vec<usize> = (0..a.window.pairs.len()).filter(|&q| q != p).collect();
    order.sort_by_key(|&q| a.window.pairs[q]);
    for q in order {
        if cur.terms.keys().all(|m| m.dexp[q] == 0) {
            continue;
        }
        let (i, j) = cur.window.pairs[q];
        let ni = cur.window.vars[i].clone();
        let nj = cur.window.vars[j].clone();
        if let Ok(e) = expand_diff_lenient(&cur, (&ni, &nj), &nj) {
            cur = e;
        }
    }
    let vis = cur.vis_floor.unwrap_or(i64::MIN);
    let d = cur
        .terms
        .iter()
        .filter(|(m, v)| !v.is_empty() && m.total() >= vis)
        .map(|(m, _)| -m.dexp[p])
        .max()
        .unwrap_or(0)
        .max(0);
    if d == 0 {
        return 0;
    }
    let (ia, ib) = cur.window.pairs[p];
    // T = (a-b)^d * cur with every remaining pair power multiplied out into
    // plain cells, kept raw (no re-canonicalisation into symbols).
    let mut t: BTreeMap<Mono, Vect> = BTreeMap::new();
    let mut stack: Vec<(Mono, Vect)> = Vec::new();
    for (m, v) in &cur.terms {
        if v.is_empty() || m.total() < vis {
            continue;
        }
        let k = m.dexp[p] + d;
        for i in 0..=k {
            let sign = if i % 2 == 0 { Rat::one() } else { -Rat::one() };
            let c = crate::util::binom(k, i) * sign;
            let mut m2 = m.clone();
            m2.dexp[p] = 0;
            m2.vexp[ia] += k - i;
            m2.vexp[ib] += i;
            stack.push((m2, vect_scale(v, &c)));
        }
    }
    while let Some((m, v)) = stack.pop() {
        match (0..m.dexp.len()).find(|&q| m.dexp[q] > 0) {
            None => vect_add_assign(t.entry(m).or_default(), &v),
            Some(q) => {
                let k = m.dexp[q];
                let (i, j) = cur.window.pairs[q];
                for s in 0..=k {
                    let sign = if s % 2 == 0 { Rat::one() } else { -Rat::one() };
                    let c = crate::util::binom(k, s) * sign;
                    let mut m2 = m.clone();
                    m2.dexp[q] = 0;
                    m2.vexp[i] += k - s;
                    m2.vexp[j] += s;
                    stack.push((m2, vect_scale(&v, &c)));
                }
            }
        }
    }
    // Only cells whose every exponent stays within the reach of the
    // declared window are fully assembled; cap the diagonal test there.
    let caps: Vec<i64> = (0..a.window.vars.len())
        .map(|v| {
            let others: i64 = (0..a.window.vars.len())
                .filter(|&u| u != v)
                .map(|u| a.window.floors[u] - depth)
                .sum();
            a.window.ceiling + d - others
        })
        .collect();
    t.retain(|m, v| !v.is_empty() && m.vexp.iter().zip(&caps).all(|(e, c)| e <= c));
    // Vanishing order of T along the diagonal: T, dT/da, ... are evaluated
    // at a = b until one survives.  The pole order is d minus that count.
    let mut r = 0i64;
    while r < d {
        let mut diag: BTreeMap<Mono, Vect> = BTreeMap::new();
        for (m, v) in &t {
            if v.is_empty() {
                continue;
            }
            let mut m2 = m.clone();
            m2.vexp[ib] += m2.vexp[ia];
            m2.vexp[ia] = 0;
            vect_add_assign(diag.entry(m2).or_default(), v);
        }
        if diag.values().any(|v| !v.is_empty()) {
            break;
        }
        r += 1;
        let mut dt: BTreeMap<Mono, Vect> = BTreeMap::new();
        for (m, v) in &t {
            let e = m.vexp[ia];
            if e == 0 || v.is_empty() {
                continue;
            }
            let mut m2 = m.clone();
            m2.vexp[ia] -= 1;
            vect_add_assign(dt.entry(m2).or_default(), &vect_scale(v, &crate::util::rat(e)));
        }
        t = dt;
    }
    d - r
}

/// A signed sum of variables, the target of a substitution.
pub type SignedVars = Vec<(String, i64)>;

/// Substitute each variable by a signed sum of target-window variables.
/// Positive powers expand multinomially; negative powers (of variables or
/// difference symbols) must resolve to a declared target pair plus a signed
/// sum of shift variables, and are expanded as a series in the shifts.
pub fn shift_vars(
    a: &LocalizedSeries,
    subst: &BTreeMap<String, SignedVars>,
    target: &TruncationWindow,
) -> Result<LocalizedSeries, SeriesError> {
    let mut window = target.clone();
    window.ceiling = window.ceiling.min(a.window.ceiling);
    let mut out = LocalizedSeries::zero(window, a.module.clone());
    out.homog = a.homog;
    out.vis_floor = a.vis_floor;

    // Image of a source variable as signed target indices.
    let image = |v: &str| -> Result<Vec<(usize, i64)>, SeriesError> {
        let sv = subst
            .get(v)
            .cloned()
            .or_else(|| target.var_index(v).map(|_| vec![(v.to_string(), 1)]))
            .ok_or_else(|| SeriesError::UnknownVariable(v.to_string()))?;
        sv.iter()
            .map(|(name, s)| {
                target
                    .var_index(name)
                    .map(|i| (i, *s))
                    .ok_or_else(|| SeriesError::UnknownVariable(name.clone()))
            })
            .collect()
    };

    for (m, v) in &a.terms {
        // Factors to multiply: each is a list of (Mono, Rat) alternatives.
        let mut acc: Vec<(Mono, Rat)> = vec![(Mono::unit(&out.window), Rat::one())];
        let push_factor = |acc: &mut Vec<(Mono, Rat)>, factor: Vec<(Mono, Rat)>| {
            let mut next: BTreeMap<Mono, Rat> = BTreeMap::new();
            for (ma, ca) in acc.iter() {
                for (mf, cf) in &factor {
                    let mono = Mono {
                        vexp: ma.vexp.iter().zip(&mf.vexp).map(|(x, y)| x + y).collect(),
                        dexp: ma.dexp.iter().zip(&mf.dexp).map(|(x, y)| x + y).collect(),
                    };
                    *next.entry(mono).or_insert_with(Rat::zero) += ca * cf;
                }
            }
            *acc = next.into_iter().filter(|(_, c)| !c.is_zero()).collect();
        };

        let mut failed: Option<SeriesError> = None;
        for (vi, e) in m.vexp.iter().enumerate() {
            if *e == 0 {
                continue;
            }
            let img = match image(&a.window.vars[vi]) {
                Ok(x) => x,
                Err(er) => {
                    failed = Some(er);
                    break;
                }
            };
            match signed_power(&out.window, &img, *e) {
                Ok(f) => push_factor(&mut acc, f),
                Err(er) => {
                    failed = Some(er);
                    break;
                }
            }
        }
        if failed.is_none() {
            for (p, k) in m.dexp.iter().enumerate() {
                if *k == 0 {
                    continue;
                }
                let (i, j) = a.window.pairs[p];
                let img_i = image(&a.window.vars[i]);
                let img_j = image(&a.window.vars[j]);
                let (img_i, img_j) = match (img_i, img_j) {
                    (Ok(x), Ok(y)) => (x, y),
                    (Err(er), _) | (_, Err(er)) => {
                        failed = Some(er);
                        break;
                    }
                };
                // Difference image with cancellation.
                let mut comb: BTreeMap<usize, i64> = BTreeMap::new();
                for (t, s) in img_i {
                    *comb.entry(t).or_insert(0) += s;
                }
                for (t, s) in img_j {
                    *comb.entry(t).or_insert(0) -= s;
                }
                comb.retain(|_, s| *s != 0);
                if comb.values().any(|s| s.abs() != 1) {
                    failed = Some(SeriesError::UnsupportedSubstitution);
                    break;
                }
                let signed: Vec<(usize, i64)> = comb.into_iter().collect();
                match signed_power(&out.window, &signed, *k) {
                    Ok(f) => push_factor(&mut acc, f),
                    Err(er) => {
                        failed = Some(er);
                        break;
                    }
                }
            }
        }
        if let Some(er) = failed {
            return Err(er);
        }
        for (mono, c) in acc {
            out.insert(mono, vect_scale(v, &c));
        }
    }
    Ok(out)
}

/// `(sum of signed variables)^e` inside the target window.
fn signed_power(
    window: &TruncationWindow,
    signed: &[(usize, i64)],
    e: i64,
) -> Result<Vec<(Mono, Rat)>, SeriesError> {
    if e >= 0 {
        // Multinomial expansion, merging like monomials at every step.
        let mut acc: BTreeMap<Mono, Rat> = BTreeMap::new();
        acc.insert(Mono::unit(window), Rat::one());
        for _ in 0..e {
            let mut next: BTreeMap<Mono, Rat> = BTreeMap::new();
            for (m, c) in &acc {
                for (t, s) in signed {
                    let mut m2 = m.clone();
                    m2.vexp[*t] += 1;
                    *next.entry(m2).or_insert_with(Rat::zero) += c * crate::util::rat(*s);
                }
            }
            acc = next;
        }
        return Ok(acc.into_iter().filter(|(_, c)| !c.is_zero()).collect());
    }
    // Negative power: single variable, or pair-plus-shift.
    if signed.len() == 1 {
        let (t, s) = signed[0];
        if s == 1 {
            let mut m = Mono::unit(window);
            m.vexp[t] = e;
            return Ok(vec![(m, Rat::one())]);
        }
        let mut m = Mono::unit(window);
        m.vexp[t] = e;
        return Ok(vec![(m, sign(e))]);
    }
    // Find a declared pair (pos, neg).
    let mut found: Option<(usize, i64, usize, usize)> = None; // (pair, orient, pos_var, neg_var)
    for &(t1, s1) in signed {
        if s1 != 1 {
            continue;
        }
        for &(t2, s2) in signed {
            if s2 != -1 {
                continue;
            }
            if let Some((p, orient)) = window.pair_index(t1, t2) {
                found = Some((p, orient, t1, t2));
                break;
            }
        }
        if found.is_some() {
            break;
        }
    }
    let Some((p, orient, pos, neg)) = found else {
        // No declared pair: expand around the deepest (first-declared)
        // positive variable, `(x + s)^e = sum_m C(e,m) x^{e-m} s^m`,
        // truncated by that variable's floor.
        // The leading cell `x^e` must fit the window, otherwise the
        // singularity cannot be represented at all.
        let base = signed
            .iter()
            .filter(|(t, s)| *s == 1 && window.floors[*t] <= e)
            .map(|(t, _)| *t)
            .min()
            .ok_or(SeriesError::UnsupportedSubstitution)?;
        let shifts: Vec<(usize, i64)> =
            signed.iter().filter(|(t, _)| *t != base).cloned().collect();
        let vfloor = window.floors[base];
        let mut out = Vec::new();
        let mut mdeg = 0i64;
        while e - mdeg >= vfloor {
            let c0 = binom(e, mdeg);
            let spow = signed_power(window, &shifts, mdeg)?;
            for (mut m, c) in spow {
                m.vexp[base] += e - mdeg;
                out.push((m, &c0 * &c));
            }
            mdeg += 1;
        }
        return Ok(out);
    };
    let shifts: Vec<(usize, i64)> = signed
        .iter()
        .filter(|(t, _)| *t != pos && *t != neg)
        .cloned()
        .collect();
    if shifts.is_empty() {
        let mut m = Mono::unit(window);
        m.dexp[p] = e;
        let c = if orient == 1 { Rat::one() } else { sign(e) };
        return Ok(vec![(m, c)]);
    }
    // (P + s)^e = sum_m C(e, m) P^(e-m) s^m, truncated by the pair floor.
    let mut out = Vec::new();
    let dfloor = window.diff_floors[p];
    let mut mdeg = 0i64;
    while e - mdeg >= dfloor {
        let c0 = binom(e, mdeg) * if orient == 1 { Rat::one() } else { sign(e - mdeg) };
        let spow = signed_power(window, &shifts, mdeg)?;
        for (mut m, c) in spow {
            m.dexp[p] += e - mdeg;
            out.push((m, &c0 * &c));
        }
        mdeg += 1;
    }
    Ok(out)
}

/// Keep only terms with `v`-exponent zero and drop `v` from the window.
pub fn restrict_zero(a: &LocalizedSeries, v: &str) -> Result<LocalizedSeries, SeriesError> {
    let vi = a
        .window
        .var_index(v)
        .ok_or_else(|| SeriesError::UnknownVariable(v.to_string()))?;
    // Preconditions: no negative powers of v, no unexpanded symbol with v.
    for m in a.terms.keys() {
        if m.vexp[vi] < 0 {
            return Err(SeriesError::SingularAtZero(v.to_string()));
        }
        for (p, &(i, j)) in a.window.pairs.iter().enumerate() {
            if m.dexp[p] != 0 && (i == vi || j == vi) {
                return Err(SeriesError::SingularAtZero(v.to_string()));
            }
        }
    }
    let mut vars = a.window.vars.clone();
    vars.remove(vi);
    let mut floors = a.window.floors.clone();
    floors.remove(vi);
    let reindex = |t: usize| if t > vi { t - 1 } else { t };
    let mut pairs = Vec::new();
    let mut diff_floors = Vec::new();
    let mut keep_pair = Vec::new();
    for (p, &(i, j)) in a.window.pairs.iter().enumerate() {
        if i == vi || j == vi {
            keep_pair.push(false);
        } else {
            keep_pair.push(true);
            pairs.push((reindex(i), reindex(j)));
            diff_floors.push(a.window.diff_floors[p]);
        }
    }
    let window = TruncationWindow {
        vars,
        ceiling: a.window.ceiling,
        floors,
        pairs,
        diff_floors,
    };
    let mut out = LocalizedSeries::zero(window, a.module.clone());
    out.homog = a.homog;
    out.vis_floor = a.vis_floor;
    for (m, coeff) in &a.terms {
        if m.vexp[vi] != 0 {
            continue;
        }
        let mut vexp = m.vexp.clone();
        vexp.remove(vi);
        let dexp: Vec<i64> = m
            .dexp
            .iter()
            .zip(&keep_pair)
            .filter(|(_, k)| **k)
            .map(|(d, _)| *d)
            .collect();
        out.insert(Mono { vexp, dexp }, coeff.clone());
    }
    Ok(out)
}

/// `e^{Tv} b = sum_i D(i) b v^i`, truncated at the window ceiling.
pub fn exp_t(
    module: &Arc<GModule>,
    b: &Vect,
    v: &str,
    window: &TruncationWindow,
) -> Result<LocalizedSeries, SeriesError> {
    let vi = window
        .var_index(v)
        .ok_or_else(|| SeriesError::UnknownVariable(v.to_string()))?;
    let mut out = LocalizedSeries::zero(window.clone(), module.clone());
    if module.t_lowers {
        // Homogeneity: weight(b) + 0, assuming b homogeneous.
        if let Some((i, _)) = b.iter().next() {
            let w = module.weight[*i];
            if b.iter().all(|(j, _)| module.weight[*j] == w) {
                out.homog = Some(w);
            }
        }
    }
    for k in 0..=window.ceiling.max(0) {
        let dv = module.d_vect(k, b);
        if dv.is_empty() {
            continue;
        }
        let mut m = Mono::unit(window);
        m.vexp[vi] = k;
        out.insert(m, dv);
    }
    Ok(out)
}

/// Multiply by the operator `e^{Tv}`: each term gains all `z^k D(k)`
/// corrections of its coefficient.
pub fn exp_t_mul(a: &LocalizedSeries, v: &str) -> Result<LocalizedSeries, SeriesError> {
    let vi = a
        .window
        .var_index(v)
        .ok_or_else(|| SeriesError::UnknownVariable(v.to_string()))?;
    let mut out = LocalizedSeries::zero(a.window.clone(), a.module.clone());
    out.homog = a.homog;
    out.vis_floor = a.vis_floor;
    for (m, coeff) in &a.terms {
        let mut k = 0i64;
        let mut cur = coeff.clone();
        loop {
            if m.total() + k > a.window.ceiling {
                break;
            }
            if cur.is_empty() {
                break;
            }
            let mut m2 = m.clone();
            m2.vexp[vi] += k;
            out.insert(m2, cur.clone());
            k += 1;
            cur = a.module.t_vect(&cur);
            let inv = Rat::one() / Rat::from_integer(num::BigInt::from(k));
            cur = cur.into_iter().map(|(i, c)| (i, c * &inv)).collect();
        }
    }
    if a.module.t_lowers {
        if let (Some(h), Some(cut)) = (a.homog, a.module.cutoff) {
            // e^{Tv} preserves joint degree but repeatedly applies T.
            out.vis_floor = Some(out.vis_floor.unwrap_or(i64::MIN).max(h - cut));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Text format.
// ---------------------------------------------------------------------------

/// Graded-lexicographic term order used for printing: ascending total
/// degree, then descending exponent tuple.
fn display_key(m: &Mono) -> (i64, Vec<i64>) {
    let mut t: Vec<i64> = m.vexp.iter().map(|e| -e).collect();
    t.extend(m.dexp.iter().map(|e| -e));
    (m.total(), t)
}

impl fmt::Display for LocalizedSeries {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut entries: Vec<(&Mono, &Vect)> = self.terms.iter().collect();
        entries.sort_by_key(|(m, _)| display_key(m));
        let mut parts: Vec<(bool, String)> = Vec::new();
        for (m, v) in entries {
            for (bi, c) in v {
                let negative = c.is_negative();
                let mag = if negative { -c.clone() } else { c.clone() };
                let mut factors: Vec<String> = Vec::new();
                if !mag.is_one() {
                    factors.push(fmt_rat(&mag));
                }
                if !self.module.is_scalar() {
                    factors.push(self.module.basis[*bi].clone());
                }
                for (vi, e) in m.vexp.iter().enumerate() {
                    if *e == 1 {
                        factors.push(self.window.vars[vi].clone());
                    } else if *e != 0 {
                        factors.push(format!("{}^{}", self.window.vars[vi], e));
                    }
                }
                for (p, k) in m.dexp.iter().enumerate() {
                    if *k != 0 {
                        let (i, j) = self.window.pairs[p];
                        factors.push(format!(
                            "({}-{})^{}",
                            self.window.vars[i], self.window.vars[j], k
                        ));
                    }
                }
                if factors.is_empty() {
                    factors.push("1".into());
                }
                parts.push((negative, factors.join("*")));
            }
        }
        if parts.is_empty() {
            return write!(f, "0");
        }
        for (idx, (negative, text)) in parts.iter().enumerate() {
            if idx == 0 {
                if *negative {
                    write!(f, "-")?;
                }
            } else if *negative {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            write!(f, "{text}")?;
        }
        Ok(())
    }
}

impl LocalizedSeries {
    /// Full text form: window header line, then the terms.
    pub fn format_with_header(&self) -> String {
        format!("{}\n{}", self.window.header(), self)
    }
}

/// Parse the term format produced by `Display` into a series over the given
/// window and module.
pub fn parse_series(
    s: &str,
    window: &TruncationWindow,
    module: &Arc<GModule>,
) -> Result<LocalizedSeries, SeriesError> {
    let mut out = LocalizedSeries::zero(window.clone(), module.clone());
    let s = s.trim();
    if s.is_empty() || s == "0" {
        return Ok(out);
    }
    // Split into signed terms at top level.
    let chars: Vec<char> = s.chars().collect();
    let mut terms: Vec<(bool, String)> = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    let mut neg = false;
    let mut idx = 0usize;
    if chars[0] == '-' {
        neg = true;
        idx = 1;
    }
    let mut prev_caret = false;
    while idx < chars.len() {
        let ch = chars[idx];
        match ch {
            '(' => {
                depth += 1;
                cur.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                cur.push(ch);
            }
            '+' | '-' if depth == 0 && !prev_caret => {
                terms.push((neg, cur.trim().to_string()));
                cur = String::new();
                neg = ch == '-';
            }
            _ => cur.push(ch),
        }
        prev_caret = ch == '^';
        idx += 1;
    }
    terms.push((neg, cur.trim().to_string()));

    for (neg, term) in terms {
        if term.is_empty() {
            return Err(SeriesError::Parse(format!("empty term in {s:?}")));
        }
        let mut coeff = if neg { -Rat::one() } else { Rat::one() };
        let mut mono = Mono::unit(window);
        let mut basis_idx: Option<usize> = None;
        // Split factors on '*' at depth 0.
        let mut factors: Vec<String> = Vec::new();
        let mut cur = String::new();
        let mut depth = 0usize;
        for ch in term.chars() {
            match ch {
                '(' => {
                    depth += 1;
                    cur.push(ch);
                }
                ')' => {
                    depth -= 1;
                    cur.push(ch);
                }
                '*' if depth == 0 => {
                    factors.push(cur.trim().to_string());
                    cur = String::new();
                }
                _ => cur.push(ch),
            }
        }
        factors.push(cur.trim().to_string());
        for f in factors {
            if f.is_empty() {
                return Err(SeriesError::Parse(format!("empty factor in {term:?}")));
            }
            let (base, exp) = match f.rsplit_once('^') {
                Some((b, e)) if b.ends_with(')') || !b.contains('(') => {
                    let exp: i64 = e
                        .trim()
                        .parse()
                        .map_err(|_| SeriesError::Parse(format!("bad exponent in {f:?}")))?;
                    (b.trim().to_string(), exp)
                }
                _ => (f.clone(), 1),
            };
            if base.starts_with('(') {
                let inner = base
                    .strip_prefix('(')
                    .and_then(|x| x.strip_suffix(')'))
                    .ok_or_else(|| SeriesError::Parse(format!("bad difference factor {f:?}")))?;
                let (va, vb) = inner
                    .split_once('-')
                    .ok_or_else(|| SeriesError::Parse(format!("bad difference factor {f:?}")))?;
                let i = window
                    .var_index(va.trim())
                    .ok_or_else(|| SeriesError::UnknownVariable(va.trim().to_string()))?;
                let j = window
                    .var_index(vb.trim())
                    .ok_or_else(|| SeriesError::UnknownVariable(vb.trim().to_string()))?;
                // Positive powers are expanded by the insertion normalizer;
                // negative powers stay symbolic.  Both need a declared pair.
                let (p, orient) = window.pair_index(i, j).ok_or_else(|| {
                    SeriesError::UnknownPair(va.trim().to_string(), vb.trim().to_string())
                })?;
                mono.dexp[p] += exp;
                if orient == -1 {
                    coeff *= sign(exp);
                }
            } else if let Some(r) = parse_rat(&base) {
                if exp == 1 {
                    coeff *= r;
                } else {
                    let mut pow = Rat::one();
                    let e = exp.unsigned_abs();
                    for _ in 0..e {
                        pow *= &r;
                    }
                    if exp < 0 {
                        pow = Rat::one() / pow;
                    }
                    coeff *= pow;
                }
            } else if let Some(vi) = window.var_index(&base) {
                mono.vexp[vi] += exp;
            } else if let Some(bi) = module.basis_index(&base) {
                if exp != 1 || basis_idx.is_some() {
                    return Err(SeriesError::Parse(format!(
                        "basis factor {base:?} cannot carry an exponent or repeat"
                    )));
                }
                basis_idx = Some(bi);
            } else {
                return Err(SeriesError::Parse(format!("unknown factor {base:?}")));
            }
        }
        let bi = basis_idx.unwrap_or(0);
        let mut v = Vect::new();
        v.insert(bi, coeff);
        out.insert(mono, v);
    }
    if module.t_lowers {
        out.homog = joint_degree(&out);
    }
    Ok(out)
}

/// Decompose into joint-degree (module weight plus total variable degree)
/// homogeneous layers, each carrying its degree.
pub fn homogeneous_layers(a: &LocalizedSeries) -> Vec<LocalizedSeries> {
    let mut layers: BTreeMap<i64, LocalizedSeries> = BTreeMap::new();
    for (m, v) in &a.terms {
        for (bi, c) in v {
            let d = m.total() + a.module.weight[*bi];
            let layer = layers.entry(d).or_insert_with(|| {
                let mut s = LocalizedSeries::zero(a.window.clone(), a.module.clone());
                s.homog = Some(d);
                s.vis_floor = a.vis_floor;
                s
            });
            let mut single = Vect::new();
            single.insert(*bi, c.clone());
            layer.insert(m.clone(), single);
        }
    }
    layers.into_values().collect()
}

/// The common joint degree (module weight plus total variable degree) of all
/// terms, if one exists.
pub fn joint_degree(a: &LocalizedSeries) -> Option<i64> {
    let mut deg = None;
    for (m, v) in &a.terms {
        for (bi, _) in v {
            let d = m.total() + a.module.weight[*bi];
            match deg {
                None => deg = Some(d),
                Some(x) if x == d => {}
                _ => return None,
            }
        }
    }
    deg
}

#[cfg(test)]
mod tests;

