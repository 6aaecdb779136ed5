//! Vertex algebras as finite data, axiom verification, and two built-in
//! models: a weight-truncated free boson and a holomorphic truncated
//! polynomial algebra.
//!
//! A `VertexAlgebra` stores the module and the structure constants
//! `c_n(i, j)` = coefficient of `x^n` in `Y(e_i, x) e_j`.  Truncation at the
//! weight cutoff `W` makes the table finite; every identity check quantifies
//! only over coefficients whose weight survives the cutoff, so truncation is
//! explicit and never falsifies an identity.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use num::{One, Zero};
use thiserror::Error;

use crate::series::{vect_add_assign, vect_scale, vect_single, GModule, Vect};
use crate::util::{binom, fmt_rat, parse_rat, sign, Rat};

/// A single vertex operator applied to a single vector: map from the power
/// of the formal variable to the coefficient vector.
pub type Field = BTreeMap<i64, Vect>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValgError {
    #[error("no locality order found up to {0}")]
    NotLocalWithin(i64),
    #[error("module data exceeds the weight cutoff")]
    CutoffOverflow,
    #[error("vertex algebra is not holomorphic")]
    NotHolomorphic,
    #[error("parse error: {0}")]
    Parse(String),
}

/// Pass/fail record for one checked identity.
#[derive(Clone, Debug)]
pub struct ReportItem {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// A list of checked identities.
#[derive(Clone, Debug, Default)]
pub struct Report {
    pub items: Vec<ReportItem>,
}

impl Report {
    pub fn push(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.items.push(ReportItem {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }

    pub fn merge(&mut self, other: Report) {
        self.items.extend(other.items);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for i in &self.items {
            let status = if i.pass { "pass" } else { "FAIL" };
            if i.detail.is_empty() {
                let _ = writeln!(s, "{status}  {}", i.name);
            } else {
                let _ = writeln!(s, "{status}  {} ({})", i.name, i.detail);
            }
        }
        s
    }
}

/// A vertex algebra over a weight-graded module, truncated at `weight_cutoff`.
#[derive(Clone, Debug)]
pub struct VertexAlgebra {
    pub module: Arc<GModule>,
    pub weight_cutoff: i64,
    /// `y_table[(i, j)]` = the field `Y(e_i, x) e_j`; absent powers are zero.
    pub y_table: BTreeMap<(usize, usize), Field>,
    pub vacuum: usize,
}

impl VertexAlgebra {
    pub fn field(&self, i: usize, j: usize) -> Field {
        self.y_table.get(&(i, j)).cloned().unwrap_or_default()
    }

    pub fn coeff(&self, i: usize, j: usize, n: i64) -> Vect {
        self.y_table
            .get(&(i, j))
            .and_then(|f| f.get(&n))
            .cloned()
            .unwrap_or_default()
    }

    /// Weight of the (true) coefficient of `x^n` in `Y(e_i, x) e_j`.
    pub fn coeff_weight(&self, i: usize, j: usize, n: i64) -> i64 {
        let dir = if self.module.t_lowers { -1 } else { 1 };
        self.module.weight[i] + self.module.weight[j] + dir * n
    }

    /// Whether the stored coefficient is trustworthy: its true weight lies
    /// inside `[0, W]` (negative weight means the coefficient is known to be
    /// zero, which also counts as known).
    pub fn known(&self, i: usize, j: usize, n: i64) -> bool {
        self.coeff_weight(i, j, n) <= self.weight_cutoff
    }

    /// The inclusive range of powers `n` whose coefficients are known and
    /// may be nonzero.
    pub fn known_range(&self, i: usize, j: usize) -> (i64, i64) {
        let s = self.module.weight[i] + self.module.weight[j];
        if self.module.t_lowers {
            // weight = s - n in [0, W]
            ((s - self.weight_cutoff).max(0), s)
        } else {
            // weight = s + n in [0, W]
            (-s, self.weight_cutoff - s)
        }
    }

    /// `Y(e_i, x) v` by linearity in the second argument.
    pub fn field_on_vect(&self, i: usize, v: &Vect) -> Field {
        let mut out = Field::new();
        for (j, c) in v {
            for (n, w) in self.field(i, *j) {
                let entry = out.entry(n).or_default();
                vect_add_assign(entry, &vect_scale(&w, c));
            }
        }
        out.retain(|_, w| !w.is_empty());
        out
    }

    /// `Y(u, x) v` by bilinearity.
    pub fn field_vv(&self, u: &Vect, v: &Vect) -> Field {
        let mut out = Field::new();
        for (i, c) in u {
            for (n, w) in self.field_on_vect(*i, v) {
                let entry = out.entry(n).or_default();
                vect_add_assign(entry, &vect_scale(&w, c));
            }
        }
        out.retain(|_, w| !w.is_empty());
        out
    }
}

// ---------------------------------------------------------------------------
// Axiom verification.
// ---------------------------------------------------------------------------

/// Check the vertex-algebra axioms coefficientwise within the cutoff:
/// vacuum translation, vacuum identity, creation (`Y(a,x)|0> = e^{xT}a`),
/// the translation commutator, the field derivative (`d/dx Y(a,x) =
/// Y(Ta,x)`), and translation covariance.
pub fn check_axioms(v: &VertexAlgebra) -> Report {
    let mut rep = Report::default();
    let dim = v.module.dim();
    let vac = v.vacuum;

    // T|0> = 0.
    let tvac = v.module.t_vect(&vect_single(vac));
    rep.push("vacuum_translation", tvac.is_empty(), "T|0> = 0");

    // Y(|0>, x) a = a.
    let mut ok = true;
    let mut detail = String::new();
    for a in 0..dim {
        let f = v.field(vac, a);
        for (n, w) in &f {
            let expect = if *n == 0 { vect_single(a) } else { Vect::new() };
            if v.known(vac, a, *n) && *w != expect {
                ok = false;
                detail = format!("Y(|0>,x)e_{a} wrong at x^{n}");
            }
        }
        if f.get(&0).cloned().unwrap_or_default() != vect_single(a) {
            ok = false;
            detail = format!("Y(|0>,x)e_{a} misses identity at x^0");
        }
    }
    rep.push("vacuum_identity", ok, detail);

    // Creation: Y(a, x)|0> = e^{xT} a, i.e. c_n(a, vac) = T^n a / n!.
    let mut ok = true;
    let mut detail = String::new();
    for a in 0..dim {
        let (lo, hi) = v.known_range(a, vac);
        for n in lo.min(0)..=hi {
            if !v.known(a, vac, n) {
                continue;
            }
            let got = v.coeff(a, vac, n);
            let expect = if n < 0 {
                Vect::new()
            } else {
                v.module.d_vect(n, &vect_single(a))
            };
            if got != expect {
                ok = false;
                detail = format!("creation fails for e_{a} at x^{n}");
            }
        }
    }
    rep.push("creation", ok, detail);

    // [T, Y(a,x)]b = d/dx Y(a,x)b :  T c_n(a,b) - c_n(a, Tb) = (n+1) c_{n+1}(a,b).
    let mut ok = true;
    let mut detail = String::new();
    for a in 0..dim {
        for b in 0..dim {
            // Skip when T b itself falls outside the truncated module.
            if !v.module.t_lowers && v.module.weight[b] + 1 > v.weight_cutoff {
                continue;
            }
            let (lo, hi) = v.known_range(a, b);
            let tb = v.module.t_vect(&vect_single(b));
            for n in lo..=hi {
                if !v.known(a, b, n) || !v.known(a, b, n + 1) {
                    continue;
                }
                let mut lhs = v.module.t_vect(&v.coeff(a, b, n));
                let mut rhs_cab: Vect = Vect::new();
                for (bb, c) in &tb {
                    vect_add_assign(&mut rhs_cab, &vect_scale(&v.coeff(a, *bb, n), c));
                }
                vect_add_assign(&mut lhs, &vect_scale(&rhs_cab, &-Rat::one()));
                let rhs = vect_scale(&v.coeff(a, b, n + 1), &crate::util::rat(n + 1));
                if lhs != rhs {
                    ok = false;
                    detail = format!("commutator fails for ({a},{b}) at x^{n}");
                }
            }
        }
    }
    rep.push("translation_commutator", ok, detail);

    // d/dx Y(a,x)b = Y(Ta, x)b :  (n+1) c_{n+1}(a,b) = c_n(Ta, b).
    let mut ok = true;
    let mut detail = String::new();
    for a in 0..dim {
        // Skip when T a itself falls outside the truncated module.
        if !v.module.t_lowers && v.module.weight[a] + 1 > v.weight_cutoff {
            continue;
        }
        let ta = v.module.t_vect(&vect_single(a));
        for b in 0..dim {
            let (lo, hi) = v.known_range(a, b);
            for n in lo..=hi {
                if !v.known(a, b, n + 1) {
                    continue;
                }
                let lhs = vect_scale(&v.coeff(a, b, n + 1), &crate::util::rat(n + 1));
                let mut rhs = Vect::new();
                for (aa, c) in &ta {
                    vect_add_assign(&mut rhs, &vect_scale(&v.coeff(*aa, b, n), c));
                }
                if lhs != rhs {
                    ok = false;
                    detail = format!("field derivative fails for ({a},{b}) at x^{n}");
                }
            }
        }
    }
    rep.push("field_derivative", ok, detail);

    // Translation covariance: T Y(a,x)b = Y(a,x)Tb + Y(Ta,x)b.
    let mut ok = true;
    let mut detail = String::new();
    for a in 0..dim {
        // Both T a and T b must be representable for the identity to be
        // expressible in the truncated module.
        if !v.module.t_lowers && v.module.weight[a] + 1 > v.weight_cutoff {
            continue;
        }
        let ta = v.module.t_vect(&vect_single(a));
        for b in 0..dim {
            if !v.module.t_lowers && v.module.weight[b] + 1 > v.weight_cutoff {
                continue;
            }
            let tb = v.module.t_vect(&vect_single(b));
            let (lo, hi) = v.known_range(a, b);
            for n in lo..=hi {
                // Target coefficient has weight one above c_n(a,b).
                if !v.known(a, b, n) || v.coeff_weight(a, b, n) + 1 > v.weight_cutoff {
                    continue;
                }
                let lhs = v.module.t_vect(&v.coeff(a, b, n));
                let mut rhs = Vect::new();
                for (bb, c) in &tb {
                    vect_add_assign(&mut rhs, &vect_scale(&v.coeff(a, *bb, n), c));
                }
                for (aa, c) in &ta {
                    vect_add_assign(&mut rhs, &vect_scale(&v.coeff(*aa, b, n), c));
                }
                if lhs != rhs {
                    ok = false;
                    detail = format!("covariance fails for ({a},{b}) at x^{n}");
                }
            }
        }
    }
    rep.push("translation_covariance", ok, detail);

    rep
}

/// Quasisymmetry: `Y(a,x)b = e^{xT} Y(b,-x)a`, i.e.
/// `c_n(a,b) = sum_k (-1)^(n-k) T^k/k! c_{n-k}(b,a)`.
/// Comparisons referencing a coefficient hidden by the cutoff are skipped.
pub fn check_quasisymmetry(v: &VertexAlgebra) -> Report {
    let mut rep = Report::default();
    let dim = v.module.dim();
    let mut ok = true;
    let mut detail = String::new();
    let mut compared = 0usize;
    for a in 0..dim {
        for b in 0..dim {
            let (lo, hi) = v.known_range(a, b);
            let (blo, _) = v.known_range(b, a);
            for n in lo..=hi {
                if !v.known(a, b, n) {
                    continue;
                }
                // All referenced cells c_{n-k}(b,a), k = 0..(n - blo), must
                // be known; stop at k where n-k drops below any possible
                // support.
                let kmax = n - blo.min(-(v.module.weight[a] + v.module.weight[b]));
                let mut usable = true;
                let mut rhs = Vect::new();
                for k in 0..=kmax.max(0) {
                    let m = n - k;
                    if v.coeff_weight(b, a, m) < 0 {
                        continue; // known zero
                    }
                    if !v.known(b, a, m) {
                        usable = false;
                        break;
                    }
                    let term = v.module.d_vect(k, &v.coeff(b, a, m));
                    vect_add_assign(&mut rhs, &vect_scale(&term, &sign(m)));
                }
                if !usable {
                    continue;
                }
                compared += 1;
                if v.coeff(a, b, n) != rhs {
                    ok = false;
                    detail = format!("quasisymmetry fails for ({a},{b}) at x^{n}");
                }
            }
        }
    }
    if detail.is_empty() {
        detail = format!("{compared} coefficients compared");
    }
    rep.push("quasisymmetry", ok, detail);
    rep
}

/// Two-variable product `Y(a,x) Y(b,y) c` as an exact finite Laurent table
/// `(m_x, m_y) -> vector`, trustworthy at cells where neither stage
/// overflowed the cutoff.
pub fn double_field(
    v: &VertexAlgebra,
    a: usize,
    b: usize,
    c: usize,
) -> BTreeMap<(i64, i64), Vect> {
    let mut out = BTreeMap::new();
    for (my, inner) in v.field(b, c) {
        for (mx, w) in v.field_on_vect(a, &inner) {
            let entry: &mut Vect = out.entry((mx, my)).or_default();
            vect_add_assign(entry, &w);
        }
    }
    out.retain(|_, w: &mut Vect| !w.is_empty());
    out
}

/// Find the smallest `N <= n_max` with
/// `(x-y)^N (Y(a,x)Y(b,y)c - Y(b,y)Y(a,x)c) = 0` for all basis `c`,
/// comparing only cutoff-reliable cells.
pub fn check_locality(
    v: &VertexAlgebra,
    a: usize,
    b: usize,
    n_max: i64,
) -> Result<i64, ValgError> {
    let dim = v.module.dim();
    'next_n: for n in 0..=n_max {
        for c in 0..dim {
            let u1 = double_field(v, a, b, c);
            let u2r = double_field(v, b, a, c);
            // u2 has x attached to a in the outer position: swap key order.
            let mut diff: BTreeMap<(i64, i64), Vect> = BTreeMap::new();
            for (k, w) in u1 {
                let e: &mut Vect = diff.entry(k).or_default();
                vect_add_assign(e, &w);
            }
            for ((my, mx), w) in u2r {
                let e: &mut Vect = diff.entry((mx, my)).or_default();
                vect_add_assign(e, &vect_scale(&w, &(-Rat::one())));
            }
            diff.retain(|_, w| !w.is_empty());
            // Multiply by (x-y)^n.
            let mut prod: BTreeMap<(i64, i64), Vect> = BTreeMap::new();
            for ((mx, my), w) in &diff {
                for t in 0..=n {
                    let coef = binom(n, t) * sign(n - t);
                    let e: &mut Vect = prod.entry((mx + t, my + n - t)).or_default();
                    vect_add_assign(e, &vect_scale(w, &coef));
                }
            }
            prod.retain(|_, w| !w.is_empty());
            // Reliability bounds: inner-stage overflow caps each exponent.
            let wa = v.module.weight[a];
            let wb = v.module.weight[b];
            let wc = v.module.weight[c];
            let mx_cap = v.weight_cutoff - wa - wc;
            let my_cap = v.weight_cutoff - wb - wc;
            for ((mx, my), w) in &prod {
                if *mx <= mx_cap && *my <= my_cap && !w.is_empty() {
                    continue 'next_n;
                }
            }
        }
        return Ok(n);
    }
    Err(ValgError::NotLocalWithin(n_max))
}

// ---------------------------------------------------------------------------
// Holomorphic correspondence.
// ---------------------------------------------------------------------------

/// A commutative associative algebra with derivation `T` and unit: a
/// `GModule` whose `mult` and `vacuum` (unit) fields are present.
pub type CommDiffAlgebra = Arc<GModule>;

/// Validate the commutative-differential-algebra laws within the cutoff.
pub fn check_comm_diff_algebra(a: &CommDiffAlgebra) -> Report {
    let mut rep = Report::default();
    let dim = a.dim();
    let unit = a.vacuum.unwrap_or(0);
    let cutoff = a.cutoff.unwrap_or(i64::MAX);
    let ok_unit = a.t_vect(&vect_single(unit)).is_empty();
    rep.push("unit_t_annihilated", ok_unit, "");
    let mut comm = true;
    let mut assoc = true;
    let mut deriv = true;
    for i in 0..dim {
        for j in 0..dim {
            let ij = a.mul_vect(&vect_single(i), &vect_single(j)).unwrap();
            let ji = a.mul_vect(&vect_single(j), &vect_single(i)).unwrap();
            if ij != ji {
                comm = false;
            }
            // Derivation law, only where no truncation interferes.
            if a.weight[i] + a.weight[j] + (if a.t_lowers { -1 } else { 1 }) <= cutoff
                && a.weight[i] + a.weight[j] <= cutoff
            {
                let lhs = a.t_vect(&ij);
                let mut rhs = a
                    .mul_vect(&a.t_vect(&vect_single(i)), &vect_single(j))
                    .unwrap();
                vect_add_assign(
                    &mut rhs,
                    &a.mul_vect(&vect_single(i), &a.t_vect(&vect_single(j))).unwrap(),
                );
                if lhs != rhs {
                    deriv = false;
                }
            }
            for k in 0..dim {
                let l = a.mul_vect(&ij, &vect_single(k)).unwrap();
                let r = a
                    .mul_vect(&vect_single(i), &a.mul_vect(&vect_single(j), &vect_single(k)).unwrap())
                    .unwrap();
                if l != r {
                    assoc = false;
                }
            }
        }
    }
    rep.push("commutative", comm, "");
    rep.push("associative", assoc, "");
    rep.push("t_derivation", deriv, "");
    rep
}

/// Build the holomorphic vertex algebra `Y(a,x)b = (e^{xT}a) . b`.
pub fn from_comm_alg(a: &CommDiffAlgebra) -> Result<VertexAlgebra, ValgError> {
    if a.mult.is_none() || a.vacuum.is_none() {
        return Err(ValgError::CutoffOverflow);
    }
    let cutoff = a.cutoff.ok_or(ValgError::CutoffOverflow)?;
    let dim = a.dim();
    let mut y_table = BTreeMap::new();
    for i in 0..dim {
        for j in 0..dim {
            let mut field = Field::new();
            for n in 0..=cutoff {
                let dn = a.d_vect(n, &vect_single(i));
                if dn.is_empty() {
                    continue;
                }
                let prod = a.mul_vect(&dn, &vect_single(j)).unwrap();
                if !prod.is_empty() {
                    field.insert(n, prod);
                }
            }
            if !field.is_empty() {
                y_table.insert((i, j), field);
            }
        }
    }
    Ok(VertexAlgebra {
        module: a.clone(),
        weight_cutoff: cutoff,
        y_table,
        vacuum: a.vacuum.unwrap(),
    })
}

/// Recover the commutative algebra: product = `Y(a,x)b|_{x=0}`, unit = `|0>`.
pub fn to_comm_alg(v: &VertexAlgebra) -> Result<CommDiffAlgebra, ValgError> {
    // Holomorphic: no negative powers anywhere.
    for field in v.y_table.values() {
        if field.keys().any(|n| *n < 0) {
            return Err(ValgError::NotHolomorphic);
        }
    }
    let dim = v.module.dim();
    let mut mult = Vec::new();
    for i in 0..dim {
        let mut row = Vec::new();
        for j in 0..dim {
            row.push(v.coeff(i, j, 0));
        }
        mult.push(row);
    }
    Ok(Arc::new(GModule {
        name: format!("{}_alg", v.module.name),
        basis: v.module.basis.clone(),
        weight: v.module.weight.clone(),
        t_action: v.module.t_action.clone(),
        t_lowers: v.module.t_lowers,
        cutoff: Some(v.weight_cutoff),
        mult: Some(mult),
        vacuum: Some(v.vacuum),
    }))
}

// ---------------------------------------------------------------------------
// Free boson.
// ---------------------------------------------------------------------------

/// The free-boson module truncated at weight `w`: basis = descending part
/// lists `[n1 >= n2 >= ...]` with sum <= w; `T` raises one part by one.
pub fn boson_module(w: i64) -> (Arc<GModule>, Vec<Vec<u32>>) {
    // Enumerate partitions with sum <= w, sorted by (weight, parts).
    let mut states: Vec<Vec<u32>> = vec![vec![]];
    fn extend(prefix: &[u32], remaining: i64, out: &mut Vec<Vec<u32>>) {
        let max_part = prefix.last().copied().unwrap_or(remaining as u32);
        for p in (1..=(remaining as u32).min(max_part)).rev() {
            let mut s = prefix.to_vec();
            s.push(p);
            out.push(s.clone());
            extend(&s, remaining - p as i64, out);
        }
    }
    extend(&[], w, &mut states);
    states.sort_by_key(|s| (s.iter().map(|p| *p as i64).sum::<i64>(), s.clone()));
    let index: BTreeMap<Vec<u32>, usize> =
        states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let name_of = |s: &Vec<u32>| -> String {
        if s.is_empty() {
            "vac".into()
        } else {
            format!(
                "a{}",
                s.iter().map(|p| p.to_string()).collect::<Vec<_>>().join("a")
            )
        }
    };
    let basis: Vec<String> = states.iter().map(name_of).collect();
    let weight: Vec<i64> = states
        .iter()
        .map(|s| s.iter().map(|p| *p as i64).sum())
        .collect();
    let mut t_action = Vec::new();
    for s in &states {
        let mut img = Vect::new();
        for (pos, p) in s.iter().enumerate() {
            let mut t = s.clone();
            t[pos] = p + 1;
            t.sort_unstable_by(|x, y| y.cmp(x));
            if t.iter().map(|q| *q as i64).sum::<i64>() <= w {
                if let Some(&idx) = index.get(&t) {
                    let e = img.entry(idx).or_insert_with(Rat::zero);
                    *e += crate::util::rat(*p as i64);
                    if e.is_zero() {
                        img.remove(&idx);
                    }
                }
            }
        }
        t_action.push(img);
    }
    let module = Arc::new(GModule {
        name: format!("boson{w}"),
        basis,
        weight,
        t_action,
        t_lowers: false,
        cutoff: Some(w),
        mult: None,
        vacuum: Some(0),
    });
    (module, states)
}

struct BosonBuilder {
    w: i64,
    states: Vec<Vec<u32>>,
    index: BTreeMap<Vec<u32>, usize>,
    memo: HashMap<(usize, usize), Field>,
}

impl BosonBuilder {
    /// Creation mode `a_{-p}` (p > 0): add a part, truncating above `w`.
    fn create(&self, p: u32, v: &Vect) -> Vect {
        let mut out = Vect::new();
        for (i, c) in v {
            let mut s = self.states[*i].clone();
            s.push(p);
            s.sort_unstable_by(|x, y| y.cmp(x));
            if s.iter().map(|q| *q as i64).sum::<i64>() <= self.w {
                if let Some(&idx) = self.index.get(&s) {
                    let e = out.entry(idx).or_insert_with(Rat::zero);
                    *e += c;
                    if e.is_zero() {
                        out.remove(&idx);
                    }
                }
            }
        }
        out
    }

    /// Annihilation mode `a_p` (p > 0): `a_p` removes a part `p` with factor
    /// `p * multiplicity`.
    fn annihilate(&self, p: u32, state: usize) -> Vect {
        let s = &self.states[state];
        let mult = s.iter().filter(|q| **q == p).count() as i64;
        if mult == 0 {
            return Vect::new();
        }
        let mut t = s.clone();
        let pos = t.iter().position(|q| *q == p).unwrap();
        t.remove(pos);
        let idx = self.index[&t];
        let mut out = Vect::new();
        out.insert(idx, crate::util::rat(p as i64 * mult));
        out
    }

    /// `Y(s, x) t` via the normally ordered mode recursion: peel the first
    /// (largest) part `n` of `s`, so `s = a_{-n} s'` and
    ///
    /// `Y(s,x)t = sum_{j<=-1} C(-j-1, n-1) x^{-j-n} a_j Y(s',x)t
    ///          + sum_{j>=0}  C(-j-1, n-1) x^{-j-n} Y(s',x)(a_j t)`.
    fn field(&mut self, s: usize, t: usize) -> Field {
        if let Some(f) = self.memo.get(&(s, t)) {
            return f.clone();
        }
        let parts = self.states[s].clone();
        let result = if parts.is_empty() {
            let mut f = Field::new();
            f.insert(0, vect_single(t));
            f
        } else {
            let n = parts[0] as i64;
            let s_rest = self.index[&parts[1..].to_vec()];
            let mut f = Field::new();
            // Creation half: j = -1, -2, ..., -(w+1) suffices.
            let inner = self.field(s_rest, t);
            for j in -(self.w + 1)..=-1i64 {
                let coef = binom(-j - 1, n - 1);
                if coef.is_zero() {
                    continue;
                }
                for (m, vvec) in &inner {
                    let moved = self.create((-j) as u32, vvec);
                    if moved.is_empty() {
                        continue;
                    }
                    let e: &mut Vect = f.entry(m - j - n).or_default();
                    vect_add_assign(e, &vect_scale(&moved, &coef));
                }
            }
            // Annihilation half: only parts of t give nonzero a_j t.
            let t_parts: Vec<u32> = {
                let mut ps = self.states[t].clone();
                ps.dedup();
                ps
            };
            for p in t_parts {
                let j = p as i64;
                let coef = binom(-j - 1, n - 1);
                if coef.is_zero() {
                    continue;
                }
                let at = self.annihilate(p, t);
                for (tt, c) in &at {
                    let inner = self.field(s_rest, *tt);
                    for (m, vvec) in &inner {
                        let e: &mut Vect = f.entry(m - j - n).or_default();
                        vect_add_assign(e, &vect_scale(vvec, &(&coef * c)));
                    }
                }
            }
            f.retain(|_, vvec| !vvec.is_empty());
            f
        };
        self.memo.insert((s, t), result.clone());
        result
    }
}

/// The free boson truncated at weight cutoff `w`.
pub fn free_boson(w: i64) -> VertexAlgebra {
    let (module, states) = boson_module(w);
    let index: BTreeMap<Vec<u32>, usize> =
        states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let mut builder = BosonBuilder {
        w,
        states: states.clone(),
        index,
        memo: HashMap::new(),
    };
    let dim = module.dim();
    let mut y_table = BTreeMap::new();
    for i in 0..dim {
        for j in 0..dim {
            let f = builder.field(i, j);
            if !f.is_empty() {
                y_table.insert((i, j), f);
            }
        }
    }
    VertexAlgebra {
        module,
        weight_cutoff: w,
        y_table,
        vacuum: 0,
    }
}

// ---------------------------------------------------------------------------
// Text format.
// ---------------------------------------------------------------------------

/// Format a coefficient vector over named basis vectors, e.g.
/// `2*a1a1 + 3/2*vac`, or `0`.
pub fn fmt_vect(module: &GModule, v: &Vect) -> String {
    if v.is_empty() {
        return "0".into();
    }
    let mut out = String::new();
    for (idx, (i, c)) in v.iter().enumerate() {
        let neg = c < &Rat::zero();
        let mag = if neg { -c.clone() } else { c.clone() };
        if idx == 0 {
            if neg {
                out.push('-');
            }
        } else if neg {
            out.push_str(" - ");
        } else {
            out.push_str(" + ");
        }
        if mag == Rat::one() {
            out.push_str(&module.basis[*i]);
        } else {
            let _ = write!(out, "{}*{}", fmt_rat(&mag), module.basis[*i]);
        }
    }
    out
}

/// Parse the output of `fmt_vect`.
pub fn parse_vect(module: &GModule, s: &str) -> Result<Vect, ValgError> {
    let s = s.trim();
    let mut out = Vect::new();
    if s == "0" {
        return Ok(out);
    }
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
            return Err(ValgError::Parse(format!("empty term in {s:?}")));
        }
        let (coeff, name) = match t.split_once('*') {
            Some((c, n)) => (
                parse_rat(c).ok_or_else(|| ValgError::Parse(format!("bad coefficient {c:?}")))?,
                n.trim(),
            ),
            None => (Rat::one(), t.as_str()),
        };
        let i = module
            .basis_index(name)
            .ok_or_else(|| ValgError::Parse(format!("unknown basis vector {name:?}")))?;
        let c = if neg { -coeff } else { coeff };
        let e = out.entry(i).or_insert_with(Rat::zero);
        *e += c;
        if e.is_zero() {
            out.remove(&i);
        }
    }
    Ok(out)
}

/// Serialize a vertex algebra to the line-based file format.
pub fn write_va(v: &VertexAlgebra) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "vertexalgebra {}", v.module.name);
    let _ = writeln!(s, "weight_cutoff {}", v.weight_cutoff);
    let _ = writeln!(
        s,
        "grading {}",
        if v.module.t_lowers { "lowering" } else { "raising" }
    );
    let _ = writeln!(s, "vacuum {}", v.module.basis[v.vacuum]);
    for (i, name) in v.module.basis.iter().enumerate() {
        let _ = writeln!(s, "basis {} {}", name, v.module.weight[i]);
    }
    for (i, name) in v.module.basis.iter().enumerate() {
        let _ = writeln!(s, "T {} -> {}", name, fmt_vect(&v.module, &v.module.t_action[i]));
    }
    for ((i, j), field) in &v.y_table {
        for (n, w) in field {
            let _ = writeln!(
                s,
                "Y ({}, {}, {}) -> {}",
                v.module.basis[*i],
                v.module.basis[*j],
                n,
                fmt_vect(&v.module, w)
            );
        }
    }
    s
}

/// Parse the file format produced by `write_va`.
pub fn read_va(text: &str) -> Result<VertexAlgebra, ValgError> {
    let mut name = String::new();
    let mut cutoff: Option<i64> = None;
    let mut lowering = false;
    let mut vacuum_name = String::new();
    let mut basis: Vec<String> = Vec::new();
    let mut weight: Vec<i64> = Vec::new();
    let mut t_lines: Vec<(String, String)> = Vec::new();
    let mut y_lines: Vec<(String, String, i64, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |m: &str| ValgError::Parse(format!("line {}: {m}", lineno + 1));
        if let Some(rest) = line.strip_prefix("vertexalgebra ") {
            name = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("weight_cutoff ") {
            cutoff = Some(rest.trim().parse().map_err(|_| err("bad cutoff"))?);
        } else if let Some(rest) = line.strip_prefix("grading ") {
            lowering = rest.trim() == "lowering";
        } else if let Some(rest) = line.strip_prefix("vacuum ") {
            vacuum_name = rest.trim().to_string();
        } else if let Some(rest) = line.strip_prefix("basis ") {
            let mut it = rest.split_whitespace();
            let n = it.next().ok_or_else(|| err("basis needs a name"))?;
            let w: i64 = it
                .next()
                .ok_or_else(|| err("basis needs a weight"))?
                .parse()
                .map_err(|_| err("bad weight"))?;
            basis.push(n.to_string());
            weight.push(w);
        } else if let Some(rest) = line.strip_prefix("T ") {
            let (lhs, rhs) = rest.split_once("->").ok_or_else(|| err("T needs ->"))?;
            t_lines.push((lhs.trim().to_string(), rhs.trim().to_string()));
        } else if let Some(rest) = line.strip_prefix("Y ") {
            let (lhs, rhs) = rest.split_once("->").ok_or_else(|| err("Y needs ->"))?;
            let lhs = lhs
                .trim()
                .strip_prefix('(')
                .and_then(|x| x.strip_suffix(')'))
                .ok_or_else(|| err("Y needs (a, b, n)"))?;
            let parts: Vec<&str> = lhs.split(',').map(|p| p.trim()).collect();
            if parts.len() != 3 {
                return Err(err("Y needs three components"));
            }
            let n: i64 = parts[2].parse().map_err(|_| err("bad power"))?;
            y_lines.push((
                parts[0].to_string(),
                parts[1].to_string(),
                n,
                rhs.trim().to_string(),
            ));
        } else {
            return Err(err("unrecognized line"));
        }
    }
    let cutoff = cutoff.ok_or_else(|| ValgError::Parse("missing weight_cutoff".into()))?;
    // Two-pass: module skeleton first, then vectors.
    let dim = basis.len();
    let proto = GModule {
        name: name.clone(),
        basis: basis.clone(),
        weight: weight.clone(),
        t_action: vec![Vect::new(); dim],
        t_lowers: lowering,
        cutoff: Some(cutoff),
        mult: None,
        vacuum: None,
    };
    let mut t_action = vec![Vect::new(); dim];
    for (lhs, rhs) in &t_lines {
        let i = proto
            .basis_index(lhs)
            .ok_or_else(|| ValgError::Parse(format!("unknown basis vector {lhs:?}")))?;
        t_action[i] = parse_vect(&proto, rhs)?;
    }
    let vacuum = proto
        .basis_index(&vacuum_name)
        .ok_or_else(|| ValgError::Parse(format!("unknown vacuum {vacuum_name:?}")))?;
    let module = Arc::new(GModule {
        t_action,
        vacuum: Some(vacuum),
        ..proto
    });
    let mut y_table: BTreeMap<(usize, usize), Field> = BTreeMap::new();
    for (an, bn, n, rhs) in &y_lines {
        let i = module
            .basis_index(an)
            .ok_or_else(|| ValgError::Parse(format!("unknown basis vector {an:?}")))?;
        let j = module
            .basis_index(bn)
            .ok_or_else(|| ValgError::Parse(format!("unknown basis vector {bn:?}")))?;
        let v = parse_vect(&module, rhs)?;
        if !v.is_empty() {
            y_table.entry((i, j)).or_default().insert(*n, v);
        }
    }
    Ok(VertexAlgebra {
        module,
        weight_cutoff: cutoff,
        y_table,
        vacuum,
    })
}

// ---------------------------------------------------------------------------
// The tree-indexed family generated by a vertex algebra.
// ---------------------------------------------------------------------------

/// Generate the tree-indexed family of singular multilinear maps from the
/// vertex algebra's binary and ternary tables and verify, for every tree
/// with at most `max_leaves` leaves and height at most `max_height`:
/// (a) every derived map satisfies the membership constraints,
/// (b) refining the flat map onto the tree reproduces the derived map,
/// (c) plugging the vacuum into any leaf deletes it (unit law),
/// (d) flat maps are invariant under the symmetric-group action.
pub fn algebra_family_check(v: &VertexAlgebra, max_leaves: usize, max_height: usize) -> Report {
    use crate::multimaps::{
        check_membership, compose, from_vertex_operator, maps_equal, permute_flat, refine_map,
        vacuum_insert, vacuum_map, MultiError, SingularMultiMap,
    };
    use crate::trees::{enumerate_trees, graft, tree_format, Tree};

    let mut rep = Report::default();

    // Base maps.
    let f_vac = match vacuum_map(&v.module) {
        Ok(m) => m,
        Err(e) => {
            rep.push("family_setup", false, format!("vacuum map: {e}"));
            return rep;
        }
    };
    let f2 = match from_vertex_operator(v) {
        Ok(m) => m,
        Err(e) => {
            rep.push("family_setup", false, format!("binary map: {e}"));
            return rep;
        }
    };
    // Locality order across all basis pairs bounds the ternary table.
    let mut n_loc = 0;
    for a in 0..v.module.dim() {
        for b in 0..v.module.dim() {
            match check_locality(v, a, b, 2 * v.weight_cutoff) {
                Ok(n) => n_loc = n_loc.max(n),
                Err(e) => {
                    rep.push("family_setup", false, format!("locality ({a},{b}): {e}"));
                    return rep;
                }
            }
        }
    }
    let f3 = if max_leaves >= 3 {
        match crate::multimaps::build_ope(v, n_loc) {
            Ok(m) => Some(m),
            Err(e) => {
                rep.push("family_setup", false, format!("ternary map: {e}"));
                return rep;
            }
        }
    } else {
        None
    };
    let f1 = match vacuum_insert(&f2, 0, &vect_single(v.vacuum)) {
        Ok(m) => m,
        Err(e) => {
            rep.push("family_setup", false, format!("unary map: {e}"));
            return rep;
        }
    };
    // The zero-child node: all leaves of the unary map deleted.
    let f0 = match vacuum_insert(&f1, 0, &vect_single(v.vacuum)) {
        Ok(m) => m,
        Err(e) => {
            rep.push("family_setup", false, format!("nullary map: {e}"));
            return rep;
        }
    };
    rep.push("family_setup", true, format!("locality order {n_loc}"));

    // Derive f_p for an arbitrary tree by grafting into the flat maps.
    struct Builder<'a> {
        module: Arc<GModule>,
        f0: &'a SingularMultiMap,
        f1: &'a SingularMultiMap,
        f2: &'a SingularMultiMap,
        f3: Option<&'a SingularMultiMap>,
        memo: BTreeMap<String, SingularMultiMap>,
    }
    impl Builder<'_> {
        fn map_for(&mut self, t: &crate::trees::Tree) -> Result<SingularMultiMap, MultiError> {
            use crate::trees::Tree;
            if let Some(m) = self.memo.get(&crate::trees::tree_format(t)) {
                return Ok(m.clone());
            }
            let built = match t {
                Tree::Empty => crate::multimaps::vacuum_map(&self.module)?,
                Tree::Leaf => crate::multimaps::identity_map(&self.module),
                Tree::Node(cs) => {
                    let mut acc = match cs.len() {
                        0 => self.f0.clone(),
                        1 => self.f1.clone(),
                        2 => self.f2.clone(),
                        3 => match self.f3 {
                            Some(m) => m.clone(),
                            None => return Err(MultiError::IndexOutOfRange),
                        },
                        _ => return Err(MultiError::IndexOutOfRange),
                    };
                    for (i, c) in cs.iter().enumerate().rev() {
                        if *c == Tree::Leaf {
                            continue;
                        }
                        let inner = self.map_for(c)?;
                        acc = crate::multimaps::compose(&acc, i, &inner)?;
                    }
                    acc
                }
            };
            self.memo
                .insert(crate::trees::tree_format(t), built.clone());
            Ok(built)
        }
    }
    let mut builder = Builder {
        module: v.module.clone(),
        f0: &f0,
        f1: &f1,
        f2: &f2,
        f3: f3.as_ref(),
        memo: BTreeMap::new(),
    };

    let trees = enumerate_trees(max_leaves, max_height);
    let mut family: Vec<(Tree, SingularMultiMap)> = Vec::new();
    for t in &trees {
        match builder.map_for(t) {
            Ok(m) => family.push((t.clone(), m)),
            Err(e) => {
                rep.push(
                    format!("derive[{}]", tree_format(t)),
                    false,
                    format!("{e}"),
                );
            }
        }
    }

    // (a) Membership of every derived map (and the vacuum map).
    let mut ok = true;
    let mut detail = String::new();
    for (t, m) in &family {
        let r = check_membership(m);
        if !r.passed() {
            ok = false;
            detail = format!("tree {}: {}", tree_format(t), r.render().replace('\n', "; "));
        }
    }
    if !check_membership(&f_vac).passed() {
        ok = false;
        detail = "vacuum map fails membership".into();
    }
    rep.push("closure_membership", ok, detail);

    // (b) Refinement closure: the flat map with the same leaf count refines
    // onto every derived tree.
    let mut ok = true;
    let mut detail = String::new();
    for (t, m) in &family {
        let n = t.leaf_count();
        let flat = Tree::flat(n);
        if *t == flat || *t == Tree::Leaf {
            continue;
        }
        let flat_map = match builder.map_for(&flat) {
            Ok(m) => m,
            Err(e) => {
                ok = false;
                detail = format!("flat {n}: {e}");
                continue;
            }
        };
        match refine_map(&flat_map, t, &m.vars) {
            Ok(refined) => {
                if !maps_equal(&refined, m) {
                    ok = false;
                    detail = format!("tree {} differs from refined flat", tree_format(t));
                }
            }
            Err(e) => {
                ok = false;
                detail = format!("tree {}: {e}", tree_format(t));
            }
        }
    }
    rep.push("closure_refinement", ok, detail);

    // (c) Unit law: composing any leaf with the vacuum map deletes it.
    let mut ok = true;
    let mut detail = String::new();
    for (t, m) in &family {
        for k in 0..t.leaf_count() {
            let composed = match compose(m, k, &f_vac) {
                Ok(c) => c,
                Err(e) => {
                    ok = false;
                    detail = format!("tree {} leaf {k}: {e}", tree_format(t));
                    continue;
                }
            };
            let expected_tree = match graft(t, &[(k, Tree::Empty)]) {
                Ok(t2) => t2,
                Err(e) => {
                    ok = false;
                    detail = format!("tree {} leaf {k}: {e}", tree_format(t));
                    continue;
                }
            };
            if composed.tree != expected_tree {
                ok = false;
                detail = format!(
                    "tree {} leaf {k}: got tree {}, expected {}",
                    tree_format(t),
                    tree_format(&composed.tree),
                    tree_format(&expected_tree)
                );
                continue;
            }
            match builder.map_for(&expected_tree) {
                Ok(expected) => {
                    // Edge variables of the composite keep their names from
                    // the parent tree; align them positionally.
                    let composed = match crate::multimaps::rename_vars(
                        &composed,
                        &expected.window.vars,
                    ) {
                        Ok(c) => c,
                        Err(e) => {
                            ok = false;
                            detail =
                                format!("tree {} leaf {k}: rename: {e}", tree_format(t));
                            continue;
                        }
                    };
                    if !maps_equal(&composed, &expected) {
                        ok = false;
                        detail =
                            format!("tree {} leaf {k}: unit law fails", tree_format(t));
                    }
                }
                Err(e) => {
                    ok = false;
                    detail = format!("tree {} leaf {k}: expected map: {e}", tree_format(t));
                }
            }
        }
    }
    rep.push("unit_law", ok, detail);

    // (d) Symmetric-group invariance of the flat maps.
    let mut ok = true;
    let mut detail = String::new();
    let mut flats: Vec<&SingularMultiMap> = vec![&f2];
    if let Some(f3) = f3.as_ref() {
        flats.push(f3);
    }
    for m in flats {
        let k = m.inputs.len();
        // All permutations of 0..k by repeated insertion.
        let mut perms: Vec<Vec<usize>> = vec![vec![0]];
        for i in 1..k {
            let mut next = Vec::new();
            for p in &perms {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, i);
                    next.push(q);
                }
            }
            perms = next;
        }
        perms.sort();
        for p in &perms {
            match permute_flat(m, p) {
                Ok(moved) => {
                    if !maps_equal(&moved, m) {
                        ok = false;
                        detail = format!("flat {k} not invariant under {p:?}");
                    }
                }
                Err(e) => {
                    ok = false;
                    detail = format!("flat {k} permutation {p:?}: {e}");
                }
            }
        }
    }
    rep.push("symmetric_action", ok, detail);

    rep
}

#[cfg(test)]
mod tests;
