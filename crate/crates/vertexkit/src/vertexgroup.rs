//! The classical vertex group: the singular-function ring `K` (Laurent
//! polynomials in one variable within a window) with its divided-power
//! action, antipode, and the dual pairing against `H`.
//!
//! `K` reuses the series kernel: a `KElement` is a single-variable scalar
//! `LocalizedSeries` whose floor may be negative.  The trivial vertex group
//! (`K = H^*`, no negative exponents, no difference pairs) is the same type
//! constrained by a window with floor `0`.

use num::Zero;
use thiserror::Error;

use crate::hopf::HopfElement;
use crate::series::{
    vect_scale, vect_single, GModule, LocalizedSeries, Mono, TruncationWindow,
};
use crate::util::{binom, Rat};

/// A Laurent polynomial in one variable within a window.
pub type KElement = LocalizedSeries;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KError {
    #[error("pairing is undefined against negative exponents")]
    NegativeExponent,
}

/// A fresh single-variable window for `K`.
pub fn k_window(var: &str, ceiling: i64, floor: i64) -> TruncationWindow {
    TruncationWindow::new(vec![var.to_string()], ceiling).with_floor(var, floor)
}

/// The monomial `x^i` as a `KElement`.
pub fn k_monomial(window: &TruncationWindow, i: i64) -> KElement {
    let mut s = LocalizedSeries::zero(window.clone(), GModule::scalar());
    s.insert(Mono { vexp: vec![i], dexp: vec![] }, vect_single(0));
    s
}

/// `D(j) . x^i = C(i, j) x^(i-j)`, extended bilinearly.  For negative `i`
/// the generalized binomial applies: `C(i, j) = (-1)^j C(j-i-1, j)`.
/// The window ceiling drops by the largest divided-power index.
pub fn k_act(h: &HopfElement, k: &KElement) -> KElement {
    debug_assert_eq!(k.window.vars.len(), 1);
    let max_j = h.terms().map(|(j, _)| j as i64).max().unwrap_or(0);
    let mut window = k.window.clone();
    window.ceiling -= max_j;
    let mut out = LocalizedSeries::zero(window, k.module.clone());
    for (j, cj) in h.terms() {
        let j = j as i64;
        for (m, v) in &k.terms {
            let i = m.vexp[0];
            let c = binom(i, j) * cj;
            if c.is_zero() {
                continue;
            }
            out.insert(
                Mono { vexp: vec![i - j], dexp: vec![] },
                vect_scale(v, &c),
            );
        }
    }
    out
}

/// `S(x^i) = (-1)^i x^i`, extended linearly.
pub fn k_antipode(k: &KElement) -> KElement {
    let mut out = LocalizedSeries::zero(k.window.clone(), k.module.clone());
    for (m, v) in &k.terms {
        let i = m.vexp[0];
        out.insert(m.clone(), vect_scale(v, &crate::util::sign(i)));
    }
    out
}

/// `<D(i), sum r_k x^k> = sum coeff_h(i) * r_i`, defined only on the
/// non-negative part of `K`.
pub fn pairing(h: &HopfElement, f: &KElement) -> Result<Rat, KError> {
    if f.terms.keys().any(|m| m.vexp[0] < 0) {
        return Err(KError::NegativeExponent);
    }
    let mut acc = Rat::zero();
    for (i, c) in h.terms() {
        let m = Mono { vexp: vec![i as i64], dexp: vec![] };
        if let Some(v) = f.terms.get(&m) {
            if let Some(r) = v.get(&0) {
                acc += c * r;
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hopf::{hopf_comul, hopf_mul};
    use crate::series::{eq_within, series_mul};
    use crate::util::rat;

    fn w() -> TruncationWindow {
        k_window("x", 8, -8)
    }

    #[test]
    fn divided_action_examples() {
        let w = w();
        // D(1) . x^-1 = -x^-2
        let a = k_act(&HopfElement::d(1), &k_monomial(&w, -1));
        assert_eq!(a.terms, k_monomial(&a.window, -2).neg().terms);
        // D(0) fixes everything.
        for i in -3..4 {
            let a = k_act(&HopfElement::d(0), &k_monomial(&w, i));
            assert_eq!(a.terms, k_monomial(&w, i).terms);
        }
        // D(2) . x^3 = 3x
        let a = k_act(&HopfElement::d(2), &k_monomial(&w, 3));
        assert_eq!(a.terms, k_monomial(&a.window, 1).scale(&rat(3)).terms);
    }

    #[test]
    fn antipode_involution_and_sign() {
        let w = w();
        let a = k_antipode(&k_monomial(&w, -3));
        assert_eq!(a.terms, k_monomial(&w, -3).neg().terms);
        assert_eq!(k_antipode(&k_monomial(&w, 0)).terms, k_monomial(&w, 0).terms);
        for i in -4..5 {
            let m = k_monomial(&w, i);
            assert_eq!(k_antipode(&k_antipode(&m)).terms, m.terms);
        }
    }

    #[test]
    fn antipode_is_an_algebra_antihomomorphism() {
        let w = w();
        for i in -3..3 {
            for j in -3..3 {
                let a = k_monomial(&w, i);
                let b = k_monomial(&w, j);
                let lhs = k_antipode(&series_mul(&a, &b).unwrap());
                let rhs = series_mul(&k_antipode(&b), &k_antipode(&a)).unwrap();
                assert!(eq_within(&lhs, &rhs), "i={i} j={j}");
            }
        }
    }

    #[test]
    fn pairing_examples() {
        let w = w();
        assert_eq!(pairing(&HopfElement::d(2), &k_monomial(&w, 2)).unwrap(), rat(1));
        assert_eq!(pairing(&HopfElement::d(1), &k_monomial(&w, 0)).unwrap(), rat(0));
        let f = crate::series::series_add(
            &k_monomial(&w, 0).scale(&rat(3)),
            &k_monomial(&w, 1),
        )
        .unwrap();
        assert_eq!(pairing(&HopfElement::d(0), &f).unwrap(), rat(3));
        assert_eq!(
            pairing(&HopfElement::d(0), &k_monomial(&w, -1)).unwrap_err(),
            KError::NegativeExponent
        );
    }

    /// Translation closure: the direct action on a product agrees with the
    /// Sweedler-diagonal route through the comultiplication.
    #[test]
    fn translation_closure() {
        let w = w();
        for i1 in -3..4 {
            for i2 in -3..4 {
                for j in 0..5u32 {
                    let prod = series_mul(&k_monomial(&w, i1), &k_monomial(&w, i2)).unwrap();
                    let direct = k_act(&HopfElement::d(j), &prod);
                    // Closed form: C(i1+i2, j) x^(i1+i2-j).
                    let closed = k_monomial(&direct.window, i1 + i2 - j as i64)
                        .scale(&binom(i1 + i2, j as i64));
                    assert!(eq_within(&direct, &closed), "direct i1={i1} i2={i2} j={j}");
                    // Sweedler route.
                    let mut acc =
                        LocalizedSeries::zero(direct.window.clone(), direct.module.clone());
                    for (l, r, c) in hopf_comul(&HopfElement::d(j)) {
                        let fa = k_act(&l, &k_monomial(&w, i1));
                        let fb = k_act(&r, &k_monomial(&w, i2));
                        let mut p = series_mul(&fa, &fb).unwrap().scale(&c);
                        p.window.ceiling = p.window.ceiling.min(acc.window.ceiling);
                        acc = crate::series::series_add(&acc, &p).unwrap();
                    }
                    assert!(eq_within(&acc, &direct), "sweedler i1={i1} i2={i2} j={j}");
                }
            }
        }
    }

    /// On the non-negative part, the action is the transpose of
    /// multiplication in `H` through the pairing.
    #[test]
    fn action_transposes_multiplication() {
        let w = w();
        for i in 0..6u32 {
            for j in 0..5u32 {
                for k in 0..6 {
                    let f = k_monomial(&w, k);
                    let lhs = pairing(&HopfElement::d(i), &k_act(&HopfElement::d(j), &f)).unwrap();
                    let rhs = pairing(&hopf_mul(&HopfElement::d(i), &HopfElement::d(j)), &f)
                        .unwrap();
                    assert_eq!(lhs, rhs, "i={i} j={j} k={k}");
                }
            }
        }
    }
}
