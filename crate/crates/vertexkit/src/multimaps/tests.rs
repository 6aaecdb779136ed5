use super::*;
use crate::series::{parse_series, series_derive};
use crate::valg::{check_locality, free_boson, from_comm_alg};

fn poly_va() -> VertexAlgebra {
    from_comm_alg(&GModule::poly(4)).unwrap()
}

#[test]
fn identity_and_vacuum_are_members() {
    let (m, _) = crate::valg::boson_module(3);
    let id = identity_map(&m);
    let rep = check_membership(&id);
    assert!(rep.passed(), "{}", rep.render());
    let vac = vacuum_map(&m).unwrap();
    let rep = check_membership(&vac);
    assert!(rep.passed(), "{}", rep.render());
    // A module whose designated vacuum is not T-annihilated has no vacuum map.
    let (fresh, _) = crate::valg::boson_module(2);
    let mut bad = std::sync::Arc::try_unwrap(fresh).ok().unwrap();
    bad.vacuum = bad.basis_index("a1"); // T(a1) = a2 != 0
    assert_eq!(
        vacuum_map(&std::sync::Arc::new(bad)).unwrap_err(),
        MultiError::NotVacuum
    );
}

#[test]
fn binary_map_from_holomorphic_model() {
    let v = poly_va();
    let f = from_vertex_operator(&v).unwrap();
    let rep = check_membership(&f);
    assert!(rep.passed(), "{}", rep.render());
    // f(t (x) t) = (t+x)(t+y) = t^2 + t x + t y + x y.
    let t1 = v.module.basis_index("t1").unwrap();
    let e = f.entry(&[t1, t1]);
    let want = parse_series("t2 + t1*x + t1*y + x*y", &e.window, &v.module).unwrap();
    assert!(eq_within(&e, &want), "got {e}");
}

#[test]
fn binary_map_from_free_boson() {
    let v = free_boson(4);
    let f = from_vertex_operator(&v).unwrap();
    let rep = check_membership(&f);
    assert!(rep.passed(), "{}", rep.render());
}

#[test]
fn broken_leaf_constraint_detected() {
    let v = poly_va();
    let mut f = from_vertex_operator(&v).unwrap();
    // Corrupt one entry so f(Ta (x) b) != d/dx f(a (x) b).
    let t1 = v.module.basis_index("t1").unwrap();
    let t2 = v.module.basis_index("t2").unwrap();
    let key = vec![t2, t1];
    let mut e = f.table.get(&key).unwrap().clone();
    let m = Mono::unit(&e.window);
    e.insert(m, vect_single(0));
    f.table.insert(key, e);
    let rep = check_membership(&f);
    assert!(!rep.passed());
    assert!(rep
        .items
        .iter()
        .any(|i| i.name == "leaf_constraints" && !i.pass));
}

#[test]
fn vertex_operator_round_trip() {
    for v in [poly_va(), free_boson(4)] {
        let f = from_vertex_operator(&v).unwrap();
        let got = to_vertex_operator(&f, "x").unwrap();
        for i in 0..v.module.dim() {
            for j in 0..v.module.dim() {
                let want = v.field(i, j);
                let have = got.get(&(i, j)).cloned().unwrap_or_default();
                assert_eq!(have, want, "i={i} j={j}");
            }
        }
    }
}

#[test]
fn compose_with_identity_is_identity() {
    let v = poly_va();
    let f = from_vertex_operator(&v).unwrap();
    let id = identity_map(&v.module);
    for slot in 0..2 {
        let g = compose(&f, slot, &id).unwrap();
        assert!(maps_equal(&g, &f), "slot {slot}");
        assert_eq!(g.tree, f.tree);
    }
}

#[test]
fn compose_two_binary_maps_left3() {
    let v = poly_va();
    let f = from_vertex_operator(&v).unwrap();
    let g = compose(&f, 0, &f).unwrap();
    assert_eq!(tree_format(&g.tree), "((..).)");
    assert_eq!(g.vars.names, vec!["x", "x.1", "y.1", "y"]);
    let rep = check_membership(&g);
    assert!(rep.passed(), "{}", rep.render());
    // The composite satisfies the internal-node chain rule directly:
    // d/d(x) entry = d/d(x.1) entry + d/d(y.1) entry.
    let t1 = v.module.basis_index("t1").unwrap();
    let e = g.entry(&[t1, t1, t1]);
    let dx = series_derive(&e, "x").unwrap();
    let d1 = series_derive(&e, "x.1").unwrap();
    let d2 = series_derive(&e, "y.1").unwrap();
    let rhs = series_add(&d1, &d2).unwrap();
    assert!(eq_within(&dx, &rhs));
}

#[test]
fn compose_rejects_bad_inner() {
    let v = poly_va();
    let f = from_vertex_operator(&v).unwrap();
    let mut g = f.clone();
    g.fully_invariant = false;
    assert_eq!(compose(&f, 0, &g).unwrap_err(), MultiError::NotInvariantInner);
    let (boson_mod, _) = crate::valg::boson_module(3);
    let id_other = identity_map(&boson_mod);
    assert_eq!(
        compose(&f, 0, &id_other).unwrap_err(),
        MultiError::ModuleMismatch
    );
    assert_eq!(compose(&f, 5, &f).unwrap_err(), MultiError::IndexOutOfRange);
}

#[test]
fn ope_refines_to_composition_holomorphic() {
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let composed = compose(&f2, 0, &f2).unwrap();
    let flat3 = build_ope(&v, 0).unwrap();
    let rep = check_membership(&flat3);
    assert!(rep.passed(), "{}", rep.render());
    let left3 = tree_parse("((..).)").unwrap();
    let refined = refine_map(&flat3, &left3, &composed.vars).unwrap();
    let rep = check_membership(&refined);
    assert!(rep.passed(), "{}", rep.render());
    assert!(maps_equal(&refined, &composed));
}

#[test]
fn ope_refines_to_composition_free_boson() {
    let v = free_boson(3);
    // Locality order over all basis pairs.
    let mut n = 0;
    for a in 0..v.module.dim() {
        for b in 0..v.module.dim() {
            n = n.max(check_locality(&v, a, b, 8).unwrap());
        }
    }
    let f2 = from_vertex_operator(&v).unwrap();
    let composed = compose(&f2, 0, &f2).unwrap();
    let flat3 = build_ope(&v, n).unwrap();
    let left3 = tree_parse("((..).)").unwrap();
    let refined = refine_map(&flat3, &left3, &composed.vars).unwrap();
    assert!(maps_equal(&refined, &composed));
    // Too-small order is rejected.
    assert_eq!(build_ope(&v, 0).unwrap_err(), MultiError::LocalityOrderTooSmall);
}

#[test]
fn refine_rejects_non_refinement() {
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let left3 = tree_parse("((..).)").unwrap();
    assert_eq!(
        refine_map(&f2, &left3, &EdgeVarAssignment::default_for(&left3)).unwrap_err(),
        MultiError::NotARefinement
    );
}

#[test]
fn stem_refinement_round_trip() {
    // flat2 -> stem tree ((..)) and back: bijective within window.
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let stem = tree_parse("((..))").unwrap();
    let qvars = EdgeVarAssignment::named(vec!["s".into(), "x".into(), "y".into()]);
    let refined = refine_map(&f2, &stem, &qvars).unwrap();
    let rep = check_membership(&refined);
    assert!(rep.passed(), "{}", rep.render());
    // Invert: set the stem variable to zero.
    for (key, entry) in &f2.table {
        let re = refined.table.get(key).unwrap();
        let back = restrict_zero(re, "s").unwrap();
        assert!(eq_within(&back, entry), "key {key:?}");
    }
}

#[test]
fn vacuum_insert_gives_exponential() {
    // Vacuum in slot 0 of the binary map: a |-> e^{Ty} a.
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let g = vacuum_insert(&f2, 0, &vect_single(v.vacuum)).unwrap();
    assert_eq!(tree_format(&g.tree), "(.)");
    assert_eq!(g.vars.names, vec!["y"]);
    let rep = check_membership(&g);
    assert!(rep.passed(), "{}", rep.render());
    for b in 0..v.module.dim() {
        let got = g.entry(&[b]);
        let want = crate::series::exp_t(&v.module, &vect_single(b), "y", &got.window).unwrap();
        assert!(eq_within(&got, &want), "b={b}");
    }
}

#[test]
fn vacuum_insert_slot2_then_restrict_is_identity() {
    // Vacuum in slot 1 of the free-boson map, then x = 0: identity on states.
    let v = free_boson(3);
    let f2 = from_vertex_operator(&v).unwrap();
    let g = vacuum_insert(&f2, 1, &vect_single(v.vacuum)).unwrap();
    for a in 0..v.module.dim() {
        let e = g.entry(&[a]);
        let at0 = restrict_zero(&e, "x").unwrap();
        let m = Mono::unit(&at0.window);
        assert_eq!(at0.terms.get(&m), Some(&vect_single(a)), "a={a}");
        assert_eq!(at0.terms.len(), 1);
    }
}

#[test]
fn vacuum_insert_rejections() {
    let v = free_boson(3);
    let f2 = from_vertex_operator(&v).unwrap();
    let a1 = v.module.basis_index("a1").unwrap();
    // Not a vacuum vector.
    assert_eq!(
        vacuum_insert(&f2, 0, &vect_single(a1)).unwrap_err(),
        MultiError::NotVacuum
    );
    // A genuinely singular table against the vacuum slot.
    let mut bad = f2.clone();
    for (key, e) in bad.table.iter_mut() {
        if key[0] == v.vacuum {
            let mut m = Mono::unit(&e.window);
            m.dexp[0] = -1;
            e.insert(m, vect_single(0));
        }
    }
    assert_eq!(
        vacuum_insert(&bad, 0, &vect_single(v.vacuum)).unwrap_err(),
        MultiError::ResidualSingularity
    );
}

#[test]
fn evaluate_partial_leaves_and_interior() {
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let t1 = v.module.basis_index("t1").unwrap();
    let t2 = v.module.basis_index("t2").unwrap();
    // Evaluate both slots: the residual 0-ary table is the entry restricted
    // at both variables' zero... no: evaluation only specializes module
    // slots, the variables are restricted to zero by definition.
    let g = evaluate_partial(
        &f2,
        &[
            (EvalSlot::Leaf(0), vect_single(t1)),
            (EvalSlot::Leaf(1), vect_single(t2)),
        ],
    )
    .unwrap();
    let e = g.entry(&[]);
    // f(t, t^2)|_{x=y=0} = t^3.
    let t3 = v.module.basis_index("t3").unwrap();
    let m = Mono::unit(&e.window);
    assert_eq!(e.terms.get(&m), Some(&vect_single(t3)));
    // Interior evaluation is rejected for localized maps.
    let boson = free_boson(3);
    let fb = from_vertex_operator(&boson).unwrap();
    let left = compose(&fb, 0, &fb).unwrap();
    assert_eq!(
        evaluate_partial(&left, &[(EvalSlot::Interior(vec![0]), vect_single(0))])
            .unwrap_err(),
        MultiError::EvalAtLocalizedSlot
    );
    // Evaluating one slot of left3 leaves a 2-leaf-shaped member-like map.
    let part = evaluate_partial(&left, &[(EvalSlot::Leaf(2), vect_single(boson.vacuum))]).unwrap();
    assert_eq!(part.inputs.len(), 2);
    assert_eq!(part.tree.leaf_count(), 2);
}

#[test]
fn flat_permutation_symmetry() {
    for v in [poly_va(), free_boson(3)] {
        let f2 = from_vertex_operator(&v).unwrap();
        let swapped = permute_flat(&f2, &[1, 0]).unwrap();
        assert!(maps_equal(&swapped, &f2));
    }
}

#[test]
fn scope_violation_detected() {
    // A left3 map whose inner singular exponent varies with the out-of-scope
    // third index.
    let v = free_boson(3);
    let fb = from_vertex_operator(&v).unwrap();
    let mut left = compose(&fb, 0, &fb).unwrap();
    let a1 = v.module.basis_index("a1").unwrap();
    // The pair (x.1, y.1) has scope {0, 1}; make its support depend on leaf 2.
    let key = vec![a1, a1, a1];
    let mut e = left.table.get(&key).unwrap().clone();
    let p = e
        .window
        .pair_index(
            e.window.var_index("x.1").unwrap(),
            e.window.var_index("y.1").unwrap(),
        )
        .unwrap()
        .0;
    let mut m = Mono::unit(&e.window);
    m.dexp[p] = -5;
    e.insert(m, vect_single(0));
    left.table.insert(key, e);
    let rep = check_membership(&left);
    assert!(rep
        .items
        .iter()
        .any(|i| i.name == "singularity_scopes" && !i.pass));
}

#[test]
fn multimap_file_round_trip() {
    let v = poly_va();
    let f2 = from_vertex_operator(&v).unwrap();
    let text = write_multimap(&f2);
    let module = v.module.clone();
    let resolve = move |name: &str| {
        if name == module.name {
            Some(module.clone())
        } else {
            None
        }
    };
    let back = read_multimap(&text, &resolve).unwrap();
    assert!(maps_equal(&back, &f2));
    assert_eq!(back.fully_invariant, f2.fully_invariant);
    assert_eq!(back.tree, f2.tree);
    assert_eq!(write_multimap(&back), text);
}

#[test]
fn ope_expansions_reproduce_both_orderings() {
    let v = free_boson(3);
    let mut n = 0;
    for a in 0..v.module.dim() {
        for b in 0..v.module.dim() {
            n = n.max(check_locality(&v, a, b, 8).unwrap());
        }
    }
    let g = build_ope(&v, n).unwrap();
    let a1 = v.module.basis_index("a1").unwrap();
    for (c_idx, sub, orders) in [(a1, "y", true), (a1, "x", false)] {
        // Restrict z = 0 (after expanding the z-pairs), expand (x-y) with the
        // given subordinate variable, and compare against the double field.
        let e = g.entry(&[a1, a1, c_idx]);
        let mut e2 = e.clone();
        // Deepen the x and y floors so the z-subordinate expansions and the
        // final (x-y) expansion stay inside the window.
        e2.window.floors[0] = -4 * v.weight_cutoff;
        e2.window.floors[1] = -4 * v.weight_cutoff;
        let e2 = expand_diff(&e2, ("x", "z"), "z").unwrap();
        let e2 = expand_diff(&e2, ("y", "z"), "z").unwrap();
        let e2 = restrict_zero(&e2, "z").unwrap();
        let e2 = expand_diff(&e2, ("x", "y"), sub).unwrap();
        let u = if orders {
            crate::valg::double_field(&v, a1, a1, c_idx)
        } else {
            crate::valg::double_field(&v, a1, a1, c_idx)
        };
        // Compare the cells that are reliable on both sides.
        let wa = v.module.weight[a1];
        let cap = v.weight_cutoff - wa - v.module.weight[c_idx];
        for ((mx, my), vect) in &u {
            if *mx > cap || *my > cap || mx + my > e2.window.ceiling {
                continue;
            }
            let m = Mono {
                vexp: vec![*mx, *my],
                dexp: vec![0],
            };
            let got = e2.terms.get(&m).cloned().unwrap_or_default();
            assert_eq!(&got, vect, "sub={sub} cell=({mx},{my})");
        }
    }
}
