//! Tree-indexed singular multilinear maps over weight-truncated modules.
//!
//! A `SingularMultiMap` on a tree assigns to every tuple of input basis
//! vectors (one per leaf) a `LocalizedSeries` in the tree's edge variables.
//! Singular difference symbols are restricted to pairs of incoming edges of
//! a common internal node, with dependence scopes; internal nodes impose the
//! chain-rule constraint `sum of incoming derivatives = outgoing derivative`,
//! leaves tie the module translation on that slot to the derivative of the
//! leaf variable, and fully invariant maps additionally satisfy the root
//! constraint `T (output) = sum of root-children derivatives`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::series::{
    eq_within, exp_t_mul, expand_diff, joint_degree, pair_pole_order,
    restrict_zero,
    series_add, series_derive,
    shift_vars, t_apply, vect_add_assign, vect_scale, vect_single, GModule, LocalizedSeries,
    Mono, SeriesError, SignedVars, TruncationWindow, Vect,
};
use crate::trees::{
    allowed_singularities, edges, graft, is_refinement, node_edge_structure, tree_format,
    tree_parse, EdgeVarAssignment, NodePath, Tree,
};
use crate::util::{binom, sign};
use crate::valg::{Field, Report, VertexAlgebra};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MultiError {
    #[error("inner map is not fully invariant")]
    NotInvariantInner,
    #[error("module mismatch between composed slots")]
    ModuleMismatch,
    #[error("composed truncation window has negative ceiling")]
    WindowUnderflow,
    #[error("target tree is not refined by the map's tree")]
    NotARefinement,
    #[error("inserted vector is not translation-invariant")]
    NotVacuum,
    #[error("a singularity survives against the removed slot")]
    ResidualSingularity,
    #[error("cannot evaluate at an interior slot of a localized map")]
    EvalAtLocalizedSlot,
    #[error("slot index out of range")]
    IndexOutOfRange,
    #[error("locality order too small for this table")]
    LocalityOrderTooSmall,
    #[error("series error: {0}")]
    Series(#[from] SeriesError),
    #[error("parse error: {0}")]
    Parse(String),
}

/// A singular multilinear map indexed by a tree.
#[derive(Clone, Debug)]
pub struct SingularMultiMap {
    pub tree: Tree,
    pub vars: EdgeVarAssignment,
    pub inputs: Vec<Arc<GModule>>,
    pub output: Arc<GModule>,
    /// Reference window (variables and declared pairs); individual entries
    /// may carry smaller ceilings or visibility floors.
    pub window: TruncationWindow,
    /// One series per tuple of input basis indices (one index per leaf).
    pub table: BTreeMap<Vec<usize>, LocalizedSeries>,
    pub fully_invariant: bool,
}

/// Build the standard window for a tree: edge variables in preorder, floors
/// zero, all allowed singularity pairs declared with the given floor.
pub fn window_for_tree(
    tree: &Tree,
    vars: &EdgeVarAssignment,
    ceiling: i64,
    diff_floor: i64,
) -> TruncationWindow {
    let mut w = TruncationWindow::new(vars.names.clone(), ceiling);
    for s in allowed_singularities(tree, vars) {
        if w.pair_index(
            w.var_index(&s.vars.0).unwrap(),
            w.var_index(&s.vars.1).unwrap(),
        )
        .is_none()
        {
            w = w.with_pair(&s.vars.0, &s.vars.1, diff_floor);
        }
    }
    w
}

impl SingularMultiMap {
    pub fn entry(&self, key: &[usize]) -> LocalizedSeries {
        self.table
            .get(key)
            .cloned()
            .unwrap_or_else(|| LocalizedSeries::zero(self.window.clone(), self.output.clone()))
    }

    pub fn leaf_var(&self, leaf: usize) -> Option<String> {
        crate::trees::leaf_edge_var(&self.tree, &self.vars, leaf)
    }

    fn all_keys(&self) -> Vec<Vec<usize>> {
        let mut keys = vec![vec![]];
        for m in &self.inputs {
            let mut next = Vec::new();
            for k in keys {
                for b in 0..m.dim() {
                    let mut k2 = k.clone();
                    k2.push(b);
                    next.push(k2);
                }
            }
            keys = next;
        }
        keys
    }
}

/// The identity map on the single-leaf tree: `a -> a`.
pub fn identity_map(module: &Arc<GModule>) -> SingularMultiMap {
    let tree = Tree::Leaf;
    let vars = EdgeVarAssignment::named(vec![]);
    let window = TruncationWindow::new(vec![], 1 << 40);
    let mut table = BTreeMap::new();
    for b in 0..module.dim() {
        let mut s = LocalizedSeries::constant(window.clone(), module.clone(), vect_single(b));
        if module.t_lowers {
            s.homog = joint_degree(&s);
        }
        table.insert(vec![b], s);
    }
    SingularMultiMap {
        tree,
        vars,
        inputs: vec![module.clone()],
        output: module.clone(),
        window,
        table,
        fully_invariant: true,
    }
}

/// The vacuum map on the empty tree: the constant `|0>`.
pub fn vacuum_map(module: &Arc<GModule>) -> Result<SingularMultiMap, MultiError> {
    let vac = module.vacuum.ok_or(MultiError::NotVacuum)?;
    if !module.t_vect(&vect_single(vac)).is_empty() {
        return Err(MultiError::NotVacuum);
    }
    let window = TruncationWindow::new(vec![], 1 << 40);
    let mut s = LocalizedSeries::constant(window.clone(), module.clone(), vect_single(vac));
    if module.t_lowers {
        s.homog = joint_degree(&s);
    }
    let mut table = BTreeMap::new();
    table.insert(vec![], s);
    Ok(SingularMultiMap {
        tree: Tree::Empty,
        vars: EdgeVarAssignment::named(vec![]),
        inputs: vec![],
        output: module.clone(),
        window,
        table,
        fully_invariant: true,
    })
}

// ---------------------------------------------------------------------------
// Membership.
// ---------------------------------------------------------------------------

/// Apply the output module's `T` to an entry.  For weight-lowering modules
/// the masking machinery of `t_apply` is used; for raising modules the top
/// total-degree cell is dropped instead, since its coefficients have
/// `T`-images above the cutoff.
fn t_entry(entry: &LocalizedSeries) -> LocalizedSeries {
    if entry.module.t_lowers {
        return t_apply(entry);
    }
    let mut w = entry.window.clone();
    w.ceiling -= 1;
    let mut out = LocalizedSeries::zero(w, entry.module.clone());
    for (m, v) in &entry.terms {
        out.insert(m.clone(), entry.module.t_vect(v));
    }
    out
}

/// Verify the defining constraints of the map class; every violation is
/// reported with its location.
pub fn check_membership(f: &SingularMultiMap) -> Report {
    let mut rep = Report::default();

    // Structural sanity: declared pairs must be allowed singularities.
    let allowed = allowed_singularities(&f.tree, &f.vars);
    let mut pairs_ok = true;
    let mut detail = String::new();
    for &(i, j) in &f.window.pairs {
        let a = &f.window.vars[i];
        let b = &f.window.vars[j];
        let found = allowed
            .iter()
            .any(|s| (s.vars.0 == *a && s.vars.1 == *b) || (s.vars.0 == *b && s.vars.1 == *a));
        if !found {
            pairs_ok = false;
            detail = format!("pair ({a},{b}) is not an allowed singularity");
        }
    }
    rep.push("allowed_singularities", pairs_ok, detail);

    // Scope constancy: the singular support of each pair may depend only on
    // in-scope leaves.  Group by in-scope indices; the support must agree
    // across out-of-scope indices.
    let mut scopes_ok = true;
    let mut detail = String::new();
    for s in &allowed {
        let (Some(i), Some(j)) = (f.window.var_index(&s.vars.0), f.window.var_index(&s.vars.1))
        else {
            continue;
        };
        let Some((p, _)) = f.window.pair_index(i, j) else {
            continue;
        };
        let n = f.inputs.len();
        let in_scope: Vec<usize> = (0..n).filter(|l| s.scope.contains(l)).collect();
        // Each present entry observes the pole order of the pair within
        // the limits of its own window: a pole of order k is expressible
        // only when the cell of total degree -k fits under the ceiling and
        // above the pair floor.
        struct Obs {
            ord: i64,
            ceil: i64,
            dfloor: i64,
        }
        let sees = |o: &Obs, k: i64| k == 0 || (-k <= o.ceil && -k >= o.dfloor);
        let mut by_in: BTreeMap<Vec<usize>, Vec<Obs>> = BTreeMap::new();
        for key in f.all_keys() {
            let Some(e) = f.table.get(&key) else { continue };
            // Presentations are not unique, so compare the semantic pole
            // order rather than the raw exponent support.
            let obs = Obs {
                ord: pair_pole_order(e, p),
                ceil: e.window.ceiling,
                dfloor: e
                    .window
                    .pair_index(i, j)
                    .map(|(q, _)| e.window.diff_floors[q])
                    .unwrap_or(i64::MIN),
            };
            let ik: Vec<usize> = in_scope.iter().map(|l| key[*l]).collect();
            by_in.entry(ik).or_default().push(obs);
        }
        for (ik, group) in by_in {
            for a in &group {
                for b in &group {
                    // A disagreement counts only when each window could
                    // have expressed the order the other one shows.
                    if a.ord != b.ord && sees(a, b.ord) && sees(b, a.ord) {
                        scopes_ok = false;
                        detail = format!(
                            "pair ({},{}) pole order varies outside its scope at in-scope key {ik:?}",
                            s.vars.0, s.vars.1
                        );
                    }
                }
            }
        }
    }
    rep.push("singularity_scopes", scopes_ok, detail);

    // Node constraints, re-run under every linear extension of the internal
    // vertex order (the constraints are order-independent; the re-run checks
    // coherence of the pullback presentation).
    let structure = node_edge_structure(&f.tree);
    let extensions = crate::trees::linear_extensions(&f.tree);
    let mut nodes_ok = true;
    let mut detail = String::new();
    let n_ext = extensions.len().max(1);
    for round in 0..n_ext {
        let ordered: Vec<&(NodePath, Vec<usize>, Option<usize>)> = if extensions.is_empty() {
            structure.iter().collect()
        } else {
            extensions[round]
                .iter()
                .filter_map(|p| structure.iter().find(|(q, _, _)| q == p))
                .collect()
        };
        for (node, incoming, outgoing) in ordered {
            let Some(out_e) = outgoing else { continue };
            for (key, entry) in &f.table {
                let mut lhs: Option<LocalizedSeries> = None;
                for e in incoming {
                    let d = match series_derive(entry, &f.window.vars[*e]) {
                        Ok(d) => d,
                        Err(_) => continue,
                    };
                    lhs = Some(match lhs {
                        None => d,
                        Some(acc) => series_add(&acc, &d).unwrap_or(acc),
                    });
                }
                let rhs = match series_derive(entry, &f.window.vars[*out_e]) {
                    Ok(d) => d,
                    Err(_) => continue,
                };
                let lhs = lhs.unwrap_or_else(|| {
                    LocalizedSeries::zero(rhs.window.clone(), f.output.clone())
                });
                if !eq_within(&lhs, &rhs) {
                    nodes_ok = false;
                    detail = format!("node {node:?} constraint fails at key {key:?}");
                }
            }
        }
        if !nodes_ok {
            break;
        }
    }
    rep.push("node_constraints", nodes_ok, detail);

    // Leaf constraints: d/d(leaf var) f(..., a, ...) = f(..., T a, ...).
    let mut leaves_ok = true;
    let mut detail = String::new();
    for leaf in 0..f.inputs.len() {
        let Some(lv) = f.leaf_var(leaf) else { continue };
        let module = &f.inputs[leaf];
        for key in f.all_keys() {
            // When T of this input lands above the weight cutoff it is stored
            // as zero; the constraint is not testable for such keys.
            if !module.t_lowers {
                if let Some(cut) = module.cutoff {
                    if module.weight[key[leaf]] + 1 > cut {
                        continue;
                    }
                }
            }
            let Some(entry) = f.table.get(&key) else { continue };
            let lhs = match series_derive(entry, &lv) {
                Ok(d) => d,
                Err(_) => continue,
            };
            let timg = module.t_vect(&vect_single(key[leaf]));
            let mut rhs = LocalizedSeries::zero(lhs.window.clone(), f.output.clone());
            rhs.homog = lhs.homog;
            rhs.vis_floor = lhs.vis_floor;
            for (c, coef) in &timg {
                let mut k2 = key.clone();
                k2[leaf] = *c;
                if let Some(e2) = f.table.get(&k2) {
                    let mut e2 = e2.scale(coef);
                    e2.window.ceiling = e2.window.ceiling.min(rhs.window.ceiling);
                    rhs = match series_add(&rhs, &e2) {
                        Ok(s) => s,
                        Err(_) => {
                            leaves_ok = false;
                            detail = format!("leaf {leaf} window clash at key {key:?}");
                            continue;
                        }
                    };
                }
            }
            if !eq_within(&lhs, &rhs) {
                leaves_ok = false;
                detail = format!("leaf {leaf} constraint fails at key {key:?}");
            }
        }
    }
    rep.push("leaf_constraints", leaves_ok, detail);

    // Root invariance for fully invariant maps (skipped for the bare leaf
    // tree, which has no augmentation structure).
    if f.fully_invariant && f.tree != Tree::Leaf {
        let root_incoming: Vec<usize> = structure
            .iter()
            .find(|(node, _, _)| node.is_empty())
            .map(|(_, inc, _)| inc.clone())
            .unwrap_or_default();
        let mut ok = true;
        let mut detail = String::new();
        for (key, entry) in &f.table {
            let lhs = t_entry(entry);
            let mut rhs: Option<LocalizedSeries> = None;
            for e in &root_incoming {
                if let Ok(d) = series_derive(entry, &f.window.vars[*e]) {
                    rhs = Some(match rhs {
                        None => d,
                        Some(acc) => series_add(&acc, &d).unwrap_or(acc),
                    });
                }
            }
            let rhs = rhs.unwrap_or_else(|| {
                LocalizedSeries::zero(entry.window.clone(), f.output.clone())
            });
            if !eq_within(&lhs, &rhs) {
                ok = false;
                detail = format!("root invariance fails at key {key:?}");
            }
        }
        rep.push("root_invariance", ok, detail);
    }

    rep
}

// ---------------------------------------------------------------------------
// Composition.
// ---------------------------------------------------------------------------

fn slot_leaf_edge(tree: &Tree, slot: usize) -> Option<usize> {
    edges(tree)
        .iter()
        .position(|e| e.to_leaf && e.leaves_above.contains(&slot))
}

/// Compose: plug `f` into input `slot` of `g`.  The inner map must be fully
/// invariant; its output module must match the slot's input module.
pub fn compose(
    g: &SingularMultiMap,
    slot: usize,
    f: &SingularMultiMap,
) -> Result<SingularMultiMap, MultiError> {
    if slot >= g.inputs.len() {
        return Err(MultiError::IndexOutOfRange);
    }
    if !f.fully_invariant {
        return Err(MultiError::NotInvariantInner);
    }
    if f.output != g.inputs[slot] {
        return Err(MultiError::ModuleMismatch);
    }
    if f.tree == Tree::Empty {
        // Composing with the vacuum map deletes the slot.
        let vac = f
            .table
            .get(&vec![])
            .and_then(|s| s.terms.get(&Mono::unit(&s.window)).cloned())
            .unwrap_or_default();
        return vacuum_insert(g, slot, &vac);
    }

    // Rename any colliding variable of f deterministically.
    let mut f = f.clone();
    let taken: BTreeSet<&String> = g.vars.names.iter().collect();
    let rename: BTreeMap<String, String> = f
        .vars
        .names
        .iter()
        .filter(|n| taken.contains(n))
        .map(|n| (n.clone(), format!("{n}.{}", slot + 1)))
        .collect();
    if !rename.is_empty() {
        for n in f.vars.names.iter_mut() {
            if let Some(r) = rename.get(n) {
                *n = r.clone();
            }
        }
        let fix = |w: &mut TruncationWindow| {
            for v in w.vars.iter_mut() {
                if let Some(r) = rename.get(v) {
                    *v = r.clone();
                }
            }
        };
        fix(&mut f.window);
        for s in f.table.values_mut() {
            fix(&mut s.window);
        }
    }

    // Grafted tree and spliced variable order.
    let tree = graft(&g.tree, &[(slot, f.tree.clone())]).map_err(|_| MultiError::IndexOutOfRange)?;
    let slot_edge = slot_leaf_edge(&g.tree, slot).ok_or(MultiError::IndexOutOfRange)?;
    let mut names = Vec::new();
    names.extend_from_slice(&g.vars.names[..=slot_edge]);
    names.extend_from_slice(&f.vars.names);
    names.extend_from_slice(&g.vars.names[slot_edge + 1..]);
    let vars = EdgeVarAssignment::named(names.clone());
    debug_assert_eq!(names.len(), tree.edge_count());

    // Combined window.
    let f_min = f
        .table
        .values()
        .filter_map(|s| s.min_total())
        .min()
        .unwrap_or(0);
    let g_min = g
        .table
        .values()
        .filter_map(|s| s.min_total())
        .min()
        .unwrap_or(0);
    // Per-entry ceilings are computed below; the shared window only needs to
    // contain them.  Underflow is only possible when an outer window was
    // already degenerate.
    let _ = (f_min, g_min);
    let ceiling = g.window.ceiling.max(f.window.ceiling);
    if g.window.ceiling < 0 || f.window.ceiling < 0 {
        return Err(MultiError::WindowUnderflow);
    }
    let mut window = TruncationWindow::new(names.clone(), ceiling);
    let copy_pairs = |window: &mut TruncationWindow, src: &TruncationWindow| {
        for (i, v) in src.vars.iter().enumerate() {
            let t = window.var_index(v).unwrap();
            window.floors[t] = src.floors[i];
        }
        for (p, &(i, j)) in src.pairs.iter().enumerate() {
            let a = src.vars[i].clone();
            let b = src.vars[j].clone();
            *window = window.clone().with_pair(&a, &b, src.diff_floors[p]);
        }
    };
    copy_pairs(&mut window, &g.window);
    copy_pairs(&mut window, &f.window);

    // Indices for monomial transport.
    let g_to_new: Vec<usize> = g
        .window
        .vars
        .iter()
        .map(|v| window.var_index(v).unwrap())
        .collect();
    let f_to_new: Vec<usize> = f
        .window
        .vars
        .iter()
        .map(|v| window.var_index(v).unwrap())
        .collect();
    let gp_to_new: Vec<usize> = g
        .window
        .pairs
        .iter()
        .map(|&(i, j)| {
            window
                .pair_index(g_to_new[i], g_to_new[j])
                .expect("pair copied")
                .0
        })
        .collect();
    let fp_to_new: Vec<usize> = f
        .window
        .pairs
        .iter()
        .map(|&(i, j)| {
            window
                .pair_index(f_to_new[i], f_to_new[j])
                .expect("pair copied")
                .0
        })
        .collect();

    // New inputs: g's inputs with the slot replaced by f's inputs.
    let mut inputs = Vec::new();
    inputs.extend_from_slice(&g.inputs[..slot]);
    inputs.extend_from_slice(&f.inputs);
    inputs.extend_from_slice(&g.inputs[slot + 1..]);

    let mut table = BTreeMap::new();
    let g_keys: Vec<Vec<usize>> = g.all_keys();
    for gkey in &g_keys {
        // Iterate over f's keys for the slot.
        for (fkey, fent) in &f.table {
            let mut new_key = Vec::new();
            new_key.extend_from_slice(&gkey[..slot]);
            new_key.extend_from_slice(fkey);
            new_key.extend_from_slice(&gkey[slot + 1..]);

            let mut out = LocalizedSeries::zero(window.clone(), g.output.clone());
            let mut ent_ceiling = i64::MAX;
            let mut homog: Option<i64> = None;
            let mut homog_set = false;
            let mut vis: Option<i64> = None;
            let mut any = false;
            for (mono_f, vect_f) in &fent.terms {
                for (c, coef) in vect_f {
                    let mut gk = gkey.clone();
                    gk[slot] = *c;
                    let Some(gent) = g.table.get(&gk) else { continue };
                    any = true;
                    let fmin = fent.min_total().unwrap_or(0);
                    let gmin = gent.min_total().unwrap_or(0);
                    ent_ceiling = ent_ceiling
                        .min(gent.window.ceiling.saturating_add(fmin))
                        .min(fent.window.ceiling.saturating_add(gmin));
                    if !f.output.t_lowers {
                        if let Some(cut) = f.output.cutoff {
                            // Inner components just above the cutoff are
                            // dropped, yet the outer map can respond to them
                            // at poles as deep as their weight plus the
                            // weight of the remaining inputs.  Everything at
                            // or above that total is suspect.
                            let wrest: i64 = gkey
                                .iter()
                                .enumerate()
                                .filter(|(j, _)| *j != slot)
                                .map(|(j, &k)| g.inputs[j].weight[k])
                                .sum();
                            ent_ceiling = ent_ceiling.min(
                                fent.window.ceiling.saturating_sub(cut + wrest + 1),
                            );
                        }
                    }
                    // The inner basis vector's weight is counted once in the
                    // inner entry's joint degree and once in the outer's; the
                    // composite's joint degree subtracts it back out.
                    let h = match (fent.homog, gent.homog) {
                        (Some(a), Some(b)) => Some(a + b - f.output.weight[*c]),
                        _ => None,
                    };
                    if !homog_set {
                        homog = h;
                        homog_set = true;
                    } else if homog != h {
                        homog = None;
                    }
                    let v = match (fent.vis_floor, gent.vis_floor) {
                        (None, None) => None,
                        (a, b) => Some(
                            a.map(|x| x + gmin).unwrap_or(i64::MIN).max(
                                b.map(|x| x + fmin).unwrap_or(i64::MIN),
                            ),
                        ),
                    };
                    vis = match (vis, v) {
                        (None, x) => x,
                        (x, None) => x,
                        (Some(a), Some(b)) => Some(a.max(b)),
                    };
                    for (mono_g, vect_g) in &gent.terms {
                        let mut vexp = vec![0i64; window.vars.len()];
                        let mut dexp = vec![0i64; window.pairs.len()];
                        for (i, e) in mono_f.vexp.iter().enumerate() {
                            vexp[f_to_new[i]] += e;
                        }
                        for (i, e) in mono_g.vexp.iter().enumerate() {
                            vexp[g_to_new[i]] += e;
                        }
                        for (i, e) in mono_f.dexp.iter().enumerate() {
                            dexp[fp_to_new[i]] += e;
                        }
                        for (i, e) in mono_g.dexp.iter().enumerate() {
                            dexp[gp_to_new[i]] += e;
                        }
                        out.insert(Mono { vexp, dexp }, vect_scale(vect_g, coef));
                    }
                }
            }
            if !any {
                continue;
            }
            out.window.ceiling = out.window.ceiling.min(ent_ceiling);
            // Re-filter against the final ceiling.
            out.terms.retain(|m, _| m.total() <= out.window.ceiling);
            if g.output.t_lowers {
                if let Some(cut) = g.output.cutoff {
                    if fent.vis_floor.unwrap_or(0) > 0 {
                        // The inner entry already lost coefficients above the
                        // cutoff; under a weight-lowering T those losses leak
                        // into every cell of the composite.  Mask the entry.
                        vis = Some(out.window.ceiling + 1);
                    } else if let Some(h) = homog {
                        vis = Some(vis.unwrap_or(i64::MIN).max(h - cut));
                    }
                }
            }
            out.homog = homog;
            out.vis_floor = vis;
            table.insert(new_key, out);
        }
    }

    Ok(SingularMultiMap {
        tree,
        vars,
        inputs,
        output: g.output.clone(),
        window,
        table,
        fully_invariant: g.fully_invariant && f.fully_invariant,
    })
}

// ---------------------------------------------------------------------------
// Refinement.
// ---------------------------------------------------------------------------

/// Contract the edges in `shrink` (indices into `edges(t)` preorder),
/// returning the contracted tree and the surviving edge indices in the
/// result's preorder.
fn contract(t: &Tree, shrink: &BTreeSet<usize>) -> (Tree, Vec<usize>) {
    fn rec(
        t: &Tree,
        counter: &mut usize,
        shrink: &BTreeSet<usize>,
        surviving: &mut Vec<usize>,
    ) -> Vec<Tree> {
        // Returns the list of subtrees this vertex contributes to its parent
        // (one, unless its edge was contracted).
        match t {
            Tree::Empty | Tree::Leaf => vec![t.clone()],
            Tree::Node(cs) => {
                let mut new_children = Vec::new();
                for c in cs {
                    let e = *counter;
                    *counter += 1;
                    let contracted_here = shrink.contains(&e) && !matches!(c, Tree::Leaf);
                    if contracted_here {
                        // The child's subtrees splice in here; its edge dies.
                        let mut sub_surv = Vec::new();
                        let subs = rec(c, counter, shrink, &mut sub_surv);
                        match subs.into_iter().next().unwrap() {
                            Tree::Node(gc_built) => {
                                // Rebuild: we need the child's contracted
                                // children, which rec returned as one tree.
                                new_children.extend(gc_built);
                            }
                            other => new_children.push(other),
                        }
                        surviving.extend(sub_surv);
                    } else {
                        surviving.push(e);
                        let mut sub_surv = Vec::new();
                        let subs = rec(c, counter, shrink, &mut sub_surv);
                        new_children.extend(subs);
                        surviving.extend(sub_surv);
                    }
                }
                vec![Tree::Node(new_children)]
            }
        }
    }
    let mut counter = 0usize;
    let mut surviving = Vec::new();
    match t {
        Tree::Node(_) => {
            let built = rec(t, &mut counter, shrink, &mut surviving);
            (built.into_iter().next().unwrap(), surviving)
        }
        other => (other.clone(), surviving),
    }
}

/// Transport a map from its (flatter) tree to the more structured tree `q`
/// with edge variables `qvars`: each old variable becomes the sum of the
/// surviving edge's variable and the variables of the contracted edges on
/// the path toward the root; singular powers are re-expanded accordingly.
pub fn refine_map(
    f: &SingularMultiMap,
    q: &Tree,
    qvars: &EdgeVarAssignment,
) -> Result<SingularMultiMap, MultiError> {
    if !is_refinement(&f.tree, q) {
        return Err(MultiError::NotARefinement);
    }
    let q_edges = edges(q);
    let shrinkable: Vec<usize> = q_edges
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.to_leaf)
        .map(|(k, _)| k)
        .collect();
    // Find a contraction subset that yields f.tree.
    let mut found: Option<(BTreeSet<usize>, Vec<usize>)> = None;
    for mask in 0..(1u32 << shrinkable.len()) {
        let s: BTreeSet<usize> = shrinkable
            .iter()
            .enumerate()
            .filter(|(b, _)| mask & (1 << b) != 0)
            .map(|(_, e)| *e)
            .collect();
        let (ct, surviving) = contract(q, &s);
        if ct == f.tree {
            found = Some((s, surviving));
            break;
        }
    }
    let (shrunk, surviving) = found.ok_or(MultiError::NotARefinement)?;
    debug_assert_eq!(surviving.len(), f.vars.names.len());

    // Substitution: old var i -> qvar(surviving[i]) + contracted chain below.
    let mut subst: BTreeMap<String, SignedVars> = BTreeMap::new();
    for (i, &qe) in surviving.iter().enumerate() {
        let mut sv: SignedVars = vec![(qvars.names[qe].clone(), 1)];
        // Walk down from the lower endpoint of qe while its edge is shrunk.
        let mut v: NodePath = {
            let mut u = q_edges[qe].upper.clone();
            u.pop();
            u
        };
        while !v.is_empty() {
            let ve = q_edges.iter().position(|e| e.upper == v).unwrap();
            if shrunk.contains(&ve) {
                sv.push((qvars.names[ve].clone(), 1));
                v.pop();
            } else {
                break;
            }
        }
        subst.insert(f.vars.names[i].clone(), sv);
    }

    let diff_floor = f
        .window
        .diff_floors
        .iter()
        .copied()
        .min()
        .unwrap_or(-(2 * f.window.ceiling.max(1)));
    let target = window_for_tree(q, qvars, f.window.ceiling, diff_floor);
    let mut table = BTreeMap::new();
    for (key, entry) in &f.table {
        let mut tgt = target.clone();
        tgt.ceiling = tgt.ceiling.min(entry.window.ceiling);
        let moved = shift_vars(entry, &subst, &tgt)?;
        table.insert(key.clone(), moved);
    }
    Ok(SingularMultiMap {
        tree: q.clone(),
        vars: qvars.clone(),
        inputs: f.inputs.clone(),
        output: f.output.clone(),
        window: target,
        table,
        fully_invariant: f.fully_invariant,
    })
}

// ---------------------------------------------------------------------------
// Vacuum insertion and partial evaluation.
// ---------------------------------------------------------------------------

/// Fix `slot` to a translation-invariant vector and delete the leaf; the
/// slot variable must disappear entirely.
pub fn vacuum_insert(
    f: &SingularMultiMap,
    slot: usize,
    v: &Vect,
) -> Result<SingularMultiMap, MultiError> {
    if slot >= f.inputs.len() {
        return Err(MultiError::IndexOutOfRange);
    }
    if !f.inputs[slot].t_vect(v).is_empty() {
        return Err(MultiError::NotVacuum);
    }
    let lv = f.leaf_var(slot);
    let tree = graft(&f.tree, &[(slot, Tree::Empty)]).map_err(|_| MultiError::IndexOutOfRange)?;
    let slot_edge = slot_leaf_edge(&f.tree, slot);
    let mut names = f.vars.names.clone();
    if let Some(e) = slot_edge {
        names.remove(e);
    }
    let vars = EdgeVarAssignment::named(names);

    let mut table: BTreeMap<Vec<usize>, LocalizedSeries> = BTreeMap::new();
    // Specialize by linearity.
    let mut specialized: BTreeMap<Vec<usize>, LocalizedSeries> = BTreeMap::new();
    for (key, entry) in &f.table {
        let Some(coef) = v.get(&key[slot]) else { continue };
        let mut k2 = key.clone();
        k2.remove(slot);
        let scaled = entry.scale(coef);
        match specialized.get(&k2) {
            None => {
                specialized.insert(k2, scaled);
            }
            Some(prev) => {
                let sum = series_add(prev, &scaled)?;
                specialized.insert(k2, sum);
            }
        }
    }
    let mut window_out: Option<TruncationWindow> = None;
    for (key, entry) in specialized {
        let out = match &lv {
            Some(lv) => {
                let vi = entry.window.var_index(lv).ok_or(MultiError::ResidualSingularity)?;
                // Expand every difference symbol into its region-consistent
                // Laurent cells in a working window whose floors sit far
                // below the declared ones, so no contributing cell is lost,
                // then evaluate the removed variable at zero and fold the
                // declared poles back into difference symbols.
                let depths = crate::series::pole_depths(&entry);
                let depth: i64 = depths.iter().sum();
                let floor_sum: i64 = entry.window.floors.iter().sum();
                let spread = (entry.window.ceiling - floor_sum).max(0) + depth + 4;
                let mut work = entry.window.clone();
                for fl in &mut work.floors {
                    *fl -= 2 * depth + spread;
                }
                for fl in &mut work.diff_floors {
                    *fl -= 2 * depth + spread;
                }
                let cells = crate::series::laurent_cells(&entry, &work);
                // Cells below the guard are expansion tails; within the
                // guard every cell is fully assembled and trustworthy.
                let guard: Vec<i64> =
                    entry.window.floors.iter().map(|f| f - 2 * depth - 4).collect();
                let vis = entry.vis_floor.unwrap_or(i64::MIN);
                for (m, val) in &cells {
                    if val.is_empty()
                        || m.total() < vis
                        || m.vexp.iter().zip(&guard).any(|(e, g)| e < g)
                    {
                        continue;
                    }
                    if m.vexp[vi] < 0 {
                        return Err(MultiError::ResidualSingularity);
                    }
                }
                // Output window: the entry window with the removed variable
                // and its pairs deleted.
                let mut wout = entry.window.clone();
                wout.vars.remove(vi);
                wout.floors.remove(vi);
                let mut pairs = Vec::new();
                let mut dfl = Vec::new();
                let mut pole = Vec::new();
                for (p, &(a, b)) in entry.window.pairs.iter().enumerate() {
                    if a != vi && b != vi {
                        let re = |t: usize| if t > vi { t - 1 } else { t };
                        pairs.push((re(a), re(b)));
                        dfl.push(entry.window.diff_floors[p]);
                        pole.push(depths[p]);
                    }
                }
                wout.pairs = pairs;
                wout.diff_floors = dfl;
                // Evaluate at zero: keep the cells with no dependence on
                // the removed variable.
                let mut s: BTreeMap<Mono, Vect> = BTreeMap::new();
                for (m, val) in &cells {
                    if val.is_empty()
                        || m.vexp[vi] != 0
                        || m.vexp.iter().zip(&guard).any(|(e, g)| e < g)
                    {
                        continue;
                    }
                    let mut vexp = m.vexp.clone();
                    vexp.remove(vi);
                    let mono = Mono {
                        vexp,
                        dexp: vec![0; wout.pairs.len()],
                    };
                    vect_add_assign(s.entry(mono).or_default(), val);
                }
                // Fold each declared pole back into its symbol: a cell `c`
                // is rewritten as `(a-b)^l * c * (a-b)^-l` with the positive
                // power multiplied out, which leaves the value unchanged
                // but puts singular content back into representable form.
                for (q, &(a, b)) in wout.pairs.iter().enumerate() {
                    let l = pole[q];
                    if l == 0 {
                        continue;
                    }
                    let mut next: BTreeMap<Mono, Vect> = BTreeMap::new();
                    for (m, val) in &s {
                        if val.is_empty() {
                            continue;
                        }
                        for t in 0..=l {
                            let sgn = crate::util::rat(if t % 2 == 0 { 1 } else { -1 });
                            let c = crate::util::binom(l, t) * sgn;
                            let mut m2 = m.clone();
                            m2.vexp[a] += l - t;
                            m2.vexp[b] += t;
                            m2.dexp[q] = -l;
                            vect_add_assign(next.entry(m2).or_default(), &vect_scale(val, &c));
                        }
                    }
                    s = next;
                }
                let mut out = LocalizedSeries::zero(wout, entry.module.clone());
                out.homog = entry.homog;
                out.vis_floor = entry.vis_floor;
                for (m, val) in s {
                    if val.is_empty() || m.total() < vis {
                        continue;
                    }
                    // Below-floor content in the fully-assembled region is
                    // a real leftover singularity, not an expansion tail.
                    let junk = m
                        .vexp
                        .iter()
                        .zip(&out.window.floors)
                        .any(|(e, f)| *e < *f && *e >= *f - depth - 4);
                    if junk {
                        return Err(MultiError::ResidualSingularity);
                    }
                    out.insert(m, val);
                }
                out
            }
            None => entry,
        };
        if window_out.is_none() {
            window_out = Some(out.window.clone());
        }
        table.insert(key, out);
    }
    let mut inputs = f.inputs.clone();
    inputs.remove(slot);
    let window = window_out.unwrap_or_else(|| {
        let mut w = f.window.clone();
        if let Some(lv) = &lv {
            if let Some(vi) = w.var_index(lv) {
                w.vars.remove(vi);
                w.floors.remove(vi);
                let mut pairs = Vec::new();
                let mut dfl = Vec::new();
                for (p, &(a, b)) in w.pairs.iter().enumerate() {
                    if a != vi && b != vi {
                        let re = |t: usize| if t > vi { t - 1 } else { t };
                        pairs.push((re(a), re(b)));
                        dfl.push(w.diff_floors[p]);
                    }
                }
                w.pairs = pairs;
                w.diff_floors = dfl;
            }
        }
        w
    });
    Ok(SingularMultiMap {
        tree,
        vars,
        inputs,
        output: f.output.clone(),
        window,
        table,
        fully_invariant: f.fully_invariant,
    })
}

/// A slot to evaluate: a leaf input, or an interior divided-power slot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalSlot {
    Leaf(usize),
    Interior(NodePath),
}

/// Partially evaluate leaf slots at module vectors: specialize by linearity,
/// set the leaf variable to zero (requires regularity there) and delete the
/// leaf.  Interior slots of a localized map are rejected: evaluation there
/// is not well defined in the presence of singularities.
pub fn evaluate_partial(
    f: &SingularMultiMap,
    assignments: &[(EvalSlot, Vect)],
) -> Result<SingularMultiMap, MultiError> {
    // Reject interior slots first.
    for (slot, _) in assignments {
        if let EvalSlot::Interior(_) = slot {
            return Err(MultiError::EvalAtLocalizedSlot);
        }
    }
    let mut leaves: Vec<(usize, Vect)> = assignments
        .iter()
        .map(|(s, v)| match s {
            EvalSlot::Leaf(l) => (*l, v.clone()),
            EvalSlot::Interior(_) => unreachable!(),
        })
        .collect();
    // Process from the highest leaf index so earlier indices stay valid.
    leaves.sort_by(|a, b| b.0.cmp(&a.0));
    let mut cur = f.clone();
    for (slot, v) in leaves {
        if slot >= cur.inputs.len() {
            return Err(MultiError::IndexOutOfRange);
        }
        let lv = cur.leaf_var(slot);
        let tree = graft(&cur.tree, &[(slot, Tree::Empty)])
            .map_err(|_| MultiError::IndexOutOfRange)?;
        let slot_edge = slot_leaf_edge(&cur.tree, slot);
        let mut names = cur.vars.names.clone();
        if let Some(e) = slot_edge {
            names.remove(e);
        }
        let mut specialized: BTreeMap<Vec<usize>, LocalizedSeries> = BTreeMap::new();
        for (key, entry) in &cur.table {
            let Some(coef) = v.get(&key[slot]) else { continue };
            let mut k2 = key.clone();
            k2.remove(slot);
            let scaled = entry.scale(coef);
            match specialized.get(&k2) {
                None => {
                    specialized.insert(k2, scaled);
                }
                Some(prev) => {
                    let sum = series_add(prev, &scaled)?;
                    specialized.insert(k2, sum);
                }
            }
        }
        let mut table = BTreeMap::new();
        let mut window_out: Option<TruncationWindow> = None;
        for (key, entry) in specialized {
            let out = match &lv {
                Some(lv) => restrict_zero(&entry, lv)?,
                None => entry,
            };
            if window_out.is_none() {
                window_out = Some(out.window.clone());
            }
            table.insert(key, out);
        }
        let mut inputs = cur.inputs.clone();
        inputs.remove(slot);
        cur = SingularMultiMap {
            tree,
            vars: EdgeVarAssignment::named(names),
            inputs,
            output: cur.output.clone(),
            window: window_out.unwrap_or_else(|| cur.window.clone()),
            table,
            fully_invariant: false,
        };
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Vertex-operator conversions.
// ---------------------------------------------------------------------------

/// For a weight-lowering model the vertex operator has no singular part and
/// `a · b = Y(a, 0)b` is an associative product; wrap it as a module-level
/// multiplication so that series arithmetic can use it directly.
fn lowering_product_module(v: &VertexAlgebra) -> Arc<GModule> {
    let dim = v.module.dim();
    let mut mult = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut row = Vec::with_capacity(dim);
        for j in 0..dim {
            row.push(v.coeff(i, j, 0));
        }
        mult.push(row);
    }
    Arc::new(GModule {
        name: v.module.name.clone(),
        basis: v.module.basis.clone(),
        weight: v.module.weight.clone(),
        t_action: v.module.t_action.clone(),
        t_lowers: true,
        cutoff: v.module.cutoff,
        mult: Some(mult),
        vacuum: v.module.vacuum,
    })
}

/// Re-home a series onto `module` (same basis, different algebra tag).
fn retag(s: LocalizedSeries, module: &Arc<GModule>) -> LocalizedSeries {
    let mut out = LocalizedSeries::zero(s.window.clone(), module.clone());
    out.homog = s.homog;
    out.vis_floor = s.vis_floor;
    out.terms = s.terms;
    out
}

/// The binary map `f(a (x) b) = e^{Ty} Y(a, x-y) b` on the two-leaf tree,
/// with variables `x, y`.
pub fn from_vertex_operator(v: &VertexAlgebra) -> Result<SingularMultiMap, MultiError> {
    let tree = Tree::flat(2);
    let vars = EdgeVarAssignment::named(vec!["x".into(), "y".into()]);
    let w = v.weight_cutoff;
    // For weight-lowering modules the total degree of a reliable term is
    // bounded by the joint degree (at most 2W), not by W.
    let outer_ceiling = if v.module.t_lowers { 2 * w } else { w };
    let window = window_for_tree(&tree, &vars, outer_ceiling, -2 * w - 1);
    if window.ceiling < 0 {
        return Err(MultiError::WindowUnderflow);
    }
    let dim = v.module.dim();
    let exact_product = v.module.t_lowers;
    let alg = if exact_product {
        Some(lowering_product_module(v))
    } else {
        None
    };
    let mut table = BTreeMap::new();
    for i in 0..dim {
        for j in 0..dim {
            let wsum = v.module.weight[i] + v.module.weight[j];
            let s = if let Some(alg) = &alg {
                // Weight-lowering models: T re-enters the cutoff region, so
                // the iterated route through the operator table loses data.
                // The single-truncation product `(e^{xT}a)(e^{yT}b)` — with
                // the product read off the table's degree-zero coefficient —
                // is reliable above `wsum - W`.
                let ea = crate::series::exp_t(alg, &vect_single(i), "x", &window)?;
                let eb = crate::series::exp_t(alg, &vect_single(j), "y", &window)?;
                let mut s = retag(crate::series::series_mul(&ea, &eb)?, &v.module);
                s.homog = Some(wsum);
                s.vis_floor = Some(wsum - w);
                s
            } else {
                let field = v.field(i, j);
                if field.is_empty() {
                    continue;
                }
                let mut ent_window = window.clone();
                if !v.module.t_lowers {
                    ent_window.ceiling = w - wsum;
                }
                let mut s = LocalizedSeries::zero(ent_window, v.module.clone());
                if v.module.t_lowers {
                    s.homog = Some(wsum);
                    s.vis_floor = Some(wsum - w);
                }
                let p = 0usize; // only pair: (x, y)
                for (n, vect) in &field {
                    let mut m = Mono::unit(&s.window);
                    m.dexp[p] = *n;
                    s.insert(m, vect.clone());
                }
                exp_t_mul(&s, "y")?
            };
            if s.terms.is_empty() {
                continue;
            }
            table.insert(vec![i, j], s);
        }
    }
    Ok(SingularMultiMap {
        tree,
        vars,
        inputs: vec![v.module.clone(), v.module.clone()],
        output: v.module.clone(),
        window,
        table,
        fully_invariant: true,
    })
}

/// Recover the vertex-operator table `Y(a, x) b` from a fully invariant
/// two-leaf map: expand the difference symbol with the shallow variable
/// subordinate, then set the shallow variable to zero.
pub fn to_vertex_operator(
    f: &SingularMultiMap,
    deep_var: &str,
) -> Result<BTreeMap<(usize, usize), Field>, MultiError> {
    if f.inputs.len() != 2 {
        return Err(MultiError::IndexOutOfRange);
    }
    let deep = f
        .window
        .var_index(deep_var)
        .ok_or_else(|| MultiError::Series(SeriesError::UnknownVariable(deep_var.into())))?;
    let shallow = 1 - deep;
    let shallow_name = f.window.vars[shallow].clone();
    let deep_name = f.window.vars[deep].clone();
    let mut out: BTreeMap<(usize, usize), Field> = BTreeMap::new();
    for (key, entry) in &f.table {
        // Deepen the deep variable's floor so the expansion is faithful.
        let mut e = entry.clone();
        if let Some((p, _)) = e.window.pair_index(deep, shallow) {
            e.window.floors[deep] += e.window.diff_floors[p];
        }
        let expanded = expand_diff(&e, (&deep_name, &shallow_name), &shallow_name)?;
        let at_zero = restrict_zero(&expanded, &shallow_name)?;
        let mut field = Field::new();
        for (m, vect) in &at_zero.terms {
            let n = m.vexp[0];
            let cell: &mut Vect = field.entry(n).or_default();
            vect_add_assign(cell, vect);
        }
        field.retain(|_, w| !w.is_empty());
        if !field.is_empty() {
            out.insert((key[0], key[1]), field);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// OPE: the ternary flat map.
// ---------------------------------------------------------------------------

/// Build the flat ternary map
/// `g(a (x) b (x) c) = e^{Tz} (x-y)^{-N} [(x-y)^N Y(a,x-z) Y(b,y-z) c]`,
/// whose two subordinate expansions reproduce both operator orderings.
/// The bracketed product is assembled from both orderings so that every
/// cutoff-reliable cell is filled; disagreement on doubly-reliable cells
/// means `N` is below the locality order.
pub fn build_ope(v: &VertexAlgebra, n: i64) -> Result<SingularMultiMap, MultiError> {
    if n < 0 {
        return Err(MultiError::LocalityOrderTooSmall);
    }
    let tree = Tree::flat(3);
    let vars = EdgeVarAssignment::named(vec!["x".into(), "y".into(), "z".into()]);
    let w = v.weight_cutoff;
    let deep_floor = -(3 * w + n + 1);
    let outer_ceiling = if v.module.t_lowers { 3 * w } else { w };
    let window = window_for_tree(&tree, &vars, outer_ceiling, deep_floor);
    let dim = v.module.dim();
    let lowering = v.module.t_lowers;
    let alg = if lowering {
        Some(lowering_product_module(v))
    } else {
        None
    };
    let mut table = BTreeMap::new();
    for a in 0..dim {
        for b in 0..dim {
            for c in 0..dim {
                let wa = v.module.weight[a];
                let wb = v.module.weight[b];
                let wc = v.module.weight[c];
                let wsum = wa + wb + wc;
                if let Some(alg) = &alg {
                    // Weight-lowering models: the single-truncation product
                    // `(e^{xT}a)(e^{yT}b)(e^{zT}c)` is reliable above
                    // `wsum - W`, unlike the iterated operator route.
                    let ea = crate::series::exp_t(alg, &vect_single(a), "x", &window)?;
                    let eb = crate::series::exp_t(alg, &vect_single(b), "y", &window)?;
                    let ec = crate::series::exp_t(alg, &vect_single(c), "z", &window)?;
                    let mut s = retag(
                        crate::series::series_mul(&crate::series::series_mul(&ea, &eb)?, &ec)?,
                        &v.module,
                    );
                    s.homog = Some(wsum);
                    s.vis_floor = Some(wsum - w);
                    if !s.terms.is_empty() {
                        table.insert(vec![a, b, c], s);
                    }
                    continue;
                }
                let u1 = crate::valg::double_field(v, a, b, c);
                let u2r = crate::valg::double_field(v, b, a, c);
                let u2: BTreeMap<(i64, i64), Vect> =
                    u2r.into_iter().map(|((my, mx), w)| ((mx, my), w)).collect();
                let mul_diff_pow = |u: &BTreeMap<(i64, i64), Vect>| {
                    let mut h: BTreeMap<(i64, i64), Vect> = BTreeMap::new();
                    for ((mx, my), vect) in u {
                        for t in 0..=n {
                            let coef = binom(n, t) * sign(n - t);
                            let e: &mut Vect = h.entry((mx + t, my + n - t)).or_default();
                            vect_add_assign(e, &vect_scale(vect, &coef));
                        }
                    }
                    h.retain(|_, vect| !vect.is_empty());
                    h
                };
                let h1 = mul_diff_pow(&u1);
                let h2 = mul_diff_pow(&u2);
                // Reliability predicates for assembled cells.
                let (r1, r2): (Box<dyn Fn(i64, i64) -> bool>, Box<dyn Fn(i64, i64) -> bool>) =
                    if lowering {
                        let my_floor = wb + wc - w + n;
                        let mx_floor = wa + wc - w + n;
                        (
                            Box::new(move |_mx, my| my >= my_floor),
                            Box::new(move |mx, _my| mx >= mx_floor),
                        )
                    } else {
                        let my_cap = w - wb - wc;
                        let mx_cap = w - wa - wc;
                        (
                            Box::new(move |_mx, my| my <= my_cap),
                            Box::new(move |mx, _my| mx <= mx_cap),
                        )
                    };
                // Assemble and cross-check.
                let mut assembled: BTreeMap<(i64, i64), Vect> = BTreeMap::new();
                let mut keys: BTreeSet<(i64, i64)> = h1.keys().cloned().collect();
                keys.extend(h2.keys().cloned());
                let empty = Vect::new();
                for (mx, my) in keys {
                    let in1 = r1(mx, my);
                    let in2 = r2(mx, my);
                    let c1 = h1.get(&(mx, my)).unwrap_or(&empty);
                    let c2 = h2.get(&(mx, my)).unwrap_or(&empty);
                    if in1 && in2 && c1 != c2 {
                        return Err(MultiError::LocalityOrderTooSmall);
                    }
                    let cell = if in1 {
                        c1
                    } else if in2 {
                        c2
                    } else {
                        continue;
                    };
                    if !cell.is_empty() {
                        assembled.insert((mx, my), cell.clone());
                    }
                }
                if assembled.is_empty() {
                    continue;
                }
                // Pre-shift series in (x, y) with the (x-y)^{-N} symbol.
                let pre_ceiling = if lowering { wsum } else { w - wsum };
                let mut pre_window =
                    TruncationWindow::new(vec!["x".into(), "y".into()], pre_ceiling)
                        .with_all_floors(deep_floor)
                        .with_pair("x", "y", deep_floor);
                if !lowering {
                    // Doubly-unreliable region forces an extra ceiling cut.
                    let mx_cap = w - wa - wc;
                    let my_cap = w - wb - wc;
                    pre_window.ceiling = pre_window.ceiling.min(mx_cap + my_cap + 1 - n);
                }
                let mut pre = LocalizedSeries::zero(pre_window, v.module.clone());
                if lowering {
                    pre.homog = Some(wsum);
                    let mx_floor = wa + wc - w + n;
                    let my_floor = wb + wc - w + n;
                    pre.vis_floor = Some((wsum - w).max(mx_floor + my_floor - n - 1));
                }
                for ((mx, my), vect) in &assembled {
                    let m = Mono {
                        vexp: vec![*mx, *my],
                        dexp: vec![if n == 0 { 0 } else { -n }],
                    };
                    pre.insert(m, vect.clone());
                }
                // Shift x -> x - z, y -> y - z into the ternary window.
                let mut subst: BTreeMap<String, SignedVars> = BTreeMap::new();
                subst.insert("x".into(), vec![("x".into(), 1), ("z".into(), -1)]);
                subst.insert("y".into(), vec![("y".into(), 1), ("z".into(), -1)]);
                let mut tgt = window.clone();
                tgt.ceiling = tgt.ceiling.min(pre.window.ceiling);
                let shifted = shift_vars(&pre, &subst, &tgt)?;
                // Multiply by e^{Tz}.
                let entry = exp_t_mul(&shifted, "z")?;
                table.insert(vec![a, b, c], entry);
            }
        }
    }
    Ok(SingularMultiMap {
        tree,
        vars,
        inputs: vec![v.module.clone(); 3],
        output: v.module.clone(),
        window,
        table,
        fully_invariant: true,
    })
}

// ---------------------------------------------------------------------------
// Symmetric-group action on flat maps.
// ---------------------------------------------------------------------------

/// Rename the edge variables positionally (tree and tables unchanged).
pub fn rename_vars(
    f: &SingularMultiMap,
    names: &[String],
) -> Result<SingularMultiMap, MultiError> {
    if names.len() != f.window.vars.len() {
        return Err(MultiError::IndexOutOfRange);
    }
    let mut subst: BTreeMap<String, SignedVars> = BTreeMap::new();
    for (old, new) in f.window.vars.iter().zip(names) {
        subst.insert(old.clone(), vec![(new.clone(), 1)]);
    }
    let mut window = f.window.clone();
    window.vars = names.to_vec();
    let mut table = BTreeMap::new();
    for (key, entry) in &f.table {
        let mut tgt = entry.window.clone();
        tgt.vars = names.to_vec();
        table.insert(key.clone(), shift_vars(entry, &subst, &tgt)?);
    }
    Ok(SingularMultiMap {
        tree: f.tree.clone(),
        vars: EdgeVarAssignment::named(names.to_vec()),
        inputs: f.inputs.clone(),
        output: f.output.clone(),
        window,
        table,
        fully_invariant: f.fully_invariant,
    })
}

/// Apply a permutation to a flat map: inputs and variables permuted
/// simultaneously.  `perm[k]` = the old slot placed at new slot `k`.
pub fn permute_flat(
    f: &SingularMultiMap,
    perm: &[usize],
) -> Result<SingularMultiMap, MultiError> {
    let nvars = f.window.vars.len();
    if perm.len() != f.inputs.len() || f.inputs.len() != nvars {
        return Err(MultiError::IndexOutOfRange);
    }
    // Substitution: old var of slot perm[k] -> new var of slot k, i.e. the
    // variable names stay fixed to positions; we rename var(perm[k]) to
    // var(k).
    let mut subst: BTreeMap<String, SignedVars> = BTreeMap::new();
    for (k, &old) in perm.iter().enumerate() {
        subst.insert(
            f.window.vars[old].clone(),
            vec![(f.window.vars[k].clone(), 1)],
        );
    }
    let mut table = BTreeMap::new();
    for (key, entry) in &f.table {
        let newkey: Vec<usize> = perm.iter().map(|&old| key[old]).collect();
        let mut tgt = f.window.clone();
        tgt.ceiling = entry.window.ceiling;
        let moved = shift_vars(entry, &subst, &tgt)?;
        table.insert(newkey, moved);
    }
    Ok(SingularMultiMap {
        tree: f.tree.clone(),
        vars: f.vars.clone(),
        inputs: perm.iter().map(|&old| f.inputs[old].clone()).collect(),
        output: f.output.clone(),
        window: f.window.clone(),
        table,
        fully_invariant: f.fully_invariant,
    })
}

/// Coefficientwise equality of two maps on the shared keys/window.
pub fn maps_equal(a: &SingularMultiMap, b: &SingularMultiMap) -> bool {
    if a.inputs.len() != b.inputs.len() {
        return false;
    }
    let keys: BTreeSet<Vec<usize>> = a.table.keys().chain(b.table.keys()).cloned().collect();
    for k in keys {
        let ea = a.entry(&k);
        let eb = b.entry(&k);
        if !eq_within(&ea, &eb) {
            return false;
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Text format.
// ---------------------------------------------------------------------------

/// Serialize a map to the line-based multimap format.
pub fn write_multimap(f: &SingularMultiMap) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "multimap");
    let _ = writeln!(s, "tree {}", tree_format(&f.tree));
    let _ = writeln!(s, "vars {}", f.vars.names.join(" "));
    let _ = writeln!(
        s,
        "inputs {}",
        f.inputs.iter().map(|m| m.name.clone()).collect::<Vec<_>>().join(" ")
    );
    let _ = writeln!(s, "output {}", f.output.name);
    let _ = writeln!(s, "{}", f.window.header());
    let _ = writeln!(s, "invariant {}", f.fully_invariant);
    for (key, entry) in &f.table {
        let names: Vec<String> = key
            .iter()
            .enumerate()
            .map(|(l, b)| f.inputs[l].basis[*b].clone())
            .collect();
        let mut meta = format!("ceiling={}", entry.window.ceiling);
        if let Some(h) = entry.homog {
            let _ = write!(meta, " homog={h}");
        }
        if let Some(vf) = entry.vis_floor {
            let _ = write!(meta, " vis={vf}");
        }
        let _ = writeln!(s, "entry {} {} -> {}", names.join(","), meta, entry);
    }
    s
}

/// Parse the multimap format; `resolve` maps module names to modules.
pub fn read_multimap(
    text: &str,
    resolve: &dyn Fn(&str) -> Option<Arc<GModule>>,
) -> Result<SingularMultiMap, MultiError> {
    let mut tree: Option<Tree> = None;
    let mut vars: Option<EdgeVarAssignment> = None;
    let mut inputs: Vec<Arc<GModule>> = Vec::new();
    let mut output: Option<Arc<GModule>> = None;
    let mut window: Option<TruncationWindow> = None;
    let mut invariant = false;
    let mut entries: Vec<(Vec<String>, String, String)> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "multimap" {
            continue;
        }
        let err = |m: String| MultiError::Parse(format!("line {}: {m}", lineno + 1));
        if let Some(rest) = line.strip_prefix("tree ") {
            tree = Some(tree_parse(rest.trim()).map_err(|e| err(format!("{e:?}")))?);
        } else if let Some(rest) = line.strip_prefix("vars") {
            vars = Some(EdgeVarAssignment::named(
                rest.split_whitespace().map(|s| s.to_string()).collect(),
            ));
        } else if let Some(rest) = line.strip_prefix("inputs") {
            for name in rest.split_whitespace() {
                inputs.push(
                    resolve(name).ok_or_else(|| err(format!("unknown module {name:?}")))?,
                );
            }
        } else if let Some(rest) = line.strip_prefix("output ") {
            let name = rest.trim();
            output = Some(resolve(name).ok_or_else(|| err(format!("unknown module {name:?}")))?);
        } else if line.starts_with("window ") {
            window = Some(parse_window_header(line).map_err(err)?);
        } else if let Some(rest) = line.strip_prefix("invariant ") {
            invariant = rest.trim() == "true";
        } else if let Some(rest) = line.strip_prefix("entry ") {
            let (lhs, rhs) = rest
                .split_once("->")
                .ok_or_else(|| err("entry needs ->".into()))?;
            let mut it = lhs.trim().split_whitespace();
            let names: Vec<String> = it
                .next()
                .unwrap_or("")
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| s.to_string())
                .collect();
            let meta: Vec<String> = it.map(|s| s.to_string()).collect();
            entries.push((names, meta.join(" "), rhs.trim().to_string()));
        } else {
            return Err(err("unrecognized line".into()));
        }
    }
    let tree = tree.ok_or_else(|| MultiError::Parse("missing tree".into()))?;
    let vars = vars.unwrap_or_else(|| EdgeVarAssignment::default_for(&tree));
    let output = output.ok_or_else(|| MultiError::Parse("missing output".into()))?;
    let window = window.ok_or_else(|| MultiError::Parse("missing window".into()))?;
    let mut table = BTreeMap::new();
    for (names, meta, body) in entries {
        let key: Vec<usize> = names
            .iter()
            .enumerate()
            .map(|(l, n)| {
                inputs
                    .get(l)
                    .and_then(|m| m.basis_index(n))
                    .ok_or_else(|| MultiError::Parse(format!("unknown basis vector {n:?}")))
            })
            .collect::<Result<_, _>>()?;
        let mut w = window.clone();
        let mut homog = None;
        let mut vis = None;
        for tok in meta.split_whitespace() {
            if let Some(val) = tok.strip_prefix("ceiling=") {
                w.ceiling = val
                    .parse()
                    .map_err(|_| MultiError::Parse(format!("bad ceiling {val:?}")))?;
            } else if let Some(val) = tok.strip_prefix("homog=") {
                homog = Some(
                    val.parse::<i64>()
                        .map_err(|_| MultiError::Parse(format!("bad homog {val:?}")))?,
                );
            } else if let Some(val) = tok.strip_prefix("vis=") {
                vis = Some(
                    val.parse::<i64>()
                        .map_err(|_| MultiError::Parse(format!("bad vis {val:?}")))?,
                );
            }
        }
        let mut s = crate::series::parse_series(&body, &w, &output)
            .map_err(MultiError::Series)?;
        if homog.is_some() {
            s.homog = homog;
        }
        s.vis_floor = vis;
        table.insert(key, s);
    }
    Ok(SingularMultiMap {
        tree,
        vars,
        inputs,
        output,
        window,
        table,
        fully_invariant: invariant,
    })
}

/// Parse a `window ceiling=N floors={..} diffs={..}` header line.
pub fn parse_window_header(line: &str) -> Result<TruncationWindow, String> {
    let rest = line
        .strip_prefix("window ")
        .ok_or_else(|| "expected window header".to_string())?;
    let mut ceiling: Option<i64> = None;
    let mut floors: Vec<(String, i64)> = Vec::new();
    let mut diffs: Vec<(String, String, i64)> = Vec::new();
    for tok in rest.split_whitespace() {
        if let Some(v) = tok.strip_prefix("ceiling=") {
            ceiling = Some(v.parse().map_err(|_| format!("bad ceiling {v:?}"))?);
        } else if let Some(v) = tok.strip_prefix("floors=") {
            let inner = v
                .strip_prefix('{')
                .and_then(|x| x.strip_suffix('}'))
                .ok_or_else(|| format!("bad floors {v:?}"))?;
            for item in inner.split(',').filter(|s| !s.is_empty()) {
                let (name, fl) = item
                    .split_once(':')
                    .ok_or_else(|| format!("bad floor item {item:?}"))?;
                floors.push((
                    name.to_string(),
                    fl.parse().map_err(|_| format!("bad floor {fl:?}"))?,
                ));
            }
        } else if let Some(v) = tok.strip_prefix("diffs=") {
            let inner = v
                .strip_prefix('{')
                .and_then(|x| x.strip_suffix('}'))
                .ok_or_else(|| format!("bad diffs {v:?}"))?;
            // items look like (a,b):k
            let mut depth = 0usize;
            let mut items = Vec::new();
            let mut cur = String::new();
            for ch in inner.chars() {
                match ch {
                    '(' => {
                        depth += 1;
                        cur.push(ch);
                    }
                    ')' => {
                        depth -= 1;
                        cur.push(ch);
                    }
                    ',' if depth == 0 => {
                        items.push(cur.clone());
                        cur.clear();
                    }
                    _ => cur.push(ch),
                }
            }
            if !cur.is_empty() {
                items.push(cur);
            }
            for item in items {
                let (pair, fl) = item
                    .rsplit_once(':')
                    .ok_or_else(|| format!("bad diff item {item:?}"))?;
                let inner = pair
                    .strip_prefix('(')
                    .and_then(|x| x.strip_suffix(')'))
                    .ok_or_else(|| format!("bad diff pair {pair:?}"))?;
                let (a, b) = inner
                    .split_once(',')
                    .ok_or_else(|| format!("bad diff pair {pair:?}"))?;
                diffs.push((
                    a.trim().to_string(),
                    b.trim().to_string(),
                    fl.parse().map_err(|_| format!("bad diff floor {fl:?}"))?,
                ));
            }
        }
    }
    let ceiling = ceiling.ok_or_else(|| "missing ceiling".to_string())?;
    let names: Vec<String> = floors.iter().map(|(n, _)| n.clone()).collect();
    let mut w = TruncationWindow::new(names, ceiling);
    for (n, fl) in &floors {
        w = w.with_floor(n, *fl);
    }
    for (a, b, fl) in &diffs {
        w = w.with_pair(a, b, *fl);
    }
    Ok(w)
}

#[cfg(test)]
mod tests;
