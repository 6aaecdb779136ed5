//! Rooted planar trees: parsing, refinement, grafting, linear extensions of
//! the internal-vertex poset, and the singularity-dependence data a labelled
//! tree induces.
//!
//! Notation for the text form: `.` is a leaf, `(c1...ck)` an internal node
//! with ordered children, `o` the empty tree, and a `|` prefix wraps a tree
//! in a unary stem node (so `|(..)` is the two-leaf tree with a root stem).

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use thiserror::Error;

/// A rooted planar tree.  `Leaf` doubles as the single-node tree (the
/// grafting unit); `Empty` is the empty tree (grafting it deletes a leaf).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tree {
    Empty,
    Leaf,
    Node(Vec<Tree>),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("leaf index {0} out of range")]
    IndexOutOfRange(usize),
}

impl Tree {
    /// Flat tree with `n` leaves (height 1).
    pub fn flat(n: usize) -> Tree {
        Tree::Node(vec![Tree::Leaf; n])
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            Tree::Empty => 0,
            Tree::Leaf => 1,
            Tree::Node(cs) => cs.iter().map(Tree::leaf_count).sum(),
        }
    }

    /// Height in edges from the root to the farthest leaf.
    pub fn height(&self) -> usize {
        match self {
            Tree::Empty | Tree::Leaf => 0,
            Tree::Node(cs) => 1 + cs.iter().map(Tree::height).max().unwrap_or(0),
        }
    }

    /// Number of internal (non-leaf) vertices.
    pub fn internal_count(&self) -> usize {
        match self {
            Tree::Empty | Tree::Leaf => 0,
            Tree::Node(cs) => 1 + cs.iter().map(Tree::internal_count).sum::<usize>(),
        }
    }

    /// Number of edges (every vertex except the root carries one).
    pub fn edge_count(&self) -> usize {
        match self {
            Tree::Empty | Tree::Leaf => 0,
            Tree::Node(cs) => cs.len() + cs.iter().map(Tree::edge_count).sum::<usize>(),
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Empty => write!(f, "o"),
            Tree::Leaf => write!(f, "."),
            Tree::Node(cs) => {
                write!(f, "(")?;
                for c in cs {
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

pub fn tree_format(t: &Tree) -> String {
    t.to_string()
}

pub fn tree_parse(s: &str) -> Result<Tree, TreeError> {
    let chars: Vec<char> = s.trim().chars().filter(|c| !c.is_whitespace()).collect();
    let (t, used) = parse_at(&chars, 0)?;
    if used != chars.len() {
        return Err(TreeError::Parse(format!(
            "trailing input after position {used} in {s:?}"
        )));
    }
    Ok(t)
}

fn parse_at(chars: &[char], pos: usize) -> Result<(Tree, usize), TreeError> {
    match chars.get(pos) {
        Some('.') => Ok((Tree::Leaf, pos + 1)),
        Some('o') => Ok((Tree::Empty, pos + 1)),
        Some('|') => {
            let (inner, next) = parse_at(chars, pos + 1)?;
            Ok((Tree::Node(vec![inner]), next))
        }
        Some('(') => {
            let mut children = Vec::new();
            let mut p = pos + 1;
            loop {
                match chars.get(p) {
                    Some(')') => return Ok((Tree::Node(children), p + 1)),
                    Some(_) => {
                        let (c, next) = parse_at(chars, p)?;
                        children.push(c);
                        p = next;
                    }
                    None => {
                        return Err(TreeError::Parse("unbalanced parenthesis".into()));
                    }
                }
            }
        }
        other => Err(TreeError::Parse(format!(
            "unexpected {:?} at position {pos}",
            other
        ))),
    }
}

/// Replace the leaves named in `inserts` (0-based, left to right) by the
/// given trees.  Grafting `Leaf` is the identity at that slot; grafting
/// `Empty` deletes the leaf.
pub fn graft(q: &Tree, inserts: &[(usize, Tree)]) -> Result<Tree, TreeError> {
    let n = q.leaf_count();
    for (k, _) in inserts {
        if *k >= n {
            return Err(TreeError::IndexOutOfRange(*k));
        }
    }
    let mut next_leaf = 0usize;
    Ok(graft_rec(q, inserts, &mut next_leaf))
}

fn graft_rec(t: &Tree, inserts: &[(usize, Tree)], next_leaf: &mut usize) -> Tree {
    match t {
        Tree::Empty => Tree::Empty,
        Tree::Leaf => {
            let idx = *next_leaf;
            *next_leaf += 1;
            match inserts.iter().find(|(k, _)| *k == idx) {
                Some((_, sub)) => sub.clone(),
                None => Tree::Leaf,
            }
        }
        Tree::Node(cs) => {
            let mut out = Vec::new();
            for c in cs {
                let g = graft_rec(c, inserts, next_leaf);
                if g != Tree::Empty {
                    out.push(g);
                }
            }
            Tree::Node(out)
        }
    }
}

/// All trees obtained from `q` by shrinking one internal edge (an edge whose
/// both endpoints are internal vertices) down to a vertex.
pub fn shrink_moves(q: &Tree) -> Vec<Tree> {
    let mut out = Vec::new();
    if let Tree::Node(cs) = q {
        for (k, c) in cs.iter().enumerate() {
            if let Tree::Node(gs) = c {
                // Shrink the edge from child k into the root.
                let mut merged = Vec::new();
                merged.extend_from_slice(&cs[..k]);
                merged.extend_from_slice(gs);
                merged.extend_from_slice(&cs[k + 1..]);
                out.push(Tree::Node(merged));
            }
            // Shrinks deeper inside child k.
            for sub in shrink_moves(c) {
                let mut copy = cs.clone();
                copy[k] = sub;
                out.push(Tree::Node(copy));
            }
        }
    }
    out
}

/// All trees with between 1 and `max_leaves` leaves and height at most
/// `max_height`, sorted by leaf count and then by text form.  Stem nodes
/// (internal vertices with a single child) are included; the bare leaf is
/// the first entry.
pub fn enumerate_trees(max_leaves: usize, max_height: usize) -> Vec<Tree> {
    fn gen(n: usize, h: usize) -> Vec<Tree> {
        let mut out = Vec::new();
        if n == 1 {
            out.push(Tree::Leaf);
        }
        if h == 0 {
            return out;
        }
        // Node with children summing to n leaves, each of height <= h-1.
        fn splits(n: usize, h: usize, acc: &mut Vec<Tree>, out: &mut Vec<Tree>) {
            if n == 0 {
                if !acc.is_empty() {
                    out.push(Tree::Node(acc.clone()));
                }
                return;
            }
            for part in 1..=n {
                for c in gen(part, h) {
                    acc.push(c);
                    splits(n - part, h, acc, out);
                    acc.pop();
                }
            }
        }
        splits(n, h - 1, &mut Vec::new(), &mut out);
        out
    }
    let mut all = Vec::new();
    for n in 1..=max_leaves {
        for h in 0..=max_height {
            for t in gen(n, h) {
                if t.height() == h {
                    all.push(t);
                }
            }
        }
    }
    all.sort_by_key(|t| (t.leaf_count(), t.height(), tree_format(t)));
    all.dedup();
    all
}

/// True iff `p` arises from `q` by a (possibly empty) sequence of internal
/// edge shrinks.  The flat tree with `n` leaves refines every `n`-leaf tree.
pub fn is_refinement(p: &Tree, q: &Tree) -> bool {
    if p.leaf_count() != q.leaf_count() {
        return false;
    }
    let mut seen: BTreeSet<Tree> = BTreeSet::new();
    let mut queue: VecDeque<Tree> = VecDeque::new();
    seen.insert(q.clone());
    queue.push_back(q.clone());
    while let Some(t) = queue.pop_front() {
        if &t == p {
            return true;
        }
        for m in shrink_moves(&t) {
            if seen.insert(m.clone()) {
                queue.push_back(m);
            }
        }
    }
    false
}

/// Identifier for a vertex: the path of child indices from the root.
pub type NodePath = Vec<usize>;

/// Preorder list of internal-vertex paths (root first).
pub fn internal_nodes(t: &Tree) -> Vec<NodePath> {
    let mut out = Vec::new();
    collect_internal(t, &mut Vec::new(), &mut out);
    out
}

fn collect_internal(t: &Tree, path: &mut NodePath, out: &mut Vec<NodePath>) {
    if let Tree::Node(cs) = t {
        out.push(path.clone());
        for (k, c) in cs.iter().enumerate() {
            path.push(k);
            collect_internal(c, path, out);
            path.pop();
        }
    }
}

/// All total orderings of the internal vertices of the augmented tree
/// extending the tree partial order.  The augmentation vertex sits below the
/// root and is implicit; the root is therefore always listed first.
/// Orderings are returned sorted lexicographically by their formatted form.
pub fn linear_extensions(t: &Tree) -> Vec<Vec<NodePath>> {
    let nodes = internal_nodes(t);
    let n = nodes.len();
    if n == 0 {
        return vec![vec![]];
    }
    // Partial order: u < v iff path u is a strict prefix of path v.
    let mut out = Vec::new();
    let mut placed = vec![false; n];
    let mut current: Vec<usize> = Vec::new();
    extend_orders(&nodes, &mut placed, &mut current, &mut out);
    let mut out: Vec<Vec<NodePath>> = out
        .into_iter()
        .map(|ord| ord.into_iter().map(|i| nodes[i].clone()).collect())
        .collect();
    out.sort();
    out
}

fn extend_orders(
    nodes: &[NodePath],
    placed: &mut Vec<bool>,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == nodes.len() {
        out.push(current.clone());
        return;
    }
    for i in 0..nodes.len() {
        if placed[i] {
            continue;
        }
        // Every strict ancestor of nodes[i] must already be placed.
        let ok = (0..nodes.len()).all(|j| {
            j == i
                || placed[j]
                || !(nodes[j].len() < nodes[i].len() && nodes[i][..nodes[j].len()] == nodes[j][..])
        });
        if ok {
            placed[i] = true;
            current.push(i);
            extend_orders(nodes, placed, current, out);
            current.pop();
            placed[i] = false;
        }
    }
}

/// Variable names for every edge of a tree, in preorder edge order (the edge
/// belonging to each non-root vertex, visited depth-first left-to-right).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeVarAssignment {
    pub names: Vec<String>,
}

impl EdgeVarAssignment {
    /// Default assignment `v1, v2, ...` in preorder edge order.
    pub fn default_for(t: &Tree) -> Self {
        let names = (1..=t.edge_count()).map(|i| format!("v{i}")).collect();
        EdgeVarAssignment { names }
    }

    pub fn named(names: Vec<String>) -> Self {
        EdgeVarAssignment { names }
    }
}

/// Structural data about one edge of a tree.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeInfo {
    /// Path of the vertex the edge hangs from (its upper endpoint).
    pub upper: NodePath,
    /// Whether the upper endpoint is a leaf.
    pub to_leaf: bool,
    /// Leaf indices (0-based, left to right) above this edge.
    pub leaves_above: BTreeSet<usize>,
}

/// Edges of `t` in preorder edge order, parallel to `EdgeVarAssignment`.
pub fn edges(t: &Tree) -> Vec<EdgeInfo> {
    let mut out = Vec::new();
    let mut leaf_counter = 0usize;
    if let Tree::Node(cs) = t {
        for (k, c) in cs.iter().enumerate() {
            edges_rec(c, &mut vec![k], &mut leaf_counter, &mut out);
        }
    } else if matches!(t, Tree::Leaf) {
        // Single-node tree: no edges, but it still has one leaf.
    }
    out
}

fn edges_rec(t: &Tree, path: &mut NodePath, leaf_counter: &mut usize, out: &mut Vec<EdgeInfo>) {
    let idx = out.len();
    out.push(EdgeInfo {
        upper: path.clone(),
        to_leaf: matches!(t, Tree::Leaf),
        leaves_above: BTreeSet::new(),
    });
    match t {
        Tree::Empty => {}
        Tree::Leaf => {
            let l = *leaf_counter;
            *leaf_counter += 1;
            out[idx].leaves_above.insert(l);
        }
        Tree::Node(cs) => {
            let mut acc = BTreeSet::new();
            for (k, c) in cs.iter().enumerate() {
                path.push(k);
                let child_idx = out.len();
                edges_rec(c, path, leaf_counter, out);
                path.pop();
                acc.extend(out[child_idx].leaves_above.iter().cloned());
            }
            out[idx].leaves_above = acc;
        }
    }
}

/// The variable of the edge below leaf `i` (0-based).
pub fn leaf_edge_var(t: &Tree, a: &EdgeVarAssignment, leaf: usize) -> Option<String> {
    let es = edges(t);
    es.iter()
        .position(|e| e.to_leaf && e.leaves_above.contains(&leaf))
        .map(|k| a.names[k].clone())
}

/// One allowed singularity: an unordered pair of incoming-edge variables of
/// some internal node, annotated with the leaves it may depend on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SingularityScope {
    pub vars: (String, String),
    pub scope: BTreeSet<usize>,
}

/// For each internal node, all unordered pairs of its incoming-edge
/// variables; the scope of a pair is the set of leaves above the two edges.
/// Pairs at the root node get full scope (the output sees every input, so a
/// root singularity may depend on all of them).
pub fn allowed_singularities(t: &Tree, a: &EdgeVarAssignment) -> Vec<SingularityScope> {
    let es = edges(t);
    assert_eq!(es.len(), a.names.len(), "assignment length mismatch");
    let all_leaves: BTreeSet<usize> = (0..t.leaf_count()).collect();
    let mut out = Vec::new();
    for node in internal_nodes(t) {
        // Incoming edges of `node` are those whose upper path extends it by one.
        let incoming: Vec<usize> = es
            .iter()
            .enumerate()
            .filter(|(_, e)| e.upper.len() == node.len() + 1 && e.upper[..node.len()] == node[..])
            .map(|(k, _)| k)
            .collect();
        for i in 0..incoming.len() {
            for j in i + 1..incoming.len() {
                let (ei, ej) = (incoming[i], incoming[j]);
                let scope = if node.is_empty() {
                    all_leaves.clone()
                } else {
                    let mut s = es[ei].leaves_above.clone();
                    s.extend(es[ej].leaves_above.iter().cloned());
                    s
                };
                out.push(SingularityScope {
                    vars: (a.names[ei].clone(), a.names[ej].clone()),
                    scope,
                });
            }
        }
    }
    out
}

/// For each internal node, `(incoming edge indices, outgoing edge index)`.
/// The root's outgoing edge is the augmentation edge and has no variable, so
/// its entry is `None`.
pub fn node_edge_structure(t: &Tree) -> Vec<(NodePath, Vec<usize>, Option<usize>)> {
    let es = edges(t);
    internal_nodes(t)
        .into_iter()
        .map(|node| {
            let incoming: Vec<usize> = es
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    e.upper.len() == node.len() + 1 && e.upper[..node.len()] == node[..]
                })
                .map(|(k, _)| k)
                .collect();
            let outgoing = es.iter().position(|e| e.upper == node);
            (node, incoming, outgoing)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        tree_parse(s).unwrap()
    }

    #[test]
    fn enumerate_trees_small() {
        let one = enumerate_trees(1, 2);
        assert_eq!(
            one.iter().map(tree_format).collect::<Vec<_>>(),
            vec![".", "(.)", "((.))"]
        );
        let up_to_two = enumerate_trees(2, 1);
        assert_eq!(
            up_to_two.iter().map(tree_format).collect::<Vec<_>>(),
            vec![".", "(.)", "(..)"]
        );
        let all = enumerate_trees(3, 2);
        assert!(all.iter().any(|q| tree_format(q) == "((..).)"));
        assert!(all.iter().any(|q| tree_format(q) == "(.(..))"));
        assert!(all.iter().any(|q| tree_format(q) == "((...))"));
        assert!(all.iter().all(|q| q.leaf_count() <= 3 && q.height() <= 2));
        // Every enumerated tree is refined by the flat tree of its size.
        for q in &all {
            assert!(is_refinement(&Tree::flat(q.leaf_count()), q) || *q == Tree::Leaf);
        }
        let mut sorted = all.clone();
        sorted.sort_by_key(|t| (t.leaf_count(), t.height(), tree_format(t)));
        assert_eq!(sorted, all);
    }

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["(...)", "((..).)", "((..)(..))", ".", "o", "(.)", "((.).)"] {
            let tr = t(s);
            assert_eq!(tree_parse(&tree_format(&tr)).unwrap(), tr, "{s}");
        }
        assert_eq!(t("|(..)"), t("((..))"));
        assert_eq!(t("(...)"), Tree::flat(3));
        assert!(tree_parse("((.").is_err());
        assert!(tree_parse("(..))").is_err());
    }

    #[test]
    fn refinement_examples() {
        assert!(is_refinement(&Tree::flat(3), &t("((..).)")));
        assert!(is_refinement(&t("((..).)"), &t("((..).)")));
        assert!(!is_refinement(&Tree::flat(3), &Tree::flat(2)));
        assert!(is_refinement(&Tree::flat(2), &t("|(..)")));
        assert!(is_refinement(&Tree::flat(4), &t("((..)(..))")));
        // Shrink-only: a deeper tree never refines a flatter one.
        assert!(!is_refinement(&t("((..).)"), &Tree::flat(3)));
    }

    #[test]
    fn refinement_transitive_on_samples() {
        let trees = [Tree::flat(4), t("((..)..)"), t("((..)(..))"), t("(((..).).)")];
        for a in &trees {
            for b in &trees {
                for c in &trees {
                    if is_refinement(a, b) && is_refinement(b, c) {
                        assert!(is_refinement(a, c));
                    }
                }
            }
        }
    }

    #[test]
    fn grafting() {
        assert_eq!(graft(&Tree::flat(2), &[(0, Tree::flat(2))]).unwrap(), t("((..).)"));
        assert_eq!(graft(&Tree::flat(2), &[(1, Tree::Leaf)]).unwrap(), Tree::flat(2));
        assert_eq!(graft(&Tree::flat(2), &[(0, Tree::Empty)]).unwrap(), t("(.)"));
        assert_eq!(
            graft(&Tree::flat(2), &[(0, Tree::flat(2)), (1, Tree::flat(2))]).unwrap(),
            t("((..)(..))")
        );
        assert!(graft(&Tree::flat(2), &[(2, Tree::Leaf)]).is_err());
        // Grafting into the single-node tree returns the inserted tree.
        assert_eq!(graft(&Tree::Leaf, &[(0, t("(...)"))]).unwrap(), t("(...)"));
    }

    #[test]
    fn graft_operad_associativity() {
        // Grafting into grafted trees equals simultaneous grafting.
        let q = Tree::flat(3);
        let p1 = Tree::flat(2);
        let step = graft(&q, &[(0, p1.clone())]).unwrap();
        // After inserting 2 leaves at slot 0, old slot 1 becomes slot 2.
        let two_step = graft(&step, &[(2, p1.clone())]).unwrap();
        let at_once = graft(&q, &[(0, p1.clone()), (1, p1.clone())]).unwrap();
        assert_eq!(two_step, at_once);
    }

    #[test]
    fn linear_extension_counts() {
        assert_eq!(linear_extensions(&t("((..)(..))")).len(), 2);
        assert_eq!(linear_extensions(&t("((..).)")).len(), 1);
        assert_eq!(linear_extensions(&Tree::flat(5)).len(), 1);
        // Root with three internal children: 3! orderings after the root.
        assert_eq!(linear_extensions(&t("((.)(.)(.))")).len(), 6);
    }

    /// Independent check: count linear extensions by brute-force enumeration
    /// of all permutations, testing the prefix-closure condition directly.
    #[test]
    fn linear_extensions_match_bruteforce() {
        for s in ["((..)(..))", "((..).)", "(....)", "(((..).).)", "((..)..)", "((.)(.))"] {
            let tr = t(s);
            let nodes = internal_nodes(&tr);
            let n = nodes.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut count = 0usize;
            permute(&mut perm, 0, &mut |p| {
                let valid = p.iter().enumerate().all(|(pos, &i)| {
                    nodes.iter().enumerate().all(|(j, nj)| {
                        // If nj is a strict ancestor of nodes[i], nj must
                        // appear earlier in the permutation.
                        if nj.len() < nodes[i].len() && nodes[i][..nj.len()] == nj[..] {
                            p[..pos].contains(&j)
                        } else {
                            true
                        }
                    })
                });
                if valid {
                    count += 1;
                }
            });
            assert_eq!(linear_extensions(&tr).len(), count, "{s}");
        }
    }

    fn permute(v: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == v.len() {
            f(v);
            return;
        }
        for i in k..v.len() {
            v.swap(k, i);
            permute(v, k + 1, f);
            v.swap(k, i);
        }
    }

    #[test]
    fn flat_refines_everything_with_same_leaves() {
        let targets = ["((..).)", "(.(..))", "((..)(..))", "((...).)", "(((..).).)"];
        for s in targets {
            let q = t(s);
            assert!(is_refinement(&Tree::flat(q.leaf_count()), &q), "{s}");
        }
    }

    #[test]
    fn singularity_scopes() {
        // left3 with default vars: edges in preorder are
        // v1 = internal edge, v2, v3 = deep leaves, v4 = leaf 3.
        let tr = t("((..).)");
        let a = EdgeVarAssignment::default_for(&tr);
        let sc = allowed_singularities(&tr, &a);
        assert_eq!(sc.len(), 2);
        // Root node: incoming v1 and v4, full scope.
        assert_eq!(sc[0].vars, ("v1".to_string(), "v4".to_string()));
        assert_eq!(sc[0].scope, BTreeSet::from([0, 1, 2]));
        // Upper node: incoming v2 and v3, scope = leaves 0,1.
        assert_eq!(sc[1].vars, ("v2".to_string(), "v3".to_string()));
        assert_eq!(sc[1].scope, BTreeSet::from([0, 1]));

        let fl = Tree::flat(3);
        let af = EdgeVarAssignment::default_for(&fl);
        let scf = allowed_singularities(&fl, &af);
        assert_eq!(scf.len(), 3);
        assert!(scf.iter().all(|s| s.scope == BTreeSet::from([0, 1, 2])));

        let q = t("((..)(..))");
        let aq = EdgeVarAssignment::default_for(&q);
        let scq = allowed_singularities(&q, &aq);
        // (v1, v4) full scope; (v2, v3) leaves 0,1; (v5, v6) leaves 2,3.
        assert_eq!(scq.len(), 3);
        assert_eq!(scq[0].scope, BTreeSet::from([0, 1, 2, 3]));
        assert_eq!(scq[1].scope, BTreeSet::from([0, 1]));
        assert_eq!(scq[2].scope, BTreeSet::from([2, 3]));
    }

    #[test]
    fn node_structure() {
        let tr = t("((..).)");
        let ns = node_edge_structure(&tr);
        assert_eq!(ns.len(), 2);
        // Root: incoming edges 0 (internal) and 3 (leaf 3), no outgoing var.
        assert_eq!(ns[0].1, vec![0, 3]);
        assert_eq!(ns[0].2, None);
        // Upper node: incoming 1, 2; outgoing edge 0.
        assert_eq!(ns[1].1, vec![1, 2]);
        assert_eq!(ns[1].2, Some(0));
    }
}
