//! Batch command-line front end.
//!
//! Every run is deterministic given its inputs and flags: term order is
//! sorted, reports carry no timestamps, and parallel sections assemble
//! their output in a fixed order.  Exit codes: `0` success, `1` a check
//! reported a violation, `2` usage or parse error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::hopf::parse_hopf;
use crate::multimaps::{
    build_ope, check_membership, compose, maps_equal, read_multimap, refine_map, write_multimap,
};
use crate::series::{
    expand_diff, hopf_act, parse_series, restrict_zero, shift_vars, GModule,
    SignedVars, TruncationWindow,
};
use crate::trees::{
    enumerate_trees, linear_extensions, shrink_moves, tree_format, tree_parse, EdgeVarAssignment,
};
use crate::valg::{
    algebra_family_check, boson_module, check_axioms, check_locality, check_quasisymmetry,
    free_boson, from_comm_alg, read_va, to_comm_alg, Report, VertexAlgebra,
};

#[derive(Parser)]
#[command(
    name = "vertexkit",
    version,
    about = "Exact-arithmetic toolkit for divided-power Hopf algebras, localized series, \
             tree-indexed singular maps and vertex-algebra verification",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

/// Truncation-window flags shared by the series verbs.
#[derive(Args, Clone)]
struct WindowFlags {
    /// Total-degree ceiling of the truncation window.
    #[arg(long, default_value_t = 8)]
    ceiling: i64,
    /// Per-variable exponent floor, `var=k` (repeatable).  Defaults to
    /// `-(ceiling+1)` for every variable.
    #[arg(long = "floor", value_name = "VAR=K")]
    floors: Vec<String>,
    /// Difference-exponent floor for a pair, `a-b=k` (repeatable).
    #[arg(long = "diff-floor", value_name = "A-B=K")]
    diff_floors: Vec<String>,
}

#[derive(Subcommand)]
enum Verb {
    /// Expand difference symbols as one-sided series and/or substitute
    /// variables by signed sums of variables.
    Expand {
        /// Input series, e.g. "(x-y)^-1" or "x^-2 + x*y".
        #[arg(long = "in", value_name = "SERIES")]
        input: String,
        /// Expand every difference symbol with this variable subordinate.
        #[arg(long)]
        subordinate: Option<String>,
        /// Substitution `var=a-b+c` (repeatable), applied after expansion.
        #[arg(long = "shift", value_name = "VAR=EXPR")]
        shifts: Vec<String>,
        /// Set this variable to zero after expanding (requires regularity).
        #[arg(long = "at-zero", value_name = "VAR")]
        at_zero: Option<String>,
        #[command(flatten)]
        window: WindowFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Act by a divided-power Hopf element on a series.
    Act {
        /// Hopf element, e.g. "D(2)" or "D(0) + 3*D(1)".
        #[arg(long)]
        hopf: String,
        /// Input series over the scalar module.
        #[arg(long = "in", value_name = "SERIES")]
        input: String,
        #[command(flatten)]
        window: WindowFlags,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plug one multimap file into a slot of another.
    Compose {
        /// Outer multimap file.
        #[arg(long)]
        outer: PathBuf,
        /// Inner (fully invariant) multimap file.
        #[arg(long)]
        inner: PathBuf,
        /// Input slot of the outer map receiving the inner map.
        #[arg(long, default_value_t = 0)]
        slot: usize,
        /// Vertex-algebra file whose module resolves module names.
        #[arg(long = "vertex-algebra")]
        va: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Transport a multimap to a refined tree.
    Refine {
        /// Input multimap file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Target tree, e.g. "((..).)".
        #[arg(long)]
        target: String,
        /// Edge variables of the target tree (space separated); fresh
        /// names `v0 v1 ...` are used when omitted.
        #[arg(long = "target-vars")]
        target_vars: Option<String>,
        /// Vertex-algebra file whose module resolves module names.
        #[arg(long = "vertex-algebra")]
        va: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a vertex-algebra file (axioms, quasisymmetry, locality) or a
    /// multimap file (membership), or run the algebra-family check.
    Check {
        /// Vertex-algebra file to verify.
        #[arg(long = "vertex-algebra")]
        va: Option<PathBuf>,
        /// Multimap file to verify.
        #[arg(long)]
        multimap: Option<PathBuf>,
        /// Also run the algebra-family check over trees with at most this
        /// many leaves (vertex-algebra input only).
        #[arg(long = "family-leaves")]
        family_leaves: Option<usize>,
        /// Height bound for the family check trees.
        #[arg(long = "family-height", default_value_t = 2)]
        family_height: usize,
        /// Locality search bound (default 2 * weight cutoff).
        #[arg(long = "n-max")]
        n_max: Option<i64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit the flat ternary table of a vertex algebra and the two
    /// operator-ordering expansions of each entry.
    Ope {
        /// Vertex-algebra file.
        #[arg(long = "vertex-algebra")]
        va: PathBuf,
        /// Locality search bound (default 2 * weight cutoff).
        #[arg(long = "n-max")]
        n_max: Option<i64>,
        /// Skip the per-entry ordering expansions.
        #[arg(long)]
        table_only: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate trees, linear extensions or one-step refinements.
    Trees {
        /// Maximum number of leaves.
        #[arg(long, default_value_t = 3)]
        leaves: usize,
        /// Maximum height.
        #[arg(long, default_value_t = 3)]
        height: usize,
        /// List the linear extensions of this tree's internal vertices.
        #[arg(long = "linear-extensions", value_name = "TREE")]
        linear_extensions: Option<String>,
        /// List the one-step shrink refinements of this tree.
        #[arg(long = "refinements", value_name = "TREE")]
        refinements: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the free-boson and holomorphic showcases end to end.
    Demo {
        /// Weight cutoff for the free-boson showcase.
        #[arg(long = "weight-cutoff", default_value_t = 3)]
        weight_cutoff: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point used by `main`; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    init_threads();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap prints help/version through this path too.
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if is_help { 0 } else { 2 };
        }
    };
    match dispatch(cli.verb) {
        Ok(Outcome { text, failed }) => {
            print!("{text}");
            if failed {
                1
            } else {
                0
            }
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

/// Cap internal parallelism from `VERTEXKIT_THREADS` (best effort; the
/// global pool can only be configured once per process).
fn init_threads() {
    if let Ok(v) = std::env::var("VERTEXKIT_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

struct Outcome {
    text: String,
    failed: bool,
}

impl Outcome {
    fn ok(text: String) -> Self {
        Outcome { text, failed: false }
    }
}

fn dispatch(verb: Verb) -> Result<Outcome, String> {
    let (outcome, out_path) = match verb {
        Verb::Expand { input, subordinate, shifts, at_zero, window, out } => {
            (cmd_expand(&input, subordinate.as_deref(), &shifts, at_zero.as_deref(), &window)?, out)
        }
        Verb::Act { hopf, input, window, out } => (cmd_act(&hopf, &input, &window)?, out),
        Verb::Compose { outer, inner, slot, va, out } => {
            (cmd_compose(&outer, &inner, slot, va.as_deref())?, out)
        }
        Verb::Refine { input, target, target_vars, va, out } => (
            cmd_refine(&input, &target, target_vars.as_deref(), va.as_deref())?,
            out,
        ),
        Verb::Check { va, multimap, family_leaves, family_height, n_max, out } => (
            cmd_check(va.as_deref(), multimap.as_deref(), family_leaves, family_height, n_max)?,
            out,
        ),
        Verb::Ope { va, n_max, table_only, out } => (cmd_ope(&va, n_max, table_only)?, out),
        Verb::Trees { leaves, height, linear_extensions, refinements, out } => (
            cmd_trees(leaves, height, linear_extensions.as_deref(), refinements.as_deref())?,
            out,
        ),
        Verb::Demo { weight_cutoff, out } => (cmd_demo(weight_cutoff)?, out),
    };
    if let Some(path) = out_path {
        std::fs::write(&path, &outcome.text)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        let mut o = outcome;
        o.text = String::new();
        Ok(o)
    } else {
        Ok(outcome)
    }
}

// ---------------------------------------------------------------------------
// Window and module plumbing.
// ---------------------------------------------------------------------------

/// Collect the variable names appearing in a series expression, in order of
/// first appearance, together with the difference pairs written as symbols.
fn scan_expression(s: &str) -> (Vec<String>, Vec<(String, String)>) {
    let mut vars: Vec<String> = Vec::new();
    let mut pairs: Vec<(String, String)> = Vec::new();
    let bytes: Vec<char> = s.chars().collect();
    let mut idents: Vec<(usize, String)> = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_alphabetic() || bytes[i] == '_' {
            let start = i;
            let mut name = String::new();
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                name.push(bytes[i]);
                i += 1;
            }
            idents.push((start, name));
        } else {
            i += 1;
        }
    }
    for (_, name) in &idents {
        if !vars.contains(name) {
            vars.push(name.clone());
        }
    }
    // Difference pairs: "(a-b)" groups.
    let text: String = bytes.iter().collect();
    let mut rest = text.as_str();
    while let Some(open) = rest.find('(') {
        let tail = &rest[open + 1..];
        if let Some(close) = tail.find(')') {
            let inner = &tail[..close];
            if let Some((a, b)) = inner.split_once('-') {
                let (a, b) = (a.trim(), b.trim());
                let ident = |t: &str| {
                    !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                };
                if ident(a) && ident(b) {
                    let p = (a.to_string(), b.to_string());
                    if !pairs.contains(&p) {
                        pairs.push(p);
                    }
                }
            }
            rest = &tail[close + 1..];
        } else {
            break;
        }
    }
    (vars, pairs)
}

fn build_window(expr: &str, flags: &WindowFlags) -> Result<TruncationWindow, String> {
    let (vars, pairs) = scan_expression(expr);
    if vars.is_empty() {
        return Err("no variables found in the input expression".into());
    }
    let default_floor = -(flags.ceiling.abs() + 1);
    let mut w = TruncationWindow::new(vars.clone(), flags.ceiling).with_all_floors(default_floor);
    for (a, b) in &pairs {
        w = w.with_pair(a, b, default_floor);
    }
    for f in &flags.floors {
        let (var, k) = f
            .split_once('=')
            .ok_or_else(|| format!("--floor expects var=k, got {f:?}"))?;
        let k: i64 = k.trim().parse().map_err(|_| format!("bad floor value in {f:?}"))?;
        let var = var.trim();
        if !vars.iter().any(|v| v == var) {
            return Err(format!("--floor names unknown variable {var:?}"));
        }
        w = w.with_floor(var, k);
    }
    for f in &flags.diff_floors {
        let (pair, k) = f
            .split_once('=')
            .ok_or_else(|| format!("--diff-floor expects a-b=k, got {f:?}"))?;
        let k: i64 = k.trim().parse().map_err(|_| format!("bad diff floor value in {f:?}"))?;
        let (a, b) = pair
            .split_once('-')
            .ok_or_else(|| format!("--diff-floor pair must be written a-b, got {pair:?}"))?;
        w = w.with_pair(a.trim(), b.trim(), k);
    }
    Ok(w)
}

/// Resolve built-in module names (`Q`, `polyN`, `bosonN`) and the module of
/// an optional vertex-algebra file.
fn module_resolver(extra: Option<Arc<GModule>>) -> impl Fn(&str) -> Option<Arc<GModule>> {
    move |name: &str| {
        if let Some(m) = &extra {
            if m.name == name {
                return Some(m.clone());
            }
        }
        if name == "Q" {
            return Some(GModule::scalar());
        }
        if let Some(n) = name.strip_prefix("poly") {
            if let Ok(n) = n.parse::<i64>() {
                return Some(GModule::poly(n));
            }
        }
        if let Some(w) = name.strip_prefix("boson") {
            if let Ok(w) = w.parse::<i64>() {
                return Some(boson_module(w).0);
            }
        }
        None
    }
}

fn load_va(path: &std::path::Path) -> Result<VertexAlgebra, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    read_va(&text).map_err(|e| format!("{}: {e:?}", path.display()))
}

fn load_multimap(
    path: &std::path::Path,
    va: Option<&std::path::Path>,
) -> Result<crate::multimaps::SingularMultiMap, String> {
    let extra = match va {
        Some(p) => Some(load_va(p)?.module),
        None => None,
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let resolve = module_resolver(extra);
    read_multimap(&text, &resolve).map_err(|e| format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Verbs.
// ---------------------------------------------------------------------------

fn cmd_expand(
    input: &str,
    subordinate: Option<&str>,
    shifts: &[String],
    at_zero: Option<&str>,
    flags: &WindowFlags,
) -> Result<Outcome, String> {
    let window = build_window(input, flags)?;
    let module = GModule::scalar();
    let mut s = parse_series(input, &window, &module).map_err(|e| e.to_string())?;
    if let Some(sub) = subordinate {
        let pairs = s.window.pairs.clone();
        for (i, j) in pairs {
            let a = s.window.vars[i].clone();
            let b = s.window.vars[j].clone();
            if a == sub || b == sub {
                s = expand_diff(&s, (&a, &b), sub).map_err(|e| e.to_string())?;
            }
        }
    }
    if !shifts.is_empty() {
        let mut subst: BTreeMap<String, SignedVars> = BTreeMap::new();
        let mut target_vars = s.window.vars.clone();
        for sh in shifts {
            let (var, expr) = sh
                .split_once('=')
                .ok_or_else(|| format!("--shift expects var=expr, got {sh:?}"))?;
            let sv = parse_signed_vars(expr)?;
            for (v, _) in &sv {
                if !target_vars.contains(v) {
                    target_vars.push(v.clone());
                }
            }
            subst.insert(var.trim().to_string(), sv);
        }
        for v in &s.window.vars {
            subst.entry(v.clone()).or_insert_with(|| vec![(v.clone(), 1)]);
        }
        let default_floor = -(flags.ceiling.abs() + 1);
        let mut tgt = TruncationWindow::new(target_vars.clone(), flags.ceiling)
            .with_all_floors(default_floor);
        for a in 0..target_vars.len() {
            for b in (a + 1)..target_vars.len() {
                tgt = tgt.with_pair(&target_vars[a], &target_vars[b], default_floor);
            }
        }
        s = shift_vars(&s, &subst, &tgt).map_err(|e| e.to_string())?;
    }
    if let Some(v) = at_zero {
        s = restrict_zero(&s, v).map_err(|e| e.to_string())?;
    }
    Ok(Outcome::ok(format!("{s}\n")))
}

fn parse_signed_vars(expr: &str) -> Result<SignedVars, String> {
    let mut out: SignedVars = Vec::new();
    let mut sign = 1i64;
    let mut cur = String::new();
    let flush = |cur: &mut String, sign: i64, out: &mut SignedVars| -> Result<(), String> {
        let t = cur.trim();
        if !t.is_empty() {
            out.push((t.to_string(), sign));
        }
        cur.clear();
        Ok(())
    };
    for c in expr.chars() {
        match c {
            '+' => {
                flush(&mut cur, sign, &mut out)?;
                sign = 1;
            }
            '-' => {
                flush(&mut cur, sign, &mut out)?;
                sign = -1;
            }
            _ => cur.push(c),
        }
    }
    flush(&mut cur, sign, &mut out)?;
    if out.is_empty() {
        return Err(format!("empty substitution expression {expr:?}"));
    }
    Ok(out)
}

fn cmd_act(hopf: &str, input: &str, flags: &WindowFlags) -> Result<Outcome, String> {
    let h = parse_hopf(hopf)?;
    let window = build_window(input, flags)?;
    let module = GModule::scalar();
    let s = parse_series(input, &window, &module).map_err(|e| e.to_string())?;
    let r = hopf_act(&h, &s).map_err(|e| e.to_string())?;
    Ok(Outcome::ok(format!("{r}\n")))
}

fn cmd_compose(
    outer: &std::path::Path,
    inner: &std::path::Path,
    slot: usize,
    va: Option<&std::path::Path>,
) -> Result<Outcome, String> {
    let g = load_multimap(outer, va)?;
    let f = load_multimap(inner, va)?;
    let h = compose(&g, slot, &f).map_err(|e| e.to_string())?;
    Ok(Outcome::ok(write_multimap(&h)))
}

fn cmd_refine(
    input: &std::path::Path,
    target: &str,
    target_vars: Option<&str>,
    va: Option<&std::path::Path>,
) -> Result<Outcome, String> {
    let f = load_multimap(input, va)?;
    let q = tree_parse(target).map_err(|e| format!("bad target tree: {e:?}"))?;
    let qvars = match target_vars {
        Some(names) => EdgeVarAssignment::named(
            names.split_whitespace().map(|s| s.to_string()).collect(),
        ),
        None => EdgeVarAssignment::default_for(&q),
    };
    let r = refine_map(&f, &q, &qvars).map_err(|e| e.to_string())?;
    Ok(Outcome::ok(write_multimap(&r)))
}

/// Locality order for the "generator pair": the lightest non-vacuum basis
/// vector paired with itself.
fn generator_locality(v: &VertexAlgebra, n_max: i64) -> Result<(usize, i64), String> {
    let gen = (0..v.module.dim())
        .filter(|&i| i != v.vacuum)
        .min_by_key(|&i| (v.module.weight[i], i))
        .ok_or("the module has no non-vacuum basis vector")?;
    let n = check_locality(v, gen, gen, n_max)
        .map_err(|e| format!("locality search failed: {e:?}"))?;
    Ok((gen, n))
}

fn full_locality(v: &VertexAlgebra, n_max: i64) -> Result<i64, String> {
    let mut n = 0;
    for a in 0..v.module.dim() {
        for b in 0..v.module.dim() {
            n = n.max(
                check_locality(v, a, b, n_max)
                    .map_err(|e| format!("locality search failed for pair ({a},{b}): {e:?}"))?,
            );
        }
    }
    Ok(n)
}

fn cmd_check(
    va: Option<&std::path::Path>,
    multimap: Option<&std::path::Path>,
    family_leaves: Option<usize>,
    family_height: usize,
    n_max: Option<i64>,
) -> Result<Outcome, String> {
    match (va, multimap) {
        (Some(path), None) => {
            let v = load_va(path)?;
            let bound = n_max.unwrap_or(2 * v.weight_cutoff);
            let mut rep = check_axioms(&v);
            rep.merge(check_quasisymmetry(&v));
            let mut text = rep.render();
            let mut failed = !rep.passed();
            match generator_locality(&v, bound) {
                Ok((gen, n)) => {
                    if !failed {
                        let _ = writeln!(
                            text,
                            "all axioms pass, locality N={n} for generator pair ({name},{name})",
                            name = v.module.basis[gen]
                        );
                    }
                }
                Err(e) => {
                    failed = true;
                    let _ = writeln!(text, "FAIL  locality ({e})");
                }
            }
            if let Some(leaves) = family_leaves {
                let fam = algebra_family_check(&v, leaves, family_height);
                failed = failed || !fam.passed();
                text.push_str(&fam.render());
            }
            Ok(Outcome { text, failed })
        }
        (None, Some(path)) => {
            let f = load_multimap(path, None)?;
            let rep = check_membership(&f);
            Ok(Outcome { text: rep.render(), failed: !rep.passed() })
        }
        _ => Err("check needs exactly one of --vertex-algebra or --multimap".into()),
    }
}

fn cmd_ope(
    va: &std::path::Path,
    n_max: Option<i64>,
    table_only: bool,
) -> Result<Outcome, String> {
    let v = load_va(va)?;
    let bound = n_max.unwrap_or(2 * v.weight_cutoff);
    let n = full_locality(&v, bound)?;
    let f3 = build_ope(&v, n).map_err(|e| e.to_string())?;
    let mut text = format!("# locality order {n}\n{}", write_multimap(&f3));
    if !table_only {
        text.push_str("# ordering expansions: the (x-y) symbol expanded with y\n");
        text.push_str("# subordinate (x-ordering) and with x subordinate (y-ordering)\n");
        for (key, entry) in &f3.table {
            let names: Vec<String> =
                key.iter().map(|b| v.module.basis[*b].clone()).collect();
            for (label, sub) in [("i[x,y]", "y"), ("i[y,x]", "x")] {
                let mut e = entry.clone();
                // Deepen the outer floors so the expansion stays faithful
                // within the printed window.
                e.window.floors[0] -= bound + v.weight_cutoff;
                e.window.floors[1] -= bound + v.weight_cutoff;
                match expand_diff(&e, ("x", "y"), sub) {
                    Ok(x) => {
                        let _ = writeln!(text, "{label} {} -> {x}", names.join(","));
                    }
                    Err(err) => {
                        let _ = writeln!(text, "{label} {} -> error: {err}", names.join(","));
                    }
                }
            }
        }
    }
    Ok(Outcome::ok(text))
}

fn cmd_trees(
    leaves: usize,
    height: usize,
    lin: Option<&str>,
    refinements: Option<&str>,
) -> Result<Outcome, String> {
    let mut text = String::new();
    if let Some(spec) = lin {
        let t = tree_parse(spec).map_err(|e| format!("bad tree: {e:?}"))?;
        let exts = linear_extensions(&t);
        let _ = writeln!(text, "{} orderings of the internal vertices of {spec}", exts.len());
        for (i, ext) in exts.iter().enumerate() {
            let parts: Vec<String> = ext
                .iter()
                .map(|p| {
                    if p.is_empty() {
                        "root".to_string()
                    } else {
                        p.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(".")
                    }
                })
                .collect();
            let _ = writeln!(text, "  {}: {}", i + 1, parts.join(" < "));
        }
        return Ok(Outcome::ok(text));
    }
    if let Some(spec) = refinements {
        let t = tree_parse(spec).map_err(|e| format!("bad tree: {e:?}"))?;
        let moves = shrink_moves(&t);
        let _ = writeln!(text, "{} one-step shrinks of {spec}", moves.len());
        for m in &moves {
            let _ = writeln!(text, "  {}", tree_format(m));
        }
        return Ok(Outcome::ok(text));
    }
    let all = enumerate_trees(leaves, height);
    let _ = writeln!(text, "{} trees with <= {leaves} leaves and height <= {height}", all.len());
    for t in &all {
        let _ = writeln!(
            text,
            "  {}  leaves={} height={}",
            tree_format(t),
            t.leaf_count(),
            t.height()
        );
    }
    Ok(Outcome::ok(text))
}

fn cmd_demo(weight_cutoff: i64) -> Result<Outcome, String> {
    let mut text = String::new();
    let mut failed = false;
    let record = |text: &mut String, failed: &mut bool, title: &str, rep: &Report| {
        let _ = writeln!(text, "== {title} ==");
        text.push_str(&rep.render());
        *failed = *failed || !rep.passed();
    };

    // Free boson showcase.
    let v = free_boson(weight_cutoff);
    let mut rep = check_axioms(&v);
    rep.merge(check_quasisymmetry(&v));
    record(&mut text, &mut failed, "free boson: axioms", &rep);
    let (gen, n_gen) = generator_locality(&v, 2 * weight_cutoff)?;
    let _ = writeln!(
        text,
        "locality N={n_gen} for generator pair ({name},{name})",
        name = v.module.basis[gen]
    );
    let n = full_locality(&v, 2 * weight_cutoff)?;
    let f2 = crate::multimaps::from_vertex_operator(&v).map_err(|e| e.to_string())?;
    record(&mut text, &mut failed, "free boson: binary map membership", &check_membership(&f2));
    let f3 = build_ope(&v, n).map_err(|e| e.to_string())?;
    record(&mut text, &mut failed, "free boson: flat ternary membership", &check_membership(&f3));
    let left3 = tree_parse("((..).)").map_err(|e| format!("{e:?}"))?;
    let composed = compose(&f2, 0, &f2).map_err(|e| e.to_string())?;
    let refined = refine_map(&f3, &left3, &composed.vars).map_err(|e| e.to_string())?;
    let agree = maps_equal(&refined, &composed);
    let _ = writeln!(
        text,
        "{}  flat ternary refines to the iterated binary composition",
        if agree { "pass" } else { "FAIL" }
    );
    failed = failed || !agree;
    let fam = algebra_family_check(&v, 2, 1);
    record(&mut text, &mut failed, "free boson: algebra family (small)", &fam);

    // Holomorphic showcase.
    let poly = GModule::poly(weight_cutoff.max(2));
    let hv = from_comm_alg(&poly).map_err(|e| format!("{e:?}"))?;
    let mut rep = check_axioms(&hv);
    rep.merge(check_quasisymmetry(&hv));
    record(&mut text, &mut failed, "holomorphic: axioms", &rep);
    let back = to_comm_alg(&hv).map_err(|e| format!("{e:?}"))?;
    let round = from_comm_alg(&back).map(|v2| v2.y_table == hv.y_table).unwrap_or(false);
    let _ = writeln!(
        text,
        "{}  holomorphic round trip returns the same module",
        if round { "pass" } else { "FAIL" }
    );
    failed = failed || !round;
    let n_holo = full_locality(&hv, 2 * hv.weight_cutoff)?;
    let _ = writeln!(
        text,
        "{}  all holomorphic locality orders are 0",
        if n_holo == 0 { "pass" } else { "FAIL" }
    );
    failed = failed || n_holo != 0;
    let fam = algebra_family_check(&hv, 3, 2);
    record(&mut text, &mut failed, "holomorphic: algebra family", &fam);

    let _ = writeln!(text, "{}", if failed { "DEMO: FAIL" } else { "DEMO: PASS" });
    Ok(Outcome { text, failed })
}
