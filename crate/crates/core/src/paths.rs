//! Near edge-disjoint path families between two vertices.
//!
//! For a pair `(u, v)` the builder grows a BFS tree from `u`, then a
//! vertex-disjoint BFS tree of the same depth from `v`, prunes both to a
//! common shape and matches their leaves by position. From every matched
//! leaf pair `(u_i, v_i)` it grows two more disjoint trees and joins their
//! deepest levels with a single cross edge, giving one path
//! `u -> u_i -> x -> y -> v_i -> v` per leaf pair. All paths have exactly
//! `2 * (depth1 + depth2) + 1` edges. Paths may share edges only inside the
//! first-stage trees; the sharing is measured and reported as the family's
//! read multiplicity.

use std::io::Write;

use log::trace;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::graph::{path_scale, QueryGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathParams {
    /// Target path-length scale `L`.
    pub path_scale: f64,
    pub epsilon: f64,
    pub depth1: usize,
    /// Second-stage depth. Zero joins matched leaves directly.
    pub depth2: usize,
    pub branch_first: usize,
    pub branch_rest: usize,
    pub min_paths: usize,
    pub max_paths: usize,
}

impl PathParams {
    /// Parameters straight from the asymptotic construction, natural log
    /// throughout: `L = ln n / ln ln n`, `eps = 1 / sqrt(ln ln n)`, depths
    /// `ceil(eps L)` and `ceil((1/2 + eps) L)`, root branching
    /// `ceil(level1_constant * ln n * (2c)^-L)` and `ceil(4 ln n)` below.
    pub fn theoretical(n: usize, gap: f64, level1_constant: f64) -> Result<Self> {
        if !(gap > 0.0 && gap <= 0.5) {
            return Err(invalid(format!("gap c = {gap} must lie in (0, 1/2]")));
        }
        let l = path_scale(n)?;
        let ln = (n as f64).ln();
        let eps = 1.0 / ln.ln().sqrt();
        Ok(Self {
            path_scale: l,
            epsilon: eps,
            depth1: ((eps * l).ceil() as usize).max(1),
            depth2: (((0.5 + eps) * l).ceil() as usize).max(1),
            branch_first: ((level1_constant * ln * (2.0 * gap).powf(-l)).ceil() as usize).max(1),
            branch_rest: ((4.0 * ln).ceil() as usize).max(1),
            min_paths: 1,
            max_paths: n,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth1 == 0 {
            return Err(invalid("depth1 must be >= 1"));
        }
        if self.branch_first == 0 || self.branch_rest == 0 {
            return Err(invalid("branching factors must be >= 1"));
        }
        if self.min_paths == 0 {
            return Err(invalid("min_paths must be >= 1"));
        }
        if self.max_paths < self.min_paths {
            return Err(invalid("max_paths must be >= min_paths"));
        }
        Ok(())
    }

    /// Edges on every assembled path.
    pub fn path_len(&self) -> usize {
        2 * (self.depth1 + self.depth2) + 1
    }

    fn branching(&self, level: usize, first_stage: bool) -> usize {
        if first_stage && level == 1 {
            self.branch_first
        } else {
            self.branch_rest
        }
    }

    /// Leaves of a full first-stage tree, before the `max_paths` cap.
    pub fn designed_leaves(&self) -> usize {
        self.branch_first
            .saturating_mul(self.branch_rest.saturating_pow(self.depth1 as u32 - 1))
    }

    /// Vertices a full construction for one pair occupies.
    pub fn designed_vertices(&self) -> usize {
        let first: usize = (1..=self.depth1)
            .map(|i| self.branch_first.saturating_mul(self.branch_rest.saturating_pow(i as u32 - 1)))
            .fold(1usize, usize::saturating_add);
        let second: usize = (1..=self.depth2)
            .map(|i| self.branch_rest.saturating_pow(i as u32))
            .fold(0usize, usize::saturating_add);
        let leaves = self.designed_leaves().min(self.max_paths);
        first
            .saturating_add(leaves.saturating_mul(second))
            .saturating_mul(2)
    }
}

/// Observable shape of a query graph used to size the construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphShape {
    pub n: usize,
    pub density: f64,
    pub min_degree: usize,
}

impl GraphShape {
    pub fn of(graph: &QueryGraph) -> Self {
        Self {
            n: graph.n(),
            density: graph.density(),
            min_degree: (0..graph.n()).map(|x| graph.degree(x)).min().unwrap_or(0),
        }
    }
}

/// Outcome of fitting the construction to a finite graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDerivation {
    pub theoretical: PathParams,
    pub chosen: PathParams,
    /// Human-readable `field: from -> to` entries for every shrunk parameter.
    pub shrunk: Vec<String>,
    pub expected_paths: f64,
    /// Predicted signal-to-noise ratio of the path vote.
    pub predicted_margin: f64,
}

/// Fraction of the vertices one pair's construction may occupy.
const VERTEX_FILL: f64 = 0.5;

/// Shrink the theoretical parameters until the construction fits the graph.
///
/// Every field only ever decreases. Among the feasible settings the one
/// with the largest predicted vote margin wins: paths of length `l` carry a
/// bias of `contraction^l` towards the truth, paths sharing a first-level
/// edge are correlated through it, and a leaf pair yields a path only if
/// some cross edge exists, which at density `p` happens with probability
/// `1 - (1-p)^(|X| |Y|)`.
pub fn fit_params(theoretical: &PathParams, shape: GraphShape, contraction: f64) -> ParamDerivation {
    let n = shape.n as f64;
    let p = shape.density.clamp(0.0, 1.0);
    let cap_first = shape.min_degree.saturating_sub(1).max(1);
    let rho = contraction.clamp(0.0, 1.0);
    let mut best: Option<(f64, f64, PathParams)> = None;

    for d1 in 1..=theoretical.depth1 {
        for d2 in 0..=theoretical.depth2 {
            let rest_used = d1 > 1 || d2 > 0;
            let br_max = if rest_used { theoretical.branch_rest } else { 1 };
            for br in 1..=br_max {
                for bf in 1..=theoretical.branch_first.min(cap_first) {
                    let cand = PathParams {
                        depth1: d1,
                        depth2: d2,
                        branch_first: bf,
                        branch_rest: if rest_used { br } else { theoretical.branch_rest },
                        ..theoretical.clone()
                    };
                    let used = cand.designed_vertices() as f64;
                    if used > VERTEX_FILL * n {
                        break;
                    }
                    if rest_used && p * (n - used) < 2.0 * br as f64 {
                        break;
                    }
                    let leaves = cand.designed_leaves().min(cand.max_paths) as f64;
                    let side = (br as f64).powi(d2 as i32);
                    let p_cross = 1.0 - (1.0 - p).powf(side * side);
                    let expected = leaves * p_cross;
                    if expected < cand.min_paths as f64 {
                        continue;
                    }
                    let margin = vote_margin(&cand, rho, p_cross);
                    let better = match &best {
                        None => true,
                        Some((m, e, b)) => {
                            margin > *m * (1.0 + 1e-9)
                                || (margin >= *m * (1.0 - 1e-9)
                                    && (expected > *e
                                        || (expected == *e && cand.path_len() < b.path_len())))
                        }
                    };
                    if better {
                        best = Some((margin, expected, cand));
                    }
                }
            }
        }
    }

    let (margin, expected, chosen) = best.unwrap_or_else(|| {
        let fallback = PathParams {
            depth1: 1,
            depth2: 0,
            branch_first: 1,
            ..theoretical.clone()
        };
        (0.0, 0.0, fallback)
    });
    let mut shrunk = Vec::new();
    let mut note = |name: &str, from: usize, to: usize| {
        if to < from {
            shrunk.push(format!("{name}: {from} -> {to}"));
        }
    };
    note("depth1", theoretical.depth1, chosen.depth1);
    note("depth2", theoretical.depth2, chosen.depth2);
    note("branch_first", theoretical.branch_first, chosen.branch_first);
    note("branch_rest", theoretical.branch_rest, chosen.branch_rest);
    ParamDerivation {
        theoretical: theoretical.clone(),
        chosen,
        shrunk,
        expected_paths: expected,
        predicted_margin: margin,
    }
}

/// Mean over standard deviation of the summed path signs. Paths below one
/// root child share the two first-level edges (one per side).
fn vote_margin(params: &PathParams, rho: f64, p_cross: f64) -> f64 {
    let groups = params.branch_first as f64;
    let per_group = params.branch_rest.pow(params.depth1 as u32 - 1) as f64 * p_cross;
    let shared = if params.depth1 > 1 { rho.powi(2) } else { 1.0 };
    let own = rho.powi(params.path_len() as i32) / shared;
    let mean = shared * per_group * own;
    let var = per_group * (1.0 - own * own) + per_group * per_group * own * own * (1.0 - shared * shared);
    groups * mean / (groups * var + 1e-12).sqrt()
}

/// A BFS tree stored level by level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BfsTree {
    pub root: usize,
    pub levels: Vec<Vec<usize>>,
    pub parent: FxHashMap<usize, usize>,
    /// Number of levels below the root actually reached.
    pub depth: usize,
}

impl BfsTree {
    fn new(root: usize) -> Self {
        Self {
            root,
            levels: vec![vec![root]],
            parent: FxHashMap::default(),
            depth: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.levels.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, x: usize) -> bool {
        x == self.root || self.parent.contains_key(&x)
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.levels.iter().flatten().copied()
    }

    /// Items at `depth`, empty when the tree is shallower.
    pub fn level(&self, depth: usize) -> &[usize] {
        self.levels.get(depth).map_or(&[], Vec::as_slice)
    }

    /// `x, parent(x), ..., root`.
    pub fn path_to_root(&self, mut x: usize) -> Vec<usize> {
        let mut out = vec![x];
        while let Some(&p) = self.parent.get(&x) {
            out.push(p);
            x = p;
        }
        out
    }

    /// Children of `x` in attachment order.
    pub fn children(&self, x: usize, depth: usize) -> Vec<usize> {
        self.level(depth + 1)
            .iter()
            .copied()
            .filter(|c| self.parent.get(c) == Some(&x))
            .collect()
    }

    fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(Vec::len).collect()
    }
}

/// Number of `candidate`'s neighbors inside `tree`.
pub fn count_bad_edges(graph: &QueryGraph, tree: &BfsTree, candidate: usize) -> usize {
    graph
        .neighbors(candidate)
        .iter()
        .filter(|&&y| tree.contains(y as usize))
        .count()
}

/// First place a node could not be expanded by the full branching factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Stall {
    pub root: usize,
    pub level: usize,
    pub node: usize,
}

/// Per-build scratch state: vertex claims and tree membership stamps.
struct Workspace<'g> {
    graph: &'g QueryGraph,
    claimed: Vec<bool>,
    stamp: Vec<u32>,
    current: u32,
    max_bad_edges: usize,
    max_forest_edges: usize,
    stalls: usize,
    first_stall: Option<Stall>,
}

impl<'g> Workspace<'g> {
    fn new(graph: &'g QueryGraph) -> Self {
        Self {
            graph,
            claimed: vec![false; graph.n()],
            stamp: vec![0; graph.n()],
            current: 0,
            max_bad_edges: 0,
            max_forest_edges: 0,
            stalls: 0,
            first_stall: None,
        }
    }

    /// Grow a tree from `root` down to `depth`, claiming every attached
    /// vertex. Neighbors are scanned in ascending order and the first
    /// `branching(level)` unclaimed ones are kept. A node with too few
    /// unclaimed neighbors keeps all it has and the shortfall is recorded.
    fn grow(&mut self, root: usize, depth: usize, branching: impl Fn(usize) -> usize) -> BfsTree {
        self.current += 1;
        let stamp = self.current;
        self.claimed[root] = true;
        self.stamp[root] = stamp;
        let mut tree = BfsTree::new(root);
        for level in 1..=depth {
            let want = branching(level);
            let mut next = Vec::new();
            for &x in &tree.levels[level - 1] {
                self.record_bad_edges(&tree, x, stamp);
                let mut taken = 0;
                for &y in self.graph.neighbors(x) {
                    if taken == want {
                        break;
                    }
                    let y = y as usize;
                    if self.claimed[y] {
                        continue;
                    }
                    self.claimed[y] = true;
                    self.stamp[y] = stamp;
                    tree.parent.insert(y, x);
                    next.push(y);
                    taken += 1;
                }
                if taken < want {
                    self.stalls += 1;
                    self.first_stall.get_or_insert(Stall { root, level, node: x });
                }
            }
            if next.is_empty() {
                break;
            }
            tree.levels.push(next);
            tree.depth = level;
        }
        tree
    }

    /// Edges from `x`, about to be expanded, back into its own tree and into
    /// everything claimed so far, not counting the edge to its parent.
    fn record_bad_edges(&mut self, tree: &BfsTree, x: usize, stamp: u32) {
        let parent = tree.parent.get(&x).copied();
        let (mut own, mut forest) = (0, 0);
        for &z in self.graph.neighbors(x) {
            let z = z as usize;
            if Some(z) == parent {
                continue;
            }
            own += usize::from(self.stamp[z] == stamp);
            forest += usize::from(self.claimed[z]);
        }
        trace!("expand {x} in tree {}: {own} bad edges, {forest} into the forest", tree.root);
        self.max_bad_edges = self.max_bad_edges.max(own);
        self.max_forest_edges = self.max_forest_edges.max(forest);
    }

    fn release(&mut self, tree: &BfsTree, keep_root: bool) {
        for x in tree.nodes() {
            if !(keep_root && x == tree.root) {
                self.claimed[x] = false;
            }
        }
    }
}

/// Grow the first-stage tree from `root` avoiding `forbidden`.
pub fn grow_tree(
    graph: &QueryGraph,
    root: usize,
    params: &PathParams,
    forbidden: &[usize],
) -> Result<BfsTree> {
    params.validate()?;
    if root >= graph.n() {
        return Err(invalid(format!("root {root} out of range")));
    }
    if forbidden.contains(&root) {
        return Err(invalid(format!("root {root} is forbidden")));
    }
    let mut ws = Workspace::new(graph);
    for &f in forbidden {
        if f < graph.n() {
            ws.claimed[f] = true;
        }
    }
    let tree = ws.grow(root, params.depth1, |l| params.branching(l, true));
    let leaves = tree.level(params.depth1).len();
    if leaves < params.min_paths {
        let s = ws.first_stall.unwrap_or(Stall {
            root,
            level: tree.depth + 1,
            node: root,
        });
        return Err(Error::TreeStalled {
            root,
            level: s.level,
            node: s.node,
            leaves,
            needed: params.min_paths,
        });
    }
    Ok(tree)
}

/// Paths between `u` and `v` plus edge-sharing statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathFamily {
    pub u: usize,
    pub v: usize,
    pub paths: Vec<Vec<usize>>,
    /// Number of paths through each edge, keyed `(min, max)`.
    #[serde(skip)]
    pub edge_multiplicity: FxHashMap<(usize, usize), usize>,
    pub max_read: usize,
    /// Read budget `ceil(leaf_pairs / first-level width)`.
    pub target_read_k: usize,
    /// First-stage trees after isomorphic pruning.
    pub tree_u: BfsTree,
    pub tree_v: BfsTree,
    pub leaf_pairs: usize,
    pub cross_failures: usize,
    /// Largest number of non-tree edges from an expanded node into its own tree.
    pub max_bad_edges: usize,
    /// Same, counting every vertex already claimed for this pair.
    pub max_forest_edges: usize,
    /// Nodes that could not be expanded by the full branching factor.
    pub stalls: usize,
}

impl PathFamily {
    /// Paths as reversed sequences, i.e. the family for `(v, u)`.
    pub fn reversed(&self) -> Self {
        Self {
            u: self.v,
            v: self.u,
            paths: self.paths.iter().map(|p| p.iter().rev().copied().collect()).collect(),
            tree_u: self.tree_v.clone(),
            tree_v: self.tree_u.clone(),
            ..self.clone()
        }
    }

    /// One path per line, space-separated items.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        for p in &self.paths {
            let line: Vec<String> = p.iter().map(usize::to_string).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Keep only the positions present in both trees, down to full depth.
fn match_leaves(
    tu: &BfsTree,
    tv: &BfsTree,
    depth: usize,
    a: usize,
    b: usize,
    level: usize,
    out: &mut Vec<(usize, usize)>,
) {
    if level == depth {
        out.push((a, b));
        return;
    }
    let ca = tu.children(a, level);
    let cb = tv.children(b, level);
    for (&x, &y) in ca.iter().zip(&cb) {
        match_leaves(tu, tv, depth, x, y, level + 1, out);
    }
}

/// Restrict `tree` to the union of root paths of `leaves`.
fn restrict(tree: &BfsTree, leaves: &[usize]) -> BfsTree {
    let mut keep = rustc_hash::FxHashSet::default();
    for &l in leaves {
        keep.extend(tree.path_to_root(l));
    }
    let levels: Vec<Vec<usize>> = tree
        .levels
        .iter()
        .map(|lv| lv.iter().copied().filter(|x| keep.contains(x)).collect::<Vec<_>>())
        .take_while(|lv| !lv.is_empty())
        .collect();
    BfsTree {
        root: tree.root,
        depth: levels.len() - 1,
        parent: tree
            .parent
            .iter()
            .filter(|(c, _)| keep.contains(*c))
            .map(|(&c, &p)| (c, p))
            .collect(),
        levels,
    }
}

/// Build the path family for `(u, v)`.
pub fn build_path_family(
    graph: &QueryGraph,
    u: usize,
    v: usize,
    params: &PathParams,
) -> Result<PathFamily> {
    params.validate()?;
    let n = graph.n();
    if u == v {
        return Err(invalid("endpoints must differ"));
    }
    if u >= n || v >= n {
        return Err(invalid(format!("endpoint out of range for n = {n}")));
    }
    let mut ws = Workspace::new(graph);
    ws.claimed[v] = true;
    let first = |l: usize| params.branching(l, true);
    let tu_full = ws.grow(u, params.depth1, first);
    let tv_full = ws.grow(v, params.depth1, first);

    let mut matched = Vec::new();
    match_leaves(&tu_full, &tv_full, params.depth1, u, v, 0, &mut matched);
    matched.truncate(params.max_paths);
    let leaf_pairs = matched.len();
    if leaf_pairs < params.min_paths {
        let s = ws.first_stall.unwrap_or(Stall {
            root: u,
            level: params.depth1,
            node: u,
        });
        return Err(Error::TreeStalled {
            root: s.root,
            level: s.level,
            node: s.node,
            leaves: leaf_pairs,
            needed: params.min_paths,
        });
    }
    let (lu, lv): (Vec<usize>, Vec<usize>) = matched.iter().copied().unzip();
    let tree_u = restrict(&tu_full, &lu);
    let tree_v = restrict(&tv_full, &lv);
    // hand pruned vertices back
    ws.release(&tu_full, false);
    ws.release(&tv_full, false);
    for x in tree_u.nodes().chain(tree_v.nodes()) {
        ws.claimed[x] = true;
    }

    let rest = |_: usize| params.branch_rest;
    let mut paths = Vec::with_capacity(leaf_pairs);
    let mut cross_failures = 0;
    let mut in_y = vec![false; n];
    for &(ui, vi) in &matched {
        let tx = ws.grow(ui, params.depth2, rest);
        let ty = ws.grow(vi, params.depth2, rest);
        let xs = tx.level(params.depth2);
        let ys = ty.level(params.depth2);
        for &y in ys {
            in_y[y] = true;
        }
        let mut sorted_x = xs.to_vec();
        sorted_x.sort_unstable();
        let cross = sorted_x.iter().find_map(|&x| {
            graph
                .neighbors(x)
                .iter()
                .find(|&&y| in_y[y as usize])
                .map(|&y| (x, y as usize))
        });
        for &y in ys {
            in_y[y] = false;
        }
        match cross {
            Some((x, y)) => {
                let mut path = tree_u.path_to_root(ui);
                path.reverse();
                let mut down = tx.path_to_root(x);
                down.pop();
                down.reverse();
                path.extend(down);
                let up = ty.path_to_root(y);
                path.extend(&up[..up.len() - 1]);
                path.extend(tree_v.path_to_root(vi));
                paths.push(path);
            }
            None => {
                cross_failures += 1;
                ws.release(&tx, true);
                ws.release(&ty, true);
            }
        }
    }

    if paths.len() < params.min_paths {
        return Err(Error::TooFewPaths {
            u,
            v,
            found: paths.len(),
            needed: params.min_paths,
        });
    }

    let mut edge_multiplicity: FxHashMap<(usize, usize), usize> = FxHashMap::default();
    for p in &paths {
        for w in p.windows(2) {
            *edge_multiplicity.entry((w[0].min(w[1]), w[0].max(w[1]))).or_insert(0) += 1;
        }
    }
    let max_read = edge_multiplicity.values().copied().max().unwrap_or(0);
    let width = tree_u.level(1).len().max(1);
    Ok(PathFamily {
        u,
        v,
        paths,
        edge_multiplicity,
        max_read,
        target_read_k: leaf_pairs.div_ceil(width).max(1),
        tree_u,
        tree_v,
        leaf_pairs,
        cross_failures,
        max_bad_edges: ws.max_bad_edges,
        max_forest_edges: ws.max_forest_edges,
        stalls: ws.stalls,
    })
}

/// Check the structural postconditions of a family against its graph.
/// Returns a description of the first violation.
pub fn verify_family(graph: &QueryGraph, family: &PathFamily, params: &PathParams) -> Result<(), String> {
    let len = params.path_len();
    let mut seen_internal = rustc_hash::FxHashSet::default();
    for (i, p) in family.paths.iter().enumerate() {
        if p.first() != Some(&family.u) || p.last() != Some(&family.v) {
            return Err(format!("path {i} does not join {} and {}", family.u, family.v));
        }
        if p.len() != len + 1 {
            return Err(format!("path {i} has {} edges, expected {len}", p.len() - 1));
        }
        let mut own = rustc_hash::FxHashSet::default();
        if !p.iter().all(|x| own.insert(*x)) {
            return Err(format!("path {i} repeats a vertex"));
        }
        if let Some(w) = p.windows(2).find(|w| !graph.has_edge(w[0], w[1])) {
            return Err(format!("path {i} uses non-edge ({}, {})", w[0], w[1]));
        }
        // vertices past the first-stage trees belong to this path alone
        let d1 = params.depth1;
        for &x in &p[d1..p.len() - d1] {
            if !seen_internal.insert(x) && !family.tree_u.contains(x) && !family.tree_v.contains(x) {
                return Err(format!("second-stage vertex {x} shared between paths"));
            }
        }
    }
    if family.tree_u.nodes().any(|x| family.tree_v.contains(x)) {
        return Err("first-stage trees intersect".into());
    }
    if family.tree_u.sizes() != family.tree_v.sizes() {
        return Err("first-stage trees differ in shape".into());
    }
    Ok(())
}
