//! Finitely supported path measures on `R^{dT}` stored as scenario trees.
//!
//! A [`PathMeasure`] factorizes a law of `(X_1, ..., X_T)` into stagewise
//! conditional kernels: each tree node holds a list of children, every child
//! carrying the next stage's state in `R^d`, its conditional probability, and
//! the id of the subtree continuing the path (leaves at depth `T` carry no
//! child). Invariants maintained by construction:
//!
//! * conditional probabilities at every node sum to 1 within `1e-12`;
//! * every root-to-leaf walk has exactly `T` states;
//! * all probabilities are nonnegative; zero-probability branches are pruned;
//! * states are rounded to 12 decimal digits and sibling states are merged, so
//!   support identification is deterministic;
//! * children are sorted lexicographically by state and nodes are numbered in
//!   breadth-first order, which makes the JSON serialization canonical.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of decimal digits used for canonical state rounding.
const CANON_DIGITS: i32 = 12;
/// Probabilities at or below this threshold are pruned as numerically null.
pub const PROB_TOL: f64 = 1e-15;

/// Round a coordinate to the canonical 12-decimal grid (`-0.0` maps to `0.0`).
pub fn canon(x: f64) -> f64 {
    let scale = 10f64.powi(CANON_DIGITS);
    let r = (x * scale).round() / scale;
    r + 0.0
}

/// Bit-exact hash key of a canonically rounded coordinate vector.
pub fn canon_key(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|&x| canon(x).to_bits()).collect()
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match x.partial_cmp(y).expect("finite states") {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    a.len().cmp(&b.len())
}

/// One outgoing edge of a tree node: next state, conditional probability and
/// the child node continuing the path (`None` at depth `T`).
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub state: Vec<f64>,
    pub prob: f64,
    pub child: Option<usize>,
}

/// A finitely supported probability measure on `R^{dT}`, tree-factorized.
///
/// Immutable after construction; safe to share read-only across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct PathMeasure {
    t: usize,
    d: usize,
    /// `nodes[0]` is the root; nodes are numbered in breadth-first order.
    nodes: Vec<Vec<Edge>>,
    /// Depth of each node (root has depth 0; children of a depth-`t` node
    /// carry the state of stage `t + 1`).
    depth: Vec<usize>,
}

impl PathMeasure {
    /// Number of stages `T`.
    pub fn stages(&self) -> usize {
        self.t
    }

    /// State dimension `d` per stage.
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Number of nodes (internal representation size).
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Outgoing edges of a node.
    pub fn children(&self, node: usize) -> &[Edge] {
        &self.nodes[node]
    }

    /// Depth of a node (0 at the root).
    pub fn node_depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Dirac measure concentrated on one path of `T` stages.
    pub fn dirac(t: usize, d: usize, path: &[f64]) -> Result<Self> {
        Self::from_atoms(t, d, &[(path.to_vec(), 1.0)])
    }

    /// Build a measure from weighted atoms (full paths of length `d * T`).
    ///
    /// Weights must be nonnegative with a positive total; they are normalized
    /// to 1. Atoms whose canonically rounded paths coincide are merged.
    pub fn from_atoms(t: usize, d: usize, atoms: &[(Vec<f64>, f64)]) -> Result<Self> {
        if t == 0 || d == 0 {
            return Err(Error::Parse("T and d must be >= 1".into()));
        }
        let mut total = 0.0;
        for (path, w) in atoms {
            if path.len() != d * t {
                return Err(Error::RaggedDepth {
                    found: path.len() / d.max(1),
                    expected: t,
                });
            }
            if *w < -1e-12 {
                return Err(Error::NonProbability {
                    node: 0,
                    detail: format!("negative atom weight {w}"),
                });
            }
            total += w.max(0.0);
        }
        if total <= PROB_TOL {
            return Err(Error::NonProbability {
                node: 0,
                detail: "atom weights not normalizable".into(),
            });
        }
        // Merge duplicates on the canonical grid.
        let mut merged: HashMap<Vec<u64>, (Vec<f64>, f64)> = HashMap::new();
        for (path, w) in atoms {
            let w = w.max(0.0) / total;
            if w <= PROB_TOL {
                continue;
            }
            let cp: Vec<f64> = path.iter().map(|&x| canon(x)).collect();
            let key = canon_key(&cp);
            merged.entry(key).and_modify(|e| e.1 += w).or_insert((cp, w));
        }
        let mut flat: Vec<(Vec<f64>, f64)> = merged.into_values().collect();
        flat.sort_by(|a, b| lex_cmp(&a.0, &b.0));

        // Build the prefix tree breadth-first.
        let mut nodes: Vec<Vec<Edge>> = vec![Vec::new()];
        let mut depth: Vec<usize> = vec![0];
        // Frontier: (node id, range of atoms under it), atoms sorted lex.
        let mut frontier: Vec<(usize, usize, usize)> = vec![(0, 0, flat.len())];
        for stage in 0..t {
            let mut next = Vec::new();
            for &(node, lo, hi) in &frontier {
                let mut i = lo;
                while i < hi {
                    let s0 = &flat[i].0[stage * d..(stage + 1) * d];
                    let mut j = i;
                    let mut mass = 0.0;
                    while j < hi && flat[j].0[stage * d..(stage + 1) * d] == *s0 {
                        mass += flat[j].1;
                        j += 1;
                    }
                    let parent_mass: f64 = flat[lo..hi].iter().map(|a| a.1).sum();
                    let prob = mass / parent_mass;
                    let child = if stage + 1 < t {
                        let id = nodes.len();
                        nodes.push(Vec::new());
                        depth.push(stage + 1);
                        next.push((id, i, j));
                        Some(id)
                    } else {
                        None
                    };
                    nodes[node].push(Edge {
                        state: s0.to_vec(),
                        prob,
                        child,
                    });
                    i = j;
                }
            }
            frontier = next;
        }
        let pm = PathMeasure { t, d, nodes, depth };
        pm.renumber_bfs()
    }

    /// Build a measure from explicit per-node edge lists (`make_tree`).
    ///
    /// `nodes[0]` is the root; an entry is `(state, prob, child)`. Edge
    /// probabilities per node must sum to 1 within `1e-9`; they are normalized
    /// exactly and zero-probability branches pruned.
    pub fn from_nodes(
        t: usize,
        d: usize,
        nodes: Vec<Vec<(Vec<f64>, f64, Option<usize>)>>,
    ) -> Result<Self> {
        if t == 0 || d == 0 || nodes.is_empty() {
            return Err(Error::Parse("T, d and the node list must be nonempty".into()));
        }
        // Depth check via BFS from the root.
        let mut depth = vec![usize::MAX; nodes.len()];
        depth[0] = 0;
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            let du = depth[u];
            for (state, prob, child) in &nodes[u] {
                if state.len() != d {
                    return Err(Error::Parse(format!(
                        "state of length {} at node {u}, expected {d}",
                        state.len()
                    )));
                }
                if *prob < -1e-12 {
                    return Err(Error::NonProbability {
                        node: u,
                        detail: format!("negative edge probability {prob}"),
                    });
                }
                match child {
                    Some(c) => {
                        if du + 1 >= t {
                            return Err(Error::RaggedDepth {
                                found: du + 2,
                                expected: t,
                            });
                        }
                        if *c >= nodes.len() {
                            return Err(Error::Parse(format!("dangling child id {c}")));
                        }
                        if depth[*c] == usize::MAX {
                            depth[*c] = du + 1;
                            queue.push_back(*c);
                        } else if depth[*c] != du + 1 {
                            return Err(Error::RaggedDepth {
                                found: depth[*c] + 1,
                                expected: du + 2,
                            });
                        }
                    }
                    None => {
                        if du + 1 != t {
                            return Err(Error::RaggedDepth {
                                found: du + 1,
                                expected: t,
                            });
                        }
                    }
                }
            }
        }
        // Probability sums within 1e-9 at every reachable node with children.
        for (u, es) in nodes.iter().enumerate() {
            if depth[u] == usize::MAX || es.is_empty() {
                continue;
            }
            let s: f64 = es.iter().map(|e| e.1.max(0.0)).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::NonProbability {
                    node: u,
                    detail: format!("edge probabilities sum to {s}"),
                });
            }
        }
        // Flatten to atoms (products of conditional probabilities), then
        // rebuild canonically; this normalizes, prunes and merges in one path.
        let mut atoms = Vec::new();
        let mut stack: Vec<(usize, Vec<f64>, f64)> = vec![(0, Vec::new(), 1.0)];
        while let Some((u, prefix, w)) = stack.pop() {
            for (state, prob, child) in &nodes[u] {
                let w2 = w * prob.max(0.0);
                if w2 <= PROB_TOL {
                    continue;
                }
                let mut p2 = prefix.clone();
                p2.extend_from_slice(state);
                match child {
                    Some(c) => stack.push((*c, p2, w2)),
                    None => atoms.push((p2, w2)),
                }
            }
        }
        Self::from_atoms(t, d, &atoms)
    }

    /// Renumber nodes in breadth-first order with lexicographically sorted
    /// children; establishes the canonical form used by the serializer.
    fn renumber_bfs(mut self) -> Result<Self> {
        for es in &mut self.nodes {
            es.sort_by(|a, b| lex_cmp(&a.state, &b.state));
        }
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        let mut queue = std::collections::VecDeque::from([0usize]);
        new_id[0] = 0;
        order.push(0);
        while let Some(u) = queue.pop_front() {
            for e in &self.nodes[u] {
                if let Some(c) = e.child {
                    if new_id[c] == usize::MAX {
                        new_id[c] = order.len();
                        order.push(c);
                        queue.push_back(c);
                    }
                }
            }
        }
        let mut nodes = Vec::with_capacity(order.len());
        let mut depth = Vec::with_capacity(order.len());
        for &old in &order {
            let es = self.nodes[old]
                .iter()
                .map(|e| Edge {
                    state: e.state.clone(),
                    prob: e.prob,
                    child: e.child.map(|c| new_id[c]),
                })
                .collect();
            nodes.push(es);
            depth.push(self.depth[old]);
        }
        Ok(PathMeasure {
            t: self.t,
            d: self.d,
            nodes,
            depth,
        })
    }

    /// Enumerate the support: full paths (flattened, length `d * T`) with
    /// their probabilities, in lexicographic path order.
    pub fn paths(&self) -> Vec<(Vec<f64>, f64)> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<f64>, f64)> = vec![(0, Vec::new(), 1.0)];
        while let Some((u, prefix, w)) = stack.pop() {
            // Reverse so that the lexicographically first child is expanded
            // first (stack is LIFO).
            for e in self.nodes[u].iter().rev() {
                let mut p2 = prefix.clone();
                p2.extend_from_slice(&e.state);
                let w2 = w * e.prob;
                match e.child {
                    Some(c) => stack.push((c, p2, w2)),
                    None => out.push((p2, w2)),
                }
            }
        }
        out.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        out
    }

    /// The up-to-time-`t` marginal `mu_{1:t}` as a `t`-stage measure.
    pub fn marginal_upto(&self, t: usize) -> Result<PathMeasure> {
        if t == 0 || t > self.t {
            return Err(Error::BadStage { stage: t, t: self.t });
        }
        let atoms: Vec<(Vec<f64>, f64)> = self
            .paths()
            .into_iter()
            .map(|(p, w)| (p[..t * self.d].to_vec(), w))
            .collect();
        PathMeasure::from_atoms(t, self.d, &atoms)
    }

    /// The conditional kernel at a node: the normalized distribution of the
    /// next state given the node's path prefix.
    pub fn kernel_at(&self, node: usize) -> Result<Vec<(Vec<f64>, f64)>> {
        if node >= self.nodes.len() {
            return Err(Error::BadStage {
                stage: node,
                t: self.nodes.len(),
            });
        }
        Ok(self.nodes[node]
            .iter()
            .map(|e| (e.state.clone(), e.prob))
            .collect())
    }

    /// Path prefix (flattened states) leading to a node.
    pub fn prefix_of(&self, node: usize) -> Vec<f64> {
        // Walk down from the root following the stored child ids.
        let mut parent = vec![usize::MAX; self.nodes.len()];
        let mut via = vec![usize::MAX; self.nodes.len()];
        for (u, es) in self.nodes.iter().enumerate() {
            for (k, e) in es.iter().enumerate() {
                if let Some(c) = e.child {
                    parent[c] = u;
                    via[c] = k;
                }
            }
        }
        let mut rev = Vec::new();
        let mut cur = node;
        while cur != 0 {
            let p = parent[cur];
            rev.push(self.nodes[p][via[cur]].state.clone());
            cur = p;
        }
        rev.reverse();
        rev.concat()
    }

    /// Moment `M_r(mu) = int |x|^r dmu` with `|x|^r = sum_k |x_k|^r` over all
    /// `dT` path coordinates (`r = 0` returns the total mass, 1).
    pub fn moment(&self, r: f64) -> f64 {
        if r == 0.0 {
            return 1.0;
        }
        self.paths()
            .iter()
            .map(|(p, w)| w * p.iter().map(|x| x.abs().powf(r)).sum::<f64>())
            .sum()
    }

    /// Draw `n` i.i.d. paths by ancestral sampling with the given generator.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut path = Vec::with_capacity(self.d * self.t);
            let mut node = Some(0usize);
            while let Some(u) = node {
                let x: f64 = rng.gen();
                let mut acc = 0.0;
                let es = &self.nodes[u];
                let mut chosen = es.len() - 1;
                for (k, e) in es.iter().enumerate() {
                    acc += e.prob;
                    if x < acc {
                        chosen = k;
                        break;
                    }
                }
                path.extend_from_slice(&es[chosen].state);
                node = es[chosen].child;
            }
            out.push(path);
        }
        out
    }

    /// Random scenario tree for randomized testing and experiments: at every
    /// node, between 1 and `max_children` children with states drawn from a
    /// coarse lattice in `[-1, 1]^d` (so that independently drawn trees share
    /// parts of their support) and uniformly random normalized probabilities.
    pub fn random_tree<R: Rng>(
        t: usize,
        d: usize,
        max_children: usize,
        rng: &mut R,
    ) -> PathMeasure {
        const LATTICE: [f64; 9] = [-1.0, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 1.0];
        let mut prefixes: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
        for _ in 0..t {
            let mut next = Vec::new();
            for (prefix, w) in prefixes {
                let k = rng.gen_range(1..=max_children);
                let raw: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 0.05).collect();
                let tot: f64 = raw.iter().sum();
                for r in 0..k {
                    let mut p2 = prefix.clone();
                    for _ in 0..d {
                        p2.push(LATTICE[rng.gen_range(0..LATTICE.len())]);
                    }
                    next.push((p2, w * raw[r] / tot));
                }
            }
            prefixes = next;
        }
        PathMeasure::from_atoms(t, d, &prefixes).expect("valid random tree")
    }

    /// Serialize to the canonical JSON tree format.
    pub fn to_json_string(&self) -> String {
        let nodes: Vec<JsonNode> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, es)| JsonNode {
                id,
                children: es
                    .iter()
                    .map(|e| JsonChild {
                        state: e.state.clone(),
                        prob: e.prob,
                        child: e.child,
                    })
                    .collect(),
            })
            .collect();
        let tree = JsonTree {
            t: self.t,
            d: self.d,
            nodes,
            root: 0,
        };
        serde_json::to_string(&tree).expect("serializable tree")
    }

    /// Parse from the JSON tree format. Already-canonical input is preserved
    /// bit-exactly, so serialize -> parse -> serialize is byte-identical.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let tree: JsonTree = serde_json::from_str(s)?;
        if tree.root != 0 {
            return Err(Error::Parse("root must be node 0".into()));
        }
        let mut by_id: Vec<Vec<(Vec<f64>, f64, Option<usize>)>> =
            vec![Vec::new(); tree.nodes.len()];
        for n in &tree.nodes {
            if n.id >= by_id.len() {
                return Err(Error::Parse(format!("node id {} out of range", n.id)));
            }
            by_id[n.id] = n
                .children
                .iter()
                .map(|c| (c.state.clone(), c.prob, c.child))
                .collect();
        }
        let parsed = Self::from_nodes(tree.t, tree.d, by_id.clone())?;
        // If the input was already canonical, keep the stored probabilities
        // bit-exactly instead of the renormalized ones.
        let verbatim = PathMeasure {
            t: tree.t,
            d: tree.d,
            nodes: by_id
                .iter()
                .map(|es| {
                    es.iter()
                        .map(|(s, p, c)| Edge {
                            state: s.clone(),
                            prob: *p,
                            child: *c,
                        })
                        .collect()
                })
                .collect(),
            depth: parsed.depth.clone(),
        };
        if verbatim.is_canonical() {
            let mut v = verbatim;
            v.depth = compute_depths(&v.nodes);
            Ok(v)
        } else {
            Ok(parsed)
        }
    }

    /// Whether the representation is already in canonical form (sorted,
    /// BFS-numbered, canonically rounded, normalized within `1e-12`, pruned).
    fn is_canonical(&self) -> bool {
        let mut next_expected = 1usize;
        for (u, es) in self.nodes.iter().enumerate() {
            if es.is_empty() && u != 0 && self.nodes.len() > 1 {
                // Interior nodes must have children; emptiness only allowed
                // for leaves, which are not materialized as nodes.
                return false;
            }
            let s: f64 = es.iter().map(|e| e.prob).sum();
            if !es.is_empty() && (s - 1.0).abs() > 1e-12 {
                return false;
            }
            for w in es.windows(2) {
                if lex_cmp(&w[0].state, &w[1].state) != std::cmp::Ordering::Less {
                    return false;
                }
            }
            for e in es {
                if e.prob <= PROB_TOL || e.state.iter().any(|&x| canon(x) != x) {
                    return false;
                }
                if let Some(c) = e.child {
                    if c != next_expected {
                        return false;
                    }
                    next_expected += 1;
                }
            }
        }
        true
    }
}

fn compute_depths(nodes: &[Vec<Edge>]) -> Vec<usize> {
    let mut depth = vec![0usize; nodes.len()];
    for (u, es) in nodes.iter().enumerate() {
        for e in es {
            if let Some(c) = e.child {
                depth[c] = depth[u] + 1;
            }
        }
    }
    depth
}

#[derive(Serialize, Deserialize)]
struct JsonTree {
    #[serde(rename = "T")]
    t: usize,
    d: usize,
    nodes: Vec<JsonNode>,
    root: usize,
}

#[derive(Serialize, Deserialize)]
struct JsonNode {
    id: usize,
    children: Vec<JsonChild>,
}

#[derive(Serialize, Deserialize)]
struct JsonChild {
    state: Vec<f64>,
    prob: f64,
    child: Option<usize>,
}

/// A weighting function `w` together with its stagewise sequence `(w_t)`.
#[derive(Debug, Clone)]
pub enum WeightSpec {
    /// `w_t == 1`.
    One,
    /// `w_t(x_{1:t}) = 1 + |x_{1:t}|_p^p = 1 + sum |x_k|^p`.
    PPower(f64),
    /// Per-prefix tables; the table must cover every prefix it is asked for.
    Tabulated(WeightTable),
}

impl WeightSpec {
    /// Evaluate `w_t` on a flattened path prefix (`t = prefix.len() / d`).
    pub fn eval(&self, prefix: &[f64]) -> Result<f64> {
        match self {
            WeightSpec::One => Ok(1.0),
            WeightSpec::PPower(p) => {
                Ok(1.0 + prefix.iter().map(|x| x.abs().powf(*p)).sum::<f64>())
            }
            WeightSpec::Tabulated(tbl) => tbl.get(prefix),
        }
    }

    /// Check the monotonicity `w_{t-1}(x_{1:t-1}) <= w_t(x_{1:t})` on every
    /// prefix charged by the measure; returns the violating prefixes.
    pub fn monotonicity_violations(&self, mu: &PathMeasure) -> Result<Vec<Vec<f64>>> {
        let d = mu.dim();
        let mut bad = Vec::new();
        for (path, _w) in mu.paths() {
            for t in 1..mu.stages() {
                let a = self.eval(&path[..t * d])?;
                let b = self.eval(&path[..(t + 1) * d])?;
                if b < a - 1e-12 {
                    bad.push(path[..(t + 1) * d].to_vec());
                }
            }
        }
        Ok(bad)
    }
}

/// Lookup table of per-prefix weights keyed on the canonical rounding grid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "WeightTableFile", into = "WeightTableFile")]
pub struct WeightTable {
    entries: Vec<(Vec<f64>, f64)>,
    #[serde(skip)]
    index: HashMap<Vec<u64>, f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightTableFile {
    entries: Vec<(Vec<f64>, f64)>,
}

impl From<WeightTableFile> for WeightTable {
    fn from(f: WeightTableFile) -> Self {
        let mut t = WeightTable::default();
        for (p, w) in f.entries {
            t.insert(&p, w);
        }
        t
    }
}

impl From<WeightTable> for WeightTableFile {
    fn from(t: WeightTable) -> Self {
        WeightTableFile { entries: t.entries }
    }
}

impl WeightTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, prefix: &[f64], w: f64) {
        let cp: Vec<f64> = prefix.iter().map(|&x| canon(x)).collect();
        self.index.insert(canon_key(&cp), w);
        self.entries.push((cp, w));
    }

    pub fn get(&self, prefix: &[f64]) -> Result<f64> {
        self.index
            .get(&canon_key(prefix))
            .copied()
            .ok_or(Error::MissingWeight { len: prefix.len() })
    }
}

/// Per-edge conditional density ratios and their running products for a pair
/// `(mu, nu)` relative to the dominating measure `P = (mu + nu) / 2`.
#[derive(Debug, Clone, Copy)]
pub struct EdgeDensity {
    /// `D^1_t = dmu`-kernel over `dP`-kernel at this edge (1 on `mu`-null sets).
    pub d1: f64,
    /// `D^2_t`, same for `nu`.
    pub d2: f64,
    /// `Z^1_t = dmu_{1:t} / dP_{1:t}` at the edge's endpoint.
    pub z1: f64,
    /// `Z^2_t`, same for `nu`.
    pub z2: f64,
}

/// A pair of measures refined onto their common (union-support) tree together
/// with the density processes relative to `P = (mu + nu) / 2`.
#[derive(Debug, Clone)]
pub struct DensityProcess {
    /// The dominating measure `(mu + nu) / 2` on the union tree.
    pub common: PathMeasure,
    /// Density data, indexed like `common`'s nodes/edges.
    pub edges: Vec<Vec<EdgeDensity>>,
}

impl DensityProcess {
    /// Iterate over leaves: `(full path, P(leaf), Z^1, Z^2, prod_t min(D^1_t, D^2_t))`.
    pub fn leaves(&self) -> Vec<LeafDensity> {
        let mut out = Vec::new();
        let mut stack: Vec<(usize, Vec<f64>, f64, f64)> = vec![(0, Vec::new(), 1.0, 1.0)];
        while let Some((u, prefix, pw, minprod)) = stack.pop() {
            for (e, ed) in self.common.children(u).iter().zip(&self.edges[u]) {
                let mut p2 = prefix.clone();
                p2.extend_from_slice(&e.state);
                let pw2 = pw * e.prob;
                let mp2 = minprod * ed.d1.min(ed.d2);
                match e.child {
                    Some(c) => stack.push((c, p2, pw2, mp2)),
                    None => out.push(LeafDensity {
                        path: p2,
                        p_prob: pw2,
                        z1: ed.z1,
                        z2: ed.z2,
                        min_prod: mp2,
                    }),
                }
            }
        }
        out
    }

    /// Recover the `i`-th marginal (1 => `mu`, 2 => `nu`) from the densities.
    pub fn marginal(&self, i: usize) -> Result<PathMeasure> {
        let atoms: Vec<(Vec<f64>, f64)> = self
            .leaves()
            .into_iter()
            .map(|l| {
                let z = if i == 1 { l.z1 } else { l.z2 };
                (l.path, z * l.p_prob)
            })
            .collect();
        PathMeasure::from_atoms(self.common.stages(), self.common.dim(), &atoms)
    }
}

/// Leaf-level view of a [`DensityProcess`].
#[derive(Debug, Clone)]
pub struct LeafDensity {
    pub path: Vec<f64>,
    /// Probability of the leaf under the dominating measure.
    pub p_prob: f64,
    pub z1: f64,
    pub z2: f64,
    /// `prod_{t=1}^T min(D^1_t, D^2_t)` along the leaf's path.
    pub min_prod: f64,
}

/// Refine `(mu, nu)` onto their common tree and compute the density processes
/// relative to the dominating measure `(mu + nu) / 2`. Uses the convention
/// `D^i_t = 1` where `Z^i_{t-1} = 0`.
pub fn refine_pair(mu: &PathMeasure, nu: &PathMeasure) -> Result<DensityProcess> {
    if mu.stages() != nu.stages() || mu.dim() != nu.dim() {
        return Err(Error::ShapeMismatch {
            t_left: mu.stages(),
            d_left: mu.dim(),
            t_right: nu.stages(),
            d_right: nu.dim(),
        });
    }
    let (t, d) = (mu.stages(), mu.dim());
    let mut atoms: Vec<(Vec<f64>, f64)> = Vec::new();
    for (p, w) in mu.paths() {
        atoms.push((p, 0.5 * w));
    }
    for (p, w) in nu.paths() {
        atoms.push((p, 0.5 * w));
    }
    let common = PathMeasure::from_atoms(t, d, &atoms)?;

    // Prefix-mass tables for mu and nu on the canonical grid.
    let mass_table = |m: &PathMeasure| -> HashMap<Vec<u64>, f64> {
        let mut tbl: HashMap<Vec<u64>, f64> = HashMap::new();
        for (p, w) in m.paths() {
            for t_ in 0..=t {
                let key = canon_key(&p[..t_ * d]);
                *tbl.entry(key).or_insert(0.0) += w;
            }
        }
        tbl
    };
    let mmu = mass_table(mu);
    let mnu = mass_table(nu);
    let mass = |tbl: &HashMap<Vec<u64>, f64>, prefix: &[f64]| -> f64 {
        tbl.get(&canon_key(prefix)).copied().unwrap_or(0.0)
    };

    // Walk the common tree computing P-prefix masses and the ratios.
    let mut edges: Vec<Vec<EdgeDensity>> = vec![Vec::new(); common.num_nodes()];
    let mut stack: Vec<(usize, Vec<f64>, f64)> = vec![(0, Vec::new(), 1.0)];
    while let Some((u, prefix, p_mass)) = stack.pop() {
        let m1_parent = mass(&mmu, &prefix);
        let m2_parent = mass(&mnu, &prefix);
        let mut eds = Vec::with_capacity(common.children(u).len());
        for e in common.children(u) {
            let mut p2 = prefix.clone();
            p2.extend_from_slice(&e.state);
            let p_child = p_mass * e.prob;
            let m1 = mass(&mmu, &p2);
            let m2 = mass(&mnu, &p2);
            let d1 = if m1_parent <= PROB_TOL {
                1.0
            } else {
                (m1 / m1_parent) / e.prob
            };
            let d2 = if m2_parent <= PROB_TOL {
                1.0
            } else {
                (m2 / m2_parent) / e.prob
            };
            let z1 = if p_child <= PROB_TOL { 0.0 } else { m1 / p_child };
            let z2 = if p_child <= PROB_TOL { 0.0 } else { m2 / p_child };
            eds.push(EdgeDensity { d1, d2, z1, z2 });
            if let Some(c) = e.child {
                stack.push((c, p2, p_child));
            }
        }
        edges[u] = eds;
    }
    Ok(DensityProcess { common, edges })
}
