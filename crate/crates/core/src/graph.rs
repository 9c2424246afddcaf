//! DAG representation, moralization and candidate-DAG generation.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maximum number of ER draws before [`sample_er_dag`] gives up.
pub const ER_MAX_ATTEMPTS: usize = 10_000;

/// Default in-degree bound for the hill-climb candidate generator.
pub const DEFAULT_MAX_PARENTS: usize = 4;

/// Directed acyclic graph over `p` observed variables.
///
/// An edge `(j, i)` means `j` is a parent of `i`, i.e. `B[i][j]` may be nonzero.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "DagFile", into = "DagFile")]
pub struct Dag {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

/// On-disk form: `{"p": 3, "edges": [[0, 1], [1, 2]]}`.
#[derive(Serialize, Deserialize)]
struct DagFile {
    p: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<DagFile> for Dag {
    type Error = Error;
    fn try_from(f: DagFile) -> Result<Self> {
        Dag::new(f.p, f.edges.into_iter().map(|[j, i]| (j, i)))
    }
}

impl From<Dag> for DagFile {
    fn from(d: Dag) -> Self {
        DagFile {
            p: d.p,
            edges: d.edges.iter().map(|&(j, i)| [j, i]).collect(),
        }
    }
}

fn acyclic(p: usize, edges: &BTreeSet<(usize, usize)>) -> bool {
    topo_sort(p, edges).is_some()
}

fn topo_sort(p: usize, edges: &BTreeSet<(usize, usize)>) -> Option<Vec<usize>> {
    let mut indeg = vec![0usize; p];
    let mut children = vec![Vec::new(); p];
    for &(j, i) in edges {
        indeg[i] += 1;
        children[j].push(i);
    }
    let mut queue: VecDeque<usize> = (0..p).filter(|&v| indeg[v] == 0).collect();
    let mut order = Vec::with_capacity(p);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        for &c in &children[v] {
            indeg[c] -= 1;
            if indeg[c] == 0 {
                queue.push_back(c);
            }
        }
    }
    (order.len() == p).then_some(order)
}

impl Dag {
    pub fn new(p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (j, i) in edges {
            if j >= p || i >= p || j == i {
                return Err(Error::InvalidEdge(j, i, p));
            }
            set.insert((j, i));
        }
        if !acyclic(p, &set) {
            return Err(Error::Cyclic);
        }
        Ok(Dag { p, edges: set })
    }

    pub fn empty(p: usize) -> Self {
        Dag {
            p,
            edges: BTreeSet::new(),
        }
    }

    /// DAG whose edges are the nonzero entries of `b` (`|b_ij| > tol` gives `j -> i`).
    pub fn from_support(b: &DMatrix<f64>, tol: f64) -> Result<Self> {
        let p = b.nrows();
        let mut edges = Vec::new();
        for i in 0..p {
            for j in 0..p {
                if i != j && b[(i, j)].abs() > tol {
                    edges.push((j, i));
                }
            }
        }
        Dag::new(p, edges)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_set(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.edges.contains(&(parent, child))
    }

    pub fn adjacent(&self, a: usize, b: usize) -> bool {
        self.has_edge(a, b) || self.has_edge(b, a)
    }

    pub fn parents(&self, i: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter(|&&(_, c)| c == i)
            .map(|&(j, _)| j)
            .collect()
    }

    pub fn children(&self, j: usize) -> Vec<usize> {
        self.edges
            .range((j, 0)..(j + 1, 0))
            .map(|&(_, i)| i)
            .collect()
    }

    pub fn topological_order(&self) -> Vec<usize> {
        topo_sort(self.p, &self.edges).expect("Dag invariant: acyclic")
    }

    pub fn with_edge(&self, parent: usize, child: usize) -> Result<Dag> {
        Dag::new(self.p, self.edges().chain(std::iter::once((parent, child))))
    }

    pub fn without_edge(&self, parent: usize, child: usize) -> Dag {
        let mut edges = self.edges.clone();
        edges.remove(&(parent, child));
        Dag { p: self.p, edges }
    }

    /// Reverse `parent -> child`; fails if the result is cyclic.
    pub fn reversed(&self, parent: usize, child: usize) -> Result<Dag> {
        let mut edges = self.edges.clone();
        edges.remove(&(parent, child));
        edges.insert((child, parent));
        if !acyclic(self.p, &edges) {
            return Err(Error::Cyclic);
        }
        Ok(Dag { p: self.p, edges })
    }

    /// An edge `j -> i` is covered when `pa(i) = pa(j) ∪ {j}`; reversing it
    /// yields a Markov-equivalent DAG.
    pub fn is_covered(&self, parent: usize, child: usize) -> bool {
        if !self.has_edge(parent, child) {
            return false;
        }
        let mut pj: BTreeSet<usize> = self.parents(parent).into_iter().collect();
        pj.insert(parent);
        let pi: BTreeSet<usize> = self.parents(child).into_iter().collect();
        pi == pj
    }

    /// Undirected skeleton as ordered pairs `(a, b)` with `a < b`.
    pub fn skeleton(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
    }

    /// Unshielded colliders `a -> c <- b` with `a < b` and `a`, `b` non-adjacent.
    pub fn v_structures(&self) -> BTreeSet<(usize, usize, usize)> {
        let mut out = BTreeSet::new();
        for c in 0..self.p {
            let pa = self.parents(c);
            for (x, &a) in pa.iter().enumerate() {
                for &b in &pa[x + 1..] {
                    if !self.adjacent(a, b) {
                        out.insert((a.min(b), a.max(b), c));
                    }
                }
            }
        }
        out
    }

    pub fn is_markov_equivalent(&self, other: &Dag) -> bool {
        self.p == other.p
            && self.skeleton() == other.skeleton()
            && self.v_structures() == other.v_structures()
    }

    /// Boolean support as a matrix: entry `(i, j)` is 1 when `j -> i`.
    pub fn support_matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.p, self.p);
        for &(j, i) in &self.edges {
            m[(i, j)] = 1.0;
        }
        m
    }
}

impl std::fmt::Display for Dag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Dag(p={}; ", self.p)?;
        let parts: Vec<String> = self.edges.iter().map(|(j, i)| format!("{j}->{i}")).collect();
        write!(f, "{})", parts.join(", "))
    }
}

/// Undirected moral graph; edges stored as `(a, b)` with `a < b`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MoralGraph {
    pub p: usize,
    pub edges: BTreeSet<(usize, usize)>,
}

impl MoralGraph {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn contains_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// `true` when every edge of `other` is present here.
    pub fn is_superset_of(&self, other: &MoralGraph) -> bool {
        other.edges.is_subset(&self.edges)
    }
}

pub fn moralize(d: &Dag) -> MoralGraph {
    let mut edges = d.skeleton();
    for c in 0..d.p {
        let pa = d.parents(c);
        for (x, &a) in pa.iter().enumerate() {
            for &b in &pa[x + 1..] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    MoralGraph { p: d.p, edges }
}

pub fn moral_edge_count(d: &Dag) -> usize {
    moralize(d).n_edges()
}

/// Erdős–Rényi DAG sampler.
///
/// Each unordered pair draws both directed indicators with probability
/// `edge_prob`; a pair with at least one indicator becomes a single edge whose
/// orientation is the drawn one (uniform when both fire). Draws with a directed
/// cycle are rejected and resampled.
pub fn sample_er_dag(p: usize, edge_prob: f64, seed: u64) -> Result<Dag> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidArgument(format!(
            "edge probability {edge_prob} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..ER_MAX_ATTEMPTS {
        let mut edges = BTreeSet::new();
        for a in 0..p {
            for b in (a + 1)..p {
                let fwd = rng.random::<f64>() < edge_prob;
                let bwd = rng.random::<f64>() < edge_prob;
                match (fwd, bwd) {
                    (true, false) => {
                        edges.insert((a, b));
                    }
                    (false, true) => {
                        edges.insert((b, a));
                    }
                    (true, true) => {
                        if rng.random::<bool>() {
                            edges.insert((a, b));
                        } else {
                            edges.insert((b, a));
                        }
                    }
                    (false, false) => {}
                }
            }
        }
        if acyclic(p, &edges) {
            return Ok(Dag { p, edges });
        }
    }
    Err(Error::ResamplingFailed(ER_MAX_ATTEMPTS))
}

/// All DAGs on `p` labelled nodes (25 for p = 3, 543 for p = 4, 29281 for p = 5).
pub fn all_dags(p: usize) -> Vec<Dag> {
    assert!(p <= 5, "exhaustive enumeration is limited to p <= 5");
    let pairs: Vec<(usize, usize)> = (0..p)
        .flat_map(|a| ((a + 1)..p).map(move |b| (a, b)))
        .collect();
    let total = 3usize.pow(pairs.len() as u32);
    let mut out = Vec::new();
    for mut code in 0..total {
        let mut edges = BTreeSet::new();
        for &(a, b) in &pairs {
            match code % 3 {
                1 => {
                    edges.insert((a, b));
                }
                2 => {
                    edges.insert((b, a));
                }
                _ => {}
            }
            code /= 3;
        }
        if acyclic(p, &edges) {
            out.push(Dag { p, edges });
        }
    }
    out
}

/// Members of the Markov equivalence class of `d`, found by breadth-first
/// search over covered-edge reversals. Stops after `cap` members.
pub fn markov_equivalence_class(d: &Dag, cap: usize) -> Vec<Dag> {
    let mut seen: BTreeSet<Dag> = BTreeSet::new();
    let mut order = Vec::new();
    let mut queue = VecDeque::new();
    seen.insert(d.clone());
    order.push(d.clone());
    queue.push_back(d.clone());
    while let Some(cur) = queue.pop_front() {
        if order.len() >= cap {
            break;
        }
        for (j, i) in cur.edges().collect::<Vec<_>>() {
            if cur.is_covered(j, i) {
                let next = cur.reversed(j, i).expect("covered reversal stays acyclic");
                if seen.insert(next.clone()) {
                    order.push(next.clone());
                    queue.push_back(next);
                    if order.len() >= cap {
                        break;
                    }
                }
            }
        }
    }
    order
}

/// Residual log-variance of node `i` regressed on `parents` under covariance `cov`.
fn local_log_variance(cov: &DMatrix<f64>, i: usize, parents: &[usize]) -> Result<f64> {
    let mut var = cov[(i, i)];
    if !parents.is_empty() {
        let k = parents.len();
        let spp = DMatrix::from_fn(k, k, |r, c| cov[(parents[r], parents[c])]);
        let spi = DMatrix::from_fn(k, 1, |r, _| cov[(parents[r], i)]);
        let chol = spp
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("parent covariance block".into()))?;
        let sol = chol.solve(&spi);
        var -= (spi.transpose() * sol)[(0, 0)];
    }
    if !(var > 0.0) {
        return Err(Error::NotPositiveDefinite(format!(
            "non-positive residual variance for node {i}"
        )));
    }
    Ok(var.ln())
}

struct LocalScores<'a> {
    cov: &'a DMatrix<f64>,
    cache: HashMap<(usize, Vec<usize>), f64>,
}

impl LocalScores<'_> {
    fn get(&mut self, i: usize, mut parents: Vec<usize>) -> Result<f64> {
        parents.sort_unstable();
        if let Some(&v) = self.cache.get(&(i, parents.clone())) {
            return Ok(v);
        }
        let v = local_log_variance(self.cov, i, &parents)?;
        self.cache.insert((i, parents), v);
        Ok(v)
    }
}

/// Penalized Gaussian score of a DAG on a covariance: sum of residual
/// log-variances plus `2 log(n) / n` per edge. Lower is better.
pub fn pooled_bic_score(cov: &DMatrix<f64>, n_total: usize, d: &Dag) -> Result<f64> {
    let pen = bic_penalty(n_total);
    let mut s = pen * d.n_edges() as f64;
    for i in 0..d.p() {
        s += local_log_variance(cov, i, &d.parents(i))?;
    }
    Ok(s)
}

fn bic_penalty(n_total: usize) -> f64 {
    let n = n_total.max(2) as f64;
    2.0 * n.ln() / n
}

/// Best single-edge move from `cur` whose score change is below `threshold`
/// and whose result passes `allow`.
fn best_move(
    cur: &Dag,
    scores: &mut LocalScores<'_>,
    pen: f64,
    max_parents: usize,
    threshold: f64,
    allow: &dyn Fn(&Dag) -> bool,
) -> Result<Option<(f64, Dag)>> {
    let p = cur.p();
    let mut best: Option<(f64, Dag)> = None;
    let consider = |delta: f64, cand: Dag, best: &mut Option<(f64, Dag)>| {
        if delta < threshold
            && best.as_ref().is_none_or(|(d, _)| delta < *d - 1e-15)
            && allow(&cand)
        {
            *best = Some((delta, cand));
        }
    };
    // additions
    for j in 0..p {
        for i in 0..p {
            if i == j || cur.adjacent(i, j) {
                continue;
            }
            let pa = cur.parents(i);
            if pa.len() >= max_parents {
                continue;
            }
            let Ok(next) = cur.with_edge(j, i) else { continue };
            let old = scores.get(i, pa.clone())?;
            let mut npa = pa;
            npa.push(j);
            let delta = scores.get(i, npa)? - old + pen;
            consider(delta, next, &mut best);
        }
    }
    // removals
    for (j, i) in cur.edges().collect::<Vec<_>>() {
        let pa = cur.parents(i);
        let old = scores.get(i, pa.clone())?;
        let npa: Vec<usize> = pa.into_iter().filter(|&x| x != j).collect();
        let delta = scores.get(i, npa)? - old - pen;
        consider(delta, cur.without_edge(j, i), &mut best);
    }
    // reversals
    for (j, i) in cur.edges().collect::<Vec<_>>() {
        let pj = cur.parents(j);
        if pj.len() >= max_parents {
            continue;
        }
        let Ok(next) = cur.reversed(j, i) else { continue };
        let pi = cur.parents(i);
        let old = scores.get(i, pi.clone())? + scores.get(j, pj.clone())?;
        let npi: Vec<usize> = pi.into_iter().filter(|&x| x != j).collect();
        let mut npj = pj;
        npj.push(i);
        let delta = scores.get(i, npi)? + scores.get(j, npj)? - old;
        consider(delta, next, &mut best);
    }
    Ok(best)
}

/// Members of a Markov equivalence class explored at each local optimum.
const HILL_CLIMB_MEC_CAP: usize = 64;

fn total_local_score(d: &Dag, scores: &mut LocalScores<'_>, pen: f64) -> Result<f64> {
    let mut s = pen * d.n_edges() as f64;
    for i in 0..d.p() {
        s += scores.get(i, d.parents(i))?;
    }
    Ok(s)
}

/// Greedy descent from `start` using single-edge moves, widened at each local
/// optimum to the moves available from its Markov-equivalent members.
fn descend(
    start: Dag,
    scores: &mut LocalScores<'_>,
    pen: f64,
    max_parents: usize,
) -> Result<Dag> {
    let any = |_: &Dag| true;
    let mut cur = start;
    loop {
        if let Some((_, next)) = best_move(&cur, scores, pen, max_parents, -1e-12, &any)? {
            cur = next;
            continue;
        }
        let mut best: Option<(f64, Dag)> = None;
        for member in markov_equivalence_class(&cur, HILL_CLIMB_MEC_CAP).into_iter().skip(1) {
            if let Some((delta, next)) = best_move(&member, scores, pen, max_parents, -1e-12, &any)? {
                if best.as_ref().is_none_or(|(d, _)| delta < *d - 1e-15) {
                    best = Some((delta, next));
                }
            }
        }
        match best {
            Some((_, next)) => cur = next,
            None => return Ok(cur),
        }
    }
}

/// Parent sets with more candidates than this are chosen greedily instead of
/// exhaustively.
const EXHAUSTIVE_PARENT_SETS: usize = 4096;

fn n_subsets(n: usize, k: usize) -> usize {
    let mut total = 0usize;
    let mut c = 1usize;
    for r in 0..=k.min(n) {
        total = total.saturating_add(c);
        c = c.saturating_mul(n - r) / (r + 1);
    }
    total
}

/// Order-based search: each variable takes its best parent set among its
/// predecessors, and the order is improved by moving one variable to another
/// position until no move helps.
struct OrderSearch<'s, 'c> {
    scores: &'s mut LocalScores<'c>,
    pen: f64,
    max_parents: usize,
    memo: HashMap<(usize, Vec<usize>), (f64, Vec<usize>)>,
}

impl OrderSearch<'_, '_> {
    fn best_parents(&mut self, i: usize, allowed: &[usize]) -> Result<(f64, Vec<usize>)> {
        let mut key_allowed = allowed.to_vec();
        key_allowed.sort_unstable();
        if let Some(hit) = self.memo.get(&(i, key_allowed.clone())) {
            return Ok(hit.clone());
        }
        let k = self.max_parents.min(key_allowed.len());
        let mut best = (self.scores.get(i, Vec::new())?, Vec::new());
        if n_subsets(key_allowed.len(), k) <= EXHAUSTIVE_PARENT_SETS {
            let mut stack: Vec<(usize, Vec<usize>)> = vec![(0, Vec::new())];
            while let Some((from, set)) = stack.pop() {
                for idx in from..key_allowed.len() {
                    let mut next = set.clone();
                    next.push(key_allowed[idx]);
                    let v = self.scores.get(i, next.clone())? + self.pen * next.len() as f64;
                    if v < best.0 - 1e-15 {
                        best = (v, next.clone());
                    }
                    if next.len() < k {
                        stack.push((idx + 1, next));
                    }
                }
            }
        } else {
            // forward selection then backward elimination
            let mut cur = Vec::new();
            let mut cur_v = best.0;
            loop {
                let mut step: Option<(f64, Vec<usize>)> = None;
                if cur.len() < k {
                    for &j in &key_allowed {
                        if cur.contains(&j) {
                            continue;
                        }
                        let mut next = cur.clone();
                        next.push(j);
                        let v = self.scores.get(i, next.clone())? + self.pen * next.len() as f64;
                        if v < cur_v - 1e-12 && step.as_ref().is_none_or(|(b, _)| v < *b) {
                            step = Some((v, next));
                        }
                    }
                }
                for idx in 0..cur.len() {
                    let mut next = cur.clone();
                    next.remove(idx);
                    let v = self.scores.get(i, next.clone())? + self.pen * next.len() as f64;
                    if v < cur_v - 1e-12 && step.as_ref().is_none_or(|(b, _)| v < *b) {
                        step = Some((v, next));
                    }
                }
                match step {
                    Some((v, next)) => {
                        cur_v = v;
                        cur = next;
                    }
                    None => break,
                }
            }
            best = (cur_v, cur);
        }
        best.1.sort_unstable();
        self.memo.insert((i, key_allowed), best.clone());
        Ok(best)
    }

    fn order_score(&mut self, order: &[usize]) -> Result<f64> {
        let mut total = 0.0;
        for pos in 0..order.len() {
            total += self.best_parents(order[pos], &order[..pos])?.0;
        }
        Ok(total)
    }

    fn dag(&mut self, order: &[usize]) -> Result<Dag> {
        let mut edges = BTreeSet::new();
        for pos in 0..order.len() {
            for j in self.best_parents(order[pos], &order[..pos])?.1 {
                edges.insert((j, order[pos]));
            }
        }
        Ok(Dag {
            p: order.len(),
            edges,
        })
    }

    fn run(&mut self, start: Vec<usize>) -> Result<Dag> {
        let p = start.len();
        let mut order = start;
        let mut cur = self.order_score(&order)?;
        loop {
            let mut best: Option<(f64, Vec<usize>)> = None;
            for a in 0..p {
                for b in 0..p {
                    if a == b {
                        continue;
                    }
                    let mut next = order.clone();
                    let v = next.remove(a);
                    next.insert(b, v);
                    let s = self.order_score(&next)?;
                    if s < cur - 1e-12 && best.as_ref().is_none_or(|(bs, _)| s < *bs - 1e-15) {
                        best = Some((s, next));
                    }
                }
            }
            match best {
                Some((s, next)) => {
                    cur = s;
                    order = next;
                }
                None => return self.dag(&order),
            }
        }
    }
}

/// Greedy hill-climb over single-edge additions, removals and reversals,
/// starting from the empty graph.
///
/// At a local optimum the moves are also tried from every Markov-equivalent
/// member of the current graph (these share its score). The result, and the
/// order of increasing marginal variance, then seed an order-based search
/// (best parent sets given a variable order, improved by moving single
/// variables), followed by a short tabu phase that takes the best
/// non-revisiting move even when it worsens the score and restarts the descent
/// whenever it finds a better graph. Deterministic: ties go to the first move
/// in (kind, parent, child) order.
pub fn hill_climb(pooled_cov: &DMatrix<f64>, n_total: usize, max_parents: usize) -> Result<Dag> {
    let p = pooled_cov.nrows();
    if pooled_cov.ncols() != p {
        return Err(Error::Dimension("covariance must be square".into()));
    }
    if pooled_cov.clone().cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("pooled covariance".into()));
    }
    let pen = bic_penalty(n_total);
    let mut scores = LocalScores {
        cov: pooled_cov,
        cache: HashMap::new(),
    };
    let mut best = descend(Dag::empty(p), &mut scores, pen, max_parents)?;
    let mut best_score = total_local_score(&best, &mut scores, pen)?;
    let by_order = {
        let mut os = OrderSearch {
            scores: &mut scores,
            pen,
            max_parents,
            memo: HashMap::new(),
        };
        let mut by_variance: Vec<usize> = (0..p).collect();
        by_variance.sort_by(|&a, &b| pooled_cov[(a, a)].total_cmp(&pooled_cov[(b, b)]));
        [best.topological_order(), by_variance]
            .into_iter()
            .map(|start| os.run(start))
            .collect::<Result<Vec<_>>>()?
    };
    for d in by_order {
        let d = descend(d, &mut scores, pen, max_parents)?;
        let s = total_local_score(&d, &mut scores, pen)?;
        if s < best_score - 1e-12 {
            best = d;
            best_score = s;
        }
    }
    let tabu_steps = 6 * p;
    let mut visited: HashSet<Dag> = HashSet::new();
    visited.insert(best.clone());
    let mut cur = best.clone();
    let mut steps = 0;
    while steps < tabu_steps {
        steps += 1;
        let allow = |d: &Dag| !visited.contains(d);
        let Some((_, next)) =
            best_move(&cur, &mut scores, pen, max_parents, f64::INFINITY, &allow)?
        else {
            break;
        };
        visited.insert(next.clone());
        cur = next;
        if total_local_score(&cur, &mut scores, pen)? < best_score - 1e-12 {
            let improved = descend(cur.clone(), &mut scores, pen, max_parents)?;
            best_score = total_local_score(&improved, &mut scores, pen)?;
            best = improved.clone();
            visited.insert(improved.clone());
            cur = improved;
            steps = 0;
        }
    }
    Ok(best)
}

/// Candidate DAGs for scoring: the hill-climb optimum on the pooled covariance,
/// the other members of its Markov equivalence class (up to 64), then all of
/// its single-edge-deletion and acyclic single-edge-reversal neighbours. No
/// duplicates; the optimum comes first.
pub fn generate_candidates(
    pooled_cov: &DMatrix<f64>,
    n_total: usize,
    max_parents: usize,
) -> Result<Vec<Dag>> {
    let opt = hill_climb(pooled_cov, n_total, max_parents)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    let mut push = |d: Dag, out: &mut Vec<Dag>| {
        if seen.insert(d.clone()) {
            out.push(d);
        }
    };
    for member in markov_equivalence_class(&opt, HILL_CLIMB_MEC_CAP) {
        push(member, &mut out);
    }
    for (j, i) in opt.edges().collect::<Vec<_>>() {
        push(opt.without_edge(j, i), &mut out);
    }
    for (j, i) in opt.edges().collect::<Vec<_>>() {
        if let Ok(r) = opt.reversed(j, i) {
            push(r, &mut out);
        }
    }
    Ok(out)
}

/// Structural accuracy of an estimate against the truth: `(true positives,
/// false positives)`. A reversed edge counts as a false positive.
pub fn edge_accuracy(estimate: &Dag, truth: &Dag) -> (usize, usize) {
    let tp = estimate.edges().filter(|&(j, i)| truth.has_edge(j, i)).count();
    (tp, estimate.n_edges() - tp)
}

/// Parent-set accuracy for one target variable: `(true positives, false positives)`.
pub fn parent_accuracy(estimate: &Dag, truth: &Dag, target: usize) -> (usize, usize) {
    let est = estimate.parents(target);
    let tp = est.iter().filter(|&&j| truth.has_edge(j, target)).count();
    (tp, est.len() - tp)
}
