//! Daily undirected projections and their structural invariants.

use std::collections::HashMap;

use crate::model::{AccountRef, Horizon, Transaction, TransactionLog};

/// Undirected simple graph with sorted adjacency lists.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimpleGraph {
    adj: Vec<Vec<u32>>,
    n_edges: usize,
}

impl SimpleGraph {
    /// Builds a graph on `n` nodes, dropping self-loops and duplicate edges.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (u, v) in edges {
            if u == v {
                continue;
            }
            adj[u].push(v as u32);
            adj[v].push(u as u32);
        }
        let mut n_edges = 0;
        for list in &mut adj {
            list.sort_unstable();
            list.dedup();
            n_edges += list.len();
        }
        SimpleGraph {
            adj,
            n_edges: n_edges / 2,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.adj.len()
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adj[u].len()
    }

    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[u].iter().map(|&v| v as usize)
    }

    /// Edges as `(u, v)` with `u < v`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.n_edges);
        for u in 0..self.adj.len() {
            out.extend(self.neighbors(u).filter(|&v| v > u).map(|v| (u, v)));
        }
        out
    }
}

/// Projection of one day of transactions. `nodes[i]` is the account of node `i`.
#[derive(Debug, Clone, Default)]
pub struct DayGraph {
    pub day: i64,
    pub nodes: Vec<AccountRef>,
    pub graph: SimpleGraph,
}

fn project(day: i64, txs: &[Transaction]) -> DayGraph {
    let mut ids: HashMap<&AccountRef, usize> = HashMap::new();
    let mut nodes = Vec::new();
    let mut edges = Vec::with_capacity(txs.len());
    for tx in txs {
        let next = ids.len();
        let u = *ids.entry(&tx.from).or_insert(next);
        if u == next {
            nodes.push(tx.from.clone());
        }
        let next = ids.len();
        let v = *ids.entry(&tx.to).or_insert(next);
        if v == next {
            nodes.push(tx.to.clone());
        }
        edges.push((u, v));
    }
    let graph = SimpleGraph::from_edges(nodes.len(), edges);
    DayGraph { day, nodes, graph }
}

/// Undirected simple projection of the transactions falling on `day` of `horizon`.
pub fn daily_projection(log: &TransactionLog, horizon: &Horizon, day: i64) -> DayGraph {
    let start = horizon.start + day * Horizon::SECONDS_PER_DAY;
    let end = start + Horizon::SECONDS_PER_DAY;
    let txs = &log.transactions;
    let lo = txs.partition_point(|t| t.timestamp < start);
    let hi = txs.partition_point(|t| t.timestamp < end);
    if lo < hi
        && txs[lo..hi]
            .iter()
            .all(|t| t.timestamp >= start && t.timestamp < end)
    {
        return project(day, &txs[lo..hi]);
    }
    // Unsorted input: fall back to a filter.
    let day_txs: Vec<Transaction> = txs
        .iter()
        .filter(|t| t.timestamp >= start && t.timestamp < end)
        .cloned()
        .collect();
    project(day, &day_txs)
}

/// Projections for every day of the horizon, in order.
pub fn daily_projections(log: &TransactionLog, horizon: &Horizon) -> Vec<DayGraph> {
    (0..i64::from(horizon.days))
        .map(|d| daily_projection(log, horizon, d))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyInvariants {
    pub day: i64,
    pub n_nodes: usize,
    pub n_edges: usize,
    /// Largest component over active nodes; 0 for an empty day.
    pub gcc_ratio: f64,
    pub n_components: usize,
    pub max_kcore: usize,
    pub max_core_fraction: f64,
    /// `None` when the endpoint degree variance is zero.
    pub assortativity: Option<f64>,
    pub transitivity: f64,
}

/// Component sizes via union-find.
pub fn component_sizes(g: &SimpleGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for (u, v) in g.edges() {
        let (a, b) = (find(&mut parent, u), find(&mut parent, v));
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut size = vec![0usize; n];
    for x in 0..n {
        let r = find(&mut parent, x);
        size[r] += 1;
    }
    size.into_iter().filter(|&s| s > 0).collect()
}

/// Core number of every node (bucket peeling).
pub fn core_numbers(g: &SimpleGraph) -> Vec<usize> {
    let n = g.n_nodes();
    let mut deg: Vec<usize> = (0..n).map(|u| g.degree(u)).collect();
    let max_deg = deg.iter().copied().max().unwrap_or(0);
    let mut bin = vec![0usize; max_deg + 1];
    for &d in &deg {
        bin[d] += 1;
    }
    let mut start = 0;
    for b in bin.iter_mut() {
        let c = *b;
        *b = start;
        start += c;
    }
    let mut pos = vec![0usize; n];
    let mut vert = vec![0usize; n];
    for u in 0..n {
        pos[u] = bin[deg[u]];
        vert[pos[u]] = u;
        bin[deg[u]] += 1;
    }
    for d in (1..=max_deg).rev() {
        bin[d] = bin[d - 1];
    }
    bin[0] = 0;
    for i in 0..n {
        let v = vert[i];
        for u in g.neighbors(v) {
            if deg[u] > deg[v] {
                let du = deg[u];
                let pu = pos[u];
                let pw = bin[du];
                let w = vert[pw];
                if u != w {
                    pos[u] = pw;
                    vert[pu] = w;
                    pos[w] = pu;
                    vert[pw] = u;
                }
                bin[du] += 1;
                deg[u] -= 1;
            }
        }
    }
    deg
}

/// Number of triangles and of connected triples (paths of length two).
pub fn triangles_and_triples(g: &SimpleGraph) -> (u64, u64) {
    let n = g.n_nodes();
    // Orient each edge from lower to higher (degree, id) rank.
    let rank = |u: usize| (g.degree(u), u);
    let fwd: Vec<Vec<u32>> = (0..n)
        .map(|u| {
            g.neighbors(u)
                .filter(|&v| rank(v) > rank(u))
                .map(|v| v as u32)
                .collect()
        })
        .collect();
    let mut mark = vec![false; n];
    let mut tri = 0u64;
    for u in 0..n {
        for &v in &fwd[u] {
            mark[v as usize] = true;
        }
        for &v in &fwd[u] {
            tri += fwd[v as usize]
                .iter()
                .filter(|&&w| mark[w as usize])
                .count() as u64;
        }
        for &v in &fwd[u] {
            mark[v as usize] = false;
        }
    }
    let triples = (0..n).map(|u| {
        let d = g.degree(u) as u64;
        d * d.saturating_sub(1) / 2
    });
    (tri, triples.sum())
}

/// Degree assortativity over edges, counting each edge in both orientations.
pub fn degree_assortativity(g: &SimpleGraph) -> Option<f64> {
    let edges = g.edges();
    if edges.is_empty() {
        return None;
    }
    let first = g.degree(edges[0].0);
    if edges
        .iter()
        .all(|&(u, v)| g.degree(u) == first && g.degree(v) == first)
    {
        return None;
    }
    let m = edges.len() as f64;
    let (mut sjk, mut sjpk, mut sj2k2) = (0.0, 0.0, 0.0);
    for (u, v) in edges {
        let (j, k) = (g.degree(u) as f64, g.degree(v) as f64);
        sjk += j * k;
        sjpk += 0.5 * (j + k);
        sj2k2 += 0.5 * (j * j + k * k);
    }
    let mean = sjpk / m;
    let num = sjk / m - mean * mean;
    let den = sj2k2 / m - mean * mean;
    if den <= 0.0 {
        return None;
    }
    Some((num / den).clamp(-1.0, 1.0))
}

pub fn graph_invariants(day: i64, g: &SimpleGraph) -> DailyInvariants {
    let n = g.n_nodes();
    let sizes = component_sizes(g);
    let largest = sizes.iter().copied().max().unwrap_or(0);
    let cores = core_numbers(g);
    let max_kcore = cores.iter().copied().max().unwrap_or(0);
    let in_max = cores.iter().filter(|&&c| c == max_kcore).count();
    let (tri, triples) = triangles_and_triples(g);
    let frac = |a: usize| if n == 0 { 0.0 } else { a as f64 / n as f64 };
    DailyInvariants {
        day,
        n_nodes: n,
        n_edges: g.n_edges(),
        gcc_ratio: frac(largest),
        n_components: sizes.len(),
        max_kcore,
        max_core_fraction: frac(in_max),
        assortativity: degree_assortativity(g),
        transitivity: if triples == 0 {
            0.0
        } else {
            3.0 * tri as f64 / triples as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CurrencyCode, PaymentFormat};
    use rand::{Rng, SeedableRng};

    fn tx(ts: i64, a: &str, b: &str) -> Transaction {
        Transaction {
            timestamp: ts,
            from: AccountRef::new("1", a).unwrap(),
            to: AccountRef::new("1", b).unwrap(),
            amount_paid: 1.0,
            payment_currency: CurrencyCode::USD,
            amount_received: 1.0,
            receiving_currency: CurrencyCode::USD,
            payment_format: PaymentFormat::Transfer,
            is_laundering: false,
        }
    }

    #[test]
    fn triangle_invariants() {
        let g = SimpleGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)]);
        let inv = graph_invariants(0, &g);
        assert_eq!(inv.transitivity, 1.0);
        assert_eq!(inv.n_components, 1);
        assert_eq!(inv.gcc_ratio, 1.0);
        assert_eq!(inv.max_kcore, 2);
        assert_eq!(inv.assortativity, None);
    }

    #[test]
    fn path_and_star() {
        let p3 = SimpleGraph::from_edges(3, [(0, 1), (1, 2)]);
        assert_eq!(graph_invariants(0, &p3).transitivity, 0.0);
        let star = SimpleGraph::from_edges(6, (1..6).map(|i| (0, i)));
        let r = graph_invariants(0, &star).assortativity.unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_reverse_edges_collapse() {
        let h = Horizon { start: 0, days: 10 };
        let log = TransactionLog::new(
            vec![
                tx(10, "A", "B"),
                tx(20, "A", "B"),
                tx(30, "A", "B"),
                tx(40, "B", "A"),
            ],
            Default::default(),
        );
        let g = daily_projection(&log, &h, 0);
        assert_eq!(g.graph.n_nodes(), 2);
        assert_eq!(g.graph.n_edges(), 1);
    }

    #[test]
    fn projection_only_sees_its_day() {
        let h = Horizon { start: 0, days: 10 };
        let d5 = 5 * Horizon::SECONDS_PER_DAY;
        let log = TransactionLog::new(
            vec![tx(d5 + 3, "A", "B"), tx(d5 + 9, "B", "C")],
            Default::default(),
        );
        assert_eq!(daily_projection(&log, &h, 4).graph.n_nodes(), 0);
        assert_eq!(daily_projection(&log, &h, 5).graph.n_edges(), 2);
    }

    #[test]
    fn projection_matches_distinct_pair_count() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let h = Horizon { start: 0, days: 2 };
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let mut txs: Vec<Transaction> = (0..n)
                .map(|_| {
                    let a = rng.random_range(0..8);
                    let mut b = rng.random_range(0..8);
                    if b == a {
                        b = (a + 1) % 8;
                    }
                    tx(
                        rng.random_range(0..2 * Horizon::SECONDS_PER_DAY),
                        &a.to_string(),
                        &b.to_string(),
                    )
                })
                .collect();
            txs.sort_by_key(|t| t.timestamp);
            let log = TransactionLog::new(txs.clone(), Default::default());
            for day in 0..2 {
                let mut pairs = std::collections::BTreeSet::new();
                for t in txs.iter().filter(|t| h.day_of(t.timestamp) == day) {
                    let (a, b) = (t.from.key(), t.to.key());
                    pairs.insert(if a < b { (a, b) } else { (b, a) });
                }
                assert_eq!(daily_projection(&log, &h, day).graph.n_edges(), pairs.len());
            }
        }
    }

    #[test]
    fn projecting_a_simple_graph_is_identity() {
        let g = SimpleGraph::from_edges(5, [(0, 1), (1, 2), (3, 4), (0, 4)]);
        let again = SimpleGraph::from_edges(5, g.edges());
        assert_eq!(g, again);
    }

    #[test]
    fn empty_graph() {
        let inv = graph_invariants(0, &SimpleGraph::default());
        assert_eq!(inv.n_nodes, 0);
        assert_eq!(inv.gcc_ratio, 0.0);
        assert_eq!(inv.assortativity, None);
    }
}
