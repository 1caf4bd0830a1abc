//! Balanced edge-cut partitioning of graphs.
//!
//! Multilevel scheme: heavy-edge matching coarsens the graph, greedy region
//! growing from spread-out seeds partitions the coarsest level, and
//! positive-gain boundary moves refine the projection back down. Part sizes
//! land in [max(1, floor(0.75 n/P)), ceil(1.25 n/P)] and every part is
//! non-empty.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::AttributedGraph;

/// Number of edges whose endpoints lie in different parts.
pub fn edge_cut(edges: &[(usize, usize)], parts: &[usize]) -> usize {
    edges
        .iter()
        .filter(|&&(u, v)| parts[u] != parts[v])
        .count()
}

pub fn partition_graph(g: &AttributedGraph, n_parts: usize, seed: u64) -> Result<Vec<usize>> {
    partition_edges(g.n(), &g.edges, n_parts, seed)
}

/// Partitions the vertices 0..n of an undirected graph into `n_parts`
/// balanced parts with small edge cut. Deterministic for a fixed seed.
pub fn partition_edges(
    n: usize,
    edges: &[(usize, usize)],
    n_parts: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot partition an empty graph"));
    }
    if n_parts == 0 {
        return Err(Error::invalid("n_parts must be positive"));
    }
    if n_parts > n {
        return Err(Error::invalid(format!(
            "cannot split {n} vertices into {n_parts} parts"
        )));
    }
    for &(u, v) in edges {
        if u >= v || v >= n {
            return Err(Error::invalid(format!("edge ({u}, {v}) is not canonical")));
        }
    }
    if n_parts == 1 {
        return Ok(vec![0; n]);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Level::from_edges(n, edges);
    let (wmin, wmax) = balance_bounds(n, n_parts);

    // Coarsen until the graph is small enough to seed directly.
    let stop_at = (2 * n_parts).max(64);
    let mut levels = vec![base];
    let mut maps: Vec<Vec<usize>> = Vec::new();
    while levels.last().unwrap().n() > stop_at {
        let (coarse, map) = levels.last().unwrap().coarsen(&mut rng);
        // A matching that barely shrinks the graph (e.g. no edges left) will
        // never reach the target size.
        if coarse.n() as f64 > 0.95 * levels.last().unwrap().n() as f64 {
            break;
        }
        levels.push(coarse);
        maps.push(map);
    }

    let coarsest = levels.last().unwrap();
    let mut parts = grow_initial_parts(coarsest, n_parts);
    rebalance(coarsest, &mut parts, n_parts, wmin, wmax);
    refine(coarsest, &mut parts, n_parts, wmin, wmax);

    // Project back through the hierarchy, refining at each level.
    for depth in (0..maps.len()).rev() {
        let fine = &levels[depth];
        let map = &maps[depth];
        let mut fine_parts = vec![0usize; fine.n()];
        for v in 0..fine.n() {
            fine_parts[v] = parts[map[v]];
        }
        parts = fine_parts;
        rebalance(fine, &mut parts, n_parts, wmin, wmax);
        refine(fine, &mut parts, n_parts, wmin, wmax);
    }

    debug_assert!(part_weights(&levels[0], &parts, n_parts)
        .iter()
        .all(|&w| w >= wmin as f64 - 1e-9 && w <= wmax as f64 + 1e-9));
    Ok(parts)
}

fn balance_bounds(n: usize, n_parts: usize) -> (usize, usize) {
    let target = n as f64 / n_parts as f64;
    let wmin = ((0.75 * target).floor() as usize).max(1);
    let wmax = (1.25 * target).ceil() as usize;
    (wmin, wmax)
}

/// One level of the hierarchy: weighted adjacency plus original-vertex counts.
struct Level {
    adj: Vec<Vec<(usize, f64)>>,
    vwgt: Vec<f64>,
}

impl Level {
    fn n(&self) -> usize {
        self.vwgt.len()
    }

    fn from_edges(n: usize, edges: &[(usize, usize)]) -> Level {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            adj[u].push((v, 1.0));
            adj[v].push((u, 1.0));
        }
        Level {
            adj,
            vwgt: vec![1.0; n],
        }
    }

    /// Heavy-edge matching: random visit order, each unmatched vertex pairs
    /// with its heaviest unmatched neighbor.
    fn coarsen(&self, rng: &mut ChaCha8Rng) -> (Level, Vec<usize>) {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);

        let unmatched = usize::MAX;
        let mut mate = vec![unmatched; n];
        for &v in &order {
            if mate[v] != unmatched {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &(u, w) in &self.adj[v] {
                if mate[u] == unmatched && u != v {
                    let better = match best {
                        None => true,
                        Some((bw, bu)) => w > bw || (w == bw && u < bu),
                    };
                    if better {
                        best = Some((w, u));
                    }
                }
            }
            match best {
                Some((_, u)) => {
                    mate[v] = u;
                    mate[u] = v;
                }
                None => mate[v] = v,
            }
        }

        // Coarse ids in visit order keep the result deterministic.
        let mut map = vec![unmatched; n];
        let mut next = 0;
        for &v in &order {
            if map[v] != unmatched {
                continue;
            }
            map[v] = next;
            map[mate[v]] = next;
            next += 1;
        }

        let mut vwgt = vec![0.0; next];
        for v in 0..n {
            vwgt[map[v]] += self.vwgt[v];
        }
        let mut acc: Vec<std::collections::BTreeMap<usize, f64>> =
            vec![std::collections::BTreeMap::new(); next];
        for v in 0..n {
            for &(u, w) in &self.adj[v] {
                let (cv, cu) = (map[v], map[u]);
                if cv != cu {
                    *acc[cv].entry(cu).or_insert(0.0) += w;
                }
            }
        }
        let adj = acc
            .into_iter()
            .map(|m| m.into_iter().collect())
            .collect();
        (Level { adj, vwgt }, map)
    }
}

fn part_weights(level: &Level, parts: &[usize], n_parts: usize) -> Vec<f64> {
    let mut w = vec![0.0; n_parts];
    for v in 0..level.n() {
        w[parts[v]] += level.vwgt[v];
    }
    w
}

/// Seeds parts at mutually distant vertices, then grows the lightest part by
/// its strongest-attached unassigned vertex.
fn grow_initial_parts(level: &Level, n_parts: usize) -> Vec<usize> {
    let n = level.n();
    let unassigned = usize::MAX;
    let mut parts = vec![unassigned; n];

    let first = (0..n)
        .max_by(|&a, &b| {
            let da: f64 = level.adj[a].iter().map(|&(_, w)| w).sum();
            let db: f64 = level.adj[b].iter().map(|&(_, w)| w).sum();
            (level.vwgt[a], da, std::cmp::Reverse(a))
                .partial_cmp(&(level.vwgt[b], db, std::cmp::Reverse(b)))
                .unwrap()
        })
        .unwrap();
    let mut seeds = vec![first];
    while seeds.len() < n_parts {
        // Hop distance to the nearest existing seed; unreachable wins.
        let mut dist = vec![usize::MAX; n];
        let mut queue = std::collections::VecDeque::new();
        for &s in &seeds {
            dist[s] = 0;
            queue.push_back(s);
        }
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &level.adj[v] {
                if dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        let next = (0..n)
            .filter(|v| !seeds.contains(v))
            .max_by(|&a, &b| (dist[a], std::cmp::Reverse(a)).cmp(&(dist[b], std::cmp::Reverse(b))))
            .unwrap();
        seeds.push(next);
    }

    let mut weights = vec![0.0; n_parts];
    for (p, &s) in seeds.iter().enumerate() {
        parts[s] = p;
        weights[p] = level.vwgt[s];
    }

    let mut remaining = n - n_parts;
    while remaining > 0 {
        let p = (0..n_parts)
            .min_by(|&a, &b| (weights[a], a).partial_cmp(&(weights[b], b)).unwrap())
            .unwrap();
        // Strongest unassigned vertex touching part p, else the smallest
        // unassigned id (new component).
        let mut best: Option<(f64, usize)> = None;
        for v in 0..n {
            if parts[v] != unassigned {
                continue;
            }
            let conn: f64 = level.adj[v]
                .iter()
                .filter(|&&(u, _)| parts[u] == p)
                .map(|&(_, w)| w)
                .sum();
            let better = match best {
                None => conn > 0.0,
                Some((bc, bv)) => conn > bc || (conn == bc && v < bv),
            };
            if better {
                best = Some((conn, v));
            }
        }
        let v = match best {
            Some((_, v)) => v,
            None => (0..n).find(|&v| parts[v] == unassigned).unwrap(),
        };
        parts[v] = p;
        weights[p] += level.vwgt[v];
        remaining -= 1;
    }
    parts
}

/// Connection weight from v to each part among its neighbors.
fn connections(level: &Level, parts: &[usize], v: usize, n_parts: usize) -> Vec<f64> {
    let mut conn = vec![0.0; n_parts];
    for &(u, w) in &level.adj[v] {
        conn[parts[u]] += w;
    }
    conn
}

/// Forces part weights into [wmin, wmax] with minimum-damage single moves.
/// Guaranteed to terminate when vertex weights are all 1; capped otherwise.
fn rebalance(level: &Level, parts: &mut [usize], n_parts: usize, wmin: usize, wmax: usize) {
    let mut weights = part_weights(level, parts, n_parts);
    let (wmin, wmax) = (wmin as f64, wmax as f64);
    for _ in 0..(4 * level.n() + 8) {
        let over = (0..n_parts)
            .filter(|&p| weights[p] > wmax)
            .max_by(|&a, &b| (weights[a], b).partial_cmp(&(weights[b], a)).unwrap());
        let under = (0..n_parts)
            .filter(|&p| weights[p] < wmin)
            .min_by(|&a, &b| (weights[a], a).partial_cmp(&(weights[b], b)).unwrap());
        let (from, to) = match (over, under) {
            (Some(p), _) => {
                let to = (0..n_parts)
                    .filter(|&q| q != p)
                    .min_by(|&a, &b| (weights[a], a).partial_cmp(&(weights[b], b)).unwrap())
                    .unwrap();
                (p, to)
            }
            (None, Some(q)) => {
                let from = (0..n_parts)
                    .filter(|&p| p != q && weights[p] - 1.0 >= wmin)
                    .max_by(|&a, &b| (weights[a], b).partial_cmp(&(weights[b], a)).unwrap());
                match from {
                    Some(p) => (p, q),
                    None => return,
                }
            }
            (None, None) => return,
        };
        // Cheapest vertex to surrender: maximize gain toward the receiver.
        let mut best: Option<(f64, usize)> = None;
        for v in 0..level.n() {
            if parts[v] != from {
                continue;
            }
            let conn = connections(level, parts, v, n_parts);
            let gain = conn[to] - conn[from];
            let better = match best {
                None => true,
                Some((bg, bv)) => gain > bg || (gain == bg && v < bv),
            };
            if better {
                best = Some((gain, v));
            }
        }
        match best {
            Some((_, v)) => {
                weights[from] -= level.vwgt[v];
                weights[to] += level.vwgt[v];
                parts[v] = to;
            }
            None => return,
        }
    }
}

/// Positive-gain boundary moves under the balance constraint. The cut is
/// strictly decreasing across moves, so each pass terminates and the loop
/// stops at the first pass with no improvement.
fn refine(level: &Level, parts: &mut [usize], n_parts: usize, wmin: usize, wmax: usize) {
    let mut weights = part_weights(level, parts, n_parts);
    let (wmin, wmax) = (wmin as f64, wmax as f64);
    for _ in 0..8 {
        let mut moved = 0usize;
        for v in 0..level.n() {
            let own = parts[v];
            if weights[own] - level.vwgt[v] < wmin {
                continue;
            }
            let conn = connections(level, parts, v, n_parts);
            let mut best: Option<(f64, usize)> = None;
            for p in 0..n_parts {
                if p == own || weights[p] + level.vwgt[v] > wmax {
                    continue;
                }
                let gain = conn[p] - conn[own];
                if gain > 0.0 {
                    let better = match best {
                        None => true,
                        Some((bg, bp)) => gain > bg || (gain == bg && p < bp),
                    };
                    if better {
                        best = Some((gain, p));
                    }
                }
            }
            if let Some((_, p)) = best {
                weights[own] -= level.vwgt[v];
                weights[p] += level.vwgt[v];
                parts[v] = p;
                moved += 1;
            }
        }
        if moved == 0 {
            break;
        }
    }
}
