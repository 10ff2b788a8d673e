//! Small deterministic graph routines shared by the scene memory and the
//! environment: single-source shortest distances and lexicographically
//! smallest shortest-path extraction.

use crate::types::NodeId;
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Weighted directed adjacency. Weights must be positive and finite.
pub type Adjacency = BTreeMap<NodeId, BTreeMap<NodeId, f64>>;

/// Single-source shortest distances via a dense Dijkstra scan.
///
/// Deterministic: on equal tentative distances the smaller node id settles
/// first. Unreachable nodes are absent from the result.
pub fn dijkstra(adj: &Adjacency, source: NodeId) -> BTreeMap<NodeId, f64> {
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    dist.insert(source, 0.0);

    loop {
        let next = dist
            .iter()
            .filter(|(n, _)| !settled.contains(n))
            .min_by(|(na, da), (nb, db)| da.partial_cmp(db).unwrap().then(na.cmp(nb)))
            .map(|(n, d)| (*n, *d));
        let Some((u, du)) = next else { break };
        settled.insert(u);
        if let Some(out) = adj.get(&u) {
            for (&v, &w) in out {
                let cand = du + w;
                let better = match dist.get(&v) {
                    Some(&dv) => cand < dv,
                    None => true,
                };
                if better {
                    dist.insert(v, cand);
                }
            }
        }
    }
    dist
}

fn reversed(adj: &Adjacency) -> Adjacency {
    let mut rev: Adjacency = BTreeMap::new();
    for (&u, out) in adj {
        rev.entry(u).or_default();
        for (&v, &w) in out {
            rev.entry(v).or_default().insert(u, w);
        }
    }
    rev
}

/// Shortest path from `from` to `to`; among equal-length paths the
/// lexicographically smallest node-id sequence is returned.
///
/// Returns `None` when `to` is unreachable.
pub fn shortest_path(adj: &Adjacency, from: NodeId, to: NodeId) -> Option<(Vec<NodeId>, f64)> {
    if from == to {
        return Some((vec![from], 0.0));
    }
    let d_from = dijkstra(adj, from);
    let total = *d_from.get(&to)?;
    let d_to = dijkstra(&reversed(adj), to);

    // Walk greedily over edges that lie on some shortest path, always taking
    // the smallest next id. Weights are positive so progress is guaranteed.
    let tol = 1e-9 * total.max(1.0);
    let mut path = vec![from];
    let mut u = from;
    while u != to {
        let du = d_from[&u];
        let next = adj
            .get(&u)
            .into_iter()
            .flatten()
            .filter(|(v, w)| {
                d_to.get(v)
                    .map(|dv| (du + **w + dv - total).abs() <= tol)
                    .unwrap_or(false)
            })
            .map(|(v, _)| *v)
            .min()?;
        path.push(next);
        u = next;
    }
    Some((path, total))
}

/// Connected components treating edges as undirected.
pub fn components(nodes: &BTreeSet<NodeId>, adj: &Adjacency) -> Vec<BTreeSet<NodeId>> {
    let mut undirected: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&u, out) in adj {
        for &v in out.keys() {
            undirected.entry(u).or_default().insert(v);
            undirected.entry(v).or_default().insert(u);
        }
    }
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    let mut comps = Vec::new();
    for &start in nodes {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([start]);
        seen.insert(start);
        while let Some(u) = queue.pop_front() {
            comp.insert(u);
            for &v in undirected.get(&u).into_iter().flatten() {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        comps.push(comp);
    }
    comps
}

/// Bellman-Ford distances; used as the independent oracle against Dijkstra
/// in tests.
pub fn bellman_ford(adj: &Adjacency, source: NodeId) -> BTreeMap<NodeId, f64> {
    let mut dist: BTreeMap<NodeId, f64> = BTreeMap::new();
    dist.insert(source, 0.0);
    let n = adj.len().max(1);
    for _ in 0..n {
        let mut changed = false;
        for (&u, out) in adj {
            let Some(&du) = dist.get(&u) else { continue };
            for (&v, &w) in out {
                let cand = du + w;
                if dist.get(&v).map(|&dv| cand < dv - 1e-15).unwrap_or(true) {
                    dist.insert(v, cand);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    dist
}
