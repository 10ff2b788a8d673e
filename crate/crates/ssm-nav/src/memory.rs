//! The structured scene memory: a directed graph of visited places with
//! visual node embeddings, orientation-typed edges, and unvisited sub-nodes.
//!
//! Nodes keep the full panorama observed at creation time; sub-nodes are the
//! still-unvisited navigable viewpoints and together form the global action
//! space. Visiting a place consumes every sub-node that pointed at it
//! (matched by coordinate proximity) and replaces them with directed edges.

use crate::env::Observation;
use crate::graph::{self, Adjacency};
use crate::types::{euclid, NodeId, OrientationFeature, Position, SubNode, ViewIndex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("malformed observation: {0}")]
    MalformedObservation(String),
    #[error("inconsistent transition: no sub-node or node matches position {0:?}")]
    InconsistentTransition([f64; 3]),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("internal invariant violated: {to} unreachable from {from}")]
    Unreachable { from: NodeId, to: NodeId },
}

/// A visited place. `panorama_views` is fixed at creation and never shrinks;
/// `live_subnodes` only ever shrinks as targets get visited.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryNode {
    pub id: NodeId,
    pub position: Position,
    pub panorama_views: Vec<(ViewIndex, Vec<f64>)>,
    live_subnodes: Vec<SubNode>,
    pub visited_step: u32,
}

impl MemoryNode {
    pub fn live_subnodes(&self) -> &[SubNode] {
        &self.live_subnodes
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemoryEdge {
    pub from: NodeId,
    pub to: NodeId,
    pub orientation: OrientationFeature,
}

/// The scene memory graph at some step `t`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMemory {
    nodes: BTreeMap<NodeId, MemoryNode>,
    /// Directed adjacency; `edges[u][v]` stores the orientation of u -> v.
    edges: BTreeMap<NodeId, BTreeMap<NodeId, OrientationFeature>>,
    current: NodeId,
    step: u32,
}

fn validate_observation(obs: &Observation) -> Result<(), MemoryError> {
    let (h, e) = obs.grid;
    for c in &obs.at.coords {
        if !c.is_finite() {
            return Err(MemoryError::MalformedObservation(
                "non-finite position".into(),
            ));
        }
    }
    for entry in &obs.navigable {
        if entry.view.heading >= h || entry.view.elevation >= e {
            return Err(MemoryError::MalformedObservation(format!(
                "view index ({}, {}) outside {}x{} grid",
                entry.view.heading, entry.view.elevation, h, e
            )));
        }
        if !entry.orientation.validate() || entry.orientation.is_zero() {
            return Err(MemoryError::MalformedObservation(
                "navigable orientation is not unit-normalized".into(),
            ));
        }
        if entry.visual.iter().any(|v| !v.is_finite()) {
            return Err(MemoryError::MalformedObservation(
                "non-finite visual feature".into(),
            ));
        }
    }
    Ok(())
}

fn subnodes_from(obs: &Observation) -> Vec<SubNode> {
    let mut subs: Vec<SubNode> = obs
        .navigable
        .iter()
        .map(|entry| SubNode {
            parent: obs.at.id,
            view: entry.view,
            target_coords: entry.target_coords,
            visual: entry.visual.clone(),
            orientation: entry.orientation.clone(),
            is_stop: false,
        })
        .collect();
    subs.sort_by(|a, b| a.order_key().partial_cmp(&b.order_key()).unwrap());
    subs
}

impl SceneMemory {
    /// Start a memory at the first observation: a single node whose
    /// sub-nodes are the observed navigable viewpoints.
    pub fn init(start_obs: &Observation) -> Result<Self, MemoryError> {
        validate_observation(start_obs)?;
        let node = MemoryNode {
            id: start_obs.at.id,
            position: start_obs.at,
            panorama_views: start_obs
                .navigable
                .iter()
                .map(|n| (n.view, n.visual.clone()))
                .collect(),
            live_subnodes: subnodes_from(start_obs),
            visited_step: 0,
        };
        let id = node.id;
        Ok(Self {
            nodes: BTreeMap::from([(id, node)]),
            edges: BTreeMap::new(),
            current: id,
            step: 0,
        })
    }

    pub fn current(&self) -> NodeId {
        self.current
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn node(&self, id: NodeId) -> Result<&MemoryNode, MemoryError> {
        self.nodes.get(&id).ok_or(MemoryError::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &MemoryNode> {
        self.nodes.values()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.nodes.contains_key(&id)
    }

    /// Outgoing edges of `v` in ascending target-id order.
    pub fn out_edges(&self, v: NodeId) -> impl Iterator<Item = MemoryEdge> + '_ {
        self.edges
            .get(&v)
            .into_iter()
            .flatten()
            .map(move |(to, orientation)| MemoryEdge {
                from: v,
                to: *to,
                orientation: orientation.clone(),
            })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.values().map(|m| m.len()).sum()
    }

    fn node_near(&self, coords: [f64; 3], eps: f64) -> Option<NodeId> {
        self.nodes
            .values()
            .find(|n| euclid(n.position.coords, coords) <= eps)
            .map(|n| n.id)
    }

    /// Record a transition to `visited`.
    ///
    /// Re-visiting an existing node only repoints `current`. A new place
    /// consumes every live sub-node (anywhere) whose target lies within
    /// `eps` of it, replacing each with a directed edge, and the new node's
    /// own navigable entries pointing back at visited places become edges
    /// instead of sub-nodes.
    pub fn extend(
        &mut self,
        visited: Position,
        obs: &Observation,
        eps: f64,
    ) -> Result<(), MemoryError> {
        if let Some(existing) = self
            .nodes
            .contains_key(&visited.id)
            .then_some(visited.id)
            .or_else(|| self.node_near(visited.coords, eps))
        {
            self.current = existing;
            self.step += 1;
            return Ok(());
        }

        validate_observation(obs)?;
        let mut incoming: Vec<(NodeId, OrientationFeature)> = Vec::new();
        for node in self.nodes.values_mut() {
            let mut kept = Vec::with_capacity(node.live_subnodes.len());
            for sub in node.live_subnodes.drain(..) {
                if euclid(sub.target_coords, visited.coords) <= eps {
                    incoming.push((node.id, sub.orientation));
                } else {
                    kept.push(sub);
                }
            }
            node.live_subnodes = kept;
        }
        if incoming.is_empty() {
            return Err(MemoryError::InconsistentTransition(visited.coords));
        }

        let new_id = visited.id;
        let mut live = Vec::new();
        let mut outgoing: Vec<(NodeId, OrientationFeature)> = Vec::new();
        for sub in subnodes_from(obs) {
            match self.node_near(sub.target_coords, eps) {
                Some(other) if other != new_id => {
                    outgoing.push((other, sub.orientation));
                }
                Some(_) => {} // would be a self-loop; drop
                None => live.push(SubNode {
                    parent: new_id,
                    ..sub
                }),
            }
        }

        self.step += 1;
        self.nodes.insert(
            new_id,
            MemoryNode {
                id: new_id,
                position: visited,
                panorama_views: obs
                    .navigable
                    .iter()
                    .map(|n| (n.view, n.visual.clone()))
                    .collect(),
                live_subnodes: live,
                visited_step: self.step,
            },
        );
        for (from, orientation) in incoming {
            self.edges
                .entry(from)
                .or_default()
                .entry(new_id)
                .or_insert(orientation);
        }
        for (to, orientation) in outgoing {
            self.edges
                .entry(new_id)
                .or_default()
                .entry(to)
                .or_insert(orientation);
        }
        self.current = new_id;
        Ok(())
    }

    /// Nodes that still own at least one live sub-node.
    pub fn frontiers(&self) -> Vec<NodeId> {
        self.nodes
            .values()
            .filter(|n| !n.live_subnodes.is_empty())
            .map(|n| n.id)
            .collect()
    }

    fn adjacency(&self) -> Adjacency {
        let mut adj: Adjacency = BTreeMap::new();
        for (&u, out) in &self.edges {
            let pu = self.nodes[&u].position.coords;
            for &v in out.keys() {
                let w = euclid(pu, self.nodes[&v].position.coords);
                adj.entry(u).or_default().insert(v, w);
            }
        }
        adj
    }

    /// Shortest path by Euclidean edge length; ties break toward the
    /// lexicographically smallest node-id sequence.
    pub fn shortest_path(
        &self,
        from: NodeId,
        to: NodeId,
    ) -> Result<(Vec<NodeId>, f64), MemoryError> {
        if !self.nodes.contains_key(&from) {
            return Err(MemoryError::UnknownNode(from));
        }
        if !self.nodes.contains_key(&to) {
            return Err(MemoryError::UnknownNode(to));
        }
        graph::shortest_path(&self.adjacency(), from, to)
            .ok_or(MemoryError::Unreachable { from, to })
    }

    /// Every live sub-node, ordered by (node id, view index, target coords).
    pub fn global_action_space(&self) -> Vec<&SubNode> {
        self.nodes
            .values()
            .flat_map(|n| n.live_subnodes.iter())
            .collect()
    }

    /// Structural invariants: connectivity, sub-node/visited separation, and
    /// orientation sanity. Intended for fuzz harnesses.
    pub fn check_invariants(&self, eps: f64) -> Result<(), String> {
        if !self.nodes.contains_key(&self.current) {
            return Err(format!("current {} not a node", self.current));
        }
        for node in self.nodes.values() {
            for sub in &node.live_subnodes {
                if let Some(n) = self.node_near(sub.target_coords, eps) {
                    return Err(format!(
                        "live sub-node of {} targets visited node {}",
                        node.id, n
                    ));
                }
                if !sub.orientation.validate() {
                    return Err(format!("bad sub-node orientation at {}", node.id));
                }
                let views: Vec<ViewIndex> =
                    node.panorama_views.iter().map(|(v, _)| *v).collect();
                if !views.contains(&sub.view) {
                    return Err(format!(
                        "sub-node view {:?} of {} not in panorama",
                        sub.view, node.id
                    ));
                }
            }
        }
        for (u, out) in &self.edges {
            for v in out.keys() {
                if u == v {
                    return Err(format!("self edge at {u}"));
                }
                if !self.nodes.contains_key(u) || !self.nodes.contains_key(v) {
                    return Err(format!("dangling edge {u} -> {v}"));
                }
            }
        }
        if self.nodes.len() > 1 {
            let ids = self.nodes.keys().copied().collect();
            let comps = graph::components(&ids, &self.adjacency());
            if comps.len() != 1 {
                return Err(format!("memory split into {} components", comps.len()));
            }
        }
        Ok(())
    }
}
