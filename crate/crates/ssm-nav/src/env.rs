//! Procedurally generated viewpoint-graph environments.
//!
//! The environment is the oracle world: it knows positions, navigability,
//! landmark identities, and geodesic distances. Agents only ever receive
//! [`Observation`]s, whose navigable entries expose features and target
//! coordinates but hide the identity of unvisited places.

use crate::graph::{self, Adjacency};
use crate::instructions::{self, Instruction};
use crate::types::{euclid, NodeId, OrientationFeature, Position, SubNode, ViewIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment parameters: {0}")]
    InvalidParams(String),
    #[error("generation infeasible: {0}")]
    Infeasible(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("illegal transition: {0}")]
    IllegalStep(String),
    #[error("episode constraints unsatisfiable after {tries} tries: {reason}")]
    EpisodeUnsatisfiable { tries: usize, reason: String },
}

/// Generation parameters. `min_sep` must exceed twice the planner's position
/// matching radius so coordinate unification never conflates distinct places.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub n_nodes: usize,
    /// Connection radius, meters.
    pub radius: f64,
    /// Number of landmark classes.
    pub vocab: usize,
    /// Visual feature dimension.
    pub d_f: usize,
    /// Orientation tiling factor (feature dim = 4 * tiling).
    pub tiling: usize,
    /// Observation noise scale.
    pub noise_sigma: f64,
    /// Minimum pairwise node separation, meters.
    pub min_sep: f64,
    /// Vertical extent: z is confined to [-z_range, z_range].
    pub z_range: f64,
    pub heading_bins: u8,
    pub elevation_bins: u8,
    /// Seed for the landmark embedding dictionary. Datasets that should be
    /// mutually legible (train vs. unseen eval) must share this.
    pub embedding_seed: u64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            n_nodes: 30,
            radius: 4.0,
            vocab: 12,
            d_f: 32,
            tiling: 8,
            noise_sigma: 0.1,
            min_sep: 1.5,
            z_range: 0.6,
            heading_bins: 12,
            elevation_bins: 3,
            embedding_seed: 17,
        }
    }
}

/// The oracle world graph. Immutable once generated.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentGraph {
    pub seed: u64,
    pub params: EnvParams,
    pub positions: BTreeMap<NodeId, [f64; 3]>,
    /// Symmetric navigability.
    pub nav: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pub landmark: BTreeMap<NodeId, u32>,
    /// One unit-norm row per landmark class, shared across environments that
    /// use the same `embedding_seed`.
    pub landmark_embeddings: Vec<Vec<f64>>,
}

/// One navigable viewpoint inside an observation. The target's identity is
/// oracle-side only; planners must work from features and coordinates.
#[derive(Debug, Clone)]
pub struct NavigableEntry {
    to: NodeId,
    pub view: ViewIndex,
    pub visual: Vec<f64>,
    pub orientation: OrientationFeature,
    pub target_coords: [f64; 3],
}

impl NavigableEntry {
    pub fn new(
        to: NodeId,
        view: ViewIndex,
        visual: Vec<f64>,
        orientation: OrientationFeature,
        target_coords: [f64; 3],
    ) -> Self {
        Self {
            to,
            view,
            visual,
            orientation,
            target_coords,
        }
    }

    /// Oracle/test accessor; policy code must not call this.
    pub fn oracle_target(&self) -> NodeId {
        self.to
    }
}

/// One panorama: a full view grid plus the navigable viewpoints.
#[derive(Debug, Clone)]
pub struct Observation {
    pub at: Position,
    /// (heading bins, elevation bins).
    pub grid: (u8, u8),
    /// `heading * elevation_bins + elevation` indexed cells.
    pub views: Vec<Vec<f64>>,
    pub navigable: Vec<NavigableEntry>,
}

/// A navigation task over one environment.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Episode {
    pub env_seed: u64,
    pub id: u64,
    pub start: NodeId,
    pub goal: NodeId,
    pub gt_path: Vec<NodeId>,
    pub instruction: Instruction,
    pub success_radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpisodeParams {
    /// Minimum geodesic hop count between start and goal.
    pub min_len: usize,
    /// Required number of on-path junctions with a misleading off-path
    /// branch (same landmark as the next waypoint).
    pub trap_branches: usize,
    pub success_radius: f64,
    pub max_tries: usize,
}

impl Default for EpisodeParams {
    fn default() -> Self {
        Self {
            min_len: 4,
            trap_branches: 1,
            success_radius: 3.0,
            max_tries: 400,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Deterministic seed mixing for per-site noise streams.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut acc = 0x51_7c_c1_b7_27_22_0a_95u64;
    for &p in parts {
        acc = splitmix(acc ^ p);
    }
    acc
}

pub fn generate_environment(seed: u64, params: &EnvParams) -> Result<EnvironmentGraph, EnvError> {
    if params.n_nodes < 2 {
        return Err(EnvError::InvalidParams("n_nodes must be >= 2".into()));
    }
    if !(params.radius.is_finite() && params.radius > 0.0) {
        return Err(EnvError::InvalidParams("radius must be positive".into()));
    }
    if params.vocab == 0 {
        return Err(EnvError::InvalidParams("vocab must be >= 1".into()));
    }
    if params.d_f < 4 {
        return Err(EnvError::InvalidParams("d_f must be >= 4".into()));
    }
    if params.tiling == 0 {
        return Err(EnvError::InvalidParams("tiling must be >= 1".into()));
    }
    if params.heading_bins == 0 || params.elevation_bins == 0 {
        return Err(EnvError::InvalidParams("view grid must be non-empty".into()));
    }
    if params.min_sep >= 0.9 * params.radius {
        return Err(EnvError::InvalidParams(
            "min_sep must stay below 0.9 * radius".into(),
        ));
    }

    // Incremental placement: each new node lands within link range of an
    // existing one, so the radius graph is connected by construction.
    let mut positions: Option<Vec<[f64; 3]>> = None;
    'attempt: for attempt in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, attempt, 0x905]));
        let mut pos: Vec<[f64; 3]> = Vec::with_capacity(params.n_nodes);
        pos.push([0.0, 0.0, rng.gen_range(-params.z_range..=params.z_range)]);
        let z_cap = params.z_range.min(0.3 * params.radius);
        let lo = (params.min_sep * 1.02).max(0.4 * params.radius);
        while pos.len() < params.n_nodes {
            let mut placed = false;
            for _ in 0..96 {
                let anchor = pos[rng.gen_range(0..pos.len())];
                let z = rng.gen_range(-params.z_range..=params.z_range);
                let dz = z - anchor[2];
                if dz.abs() > z_cap {
                    continue;
                }
                let hi = ((0.95 * params.radius).powi(2) - dz * dz).max(0.0).sqrt();
                if hi <= lo {
                    continue;
                }
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let d = rng.gen_range(lo..hi);
                let cand = [
                    anchor[0] + theta.sin() * d,
                    anchor[1] + theta.cos() * d,
                    z,
                ];
                if pos.iter().all(|p| euclid(*p, cand) >= params.min_sep) {
                    pos.push(cand);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'attempt;
            }
        }
        positions = Some(pos);
        break;
    }
    let pos = positions.ok_or_else(|| {
        EnvError::Infeasible("could not place nodes under min_sep within retry budget".into())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x1a]));
    let positions: BTreeMap<NodeId, [f64; 3]> = pos
        .iter()
        .enumerate()
        .map(|(i, p)| (NodeId(i as u32), *p))
        .collect();
    let mut nav: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for (&a, pa) in &positions {
        nav.entry(a).or_default();
        for (&b, pb) in &positions {
            if a != b && euclid(*pa, *pb) <= params.radius {
                nav.entry(a).or_default().insert(b);
            }
        }
    }
    let landmark: BTreeMap<NodeId, u32> = positions
        .keys()
        .map(|&id| (id, rng.gen_range(0..params.vocab as u32)))
        .collect();

    let mut emb_rng = ChaCha8Rng::seed_from_u64(mix_seed(&[params.embedding_seed, 0xE4]));
    let landmark_embeddings: Vec<Vec<f64>> = (0..params.vocab)
        .map(|_| {
            let mut row: Vec<f64> = (0..params.d_f)
                .map(|_| emb_rng.sample::<f64, _>(StandardNormal))
                .collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
            row
        })
        .collect();

    let env = EnvironmentGraph {
        seed,
        params: params.clone(),
        positions,
        nav,
        landmark,
        landmark_embeddings,
    };
    debug_assert!(env.is_connected());
    Ok(env)
}

impl EnvironmentGraph {
    pub fn adjacency(&self) -> Adjacency {
        let mut adj: Adjacency = BTreeMap::new();
        for (&a, out) in &self.nav {
            for &b in out {
                let w = euclid(self.positions[&a], self.positions[&b]);
                adj.entry(a).or_default().insert(b, w);
            }
        }
        adj
    }

    pub fn is_connected(&self) -> bool {
        let ids: BTreeSet<NodeId> = self.positions.keys().copied().collect();
        graph::components(&ids, &self.adjacency()).len() <= 1
    }

    pub fn position(&self, id: NodeId) -> Result<Position, EnvError> {
        self.positions
            .get(&id)
            .map(|&coords| Position { id, coords })
            .ok_or(EnvError::UnknownNode(id))
    }

    /// Oracle lookup of the node at (or within `tol` of) `coords`.
    pub fn node_at(&self, coords: [f64; 3], tol: f64) -> Option<NodeId> {
        self.positions
            .iter()
            .find(|(_, p)| euclid(**p, coords) <= tol)
            .map(|(id, _)| *id)
    }

    /// Heading/elevation of the offset from `from` to `to`, environment frame.
    /// Heading 0 points along +y and grows clockwise toward +x.
    fn angles(&self, from: NodeId, to: NodeId) -> (f64, f64) {
        let a = self.positions[&from];
        let b = self.positions[&to];
        let (dx, dy, dz) = (b[0] - a[0], b[1] - a[1], b[2] - a[2]);
        let theta = dx.atan2(dy);
        let phi = dz.atan2((dx * dx + dy * dy).sqrt());
        (theta, phi)
    }

    /// Nearest-center view cell for the angles; ties go to the lower index.
    pub fn view_cell(&self, theta: f64, phi: f64) -> ViewIndex {
        let h_bins = self.params.heading_bins as f64;
        let span = std::f64::consts::TAU / h_bins;
        let mut t = theta.rem_euclid(std::f64::consts::TAU) / span;
        // ceil(x - 0.5) gives round-half-down.
        let mut h = (t - 0.5).ceil();
        if h >= h_bins {
            h = 0.0;
        }
        // Elevation centers at -span_e, 0, +span_e, ..., symmetric around 0.
        let e_bins = self.params.elevation_bins as i64;
        let span_e = 30f64.to_radians();
        t = phi / span_e;
        let half = (e_bins - 1) / 2;
        let e = ((t - 0.5).ceil() as i64).clamp(-half, e_bins - 1 - half) + half;
        ViewIndex {
            heading: h as u8,
            elevation: e as u8,
        }
    }

    fn noise_into(&self, out: &mut [f64], stream: u64) {
        if self.params.noise_sigma == 0.0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(stream);
        for v in out.iter_mut() {
            let n: f64 = rng.sample(StandardNormal);
            *v += self.params.noise_sigma * n;
        }
    }

    /// The panorama at `at`: deterministic in (environment, node).
    pub fn observe(&self, at: NodeId) -> Result<Observation, EnvError> {
        let at_pos = self.position(at)?;
        let neighbors = self.nav.get(&at).ok_or(EnvError::UnknownNode(at))?;
        let (hb, eb) = (self.params.heading_bins, self.params.elevation_bins);
        let cells = hb as usize * eb as usize;

        let mut navigable = Vec::with_capacity(neighbors.len());
        for &u in neighbors {
            let (theta, phi) = self.angles(at, u);
            let view = self.view_cell(theta, phi);
            let orientation = OrientationFeature::from_angles(theta, phi, self.params.tiling);
            let mut visual = self.landmark_embeddings[self.landmark[&u] as usize].clone();
            for i in 0..4 {
                visual[i] += orientation.raw[i];
            }
            self.noise_into(
                &mut visual,
                mix_seed(&[self.seed, at.0 as u64, u.0 as u64, 0xA11]),
            );
            navigable.push(NavigableEntry {
                to: u,
                view,
                visual,
                orientation,
                target_coords: self.positions[&u],
            });
        }

        let mut views = vec![vec![0.0; self.params.d_f]; cells];
        for (c, cell) in views.iter_mut().enumerate() {
            self.noise_into(
                cell,
                mix_seed(&[self.seed, at.0 as u64, c as u64, 0xB6]),
            );
        }
        let mut written = vec![false; cells];
        for entry in &navigable {
            let c = entry.view.heading as usize * eb as usize + entry.view.elevation as usize;
            if !written[c] {
                views[c] = entry.visual.clone();
                written[c] = true;
            }
        }

        Ok(Observation {
            at: at_pos,
            grid: (hb, eb),
            views,
            navigable,
        })
    }

    /// Execute a motion. `at` must be the sub-node's parent and the target
    /// must be one of `at`'s navigable neighbors.
    pub fn step(&self, at: NodeId, chosen: &SubNode) -> Result<NodeId, EnvError> {
        if chosen.is_stop {
            return Err(EnvError::IllegalStep("stop sub-node cannot be stepped".into()));
        }
        if chosen.parent != at {
            return Err(EnvError::IllegalStep(format!(
                "sub-node parent {} does not match agent position {}",
                chosen.parent, at
            )));
        }
        let neighbors = self.nav.get(&at).ok_or(EnvError::UnknownNode(at))?;
        neighbors
            .iter()
            .find(|&&u| euclid(self.positions[&u], chosen.target_coords) <= 1e-6)
            .copied()
            .ok_or_else(|| {
                EnvError::IllegalStep(format!(
                    "no navigable neighbor of {} at {:?}",
                    at, chosen.target_coords
                ))
            })
    }
}

/// All-pairs geodesic distances over the navigability graph.
pub struct Geodesics {
    index: BTreeMap<NodeId, usize>,
    dist: Vec<Vec<f64>>,
}

impl Geodesics {
    pub fn new(env: &EnvironmentGraph) -> Self {
        let adj = env.adjacency();
        let index: BTreeMap<NodeId, usize> = env
            .positions
            .keys()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        let n = index.len();
        let mut dist = vec![vec![f64::INFINITY; n]; n];
        for (&id, &i) in &index {
            let d = graph::dijkstra(&adj, id);
            for (&other, &j) in &index {
                if let Some(&v) = d.get(&other) {
                    dist[i][j] = v;
                }
            }
        }
        Self { index, dist }
    }

    pub fn dist(&self, a: NodeId, b: NodeId) -> f64 {
        self.dist[self.index[&a]][self.index[&b]]
    }
}

/// Count on-path junctions holding a misleading branch: an off-path neighbor
/// carrying the same landmark as the next waypoint.
pub fn count_trap_junctions(env: &EnvironmentGraph, path: &[NodeId]) -> usize {
    let on_path: BTreeSet<NodeId> = path.iter().copied().collect();
    let mut traps = 0;
    for i in 0..path.len().saturating_sub(1) {
        let here = path[i];
        let next = path[i + 1];
        let next_mark = env.landmark[&next];
        let misleading = env.nav[&here]
            .iter()
            .any(|u| !on_path.contains(u) && *u != next && env.landmark[u] == next_mark);
        if misleading {
            traps += 1;
        }
    }
    traps
}

pub fn make_episode(
    env: &EnvironmentGraph,
    geo: &Geodesics,
    seed: u64,
    params: &EpisodeParams,
) -> Result<Episode, EnvError> {
    if !env.is_connected() {
        return Err(EnvError::Infeasible("environment must be connected".into()));
    }
    let ids: Vec<NodeId> = env.positions.keys().copied().collect();
    let adj = env.adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[env.seed, seed, 0xEF]));
    let mut last_reason = "no candidate pair sampled".to_string();
    for _ in 0..params.max_tries {
        let start = ids[rng.gen_range(0..ids.len())];
        let goal = ids[rng.gen_range(0..ids.len())];
        if start == goal {
            continue;
        }
        if geo.dist(start, goal) <= params.success_radius {
            last_reason = "goal within success radius of start".into();
            continue;
        }
        let Some((path, _)) = graph::shortest_path(&adj, start, goal) else {
            continue;
        };
        if path.len() < params.min_len + 1 {
            last_reason = format!("path shorter than {} hops", params.min_len);
            continue;
        }
        if count_trap_junctions(env, &path) < params.trap_branches {
            last_reason = format!("fewer than {} trap junctions", params.trap_branches);
            continue;
        }
        let instruction = instructions::generate_instruction(env, &path);
        return Ok(Episode {
            env_seed: env.seed,
            id: seed,
            start,
            goal,
            gt_path: path,
            instruction,
            success_radius: params.success_radius,
        });
    }
    Err(EnvError::EpisodeUnsatisfiable {
        tries: params.max_tries,
        reason: last_reason,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_node_env_has_one_link() {
        let params = EnvParams {
            n_nodes: 2,
            radius: 10.0,
            ..Default::default()
        };
        let env = generate_environment(1, &params).unwrap();
        assert_eq!(env.positions.len(), 2);
        assert_eq!(env.nav[&NodeId(0)].len(), 1);
        assert_eq!(env.nav[&NodeId(1)].len(), 1);
    }

    #[test]
    fn generation_is_deterministic() {
        let params = EnvParams::default();
        let a = generate_environment(42, &params).unwrap();
        let b = generate_environment(42, &params).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn generation_rejects_bad_params() {
        let mut p = EnvParams::default();
        p.n_nodes = 1;
        assert!(matches!(
            generate_environment(1, &p),
            Err(EnvError::InvalidParams(_))
        ));
        let mut p2 = EnvParams::default();
        p2.min_sep = p2.radius;
        assert!(matches!(
            generate_environment(1, &p2),
            Err(EnvError::InvalidParams(_))
        ));
    }

    #[test]
    fn hundred_node_env_is_connected_by_bfs_oracle() {
        let params = EnvParams {
            n_nodes: 100,
            ..Default::default()
        };
        let env = generate_environment(7, &params).unwrap();
        // Independent reachability check.
        let ids: BTreeSet<NodeId> = env.positions.keys().copied().collect();
        let comps = graph::components(&ids, &env.adjacency());
        assert_eq!(comps.len(), 1);
        assert_eq!(comps[0].len(), 100);
        // Every edge within connection radius.
        for (&a, out) in &env.nav {
            for &b in out {
                assert!(euclid(env.positions[&a], env.positions[&b]) <= params.radius + 1e-12);
            }
        }
    }

    #[test]
    fn due_north_level_neighbor_has_unit_raw() {
        let theta: f64 = 0.0;
        let phi: f64 = 0.0;
        let o = OrientationFeature::from_angles(theta, phi, 2);
        assert_eq!(o.raw, [1.0, 0.0, 1.0, 0.0]);
        assert_eq!(o.tiled().len(), 8);
    }

    #[test]
    fn heading_bin_assignment_rounds_to_nearest_center() {
        let env = generate_environment(1, &EnvParams::default()).unwrap();
        // 44 degrees sits nearest the 30-degree center (bin 1).
        let v = env.view_cell(44f64.to_radians(), 0.0);
        assert_eq!(v.heading, 1);
        // Exact tie at 15 degrees goes to the lower bin.
        let v = env.view_cell(15f64.to_radians(), 0.0);
        assert_eq!(v.heading, 0);
        // 355 degrees wraps to bin 0.
        let v = env.view_cell(355f64.to_radians(), 0.0);
        assert_eq!(v.heading, 0);
        // Elevation: -50 degrees clamps into the lowest band.
        let v = env.view_cell(0.0, -50f64.to_radians());
        assert_eq!(v.elevation, 0);
        let v = env.view_cell(0.0, 5f64.to_radians());
        assert_eq!(v.elevation, 1);
    }

    #[test]
    fn observe_is_pure_even_with_noise() {
        let params = EnvParams {
            noise_sigma: 0.3,
            ..Default::default()
        };
        let env = generate_environment(5, &params).unwrap();
        let a = env.observe(NodeId(3)).unwrap();
        let b = env.observe(NodeId(3)).unwrap();
        assert_eq!(a.navigable.len(), b.navigable.len());
        for (x, y) in a.navigable.iter().zip(&b.navigable) {
            assert_eq!(x.visual, y.visual);
            assert_eq!(x.orientation, y.orientation);
        }
        for (x, y) in a.views.iter().zip(&b.views) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn zero_sigma_features_are_exact_embeddings_plus_direction() {
        let params = EnvParams {
            noise_sigma: 0.0,
            ..Default::default()
        };
        let env = generate_environment(5, &params).unwrap();
        let obs = env.observe(NodeId(0)).unwrap();
        for entry in &obs.navigable {
            let u = entry.oracle_target();
            let emb = &env.landmark_embeddings[env.landmark[&u] as usize];
            for i in 0..env.params.d_f {
                let expected = emb[i] + if i < 4 { entry.orientation.raw[i] } else { 0.0 };
                assert!((entry.visual[i] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_validates_parent_and_target() {
        let env = generate_environment(9, &EnvParams::default()).unwrap();
        let obs = env.observe(NodeId(0)).unwrap();
        let entry = &obs.navigable[0];
        let sub = SubNode {
            parent: NodeId(0),
            view: entry.view,
            target_coords: entry.target_coords,
            visual: entry.visual.clone(),
            orientation: entry.orientation.clone(),
            is_stop: false,
        };
        assert_eq!(env.step(NodeId(0), &sub).unwrap(), entry.oracle_target());

        let stop = SubNode {
            is_stop: true,
            orientation: OrientationFeature::zero(entry.orientation.tiling),
            ..sub.clone()
        };
        assert!(env.step(NodeId(0), &stop).is_err());

        let wrong_parent = SubNode {
            parent: NodeId(1),
            ..sub.clone()
        };
        assert!(env.step(NodeId(0), &wrong_parent).is_err());
    }

    #[test]
    fn observation_entries_round_trip_through_step() {
        let env = generate_environment(11, &EnvParams::default()).unwrap();
        for &at in env.positions.keys() {
            let obs = env.observe(at).unwrap();
            assert_eq!(obs.navigable.len(), env.nav[&at].len());
            for entry in &obs.navigable {
                let sub = SubNode {
                    parent: at,
                    view: entry.view,
                    target_coords: entry.target_coords,
                    visual: entry.visual.clone(),
                    orientation: entry.orientation.clone(),
                    is_stop: false,
                };
                let u = env.step(at, &sub).unwrap();
                assert_eq!(env.positions[&u], entry.target_coords);
            }
        }
    }

    #[test]
    fn geodesics_satisfy_triangle_inequality_on_samples() {
        let env = generate_environment(13, &EnvParams::default()).unwrap();
        let geo = Geodesics::new(&env);
        let ids: Vec<NodeId> = env.positions.keys().copied().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let a = ids[rng.gen_range(0..ids.len())];
            let b = ids[rng.gen_range(0..ids.len())];
            let c = ids[rng.gen_range(0..ids.len())];
            assert!(geo.dist(a, c) <= geo.dist(a, b) + geo.dist(b, c) + 1e-9);
        }
    }

    #[test]
    fn episode_paths_are_optimal_and_trapped() {
        let env = generate_environment(21, &EnvParams::default()).unwrap();
        let geo = Geodesics::new(&env);
        let params = EpisodeParams::default();
        let ep = make_episode(&env, &geo, 1, &params).unwrap();
        assert_ne!(ep.start, ep.goal);
        assert!(ep.gt_path.len() >= params.min_len + 1);
        // Optimality against the all-pairs oracle.
        let mut length = 0.0;
        for w in ep.gt_path.windows(2) {
            assert!(env.nav[&w[0]].contains(&w[1]), "gt_path must follow edges");
            length += euclid(env.positions[&w[0]], env.positions[&w[1]]);
        }
        assert!((length - geo.dist(ep.start, ep.goal)).abs() < 1e-9);
        assert!(count_trap_junctions(&env, &ep.gt_path) >= params.trap_branches);
    }

    #[test]
    fn min_len_one_gives_adjacent_pair() {
        let env = generate_environment(2, &EnvParams::default()).unwrap();
        let geo = Geodesics::new(&env);
        let params = EpisodeParams {
            min_len: 1,
            trap_branches: 0,
            success_radius: 0.5,
            max_tries: 800,
        };
        let ep = make_episode(&env, &geo, 3, &params).unwrap();
        assert!(ep.gt_path.len() >= 2);
    }
}
