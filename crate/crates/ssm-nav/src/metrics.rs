//! Trajectory evaluation: SR, NE, TL, OR, SPL, CLS, nDTW, SDTW.
//!
//! Distances between nodes default to environment geodesics (matching the
//! rewards and the teacher); a Euclidean switch exists for comparison. Path
//! lengths are metric lengths, i.e. summed consecutive-node distances.

use crate::env::{Episode, EnvironmentGraph, Geodesics};
use crate::types::{euclid, NodeId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    Geodesic,
    Euclidean,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MetricScores {
    pub sr: f64,
    pub ne: f64,
    pub tl: f64,
    pub or_rate: f64,
    pub spl: f64,
    pub cls: f64,
    pub ndtw: f64,
    pub sdtw: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeScores {
    pub episode_id: u64,
    pub env_seed: u64,
    pub scores: MetricScores,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub success_radius: f64,
    pub distance: DistanceMode,
    pub count: usize,
    pub means: MetricScores,
    pub per_episode: Vec<EpisodeScores>,
}

impl MetricReport {
    pub fn from_rows(rows: Vec<EpisodeScores>, success_radius: f64, distance: DistanceMode) -> Self {
        let count = rows.len();
        let mut means = MetricScores::default();
        for r in &rows {
            means.sr += r.scores.sr;
            means.ne += r.scores.ne;
            means.tl += r.scores.tl;
            means.or_rate += r.scores.or_rate;
            means.spl += r.scores.spl;
            means.cls += r.scores.cls;
            means.ndtw += r.scores.ndtw;
            means.sdtw += r.scores.sdtw;
        }
        if count > 0 {
            let n = count as f64;
            means.sr /= n;
            means.ne /= n;
            means.tl /= n;
            means.or_rate /= n;
            means.spl /= n;
            means.cls /= n;
            means.ndtw /= n;
            means.sdtw /= n;
        }
        Self {
            success_radius,
            distance,
            count,
            means,
            per_episode: rows,
        }
    }

    /// Table layout: SR, NE, TL, OR, SPL | CLS, nDTW, SDTW.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("episode_id,env_seed,sr,ne,tl,or,spl,cls,ndtw,sdtw\n");
        for r in &self.per_episode {
            let s = &r.scores;
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.episode_id, r.env_seed, s.sr, s.ne, s.tl, s.or_rate, s.spl, s.cls, s.ndtw, s.sdtw
            ));
        }
        let m = &self.means;
        out.push_str(&format!(
            "mean,,{},{},{},{},{},{},{},{}\n",
            m.sr, m.ne, m.tl, m.or_rate, m.spl, m.cls, m.ndtw, m.sdtw
        ));
        out
    }
}

struct Dist<'a> {
    env: &'a EnvironmentGraph,
    geo: &'a Geodesics,
    mode: DistanceMode,
}

impl Dist<'_> {
    fn d(&self, a: NodeId, b: NodeId) -> f64 {
        match self.mode {
            DistanceMode::Geodesic => self.geo.dist(a, b),
            DistanceMode::Euclidean => euclid(self.env.positions[&a], self.env.positions[&b]),
        }
    }
}

fn path_length(env: &EnvironmentGraph, path: &[NodeId]) -> f64 {
    path.windows(2)
        .map(|w| euclid(env.positions[&w[0]], env.positions[&w[1]]))
        .sum()
}

/// Full dynamic-programming DTW cost between two node sequences.
pub fn dtw_cost(d: &dyn Fn(NodeId, NodeId) -> f64, p: &[NodeId], r: &[NodeId]) -> f64 {
    let (n, m) = (p.len(), r.len());
    let mut dp = vec![vec![f64::INFINITY; m + 1]; n + 1];
    dp[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let cost = d(p[i - 1], r[j - 1]);
            dp[i][j] = cost + dp[i - 1][j].min(dp[i][j - 1]).min(dp[i - 1][j - 1]);
        }
    }
    dp[n][m]
}

/// Score one agent path against an episode's reference path.
pub fn score_trajectory(
    env: &EnvironmentGraph,
    geo: &Geodesics,
    episode: &Episode,
    path: &[NodeId],
    mode: DistanceMode,
) -> MetricScores {
    assert!(!path.is_empty(), "trajectory path must contain the start");
    let dist = Dist { env, geo, mode };
    let goal = episode.goal;
    let radius = episode.success_radius;
    let reference = &episode.gt_path;

    let final_node = *path.last().unwrap();
    let ne = dist.d(final_node, goal);
    let sr = if ne < radius { 1.0 } else { 0.0 };
    let tl = path_length(env, path);
    let closest = path
        .iter()
        .map(|&n| dist.d(n, goal))
        .fold(f64::INFINITY, f64::min);
    let or_rate = if closest < radius { 1.0 } else { 0.0 };

    let shortest = dist.d(episode.start, goal);
    let spl = if shortest > 0.0 {
        sr * shortest / shortest.max(tl)
    } else {
        sr
    };

    let dfn = |a: NodeId, b: NodeId| dist.d(a, b);
    let dtw = dtw_cost(&dfn, path, reference);
    let ndtw = (-dtw / (reference.len() as f64 * radius)).exp();
    let sdtw = sr * ndtw;

    // Coverage weighted by length score.
    let pc = reference
        .iter()
        .map(|&r| {
            let dmin = path
                .iter()
                .map(|&p| dist.d(r, p))
                .fold(f64::INFINITY, f64::min);
            (-dmin / radius).exp()
        })
        .sum::<f64>()
        / reference.len() as f64;
    let ref_len = path_length(env, reference);
    let epl = pc * ref_len;
    let ls = if epl > 0.0 || tl > 0.0 {
        epl / (epl + (epl - tl).abs())
    } else {
        1.0
    };
    let cls = pc * ls;

    MetricScores {
        sr,
        ne,
        tl,
        or_rate,
        spl,
        cls,
        ndtw,
        sdtw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{generate_environment, make_episode, EnvParams, EpisodeParams};

    fn setup() -> (EnvironmentGraph, Geodesics, Episode) {
        let env = generate_environment(23, &EnvParams::default()).unwrap();
        let geo = Geodesics::new(&env);
        let ep = make_episode(&env, &geo, 5, &EpisodeParams::default()).unwrap();
        (env, geo, ep)
    }

    #[test]
    fn perfect_replay_scores_perfectly() {
        let (env, geo, ep) = setup();
        let s = score_trajectory(&env, &geo, &ep, &ep.gt_path.clone(), DistanceMode::Geodesic);
        assert_eq!(s.sr, 1.0);
        assert!((s.ndtw - 1.0).abs() < 1e-9);
        assert!((s.cls - 1.0).abs() < 1e-9);
        assert!((s.spl - 1.0).abs() < 1e-9);
        assert!((s.sdtw - 1.0).abs() < 1e-9);
        assert_eq!(s.or_rate, 1.0);
    }

    #[test]
    fn stationary_agent_has_zero_tl_and_penalized_cls() {
        let (env, geo, ep) = setup();
        let s = score_trajectory(&env, &geo, &ep, &[ep.start], DistanceMode::Geodesic);
        assert_eq!(s.tl, 0.0);
        assert_eq!(s.sr, 0.0);
        assert_eq!(s.sdtw, 0.0);
        assert!(s.cls < 1.0);
    }

    #[test]
    fn or_dominates_sr_and_failure_zeroes_spl() {
        let (env, geo, ep) = setup();
        // Walk the reference but stop one hop early: OR may hold, SR fails
        // if the second-to-last node is outside the radius.
        let mut path = ep.gt_path.clone();
        path.pop();
        let s = score_trajectory(&env, &geo, &ep, &path, DistanceMode::Geodesic);
        assert!(s.or_rate >= s.sr);
        if s.sr == 0.0 {
            assert_eq!(s.spl, 0.0);
            assert_eq!(s.sdtw, 0.0);
        }
    }

    #[test]
    fn spl_halves_when_path_doubles() {
        let (env, geo, ep) = setup();
        // Walk the reference forth, back, and forth again: success with
        // p = 3 * shortest gives SPL 1/3.
        let mut path = ep.gt_path.clone();
        let back: Vec<NodeId> = ep.gt_path.iter().rev().skip(1).copied().collect();
        path.extend(back);
        path.extend(ep.gt_path.iter().skip(1).copied());
        let s = score_trajectory(&env, &geo, &ep, &path, DistanceMode::Geodesic);
        assert_eq!(s.sr, 1.0);
        assert!((s.spl - 1.0 / 3.0).abs() < 1e-9);
    }

    /// Exhaustive monotone-alignment DTW oracle for short paths.
    fn dtw_oracle(d: &dyn Fn(NodeId, NodeId) -> f64, p: &[NodeId], r: &[NodeId]) -> f64 {
        fn rec(
            d: &dyn Fn(NodeId, NodeId) -> f64,
            p: &[NodeId],
            r: &[NodeId],
            i: usize,
            j: usize,
        ) -> f64 {
            let cost = d(p[i], r[j]);
            if i == p.len() - 1 && j == r.len() - 1 {
                return cost;
            }
            let mut best = f64::INFINITY;
            if i + 1 < p.len() {
                best = best.min(rec(d, p, r, i + 1, j));
            }
            if j + 1 < r.len() {
                best = best.min(rec(d, p, r, i, j + 1));
            }
            if i + 1 < p.len() && j + 1 < r.len() {
                best = best.min(rec(d, p, r, i + 1, j + 1));
            }
            cost + best
        }
        rec(d, p, r, 0, 0)
    }

    #[test]
    fn dtw_matches_exhaustive_alignment_oracle() {
        let (env, geo, _) = setup();
        let ids: Vec<NodeId> = env.positions.keys().copied().collect();
        let dfn = |a: NodeId, b: NodeId| geo.dist(a, b);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let np = rng.gen_range(1..=6);
            let nr = rng.gen_range(1..=6);
            let p: Vec<NodeId> = (0..np).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
            let r: Vec<NodeId> = (0..nr).map(|_| ids[rng.gen_range(0..ids.len())]).collect();
            let a = dtw_cost(&dfn, &p, &r);
            let b = dtw_oracle(&dfn, &p, &r);
            assert!((a - b).abs() < 1e-9, "dtw {a} vs oracle {b}");
        }
    }

    #[test]
    fn cls_two_node_hand_case() {
        // Reference a--b, agent stays at a. PC = (1 + exp(-d/rad)) / 2,
        // EPL = PC * d, LS = EPL / (EPL + EPL) = 0.5 (agent length 0).
        let (env, geo, _) = setup();
        let a = NodeId(0);
        let b = *env.nav[&a].iter().next().unwrap();
        let d = geo.dist(a, b);
        let radius = 3.0;
        let ep = Episode {
            env_seed: env.seed,
            id: 0,
            start: a,
            goal: b,
            gt_path: vec![a, b],
            instruction: crate::instructions::Instruction { tokens: vec![5] },
            success_radius: radius,
        };
        let s = score_trajectory(&env, &geo, &ep, &[a], DistanceMode::Geodesic);
        let pc = (1.0 + (-d / radius).exp()) / 2.0;
        let expect = pc * 0.5;
        assert!((s.cls - expect).abs() < 1e-9, "cls {} vs {}", s.cls, expect);
    }
}
