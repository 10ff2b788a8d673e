//! Imitation and reinforcement learning: the geodesic teacher, loss
//! construction, the REINFORCE estimator with a batch-mean baseline, the
//! optimizer, and finite-difference gradient verification.

use crate::env::{mix_seed, Episode, EnvironmentGraph, Geodesics};
use crate::memory::SceneMemory;
use crate::metrics::{score_trajectory, DistanceMode, EpisodeScores, MetricReport};
use crate::planner::{
    run_episode, DecisionMode, Forcing, PlannerError, Rollout, RolloutOptions, Sampling,
    Trajectory,
};
use crate::policy::{ModelDims, ParamSet};
use crate::types::{NodeId, SubNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// What the teacher wants done at the selected node.
#[derive(Debug, Clone)]
pub enum TeacherChoice {
    Stop,
    Sub(SubNode),
}

#[derive(Debug, Clone)]
pub struct TeacherAction {
    pub frontier: NodeId,
    pub choice: TeacherChoice,
}

fn resolve_target(env: &EnvironmentGraph, sub: &SubNode) -> NodeId {
    env.node_at(sub.target_coords, 1e-6)
        .expect("sub-node target corresponds to an environment node")
}

/// The oracle teacher: stop at a visited node inside the success radius when
/// one exists (preferring frontier nodes, which stage one can select),
/// otherwise head for the live sub-node geodesically closest to the goal.
pub fn teacher_action(
    mem: &SceneMemory,
    env: &EnvironmentGraph,
    geo: &Geodesics,
    goal: NodeId,
    success_radius: f64,
) -> TeacherAction {
    let frontiers = mem.frontiers();
    let mut stop_best: Option<(bool, f64, NodeId)> = None;
    for node in mem.nodes() {
        let d = geo.dist(node.id, goal);
        if d < success_radius {
            let key = (!frontiers.contains(&node.id), d, node.id);
            if stop_best
                .map(|(nf, bd, bid)| key < (nf, bd, bid))
                .unwrap_or(true)
            {
                stop_best = Some(key);
            }
        }
    }
    if let Some((_, _, node)) = stop_best {
        return TeacherAction {
            frontier: node,
            choice: TeacherChoice::Stop,
        };
    }

    let mut best: Option<(f64, &SubNode)> = None;
    for sub in mem.global_action_space() {
        let d = geo.dist(resolve_target(env, sub), goal);
        if best.map(|(bd, _)| d < bd).unwrap_or(true) {
            best = Some((d, sub));
        }
    }
    match best {
        Some((_, sub)) => TeacherAction {
            frontier: sub.parent,
            choice: TeacherChoice::Sub(sub.clone()),
        },
        None => TeacherAction {
            frontier: mem.current(),
            choice: TeacherChoice::Stop,
        },
    }
}

/// Teacher restricted to node `w`'s candidate set (its live sub-nodes plus
/// stopping at `w`).
pub fn teacher_at_node(
    mem: &SceneMemory,
    env: &EnvironmentGraph,
    geo: &Geodesics,
    w: NodeId,
    goal: NodeId,
    success_radius: f64,
) -> TeacherChoice {
    if geo.dist(w, goal) < success_radius {
        return TeacherChoice::Stop;
    }
    let node = match mem.node(w) {
        Ok(n) => n,
        Err(_) => return TeacherChoice::Stop,
    };
    let mut best: Option<(f64, &SubNode)> = None;
    for sub in node.live_subnodes() {
        let d = geo.dist(resolve_target(env, sub), goal);
        if best.map(|(bd, _)| d < bd).unwrap_or(true) {
            best = Some((d, sub));
        }
    }
    match best {
        Some((_, sub)) => TeacherChoice::Sub(sub.clone()),
        None => TeacherChoice::Stop,
    }
}

/// Imitation loss: summed negative log-likelihood of the teacher labels
/// under the recorded stage distributions. Returns the loss value and the
/// flat parameter gradient.
pub fn il_loss(rollout: &mut Rollout, params: &ParamSet) -> (f64, Vec<f64>) {
    let mut terms = Vec::new();
    for s in &rollout.stages {
        if let Some(l) = s.logp_label {
            terms.push(rollout.tape.scale(l, -1.0));
        }
    }
    if terms.is_empty() {
        return (0.0, vec![0.0; params.n_coords()]);
    }
    let loss = rollout.tape.sum_vecs(&terms);
    let value = rollout.tape.scalar(loss);
    let grads = rollout.tape.backward(loss);
    (value, params.flatten_grads(&rollout.refs, &grads))
}

/// Per-stage distance-change rewards with the terminal success bonus folded
/// into the final stage.
pub fn rl_rewards(
    rollout: &Rollout,
    geo: &Geodesics,
    episode: &Episode,
    success_bonus: f64,
) -> Vec<f64> {
    let mut rewards: Vec<f64> = rollout.stages.iter().map(|s| s.reward).collect();
    let success =
        geo.dist(rollout.trajectory.final_node, episode.goal) < episode.success_radius;
    if success {
        if let Some(last) = rewards.last_mut() {
            *last += success_bonus;
        }
    }
    rewards
}

/// Discounted returns G_t.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        acc = rewards[i] + gamma * acc;
        out[i] = acc;
    }
    out
}

/// REINFORCE gradient: descend on `-sum_t advantage_t * log p(executed_t)`.
pub fn policy_gradient(
    rollout: &mut Rollout,
    params: &ParamSet,
    advantages: &[f64],
) -> Vec<f64> {
    assert_eq!(advantages.len(), rollout.stages.len());
    if rollout.stages.is_empty() {
        return vec![0.0; params.n_coords()];
    }
    let mut terms = Vec::new();
    for (s, &a) in rollout.stages.iter().zip(advantages) {
        terms.push(rollout.tape.scale(s.logp_executed, -a));
    }
    let loss = rollout.tape.sum_vecs(&terms);
    let grads = rollout.tape.backward(loss);
    params.flatten_grads(&rollout.refs, &grads)
}

/// Adam with bias correction.
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub fn optimize(params: &mut ParamSet, grad: &[f64], lr: f64, state: &mut AdamState) {
    assert_eq!(grad.len(), params.n_coords());
    state.t += 1;
    let b1t = 1.0 - state.beta1.powi(state.t as i32);
    let b2t = 1.0 - state.beta2.powi(state.t as i32);
    let mut delta = vec![0.0; grad.len()];
    for i in 0..grad.len() {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
        let mhat = state.m[i] / b1t;
        let vhat = state.v[i] / b2t;
        delta[i] = -lr * mhat / (vhat.sqrt() + state.eps);
    }
    params.apply_delta(&delta);
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamGradCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradReport {
    pub eps: f64,
    pub coords_checked: usize,
    pub max_rel_err: f64,
    pub per_param: Vec<ParamGradCheck>,
}

impl GradReport {
    pub fn passed(&self, threshold: f64) -> bool {
        self.max_rel_err < threshold
    }
}

// The denominator floor sits above the central-difference roundoff floor
// (|loss| * eps_machine / eps ~ 1e-10 here), so near-zero coordinates are
// compared absolutely at ~1e-9 instead of amplifying noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

/// Central finite differences on a down-sampled coordinate set, compared
/// against a provided analytic gradient.
pub fn grad_check(
    params: &ParamSet,
    loss: &dyn Fn(&ParamSet) -> f64,
    analytic: &[f64],
    eps: f64,
    coords_per_tensor: usize,
    seed: u64,
) -> GradReport {
    assert_eq!(analytic.len(), params.n_coords());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = Vec::new();
    let mut max_rel: f64 = 0.0;
    let mut checked = 0;
    for (e, (name, m)) in params.entries().iter().enumerate() {
        let (start, end) = params.entry_range(e);
        let len = m.data.len();
        let mut picks: Vec<usize> = if len <= coords_per_tensor {
            (0..len).collect()
        } else {
            (0..coords_per_tensor)
                .map(|_| rng.gen_range(0..len))
                .collect()
        };
        picks.sort_unstable();
        picks.dedup();
        let mut worst = ParamGradCheck {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_coord: start,
            analytic: 0.0,
            numeric: 0.0,
        };
        for off in picks {
            let i = start + off;
            debug_assert!(i < end);
            let base = params.coord(i);
            let mut p = params.clone();
            p.set_coord(i, base + eps);
            let up = loss(&p);
            p.set_coord(i, base - eps);
            let down = loss(&p);
            let numeric = (up - down) / (2.0 * eps);
            let r = rel_err(analytic[i], numeric);
            checked += 1;
            if r > worst.max_rel_err {
                worst = ParamGradCheck {
                    name: name.clone(),
                    max_rel_err: r,
                    worst_coord: i,
                    analytic: analytic[i],
                    numeric,
                };
            }
        }
        max_rel = max_rel.max(worst.max_rel_err);
        per_param.push(worst);
    }
    GradReport {
        eps,
        coords_checked: checked,
        max_rel_err: max_rel,
        per_param,
    }
}

/// Environments indexed by seed, with geodesic tables.
pub struct EnvTable {
    map: BTreeMap<u64, (EnvironmentGraph, Geodesics)>,
}

impl EnvTable {
    pub fn new(envs: Vec<EnvironmentGraph>) -> Self {
        let map = envs
            .into_iter()
            .map(|e| {
                let geo = Geodesics::new(&e);
                (e.seed, (e, geo))
            })
            .collect();
        Self { map }
    }

    pub fn get(&self, seed: u64) -> Option<(&EnvironmentGraph, &Geodesics)> {
        self.map.get(&seed).map(|(e, g)| (e, g))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub il_weight: f64,
    pub rl_weight: f64,
    pub gamma: f64,
    pub lr: f64,
    pub batch_episodes: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub success_bonus: f64,
    pub mode: DecisionMode,
    /// Probability that an imitation rollout uses student forcing.
    pub student_forcing_prob: f64,
    pub max_rounds: usize,
    pub match_eps: f64,
    /// Evaluate (and checkpoint best-by-SR) every this many epochs.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            il_weight: 1.0,
            rl_weight: 0.2,
            gamma: 0.9,
            lr: 1e-4,
            batch_episodes: 8,
            max_epochs: 10,
            seed: 1,
            success_bonus: 2.0,
            mode: DecisionMode::Frontier,
            student_forcing_prob: 0.5,
            max_rounds: 20,
            match_eps: 0.5,
            eval_every: 2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveRow {
    pub epoch: usize,
    pub il_loss: f64,
    pub mean_return: f64,
    pub eval_sr: f64,
    pub eval_spl: f64,
    pub eval_ndtw: f64,
}

pub struct TrainResult {
    /// Best-by-success-rate parameters.
    pub params: ParamSet,
    pub final_params: ParamSet,
    pub curve: Vec<CurveRow>,
    pub best_sr: f64,
}

struct BatchItem {
    il: Option<Rollout>,
    rl: Option<Rollout>,
    rl_returns: Vec<f64>,
}

/// Evaluate greedily over `episodes`; returns the metric report and the
/// trajectories in input order.
pub fn evaluate(
    table: &EnvTable,
    episodes: &[Episode],
    params: &ParamSet,
    mode: DecisionMode,
    max_rounds: usize,
    match_eps: f64,
    distance: DistanceMode,
) -> Result<(MetricReport, Vec<Trajectory>), PlannerError> {
    let results: Vec<Result<(EpisodeScores, Trajectory), PlannerError>> = episodes
        .par_iter()
        .map(|ep| {
            let (env, geo) = table
                .get(ep.env_seed)
                .unwrap_or_else(|| panic!("episode references unknown env seed {}", ep.env_seed));
            let opts = RolloutOptions {
                mode,
                sampling: Sampling::Greedy,
                forcing: Forcing::Free,
                max_rounds,
                match_eps,
                seed: mix_seed(&[ep.env_seed, ep.id, 0xEA]),
            };
            let rollout = run_episode(env, geo, ep, params, &opts)?;
            let scores = score_trajectory(env, geo, ep, &rollout.trajectory.path, distance);
            Ok((
                EpisodeScores {
                    episode_id: ep.id,
                    env_seed: ep.env_seed,
                    scores,
                },
                rollout.trajectory,
            ))
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut trajectories = Vec::with_capacity(results.len());
    for r in results {
        let (row, traj) = r?;
        rows.push(row);
        trajectories.push(traj);
    }
    Ok((
        MetricReport::from_rows(rows, episodes.first().map(|e| e.success_radius).unwrap_or(3.0), distance),
        trajectories,
    ))
}

/// Mixed IL/RL training with periodic greedy evaluation. `init` resumes
/// from existing parameters instead of a fresh seeded set.
pub fn train(
    table: &EnvTable,
    train_episodes: &[Episode],
    eval_table: &EnvTable,
    eval_episodes: &[Episode],
    dims: ModelDims,
    cfg: &TrainConfig,
    init: Option<ParamSet>,
) -> Result<TrainResult, PlannerError> {
    let mut params = match init {
        Some(p) => {
            assert_eq!(p.dims, dims, "resume checkpoint dims must match");
            p
        }
        None => ParamSet::seeded(dims, cfg.seed),
    };
    let mut adam = AdamState::new(params.n_coords());
    let mut curve = Vec::new();
    let mut best_sr = f64::NEG_INFINITY;
    let mut best_params = params.clone();

    let mut order: Vec<usize> = (0..train_episodes.len()).collect();
    for epoch in 0..cfg.max_epochs {
        // Deterministic shuffle.
        let mut erng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, epoch as u64, 0x0D]));
        for i in (1..order.len()).rev() {
            let j = erng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_il = 0.0;
        let mut epoch_return = 0.0;
        let mut il_count = 0usize;
        let mut rl_count = 0usize;

        for batch in order.chunks(cfg.batch_episodes.max(1)) {
            let mut items: Vec<BatchItem> = batch
                .par_iter()
                .map(|&i| -> Result<BatchItem, PlannerError> {
                    let ep = &train_episodes[i];
                    let (env, geo) = table
                        .get(ep.env_seed)
                        .expect("training episode references a known env");
                    let mut item = BatchItem {
                        il: None,
                        rl: None,
                        rl_returns: Vec::new(),
                    };
                    if cfg.il_weight != 0.0 {
                        let mut frng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                            cfg.seed,
                            epoch as u64,
                            i as u64,
                            3,
                        ]));
                        let forcing = if frng.gen::<f64>() < cfg.student_forcing_prob {
                            Forcing::Student
                        } else {
                            Forcing::Teacher
                        };
                        let opts = RolloutOptions {
                            mode: cfg.mode,
                            sampling: Sampling::Sample,
                            forcing,
                            max_rounds: cfg.max_rounds,
                            match_eps: cfg.match_eps,
                            seed: mix_seed(&[cfg.seed, epoch as u64, i as u64, 1]),
                        };
                        item.il = Some(run_episode(env, geo, ep, &params, &opts)?);
                    }
                    if cfg.rl_weight != 0.0 {
                        let opts = RolloutOptions {
                            mode: cfg.mode,
                            sampling: Sampling::Sample,
                            forcing: Forcing::Free,
                            max_rounds: cfg.max_rounds,
                            match_eps: cfg.match_eps,
                            seed: mix_seed(&[cfg.seed, epoch as u64, i as u64, 2]),
                        };
                        let rollout = run_episode(env, geo, ep, &params, &opts)?;
                        let rewards = rl_rewards(&rollout, geo, ep, cfg.success_bonus);
                        item.rl_returns = returns(&rewards, cfg.gamma);
                        item.rl = Some(rollout);
                    }
                    Ok(item)
                })
                .collect::<Result<_, _>>()?;

            let all_returns: Vec<f64> = items
                .iter()
                .flat_map(|it| it.rl_returns.iter().copied())
                .collect();
            let baseline = if all_returns.is_empty() {
                0.0
            } else {
                all_returns.iter().sum::<f64>() / all_returns.len() as f64
            };

            let contribs: Vec<(Vec<f64>, f64, f64)> = items
                .par_iter_mut()
                .map(|item| {
                    let mut g = vec![0.0; params.n_coords()];
                    let mut il_val = 0.0;
                    let mut ret0 = 0.0;
                    if let Some(r) = item.il.as_mut() {
                        let (l, gil) = il_loss(r, &params);
                        il_val = l;
                        for (a, b) in g.iter_mut().zip(&gil) {
                            *a += cfg.il_weight * b;
                        }
                    }
                    if let Some(r) = item.rl.as_mut() {
                        let adv: Vec<f64> =
                            item.rl_returns.iter().map(|x| x - baseline).collect();
                        let grl = policy_gradient(r, &params, &adv);
                        for (a, b) in g.iter_mut().zip(&grl) {
                            *a += cfg.rl_weight * b;
                        }
                        ret0 = item.rl_returns.first().copied().unwrap_or(0.0);
                    }
                    (g, il_val, ret0)
                })
                .collect();

            let mut grad = vec![0.0; params.n_coords()];
            for (g, il_val, ret0) in &contribs {
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b / batch.len() as f64;
                }
                if cfg.il_weight != 0.0 {
                    epoch_il += il_val;
                    il_count += 1;
                }
                if cfg.rl_weight != 0.0 {
                    epoch_return += ret0;
                    rl_count += 1;
                }
            }
            if cfg.il_weight != 0.0 || cfg.rl_weight != 0.0 {
                optimize(&mut params, &grad, cfg.lr, &mut adam);
            }
        }

        let do_eval = cfg.eval_every > 0
            && ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.max_epochs);
        if do_eval && !eval_episodes.is_empty() {
            let (report, _) = evaluate(
                eval_table,
                eval_episodes,
                &params,
                cfg.mode,
                cfg.max_rounds,
                cfg.match_eps,
                DistanceMode::Geodesic,
            )?;
            let sr = report.means.sr;
            if sr > best_sr {
                best_sr = sr;
                best_params = params.clone();
            }
            curve.push(CurveRow {
                epoch,
                il_loss: if il_count > 0 {
                    epoch_il / il_count as f64
                } else {
                    0.0
                },
                mean_return: if rl_count > 0 {
                    epoch_return / rl_count as f64
                } else {
                    0.0
                },
                eval_sr: sr,
                eval_spl: report.means.spl,
                eval_ndtw: report.means.ndtw,
            });
        } else {
            curve.push(CurveRow {
                epoch,
                il_loss: if il_count > 0 {
                    epoch_il / il_count as f64
                } else {
                    0.0
                },
                mean_return: if rl_count > 0 {
                    epoch_return / rl_count as f64
                } else {
                    0.0
                },
                eval_sr: f64::NAN,
                eval_spl: f64::NAN,
                eval_ndtw: f64::NAN,
            });
        }
    }

    if best_sr == f64::NEG_INFINITY {
        best_params = params.clone();
        best_sr = 0.0;
    }
    Ok(TrainResult {
        params: best_params,
        final_params: params,
        curve,
        best_sr,
    })
}
