//! The agent loop: memory construction, grounding, reasoning, decision
//! making, and shortest-path traversal with on-the-move state updates.
//!
//! Three decision modes are supported: two-stage frontier selection (select
//! a frontier, travel there, then pick one of its sub-nodes or stop), global
//! one-step selection over every live sub-node, and the local baseline
//! restricted to the current node's sub-nodes.

use crate::env::{Episode, EnvError, EnvironmentGraph, Geodesics};
use crate::instructions::{encode, InstructionError};
use crate::memory::{MemoryError, SceneMemory};
use crate::policy::{
    assemble, derive_states, observation_features, propagate, score_frontiers, score_global,
    score_subnodes, update_state, Candidate, ParamSet, PolicyError, Scored,
};
use crate::tape::{Tape, ValueId};
use crate::trainer::{teacher_action, teacher_at_node, TeacherChoice};
use crate::types::{euclid, NodeId, SubNode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Instruction(#[from] InstructionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionMode {
    Frontier,
    GlobalOnestep,
    Local,
}

impl std::fmt::Display for DecisionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            DecisionMode::Frontier => "frontier",
            DecisionMode::GlobalOnestep => "global-onestep",
            DecisionMode::Local => "local",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for DecisionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "frontier" => Ok(Self::Frontier),
            "global-onestep" => Ok(Self::GlobalOnestep),
            "local" => Ok(Self::Local),
            other => Err(format!("unknown decision mode '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Greedy,
    Sample,
}

/// How decisions are executed during a rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Forcing {
    /// The policy acts on its own.
    Free,
    /// Teacher actions are executed; distributions are still recorded.
    Teacher,
    /// The policy samples its own actions; teacher labels are recorded.
    Student,
}

#[derive(Debug, Clone)]
pub struct RolloutOptions {
    pub mode: DecisionMode,
    pub sampling: Sampling,
    pub forcing: Forcing,
    pub max_rounds: usize,
    /// Position matching radius for memory extension, meters.
    pub match_eps: f64,
    pub seed: u64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            mode: DecisionMode::Frontier,
            sampling: Sampling::Greedy,
            forcing: Forcing::Free,
            max_rounds: 20,
            match_eps: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stopped,
    /// No candidate set was available; the agent stopped in place.
    StoppedForced,
    MaxRounds,
}

/// One scored stage inside a decision round.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub probs: Vec<f64>,
    pub chosen: usize,
    pub teacher: Option<usize>,
    pub reward: f64,
}

/// One decision round of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mem_step: u32,
    pub at: NodeId,
    pub state_norm: f64,
    pub frontier: Option<NodeId>,
    pub stop: bool,
    pub forced_stop: bool,
    pub target: Option<[f64; 3]>,
    pub traversed: Vec<NodeId>,
    pub dist_before: f64,
    pub dist_after: f64,
    pub stage1: Option<StageRecord>,
    pub stage2: Option<StageRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: u64,
    pub env_seed: u64,
    pub mode: DecisionMode,
    pub records: Vec<RoundRecord>,
    /// Every position occupied, in order.
    pub path: Vec<NodeId>,
    pub final_node: NodeId,
    pub stop_reason: StopReason,
    pub total_length: f64,
}

/// Tape handles for one scored stage: enough to rebuild IL and policy
/// gradient losses after the rollout.
#[derive(Debug, Clone, Copy)]
pub struct StageTrace {
    pub logp_executed: ValueId,
    pub logp_label: Option<ValueId>,
    pub executed: usize,
    pub label: Option<usize>,
    pub reward: f64,
}

/// A finished episode: the trajectory, the tape it was recorded on, and the
/// per-stage traces for learning.
pub struct Rollout {
    pub trajectory: Trajectory,
    pub tape: Tape,
    pub stages: Vec<StageTrace>,
    pub memory: SceneMemory,
    pub refs: crate::policy::PolicyRefs,
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(v: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in v.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    v.len() - 1
}

fn select_index(
    probs: &[f64],
    sampling: Sampling,
    forcing: Forcing,
    label: Option<usize>,
    rng: &mut ChaCha8Rng,
) -> usize {
    match forcing {
        Forcing::Teacher => label.unwrap_or_else(|| argmax(probs)),
        Forcing::Student => sample_categorical(probs, rng),
        Forcing::Free => match sampling {
            Sampling::Greedy => argmax(probs),
            Sampling::Sample => sample_categorical(probs, rng),
        },
    }
}

fn candidate_index(candidates: &[Candidate], choice: &TeacherChoice) -> Option<usize> {
    match choice {
        TeacherChoice::Stop => candidates.iter().position(|c| c.is_stop()),
        TeacherChoice::Sub(sub) => candidates.iter().position(|c| match c {
            Candidate::Move(s) => {
                s.parent == sub.parent
                    && s.view == sub.view
                    && euclid(s.target_coords, sub.target_coords) <= 1e-9
            }
            Candidate::Stop(_) => false,
        }),
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct EpisodeRun<'a> {
    env: &'a EnvironmentGraph,
    geo: &'a Geodesics,
    episode: &'a Episode,
    opts: &'a RolloutOptions,
    tape: Tape,
    mem: SceneMemory,
    h: ValueId,
    x_rows: Vec<ValueId>,
    path: Vec<NodeId>,
    total_length: f64,
    stages: Vec<StageTrace>,
}

impl<'a> EpisodeRun<'a> {
    /// Visit `to`: step counters, memory extension, state update.
    fn arrive(&mut self, refs: &crate::policy::PolicyRefs, to: NodeId) -> Result<(), PlannerError> {
        let obs = self.env.observe(to)?;
        self.mem
            .extend(self.env.position(to)?, &obs, self.opts.match_eps)?;
        let feats = observation_features(&mut self.tape, &obs);
        self.h = update_state(&mut self.tape, refs, self.h, &self.x_rows, &feats)?;
        self.path.push(to);
        Ok(())
    }

    /// Move along the memory's shortest path to `w`, updating state per node.
    fn traverse(
        &mut self,
        refs: &crate::policy::PolicyRefs,
        w: NodeId,
    ) -> Result<Vec<NodeId>, PlannerError> {
        if w == self.mem.current() {
            return Ok(Vec::new());
        }
        let (tpath, tlen) = self.mem.shortest_path(self.mem.current(), w)?;
        for &n in &tpath[1..] {
            self.arrive(refs, n)?;
        }
        self.total_length += tlen;
        Ok(tpath[1..].to_vec())
    }

    fn push_stage(&mut self, scored_logp: ValueId, executed: usize, label: Option<usize>) {
        let logp_executed = self.tape.index(scored_logp, executed);
        let logp_label = label.map(|l| self.tape.index(scored_logp, l));
        self.stages.push(StageTrace {
            logp_executed,
            logp_label,
            executed,
            label,
            reward: 0.0,
        });
    }

    fn set_last_reward(&mut self, r: f64) {
        if let Some(s) = self.stages.last_mut() {
            s.reward = r;
        }
    }
}

fn stage_record(tape: &Tape, scored_probs: ValueId, trace: &StageTrace) -> StageRecord {
    StageRecord {
        probs: tape.value(scored_probs).to_vec(),
        chosen: trace.executed,
        teacher: trace.label,
        reward: trace.reward,
    }
}

/// Run one full episode under the given options.
pub fn run_episode(
    env: &EnvironmentGraph,
    geo: &Geodesics,
    episode: &Episode,
    params: &ParamSet,
    opts: &RolloutOptions,
) -> Result<Rollout, PlannerError> {
    let mut tape = Tape::new();
    let refs = params.register(&mut tape);
    let x_rows = encode(&mut tape, &refs.encoder, &episode.instruction.tokens)?;
    let obs0 = env.observe(episode.start)?;
    let mem = SceneMemory::init(&obs0)?;
    let feats = observation_features(&mut tape, &obs0);
    let h0 = tape.zeros(refs.dims.d_h);

    let mut run = EpisodeRun {
        env,
        geo,
        episode,
        opts,
        tape,
        mem,
        h: h0,
        x_rows,
        path: vec![episode.start],
        total_length: 0.0,
        stages: Vec::new(),
    };
    run.h = update_state(&mut run.tape, &refs, run.h, &run.x_rows, &feats)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxRounds;

    'rounds: for round in 0..opts.max_rounds {
        let at = run.mem.current();
        let dist_before = geo.dist(at, episode.goal);
        let state = derive_states(&mut run.tape, &refs, &run.x_rows, run.h)?;
        let level0 = assemble(&mut run.tape, &refs, &run.mem, &state)?;
        let enriched = propagate(&mut run.tape, &refs, &run.mem, level0, refs.dims.s_steps);
        let state_norm = norm(run.tape.value(run.h));
        let teacher = (opts.forcing != Forcing::Free).then(|| {
            teacher_action(&run.mem, env, geo, episode.goal, episode.success_radius)
        });

        let mut record = RoundRecord {
            round,
            mem_step: run.mem.step(),
            at,
            state_norm,
            frontier: None,
            stop: false,
            forced_stop: false,
            target: None,
            traversed: Vec::new(),
            dist_before,
            dist_after: dist_before,
            stage1: None,
            stage2: None,
        };

        match opts.mode {
            DecisionMode::Frontier => {
                let frontier_ids = run.mem.frontiers();
                if frontier_ids.is_empty() {
                    record.stop = true;
                    record.forced_stop = true;
                    records.push(record);
                    stop_reason = StopReason::StoppedForced;
                    break 'rounds;
                }
                // A teacher stop at a fully consumed node we already occupy
                // cannot be expressed through frontier selection.
                if let Some(t) = &teacher {
                    if opts.forcing == Forcing::Teacher
                        && matches!(t.choice, TeacherChoice::Stop)
                        && !frontier_ids.contains(&t.frontier)
                        && t.frontier == at
                    {
                        record.stop = true;
                        record.forced_stop = true;
                        records.push(record);
                        stop_reason = StopReason::StoppedForced;
                        break 'rounds;
                    }
                }
                let (f_ids, probs1, logp1) =
                    score_frontiers(&mut run.tape, &refs, &enriched, &state, &frontier_ids)?;
                let label1 = teacher
                    .as_ref()
                    .and_then(|t| f_ids.iter().position(|w| *w == t.frontier));
                let exec1 = select_index(
                    run.tape.value(probs1),
                    opts.sampling,
                    opts.forcing,
                    label1,
                    &mut rng,
                );
                run.push_stage(logp1, exec1, label1);
                let w = f_ids[exec1];
                record.frontier = Some(w);

                record.traversed = run.traverse(&refs, w)?;
                let state2 = if record.traversed.is_empty() {
                    state
                } else {
                    derive_states(&mut run.tape, &refs, &run.x_rows, run.h)?
                };
                let reward1 = dist_before - geo.dist(w, episode.goal);
                run.set_last_reward(reward1);
                record.stage1 = Some(stage_record(
                    &run.tape,
                    probs1,
                    run.stages.last().unwrap(),
                ));

                let scored2 = score_subnodes(&mut run.tape, &refs, &run.mem, w, &state2)?;
                let label2 = teacher.is_some().then(|| {
                    let choice =
                        teacher_at_node(&run.mem, env, geo, w, episode.goal, episode.success_radius);
                    candidate_index(&scored2.candidates, &choice)
                        .expect("restricted teacher choice is always a candidate")
                });
                let exec2 = select_index(
                    run.tape.value(scored2.probs),
                    opts.sampling,
                    opts.forcing,
                    label2,
                    &mut rng,
                );
                run.push_stage(scored2.log_probs, exec2, label2);
                let done = execute_candidate(&mut run, &refs, &scored2, exec2, w, &mut record)?;
                record.stage2 = Some(stage_record(
                    &run.tape,
                    scored2.probs,
                    run.stages.last().unwrap(),
                ));
                record.dist_after = geo.dist(run.mem.current(), episode.goal);
                records.push(record);
                if done {
                    stop_reason = StopReason::Stopped;
                    break 'rounds;
                }
            }
            DecisionMode::GlobalOnestep => {
                let scored =
                    score_global(&mut run.tape, &refs, &run.mem, &enriched, &state, at)?;
                let label = teacher.as_ref().and_then(|t| match &t.choice {
                    TeacherChoice::Stop if t.frontier == at => {
                        Some(scored.candidates.len() - 1)
                    }
                    TeacherChoice::Stop => None,
                    sub => candidate_index(&scored.candidates, sub),
                });
                let exec = select_index(
                    run.tape.value(scored.probs),
                    opts.sampling,
                    opts.forcing,
                    label,
                    &mut rng,
                );
                run.push_stage(scored.log_probs, exec, label);

                let parent = match &scored.candidates[exec] {
                    Candidate::Move(sub) => sub.parent,
                    Candidate::Stop(n) => *n,
                };
                record.frontier = Some(parent);
                record.traversed = run.traverse(&refs, parent)?;
                let done = execute_candidate(&mut run, &refs, &scored, exec, parent, &mut record)?;
                record.dist_after = geo.dist(run.mem.current(), episode.goal);
                run.set_last_reward(dist_before - record.dist_after);
                record.stage2 = Some(stage_record(
                    &run.tape,
                    scored.probs,
                    run.stages.last().unwrap(),
                ));
                records.push(record);
                if done {
                    stop_reason = StopReason::Stopped;
                    break 'rounds;
                }
            }
            DecisionMode::Local => {
                let scored = score_subnodes(&mut run.tape, &refs, &run.mem, at, &state)?;
                let label = teacher.is_some().then(|| {
                    let choice = teacher_at_node(
                        &run.mem,
                        env,
                        geo,
                        at,
                        episode.goal,
                        episode.success_radius,
                    );
                    candidate_index(&scored.candidates, &choice)
                        .expect("restricted teacher choice is always a candidate")
                });
                let exec = select_index(
                    run.tape.value(scored.probs),
                    opts.sampling,
                    opts.forcing,
                    label,
                    &mut rng,
                );
                run.push_stage(scored.log_probs, exec, label);
                record.frontier = Some(at);
                let done = execute_candidate(&mut run, &refs, &scored, exec, at, &mut record)?;
                record.dist_after = geo.dist(run.mem.current(), episode.goal);
                run.set_last_reward(dist_before - record.dist_after);
                record.stage2 = Some(stage_record(
                    &run.tape,
                    scored.probs,
                    run.stages.last().unwrap(),
                ));
                records.push(record);
                if done {
                    stop_reason = StopReason::Stopped;
                    break 'rounds;
                }
            }
        }
    }

    let final_node = run.mem.current();
    let trajectory = Trajectory {
        episode_id: episode.id,
        env_seed: episode.env_seed,
        mode: opts.mode,
        records,
        path: run.path.clone(),
        final_node,
        stop_reason,
        total_length: run.total_length,
    };
    Ok(Rollout {
        trajectory,
        tape: run.tape,
        stages: run.stages,
        memory: run.mem,
        refs,
    })
}

/// Execute a chosen candidate from node `from`. Returns true when the
/// episode ends (stop selected).
fn execute_candidate(
    run: &mut EpisodeRun,
    refs: &crate::policy::PolicyRefs,
    scored: &Scored,
    exec: usize,
    from: NodeId,
    record: &mut RoundRecord,
) -> Result<bool, PlannerError> {
    match &scored.candidates[exec] {
        Candidate::Stop(_) => {
            record.stop = true;
            Ok(true)
        }
        Candidate::Move(sub) => {
            let sub: SubNode = sub.clone();
            record.target = Some(sub.target_coords);
            let before = run.geo.dist(from, run.episode.goal);
            let u = run.env.step(from, &sub)?;
            let from_pos = run.env.positions[&from];
            run.arrive(refs, u)?;
            run.total_length += euclid(from_pos, run.env.positions[&u]);
            let after = run.geo.dist(u, run.episode.goal);
            // For two-stage rounds, this stage's motion is just the final hop.
            if run.trajectory_mode_is_frontier() {
                run.set_last_reward(before - after);
            }
            Ok(false)
        }
    }
}

impl<'a> EpisodeRun<'a> {
    fn trajectory_mode_is_frontier(&self) -> bool {
        self.opts.mode == DecisionMode::Frontier
    }
}
