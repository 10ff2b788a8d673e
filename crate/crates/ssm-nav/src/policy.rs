//! Trainable navigation policy: parameters, grounding attention, memory
//! enrichment via message passing, and the three scoring heads.
//!
//! All computation runs on a [`Tape`]; parameters are registered as leaves
//! per rollout so one backward pass yields exact gradients for the whole
//! unrolled episode.

use crate::instructions::EncoderRef;
use crate::memory::SceneMemory;
use crate::tape::{GruRef, Gradients, Tape, ValueId};
use crate::types::{NodeId, SubNode};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch in {op}: value dim {got}, expected {expected}")]
    DimMismatch {
        op: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("empty candidate set for {0}")]
    EmptyCandidates(&'static str),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

/// Model dimensions plus the two ablation toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDims {
    /// Instruction embedding / encoder width.
    pub d_x: usize,
    /// Visual feature width (must match the environment's `d_f`).
    pub d_f: usize,
    /// Orientation tiling factor; the orientation width is `4 * tiling`.
    pub tiling: usize,
    /// Navigation state width.
    pub d_h: usize,
    /// Message-passing iterations. 0 disables iterative reasoning.
    pub s_steps: usize,
    /// Token vocabulary size (actions + landmarks).
    pub n_tokens: usize,
    /// When false the raw state is used in place of the perception/action
    /// aware states everywhere (grounding ablation).
    pub grounding: bool,
}

impl ModelDims {
    pub fn d_r(&self) -> usize {
        4 * self.tiling
    }

    /// Desk-scale defaults.
    pub fn desk(n_tokens: usize) -> Self {
        Self {
            d_x: 64,
            d_f: 32,
            tiling: 8,
            d_h: 64,
            s_steps: 2,
            n_tokens,
            grounding: true,
        }
    }

    /// Dimensions mirroring the full-scale configuration. Provided for
    /// completeness; nothing in this repo trains at this size.
    pub fn full_scale(n_tokens: usize) -> Self {
        Self {
            d_x: 512,
            d_f: 2048,
            tiling: 32,
            d_h: 512,
            s_steps: 2,
            n_tokens,
            grounding: true,
        }
    }
}

/// Row-major dense matrix. Vectors are single-column matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

fn spec_gru(list: &mut Vec<(String, usize, usize)>, prefix: &str, input: usize, hidden: usize) {
    for gate in ["z", "r", "n"] {
        list.push((format!("{prefix}.w{gate}"), hidden, input));
        list.push((format!("{prefix}.u{gate}"), hidden, hidden));
        list.push((format!("{prefix}.b{gate}"), hidden, 1));
    }
}

/// Ordered (name, rows, cols) layout of every trainable tensor.
fn param_spec(d: &ModelDims) -> Vec<(String, usize, usize)> {
    let (d_x, d_f, d_r, d_h) = (d.d_x, d.d_f, d.d_r(), d.d_h);
    let mut s = Vec::new();
    s.push(("enc.embed".into(), d.n_tokens, d_x));
    spec_gru(&mut s, "enc.gru", d_x, d_x);
    s.push(("state.att_x".into(), d_x, d_h));
    s.push(("state.att_obs".into(), d_f + d_r, d_h));
    spec_gru(&mut s, "state.gru", d_x + d_f + d_r, d_h);
    s.push(("ground.wx_p".into(), d_x, d_h));
    s.push(("ground.wx_a".into(), d_x, d_h));
    s.push(("fuse.wh_p".into(), d_h, d_h + d_x));
    s.push(("fuse.wh_a".into(), d_h, d_h + d_x));
    s.push(("assemble.wf".into(), d_f, d_h));
    s.push(("assemble.wr".into(), d_r, d_h));
    spec_gru(&mut s, "prop.uf", d_f, d_f);
    spec_gru(&mut s, "prop.ur", d_r, d_r);
    s.push(("score.global.wq_f".into(), 2 * d_f, d_h));
    s.push(("score.global.wq_r".into(), 2 * d_r, d_h));
    s.push(("score.ww".into(), 2, 2 * d_h));
    s.push(("score.frontier.wc_f".into(), d_f, d_h));
    s.push(("score.frontier.wc_r".into(), d_r, d_h));
    s.push(("score.sub.wq_f".into(), d_f, d_h));
    s.push(("score.sub.wq_r".into(), d_r, d_h));
    s
}

const CHECKPOINT_FORMAT: &str = "ssmnav-ckpt/v1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    dims: ModelDims,
    tensors: Vec<(String, Matrix)>,
}

/// Every trainable tensor, in the fixed registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub dims: ModelDims,
    entries: Vec<(String, Matrix)>,
}

impl ParamSet {
    /// Uniform init in [-1/sqrt(cols), 1/sqrt(cols)]; biases start at zero.
    pub fn seeded(dims: ModelDims, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let entries = param_spec(&dims)
            .into_iter()
            .map(|(name, rows, cols)| {
                let data = if cols == 1 {
                    vec![0.0; rows]
                } else {
                    let a = 1.0 / (cols as f64).sqrt();
                    (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect()
                };
                (name, Matrix { rows, cols, data })
            })
            .collect();
        Self { dims, entries }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let entries = param_spec(&dims)
            .into_iter()
            .map(|(name, rows, cols)| {
                (
                    name,
                    Matrix {
                        rows,
                        cols,
                        data: vec![0.0; rows * cols],
                    },
                )
            })
            .collect();
        Self { dims, entries }
    }

    pub fn entries(&self) -> &[(String, Matrix)] {
        &self.entries
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    /// Total number of scalar coordinates.
    pub fn n_coords(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn coord(&self, i: usize) -> f64 {
        let (e, off) = self.locate(i);
        self.entries[e].1.data[off]
    }

    pub fn set_coord(&mut self, i: usize, v: f64) {
        let (e, off) = self.locate(i);
        self.entries[e].1.data[off] = v;
    }

    fn locate(&self, mut i: usize) -> (usize, usize) {
        for (e, (_, m)) in self.entries.iter().enumerate() {
            if i < m.data.len() {
                return (e, i);
            }
            i -= m.data.len();
        }
        panic!("coordinate index out of range");
    }

    /// Flat coordinate range [start, end) of entry `e`.
    pub fn entry_range(&self, e: usize) -> (usize, usize) {
        let start: usize = self.entries[..e].iter().map(|(_, m)| m.data.len()).sum();
        (start, start + self.entries[e].1.data.len())
    }

    /// Register all tensors as tape leaves and bundle the typed references.
    pub fn register(&self, tape: &mut Tape) -> PolicyRefs {
        let ids: Vec<ValueId> = self
            .entries
            .iter()
            .map(|(_, m)| tape.leaf(m.data.clone()))
            .collect();
        PolicyRefs::bind(&self.dims, &ids)
    }

    /// Gradients of all registered leaves flattened into coordinate order.
    pub fn flatten_grads(&self, refs: &PolicyRefs, grads: &Gradients) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.n_coords());
        for (i, (_, m)) in self.entries.iter().enumerate() {
            let g = grads.get(refs.leaf_ids[i]);
            if g.is_empty() {
                flat.extend(std::iter::repeat(0.0).take(m.data.len()));
            } else {
                flat.extend_from_slice(g);
            }
        }
        flat
    }

    pub fn apply_delta(&mut self, delta: &[f64]) {
        assert_eq!(delta.len(), self.n_coords());
        let mut i = 0;
        for (_, m) in &mut self.entries {
            for v in &mut m.data {
                *v += delta[i];
                i += 1;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: self.dims,
            tensors: self.entries.clone(),
        };
        let file = std::fs::File::create(path)
            .map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        serde_json::to_writer(BufWriter::new(file), &ckpt)
            .map_err(|e| PolicyError::Checkpoint(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let file =
            std::fs::File::open(path).map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))
            .map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(PolicyError::Checkpoint(format!(
                "unsupported checkpoint format '{}'",
                ckpt.format
            )));
        }
        let expected = param_spec(&ckpt.dims);
        if ckpt.tensors.len() != expected.len() {
            return Err(PolicyError::Checkpoint("tensor list mismatch".into()));
        }
        for ((name, m), (ename, rows, cols)) in ckpt.tensors.iter().zip(&expected) {
            if name != ename || m.rows != *rows || m.cols != *cols || m.data.len() != rows * cols
            {
                return Err(PolicyError::Checkpoint(format!(
                    "tensor '{name}' does not match spec entry '{ename}' ({rows}x{cols})"
                )));
            }
        }
        Ok(Self {
            dims: ckpt.dims,
            entries: ckpt.tensors,
        })
    }
}

/// Tape leaf ids for one registered [`ParamSet`].
#[derive(Debug, Clone)]
pub struct PolicyRefs {
    pub dims: ModelDims,
    leaf_ids: Vec<ValueId>,
    pub encoder: EncoderRef,
    pub att_x: ValueId,
    pub att_obs: ValueId,
    pub state_gru: GruRef,
    pub wx_p: ValueId,
    pub wx_a: ValueId,
    pub wh_p: ValueId,
    pub wh_a: ValueId,
    pub assemble_wf: ValueId,
    pub assemble_wr: ValueId,
    pub upd_f: GruRef,
    pub upd_r: GruRef,
    pub global_wq_f: ValueId,
    pub global_wq_r: ValueId,
    pub ww: ValueId,
    pub frontier_wc_f: ValueId,
    pub frontier_wc_r: ValueId,
    pub sub_wq_f: ValueId,
    pub sub_wq_r: ValueId,
}

impl PolicyRefs {
    fn bind(dims: &ModelDims, ids: &[ValueId]) -> Self {
        let mut it = ids.iter().copied();
        let mut next = || it.next().expect("registration order fixed");
        let gru = |next: &mut dyn FnMut() -> ValueId, input: usize, hidden: usize| GruRef {
            wz: next(),
            uz: next(),
            bz: next(),
            wr: next(),
            ur: next(),
            br: next(),
            wn: next(),
            un: next(),
            bn: next(),
            input_dim: input,
            hidden_dim: hidden,
        };
        let (d_x, d_f, d_r, d_h) = (dims.d_x, dims.d_f, dims.d_r(), dims.d_h);
        let embed = next();
        let enc_gru = gru(&mut next, d_x, d_x);
        let att_x = next();
        let att_obs = next();
        let state_gru = gru(&mut next, d_x + d_f + d_r, d_h);
        let wx_p = next();
        let wx_a = next();
        let wh_p = next();
        let wh_a = next();
        let assemble_wf = next();
        let assemble_wr = next();
        let upd_f = gru(&mut next, d_f, d_f);
        let upd_r = gru(&mut next, d_r, d_r);
        let global_wq_f = next();
        let global_wq_r = next();
        let ww = next();
        let frontier_wc_f = next();
        let frontier_wc_r = next();
        let sub_wq_f = next();
        let sub_wq_r = next();
        Self {
            dims: *dims,
            leaf_ids: ids.to_vec(),
            encoder: EncoderRef {
                embed,
                n_tokens: dims.n_tokens,
                d_x,
                gru: enc_gru,
            },
            att_x,
            att_obs,
            state_gru,
            wx_p,
            wx_a,
            wh_p,
            wh_a,
            assemble_wf,
            assemble_wr,
            upd_f,
            upd_r,
            global_wq_f,
            global_wq_r,
            ww,
            frontier_wc_f,
            frontier_wc_r,
            sub_wq_f,
            sub_wq_r,
        }
    }
}

/// Softmax attention weights and pooled value.
pub struct Attention {
    pub weights: ValueId,
    pub pooled: ValueId,
}

/// Bilinear attention: weights = softmax_i(v_i' W key), pooled = sum w_i v_i.
pub fn att(
    tape: &mut Tape,
    values: &[ValueId],
    key: ValueId,
    w: ValueId,
    rows: usize,
    cols: usize,
) -> Result<Attention, PolicyError> {
    if values.is_empty() {
        return Err(PolicyError::EmptyCandidates("attention"));
    }
    if tape.value(key).len() != cols {
        return Err(PolicyError::DimMismatch {
            op: "attention key",
            got: tape.value(key).len(),
            expected: cols,
        });
    }
    for &v in values {
        if tape.value(v).len() != rows {
            return Err(PolicyError::DimMismatch {
                op: "attention value",
                got: tape.value(v).len(),
                expected: rows,
            });
        }
    }
    let wk = tape.matvec(w, rows, cols, key);
    let scores: Vec<ValueId> = values.iter().map(|&v| tape.dot(v, wk)).collect();
    let stacked = tape.concat(&scores);
    let weights = tape.softmax(stacked);
    let pooled = tape.weighted_sum(weights, values);
    Ok(Attention { weights, pooled })
}

/// Navigation state for one decision round.
#[derive(Debug, Clone, Copy)]
pub struct NavState {
    pub h: ValueId,
    pub h_p: ValueId,
    pub h_a: ValueId,
}

/// Grounded instruction context from the two attention heads.
pub struct Grounding {
    pub x_p: ValueId,
    pub x_a: ValueId,
    pub alpha_p: ValueId,
    pub alpha_a: ValueId,
}

pub fn ground_text(
    tape: &mut Tape,
    refs: &PolicyRefs,
    x_rows: &[ValueId],
    h: ValueId,
) -> Result<Grounding, PolicyError> {
    let (d_x, d_h) = (refs.dims.d_x, refs.dims.d_h);
    let p = att(tape, x_rows, h, refs.wx_p, d_x, d_h)?;
    let a = att(tape, x_rows, h, refs.wx_a, d_x, d_h)?;
    Ok(Grounding {
        x_p: p.pooled,
        x_a: a.pooled,
        alpha_p: p.weights,
        alpha_a: a.weights,
    })
}

pub fn fuse_states(
    tape: &mut Tape,
    refs: &PolicyRefs,
    h: ValueId,
    x_p: ValueId,
    x_a: ValueId,
) -> (ValueId, ValueId) {
    let (d_x, d_h) = (refs.dims.d_x, refs.dims.d_h);
    let hp_in = tape.concat(&[h, x_p]);
    let h_p = tape.matvec(refs.wh_p, d_h, d_h + d_x, hp_in);
    let ha_in = tape.concat(&[h, x_a]);
    let h_a = tape.matvec(refs.wh_a, d_h, d_h + d_x, ha_in);
    (h_p, h_a)
}

/// Ground the instruction and fuse the perception/action aware states. With
/// grounding disabled the raw state is used for both.
pub fn derive_states(
    tape: &mut Tape,
    refs: &PolicyRefs,
    x_rows: &[ValueId],
    h: ValueId,
) -> Result<NavState, PolicyError> {
    if !refs.dims.grounding {
        return Ok(NavState { h, h_p: h, h_a: h });
    }
    let g = ground_text(tape, refs, x_rows, h)?;
    let (h_p, h_a) = fuse_states(tape, refs, h, g.x_p, g.x_a);
    Ok(NavState { h, h_p, h_a })
}

/// One state update (the recurrent core): attends the instruction and the
/// observation's navigable features with the current state, then steps the
/// cell over their concatenation.
pub fn update_state(
    tape: &mut Tape,
    refs: &PolicyRefs,
    h: ValueId,
    x_rows: &[ValueId],
    obs_features: &[ValueId],
) -> Result<ValueId, PolicyError> {
    let d = &refs.dims;
    let x_ctx = att(tape, x_rows, h, refs.att_x, d.d_x, d.d_h)?.pooled;
    let o_ctx = if obs_features.is_empty() {
        tape.zeros(d.d_f + d.d_r())
    } else {
        att(tape, obs_features, h, refs.att_obs, d.d_f + d.d_r(), d.d_h)?.pooled
    };
    let input = tape.concat(&[x_ctx, o_ctx]);
    Ok(refs.state_gru.step(tape, input, h))
}

/// Per-node assembled and propagated features, levels 0..=S.
pub struct EnrichedMemory {
    pub f_levels: Vec<BTreeMap<NodeId, ValueId>>,
    pub r_levels: Vec<BTreeMap<NodeId, ValueId>>,
}

impl EnrichedMemory {
    pub fn f_top(&self, v: NodeId) -> ValueId {
        *self.f_levels.last().unwrap().get(&v).unwrap()
    }

    pub fn r_top(&self, v: NodeId) -> ValueId {
        *self.r_levels.last().unwrap().get(&v).unwrap()
    }
}

/// Level-0 enrichment: per node, attention-pool its panorama views with the
/// perception state and its outgoing edge orientations with the action
/// state. Nodes without outgoing edges receive a zero orientation pool.
pub fn assemble(
    tape: &mut Tape,
    refs: &PolicyRefs,
    mem: &SceneMemory,
    state: &NavState,
) -> Result<EnrichedMemory, PolicyError> {
    let d = &refs.dims;
    let mut f0 = BTreeMap::new();
    let mut r0 = BTreeMap::new();
    for node in mem.nodes() {
        let views: Vec<ValueId> = node
            .panorama_views
            .iter()
            .map(|(_, vis)| tape.leaf(vis.clone()))
            .collect();
        let f = if views.is_empty() {
            tape.zeros(d.d_f)
        } else {
            att(tape, &views, state.h_p, refs.assemble_wf, d.d_f, d.d_h)?.pooled
        };
        f0.insert(node.id, f);

        let edge_feats: Vec<ValueId> = mem
            .out_edges(node.id)
            .map(|e| tape.leaf(e.orientation.tiled()))
            .collect();
        let r = if edge_feats.is_empty() {
            tape.zeros(d.d_r())
        } else {
            att(tape, &edge_feats, state.h_a, refs.assemble_wr, d.d_r(), d.d_h)?.pooled
        };
        r0.insert(node.id, r);
    }
    Ok(EnrichedMemory {
        f_levels: vec![f0],
        r_levels: vec![r0],
    })
}

/// Message passing: each iteration sums out-neighbor features and feeds them
/// with the node's own feature through the update cell.
pub fn propagate(
    tape: &mut Tape,
    refs: &PolicyRefs,
    mem: &SceneMemory,
    mut enriched: EnrichedMemory,
    s_steps: usize,
) -> EnrichedMemory {
    let d = &refs.dims;
    for _ in 0..s_steps {
        let f_cur = enriched.f_levels.last().unwrap();
        let r_cur = enriched.r_levels.last().unwrap();
        let mut f_next = BTreeMap::new();
        let mut r_next = BTreeMap::new();
        for node in mem.nodes() {
            let neighbors: Vec<NodeId> = mem.out_edges(node.id).map(|e| e.to).collect();
            let fm = if neighbors.is_empty() {
                tape.zeros(d.d_f)
            } else {
                let parts: Vec<ValueId> = neighbors.iter().map(|u| f_cur[u]).collect();
                tape.sum_vecs(&parts)
            };
            let rm = if neighbors.is_empty() {
                tape.zeros(d.d_r())
            } else {
                let parts: Vec<ValueId> = neighbors.iter().map(|u| r_cur[u]).collect();
                tape.sum_vecs(&parts)
            };
            f_next.insert(node.id, refs.upd_f.step(tape, fm, f_cur[&node.id]));
            r_next.insert(node.id, refs.upd_r.step(tape, rm, r_cur[&node.id]));
        }
        enriched.f_levels.push(f_next);
        enriched.r_levels.push(r_next);
    }
    enriched
}

/// A scorable action: a live sub-node or a synthetic stop at a node.
#[derive(Debug, Clone)]
pub enum Candidate {
    Move(SubNode),
    Stop(NodeId),
}

impl Candidate {
    pub fn is_stop(&self) -> bool {
        matches!(self, Candidate::Stop(_))
    }
}

/// A scored candidate set: probabilities and log-probabilities share the
/// candidate order.
pub struct Scored {
    pub candidates: Vec<Candidate>,
    pub probs: ValueId,
    pub log_probs: ValueId,
}

/// Synthetic stop features for a node: mean panorama visual, zero
/// orientation.
fn stop_features(tape: &mut Tape, mem: &SceneMemory, node: NodeId, d_f: usize) -> ValueId {
    let n = mem.node(node).expect("stop node exists");
    if n.panorama_views.is_empty() {
        return tape.zeros(d_f);
    }
    let mut mean = vec![0.0; d_f];
    for (_, vis) in &n.panorama_views {
        for (m, v) in mean.iter_mut().zip(vis) {
            *m += v;
        }
    }
    let k = n.panorama_views.len() as f64;
    mean.iter_mut().for_each(|m| *m /= k);
    tape.leaf(mean)
}

fn combination_weight(tape: &mut Tape, refs: &PolicyRefs, state: &NavState) -> ValueId {
    let d_h = refs.dims.d_h;
    let hh = tape.concat(&[state.h_p, state.h_a]);
    tape.matvec(refs.ww, 2, 2 * d_h, hh)
}

fn finish_scores(tape: &mut Tape, combined: &[ValueId], candidates: Vec<Candidate>) -> Scored {
    let stacked = tape.concat(combined);
    let probs = tape.softmax(stacked);
    let log_probs = tape.log_softmax(stacked);
    Scored {
        candidates,
        probs,
        log_probs,
    }
}

/// Global one-step scoring over every live sub-node plus a stop candidate at
/// `stop_node`. Scores pair each candidate's raw features with its parent's
/// propagated features.
pub fn score_global(
    tape: &mut Tape,
    refs: &PolicyRefs,
    mem: &SceneMemory,
    enriched: &EnrichedMemory,
    state: &NavState,
    stop_node: NodeId,
) -> Result<Scored, PolicyError> {
    let d = &refs.dims;
    let (d_f, d_r, d_h) = (d.d_f, d.d_r(), d.d_h);
    let tf = tape.matvec(refs.global_wq_f, 2 * d_f, d_h, state.h_p);
    let tr = tape.matvec(refs.global_wq_r, 2 * d_r, d_h, state.h_a);
    let wpq = combination_weight(tape, refs, state);

    let mut candidates = Vec::new();
    let mut combined = Vec::new();
    let score = |tape: &mut Tape, vis: ValueId, ori: ValueId, parent: NodeId| {
        let fcat = tape.concat(&[vis, enriched.f_top(parent)]);
        let rcat = tape.concat(&[ori, enriched.r_top(parent)]);
        let qf = tape.dot(fcat, tf);
        let qr = tape.dot(rcat, tr);
        let q = tape.concat(&[qf, qr]);
        tape.dot(q, wpq)
    };
    for sub in mem.global_action_space() {
        let vis = tape.leaf(sub.visual.clone());
        let ori = tape.leaf(sub.orientation.tiled());
        combined.push(score(tape, vis, ori, sub.parent));
        candidates.push(Candidate::Move(sub.clone()));
    }
    let vis = stop_features(tape, mem, stop_node, d_f);
    let ori = tape.zeros(d_r);
    combined.push(score(tape, vis, ori, stop_node));
    candidates.push(Candidate::Stop(stop_node));
    Ok(finish_scores(tape, &combined, candidates))
}

/// Frontier utilities: per frontier node, bilinear scores of its propagated
/// features against the perception/action states.
pub fn score_frontiers(
    tape: &mut Tape,
    refs: &PolicyRefs,
    enriched: &EnrichedMemory,
    state: &NavState,
    frontier_ids: &[NodeId],
) -> Result<(Vec<NodeId>, ValueId, ValueId), PolicyError> {
    if frontier_ids.is_empty() {
        return Err(PolicyError::EmptyCandidates("frontier selection"));
    }
    let d = &refs.dims;
    let tf = tape.matvec(refs.frontier_wc_f, d.d_f, d.d_h, state.h_p);
    let tr = tape.matvec(refs.frontier_wc_r, d.d_r(), d.d_h, state.h_a);
    let wpc = combination_weight(tape, refs, state);
    let mut combined = Vec::new();
    for &w in frontier_ids {
        let cf = tape.dot(enriched.f_top(w), tf);
        let cr = tape.dot(enriched.r_top(w), tr);
        let c = tape.concat(&[cf, cr]);
        combined.push(tape.dot(c, wpc));
    }
    let stacked = tape.concat(&combined);
    let probs = tape.softmax(stacked);
    let log_probs = tape.log_softmax(stacked);
    Ok((frontier_ids.to_vec(), probs, log_probs))
}

/// Stage-two scoring at a node: its live sub-nodes (raw features only) plus
/// the synthetic stop candidate, combined exactly like the global head.
pub fn score_subnodes(
    tape: &mut Tape,
    refs: &PolicyRefs,
    mem: &SceneMemory,
    node: NodeId,
    state: &NavState,
) -> Result<Scored, PolicyError> {
    let d = &refs.dims;
    let tf = tape.matvec(refs.sub_wq_f, d.d_f, d.d_h, state.h_p);
    let tr = tape.matvec(refs.sub_wq_r, d.d_r(), d.d_h, state.h_a);
    let wpq = combination_weight(tape, refs, state);

    let mut candidates = Vec::new();
    let mut combined = Vec::new();
    let score = |tape: &mut Tape, vis: ValueId, ori: ValueId| {
        let qf = tape.dot(vis, tf);
        let qr = tape.dot(ori, tr);
        let q = tape.concat(&[qf, qr]);
        tape.dot(q, wpq)
    };
    for sub in mem.node(node).map_err(|_| PolicyError::EmptyCandidates("sub-node scoring"))?.live_subnodes() {
        let vis = tape.leaf(sub.visual.clone());
        let ori = tape.leaf(sub.orientation.tiled());
        combined.push(score(tape, vis, ori));
        candidates.push(Candidate::Move(sub.clone()));
    }
    let vis = stop_features(tape, mem, node, d.d_f);
    let ori = tape.zeros(d.d_r());
    combined.push(score(tape, vis, ori));
    candidates.push(Candidate::Stop(node));
    Ok(finish_scores(tape, &combined, candidates))
}

/// Observation navigable features as `[visual, orientation]` leaves, for the
/// state-update attention pool.
pub fn observation_features(tape: &mut Tape, obs: &crate::env::Observation) -> Vec<ValueId> {
    obs.navigable
        .iter()
        .map(|e| {
            let mut v = e.visual.clone();
            v.extend(e.orientation.tiled());
            tape.leaf(v)
        })
        .collect()
}
