//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! Every trainable computation in this crate (instruction encoding, state
//! updates, grounding attention, message passing, scoring heads, losses) is
//! recorded on a [`Tape`] during the forward pass. A single [`Tape::backward`]
//! call then yields exact parameter gradients, which the finite-difference
//! harness in `trainer::grad_check` verifies independently.
//!
//! Nodes hold `Vec<f64>` values; matrices are flattened row-major leaves and
//! only participate through [`Tape::matvec`] / [`Tape::row`].

/// Index of a node on the tape.
pub type ValueId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    /// Elementwise a + b.
    Add(ValueId, ValueId),
    /// Elementwise a * b.
    Mul(ValueId, ValueId),
    /// c * a.
    Scale(ValueId, f64),
    /// 1 - a, elementwise.
    OneMinus(ValueId),
    /// W (rows x cols, row-major) times x.
    MatVec {
        w: ValueId,
        x: ValueId,
        rows: usize,
        cols: usize,
    },
    /// Row `r` of a rows x cols matrix leaf.
    Row {
        m: ValueId,
        cols: usize,
        r: usize,
    },
    /// Inner product, producing a length-1 node.
    Dot(ValueId, ValueId),
    /// Concatenation of the inputs.
    Concat(Vec<ValueId>),
    /// Elementwise sum of same-length inputs.
    SumVec(Vec<ValueId>),
    /// sum_i weights[i] * values[i]; weights has len == values.len().
    WeightedSum {
        weights: ValueId,
        values: Vec<ValueId>,
    },
    Sigmoid(ValueId),
    Tanh(ValueId),
    Softmax(ValueId),
    LogSoftmax(ValueId),
    /// Element `i` of the input as a length-1 node.
    Index(ValueId, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Gradient buffers produced by [`Tape::backward`], indexed by [`ValueId`].
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. node `id`. Empty slice if the node was
    /// never reached during backpropagation.
    pub fn get(&self, id: ValueId) -> &[f64] {
        &self.grads[id]
    }
}

/// A growing record of the forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> ValueId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Value of a node.
    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: ValueId) -> f64 {
        debug_assert_eq!(self.nodes[id].value.len(), 1);
        self.nodes[id].value[0]
    }

    pub fn leaf(&mut self, value: Vec<f64>) -> ValueId {
        self.push(value, Op::Leaf)
    }

    pub fn leaf_scalar(&mut self, value: f64) -> ValueId {
        self.leaf(vec![value])
    }

    pub fn zeros(&mut self, len: usize) -> ValueId {
        self.leaf(vec![0.0; len])
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.len(), vb.len(), "add: length mismatch");
        let value = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.len(), vb.len(), "mul: length mismatch");
        let value = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> ValueId {
        let value = self.nodes[a].value.iter().map(|x| x * c).collect();
        self.push(value, Op::Scale(a, c))
    }

    pub fn one_minus(&mut self, a: ValueId) -> ValueId {
        let value = self.nodes[a].value.iter().map(|x| 1.0 - x).collect();
        self.push(value, Op::OneMinus(a))
    }

    /// `w` is a rows x cols matrix leaf (row-major flat); `x` has len cols.
    pub fn matvec(&mut self, w: ValueId, rows: usize, cols: usize, x: ValueId) -> ValueId {
        let wm = &self.nodes[w].value;
        let xv = &self.nodes[x].value;
        assert_eq!(wm.len(), rows * cols, "matvec: bad matrix size");
        assert_eq!(xv.len(), cols, "matvec: bad vector size");
        let mut value = vec![0.0; rows];
        for r in 0..rows {
            let row = &wm[r * cols..(r + 1) * cols];
            value[r] = row.iter().zip(xv).map(|(a, b)| a * b).sum();
        }
        self.push(value, Op::MatVec { w, x, rows, cols })
    }

    /// Row `r` of matrix node `m` (rows x cols).
    pub fn row(&mut self, m: ValueId, rows: usize, cols: usize, r: usize) -> ValueId {
        let mv = &self.nodes[m].value;
        assert_eq!(mv.len(), rows * cols, "row: bad matrix size");
        assert!(r < rows, "row: index out of range");
        let value = mv[r * cols..(r + 1) * cols].to_vec();
        self.push(value, Op::Row { m, cols, r })
    }

    pub fn dot(&mut self, a: ValueId, b: ValueId) -> ValueId {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        assert_eq!(va.len(), vb.len(), "dot: length mismatch");
        let value = va.iter().zip(vb).map(|(x, y)| x * y).sum();
        self.push(vec![value], Op::Dot(a, b))
    }

    pub fn concat(&mut self, parts: &[ValueId]) -> ValueId {
        let mut value = Vec::new();
        for &p in parts {
            value.extend_from_slice(&self.nodes[p].value);
        }
        self.push(value, Op::Concat(parts.to_vec()))
    }

    pub fn sum_vecs(&mut self, parts: &[ValueId]) -> ValueId {
        assert!(!parts.is_empty(), "sum_vecs: empty input");
        let len = self.nodes[parts[0]].value.len();
        let mut value = vec![0.0; len];
        for &p in parts {
            let v = &self.nodes[p].value;
            assert_eq!(v.len(), len, "sum_vecs: length mismatch");
            for (acc, x) in value.iter_mut().zip(v) {
                *acc += x;
            }
        }
        self.push(value, Op::SumVec(parts.to_vec()))
    }

    /// sum_i weights[i] * values[i].
    pub fn weighted_sum(&mut self, weights: ValueId, values: &[ValueId]) -> ValueId {
        let wv = &self.nodes[weights].value;
        assert_eq!(wv.len(), values.len(), "weighted_sum: weight count");
        assert!(!values.is_empty(), "weighted_sum: empty input");
        let len = self.nodes[values[0]].value.len();
        let mut value = vec![0.0; len];
        for (i, &vid) in values.iter().enumerate() {
            let w = self.nodes[weights].value[i];
            let v = &self.nodes[vid].value;
            assert_eq!(v.len(), len, "weighted_sum: length mismatch");
            for (acc, x) in value.iter_mut().zip(v) {
                *acc += w * x;
            }
        }
        self.push(
            value,
            Op::WeightedSum {
                weights,
                values: values.to_vec(),
            },
        )
    }

    pub fn sigmoid(&mut self, a: ValueId) -> ValueId {
        let value = self.nodes[a]
            .value
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: ValueId) -> ValueId {
        let value = self.nodes[a].value.iter().map(|x| x.tanh()).collect();
        self.push(value, Op::Tanh(a))
    }

    /// Numerically stable softmax of a vector node.
    pub fn softmax(&mut self, a: ValueId) -> ValueId {
        let value = stable_softmax(&self.nodes[a].value);
        self.push(value, Op::Softmax(a))
    }

    /// Numerically stable log-softmax of a vector node.
    pub fn log_softmax(&mut self, a: ValueId) -> ValueId {
        let v = &self.nodes[a].value;
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = v.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
        let value = v.iter().map(|x| x - lse).collect();
        self.push(value, Op::LogSoftmax(a))
    }

    pub fn index(&mut self, a: ValueId, i: usize) -> ValueId {
        let value = vec![self.nodes[a].value[i]];
        self.push(value, Op::Index(a, i))
    }

    /// Backpropagate from a length-1 node, seeding its gradient with 1.
    pub fn backward(&self, root: ValueId) -> Gradients {
        assert_eq!(self.nodes[root].value.len(), 1, "backward: root not scalar");
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|_| Vec::new()).collect();
        grads[root] = vec![1.0];

        for id in (0..=root).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = g;
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*a], &g);
                    accumulate(&mut grads[*b], &g);
                }
                Op::Mul(a, b) => {
                    let gb: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*a].value)
                        .map(|(gi, av)| gi * av)
                        .collect();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&self.nodes[*b].value)
                        .map(|(gi, bv)| gi * bv)
                        .collect();
                    accumulate(&mut grads[*a], &ga);
                    accumulate(&mut grads[*b], &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|gi| gi * c).collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::OneMinus(a) => {
                    let ga: Vec<f64> = g.iter().map(|gi| -gi).collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::MatVec { w, x, rows, cols } => {
                    let xv = &self.nodes[*x].value;
                    let wm = &self.nodes[*w].value;
                    let mut gw = vec![0.0; rows * cols];
                    for r in 0..*rows {
                        for c in 0..*cols {
                            gw[r * cols + c] = g[r] * xv[c];
                        }
                    }
                    let mut gx = vec![0.0; *cols];
                    for r in 0..*rows {
                        let row = &wm[r * cols..(r + 1) * cols];
                        for c in 0..*cols {
                            gx[c] += g[r] * row[c];
                        }
                    }
                    accumulate(&mut grads[*w], &gw);
                    accumulate(&mut grads[*x], &gx);
                }
                Op::Row { m, cols, r } => {
                    let total = self.nodes[*m].value.len();
                    let mut gm = vec![0.0; total];
                    gm[r * cols..(r + 1) * cols].copy_from_slice(&g);
                    accumulate(&mut grads[*m], &gm);
                }
                Op::Dot(a, b) => {
                    let ga: Vec<f64> = self.nodes[*b].value.iter().map(|x| g[0] * x).collect();
                    let gb: Vec<f64> = self.nodes[*a].value.iter().map(|x| g[0] * x).collect();
                    accumulate(&mut grads[*a], &ga);
                    accumulate(&mut grads[*b], &gb);
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        accumulate(&mut grads[p], &g[off..off + len]);
                        off += len;
                    }
                }
                Op::SumVec(parts) => {
                    for &p in parts {
                        accumulate(&mut grads[p], &g);
                    }
                }
                Op::WeightedSum { weights, values } => {
                    let mut gw = vec![0.0; values.len()];
                    for (i, &vid) in values.iter().enumerate() {
                        gw[i] = self.nodes[vid]
                            .value
                            .iter()
                            .zip(&g)
                            .map(|(x, gi)| x * gi)
                            .sum();
                        let w = self.nodes[*weights].value[i];
                        let gv: Vec<f64> = g.iter().map(|gi| gi * w).collect();
                        accumulate(&mut grads[vid], &gv);
                    }
                    accumulate(&mut grads[*weights], &gw);
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, y)| gi * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::Tanh(a) => {
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&node.value)
                        .map(|(gi, y)| gi * (1.0 - y * y))
                        .collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::Softmax(a) => {
                    // dx = y .* (g - <g, y>)
                    let y = &node.value;
                    let gy: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| yi * (gi - gy))
                        .collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::LogSoftmax(a) => {
                    // dx = g - softmax(x) * sum(g)
                    let p = stable_softmax(&self.nodes[*a].value);
                    let gsum: f64 = g.iter().sum();
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(&p)
                        .map(|(gi, pi)| gi - pi * gsum)
                        .collect();
                    accumulate(&mut grads[*a], &ga);
                }
                Op::Index(a, i) => {
                    let len = self.nodes[*a].value.len();
                    let mut ga = vec![0.0; len];
                    ga[*i] = g[0];
                    accumulate(&mut grads[*a], &ga);
                }
            }
        }
        Gradients { grads }
    }
}

fn stable_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn accumulate(acc: &mut Vec<f64>, g: &[f64]) {
    if acc.is_empty() {
        acc.extend_from_slice(g);
    } else {
        debug_assert_eq!(acc.len(), g.len());
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x;
        }
    }
}

/// Tape ids for one GRU cell's parameters.
///
/// Update rule, with `[x]` the input and `h` the previous state:
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh(Wn x + Un (r .* h) + bn)
/// h' = (1 - z) .* n + z .* h
/// ```
/// With all-zero parameters the zero state is a fixed point: z = 0.5, n = 0,
/// so h' = 0.5 * h, and h = 0 maps to 0.
#[derive(Debug, Clone, Copy)]
pub struct GruRef {
    pub wz: ValueId,
    pub uz: ValueId,
    pub bz: ValueId,
    pub wr: ValueId,
    pub ur: ValueId,
    pub br: ValueId,
    pub wn: ValueId,
    pub un: ValueId,
    pub bn: ValueId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruRef {
    /// One GRU step on the tape.
    pub fn step(&self, tape: &mut Tape, x: ValueId, h: ValueId) -> ValueId {
        let (di, dh) = (self.input_dim, self.hidden_dim);
        let wzx = tape.matvec(self.wz, dh, di, x);
        let uzh = tape.matvec(self.uz, dh, dh, h);
        let z_pre = tape.sum_vecs(&[wzx, uzh, self.bz]);
        let z = tape.sigmoid(z_pre);

        let wrx = tape.matvec(self.wr, dh, di, x);
        let urh = tape.matvec(self.ur, dh, dh, h);
        let r_pre = tape.sum_vecs(&[wrx, urh, self.br]);
        let r = tape.sigmoid(r_pre);

        let rh = tape.mul(r, h);
        let wnx = tape.matvec(self.wn, dh, di, x);
        let unrh = tape.matvec(self.un, dh, dh, rh);
        let n_pre = tape.sum_vecs(&[wnx, unrh, self.bn]);
        let n = tape.tanh(n_pre);

        let one_minus_z = tape.one_minus(z);
        let a = tape.mul(one_minus_z, n);
        let b = tape.mul(z, h);
        tape.add(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn finite_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], eps: f64) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            xp[i] = x[i] + eps;
            let up = f(&xp);
            xp[i] = x[i] - eps;
            let down = f(&xp);
            xp[i] = x[i];
            g[i] = (up - down) / (2.0 * eps);
        }
        g
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
            assert!(rel < tol, "mismatch: {x} vs {y} (rel {rel})");
        }
    }

    #[test]
    fn matvec_dot_grads_match_finite_differences() {
        let w0 = vec![0.3, -0.7, 0.2, 0.9, -0.1, 0.5];
        let x0 = vec![0.4, -1.2, 0.8];
        let run = |w: &[f64], x: &[f64]| {
            let mut tape = Tape::new();
            let wid = tape.leaf(w.to_vec());
            let xid = tape.leaf(x.to_vec());
            let y = tape.matvec(wid, 2, 3, xid);
            let loss = tape.dot(y, y);
            (tape, wid, xid, loss)
        };
        let (tape, wid, xid, loss) = run(&w0, &x0);
        let grads = tape.backward(loss);

        let num_w = finite_diff(|w| run(w, &x0).0.scalar(run(w, &x0).3), &w0, 1e-6);
        let num_x = finite_diff(|x| run(&w0, x).0.scalar(run(&w0, x).3), &x0, 1e-6);
        assert_close(grads.get(wid), &num_w, 1e-6);
        assert_close(grads.get(xid), &num_x, 1e-6);
    }

    #[test]
    fn softmax_and_log_softmax_grads() {
        let x0 = vec![0.2, -0.4, 1.3, 0.0];
        let run = |x: &[f64], log: bool| {
            let mut tape = Tape::new();
            let xid = tape.leaf(x.to_vec());
            let s = if log {
                tape.log_softmax(xid)
            } else {
                tape.softmax(xid)
            };
            let probe = tape.leaf(vec![0.7, -0.3, 0.5, 0.2]);
            let loss = tape.dot(s, probe);
            (tape, xid, loss)
        };
        for log in [false, true] {
            let (tape, xid, loss) = run(&x0, log);
            let grads = tape.backward(loss);
            let num = finite_diff(
                |x| {
                    let (t, _, l) = run(x, log);
                    t.scalar(l)
                },
                &x0,
                1e-6,
            );
            assert_close(grads.get(xid), &num, 1e-5);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0, -0.5]);
        let b = tape.leaf(vec![1.0 + 100.0, 2.0 + 100.0, -0.5 + 100.0]);
        let sa = tape.softmax(a);
        let sb = tape.softmax(b);
        for (x, y) in tape.value(sa).iter().zip(tape.value(sb)) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_step_grads_match_finite_differences() {
        let dh = 3;
        let di = 2;
        let sizes = [dh * di, dh * dh, dh, dh * di, dh * dh, dh, dh * di, dh * dh, dh];
        let mut flat = Vec::new();
        let mut v = 0.13_f64;
        let total: usize = sizes.iter().sum();
        for _ in 0..total {
            v = (v * 1.7 + 0.31).sin();
            flat.push(v * 0.8);
        }
        let x0 = vec![0.5, -0.9];
        let h0 = vec![0.1, 0.2, -0.3];

        let run = |flat: &[f64]| {
            let mut tape = Tape::new();
            let mut ids = Vec::new();
            let mut off = 0;
            for s in sizes {
                ids.push(tape.leaf(flat[off..off + s].to_vec()));
                off += s;
            }
            let gru = GruRef {
                wz: ids[0],
                uz: ids[1],
                bz: ids[2],
                wr: ids[3],
                ur: ids[4],
                br: ids[5],
                wn: ids[6],
                un: ids[7],
                bn: ids[8],
                input_dim: di,
                hidden_dim: dh,
            };
            let x = tape.leaf(x0.clone());
            let h = tape.leaf(h0.clone());
            let h1 = gru.step(&mut tape, x, h);
            let probe = tape.leaf(vec![0.3, -0.8, 0.6]);
            let loss = tape.dot(h1, probe);
            (tape, ids, loss)
        };

        let (tape, ids, loss) = run(&flat);
        let grads = tape.backward(loss);
        let mut analytic = Vec::new();
        for (&id, &s) in ids.iter().zip(&sizes) {
            let g = grads.get(id);
            if g.is_empty() {
                analytic.extend(std::iter::repeat(0.0).take(s));
            } else {
                analytic.extend_from_slice(g);
            }
        }
        let numeric = finite_diff(
            |f| {
                let (t, _, l) = run(f);
                t.scalar(l)
            },
            &flat,
            1e-6,
        );
        assert_close(&analytic, &numeric, 1e-5);
    }

    #[test]
    fn gru_zero_params_keep_zero_state_fixed() {
        let dh = 4;
        let di = 3;
        let mut tape = Tape::new();
        let z = |t: &mut Tape, n: usize| t.zeros(n);
        let gru = GruRef {
            wz: z(&mut tape, dh * di),
            uz: z(&mut tape, dh * dh),
            bz: z(&mut tape, dh),
            wr: z(&mut tape, dh * di),
            ur: z(&mut tape, dh * dh),
            br: z(&mut tape, dh),
            wn: z(&mut tape, dh * di),
            un: z(&mut tape, dh * dh),
            bn: z(&mut tape, dh),
            input_dim: di,
            hidden_dim: dh,
        };
        let x = tape.leaf(vec![3.0, -2.0, 0.7]);
        let mut h = tape.zeros(dh);
        for _ in 0..5 {
            h = gru.step(&mut tape, x, h);
        }
        assert!(tape.value(h).iter().all(|v| *v == 0.0));
    }
}
