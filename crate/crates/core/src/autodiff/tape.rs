//! Reverse-mode autodiff on a Wengert tape of matrix operations.
//!
//! Each op appends a node holding its forward value; `backward` walks the tape
//! in reverse and accumulates adjoints. The op set is exactly what the losses
//! in this toolkit need — dense affine layers, ReLU, log-softmax, L2 row
//! normalization, NLL, and the pairwise distance/KL ops behind the triplet
//! distribution loss. Nodes refer to earlier nodes only, so parents always
//! have smaller indices than children; backward exploits that to split
//! borrows.
//!
//! Every op validates shapes up front and checks its output for non-finite
//! values, so a NaN is caught at the op that produced it rather than three
//! losses later.

use super::mat::{log_softmax_rows, Mat};
use super::param::{ParamId, ParamStore};
use crate::error::{DirlError, Result};

/// Handle to a tape node. Carries the shape so loss code can validate
/// without holding a tape borrow.
#[derive(Debug, Clone, Copy)]
pub struct Tensor {
    pub(crate) id: usize,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    /// C = A * B
    MatMul(usize, usize),
    /// Y = X + 1 b  (bias row broadcast over rows of X)
    AddRowBroadcast(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    /// The added constant itself is not stored: the gradient passes through
    /// unchanged.
    AddScalar(usize),
    Relu(usize),
    LogSoftmax(usize),
    L2NormalizeRows(usize),
    /// Mean over rows of -x[i][labels[i]]; the NLL of log-probabilities.
    NllMean(usize, Vec<usize>),
    /// D[i][j] = ||x_i - x_j||^2
    PairwiseSqDist(usize),
    /// KL[a][p] = sum_i exp(L[a][i]) * (L[a][i] - L[p][i]) for row-wise
    /// log-distributions L.
    PairwiseKlFromLog(usize),
    /// Elementwise product with a fixed (non-differentiated) matrix.
    ElemMulConst(usize, Mat),
    RowSum(usize),
    SumAll(usize),
}

struct Node {
    values: Mat,
    grad: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, t: Tensor) -> &Mat {
        &self.nodes[t.id].values
    }

    /// Value of a 1x1 node (a loss).
    pub fn scalar_value(&self, t: Tensor) -> f64 {
        debug_assert_eq!((t.rows, t.cols), (1, 1));
        self.nodes[t.id].values.scalar()
    }

    pub fn grad_of(&self, t: Tensor) -> &Mat {
        &self.nodes[t.id].grad
    }

    fn push(&mut self, op_name: &'static str, values: Mat, op: Op) -> Result<Tensor> {
        if !values.all_finite() {
            return Err(DirlError::NonFinite { op: op_name });
        }
        let (rows, cols) = (values.rows(), values.cols());
        let grad = Mat::zeros(rows, cols);
        self.nodes.push(Node { values, grad, op });
        Ok(Tensor {
            id: self.nodes.len() - 1,
            rows,
            cols,
        })
    }

    /// Enters fixed data (inputs, label-derived masks) onto the tape.
    pub fn constant(&mut self, values: Mat) -> Result<Tensor> {
        self.push("constant", values, Op::Constant)
    }

    pub fn scalar(&mut self, v: f64) -> Result<Tensor> {
        self.constant(Mat::from_vec(1, 1, vec![v])?)
    }

    /// Enters a parameter leaf; gradients reaching it are accumulated into the
    /// store by `backward` if (and only if) the parameter is trainable there.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Tensor> {
        self.push("param", store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        let values = self.nodes[a.id].values.matmul(&self.nodes[b.id].values)?;
        self.push("matmul", values, Op::MatMul(a.id, b.id))
    }

    /// x: B x O, bias: 1 x O.
    pub fn add_row_broadcast(&mut self, x: Tensor, bias: Tensor) -> Result<Tensor> {
        if bias.rows != 1 || bias.cols != x.cols {
            return Err(DirlError::ShapeMismatch {
                op: "add_row_broadcast",
                left_rows: x.rows,
                left_cols: x.cols,
                right_rows: bias.rows,
                right_cols: bias.cols,
            });
        }
        let b = &self.nodes[bias.id].values;
        let mut values = self.nodes[x.id].values.clone();
        for r in 0..values.rows() {
            for c in 0..values.cols() {
                values.add_at(r, c, b.get(0, c));
            }
        }
        self.push("add_row_broadcast", values, Op::AddRowBroadcast(x.id, bias.id))
    }

    /// Affine layer: x * w + bias, the only composite op on the tape.
    pub fn linear(&mut self, x: Tensor, w: Tensor, bias: Tensor) -> Result<Tensor> {
        let xw = self.matmul(x, w)?;
        self.add_row_broadcast(xw, bias)
    }

    pub fn add(&mut self, a: Tensor, b: Tensor) -> Result<Tensor> {
        if a.rows != b.rows || a.cols != b.cols {
            return Err(DirlError::ShapeMismatch {
                op: "add",
                left_rows: a.rows,
                left_cols: a.cols,
                right_rows: b.rows,
                right_cols: b.cols,
            });
        }
        let mut values = self.nodes[a.id].values.clone();
        values.add_assign(&self.nodes[b.id].values)?;
        self.push("add", values, Op::Add(a.id, b.id))
    }

    pub fn scale(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let values = self.nodes[a.id].values.map(|x| c * x);
        self.push("scale", values, Op::Scale(a.id, c))
    }

    pub fn add_scalar(&mut self, a: Tensor, c: f64) -> Result<Tensor> {
        let values = self.nodes[a.id].values.map(|x| x + c);
        self.push("add_scalar", values, Op::AddScalar(a.id))
    }

    /// Elementwise max(0, x). The subgradient at exactly zero is taken as
    /// zero, matching the forward branch.
    pub fn relu(&mut self, a: Tensor) -> Result<Tensor> {
        let values = self.nodes[a.id].values.map(|x| if x > 0.0 { x } else { 0.0 });
        self.push("relu", values, Op::Relu(a.id))
    }

    /// Row-wise log-softmax over at least two columns.
    pub fn log_softmax(&mut self, a: Tensor) -> Result<Tensor> {
        if a.cols < 2 {
            return Err(DirlError::Config(format!(
                "log_softmax needs at least 2 columns, got {}",
                a.cols
            )));
        }
        if a.rows == 0 {
            return Err(DirlError::Contract("log_softmax on an empty matrix".into()));
        }
        let values = log_softmax_rows(&self.nodes[a.id].values);
        self.push("log_softmax", values, Op::LogSoftmax(a.id))
    }

    /// Scales each row to unit L2 norm. Rows with norm below 1e-12 carry no
    /// directional information, so they are a hard error rather than a
    /// silently clamped division.
    pub fn l2_normalize_rows(&mut self, a: Tensor) -> Result<Tensor> {
        let x = &self.nodes[a.id].values;
        let mut values = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-12 {
                return Err(DirlError::DegenerateFeature { row: r, norm });
            }
            for c in 0..x.cols() {
                values.set(r, c, x.get(r, c) / norm);
            }
        }
        self.push("l2_normalize_rows", values, Op::L2NormalizeRows(a.id))
    }

    /// Mean negative log-likelihood of `labels` under row-wise
    /// log-probabilities (typically a `log_softmax` output).
    pub fn nll_mean(&mut self, logp: Tensor, labels: &[usize]) -> Result<Tensor> {
        if labels.len() != logp.rows {
            return Err(DirlError::Contract(format!(
                "nll_mean: {} labels for {} rows",
                labels.len(),
                logp.rows
            )));
        }
        if labels.is_empty() {
            return Err(DirlError::Contract("nll_mean on an empty batch".into()));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= logp.cols) {
            return Err(DirlError::Contract(format!(
                "nll_mean: label {} out of range for {} classes",
                bad, logp.cols
            )));
        }
        let x = &self.nodes[logp.id].values;
        let mut acc = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            acc -= x.get(i, y);
        }
        let values = Mat::from_vec(1, 1, vec![acc / labels.len() as f64])?;
        self.push("nll_mean", values, Op::NllMean(logp.id, labels.to_vec()))
    }

    /// All pairwise squared Euclidean distances between rows.
    pub fn pairwise_sq_dist(&mut self, a: Tensor) -> Result<Tensor> {
        if a.rows < 2 {
            return Err(DirlError::Contract(format!(
                "pairwise_sq_dist needs at least 2 rows, got {}",
                a.rows
            )));
        }
        let values = super::mat::pairwise_sq_dists(&self.nodes[a.id].values);
        self.push("pairwise_sq_dist", values, Op::PairwiseSqDist(a.id))
    }

    /// Pairwise KL divergences between row distributions given in log space:
    /// out[a][p] = KL(q_a || q_p) with q = exp(L) row-wise. Exponentials are
    /// materialized once (O(n^2)) so the O(n^3) accumulation is pure
    /// arithmetic.
    pub fn pairwise_kl_from_log(&mut self, logq: Tensor) -> Result<Tensor> {
        let x = &self.nodes[logq.id].values;
        let q = x.map(f64::exp);
        let n = x.rows();
        let mut values = Mat::zeros(n, n);
        for a in 0..n {
            for p in 0..n {
                if a == p {
                    continue;
                }
                let mut acc = 0.0;
                for i in 0..x.cols() {
                    acc += q.get(a, i) * (x.get(a, i) - x.get(p, i));
                }
                values.set(a, p, acc);
            }
        }
        self.push("pairwise_kl_from_log", values, Op::PairwiseKlFromLog(logq.id))
    }

    /// Elementwise product with a fixed weight matrix (not differentiated
    /// through); used for masking and for triplet pair weighting.
    pub fn elem_mul_const(&mut self, a: Tensor, w: Mat) -> Result<Tensor> {
        if w.rows() != a.rows || w.cols() != a.cols {
            return Err(DirlError::ShapeMismatch {
                op: "elem_mul_const",
                left_rows: a.rows,
                left_cols: a.cols,
                right_rows: w.rows(),
                right_cols: w.cols(),
            });
        }
        let x = &self.nodes[a.id].values;
        let mut values = Mat::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            for c in 0..x.cols() {
                values.set(r, c, x.get(r, c) * w.get(r, c));
            }
        }
        self.push("elem_mul_const", values, Op::ElemMulConst(a.id, w))
    }

    /// Sums each row into a column vector (M x N -> M x 1).
    pub fn row_sum(&mut self, a: Tensor) -> Result<Tensor> {
        let x = &self.nodes[a.id].values;
        let mut values = Mat::zeros(x.rows(), 1);
        for r in 0..x.rows() {
            values.set(r, 0, x.row(r).iter().sum());
        }
        self.push("row_sum", values, Op::RowSum(a.id))
    }

    /// Sums every entry into a 1x1 value.
    pub fn sum_all(&mut self, a: Tensor) -> Result<Tensor> {
        let values = Mat::from_vec(1, 1, vec![self.nodes[a.id].values.sum()])?;
        self.push("sum_all", values, Op::SumAll(a.id))
    }

    /// Reverse pass from a scalar loss node. Node adjoints on this tape are
    /// reset first, so repeated backward calls do not compound; gradients of
    /// *trainable* parameters accumulate into the store (callers zero them
    /// between optimizer steps, which `adam_step` does implicitly).
    pub fn backward(&mut self, loss: Tensor, store: &mut ParamStore) -> Result<()> {
        if loss.rows != 1 || loss.cols != 1 {
            return Err(DirlError::Contract(format!(
                "backward needs a scalar loss, got {}x{}",
                loss.rows, loss.cols
            )));
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss.id].grad.set(0, 0, 1.0);

        for id in (0..=loss.id).rev() {
            // Parents strictly precede children on the tape, so splitting at
            // `id` gives mutable access to all parents alongside this node.
            let (head, tail) = self.nodes.split_at_mut(id);
            let node = &tail[0];
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    if store.is_trainable(*pid) {
                        store.accumulate_grad(*pid, &node.grad)?;
                    }
                }
                Op::MatMul(a, b) => {
                    let da = node.grad.matmul_nt(&head[*b].values)?;
                    let db = head[*a].values.matmul_tn(&node.grad)?;
                    head[*a].grad.add_assign(&da)?;
                    head[*b].grad.add_assign(&db)?;
                }
                Op::AddRowBroadcast(x, b) => {
                    head[*x].grad.add_assign(&node.grad)?;
                    head[*b].grad.add_assign(&node.grad.col_sums())?;
                }
                Op::Add(a, b) => {
                    head[*a].grad.add_assign(&node.grad)?;
                    head[*b].grad.add_assign(&node.grad)?;
                }
                Op::Scale(a, c) => {
                    head[*a].grad.add_assign_scaled(&node.grad, *c)?;
                }
                Op::AddScalar(a) => {
                    head[*a].grad.add_assign(&node.grad)?;
                }
                Op::Relu(a) => {
                    let x = &head[*a].values;
                    for i in 0..x.rows() {
                        for j in 0..x.cols() {
                            if x.get(i, j) > 0.0 {
                                head[*a].grad.add_at(i, j, node.grad.get(i, j));
                            }
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    // dX = G - softmax(X) * rowsum(G)
                    let y = &node.values;
                    let g = &node.grad;
                    for i in 0..y.rows() {
                        let gsum: f64 = g.row(i).iter().sum();
                        for j in 0..y.cols() {
                            let d = g.get(i, j) - y.get(i, j).exp() * gsum;
                            head[*a].grad.add_at(i, j, d);
                        }
                    }
                }
                Op::L2NormalizeRows(a) => {
                    // y = x / n with n = ||x||; dX = (G - y (G . y)) / n
                    let x = &head[*a].values;
                    let y = &node.values;
                    let g = &node.grad;
                    for i in 0..x.rows() {
                        let n = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let gy: f64 = g.row(i).iter().zip(y.row(i)).map(|(gv, yv)| gv * yv).sum();
                        for j in 0..x.cols() {
                            let d = (g.get(i, j) - y.get(i, j) * gy) / n;
                            head[*a].grad.add_at(i, j, d);
                        }
                    }
                }
                Op::NllMean(a, labels) => {
                    let gout = node.grad.scalar();
                    let scale = gout / labels.len() as f64;
                    for (i, &y) in labels.iter().enumerate() {
                        head[*a].grad.add_at(i, y, -scale);
                    }
                }
                Op::PairwiseSqDist(a) => {
                    // d z_i += sum_j 2 (G[i][j] + G[j][i]) (z_i - z_j)
                    let z = &head[*a].values;
                    let g = &node.grad;
                    let n = z.rows();
                    for i in 0..n {
                        for j in 0..n {
                            if i == j {
                                continue;
                            }
                            let c = 2.0 * (g.get(i, j) + g.get(j, i));
                            if c == 0.0 {
                                continue;
                            }
                            for f in 0..z.cols() {
                                let d = c * (z.get(i, f) - z.get(j, f));
                                head[*a].grad.add_at(i, f, d);
                            }
                        }
                    }
                }
                Op::PairwiseKlFromLog(a) => {
                    // KL[a][p] = sum_i q_ai (L_ai - L_pi), q = exp(L):
                    //   dL[a][i] += G[a][p] q_ai (L_ai - L_pi + 1)
                    //   dL[p][i] -= G[a][p] q_ai
                    let l = &head[*a].values;
                    let q = l.map(f64::exp);
                    let g = &node.grad;
                    let n = l.rows();
                    for ai in 0..n {
                        for p in 0..n {
                            if ai == p {
                                continue;
                            }
                            let gv = g.get(ai, p);
                            if gv == 0.0 {
                                continue;
                            }
                            for i in 0..l.cols() {
                                let qv = q.get(ai, i);
                                head[*a].grad.add_at(ai, i, gv * qv * (l.get(ai, i) - l.get(p, i) + 1.0));
                                head[*a].grad.add_at(p, i, -gv * qv);
                            }
                        }
                    }
                }
                Op::ElemMulConst(a, w) => {
                    let g = &node.grad;
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            head[*a].grad.add_at(i, j, g.get(i, j) * w.get(i, j));
                        }
                    }
                }
                Op::RowSum(a) => {
                    let g = &node.grad;
                    let target = &mut head[*a].grad;
                    for i in 0..target.rows() {
                        let gv = g.get(i, 0);
                        for j in 0..target.cols() {
                            target.add_at(i, j, gv);
                        }
                    }
                }
                Op::SumAll(a) => {
                    let gv = node.grad.scalar();
                    let target = &mut head[*a].grad;
                    for i in 0..target.rows() {
                        for j in 0..target.cols() {
                            target.add_at(i, j, gv);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
