use std::cell::RefCell;
use std::collections::HashMap;

use super::{ParamSet, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    ScaleRows(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    SliceRows(Var, usize),
    GatherRow(Vec<Var>, usize),
    Transpose(Var),
    Sum(Var),
    Pick(Var, usize),
    Mask(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// A single-use differentiation graph.
///
/// Every operation appends a node; [`Tape::backward`] walks the nodes in
/// reverse. Tapes are cheap to create and are dropped after one
/// forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<String, Var>>,
}

impl std::fmt::Debug for Tape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> TensorError {
    TensorError::Shape {
        op,
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, rows: usize, cols: usize, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            rows,
            cols,
            data,
            op,
            requires_grad,
        });
        Var(nodes.len() - 1)
    }

    /// Records a tensor as a leaf; it is differentiated iff `requires_grad` is set.
    pub fn leaf(&self, t: &Tensor) -> Result<Var> {
        let (r, c) = t.as_matrix_dims()?;
        Ok(self.push(r, c, t.values().to_vec(), Op::Leaf, t.requires_grad))
    }

    pub fn constant(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        if rows == 0 || cols == 0 {
            return Err(TensorError::Empty { op: "constant" });
        }
        if rows * cols != data.len() {
            return Err(TensorError::Invalid {
                op: "constant",
                msg: format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, false))
    }

    pub fn variable(&self, rows: usize, cols: usize, data: Vec<f64>) -> Result<Var> {
        let v = self.constant(rows, cols, data)?;
        self.nodes.borrow_mut()[v.0].requires_grad = true;
        Ok(v)
    }

    /// Binds a named parameter. Repeated calls return the same node.
    pub fn param(&self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.borrow().get(name) {
            return Ok(v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let (r, c) = t.as_matrix_dims()?;
        let v = self.push(r, c, t.values().to_vec(), Op::Leaf, true);
        self.params.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    pub fn bound_params(&self) -> Vec<(String, Var)> {
        let mut out: Vec<_> = self
            .params
            .borrow()
            .iter()
            .map(|(k, v)| (k.clone(), *v))
            .collect();
        out.sort();
        out
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].rows, nodes[v.0].cols)
    }

    pub fn data(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].data.clone()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes.borrow()[v.0].data[0]
    }

    pub fn value(&self, v: Var) -> Tensor {
        let nodes = self.nodes.borrow();
        let n = &nodes[v.0];
        Tensor::matrix(n.rows, n.cols, n.data.clone()).expect("tape nodes are well formed")
    }

    fn unary(&self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            (n.rows, n.cols, n.data.iter().map(|&v| f(v)).collect(), n.requires_grad)
        };
        self.push(r, c, data, op, rg)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (m, k, n, data, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if na.cols != nb.rows {
                return Err(shape_err("matmul", (na.rows, na.cols), (nb.rows, nb.cols)));
            }
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            let mut out = vec![0.0; m * n];
            gemm((m, k, n), (&na.data, k, 1), (&nb.data, n, 1), &mut out, false);
            (m, k, n, out, na.requires_grad || nb.requires_grad)
        };
        let _ = k;
        Ok(self.push(m, n, data, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            if (na.rows, na.cols) != (nb.rows, nb.cols) {
                return Err(shape_err(name, (na.rows, na.cols), (nb.rows, nb.cols)));
            }
            let data = na.data.iter().zip(&nb.data).map(|(&x, &y)| f(x, y)).collect();
            (na.rows, na.cols, data, na.requires_grad || nb.requires_grad)
        };
        Ok(self.push(r, c, data, op, rg))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let nb = self.affine(b, -1.0, 0.0);
        self.add(a, nb)
    }

    /// Adds a `1 x n` row to every row of an `m x n` matrix.
    pub fn add_row(&self, a: Var, row: Var) -> Result<Var> {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nr) = (&nodes[a.0], &nodes[row.0]);
            if nr.rows != 1 || nr.cols != na.cols {
                return Err(shape_err("add_row", (na.rows, na.cols), (nr.rows, nr.cols)));
            }
            let mut data = na.data.clone();
            for chunk in data.chunks_mut(na.cols) {
                for (d, &b) in chunk.iter_mut().zip(&nr.data) {
                    *d += b;
                }
            }
            (na.rows, na.cols, data, na.requires_grad || nr.requires_grad)
        };
        Ok(self.push(r, c, data, Op::AddRow(a, row), rg))
    }

    /// `alpha * x + beta`, elementwise.
    pub fn affine(&self, x: Var, alpha: f64, beta: f64) -> Var {
        self.unary(x, |v| alpha * v + beta, Op::Affine(x, alpha))
    }

    pub fn scale(&self, x: Var, alpha: f64) -> Var {
        self.affine(x, alpha, 0.0)
    }

    /// Multiplies row `i` of an `m x n` matrix by `s[i]`, where `s` is `m x 1`.
    pub fn scale_rows(&self, x: Var, s: Var) -> Result<Var> {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let (nx, ns) = (&nodes[x.0], &nodes[s.0]);
            if ns.cols != 1 || ns.rows != nx.rows {
                return Err(shape_err("scale_rows", (nx.rows, nx.cols), (ns.rows, ns.cols)));
            }
            let mut data = nx.data.clone();
            for (i, chunk) in data.chunks_mut(nx.cols).enumerate() {
                for d in chunk {
                    *d *= ns.data[i];
                }
            }
            (nx.rows, nx.cols, data, nx.requires_grad || ns.requires_grad)
        };
        Ok(self.push(r, c, data, Op::ScaleRows(x, s), rg))
    }

    pub fn sigmoid(&self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn relu(&self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    fn rowwise(&self, x: Var, log: bool) -> Var {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            let mut out = Vec::with_capacity(n.data.len());
            for row in n.data.chunks(n.cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
                if log {
                    let lse = max + sum.ln();
                    out.extend(row.iter().map(|&v| v - lse));
                } else {
                    out.extend(row.iter().map(|&v| (v - max).exp() / sum));
                }
            }
            (n.rows, n.cols, out, n.requires_grad)
        };
        let op = if log {
            Op::LogSoftmaxRows(x)
        } else {
            Op::SoftmaxRows(x)
        };
        self.push(r, c, data, op, rg)
    }

    /// Row-wise softmax, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&self, x: Var) -> Var {
        self.rowwise(x, false)
    }

    pub fn log_softmax_rows(&self, x: Var) -> Var {
        self.rowwise(x, true)
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty { op: "concat_cols" });
        }
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].rows;
            let mut cols = 0;
            let mut rg = false;
            for p in parts {
                let n = &nodes[p.0];
                if n.rows != rows {
                    return Err(shape_err("concat_cols", (rows, cols), (n.rows, n.cols)));
                }
                cols += n.cols;
                rg |= n.requires_grad;
            }
            let mut data = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                for p in parts {
                    let n = &nodes[p.0];
                    data.extend_from_slice(&n.data[i * n.cols..(i + 1) * n.cols]);
                }
            }
            (rows, cols, data, rg)
        };
        Ok(self.push(r, c, data, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(TensorError::Empty { op: "concat_rows" });
        }
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].0].cols;
            let mut rows = 0;
            let mut rg = false;
            let mut data = Vec::new();
            for p in parts {
                let n = &nodes[p.0];
                if n.cols != cols {
                    return Err(shape_err("concat_rows", (rows, cols), (n.rows, n.cols)));
                }
                rows += n.rows;
                rg |= n.requires_grad;
                data.extend_from_slice(&n.data);
            }
            (rows, cols, data, rg)
        };
        Ok(self.push(r, c, data, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            if start >= end || end > n.cols {
                return Err(TensorError::Invalid {
                    op: "slice_cols",
                    msg: format!("range {start}..{end} outside {} columns", n.cols),
                });
            }
            let mut data = Vec::with_capacity(n.rows * (end - start));
            for row in n.data.chunks(n.cols) {
                data.extend_from_slice(&row[start..end]);
            }
            (n.rows, data, n.requires_grad)
        };
        Ok(self.push(r, end - start, data, Op::SliceCols(x, start), rg))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (c, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            if start >= end || end > n.rows {
                return Err(TensorError::Invalid {
                    op: "slice_rows",
                    msg: format!("range {start}..{end} outside {} rows", n.rows),
                });
            }
            (n.cols, n.data[start * n.cols..end * n.cols].to_vec(), n.requires_grad)
        };
        Ok(self.push(end - start, c, data, Op::SliceRows(x, start), rg))
    }

    pub fn row(&self, x: Var, i: usize) -> Result<Var> {
        self.slice_rows(x, i, i + 1)
    }

    /// Stacks row `row` of each input into a `len(inputs) x cols` matrix.
    pub fn gather_row(&self, inputs: &[Var], row: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(TensorError::Empty { op: "gather_row" });
        }
        let (c, data, rg) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[inputs[0].0].cols;
            let mut data = Vec::with_capacity(inputs.len() * cols);
            let mut rg = false;
            for v in inputs {
                let n = &nodes[v.0];
                if n.cols != cols || row >= n.rows {
                    return Err(shape_err("gather_row", (row + 1, cols), (n.rows, n.cols)));
                }
                data.extend_from_slice(&n.data[row * cols..(row + 1) * cols]);
                rg |= n.requires_grad;
            }
            (cols, data, rg)
        };
        Ok(self.push(inputs.len(), c, data, Op::GatherRow(inputs.to_vec(), row), rg))
    }

    pub fn transpose(&self, x: Var) -> Var {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            let mut data = vec![0.0; n.data.len()];
            for i in 0..n.rows {
                for j in 0..n.cols {
                    data[j * n.rows + i] = n.data[i * n.cols + j];
                }
            }
            (n.cols, n.rows, data, n.requires_grad)
        };
        self.push(r, c, data, Op::Transpose(x), rg)
    }

    pub fn sum(&self, x: Var) -> Var {
        let (s, rg) = {
            let nodes = self.nodes.borrow();
            (nodes[x.0].data.iter().sum(), nodes[x.0].requires_grad)
        };
        self.push(1, 1, vec![s], Op::Sum(x), rg)
    }

    /// The single element at `(row, col)` as a `1 x 1` node.
    pub fn pick(&self, x: Var, row: usize, col: usize) -> Result<Var> {
        let (v, idx, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            if row >= n.rows || col >= n.cols {
                return Err(TensorError::Invalid {
                    op: "pick",
                    msg: format!("({row}, {col}) outside {}x{}", n.rows, n.cols),
                });
            }
            let idx = row * n.cols + col;
            (n.data[idx], idx, n.requires_grad)
        };
        Ok(self.push(1, 1, vec![v], Op::Pick(x, idx), rg))
    }

    /// Elementwise product with a fixed mask (no gradient into the mask).
    pub fn mask(&self, x: Var, mask: Vec<f64>) -> Result<Var> {
        let (r, c, data, rg) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[x.0];
            if mask.len() != n.data.len() {
                return Err(TensorError::Invalid {
                    op: "mask",
                    msg: format!("mask has {} values for {}x{}", mask.len(), n.rows, n.cols),
                });
            }
            let data = n.data.iter().zip(&mask).map(|(a, b)| a * b).collect();
            (n.rows, n.cols, data, n.requires_grad)
        };
        Ok(self.push(r, c, data, Op::Mask(x, mask), rg))
    }

    /// Inverted dropout: identity unless `training`; otherwise each unit is
    /// zeroed with probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout<R: rand::Rng + ?Sized>(
        &self,
        x: Var,
        p: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid {
                op: "dropout",
                msg: format!("rate {p} outside [0, 1)"),
            });
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let (r, c) = self.dims(x);
        let keep = 1.0 / (1.0 - p);
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        self.mask(x, mask)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let ln = &nodes[loss.0];
        if ln.rows * ln.cols != 1 {
            return Err(TensorError::NonScalarLoss(vec![ln.rows, ln.cols]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            params: self.bound_params(),
        })
    }
}

/// `c (+)= a b` for row-major `c`, with `a` and `b` given as
/// `(data, row stride, column stride)` so transposes need no copy.
fn gemm(
    (m, k, n): (usize, usize, usize),
    (a, rsa, csa): (&[f64], usize, usize),
    (b, rsb, csb): (&[f64], usize, usize),
    c: &mut [f64],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the strides address `m x k`, `k x n` and `m x n` elements
    // inside the slices checked above, and `c` is borrowed mutably.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn slot<'a>(nodes: &[Node], grads: &'a mut [Option<Vec<f64>>], v: Var) -> Option<&'a mut Vec<f64>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; n.data.len()]))
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let (rows, cols) = (node.rows, node.cols);
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            if let Some(da) = slot(nodes, grads, *a) {
                gemm((m, n, k), (g, n, 1), (&nb.data, 1, n), da, true);
            }
            if let Some(db) = slot(nodes, grads, *b) {
                gemm((k, m, n), (&na.data, 1, k), (g, n, 1), db, true);
            }
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                if let Some(d) = slot(nodes, grads, *v) {
                    d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
                }
            }
        }
        Op::AddRow(a, r) => {
            if let Some(d) = slot(nodes, grads, *a) {
                d.iter_mut().zip(g).for_each(|(d, &gv)| *d += gv);
            }
            if let Some(d) = slot(nodes, grads, *r) {
                for grow in g.chunks(cols) {
                    d.iter_mut().zip(grow).for_each(|(d, &gv)| *d += gv);
                }
            }
        }
        Op::Mul(a, b) => {
            let (da_src, db_src) = (&nodes[b.0].data, &nodes[a.0].data);
            if let Some(d) = slot(nodes, grads, *a) {
                for ((d, &gv), &o) in d.iter_mut().zip(g).zip(da_src) {
                    *d += gv * o;
                }
            }
            if let Some(d) = slot(nodes, grads, *b) {
                for ((d, &gv), &o) in d.iter_mut().zip(g).zip(db_src) {
                    *d += gv * o;
                }
            }
        }
        Op::Affine(x, alpha) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().zip(g).for_each(|(d, &gv)| *d += alpha * gv);
            }
        }
        Op::ScaleRows(x, s) => {
            let (xd, sd) = (&nodes[x.0].data, &nodes[s.0].data);
            if let Some(d) = slot(nodes, grads, *x) {
                for i in 0..rows {
                    for j in 0..cols {
                        d[i * cols + j] += g[i * cols + j] * sd[i];
                    }
                }
            }
            if let Some(d) = slot(nodes, grads, *s) {
                for i in 0..rows {
                    d[i] += (0..cols).map(|j| g[i * cols + j] * xd[i * cols + j]).sum::<f64>();
                }
            }
        }
        Op::Sigmoid(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, &gv), &y) in d.iter_mut().zip(g).zip(&node.data) {
                    *d += gv * y * (1.0 - y);
                }
            }
        }
        Op::Tanh(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, &gv), &y) in d.iter_mut().zip(g).zip(&node.data) {
                    *d += gv * (1.0 - y * y);
                }
            }
        }
        Op::Relu(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, &gv), &y) in d.iter_mut().zip(g).zip(&node.data) {
                    if y > 0.0 {
                        *d += gv;
                    }
                }
            }
        }
        Op::SoftmaxRows(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for i in 0..rows {
                    let y = &node.data[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let dot: f64 = y.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..cols {
                        d[i * cols + j] += y[j] * (gr[j] - dot);
                    }
                }
            }
        }
        Op::LogSoftmaxRows(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for i in 0..rows {
                    let y = &node.data[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let total: f64 = gr.iter().sum();
                    for j in 0..cols {
                        d[i * cols + j] += gr[j] - y[j].exp() * total;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let mut offset = 0;
            for p in parts {
                let pc = nodes[p.0].cols;
                if let Some(d) = slot(nodes, grads, *p) {
                    for i in 0..rows {
                        for j in 0..pc {
                            d[i * pc + j] += g[i * cols + offset + j];
                        }
                    }
                }
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for p in parts {
                let len = nodes[p.0].data.len();
                if let Some(d) = slot(nodes, grads, *p) {
                    d.iter_mut()
                        .zip(&g[offset..offset + len])
                        .for_each(|(d, &gv)| *d += gv);
                }
                offset += len;
            }
        }
        Op::SliceCols(x, start) => {
            let xc = nodes[x.0].cols;
            if let Some(d) = slot(nodes, grads, *x) {
                for i in 0..rows {
                    for j in 0..cols {
                        d[i * xc + start + j] += g[i * cols + j];
                    }
                }
            }
        }
        Op::SliceRows(x, start) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d[start * cols..(start + rows) * cols]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &gv)| *d += gv);
            }
        }
        Op::GatherRow(inputs, r) => {
            for (k, v) in inputs.iter().enumerate() {
                if let Some(d) = slot(nodes, grads, *v) {
                    d[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&g[k * cols..(k + 1) * cols])
                        .for_each(|(d, &gv)| *d += gv);
                }
            }
        }
        Op::Transpose(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                // node is rows x cols, input is cols x rows
                for i in 0..rows {
                    for j in 0..cols {
                        d[j * rows + i] += g[i * cols + j];
                    }
                }
            }
        }
        Op::Sum(x) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d.iter_mut().for_each(|d| *d += g[0]);
            }
        }
        Op::Pick(x, idx) => {
            if let Some(d) = slot(nodes, grads, *x) {
                d[*idx] += g[0];
            }
        }
        Op::Mask(x, mask) => {
            if let Some(d) = slot(nodes, grads, *x) {
                for ((d, &gv), &m) in d.iter_mut().zip(g).zip(mask) {
                    *d += gv * m;
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(String, Var)>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` if `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter gradients into `params`. Parameters bound on the tape
    /// but not reached by the loss still get a zero gradient allocated.
    pub fn accumulate_into(&self, params: &mut ParamSet) -> Result<()> {
        for (name, var) in &self.params {
            let t = params
                .get_mut(name)
                .ok_or_else(|| TensorError::UnknownParam(name.clone()))?;
            let n = t.numel();
            let acc = t.grad.get_or_insert_with(|| vec![0.0; n]);
            if let Some(g) = self.wrt(*var) {
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
        Ok(())
    }
}
