use super::matrix::{matmul_nn, matmul_nt, matmul_tn, Matrix};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reduction direction for softmax-style ops.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Normalize each row (across columns).
    Rows,
    /// Normalize each column (across rows).
    Cols,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Broadcast(Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    ClampMin(Var, f64),
    Softmax(Var, Axis),
    LogSoftmax(Var, Axis),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    RowNormSq(Var),
    NormalizeRows(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    ScatterRows(Var, Vec<usize>),
    Diag(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

/// Records a forward computation for one reverse sweep.
///
/// Node order is a topological order, so [`Tape::backward`] walks it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every recorded node.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient at a leaf (constant or parameter); `None` if the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Option<&Matrix> {
        self.grads[var.0].as_ref()
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Matrix::new(a.rows(), a.cols(), data).expect("same shape")
}

/// Visits each softmax group (a row or a column) as a list of flat indices.
fn for_each_group(shape: (usize, usize), axis: Axis, mut f: impl FnMut(&[usize])) {
    let (r, c) = shape;
    let mut idx = Vec::new();
    match axis {
        Axis::Rows => {
            for i in 0..r {
                idx.clear();
                idx.extend(i * c..(i + 1) * c);
                f(&idx);
            }
        }
        Axis::Cols => {
            for j in 0..c {
                idx.clear();
                idx.extend((0..r).map(|i| i * c + j));
                f(&idx);
            }
        }
    }
}

fn softmax_value(x: &Matrix, axis: Axis, log: bool) -> Matrix {
    let mut out = x.clone();
    for_each_group(x.shape(), axis, |idx| {
        let data = out.data_mut();
        let max = idx.iter().map(|&i| data[i]).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + idx.iter().map(|&i| (data[i] - max).exp()).sum::<f64>().ln();
        for &i in idx {
            data[i] = if log { data[i] - lse } else { (data[i] - lse).exp() };
        }
    });
    out
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

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A leaf with no gradient path to any parameter.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(shape_err("matmul", va, vb));
        }
        let v = matmul_nn(va, vb);
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    /// a · bᵀ
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(shape_err("matmul_nt", va, vb));
        }
        let v = matmul_nt(va, vb);
        Ok(self.push(v, Op::MatMulNt(a, b)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    /// x (r×c) plus a row vector b (1×c) added to every row.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(shape_err("add_row", vx, vb));
        }
        let mut v = vx.clone();
        let c = v.cols();
        for (i, o) in v.data_mut().iter_mut().enumerate() {
            *o += vb.data()[i % c];
        }
        Ok(self.push(v, Op::AddRow(x, b)))
    }

    /// Expands a 1×1, 1×c or r×1 node to `rows`×`cols`.
    pub fn broadcast(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let vx = self.value(x);
        let (r, c) = vx.shape();
        if !((r == 1 || r == rows) && (c == 1 || c == cols)) {
            return Err(Error::Shape {
                op: "broadcast",
                left: (r, c),
                right: (rows, cols),
            });
        }
        let mut v = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                v.set(i, j, vx.get(if r == 1 { 0 } else { i }, if c == 1 { 0 } else { j }));
            }
        }
        Ok(self.push(v, Op::Broadcast(x)))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let v = self.value(x).map(|a| a * factor);
        self.push(v, Op::Scale(x, factor))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a * a);
        self.push(v, Op::Square(x))
    }

    /// max(x, floor); the gradient passes only where x > floor.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).map(|a| a.max(floor));
        self.push(v, Op::ClampMin(x, floor))
    }

    pub fn softmax(&mut self, x: Var, axis: Axis) -> Var {
        let v = softmax_value(self.value(x), axis, false);
        self.push(v, Op::Softmax(x, axis))
    }

    pub fn log_softmax(&mut self, x: Var, axis: Axis) -> Var {
        let v = softmax_value(self.value(x), axis, true);
        self.push(v, Op::LogSoftmax(x, axis))
    }

    /// Sum of all entries, as 1×1.
    pub fn sum(&mut self, x: Var) -> Var {
        let v = Matrix::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let n = (m.rows() * m.cols()).max(1) as f64;
        let v = Matrix::scalar(m.sum() / n);
        self.push(v, Op::Mean(x))
    }

    /// Per-row sums, r×1.
    pub fn sum_rows(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let data = (0..m.rows()).map(|i| m.row(i).iter().sum()).collect();
        let v = Matrix::new(m.rows(), 1, data).expect("shape");
        self.push(v, Op::SumRows(x))
    }

    /// Per-row squared Euclidean norms, r×1.
    pub fn l2_norm_sq(&mut self, x: Var) -> Var {
        let m = self.value(x);
        let data = (0..m.rows())
            .map(|i| m.row(i).iter().map(|a| a * a).sum())
            .collect();
        let v = Matrix::new(m.rows(), 1, data).expect("shape");
        self.push(v, Op::RowNormSq(x))
    }

    /// Scales every row to unit Euclidean norm.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        let mut v = m.clone();
        for i in 0..m.rows() {
            let norm = m.row(i).iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(Error::Degenerate(format!("row {i} has zero norm")));
            }
            for a in v.row_mut(i) {
                *a /= norm;
            }
        }
        Ok(self.push(v, Op::NormalizeRows(x)))
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = parts
            .first()
            .map(|&p| self.value(p).rows())
            .ok_or_else(|| Error::invalid("concat of nothing"))?;
        let mut cols = 0;
        for &p in parts {
            let m = self.value(p);
            if m.rows() != rows {
                return Err(shape_err("concat", self.value(parts[0]), m));
            }
            cols += m.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Matrix::new(rows, cols, data)?;
        Ok(self.push(v, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let m = self.value(x);
        if start > end || end > m.cols() {
            return Err(Error::invalid(format!(
                "column slice {start}..{end} of a {}x{} matrix",
                m.rows(),
                m.cols()
            )));
        }
        let mut data = Vec::with_capacity(m.rows() * (end - start));
        for i in 0..m.rows() {
            data.extend_from_slice(&m.row(i)[start..end]);
        }
        let v = Matrix::new(m.rows(), end - start, data)?;
        Ok(self.push(v, Op::SliceCols(x, start)))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let m = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= m.rows()) {
            return Err(Error::invalid(format!("row {bad} out of range ({} rows)", m.rows())));
        }
        let v = m.select_rows(idx);
        Ok(self.push(v, Op::GatherRows(x, idx.to_vec())))
    }

    /// Places row k of `x` at row `idx[k]` of a zero matrix with `rows` rows.
    pub fn scatter_rows(&mut self, x: Var, idx: &[usize], rows: usize) -> Result<Var> {
        let m = self.value(x);
        if idx.len() != m.rows() || idx.iter().any(|&i| i >= rows) {
            return Err(Error::invalid("scatter indices do not match the source rows"));
        }
        let mut v = Matrix::zeros(rows, m.cols());
        for (k, &i) in idx.iter().enumerate() {
            for (o, a) in v.row_mut(i).iter_mut().zip(m.row(k)) {
                *o += a;
            }
        }
        Ok(self.push(v, Op::ScatterRows(x, idx.to_vec())))
    }

    /// Main diagonal of a square matrix, n×1.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let m = self.value(x);
        if m.rows() != m.cols() {
            return Err(Error::invalid(format!("diag of a {}x{} matrix", m.rows(), m.cols())));
        }
        let data = (0..m.rows()).map(|i| m.get(i, i)).collect();
        let v = Matrix::new(m.rows(), 1, data)?;
        Ok(self.push(v, Op::Diag(x)))
    }

    /// Reverse sweep from a 1×1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.shape() != (1, 1) {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got {}x{}",
                rv.rows(),
                rv.cols()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
            match &mut grads[var.0] {
                Some(existing) => existing.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=root.0).rev() {
            // Leaves keep their gradient; interior ones are released once used.
            if matches!(self.nodes[i].op, Op::Constant | Op::Param(_)) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let out = &node.value;
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, matmul_nt(&g, self.value(*b)));
                    acc(&mut grads, *b, matmul_tn(self.value(*a), &g));
                }
                Op::MatMulNt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    acc(&mut grads, *a, matmul_nn(&g, self.value(*b)));
                    acc(&mut grads, *b, matmul_tn(&g, self.value(*a)));
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, g.map(|x| -x));
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    acc(&mut grads, *a, zip_map(&g, self.value(*b), |x, y| x * y));
                    acc(&mut grads, *b, zip_map(&g, self.value(*a), |x, y| x * y));
                }
                Op::AddRow(x, b) => {
                    let c = g.cols();
                    let mut gb = vec![0.0; c];
                    for (k, v) in g.data().iter().enumerate() {
                        gb[k % c] += v;
                    }
                    acc(&mut grads, *b, Matrix::row_vector(gb));
                    acc(&mut grads, *x, g);
                }
                Op::Broadcast(x) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for a in 0..g.rows() {
                        for b in 0..g.cols() {
                            let (ia, ib) = (if r == 1 { 0 } else { a }, if c == 1 { 0 } else { b });
                            let cur = gx.get(ia, ib);
                            gx.set(ia, ib, cur + g.get(a, b));
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Scale(x, f) => acc(&mut grads, *x, g.map(|v| v * f)),
                Op::Relu(x) => {
                    acc(&mut grads, *x, zip_map(&g, self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 }))
                }
                Op::Exp(x) => acc(&mut grads, *x, zip_map(&g, out, |gv, y| gv * y)),
                Op::Log(x) => acc(&mut grads, *x, zip_map(&g, self.value(*x), |gv, xv| gv / xv)),
                Op::Square(x) => {
                    acc(&mut grads, *x, zip_map(&g, self.value(*x), |gv, xv| 2.0 * gv * xv))
                }
                Op::ClampMin(x, floor) => acc(
                    &mut grads,
                    *x,
                    zip_map(&g, self.value(*x), |gv, xv| if xv > *floor { gv } else { 0.0 }),
                ),
                Op::Softmax(x, axis) => {
                    let mut gx = g.clone();
                    for_each_group(out.shape(), *axis, |idx| {
                        let dot: f64 = idx.iter().map(|&k| g.data()[k] * out.data()[k]).sum();
                        for &k in idx {
                            gx.data_mut()[k] = out.data()[k] * (g.data()[k] - dot);
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::LogSoftmax(x, axis) => {
                    let mut gx = g.clone();
                    for_each_group(out.shape(), *axis, |idx| {
                        let total: f64 = idx.iter().map(|&k| g.data()[k]).sum();
                        for &k in idx {
                            gx.data_mut()[k] = g.data()[k] - out.data()[k].exp() * total;
                        }
                    });
                    acc(&mut grads, *x, gx);
                }
                Op::Sum(x) => {
                    let (r, c) = self.value(*x).shape();
                    acc(&mut grads, *x, Matrix::filled(r, c, g.data()[0]));
                }
                Op::Mean(x) => {
                    let (r, c) = self.value(*x).shape();
                    let n = (r * c).max(1) as f64;
                    acc(&mut grads, *x, Matrix::filled(r, c, g.data()[0] / n));
                }
                Op::SumRows(x) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for a in 0..r {
                        gx.row_mut(a).fill(g.data()[a]);
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::RowNormSq(x) => {
                    let xv = self.value(*x);
                    let mut gx = xv.clone();
                    for a in 0..xv.rows() {
                        let s = 2.0 * g.data()[a];
                        for v in gx.row_mut(a) {
                            *v *= s;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::NormalizeRows(x) => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for a in 0..xv.rows() {
                        let norm = xv.row(a).iter().map(|v| v * v).sum::<f64>().sqrt();
                        let y = out.row(a);
                        let gy = g.row(a);
                        let dot: f64 = y.iter().zip(gy).map(|(p, q)| p * q).sum();
                        for ((o, &yk), &gk) in gx.row_mut(a).iter_mut().zip(y).zip(gy) {
                            *o = (gk - yk * dot) / norm;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let (r, c) = self.value(p).shape();
                        let mut gp = Matrix::zeros(r, c);
                        for a in 0..r {
                            gp.row_mut(a).copy_from_slice(&g.row(a)[offset..offset + c]);
                        }
                        offset += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(x, start) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for a in 0..r {
                        gx.row_mut(a)[*start..*start + g.cols()].copy_from_slice(g.row(a));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::GatherRows(x, idx) => {
                    let (r, c) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(r, c);
                    for (k, &row) in idx.iter().enumerate() {
                        for (o, v) in gx.row_mut(row).iter_mut().zip(g.row(k)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ScatterRows(x, idx) => {
                    acc(&mut grads, *x, g.select_rows(idx));
                }
                Op::Diag(x) => {
                    let n = g.rows();
                    let mut gx = Matrix::zeros(n, n);
                    for a in 0..n {
                        gx.set(a, a, g.data()[a]);
                    }
                    acc(&mut grads, *x, gx);
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Sums the gradients of every parameter leaf, one matrix per stored parameter.
    pub fn param_grads(&self, grads: &Gradients, store: &ParamStore) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = store
            .values()
            .iter()
            .map(|m| Matrix::zeros(m.rows(), m.cols()))
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let (Op::Param(id), Some(g)) = (&node.op, &grads.grads[i]) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}
