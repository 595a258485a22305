use super::{AutodiffError, Gradients, Matrix, ParamId, ParameterSet};

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    MeanRows(Var),
    RowNorm(Var),
    LogSumExpRows(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Diag(Var),
    StopGradient,
    GaussianReparam { mean: Var, log_std: Var, noise: Var },
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Records primitive applications in evaluation order. Node indices are a
/// topological order by construction, so backward is one reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

type Result<T> = std::result::Result<T, AutodiffError>;

fn mismatch(op: &'static str, a: &Matrix, b: &Matrix) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
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

    /// Drops every recorded node.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.param_vars.clear();
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Scalar value of a 1x1 node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Loads a parameter; repeated loads of the same id share one node.
    pub fn param(&mut self, params: &ParameterSet, id: ParamId) -> Var {
        if let Some(Some(v)) = self.param_vars.get(id.0) {
            return *v;
        }
        let v = self.push(params.get(id).clone(), Op::Param(id));
        if self.param_vars.len() <= id.0 {
            self.param_vars.resize(id.0 + 1, None);
        }
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(mismatch("matmul", va, vb));
        }
        let out = Matrix::gemm(va, false, vb, false);
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(mismatch(op, va, vb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Element-wise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("min", a, b)?;
        let out = self.value(a).zip_map(self.value(b), f64::min);
        Ok(self.push(out, Op::Min(a, b)))
    }

    fn row_broadcast_check(&self, op: &'static str, a: Var, row: Var) -> Result<()> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows() != 1 || vr.cols() != va.cols() {
            return Err(mismatch(op, va, vr));
        }
        Ok(())
    }

    /// Adds a `1 x n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("add_row", a, row)?;
        let (va, vr) = (self.value(a), self.value(row));
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *x += b;
            }
        }
        Ok(self.push(out, Op::AddRow(a, row)))
    }

    /// Multiplies every row of `a` element-wise by a `1 x n` row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_broadcast_check("mul_row", a, row)?;
        let (va, vr) = (self.value(a), self.value(row));
        let mut out = va.clone();
        for i in 0..out.rows() {
            for (x, b) in out.row_mut(i).iter_mut().zip(vr.data()) {
                *x *= b;
            }
        }
        Ok(self.push(out, Op::MulRow(a, row)))
    }

    /// Divides row `i` of `a` by `col[i]`, with `col` of shape `m x 1`.
    pub fn div_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (va, vc) = (self.value(a), self.value(col));
        if vc.cols() != 1 || vc.rows() != va.rows() {
            return Err(mismatch("div_col", va, vc));
        }
        let mut out = va.clone();
        for i in 0..out.rows() {
            let d = vc.get(i, 0);
            for x in out.row_mut(i) {
                *x /= d;
            }
        }
        Ok(self.push(out, Op::DivCol(a, col)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| x * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        self.push(out, Op::Square(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero outside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi))
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let s = v.data().iter().sum::<f64>() / n;
        self.push(Matrix::scalar(s), Op::Mean(a))
    }

    /// Per-row sum, `m x n -> m x 1`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum());
        self.push(out, Op::SumRows(a))
    }

    /// Per-row mean, `m x n -> m x 1`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.cols().max(1) as f64;
        let out = Matrix::from_fn(v.rows(), 1, |i, _| v.row(i).iter().sum::<f64>() / n);
        self.push(out, Op::MeanRows(a))
    }

    /// Row-wise `sqrt(sum x^2 + eps)`, `m x n -> m x 1`.
    pub fn l2_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let v = self.value(a);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| {
            (v.row(i).iter().map(|x| x * x).sum::<f64>() + eps).sqrt()
        });
        self.push(out, Op::RowNorm(a))
    }

    /// Row-wise log-sum-exp, offset by the row max so it never overflows.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Matrix::from_fn(v.rows(), 1, |i, _| {
            let row = v.row(i);
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if m == f64::NEG_INFINITY {
                return m;
            }
            m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
        });
        self.push(out, Op::LogSumExpRows(a))
    }

    /// Concatenates along columns. An empty list is an error.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AutodiffError::EmptyConcat)?;
        let rows = self.value(first).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut c = 0;
            for &p in parts {
                let src = self.value(p).row(i);
                out.row_mut(i)[c..c + src.len()].copy_from_slice(src);
                c += src.len();
            }
        }
        Ok(self.push(out, Op::Concat(parts.to_vec())))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if start > end || end > v.cols() {
            return Err(AutodiffError::SliceOutOfRange {
                start,
                end,
                cols: v.cols(),
            });
        }
        let out = Matrix::from_fn(v.rows(), end - start, |i, j| v.get(i, start + j));
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    /// Row `i` of the output is row `indices[i]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let v = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.rows()) {
            return Err(AutodiffError::IndexOutOfRange {
                index: bad,
                len: v.rows(),
            });
        }
        let out = Matrix::from_fn(indices.len(), v.cols(), |i, j| v.get(indices[i], j));
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    /// Diagonal of a square matrix as a column, `n x n -> n x 1`.
    pub fn diag(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.rows() != v.cols() {
            return Err(mismatch("diag", v, v));
        }
        let out = Matrix::from_fn(v.rows(), 1, |i, _| v.get(i, i));
        Ok(self.push(out, Op::Diag(a)))
    }

    /// Passes the value through and blocks the gradient.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGradient)
    }

    /// `mean + exp(log_std) * noise`.
    pub fn gaussian_reparam(&mut self, mean: Var, log_std: Var, noise: Var) -> Result<Var> {
        self.same_shape("gaussian_reparam", mean, log_std)?;
        self.same_shape("gaussian_reparam", mean, noise)?;
        let (m, s, n) = (self.value(mean), self.value(log_std), self.value(noise));
        let mut out = m.clone();
        for ((o, &ls), &e) in out.data_mut().iter_mut().zip(s.data()).zip(n.data()) {
            *o += ls.exp() * e;
        }
        Ok(self.push(
            out,
            Op::GaussianReparam {
                mean,
                log_std,
                noise,
            },
        ))
    }

    /// Reverse sweep from a scalar `loss`. Parameters the loss does not
    /// depend on receive zero gradients.
    pub fn backward(&self, loss: Var, params: &ParameterSet) -> Result<Gradients> {
        let mut out = Gradients::zeros_like(params);
        let node_grads = self.node_gradients(loss)?;
        for (i, g) in node_grads.into_iter().enumerate() {
            if let (Some(g), Op::Param(id)) = (g, &self.nodes[i].op) {
                out.get_mut(*id).add_assign(&g);
            }
        }
        Ok(out)
    }

    /// Gradient of `loss` with respect to an arbitrary node.
    pub fn grad_of(&self, loss: Var, wrt: Var) -> Result<Matrix> {
        let mut grads = self.node_gradients(loss)?;
        let (r, c) = self.shape(wrt);
        Ok(grads[wrt.0].take().unwrap_or_else(|| Matrix::zeros(r, c)))
    }

    fn node_gradients(&self, loss: Var) -> Result<Vec<Option<Matrix>>> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalarLoss { shape });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(grads)
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Matrix| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Constant | Op::Param(_) | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                acc(*a, Matrix::gemm(g, false, val(*b), true));
                acc(*b, Matrix::gemm(val(*a), true, g, false));
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let mut ga = Matrix::zeros(g.rows(), g.cols());
                let mut gb = Matrix::zeros(g.rows(), g.cols());
                for k in 0..g.len() {
                    if va.data()[k] <= vb.data()[k] {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (x, y) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *x += y;
                    }
                }
                acc(*row, gr);
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (val(*a), val(*row));
                let mut ga = g.clone();
                let mut gr = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for j in 0..g.cols() {
                        ga.row_mut(r)[j] *= vr.data()[j];
                        gr.data_mut()[j] += g.get(r, j) * va.get(r, j);
                    }
                }
                acc(*a, ga);
                acc(*row, gr);
            }
            Op::DivCol(a, col) => {
                let (va, vc) = (val(*a), val(*col));
                let mut ga = g.clone();
                let mut gc = Matrix::zeros(vc.rows(), 1);
                for r in 0..g.rows() {
                    let d = vc.get(r, 0);
                    let mut s = 0.0;
                    for j in 0..g.cols() {
                        ga.row_mut(r)[j] /= d;
                        s += g.get(r, j) * va.get(r, j);
                    }
                    gc.set(r, 0, -s / (d * d));
                }
                acc(*a, ga);
                acc(*col, gc);
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 })),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |d, y| d * y)),
            Op::Log(a) => acc(*a, g.zip_map(val(*a), |d, x| d / x)),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |d, x| 2.0 * d * x)),
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(
                    *a,
                    g.zip_map(val(*a), |d, x| if x >= lo && x <= hi { d } else { 0.0 }),
                );
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::filled(r, c, g.item()));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c).max(1) as f64;
                acc(*a, Matrix::filled(r, c, g.item() / n));
            }
            Op::SumRows(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0)));
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let n = c.max(1) as f64;
                acc(*a, Matrix::from_fn(r, c, |i, _| g.get(i, 0) / n));
            }
            Op::RowNorm(a) => {
                let va = val(*a);
                let norms = &node.value;
                acc(
                    *a,
                    Matrix::from_fn(va.rows(), va.cols(), |i, j| {
                        g.get(i, 0) * va.get(i, j) / norms.get(i, 0)
                    }),
                );
            }
            Op::LogSumExpRows(a) => {
                let va = val(*a);
                let lse = &node.value;
                acc(
                    *a,
                    Matrix::from_fn(va.rows(), va.cols(), |i, j| {
                        g.get(i, 0) * (va.get(i, j) - lse.get(i, 0)).exp()
                    }),
                );
            }
            Op::Concat(parts) => {
                let mut c = 0;
                for &p in parts {
                    let w = val(p).cols();
                    acc(p, Matrix::from_fn(g.rows(), w, |i, j| g.get(i, c + j)));
                    c += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let w = g.cols();
                let start = *start;
                acc(
                    *a,
                    Matrix::from_fn(r, c, |i, j| {
                        if j >= start && j < start + w {
                            g.get(i, j - start)
                        } else {
                            0.0
                        }
                    }),
                );
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(*a).shape();
                let mut ga = Matrix::zeros(r, c);
                for (out_row, &src) in indices.iter().enumerate() {
                    for (x, y) in ga.row_mut(src).iter_mut().zip(g.row(out_row)) {
                        *x += y;
                    }
                }
                acc(*a, ga);
            }
            Op::Diag(a) => {
                let n = g.rows();
                acc(
                    *a,
                    Matrix::from_fn(n, n, |i, j| if i == j { g.get(i, 0) } else { 0.0 }),
                );
            }
            Op::GaussianReparam {
                mean,
                log_std,
                noise,
            } => {
                let (vs, vn) = (val(*log_std), val(*noise));
                acc(*mean, g.clone());
                let std = vs.map(f64::exp);
                let mut gs = g.zip_map(&std, |d, s| d * s);
                acc(*noise, gs.clone());
                for (x, &e) in gs.data_mut().iter_mut().zip(vn.data()) {
                    *x *= e;
                }
                acc(*log_std, gs);
            }
        }
    }
}
