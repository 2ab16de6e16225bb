//! Minimal reverse-mode differentiation over dense `f64` matrices.
//!
//! Every operation appends a node to the [`Tape`]; [`Tape::backward`] walks
//! the nodes in reverse and accumulates gradients into every node that
//! depends on a parameter leaf. Scalars are `1 × 1` matrices.

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

pub type Matrix = Array2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// `a + b` with `b` a `1 × m` row broadcast over rows of `a`.
    AddRow(Var, Var),
    /// `a ⊙ b` with `b` a `1 × m` row broadcast over rows of `a`.
    MulRow(Var, Var),
    /// `a · b[i, j]`
    ScaleBy(Var, Var, (usize, usize)),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    GatherRows(Var, Rc<[usize]>),
    ScatterRows(Var, Rc<[usize]>),
    /// Row-wise dot product, `E × 1`.
    RowDot(Var, Var),
    /// `a ⊙ w` with `w` an `E × 1` column broadcast over columns of `a`.
    MulCol(Var, Var),
    /// Softmax over the rows sharing a group id, each column independently.
    SegmentSoftmax(Var, Rc<[usize]>),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    /// `sqrt(Σ a² + eps)`
    Norm(Var),
    SumSquares(Var),
    SumScalars(Vec<Var>),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the differentiated scalar with respect to `v`; `None` when
    /// `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that is never differentiated.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Sub(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 x m row");
        let v = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "mul_row expects a 1 x m row");
        let v = self.value(a) * self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn scale_by(&mut self, a: Var, b: Var, at: (usize, usize)) -> Var {
        let k = self.value(b)[at];
        let v = self.value(a) * k;
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::ScaleBy(a, b, at), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, k), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(v, Op::Sigmoid(a), ng)
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let src = self.value(a);
        let mut v = Matrix::zeros((idx.len(), src.ncols()));
        for (e, &i) in idx.iter().enumerate() {
            v.row_mut(e).assign(&src.row(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::GatherRows(a, idx), ng)
    }

    /// Sums row `e` of `a` into row `idx[e]` of an `n × cols` result.
    pub fn scatter_rows(&mut self, a: Var, idx: Rc<[usize]>, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len());
        let mut v = Matrix::zeros((n, src.ncols()));
        for (e, &i) in idx.iter().enumerate() {
            let mut row = v.row_mut(i);
            row += &src.row(e);
        }
        let ng = self.ng(a);
        self.push(v, Op::ScatterRows(a, idx), ng)
    }

    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.dim(), y.dim());
        let mut v = Matrix::zeros((x.nrows(), 1));
        Zip::from(v.rows_mut())
            .and(x.rows())
            .and(y.rows())
            .for_each(|mut o, p, q| o[0] = p.dot(&q));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::RowDot(a, b), ng)
    }

    pub fn mul_col(&mut self, a: Var, w: Var) -> Var {
        assert_eq!(self.value(w).ncols(), 1, "mul_col expects an E x 1 column");
        let v = self.value(a) * self.value(w);
        let ng = self.ng(a) || self.ng(w);
        self.push(v, Op::MulCol(a, w), ng)
    }

    /// Softmax over rows that share a group id (e.g. all incoming edges of one
    /// target node), independently per column. Groups with no rows are empty.
    pub fn segment_softmax(&mut self, a: Var, groups: Rc<[usize]>, n_groups: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), groups.len());
        let cols = x.ncols();
        let mut max = Matrix::from_elem((n_groups, cols), f64::NEG_INFINITY);
        for (e, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                max[[g, c]] = max[[g, c]].max(x[[e, c]]);
            }
        }
        let mut v = Matrix::zeros(x.dim());
        let mut sum = Matrix::zeros((n_groups, cols));
        for (e, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                let ex = (x[[e, c]] - max[[g, c]]).exp();
                v[[e, c]] = ex;
                sum[[g, c]] += ex;
            }
        }
        for (e, &g) in groups.iter().enumerate() {
            for c in 0..cols {
                v[[e, c]] /= sum[[g, c]];
            }
        }
        let ng = self.ng(a);
        self.push(v, Op::SegmentSoftmax(a, groups), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts), ng)
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatRows(parts), ng)
    }

    /// Smoothed Frobenius norm `sqrt(Σ a² + eps)`.
    pub fn norm(&mut self, a: Var, eps: f64) -> Var {
        let ss: f64 = self.value(a).iter().map(|x| x * x).sum();
        let v = Matrix::from_elem((1, 1), (ss + eps).sqrt());
        let ng = self.ng(a);
        self.push(v, Op::Norm(a), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let ss: f64 = self.value(a).iter().map(|x| x * x).sum();
        let v = Matrix::from_elem((1, 1), ss);
        let ng = self.ng(a);
        self.push(v, Op::SumSquares(a), ng)
    }

    pub fn sum_scalars(&mut self, parts: Vec<Var>) -> Var {
        let total: f64 = parts.iter().map(|&p| self.scalar(p)).sum();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Matrix::from_elem((1, 1), total), Op::SumScalars(parts), ng)
    }

    /// Gradients of the scalar `root` with respect to every node it depends
    /// on through differentiable inputs.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::ones((1, 1)));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].needs_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(val(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t().dot(val(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::MulRow(a, row) => {
                if self.ng(*a) {
                    acc(*a, g * val(*row));
                }
                if self.ng(*row) {
                    acc(*row, (g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::ScaleBy(a, b, at) => {
                let k = val(*b)[*at];
                if self.ng(*a) {
                    acc(*a, g * k);
                }
                if self.ng(*b) {
                    let mut d = Matrix::zeros(val(*b).dim());
                    d[*at] = (g * val(*a)).sum();
                    acc(*b, d);
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Relu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| {
                        if y <= 0.0 {
                            *d = 0.0
                        }
                    });
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let mut d = Matrix::zeros(val(*a).dim());
                for (e, &r) in idx.iter().enumerate() {
                    let mut row = d.row_mut(r);
                    row += &g.row(e);
                }
                acc(*a, d);
            }
            Op::ScatterRows(a, idx) => {
                let mut d = Matrix::zeros(val(*a).dim());
                for (e, &r) in idx.iter().enumerate() {
                    d.row_mut(e).assign(&g.row(r));
                }
                acc(*a, d);
            }
            Op::RowDot(a, b) => {
                if self.ng(*a) {
                    acc(*a, val(*b) * g);
                }
                if self.ng(*b) {
                    acc(*b, val(*a) * g);
                }
            }
            Op::MulCol(a, w) => {
                if self.ng(*a) {
                    acc(*a, g * val(*w));
                }
                if self.ng(*w) {
                    acc(*w, (g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1)));
                }
            }
            Op::SegmentSoftmax(a, groups) => {
                let y = &node.value;
                let cols = y.ncols();
                let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
                let mut dot = Matrix::zeros((n_groups, cols));
                for (e, &grp) in groups.iter().enumerate() {
                    for c in 0..cols {
                        dot[[grp, c]] += y[[e, c]] * g[[e, c]];
                    }
                }
                let mut d = Matrix::zeros(y.dim());
                for (e, &grp) in groups.iter().enumerate() {
                    for c in 0..cols {
                        d[[e, c]] = y[[e, c]] * (g[[e, c]] - dot[[grp, c]]);
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let dots = (y * g).sum_axis(Axis(1)).insert_axis(Axis(1));
                acc(*a, y * &(g - &dots));
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).ncols();
                    if self.ng(p) {
                        acc(p, g.slice(s![.., start..start + w]).to_owned());
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let h = val(p).nrows();
                    if self.ng(p) {
                        acc(p, g.slice(s![start..start + h, ..]).to_owned());
                    }
                    start += h;
                }
            }
            Op::Norm(a) => {
                let k = g[[0, 0]] / node.value[[0, 0]];
                acc(*a, val(*a) * k);
            }
            Op::SumSquares(a) => acc(*a, val(*a) * (2.0 * g[[0, 0]])),
            Op::SumScalars(parts) => {
                for &p in parts {
                    acc(p, g.clone());
                }
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(root)/d(param) for a graph built by `f`.
    fn check<F>(inputs: &[Matrix], f: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| t.param(m.clone())).collect();
        let root = f(&mut t, &vars);
        let grads = t.backward(root);
        let h = 1e-6;
        for (k, m) in inputs.iter().enumerate() {
            for idx in 0..m.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vars: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, x)| {
                            let mut x = x.clone();
                            if j == k {
                                let c = x.ncols();
                                x[[idx / c, idx % c]] += delta;
                            }
                            t.param(x)
                        })
                        .collect();
                    let r = f(&mut t, &vars);
                    t.scalar(r)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let c = m.ncols();
                let an = grads.get(vars[k]).map_or(0.0, |g| g[[idx / c, idx % c]]);
                assert!(
                    (an - fd).abs() <= 1e-6 * (1.0 + an.abs().max(fd.abs())),
                    "input {k} entry {idx}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    fn a() -> Matrix {
        array![[0.3, -1.2, 0.7], [1.1, 0.4, -0.5]]
    }

    fn b() -> Matrix {
        array![[0.2, 0.9], [-0.6, 0.3], [0.8, -1.0]]
    }

    #[test]
    fn matmul_and_relu() {
        check(&[a(), b()], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let r = t.relu(m);
            t.sum_squares(r)
        });
    }

    #[test]
    fn matmul_t_sigmoid_norm() {
        check(&[a(), a().mapv(|x| x * 0.5 + 0.1)], |t, v| {
            let m = t.matmul_t(v[0], v[1]);
            let s = t.sigmoid(m);
            t.norm(s, 1e-12)
        });
    }

    #[test]
    fn row_broadcasts_and_scale_by() {
        let row = array![[0.5, -0.3, 1.5]];
        let k = array![[2.0, -0.7]];
        check(&[a(), row, k], |t, v| {
            let x = t.add_row(v[0], v[1]);
            let y = t.mul_row(x, v[1]);
            let z = t.scale_by(y, v[2], (0, 1));
            let w = t.scale(z, 3.0);
            t.sum_squares(w)
        });
    }

    #[test]
    fn gather_scatter_rowdot_mulcol() {
        let idx: Rc<[usize]> = Rc::from(vec![1, 0, 1, 1]);
        let dst: Rc<[usize]> = Rc::from(vec![0, 2, 2, 1]);
        check(&[a(), a().mapv(|x| x - 0.2)], |t, v| {
            let ga = t.gather_rows(v[0], idx.clone());
            let gb = t.gather_rows(v[1], idx.clone());
            let d = t.row_dot(ga, gb);
            let m = t.mul_col(gb, d);
            let s = t.scatter_rows(m, dst.clone(), 3);
            t.sum_squares(s)
        });
    }

    #[test]
    fn segment_and_row_softmax() {
        let scores = array![[0.3, 1.0], [-0.2, 0.5], [1.4, -0.3], [0.0, 0.2], [0.9, 0.9]];
        let groups: Rc<[usize]> = Rc::from(vec![0, 2, 0, 2, 2]);
        let weights = array![[1.0, -2.0], [0.5, 0.3], [2.0, 1.0], [-1.0, 0.7], [0.2, 0.1]];
        let column = array![[0.4], [-1.0], [0.1], [2.0], [0.6]];
        check(&[scores, weights, column], |t, v| {
            let sm = t.segment_softmax(v[0], groups.clone(), 3);
            let col = t.segment_softmax(v[2], groups.clone(), 3);
            let m = t.mul_col(v[1], col);
            let r = t.softmax_rows(m);
            let w = t.mul_col(r, col);
            let x = t.add(w, sm);
            t.sum_squares(x)
        });
    }

    #[test]
    fn concat_sub_and_sum() {
        check(&[a(), a().mapv(|x| x * x)], |t, v| {
            let c = t.concat_cols(vec![v[0], v[1]]);
            let r = t.concat_rows(vec![v[0], v[1]]);
            let d = t.sub(v[0], v[1]);
            let e = t.add(d, v[0]);
            let n1 = t.norm(c, 1e-12);
            let n2 = t.sum_squares(r);
            let n3 = t.norm(e, 0.0);
            t.sum_scalars(vec![n1, n2, n3])
        });
    }

    #[test]
    fn segment_softmax_sums_to_one_per_group() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0], [2.0], [3.0], [-4.0]]);
        let s = t.segment_softmax(x, Rc::from(vec![0, 1, 1, 1]), 3);
        let v = t.value(s);
        assert!((v[[0, 0]] - 1.0).abs() < 1e-15);
        assert!((v[[1, 0]] + v[[2, 0]] + v[[3, 0]] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let x = t.constant(a());
        let w = t.param(b());
        let y = t.matmul(x, w);
        let l = t.sum_squares(y);
        let g = t.backward(l);
        assert!(g.get(x).is_none());
        assert!(g.get(w).is_some());
    }

    #[test]
    fn stable_sigmoid() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!((sigmoid(1.0) - 0.731_058_578_630_004_9).abs() < 1e-15);
    }
}
