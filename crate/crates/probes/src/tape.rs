//! Dense matrices and a reverse-mode tape over the handful of operations the
//! probe families use.

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix buffer does not match shape {rows}x{cols}");
        Mat { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat { rows, cols, data: vec![v; rows * cols] }
    }

    pub fn column(values: &[f64]) -> Self {
        Mat::from_vec(values.len(), 1, values.to_vec())
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `self * b`
    pub fn matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let o = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for (o, bv) in o.iter_mut().zip(b.row(k)) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    /// `self * b^T`
    pub fn matmul_t(&self, b: &Mat) -> Mat {
        assert_eq!(self.cols, b.cols, "matmul_t shape mismatch");
        let mut out = Mat::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..b.rows {
                out.data[i * b.rows + j] = a.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
            }
        }
        out
    }

    /// `self^T * b`
    pub fn t_matmul(&self, b: &Mat) -> Mat {
        assert_eq!(self.rows, b.rows, "t_matmul shape mismatch");
        let mut out = Mat::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let br = b.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                for (o, bv) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn col_sums(&self) -> Mat {
        let mut out = Mat::zeros(1, self.cols);
        for i in 0..self.rows {
            for (o, v) in out.data.iter_mut().zip(self.row(i)) {
                *o += v;
            }
        }
        out
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    /// Position on the tape; also the index into [`Tape::backward`]'s result.
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat, inv_std: Vec<f64> },
    MeanRows(Var),
    BroadcastRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SoftmaxRows(Var),
    Mask(Var, Vec<f64>),
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn leaf(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (x, b) = (self.value(a), self.value(bias));
        assert_eq!((b.rows, b.cols), (1, x.cols), "bias shape mismatch");
        let mut v = x.clone();
        for i in 0..v.rows {
            for (o, bv) in v.data[i * v.cols..(i + 1) * v.cols].iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!((v.rows, v.cols), (self.value(b).rows, self.value(b).cols), "add shape mismatch");
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x *= s);
        self.push(v, Op::Scale(a, s))
    }

    /// Per-row normalization followed by a learned `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = (xv.rows, xv.cols);
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for i in 0..rows {
            let r = xv.row(i);
            let mean = r.iter().sum::<f64>() / cols as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..cols {
                xhat.data[i * cols + j] = (r[j] - mean) * is;
            }
        }
        let (g, b) = (self.value(gain), self.value(bias));
        let mut out = xhat.clone();
        for i in 0..rows {
            for j in 0..cols {
                out.data[i * cols + j] = out.data[i * cols + j] * g.data[j] + b.data[j];
            }
        }
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    /// Column means as a `1 x c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.col_sums();
        let r = x.rows as f64;
        v.data.iter_mut().for_each(|s| *s /= r);
        self.push(v, Op::MeanRows(a))
    }

    /// Repeats a `1 x c` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let x = self.value(a);
        assert_eq!(x.rows, 1, "broadcast expects a single row");
        let v = Mat::from_vec(rows, x.cols, x.data.repeat(rows));
        self.push(v, Op::BroadcastRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                assert_eq!(m.rows, rows, "concat row mismatch");
                v.data[i * cols + off..i * cols + off + m.cols].copy_from_slice(m.row(i));
                off += m.cols;
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        let mut v = Mat::zeros(x.rows, len);
        for i in 0..x.rows {
            v.data[i * len..(i + 1) * len].copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for i in 0..v.rows {
            let r = &mut v.data[i * x.cols..(i + 1) * x.cols];
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for e in r.iter_mut() {
                *e = (*e - max).exp();
                sum += *e;
            }
            r.iter_mut().for_each(|e| *e /= sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        let mut v = self.value(a).clone();
        assert_eq!(v.len(), mask.len(), "mask length mismatch");
        for (x, m) in v.data.iter_mut().zip(&mask) {
            *x *= m;
        }
        self.push(v, Op::Mask(a, mask))
    }

    /// Propagates `seed` (the gradient of some scalar w.r.t. `out`) back through
    /// the tape. Entry `k` of the result is the gradient for node `k`, if any.
    pub fn backward(&self, out: Var, seed: Mat) -> Vec<Option<Mat>> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        {
            let o = self.value(out);
            assert_eq!((o.rows, o.cols), (seed.rows, seed.cols), "seed shape mismatch");
        }
        grads[out.0] = Some(seed);
        for k in (0..=out.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            let node = &self.nodes[k];
            match &node.op {
                Op::Leaf => {
                    grads[k] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.matmul(self.value(*b));
                    let gb = g.t_matmul(self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    accumulate(&mut grads, *bias, g.col_sums());
                    accumulate(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    for (d, x) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        if *x <= 0.0 {
                            *d = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|d| *d *= s);
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let (rows, cols) = (xhat.rows, xhat.cols);
                    let gv = self.value(*gain);
                    let mut ggain = Mat::zeros(1, cols);
                    let mut gx = Mat::zeros(rows, cols);
                    for i in 0..rows {
                        let dy = g.row(i);
                        let xh = xhat.row(i);
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..cols {
                            ggain.data[j] += dy[j] * xh[j];
                            let d = dy[j] * gv.data[j];
                            mean_d += d;
                            mean_dx += d * xh[j];
                        }
                        mean_d /= cols as f64;
                        mean_dx /= cols as f64;
                        for j in 0..cols {
                            let d = dy[j] * gv.data[j];
                            gx.data[i * cols + j] = inv_std[i] * (d - mean_d - xh[j] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *bias, g.col_sums());
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *x, gx);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows;
                    let mut ga = Mat::from_vec(rows, g.cols, g.data.repeat(rows));
                    ga.data.iter_mut().for_each(|d| *d /= rows as f64);
                    accumulate(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => accumulate(&mut grads, *a, g.col_sums()),
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols;
                        let mut gp = Mat::zeros(g.rows, c);
                        for i in 0..g.rows {
                            gp.data[i * c..(i + 1) * c].copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut ga = Mat::zeros(src.rows, src.cols);
                    for i in 0..g.rows {
                        ga.data[i * src.cols + start..i * src.cols + start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Mat::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let (yr, dr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                        for j in 0..y.cols {
                            ga.data[i * y.cols + j] = yr[j] * (dr[j] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mask(a, mask) => {
                    let mut ga = g;
                    for (d, m) in ga.data.iter_mut().zip(mask) {
                        *d *= m;
                    }
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        grads
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}
