use std::collections::HashMap;

use super::{gemm, Gradients, Mat, ParamId, ParamStore, Scalar};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Input,
    Param(ParamId),
    MatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Relu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Mat<F>, inv_std: Vec<F> },
    SliceCols { a: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    GatherRows { table: Var, ids: Vec<usize> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Mat<F> },
    Bce { logits: Var, targets: Vec<F> },
    WeightedSum(Vec<(Var, F)>),
    MulConst { a: Var, mask: Mat<F> },
}

struct Node<F> {
    value: Option<Mat<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records a forward computation for later differentiation.
pub struct Graph<'p, F: Scalar> {
    params: &'p ParamStore<F>,
    nodes: Vec<Node<F>>,
    param_vars: HashMap<ParamId, Var>,
    track: bool,
}

impl<'p, F: Scalar> Graph<'p, F> {
    pub fn new(params: &'p ParamStore<F>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            track: true,
        }
    }

    /// A graph that never differentiates; parameters are treated as constants.
    pub fn inference(params: &'p ParamStore<F>) -> Self {
        Self {
            track: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamStore<F> {
        self.params
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.get(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, inputs: &[Var]) -> Var {
        let needs_grad = self.track && inputs.iter().any(|&v| self.needs(v));
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, value: Mat<F>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op: Op::Input,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
            needs_grad: self.track,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    pub fn param_named(&mut self, name: &str) -> Result<Var> {
        let id = self.params.id(name)?;
        Ok(self.param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        let n = if trans_b { br } else { bc };
        let mut out = Mat::zeros(ar, n);
        gemm(
            &self.value(a).data,
            ar,
            ac,
            false,
            &self.value(b).data,
            br,
            bc,
            trans_b,
            F::zero(),
            &mut out.data,
        );
        self.push(out, Op::MatMul { a, b, trans_b }, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, cols) = self.shape(a);
        assert_eq!(self.shape(row), (1, cols), "add_row shape mismatch");
        let mut out = self.value(a).clone();
        let r = &self.value(row).data;
        for chunk in out.data.chunks_mut(cols) {
            for (x, &b) in chunk.iter_mut().zip(r) {
                *x += b;
            }
        }
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `a · w + b` with `w` of shape `in × out` and `b` of shape `1 × out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.matmul(x, w);
        self.add_row(y, b)
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let mut out = self.value(a).clone();
        out.scale(s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for x in &mut out.data {
            if *x < F::zero() {
                *x = F::zero();
            }
        }
        self.push(out, Op::Relu(a), &[a])
    }

    /// Row-wise softmax. With `causal`, row `i` only attends to columns `<= i`.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for (i, row) in out.data.chunks_mut(cols).enumerate() {
            let limit = if causal { (i + 1).min(cols) } else { cols };
            let max = row[..limit].iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut sum = F::zero();
            for x in &mut row[..limit] {
                *x = (*x - max).exp();
                sum += *x;
            }
            for x in &mut row[..limit] {
                *x /= sum;
            }
            for x in &mut row[limit..] {
                *x = F::zero();
            }
        }
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (rows, cols) = self.shape(x);
        let xv = self.value(x);
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let n = F::lit(cols as f64);
        let eps = F::lit(LAYER_NORM_EPS);
        let mut xhat = Mat::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + eps).sqrt();
            inv_std.push(is);
            let xh = xhat.row_mut(r);
            for c in 0..cols {
                xh[c] = (row[c] - mean) * is;
            }
            let o = out.row_mut(r);
            for c in 0..cols {
                o[c] = xhat.data[r * cols + c] * g[c] + b[c];
            }
        }
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let av = self.value(a);
        assert!(start + len <= av.cols);
        let mut out = Mat::zeros(av.rows, len);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..start + len]);
        }
        self.push(out, Op::SliceCols { a, start }, &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows);
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols);
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Mean over rows, giving `1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros(1, av.cols);
        for r in 0..av.rows {
            for (o, &x) in out.data.iter_mut().zip(av.row(r)) {
                *o += x;
            }
        }
        out.scale(F::one() / F::lit(av.rows as f64));
        self.push(out, Op::MeanRows(a), &[a])
    }

    /// Selects rows of `table` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let tv = self.value(table);
        let mut out = Mat::zeros(ids.len(), tv.cols);
        for (i, &id) in ids.iter().enumerate() {
            out.row_mut(i).copy_from_slice(tv.row(id));
        }
        self.push(
            out,
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        )
    }

    /// Mean categorical cross-entropy of row-wise logits against class ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len());
        let mut probs = lv.clone();
        let mut total = 0.0f64;
        for (r, &t) in targets.iter().enumerate() {
            let row = probs.row_mut(r);
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut sum = F::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                sum += *x;
            }
            let logit_t = lv.at(r, t);
            total += (max + sum.ln() - logit_t).to_f64();
            for x in row.iter_mut() {
                *x /= sum;
            }
        }
        let loss = total / targets.len() as f64;
        self.push(
            Mat::from_f64(1, 1, &[loss]),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Mean binary cross-entropy of an `n × 1` logit column against soft
    /// targets, using the overflow-free logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[F]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.shape(), (targets.len(), 1));
        let total: f64 = lv
            .data
            .iter()
            .zip(targets)
            .map(|(&z, &y)| crate::train::bce_with_logits(z.to_f64(), y.to_f64()))
            .sum();
        let loss = total / targets.len() as f64;
        self.push(
            Mat::from_f64(1, 1, &[loss]),
            Op::Bce {
                logits,
                targets: targets.to_vec(),
            },
            &[logits],
        )
    }

    /// Weighted sum of `1 × 1` nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, F)]) -> Var {
        let mut total = F::zero();
        for &(v, w) in terms {
            assert_eq!(self.shape(v), (1, 1));
            total += self.value(v).data[0] * w;
        }
        let inputs: Vec<Var> = terms.iter().map(|t| t.0).collect();
        self.push(Mat::from_vec(1, 1, vec![total]), Op::WeightedSum(terms.to_vec()), &inputs)
    }

    /// Element-wise product with a constant (e.g. a dropout mask).
    pub fn mul_const(&mut self, a: Var, mask: Mat<F>) -> Var {
        let mut out = self.value(a).clone();
        assert_eq!(out.shape(), mask.shape());
        for (x, &m) in out.data.iter_mut().zip(&mask.data) {
            *x *= m;
        }
        self.push(out, Op::MulConst { a, mask }, &[a])
    }

    pub fn scalar(&self, v: Var) -> F {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Numeric("backward requires a scalar loss".into()));
        }
        let mut out = Gradients::new(self.params.len());
        if !self.needs(loss) {
            return Ok(out);
        }
        let mut grads: Vec<Option<Mat<F>>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Mat::filled(1, 1, F::one()));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => out.accumulate_owned(*id, g),
                Op::MatMul { a, b, trans_b } => {
                    let (a, b, tb) = (*a, *b, *trans_b);
                    let av = self.value(a);
                    let bv = self.value(b);
                    if self.needs(a) {
                        let ga = self.slot(&mut grads, a);
                        // dA = dC · op(B)ᵀ
                        gemm(&g.data, g.rows, g.cols, false, &bv.data, bv.rows, bv.cols, !tb, F::one(), &mut ga.data);
                    }
                    if self.needs(b) {
                        let gb = self.slot(&mut grads, b);
                        if tb {
                            // C = A Bᵀ  ⇒  dB = dCᵀ · A
                            gemm(&g.data, g.rows, g.cols, true, &av.data, av.rows, av.cols, false, F::one(), &mut gb.data);
                        } else {
                            gemm(&av.data, av.rows, av.cols, true, &g.data, g.rows, g.cols, false, F::one(), &mut gb.data);
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if self.needs(v) {
                            self.slot(&mut grads, v).add_assign(&g);
                        }
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*a) {
                        self.slot(&mut grads, *a).add_assign(&g);
                    }
                    if self.needs(*row) {
                        let gr = self.slot(&mut grads, *row);
                        for chunk in g.data.chunks(g.cols) {
                            for (o, &x) in gr.data.iter_mut().zip(chunk) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Scale(a, s) => {
                    if self.needs(*a) {
                        let ga = self.slot(&mut grads, *a);
                        for (o, &x) in ga.data.iter_mut().zip(&g.data) {
                            *o += x * *s;
                        }
                    }
                }
                Op::Relu(a) => {
                    if self.needs(*a) {
                        let y = node.value.as_ref().unwrap();
                        let ga = self.slot(&mut grads, *a);
                        for ((o, &x), &yv) in ga.data.iter_mut().zip(&g.data).zip(&y.data) {
                            if yv > F::zero() {
                                *o += x;
                            }
                        }
                    }
                }
                Op::Softmax(a) => {
                    if self.needs(*a) {
                        let y = node.value.as_ref().unwrap();
                        let ga = self.slot(&mut grads, *a);
                        let cols = y.cols;
                        for r in 0..y.rows {
                            let yr = y.row(r);
                            let gr = &g.data[r * cols..(r + 1) * cols];
                            let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                            let orow = &mut ga.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                orow[c] += yr[c] * (gr[c] - dot);
                            }
                        }
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let cols = xhat.cols;
                    let gv = &self.value(*gain).data;
                    if self.needs(*gain) {
                        let gg = self.slot(&mut grads, *gain);
                        for r in 0..xhat.rows {
                            for c in 0..cols {
                                gg.data[c] += g.data[r * cols + c] * xhat.data[r * cols + c];
                            }
                        }
                    }
                    if self.needs(*bias) {
                        let gb = self.slot(&mut grads, *bias);
                        for chunk in g.data.chunks(cols) {
                            for (o, &v) in gb.data.iter_mut().zip(chunk) {
                                *o += v;
                            }
                        }
                    }
                    if self.needs(*x) {
                        let n = F::lit(cols as f64);
                        let gx = self.slot(&mut grads, *x);
                        let mut dxhat = vec![F::zero(); cols];
                        for r in 0..xhat.rows {
                            let xh = xhat.row(r);
                            let gr = &g.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                dxhat[c] = gr[c] * gv[c];
                            }
                            let mean_d = dxhat.iter().copied().sum::<F>() / n;
                            let mean_dx = dxhat.iter().zip(xh).map(|(&d, &h)| d * h).sum::<F>() / n;
                            let out = &mut gx.data[r * cols..(r + 1) * cols];
                            for c in 0..cols {
                                out[c] += inv_std[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                            }
                        }
                    }
                }
                Op::SliceCols { a, start } => {
                    if self.needs(*a) {
                        let ga = self.slot(&mut grads, *a);
                        let acols = ga.cols;
                        for r in 0..g.rows {
                            let dst = &mut ga.data[r * acols + start..r * acols + start + g.cols];
                            for (o, &x) in dst.iter_mut().zip(g.row(r)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let pc = self.shape(p).1;
                        if self.needs(p) {
                            let gp = self.slot(&mut grads, p);
                            for r in 0..g.rows {
                                let src = &g.row(r)[off..off + pc];
                                for (o, &x) in gp.row_mut(r).iter_mut().zip(src) {
                                    *o += x;
                                }
                            }
                        }
                        off += pc;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.value(p).len();
                        if self.needs(p) {
                            let gp = self.slot(&mut grads, p);
                            for (o, &x) in gp.data.iter_mut().zip(&g.data[off..off + n]) {
                                *o += x;
                            }
                        }
                        off += n;
                    }
                }
                Op::MeanRows(a) => {
                    if self.needs(*a) {
                        let ga = self.slot(&mut grads, *a);
                        let inv = F::one() / F::lit(ga.rows as f64);
                        for r in 0..ga.rows {
                            for (o, &x) in ga.row_mut(r).iter_mut().zip(&g.data) {
                                *o += x * inv;
                            }
                        }
                    }
                }
                Op::GatherRows { table, ids } => {
                    if self.needs(*table) {
                        let gt = self.slot(&mut grads, *table);
                        for (i, &id) in ids.iter().enumerate() {
                            for (o, &x) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                                *o += x;
                            }
                        }
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    if self.needs(*logits) {
                        let scale = g.data[0] / F::lit(targets.len() as f64);
                        let gl = self.slot(&mut grads, *logits);
                        for (r, &t) in targets.iter().enumerate() {
                            let pr = probs.row(r);
                            let orow = gl.row_mut(r);
                            for c in 0..pr.len() {
                                let onehot = if c == t { F::one() } else { F::zero() };
                                orow[c] += (pr[c] - onehot) * scale;
                            }
                        }
                    }
                }
                Op::Bce { logits, targets } => {
                    if self.needs(*logits) {
                        let scale = g.data[0] / F::lit(targets.len() as f64);
                        let zs = self.value(*logits).data.clone();
                        let gl = self.slot(&mut grads, *logits);
                        for ((o, &z), &y) in gl.data.iter_mut().zip(&zs).zip(targets) {
                            let p = F::one() / (F::one() + (-z).exp());
                            *o += (p - y) * scale;
                        }
                    }
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        if self.needs(v) {
                            self.slot(&mut grads, v).data[0] += g.data[0] * w;
                        }
                    }
                }
                Op::MulConst { a, mask } => {
                    if self.needs(*a) {
                        let ga = self.slot(&mut grads, *a);
                        for ((o, &x), &m) in ga.data.iter_mut().zip(&g.data).zip(&mask.data) {
                            *o += x * m;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Mat<F>>], v: Var) -> &'g mut Mat<F> {
        let (r, c) = self.shape(v);
        grads[v.0].get_or_insert_with(|| Mat::zeros(r, c))
    }
}
