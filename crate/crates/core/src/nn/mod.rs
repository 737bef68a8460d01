//! Minimal tape-based reverse-mode automatic differentiation over row-major
//! matrices.
//!
//! A [`Graph`] records operations as they are applied to [`Var`] handles.
//! Parameters live in a [`ParamStore`] borrowed by the graph; calling
//! [`Graph::backward`] on a scalar node returns [`Gradients`] indexed by
//! parameter id. Everything is generic over [`Scalar`] so training can run in
//! `f32` while gradient checks run in `f64`.

mod graph;
mod init;
mod scalar;

pub use graph::{Graph, Var};
pub use init::{xavier_uniform, Initializer};
pub use scalar::Scalar;

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: F) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self::from_vec(rows, cols, data.iter().map(|&x| F::lit(x)).collect())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn cast<G: Scalar>(&self) -> Mat<G> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| G::lit(x.to_f64())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Mat<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: F) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `c = op(a) · op(b) + beta · c` for row-major matrices. `a` is `ar × ac`
/// before the optional transpose, likewise `b`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<F: Scalar>(
    a: &[F],
    ar: usize,
    ac: usize,
    trans_a: bool,
    b: &[F],
    br: usize,
    bc: usize,
    trans_b: bool,
    beta: F,
    c: &mut [F],
) {
    let (m, k, rsa, csa) = if trans_a { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (kb, n, rsb, csb) = if trans_b { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    assert_eq!(k, kb, "inner dimensions differ");
    assert_eq!(a.len(), ar * ac);
    assert_eq!(b.len(), br * bc);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in c.iter_mut() {
            *x *= beta;
        }
        return;
    }
    // SAFETY: dimensions and strides describe the slices checked above.
    unsafe {
        F::gemm_raw(
            m,
            k,
            n,
            F::one(),
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Mat<F>>,
    index: HashMap<String, usize>,
}

impl<F: Scalar> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Adds a tensor, replacing any existing tensor of the same name.
    pub fn insert(&mut self, name: impl Into<String>, value: Mat<F>) -> ParamId {
        let name = name.into();
        if let Some(&i) = self.index.get(&name) {
            self.tensors[i] = value;
            return ParamId(i);
        }
        let id = self.tensors.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(value);
        ParamId(id)
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::Format(format!("missing parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn get(&self, id: ParamId) -> &Mat<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Mat<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Mat<F>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Mat<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.cast()).collect(),
            index: self.index.clone(),
        }
    }

    /// Copies every tensor whose name starts with `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &ParamStore<F>, prefix: &str) -> Result<()> {
        for (_, name, t) in other.iter().filter(|(_, n, _)| n.starts_with(prefix)) {
            let id = self.id(name)?;
            if self.get(id).shape() != t.shape() {
                return Err(Error::Format(format!("shape mismatch copying {name}")));
            }
            *self.get_mut(id) = t.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<F> {
    grads: Vec<Option<Mat<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn new(n_params: usize) -> Self {
        Self {
            grads: vec![None; n_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat<F>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn accumulate_owned(&mut self, id: ParamId, g: Mat<F>) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    pub fn merge(&mut self, other: Gradients<F>) {
        for (i, g) in other.grads.into_iter().enumerate() {
            if let Some(g) = g {
                self.accumulate_owned(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.grads.iter_mut().flatten() {
            g.scale(s);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Mat<F>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    pub fn check_finite(&self, store: &ParamStore<F>) -> Result<()> {
        for (id, g) in self.iter() {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of {}", store.name(id))));
            }
        }
        Ok(())
    }
}
