//! Minimal reverse-mode automatic differentiation over dense row-major
//! matrices.
//!
//! A [`Tape`] records one forward pass. Trainable arrays live in a
//! [`ParamStore`]; ops that read parameters take the store by reference and
//! [`Tape::backward`] accumulates parameter gradients into it. A tape is
//! single use: after `backward` it is empty and rejects a second call.
//!
//! Only the ops needed by the encoders and losses are provided. Every op
//! checks shapes eagerly and reports both shapes on mismatch.

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, Range, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Floating-point element type of values and parameters.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite constant")
    }

    fn f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    acc.iter().fold(s, |s, &a| s + a)
}

/// `y += a * x`
#[inline]
pub(crate) fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Initialization scheme for a new parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// uniform(-a, a)
    Uniform(f64),
    /// uniform(-l, l) with l = sqrt(6 / (rows + cols)).
    XavierUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
    pub grad: Vec<T>,
    /// Frozen parameters still receive no updates from `sgd_step`.
    pub frozen: bool,
    dirty_all: bool,
    dirty_rows: Vec<usize>,
    row_flag: Vec<bool>,
}

impl<T: Real> Param<T> {
    fn new(name: String, rows: usize, cols: usize, data: Vec<T>) -> Self {
        Param {
            name,
            rows,
            cols,
            grad: vec![T::zero(); data.len()],
            data,
            frozen: false,
            dirty_all: false,
            dirty_rows: Vec::new(),
            row_flag: vec![false; rows],
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn mark_all(&mut self) {
        self.dirty_all = true;
    }

    fn mark_row(&mut self, r: usize) {
        if !self.row_flag[r] {
            self.row_flag[r] = true;
            self.dirty_rows.push(r);
        }
    }

    /// Rows holding nonzero gradient since the last update, or `None` when
    /// the whole array is dirty.
    fn dirty_ranges(&self) -> Vec<Range<usize>> {
        if self.dirty_all {
            vec![0..self.data.len()]
        } else {
            self.dirty_rows
                .iter()
                .map(|&r| r * self.cols..(r + 1) * self.cols)
                .collect()
        }
    }

    fn clear_grad(&mut self) {
        for range in self.dirty_ranges() {
            self.grad[range].iter_mut().for_each(|g| *g = T::zero());
        }
        for &r in &self.dirty_rows {
            self.row_flag[r] = false;
        }
        self.dirty_rows.clear();
        self.dirty_all = false;
    }

    pub fn has_grad(&self) -> bool {
        self.dirty_all || !self.dirty_rows.is_empty()
    }
}

/// Named trainable arrays.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = rows * cols;
        let data: Vec<T> = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Constant(c) => vec![T::of(c); n],
            Init::Uniform(a) => (0..n).map(|_| T::of(rng.gen_range(-a..=a))).collect(),
            Init::XavierUniform => {
                let l = (6.0 / (rows + cols) as f64).sqrt();
                (0..n).map(|_| T::of(rng.gen_range(-l..=l))).collect()
            }
        };
        self.insert(name, rows, cols, data)
    }

    pub fn insert(&mut self, name: &str, rows: usize, cols: usize, data: Vec<T>) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "parameter `{name}`: {} values for shape {rows}x{cols}",
                data.len()
            )));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.to_string(), id);
        self.params.push(Param::new(name.to_string(), rows, cols, data));
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    /// Global L2 norm of the pending gradient over non-frozen parameters.
    pub fn grad_norm(&self) -> Result<f64> {
        let mut sq = 0.0f64;
        for p in self.params.iter().filter(|p| !p.frozen && p.has_grad()) {
            let mut local = 0.0f64;
            for range in p.dirty_ranges() {
                for g in &p.grad[range] {
                    let g = g.f64();
                    local += g * g;
                }
            }
            if !local.is_finite() {
                return Err(Error::NonFiniteGradient(p.name.clone()));
            }
            sq += local;
        }
        Ok(sq.sqrt())
    }

    /// `p <- p - lr * g` after scaling all gradients so their global norm is
    /// at most `clip_norm`. Zeroes every gradient, frozen or not. Returns the
    /// norm measured before clipping.
    pub fn sgd_step(&mut self, learning_rate: f64, clip_norm: Option<f64>) -> Result<f64> {
        let norm = match self.grad_norm() {
            Ok(n) => n,
            Err(e) => {
                self.zero_grad();
                return Err(e);
            }
        };
        let scale = match clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        let step = T::of(learning_rate * scale);
        for p in self.params.iter_mut() {
            if !p.has_grad() {
                continue;
            }
            if !p.frozen && learning_rate != 0.0 {
                for range in p.dirty_ranges() {
                    let (data, grad) = (&mut p.data[range.clone()], &p.grad[range]);
                    for (d, &g) in data.iter_mut().zip(grad) {
                        *d -= step * g;
                    }
                }
            }
            p.clear_grad();
        }
        Ok(norm)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.iter_mut() {
            p.clear_grad();
        }
    }
}

/// Weights of one LSTM direction: `w` is `4H x (D + H)` with gate blocks in
/// the order input, forget, cell, output; `b` is `1 x 4H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Embed {
        table: ParamId,
        ids: Vec<usize>,
    },
    Row {
        src: Var,
        row: usize,
    },
    Slice {
        src: Var,
        start: usize,
    },
    LstmStep {
        x: Var,
        h: Option<Var>,
        c: Option<Var>,
        cell: LstmParams,
        /// post-activation gates i, f, g, o
        gates: Vec<T>,
        tanh_c: Vec<T>,
    },
    StackRows(Vec<Var>),
    ConcatCols(Var, Var),
    MaxPool {
        src: Var,
        argmax: Vec<usize>,
    },
    MeanRows(Var),
    L2Normalize {
        src: Var,
        norm: T,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Distance {
        a: Var,
        b: Var,
    },
    Hinge {
        x: Var,
        active: bool,
    },
    Affine {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    Tanh(Var),
    Sum(Var),
    SoftmaxXent {
        logits: Var,
        target: usize,
        probs: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    rows: usize,
    cols: usize,
    value: Vec<T>,
    op: Op<T>,
}

/// Records a forward computation for one backward pass.
#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::contract(format!(
        "{op}: incompatible shapes {}x{} and {}x{}",
        a.0, a.1, b.0, b.1
    ))
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            spent: false,
        }
    }

    fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        if value.len() != rows * cols {
            return Err(Error::contract(format!(
                "constant: {} values for shape {rows}x{cols}",
                value.len()
            )));
        }
        Ok(self.push(rows, cols, value, Op::Leaf))
    }

    /// The whole parameter as a node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let p = store.get(id);
        self.push(p.rows, p.cols, p.data.clone(), Op::Param(id))
    }

    /// Rows `ids` of an embedding table, one output row per id.
    pub fn embed_lookup(&mut self, store: &ParamStore<T>, table: ParamId, ids: &[usize]) -> Result<Var> {
        let p = store.get(table);
        let mut value = Vec::with_capacity(ids.len() * p.cols);
        for &id in ids {
            if id >= p.rows {
                return Err(Error::contract(format!(
                    "embed_lookup: id {id} out of range for `{}` with {} rows",
                    p.name, p.rows
                )));
            }
            value.extend_from_slice(p.row(id));
        }
        Ok(self.push(
            ids.len(),
            p.cols,
            value,
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    pub fn row(&mut self, src: Var, row: usize) -> Result<Var> {
        let (r, c) = self.shape(src);
        if row >= r {
            return Err(Error::contract(format!("row: index {row} out of {r} rows")));
        }
        let value = self.value(src)[row * c..(row + 1) * c].to_vec();
        Ok(self.push(1, c, value, Op::Row { src, row }))
    }

    /// Columns `start..start + len` of a row vector.
    pub fn slice(&mut self, src: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(src);
        if r != 1 || start + len > c {
            return Err(Error::contract(format!(
                "slice: {start}..{} of a {r}x{c} value",
                start + len
            )));
        }
        let value = self.value(src)[start..start + len].to_vec();
        Ok(self.push(1, len, value, Op::Slice { src, start }))
    }

    /// One LSTM time step. Missing previous state means zeros. Returns the
    /// new hidden and cell state, each `1 x H`.
    pub fn lstm_step(
        &mut self,
        store: &ParamStore<T>,
        x: Var,
        h_prev: Option<Var>,
        c_prev: Option<Var>,
        cell: &LstmParams,
    ) -> Result<(Var, Var)> {
        let (d, hd) = (cell.input, cell.hidden);
        if self.shape(x) != (1, d) {
            return Err(shape_err("lstm_step input", self.shape(x), (1, d)));
        }
        for s in [h_prev, c_prev].into_iter().flatten() {
            if self.shape(s) != (1, hd) {
                return Err(shape_err("lstm_step state", self.shape(s), (1, hd)));
            }
        }
        let w = store.get(cell.w);
        let b = store.get(cell.b);
        if (w.rows, w.cols) != (4 * hd, d + hd) || b.data.len() != 4 * hd {
            return Err(shape_err("lstm_step weights", (w.rows, w.cols), (4 * hd, d + hd)));
        }
        let xv = self.value(x);
        let hv = h_prev.map(|h| self.value(h));
        let mut gates = b.data.clone();
        for (r, g) in gates.iter_mut().enumerate() {
            let wr = w.row(r);
            let mut s = dot(&wr[..d], xv);
            if let Some(hv) = hv {
                s += dot(&wr[d..], hv);
            }
            *g += s;
        }
        let sigmoid = |z: T| T::one() / (T::one() + (-z).exp());
        for k in 0..hd {
            gates[k] = sigmoid(gates[k]);
            gates[hd + k] = sigmoid(gates[hd + k]);
            gates[2 * hd + k] = gates[2 * hd + k].tanh();
            gates[3 * hd + k] = sigmoid(gates[3 * hd + k]);
        }
        let cv = c_prev.map(|c| self.value(c));
        let mut state = vec![T::zero(); 2 * hd];
        let mut tanh_c = vec![T::zero(); hd];
        for k in 0..hd {
            let prev = cv.map_or(T::zero(), |c| c[k]);
            let c_new = gates[hd + k] * prev + gates[k] * gates[2 * hd + k];
            tanh_c[k] = c_new.tanh();
            state[k] = gates[3 * hd + k] * tanh_c[k];
            state[hd + k] = c_new;
        }
        let step = self.push(
            1,
            2 * hd,
            state,
            Op::LstmStep {
                x,
                h: h_prev,
                c: c_prev,
                cell: *cell,
                gates,
                tanh_c,
            },
        );
        Ok((self.slice(step, 0, hd)?, self.slice(step, hd, hd)?))
    }

    /// Stacks `1 x C` rows into an `N x C` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::contract("stack_rows: no rows"))?;
        let c = self.shape(*first).1;
        let mut value = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            if self.shape(r) != (1, c) {
                return Err(shape_err("stack_rows", self.shape(r), (1, c)));
            }
            value.extend_from_slice(self.value(r));
        }
        Ok(self.push(rows.len(), c, value, Op::StackRows(rows.to_vec())))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ra != rb {
            return Err(shape_err("concat_cols", (ra, ca), (rb, cb)));
        }
        let mut value = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            value.extend_from_slice(&self.value(a)[r * ca..(r + 1) * ca]);
            value.extend_from_slice(&self.value(b)[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(ra, ca + cb, value, Op::ConcatCols(a, b)))
    }

    /// Column-wise max over rows `span`. The gradient goes to the first row
    /// attaining each maximum.
    pub fn masked_max_pool(&mut self, src: Var, span: Range<usize>) -> Result<Var> {
        let (r, c) = self.shape(src);
        if span.is_empty() || span.end > r {
            return Err(Error::contract(format!(
                "masked_max_pool: span {}..{} invalid for {r} rows",
                span.start, span.end
            )));
        }
        let v = self.value(src);
        let mut argmax = vec![span.start; c];
        let mut out = v[span.start * c..(span.start + 1) * c].to_vec();
        for row in span.start + 1..span.end {
            for j in 0..c {
                let x = v[row * c + j];
                if x > out[j] {
                    out[j] = x;
                    argmax[j] = row;
                }
            }
        }
        Ok(self.push(1, c, out, Op::MaxPool { src, argmax }))
    }

    pub fn mean_rows(&mut self, src: Var) -> Result<Var> {
        let (r, c) = self.shape(src);
        if r == 0 {
            return Err(Error::contract("mean_rows: no rows"));
        }
        let v = self.value(src);
        let mut out = vec![T::zero(); c];
        for row in 0..r {
            for j in 0..c {
                out[j] += v[row * c + j];
            }
        }
        let inv = T::one() / T::of(r as f64);
        out.iter_mut().for_each(|x| *x *= inv);
        Ok(self.push(1, c, out, Op::MeanRows(src)))
    }

    /// `v / ||v||`; a zero vector stays zero.
    pub fn l2_normalize(&mut self, src: Var) -> Var {
        let (r, c) = self.shape(src);
        let v = self.value(src);
        let norm = dot(v, v).sqrt();
        let out = if norm > T::zero() {
            v.iter().map(|&x| x / norm).collect()
        } else {
            vec![T::zero(); v.len()]
        };
        self.push(r, c, out, Op::L2Normalize { src, norm })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x + y).collect();
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| x - y).collect();
        let (r, c) = self.shape(a);
        Ok(self.push(r, c, value, Op::Sub(a, b)))
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    /// `||a - b||_2` as a `1 x 1` value. At `a = b` the subgradient is zero.
    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("euclidean_distance", a, b)?;
        let d = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| (x - y) * (x - y))
            .fold(T::zero(), |s, x| s + x)
            .sqrt();
        Ok(self.push(1, 1, vec![d], Op::Distance { a, b }))
    }

    /// `[margin + x]_+` for a scalar `x`.
    pub fn hinge(&mut self, x: Var, margin: T) -> Result<Var> {
        if self.shape(x) != (1, 1) {
            return Err(shape_err("hinge", self.shape(x), (1, 1)));
        }
        let z = margin + self.scalar(x);
        let active = z > T::zero();
        let out = if active { z } else { T::zero() };
        Ok(self.push(1, 1, vec![out], Op::Hinge { x, active }))
    }

    /// `W x + b` for a row vector `x` (`1 x in`), `W` of shape `out x in`.
    pub fn affine(&mut self, store: &ParamStore<T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wp = store.get(w);
        let bp = store.get(b);
        if self.shape(x) != (1, wp.cols) || bp.data.len() != wp.rows {
            return Err(shape_err("affine", self.shape(x), (wp.rows, wp.cols)));
        }
        let xv = self.value(x);
        let out: Vec<T> = (0..wp.rows).map(|r| bp.data[r] + dot(wp.row(r), xv)).collect();
        Ok(self.push(1, wp.rows, out, Op::Affine { x, w, b }))
    }

    pub fn tanh(&mut self, src: Var) -> Var {
        let (r, c) = self.shape(src);
        let value = self.value(src).iter().map(|x| x.tanh()).collect();
        self.push(r, c, value, Op::Tanh(src))
    }

    pub fn sum(&mut self, src: Var) -> Var {
        let s = self.value(src).iter().fold(T::zero(), |s, &x| s + x);
        self.push(1, 1, vec![s], Op::Sum(src))
    }

    /// Cross-entropy of `softmax(logits)` against class `target`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let (r, c) = self.shape(logits);
        if r != 1 || target >= c {
            return Err(Error::contract(format!(
                "softmax_cross_entropy: target {target} for {r}x{c} logits"
            )));
        }
        let probs = softmax(self.value(logits));
        let loss = -probs[target].max(T::min_positive_value()).ln();
        Ok(self.push(1, 1, vec![loss], Op::SoftmaxXent { logits, target, probs }))
    }

    /// Backpropagates from scalar `loss`, accumulating parameter gradients
    /// into `store`. Clears the tape; a second call is rejected.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.spent {
            return Err(Error::contract("backward called twice on one tape"));
        }
        if loss.0 >= self.nodes.len() || self.shape(loss) != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.nodes.get(loss.0).map(|n| (n.rows, n.cols))
            )));
        }
        self.spent = true;
        let nodes = std::mem::take(&mut self.nodes);
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if !p.frozen {
                        p.grad.iter_mut().zip(&g).for_each(|(a, &b)| *a += b);
                        p.mark_all();
                    }
                }
                Op::Embed { table, ids } => {
                    let p = store.get_mut(*table);
                    if !p.frozen {
                        let c = p.cols;
                        for (k, &id) in ids.iter().enumerate() {
                            let dst = &mut p.grad[id * c..(id + 1) * c];
                            dst.iter_mut().zip(&g[k * c..(k + 1) * c]).for_each(|(a, &b)| *a += b);
                            p.mark_row(id);
                        }
                    }
                }
                Op::Row { src, row } => {
                    let c = node.cols;
                    let dst = acc(&mut grads, &nodes, *src);
                    dst[row * c..(row + 1) * c]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, &b)| *a += b);
                }
                Op::Slice { src, start } => {
                    let dst = acc(&mut grads, &nodes, *src);
                    dst[*start..start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, &b)| *a += b);
                }
                Op::LstmStep {
                    x,
                    h,
                    c,
                    cell,
                    gates,
                    tanh_c,
                } => {
                    let hd = cell.hidden;
                    let d = cell.input;
                    let (dh, dc_out) = g.split_at(hd);
                    let c_prev = c.map(|c| nodes[c.0].value.as_slice());
                    let mut dgates = vec![T::zero(); 4 * hd];
                    let mut dc_prev = vec![T::zero(); hd];
                    for k in 0..hd {
                        let (ig, fg, gg, og) = (gates[k], gates[hd + k], gates[2 * hd + k], gates[3 * hd + k]);
                        let tc = tanh_c[k];
                        let dc = dc_out[k] + dh[k] * og * (T::one() - tc * tc);
                        let d_o = dh[k] * tc;
                        let d_i = dc * gg;
                        let d_g = dc * ig;
                        let d_f = dc * c_prev.map_or(T::zero(), |c| c[k]);
                        dc_prev[k] = dc * fg;
                        dgates[k] = d_i * ig * (T::one() - ig);
                        dgates[hd + k] = d_f * fg * (T::one() - fg);
                        dgates[2 * hd + k] = d_g * (T::one() - gg * gg);
                        dgates[3 * hd + k] = d_o * og * (T::one() - og);
                    }
                    let xv = &nodes[x.0].value;
                    let hv = h.map(|h| nodes[h.0].value.as_slice());
                    let mut dx = vec![T::zero(); d];
                    let mut dhp = vec![T::zero(); hd];
                    {
                        let wp = store.get(cell.w);
                        for (r, &dg) in dgates.iter().enumerate() {
                            if dg == T::zero() {
                                continue;
                            }
                            let wr = wp.row(r);
                            axpy(dg, &wr[..d], &mut dx);
                            if h.is_some() {
                                axpy(dg, &wr[d..], &mut dhp);
                            }
                        }
                    }
                    let wp = store.get_mut(cell.w);
                    if !wp.frozen {
                        let cols = wp.cols;
                        for (r, &dg) in dgates.iter().enumerate() {
                            if dg == T::zero() {
                                continue;
                            }
                            let gr = &mut wp.grad[r * cols..(r + 1) * cols];
                            axpy(dg, xv, &mut gr[..d]);
                            if let Some(hv) = hv {
                                axpy(dg, hv, &mut gr[d..]);
                            }
                        }
                        wp.mark_all();
                    }
                    let bp = store.get_mut(cell.b);
                    if !bp.frozen {
                        bp.grad.iter_mut().zip(&dgates).for_each(|(a, &b)| *a += b);
                        bp.mark_all();
                    }
                    acc(&mut grads, &nodes, *x)
                        .iter_mut()
                        .zip(&dx)
                        .for_each(|(a, &b)| *a += b);
                    if let Some(h) = h {
                        acc(&mut grads, &nodes, *h)
                            .iter_mut()
                            .zip(&dhp)
                            .for_each(|(a, &b)| *a += b);
                    }
                    if let Some(c) = c {
                        acc(&mut grads, &nodes, *c)
                            .iter_mut()
                            .zip(&dc_prev)
                            .for_each(|(a, &b)| *a += b);
                    }
                }
                Op::StackRows(rows) => {
                    let c = node.cols;
                    for (k, r) in rows.iter().enumerate() {
                        acc(&mut grads, &nodes, *r)
                            .iter_mut()
                            .zip(&g[k * c..(k + 1) * c])
                            .for_each(|(a, &b)| *a += b);
                    }
                }
                Op::ConcatCols(a, b) => {
                    let ca = nodes[a.0].cols;
                    let cb = nodes[b.0].cols;
                    for r in 0..node.rows {
                        let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        acc(&mut grads, &nodes, *a)[r * ca..(r + 1) * ca]
                            .iter_mut()
                            .zip(&row[..ca])
                            .for_each(|(x, &y)| *x += y);
                        acc(&mut grads, &nodes, *b)[r * cb..(r + 1) * cb]
                            .iter_mut()
                            .zip(&row[ca..])
                            .for_each(|(x, &y)| *x += y);
                    }
                }
                Op::MaxPool { src, argmax } => {
                    let c = node.cols;
                    let dst = acc(&mut grads, &nodes, *src);
                    for (j, &r) in argmax.iter().enumerate() {
                        dst[r * c + j] += g[j];
                    }
                }
                Op::MeanRows(src) => {
                    let r = nodes[src.0].rows;
                    let c = node.cols;
                    let inv = T::one() / T::of(r as f64);
                    let dst = acc(&mut grads, &nodes, *src);
                    for row in 0..r {
                        for j in 0..c {
                            dst[row * c + j] += g[j] * inv;
                        }
                    }
                }
                Op::L2Normalize { src, norm } => {
                    if *norm > T::zero() {
                        let y = &node.value;
                        let yg = dot(y, &g);
                        let dst = acc(&mut grads, &nodes, *src);
                        for k in 0..y.len() {
                            dst[k] += (g[k] - y[k] * yg) / *norm;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a).iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                    acc(&mut grads, &nodes, *b).iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a).iter_mut().zip(&g).for_each(|(x, &y)| *x += y);
                    acc(&mut grads, &nodes, *b).iter_mut().zip(&g).for_each(|(x, &y)| *x -= y);
                }
                Op::Distance { a, b } => {
                    let dist = node.value[0];
                    if dist > T::zero() {
                        let scale = g[0] / dist;
                        let diff: Vec<T> = nodes[a.0]
                            .value
                            .iter()
                            .zip(&nodes[b.0].value)
                            .map(|(&x, &y)| (x - y) * scale)
                            .collect();
                        acc(&mut grads, &nodes, *a).iter_mut().zip(&diff).for_each(|(x, &y)| *x += y);
                        acc(&mut grads, &nodes, *b).iter_mut().zip(&diff).for_each(|(x, &y)| *x -= y);
                    }
                }
                Op::Hinge { x, active } => {
                    if *active {
                        acc(&mut grads, &nodes, *x)[0] += g[0];
                    }
                }
                Op::Affine { x, w, b } => {
                    let xv = &nodes[x.0].value;
                    let mut dx = vec![T::zero(); xv.len()];
                    {
                        let wp = store.get(*w);
                        for (r, &gr) in g.iter().enumerate() {
                            axpy(gr, wp.row(r), &mut dx);
                        }
                    }
                    let wp = store.get_mut(*w);
                    if !wp.frozen {
                        let cols = wp.cols;
                        for (r, &gr) in g.iter().enumerate() {
                            axpy(gr, xv, &mut wp.grad[r * cols..(r + 1) * cols]);
                        }
                        wp.mark_all();
                    }
                    let bp = store.get_mut(*b);
                    if !bp.frozen {
                        bp.grad.iter_mut().zip(&g).for_each(|(a, &v)| *a += v);
                        bp.mark_all();
                    }
                    acc(&mut grads, &nodes, *x).iter_mut().zip(&dx).for_each(|(a, &v)| *a += v);
                }
                Op::Tanh(src) => {
                    let y = &node.value;
                    let dst = acc(&mut grads, &nodes, *src);
                    for k in 0..y.len() {
                        dst[k] += g[k] * (T::one() - y[k] * y[k]);
                    }
                }
                Op::Sum(src) => {
                    acc(&mut grads, &nodes, *src).iter_mut().for_each(|x| *x += g[0]);
                }
                Op::SoftmaxXent { logits, target, probs } => {
                    let dst = acc(&mut grads, &nodes, *logits);
                    for (k, &p) in probs.iter().enumerate() {
                        let onehot = if k == *target { T::one() } else { T::zero() };
                        dst[k] += (p - onehot) * g[0];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |s, x| s + x);
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    /// Central-difference check of every entry of every parameter in
    /// `store` against the gradient `backward` produces.
    pub(crate) fn check_gradients<F>(store: &mut ParamStore<f64>, f: F) -> f64
    where
        F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Var,
    {
        let eps = 1e-5;
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        tape.backward(loss, store).unwrap();
        let analytic: Vec<Vec<f64>> = store.params().iter().map(|p| p.grad.clone()).collect();
        store.zero_grad();

        let eval = |s: &ParamStore<f64>| {
            let mut t = Tape::new();
            let l = f(&mut t, s);
            t.scalar(l)
        };
        let mut worst = 0.0f64;
        for pi in 0..store.len() {
            for k in 0..store.get(ParamId(pi)).data.len() {
                let orig = store.get(ParamId(pi)).data[k];
                store.get_mut(ParamId(pi)).data[k] = orig + eps;
                let up = eval(store);
                store.get_mut(ParamId(pi)).data[k] = orig - eps;
                let down = eval(store);
                store.get_mut(ParamId(pi)).data[k] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic[pi][k];
                let err = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-3));
                worst = worst.max(err);
            }
        }
        worst
    }

    #[test]
    fn l2_normalize_example() {
        let mut t = Tape::<f64>::new();
        let v = t.constant(1, 2, vec![3.0, 4.0]).unwrap();
        let n = t.l2_normalize(v);
        assert_eq!(t.value(n), &[0.6, 0.8]);
    }

    #[test]
    fn masked_max_pool_example() {
        let mut t = Tape::<f64>::new();
        let m = t.constant(3, 2, vec![1.0, 0.0, 5.0, 2.0, 3.0, 9.0]).unwrap();
        let p = t.masked_max_pool(m, 1..3).unwrap();
        assert_eq!(t.value(p), &[5.0, 9.0]);
        assert!(t.masked_max_pool(m, 2..2).is_err());
        assert!(t.masked_max_pool(m, 1..4).is_err());
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let mut store = ParamStore::<f64>::new();
        let w = store.insert("w", 1, 1, vec![-0.2]).unwrap();
        let mut t = Tape::new();
        let x = t.param(&store, w);
        let h = t.hinge(x, 0.0).unwrap();
        assert_eq!(t.scalar(h), 0.0);
        t.backward(h, &mut store).unwrap();
        assert_eq!(store.get(w).grad, vec![0.0]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", 2, 3, Init::Uniform(1.0), &mut rng()).unwrap();
        let mut t = Tape::new();
        let x = t.param(&store, w);
        let s = t.sum(x);
        t.backward(s, &mut store).unwrap();
        assert_eq!(store.get(w).grad, vec![1.0; 6]);
    }

    #[test]
    fn distance_at_equal_points_has_zero_subgradient() {
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", 1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let b = store.insert("b", 1, 3, vec![0.5, -1.0, 2.0]).unwrap();
        let mut t = Tape::new();
        let (va, vb) = (t.param(&store, a), t.param(&store, b));
        let d = t.euclidean_distance(va, vb).unwrap();
        assert_eq!(t.scalar(d), 0.0);
        t.backward(d, &mut store).unwrap();
        assert!(store.get(a).grad.iter().chain(&store.get(b).grad).all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_single_use_and_needs_scalar() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", 1, 3, Init::Uniform(1.0), &mut rng()).unwrap();
        let mut t = Tape::new();
        let x = t.param(&store, w);
        assert!(matches!(t.backward(x, &mut store), Err(Error::Contract(_))));
        let mut t = Tape::new();
        let x = t.param(&store, w);
        let s = t.sum(x);
        t.backward(s, &mut store).unwrap();
        assert!(t.is_empty());
        assert!(matches!(t.backward(s, &mut store), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let mut t = Tape::<f64>::new();
        let a = t.constant(1, 2, vec![0.0; 2]).unwrap();
        let b = t.constant(1, 3, vec![0.0; 3]).unwrap();
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("1x2") && err.contains("1x3"), "{err}");
    }

    #[test]
    fn sgd_examples() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", 1, 1, vec![1.0]).unwrap();
        store.get_mut(p).grad[0] = 0.1;
        store.get_mut(p).mark_all();
        store.sgd_step(1.0, None).unwrap();
        assert!((store.get(p).data[0] - 0.9).abs() < 1e-15);
        assert_eq!(store.get(p).grad, vec![0.0]);

        // global norm 10 clipped to 5 halves every gradient
        let mut store = ParamStore::<f64>::new();
        let a = store.insert("a", 1, 2, vec![0.0, 0.0]).unwrap();
        let b = store.insert("b", 1, 1, vec![0.0]).unwrap();
        store.get_mut(a).grad.copy_from_slice(&[6.0, 0.0]);
        store.get_mut(a).mark_all();
        store.get_mut(b).grad[0] = 8.0;
        store.get_mut(b).mark_all();
        let norm = store.sgd_step(1.0, Some(5.0)).unwrap();
        assert!((norm - 10.0).abs() < 1e-12);
        assert_eq!(store.get(a).data, vec![-3.0, 0.0]);
        assert_eq!(store.get(b).data, vec![-4.0]);

        // lr = 0 leaves parameters untouched
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", 1, 1, vec![1.0]).unwrap();
        store.get_mut(p).grad[0] = 0.3;
        store.get_mut(p).mark_all();
        store.sgd_step(0.0, Some(5.0)).unwrap();
        assert_eq!(store.get(p).data, vec![1.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("lstm.w", 1, 1, vec![1.0]).unwrap();
        store.get_mut(p).grad[0] = f64::NAN;
        store.get_mut(p).mark_all();
        let err = store.sgd_step(1.0, None).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "lstm.w"));
        assert_eq!(store.get(p).data, vec![1.0]);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut store = ParamStore::<f64>::new();
        let p = store.insert("p", 1, 2, vec![1.0, 2.0]).unwrap();
        store.set_frozen(p, true);
        let mut t = Tape::new();
        let x = t.param(&store, p);
        let s = t.sum(x);
        t.backward(s, &mut store).unwrap();
        store.sgd_step(1.0, None).unwrap();
        assert_eq!(store.get(p).data, vec![1.0, 2.0]);
    }

    #[test]
    fn pooled_gradient_mass_is_conserved() {
        let mut store = ParamStore::<f64>::new();
        let m = store.add("m", 4, 3, Init::Uniform(1.0), &mut rng()).unwrap();
        let mut t = Tape::new();
        let x = t.param(&store, m);
        let p = t.masked_max_pool(x, 1..3).unwrap();
        let w = t.constant(1, 3, vec![0.3, -1.2, 2.0]).unwrap();
        let pw = t.add(p, w).unwrap();
        let s = t.sum(pw);
        t.backward(s, &mut store).unwrap();
        let g = &store.get(m).grad;
        for j in 0..3 {
            let col: f64 = (0..4).map(|r| g[r * 3 + j]).sum();
            assert!((col - 1.0).abs() < 1e-12);
            assert_eq!(g[j], 0.0);
            assert_eq!(g[9 + j], 0.0);
        }
    }

    fn lstm_store(d: usize, h: usize) -> (ParamStore<f64>, LstmParams) {
        let mut r = rng();
        let mut store = ParamStore::new();
        let w = store.add("w", 4 * h, d + h, Init::Uniform(0.5), &mut r).unwrap();
        let b = store.add("b", 1, 4 * h, Init::Uniform(0.5), &mut r).unwrap();
        (store, LstmParams { w, b, input: d, hidden: h })
    }

    #[test]
    fn gradcheck_lstm_steps() {
        let (mut store, cell) = lstm_store(3, 4);
        let xs = store.add("xs", 3, 3, Init::Uniform(1.0), &mut rng()).unwrap();
        let worst = check_gradients(&mut store, |t, s| {
            let x = t.param(s, xs);
            let (mut h, mut c) = (None, None);
            let mut outs = Vec::new();
            for i in 0..3 {
                let xi = t.row(x, i).unwrap();
                let (nh, nc) = t.lstm_step(s, xi, h, c, &cell).unwrap();
                outs.push(nh);
                h = Some(nh);
                c = Some(nc);
            }
            let m = t.stack_rows(&outs).unwrap();
            let p = t.masked_max_pool(m, 0..3).unwrap();
            let n = t.l2_normalize(p);
            let q = t.tanh(n);
            t.sum(q)
        });
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradcheck_distance_hinge_affine() {
        let mut r = rng();
        let mut store = ParamStore::<f64>::new();
        let emb = store.add("emb", 5, 4, Init::Uniform(1.0), &mut r).unwrap();
        let w = store.add("w", 3, 4, Init::Uniform(1.0), &mut r).unwrap();
        let b = store.add("b", 1, 3, Init::Uniform(1.0), &mut r).unwrap();
        let rel = store.add("rel", 1, 3, Init::Uniform(1.0), &mut r).unwrap();
        let worst = check_gradients(&mut store, |t, s| {
            let e = t.embed_lookup(s, emb, &[0, 3, 3, 1]).unwrap();
            let m = t.mean_rows(e).unwrap();
            let a = t.affine(s, m, w, b).unwrap();
            let a = t.tanh(a);
            let rv = t.param(s, rel);
            let hr = t.add(a, rv).unwrap();
            let e2 = t.embed_lookup(s, emb, &[2]).unwrap();
            let tail = t.affine(s, e2, w, b).unwrap();
            let d1 = t.euclidean_distance(hr, tail).unwrap();
            let e3 = t.embed_lookup(s, emb, &[4]).unwrap();
            let neg = t.affine(s, e3, w, b).unwrap();
            let d2 = t.euclidean_distance(hr, neg).unwrap();
            let diff = t.sub(d1, d2).unwrap();
            t.hinge(diff, 5.0).unwrap()
        });
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn gradcheck_softmax_xent_and_concat() {
        let mut r = rng();
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", 2, 2, Init::Uniform(1.0), &mut r).unwrap();
        let b = store.add("b", 2, 1, Init::Uniform(1.0), &mut r).unwrap();
        let worst = check_gradients(&mut store, |t, s| {
            let (va, vb) = (t.param(s, a), t.param(s, b));
            let c = t.concat_cols(va, vb).unwrap();
            let m = t.mean_rows(c).unwrap();
            let sl = t.slice(m, 0, 3).unwrap();
            t.softmax_cross_entropy(sl, 1).unwrap()
        });
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
