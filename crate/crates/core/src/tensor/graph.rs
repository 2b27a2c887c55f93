use std::borrow::Cow;
use std::collections::HashMap;

use super::kernels::{col2im, im2col, mm, mm_at, mm_bt, ConvGeom};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    Linear { x: usize, w: usize, b: Option<usize>, rows: usize, inner: usize, cols: usize },
    Conv { x: usize, k: usize, b: Option<usize>, geom: ConvGeom, filters: usize, cols: Option<Vec<f64>> },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Square(usize),
    Concat { parts: Vec<usize>, outer: usize, widths: Vec<usize> },
    Reshape(usize),
    Embedding { table: usize, indices: Vec<usize>, dim: usize },
    EmbedGrid { table: usize, codes: Vec<usize>, dim: usize, plane: usize },
    GatherRows { x: usize, indices: Vec<usize>, dim: usize },
    Softmax { x: usize, k: usize },
    LogSoftmax { x: usize, k: usize },
    Pick { x: usize, indices: Vec<usize>, k: usize },
    CrossEntropy { x: usize, labels: Vec<usize>, k: usize, probs: Vec<f64> },
    Sum(usize),
    Mean(usize),
    Clamp { x: usize, lo: f64, hi: f64 },
    Minimum(usize, usize),
    MulConst { x: usize, c: Vec<f64> },
    ScaleRows { x: usize, m: Vec<f64>, dim: usize },
    BlendRows { x: usize, mask: Vec<bool>, dim: usize },
}

struct Node<'p> {
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    op: Op,
    requires_grad: bool,
}

/// Tape of operations recorded during a forward pass.
///
/// Parameter leaves borrow their values from the [`ParamStore`], so a graph
/// never copies weights. [`Graph::backward`] returns a [`Gradients`] value
/// that outlives the graph and can be folded into the store.
pub struct Graph<'p> {
    nodes: Vec<Node<'p>>,
    grad_enabled: bool,
    param_cache: HashMap<ParamId, Var>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true, param_cache: HashMap::new() }
    }

    /// A graph that evaluates values only; nothing requires grad.
    pub fn no_grad() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false, param_cache: HashMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance of any ReLU input from the kink at zero. Gradient
    /// checks use it to avoid probing points where the loss is not smooth.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Relu(a) => Some(self.nodes[a].value.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(&n.shape, n.value.to_vec()).expect("graph nodes hold valid shapes")
    }

    fn push(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, inputs: &[usize]) -> Var {
        let rg = self.grad_enabled && inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push_rg(shape, value, op, rg)
    }

    fn push_rg(&mut self, shape: Vec<usize>, value: Cow<'p, [f64]>, op: Op, rg: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad: rg });
        Var(self.nodes.len() - 1)
    }

    fn vals(&self, v: usize) -> &[f64] {
        &self.nodes[v].value
    }

    fn shp(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    // ---- leaves -------------------------------------------------------------

    /// Leaf from a tensor; tracks gradients when the tensor requires grad.
    pub fn input(&mut self, t: &Tensor) -> Var {
        let rg = self.grad_enabled && t.requires_grad();
        self.push_rg(t.shape().to_vec(), Cow::Owned(t.data().to_vec()), Op::Leaf, rg)
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.push_rg(t.shape().to_vec(), Cow::Owned(t.into_data()), Op::Leaf, false))
    }

    /// Leaf borrowing a parameter. Repeated requests return the same node.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_cache.get(&id) {
            return v;
        }
        let t = store.get(id);
        let v = self.push_rg(t.shape().to_vec(), Cow::Borrowed(t.data()), Op::Param(id), self.grad_enabled);
        self.param_cache.insert(id, v);
        v
    }

    pub fn param_by_name(&mut self, store: &'p ParamStore, name: &str) -> Result<Var> {
        Ok(self.param(store, store.id(name)?))
    }

    // ---- dense layers -------------------------------------------------------

    /// `x[B×I] · w[I×O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shp(x).to_vec(), self.shp(w).to_vec());
        if xs.len() != 2 || ws.len() != 2 {
            return Err(Error::dim("linear", format!("expected 2-D x and weight, got {xs:?} and {ws:?}")));
        }
        let (rows, inner, cols) = (xs[0], xs[1], ws[1]);
        if ws[0] != inner {
            return Err(Error::dim("linear", format!("x axis 1 is {inner} but weight axis 0 is {}", ws[0])));
        }
        let mut out = vec![0.0; rows * cols];
        if let Some(b) = b {
            let bs = self.shp(b);
            if bs.len() != 1 || bs[0] != cols {
                return Err(Error::dim("linear", format!("bias shape {bs:?} but weight axis 1 is {cols}")));
            }
            let bv = self.vals(b.0);
            for r in 0..rows {
                out[r * cols..(r + 1) * cols].copy_from_slice(bv);
            }
        }
        mm(self.vals(x.0), self.vals(w.0), &mut out, rows, inner, cols);
        let mut inputs = vec![x.0, w.0];
        inputs.extend(b.map(|b| b.0));
        let op = Op::Linear { x: x.0, w: w.0, b: b.map(|b| b.0), rows, inner, cols };
        Ok(self.push(vec![rows, cols], Cow::Owned(out), op, &inputs))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.linear(a, b, None)
    }

    /// Cross-correlation of an NCHW input with `[F×C×kH×kW]` kernels.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let (xs, ks) = (self.shp(x).to_vec(), self.shp(k).to_vec());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::dim("conv2d", format!("expected 4-D input and kernels, got {xs:?} and {ks:?}")));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d", "stride must be positive"));
        }
        if ks[1] != xs[1] {
            return Err(Error::dim("conv2d", format!("input channels {} but kernel channels {}", xs[1], ks[1])));
        }
        if xs[2] + 2 * pad < ks[2] || xs[3] + 2 * pad < ks[3] {
            return Err(Error::dim(
                "conv2d",
                format!("kernel {}x{} larger than padded input {}x{}", ks[2], ks[3], xs[2] + 2 * pad, xs[3] + 2 * pad),
            ));
        }
        let geom = ConvGeom {
            batch: xs[0],
            channels: xs[1],
            height: xs[2],
            width: xs[3],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad,
            out_h: (xs[2] + 2 * pad - ks[2]) / stride + 1,
            out_w: (xs[3] + 2 * pad - ks[3]) / stride + 1,
        };
        let filters = ks[0];
        if let Some(b) = b {
            if self.shp(b) != [filters] {
                return Err(Error::dim("conv2d", format!("bias shape {:?} for {filters} filters", self.shp(b))));
            }
        }
        let cols = im2col(self.vals(x.0), &geom);
        let rows = geom.rows();
        let mut out_rows = vec![0.0; rows * filters];
        mm_bt(&cols, self.vals(k.0), &mut out_rows, rows, geom.patch(), filters);
        let plane = geom.out_h * geom.out_w;
        let mut out = vec![0.0; rows * filters];
        let bias = b.map(|b| self.vals(b.0));
        for bi in 0..geom.batch {
            for f in 0..filters {
                let bf = bias.map_or(0.0, |bv| bv[f]);
                let dst = &mut out[(bi * filters + f) * plane..(bi * filters + f + 1) * plane];
                for (p, d) in dst.iter_mut().enumerate() {
                    *d = out_rows[(bi * plane + p) * filters + f] + bf;
                }
            }
        }
        let keep_cols = self.grad_enabled && self.nodes[k.0].requires_grad;
        let mut inputs = vec![x.0, k.0];
        inputs.extend(b.map(|b| b.0));
        let op = Op::Conv { x: x.0, k: k.0, b: b.map(|b| b.0), geom, filters, cols: keep_cols.then_some(cols) };
        Ok(self.push(vec![geom.batch, filters, geom.out_h, geom.out_w], Cow::Owned(out), op, &inputs))
    }

    // ---- elementwise --------------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shp(a) != self.shp(b) {
            return Err(Error::dim(op, format!("shapes {:?} and {:?} differ", self.shp(a), self.shp(b))));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: Op) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out: Vec<f64> = self.vals(a.0).iter().zip(self.vals(b.0)).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.push(self.shp(a).to_vec(), Cow::Owned(out), mk, &[a.0, b.0]))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, mk: Op) -> Var {
        let out: Vec<f64> = self.vals(a.0).iter().map(|&x| f(x)).collect();
        self.push(self.shp(a).to_vec(), Cow::Owned(out), mk, &[a.0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a.0, b.0))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("minimum", a, b, f64::min, Op::Minimum(a.0, b.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x * c, Op::Scale(a.0, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::AddScalar(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a.0))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.max(lo).min(hi), Op::Clamp { x: a.0, lo, hi })
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, a: Var, c: Vec<f64>) -> Result<Var> {
        if c.len() != self.vals(a.0).len() {
            return Err(Error::dim("mul_const", format!("{} constants for {} elements", c.len(), self.vals(a.0).len())));
        }
        let out: Vec<f64> = self.vals(a.0).iter().zip(&c).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shp(a).to_vec(), Cow::Owned(out), Op::MulConst { x: a.0, c }, &[a.0]))
    }

    /// Multiplies each row of a 2-D tensor by a constant.
    pub fn scale_rows(&mut self, a: Var, m: Vec<f64>) -> Result<Var> {
        let s = self.shp(a).to_vec();
        if s.len() != 2 || s[0] != m.len() {
            return Err(Error::dim("scale_rows", format!("{} row factors for shape {s:?}", m.len())));
        }
        let dim = s[1];
        let mut out = self.vals(a.0).to_vec();
        for (r, f) in m.iter().enumerate() {
            out[r * dim..(r + 1) * dim].iter_mut().for_each(|v| *v *= f);
        }
        Ok(self.push(s, Cow::Owned(out), Op::ScaleRows { x: a.0, m, dim }, &[a.0]))
    }

    /// Replaces the rows of `a` where `mask` is set by the matching rows of
    /// `replacement` (a constant). Replaced rows carry no gradient.
    pub fn blend_rows(&mut self, a: Var, replacement: &[f64], mask: Vec<bool>) -> Result<Var> {
        let s = self.shp(a).to_vec();
        if s.len() != 2 || s[0] != mask.len() || replacement.len() != s[0] * s[1] {
            return Err(Error::dim("blend_rows", format!("mask/replacement do not match shape {s:?}")));
        }
        let dim = s[1];
        let mut out = self.vals(a.0).to_vec();
        for (r, &m) in mask.iter().enumerate() {
            if m {
                out[r * dim..(r + 1) * dim].copy_from_slice(&replacement[r * dim..(r + 1) * dim]);
            }
        }
        Ok(self.push(s, Cow::Owned(out), Op::BlendRows { x: a.0, mask, dim }, &[a.0]))
    }

    // ---- structural ---------------------------------------------------------

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat", "no inputs"))?;
        let base = self.shp(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::dim("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut widths = Vec::with_capacity(parts.len());
        let mut axis_total = 0;
        for p in parts {
            let s = self.shp(*p);
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(Error::dim("concat", format!("shape {s:?} incompatible with {base:?} on axis {axis}")));
            }
            axis_total += s[axis];
            widths.push(s[axis] * inner);
        }
        let row: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.vals(p.0)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = axis_total;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(shape, Cow::Owned(out), Op::Concat { parts: idx.clone(), outer, widths }, &idx))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.vals(a.0).len() || shape.contains(&0) {
            return Err(Error::dim("reshape", format!("cannot view {:?} as {shape:?}", self.shp(a))));
        }
        let value = self.nodes[a.0].value.clone();
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a.0), &[a.0]))
    }

    /// Row lookup in a `[N×D]` table.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shp(table).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("embedding", format!("table must be 2-D, got {s:?}")));
        }
        let (n, dim) = (s[0], s[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Index { op: "embedding", detail: format!("index {bad} with {n} rows") });
        }
        let tv = self.vals(table.0);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let op = Op::Embedding { table: table.0, indices: indices.to_vec(), dim };
        Ok(self.push(vec![indices.len(), dim], Cow::Owned(out), op, &[table.0]))
    }

    /// Per-cell lookup of a `[B×H×W]` code grid, producing `[B×D×H×W]`.
    pub fn embed_grid(&mut self, table: Var, codes: &[usize], batch: usize, h: usize, w: usize) -> Result<Var> {
        let s = self.shp(table).to_vec();
        if s.len() != 2 || codes.len() != batch * h * w {
            return Err(Error::dim("embed_grid", format!("table {s:?}, {} codes for {batch}x{h}x{w}", codes.len())));
        }
        let (n, dim) = (s[0], s[1]);
        if let Some(&bad) = codes.iter().find(|&&i| i >= n) {
            return Err(Error::Index { op: "embed_grid", detail: format!("code {bad} with {n} rows") });
        }
        let plane = h * w;
        let tv = self.vals(table.0);
        let mut out = vec![0.0; batch * dim * plane];
        for b in 0..batch {
            for p in 0..plane {
                let c = codes[b * plane + p];
                for d in 0..dim {
                    out[(b * dim + d) * plane + p] = tv[c * dim + d];
                }
            }
        }
        let op = Op::EmbedGrid { table: table.0, codes: codes.to_vec(), dim, plane };
        Ok(self.push(vec![batch, dim, h, w], Cow::Owned(out), op, &[table.0]))
    }

    /// Selects rows of a 2-D tensor (rows may repeat).
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shp(a).to_vec();
        if s.len() != 2 {
            return Err(Error::dim("gather_rows", format!("expected 2-D input, got {s:?}")));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= s[0]) {
            return Err(Error::Index { op: "gather_rows", detail: format!("row {bad} of {}", s[0]) });
        }
        let dim = s[1];
        let av = self.vals(a.0);
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&av[i * dim..(i + 1) * dim]);
        }
        let op = Op::GatherRows { x: a.0, indices: indices.to_vec(), dim };
        Ok(self.push(vec![indices.len(), dim], Cow::Owned(out), op, &[a.0]))
    }

    // ---- normalisation and losses ------------------------------------------

    fn rows_k(&self, op: &'static str, a: Var) -> Result<(usize, usize)> {
        let s = self.shp(a);
        if s.len() != 2 {
            return Err(Error::dim(op, format!("expected [B×K], got {s:?}")));
        }
        if self.vals(a.0).iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric { op, detail: "non-finite input".into() });
        }
        Ok((s[0], s[1]))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, k) = self.rows_k("softmax", a)?;
        let out = softmax_rows(self.vals(a.0), rows, k);
        Ok(self.push(vec![rows, k], Cow::Owned(out), Op::Softmax { x: a.0, k }, &[a.0]))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (rows, k) = self.rows_k("log_softmax", a)?;
        let av = self.vals(a.0);
        let mut out = vec![0.0; rows * k];
        for r in 0..rows {
            let row = &av[r * k..(r + 1) * k];
            let lse = log_sum_exp(row);
            for (o, &x) in out[r * k..(r + 1) * k].iter_mut().zip(row) {
                *o = x - lse;
            }
        }
        Ok(self.push(vec![rows, k], Cow::Owned(out), Op::LogSoftmax { x: a.0, k }, &[a.0]))
    }

    /// `out[b] = a[b, indices[b]]`.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let s = self.shp(a).to_vec();
        if s.len() != 2 || s[0] != indices.len() {
            return Err(Error::dim("pick", format!("{} indices for shape {s:?}", indices.len())));
        }
        let k = s[1];
        if let Some(&bad) = indices.iter().find(|&&i| i >= k) {
            return Err(Error::Index { op: "pick", detail: format!("column {bad} of {k}") });
        }
        let av = self.vals(a.0);
        let out: Vec<f64> = indices.iter().enumerate().map(|(r, &c)| av[r * k + c]).collect();
        let op = Op::Pick { x: a.0, indices: indices.to_vec(), k };
        Ok(self.push(vec![indices.len()], Cow::Owned(out), op, &[a.0]))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (rows, k) = self.rows_k("cross_entropy", logits)?;
        if labels.len() != rows {
            return Err(Error::dim("cross_entropy", format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Index { op: "cross_entropy", detail: format!("label {bad} with {k} classes") });
        }
        let lv = self.vals(logits.0);
        let mut loss = 0.0;
        for (r, &l) in labels.iter().enumerate() {
            let row = &lv[r * k..(r + 1) * k];
            loss += log_sum_exp(row) - row[l];
        }
        loss /= rows as f64;
        let probs = softmax_rows(lv, rows, k);
        let op = Op::CrossEntropy { x: logits.0, labels: labels.to_vec(), k, probs };
        Ok(self.push(vec![1], Cow::Owned(vec![loss]), op, &[logits.0]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.vals(a.0).iter().sum();
        self.push(vec![1], Cow::Owned(vec![s]), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.vals(a.0);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        self.push(vec![1], Cow::Owned(vec![s]), Op::Mean(a.0), &[a.0])
    }

    // ---- reverse pass -------------------------------------------------------

    /// Reverse-mode sweep from a scalar. Gradients are returned for every node
    /// reachable from `loss` that requires grad.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..=loss.0).rev() {
            let Some(go) = grads[i].take() else { continue };
            self.backward_node(i, &go, &mut grads);
            grads[i] = Some(go);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((i, id)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backward_node(&self, i: usize, go: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let nodes = &self.nodes;
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear { x, w, b, rows, inner, cols } => {
                let (rows, inner, cols) = (*rows, *inner, *cols);
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    mm_bt(go, &nodes[*w].value, dx, rows, cols, inner);
                }
                if let Some(dw) = grad_slot(nodes, grads, *w) {
                    mm_at(&nodes[*x].value, go, dw, rows, inner, cols);
                }
                if let Some(b) = b {
                    if let Some(db) = grad_slot(nodes, grads, *b) {
                        for r in 0..rows {
                            db.iter_mut().zip(&go[r * cols..(r + 1) * cols]).for_each(|(d, g)| *d += g);
                        }
                    }
                }
            }
            Op::Conv { x, k, b, geom, filters, cols } => {
                let f = *filters;
                let plane = geom.out_h * geom.out_w;
                let rows = geom.rows();
                let mut drows = vec![0.0; rows * f];
                for bi in 0..geom.batch {
                    for fi in 0..f {
                        let src = &go[(bi * f + fi) * plane..(bi * f + fi + 1) * plane];
                        for (p, g) in src.iter().enumerate() {
                            drows[(bi * plane + p) * f + fi] = *g;
                        }
                    }
                }
                if let Some(b) = b {
                    if let Some(db) = grad_slot(nodes, grads, *b) {
                        for r in 0..rows {
                            db.iter_mut().zip(&drows[r * f..(r + 1) * f]).for_each(|(d, g)| *d += g);
                        }
                    }
                }
                if let Some(dk) = grad_slot(nodes, grads, *k) {
                    let cols = cols.as_ref().expect("columns are kept when kernels need grad");
                    mm_at(&drows, cols, dk, rows, f, geom.patch());
                }
                if nodes[*x].requires_grad {
                    let mut dcols = vec![0.0; rows * geom.patch()];
                    mm(&drows, &nodes[*k].value, &mut dcols, rows, f, geom.patch());
                    if let Some(dx) = grad_slot(nodes, grads, *x) {
                        col2im(&dcols, geom, dx);
                    }
                }
            }
            Op::Add(a, b) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    add_into(da, go);
                }
                if let Some(db) = grad_slot(nodes, grads, *b) {
                    add_into(db, go);
                }
            }
            Op::Sub(a, b) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    add_into(da, go);
                }
                if let Some(db) = grad_slot(nodes, grads, *b) {
                    db.iter_mut().zip(go).for_each(|(d, g)| *d -= g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        da[j] += go[j] * bv[j];
                    }
                }
                if let Some(db) = grad_slot(nodes, grads, *b) {
                    for j in 0..go.len() {
                        db[j] += go[j] * av[j];
                    }
                }
            }
            Op::Minimum(a, b) => {
                let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        if av[j] <= bv[j] {
                            da[j] += go[j];
                        }
                    }
                }
                if let Some(db) = grad_slot(nodes, grads, *b) {
                    for j in 0..go.len() {
                        if av[j] > bv[j] {
                            db[j] += go[j];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    da.iter_mut().zip(go).for_each(|(d, g)| *d += g * c);
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    add_into(da, go);
                }
            }
            Op::Relu(a) => {
                let xv = &nodes[*a].value;
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        if xv[j] > 0.0 {
                            da[j] += go[j];
                        }
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        da[j] += go[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        da[j] += go[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Exp(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        da[j] += go[j] * y[j];
                    }
                }
            }
            Op::Square(a) => {
                let xv = &nodes[*a].value;
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    for j in 0..go.len() {
                        da[j] += 2.0 * go[j] * xv[j];
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = &nodes[*x].value;
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for j in 0..go.len() {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            dx[j] += go[j];
                        }
                    }
                }
            }
            Op::MulConst { x, c } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for j in 0..go.len() {
                        dx[j] += go[j] * c[j];
                    }
                }
            }
            Op::ScaleRows { x, m, dim } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for (r, f) in m.iter().enumerate() {
                        for j in r * dim..(r + 1) * dim {
                            dx[j] += go[j] * f;
                        }
                    }
                }
            }
            Op::BlendRows { x, mask, dim } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for (r, &m) in mask.iter().enumerate() {
                        if !m {
                            add_into(&mut dx[r * dim..(r + 1) * dim], &go[r * dim..(r + 1) * dim]);
                        }
                    }
                }
            }
            Op::Concat { parts, outer, widths } => {
                let row: usize = widths.iter().sum();
                let mut offset = 0;
                for (p, &w) in parts.iter().zip(widths) {
                    if let Some(dp) = grad_slot(nodes, grads, *p) {
                        for o in 0..*outer {
                            add_into(&mut dp[o * w..(o + 1) * w], &go[o * row + offset..o * row + offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::Embedding { table, indices, dim } | Op::GatherRows { x: table, indices, dim } => {
                if let Some(dt) = grad_slot(nodes, grads, *table) {
                    for (r, &i) in indices.iter().enumerate() {
                        add_into(&mut dt[i * dim..(i + 1) * dim], &go[r * dim..(r + 1) * dim]);
                    }
                }
            }
            Op::EmbedGrid { table, codes, dim, plane } => {
                if let Some(dt) = grad_slot(nodes, grads, *table) {
                    let batch = codes.len() / plane;
                    for b in 0..batch {
                        for p in 0..*plane {
                            let c = codes[b * plane + p];
                            for d in 0..*dim {
                                dt[c * dim + d] += go[(b * dim + d) * plane + p];
                            }
                        }
                    }
                }
            }
            Op::Softmax { x, k } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for r in 0..go.len() / k {
                        let (yr, gr) = (&y[r * k..(r + 1) * k], &go[r * k..(r + 1) * k]);
                        let s: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..*k {
                            dx[r * k + j] += yr[j] * (gr[j] - s);
                        }
                    }
                }
            }
            Op::LogSoftmax { x, k } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for r in 0..go.len() / k {
                        let gr = &go[r * k..(r + 1) * k];
                        let s: f64 = gr.iter().sum();
                        for j in 0..*k {
                            dx[r * k + j] += gr[j] - y[r * k + j].exp() * s;
                        }
                    }
                }
            }
            Op::Pick { x, indices, k } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    for (r, &c) in indices.iter().enumerate() {
                        dx[r * k + c] += go[r];
                    }
                }
            }
            Op::CrossEntropy { x, labels, k, probs } => {
                if let Some(dx) = grad_slot(nodes, grads, *x) {
                    let scale = go[0] / labels.len() as f64;
                    for (r, &l) in labels.iter().enumerate() {
                        for j in 0..*k {
                            let t = if j == l { 1.0 } else { 0.0 };
                            dx[r * k + j] += scale * (probs[r * k + j] - t);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    da.iter_mut().for_each(|d| *d += go[0]);
                }
            }
            Op::Mean(a) => {
                if let Some(da) = grad_slot(nodes, grads, *a) {
                    let g = go[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += g);
                }
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(usize, ParamId)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reachable.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(node, id)| self.grads[node].as_deref().map(|g| (id, g)))
    }
}

fn grad_slot<'a>(nodes: &[Node<'_>], grads: &'a mut [Option<Vec<f64>>], idx: usize) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    let len = nodes[idx].value.len();
    Some(grads[idx].get_or_insert_with(|| vec![0.0; len]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(v: &[f64], rows: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * k];
    for r in 0..rows {
        let row = &v[r * k..(r + 1) * k];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[r * k..(r + 1) * k];
        let mut s = 0.0;
        for (oj, &x) in o.iter_mut().zip(row) {
            *oj = (x - m).exp();
            s += *oj;
        }
        o.iter_mut().for_each(|x| *x /= s);
    }
    out
}
