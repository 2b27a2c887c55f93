use rand::Rng;

use super::init::{orthogonal, uniform_fan_in};
use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Weight initialisation for a newly registered layer.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Orthogonal(f64),
    Zeros,
}

fn weights<R: Rng + ?Sized>(init: Init, rng: &mut R, rows: usize, cols: usize) -> Vec<f64> {
    match init {
        Init::Orthogonal(gain) => orthogonal(rng, rows, cols, gain),
        Init::Zeros => vec![0.0; rows * cols],
    }
}

/// Fully connected layer, weight stored `[in×out]`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let w = Tensor::new(&[inputs, outputs], weights(init, rng, inputs, outputs))?;
        let weight = store.insert(&format!("{name}.weight"), w)?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[outputs])?)?;
        Ok(Linear { weight, bias })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Linear { weight: store.id(&format!("{name}.weight"))?, bias: store.id(&format!("{name}.bias"))? })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn inputs(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[0]
    }

    pub fn outputs(&self, store: &ParamStore) -> usize {
        store.get(self.weight).shape()[1]
    }
}

/// 2-D convolution layer with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        filters: usize,
        size: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let patch = in_channels * size * size;
        let k = Tensor::new(&[filters, in_channels, size, size], orthogonal(rng, filters, patch, gain))?;
        let kernel = store.insert(&format!("{name}.kernel"), k)?;
        let bias = store.insert(&format!("{name}.bias"), Tensor::zeros(&[filters])?)?;
        Ok(Conv2d { kernel, bias, stride, pad })
    }

    pub fn from_store(store: &ParamStore, name: &str, stride: usize, pad: usize) -> Result<Self> {
        Ok(Conv2d {
            kernel: store.id(&format!("{name}.kernel"))?,
            bias: store.id(&format!("{name}.bias"))?,
            stride,
            pad,
        })
    }

    pub fn forward<'p>(&self, g: &mut Graph<'p>, store: &'p ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d(x, k, Some(b), self.stride, self.pad)
    }
}

/// Lookup table `[rows×dim]`, initialised uniform in ±1/√rows.
#[derive(Clone, Copy, Debug)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let t = Tensor::new(&[rows, dim], uniform_fan_in(rng, rows * dim, rows))?;
        Ok(Embedding { table: store.insert(name, t)? })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Embedding { table: store.id(name)? })
    }
}

/// Gate weights of a GRU cell: reset (`r`), update (`z`) and candidate (`n`),
/// each with an input-side and hidden-side affine map.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    pub x_r: Linear,
    pub x_z: Linear,
    pub x_n: Linear,
    pub h_r: Linear,
    pub h_z: Linear,
    pub h_n: Linear,
}

const GATES: [&str; 6] = ["x_r", "x_z", "x_n", "h_r", "h_z", "h_n"];

impl GruParams {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        inputs: usize,
        hidden: usize,
        gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(6);
        for (i, gate) in GATES.iter().enumerate() {
            let fan = if i < 3 { inputs } else { hidden };
            layers.push(Linear::register(store, &format!("{prefix}.{gate}"), fan, hidden, Init::Orthogonal(gain), rng)?);
        }
        Ok(Self::from_layers(&layers))
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let layers = GATES
            .iter()
            .map(|g| Linear::from_store(store, &format!("{prefix}.{g}")))
            .collect::<Result<Vec<_>>>()?;
        let p = Self::from_layers(&layers);
        let hidden = p.h_r.outputs(store);
        for l in [p.x_z, p.x_n, p.h_z, p.h_n] {
            if l.outputs(store) != hidden {
                return Err(Error::Config(format!("GRU `{prefix}` gates disagree on hidden size")));
            }
        }
        Ok(p)
    }

    fn from_layers(l: &[Linear]) -> Self {
        GruParams { x_r: l[0], x_z: l[1], x_n: l[2], h_r: l[3], h_z: l[4], h_n: l[5] }
    }

    pub fn hidden(&self, store: &ParamStore) -> usize {
        self.h_r.outputs(store)
    }
}

/// One GRU step:
/// `r = σ(x·Wxr + h·Whr)`, `z = σ(x·Wxz + h·Whz)`,
/// `n = tanh(x·Wxn + r ⊙ (h·Whn))`, `h' = (1 − z) ⊙ n + z ⊙ h` (biases implied).
pub fn gru_cell<'p>(g: &mut Graph<'p>, store: &'p ParamStore, x: Var, h: Var, p: &GruParams) -> Result<Var> {
    let xr = p.x_r.forward(g, store, x)?;
    let hr = p.h_r.forward(g, store, h)?;
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r);
    let xz = p.x_z.forward(g, store, x)?;
    let hz = p.h_z.forward(g, store, h)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z);
    let xn = p.x_n.forward(g, store, x)?;
    let hn = p.h_n.forward(g, store, h)?;
    let rhn = g.mul(r, hn)?;
    let n = g.add(xn, rhn)?;
    let n = g.tanh(n);
    // h' = n + z ⊙ (h − n)
    let diff = g.sub(h, n)?;
    let zd = g.mul(z, diff)?;
    g.add(n, zd)
}
