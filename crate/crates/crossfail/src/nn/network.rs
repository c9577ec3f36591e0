//! Fully connected networks with residual blocks and exact reverse-mode
//! gradients.
//!
//! Parameters are stored as `f32`; all arithmetic runs in `f64` (parameters
//! are widened on use) so that gradients check out against central finite
//! differences to tight tolerances. Batches are row-major `f64` matrices.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input length {got} does not match network input dim {want}")]
    InputDim { got: usize, want: usize },
    #[error("layer dimension chain broken at layer {0}")]
    DimChain(usize),
    #[error("non-finite gradient encountered (index {0})")]
    NonFiniteGradient(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Silu,
    Sigmoid,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 + x * (1.0 - s))
            }
            Activation::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Silu => 2,
            Activation::Sigmoid => 3,
            Activation::Tanh => 4,
        }
    }

    pub fn from_tag(t: u8) -> Option<Self> {
        Some(match t {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Silu,
            3 => Activation::Sigmoid,
            4 => Activation::Tanh,
            _ => return None,
        })
    }
}

/// One affine layer followed by an activation. Weights are `[out][in]`
/// row-major.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f32>,
    pub b: Vec<f32>,
    pub act: Activation,
}

impl Dense {
    pub fn new(in_dim: usize, out_dim: usize, act: Activation, rng: &mut impl Rng) -> Self {
        // Xavier-uniform keeps small nets in their activations' linear range
        let s = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-s..s) as f32)
            .collect();
        Dense {
            in_dim,
            out_dim,
            w,
            b: vec![0.0; out_dim],
            act,
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize, act: Activation) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            act,
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// `x`: batch x in_dim. Writes pre-activations and outputs.
    fn forward_batch(&self, x: &[f64], batch: usize, pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        let (ind, outd) = (self.in_dim, self.out_dim);
        pre.clear();
        pre.resize(batch * outd, 0.0);
        out.clear();
        out.resize(batch * outd, 0.0);
        for bi in 0..batch {
            let xrow = &x[bi * ind..(bi + 1) * ind];
            let prow = &mut pre[bi * outd..(bi + 1) * outd];
            for o in 0..outd {
                let wrow = &self.w[o * ind..(o + 1) * ind];
                let mut acc = self.b[o] as f64;
                for (wv, xv) in wrow.iter().zip(xrow) {
                    acc += *wv as f64 * *xv;
                }
                prow[o] = acc;
            }
            let orow = &mut out[bi * outd..(bi + 1) * outd];
            for (ov, pv) in orow.iter_mut().zip(&pre[bi * outd..(bi + 1) * outd]) {
                *ov = self.act.apply(*pv);
            }
        }
    }

    /// Backprop for a batch. `g` is dL/d(output); accumulates dL/dw, dL/db
    /// into `gw`/`gb` (summed over the batch) and returns nothing; dL/dx is
    /// written to `gx`.
    #[allow(clippy::too_many_arguments)]
    fn backward_batch(
        &self,
        x: &[f64],
        pre: &[f64],
        g: &[f64],
        batch: usize,
        gw: &mut [f64],
        gb: &mut [f64],
        gx: &mut [f64],
    ) {
        let (ind, outd) = (self.in_dim, self.out_dim);
        gx.iter_mut().for_each(|v| *v = 0.0);
        let mut dpre = vec![0.0f64; outd];
        for bi in 0..batch {
            let xrow = &x[bi * ind..(bi + 1) * ind];
            let prow = &pre[bi * outd..(bi + 1) * outd];
            let grow = &g[bi * outd..(bi + 1) * outd];
            for o in 0..outd {
                dpre[o] = grow[o] * self.act.derivative(prow[o]);
            }
            let gxrow = &mut gx[bi * ind..(bi + 1) * ind];
            for o in 0..outd {
                let d = dpre[o];
                if d == 0.0 {
                    continue;
                }
                let wrow = &self.w[o * ind..(o + 1) * ind];
                let gwrow = &mut gw[o * ind..(o + 1) * ind];
                for i in 0..ind {
                    gwrow[i] += d * xrow[i];
                    gxrow[i] += d * wrow[i] as f64;
                }
                gb[o] += d;
            }
        }
    }
}

/// Pre-activation residual block: `y = x + fc2(silu(fc1(x)))` with square
/// outer dimensions and a configurable hidden width.
#[derive(Debug, Clone)]
pub struct Residual {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl Residual {
    pub fn new(dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Residual {
            fc1: Dense::new(dim, hidden, Activation::Silu, rng),
            fc2: Dense::new(hidden, dim, Activation::Identity, rng),
        }
    }

    pub fn param_count(&self) -> usize {
        self.fc1.param_count() + self.fc2.param_count()
    }
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Residual(Residual),
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.in_dim,
            Layer::Residual(r) => r.fc1.in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.out_dim,
            Layer::Residual(r) => r.fc2.out_dim,
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Dense(d) => d.param_count(),
            Layer::Residual(r) => r.param_count(),
        }
    }
}

/// A feed-forward network: a chain of dense and residual layers.
#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub input_dim: usize,
    pub output_dim: usize,
}

/// Forward cache for one batch, consumed by [`Network::backward_batch`].
pub struct ForwardCache {
    batch: usize,
    /// Per layer: input matrix, plus pre-activation matrices.
    inputs: Vec<Vec<f64>>,
    pres: Vec<LayerPre>,
    output: Vec<f64>,
}

enum LayerPre {
    Dense { pre: Vec<f64> },
    Residual { pre1: Vec<f64>, h: Vec<f64>, pre2: Vec<f64> },
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Result<Self, NnError> {
        let input_dim = layers.first().map(|l| l.in_dim()).unwrap_or(0);
        let mut cur = input_dim;
        for (i, l) in layers.iter().enumerate() {
            if l.in_dim() != cur {
                return Err(NnError::DimChain(i));
            }
            if let Layer::Residual(r) = l {
                if r.fc2.out_dim != r.fc1.in_dim || r.fc2.in_dim != r.fc1.out_dim {
                    return Err(NnError::DimChain(i));
                }
            }
            cur = l.out_dim();
        }
        Ok(Network {
            input_dim,
            output_dim: cur,
            layers,
        })
    }

    /// Standard residual MLP used by the denoisers and the discriminator:
    /// input projection, `blocks` residual blocks, linear head.
    pub fn residual_mlp(
        input: usize,
        hidden: usize,
        blocks: usize,
        output: usize,
        head_act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        let mut layers = vec![Layer::Dense(Dense::new(input, hidden, Activation::Silu, rng))];
        for _ in 0..blocks {
            layers.push(Layer::Residual(Residual::new(hidden, hidden, rng)));
        }
        layers.push(Layer::Dense(Dense::new(hidden, output, head_act, rng)));
        Network::new(layers).expect("residual_mlp dims chain by construction")
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Flat parameter view in a fixed order (dense: w then b; residual: fc1
    /// then fc2). The order is the contract for gradients, optimizer moments
    /// and checkpoints.
    pub fn visit_params(&self, mut f: impl FnMut(f32)) {
        for l in &self.layers {
            match l {
                Layer::Dense(d) => {
                    d.w.iter().for_each(|v| f(*v));
                    d.b.iter().for_each(|v| f(*v));
                }
                Layer::Residual(r) => {
                    r.fc1.w.iter().for_each(|v| f(*v));
                    r.fc1.b.iter().for_each(|v| f(*v));
                    r.fc2.w.iter().for_each(|v| f(*v));
                    r.fc2.b.iter().for_each(|v| f(*v));
                }
            }
        }
    }

    pub fn visit_params_mut(&mut self, mut f: impl FnMut(&mut f32)) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    d.w.iter_mut().for_each(&mut f);
                    d.b.iter_mut().for_each(&mut f);
                }
                Layer::Residual(r) => {
                    r.fc1.w.iter_mut().for_each(&mut f);
                    r.fc1.b.iter_mut().for_each(&mut f);
                    r.fc2.w.iter_mut().for_each(&mut f);
                    r.fc2.b.iter_mut().for_each(&mut f);
                }
            }
        }
    }

    pub fn params_vec(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.param_count());
        self.visit_params(|v| out.push(v));
        out
    }

    pub fn set_params(&mut self, flat: &[f32]) {
        let mut it = flat.iter();
        self.visit_params_mut(|p| *p = *it.next().expect("param count mismatch"));
    }

    pub fn zero_params(&mut self) {
        self.visit_params_mut(|p| *p = 0.0);
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let cache = self.forward_batch(input, 1)?;
        Ok(cache.output)
    }

    pub fn forward_batch(&self, input: &[f64], batch: usize) -> Result<ForwardCache, NnError> {
        if input.len() != batch * self.input_dim {
            return Err(NnError::InputDim {
                got: input.len(),
                want: batch * self.input_dim,
            });
        }
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut pres: Vec<LayerPre> = Vec::with_capacity(self.layers.len());
        let mut cur = input.to_vec();
        for l in &self.layers {
            inputs.push(cur.clone());
            match l {
                Layer::Dense(d) => {
                    let mut pre = Vec::new();
                    let mut out = Vec::new();
                    d.forward_batch(&cur, batch, &mut pre, &mut out);
                    pres.push(LayerPre::Dense { pre });
                    cur = out;
                }
                Layer::Residual(r) => {
                    let mut pre1 = Vec::new();
                    let mut h = Vec::new();
                    r.fc1.forward_batch(&cur, batch, &mut pre1, &mut h);
                    let mut pre2 = Vec::new();
                    let mut d2 = Vec::new();
                    r.fc2.forward_batch(&h, batch, &mut pre2, &mut d2);
                    for (o, x) in d2.iter_mut().zip(&cur) {
                        *o += *x;
                    }
                    pres.push(LayerPre::Residual { pre1, h, pre2 });
                    cur = d2;
                }
            }
        }
        Ok(ForwardCache {
            batch,
            inputs,
            pres,
            output: cur,
        })
    }

    /// Exact reverse-mode gradients for a batch. `upstream` is dL/d(output),
    /// batch-major; returns `(flat parameter gradients summed over the batch,
    /// dL/d(input))`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let batch = cache.batch;
        let mut grads = vec![0.0f64; self.param_count()];
        // per-layer parameter offsets in the flat layout
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0usize;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        let mut g = upstream.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[li];
            let base = offsets[li];
            match (l, &cache.pres[li]) {
                (Layer::Dense(d), LayerPre::Dense { pre }) => {
                    let (gw, rest) = grads[base..base + d.param_count()].split_at_mut(d.w.len());
                    let gb = rest;
                    let mut gx = vec![0.0f64; batch * d.in_dim];
                    d.backward_batch(x, pre, &g, batch, gw, gb, &mut gx);
                    g = gx;
                }
                (Layer::Residual(r), LayerPre::Residual { pre1, h, pre2 }) => {
                    let n1 = r.fc1.param_count();
                    let n2 = r.fc2.param_count();
                    let (s1, s2) = grads[base..base + n1 + n2].split_at_mut(n1);
                    let (gw1, gb1) = s1.split_at_mut(r.fc1.w.len());
                    let (gw2, gb2) = s2.split_at_mut(r.fc2.w.len());
                    let mut gh = vec![0.0f64; batch * r.fc2.in_dim];
                    r.fc2.backward_batch(h, pre2, &g, batch, gw2, gb2, &mut gh);
                    let mut gx = vec![0.0f64; batch * r.fc1.in_dim];
                    r.fc1.backward_batch(x, pre1, &gh, batch, gw1, gb1, &mut gx);
                    // skip connection
                    for (gxv, gv) in gx.iter_mut().zip(&g) {
                        *gxv += *gv;
                    }
                    g = gx;
                }
                _ => unreachable!("cache layout mirrors layer list"),
            }
        }
        (grads, g)
    }
}
