//! Layers, parameter stores, and reverse-mode gradients.

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;

/// Per-layer nonlinearity. The catalogue is deliberately tiny: these three
/// are the only activations any model in the pipeline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Mish,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Mish => "mish",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "mish" => Ok(Activation::Mish),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }

    #[inline]
    fn apply<S: Scalar>(self, x: S) -> S {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Mish => x * softplus(x).tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative at pre-activation `pre` whose activation value was `post`.
    #[inline]
    fn deriv<S: Scalar>(self, pre: S, post: S) -> S {
        match self {
            Activation::Tanh => S::one() - post * post,
            Activation::Mish => {
                let t = softplus(pre).tanh();
                t + pre * (S::one() - t * t) * sigmoid(pre)
            }
            Activation::Identity => S::one(),
        }
    }
}

/// Numerically stable ln(1 + e^x).
#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    let cap = S::from_f64(20.0);
    if x > cap {
        x
    } else if x < -cap {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// One dense layer: `post = act(W·x + b)` with `W` stored row-major
/// (`w[o * in_dim + i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<S> {
    pub w: Vec<S>,
    pub b: Vec<S>,
    pub act: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

/// A stack of dense layers; doubles as the gradient container (gradients
/// are shaped exactly like the parameters they belong to).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<S> {
    pub layers: Vec<Layer<S>>,
}

impl<S: Scalar> ParamStore<S> {
    /// All-zero store with the given layer dimensions (`dims.len() - 1`
    /// layers) and per-layer activations.
    pub fn zeros(dims: &[usize], acts: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if acts.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "{} layers but {} activations",
                dims.len() - 1,
                acts.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        let layers = dims
            .windows(2)
            .zip(acts)
            .map(|(io, &act)| Layer {
                w: vec![S::zero(); io[0] * io[1]],
                b: vec![S::zero(); io[1]],
                act,
                in_dim: io[0],
                out_dim: io[1],
            })
            .collect();
        Ok(ParamStore { layers })
    }

    /// Seeded initialization: weights uniform in ±sqrt(6/(fan_in+fan_out)),
    /// biases zero.
    pub fn init(dims: &[usize], acts: &[Activation], seed: u64) -> Result<Self> {
        let mut store = Self::zeros(dims, acts)?;
        let mut stream = rng::stream(seed);
        for layer in &mut store.layers {
            let bound = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.w {
                *w = rng::uniform(&mut stream, -bound, bound);
            }
        }
        Ok(store)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Zero store with this store's shape (gradient / moment container).
    pub fn zeros_like(&self) -> Self {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: vec![S::zero(); l.w.len()],
                    b: vec![S::zero(); l.b.len()],
                    act: l.act,
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                })
                .collect(),
        }
    }

    /// `self += other` entry-wise; shapes must match.
    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.w.iter_mut().zip(&b.w) {
                *x += *y;
            }
            for (x, y) in a.b.iter_mut().zip(&b.b) {
                *x += *y;
            }
        }
    }

    /// `self *= c` entry-wise.
    pub fn scale(&mut self, c: S) {
        for l in &mut self.layers {
            for x in &mut l.w {
                *x *= c;
            }
            for x in &mut l.b {
                *x *= c;
            }
        }
    }

    /// Cast every entry to another precision (exact for f32 → f64).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        ParamStore {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    w: l.w.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
                    b: l.b.iter().map(|&x| T::from_f64(x.to_f64())).collect(),
                    act: l.act,
                    in_dim: l.in_dim,
                    out_dim: l.out_dim,
                })
                .collect(),
        }
    }

    /// Check dimension chaining and finiteness.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.w.len() != l.in_dim * l.out_dim || l.b.len() != l.out_dim {
                return Err(Error::Shape(format!("layer {i}: buffer sizes disagree with dims")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::Shape(format!(
                    "layer {i}: in_dim {} does not chain from previous out_dim {}",
                    l.in_dim,
                    self.layers[i - 1].out_dim
                )));
            }
            if l.w.iter().chain(&l.b).any(|x| !x.is_finite()) {
                return Err(Error::Numeric(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(())
    }

    /// Visit every parameter entry mutably, in a stable order (layer by
    /// layer, weights then bias).
    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut S)) {
        for l in &mut self.layers {
            for x in &mut l.w {
                f(x);
            }
            for x in &mut l.b {
                f(x);
            }
        }
    }

    /// Flatten all parameters into one vector (stable order, see
    /// [`Self::for_each_mut`]).
    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }
}

/// Per-layer pre-activations and activations kept from a forward pass so
/// the backward pass does not recompute them. `post[0]` is the input.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S> {
    pre: Vec<Vec<S>>,
    post: Vec<Vec<S>>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn output(&self) -> &[S] {
        self.post.last().expect("trace has at least the input")
    }
}

/// Evaluate the network. Pure: identical inputs give identical outputs.
pub fn forward<S: Scalar>(params: &ParamStore<S>, input: &[S]) -> Result<Vec<S>> {
    let mut trace = forward_trace(params, input)?;
    Ok(trace.post.pop().expect("trace holds at least the input"))
}

/// Evaluate the network and keep everything the backward pass needs.
pub fn forward_trace<S: Scalar>(params: &ParamStore<S>, input: &[S]) -> Result<ForwardTrace<S>> {
    if input.len() != params.in_dim() {
        return Err(Error::Shape(format!(
            "layer 0: input length {} != expected {}",
            input.len(),
            params.in_dim()
        )));
    }
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len() + 1);
    post.push(input.to_vec());
    for (idx, layer) in params.layers.iter().enumerate() {
        let x = &post[idx];
        if x.len() != layer.in_dim {
            return Err(Error::Shape(format!(
                "layer {idx}: input length {} != expected {}",
                x.len(),
                layer.in_dim
            )));
        }
        let mut p = Vec::with_capacity(layer.out_dim);
        for (o, row) in layer.w.chunks_exact(layer.in_dim).enumerate() {
            let mut acc = layer.b[o];
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc = acc + *wi * *xi;
            }
            p.push(acc);
        }
        let a = p.iter().map(|&v| layer.act.apply(v)).collect();
        pre.push(p);
        post.push(a);
    }
    Ok(ForwardTrace { pre, post })
}

/// Reverse-mode gradients of `⟨output, output_grad⟩` with respect to every
/// parameter and the input.
pub fn backward<S: Scalar>(
    params: &ParamStore<S>,
    input: &[S],
    output_grad: &[S],
) -> Result<(ParamStore<S>, Vec<S>)> {
    let trace = forward_trace(params, input)?;
    backward_from_trace(params, &trace, output_grad)
}

/// Backward pass reusing an existing forward trace (the training loops
/// evaluate once, build the loss gradient from the output, then call this).
pub fn backward_from_trace<S: Scalar>(
    params: &ParamStore<S>,
    trace: &ForwardTrace<S>,
    output_grad: &[S],
) -> Result<(ParamStore<S>, Vec<S>)> {
    if output_grad.len() != params.out_dim() {
        return Err(Error::Shape(format!(
            "output_grad length {} != network output {}",
            output_grad.len(),
            params.out_dim()
        )));
    }
    let mut grads = params.zeros_like();
    let mut dpost = output_grad.to_vec();
    for (idx, layer) in params.layers.iter().enumerate().rev() {
        let pre = &trace.pre[idx];
        let post = &trace.post[idx + 1];
        let x = &trace.post[idx];
        // dpre = dpost ⊙ act'(pre)
        let dpre: Vec<S> = (0..layer.out_dim)
            .map(|o| dpost[o] * layer.act.deriv(pre[o], post[o]))
            .collect();
        let g = &mut grads.layers[idx];
        let mut dx = vec![S::zero(); layer.in_dim];
        for (o, (row, grow)) in layer
            .w
            .chunks_exact(layer.in_dim)
            .zip(g.w.chunks_exact_mut(layer.in_dim))
            .enumerate()
        {
            let d = dpre[o];
            g.b[o] = d;
            for i in 0..layer.in_dim {
                grow[i] = d * x[i];
                dx[i] += row[i] * d;
            }
        }
        dpost = dx;
    }
    Ok((grads, dpost))
}
