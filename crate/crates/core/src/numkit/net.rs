//! Small fully connected networks: parameters, forward passes, and exact
//! reverse-mode gradients, batched over rows of a [`Mat`].

use super::mat::{matmul_nn, matmul_nt, matmul_tn, Mat};
use crate::error::{Error, Result};
use rand::Rng;

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(&self, m: &mut Mat) {
        if let Activation::Relu = self {
            for v in m.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }

    /// Multiply `grad` by the activation derivative, read off the
    /// post-activation values (for ReLU the sign of the output suffices).
    fn backprop(&self, grad: &mut Mat, post: &Mat) {
        if let Activation::Relu = self {
            for (g, &y) in grad.data_mut().iter_mut().zip(post.data()) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
    }
}

/// One dense layer, `y = W x + b`, with `W` stored row-major `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Mat,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer { weights: Mat::zeros(out_dim, in_dim), bias: vec![0.0; out_dim] }
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }
}

/// Parameters of a dense network. The hidden activation applies after every
/// layer except the last.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNetParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

impl DenseNetParams {
    /// Glorot-uniform initialization over the given layer sizes
    /// (`dims = [in, h1, ..., out]`).
    pub fn random<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut layer = Layer::zeros(fan_out, fan_in);
            for v in layer.weights.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
            layers.push(layer);
        }
        DenseNetParams { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Check dimension chaining and finiteness of every entry.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network has no layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} out={} does not chain into layer {} in={}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} bias length mismatch")));
            }
            if !l.weights.is_finite() || !l.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.data().len() + l.bias.len())
            .sum()
    }

    /// Flat parameter view in a fixed order (per layer: weights row-major,
    /// then bias). Used by gradient verification.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn unflatten_from(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::Shape("flat parameter length mismatch".into()));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.data().len();
            l.weights.data_mut().copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Deterministic affine + activation composition on a single input.
    /// Allocation-light path for per-step rollouts; uses the single-sample
    /// kernel, which may differ from the batched pass in final-ulp rounding.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match first layer in-dim {}",
                input.len(),
                self.in_dim()
            )));
        }
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let n_layers = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            super::mat::matvec_bias_into(&layer.weights, &cur, &layer.bias, &mut next);
            if i + 1 < n_layers {
                if let Activation::Relu = self.activation {
                    for v in &mut next {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward over a batch of inputs (one row per sample).
    pub fn forward_batch(&self, input: &Mat) -> Result<Mat> {
        Ok(self.forward_batch_cached(input)?.0)
    }

    /// Forward pass that also returns per-layer post-activations for reuse
    /// by [`DenseNetParams::backprop_cached`].
    pub fn forward_batch_cached(&self, input: &Mat) -> Result<(Mat, ForwardCache)> {
        if input.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input dim {} does not match first layer in-dim {}",
                input.cols(),
                self.in_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut outputs: Vec<Mat> = Vec::with_capacity(n_layers);
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let mut y = matmul_nt(x, &layer.weights)?;
            y.add_row_vector(&layer.bias);
            if i + 1 < n_layers {
                self.activation.apply(&mut y);
            }
            outputs.push(y);
        }
        let out = outputs.last().expect("validated non-empty").clone();
        Ok((out, ForwardCache { input: input.clone(), outputs }))
    }

    /// Exact reverse-mode gradient of `<upstream, forward(input)>` with
    /// respect to every parameter, recomputing the forward pass.
    pub fn backprop(&self, input: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        let x = Mat::from_rows(std::slice::from_ref(&input.to_vec()))?;
        let u = Mat::from_rows(std::slice::from_ref(&upstream.to_vec()))?;
        let (_, cache) = self.forward_batch_cached(&x)?;
        Ok(self.backprop_cached(&cache, &u)?.0)
    }

    /// Reverse pass over a batch given a forward cache. Returns parameter
    /// gradients and the gradient with respect to the input rows.
    pub fn backprop_cached(&self, cache: &ForwardCache, upstream: &Mat) -> Result<(GradientBundle, Mat)> {
        let n_layers = self.layers.len();
        if upstream.cols() != self.out_dim() || upstream.rows() != cache.input.rows() {
            return Err(Error::Shape(format!(
                "upstream {}x{} does not match output {}x{}",
                upstream.rows(),
                upstream.cols(),
                cache.input.rows(),
                self.out_dim()
            )));
        }
        let mut grads: Vec<Layer> = self.layers.iter().map(|l| Layer::zeros(l.out_dim(), l.in_dim())).collect();
        let mut delta = upstream.clone();
        for i in (0..n_layers).rev() {
            if i + 1 < n_layers {
                // Undo the activation applied after layer i.
                self.activation.backprop(&mut delta, &cache.outputs[i]);
            }
            let x = if i == 0 { &cache.input } else { &cache.outputs[i - 1] };
            grads[i].weights = matmul_tn(&delta, x)?;
            grads[i].bias = delta.col_sums();
            delta = matmul_nn(&delta, &self.layers[i].weights)?;
        }
        let input_grad = delta;
        Ok((GradientBundle { layers: grads }, input_grad))
    }
}

/// Cached intermediate values from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Mat,
    /// Post-activation output of every layer (last entry is the net output).
    outputs: Vec<Mat>,
}

impl ForwardCache {
    pub fn output(&self) -> &Mat {
        self.outputs.last().expect("non-empty")
    }
}

/// Parameter gradients, shape-congruent with [`DenseNetParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<Layer>,
}

impl GradientBundle {
    pub fn zeros_like(params: &DenseNetParams) -> Self {
        GradientBundle {
            layers: params.layers.iter().map(|l| Layer::zeros(l.out_dim(), l.in_dim())).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &GradientBundle) {
        debug_assert_eq!(self.layers.len(), other.layers.len());
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            for (d, s) in dst.weights.data_mut().iter_mut().zip(src.weights.data()) {
                *d += a * s;
            }
            for (d, s) in dst.bias.iter_mut().zip(&src.bias) {
                *d += a * s;
            }
        }
    }

    pub fn scale(&mut self, a: f64) {
        for l in &mut self.layers {
            for v in l.weights.data_mut() {
                *v *= a;
            }
            for v in &mut l.bias {
                *v *= a;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0_f64;
        for l in &self.layers {
            m = m.max(l.weights.max_abs());
            for v in &l.bias {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// Apply `params += lr * grad` in place.
pub fn apply_gradient(params: &mut DenseNetParams, lr: f64, grad: &GradientBundle) {
    debug_assert_eq!(params.layers.len(), grad.layers.len());
    for (p, g) in params.layers.iter_mut().zip(&grad.layers) {
        for (d, s) in p.weights.data_mut().iter_mut().zip(g.weights.data()) {
            *d += lr * s;
        }
        for (d, s) in p.bias.iter_mut().zip(&g.bias) {
            *d += lr * s;
        }
    }
}
