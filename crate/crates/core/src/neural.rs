//! Dense tanh networks with hand-written backpropagation and Adam.
//!
//! Parameters live in one flat buffer so the optimizer and the gradient
//! checker can treat every network uniformly. Layer `i` stores its weight
//! matrix row-major (`out × in`) followed by its bias; optional free
//! parameters (the actor's log-σ) trail the last layer.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    sizes: Vec<usize>,
    data: Vec<f64>,
    extra: usize,
}

/// Activations recorded by a forward pass, input first, output last.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }
}

fn layer_len(n_in: usize, n_out: usize) -> usize {
    n_in * n_out + n_out
}

impl MlpParams {
    /// All-zero network with the given layer sizes and `extra` trailing free
    /// parameters.
    pub fn zeros(sizes: &[usize], extra: usize) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let n: usize = sizes.windows(2).map(|w| layer_len(w[0], w[1])).sum();
        Ok(Self { sizes: sizes.to_vec(), data: vec![0.0; n + extra], extra })
    }

    /// Orthogonal weights scaled by `hidden_gain` (hidden layers) and
    /// `output_gain` (last layer); zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(
        sizes: &[usize],
        extra: usize,
        hidden_gain: f64,
        output_gain: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(sizes, extra)?;
        let n_layers = p.n_layers();
        for layer in 0..n_layers {
            let (n_in, n_out) = (p.sizes[layer], p.sizes[layer + 1]);
            let gain = if layer + 1 == n_layers { output_gain } else { hidden_gain };
            let w = orthogonal_matrix(n_out, n_in, rng);
            for (dst, src) in p.weights_mut(layer).iter_mut().zip(w) {
                *dst = gain * src;
            }
        }
        Ok(p)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn n_extra(&self) -> usize {
        self.extra
    }

    /// Index of the first trailing free parameter.
    pub fn extra_offset(&self) -> usize {
        self.data.len() - self.extra
    }

    pub fn extras(&self) -> &[f64] {
        &self.data[self.extra_offset()..]
    }

    pub fn extras_mut(&mut self) -> &mut [f64] {
        let o = self.extra_offset();
        &mut self.data[o..]
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.sizes[..=layer].windows(2).map(|w| layer_len(w[0], w[1])).sum()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let o = self.layer_offset(layer);
        &self.data[o..o + self.sizes[layer] * self.sizes[layer + 1]]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let o = self.layer_offset(layer);
        let n = self.sizes[layer] * self.sizes[layer + 1];
        &mut self.data[o..o + n]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let o = self.layer_offset(layer) + self.sizes[layer] * self.sizes[layer + 1];
        &self.data[o..o + self.sizes[layer + 1]]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let o = self.layer_offset(layer) + self.sizes[layer] * self.sizes[layer + 1];
        let n = self.sizes[layer + 1];
        &mut self.data[o..o + n]
    }

    pub fn from_parts(sizes: Vec<usize>, data: Vec<f64>, extra: usize) -> Result<Self> {
        let shape = Self::zeros(&sizes, extra)?;
        if shape.data.len() != data.len() {
            return Err(invalid(format!("expected {} parameters, got {}", shape.data.len(), data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(Self { sizes, data, extra })
    }

    /// Affine→tanh for hidden layers, affine output.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(input)?.activations.pop().unwrap())
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<ForwardCache> {
        if input.len() != self.input_len() {
            return Err(invalid(format!("input length {} does not match layer 0 width {}", input.len(), self.input_len())));
        }
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(input.to_vec());
        let n_layers = self.n_layers();
        let mut offset = 0;
        for layer in 0..n_layers {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let w = &self.data[offset..offset + n_in * n_out];
            let b = &self.data[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += layer_len(n_in, n_out);
            let x = activations.last().unwrap();
            let mut out: Vec<f64> = w.chunks_exact(n_in).zip(b).map(|(row, bi)| bi + dot(row, x)).collect();
            if layer + 1 < n_layers {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Accumulates into `grad` the gradient of a scalar loss given
    /// `upstream = ∂loss/∂output` for the pass recorded in `cache`.
    pub fn backward(&self, cache: &ForwardCache, upstream: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.data.len());
        debug_assert_eq!(upstream.len(), self.output_len());
        let n_layers = self.n_layers();
        let mut delta = upstream.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let offset = self.layer_offset(layer);
            let x = &cache.activations[layer];
            {
                let (gw, gb) = grad[offset..offset + layer_len(n_in, n_out)].split_at_mut(n_in * n_out);
                for ((row, gbi), d) in gw.chunks_exact_mut(n_in).zip(gb.iter_mut()).zip(&delta) {
                    *gbi += d;
                    if *d != 0.0 {
                        row.iter_mut().zip(x).for_each(|(g, xi)| *g += d * xi);
                    }
                }
            }
            if layer == 0 {
                break;
            }
            let w = &self.data[offset..offset + n_in * n_out];
            let mut prev = vec![0.0; n_in];
            for (row, d) in w.chunks_exact(n_in).zip(&delta) {
                if *d != 0.0 {
                    prev.iter_mut().zip(row).for_each(|(p, wi)| *p += d * wi);
                }
            }
            // tanh' = 1 − a²
            prev.iter_mut().zip(x).for_each(|(p, a)| *p *= 1.0 - a * a);
            delta = prev;
        }
    }

    /// Summed parameter gradient over a batch; `upstream[i]` is
    /// `∂loss/∂output` for `inputs[i]`.
    pub fn gradients(&self, inputs: &[Vec<f64>], upstream: &[Vec<f64>]) -> Result<Vec<f64>> {
        if inputs.len() != upstream.len() {
            return Err(invalid("inputs and upstream gradients differ in length"));
        }
        let mut grad = vec![0.0; self.data.len()];
        for (x, g) in inputs.iter().zip(upstream) {
            let cache = self.forward_cached(x)?;
            self.backward(&cache, g, &mut grad);
        }
        Ok(grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Random `rows × cols` matrix with orthonormal rows (or columns, whichever
/// is the shorter dimension), row-major.
fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Vec<f64> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    // n vectors of length m, Gram–Schmidt orthonormalised.
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(n);
    while vecs.len() < n {
        let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let p = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= p * ui);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|vi| *vi /= norm);
            vecs.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = if rows <= cols { vecs[i][j] } else { vecs[j][i] };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn for_params(params: &MlpParams) -> Self {
        Self::new(params.len())
    }
}

/// Bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], adam: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != adam.m.len() {
        return Err(invalid("Adam: parameter, gradient and moment lengths differ"));
    }
    adam.t += 1;
    let t = adam.t as i32;
    let (b1, b2) = (adam.beta1, adam.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(adam.m.iter_mut()).zip(adam.v.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + adam.eps);
    }
    Ok(())
}

/// Largest discrepancy between `analytic` and a central-difference estimate
/// of `∂loss/∂θ` over every parameter. Each entry's error is
/// `|a − n| / max(|a|, |n|, 1e-3·max_j |n_j|)`: central differences carry an
/// absolute roundoff of about `ε·|loss|/h`, so components a thousand times
/// smaller than the largest one are judged on the gradient's own scale.
pub fn finite_diff_check<F>(params: &MlpParams, loss: F, analytic: &[f64], h: f64) -> f64
where
    F: Fn(&MlpParams) -> f64,
{
    let mut probe = params.clone();
    let numeric: Vec<f64> = (0..params.len())
        .map(|i| {
            let base = params.data[i];
            probe.data[i] = base + h;
            let up = loss(&probe);
            probe.data[i] = base - h;
            let down = loss(&probe);
            probe.data[i] = base;
            (up - down) / (2.0 * h)
        })
        .collect();
    let floor = 1e-3 * numeric.iter().fold(0.0f64, |m, n| m.max(n.abs())).max(1e-12);
    numeric
        .iter()
        .zip(analytic)
        .map(|(n, a)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
