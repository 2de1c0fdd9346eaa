//! Dense feed-forward network over a flat parameter vector.
//!
//! Layer `l` stores its weights input-major (`w[i * out + o]`) followed by
//! the bias. Every row of a batch is computed independently with a fixed
//! accumulation order, so a sample's output does not depend on what else is
//! in the batch.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Silu => x * sigmoid(x),
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    offsets: Vec<usize>,
    num_params: usize,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Cache {
    batch: usize,
    /// Input of each layer (`inputs[0]` is the network input).
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn new(dims: Vec<usize>, activation: Activation) -> Self {
        assert!(dims.len() >= 2, "need input and output sizes");
        let mut offsets = Vec::with_capacity(dims.len() - 1);
        let mut n = 0;
        for w in dims.windows(2) {
            offsets.push(n);
            n += w[0] * w[1] + w[1];
        }
        Self {
            dims,
            activation,
            offsets,
            num_params: n,
        }
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    fn layer<'a>(&self, params: &'a [f64], l: usize) -> (&'a [f64], &'a [f64]) {
        let (i, o) = (self.dims[l], self.dims[l + 1]);
        let w = &params[self.offsets[l]..self.offsets[l] + i * o];
        let b = &params[self.offsets[l] + i * o..self.offsets[l] + i * o + o];
        (w, b)
    }

    /// Xavier-uniform weights, zero biases; the output layer is scaled by
    /// `output_scale`.
    pub fn init<R: rand::Rng>(&self, rng: &mut R, output_scale: f64) -> Vec<f64> {
        let mut p = vec![0.0; self.num_params];
        for l in 0..self.num_layers() {
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let mut bound = (6.0 / (i + o) as f64).sqrt();
            if l + 1 == self.num_layers() {
                bound *= output_scale;
            }
            for w in &mut p[self.offsets[l]..self.offsets[l] + i * o] {
                *w = rng.random_range(-bound..bound);
            }
        }
        p
    }

    fn affine(x: &[f64], w: &[f64], b: &[f64], batch: usize, out: &mut [f64]) {
        let (n_in, n_out) = (w.len() / b.len(), b.len());
        for r in 0..batch {
            let y = &mut out[r * n_out..(r + 1) * n_out];
            y.copy_from_slice(b);
            for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                let wi = &w[i * n_out..(i + 1) * n_out];
                for (yo, wo) in y.iter_mut().zip(wi) {
                    *yo += xi * wo;
                }
            }
        }
    }

    /// Output only.
    pub fn forward(&self, params: &[f64], x: &[f64], batch: usize) -> Vec<f64> {
        let mut cur = x.to_vec();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(params, l);
            let mut next = vec![0.0; batch * self.dims[l + 1]];
            Self::affine(&cur, w, b, batch, &mut next);
            if l + 1 < self.num_layers() {
                next.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            cur = next;
        }
        cur
    }

    pub fn forward_cached(&self, params: &[f64], x: &[f64], batch: usize) -> Cache {
        let mut inputs = vec![x.to_vec()];
        let mut pre = Vec::new();
        for l in 0..self.num_layers() {
            let (w, b) = self.layer(params, l);
            let mut z = vec![0.0; batch * self.dims[l + 1]];
            Self::affine(&inputs[l], w, b, batch, &mut z);
            if l + 1 < self.num_layers() {
                let a = z.iter().map(|v| self.activation.apply(*v)).collect();
                pre.push(z);
                inputs.push(a);
            } else {
                return Cache {
                    batch,
                    inputs,
                    pre,
                    output: z,
                };
            }
        }
        unreachable!()
    }

    /// Accumulate `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, params: &[f64], cache: &Cache, d_out: &[f64], grad: &mut [f64]) {
        let batch = cache.batch;
        let mut delta = d_out.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
            if l + 1 < self.num_layers() {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let off = self.offsets[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let x = &cache.inputs[l];
            for r in 0..batch {
                let dr = &delta[r * n_out..(r + 1) * n_out];
                for (g, d) in gb.iter_mut().zip(dr) {
                    *g += d;
                }
                for (i, &xi) in x[r * n_in..(r + 1) * n_in].iter().enumerate() {
                    for (g, d) in gw[i * n_out..(i + 1) * n_out].iter_mut().zip(dr) {
                        *g += xi * d;
                    }
                }
            }
            if l > 0 {
                let (w, _) = self.layer(params, l);
                let mut prev = vec![0.0; batch * n_in];
                for r in 0..batch {
                    let dr = &delta[r * n_out..(r + 1) * n_out];
                    for i in 0..n_in {
                        prev[r * n_in + i] = w[i * n_out..(i + 1) * n_out]
                            .iter()
                            .zip(dr)
                            .map(|(a, b)| a * b)
                            .sum();
                    }
                }
                delta = prev;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn parameter_count() {
        let m = Mlp::new(vec![3, 4, 2], Activation::Silu);
        assert_eq!(m.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn rows_are_independent_of_batch() {
        let m = Mlp::new(vec![5, 16, 16, 3], Activation::Silu);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let p = m.init(&mut rng, 1.0);
        let x: Vec<f64> = (0..15).map(|i| (i as f64 * 0.37).sin()).collect();
        let all = m.forward(&p, &x, 3);
        for r in 0..3 {
            let one = m.forward(&p, &x[r * 5..(r + 1) * 5], 1);
            assert_eq!(one, all[r * 3..(r + 1) * 3].to_vec());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = Mlp::new(vec![3, 6, 5, 2], Activation::Silu);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let p = m.init(&mut rng, 1.0);
        let x = [0.3, -1.2, 0.8, 1.0, 0.1, -0.4];
        // loss = sum(output * c)
        let c = [0.7, -1.3, 0.2, 0.9];
        let loss = |p: &[f64]| -> f64 {
            m.forward(p, &x, 2).iter().zip(&c).map(|(a, b)| a * b).sum()
        };
        let cache = m.forward_cached(&p, &x, 2);
        let mut g = vec![0.0; m.num_params()];
        m.backward(&p, &cache, &c, &mut g);
        for k in 0..m.num_params() {
            let mut pp = p.clone();
            let mut pm = p.clone();
            pp[k] += 1e-6;
            pm[k] -= 1e-6;
            let fd = (loss(&pp) - loss(&pm)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-7 * (1.0 + fd.abs()), "param {k}: {fd} vs {}", g[k]);
        }
    }
}
