use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network with one flat parameter buffer.
///
/// Layer `l` maps `dims[l]` to `dims[l + 1]`; its weights are stored
/// row-major (`out x in`) followed by its bias. Hidden layers use `hidden`,
/// the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub dims: Vec<usize>,
    pub hidden: Activation,
    pub params: Vec<f64>,
}

/// Per-layer outputs kept for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct MlpCache {
    rows: usize,
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|a| a.as_slice()).unwrap_or(&[])
    }

    /// Which hidden units were positive, layer by layer.
    pub fn active_pattern(&self) -> Vec<bool> {
        let nl = self.acts.len().saturating_sub(1);
        self.acts.iter().take(nl).skip(1).flatten().map(|&a| a > 0.0).collect()
    }
}

impl Mlp {
    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Mlp {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        Mlp { dims: dims.to_vec(), hidden, params: vec![0.0; Mlp::param_count(dims)] }
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation for weights and biases.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Mlp {
        let mut mlp = Mlp::zeros(dims, hidden);
        let mut off = 0;
        for w in dims.windows(2) {
            let bound = 1.0 / libm::sqrt(w[0] as f64);
            let n = w[0] * w[1] + w[1];
            for p in &mut mlp.params[off..off + n] {
                *p = rng.random_range(-bound..bound);
            }
            off += n;
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let start = off;
            off += w[0] * w[1] + w[1];
            (start, w[0], w[1])
        })
    }

    /// Forward pass over `rows` inputs laid out row-major.
    pub fn forward(&self, input: &[f64], rows: usize, cache: &mut MlpCache) {
        let nl = self.dims.len() - 1;
        debug_assert_eq!(input.len(), rows * self.input_dim());
        cache.rows = rows;
        cache.acts.resize_with(nl + 1, Vec::new);
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(input);
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let (w, rest) = self.params[off..].split_at(n_in * n_out);
            let b = &rest[..n_out];
            let act = if l + 1 == nl { Activation::Identity } else { self.hidden };
            let (prev, next) = cache.acts.split_at_mut(l + 1);
            let x = &prev[l];
            let y = &mut next[0];
            y.clear();
            y.resize(rows * n_out, 0.0);
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let yr = &mut y[r * n_out..(r + 1) * n_out];
                for j in 0..n_out {
                    let wj = &w[j * n_in..(j + 1) * n_in];
                    let mut z = b[j];
                    for i in 0..n_in {
                        z += wj[i] * xr[i];
                    }
                    yr[j] = act.apply(z);
                }
            }
        }
    }

    /// Back-propagates `grad_out` (same shape as the output) through the
    /// cached forward pass, accumulating into `grad_params`. Writes the
    /// gradient with respect to the input into `grad_input` when given.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut Vec<f64>>,
    ) {
        let rows = cache.rows;
        let nl = self.dims.len() - 1;
        let layers: Vec<(usize, usize, usize)> = self.layers().collect();
        let mut delta: Vec<f64> = grad_out.to_vec();
        let mut prev_delta: Vec<f64> = Vec::new();
        for l in (0..nl).rev() {
            let (off, n_in, n_out) = layers[l];
            let act = if l + 1 == nl { Activation::Identity } else { self.hidden };
            let y = &cache.acts[l + 1];
            if act != Activation::Identity {
                for (d, &a) in delta.iter_mut().zip(y) {
                    *d *= act.derivative(a);
                }
            }
            let x = &cache.acts[l];
            let w = &self.params[off..off + n_in * n_out];
            let (gw, gb) = grad_params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let need_input = l > 0 || grad_input.is_some();
            if need_input {
                prev_delta.clear();
                prev_delta.resize(rows * n_in, 0.0);
            }
            for r in 0..rows {
                let xr = &x[r * n_in..(r + 1) * n_in];
                let dr = &delta[r * n_out..(r + 1) * n_out];
                for j in 0..n_out {
                    let dj = dr[j];
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    let gwj = &mut gw[j * n_in..(j + 1) * n_in];
                    for i in 0..n_in {
                        gwj[i] += dj * xr[i];
                    }
                    if need_input {
                        let wj = &w[j * n_in..(j + 1) * n_in];
                        let pr = &mut prev_delta[r * n_in..(r + 1) * n_in];
                        for i in 0..n_in {
                            pr[i] += dj * wj[i];
                        }
                    }
                }
            }
            if need_input {
                core::mem::swap(&mut delta, &mut prev_delta);
            }
        }
        if let Some(gi) = grad_input {
            gi.clear();
            gi.extend_from_slice(&delta);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_layout() {
        assert_eq!(Mlp::param_count(&[3, 4, 2]), 3 * 4 + 4 + 4 * 2 + 2);
        let m = Mlp::zeros(&[3, 4, 2], Activation::Relu);
        let mut c = MlpCache::default();
        m.forward(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 2, &mut c);
        assert_eq!(c.output(), &[0.0; 4]);
    }

    #[test]
    fn linear_layer_by_hand() {
        let mut m = Mlp::zeros(&[2, 1], Activation::Relu);
        m.params.copy_from_slice(&[2.0, -3.0, 0.5]);
        let mut c = MlpCache::default();
        m.forward(&[1.0, 1.0, 2.0, 0.0], 2, &mut c);
        assert_eq!(c.output(), &[-0.5, 4.5]);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for act in [Activation::Tanh, Activation::Relu] {
            let m = Mlp::random(&[3, 5, 2], act, &mut rng);
            let x = [0.3, -0.7, 1.1];
            let mut c = MlpCache::default();
            m.forward(&x, 1, &mut c);
            let mut gp = vec![0.0; m.params.len()];
            let mut gi = Vec::new();
            m.backward(&c, &[1.0, 0.0], &mut gp, Some(&mut gi));
            for i in 0..3 {
                let h = 1e-6;
                let mut xp = x;
                xp[i] += h;
                let mut xm = x;
                xm[i] -= h;
                m.forward(&xp, 1, &mut c);
                let up = c.output()[0];
                m.forward(&xm, 1, &mut c);
                let dn = c.output()[0];
                assert!(((up - dn) / (2.0 * h) - gi[i]).abs() < 1e-6);
            }
        }
    }
}
