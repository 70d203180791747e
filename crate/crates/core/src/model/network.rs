//! Grouped-branch feed-forward network with manual backpropagation.
//!
//! Each group `g` passes its inputs through a dense ReLU branch of width `h`;
//! the branch outputs are concatenated, passed through a dense ReLU fusion
//! layer of width `e` (the embedding), then a single sigmoid output unit.
//!
//! Parameters live in one flat vector, group branches first:
//! `W_g` (`d_g x h`, row-major) and `b_g` (`h`) for each group, then `W_f`
//! (`G*h x e`), `b_f` (`e`), `w_o` (`e`), `b_o` (1).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub input_widths: Vec<usize>,
    pub branch_width: usize,
    pub embedding_width: usize,
    pub params: Vec<f64>,
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    /// Branch outputs after ReLU, concatenated (`G*h`).
    pub concat: Vec<f64>,
    /// Embedding after ReLU (`e`).
    pub embedding: Vec<f64>,
    pub logit: f64,
    pub prob: f64,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl Network {
    pub fn zeros(input_widths: Vec<usize>, branch_width: usize, embedding_width: usize) -> Self {
        let mut net = Network {
            input_widths,
            branch_width,
            embedding_width,
            params: Vec::new(),
        };
        net.params = vec![0.0; net.n_params()];
        net
    }

    pub fn n_params(&self) -> usize {
        let h = self.branch_width;
        let e = self.embedding_width;
        let branches: usize = self.input_widths.iter().map(|d| d * h + h).sum();
        branches + self.concat_width() * e + e + e + 1
    }

    pub fn concat_width(&self) -> usize {
        self.input_widths.len() * self.branch_width
    }

    fn branch_offsets(&self) -> Vec<usize> {
        let h = self.branch_width;
        let mut offsets = Vec::with_capacity(self.input_widths.len() + 1);
        let mut off = 0;
        for d in &self.input_widths {
            offsets.push(off);
            off += d * h + h;
        }
        offsets.push(off);
        offsets
    }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let h = self.branch_width;
        let e = self.embedding_width;
        let offsets = self.branch_offsets();
        for (g, &d) in self.input_widths.iter().enumerate() {
            let bound = 1.0 / (d.max(1) as f64).sqrt();
            let w = &mut self.params[offsets[g]..offsets[g] + d * h];
            w.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        }
        let fuse = offsets[self.input_widths.len()];
        let cw = self.concat_width();
        let bound = 1.0 / (cw as f64).sqrt();
        for v in &mut self.params[fuse..fuse + cw * e] {
            *v = rng.random_range(-bound..bound);
        }
        let out = fuse + cw * e + e;
        let bound = 1.0 / (e as f64).sqrt();
        for v in &mut self.params[out..out + e] {
            *v = rng.random_range(-bound..bound);
        }
        // biases stay zero
    }

    fn check_inputs(&self, inputs: &[&[f64]]) -> Result<()> {
        if inputs.len() != self.input_widths.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} input groups for a {}-group network",
                inputs.len(),
                self.input_widths.len()
            )));
        }
        for (g, (x, &d)) in inputs.iter().zip(&self.input_widths).enumerate() {
            if x.len() != d {
                return Err(Error::DimensionMismatch(format!(
                    "group {g} has {} inputs, expected {d}",
                    x.len()
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, inputs: &[&[f64]], cache: &mut ForwardCache) -> Result<f64> {
        self.check_inputs(inputs)?;
        let h = self.branch_width;
        let e = self.embedding_width;
        let offsets = self.branch_offsets();
        let p = &self.params;

        cache.concat.clear();
        cache.concat.resize(self.concat_width(), 0.0);
        for (g, x) in inputs.iter().enumerate() {
            let d = x.len();
            let w = &p[offsets[g]..offsets[g] + d * h];
            let b = &p[offsets[g] + d * h..offsets[g + 1]];
            let out = &mut cache.concat[g * h..(g + 1) * h];
            out.copy_from_slice(b);
            for (a, &xa) in x.iter().enumerate() {
                for (o, &wv) in out.iter_mut().zip(&w[a * h..(a + 1) * h]) {
                    *o += xa * wv;
                }
            }
            out.iter_mut().for_each(|v| *v = relu(*v));
        }

        let fuse = offsets[inputs.len()];
        let cw = self.concat_width();
        let wf = &p[fuse..fuse + cw * e];
        let bf = &p[fuse + cw * e..fuse + cw * e + e];
        cache.embedding.clear();
        cache.embedding.extend_from_slice(bf);
        for (i, &c) in cache.concat.iter().enumerate() {
            if c != 0.0 {
                for (o, &wv) in cache.embedding.iter_mut().zip(&wf[i * e..(i + 1) * e]) {
                    *o += c * wv;
                }
            }
        }
        cache.embedding.iter_mut().for_each(|v| *v = relu(*v));

        let out = fuse + cw * e + e;
        let wo = &p[out..out + e];
        let bo = p[out + e];
        cache.logit = bo + cache.embedding.iter().zip(wo).map(|(a, b)| a * b).sum::<f64>();
        cache.prob = sigmoid(cache.logit);
        Ok(cache.prob)
    }

    /// Adds `d loss / d params` to `grad` given `d loss / d logit`.
    pub fn backward(&self, inputs: &[&[f64]], cache: &ForwardCache, dlogit: f64, grad: &mut [f64]) {
        let h = self.branch_width;
        let e = self.embedding_width;
        let offsets = self.branch_offsets();
        let p = &self.params;
        let g_count = inputs.len();
        let fuse = offsets[g_count];
        let cw = self.concat_width();
        let out = fuse + cw * e + e;

        let mut d_emb = vec![0.0; e];
        for j in 0..e {
            grad[out + j] += dlogit * cache.embedding[j];
            if cache.embedding[j] > 0.0 {
                d_emb[j] = dlogit * p[out + j];
            }
        }
        grad[out + e] += dlogit;

        let mut d_concat = vec![0.0; cw];
        for i in 0..cw {
            let c = cache.concat[i];
            let row = fuse + i * e;
            let mut acc = 0.0;
            for j in 0..e {
                grad[row + j] += c * d_emb[j];
                acc += p[row + j] * d_emb[j];
            }
            if c > 0.0 {
                d_concat[i] = acc;
            }
        }
        for j in 0..e {
            grad[fuse + cw * e + j] += d_emb[j];
        }

        for (g, x) in inputs.iter().enumerate() {
            let d = x.len();
            let dz = &d_concat[g * h..(g + 1) * h];
            for (a, &xa) in x.iter().enumerate() {
                let row = offsets[g] + a * h;
                for j in 0..h {
                    grad[row + j] += xa * dz[j];
                }
            }
            let bias = offsets[g] + d * h;
            for j in 0..h {
                grad[bias + j] += dz[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_network_outputs_half() {
        let net = Network::zeros(vec![3, 2], 4, 5);
        let mut cache = ForwardCache::default();
        let p = net.forward(&[&[1.0, 2.0, 3.0], &[4.0, 5.0]], &mut cache).unwrap();
        assert_eq!(p, 0.5);
        assert!(cache.embedding.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn parameter_count() {
        let net = Network::zeros(vec![12, 12, 12, 12], 16, 32);
        assert_eq!(net.n_params(), 4 * (12 * 16 + 16) + 64 * 32 + 32 + 32 + 1);
    }

    #[test]
    fn dimension_checks() {
        let net = Network::zeros(vec![3], 2, 2);
        let mut cache = ForwardCache::default();
        assert!(matches!(
            net.forward(&[&[1.0, 2.0]], &mut cache),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(net.forward(&[], &mut cache), Err(Error::DimensionMismatch(_))));
    }
}
