use rand::Rng;

use super::linalg::{gemm, View};
use super::{glorot_uniform, FamilyRef};
use crate::error::{Error, Result};
use crate::neural::adam::AdamState;

/// Fully connected ReLU network with a softmax output over templates.
///
/// Parameters live in one flat vector; layer `l` stores its `out × in`
/// weight matrix row-major followed by its `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierNet {
    pub family: FamilyRef,
    pub canonicalize_phase: bool,
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

struct Activations {
    /// Post-activation output of every layer; `acts[0]` is the input.
    acts: Vec<Vec<f64>>,
}

impl ClassifierNet {
    pub fn new<R: Rng + ?Sized>(family: FamilyRef, hidden: &[usize], canonicalize_phase: bool, rng: &mut R) -> Self {
        let dim = 1usize << family.n_qubits;
        let mut sizes = vec![2 * dim * dim];
        sizes.extend_from_slice(hidden);
        sizes.push(family.n_templates);
        let mut net = Self::zeroed(family, sizes, canonicalize_phase);
        for l in 0..net.n_layers() {
            let (fan_in, fan_out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let w = net.offsets[l];
            for p in &mut net.params[w..w + fan_in * fan_out] {
                *p = glorot_uniform(rng, fan_in, fan_out);
            }
        }
        net
    }

    pub(crate) fn zeroed(family: FamilyRef, layer_sizes: Vec<usize>, canonicalize_phase: bool) -> Self {
        let mut offsets = vec![0];
        for w in layer_sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + w[0] * w[1] + w[1]);
        }
        let n = *offsets.last().unwrap();
        Self {
            family,
            canonicalize_phase,
            layer_sizes,
            params: vec![0.0; n],
            offsets,
        }
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight and bias slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = self.offsets[l];
        (&self.params[w..w + i * o], &self.params[w + i * o..w + i * o + o])
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let w = self.offsets[l];
        let (wts, rest) = self.params[w..w + i * o + o].split_at_mut(i * o);
        (wts, rest)
    }

    pub(crate) fn set_layer(&mut self, l: usize, w: &[f64], b: &[f64]) -> Result<()> {
        let (wd, bd) = self.layer_mut(l);
        if wd.len() != w.len() || bd.len() != b.len() {
            return Err(Error::ModelFormat(format!("layer {l} has the wrong shape")));
        }
        wd.copy_from_slice(w);
        bd.copy_from_slice(b);
        Ok(())
    }

    fn check_rows(&self, features: &[f64]) -> Result<usize> {
        let n = self.n_inputs();
        if features.is_empty() || features.len() % n != 0 {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: features.len(),
            });
        }
        Ok(features.len() / n)
    }

    fn run(&self, features: &[f64], rows: usize) -> Activations {
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(features.to_vec());
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w, b) = self.layer(l);
            let mut z: Vec<f64> = (0..rows).flat_map(|_| b.iter().copied()).collect();
            gemm(rows, fan_in, fan_out, 1.0, View::rm(&acts[l], fan_in), View::tr(w, fan_in), 1.0, &mut z);
            if l + 1 < self.n_layers() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            acts.push(z);
        }
        Activations { acts }
    }

    /// Template probabilities for a row-major batch of feature vectors.
    pub fn forward_batch(&self, features: &[f64]) -> Result<Vec<f64>> {
        let rows = self.check_rows(features)?;
        let mut out = self.run(features, rows).acts.pop().unwrap();
        for row in out.chunks_mut(self.n_classes()) {
            softmax_in_place(row);
        }
        Ok(out)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                actual: features.len(),
            });
        }
        self.forward_batch(features)
    }

    /// Mean cross-entropy and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, features: &[f64], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        let rows = self.check_rows(features)?;
        if rows != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: labels.len(),
            });
        }
        let k = self.n_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label: bad, classes: k });
        }
        let act = self.run(features, rows);
        let logits = act.acts.last().unwrap();

        let inv_rows = 1.0 / rows as f64;
        let mut loss = 0.0;
        let mut delta = logits.clone();
        for (row, &label) in delta.chunks_mut(k).zip(labels) {
            let lse = log_sum_exp(row);
            loss += lse - row[label];
            for v in row.iter_mut() {
                *v = (*v - lse).exp() * inv_rows;
            }
            row[label] -= inv_rows;
        }
        loss *= inv_rows;

        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = self.offsets[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            gemm(fan_out, rows, fan_in, 1.0, View::tr(&delta, fan_out), View::rm(&act.acts[l], fan_in), 0.0, gw);
            for row in delta.chunks(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l > 0 {
                let (w, _) = self.layer(l);
                let mut prev = vec![0.0; rows * fan_in];
                gemm(rows, fan_out, fan_in, 1.0, View::rm(&delta, fan_out), View::rm(w, fan_in), 0.0, &mut prev);
                for (p, a) in prev.iter_mut().zip(&act.acts[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
        Ok((loss, grad))
    }

    /// One Adam step on the batch; returns the loss before the update.
    pub fn train_step(&mut self, features: &[f64], labels: &[usize], adam: &mut AdamState) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(features, labels)?;
        adam.update(&mut self.params, &grad);
        Ok(loss)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let lse = log_sum_exp(row);
    for v in row.iter_mut() {
        *v = (*v - lse).exp();
    }
}

/// Cross-entropy of a probability vector against a label.
pub fn cross_entropy(probs: &[f64], label: usize) -> f64 {
    -probs[label].max(f64::MIN_POSITIVE).ln()
}
