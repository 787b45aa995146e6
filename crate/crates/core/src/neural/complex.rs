use rand::Rng;

use super::linalg::{gemm, View};
use super::{glorot_uniform, FamilyRef};
use crate::error::{Error, Result};
use crate::gradsim::fidelity_grad_slots_complex;
use crate::neural::adam::AdamState;
use crate::qmat::{CMatrix, Mat2, C64};
use crate::templates::TemplateSpec;

/// Squared head norm below which a slot is treated as degenerate.
pub const HEAD_EPS: f64 = 1e-12;

/// Complex-valued dense network mapping a unitary to one SU(2) matrix per
/// template slot.
///
/// Each layer computes `W·x + b` with complex `W`, `b`; hidden layers apply
/// ReLU separately to real and imaginary parts. The output holds a pair
/// `(a, b)` per slot, mapped to `[[a, −b*], [b, a*]] / √(|a|²+|b|²)`.
///
/// Layer `l` stores `Re W`, `Im W` (both `out × in`, row-major), then
/// `Re b`, `Im b` in one flat real parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub family: FamilyRef,
    pub template: TemplateSpec,
    layer_sizes: Vec<usize>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

/// Slot matrices for one input, plus the slots whose head collapsed.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub slots: Vec<Mat2>,
    pub degenerate: Vec<usize>,
}

struct Pass {
    /// Real and imaginary activations per layer; index 0 is the input.
    re: Vec<Vec<f64>>,
    im: Vec<Vec<f64>>,
}

/// Split complex input batch: real parts and imaginary parts, row-major.
fn split_inputs(inputs: &[&CMatrix]) -> (Vec<f64>, Vec<f64>) {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for u in inputs {
        for z in u.as_slice() {
            re.push(z.re);
            im.push(z.im);
        }
    }
    (re, im)
}

impl EncoderModel {
    pub fn new<R: Rng + ?Sized>(family: FamilyRef, template: TemplateSpec, hidden: &[usize], rng: &mut R) -> Self {
        let d = template.dim();
        let mut sizes = vec![d * d];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * template.slot_count());
        let mut enc = Self::zeroed(family, template, sizes);
        for l in 0..enc.n_layers() {
            let (fan_in, fan_out) = (enc.layer_sizes[l], enc.layer_sizes[l + 1]);
            let w = enc.offsets[l];
            for p in &mut enc.params[w..w + 2 * fan_in * fan_out] {
                *p = glorot_uniform(rng, fan_in, fan_out);
            }
        }
        enc
    }

    pub(crate) fn zeroed(family: FamilyRef, template: TemplateSpec, layer_sizes: Vec<usize>) -> Self {
        let mut offsets = vec![0];
        for w in layer_sizes.windows(2) {
            let last = *offsets.last().unwrap();
            offsets.push(last + 2 * (w[0] * w[1] + w[1]));
        }
        let n = *offsets.last().unwrap();
        Self {
            family,
            template,
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

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// `(Re W, Im W, Re b, Im b)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let s = &self.params[self.offsets[l]..self.offsets[l + 1]];
        let (wr, rest) = s.split_at(i * o);
        let (wi, rest) = rest.split_at(i * o);
        let (br, bi) = rest.split_at(o);
        (wr, wi, br, bi)
    }

    pub(crate) fn layer_slice_mut(&mut self, l: usize) -> &mut [f64] {
        let (a, b) = (self.offsets[l], self.offsets[l + 1]);
        &mut self.params[a..b]
    }

    fn check_input(&self, u: &CMatrix) -> Result<()> {
        if u.dim() != self.template.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.template.dim(),
                actual: u.dim(),
            });
        }
        Ok(())
    }

    fn run(&self, xr: Vec<f64>, xi: Vec<f64>, rows: usize) -> Pass {
        let mut re = vec![xr];
        let mut im = vec![xi];
        for l in 0..self.n_layers() {
            let (fi, fo) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (wr, wi, br, bi) = self.layer(l);
            let mut zr: Vec<f64> = (0..rows).flat_map(|_| br.iter().copied()).collect();
            let mut zi: Vec<f64> = (0..rows).flat_map(|_| bi.iter().copied()).collect();
            let (ar, ai) = (&re[l], &im[l]);
            gemm(rows, fi, fo, 1.0, View::rm(ar, fi), View::tr(wr, fi), 1.0, &mut zr);
            gemm(rows, fi, fo, -1.0, View::rm(ai, fi), View::tr(wi, fi), 1.0, &mut zr);
            gemm(rows, fi, fo, 1.0, View::rm(ar, fi), View::tr(wi, fi), 1.0, &mut zi);
            gemm(rows, fi, fo, 1.0, View::rm(ai, fi), View::tr(wr, fi), 1.0, &mut zi);
            if l + 1 < self.n_layers() {
                zr.iter_mut().for_each(|v| *v = v.max(0.0));
                zi.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            re.push(zr);
            im.push(zi);
        }
        Pass { re, im }
    }

    fn head(&self, out_re: &[f64], out_im: &[f64]) -> EncoderOutput {
        let mut slots = Vec::with_capacity(self.template.slot_count());
        let mut degenerate = Vec::new();
        for s in 0..self.template.slot_count() {
            let a = C64::new(out_re[2 * s], out_im[2 * s]);
            let b = C64::new(out_re[2 * s + 1], out_im[2 * s + 1]);
            let n2 = a.norm_sqr() + b.norm_sqr();
            if n2 < HEAD_EPS {
                degenerate.push(s);
                slots.push(Mat2::IDENTITY);
            } else {
                slots.push(su2_from_pair(a, b, n2.sqrt()));
            }
        }
        EncoderOutput { slots, degenerate }
    }

    /// Slot matrices suggested for each input unitary.
    pub fn forward_batch(&self, inputs: &[&CMatrix]) -> Result<Vec<EncoderOutput>> {
        for u in inputs {
            self.check_input(u)?;
        }
        let rows = inputs.len();
        let (xr, xi) = split_inputs(inputs);
        let pass = self.run(xr, xi, rows);
        let width = *self.layer_sizes.last().unwrap();
        let (ore, oim) = (pass.re.last().unwrap(), pass.im.last().unwrap());
        Ok((0..rows)
            .map(|r| self.head(&ore[r * width..(r + 1) * width], &oim[r * width..(r + 1) * width]))
            .collect())
    }

    pub fn forward(&self, u: &CMatrix) -> Result<EncoderOutput> {
        Ok(self.forward_batch(&[u])?.pop().unwrap())
    }

    /// Mean reconstruction fidelity over the batch and the gradient of
    /// `1 − mean F` with respect to every real parameter.
    pub fn fidelity_and_grad(&self, batch: &[CMatrix]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::Config("empty encoder batch".into()));
        }
        for u in batch {
            self.check_input(u)?;
        }
        let rows = batch.len();
        let refs: Vec<&CMatrix> = batch.iter().collect();
        let (xr, xi) = split_inputs(&refs);
        let pass = self.run(xr, xi, rows);
        let width = *self.layer_sizes.last().unwrap();
        let n_slots = self.template.slot_count();

        // gradients in the packed form ∂L/∂Re + i·∂L/∂Im, L = 1 − mean F
        let mut gr = vec![0.0; rows * width];
        let mut gi = vec![0.0; rows * width];
        let mut total_f = 0.0;
        let scale = -1.0 / rows as f64;
        for r in 0..rows {
            let ore = &pass.re.last().unwrap()[r * width..(r + 1) * width];
            let oim = &pass.im.last().unwrap()[r * width..(r + 1) * width];
            let out = self.head(ore, oim);
            let (f, g_slots, _) = fidelity_grad_slots_complex(&self.template, &out.slots, &batch[r]);
            total_f += f;
            for s in 0..n_slots {
                let a = C64::new(ore[2 * s], oim[2 * s]);
                let b = C64::new(ore[2 * s + 1], oim[2 * s + 1]);
                let n2 = a.norm_sqr() + b.norm_sqr();
                if n2 < HEAD_EPS {
                    continue;
                }
                let (ga, gb) = head_backward(a, b, n2.sqrt(), &g_slots[s]);
                let base = r * width + 2 * s;
                gr[base] = scale * ga.re;
                gi[base] = scale * ga.im;
                gr[base + 1] = scale * gb.re;
                gi[base + 1] = scale * gb.im;
            }
        }

        let mut grad = vec![0.0; self.params.len()];
        for l in (0..self.n_layers()).rev() {
            let (fi, fo) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (wr, wi, _, _) = self.layer(l);
            let (xr, xi) = (&pass.re[l], &pass.im[l]);
            let g = &mut grad[self.offsets[l]..self.offsets[l + 1]];
            let (gwr, rest) = g.split_at_mut(fi * fo);
            let (gwi, rest) = rest.split_at_mut(fi * fo);
            let (gbr, gbi) = rest.split_at_mut(fo);
            // ∂W = G^T·conj(X): Re = Grᵀ Xr + Giᵀ Xi, Im = Giᵀ Xr − Grᵀ Xi
            gemm(fo, rows, fi, 1.0, View::tr(&gr, fo), View::rm(xr, fi), 0.0, gwr);
            gemm(fo, rows, fi, 1.0, View::tr(&gi, fo), View::rm(xi, fi), 1.0, gwr);
            gemm(fo, rows, fi, 1.0, View::tr(&gi, fo), View::rm(xr, fi), 0.0, gwi);
            gemm(fo, rows, fi, -1.0, View::tr(&gr, fo), View::rm(xi, fi), 1.0, gwi);
            for r in 0..rows {
                for o in 0..fo {
                    gbr[o] += gr[r * fo + o];
                    gbi[o] += gi[r * fo + o];
                }
            }
            if l > 0 {
                // ∂x = conj(W)ᵀ·g: Re = Gr Wr + Gi Wi, Im = Gi Wr − Gr Wi
                let mut pr = vec![0.0; rows * fi];
                let mut pi = vec![0.0; rows * fi];
                gemm(rows, fo, fi, 1.0, View::rm(&gr, fo), View::rm(wr, fi), 0.0, &mut pr);
                gemm(rows, fo, fi, 1.0, View::rm(&gi, fo), View::rm(wi, fi), 1.0, &mut pr);
                gemm(rows, fo, fi, 1.0, View::rm(&gi, fo), View::rm(wr, fi), 0.0, &mut pi);
                gemm(rows, fo, fi, -1.0, View::rm(&gr, fo), View::rm(wi, fi), 1.0, &mut pi);
                for (p, a) in pr.iter_mut().zip(xr) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                for (p, a) in pi.iter_mut().zip(xi) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                gr = pr;
                gi = pi;
            }
        }
        Ok((total_f / rows as f64, grad))
    }

    /// One Adam ascent step on mean fidelity; returns the pre-update mean.
    pub fn train_step(&mut self, batch: &[CMatrix], adam: &mut AdamState) -> Result<f64> {
        let (f, grad) = self.fidelity_and_grad(batch)?;
        adam.update(&mut self.params, &grad);
        Ok(f)
    }
}

/// `[[a, −b*], [b, a*]] / n`.
pub fn su2_from_pair(a: C64, b: C64, n: f64) -> Mat2 {
    let (a, b) = (a / n, b / n);
    Mat2([a, -b.conj(), b, a.conj()])
}

/// Pulls a packed slot gradient back through the normalized SU(2) head.
fn head_backward(a: C64, b: C64, n: f64, g: &[C64; 4]) -> (C64, C64) {
    let (an, bn) = (a / n, b / n);
    let ga = g[0] + g[3].conj();
    let gb = g[2] - g[1].conj();
    let radial = (an.conj() * ga + bn.conj() * gb).re;
    ((ga - an * radial) / n, (gb - bn * radial) / n)
}
