//! Differentiable template evaluation.
//!
//! With `t = Tr(target†·V)` and `F = |t|²/d²`, every derivative reduces to
//! `∂F/∂x = (2/d²)·Re(conj(t)·∂t/∂x)`. For a slot at time step `k`,
//! `t = Tr(G_k·P_{k-1}·S_k)` with prefix `P_{k-1} = G_{k-1}···G_1` and suffix
//! `S_k = target†·G_n···G_{k+1}`, so `∂t/∂s_ab` is a partial trace of
//! `P_{k-1}·S_k`. Prefixes are accumulated forwards, suffixes backwards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::qmat::{overlap, CMatrix, Mat2, C64, ZERO};
use crate::templates::{
    apply_template, enumerate_templates, sample_params, slot_matrix_derivs,
    slot_mats_from_cmatrices, Op, ParamVector, TemplateSpec,
};

#[derive(Clone, Debug)]
pub struct GradResult {
    pub fidelity: f64,
    pub grad: Vec<f64>,
    pub value_unitary: CMatrix,
}

/// Overlap `t` and `∂t/∂s_ab` for every slot, `[∂00, ∂01, ∂10, ∂11]`.
pub(crate) struct SlotSensitivity {
    pub overlap: C64,
    pub dt_ds: Vec<[C64; 4]>,
    pub unitary: CMatrix,
}

fn check_dims(t: &TemplateSpec, target: &CMatrix) -> Result<()> {
    if target.dim() != t.dim() {
        return Err(Error::DimensionMismatch {
            expected: t.dim(),
            actual: target.dim(),
        });
    }
    Ok(())
}

pub(crate) fn slot_sensitivities(t: &TemplateSpec, mats: &[Mat2], target: &CMatrix) -> SlotSensitivity {
    let d = t.dim();
    let n = t.n_qubits;
    let ops = t.ops();

    // prefixes[k] = G_k···G_1 applied to the identity (prefixes[0] = I)
    let mut prefixes = Vec::with_capacity(ops.len() + 1);
    let mut acc = CMatrix::identity(d);
    prefixes.push(acc.clone());
    for op in ops {
        match *op {
            Op::Slot(i) => acc.apply_1q_left(&mats[i], t.slots[i].qubit, n),
            Op::Cz(a, b) => acc.apply_cz(a, b, n, true),
        }
        prefixes.push(acc.clone());
    }
    let unitary = acc;
    let ov = overlap(target, &unitary);

    let mut dt_ds = vec![[ZERO; 4]; t.slot_count()];
    let mut suffix = target.adjoint();
    for (k, op) in ops.iter().enumerate().rev() {
        match *op {
            Op::Slot(i) => {
                let q = t.slots[i].qubit;
                let mask = 1usize << (n - 1 - q);
                let p = prefixes[k].as_slice();
                let s = suffix.as_slice();
                let mut g = [ZERO; 4];
                for col in 0..d {
                    let a = usize::from(col & mask != 0);
                    for b in 0..2 {
                        let row = if b == 1 { col | mask } else { col & !mask };
                        // M[row, col] = Σ_l P[row, l]·S[l, col]
                        let mut m = ZERO;
                        for l in 0..d {
                            m += p[row * d + l] * s[l * d + col];
                        }
                        g[a * 2 + b] += m;
                    }
                }
                dt_ds[i] = g;
                suffix.apply_1q_right(&mats[i], q, n);
            }
            Op::Cz(a, b) => suffix.apply_cz(a, b, n, false),
        }
    }
    SlotSensitivity {
        overlap: ov,
        dt_ds,
        unitary,
    }
}

/// Fidelity and its gradient with respect to every template angle.
pub fn fidelity_grad_angles(t: &TemplateSpec, p: &ParamVector, target: &CMatrix) -> Result<GradResult> {
    check_dims(t, target)?;
    let params = p.as_slice();
    let mats = t.slot_matrices(params)?;
    let sens = slot_sensitivities(t, &mats, target);
    let d2 = (t.dim() * t.dim()) as f64;
    let scale = 2.0 / d2;
    let tc = sens.overlap.conj();

    let mut grad = vec![0.0; t.param_count()];
    let mut derivs = [Mat2::IDENTITY; 3];
    for (i, slot) in t.slots.iter().enumerate() {
        let r = t.param_range(i);
        slot_matrix_derivs(slot.kind, &params[r.clone()], &mut derivs);
        let g = &sens.dt_ds[i];
        for (k, idx) in r.enumerate() {
            let dt: C64 = derivs[k].0.iter().zip(g).map(|(dm, gi)| dm * gi).sum();
            grad[idx] = scale * (tc * dt).re;
        }
    }
    Ok(GradResult {
        fidelity: sens.overlap.norm_sqr() / d2,
        grad,
        value_unitary: sens.unitary,
    })
}

/// Fidelity gradient with respect to the real and imaginary parts of every
/// slot entry, laid out per slot as `[re00, im00, re01, im01, re10, im10, re11, im11]`.
pub fn fidelity_grad_slots(t: &TemplateSpec, slot_mats: &[CMatrix], target: &CMatrix) -> Result<GradResult> {
    check_dims(t, target)?;
    let mats = slot_mats_from_cmatrices(t, slot_mats)?;
    let (fidelity, complex_grad, unitary) = fidelity_grad_slots_complex(t, &mats, target);
    let grad = complex_grad
        .iter()
        .flat_map(|g| g.iter().flat_map(|z| [z.re, z.im]))
        .collect();
    Ok(GradResult {
        fidelity,
        grad,
        value_unitary: unitary,
    })
}

/// Slot gradient packed as `∂F/∂Re + i·∂F/∂Im` per entry.
pub(crate) fn fidelity_grad_slots_complex(
    t: &TemplateSpec,
    mats: &[Mat2],
    target: &CMatrix,
) -> (f64, Vec<[C64; 4]>, CMatrix) {
    let sens = slot_sensitivities(t, mats, target);
    let d2 = (t.dim() * t.dim()) as f64;
    let scale = 2.0 / d2;
    let ov = sens.overlap;
    // ∂F/∂Re s + i ∂F/∂Im s = (2/d²)·t·conj(∂t/∂s)
    let grads = sens
        .dt_ds
        .iter()
        .map(|g| g.map(|z| ov * z.conj() * scale))
        .collect();
    (ov.norm_sqr() / d2, grads, sens.unitary)
}

/// Fidelity of the template at `p` without gradients.
pub fn fidelity_at(t: &TemplateSpec, p: &[f64], target: &CMatrix) -> Result<f64> {
    check_dims(t, target)?;
    let mats = t.slot_matrices(p)?;
    let mut acc = CMatrix::identity(t.dim());
    apply_template(t, &mats, &mut acc);
    let d = t.dim() as f64;
    Ok(overlap(target, &acc).norm_sqr() / (d * d))
}

/// Central finite differences `(f(x + h·e_k) − f(x − h·e_k)) / 2h`.
pub fn finite_diff_grad<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite-difference step must be positive");
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + step;
            let plus = f(&probe);
            probe[k] = x[k] - step;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Relative error with an absolute floor: components below `floor` in
/// magnitude are compared on the scale of `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Largest [`relative_error`] over two gradient vectors.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n, floor))
        .fold(0.0, f64::max)
}

/// Floor used by the fidelity gradient checks: with a 1e-5 relative
/// tolerance this admits an absolute error of 1e-8 on tiny components.
pub const GRAD_CHECK_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub triples: usize,
    pub components: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks analytic angle gradients against finite differences on random
/// (template, params, target) triples spanning the 2- and 3-qubit families.
/// `inject_bug` perturbs the analytic gradient as a negative control.
pub fn gradcheck_suite(seed: u64, triples_per_template: usize, inject_bug: bool) -> Result<GradcheckReport> {
    let mut templates = enumerate_templates(2, 3)?;
    templates.extend(enumerate_templates(3, 5)?);
    templates.push(TemplateSpec::layered(3, 6)?);
    templates.push(TemplateSpec::layered(3, 10)?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tolerance = 1e-5;
    let mut worst = 0.0f64;
    let mut triples = 0;
    let mut components = 0;
    for t in &templates {
        for _ in 0..triples_per_template {
            let p = sample_params(t, &mut rng);
            let other = templates
                .iter()
                .filter(|o| o.n_qubits == t.n_qubits)
                .nth(rng.gen_range(0..4))
                .unwrap_or(t);
            let target = crate::templates::assemble(other, &sample_params(other, &mut rng))?;
            let mut analytic = fidelity_grad_angles(t, &p, &target)?.grad;
            if inject_bug {
                analytic[0] = analytic[0] * 1.01 + 1e-4;
            }
            let numeric = finite_diff_grad(|x| fidelity_at(t, x, &target).unwrap(), p.as_slice(), 1e-5);
            worst = worst.max(max_relative_error(&analytic, &numeric, GRAD_CHECK_FLOOR));
            triples += 1;
            components += analytic.len();
        }
    }
    Ok(GradcheckReport {
        triples,
        components,
        max_rel_err: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}
