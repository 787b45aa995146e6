//! Trainable networks: a real MLP classifier over templates, a complex-valued
//! encoder suggesting slot matrices, Adam, and the model file format.

mod adam;
mod complex;
mod dense;
mod io;
mod linalg;

pub use adam::AdamState;
pub use complex::{su2_from_pair, EncoderModel, EncoderOutput, HEAD_EPS};
pub use dense::{cross_entropy, ClassifierNet};
pub use io::{load_classifier, load_encoder, save_classifier, save_encoder, ModelKind, TrainingMetadata};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::qmat::{CMatrix, C64};
use crate::templates::TemplateFamily;

/// Identifies the template family a model was built for.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyRef {
    pub n_qubits: usize,
    pub max_cz: usize,
    pub n_templates: usize,
    pub hash: String,
}

impl FamilyRef {
    pub fn of(family: &TemplateFamily) -> Self {
        Self {
            n_qubits: family.n_qubits,
            max_cz: family.max_cz,
            n_templates: family.len(),
            hash: family.hash(),
        }
    }
}

impl From<&TemplateFamily> for FamilyRef {
    fn from(family: &TemplateFamily) -> Self {
        Self::of(family)
    }
}

pub(crate) fn glorot_uniform<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> f64 {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    rng.gen_range(-s..=s)
}

/// Classifier input for `u`: real parts row-major, then imaginary parts.
///
/// With `canonicalize` the matrix is first multiplied by the phase that puts
/// its largest-magnitude entry on the positive real axis.
pub fn unitary_features(u: &CMatrix, canonicalize: bool) -> Vec<f64> {
    let data = u.as_slice();
    let phase = if canonicalize {
        let mut best = C64::new(1.0, 0.0);
        let mut best_norm = -1.0;
        for z in data {
            let n = z.norm_sqr();
            if n > best_norm {
                best_norm = n;
                best = *z;
            }
        }
        if best_norm > 0.0 {
            best.conj() / best.norm()
        } else {
            C64::new(1.0, 0.0)
        }
    } else {
        C64::new(1.0, 0.0)
    };
    let mut out = Vec::with_capacity(2 * data.len());
    out.extend(data.iter().map(|z| (z * phase).re));
    out.extend(data.iter().map(|z| (z * phase).im));
    out
}

/// Inverse of [`unitary_features`] without canonicalization.
pub fn features_to_unitary(features: &[f64]) -> crate::Result<CMatrix> {
    let n = features.len() / 2;
    let dim = (n as f64).sqrt().round() as usize;
    if features.len() % 2 != 0 || dim * dim != n {
        return Err(crate::Error::InvalidMatrix(format!(
            "feature length {} is not 2·d²",
            features.len()
        )));
    }
    let data = (0..n).map(|k| C64::new(features[k], features[n + k])).collect();
    CMatrix::from_vec(dim, data)
}

/// Largest backprop-vs-finite-difference errors on tiny networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackpropReport {
    pub classifier_max_rel_err: f64,
    pub encoder_max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Checks both backward passes against central differences: a `[8, 5, 3]`
/// classifier and a small encoder on each 2-qubit template.
pub fn backprop_check(seed: u64) -> crate::Result<BackpropReport> {
    use crate::gradsim::{finite_diff_grad, max_relative_error};
    use crate::templates::{assemble, sample_params};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const TOL: f64 = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fam = TemplateFamily::new(2, 3)?;
    let tiny = FamilyRef {
        n_qubits: 2,
        max_cz: 3,
        n_templates: 3,
        hash: String::new(),
    };
    let mut net = ClassifierNet::zeroed(tiny, vec![8, 5, 3], false);
    for p in net.params_mut() {
        *p = rng.gen_range(-1.0..1.0);
    }
    let x: Vec<f64> = (0..8 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
    let (_, grad) = net.loss_and_grad(&x, &labels)?;
    let numeric = finite_diff_grad(
        |p| {
            let mut n = net.clone();
            n.params_mut().copy_from_slice(p);
            n.loss_and_grad(&x, &labels).map_or(f64::NAN, |r| r.0)
        },
        net.params(),
        1e-6,
    );
    let classifier_max_rel_err = max_relative_error(&grad, &numeric, TOL);

    let mut encoder_max_rel_err = 0.0f64;
    for t in &fam.templates {
        let enc = EncoderModel::new(FamilyRef::of(&fam), t.clone(), &[6, 5], &mut rng);
        let batch = (0..3)
            .map(|_| assemble(t, &sample_params(t, &mut rng)))
            .collect::<crate::Result<Vec<_>>>()?;
        let (_, grad) = enc.fidelity_and_grad(&batch)?;
        let numeric = finite_diff_grad(
            |p| {
                let mut e = enc.clone();
                e.params_mut().copy_from_slice(p);
                e.fidelity_and_grad(&batch).map_or(f64::NAN, |r| 1.0 - r.0)
            },
            enc.params(),
            1e-6,
        );
        encoder_max_rel_err = encoder_max_rel_err.max(max_relative_error(&grad, &numeric, TOL));
    }
    Ok(BackpropReport {
        classifier_max_rel_err,
        encoder_max_rel_err,
        tolerance: TOL,
        passed: classifier_max_rel_err <= TOL && encoder_max_rel_err <= TOL,
    })
}
