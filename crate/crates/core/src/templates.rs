//! Circuit templates: a fixed CZ skeleton with adjustable single-qubit slots.
//!
//! Every slot is written in the ZSX basis of the target hardware:
//!
//! * `Full`: `RZ(θ2)·SX·RZ(θ1)·SX·RZ(θ0)`, parameters `[θ0, θ1, θ2]`.
//! * `Partial`: `RZ(β)·SX·RZ(α)·SX`, parameters `[α, β]`. This is a full
//!   slot whose leading RZ has been dropped; between two CZ gates that RZ
//!   commutes with the preceding CZ and is absorbed by the previous slot on
//!   the same qubit.
//!
//! Slots are laid out in layers. Layer 0 is applied first; layer `k + 1`
//! follows the `k`-th CZ. Parameter vectors concatenate slots in
//! `(layer, qubit)` order.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::qmat::{rz2, rz2_deriv, CMatrix, Mat2, C64, SX2};

pub const FAMILY_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotKind {
    Full,
    Partial,
}

impl SlotKind {
    pub fn param_count(self) -> usize {
        match self {
            SlotKind::Full => 3,
            SlotKind::Partial => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slot {
    pub qubit: usize,
    pub kind: SlotKind,
    pub layer: usize,
}

/// One step of a template in circuit time order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    /// Index into [`TemplateSpec::slots`].
    Slot(usize),
    Cz(usize, usize),
}

/// Angles for a template, in radians.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateSpec {
    pub id: usize,
    pub n_qubits: usize,
    pub cz_sequence: Vec<(usize, usize)>,
    pub slots: Vec<Slot>,
    ops: Vec<Op>,
    param_offsets: Vec<usize>,
}

/// Adjacent pairs under linear connectivity.
pub fn coupling_pairs(n_qubits: usize) -> Result<&'static [(usize, usize)]> {
    match n_qubits {
        2 => Ok(&[(0, 1)]),
        3 => Ok(&[(0, 1), (1, 2)]),
        n => Err(Error::UnsupportedQubits(n)),
    }
}

impl TemplateSpec {
    /// Builds the template for a CZ sequence with the family's slot layout.
    pub fn from_sequence(n_qubits: usize, cz_sequence: Vec<(usize, usize)>) -> Result<Self> {
        let pairs = coupling_pairs(n_qubits)?;
        let mut pair_indices = Vec::with_capacity(cz_sequence.len());
        for &(a, b) in &cz_sequence {
            let norm = (a.min(b), a.max(b));
            let idx = pairs.iter().position(|&p| p == norm).ok_or_else(|| {
                Error::InvalidTemplate(format!(
                    "CZ on ({a}, {b}) is not an adjacent pair for {n_qubits} qubits"
                ))
            })?;
            pair_indices.push(idx);
        }
        let cz_sequence: Vec<(usize, usize)> = pair_indices.iter().map(|&i| pairs[i]).collect();

        let mut slots: Vec<Slot> = (0..n_qubits)
            .map(|qubit| Slot {
                qubit,
                kind: SlotKind::Full,
                layer: 0,
            })
            .collect();
        let n_cz = cz_sequence.len();
        for (k, &(a, b)) in cz_sequence.iter().enumerate() {
            let layer = k + 1;
            if n_qubits == 2 {
                let kind = if k + 1 == n_cz {
                    SlotKind::Full
                } else {
                    SlotKind::Partial
                };
                slots.extend((0..2).map(|qubit| Slot { qubit, kind, layer }));
            } else {
                slots.extend([a, b].map(|qubit| Slot {
                    qubit,
                    kind: SlotKind::Full,
                    layer,
                }));
            }
        }

        let id = sequence_id(pairs.len(), &pair_indices);
        Ok(Self::assemble_layout(id, n_qubits, cz_sequence, slots))
    }

    /// The layered template used for parameter suggestion: every layer is a
    /// CZ, alternating between (0,1) and (1,2) on three qubits.
    pub fn layered(n_qubits: usize, layers: usize) -> Result<Self> {
        let pairs = coupling_pairs(n_qubits)?;
        let seq = (0..layers).map(|k| pairs[k % pairs.len()]).collect();
        Self::from_sequence(n_qubits, seq)
    }

    fn assemble_layout(
        id: usize,
        n_qubits: usize,
        cz_sequence: Vec<(usize, usize)>,
        slots: Vec<Slot>,
    ) -> Self {
        let mut ops = Vec::with_capacity(slots.len() + cz_sequence.len());
        let mut param_offsets = Vec::with_capacity(slots.len() + 1);
        let mut offset = 0;
        let mut next_cz = 0;
        for (i, slot) in slots.iter().enumerate() {
            while next_cz < slot.layer {
                let (a, b) = cz_sequence[next_cz];
                ops.push(Op::Cz(a, b));
                next_cz += 1;
            }
            ops.push(Op::Slot(i));
            param_offsets.push(offset);
            offset += slot.kind.param_count();
        }
        for &(a, b) in &cz_sequence[next_cz..] {
            ops.push(Op::Cz(a, b));
        }
        param_offsets.push(offset);
        Self {
            id,
            n_qubits,
            cz_sequence,
            slots,
            ops,
            param_offsets,
        }
    }

    pub fn dim(&self) -> usize {
        1 << self.n_qubits
    }

    pub fn cz_count(&self) -> usize {
        self.cz_sequence.len()
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn param_count(&self) -> usize {
        *self.param_offsets.last().unwrap()
    }

    /// Template steps in circuit time order.
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    /// Range of `slot`'s angles inside a parameter vector.
    pub fn param_range(&self, slot: usize) -> std::ops::Range<usize> {
        self.param_offsets[slot]..self.param_offsets[slot + 1]
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(Error::ParamLength {
                expected: self.param_count(),
                actual: p.len(),
            });
        }
        Ok(())
    }

    /// Slot matrices for a parameter vector.
    pub fn slot_matrices(&self, p: &[f64]) -> Result<Vec<Mat2>> {
        self.check_params(p)?;
        Ok(self
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| slot_matrix(s.kind, &p[self.param_range(i)]))
            .collect())
    }
}

/// Position of a sequence in the (length, lexicographic) enumeration order.
fn sequence_id(n_pairs: usize, pair_indices: &[usize]) -> usize {
    let shorter: usize = (0..pair_indices.len()).map(|l| n_pairs.pow(l as u32)).sum();
    let lex = pair_indices.iter().fold(0, |acc, &i| acc * n_pairs + i);
    shorter + lex
}

/// All templates with `0..=max_cz` CZ gates, ordered by length, then
/// lexicographically over coupling-pair indices.
pub fn enumerate_templates(n_qubits: usize, max_cz: usize) -> Result<Vec<TemplateSpec>> {
    let pairs = coupling_pairs(n_qubits)?;
    let np = pairs.len();
    let mut out = Vec::new();
    for len in 0..=max_cz {
        let count = np.pow(len as u32);
        for lex in 0..count {
            let mut digits = vec![0usize; len];
            let mut rest = lex;
            for d in digits.iter_mut().rev() {
                *d = rest % np;
                rest /= np;
            }
            let seq = digits.iter().map(|&i| pairs[i]).collect();
            let t = TemplateSpec::from_sequence(n_qubits, seq)?;
            debug_assert_eq!(t.id, out.len());
            out.push(t);
        }
    }
    Ok(out)
}

/// A numbered set of templates shared by classifiers and suggesters.
#[derive(Clone, Debug, PartialEq)]
pub struct TemplateFamily {
    pub n_qubits: usize,
    pub max_cz: usize,
    pub templates: Vec<TemplateSpec>,
}

#[derive(Serialize, Deserialize)]
struct FamilyDocument {
    version: u32,
    n_qubits: usize,
    max_cz: usize,
    templates: Vec<TemplateRecord>,
}

#[derive(Serialize, Deserialize)]
struct TemplateRecord {
    id: usize,
    cz_sequence: Vec<(usize, usize)>,
    slots: Vec<Slot>,
}

impl TemplateFamily {
    pub fn new(n_qubits: usize, max_cz: usize) -> Result<Self> {
        Ok(Self {
            n_qubits,
            max_cz,
            templates: enumerate_templates(n_qubits, max_cz)?,
        })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    /// The one-template family holding the layered template.
    pub fn layered(n_qubits: usize, layers: usize) -> Result<Self> {
        Ok(Self {
            n_qubits,
            max_cz: layers,
            templates: vec![TemplateSpec::layered(n_qubits, layers)?],
        })
    }

    /// Template with the given id.
    pub fn get(&self, id: usize) -> Option<&TemplateSpec> {
        match self.templates.get(id) {
            Some(t) if t.id == id => Some(t),
            _ => self.templates.iter().find(|t| t.id == id),
        }
    }

    /// Position of the template with the given id.
    pub fn position(&self, id: usize) -> Option<usize> {
        match self.templates.get(id) {
            Some(t) if t.id == id => Some(id),
            _ => self.templates.iter().position(|t| t.id == id),
        }
    }

    fn document(&self) -> FamilyDocument {
        FamilyDocument {
            version: FAMILY_FORMAT_VERSION,
            n_qubits: self.n_qubits,
            max_cz: self.max_cz,
            templates: self
                .templates
                .iter()
                .map(|t| TemplateRecord {
                    id: t.id,
                    cz_sequence: t.cz_sequence.clone(),
                    slots: t.slots.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.document()).expect("family document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: FamilyDocument = serde_json::from_str(text)?;
        if doc.version != FAMILY_FORMAT_VERSION {
            return Err(Error::ModelFormat(format!(
                "unsupported template family version {}",
                doc.version
            )));
        }
        let family = Self::new(doc.n_qubits, doc.max_cz)?;
        let matches = family.templates.len() == doc.templates.len()
            && family.templates.iter().zip(&doc.templates).all(|(t, r)| {
                t.id == r.id && t.cz_sequence == r.cz_sequence && t.slots == r.slots
            });
        if !matches {
            return Err(Error::InvalidTemplate(
                "family document does not match the canonical enumeration".into(),
            ));
        }
        Ok(family)
    }

    /// SHA-256 of the compact family document, hex encoded.
    pub fn hash(&self) -> String {
        let compact = serde_json::to_vec(&self.document()).expect("family document serializes");
        hex::encode(Sha256::digest(&compact))
    }
}

/// Matrix of one slot for its angles.
pub fn slot_matrix(kind: SlotKind, angles: &[f64]) -> Mat2 {
    match kind {
        SlotKind::Full => rz2(angles[2]) * SX2 * rz2(angles[1]) * SX2 * rz2(angles[0]),
        SlotKind::Partial => rz2(angles[1]) * SX2 * rz2(angles[0]) * SX2,
    }
}

/// Slot matrix together with its derivative with respect to each angle.
pub(crate) fn slot_matrix_derivs(kind: SlotKind, angles: &[f64], out: &mut [Mat2; 3]) -> Mat2 {
    match kind {
        SlotKind::Full => {
            let (r0, r1, r2) = (rz2(angles[0]), rz2(angles[1]), rz2(angles[2]));
            let left = r2 * SX2;
            let right = SX2 * r0;
            out[0] = left * r1 * SX2 * rz2_deriv(angles[0]);
            out[1] = left * rz2_deriv(angles[1]) * right;
            out[2] = rz2_deriv(angles[2]) * SX2 * r1 * right;
            left * r1 * right
        }
        SlotKind::Partial => {
            let (ra, rb) = (rz2(angles[0]), rz2(angles[1]));
            let tail = SX2 * ra * SX2;
            out[0] = rb * SX2 * rz2_deriv(angles[0]) * SX2;
            out[1] = rz2_deriv(angles[1]) * tail;
            rb * tail
        }
    }
}

/// Multiplies the template's gates onto `acc` from the left, in time order.
pub(crate) fn apply_template(t: &TemplateSpec, mats: &[Mat2], acc: &mut CMatrix) {
    for op in t.ops() {
        match *op {
            Op::Slot(i) => acc.apply_1q_left(&mats[i], t.slots[i].qubit, t.n_qubits),
            Op::Cz(a, b) => acc.apply_cz(a, b, t.n_qubits, true),
        }
    }
}

pub(crate) fn assemble_mats(t: &TemplateSpec, mats: &[Mat2]) -> CMatrix {
    let mut acc = CMatrix::identity(t.dim());
    apply_template(t, mats, &mut acc);
    acc
}

/// Unitary of the template instantiated with `p`.
pub fn assemble(t: &TemplateSpec, p: &ParamVector) -> Result<CMatrix> {
    let mats = t.slot_matrices(p.as_slice())?;
    Ok(assemble_mats(t, &mats))
}

/// Unitary of the template with explicit 2x2 slot matrices.
pub fn assemble_from_slots(t: &TemplateSpec, slot_mats: &[CMatrix]) -> Result<CMatrix> {
    let mats = slot_mats_from_cmatrices(t, slot_mats)?;
    Ok(assemble_mats(t, &mats))
}

pub(crate) fn slot_mats_from_cmatrices(t: &TemplateSpec, slot_mats: &[CMatrix]) -> Result<Vec<Mat2>> {
    if slot_mats.len() != t.slot_count() {
        return Err(Error::SlotCount {
            expected: t.slot_count(),
            actual: slot_mats.len(),
        });
    }
    slot_mats.iter().map(Mat2::from_cmatrix).collect()
}

/// `RZ(θ2)·SX·RZ(θ1)·SX·RZ(θ0)·e^{i·phase}` decomposition of a 2x2 unitary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ZsxAngles {
    pub theta: [f64; 3],
    pub phase: f64,
}

impl ZsxAngles {
    pub fn matrix(&self) -> Mat2 {
        slot_matrix(SlotKind::Full, &self.theta).scale(C64::from_polar(1.0, self.phase))
    }
}

fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        y + 2.0 * PI
    } else {
        y
    }
}

/// Decomposes a 2x2 unitary into ZSX angles using
/// `U3(θ,φ,λ) ∝ RZ(φ+π)·SX·RZ(θ+π)·SX·RZ(λ)`.
pub fn su2_to_zsx(u: &CMatrix) -> Result<ZsxAngles> {
    let m = Mat2::from_cmatrix(u)?;
    let dev = u.unitarity_deviation();
    if dev > 1e-8 {
        return Err(Error::NotUnitary { deviation: dev });
    }
    Ok(mat2_to_zsx(&m))
}

pub(crate) fn mat2_to_zsx(m: &Mat2) -> ZsxAngles {
    // Remove the determinant phase so that m = e^{iα}[[a, -b*], [b, a*]].
    let alpha = 0.5 * m.det().arg();
    let su = m.scale(C64::from_polar(1.0, -alpha));
    let (a, b) = (su.0[0], su.0[2]);
    let theta = 2.0 * b.norm().atan2(a.norm());
    // a = e^{-i(φ+λ)/2} cos(θ/2), b = e^{i(φ-λ)/2} sin(θ/2)
    let sum = if a.norm() > 1e-300 { -2.0 * a.arg() } else { 0.0 };
    let diff = if b.norm() > 1e-300 { 2.0 * b.arg() } else { 0.0 };
    let phi = 0.5 * (sum + diff);
    let lam = 0.5 * (sum - diff);
    let angles = [wrap_angle(lam), wrap_angle(theta + PI), wrap_angle(phi + PI)];
    let rebuilt = slot_matrix(SlotKind::Full, &angles);
    let ov: C64 = rebuilt
        .0
        .iter()
        .zip(m.0.iter())
        .map(|(r, z)| r.conj() * z)
        .sum();
    ZsxAngles {
        theta: angles,
        phase: ov.arg(),
    }
}

/// Angles for a template from one 2x2 matrix per slot.
///
/// Full slots are decomposed directly. A partial slot has no leading RZ, so
/// the RZ(θ0) of its decomposition is pushed back through the preceding CZ
/// into the last RZ of the previous slot on the same qubit. This is exact up
/// to global phase whenever such a slot exists.
pub fn slots_to_params(t: &TemplateSpec, mats: &[Mat2]) -> Result<ParamVector> {
    if mats.len() != t.slot_count() {
        return Err(Error::SlotCount {
            expected: t.slot_count(),
            actual: mats.len(),
        });
    }
    let mut p = vec![0.0; t.param_count()];
    let mut last_rz: Vec<Option<usize>> = vec![None; t.n_qubits];
    for (i, (slot, m)) in t.slots.iter().zip(mats).enumerate() {
        let z = mat2_to_zsx(m);
        let r = t.param_range(i);
        match slot.kind {
            SlotKind::Full => {
                p[r.clone()].copy_from_slice(&z.theta);
                last_rz[slot.qubit] = Some(r.start + 2);
            }
            SlotKind::Partial => {
                p[r.start] = z.theta[1];
                p[r.start + 1] = z.theta[2];
                if let Some(idx) = last_rz[slot.qubit] {
                    p[idx] = wrap_angle(p[idx] + z.theta[0]);
                }
                last_rz[slot.qubit] = Some(r.start + 1);
            }
        }
    }
    Ok(ParamVector(p))
}

/// I.i.d. uniform angles in [-π, π].
pub fn sample_params<R: Rng + ?Sized>(t: &TemplateSpec, rng: &mut R) -> ParamVector {
    ParamVector((0..t.param_count()).map(|_| rng.gen_range(-PI..=PI)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::{embed, fidelity, standard_gate, GateName};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cz() -> CMatrix {
        standard_gate(GateName::Cz, None).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_templates(2, 3).unwrap().len(), 4);
        assert_eq!(enumerate_templates(3, 3).unwrap().len(), 15);
        assert_eq!(enumerate_templates(3, 5).unwrap().len(), 63);
        for k in 0..=5 {
            assert_eq!(enumerate_templates(3, k).unwrap().len(), (1 << (k + 1)) - 1);
        }
        assert!(matches!(enumerate_templates(4, 2), Err(Error::UnsupportedQubits(4))));
    }

    #[test]
    fn enumeration_order_and_ids() {
        let fam = enumerate_templates(3, 2).unwrap();
        let seqs: Vec<_> = fam.iter().map(|t| t.cz_sequence.clone()).collect();
        assert_eq!(
            seqs,
            vec![
                vec![],
                vec![(0, 1)],
                vec![(1, 2)],
                vec![(0, 1), (0, 1)],
                vec![(0, 1), (1, 2)],
                vec![(1, 2), (0, 1)],
                vec![(1, 2), (1, 2)],
            ]
        );
        for (i, t) in fam.iter().enumerate() {
            assert_eq!(t.id, i);
        }
        assert_eq!(enumerate_templates(3, 2).unwrap(), fam);
    }

    #[test]
    fn param_counts() {
        let two: Vec<usize> = enumerate_templates(2, 3)
            .unwrap()
            .iter()
            .map(|t| t.param_count())
            .collect();
        assert_eq!(two, vec![6, 12, 16, 20]);
        assert_eq!(TemplateSpec::layered(3, 6).unwrap().param_count(), 45);
        assert_eq!(TemplateSpec::layered(3, 10).unwrap().param_count(), 69);
        for t in enumerate_templates(3, 4).unwrap() {
            assert_eq!(t.param_count(), 9 + 6 * t.cz_count());
        }
    }

    #[test]
    fn layered_id_matches_enumeration() {
        let t = TemplateSpec::layered(3, 6).unwrap();
        let fam = enumerate_templates(3, 6).unwrap();
        assert_eq!(fam[t.id].cz_sequence, t.cz_sequence);
        assert_eq!(t.cz_sequence[..3], [(0, 1), (1, 2), (0, 1)]);
    }

    #[test]
    fn rejects_non_adjacent_pair() {
        assert!(TemplateSpec::from_sequence(3, vec![(0, 2)]).is_err());
        // orientation does not matter for CZ
        let t = TemplateSpec::from_sequence(3, vec![(2, 1)]).unwrap();
        assert_eq!(t.cz_sequence, vec![(1, 2)]);
    }

    #[test]
    fn identity_slots_give_bare_cz() {
        let t = &enumerate_templates(2, 1).unwrap()[1];
        let z = su2_to_zsx(&CMatrix::identity(2)).unwrap();
        let p: Vec<f64> = (0..t.slot_count()).flat_map(|_| z.theta).collect();
        let u = assemble(t, &ParamVector(p)).unwrap();
        assert!((fidelity(&u, &cz()).unwrap() - 1.0).abs() < 1e-12);
        // the all-zero choice is X on every slot, not identity
        let zero = slot_matrix(SlotKind::Full, &[0.0; 3]).to_cmatrix();
        let x = standard_gate(GateName::X, None).unwrap();
        assert!((fidelity(&zero, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_cz_template_is_a_tensor_product() {
        let t = &enumerate_templates(2, 0).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_params(t, &mut rng);
        let mats = t.slot_matrices(p.as_slice()).unwrap();
        let u = assemble(t, &p).unwrap();
        let expect = mats[0].to_cmatrix().kron(&mats[1].to_cmatrix());
        assert!((fidelity(&u, &expect).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn assemble_from_identity_slots() {
        let t = &enumerate_templates(2, 1).unwrap()[1];
        let eye = vec![CMatrix::identity(2); t.slot_count()];
        assert_eq!(assemble_from_slots(t, &eye).unwrap(), cz());

        let t3 = TemplateSpec::from_sequence(3, vec![(0, 1), (1, 2)]).unwrap();
        let eye = vec![CMatrix::identity(2); t3.slot_count()];
        let expect = embed(&cz(), &[1, 2], 3)
            .unwrap()
            .matmul(&embed(&cz(), &[0, 1], 3).unwrap())
            .unwrap();
        assert_eq!(assemble_from_slots(&t3, &eye).unwrap(), expect);
    }

    #[test]
    fn assemble_errors() {
        let t = &enumerate_templates(2, 1).unwrap()[1];
        assert!(matches!(
            assemble(t, &ParamVector(vec![0.0; 3])),
            Err(Error::ParamLength { expected: 12, actual: 3 })
        ));
        assert!(matches!(
            assemble_from_slots(t, &[CMatrix::identity(2)]),
            Err(Error::SlotCount { .. })
        ));
        let bad = vec![CMatrix::identity(4); t.slot_count()];
        assert!(assemble_from_slots(t, &bad).is_err());
    }

    #[test]
    fn slot_matrices_reproduce_assemble() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in enumerate_templates(2, 3).unwrap() {
            let p = sample_params(&t, &mut rng);
            let mats: Vec<CMatrix> = t
                .slot_matrices(p.as_slice())
                .unwrap()
                .iter()
                .map(Mat2::to_cmatrix)
                .collect();
            assert_eq!(assemble_from_slots(&t, &mats).unwrap(), assemble(&t, &p).unwrap());
        }
    }

    #[test]
    fn assembled_templates_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut family = enumerate_templates(2, 3).unwrap();
        family.extend(enumerate_templates(3, 3).unwrap());
        family.push(TemplateSpec::layered(3, 10).unwrap());
        for t in &family {
            for _ in 0..100 {
                let u = assemble(t, &sample_params(t, &mut rng)).unwrap();
                assert!(u.is_unitary(1e-10));
            }
        }
    }

    #[test]
    fn u3_identity_holds() {
        // U3(θ,φ,λ) = e^{iγ}·RZ(φ+π)·SX·RZ(θ+π)·SX·RZ(λ)
        let (th, ph, la) = (0.7_f64, -1.3_f64, 2.1_f64);
        let (c, s) = ((th / 2.0).cos(), (th / 2.0).sin());
        let u3 = CMatrix::from_rows(&[
            vec![C64::new(c, 0.0), -C64::from_polar(s, la)],
            vec![C64::from_polar(s, ph), C64::from_polar(c, ph + la)],
        ])
        .unwrap();
        let zsx = slot_matrix(SlotKind::Full, &[la, th + PI, ph + PI]).to_cmatrix();
        assert!((fidelity(&u3, &zsx).unwrap() - 1.0).abs() < 1e-14);
    }

    fn round_trip(u: &CMatrix) {
        let z = su2_to_zsx(u).unwrap();
        let rebuilt = z.matrix().to_cmatrix();
        assert!(rebuilt.max_abs_diff(u) < 1e-8, "{u:?} vs {rebuilt:?}");
        assert!((fidelity(&rebuilt, u).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zsx_round_trips() {
        round_trip(&CMatrix::identity(2));
        round_trip(&standard_gate(GateName::H, None).unwrap());
        round_trip(&standard_gate(GateName::Rz, Some(0.7)).unwrap());
        round_trip(&standard_gate(GateName::X, None).unwrap());
        round_trip(&standard_gate(GateName::Sx, None).unwrap());
        round_trip(&CMatrix::identity(2).scale(C64::from_polar(1.0, 2.5)));
    }

    #[test]
    fn zsx_rejects_non_unitary() {
        let m = CMatrix::identity(2).scale(C64::new(1.1, 0.0));
        assert!(matches!(su2_to_zsx(&m), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn partial_slots_cover_every_rotation_up_to_rz() {
        // RZ(a)·H·RZ(b) is representable for suitable a, b: the x-axis
        // content of a partial slot spans all middle Euler angles.
        let h = standard_gate(GateName::H, None).unwrap();
        let z = su2_to_zsx(&h).unwrap();
        let partial = slot_matrix(SlotKind::Partial, &[z.theta[1], z.theta[2]]);
        let front = rz2(z.theta[0]);
        let rebuilt = (partial * front).to_cmatrix();
        assert!((fidelity(&rebuilt, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hadamard_is_rz_sx_rz() {
        let h = standard_gate(GateName::H, None).unwrap();
        let m = (rz2(PI / 2.0) * SX2 * rz2(PI / 2.0)).to_cmatrix();
        assert!((fidelity(&m, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slot_projection_is_exact_on_two_qubit_family() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for t in enumerate_templates(2, 3).unwrap() {
            let mats: Vec<Mat2> = (0..t.slot_count())
                .map(|_| {
                    let a = [0, 1, 2].map(|_| rng.gen_range(-PI..PI));
                    slot_matrix(SlotKind::Full, &a).scale(C64::from_polar(1.0, rng.gen_range(-PI..PI)))
                })
                .collect();
            let direct = assemble_mats(&t, &mats);
            let p = slots_to_params(&t, &mats).unwrap();
            let projected = assemble(&t, &p).unwrap();
            assert!((fidelity(&direct, &projected).unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let t = TemplateSpec::layered(3, 10).unwrap();
        let a = sample_params(&t, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sample_params(&t, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.as_slice().iter().all(|x| (-PI..=PI).contains(x)));
    }

    #[test]
    fn sampled_angles_have_zero_mean() {
        let t = &enumerate_templates(2, 0).unwrap()[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sums = vec![0.0; t.param_count()];
        let n = 10_000;
        for _ in 0..n {
            for (s, x) in sums.iter_mut().zip(sample_params(t, &mut rng).as_slice()) {
                *s += x;
            }
        }
        for s in sums {
            assert!((s / n as f64).abs() <= 0.1);
        }
    }

    #[test]
    fn family_document_round_trip_and_hash() {
        let fam = TemplateFamily::new(3, 3).unwrap();
        let json = fam.to_json();
        let back = TemplateFamily::from_json(&json).unwrap();
        assert_eq!(back, fam);
        assert_eq!(back.hash(), fam.hash());
        assert_ne!(TemplateFamily::new(3, 2).unwrap().hash(), fam.hash());
        let tampered = json.replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(TemplateFamily::from_json(&tampered).is_err());
    }

    proptest::proptest! {
        #[test]
        fn zsx_round_trip_random(a in -7.0f64..7.0, b in -7.0f64..7.0, c in -7.0f64..7.0, ph in -4.0f64..4.0) {
            let m = slot_matrix(SlotKind::Full, &[a, b, c]).scale(C64::from_polar(1.0, ph));
            let z = mat2_to_zsx(&m);
            let rebuilt = z.matrix().to_cmatrix();
            proptest::prop_assert!(rebuilt.max_abs_diff(&m.to_cmatrix()) < 1e-8);
            proptest::prop_assert!((fidelity(&rebuilt, &m.to_cmatrix()).unwrap() - 1.0).abs() <= 1e-12);
        }
    }
}
