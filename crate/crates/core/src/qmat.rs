//! Dense complex matrices, standard gates and the Hilbert-Schmidt fidelity.
//!
//! Qubit ordering: qubit 0 is the most significant bit of a basis-state
//! index. `kron(a, b)` puts `a` on the higher-order factor, so
//! `embed(g, &[0], 2) == kron(g, I2)`.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::ops::Mul;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.4}{:+.4}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    pub fn diag(entries: &[C64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &z) in entries.iter().enumerate() {
            m.data[i * entries.len() + i] = z;
        }
        m
    }

    /// Builds a matrix from row-major entries; `data.len()` must be `dim²`.
    pub fn from_vec(dim: usize, data: Vec<C64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidMatrix("dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::InvalidMatrix(format!(
                "{} entries for a {dim}x{dim} matrix",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let dim = rows.len();
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidMatrix("rows must form a square matrix".into()));
        }
        Self::from_vec(dim, rows.concat())
    }

    /// Convenience constructor for real-valued matrices.
    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    /// Number of qubits when `dim` is a power of two.
    pub fn n_qubits(&self) -> Option<usize> {
        self.dim
            .is_power_of_two()
            .then(|| self.dim.trailing_zeros() as usize)
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == ZERO {
                    continue;
                }
                let row_b = &other.data[k * n..(k + 1) * n];
                let row_out = &mut out.data[i * n..(i + 1) * n];
                for (o, &b) in row_out.iter_mut().zip(row_b) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Kronecker product with `self` on the higher-order factor.
    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (n, m) = (self.dim, other.dim);
        let d = n * m;
        let mut out = CMatrix::zeros(d);
        for i in 0..n {
            for j in 0..n {
                let a = self.data[i * n + j];
                for k in 0..m {
                    for l in 0..m {
                        out.data[(i * m + k) * d + (j * m + l)] = a * other.data[k * m + l];
                    }
                }
            }
        }
        out
    }

    pub fn adjoint(&self) -> CMatrix {
        let n = self.dim;
        let mut out = CMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                out.data[j * n + i] = self.data[i * n + j].conj();
            }
        }
        out
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.data[i * self.dim + i]).sum()
    }

    pub fn scale(&self, c: C64) -> CMatrix {
        CMatrix {
            dim: self.dim,
            data: self.data.iter().map(|&z| z * c).collect(),
        }
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "max_abs_diff on different dimensions");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Largest entrywise deviation of `self† · self` from the identity.
    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let mut acc = ZERO;
                for k in 0..n {
                    acc += self.data[k * n + i].conj() * self.data[k * n + j];
                }
                if i == j {
                    acc -= ONE;
                }
                worst = worst.max(acc.norm());
            }
        }
        worst
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        self.unitarity_deviation() <= tol
    }

    /// Left-multiplies in place by `gate` acting on `qubit` of an `n_qubits` register.
    pub fn apply_1q_left(&mut self, gate: &Mat2, qubit: usize, n_qubits: usize) {
        let n = self.dim;
        let mask = 1usize << (n_qubits - 1 - qubit);
        let [g00, g01, g10, g11] = gate.0;
        for r0 in (0..n).filter(|r| r & mask == 0) {
            let r1 = r0 | mask;
            for c in 0..n {
                let a = self.data[r0 * n + c];
                let b = self.data[r1 * n + c];
                self.data[r0 * n + c] = g00 * a + g01 * b;
                self.data[r1 * n + c] = g10 * a + g11 * b;
            }
        }
    }

    /// Right-multiplies in place by `gate` acting on `qubit`.
    pub fn apply_1q_right(&mut self, gate: &Mat2, qubit: usize, n_qubits: usize) {
        let n = self.dim;
        let mask = 1usize << (n_qubits - 1 - qubit);
        let [g00, g01, g10, g11] = gate.0;
        for r in 0..n {
            let row = &mut self.data[r * n..(r + 1) * n];
            for c0 in (0..n).filter(|c| c & mask == 0) {
                let c1 = c0 | mask;
                let a = row[c0];
                let b = row[c1];
                row[c0] = a * g00 + b * g10;
                row[c1] = a * g01 + b * g11;
            }
        }
    }

    /// Multiplies in place by CZ on qubits `a`, `b`. CZ is diagonal, so
    /// `left` selects row (`CZ·M`) or column (`M·CZ`) negation.
    pub fn apply_cz(&mut self, a: usize, b: usize, n_qubits: usize, left: bool) {
        let n = self.dim;
        let mask = (1usize << (n_qubits - 1 - a)) | (1usize << (n_qubits - 1 - b));
        for r in 0..n {
            for c in 0..n {
                let idx = if left { r } else { c };
                if idx & mask == mask {
                    self.data[r * n + c] = -self.data[r * n + c];
                }
            }
        }
    }
}

impl std::ops::Index<(usize, usize)> for CMatrix {
    type Output = C64;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.dim + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.dim + j]
    }
}

/// A 2x2 complex matrix `[m00, m01, m10, m11]`, the single-qubit hot-path type.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat2(pub [C64; 4]);

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2([ONE, ZERO, ZERO, ONE]);

    pub fn adjoint(&self) -> Mat2 {
        let [a, b, c, d] = self.0;
        Mat2([a.conj(), c.conj(), b.conj(), d.conj()])
    }

    pub fn scale(&self, s: C64) -> Mat2 {
        Mat2(self.0.map(|z| z * s))
    }

    pub fn det(&self) -> C64 {
        let [a, b, c, d] = self.0;
        a * d - b * c
    }

    pub fn to_cmatrix(&self) -> CMatrix {
        CMatrix {
            dim: 2,
            data: self.0.to_vec(),
        }
    }

    pub fn from_cmatrix(m: &CMatrix) -> Result<Mat2> {
        if m.dim != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                actual: m.dim,
            });
        }
        Ok(Mat2([m.data[0], m.data[1], m.data[2], m.data[3]]))
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    #[inline]
    fn mul(self, o: Mat2) -> Mat2 {
        let [a, b, c, d] = self.0;
        let [e, f, g, h] = o.0;
        Mat2([a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h])
    }
}

/// RZ(θ) = diag(e^{-iθ/2}, e^{iθ/2}).
#[inline]
pub fn rz2(theta: f64) -> Mat2 {
    let h = 0.5 * theta;
    Mat2([C64::from_polar(1.0, -h), ZERO, ZERO, C64::from_polar(1.0, h)])
}

/// dRZ/dθ = (-i/2)·Z·RZ(θ).
#[inline]
pub fn rz2_deriv(theta: f64) -> Mat2 {
    let h = 0.5 * theta;
    Mat2([
        C64::from_polar(1.0, -h) * C64::new(0.0, -0.5),
        ZERO,
        ZERO,
        C64::from_polar(1.0, h) * C64::new(0.0, 0.5),
    ])
}

/// SX = ½[[1+i, 1−i], [1−i, 1+i]].
pub const SX2: Mat2 = Mat2([
    C64::new(0.5, 0.5),
    C64::new(0.5, -0.5),
    C64::new(0.5, -0.5),
    C64::new(0.5, 0.5),
]);

/// Named gates of the instruction set plus a few common targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateName {
    Rz,
    Sx,
    X,
    Z,
    H,
    Cz,
    Cx,
    Swap,
    ISwap,
    Toffoli,
    Identity(usize),
}

impl GateName {
    fn label(&self) -> &'static str {
        match self {
            GateName::Rz => "RZ",
            GateName::Sx => "SX",
            GateName::X => "X",
            GateName::Z => "Z",
            GateName::H => "H",
            GateName::Cz => "CZ",
            GateName::Cx => "CX",
            GateName::Swap => "SWAP",
            GateName::ISwap => "ISWAP",
            GateName::Toffoli => "TOFFOLI",
            GateName::Identity(_) => "IDENTITY",
        }
    }
}

/// Matrix of a named gate. `angle` must be given for RZ and only for RZ.
/// CX has its control on the higher-order qubit; TOFFOLI flips the lowest
/// qubit when both higher qubits are set.
pub fn standard_gate(name: GateName, angle: Option<f64>) -> Result<CMatrix> {
    match (name, angle) {
        (GateName::Rz, None) => {
            return Err(Error::GateAngle {
                gate: "RZ",
                reason: "requires an angle",
            })
        }
        (GateName::Rz, Some(theta)) => return Ok(rz2(theta).to_cmatrix()),
        (other, Some(_)) => {
            return Err(Error::GateAngle {
                gate: other.label(),
                reason: "takes no angle",
            })
        }
        _ => {}
    }
    let r = |x: f64| C64::new(x, 0.0);
    let m = match name {
        GateName::Sx => SX2.to_cmatrix(),
        GateName::X => CMatrix::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]])?,
        GateName::Z => CMatrix::diag(&[ONE, -ONE]),
        GateName::H => {
            CMatrix::from_real_rows(&[&[FRAC_1_SQRT_2, FRAC_1_SQRT_2], &[FRAC_1_SQRT_2, -FRAC_1_SQRT_2]])?
        }
        GateName::Cz => CMatrix::diag(&[ONE, ONE, ONE, -ONE]),
        GateName::Cx => permutation(&[0, 1, 3, 2]),
        GateName::Swap => permutation(&[0, 2, 1, 3]),
        GateName::ISwap => CMatrix::from_rows(&[
            vec![ONE, ZERO, ZERO, ZERO],
            vec![ZERO, ZERO, I, ZERO],
            vec![ZERO, I, ZERO, ZERO],
            vec![ZERO, ZERO, ZERO, r(1.0)],
        ])?,
        GateName::Toffoli => permutation(&[0, 1, 2, 3, 4, 5, 7, 6]),
        GateName::Identity(d) => {
            if d == 0 {
                return Err(Error::InvalidMatrix("identity of dimension 0".into()));
            }
            CMatrix::identity(d)
        }
        GateName::Rz => unreachable!(),
    };
    Ok(m)
}

/// Permutation matrix sending basis state `j` to `perm[j]`.
fn permutation(perm: &[usize]) -> CMatrix {
    let mut m = CMatrix::zeros(perm.len());
    for (j, &i) in perm.iter().enumerate() {
        m[(i, j)] = ONE;
    }
    m
}

/// Lifts `gate` (dimension 2^k) onto the listed `qubits` of an `n_qubits`
/// register. `qubits[0]` is the gate's most significant qubit.
pub fn embed(gate: &CMatrix, qubits: &[usize], n_qubits: usize) -> Result<CMatrix> {
    let k = qubits.len();
    if k == 0 || gate.dim() != 1 << k {
        return Err(Error::InvalidQubits(format!(
            "gate of dimension {} cannot act on {k} qubits",
            gate.dim()
        )));
    }
    for (i, &q) in qubits.iter().enumerate() {
        if q >= n_qubits {
            return Err(Error::InvalidQubits(format!(
                "qubit {q} out of range for {n_qubits} qubits"
            )));
        }
        if qubits[..i].contains(&q) {
            return Err(Error::InvalidQubits(format!("duplicate qubit {q}")));
        }
    }
    let d = 1usize << n_qubits;
    let masks: Vec<usize> = qubits.iter().map(|&q| 1 << (n_qubits - 1 - q)).collect();
    let all: usize = masks.iter().sum();
    let sub = |idx: usize| -> usize {
        masks
            .iter()
            .fold(0, |acc, &m| (acc << 1) | usize::from(idx & m != 0))
    };
    let mut out = CMatrix::zeros(d);
    for i in 0..d {
        for j in 0..d {
            if i & !all == j & !all {
                out[(i, j)] = gate[(sub(i), sub(j))];
            }
        }
    }
    Ok(out)
}

/// Hilbert-Schmidt fidelity |Tr(u†v)|² / d².
pub fn fidelity(u: &CMatrix, v: &CMatrix) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            actual: v.dim(),
        });
    }
    Ok(fidelity_unchecked(u, v))
}

pub(crate) fn fidelity_unchecked(u: &CMatrix, v: &CMatrix) -> f64 {
    let d = u.dim() as f64;
    overlap(u, v).norm_sqr() / (d * d)
}

/// Tr(u†v) without forming the product.
pub(crate) fn overlap(u: &CMatrix, v: &CMatrix) -> C64 {
    u.as_slice()
        .iter()
        .zip(v.as_slice())
        .map(|(a, b)| a.conj() * b)
        .sum()
}
