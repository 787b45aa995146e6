//! Target unitaries: builtin names or JSON matrix files.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use unisynth::qmat::{embed, standard_gate, CMatrix, GateName, C64};
use unisynth::tasks::sweep_unitary;

pub const BUILTINS: &str = "identity, cx, cz, swap, iswap, toffoli, zz:<theta>";

fn two_qubit(gate: GateName, n_qubits: usize) -> Result<CMatrix> {
    let g = standard_gate(gate, None)?;
    match n_qubits {
        2 => Ok(g),
        3 => Ok(embed(&g, &[0, 1], 3)?),
        n => bail!("unsupported qubit count {n}"),
    }
}

/// Resolves `spec` to a unitary on `n_qubits` qubits.
///
/// `zz:<theta>` is `CX·(I⊗RZ(θ))·CX` with θ in radians; a trailing `pi`
/// multiplies by π, so `zz:0.3pi` works.
pub fn resolve(spec: &str, n_qubits: usize) -> Result<CMatrix> {
    let lower = spec.to_ascii_lowercase();
    let u = match lower.as_str() {
        "identity" | "id" => CMatrix::identity(1 << n_qubits),
        "cx" | "cnot" => two_qubit(GateName::Cx, n_qubits)?,
        "cz" => two_qubit(GateName::Cz, n_qubits)?,
        "swap" => two_qubit(GateName::Swap, n_qubits)?,
        "iswap" => two_qubit(GateName::ISwap, n_qubits)?,
        "toffoli" | "ccx" => {
            if n_qubits != 3 {
                bail!("toffoli needs --qubits 3");
            }
            standard_gate(GateName::Toffoli, None)?
        }
        s if s.starts_with("zz:") => {
            let theta = parse_angle(&s[3..])?;
            let u = sweep_unitary(theta);
            if n_qubits == 3 {
                embed(&u, &[0, 1], 3)?
            } else {
                u
            }
        }
        _ => load_matrix(Path::new(spec))?,
    };
    if u.dim() != 1 << n_qubits {
        bail!("target has dimension {} but --qubits {n_qubits} needs {}", u.dim(), 1 << n_qubits);
    }
    if !u.is_unitary(1e-8) {
        bail!("target is not unitary (deviation {:.3e})", u.unitarity_deviation());
    }
    Ok(u)
}

fn parse_angle(s: &str) -> Result<f64> {
    let (num, scale) = match s.strip_suffix("pi") {
        Some(head) => (head, std::f64::consts::PI),
        None => (s, 1.0),
    };
    let v: f64 = if num.is_empty() { 1.0 } else { num.parse().with_context(|| format!("bad angle {s:?}"))? };
    Ok(v * scale)
}

/// Reads a JSON array of rows, each row an array of `[re, im]` pairs.
pub fn load_matrix(path: &Path) -> Result<CMatrix> {
    let text = fs::read_to_string(path).with_context(|| {
        format!("{} is neither a builtin target ({BUILTINS}) nor a readable file", path.display())
    })?;
    let rows: Vec<Vec<[f64; 2]>> =
        serde_json::from_str(&text).with_context(|| format!("parsing matrix file {}", path.display()))?;
    let rows: Vec<Vec<C64>> = rows
        .into_iter()
        .map(|r| r.into_iter().map(|[re, im]| C64::new(re, im)).collect())
        .collect();
    CMatrix::from_rows(&rows).map_err(|e| anyhow!("matrix file {}: {e}", path.display()))
}
