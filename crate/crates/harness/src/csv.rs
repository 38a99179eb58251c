//! CSV rendering and atomic file writes.

use std::io::Write;
use std::path::Path;

use ridge_core::analysis::PathDiagnostic;
use ridge_core::optimizers::Trajectory;
use ridge_core::Spectrum;

use crate::error::{HarnessError, Result};

/// 17 significant digits, so every `f64` round-trips.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Columns `iter, x0.., y0.., grad_norm, correction_norm, lambda, rho,
/// cg_iters`; the diagnostics of a row describe the step leaving it.
pub fn trajectory_csv(t: &Trajectory, stride: usize) -> String {
    let stride = stride.max(1);
    let z0 = &t.points[0];
    let mut header = vec!["iter".to_string()];
    header.extend((0..z0.n()).map(|i| format!("x{i}")));
    header.extend((0..z0.m()).map(|i| format!("y{i}")));
    header.extend(["grad_norm", "correction_norm", "lambda", "rho", "cg_iters"].map(String::from));
    let mut out = header.join(",");
    out.push('\n');
    let last = t.points.len() - 1;
    for (i, z) in t.points.iter().enumerate() {
        if i % stride != 0 && i != last {
            continue;
        }
        let mut row = vec![i.to_string()];
        row.extend(z.x.iter().chain(&z.y).map(|v| fmt_f64(*v)));
        row.push(fmt_f64(t.grad_norms[i]));
        let aux = t.aux.get(i).copied().unwrap_or_default();
        row.push(fmt_opt(aux.correction_norm));
        row.push(fmt_opt(aux.lambda));
        row.push(fmt_opt(aux.rho));
        row.push(aux.cg_iters.map(|k| k.to_string()).unwrap_or_default());
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn spectrum_csv(s: &Spectrum) -> String {
    let mut out = String::from("index,re,im,modulus\n");
    for (i, l) in s.eigenvalues.iter().enumerate() {
        out.push_str(&format!("{i},{},{},{}\n", fmt_f64(l.re), fmt_f64(l.im), fmt_f64(l.norm())));
    }
    out
}

pub fn path_csv(d: &PathDiagnostic) -> String {
    let mut out = String::from("alpha,path_angle,path_norm,zero_field\n");
    for i in 0..d.alphas.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            fmt_f64(d.alphas[i]),
            fmt_f64(d.path_angle[i]),
            fmt_f64(d.path_norm[i]),
            d.zero_field[i]
        ));
    }
    out
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| HarnessError::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}
