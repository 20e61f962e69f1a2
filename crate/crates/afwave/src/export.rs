//! Text export of assembled matrices (coordinate format readable by
//! standard sparse-matrix tools) and JSON norm reports, for external
//! cross-checks.

use crate::error::{Error, Result};
use crate::linalg::Tridiag;
use crate::norms::{NormKind, RegionContribution};
use ndarray::Array2;
use num_complex::Complex64 as C;
use serde::Serialize;
use std::fmt::Write as _;

/// Coordinate-format text (1-based indices, "i j re im" per line) for a
/// complex matrix; zero entries are skipped.
pub fn matrix_text(a: &Array2<C>) -> String {
    let (rows, cols) = a.dim();
    let entries: Vec<(usize, usize, C)> = a
        .indexed_iter()
        .filter(|(_, z)| **z != C::new(0.0, 0.0))
        .map(|((i, j), z)| (i + 1, j + 1, *z))
        .collect();
    let mut s = String::new();
    s.push_str("%%MatrixMarket matrix coordinate complex general\n");
    let _ = writeln!(s, "{} {} {}", rows, cols, entries.len());
    for (i, j, z) in entries {
        let _ = writeln!(s, "{} {} {:.17e} {:.17e}", i, j, z.re, z.im);
    }
    s
}

pub fn tridiag_text(a: &Tridiag) -> String {
    matrix_text(&a.to_dense())
}

/// Parse the coordinate text back into a dense matrix (for round-trip
/// checks and re-imports).
pub fn parse_matrix_text(text: &str) -> Result<Array2<C>> {
    let mut lines = text.lines().filter(|l| !l.starts_with('%'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Config("matrix text has no size line".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|tok| tok.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad matrix size line: {e}")))?;
    let [rows, cols, nnz] = dims[..] else {
        return Err(Error::Config("matrix size line needs 3 fields".into()));
    };
    let mut a = Array2::from_elem((rows, cols), C::new(0.0, 0.0));
    let mut seen = 0usize;
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 4 {
            return Err(Error::Config(format!("bad matrix entry line: {line}")));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|e| Error::Config(format!("bad row index: {e}")))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|e| Error::Config(format!("bad column index: {e}")))?;
        let re: f64 = toks[2]
            .parse()
            .map_err(|e| Error::Config(format!("bad real part: {e}")))?;
        let im: f64 = toks[3]
            .parse()
            .map_err(|e| Error::Config(format!("bad imaginary part: {e}")))?;
        if i == 0 || j == 0 || i > rows || j > cols {
            return Err(Error::Config(format!("entry ({i},{j}) out of bounds")));
        }
        a[[i - 1, j - 1]] = C::new(re, im);
        seen += 1;
    }
    if seen != nnz {
        return Err(Error::Config(format!(
            "matrix text promised {nnz} entries, found {seen}"
        )));
    }
    Ok(a)
}

/// Serializable norm evaluation: the kind, the value, and the per-region
/// breakdown.
#[derive(Debug, Clone, Serialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub value: f64,
    pub per_annulus: Vec<RegionContribution>,
}

impl NormReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("norm report serializes")
    }
}

/// CSV table of a limiting-absorption scan (one row per frequency).
pub fn scan_csv(rows: &[crate::spectral::LapRow]) -> String {
    let mut s = String::from("re_omega,im_omega,norm,residual\n");
    for row in rows {
        let _ = writeln!(
            s,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            row.omega.re, row.omega.im, row.norm, row.residual
        );
    }
    s
}

/// JSON metadata of a spectral report: eigenvalues as [re, im] pairs, the
/// count, the zero-resonance constant (null when infinite), and the gap
/// bounds. Eigenvectors are omitted — export those via `matrix_text`.
pub fn spectral_report_json(report: &crate::spectral::SpectralReport) -> String {
    let eigenvalues: Vec<[f64; 2]> = report.eigenvalues.iter().map(|w| [w.re, w.im]).collect();
    let partners: Vec<[f64; 2]> = report.partners.iter().map(|w| [w.re, w.im]).collect();
    let value = serde_json::json!({
        "eigenvalues": eigenvalues,
        "partners": partners,
        "partner_defects": report.partner_defects,
        "kappa": report.kappa,
        "k0": report.k0.is_finite().then_some(report.k0),
        "alpha": report.alpha,
        "beta": report.beta,
    });
    serde_json::to_string_pretty(&value).expect("spectral report serializes")
}

/// JSON metadata of a projector pair: contour rectangle, node count, ranks,
/// and the invariant defect. Matrices are omitted — export via `matrix_text`.
pub fn projector_pair_json(pair: &crate::spectral::ProjectorPair) -> String {
    let value = serde_json::json!({
        "contour": pair.contour,
        "nodes_used": pair.nodes_used,
        "rank_minus": pair.rank_minus,
        "rank_plus": pair.rank_plus,
        "defect": pair.defect,
    });
    serde_json::to_string_pretty(&value).expect("projector metadata serializes")
}
