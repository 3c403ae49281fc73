//! Dense operator substrate.
//!
//! An [`Operator`] is a square real matrix tagged with the induced norm used
//! to measure it. Operators combined arithmetically must agree on that norm.

use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number above which a shifted matrix is treated as singular.
pub const SINGULAR_COND: f64 = 1e12;

/// Iteration cap for the real Schur eigensolver.
pub const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum NormKind {
    /// Maximum absolute column sum.
    Induced1,
    /// Largest singular value.
    #[default]
    Induced2,
    /// Maximum absolute row sum.
    InducedInf,
}

impl std::str::FromStr for NormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "1" | "induced1" | "l1" => Ok(NormKind::Induced1),
            "2" | "induced2" | "l2" => Ok(NormKind::Induced2),
            "inf" | "inducedinf" | "linf" => Ok(NormKind::InducedInf),
            other => Err(Error::Parse(format!("unknown norm kind `{other}`"))),
        }
    }
}

/// Square real matrix standing for a (discretized) linear operator.
#[derive(Clone, PartialEq)]
pub struct Operator {
    entries: DMatrix<f64>,
    norm_kind: NormKind,
}

impl fmt::Debug for Operator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Operator")
            .field("dim", &self.dim())
            .field("norm_kind", &self.norm_kind)
            .field("entries", &self.entries.as_slice())
            .finish()
    }
}

impl Operator {
    pub fn new(entries: DMatrix<f64>, norm_kind: NormKind) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::NotSquare {
                rows: entries.nrows(),
                cols: entries.ncols(),
            });
        }
        if entries.nrows() == 0 {
            return Err(Error::PreconditionViolated(
                "operator dimension must be positive".into(),
            ));
        }
        for (k, v) in entries.iter().enumerate() {
            if !v.is_finite() {
                let n = entries.nrows();
                return Err(Error::NonFinite { row: k % n, col: k / n });
            }
        }
        Ok(Self { entries, norm_kind })
    }

    /// Builds from row slices. Panics on ragged input; intended for literals.
    pub fn from_rows(rows: &[&[f64]], norm_kind: NormKind) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::Parse("ragged matrix rows".into()));
        }
        Self::new(DMatrix::from_fn(n, m, |i, j| rows[i][j]), norm_kind)
    }

    pub fn zeros(dim: usize, norm_kind: NormKind) -> Self {
        Self {
            entries: DMatrix::zeros(dim, dim),
            norm_kind,
        }
    }

    pub fn identity(dim: usize, norm_kind: NormKind) -> Self {
        Self {
            entries: DMatrix::identity(dim, dim),
            norm_kind,
        }
    }

    pub fn diag(values: &[f64], norm_kind: NormKind) -> Result<Self> {
        let n = values.len();
        Self::new(
            DMatrix::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 }),
            norm_kind,
        )
    }

    /// Wraps a matrix already known to be square and finite.
    pub(crate) fn from_matrix_unchecked(entries: DMatrix<f64>, norm_kind: NormKind) -> Self {
        debug_assert_eq!(entries.nrows(), entries.ncols());
        Self { entries, norm_kind }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm_kind
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    /// Same matrix measured in another norm.
    pub fn with_norm(mut self, norm_kind: NormKind) -> Self {
        self.norm_kind = norm_kind;
        self
    }

    pub fn norm(&self) -> f64 {
        op_norm(self)
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }

    fn check_compatible(&self, other: &Operator) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        if self.norm_kind != other.norm_kind {
            return Err(Error::NormMismatch {
                left: self.norm_kind,
                right: other.norm_kind,
            });
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Operator) -> Result<Operator> {
        self.check_compatible(other)?;
        Ok(Self::from_matrix_unchecked(
            &self.entries + &other.entries,
            self.norm_kind,
        ))
    }

    pub fn try_sub(&self, other: &Operator) -> Result<Operator> {
        self.check_compatible(other)?;
        Ok(Self::from_matrix_unchecked(
            &self.entries - &other.entries,
            self.norm_kind,
        ))
    }

    /// Composition `self * other` (apply `other` first).
    pub fn try_mul(&self, other: &Operator) -> Result<Operator> {
        self.check_compatible(other)?;
        Ok(Self::from_matrix_unchecked(
            &self.entries * &other.entries,
            self.norm_kind,
        ))
    }

    pub fn scale(&self, factor: f64) -> Operator {
        Self::from_matrix_unchecked(&self.entries * factor, self.norm_kind)
    }

    pub fn transpose(&self) -> Operator {
        Self::from_matrix_unchecked(self.entries.transpose(), self.norm_kind)
    }

    /// `shift * I + self`.
    pub fn shifted(&self, shift: f64) -> Operator {
        let mut m = self.entries.clone();
        for i in 0..self.dim() {
            m[(i, i)] += shift;
        }
        Self::from_matrix_unchecked(m, self.norm_kind)
    }
}

/// Induced norm of a raw matrix.
pub fn matrix_norm(m: &DMatrix<f64>, kind: NormKind) -> f64 {
    match kind {
        NormKind::Induced1 => m
            .column_iter()
            .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::InducedInf => m
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        NormKind::Induced2 => spectral_norm(m),
    }
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    if m.nrows() == 1 && m.ncols() == 1 {
        return m[(0, 0)].abs();
    }
    // Golub-Kahan SVD; falls back to power iteration on A^T A if it stalls.
    match nalgebra::SVD::try_new(m.clone(), false, false, f64::EPSILON, 10_000) {
        Some(svd) => svd.singular_values.iter().copied().fold(0.0, f64::max),
        None => power_spectral_norm(m, 1e-12, 10_000),
    }
}

/// Largest singular value by power iteration on `A^T A`.
pub fn power_spectral_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.ncols();
    let gram = m.transpose() * m;
    let mut v = nalgebra::DVector::from_fn(n, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let wn = w.norm();
        if wn == 0.0 {
            return 0.0;
        }
        let next = wn.sqrt();
        v = w / wn;
        if (next - est).abs() <= tol * next {
            return next;
        }
        est = next;
    }
    est
}

pub fn op_norm(a: &Operator) -> f64 {
    matrix_norm(&a.entries, a.norm_kind)
}

/// `R(mu, A) = (mu I - A)^{-1}` by partial-pivoting LU.
///
/// The returned inverse is checked against the 1-norm condition number
/// `||mu I - A||_1 ||R||_1`; above [`SINGULAR_COND`] the shift is rejected.
pub fn resolvent(a: &Operator, mu: f64) -> Result<Operator> {
    let (r, _) = resolvent_with_cond(a, mu)?;
    Ok(r)
}

pub fn resolvent_with_cond(a: &Operator, mu: f64) -> Result<(Operator, f64)> {
    let inv = resolvent_matrix(&a.entries, mu)?;
    Ok((Operator::from_matrix_unchecked(inv.0, a.norm_kind), inv.1))
}

pub(crate) fn resolvent_matrix(a: &DMatrix<f64>, mu: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = a.nrows();
    let mut shifted = -a.clone();
    for i in 0..n {
        shifted[(i, i)] += mu;
    }
    let fwd = matrix_norm(&shifted, NormKind::Induced1);
    let inv = shifted.lu().try_inverse().ok_or(Error::SingularResolvent {
        mu,
        cond: f64::INFINITY,
    })?;
    let cond = fwd * matrix_norm(&inv, NormKind::Induced1);
    if !cond.is_finite() || cond > SINGULAR_COND {
        return Err(Error::SingularResolvent { mu, cond });
    }
    Ok((inv, cond))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<Complex64>,
    pub spectral_abscissa: f64,
    pub spectral_radius: f64,
}

impl Spectrum {
    fn from_eigenvalues(eigenvalues: Vec<Complex64>) -> Self {
        let spectral_abscissa = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let spectral_radius = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
        Self {
            eigenvalues,
            spectral_abscissa,
            spectral_radius,
        }
    }
}

pub fn spectrum(a: &Operator) -> Result<Spectrum> {
    spectrum_of(&a.entries)
}

pub(crate) fn spectrum_of(m: &DMatrix<f64>) -> Result<Spectrum> {
    if m.nrows() == 1 {
        return Ok(Spectrum::from_eigenvalues(vec![Complex64::new(m[(0, 0)], 0.0)]));
    }
    let schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, EIGEN_MAX_ITER).ok_or(Error::EigenFailure {
        max_iter: EIGEN_MAX_ITER,
    })?;
    let eig: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    Ok(Spectrum::from_eigenvalues(eig))
}

/// Parses the plain-text matrix format: a `dim k` line followed by `k` rows
/// of `k` whitespace-separated numbers. Blank lines and `#` comments are
/// ignored.
pub fn parse_matrix(text: &str, norm_kind: NormKind) -> Result<Operator> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("dim") {
        return Err(Error::Parse(format!("expected `dim k` header, got `{header}`")));
    }
    let dim: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|&k| k > 0)
        .ok_or_else(|| Error::Parse(format!("bad dimension in `{header}`")))?;
    let mut data = Vec::with_capacity(dim * dim);
    for i in 0..dim {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("expected {dim} rows, found {i}")))?;
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if row.len() != dim {
            return Err(Error::Parse(format!(
                "row {i} has {} entries, expected {dim}",
                row.len()
            )));
        }
        data.extend(row);
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Parse(format!("trailing content after matrix: `{extra}`")));
    }
    Operator::new(DMatrix::from_row_slice(dim, dim, &data), norm_kind)
}

pub fn read_matrix_file(path: &Path, norm_kind: NormKind) -> Result<Operator> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix(&text, norm_kind)
}

/// Writes `a` in the plain-text matrix format with 17 significant digits.
pub fn format_matrix(a: &Operator) -> String {
    let n = a.dim();
    let mut out = format!("dim {n}\n");
    for i in 0..n {
        let row: Vec<String> = (0..n).map(|j| fmt_f64(a.get(i, j))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Round-trip-safe decimal rendering used for every artifact.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".to_string()
    } else if v > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}
