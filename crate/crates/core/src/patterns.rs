//! RIS activation patterns used during pilot transmission.
//!
//! A pattern is the `tau_p x (N+1)` matrix whose row t is `(1, phi_t^T)`:
//! column 0 carries the direct path, columns 1..=N the element coefficients.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, ONE, ZERO};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatternKind {
    OnOff,
    Dft,
    Custom,
}

impl fmt::Display for PatternKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternKind::OnOff => "onoff",
            PatternKind::Dft => "dft",
            PatternKind::Custom => "custom",
        })
    }
}

impl FromStr for PatternKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dft" => Ok(PatternKind::Dft),
            "onoff" | "on-off" => Ok(PatternKind::OnOff),
            other => Err(Error::Pattern(format!(
                "unknown pattern `{other}` (expected dft | onoff)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActivationPattern {
    matrix: CMatrix,
    kind: PatternKind,
}

impl ActivationPattern {
    /// Wraps an arbitrary `tau_p x (N+1)` matrix. Only the shape is checked;
    /// amplitude and first-column conditions are reported by [`validate_pattern`].
    pub fn custom(matrix: CMatrix) -> Result<Self> {
        if matrix.cols() == 0 {
            return Err(Error::Pattern("pattern needs at least the direct-path column".into()));
        }
        if matrix.rows() < matrix.cols() {
            return Err(Error::Pattern(format!(
                "tau_p = {} is smaller than N + 1 = {}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        Ok(Self {
            matrix,
            kind: PatternKind::Custom,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn kind(&self) -> PatternKind {
        self.kind
    }

    pub fn tau_p(&self) -> usize {
        self.matrix.rows()
    }

    /// Number of RIS elements N.
    pub fn elements(&self) -> usize {
        self.matrix.cols() - 1
    }

    /// RIS coefficients `phi_t` for pilot slot t.
    pub fn coefficients(&self, t: usize) -> &[C64] {
        &self.matrix.row(t)[1..]
    }

    pub fn validate(&self) -> PatternReport {
        validate_pattern(self)
    }
}

/// `[[1, 0^T], [1_N, I_N]]`, square with `tau_p = N + 1`.
pub fn onoff_pattern(n: usize) -> Result<ActivationPattern> {
    if n == 0 {
        return Err(Error::Pattern("on-off pattern needs N >= 1".into()));
    }
    let matrix = CMatrix::from_fn(n + 1, n + 1, |t, k| if k == 0 || t == k { ONE } else { ZERO });
    Ok(ActivationPattern {
        matrix,
        kind: PatternKind::OnOff,
    })
}

/// First `N + 1` columns of the unnormalized `tau_p`-point DFT matrix,
/// entry `(k, n) = exp(-i 2pi k n / tau_p)`, so `FᴴF = tau_p I`.
pub fn dft_pattern(tau_p: usize, n: usize) -> Result<ActivationPattern> {
    if tau_p < n + 1 {
        return Err(Error::Pattern(format!(
            "DFT pattern needs tau_p >= N + 1, got tau_p = {tau_p}, N = {n}"
        )));
    }
    // k*n is reduced mod tau_p first so every entry comes from one table of
    // roots of unity with arguments in [0, 2pi).
    let roots: Vec<C64> = (0..tau_p)
        .map(|j| C64::from_polar(1.0, -2.0 * PI * j as f64 / tau_p as f64))
        .collect();
    let matrix = CMatrix::from_fn(tau_p, n + 1, |k, c| roots[(k * c) % tau_p]);
    Ok(ActivationPattern {
        matrix,
        kind: PatternKind::Dft,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatternReport {
    pub first_column_ones: bool,
    pub max_modulus: f64,
    pub amplitude_ok: bool,
    /// `tr(ṼᴴṼ)`.
    pub gram_trace: f64,
    /// `tau_p (N + 1)`, the largest trace attainable under `|phi| <= 1`.
    pub trace_bound: f64,
    pub bound_attained: bool,
    /// Whether `ṼᴴṼ` is diagonal, i.e. the LS error covariance is
    /// `N0 (ṼᴴṼ)^-1 ⊗ I` with uncorrelated blocks.
    pub gram_diagonal: bool,
}

impl PatternReport {
    pub fn is_valid(&self) -> bool {
        self.first_column_ones && self.amplitude_ok
    }
}

const AMPLITUDE_SLACK: f64 = 1e-12;

pub fn validate_pattern(p: &ActivationPattern) -> PatternReport {
    let v = p.matrix();
    let (tau_p, cols) = v.shape();
    let first_column_ones = (0..tau_p).all(|t| (v[(t, 0)] - ONE).norm() <= AMPLITUDE_SLACK);
    let max_modulus = v.max_modulus();
    let amplitude_ok = max_modulus <= 1.0 + AMPLITUDE_SLACK;

    let gram = v.hermitian().matmul(v).expect("VᴴV shapes always conform");
    let gram_trace = gram.trace().re;
    let trace_bound = (tau_p * cols) as f64;
    let scale = tau_p as f64;
    let bound_attained = (gram_trace - trace_bound).abs() <= 1e-9 * trace_bound;
    let gram_diagonal = (0..cols).all(|r| (0..cols).all(|c| r == c || gram[(r, c)].norm() <= 1e-9 * scale));

    PatternReport {
        first_column_ones,
        max_modulus,
        amplitude_ok,
        gram_trace,
        trace_bound,
        bound_attained,
        gram_diagonal,
    }
}
