//! Physical channel model: Rayleigh user links, a deterministic line-of-sight
//! BS–RIS matrix, the cascade channel and the structured prior covariance of
//! the composite channel vector.

use std::f64::consts::PI;

use rand::distr::Open01;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{sample_cgaussian, CMatrix, CVector, C64};

/// Array geometry for the BS–RIS line-of-sight matrix. Spacings are in
/// wavelengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub d_bs_over_lambda: f64,
    pub d_irs_over_lambda: f64,
    pub angles: LosAngles,
}

/// Departure angles are indexed by RIS element (length N) and arrival angles
/// by BS antenna (length M), matching the indexing of the LoS phase formula.
#[derive(Clone, Debug, PartialEq)]
pub struct LosAngles {
    pub elevation_dep: Vec<f64>,
    pub azimuth_dep: Vec<f64>,
    pub elevation_arr: Vec<f64>,
    pub azimuth_arr: Vec<f64>,
}

impl LosAngles {
    pub fn antennas(&self) -> usize {
        self.elevation_arr.len()
    }

    pub fn elements(&self) -> usize {
        self.elevation_dep.len()
    }
}

impl Geometry {
    pub fn new(d_bs_over_lambda: f64, d_irs_over_lambda: f64, angles: LosAngles) -> Result<Self> {
        if !(d_bs_over_lambda > 0.0 && d_bs_over_lambda.is_finite()) {
            return Err(Error::param("d_bs_over_lambda", "must be > 0"));
        }
        if !(d_irs_over_lambda > 0.0 && d_irs_over_lambda.is_finite()) {
            return Err(Error::param("d_irs_over_lambda", "must be > 0"));
        }
        if angles.azimuth_dep.len() != angles.elements() {
            return Err(Error::dims(
                "Geometry::new",
                angles.elements(),
                angles.azimuth_dep.len(),
            ));
        }
        if angles.azimuth_arr.len() != angles.antennas() {
            return Err(Error::dims(
                "Geometry::new",
                angles.antennas(),
                angles.azimuth_arr.len(),
            ));
        }
        let elevation_ok = |v: &[f64]| v.iter().all(|&x| (0.0..=PI).contains(&x));
        let azimuth_ok = |v: &[f64]| v.iter().all(|&x| (0.0..2.0 * PI).contains(&x));
        if !elevation_ok(&angles.elevation_dep) || !elevation_ok(&angles.elevation_arr) {
            return Err(Error::param("elevation", "angles must lie in [0, pi]"));
        }
        if !azimuth_ok(&angles.azimuth_dep) || !azimuth_ok(&angles.azimuth_arr) {
            return Err(Error::param("azimuth", "angles must lie in [0, 2pi)"));
        }
        Ok(Self {
            d_bs_over_lambda,
            d_irs_over_lambda,
            angles,
        })
    }

    pub fn antennas(&self) -> usize {
        self.angles.antennas()
    }

    pub fn elements(&self) -> usize {
        self.angles.elements()
    }
}

/// Large-scale fading coefficients.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLosses {
    pub beta_bs: f64,
    pub beta_irs: f64,
    pub beta_bs_irs: f64,
}

impl PathLosses {
    pub fn new(beta_bs: f64, beta_irs: f64, beta_bs_irs: f64) -> Result<Self> {
        for (name, v) in [
            ("beta_bs", beta_bs),
            ("beta_irs", beta_irs),
            ("beta_bs_irs", beta_bs_irs),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self {
            beta_bs,
            beta_irs,
            beta_bs_irs,
        })
    }

    /// Picks `beta_irs` so that `beta_bs + n * beta_irs * beta_bs_irs = 1`,
    /// which keeps the received SNR equal to `1 / N0`.
    pub fn normalized(n: usize, beta_bs: f64, beta_bs_irs: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta_bs) {
            return Err(Error::param("beta_bs", format!("must lie in [0, 1], got {beta_bs}")));
        }
        if !(beta_bs_irs > 0.0 && beta_bs_irs.is_finite()) {
            return Err(Error::param("beta_bs_irs", format!("must be > 0, got {beta_bs_irs}")));
        }
        if n == 0 {
            return Err(Error::param("n", "normalization needs at least one RIS element"));
        }
        let beta_irs = (1.0 - beta_bs) / (n as f64 * beta_bs_irs);
        Self::new(beta_bs, beta_irs, beta_bs_irs)
    }

    /// `beta_irs * beta_bs_irs`, the per-entry power of a cascade column.
    pub fn cascade_gain(&self) -> f64 {
        self.beta_irs * self.beta_bs_irs
    }
}

/// One draw of every channel in the system plus the derived forms.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    pub h_bs: CVector,
    pub h_irs: CVector,
    pub h_bs_irs: CMatrix,
    pub h_cascade: CMatrix,
    pub h_composite: CVector,
}

impl ChannelRealization {
    pub fn new(h_bs: CVector, h_irs: CVector, h_bs_irs: CMatrix) -> Result<Self> {
        if h_bs.dim() != h_bs_irs.rows() {
            return Err(Error::dims("ChannelRealization::new", h_bs_irs.rows(), h_bs.dim()));
        }
        let h_cascade = cascade_channel(&h_bs_irs, &h_irs)?;
        let h_composite = composite_vector(&h_bs, &h_cascade)?;
        Ok(Self {
            h_bs,
            h_irs,
            h_bs_irs,
            h_cascade,
            h_composite,
        })
    }

    pub fn antennas(&self) -> usize {
        self.h_bs.dim()
    }

    pub fn elements(&self) -> usize {
        self.h_irs.dim()
    }
}

/// Structured `C_H = blkdiag{beta_bs I_M, beta_irs b_1 b_1ᴴ, ..., beta_irs b_N b_Nᴴ}`
/// where `b_n` is column n of the LoS matrix. Never densified on the hot path.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorCovariance {
    pub antennas: usize,
    pub beta_bs: f64,
    pub beta_irs: f64,
    pub rank_one_blocks: Vec<CVector>,
}

impl PriorCovariance {
    pub fn elements(&self) -> usize {
        self.rank_one_blocks.len()
    }

    pub fn direct_trace(&self) -> f64 {
        self.beta_bs * self.antennas as f64
    }

    pub fn block_trace(&self, n: usize) -> f64 {
        self.beta_irs * self.rank_one_blocks[n].norm_sqr()
    }

    pub fn trace(&self) -> f64 {
        self.direct_trace() + (0..self.elements()).map(|n| self.block_trace(n)).sum::<f64>()
    }

    /// Dense `M(N+1) x M(N+1)` matrix. Diagnostics and test oracles only.
    pub fn to_dense(&self) -> CMatrix {
        let m = self.antennas;
        let dim = m * (self.elements() + 1);
        let mut out = CMatrix::zeros(dim, dim);
        for i in 0..m {
            out[(i, i)] = C64::new(self.beta_bs, 0.0);
        }
        for (n, b) in self.rank_one_blocks.iter().enumerate() {
            let off = (n + 1) * m;
            for r in 0..m {
                for c in 0..m {
                    out[(off + r, off + c)] = b[r] * b[c].conj() * self.beta_irs;
                }
            }
        }
        out
    }
}

/// `sqrt(beta_bs) * g` with `g ~ CN(0, I_M)`.
pub fn sample_direct_channel<R: Rng + ?Sized>(beta_bs: f64, m: usize, rng: &mut R) -> Result<CVector> {
    if beta_bs.is_nan() || beta_bs < 0.0 {
        return Err(Error::param("beta_bs", format!("must be >= 0, got {beta_bs}")));
    }
    sample_cgaussian(m, beta_bs, rng)
}

/// `sqrt(beta_irs) * g` with `g ~ CN(0, I_N)`.
pub fn sample_irs_channel<R: Rng + ?Sized>(beta_irs: f64, n: usize, rng: &mut R) -> Result<CVector> {
    if beta_irs.is_nan() || beta_irs < 0.0 {
        return Err(Error::param("beta_irs", format!("must be >= 0, got {beta_irs}")));
    }
    sample_cgaussian(n, beta_irs, rng)
}

/// Elevations uniform on (0, pi), azimuths uniform on (0, 2pi).
pub fn sample_angles<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> LosAngles {
    let mut draw = |count: usize, span: f64| -> Vec<f64> {
        (0..count)
            .map(|_| {
                let u: f64 = rng.sample(Open01);
                u * span
            })
            .collect()
    };
    let elevation_dep = draw(n, PI);
    let azimuth_dep = draw(n, 2.0 * PI);
    let elevation_arr = draw(m, PI);
    let azimuth_arr = draw(m, 2.0 * PI);
    LosAngles {
        elevation_dep,
        azimuth_dep,
        elevation_arr,
        azimuth_arr,
    }
}

/// Deterministic high-rank LoS matrix. Entry `(m, n)` (zero-based) is
/// `sqrt(beta) * exp(i 2pi [m d_bs sin(el_dep[n]) sin(az_dep[n]) + n d_irs sin(el_arr[m]) sin(az_arr[m])])`.
pub fn build_los_matrix(geom: &Geometry, beta_bs_irs: f64) -> CMatrix {
    let amp = beta_bs_irs.sqrt();
    let a = &geom.angles;
    let dep: Vec<f64> = (0..geom.elements())
        .map(|n| geom.d_bs_over_lambda * a.elevation_dep[n].sin() * a.azimuth_dep[n].sin())
        .collect();
    let arr: Vec<f64> = (0..geom.antennas())
        .map(|m| geom.d_irs_over_lambda * a.elevation_arr[m].sin() * a.azimuth_arr[m].sin())
        .collect();
    CMatrix::from_fn(geom.antennas(), geom.elements(), |m, n| {
        let phase = 2.0 * PI * (m as f64 * dep[n] + n as f64 * arr[m]);
        C64::from_polar(amp, phase)
    })
}

/// `H_bs_irs * diag(h_irs)`.
pub fn cascade_channel(h_bs_irs: &CMatrix, h_irs: &CVector) -> Result<CMatrix> {
    if h_bs_irs.cols() != h_irs.dim() {
        return Err(Error::dims("cascade_channel", h_bs_irs.cols(), h_irs.dim()));
    }
    Ok(CMatrix::from_fn(h_bs_irs.rows(), h_bs_irs.cols(), |m, n| {
        h_bs_irs[(m, n)] * h_irs[n]
    }))
}

/// `[h_bs; col_1; ...; col_N]`, length `M(N+1)`.
pub fn composite_vector(h_bs: &CVector, h_cascade: &CMatrix) -> Result<CVector> {
    let m = h_bs.dim();
    if h_cascade.rows() != m {
        return Err(Error::dims("composite_vector", m, h_cascade.rows()));
    }
    let mut out = Vec::with_capacity(m * (h_cascade.cols() + 1));
    out.extend_from_slice(h_bs.as_slice());
    for n in 0..h_cascade.cols() {
        out.extend((0..m).map(|r| h_cascade[(r, n)]));
    }
    Ok(CVector::from(out))
}

pub fn prior_covariance(losses: &PathLosses, h_bs_irs: &CMatrix) -> PriorCovariance {
    PriorCovariance {
        antennas: h_bs_irs.rows(),
        beta_bs: losses.beta_bs,
        beta_irs: losses.beta_irs,
        rank_one_blocks: (0..h_bs_irs.cols()).map(|n| h_bs_irs.column(n)).collect(),
    }
}
