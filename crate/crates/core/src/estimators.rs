//! Composite-channel estimators and their closed-form NMSE.
//!
//! The observation is `ỹ = (Ṽ ⊗ I_M) h + z̃`, stored slot-major: entries
//! `[t*M, (t+1)*M)` hold the despread snapshot of pilot slot t. The composite
//! channel `h` is stored block-major the same way: block 0 is the direct
//! channel and block n (1..=N) is cascade column n. Every Kronecker-structured
//! operator is applied block by block.

use std::fmt;
use std::str::FromStr;

use crate::channel::PriorCovariance;
use crate::error::{Error, Result};
use crate::linalg::{CVector, C64, ZERO};
use crate::patterns::{ActivationPattern, PatternKind};

/// Which estimator produced (or should produce) an estimate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EstimatorKind {
    MvuOnOff,
    MvuDft,
    Mmse,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::MvuOnOff, EstimatorKind::MvuDft, EstimatorKind::Mmse];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::MvuOnOff => "mvu-onoff",
            EstimatorKind::MvuDft => "mvu-dft",
            EstimatorKind::Mmse => "mmse",
        }
    }

    /// Activation pattern the estimator's observations are taken under.
    /// MMSE post-processes the DFT-pattern LS output.
    pub fn pattern(self) -> PatternKind {
        match self {
            EstimatorKind::MvuOnOff => PatternKind::OnOff,
            EstimatorKind::MvuDft | EstimatorKind::Mmse => PatternKind::Dft,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "mvu-onoff" => Ok(EstimatorKind::MvuOnOff),
            "mvu-dft" => Ok(EstimatorKind::MvuDft),
            "mmse" => Ok(EstimatorKind::Mmse),
            other => Err(Error::param(
                "estimator",
                format!("unknown estimator `{other}` (expected mvu-onoff | mvu-dft | mmse)"),
            )),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ChannelGroup {
    Direct,
    Cascade,
}

impl FromStr for ChannelGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "direct" => Ok(ChannelGroup::Direct),
            "cascade" | "cascade_avg" => Ok(ChannelGroup::Cascade),
            other => Err(Error::param("group", format!("unknown channel group `{other}`"))),
        }
    }
}

/// Receiver noise: `N0` per complex sample, `tau_p` pilot slots.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    pub n0: f64,
    pub tau_p: usize,
}

impl NoiseModel {
    pub fn new(n0: f64, tau_p: usize) -> Result<Self> {
        if !(n0 >= 0.0 && n0.is_finite()) {
            return Err(Error::param("n0", format!("must be finite and >= 0, got {n0}")));
        }
        if tau_p == 0 {
            return Err(Error::param("tau_p", "must be positive"));
        }
        Ok(Self { n0, tau_p })
    }

    /// Per-entry variance of the DFT-pattern LS residual, `N0 / tau_p`.
    pub fn effective_variance(&self) -> f64 {
        self.n0 / self.tau_p as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub antennas: usize,
    pub h_hat: CVector,
    pub per_block_sq_error: Option<Vec<f64>>,
}

impl Estimate {
    fn new(antennas: usize, h_hat: CVector) -> Self {
        Self {
            antennas,
            h_hat,
            per_block_sq_error: None,
        }
    }

    pub fn blocks(&self) -> usize {
        self.h_hat.dim() / self.antennas
    }

    pub fn block(&self, idx: usize) -> &[C64] {
        &self.h_hat.as_slice()[idx * self.antennas..(idx + 1) * self.antennas]
    }

    /// `||ĥ_b - h_b||^2` for every block b.
    pub fn block_sq_errors(&self, truth: &CVector) -> Result<Vec<f64>> {
        if truth.dim() != self.h_hat.dim() {
            return Err(Error::dims("Estimate::block_sq_errors", self.h_hat.dim(), truth.dim()));
        }
        let m = self.antennas;
        Ok(self
            .h_hat
            .as_slice()
            .chunks_exact(m)
            .zip(truth.as_slice().chunks_exact(m))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum())
            .collect())
    }

    pub fn with_errors(mut self, truth: &CVector) -> Result<Self> {
        self.per_block_sq_error = Some(self.block_sq_errors(truth)?);
        Ok(self)
    }
}

fn antennas_for(y_tilde: &CVector, pattern: &ActivationPattern) -> Result<usize> {
    let tau_p = pattern.tau_p();
    if y_tilde.dim() == 0 || !y_tilde.dim().is_multiple_of(tau_p) {
        return Err(Error::dims(
            "estimator input",
            format!("a positive multiple of tau_p = {tau_p}"),
            y_tilde.dim(),
        ));
    }
    Ok(y_tilde.dim() / tau_p)
}

/// `(Ṽ_onoff^-1 ⊗ I_M) ỹ`: block 0 is the all-off snapshot and block n is
/// snapshot n minus snapshot 0.
pub fn mvu_onoff(y_tilde: &CVector, pattern: &ActivationPattern) -> Result<Estimate> {
    if pattern.kind() != PatternKind::OnOff {
        return Err(Error::Pattern(format!(
            "mvu-onoff needs an on-off pattern, got {}",
            pattern.kind()
        )));
    }
    let m = antennas_for(y_tilde, pattern)?;
    let y = y_tilde.as_slice();
    let head = &y[..m];
    let mut out = Vec::with_capacity(y.len());
    out.extend_from_slice(head);
    for snapshot in y[m..].chunks_exact(m) {
        out.extend(snapshot.iter().zip(head).map(|(a, b)| a - b));
    }
    Ok(Estimate::new(m, CVector::from(out)))
}

/// `(1/tau_p) (Fᴴ ⊗ I_M) ỹ`. Block n is `(1/tau_p) sum_t conj(F[t,n]) ỹ_t`.
pub fn mvu_dft(y_tilde: &CVector, pattern: &ActivationPattern) -> Result<Estimate> {
    if pattern.kind() != PatternKind::Dft {
        return Err(Error::Pattern(format!(
            "mvu-dft needs a DFT pattern, got {}",
            pattern.kind()
        )));
    }
    let m = antennas_for(y_tilde, pattern)?;
    let f = pattern.matrix();
    let (tau_p, cols) = f.shape();
    let y = y_tilde.as_slice();
    let mut out = vec![ZERO; m * cols];
    for (t, snapshot) in y.chunks_exact(m).enumerate() {
        for (n, block) in out.chunks_exact_mut(m).enumerate() {
            let w = f[(t, n)].conj();
            for (acc, v) in block.iter_mut().zip(snapshot) {
                *acc += w * v;
            }
        }
    }
    let inv = 1.0 / tau_p as f64;
    out.iter_mut().for_each(|z| *z *= inv);
    Ok(Estimate::new(m, CVector::from(out)))
}

/// Scalar Wiener gain `beta_bs / (beta_bs + N0/tau_p)` on the direct block.
pub fn mmse_direct(r_head: &CVector, beta_bs: f64, noise: &NoiseModel) -> CVector {
    let denom = beta_bs + noise.effective_variance();
    let gain = if denom > 0.0 { beta_bs / denom } else { 0.0 };
    r_head.iter().map(|z| z * gain).collect()
}

/// `C_H [C_H + (N0/tau_p) I]^-1 r` evaluated per block. The direct block
/// gets the scalar gain of [`mmse_direct`]; cascade block n with prior
/// `beta_irs b bᴴ` maps `r_n` to `beta_irs b (bᴴ r_n) / (N0/tau_p + beta_irs ||b||^2)`,
/// the rank-one resolvent from Sherman–Morrison. With `N0 = 0` the cascade
/// map reduces to the orthogonal projection onto `span(b)`.
pub fn mmse(r: &CVector, prior: &PriorCovariance, noise: &NoiseModel) -> Result<Estimate> {
    let m = prior.antennas;
    let expected = m * (prior.elements() + 1);
    if r.dim() != expected {
        return Err(Error::dims("mmse", expected, r.dim()));
    }
    let c = noise.effective_variance();
    let mut out = mmse_direct(&r.segment(0, m), prior.beta_bs, noise).into_vec();
    out.reserve(expected - m);
    for (n, b) in prior.rank_one_blocks.iter().enumerate() {
        let r_n = &r.as_slice()[(n + 1) * m..(n + 2) * m];
        let power = prior.beta_irs * b.norm_sqr();
        let denom = c + power;
        if denom > 0.0 {
            let proj: C64 = b.iter().zip(r_n).map(|(bi, ri)| bi.conj() * ri).sum();
            let coef = proj * (prior.beta_irs / denom);
            out.extend(b.iter().map(|bi| bi * coef));
        } else {
            out.extend(std::iter::repeat_n(ZERO, m));
        }
    }
    Ok(Estimate::new(m, CVector::from(out)))
}

/// Error-covariance traces of [`mmse`]: `(tr C_e,direct, [tr C_e,n])`.
///
/// For a rank-one block `C = s b bᴴ`, `C - C (C + cI)^-1 C` has the single
/// non-zero eigenvalue `s||b||^2 c / (s||b||^2 + c)`.
pub fn mmse_error_traces(prior: &PriorCovariance, noise: &NoiseModel) -> (f64, Vec<f64>) {
    let c = noise.effective_variance();
    let shrink = |p: f64| if p + c > 0.0 { p * c / (p + c) } else { 0.0 };
    let direct = prior.antennas as f64 * shrink(prior.beta_bs);
    let cascade = prior
        .rank_one_blocks
        .iter()
        .map(|b| shrink(prior.beta_irs * b.norm_sqr()))
        .collect();
    (direct, cascade)
}

/// Inputs for the closed-form NMSE expressions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmseParams {
    pub n0: f64,
    pub tau_p: usize,
    pub antennas: usize,
    pub beta_bs: f64,
    pub beta_irs: f64,
    pub beta_bs_irs: f64,
}

/// Closed-form NMSE of `estimator` on `group`.
///
/// DFT-pattern LS: `N0/(tau_p beta_bs)` and `N0/(tau_p beta_irs beta_bs_irs)`.
/// MMSE: `N0/(tau_p beta_bs + N0)` and `N0/(tau_p M beta_irs beta_bs_irs + N0)`.
/// On-off LS has error covariance `N0 (Ṽ^-1 Ṽ^-ᴴ) ⊗ I_M` whose diagonal is
/// `N0 (1, 2, ..., 2)`, giving `N0/beta_bs` and `2 N0/(beta_irs beta_bs_irs)`.
pub fn predict_nmse(estimator: EstimatorKind, group: ChannelGroup, p: &NmseParams) -> f64 {
    if p.n0 == 0.0 {
        return 0.0;
    }
    let tau = p.tau_p as f64;
    let cascade = p.beta_irs * p.beta_bs_irs;
    match (estimator, group) {
        (EstimatorKind::MvuDft, ChannelGroup::Direct) => p.n0 / (tau * p.beta_bs),
        (EstimatorKind::MvuDft, ChannelGroup::Cascade) => p.n0 / (tau * cascade),
        (EstimatorKind::Mmse, ChannelGroup::Direct) => p.n0 / (tau * p.beta_bs + p.n0),
        (EstimatorKind::Mmse, ChannelGroup::Cascade) => p.n0 / (tau * p.antennas as f64 * cascade + p.n0),
        (EstimatorKind::MvuOnOff, ChannelGroup::Direct) => p.n0 / p.beta_bs,
        (EstimatorKind::MvuOnOff, ChannelGroup::Cascade) => 2.0 * p.n0 / cascade,
    }
}

/// Convenience wrapper that parses estimator and group names.
pub fn predict_nmse_by_name(estimator: &str, group: &str, p: &NmseParams) -> Result<f64> {
    Ok(predict_nmse(estimator.parse()?, group.parse()?, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_los_matrix, prior_covariance, sample_angles, Geometry, PathLosses};
    use crate::linalg::{sample_cgaussian, CMatrix, RngStream};
    use crate::patterns::{dft_pattern, onoff_pattern};
    use proptest::prelude::*;

    /// `(Ṽ ⊗ I_M) h` through the dense Kronecker product.
    fn forward_dense(pattern: &ActivationPattern, h: &CVector, m: usize) -> CVector {
        pattern.matrix().kron(&CMatrix::identity(m)).matvec(h).unwrap()
    }

    fn paper_params(n0: f64) -> NmseParams {
        NmseParams {
            n0,
            tau_p: 51,
            antennas: 10,
            beta_bs: 0.5,
            beta_irs: 0.01,
            beta_bs_irs: 1.0,
        }
    }

    #[test]
    fn onoff_hand_example() {
        let p = onoff_pattern(1).unwrap();
        let y = CVector::from_real(&[3.0, 5.0]);
        let est = mvu_onoff(&y, &p).unwrap();
        assert_eq!(est.h_hat, CVector::from_real(&[3.0, 2.0]));
    }

    #[test]
    fn onoff_noise_free_recovery() {
        let (m, n) = (4, 6);
        let p = onoff_pattern(n).unwrap();
        let h = sample_cgaussian(m * (n + 1), 1.0, &mut RngStream::new(1, 1).rng()).unwrap();
        let est = mvu_onoff(&forward_dense(&p, &h, m), &p).unwrap();
        assert!(est.h_hat.sub(&h).norm_sqr().sqrt() <= 1e-10 * h.norm_sqr().sqrt());
    }

    #[test]
    fn dft_trivial_and_recovery() {
        let p = dft_pattern(1, 0).unwrap();
        let y = CVector::from(vec![C64::new(0.3, -1.2)]);
        assert_eq!(mvu_dft(&y, &p).unwrap().h_hat, y);

        let (m, n, tau_p) = (3, 5, 9);
        let p = dft_pattern(tau_p, n).unwrap();
        let h = sample_cgaussian(m * (n + 1), 1.0, &mut RngStream::new(1, 2).rng()).unwrap();
        let est = mvu_dft(&forward_dense(&p, &h, m), &p).unwrap();
        assert!(est.h_hat.sub(&h).norm_sqr().sqrt() <= 1e-9 * h.norm_sqr().sqrt());
    }

    #[test]
    fn wrong_pattern_kind_rejected() {
        let y = CVector::zeros(4);
        assert!(mvu_onoff(&y, &dft_pattern(2, 1).unwrap()).is_err());
        assert!(mvu_dft(&y, &onoff_pattern(1).unwrap()).is_err());
        assert!(mvu_dft(&CVector::zeros(3), &dft_pattern(2, 1).unwrap()).is_err());
    }

    fn small_prior(m: usize, n: usize, seed: u64, beta_bs: f64) -> PriorCovariance {
        let angles = sample_angles(m, n, &mut RngStream::new(seed, 0).rng());
        let g = Geometry::new(0.5, 0.5, angles).unwrap();
        let losses = PathLosses::normalized(n, beta_bs, 1.0).unwrap();
        prior_covariance(&losses, &build_los_matrix(&g, 1.0))
    }

    #[test]
    fn mmse_zero_prior() {
        let mut prior = small_prior(2, 3, 1, 0.5);
        prior.beta_bs = 0.0;
        prior.beta_irs = 0.0;
        let r = sample_cgaussian(8, 1.0, &mut RngStream::new(2, 2).rng()).unwrap();
        let noise = NoiseModel::new(1.0, 4).unwrap();
        assert_eq!(mmse(&r, &prior, &noise).unwrap().h_hat, CVector::zeros(8));
        // degenerate 0/0 at N0 = 0 also collapses to zero
        let noiseless = NoiseModel::new(0.0, 4).unwrap();
        assert_eq!(mmse(&r, &prior, &noiseless).unwrap().h_hat, CVector::zeros(8));
    }

    #[test]
    fn mmse_noiseless_limit_returns_truth() {
        let (m, n) = (3, 4);
        let prior = small_prior(m, n, 4, 0.5);
        let mut rng = RngStream::new(4, 1).rng();
        let h_bs = sample_cgaussian(m, prior.beta_bs, &mut rng).unwrap();
        let h_irs = sample_cgaussian(n, prior.beta_irs, &mut rng).unwrap();
        let los = CMatrix::from_columns(m, &prior.rank_one_blocks).unwrap();
        let h = crate::channel::ChannelRealization::new(h_bs, h_irs, los)
            .unwrap()
            .h_composite;
        let est = mmse(&h, &prior, &NoiseModel::new(0.0, 5).unwrap()).unwrap();
        assert!(est.h_hat.max_abs_diff(&h) <= 1e-9 * h.norm_sqr().sqrt());
    }

    #[test]
    fn mmse_direct_matches_block_zero_bitwise() {
        let prior = small_prior(3, 4, 7, 0.3);
        let r = sample_cgaussian(15, 1.0, &mut RngStream::new(7, 7).rng()).unwrap();
        let noise = NoiseModel::new(0.7, 6).unwrap();
        let full = mmse(&r, &prior, &noise).unwrap();
        let head = mmse_direct(&r.segment(0, 3), prior.beta_bs, &noise);
        assert_eq!(full.block(0), head.as_slice());
    }

    #[test]
    fn mmse_direct_gain() {
        let r = CVector::from_real(&[1.0, -2.0]);
        assert_eq!(mmse_direct(&r, 0.5, &NoiseModel::new(0.0, 51).unwrap()), r);
        assert_eq!(
            mmse_direct(&r, 0.0, &NoiseModel::new(1.0, 51).unwrap()),
            CVector::zeros(2)
        );
        let out = mmse_direct(&CVector::from_real(&[1.0]), 0.5, &NoiseModel::new(1.0, 51).unwrap());
        // 0.5 / (0.5 + 1/51) = 25.5 / 26.5
        assert!((out[0].re - 0.962_264_150_943_396_2).abs() < 1e-15);
    }

    #[test]
    fn closed_form_values() {
        let p = paper_params(1.0);
        let dft_direct = predict_nmse(EstimatorKind::MvuDft, ChannelGroup::Direct, &p);
        assert!((dft_direct - 0.039_215_686).abs() < 1e-8);
        let mmse_cas = predict_nmse(EstimatorKind::Mmse, ChannelGroup::Cascade, &p);
        assert!((mmse_cas - 1.0 / 6.1).abs() < 1e-12);
        assert!((mmse_cas - 0.163_934).abs() < 1e-6);

        let onoff_direct = predict_nmse(EstimatorKind::MvuOnOff, ChannelGroup::Direct, &p);
        let onoff_cas = predict_nmse(EstimatorKind::MvuOnOff, ChannelGroup::Cascade, &p);
        let dft_cas = predict_nmse(EstimatorKind::MvuDft, ChannelGroup::Cascade, &p);
        assert!((onoff_direct / dft_direct - 51.0).abs() < 1e-9);
        assert!((onoff_cas / dft_cas - 102.0).abs() < 1e-9);

        let zero = paper_params(0.0);
        for est in EstimatorKind::ALL {
            for g in [ChannelGroup::Direct, ChannelGroup::Cascade] {
                assert_eq!(predict_nmse(est, g, &zero), 0.0);
            }
        }
        assert!(predict_nmse_by_name("mmse", "direct", &p).is_ok());
        assert!(predict_nmse_by_name("zf", "direct", &p).is_err());
        assert!(predict_nmse_by_name("mmse", "both", &p).is_err());
    }

    #[test]
    fn onoff_covariance_diagonal_from_inverse() {
        // diag(Ṽ^-1 Ṽ^-ᴴ) = (1, 2, ..., 2), computed densely
        let n = 5;
        let inv = CMatrix::from_fn(n + 1, n + 1, |r, c| match (r, c) {
            (r, c) if r == c => C64::new(1.0, 0.0),
            (_, 0) => C64::new(-1.0, 0.0),
            _ => ZERO,
        });
        assert!(
            onoff_pattern(n)
                .unwrap()
                .matrix()
                .matmul(&inv)
                .unwrap()
                .max_abs_diff(&CMatrix::identity(n + 1))
                < 1e-15
        );
        let cov = inv.matmul(&inv.hermitian()).unwrap();
        assert_eq!(cov[(0, 0)].re, 1.0);
        assert!((1..=n).all(|i| cov[(i, i)].re == 2.0));
    }

    #[test]
    fn ordering_and_limits() {
        for n0 in [1e-6, 1e-3, 0.1, 1.0, 10.0, 100.0] {
            let p = paper_params(n0);
            for g in [ChannelGroup::Direct, ChannelGroup::Cascade] {
                assert!(predict_nmse(EstimatorKind::Mmse, g, &p) < predict_nmse(EstimatorKind::MvuDft, g, &p));
            }
        }
        let p = paper_params(1e-9);
        let ratio = |g| predict_nmse(EstimatorKind::Mmse, g, &p) / predict_nmse(EstimatorKind::MvuDft, g, &p);
        assert!((ratio(ChannelGroup::Direct) - 1.0).abs() < 1e-6);
        assert!((ratio(ChannelGroup::Cascade) - 0.1).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn error_traces_reproduce_closed_form(
            m in 1usize..6,
            n in 1usize..6,
            tau_extra in 0usize..5,
            beta_bs in 0.05f64..0.95,
            n0 in 1e-3f64..100.0,
            seed in any::<u64>(),
        ) {
            let tau_p = n + 1 + tau_extra;
            let prior = small_prior(m, n, seed, beta_bs);
            let noise = NoiseModel::new(n0, tau_p).unwrap();
            let (direct, cascade) = mmse_error_traces(&prior, &noise);
            let p = NmseParams { n0, tau_p, antennas: m, beta_bs, beta_irs: prior.beta_irs, beta_bs_irs: 1.0 };
            let want_d = predict_nmse(EstimatorKind::Mmse, ChannelGroup::Direct, &p);
            prop_assert!((direct / prior.direct_trace() - want_d).abs() <= 1e-12 * want_d.max(1.0));
            let want_c = predict_nmse(EstimatorKind::Mmse, ChannelGroup::Cascade, &p);
            for (i, t) in cascade.iter().enumerate() {
                prop_assert!((t / prior.block_trace(i) - want_c).abs() <= 1e-12 * want_c.max(1.0));
            }
        }
    }
}
