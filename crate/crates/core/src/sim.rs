//! Pilot synthesis and the seeded Monte Carlo NMSE sweep.
//!
//! Every trial opens its own random sub-streams keyed by `(master_seed,
//! trial_id)`, so trials can run in any order on any number of threads.
//! Per-trial errors land in a vector indexed by trial and are reduced with
//! [`fixed_order_sum`]; the sweep output is therefore bit-identical for every
//! thread count.

use crate::channel::{
    build_los_matrix, prior_covariance, sample_angles, sample_direct_channel, sample_irs_channel, ChannelRealization,
    Geometry, PathLosses, PriorCovariance,
};
use crate::error::{Error, Result};
use crate::estimators::{mmse, mvu_dft, mvu_onoff, predict_nmse, ChannelGroup, EstimatorKind, NmseParams, NoiseModel};
use crate::linalg::{fixed_order_sum, sample_cgaussian, CMatrix, CVector, RngStream, C64, ONE, ZERO};
use crate::patterns::{dft_pattern, onoff_pattern, ActivationPattern, PatternKind};

/// Stream reserved for the experiment-wide LoS angles.
const ANGLE_STREAM: u64 = u64::MAX;

/// Per-trial lanes. Fading and noise never share a lane, so adding an
/// estimator (and hence another pilot synthesis) does not shift channel draws.
const LANE_FADING: u64 = 0;
const LANE_NOISE: u64 = 1;
const LANE_ANGLES: u64 = 2;
const LANES: u64 = 4;

fn trial_stream(seed: u64, trial_id: u64, lane: u64) -> RngStream {
    RngStream::new(seed, trial_id * LANES + lane)
}

pub fn snr_db_to_n0(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemConfig {
    pub antennas: usize,
    pub elements: usize,
    pub tau_p: usize,
    pub losses: PathLosses,
    pub snr_grid_db: Vec<f64>,
    pub trials: u64,
    pub master_seed: u64,
    pub pattern: PatternKind,
    pub estimators: Vec<EstimatorKind>,
    /// Pilot symbols `x_1..x_tau_p`, all of unit modulus.
    pub pilots: Vec<C64>,
    pub d_bs_over_lambda: f64,
    pub d_irs_over_lambda: f64,
    /// Redraw LoS angles every trial instead of once per experiment.
    pub resample_angles: bool,
}

pub const DEFAULT_TRIALS: u64 = 10_000;

/// `-20:5:20` dB.
pub fn default_snr_grid() -> Vec<f64> {
    (0..9).map(|k| -20.0 + 5.0 * k as f64).collect()
}

impl Default for SystemConfig {
    fn default() -> Self {
        let elements = 50;
        let tau_p = elements + 1;
        Self {
            antennas: 10,
            elements,
            tau_p,
            losses: PathLosses::normalized(elements, 0.5, 1.0).expect("default split is valid"),
            snr_grid_db: default_snr_grid(),
            trials: DEFAULT_TRIALS,
            master_seed: 0,
            pattern: PatternKind::Dft,
            estimators: EstimatorKind::ALL.to_vec(),
            pilots: vec![ONE; tau_p],
            d_bs_over_lambda: 0.5,
            d_irs_over_lambda: 0.5,
            resample_angles: false,
        }
    }
}

/// Pilot amplitudes may deviate from 1 by at most this much.
pub const PILOT_MODULUS_TOL: f64 = 1e-9;

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 {
            return Err(Error::config("m", "must be >= 1"));
        }
        if self.elements == 0 {
            return Err(Error::config("n", "must be >= 1"));
        }
        if self.tau_p < self.elements + 1 {
            return Err(Error::config(
                "tau_p",
                format!("tau_p = {} must be >= N + 1 = {}", self.tau_p, self.elements + 1),
            ));
        }
        if self.trials == 0 {
            return Err(Error::config("trials", "must be >= 1"));
        }
        if self.trials >= 1 << 60 {
            return Err(Error::config("trials", "too many trials for the stream layout"));
        }
        if self.snr_grid_db.is_empty() || self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("snr", "grid must be non-empty and finite"));
        }
        if self.estimators.is_empty() {
            return Err(Error::config("estimators", "at least one estimator is required"));
        }
        if self.pattern == PatternKind::Custom {
            return Err(Error::config("pattern", "expected dft | onoff"));
        }
        let needs_onoff = self.pattern == PatternKind::OnOff || self.estimators.contains(&EstimatorKind::MvuOnOff);
        if needs_onoff && self.tau_p != self.elements + 1 {
            return Err(Error::config(
                "tau_p",
                format!(
                    "the on-off pattern is square; tau_p must equal N + 1 = {}",
                    self.elements + 1
                ),
            ));
        }
        if self.pilots.len() != self.tau_p {
            return Err(Error::config(
                "pilots",
                format!("expected {} pilot symbols, got {}", self.tau_p, self.pilots.len()),
            ));
        }
        if let Some((t, x)) = self
            .pilots
            .iter()
            .enumerate()
            .find(|(_, x)| !x.is_finite() || (x.norm() - 1.0).abs() > PILOT_MODULUS_TOL)
        {
            return Err(Error::config(
                "pilots",
                format!("pilot {t} has modulus {} (must be 1)", x.norm()),
            ));
        }
        let l = &self.losses;
        if !(l.beta_bs > 0.0 && l.beta_irs > 0.0 && l.beta_bs_irs > 0.0) {
            return Err(Error::config(
                "beta_bs",
                "all path losses must be > 0 for NMSE normalization",
            ));
        }
        if !(self.d_bs_over_lambda > 0.0 && self.d_bs_over_lambda.is_finite()) {
            return Err(Error::config("d_bs", "must be > 0"));
        }
        if !(self.d_irs_over_lambda > 0.0 && self.d_irs_over_lambda.is_finite()) {
            return Err(Error::config("d_irs", "must be > 0"));
        }
        Ok(())
    }

    pub fn nmse_params(&self, n0: f64) -> NmseParams {
        NmseParams {
            n0,
            tau_p: self.tau_p,
            antennas: self.antennas,
            beta_bs: self.losses.beta_bs,
            beta_irs: self.losses.beta_irs,
            beta_bs_irs: self.losses.beta_bs_irs,
        }
    }
}

/// Squared error of every block for each configured estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub trial_id: u64,
    pub errors: Vec<(EstimatorKind, Vec<f64>)>,
}

impl TrialResult {
    pub fn for_estimator(&self, kind: EstimatorKind) -> Option<&[f64]> {
        self.errors.iter().find(|(k, _)| *k == kind).map(|(_, e)| e.as_slice())
    }
}

/// Closed-form and (optionally) Monte Carlo NMSE for one channel group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NmseValue {
    pub closed_form: f64,
    pub empirical: Option<f64>,
    /// Standard error of `empirical`, from the per-trial spread.
    pub stderr: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorNmse {
    pub estimator: EstimatorKind,
    pub direct: NmseValue,
    /// `(1/N) sum_n NMSE_n`.
    pub cascade: NmseValue,
}

impl EstimatorNmse {
    pub fn group(&self, g: ChannelGroup) -> &NmseValue {
        match g {
            ChannelGroup::Direct => &self.direct,
            ChannelGroup::Cascade => &self.cascade,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmseCurve {
    pub snr_db: f64,
    pub n0: f64,
    pub entries: Vec<EstimatorNmse>,
}

impl NmseCurve {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorNmse> {
        self.entries.iter().find(|e| e.estimator == kind)
    }
}

/// How trials are scheduled. `Parallel` needs the `parallel` feature and
/// degrades to `Sequential` without it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// `threads = None` uses the global rayon pool.
    Parallel {
        threads: Option<usize>,
    },
    #[default]
    Auto,
}

impl Execution {
    pub fn with_threads(threads: Option<usize>) -> Self {
        match threads {
            Some(1) => Execution::Sequential,
            t => Execution::Parallel { threads: t },
        }
    }
}

/// `y_t = (h_bs + H_cascade phi_t) x_t + z_t`, despread by `conj(x_t)` and
/// stacked slot by slot, i.e. `(Ṽ ⊗ I_M) h + z̃`.
pub fn synthesize_pilots<R: rand::Rng + ?Sized>(
    ch: &ChannelRealization,
    pattern: &ActivationPattern,
    pilots: &[C64],
    n0: f64,
    rng: &mut R,
) -> Result<CVector> {
    let m = ch.antennas();
    let tau_p = pattern.tau_p();
    if pattern.elements() != ch.elements() {
        return Err(Error::dims(
            "synthesize_pilots",
            ch.elements() + 1,
            pattern.elements() + 1,
        ));
    }
    if pilots.len() != tau_p {
        return Err(Error::dims("synthesize_pilots", tau_p, pilots.len()));
    }
    let noise = sample_cgaussian(m * tau_p, n0, rng)?;
    let h = ch.h_composite.as_slice();
    let v = pattern.matrix();
    let mut out = Vec::with_capacity(m * tau_p);
    let mut rx = vec![ZERO; m];
    for (t, (x, z)) in pilots.iter().zip(noise.as_slice().chunks_exact(m)).enumerate() {
        rx.fill(ZERO);
        for (n, block) in h.chunks_exact(m).enumerate() {
            let coef = v[(t, n)];
            if coef == ZERO {
                continue;
            }
            for (acc, hv) in rx.iter_mut().zip(block) {
                *acc += coef * hv;
            }
        }
        let xc = x.conj();
        out.extend(rx.iter().zip(z).map(|(s, zi)| xc * (s * x + zi)));
    }
    Ok(CVector::from(out))
}

/// Experiment state shared by all trials: patterns, the fixed LoS matrix and
/// the MMSE prior built from it.
#[derive(Clone, Debug)]
pub struct Simulation {
    cfg: SystemConfig,
    dft: Option<ActivationPattern>,
    onoff: Option<ActivationPattern>,
    los: CMatrix,
    prior: PriorCovariance,
}

impl Simulation {
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let needs = |p: PatternKind| cfg.estimators.iter().any(|e| e.pattern() == p);
        let dft = needs(PatternKind::Dft)
            .then(|| dft_pattern(cfg.tau_p, cfg.elements))
            .transpose()?;
        let onoff = needs(PatternKind::OnOff)
            .then(|| onoff_pattern(cfg.elements))
            .transpose()?;
        let los = los_for(&cfg, RngStream::new(cfg.master_seed, ANGLE_STREAM))?;
        let prior = prior_covariance(&cfg.losses, &los);
        Ok(Self {
            cfg,
            dft,
            onoff,
            los,
            prior,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    /// The experiment-wide LoS matrix (unused per trial when angles are resampled).
    pub fn los_matrix(&self) -> &CMatrix {
        &self.los
    }

    pub fn prior(&self) -> &PriorCovariance {
        &self.prior
    }

    /// Draws the channels of trial `trial_id`.
    pub fn realization(&self, trial_id: u64) -> Result<ChannelRealization> {
        let cfg = &self.cfg;
        let mut rng = trial_stream(cfg.master_seed, trial_id, LANE_FADING).rng();
        let h_bs = sample_direct_channel(cfg.losses.beta_bs, cfg.antennas, &mut rng)?;
        let h_irs = sample_irs_channel(cfg.losses.beta_irs, cfg.elements, &mut rng)?;
        let los = if cfg.resample_angles {
            los_for(cfg, trial_stream(cfg.master_seed, trial_id, LANE_ANGLES))?
        } else {
            self.los.clone()
        };
        ChannelRealization::new(h_bs, h_irs, los)
    }

    /// One Monte Carlo trial at noise level `n0`.
    pub fn run_trial(&self, n0: f64, trial_id: u64) -> Result<TrialResult> {
        let cfg = &self.cfg;
        let ch = self.realization(trial_id)?;
        let noise_stream = trial_stream(cfg.master_seed, trial_id, LANE_NOISE);
        let observe =
            |pattern: &ActivationPattern| synthesize_pilots(&ch, pattern, &cfg.pilots, n0, &mut noise_stream.rng());

        let dft_estimate = match &self.dft {
            Some(p) => Some(mvu_dft(&observe(p)?, p)?),
            None => None,
        };
        let noise = NoiseModel::new(n0, cfg.tau_p)?;
        let mut errors = Vec::with_capacity(cfg.estimators.len());
        for &kind in &cfg.estimators {
            let est = match kind {
                EstimatorKind::MvuOnOff => {
                    let p = self.onoff.as_ref().expect("on-off pattern built for mvu-onoff");
                    mvu_onoff(&observe(p)?, p)?
                }
                EstimatorKind::MvuDft => dft_estimate.clone().expect("DFT pattern built for mvu-dft"),
                EstimatorKind::Mmse => {
                    let r = &dft_estimate.as_ref().expect("DFT pattern built for mmse").h_hat;
                    if cfg.resample_angles {
                        mmse(r, &prior_covariance(&cfg.losses, &ch.h_bs_irs), &noise)?
                    } else {
                        mmse(r, &self.prior, &noise)?
                    }
                }
            };
            errors.push((kind, est.block_sq_errors(&ch.h_composite)?));
        }
        Ok(TrialResult { trial_id, errors })
    }

    /// Closed-form curves only, no Monte Carlo.
    pub fn closed_form(&self) -> Vec<NmseCurve> {
        closed_form_curves(&self.cfg)
    }

    pub fn sweep(&self, exec: Execution) -> Result<Vec<NmseCurve>> {
        match exec {
            Execution::Sequential => self.sweep_with(&|count, f| (0..count).map(f).collect()),
            Execution::Parallel { threads } => self.sweep_parallel(threads),
            Execution::Auto => self.sweep_parallel(None),
        }
    }

    #[cfg(feature = "parallel")]
    fn sweep_parallel(&self, threads: Option<usize>) -> Result<Vec<NmseCurve>> {
        use rayon::prelude::*;
        let run = |count: u64, f: &(dyn Fn(u64) -> Result<Summary> + Sync)| -> Result<Vec<Summary>> {
            (0..count).into_par_iter().map(f).collect()
        };
        match threads {
            None => self.sweep_with(&run),
            Some(t) => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(t)
                    .build()
                    .map_err(|e| Error::param("threads", e.to_string()))?;
                pool.install(|| self.sweep_with(&run))
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn sweep_parallel(&self, _threads: Option<usize>) -> Result<Vec<NmseCurve>> {
        self.sweep(Execution::Sequential)
    }

    fn sweep_with(&self, run: &TrialMap<'_>) -> Result<Vec<NmseCurve>> {
        let cfg = &self.cfg;
        let mut curves = closed_form_curves(cfg);
        for curve in &mut curves {
            let n0 = curve.n0;
            let summaries = run(cfg.trials, &|trial_id| {
                let result = self.run_trial(n0, trial_id)?;
                Ok(summarize(&result))
            })?;
            self.attach_empirical(curve, &summaries);
        }
        Ok(curves)
    }

    fn attach_empirical(&self, curve: &mut NmseCurve, summaries: &[Summary]) {
        let cfg = &self.cfg;
        let direct_norm = cfg.antennas as f64 * cfg.losses.beta_bs;
        let cascade_norm = (cfg.elements * cfg.antennas) as f64 * cfg.losses.cascade_gain();
        for (slot, entry) in curve.entries.iter_mut().enumerate() {
            let direct: Vec<f64> = summaries.iter().map(|s| s[slot].0 / direct_norm).collect();
            let cascade: Vec<f64> = summaries.iter().map(|s| s[slot].1 / cascade_norm).collect();
            (entry.direct.empirical, entry.direct.stderr) = mean_and_stderr(&direct);
            (entry.cascade.empirical, entry.cascade.stderr) = mean_and_stderr(&cascade);
        }
    }
}

/// Per-trial `(direct squared error, summed cascade squared error)` per
/// estimator, in configuration order.
type Summary = Vec<(f64, f64)>;
type TrialMap<'a> = dyn Fn(u64, &(dyn Fn(u64) -> Result<Summary> + Sync)) -> Result<Vec<Summary>> + 'a;

fn summarize(result: &TrialResult) -> Summary {
    result
        .errors
        .iter()
        .map(|(_, blocks)| (blocks[0], fixed_order_sum(&blocks[1..])))
        .collect()
}

fn mean_and_stderr(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let k = values.len() as f64;
    let mean = fixed_order_sum(values) / k;
    let sq: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if values.len() > 1 {
        fixed_order_sum(&sq) / (k - 1.0)
    } else {
        0.0
    };
    (Some(mean), Some((var / k).sqrt()))
}

fn los_for(cfg: &SystemConfig, stream: RngStream) -> Result<CMatrix> {
    let angles = sample_angles(cfg.antennas, cfg.elements, &mut stream.rng());
    let geom = Geometry::new(cfg.d_bs_over_lambda, cfg.d_irs_over_lambda, angles)?;
    Ok(build_los_matrix(&geom, cfg.losses.beta_bs_irs))
}

pub fn closed_form_curves(cfg: &SystemConfig) -> Vec<NmseCurve> {
    cfg.snr_grid_db
        .iter()
        .map(|&snr_db| {
            let n0 = snr_db_to_n0(snr_db);
            let p = cfg.nmse_params(n0);
            let value = |kind, g| NmseValue {
                closed_form: predict_nmse(kind, g, &p),
                empirical: None,
                stderr: None,
            };
            NmseCurve {
                snr_db,
                n0,
                entries: cfg
                    .estimators
                    .iter()
                    .map(|&kind| EstimatorNmse {
                        estimator: kind,
                        direct: value(kind, ChannelGroup::Direct),
                        cascade: value(kind, ChannelGroup::Cascade),
                    })
                    .collect(),
            }
        })
        .collect()
}

/// Runs the full sweep with the default scheduler.
pub fn monte_carlo_sweep(cfg: &SystemConfig) -> Result<Vec<NmseCurve>> {
    Simulation::new(cfg.clone())?.sweep(Execution::Auto)
}

/// True when `estimator`'s NMSE on `group` never increases along the grid
/// (grid sorted by SNR). Uses the empirical value when present.
pub fn is_nonincreasing(curves: &[NmseCurve], estimator: EstimatorKind, group: ChannelGroup) -> bool {
    let mut pts: Vec<(f64, f64)> = curves
        .iter()
        .filter_map(|c| {
            c.get(estimator).map(|e| {
                let v = e.group(group);
                (c.snr_db, v.empirical.unwrap_or(v.closed_form))
            })
        })
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2).all(|w| w[1].1 <= w[0].1)
}
