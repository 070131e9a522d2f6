//! Statistical properties of the estimators under the simulated uplink.

use ris_chest::channel::PathLosses;
use ris_chest::estimators::{mvu_dft, ChannelGroup, EstimatorKind};
use ris_chest::linalg::{CMatrix, ONE, ZERO};
use ris_chest::patterns::dft_pattern;
use ris_chest::sim::{is_nonincreasing, synthesize_pilots, Execution};
use ris_chest::{RngStream, Simulation, SystemConfig, C64};

fn config(m: usize, n: usize, tau_p: usize, trials: u64) -> SystemConfig {
    let estimators = if tau_p == n + 1 {
        EstimatorKind::ALL.to_vec()
    } else {
        vec![EstimatorKind::MvuDft, EstimatorKind::Mmse]
    };
    SystemConfig {
        antennas: m,
        elements: n,
        tau_p,
        losses: PathLosses::normalized(n, 0.5, 1.0).unwrap(),
        trials,
        estimators,
        pilots: vec![ONE; tau_p],
        ..SystemConfig::default()
    }
}

/// Error vectors `ĥ_dft - h` for `trials` draws at noise level `n0`.
fn dft_errors(sim: &Simulation, n0: f64, trials: u64) -> Vec<Vec<C64>> {
    let cfg = sim.config();
    let p = dft_pattern(cfg.tau_p, cfg.elements).unwrap();
    (0..trials)
        .map(|k| {
            let ch = sim.realization(k).unwrap();
            let y = synthesize_pilots(&ch, &p, &cfg.pilots, n0, &mut RngStream::new(1234, k).rng()).unwrap();
            let est = mvu_dft(&y, &p).unwrap();
            est.h_hat.sub(&ch.h_composite).into_vec()
        })
        .collect()
}

#[test]
fn mvu_dft_is_unbiased() {
    let trials = 10_000u64;
    let sim = Simulation::new(config(10, 50, 51, trials)).unwrap();
    let n0 = 1.0;
    let errs = dft_errors(&sim, n0, trials);
    let dim = errs[0].len();
    let mut mean = vec![ZERO; dim];
    for e in &errs {
        for (a, b) in mean.iter_mut().zip(e) {
            *a += b;
        }
    }
    let norm = mean.iter().map(|z| (z / trials as f64).norm_sqr()).sum::<f64>().sqrt();
    let bound = 4.0 * (n0 * dim as f64 / (51.0 * trials as f64)).sqrt();
    assert!(norm <= bound, "mean error norm {norm} exceeds {bound}");
}

#[test]
fn mvu_dft_error_covariance_is_scaled_identity() {
    let (m, n, tau_p) = (4, 7, 8);
    let trials = 10_000u64;
    let sim = Simulation::new(config(m, n, tau_p, trials)).unwrap();
    let n0 = 0.5;
    let errs = dft_errors(&sim, n0, trials);
    let dim = m * (n + 1);
    let mut cov = CMatrix::zeros(dim, dim);
    for e in &errs {
        for r in 0..dim {
            for c in 0..dim {
                cov[(r, c)] += e[r] * e[c].conj();
            }
        }
    }
    let target = n0 / tau_p as f64;
    for r in 0..dim {
        for c in 0..dim {
            let v = cov[(r, c)] / trials as f64;
            if r == c {
                assert!((v.re / target - 1.0).abs() < 0.10, "diag {r}: {}", v.re);
            } else {
                assert!(v.norm() < 0.10 * target, "off-diag ({r},{c}): {}", v.norm());
            }
        }
    }
}

#[test]
fn empirical_nmse_matches_closed_form_within_three_sigma() {
    let mut cfg = config(4, 8, 12, 10_000);
    cfg.snr_grid_db = vec![-10.0, 0.0, 10.0];
    let curves = Simulation::new(cfg).unwrap().sweep(Execution::Auto).unwrap();
    for c in &curves {
        for e in &c.entries {
            for g in [ChannelGroup::Direct, ChannelGroup::Cascade] {
                let v = e.group(g);
                let (emp, se) = (v.empirical.unwrap(), v.stderr.unwrap());
                assert!(
                    (emp - v.closed_form).abs() <= 3.0 * se,
                    "{} {:?} at {} dB: emp {emp} cf {} se {se}",
                    e.estimator,
                    g,
                    c.snr_db,
                    v.closed_form
                );
            }
        }
    }
}

#[test]
fn nmse_is_monotone_in_snr() {
    let mut cfg = config(4, 6, 7, 2_000);
    cfg.snr_grid_db = (-4..=4).map(|k| 5.0 * k as f64).collect();
    let curves = Simulation::new(cfg).unwrap().sweep(Execution::Auto).unwrap();
    for kind in EstimatorKind::ALL {
        assert!(is_nonincreasing(&curves, kind, ChannelGroup::Direct), "{kind} direct");
        assert!(is_nonincreasing(&curves, kind, ChannelGroup::Cascade), "{kind} cascade");
    }
}

#[test]
fn onoff_to_dft_gap_is_tau_p() {
    let (m, n) = (6, 15);
    let mut cfg = config(m, n, n + 1, 5_000);
    cfg.snr_grid_db = vec![3.0];
    let curves = Simulation::new(cfg).unwrap().sweep(Execution::Auto).unwrap();
    let c = &curves[0];
    let get = |k, g| c.get(k).unwrap().group(g).empirical.unwrap();
    let direct = get(EstimatorKind::MvuOnOff, ChannelGroup::Direct) / get(EstimatorKind::MvuDft, ChannelGroup::Direct);
    let cascade =
        get(EstimatorKind::MvuOnOff, ChannelGroup::Cascade) / get(EstimatorKind::MvuDft, ChannelGroup::Cascade);
    let tau = (n + 1) as f64;
    assert!((direct / tau - 1.0).abs() < 0.05, "direct ratio {direct}");
    assert!((cascade / (2.0 * tau) - 1.0).abs() < 0.05, "cascade ratio {cascade}");
}

#[test]
fn arbitrary_unit_pilots_give_the_same_statistics() {
    let mut cfg = config(3, 4, 5, 3_000);
    cfg.snr_grid_db = vec![0.0];
    let base = Simulation::new(cfg.clone()).unwrap().sweep(Execution::Auto).unwrap();
    cfg.pilots = (0..5).map(|t| C64::from_polar(1.0, 0.9 * t as f64 + 0.1)).collect();
    let phased = Simulation::new(cfg).unwrap().sweep(Execution::Auto).unwrap();
    // despreading rotates each noise sample by conj(x_t): same law, new draws
    for (a, b) in base[0].entries.iter().zip(&phased[0].entries) {
        for g in [ChannelGroup::Direct, ChannelGroup::Cascade] {
            for v in [a.group(g), b.group(g)] {
                let (emp, se) = (v.empirical.unwrap(), v.stderr.unwrap());
                assert!(
                    (emp - v.closed_form).abs() <= 4.0 * se,
                    "{} {g:?}: {emp} vs {}",
                    a.estimator,
                    v.closed_form
                );
            }
        }
    }
}
