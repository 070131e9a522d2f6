//! Command-line front end: configuration parsing and result files.
//!
//! Configuration is a flat key/value file (TOML, or the JSON manifest written
//! by a previous run). Every key has a matching `--long-flag`; flags override
//! the file and defaults fill whatever is left.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::channel::PathLosses;
use crate::error::{Error, Result};
use crate::estimators::{ChannelGroup, EstimatorKind};
use crate::linalg::{C64, ONE};
use crate::patterns::PatternKind;
use crate::sim::{default_snr_grid, Execution, NmseCurve, Simulation, SystemConfig, DEFAULT_TRIALS};

pub const THREADS_ENV: &str = "RIS_CHEST_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;

pub const DIRECT_CSV: &str = "nmse_direct.csv";
pub const CASCADE_CSV: &str = "nmse_cascade.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

/// Configuration keys as they appear in files. All optional; `None` means
/// "not set at this layer".
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_p: Option<usize>,
    /// `min:step:max` in dB.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr: Option<String>,
    /// Explicit grid in dB; mutually exclusive with `snr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_bs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_bs_irs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_bs: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_irs: Option<f64>,
    /// Pilot symbols as `[re, im]` pairs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pilots: Option<Vec<[f64; 2]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_angles: Option<bool>,
}

const KNOWN_KEYS: &[&str] = &[
    "m",
    "n",
    "tau_p",
    "snr",
    "snr_db",
    "trials",
    "seed",
    "pattern",
    "estimators",
    "beta_bs",
    "beta_bs_irs",
    "d_bs",
    "d_irs",
    "pilots",
    "resample_angles",
];

impl RawConfig {
    /// Layers `over` on top of `self`.
    pub fn merged(self, over: RawConfig) -> RawConfig {
        let grid_overridden = over.snr.is_some() || over.snr_db.is_some();
        RawConfig {
            m: over.m.or(self.m),
            n: over.n.or(self.n),
            tau_p: over.tau_p.or(self.tau_p),
            snr: if grid_overridden { over.snr } else { self.snr },
            snr_db: if grid_overridden { over.snr_db } else { self.snr_db },
            trials: over.trials.or(self.trials),
            seed: over.seed.or(self.seed),
            pattern: over.pattern.or(self.pattern),
            estimators: over.estimators.or(self.estimators),
            beta_bs: over.beta_bs.or(self.beta_bs),
            beta_bs_irs: over.beta_bs_irs.or(self.beta_bs_irs),
            d_bs: over.d_bs.or(self.d_bs),
            d_irs: over.d_irs.or(self.d_irs),
            pilots: over.pilots.or(self.pilots),
            resample_angles: over.resample_angles.or(self.resample_angles),
        }
    }

    /// Fully explicit form of a resolved configuration.
    pub fn from_config(cfg: &SystemConfig) -> RawConfig {
        RawConfig {
            m: Some(cfg.antennas),
            n: Some(cfg.elements),
            tau_p: Some(cfg.tau_p),
            snr: None,
            snr_db: Some(cfg.snr_grid_db.clone()),
            trials: Some(cfg.trials as i64),
            seed: Some(cfg.master_seed),
            pattern: Some(cfg.pattern.to_string()),
            estimators: Some(cfg.estimators.iter().map(|e| e.name().to_string()).collect()),
            beta_bs: Some(cfg.losses.beta_bs),
            beta_bs_irs: Some(cfg.losses.beta_bs_irs),
            d_bs: Some(cfg.d_bs_over_lambda),
            d_irs: Some(cfg.d_irs_over_lambda),
            pilots: Some(cfg.pilots.iter().map(|x| [x.re, x.im]).collect()),
            resample_angles: Some(cfg.resample_angles),
        }
    }

    /// Applies defaults and validates.
    pub fn resolve(&self) -> Result<SystemConfig> {
        let base = SystemConfig::default();
        let antennas = self.m.unwrap_or(base.antennas);
        let elements = self.n.unwrap_or(base.elements);
        let tau_p = self.tau_p.unwrap_or(elements + 1);
        if tau_p < elements + 1 {
            return Err(Error::config(
                "tau_p",
                format!("tau_p = {tau_p} must be >= N + 1 = {}", elements + 1),
            ));
        }

        let snr_grid_db = match (&self.snr, &self.snr_db) {
            (Some(_), Some(_)) => return Err(Error::config("snr", "set either `snr` or `snr_db`, not both")),
            (Some(spec), None) => parse_snr_range(spec)?,
            (None, Some(grid)) => grid.clone(),
            (None, None) => default_snr_grid(),
        };

        let trials = match self.trials {
            Some(t) if t < 1 => return Err(Error::config("trials", format!("must be >= 1, got {t}"))),
            Some(t) => t as u64,
            None => DEFAULT_TRIALS,
        };

        let pattern = match &self.pattern {
            Some(p) => p
                .parse::<PatternKind>()
                .map_err(|e| Error::config("pattern", e.to_string()))?,
            None => PatternKind::Dft,
        };

        let estimators = match &self.estimators {
            Some(names) => {
                let mut out = Vec::with_capacity(names.len());
                for name in names {
                    let kind = name
                        .parse::<EstimatorKind>()
                        .map_err(|e| Error::config("estimators", e.to_string()))?;
                    if !out.contains(&kind) {
                        out.push(kind);
                    }
                }
                out
            }
            None => default_estimators(pattern, tau_p, elements),
        };

        let losses = PathLosses::normalized(
            elements,
            self.beta_bs.unwrap_or(base.losses.beta_bs),
            self.beta_bs_irs.unwrap_or(base.losses.beta_bs_irs),
        )
        .map_err(|e| Error::config("beta_bs", e.to_string()))?;

        let pilots = match &self.pilots {
            Some(p) => p.iter().map(|&[re, im]| C64::new(re, im)).collect(),
            None => vec![ONE; tau_p],
        };

        let cfg = SystemConfig {
            antennas,
            elements,
            tau_p,
            losses,
            snr_grid_db,
            trials,
            master_seed: self.seed.unwrap_or(base.master_seed),
            pattern,
            estimators,
            pilots,
            d_bs_over_lambda: self.d_bs.unwrap_or(base.d_bs_over_lambda),
            d_irs_over_lambda: self.d_irs.unwrap_or(base.d_irs_over_lambda),
            resample_angles: self.resample_angles.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `dft` runs every estimator that the pilot budget supports; `onoff` runs
/// the on-off LS estimator alone.
fn default_estimators(pattern: PatternKind, tau_p: usize, elements: usize) -> Vec<EstimatorKind> {
    match pattern {
        PatternKind::OnOff => vec![EstimatorKind::MvuOnOff],
        _ if tau_p == elements + 1 => EstimatorKind::ALL.to_vec(),
        _ => vec![EstimatorKind::MvuDft, EstimatorKind::Mmse],
    }
}

/// Parses `min:step:max` (dB) into an inclusive grid.
pub fn parse_snr_range(spec: &str) -> Result<Vec<f64>> {
    let bad = |why: &str| Error::config("snr", format!("`{spec}`: {why} (expected min:step:max)"));
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("not a number"))?;
    let [min, step, max] = parts[..] else {
        return Err(bad("wrong number of fields"));
    };
    if !(min.is_finite() && step.is_finite() && max.is_finite()) {
        return Err(bad("non-finite value"));
    }
    if max < min {
        return Err(bad("max below min"));
    }
    if min == max {
        return Ok(vec![min]);
    }
    if step <= 0.0 {
        return Err(bad("step must be positive"));
    }
    let count = ((max - min) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| min + k as f64 * step).collect())
}

fn check_keys<'a>(keys: impl Iterator<Item = &'a String>) -> Result<()> {
    for key in keys {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(Error::config(key.clone(), "unknown key"));
        }
    }
    Ok(())
}

/// Reads a TOML config file or a JSON run manifest (its `config` object).
pub fn load_config_file(path: &Path) -> Result<RawConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let obj = match value.get("config") {
            Some(inner) => inner.clone(),
            None => value,
        };
        let map = obj
            .as_object()
            .ok_or_else(|| Error::config(path.display().to_string(), "expected a JSON object"))?;
        check_keys(map.keys())?;
        serde_json::from_value(obj).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    } else {
        let table: toml::Table =
            toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        check_keys(table.keys())?;
        toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }
}

/// File (if any) overlaid by flag values, then defaults and validation.
pub fn parse_config(path: Option<&Path>, flags: RawConfig) -> Result<SystemConfig> {
    let file = match path {
        Some(p) => load_config_file(p)?,
        None => RawConfig::default(),
    };
    file.merged(flags).resolve()
}

#[derive(Debug, Parser)]
#[command(
    name = "ris-chest",
    version,
    about = "RIS-aided MISO uplink channel estimation: MVU/MMSE NMSE sweeps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an NMSE-versus-SNR sweep and write CSV results.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Flat key/value config file (TOML) or a previous manifest.json.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// BS antennas M.
    #[arg(long)]
    pub m: Option<usize>,
    /// RIS elements N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Pilot symbols per coherence interval (default N + 1).
    #[arg(long = "tau-p")]
    pub tau_p: Option<usize>,
    /// SNR grid in dB as min:step:max.
    #[arg(long, allow_hyphen_values = true)]
    pub snr: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub trials: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// dft | onoff
    #[arg(long)]
    pub pattern: Option<String>,
    /// Comma-separated subset of mvu-onoff, mvu-dft, mmse.
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// Direct-path loss; the RIS path takes the rest of the unit budget.
    #[arg(long = "beta-bs")]
    pub beta_bs: Option<f64>,
    #[arg(long = "beta-bs-irs")]
    pub beta_bs_irs: Option<f64>,
    /// BS antenna spacing in wavelengths.
    #[arg(long = "d-bs")]
    pub d_bs: Option<f64>,
    /// RIS element spacing in wavelengths.
    #[arg(long = "d-irs")]
    pub d_irs: Option<f64>,
    /// Pilot symbols as comma-separated re:im pairs.
    #[arg(long, allow_hyphen_values = true)]
    pub pilots: Option<String>,
    /// Redraw LoS angles every trial.
    #[arg(long = "resample-angles")]
    pub resample_angles: bool,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Write closed-form curves only; skip Monte Carlo.
    #[arg(long = "emit-closed-form-only")]
    pub emit_closed_form_only: bool,
    /// Worker threads for the trial loop.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

fn parse_pilots(spec: &str) -> Result<Vec<[f64; 2]>> {
    spec.split(',')
        .map(|pair| {
            let (re, im) = pair.split_once(':').unwrap_or((pair, "0"));
            match (re.trim().parse::<f64>(), im.trim().parse::<f64>()) {
                (Ok(re), Ok(im)) => Ok([re, im]),
                _ => Err(Error::config("pilots", format!("cannot parse `{pair}` as re:im"))),
            }
        })
        .collect()
}

impl RunArgs {
    pub fn raw_overrides(&self) -> Result<RawConfig> {
        Ok(RawConfig {
            m: self.m,
            n: self.n,
            tau_p: self.tau_p,
            snr: self.snr.clone(),
            snr_db: None,
            trials: self.trials,
            seed: self.seed,
            pattern: self.pattern.clone(),
            estimators: self.estimators.clone(),
            beta_bs: self.beta_bs,
            beta_bs_irs: self.beta_bs_irs,
            d_bs: self.d_bs,
            d_irs: self.d_irs,
            pilots: self.pilots.as_deref().map(parse_pilots).transpose()?,
            resample_angles: self.resample_angles.then_some(true),
        })
    }

    pub fn options(&self) -> RunOptions {
        RunOptions {
            out_dir: self.out.clone(),
            threads: self.threads,
            closed_form_only: self.emit_closed_form_only,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
    pub closed_form_only: bool,
}

/// Record written next to every result set; its `config` reproduces the run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub config: RawConfig,
    pub closed_form_only: bool,
    pub threads: Option<usize>,
    pub duration_secs: f64,
    pub outputs: Vec<PathBuf>,
}

/// Plain decimal with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can carry into a new leading digit (9.999999999 -> 10.00000000)
    let digits = s.chars().filter(|c| c.is_ascii_digit()).collect::<String>();
    if digits.trim_start_matches('0').len() > 9 && decimals > 0 {
        let decimals = decimals - 1;
        format!("{x:.decimals$}")
    } else {
        s
    }
}

/// CSV for one channel group: `snr_db, <est>_<group>_emp, <est>_<group>_cf, ...`.
/// Empirical columns are omitted when the curves carry no Monte Carlo data.
pub fn curves_csv(curves: &[NmseCurve], group: ChannelGroup) -> Result<String> {
    let tag = match group {
        ChannelGroup::Direct => "direct",
        ChannelGroup::Cascade => "cascade_avg",
    };
    let with_emp = curves
        .iter()
        .all(|c| c.entries.iter().all(|e| e.group(group).empirical.is_some()));
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io("<csv buffer>", std::io::Error::other(e));

    let mut header = vec!["snr_db".to_string()];
    if let Some(first) = curves.first() {
        for e in &first.entries {
            if with_emp {
                header.push(format!("{}_{tag}_emp", e.estimator));
            }
            header.push(format!("{}_{tag}_cf", e.estimator));
        }
    }
    w.write_record(&header).map_err(csv_err)?;
    for c in curves {
        let mut row = vec![format!("{}", c.snr_db)];
        for e in &c.entries {
            let v = e.group(group);
            if with_emp {
                row.push(format_sig9(v.empirical.expect("checked above")));
            }
            row.push(format_sig9(v.closed_form));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io("<csv buffer>", std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs the sweep (or closed-form evaluation) and writes the CSVs and manifest.
pub fn run_command(cfg: &SystemConfig, opts: &RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let sim = Simulation::new(cfg.clone())?;
    let curves = if opts.closed_form_only {
        sim.closed_form()
    } else {
        sim.sweep(Execution::with_threads(opts.threads))?
    };

    let direct = opts.out_dir.join(DIRECT_CSV);
    let cascade = opts.out_dir.join(CASCADE_CSV);
    let manifest_path = opts.out_dir.join(MANIFEST_JSON);
    write_file(&direct, &curves_csv(&curves, ChannelGroup::Direct)?)?;
    write_file(&cascade, &curves_csv(&curves, ChannelGroup::Cascade)?)?;

    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: RawConfig::from_config(cfg),
        closed_form_only: opts.closed_form_only,
        threads: opts.threads,
        duration_secs: start.elapsed().as_secs_f64(),
        outputs: vec![direct, cascade, manifest_path.clone()],
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(&manifest_path, &json)?;
    Ok(manifest)
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

/// Entry point shared by the binary and the integration tests.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(args) => args
            .raw_overrides()
            .and_then(|flags| parse_config(args.config.as_deref(), flags))
            .and_then(|cfg| run_command(&cfg, &args.options())),
    };
    match result {
        Ok(manifest) => {
            for p in &manifest.outputs {
                println!("wrote {}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
