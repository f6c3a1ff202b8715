//! Seeded Monte Carlo experiments over an SNR grid.
//!
//! Every `(snr_index, trial_index)` pair owns independent random substreams
//! derived from the master seed, so the record set does not depend on the
//! number of workers or on scheduling order. Within one trial all enabled
//! estimators see the same channel draw and the same noise matrix; schemes
//! with shorter training simply use a prefix of the noise columns.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{assemble_channels, ChannelModelConfig, ChannelSet, Geometry, PathGains};
use crate::error::{ensure, ConfigError};
use crate::estimators::{
    e_als_estimate, ls_baseline, objective_violations, resolve_scaling, two_stage_estimate,
    ChannelEstimate, EstimatorConfig, EstimatorError,
};
use crate::metrics::{aggregate_vector_nmse, complexity_formula, nmse, SampleStats};
use crate::random::{derive_seed, stream, StreamTag};
use crate::signal::{draw_noise, synthesize_with_noise, Scheme, SystemConfig, TrainingSchedule};

/// Relative slack allowed when checking that ALS residuals never increase.
pub const OBJECTIVE_SLACK: f64 = 1e-9;
/// Absolute floor, relative to the data energy, below which residual changes
/// are rounding noise.
pub const OBJECTIVE_FLOOR: f64 = 1e-24;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("config parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no records to emit")]
    NoRecords,
    #[error("worker pool: {0}")]
    Pool(String),
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("json output: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    TwoStage,
    EAls,
    Ls,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [EstimatorKind::TwoStage, EstimatorKind::EAls, EstimatorKind::Ls];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorKind::TwoStage => "two_stage",
            EstimatorKind::EAls => "e_als",
            EstimatorKind::Ls => "ls",
        }
    }

    /// Training layout the estimator consumes.
    pub fn scheme(self) -> Scheme {
        match self {
            EstimatorKind::TwoStage => Scheme::TwoStage,
            EstimatorKind::EAls | EstimatorKind::Ls => Scheme::EAls,
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                ConfigError::new(
                    "estimators",
                    format!("unknown estimator `{s}`, expected one of two_stage, e_als, ls"),
                )
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(ConfigError::new(
                "format",
                format!("unknown format `{other}`, expected csv or json"),
            )),
        }
    }
}

/// Dimensions shared by every scheme; `B` follows from the phase schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(rename = "M")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "N")]
    pub ris_elements: usize,
    #[serde(rename = "L")]
    pub pilots_per_block: usize,
    /// RIS-OFF stage length, `L` when absent.
    #[serde(rename = "L_off", skip_serializing_if = "Option::is_none")]
    pub off_stage_len: Option<usize>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 4,
            users: 8,
            ris_elements: 25,
            pilots_per_block: 8,
            off_stage_len: None,
        }
    }
}

impl ScenarioConfig {
    pub fn system(&self, scheme: Scheme, snr_db: f64) -> SystemConfig {
        let mut cfg = SystemConfig::new(
            self.antennas,
            self.users,
            self.ris_elements,
            self.pilots_per_block,
            scheme,
            snr_db,
        );
        if scheme == Scheme::TwoStage {
            cfg.off_stage_len = self.off_stage_len.unwrap_or(self.pilots_per_block);
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: ScenarioConfig,
    pub channel: ChannelModelConfig,
    pub estimator: EstimatorConfig,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub estimators: Vec<EstimatorKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
    pub workers: usize,
    /// Draw path angles once per experiment instead of once per trial.
    pub fixed_geometry: bool,
}

/// Desk-scale trial count; the full study uses 10000.
pub const DEFAULT_TRIALS: usize = 200;

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: ScenarioConfig::default(),
            channel: ChannelModelConfig::default(),
            estimator: EstimatorConfig::default(),
            snr_grid_db: vec![0.0, 10.0, 20.0, 30.0],
            trials: DEFAULT_TRIALS,
            master_seed: 1,
            estimators: EstimatorKind::ALL.to_vec(),
            output_path: None,
            format: OutputFormat::Csv,
            workers: 1,
            fixed_geometry: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        ensure(self.trials >= 1, "trials", "must be at least 1")?;
        ensure(!self.snr_grid_db.is_empty(), "snr_grid_db", "must not be empty")?;
        ensure(
            self.snr_grid_db.iter().all(|s| s.is_finite()),
            "snr_grid_db",
            "values must be finite",
        )?;
        ensure(!self.estimators.is_empty(), "estimators", "must not be empty")?;
        ensure(self.workers >= 1, "workers", "must be at least 1")?;
        for &kind in &self.estimators {
            let sys = self.system.system(kind.scheme(), 0.0);
            sys.validate(kind.scheme())?;
            if kind == EstimatorKind::Ls {
                sys.validate_ls()?;
            }
        }
        self.estimator.validate()?;
        self.channel.validate(self.system.ris_elements)
    }

    /// Training slots of the longest enabled scheme.
    pub fn noise_slots(&self) -> usize {
        self.estimators
            .iter()
            .map(|k| self.system.system(k.scheme(), 0.0).training_slots())
            .max()
            .unwrap_or(0)
    }
}

/// Parses and validates a TOML experiment description. Omitted keys take the
/// defaults of [`ExperimentConfig::default`].
pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig, HarnessError> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|source| HarnessError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text, path)
}

/// One estimator run on one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: usize,
    pub snr_db: f64,
    pub estimator: EstimatorKind,
    /// Digest of the ground-truth channels shared by paired estimators.
    pub channel_hash: String,
    pub nmse_aggregate: Option<f64>,
    pub nmse_h_ua: Option<f64>,
    pub nmse_h_ur: Option<f64>,
    pub nmse_h_ra: Option<f64>,
    pub nmse_cascade: Option<f64>,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub analytic_ops: Option<u64>,
    pub empirical_ops: Option<u64>,
    pub objective_violations: Option<usize>,
    pub scaling_fallbacks: Option<usize>,
    pub failure: Option<String>,
    pub wall_time_seconds: f64,
}

impl TrialRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    fn sort_key(&self) -> (usize, EstimatorKind) {
        (self.trial_index, self.estimator)
    }
}

struct TrialContext<'a> {
    cfg: &'a ExperimentConfig,
    snr_index: usize,
    trial: usize,
}

impl TrialContext<'_> {
    fn seed(&self, tag: StreamTag) -> u64 {
        derive_seed(
            self.cfg.master_seed,
            &[self.snr_index as u64, self.trial as u64, tag as u64],
        )
    }

    fn init_seed(&self, tag: StreamTag) -> u64 {
        derive_seed(
            self.cfg.estimator.init_seed,
            &[
                self.cfg.master_seed,
                self.snr_index as u64,
                self.trial as u64,
                tag as u64,
            ],
        )
    }

    fn channels(&self) -> ChannelSet {
        let cfg = self.cfg;
        let dims = cfg.system.system(Scheme::EAls, 0.0);
        let geometry_seed = if cfg.fixed_geometry {
            derive_seed(cfg.master_seed, &[StreamTag::Geometry as u64])
        } else {
            self.seed(StreamTag::Geometry)
        };
        let geometry = Geometry::draw(
            cfg.channel.num_paths,
            dims.users,
            &mut stream(geometry_seed),
        );
        let gains = PathGains::draw(
            cfg.channel.num_paths,
            dims.users,
            &mut stream(self.seed(StreamTag::Fading)),
        );
        assemble_channels(&cfg.channel, &dims, &geometry, &gains)
    }
}

fn score_decoupled(
    record: &mut TrialRecord,
    est: &ChannelEstimate,
    truth: &ChannelSet,
    complexity_total: u64,
) {
    let resolved = resolve_scaling(est, truth);
    let r = &resolved.estimate;
    record.nmse_aggregate = est
        .parameter_vector()
        .and_then(|p| aggregate_vector_nmse(&p, truth).ok());
    record.nmse_h_ua = r.h_ua_hat.as_ref().and_then(|h| nmse(h, &truth.h_ua).ok());
    record.nmse_h_ur = nmse(&r.h_ur_hat, &truth.h_ur).ok();
    record.nmse_h_ra = nmse(&r.h_ra_hat, &truth.h_ra).ok();
    record.nmse_cascade = nmse(&est.cascade(), &truth.cascade()).ok();
    record.iterations = Some(est.iterations);
    record.converged = Some(est.converged);
    record.analytic_ops = Some(complexity_total);
    record.empirical_ops = Some(est.op_count);
    record.objective_violations = Some(objective_violations(
        &est.residuals,
        OBJECTIVE_SLACK,
        OBJECTIVE_FLOOR * est.data_energy,
    ));
    record.scaling_fallbacks = Some(resolved.fallback_columns.len());
}

fn run_trial(ctx: &TrialContext<'_>) -> Vec<TrialRecord> {
    let cfg = ctx.cfg;
    let snr_db = cfg.snr_grid_db[ctx.snr_index];
    let truth = ctx.channels();
    let hash = format!("{:016x}", truth.digest());
    let noise = draw_noise(
        &mut stream(ctx.seed(StreamTag::Noise)),
        cfg.system.antennas,
        cfg.noise_slots(),
        1.0,
    );

    let mut order = cfg.estimators.clone();
    order.sort();
    order.dedup();
    order
        .into_iter()
        .map(|kind| {
            let scheme = kind.scheme();
            let sys = cfg.system.system(scheme, snr_db);
            let mut record = TrialRecord {
                trial_index: ctx.trial,
                snr_db,
                estimator: kind,
                channel_hash: hash.clone(),
                nmse_aggregate: None,
                nmse_h_ua: None,
                nmse_h_ur: None,
                nmse_h_ra: None,
                nmse_cascade: None,
                iterations: None,
                converged: None,
                analytic_ops: None,
                empirical_ops: None,
                objective_violations: None,
                scaling_fallbacks: None,
                failure: None,
                wall_time_seconds: 0.0,
            };
            let prepared = TrainingSchedule::for_scheme(&sys, scheme)
                .map_err(|e| e.to_string())
                .and_then(|sched| {
                    synthesize_with_noise(&truth, &sched, &noise)
                        .map(|recv| (sched, recv))
                        .map_err(|e| e.to_string())
                });
            let (sched, recv) = match prepared {
                Ok(p) => p,
                Err(e) => {
                    record.failure = Some(e);
                    return record;
                }
            };

            let start = Instant::now();
            let outcome: Result<(), EstimatorError> = match kind {
                EstimatorKind::TwoStage | EstimatorKind::EAls => {
                    let result = if kind == EstimatorKind::TwoStage {
                        let mut rng = stream(ctx.init_seed(StreamTag::InitTwoStage));
                        two_stage_estimate(&recv, &sched, &cfg.estimator, &mut rng)
                    } else {
                        let mut rng = stream(ctx.init_seed(StreamTag::InitEAls));
                        e_als_estimate(&recv, &sched, &cfg.estimator, &mut rng)
                    };
                    result.map(|est| {
                        record.wall_time_seconds = start.elapsed().as_secs_f64();
                        let total = complexity_formula(scheme, &sys).total(est.iterations);
                        score_decoupled(&mut record, &est, &truth, total);
                    })
                }
                EstimatorKind::Ls => ls_baseline(&recv, &sched, &cfg.estimator).map(|est| {
                    record.wall_time_seconds = start.elapsed().as_secs_f64();
                    record.nmse_aggregate = aggregate_vector_nmse(&est.params, &truth).ok();
                    record.empirical_ops = Some(est.op_count);
                }),
            };
            if let Err(e) = outcome {
                record.wall_time_seconds = start.elapsed().as_secs_f64();
                record.failure = Some(e.to_string());
            }
            record
        })
        .collect()
}

/// Runs every `(snr, trial)` pair on a pool of `cfg.workers` threads and
/// returns the records sorted by (grid position, trial, estimator).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>, HarnessError> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.snr_grid_db.len())
        .flat_map(|s| (0..cfg.trials).map(move |t| (s, t)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let mut tagged: Vec<(usize, TrialRecord)> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(snr_index, trial)| {
                let ctx = TrialContext {
                    cfg,
                    snr_index,
                    trial,
                };
                run_trial(&ctx).into_iter().map(move |r| (snr_index, r))
            })
            .collect()
    });
    tagged.sort_by(|(sa, a), (sb, b)| sa.cmp(sb).then(a.sort_key().cmp(&b.sort_key())));
    Ok(tagged.into_iter().map(|(_, r)| r).collect())
}

/// Per-(estimator, SNR) summary over successful trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub estimator: EstimatorKind,
    pub snr_db: f64,
    pub trials: usize,
    pub failures: usize,
    pub mean_nmse_aggregate: Option<f64>,
    pub median_nmse_aggregate: Option<f64>,
    pub mean_nmse_h_ua: Option<f64>,
    pub mean_nmse_h_ur: Option<f64>,
    pub mean_nmse_h_ra: Option<f64>,
    pub mean_nmse_cascade: Option<f64>,
    pub mean_iterations: Option<f64>,
    pub mean_analytic_ops: Option<f64>,
    pub mean_wall_time_seconds: Option<f64>,
    pub objective_violations: usize,
}

/// Groups records by estimator and SNR, in estimator-then-grid order.
pub fn summarize(records: &[TrialRecord]) -> Vec<Aggregate> {
    let mut groups: BTreeMap<(EstimatorKind, u64), Vec<&TrialRecord>> = BTreeMap::new();
    let mut snr_order: Vec<u64> = Vec::new();
    for r in records {
        let key = r.snr_db.to_bits();
        if !snr_order.contains(&key) {
            snr_order.push(key);
        }
        groups.entry((r.estimator, key)).or_default().push(r);
    }
    let mut out = Vec::new();
    for kind in EstimatorKind::ALL {
        for &snr in &snr_order {
            let Some(rs) = groups.get(&(kind, snr)) else {
                continue;
            };
            let ok: Vec<&&TrialRecord> = rs.iter().filter(|r| !r.failed()).collect();
            let stats = |f: &dyn Fn(&TrialRecord) -> Option<f64>| -> SampleStats {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let agg = stats(&|r| r.nmse_aggregate);
            out.push(Aggregate {
                estimator: kind,
                snr_db: f64::from_bits(snr),
                trials: rs.len(),
                failures: rs.len() - ok.len(),
                mean_nmse_aggregate: agg.mean(),
                median_nmse_aggregate: agg.median(),
                mean_nmse_h_ua: stats(&|r| r.nmse_h_ua).mean(),
                mean_nmse_h_ur: stats(&|r| r.nmse_h_ur).mean(),
                mean_nmse_h_ra: stats(&|r| r.nmse_h_ra).mean(),
                mean_nmse_cascade: stats(&|r| r.nmse_cascade).mean(),
                mean_iterations: stats(&|r| r.iterations.map(|i| i as f64)).mean(),
                mean_analytic_ops: stats(&|r| r.analytic_ops.map(|o| o as f64)).mean(),
                mean_wall_time_seconds: stats(&|r| Some(r.wall_time_seconds)).mean(),
                objective_violations: ok.iter().filter_map(|r| r.objective_violations).sum(),
            });
        }
    }
    out
}

/// Column order of the CSV output. Wall time is last so it can be dropped
/// when comparing runs.
pub const CSV_COLUMNS: [&str; 17] = [
    "trial_index",
    "snr_db",
    "estimator",
    "channel_hash",
    "nmse_aggregate",
    "nmse_h_ua",
    "nmse_h_ur",
    "nmse_h_ra",
    "nmse_cascade",
    "iterations",
    "converged",
    "analytic_ops",
    "empirical_ops",
    "objective_violations",
    "scaling_fallbacks",
    "failure",
    "wall_time_seconds",
];

/// 17 significant digits.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

fn csv_row(r: &TrialRecord) -> [String; 17] {
    [
        r.trial_index.to_string(),
        fmt_f64(r.snr_db),
        r.estimator.to_string(),
        r.channel_hash.clone(),
        opt(r.nmse_aggregate, fmt_f64),
        opt(r.nmse_h_ua, fmt_f64),
        opt(r.nmse_h_ur, fmt_f64),
        opt(r.nmse_h_ra, fmt_f64),
        opt(r.nmse_cascade, fmt_f64),
        opt(r.iterations, |v| v.to_string()),
        opt(r.converged, |v| v.to_string()),
        opt(r.analytic_ops, |v| v.to_string()),
        opt(r.empirical_ops, |v| v.to_string()),
        opt(r.objective_violations, |v| v.to_string()),
        opt(r.scaling_fallbacks, |v| v.to_string()),
        r.failure.clone().unwrap_or_default(),
        fmt_f64(r.wall_time_seconds),
    ]
}

pub fn write_csv<W: Write>(records: &[TrialRecord], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub config: ExperimentConfig,
    pub records: Vec<TrialRecord>,
    pub summary: Vec<Aggregate>,
}

pub fn write_json<W: Write>(
    records: &[TrialRecord],
    cfg: &ExperimentConfig,
    out: W,
) -> Result<(), HarnessError> {
    let report = JsonReport {
        config: cfg.clone(),
        records: records.to_vec(),
        summary: summarize(records),
    };
    serde_json::to_writer_pretty(out, &report)?;
    Ok(())
}

/// Writes `records` to `path` in `format` and returns the per-group summary.
pub fn emit_results(
    records: &[TrialRecord],
    cfg: &ExperimentConfig,
    path: &Path,
    format: OutputFormat,
) -> Result<Vec<Aggregate>, HarnessError> {
    if records.is_empty() {
        return Err(HarnessError::NoRecords);
    }
    let write_err = |source| HarnessError::Write {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(write_err)?;
    let mut buf = io::BufWriter::new(file);
    match format {
        OutputFormat::Csv => write_csv(records, &mut buf)?,
        OutputFormat::Json => write_json(records, cfg, &mut buf)?,
    }
    buf.flush().map_err(write_err)?;
    Ok(summarize(records))
}

/// Fixed-width table of mean aggregate NMSE per estimator and SNR.
pub fn format_summary(summary: &[Aggregate]) -> String {
    let mut s = format!(
        "{:<10} {:>8} {:>7} {:>14} {:>14} {:>8} {:>14}\n",
        "estimator", "snr_db", "trials", "mean_nmse", "median_nmse", "iters", "analytic_ops"
    );
    let cell = |v: Option<f64>, prec: usize| match v {
        Some(x) if prec == 0 => format!("{x:.3e}"),
        Some(x) => format!("{x:.prec$}"),
        None => "-".to_string(),
    };
    for a in summary {
        s.push_str(&format!(
            "{:<10} {:>8.1} {:>7} {:>14} {:>14} {:>8} {:>14}\n",
            a.estimator.name(),
            a.snr_db,
            a.trials - a.failures,
            cell(a.mean_nmse_aggregate, 0),
            cell(a.median_nmse_aggregate, 0),
            cell(a.mean_iterations, 2),
            cell(a.mean_analytic_ops, 0),
        ));
    }
    s
}
