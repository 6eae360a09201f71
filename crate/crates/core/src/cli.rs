//! The `exposure` command line.
//!
//! Every subcommand reads from `--input` (default stdin) and writes its
//! product to `--output` (default stdout). A short human-readable summary
//! goes to stdout when the product goes to a file, and to stderr otherwise.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::curve::{empirical_curve, ExposureCurve, DEFAULT_LEVEL, DEFAULT_X_MIN};
use crate::dynamics::{
    self, compare_cohorts, default_age_cohorts, summarize, AnalysisOptions, UserAttributes,
    DEFAULT_ALPHA,
};
use crate::error::Error;
use crate::exposure_log::{
    filter_complete, parse_records, sessionize, LogFormat, SequenceStore,
    DEFAULT_THRESHOLD_SECONDS, DEFAULT_TRUNCATION_LIMIT,
};
use crate::plot::render_svg;
use crate::probit::{fit_probit, FitConfig, ProbitData, ProbitFit};
use crate::report::{self, FitReport, ReportLine};
use crate::simgen::{self, LatentModel, SimConfig, TimestampModel, TwoFactorParams};

/// Exit status for runtime failures; usage errors exit with 2.
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "exposure",
    version,
    about = "Repeated-exposure listening dynamics"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sessionize a raw log into ordered, truncated exposure sequences.
    Ingest(IngestArgs),
    /// Empirical listening probability per exposure index.
    Curve(CurveArgs),
    /// Quadratic probit fit by maximum likelihood.
    Fit(FitArgs),
    /// Fit plus peak and shape summary.
    Dynamics(DynamicsArgs),
    /// Per-cohort curves, fits and a comparison table.
    Cohorts(CohortArgs),
    /// Generate a synthetic listening log.
    Simulate(SimulateArgs),
    /// Render a curve table as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for LogFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LogFormat::Csv,
            Format::Jsonl => LogFormat::Jsonl,
        }
    }
}

#[derive(Debug, Args)]
pub struct Io {
    /// Input file, `-` for stdin.
    #[arg(short, long, default_value = "-")]
    pub input: PathBuf,
    /// Output file, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LogArgs {
    /// Format of log input (and of log output where applicable).
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// Minimum play duration counted as a listening event.
    #[arg(long, default_value_t = DEFAULT_THRESHOLD_SECONDS)]
    pub threshold_seconds: f64,
    /// Exposures kept per (user, track) pair.
    #[arg(long = "truncate", default_value_t = DEFAULT_TRUNCATION_LIMIT)]
    pub truncate: usize,
    /// Keep only pairs with at least this many exposures.
    #[arg(long)]
    pub require_length: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RangeArgs {
    #[arg(long, default_value_t = DEFAULT_X_MIN, conflicts_with = "include_first_exposure")]
    pub x_min: u32,
    #[arg(long, default_value_t = DEFAULT_TRUNCATION_LIMIT as u32)]
    pub x_max: u32,
    /// Start at exposure 1 instead of `--x-min`.
    #[arg(long)]
    pub include_first_exposure: bool,
    /// Confidence level of the curve bounds.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
}

impl RangeArgs {
    fn x_min(&self) -> u32 {
        if self.include_first_exposure {
            1
        } else {
            self.x_min
        }
    }
}

#[derive(Debug, Args)]
pub struct FitFlags {
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Gradient tolerance, relative to the number of observations.
    #[arg(long, default_value_t = 1e-8)]
    pub grad_tol: f64,
    #[arg(long, default_value_t = 30)]
    pub step_halvings: usize,
}

impl FitFlags {
    fn config(&self) -> FitConfig {
        FitConfig {
            max_iter: self.max_iter,
            grad_tol: self.grad_tol,
            step_halvings: self.step_halvings,
        }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub log: LogArgs,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub log: LogArgs,
    #[command(flatten)]
    pub range: RangeArgs,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub io: Io,
    #[command(flatten)]
    pub log: LogArgs,
    #[command(flatten)]
    pub range: RangeArgs,
    #[command(flatten)]
    pub fit: FitFlags,
}

#[derive(Debug, Args)]
pub struct DynamicsArgs {
    #[command(flatten)]
    pub fit_args: FitArgs,
    /// Significance level for shape classification.
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct CohortArgs {
    #[command(flatten)]
    pub fit_args: FitArgs,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    pub alpha: f64,
    /// `user_id,age` table; cohorts are the age classes <=21, 22-27, >27.
    #[arg(
        long,
        required_unless_present = "membership",
        conflicts_with = "membership"
    )]
    pub ages: Option<PathBuf>,
    /// `cohort,user_id` or `cohort,track_id` table.
    #[arg(long)]
    pub membership: Option<PathBuf>,
    /// Also write the per-cohort line-delimited JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Output file, `-` for stdout.
    #[arg(short, long, default_value = "-")]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,
    /// JSON simulation config; replaces every model flag below.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub users: u64,
    #[arg(long, default_value_t = 40)]
    pub exposures: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "t0")]
    pub track_id: String,
    /// Quadratic latent coefficients; default when no two-factor flag is set.
    #[arg(long, default_value_t = 0.7952, allow_hyphen_values = true)]
    pub beta0: f64,
    #[arg(long, default_value_t = 0.0048, allow_hyphen_values = true)]
    pub beta1: f64,
    #[arg(long, default_value_t = -0.0002, allow_hyphen_values = true)]
    pub beta2: f64,
    /// Switch to the two-factor latent with this baseline.
    #[arg(long, allow_hyphen_values = true)]
    pub baseline: Option<f64>,
    #[arg(long, default_value_t = 0.0, requires = "baseline")]
    pub habituation: f64,
    #[arg(long, default_value_t = 3.0, requires = "baseline")]
    pub habituation_rate: f64,
    #[arg(long, default_value_t = 0.0, requires = "baseline")]
    pub tedium: f64,
    /// Seconds between consecutive exposures.
    #[arg(long, default_value_t = 3600)]
    pub gap_seconds: i64,
    #[arg(long, default_value = "u")]
    pub user_prefix: String,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub io: Io,
    /// Fit report whose Φ(ŷ*(x)) is drawn over the points.
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long, default_value = "Listening probability per exposure")]
    pub title: String,
}

/// Parses the process arguments, runs, and returns the exit status.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain().any(|cause| {
        cause
            .downcast_ref::<io::Error>()
            .is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)
    })
}

pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        // downstream reader went away, e.g. `exposure simulate | head`
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            let category = e
                .downcast_ref::<Error>()
                .map(Error::category)
                .unwrap_or("io");
            eprintln!("error[{category}]: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn open_input(path: &PathBuf) -> anyhow::Result<Box<dyn BufRead>> {
    if path.as_os_str() == "-" {
        Ok(Box::new(BufReader::new(io::stdin())))
    } else {
        let f = File::open(path)
            .map_err(Error::from)
            .with_context(|| format!("cannot open {}", path.display()))?;
        Ok(Box::new(BufReader::new(f)))
    }
}

fn read_all(path: &PathBuf) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    open_input(path)?
        .read_to_end(&mut buf)
        .map_err(Error::from)?;
    Ok(buf)
}

fn is_stdout(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Writes the product, then the summary to whichever stream is free.
fn emit(path: &PathBuf, product: &[u8], summary: &str) -> anyhow::Result<()> {
    if is_stdout(path) {
        let mut out = io::stdout().lock();
        out.write_all(product).map_err(Error::from)?;
        out.flush().map_err(Error::from)?;
        eprint!("{summary}");
    } else {
        std::fs::write(path, product)
            .map_err(Error::from)
            .with_context(|| format!("cannot write {}", path.display()))?;
        print!("{summary}");
    }
    Ok(())
}

fn load_store(bytes: &[u8], log: &LogArgs) -> anyhow::Result<(SequenceStore, usize)> {
    let parsed = parse_records(bytes, log.format.into())?;
    let skipped = parsed.skipped;
    let store = sessionize(parsed.records, log.truncate, log.threshold_seconds)?;
    let store = match log.require_length {
        Some(n) => filter_complete(&store, n)?,
        None => store,
    };
    Ok((store, skipped))
}

fn is_curve_table(bytes: &[u8]) -> bool {
    let header = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    let header = String::from_utf8_lossy(header);
    header.split(',').any(|h| h.trim() == "p_hat")
}

/// Curve from either a curve table or a log.
fn load_curve(
    bytes: &[u8],
    log: &LogArgs,
    range: &RangeArgs,
) -> anyhow::Result<(ExposureCurve, String)> {
    if log.format == Format::Csv && is_curve_table(bytes) {
        let table = ExposureCurve::read_csv(bytes)?;
        let (lo, hi) = (range.x_min(), range.x_max);
        let points: Vec<_> = table
            .points
            .into_iter()
            .filter(|p| (lo..=hi).contains(&p.x))
            .collect();
        if points.iter().all(|p| p.n == 0) {
            return Err(Error::EmptyRange.into());
        }
        Ok((
            ExposureCurve {
                level: None,
                points,
            },
            "curve table".into(),
        ))
    } else {
        let (store, skipped) = load_store(bytes, log)?;
        let curve = empirical_curve(&store, range.x_min(), range.x_max, range.level)?;
        Ok((
            curve,
            format!(
                "{} pairs, {} events, {skipped} skipped lines",
                store.n_pairs(),
                store.n_events()
            ),
        ))
    }
}

fn fit_from(args: &FitArgs) -> anyhow::Result<(ProbitFit, Option<(f64, f64)>, String)> {
    let bytes = read_all(&args.io.input)?;
    let (curve, source) = load_curve(&bytes, &args.log, &args.range)?;
    let data = ProbitData::from_curve(&curve)?;
    let fit = fit_probit(&data, &args.fit.config())?;
    Ok((fit, data.x_range(), source))
}

fn describe_fit(fit: &ProbitFit) -> String {
    let mut s = String::new();
    for (i, name) in crate::probit::COEFFICIENT_NAMES.iter().enumerate() {
        s += &format!(
            "  {name:<10} {:>12.6} (se {:.6}, z {:.2}, p {:.3e})\n",
            fit.beta[i], fit.standard_errors[i], fit.z_scores[i], fit.p_values[i]
        );
    }
    s += &format!(
        "  log-likelihood {:.4}, n_obs {}, {} iterations, converged {}\n",
        fit.log_likelihood, fit.n_obs, fit.iterations, fit.converged
    );
    for w in &fit.warnings {
        s += &format!("  warning: {w}\n");
    }
    s
}

fn describe_summary(s: &dynamics::DynamicsSummary) -> String {
    let peak = match (s.peak_exposure, s.peak_se) {
        (Some(p), Some(se)) => {
            let note = if s.peak_in_range == Some(false) {
                " (outside fitted range)"
            } else {
                ""
            };
            format!("{p:.2} ± {se:.2}{note}")
        }
        _ => "none".into(),
    };
    format!(
        "  shape {} at alpha {}, peak {peak}\n",
        s.shape, s.significance_level
    )
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let bytes = read_all(&a.io.input)?;
            let (store, skipped) = load_store(&bytes, &a.log)?;
            let mut out = Vec::new();
            store.export(&mut out, a.log.format.into())?;
            let summary = format!(
                "ingest: {} pairs, {} events, {} dropped after exposure {}, {skipped} skipped lines\n",
                store.n_pairs(),
                store.n_events(),
                store.dropped(),
                store.truncation_limit()
            );
            emit(&a.io.output, &out, &summary)
        }
        Command::Curve(a) => {
            let bytes = read_all(&a.io.input)?;
            let (curve, source) = load_curve(&bytes, &a.log, &a.range)?;
            let mut out = Vec::new();
            curve.write_csv(&mut out)?;
            let summary = format!(
                "curve: exposures {}..={} from {source}; {} events in range\n",
                a.range.x_min(),
                a.range.x_max,
                curve.total_events()
            );
            emit(&a.io.output, &out, &summary)
        }
        Command::Fit(a) => {
            let (fit, range, source) = fit_from(&a)?;
            let mut out = Vec::new();
            report::write_lines(&mut out, &[ReportLine::Fit(FitReport::new(&fit, range))])?;
            let summary = format!("fit: {source}\n{}", describe_fit(&fit));
            emit(&a.io.output, &out, &summary)
        }
        Command::Dynamics(a) => {
            let (fit, range, source) = fit_from(&a.fit_args)?;
            let summary = summarize(&fit, a.alpha, range)?;
            let mut out = Vec::new();
            report::write_lines(
                &mut out,
                &[
                    ReportLine::Fit(FitReport::new(&fit, range)),
                    ReportLine::Dynamics(summary.clone()),
                ],
            )?;
            let text = format!(
                "dynamics: {source}\n{}{}",
                describe_fit(&fit),
                describe_summary(&summary)
            );
            emit(&a.fit_args.io.output, &out, &text)
        }
        Command::Cohorts(a) => {
            let f = &a.fit_args;
            let bytes = read_all(&f.io.input)?;
            let (store, _) = load_store(&bytes, &f.log)?;
            let (cohorts, attrs) = match (&a.ages, &a.membership) {
                (Some(path), _) => (
                    default_age_cohorts(),
                    Some(UserAttributes::read_csv(open_input(path)?)?),
                ),
                (None, Some(path)) => (dynamics::read_membership_csv(open_input(path)?)?, None),
                (None, None) => bail!(Error::InvalidArgument(
                    "either --ages or --membership is required".into()
                )),
            };
            let opts = AnalysisOptions {
                x_min: f.range.x_min(),
                x_max: f.range.x_max,
                level: f.range.level,
                alpha: a.alpha,
                fit: f.fit.config(),
            };
            let result = compare_cohorts(&store, &cohorts, attrs.as_ref(), &opts)?;
            let mut out = Vec::new();
            report::write_comparison_csv(&mut out, &result)?;
            if let Some(path) = &a.report {
                let mut buf = Vec::new();
                report::write_lines(&mut buf, &report::cohort_lines(&result))?;
                std::fs::write(path, buf)
                    .map_err(Error::from)
                    .with_context(|| format!("cannot write {}", path.display()))?;
            }
            let mut text = String::from("cohorts:\n");
            for c in &result.cohorts {
                match &c.analysis {
                    Ok(an) => {
                        text += &format!(
                            "  {} ({} pairs): beta {:?}\n",
                            c.name, c.n_pairs, an.fit.beta
                        );
                        text += &describe_summary(&an.summary);
                    }
                    Err(e) => text += &format!("  {} ({} pairs): error: {e}\n", c.name, c.n_pairs),
                }
            }
            text += &format!("  by intercept: {}\n", result.by_intercept.join(" > "));
            emit(&f.io.output, &out, &text)
        }
        Command::Simulate(a) => {
            let config = match &a.config {
                Some(path) => {
                    let bytes = read_all(path)?;
                    serde_json::from_slice::<SimConfig>(&bytes)
                        .map_err(|e| Error::Input(format!("simulation config: {e}")))?
                }
                None => {
                    let latent = match a.baseline {
                        Some(baseline) => LatentModel::TwoFactor(TwoFactorParams {
                            baseline,
                            habituation_amplitude: a.habituation,
                            habituation_rate: a.habituation_rate,
                            tedium_slope: a.tedium,
                        }),
                        None => LatentModel::QuadraticLatent {
                            beta: [a.beta0, a.beta1, a.beta2],
                        },
                    };
                    let mut c = SimConfig::single_track(a.users, a.exposures, latent, a.seed);
                    c.tracks[0].track_id = a.track_id.clone();
                    c.timestamps = TimestampModel::Fixed {
                        gap_seconds: a.gap_seconds,
                    };
                    c.user_prefix = a.user_prefix.clone();
                    c
                }
            };
            let records = simgen::simulate(&config)?;
            let mut out = Vec::new();
            match a.format {
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(&mut out);
                    for r in &records {
                        w.serialize(r).map_err(Error::from)?;
                    }
                    w.flush().map_err(Error::from)?;
                }
                Format::Jsonl => {
                    for r in &records {
                        serde_json::to_writer(&mut out, r)?;
                        out.push(b'\n');
                    }
                }
            }
            let summary = format!(
                "simulate: {} users x {} tracks x {} exposures, seed {}\n",
                config.n_users,
                config.tracks.len(),
                config.n_exposures,
                config.seed
            );
            emit(&a.output, &out, &summary)
        }
        Command::Plot(a) => {
            let curve = ExposureCurve::read_csv(open_input(&a.io.input)?)?;
            let beta = match &a.fit {
                Some(path) => {
                    let lines = report::read_lines(open_input(path)?)?;
                    let fit = report::first_fit(&lines).ok_or_else(|| {
                        Error::Input(format!("no fit record in {}", path.display()))
                    })?;
                    Some(fit.beta()?)
                }
                None => None,
            };
            let svg = render_svg(&curve, beta.as_ref(), &a.title)?;
            let summary = format!(
                "plot: {} points{}\n",
                curve.present().count(),
                if beta.is_some() {
                    " with fit overlay"
                } else {
                    ""
                }
            );
            emit(&a.io.output, svg.as_bytes(), &summary)
        }
    }
}
