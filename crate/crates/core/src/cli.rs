//! Batch front end: each subcommand reads a config, runs one library
//! operation and writes its CSV / JSON outputs atomically into `--out`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::analysis::ffu::{min_policy_for_ffu, FfuResult};
use crate::analysis::metrics::{metric_report, write_cdf_rows, CdfSeries};
use crate::analysis::sweep::run_sweep;
use crate::analysis::theory::mse_grid;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::mechanisms::{group_key_string, SeededRng};
use crate::splitting::unit_split_scheme;
use crate::table::format_number;
use crate::workload::{execute, execute_zcdp_baseline, write_answers_csv};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Exit status for configuration and validation failures.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for failures while running (I/O and the like).
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "przcdp",
    version,
    about = "Per-record zCDP: unit splitting, private aggregation and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    /// Parses an argument vector (program name first) without exiting on
    /// errors.
    pub fn from_args<I, T>(args: I) -> Result<Self>
    where
        I: IntoIterator<Item = T>,
        T: Into<std::ffi::OsString> + Clone,
    {
        Cli::try_parse_from(args).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Noise seed; overrides the config's `seed`.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
    /// Release exact answers (testing only; provides no privacy).
    #[arg(long)]
    pub no_noise: bool,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Unit-split the input table: split.csv.
    Split(CommonArgs),
    /// Run the workload: answers.csv, trace.csv, policy.json, ledger.json.
    Run(CommonArgs),
    /// Global zCDP baseline with top-coding: baseline_answers.csv,
    /// baseline_trace.csv, baseline.json.
    Baseline(CommonArgs),
    /// Threshold/budget sweep: are_sweep.csv, policy_cdf.csv, sweep_summary.csv.
    Sweep(CommonArgs),
    /// Theoretical MSE grid for clamped Pareto sums: mse_ratio.csv.
    MseTheory(CommonArgs),
    /// Minimal fitness-for-use policies: ffu_cdf.csv, ffu_budgets.csv.
    Ffu(CommonArgs),
    /// Per-record policy and realized losses of a run: record_metrics.csv,
    /// realized_cdf.csv, are.csv, metrics.json.
    Metrics(CommonArgs),
}

impl Command {
    pub fn common(&self) -> &CommonArgs {
        match self {
            Command::Split(a)
            | Command::Run(a)
            | Command::Baseline(a)
            | Command::Sweep(a)
            | Command::MseTheory(a)
            | Command::Ffu(a)
            | Command::Metrics(a) => a,
        }
    }
}

struct Context {
    config: RunConfig,
    seed: u64,
    out: PathBuf,
    noise: bool,
}

impl Context {
    fn new(args: &CommonArgs) -> Result<Self> {
        let config = RunConfig::load(&args.config)?;
        let seed = args.seed.or(config.seed).unwrap_or(0);
        fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
        Ok(Context {
            config,
            seed,
            out: args.out.clone(),
            noise: !args.no_noise,
        })
    }

    fn rng(&self) -> SeededRng {
        let rng = SeededRng::new(self.seed);
        if self.noise {
            rng
        } else {
            rng.without_noise()
        }
    }

    fn comment(&self) -> String {
        let mut c = format!("przcdp {VERSION} seed={}", self.seed);
        if !self.noise {
            c.push_str(" no-noise");
        }
        c
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Writes through a temporary file in the destination directory, renamed
/// into place on success.
pub fn write_atomic(path: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        f(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|e| Error::io(path, e))
    })
}

/// CSV with a leading `# comment` line and the given header.
fn write_csv(
    path: &Path,
    comment: &str,
    header: &[&str],
    body: impl FnOnce(&mut csv::Writer<&mut dyn Write>) -> Result<()>,
) -> Result<()> {
    write_atomic(path, |w| {
        writeln!(w, "# {comment}").map_err(|e| Error::io(path, e))?;
        let mut c = crate::table::csv_writer(w);
        c.write_record(header)?;
        body(&mut c)?;
        c.flush().map_err(|e| Error::io(path, e))
    })
}

fn cmd_split(ctx: &Context) -> Result<Vec<PathBuf>> {
    let thresholds = ctx.config.thresholds()?;
    let table = ctx.config.table()?;
    let split = unit_split_scheme(&table, &thresholds)?;
    let path = ctx.path("split.csv");
    let comment = ctx.comment();
    write_atomic(&path, |w| split.write_csv_with_comment(w, Some(&comment)))?;
    Ok(vec![path])
}

fn cmd_run(ctx: &Context) -> Result<Vec<PathBuf>> {
    let workload = ctx.config.workload()?;
    let table = ctx.config.table()?;
    let out = execute(&workload, &table, &ctx.rng())?;
    let comment = ctx.comment();
    let files = [
        ctx.path("answers.csv"),
        ctx.path("trace.csv"),
        ctx.path("policy.json"),
        ctx.path("ledger.json"),
    ];
    write_atomic(&files[0], |w| {
        write_answers_csv(&out.answers, &out.trace, w, Some(&comment))
    })?;
    write_atomic(&files[1], |w| out.trace.write_csv(w, Some(&comment)))?;
    write_json(&files[2], &out.policy)?;
    write_json(&files[3], &out.trace.ledger)?;
    Ok(files.to_vec())
}

fn cmd_baseline(ctx: &Context) -> Result<Vec<PathBuf>> {
    let workload = ctx.config.workload()?;
    let table = ctx.config.table()?;
    let (answers, total_rho, trace) = execute_zcdp_baseline(&workload, &table, &ctx.rng())?;
    let comment = ctx.comment();
    let files = [
        ctx.path("baseline_answers.csv"),
        ctx.path("baseline_trace.csv"),
        ctx.path("baseline.json"),
    ];
    write_atomic(&files[0], |w| {
        write_answers_csv(&answers, &trace, w, Some(&comment))
    })?;
    write_atomic(&files[1], |w| trace.write_csv(w, Some(&comment)))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        total_rho: f64,
        top_codes: &'a std::collections::BTreeMap<String, f64>,
    }
    write_json(
        &files[2],
        &Summary {
            total_rho,
            top_codes: &workload.top_codes,
        },
    )?;
    Ok(files.to_vec())
}

fn cmd_sweep(ctx: &Context) -> Result<Vec<PathBuf>> {
    let sweep = ctx.config.sweep()?;
    let table = ctx.config.table()?;
    let result = run_sweep(&table, sweep, ctx.seed, ctx.noise)?;
    let comment = ctx.comment();
    let files = [
        ctx.path("are_sweep.csv"),
        ctx.path("policy_cdf.csv"),
        ctx.path("sweep_summary.csv"),
    ];
    write_csv(
        &files[0],
        &comment,
        &[
            "attribute",
            "threshold",
            "rho",
            "prop_split",
            "query_id",
            "group_key",
            "replicate",
            "are",
        ],
        |w| {
            for r in &result.rows {
                w.write_record([
                    r.attribute.clone(),
                    format_number(r.threshold),
                    format_number(r.rho),
                    format_number(r.prop_split),
                    r.query_id.clone(),
                    group_key_string(&r.group_key),
                    r.replicate.to_string(),
                    format_number(r.are),
                ])?;
            }
            Ok(())
        },
    )?;
    write_csv(
        &files[1],
        &comment,
        &["scheme", "rho", "loss", "cum_frac"],
        |w| {
            for p in &result.points {
                let prefix = [
                    format!("{}:{}", p.attribute, format_number(p.threshold)),
                    format_number(p.rho),
                ];
                write_cdf_rows(w, &prefix, &p.policy_cdf)?;
            }
            Ok(())
        },
    )?;
    write_csv(
        &files[2],
        &comment,
        &["attribute", "threshold", "rho", "prop_split", "median_are"],
        |w| {
            for p in &result.points {
                w.write_record([
                    p.attribute.clone(),
                    format_number(p.threshold),
                    format_number(p.rho),
                    format_number(p.prop_split),
                    p.median_are.map(format_number).unwrap_or_default(),
                ])?;
            }
            Ok(())
        },
    )?;
    Ok(files.to_vec())
}

fn cmd_mse_theory(ctx: &Context) -> Result<Vec<PathBuf>> {
    let m = ctx.config.mse_theory()?;
    let rows = mse_grid(m.n, &m.alphas, &m.rhos, &m.deltas.values())?;
    let path = ctx.path("mse_ratio.csv");
    write_csv(
        &path,
        &ctx.comment(),
        &["alpha", "rho", "delta", "ratio", "optimal"],
        |w| {
            for r in &rows {
                w.write_record([
                    format_number(r.alpha),
                    format_number(r.rho),
                    format_number(r.delta),
                    format_number(r.ratio),
                    r.optimal.to_string(),
                ])?;
            }
            Ok(())
        },
    )?;
    Ok(vec![path])
}

fn cmd_ffu(ctx: &Context) -> Result<Vec<PathBuf>> {
    let f = ctx.config.ffu()?;
    let workload = ctx.config.workload()?;
    let table = ctx.config.table()?;
    let results: Vec<FfuResult> = f
        .delta_targets
        .iter()
        .map(|&d| min_policy_for_ffu(&workload, &table, d, f.gamma))
        .collect::<Result<_>>()?;
    let comment = ctx.comment();
    let files = [ctx.path("ffu_cdf.csv"), ctx.path("ffu_budgets.csv")];
    write_csv(
        &files[0],
        &comment,
        &["delta_target", "loss", "cum_frac"],
        |w| {
            for r in &results {
                write_cdf_rows(w, &[format_number(r.delta_target)], &r.cdf)?;
            }
            Ok(())
        },
    )?;
    write_csv(
        &files[1],
        &comment,
        &["delta_target", "query_id", "group_key", "rho"],
        |w| {
            for r in &results {
                for b in &r.budgets {
                    w.write_record([
                        format_number(r.delta_target),
                        b.query_id.clone(),
                        group_key_string(&b.group_key),
                        format_number(b.rho),
                    ])?;
                }
            }
            Ok(())
        },
    )?;
    Ok(files.to_vec())
}

fn cmd_metrics(ctx: &Context) -> Result<Vec<PathBuf>> {
    let workload = ctx.config.workload()?;
    let table = ctx.config.table()?;
    let out = execute(&workload, &table, &ctx.rng())?;
    let report = metric_report(&out, &table)?;
    let comment = ctx.comment();
    let files = [
        ctx.path("record_metrics.csv"),
        ctx.path("realized_cdf.csv"),
        ctx.path("are.csv"),
        ctx.path("metrics.json"),
    ];
    write_csv(
        &files[0],
        &comment,
        &["row_id", "policy_loss", "realized_loss"],
        |w| {
            for r in &report.records {
                w.write_record([
                    r.row_id.to_string(),
                    format_number(r.policy_loss),
                    format_number(r.realized_loss),
                ])?;
            }
            Ok(())
        },
    )?;
    let policy = CdfSeries::from_values(report.records.iter().map(|r| r.policy_loss).collect())?;
    let realized =
        CdfSeries::from_values(report.records.iter().map(|r| r.realized_loss).collect())?;
    write_csv(&files[1], &comment, &["series", "loss", "cum_frac"], |w| {
        write_cdf_rows(w, &["policy".to_string()], &policy)?;
        write_cdf_rows(w, &["realized".to_string()], &realized)
    })?;
    write_csv(
        &files[2],
        &comment,
        &["query_id", "group_key", "true_value", "noisy_value", "are"],
        |w| {
            for a in &report.answers {
                w.write_record([
                    a.query_id.clone(),
                    group_key_string(&a.group_key),
                    format_number(a.true_value),
                    a.noisy_value.map(format_number).unwrap_or_default(),
                    a.are.map(format_number).unwrap_or_default(),
                ])?;
            }
            Ok(())
        },
    )?;
    #[derive(Serialize)]
    struct Summary {
        are_quantiles: Option<[f64; 3]>,
        policy_min: f64,
        prop_above_policy_min: f64,
        realized_le_policy: bool,
    }
    write_json(
        &files[3],
        &Summary {
            are_quantiles: report.are_quantiles,
            policy_min: report.policy_min,
            prop_above_policy_min: report.prop_above_policy_min,
            realized_le_policy: report
                .records
                .iter()
                .all(|r| r.realized_loss <= r.policy_loss * (1.0 + 1e-12)),
        },
    )?;
    Ok(files.to_vec())
}

/// Runs one subcommand, returning the files it wrote.
pub fn run_command(command: &Command) -> Result<Vec<PathBuf>> {
    let ctx = Context::new(command.common())?;
    match command {
        Command::Split(_) => cmd_split(&ctx),
        Command::Run(_) => cmd_run(&ctx),
        Command::Baseline(_) => cmd_baseline(&ctx),
        Command::Sweep(_) => cmd_sweep(&ctx),
        Command::MseTheory(_) => cmd_mse_theory(&ctx),
        Command::Ffu(_) => cmd_ffu(&ctx),
        Command::Metrics(_) => cmd_metrics(&ctx),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_RUNTIME
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from([
            "przcdp",
            "run",
            "--config",
            "c.json",
            "--seed",
            "9",
            "--out",
            "o",
            "--no-noise",
            "--jobs",
            "2",
        ])
        .unwrap();
        let a = cli.command.common();
        assert_eq!(a.seed, Some(9));
        assert!(a.no_noise);
        assert_eq!(a.jobs, Some(2));
        assert!(Cli::try_parse_from(["przcdp", "mse-theory", "--config", "x"]).is_ok());
        assert!(Cli::try_parse_from(["przcdp", "run"]).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(
            exit_code(&Error::MissingThreshold("x".into())),
            EXIT_VALIDATION
        );
        let io = Error::io("p", std::io::Error::other("boom"));
        assert_eq!(exit_code(&io), EXIT_RUNTIME);
    }
}
