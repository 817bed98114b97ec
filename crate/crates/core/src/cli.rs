//! Command-line front end: config loading, result files and the validate report.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, EstimatorKind, ExperimentConfig, SweepConfig, SweepVariable};
use crate::harness::{run_sweep, HarnessError, ResultTable};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Harness(#[from] HarnessError),
    /// A failed validation report.
    #[error("{0}")]
    Invalid(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } | CliError::Invalid(_) => EXIT_CONFIG,
            CliError::Harness(HarnessError::Config(_)) => EXIT_CONFIG,
            CliError::Harness(HarnessError::Run { source, .. })
                if matches!(**source, HarnessError::Config(_)) =>
            {
                EXIT_CONFIG
            }
            CliError::Harness(_) => EXIT_NUMERIC,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gevd-mimo",
    version,
    about = "Channel estimation NMSE experiments for massive MIMO uplink"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a sweep and write results.csv, results.json and summary.txt.
    Run {
        /// TOML config, or a results.json from an earlier run. Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        output: PathBuf,
        /// Master seed, overrides `system.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Override a config entry, e.g. `--set system.antennas=64`. Repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Start from the 100-antenna, 10-UE profile instead of the desk profile.
        #[arg(long)]
        paper_scale: bool,
    },
    /// Check a config, dry-run it at small size and estimate memory and runtime.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        paper_scale: bool,
    },
    /// List the available estimators.
    ListEstimators,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Sets `a.b.c = value` in `table`. The value is parsed as TOML and falls back
/// to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError::Parse(format!("override `{assignment}` is not KEY=VALUE")))?;
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Parse(format!("bad override key `{key}`")));
    }
    let mut node = table;
    for part in &path[..path.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Parse(format!("`{part}` in `{key}` is not a table")))?;
    }
    node.insert(path[path.len() - 1].to_string(), value);
    Ok(())
}

/// Layers a TOML config text and `--set` overrides on a base profile. Does not validate.
pub fn build_config(
    base: ExperimentConfig,
    toml_text: Option<&str>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let file = toml_text
        .map(|text| {
            toml::from_str::<toml::Table>(text).map_err(|e| ConfigError::Parse(e.to_string()))
        })
        .transpose()?;
    layer_config(base, file, overrides, seed)
}

fn layer_config(
    base: ExperimentConfig,
    file: Option<toml::Table>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let mut table = toml::Table::try_from(&base).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if let Some(file) = file {
        merge(&mut table, file);
    }
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut config: ExperimentConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    if let Some(s) = seed {
        config.system.seed = s;
    }
    Ok(config)
}

/// [`build_config`] followed by validation.
pub fn resolve_config(
    base: ExperimentConfig,
    toml_text: Option<&str>,
    overrides: &[String],
    seed: Option<u64>,
) -> Result<ExperimentConfig, ConfigError> {
    let config = build_config(base, toml_text, overrides, seed)?;
    config.validate()?;
    Ok(config)
}

/// TOML has no null; an absent key means the same.
fn strip_nulls(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            map.retain(|_, v| !v.is_null());
            map.values_mut().for_each(strip_nulls);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_nulls),
        _ => {}
    }
}

/// Reads a config file. `.json` files may be a bare config or a `results.json`,
/// whose resolved config is used.
fn read_config_file(path: &Path) -> Result<toml::Table, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let parse =
        |e: String| CliError::Config(ConfigError::Parse(format!("{}: {e}", path.display())));
    if path.extension().is_some_and(|e| e == "json") {
        let mut value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| parse(e.to_string()))?;
        if let Some(inner) = value.get_mut("config") {
            value = inner.take();
        }
        strip_nulls(&mut value);
        toml::Table::try_from(value).map_err(|e| parse(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| parse(e.to_string()))
    }
}

fn load_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    paper_scale: bool,
) -> Result<ExperimentConfig, CliError> {
    let file = path.map(read_config_file).transpose()?;
    let base = if paper_scale {
        ExperimentConfig::paper_scale()
    } else {
        ExperimentConfig::default()
    };
    Ok(layer_config(base, file, overrides, seed)?)
}

/// Loads and validates a config: the desk profile (or the paper-scale one),
/// then the file, then the overrides, then the seed.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &[String],
    seed: Option<u64>,
    paper_scale: bool,
) -> Result<ExperimentConfig, CliError> {
    let config = load_config(path, overrides, seed, paper_scale)?;
    config.validate()?;
    Ok(config)
}

pub const CSV_HEADER: &str = "estimator,sweep_variable,sweep_value,nmse,nmse_db,runs,fallbacks";

pub fn results_csv(table: &ResultTable) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{},{}",
            r.estimator,
            r.sweep_variable.name(),
            r.sweep_value,
            r.nmse,
            r.nmse_db,
            r.runs_aggregated,
            r.fallback_count
        );
    }
    out
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    master_seed: u64,
    config: &'a ExperimentConfig,
    results: &'a ResultTable,
}

pub fn results_json(table: &ResultTable, config: &ExperimentConfig) -> String {
    serde_json::to_string_pretty(&ResultsFile {
        master_seed: config.system.seed,
        config,
        results: table,
    })
    .expect("result types serialize")
}

/// NMSE in dB, one column per sweep value.
pub fn summary_text(table: &ResultTable, config: &ExperimentConfig) -> String {
    let sys = &config.system;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "L={} K={} N={} tau_p={} tau_u={} T={} E={} noise={} seed={} runs={}",
        sys.num_cells,
        sys.ues_per_cell,
        sys.antennas,
        sys.tau_p,
        sys.tau_u,
        sys.blocks,
        sys.eval_blocks,
        sys.noise_power,
        sys.seed,
        config.monte_carlo_runs
    );
    let _ = writeln!(out, "NMSE [dB] vs {}", table.sweep_variable.name());
    let _ = write!(out, "{:<20}", "estimator");
    for v in &config.sweep.values {
        let _ = write!(out, "{v:>10}");
    }
    out.push('\n');
    for spec in &config.estimators {
        let label = spec.label();
        let _ = write!(out, "{label:<20}");
        for (_, nmse) in table.curve(&label) {
            let _ = write!(out, "{:>10.2}", 10.0 * nmse.log10());
        }
        out.push('\n');
    }
    out.push('\n');
    for &value in &config.sweep.values {
        let mut ranked: Vec<_> = table
            .rows
            .iter()
            .filter(|r| r.sweep_value == value)
            .collect();
        ranked.sort_by(|a, b| a.nmse.total_cmp(&b.nmse));
        let names: Vec<&str> = ranked.iter().map(|r| r.estimator.as_str()).collect();
        let _ = writeln!(
            out,
            "{}={value:<6} best first: {}",
            table.sweep_variable.name(),
            names.join(" < ")
        );
    }
    let fallbacks: usize = table.rows.iter().map(|r| r.fallback_count).sum();
    if fallbacks > 0 {
        let _ = writeln!(out, "regularization fallbacks: {fallbacks}");
    }
    out
}

pub fn emit_results(
    table: &ResultTable,
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let files = [
        ("results.csv", results_csv(table)),
        ("results.json", results_json(table, config)),
        ("summary.txt", summary_text(table, config)),
    ];
    for (name, body) in files {
        let path = dir.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResourceEstimate {
    pub dry_run_antennas: usize,
    pub dry_run_seconds: f64,
    /// Link covariances held per run, each `antennas × antennas`.
    pub link_covariances: usize,
    pub antennas: usize,
    /// Peak working set of one run, bytes.
    pub memory_per_run: u64,
    pub runs_in_parallel: usize,
    pub estimated_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidationReport {
    pub problems: Vec<String>,
    pub estimate: Option<ResourceEstimate>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.problems.is_empty()
    }
}

/// Rough operation count of one run, used to scale the dry-run time.
fn work(config: &ExperimentConfig, value: usize) -> f64 {
    let sys = config.system_at(value);
    let n = sys.antennas as f64;
    let k = sys.ues_per_cell as f64;
    let ues = sys.num_ues() as f64;
    let tau_c = sys.tau_c() as f64;
    let data_driven = config.estimators.iter().any(|e| e.kind.is_data_driven());
    let improved = config
        .estimators
        .iter()
        .filter(|e| {
            matches!(
                e.kind,
                EstimatorKind::GevdImpr | EstimatorKind::MmseRandomImpr
            )
        })
        .count() as f64;
    let per_block = n * n * ues + n * ues * tau_c;
    let estimation = if data_driven {
        sys.blocks as f64 * (per_block + n * n * (tau_c + k))
    } else {
        0.0
    };
    let evaluation = sys.eval_blocks as f64
        * (per_block + n * n * k * config.estimators.len() as f64 + improved * k * n * n * n);
    let setup = config.estimators.len() as f64 * k * n * n * n + ues * n * n * n;
    estimation + evaluation + setup
}

fn dry_run_config(config: &ExperimentConfig) -> ExperimentConfig {
    let mut dry = config.clone();
    dry.system.antennas = config.system.antennas.min(8);
    dry.system.blocks = dry.system.blocks.min(50);
    dry.system.eval_blocks = dry.system.eval_blocks.min(10);
    dry.monte_carlo_runs = 1;
    let first = config.sweep.values[0];
    dry.sweep = SweepConfig {
        variable: config.sweep.variable,
        values: vec![match config.sweep.variable {
            SweepVariable::Blocks => first.min(50),
            SweepVariable::TauP => first,
        }],
    };
    for e in dry.estimators.iter_mut() {
        if let Some(r) = e.rank.as_mut() {
            *r = (*r).min(dry.system.antennas);
        }
    }
    dry
}

/// Checks every config invariant, then dry-runs one sweep point at `N ≤ 8`
/// and scales its runtime to the full experiment. Problems are reported, not
/// returned as errors.
pub fn validate_report(config: &ExperimentConfig) -> ValidationReport {
    if let Err(e) = config.validate() {
        return ValidationReport {
            problems: vec![e.to_string()],
            estimate: None,
        };
    }
    let dry = dry_run_config(config);
    let start = Instant::now();
    if let Err(e) = run_sweep(&dry) {
        return ValidationReport {
            problems: vec![format!("dry run failed: {e}")],
            estimate: None,
        };
    }
    let dry_seconds = start.elapsed().as_secs_f64();

    let threads = rayon::current_num_threads().max(1);
    let total_work: f64 = config
        .sweep
        .values
        .iter()
        .map(|&v| work(config, v) * config.monte_carlo_runs as f64)
        .sum();
    let dry_work = work(&dry, dry.sweep.values[0]);
    let n = config.system.antennas;
    let links = config.system.num_ues();
    // link covariances and their factors, per-UE pilot covariances and filters
    let matrices = 2 * links + config.system.ues_per_cell * (config.estimators.len() + 3) + 8;
    ValidationReport {
        problems: Vec::new(),
        estimate: Some(ResourceEstimate {
            dry_run_antennas: dry.system.antennas,
            dry_run_seconds: dry_seconds,
            link_covariances: links,
            antennas: n,
            memory_per_run: (matrices * n * n * 16) as u64,
            runs_in_parallel: threads,
            estimated_seconds: dry_seconds * total_work / dry_work / threads as f64,
        }),
    }
}

fn format_report(config: &ExperimentConfig, report: &ValidationReport) -> String {
    let Some(r) = &report.estimate else {
        return report
            .problems
            .iter()
            .map(|p| format!("problem: {p}\n"))
            .collect();
    };
    let runs = config.sweep.values.len() * config.monte_carlo_runs;
    format!(
        "OK: {} estimators, {} sweep points, {} runs total\n\
         dry run at N={}: {:.3} s\n\
         memory: {} link covariances of {}x{}, ~{:.1} MiB per run, {} runs in parallel\n\
         estimated runtime: ~{:.0} s\n",
        config.estimators.len(),
        config.sweep.values.len(),
        runs,
        r.dry_run_antennas,
        r.dry_run_seconds,
        r.link_covariances,
        r.antennas,
        r.antennas,
        r.memory_per_run as f64 / (1u64 << 20) as f64,
        r.runs_in_parallel,
        r.estimated_seconds
    )
}

pub fn list_estimators() -> String {
    let mut out = String::new();
    for kind in EstimatorKind::ALL {
        let rank = if kind.needs_rank() { " (rank)" } else { "" };
        let _ = writeln!(out, "{:<18}{:<8}{}", kind.name(), rank, kind.description());
    }
    out
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run {
            config,
            output,
            seed,
            overrides,
            paper_scale,
        } => {
            let config = parse_config(config.as_deref(), &overrides, seed, paper_scale)?;
            let table = run_sweep(&config)?;
            emit_results(&table, &config, &output)?;
            Ok(summary_text(&table, &config))
        }
        Command::Validate {
            config,
            overrides,
            paper_scale,
        } => {
            let config = load_config(config.as_deref(), &overrides, None, paper_scale)?;
            let report = validate_report(&config);
            let text = format_report(&config, &report);
            if report.is_ok() {
                Ok(text)
            } else {
                Err(CliError::Invalid(text))
            }
        }
        Command::ListEstimators => Ok(list_estimators()),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
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
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            EXIT_OK
        }
        Err(CliError::Invalid(report)) => {
            eprint!("{report}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EstimatorSpec;

    #[test]
    fn overrides_parse_values_and_paths() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "system.antennas=16").unwrap();
        apply_override(&mut t, "sweep.values=[1, 2]").unwrap();
        apply_override(&mut t, "note=hello world").unwrap();
        assert_eq!(t["system"]["antennas"].as_integer(), Some(16));
        assert_eq!(t["sweep"]["values"].as_array().unwrap().len(), 2);
        assert_eq!(t["note"].as_str(), Some("hello world"));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "system.antennas.x=1").is_err());
    }

    #[test]
    fn file_and_overrides_layer_on_defaults() {
        let text = "monte_carlo_runs = 3\n[system]\nantennas = 24\n";
        let cfg = resolve_config(
            ExperimentConfig::default(),
            Some(text),
            &["system.tau_p=5".into()],
            Some(99),
        )
        .unwrap();
        assert_eq!(cfg.monte_carlo_runs, 3);
        assert_eq!(cfg.system.antennas, 24);
        assert_eq!(cfg.system.tau_p, 5);
        assert_eq!(cfg.system.seed, 99);
        assert_eq!(
            cfg.system.ues_per_cell,
            ExperimentConfig::default().system.ues_per_cell
        );
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let base = ExperimentConfig::default;
        assert!(resolve_config(base(), None, &["system.tau_p=1".into()], None).is_err());
        assert!(resolve_config(base(), None, &["system.num_cells=3".into()], None).is_err());
        assert!(resolve_config(base(), Some("[system]\nbogus = 1"), &[], None).is_err());
        assert!(resolve_config(base(), Some("not toml ["), &[], None).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(main_with_args(["gevd-mimo", "list-estimators"]), EXIT_OK);
        assert_eq!(
            main_with_args(["gevd-mimo", "validate", "--set", "system.num_cells=2"]),
            EXIT_CONFIG
        );
        assert_eq!(main_with_args(["gevd-mimo", "frobnicate"]), EXIT_CONFIG);
        let numeric = CliError::Harness(HarnessError::ZeroTraceCovariance);
        assert_eq!(numeric.exit_code(), EXIT_NUMERIC);
    }

    #[test]
    fn csv_layout() {
        let table = ResultTable {
            sweep_variable: SweepVariable::Blocks,
            rows: vec![crate::harness::NmseResult {
                estimator: EstimatorSpec::ranked(EstimatorKind::Gevd, 4).label(),
                sweep_variable: SweepVariable::Blocks,
                sweep_value: 75,
                nmse: 0.125,
                nmse_db: 10.0 * 0.125f64.log10(),
                runs_aggregated: 2,
                fallback_count: 0,
            }],
        };
        let csv = results_csv(&table);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[..3], ["gevd_4", "T", "75"]);
        assert_eq!(row[3].parse::<f64>().unwrap(), 0.125);
        assert_eq!(row[5..], ["2", "0"]);
    }

    #[test]
    fn list_has_every_estimator() {
        let text = list_estimators();
        for kind in EstimatorKind::ALL {
            assert!(text.contains(kind.name()));
        }
    }

    #[test]
    fn validate_flags_layout_instead_of_failing() {
        let cfg = build_config(
            ExperimentConfig::default(),
            None,
            &["system.num_cells=3".into()],
            None,
        )
        .unwrap();
        let report = validate_report(&cfg);
        assert!(!report.is_ok());
        assert!(report.problems[0].contains("unsupported layout"));
    }

    #[test]
    fn validate_paper_scale_counts_seventy_covariances() {
        let mut cfg = ExperimentConfig::paper_scale();
        cfg.sweep.values = vec![75];
        let report = validate_report(&cfg);
        let est = report.estimate.expect("valid config");
        assert_eq!(
            (est.link_covariances, est.antennas, est.dry_run_antennas),
            (70, 100, 8)
        );
        assert!(est.memory_per_run >= 70 * 100 * 100 * 16);
        assert!(est.estimated_seconds > 0.0);
    }

    #[test]
    fn emitted_json_config_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = resolve_config(
            ExperimentConfig::default(),
            None,
            &[
                "system.antennas=6".into(),
                "system.blocks=5".into(),
                "estimators=[{kind=\"gevd\", rank=2}]".into(),
            ],
            Some(4),
        )
        .unwrap();
        let table = ResultTable {
            sweep_variable: cfg.sweep.variable,
            rows: Vec::new(),
        };
        emit_results(&table, &cfg, dir.path()).unwrap();
        let back = parse_config(Some(&dir.path().join("results.json")), &[], None, false).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(
            fs::read_to_string(dir.path().join("results.csv"))
                .unwrap()
                .trim(),
            CSV_HEADER
        );
    }
}
