//! Batch front end: a strict JSON run config in, field files and a manifest
//! out.
//!
//! Output files never contain the output directory, the worker count or any
//! timing, so the same config and seed give byte-identical files wherever and
//! however they are run. The manifest is the resolved config and can be fed
//! back with `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{extract_features, frequency_from_series, g_series, FeatureMeasure, DEFAULT_FEATURE_PERCENTILE};
use crate::bench::{oracle_rows, rows_to_csv, table_header};
use crate::dynamics::{PhaseState, SystemSpec};
use crate::ld::{ld_field, stochastic_ld_field, time_average_field, FieldTriplet, LdParams, ScalarField};
use crate::sections::{initial_conditions, poincare_ensemble, uniform_feasible_sample, CrossingSet, SectionSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Directory used when neither the config nor `--out` names one.
pub const DEFAULT_OUT_DIR: &str = "ldaction-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
#[value(rename_all = "kebab-case")]
pub enum Command {
    Field,
    StochasticField,
    Poincare,
    TimeAverage,
    Frequency,
    Extract,
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    #[default]
    F64bin,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Ignored when `--out` is given; never written to any output file.
    #[serde(default, skip_serializing)]
    pub directory: Option<PathBuf>,
    #[serde(default)]
    pub format: OutputFormat,
}

/// Poincaré maps of `orbits` start points spread evenly over the feasible
/// section grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoincareSpec {
    pub orbits: usize,
    pub t_max: f64,
    pub max_crossings: usize,
    pub dt: f64,
}

/// `g(τ)` on `samples` evenly spaced horizons in `[0, tau_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub tau_max: f64,
    pub samples: usize,
    pub dt: f64,
    #[serde(default)]
    pub s_inf: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtractSpec {
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default)]
    pub measure: FeatureMeasure,
}

fn default_percentile() -> f64 {
    DEFAULT_FEATURE_PERCENTILE
}

/// One run. Blocks a command does not use must be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ld: Option<LdParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<SectionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poincare: Option<PoincareSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<FrequencySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extract: Option<ExtractSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub global_seed: u64,
    /// Filled in on the manifest; informational when read back.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub library_version: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("{check} failed")]
    CheckFailed { check: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
            CliError::CheckFailed { .. } => EXIT_CHECK_FAILED,
        }
    }
}

fn config_err(e: crate::Error) -> CliError {
    match e {
        crate::Error::EmptyGrid => CliError::Config("empty feasible set".into()),
        e => CliError::Config(e.to_string()),
    }
}

fn runtime_err(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl RunConfig {
    /// Strict parse; errors carry serde_json's line/column and key names.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// Block presence and parameter checks. Does not touch the file system.
    pub fn validate(&self) -> Result<(), CliError> {
        let c = self.command;
        let present = [
            ("system", self.system.is_some()),
            ("ld", self.ld.is_some()),
            ("section", self.section.is_some()),
            ("poincare", self.poincare.is_some()),
            ("frequency", self.frequency.is_some()),
            ("extract", self.extract.is_some()),
        ];
        let needed: &[&str] = match c {
            Command::Field | Command::StochasticField | Command::TimeAverage => &["system", "ld", "section"],
            Command::Extract => &["system", "ld", "section", "extract"],
            Command::Poincare => &["system", "section", "poincare"],
            Command::Frequency => &["system", "frequency"],
            Command::Bench => &[],
        };
        for (name, is_present) in present {
            if needed.contains(&name) && !is_present {
                return Err(CliError::Config(format!("command `{}` needs a `{name}` block", command_name(c))));
            }
            if !needed.contains(&name) && is_present {
                return Err(CliError::Config(format!("command `{}` does not use a `{name}` block", command_name(c))));
            }
        }
        if let Some(sys) = &self.system {
            sys.validate().map_err(config_err)?;
        }
        if let (Some(sys), Some(section)) = (&self.system, &self.section) {
            section.validate(sys).map_err(config_err)?;
        }
        if let (Some(sys), Some(ld)) = (&self.system, &self.ld) {
            ld.validate(sys).map_err(config_err)?;
            match (c, ld.ensemble.is_some()) {
                (Command::StochasticField, false) => {
                    return Err(CliError::Config("`stochastic-field` needs `ld.ensemble`".into()))
                }
                (Command::Field, true) => {
                    return Err(CliError::Config("`ld.ensemble` given; use `stochastic-field`".into()))
                }
                _ => {}
            }
        }
        if let Some(p) = &self.poincare {
            if p.orbits == 0 || p.max_crossings == 0 || !(p.t_max > 0.0) || !(p.dt > 0.0) {
                return Err(CliError::Config("poincare: need orbits, max_crossings, t_max, dt > 0".into()));
            }
            if !matches!(self.section, Some(SectionSpec::EnergySection { .. })) {
                return Err(CliError::Config("poincare: the section must be an energy section".into()));
            }
        }
        if let Some(f) = &self.frequency {
            if f.samples < 2 || !(f.tau_max > 0.0) || !(f.dt > 0.0) {
                return Err(CliError::Config("frequency: need samples >= 2 and tau_max, dt > 0".into()));
            }
            if let Some(sys) = &self.system {
                if f.q.len() != sys.dof() || f.p.len() != sys.dof() {
                    return Err(CliError::Config(format!(
                        "frequency: q and p need {} entries each",
                        sys.dof()
                    )));
                }
            }
        }
        if let Some(e) = &self.extract {
            if !(0.0..100.0).contains(&e.percentile) {
                return Err(CliError::Config("extract: percentile must lie in [0, 100)".into()));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides and pins every seed to `global_seed`.
    pub fn resolve(mut self, seed: Option<u64>) -> Self {
        if let Some(seed) = seed {
            self.global_seed = seed;
        }
        if let Some(ens) = self.ld.as_mut().and_then(|ld| ld.ensemble.as_mut()) {
            ens.seed = self.global_seed;
        }
        self.library_version = Some(env!("CARGO_PKG_VERSION").to_string());
        self
    }
}

fn command_name(c: Command) -> String {
    c.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

#[derive(Debug, Parser)]
#[command(name = "ldaction", version, about = "Action-based Lagrangian descriptor fields")]
pub struct Args {
    pub command: Command,
    /// Run config (strict JSON). Optional for `bench`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Global seed, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Does not affect results.
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(&args) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("ldaction: {e}");
            e.exit_code()
        }
    }
}

pub fn run(args: &Args) -> Result<(), CliError> {
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, e.g. on a second call in-process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let config = RunConfig::from_json(&text)?;
            if config.command != args.command {
                return Err(CliError::Config(format!(
                    "config is for `{}` but `{}` was requested",
                    command_name(config.command),
                    command_name(args.command)
                )));
            }
            config
        }
        None if args.command == Command::Bench => RunConfig {
            command: Command::Bench,
            system: None,
            ld: None,
            section: None,
            poincare: None,
            frequency: None,
            extract: None,
            output: OutputSpec::default(),
            global_seed: 0,
            library_version: None,
        },
        None => return Err(CliError::Config("--config is required".into())),
    };
    let out = args
        .out
        .clone()
        .or_else(|| config.output.directory.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let config = config.resolve(args.seed);
    config.validate()?;
    if config.command == Command::Bench {
        return bench(args.config.is_some() || args.out.is_some(), &out);
    }
    let files = execute(&config)?;
    write_outputs(&out, &config, &files)
}

fn bench(write: bool, out: &Path) -> Result<(), CliError> {
    let rows = oracle_rows().map_err(runtime_err)?;
    println!("{}", table_header());
    for r in &rows {
        println!("{r}");
    }
    if write {
        fs::create_dir_all(out).map_err(runtime_err)?;
        fs::write(out.join("bench.csv"), rows_to_csv(&rows)).map_err(runtime_err)?;
    }
    match rows.iter().filter(|r| !r.pass).count() {
        0 => Ok(()),
        n => Err(CliError::CheckFailed {
            check: format!("{n} bench row(s)"),
        }),
    }
}

/// A named output file's bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Runs the pipeline and renders every output file in memory. Nothing is
/// written, so a failing run leaves no partial outputs.
pub fn execute(config: &RunConfig) -> Result<Vec<OutputFile>, CliError> {
    config.validate()?;
    let echo: serde_json::Value = serde_json::to_value(config).expect("config serialises");
    let format = config.output.format;
    let sys = config.system.as_ref();
    match config.command {
        Command::Field | Command::StochasticField => {
            let t = compute_triplet(config)?;
            Ok(render_fields(&[("forward", &t.forward), ("backward", &t.backward), ("total", &t.total)], format, &echo))
        }
        Command::TimeAverage => {
            let t = compute_triplet(config)?;
            let avg = time_average_field(&t, config.ld.as_ref().expect("validated")).map_err(runtime_err)?;
            Ok(render_fields(&[("time_average", &avg)], format, &echo))
        }
        Command::Extract => {
            let t = compute_triplet(config)?;
            let spec = config.extract.as_ref().expect("validated");
            let named = [("forward", &t.forward), ("backward", &t.backward), ("total", &t.total)];
            let mut files = render_fields(&named, format, &echo);
            let mut csv = String::from("component,i,j,x,y\n");
            for (name, field) in named {
                let set = extract_features(field, spec.percentile, spec.measure).map_err(runtime_err)?;
                for (&(i, j), p) in set.cells.iter().zip(&set.points) {
                    let _ = writeln!(csv, "{name},{i},{j},{},{}", p[0], p[1]);
                }
            }
            files.push(OutputFile {
                name: "features.csv".into(),
                bytes: csv.into_bytes(),
            });
            Ok(files)
        }
        Command::Poincare => {
            let sys = sys.expect("validated");
            let section = config.section.as_ref().expect("validated");
            let spec = config.poincare.as_ref().expect("validated");
            let grid = initial_conditions(sys, section).map_err(config_err)?;
            if grid.feasible_count() == 0 {
                return Err(CliError::Config("empty feasible set".into()));
            }
            let starts = uniform_feasible_sample(&grid, spec.orbits);
            let orbits =
                poincare_ensemble(sys, &starts, section, spec.t_max, spec.max_crossings, spec.dt).map_err(runtime_err)?;
            Ok(render_crossings(&orbits, format, &echo))
        }
        Command::Frequency => {
            let sys = sys.expect("validated");
            let spec = config.frequency.as_ref().expect("validated");
            let x0 = PhaseState::new(&spec.q, &spec.p, 0.0).map_err(config_err)?;
            let n = spec.samples;
            let taus: Vec<f64> = (0..n).map(|k| spec.tau_max * k as f64 / (n - 1) as f64).collect();
            let series = g_series(sys, &x0, &taus, spec.dt, spec.s_inf).map_err(runtime_err)?;
            let estimate = frequency_from_series(&series).map_err(runtime_err)?;
            let columns: Vec<[f64; 2]> = series.iter().map(|&(t, g)| [t, g]).collect();
            let mut files = render_table("g_series", &["tau", "g"], &columns, format, &echo);
            let json = serde_json::json!({ "estimate": estimate, "config": echo });
            files.push(OutputFile {
                name: "frequency.json".into(),
                bytes: pretty(&json),
            });
            Ok(files)
        }
        Command::Bench => Err(CliError::Config("bench does not produce field outputs".into())),
    }
}

fn compute_triplet(config: &RunConfig) -> Result<FieldTriplet, CliError> {
    let sys = config.system.as_ref().expect("validated");
    let ld = config.ld.as_ref().expect("validated");
    let section = config.section.as_ref().expect("validated");
    let grid = initial_conditions(sys, section).map_err(config_err)?;
    let result = if ld.ensemble.is_some() {
        stochastic_ld_field(sys, &grid, ld)
    } else {
        ld_field(sys, &grid, ld)
    };
    result.map_err(|e| match e {
        crate::Error::EmptyGrid => config_err(e),
        e => runtime_err(e),
    })
}

fn pretty(value: &serde_json::Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("json serialises");
    s.push('\n');
    s.into_bytes()
}

/// Run lengths of alternating mask values, starting with a run of `true`
/// (possibly of length zero).
pub fn mask_rle(mask: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = true;
    let mut len = 0;
    for &m in mask {
        if m == current {
            len += 1;
        } else {
            runs.push(len);
            current = m;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

fn f64_bytes(values: impl Iterator<Item = f64>) -> Vec<u8> {
    values.flat_map(f64::to_le_bytes).collect()
}

fn render_fields(fields: &[(&str, &ScalarField)], format: OutputFormat, echo: &serde_json::Value) -> Vec<OutputFile> {
    match format {
        OutputFormat::F64bin => {
            let mut files = Vec::new();
            for (name, f) in fields {
                files.push(OutputFile {
                    name: format!("{name}.f64bin"),
                    bytes: f64_bytes(f.values.iter().copied()),
                });
                let meta = serde_json::json!({
                    "name": name,
                    "component": f.metadata.component,
                    "nx": f.nx(),
                    "ny": f.ny(),
                    "x_axis": f.x_axis,
                    "y_axis": f.y_axis,
                    "mask_rle": mask_rle(&f.mask),
                    "config": echo,
                });
                files.push(OutputFile {
                    name: format!("{name}.meta.json"),
                    bytes: pretty(&meta),
                });
            }
            files
        }
        OutputFormat::Csv => {
            let first = fields[0].1;
            let mut csv = String::from("x,y");
            for (name, _) in fields {
                csv.push(',');
                csv.push_str(name);
            }
            csv.push_str(",mask\n");
            for j in 0..first.ny() {
                for i in 0..first.nx() {
                    let _ = write!(csv, "{},{}", first.x(i), first.y(j));
                    for (_, f) in fields {
                        let _ = write!(csv, ",{}", f.get(i, j));
                    }
                    let _ = writeln!(csv, ",{}", u8::from(first.is_valid(i, j)));
                }
            }
            vec![OutputFile {
                name: "fields.csv".into(),
                bytes: csv.into_bytes(),
            }]
        }
    }
}

fn render_table<const N: usize>(
    name: &str,
    columns: &[&str; N],
    rows: &[[f64; N]],
    format: OutputFormat,
    echo: &serde_json::Value,
) -> Vec<OutputFile> {
    match format {
        OutputFormat::F64bin => {
            let meta = serde_json::json!({
                "name": name,
                "columns": columns.as_slice(),
                "rows": rows.len(),
                "config": echo,
            });
            vec![
                OutputFile {
                    name: format!("{name}.f64bin"),
                    bytes: f64_bytes(rows.iter().flatten().copied()),
                },
                OutputFile {
                    name: format!("{name}.meta.json"),
                    bytes: pretty(&meta),
                },
            ]
        }
        OutputFormat::Csv => {
            let mut csv = columns.join(",");
            csv.push('\n');
            for row in rows {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                csv.push_str(&cells.join(","));
                csv.push('\n');
            }
            vec![OutputFile {
                name: format!("{name}.csv"),
                bytes: csv.into_bytes(),
            }]
        }
    }
}

fn render_crossings(orbits: &[CrossingSet], format: OutputFormat, echo: &serde_json::Value) -> Vec<OutputFile> {
    let mut rows = Vec::new();
    for (o, set) in orbits.iter().enumerate() {
        for (k, (p, t)) in set.points.iter().zip(&set.times).enumerate() {
            rows.push([o as f64, k as f64, *t, p[0], p[1]]);
        }
    }
    render_table("crossings", &["orbit", "k", "t", "x", "y"], &rows, format, echo)
}

/// Writes `files` and `manifest.json` into `dir`.
pub fn write_outputs(dir: &Path, config: &RunConfig, files: &[OutputFile]) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    for f in files {
        fs::write(dir.join(&f.name), &f.bytes).map_err(runtime_err)?;
    }
    fs::write(dir.join("manifest.json"), config.to_json()).map_err(runtime_err)
}
