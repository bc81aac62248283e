//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation failure, 2 numerical failure, 64 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::linalg::rowmajor::to_rows;
use crate::model::ValidationReport;
use crate::pipeline::{
    self, benchmark_config, ExperimentConfig, OutputFormat, RunOptions, RunReport,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "mflqg", version, about = "Model-free mean-field LQG social control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the base seed of every stochastic stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Format of the summary printed to stdout.
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the model, weights and initial gain.
    Validate { config: PathBuf },
    /// Model-based solutions only.
    Oracle { config: PathBuf },
    /// Full design run from simulated data.
    Learn { config: PathBuf },
    /// Learning followed by both mean-field routes.
    Meanfield { config: PathBuf },
    /// Full run on the built-in two-state benchmark.
    ReproducePaper,
    /// Social cost of the model-based decentralized policy.
    Cost { config: PathBuf },
}

fn load(path: &Path, cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    apply_overrides(&mut cfg, cli);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut ExperimentConfig, cli: &Cli) {
    if let Some(seed) = cli.seed {
        cfg.seeds.base = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.output.dir = dir.clone();
    }
    if let Some(f) = cli.format {
        cfg.output.format = match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Json => OutputFormat::Json,
        };
    }
}

fn exit_code(err: &Error) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_NUMERICAL
    }
}

fn print_summary(format: OutputFormat, fields: Map<String, Value>) {
    match format {
        OutputFormat::Json => {
            println!("{}", serde_json::to_string_pretty(&Value::Object(fields)).unwrap_or_default())
        }
        OutputFormat::Csv => {
            println!("key,value");
            for (k, v) in fields {
                let text = match v {
                    Value::String(s) => s,
                    other => other.to_string(),
                };
                println!("{k},\"{}\"", text.replace('"', "'"));
            }
        }
    }
}

fn validation_fields(v: &ValidationReport) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("q_psd".into(), json!(v.q_psd));
    m.insert("r_pd".into(), json!(v.r_pd));
    m.insert("ms_stabilizer_ok".into(), json!(v.ms_stabilizer_ok));
    m.insert("notes".into(), json!(v.notes));
    m
}

/// Headline numbers of a run report.
pub fn report_summary(report: &RunReport) -> Map<String, Value> {
    let mut m = Map::new();
    if let Some(o) = &report.oracle {
        m.insert("oracle_K".into(), json!(to_rows(&o.feedback.k)));
        m.insert("oracle_Lambda".into(), json!(to_rows(&o.feedback.lambda)));
        m.insert("oracle_S".into(), json!(to_rows(&o.feedforward.s)));
        m.insert("oracle_Ks".into(), json!(to_rows(&o.feedforward.ks)));
        if let Some(r) = &o.reference_feedforward {
            m.insert("reference_S".into(), json!(to_rows(&r.s)));
            m.insert("reference_Ks".into(), json!(to_rows(&r.ks)));
        }
    }
    if let Some(l) = &report.learned {
        m.insert("learned_K".into(), json!(to_rows(&l.feedback.k)));
        m.insert("learned_Lambda".into(), json!(to_rows(&l.feedback.lambda)));
        m.insert("feedback_iterations".into(), json!(l.feedback_trace.len()));
        if let Some(ff) = &l.feedforward {
            m.insert("learned_S".into(), json!(to_rows(&ff.s)));
            m.insert("learned_Ks".into(), json!(to_rows(&ff.ks)));
        }
        if let Some(t) = &l.feedforward_trace {
            m.insert("feedforward_iterations".into(), json!(t.len()));
        }
    }
    if let Some(e) = &report.metrics {
        m.insert("sare_residual".into(), json!(e.sare_residual));
        m.insert("gain_error".into(), json!(e.gain_error));
        m.insert("lambda_error".into(), json!(e.lambda_error));
    }
    if let Some(mf) = &report.meanfield {
        if let Some(id) = &mf.identified {
            m.insert("Ahat".into(), json!(to_rows(&id.a_hat)));
            m.insert("Bhat".into(), json!(to_rows(&id.b_hat)));
        }
        if let Some(note) = &mf.identification_note {
            m.insert("identification_note".into(), json!(note));
        }
        m.insert("route_discrepancy".into(), json!(mf.route_discrepancy));
    }
    if let Some(c) = &report.social_cost {
        m.insert("cost_learned".into(), json!(c.learned));
        m.insert("cost_oracle".into(), json!(c.oracle));
        m.insert("cost_relative_gap".into(), json!(c.relative_gap));
    }
    if let Some(f) = &report.failure {
        m.insert("failed_stage".into(), json!(f.stage));
        m.insert("error".into(), json!(f.message));
    }
    m
}

fn run_design(cfg: ExperimentConfig, options: RunOptions) -> i32 {
    let dir = cfg.output.dir.clone();
    let format = cfg.output.format;
    match pipeline::run_experiment(&cfg, options) {
        Ok((report, artifacts)) => {
            if let Err(e) = pipeline::write_outputs(&dir, &report, &artifacts) {
                eprintln!("error: {e}");
                return EXIT_NUMERICAL;
            }
            print_summary(format, report_summary(&report));
            EXIT_OK
        }
        Err((report, err)) => {
            eprintln!("error: {err}");
            let artifacts = pipeline::RunArtifacts::default();
            if let Err(e) = pipeline::write_outputs(&dir, &report, &artifacts) {
                eprintln!("error: could not write partial report: {e}");
            }
            print_summary(format, report_summary(&report));
            exit_code(&err)
        }
    }
}

fn execute(cli: Cli) -> Result<i32> {
    match &cli.command {
        Command::Validate { config } => {
            let cfg = load(config, &cli)?;
            let report = pipeline::validate_config(&cfg)?;
            print_summary(cfg.output.format, validation_fields(&report));
            Ok(if report.ok() { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::Oracle { config } => {
            let cfg = load(config, &cli)?;
            let validation = pipeline::validate_config(&cfg)?;
            if !validation.ok() {
                print_summary(cfg.output.format, validation_fields(&validation));
                return Ok(EXIT_VALIDATION);
            }
            let oracle = pipeline::run_oracle(&cfg)?;
            let report = RunReport {
                config: cfg.clone(),
                validation,
                oracle: Some(oracle),
                learned: None,
                metrics: None,
                meanfield: None,
                social_cost: None,
                failure: None,
            };
            std::fs::create_dir_all(&cfg.output.dir)?;
            pipeline::write_report_json(&cfg.output.dir.join("report.json"), &report)?;
            pipeline::write_convergence_csv(&cfg.output.dir.join("convergence.csv"), &report)?;
            print_summary(cfg.output.format, report_summary(&report));
            Ok(EXIT_OK)
        }
        Command::Learn { config } => Ok(run_design(load(config, &cli)?, RunOptions::FULL)),
        Command::Meanfield { config } => Ok(run_design(load(config, &cli)?, RunOptions::MEANFIELD)),
        Command::ReproducePaper => {
            let mut cfg = benchmark_config();
            apply_overrides(&mut cfg, &cli);
            Ok(run_design(cfg, RunOptions::FULL))
        }
        Command::Cost { config } => {
            let cfg = load(config, &cli)?;
            let validation = pipeline::validate_config(&cfg)?;
            if !validation.ok() {
                print_summary(cfg.output.format, validation_fields(&validation));
                return Ok(EXIT_VALIDATION);
            }
            let (oracle, value) = pipeline::run_oracle_cost(&cfg)?;
            let mut fields = Map::new();
            fields.insert("cost_oracle".into(), json!(value));
            fields.insert("agents".into(), json!(cfg.population.agents));
            fields.insert("replications".into(), json!(cfg.population.replications));
            fields.insert("horizon".into(), json!(cfg.population.horizon));
            fields.insert("oracle_K".into(), json!(to_rows(&oracle.feedback.k)));
            fields.insert("oracle_Ks".into(), json!(to_rows(&oracle.feedforward.ks)));
            std::fs::create_dir_all(&cfg.output.dir)?;
            std::fs::write(
                cfg.output.dir.join("cost.json"),
                serde_json::to_string_pretty(&Value::Object(fields.clone()))?,
            )?;
            print_summary(cfg.output.format, fields);
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn cli_main<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
