//! Command-line driver for the slow-convergence constructions.
//!
//! Every subcommand reads one TOML configuration, runs the corresponding
//! library pipeline, re-derives a sampled fraction of the emitted
//! certificate rows from scratch, and writes three artifacts into the
//! output directory: a text report, the certificate table as CSV, and a
//! deviation-versus-rate plot table.
//!
//! Exit codes: 0 all certificates pass, 1 a certificate or spot-check
//! failed, 2 configuration or usage error, 3 the requested construction is
//! infeasible on the configured model, 4 an artifact could not be written.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use slowconv_cli::config::{self, Config, ConfigError};
use slowconv_cli::pipelines::{self, CliError, Products};
use slowconv_cli::{csvout, plotdata, report};

#[derive(Parser)]
#[command(
    name = "slowconv",
    version,
    about = "Constructions of arbitrarily slow ergodic averaging, with machine-checked certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Telescoping identity plus mass/positivity/linearity operator checks.
    CoreChecks(RunArgs),
    /// Flow averages beaten below by a prescribed rate at K indices.
    Theorem1(RunArgs),
    /// Grid window averages over cube unions, J radii, random weights.
    Theorem2(RunArgs),
    /// Orbit averages concentrated off the mean at K indices via towers.
    Theorem3(RunArgs),
    /// Deviation-versus-rate table only; no certificates.
    RateScan(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides SLOWCONV_OUT and the config's output.dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fraction of certificate rows to re-derive independently, in [0, 1].
    #[arg(long, default_value_t = 0.1)]
    verify_fraction: f64,
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::CoreChecks(_) => "core-checks",
            Cmd::Theorem1(_) => "theorem1",
            Cmd::Theorem2(_) => "theorem2",
            Cmd::Theorem3(_) => "theorem3",
            Cmd::RateScan(_) => "rate-scan",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Cmd::CoreChecks(a)
            | Cmd::Theorem1(a)
            | Cmd::Theorem2(a)
            | Cmd::Theorem3(a)
            | Cmd::RateScan(a) => a,
        }
    }
}

fn dispatch(name: &str, config: &Config) -> Result<Products, CliError> {
    match name {
        "core-checks" => pipelines::run_core_checks(config),
        "theorem1" => pipelines::run_theorem1(config),
        "theorem2" => pipelines::run_theorem2(config),
        "theorem3" => pipelines::run_theorem3(config),
        "rate-scan" => pipelines::run_rate_scan(config),
        other => unreachable!("unknown subcommand {other}"),
    }
}

/// Output directory precedence: --out, then SLOWCONV_OUT, then the
/// config's output.dir, then the working directory.
fn resolve_out_dir(flag: Option<&PathBuf>, env: Option<&str>, config: &Config) -> PathBuf {
    if let Some(dir) = flag {
        return dir.clone();
    }
    if let Some(dir) = env.filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = &config.output.dir {
        return PathBuf::from(dir);
    }
    PathBuf::from(".")
}

fn io_err(path: &std::path::Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn run(name: &'static str, args: &RunArgs) -> Result<u8, CliError> {
    if !(0.0..=1.0).contains(&args.verify_fraction) {
        return Err(CliError::Config(ConfigError(format!(
            "--verify-fraction must lie in [0, 1] (got {})",
            args.verify_fraction
        ))));
    }
    let started = Instant::now();
    let (config, echo) = config::load(&args.config)?;
    let products = dispatch(name, &config)?;
    let spot = pipelines::spot_check(&products, args.verify_fraction, config.seed);
    let pass = products.pass && spot.ok();

    let env_out = std::env::var("SLOWCONV_OUT").ok();
    let out_dir = resolve_out_dir(args.out.as_ref(), env_out.as_deref(), &config);
    std::fs::create_dir_all(&out_dir).map_err(|e| io_err(&out_dir, e))?;

    let cert_path = out_dir.join(&config.output.certificates);
    csvout::write_csv(&cert_path, &products.certificates).map_err(|e| io_err(&cert_path, e))?;

    let mut notes = vec![spot.describe()];
    notes.push(format!("certificate table: {}", cert_path.display()));
    let plot_path = out_dir.join(&config.output.plotdata);
    if products.plot.is_empty() {
        notes.push("plot table: none for this subcommand".into());
    } else {
        plotdata::write_plotdata(&plot_path, &products.plot)
            .map_err(|e| io_err(&plot_path, e))?;
        notes.push(format!("plot table: {}", plot_path.display()));
    }

    let report_path = out_dir.join(&config.output.report);
    let data = report::ReportData {
        subcommand: name,
        config_path: &args.config,
        config_echo: &echo,
        plan_lines: &products.plan_lines,
        certificates: &products.certificates,
        exceedance: products.exceedance,
        notes: &notes,
        wall: started.elapsed(),
        pass,
    };
    report::write_report(&report_path, &data).map_err(|e| io_err(&report_path, e))?;

    for line in &products.plan_lines {
        println!("{line}");
    }
    let passing = slowconv::certificate::pass_count(&products.certificates);
    println!(
        "certificates: total {}, passing {passing}",
        products.certificates.len()
    );
    if let Some(e) = products.exceedance {
        println!("exceedance count: {e}");
    }
    println!("{}", spot.describe());
    println!("report: {}", report_path.display());
    println!("result: {}", if pass { "PASS" } else { "FAIL" });

    Ok(if pass { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match run(name, cli.command.args()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_config() -> Config {
        let text = "
            [system]
            model = \"cyclic\"
            size = 8
        ";
        toml::from_str(text).unwrap()
    }

    #[test]
    fn output_directory_precedence_is_flag_env_config_cwd() {
        let mut config = minimal_config();
        let flag = PathBuf::from("flagdir");
        assert_eq!(
            resolve_out_dir(Some(&flag), Some("envdir"), &config),
            PathBuf::from("flagdir")
        );
        assert_eq!(
            resolve_out_dir(None, Some("envdir"), &config),
            PathBuf::from("envdir")
        );
        config.output.dir = Some("confdir".into());
        assert_eq!(
            resolve_out_dir(None, None, &config),
            PathBuf::from("confdir")
        );
        assert_eq!(
            resolve_out_dir(None, Some(""), &config),
            PathBuf::from("confdir")
        );
        config.output.dir = None;
        assert_eq!(resolve_out_dir(None, None, &config), PathBuf::from("."));
    }

    #[test]
    fn the_command_surface_parses() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
        let cli = Cli::parse_from([
            "slowconv",
            "theorem1",
            "--config",
            "run.toml",
            "--verify-fraction",
            "0.5",
        ]);
        assert_eq!(cli.command.name(), "theorem1");
        assert_eq!(cli.command.args().verify_fraction, 0.5);
        assert!(cli.command.args().out.is_none());
    }
}
