//! Command-line front end: runs the verification suite, evaluates the
//! quaternionic Kähler metric data at a chart point, and pretty-prints
//! saved reports.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 configuration or
//! parse error, 3 singular/degenerate evaluation point.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qkforge::report::Report;
use qkforge::verify::{eval_metric, run_verify, ModelSpec, RunConfig};
use qkforge::Error;

#[derive(Parser)]
#[command(name = "qkforge", version, about = "Toric quaternionic Kähler metrics from prepotentials: construction and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full residual-check suite and emit a JSON report.
    Verify(VerifyArgs),
    /// Evaluate V, U, the metric s*g and the connection at a chart point.
    EvalMetric(EvalArgs),
    /// Pretty-print a saved JSON report and exit with its pass status.
    Report { file: PathBuf },
}

#[derive(Args)]
struct ModelArgs {
    /// Built-in model id: x1sq, x1x2, x2cubed-over-x1, toy-log.
    #[arg(long)]
    model: Option<String>,
    /// User prepotential expression over X1..Xn, e.g. "X1^2 + X2^2".
    #[arg(long, conflicts_with = "model")]
    prepotential: Option<String>,
    /// Declared homogeneity degree of the user prepotential.
    #[arg(long, requires = "prepotential", default_value_t = 2.0)]
    degree: f64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Flat key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    model: ModelArgs,
    /// Sample points per check sweep.
    #[arg(long)]
    points: Option<usize>,
    /// RNG seed for the sample sweeps.
    #[arg(long)]
    seed: Option<u64>,
    /// Tolerance override, repeatable: --tol monopole=1e-5
    #[arg(long, value_name = "CLASS=VALUE")]
    tol: Vec<String>,
    /// Evaluate the full dependent constraint set on V.
    #[arg(long)]
    exhaustive: bool,
    /// Write the JSON report here (summary lines still go to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated chart coordinates [chi2..chin, rho1..rhon, eta1..etan].
    #[arg(long, value_name = "C1,C2,...", allow_hyphen_values = true)]
    chart: String,
    /// RNG seed for the gauge-fixing fiber points.
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Use the four-dimensional closed-form route (n = 1 models only).
    #[arg(long)]
    cp: bool,
    /// Write the JSON output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    init_threads();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Verify(args) => cmd_verify(args),
        Command::EvalMetric(args) => cmd_eval(args),
        Command::Report { file } => cmd_report(&file),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// Honor QKFORGE_THREADS as a cap on the rayon worker pool.
fn init_threads() {
    if let Some(n) = std::env::var("QKFORGE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Parse(_) | Error::InvalidConfig(_) | Error::UnknownModel(_) => 2,
        Error::DegeneratePoint(_)
        | Error::SingularConfiguration(_)
        | Error::SingularStencil { .. }
        | Error::Domain(_)
        | Error::ZeroQuaternion => 3,
        _ => 1,
    }
}

fn model_spec(args: &ModelArgs, base: ModelSpec) -> ModelSpec {
    if let Some(expr) = &args.prepotential {
        ModelSpec::User { prepotential: expr.clone(), degree: args.degree }
    } else if let Some(id) = &args.model {
        ModelSpec::Builtin(id.clone())
    } else {
        base
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode, Error> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        let body = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.apply_file(&body)?;
    }
    cfg.model = model_spec(&args.model, cfg.model.clone());
    if let Some(p) = args.points {
        cfg.points = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.exhaustive {
        cfg.exhaustive = true;
    }
    for spec in &args.tol {
        let (class, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("--tol {spec}: expected CLASS=VALUE")))?;
        let v: f64 = value
            .parse()
            .map_err(|e| Error::Parse(format!("--tol {spec}: {e}")))?;
        cfg.tol.insert(class.trim().to_string(), v);
    }
    cfg.validate()?;

    let report = run_verify(&cfg)?;
    print_summary(&report);
    if let Some(path) = &args.out {
        std::fs::write(path, report.to_json())
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    }
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let spec = model_spec(
        &args.model,
        ModelSpec::Builtin("x1sq".into()),
    );
    let chart: Vec<f64> = args
        .chart
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("--chart component `{s}`: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let out = eval_metric(&spec, &chart, args.seed, args.cp)?;
    let json = out.to_json();
    match &args.out {
        Some(path) => std::fs::write(path, &json)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(file: &PathBuf) -> Result<ExitCode, Error> {
    let body = std::fs::read_to_string(file)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", file.display())))?;
    let report = Report::from_json(&body)?;
    print_summary(&report);
    Ok(if report.pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn print_summary(report: &Report) {
    println!(
        "model {}  seed {}  points {}  v{}",
        report.model, report.environment.seed, report.environment.points, report.environment.version
    );
    for c in &report.checks {
        match &c.skipped {
            Some(reason) => println!("SKIP {:<16} {}", c.check, reason),
            None => println!(
                "{} {:<16} max {:9.3e} < {:8.1e}  ({} pts)",
                if c.pass { "PASS" } else { "FAIL" },
                c.check,
                c.max_residual,
                c.tolerance,
                c.points
            ),
        }
    }
    println!("overall: {}", if report.pass { "PASS" } else { "FAIL" });
}
