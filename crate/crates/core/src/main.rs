use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use platoon_noma::harness::{
    emit_csv, emit_summary_csv, oracle_check, parse_schemes, resolve_scenario, run_with, summarize,
    write_summaries, ChsMethod, PaMethod, RunSpec, SolverSettings,
};
use platoon_noma::scfp::{random_agents, run_formation, ScfpConfig};
use platoon_noma::schemes::Scheme;

#[derive(Parser)]
#[command(
    name = "platoon-noma",
    version,
    about = "Many-to-many NOMA between vehicular platoons"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sum-rate experiment.
    Run(RunArgs),
    /// Super-cluster formation on a random layout.
    Scfp(ScfpArgs),
    /// GPA against the exhaustive PA oracle on small instances.
    OracleCheck(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Builtin scenario name or TOML scenario file.
    #[arg(long, default_value = "4lc-unicast")]
    scenario: String,
    /// oma, dm, um, udm, a comma list, or all.
    #[arg(long, default_value = "all")]
    scheme: String,
    #[arg(long, default_value = "gpa")]
    pa: String,
    #[arg(long, default_value = "exhaustive-fpa")]
    chs: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1")]
    zeta: Vec<f64>,
    #[arg(long = "snr-db", value_delimiter = ',', default_value = "50")]
    snr_db: Vec<f64>,
    /// Power levels; defaults to N_LC (N_LC - 1).
    #[arg(long, value_delimiter = ',')]
    q: Vec<u32>,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iterations: usize,
    /// Per-trial records; the summary goes next to it with a `.summary.csv`
    /// suffix. Prints the summary to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time per point (makes output non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct ScfpArgs {
    #[arg(long, default_value_t = 8)]
    agents: usize,
    /// Communication range in meters.
    #[arg(long, default_value_t = 100.0)]
    range: f64,
    /// Maximum LCs per super cluster.
    #[arg(long, default_value_t = 4)]
    limit: usize,
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Message trace; the final assignment goes next to it with an
    /// `.assignment.csv` suffix. Prints the assignment when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long, default_value = "3lc-unicast")]
    scenario: String,
    #[arg(long, default_value = "udm")]
    scheme: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.1")]
    zeta: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "4,8")]
    q: Vec<u32>,
    #[arg(long = "snr-db", default_value_t = 50.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 50)]
    trials: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn sibling(path: &std::path::Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn cmd_run(a: RunArgs) -> Result<(), Box<dyn std::error::Error>> {
    let def = resolve_scenario(&a.scenario)?;
    let spec = RunSpec {
        scenario: a.scenario,
        schemes: parse_schemes(&a.scheme)?,
        settings: SolverSettings {
            pa: a.pa.parse::<PaMethod>()?,
            chs: a.chs.parse::<ChsMethod>()?,
            max_iterations: a.max_iterations,
            ..SolverSettings::default()
        },
        zetas: a.zeta,
        snrs_db: a.snr_db,
        qs: a.q,
        trials: a.trials,
        seed: a.seed,
        timing: a.timing,
    };
    let records = run_with(&def, &spec)?;
    let summaries = summarize(&records);
    match a.out {
        Some(path) => {
            emit_csv(&records, &path)?;
            emit_summary_csv(&summaries, &sibling(&path, ".summary.csv"))?;
        }
        None => write_summaries(&summaries, std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_scfp(a: ScfpArgs) -> Result<(), Box<dyn std::error::Error>> {
    let config = ScfpConfig {
        sc_size_limit: a.limit,
        comm_range_m: a.range,
        seed: a.seed,
        ..ScfpConfig::default()
    };
    let agents = random_agents(a.agents, 400.0, 12.0, a.seed);
    let outcome = run_formation(&agents, &config, a.duration)?;
    match a.out {
        Some(path) => {
            outcome.write_trace_csv(std::fs::File::create(&path)?)?;
            outcome
                .write_assignment_csv(std::fs::File::create(sibling(&path, ".assignment.csv"))?)?;
        }
        None => outcome.write_assignment_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

fn cmd_oracle(a: OracleArgs) -> Result<(), Box<dyn std::error::Error>> {
    let def = resolve_scenario(&a.scenario)?;
    let scheme: Scheme = a
        .scheme
        .parse()
        .map_err(|_| format!("unknown scheme '{}'", a.scheme))?;
    let rows = oracle_check(&def, scheme, &a.zeta, &a.q, a.snr_db, a.trials, a.seed)?;
    println!("zeta,q,trials,mean_gpa,mean_oracle,mean_ratio,min_ratio,within_10pct");
    for &zeta in &a.zeta {
        for &q in &a.q {
            let sel: Vec<_> = rows.iter().filter(|r| r.zeta == zeta && r.q == q).collect();
            let n = sel.len() as f64;
            let mg = sel.iter().map(|r| r.gpa.sum_rate).sum::<f64>() / n;
            let mo = sel.iter().map(|r| r.oracle.sum_rate).sum::<f64>() / n;
            let ratios: Vec<f64> = sel.iter().map(|r| r.ratio()).collect();
            let mr = ratios.iter().sum::<f64>() / n;
            let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
            let within = ratios.iter().filter(|&&r| r >= 0.9).count() as f64 / n;
            println!(
                "{zeta:.4},{q},{},{mg:.6},{mo:.6},{mr:.6},{min:.6},{within:.4}",
                sel.len()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Scfp(a) => cmd_scfp(a),
        Command::OracleCheck(a) => cmd_oracle(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
