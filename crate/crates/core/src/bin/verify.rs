use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use sphere_jacobi::report::{format_catalog, parse_seed, resolve_config, run_suite, ConfigOverrides};
use sphere_jacobi::JacobiError;

/// Verify Jacobi-operator eigenvalue identities on catalog objects.
///
/// Exit status: 0 when every check passes, 1 when any check fails, 2 for configuration errors.
#[derive(Parser, Debug)]
#[command(name = "verify", version)]
struct Cli {
    /// harmonic, yang-mills, minimal, variation, bochner, all; or `list` to print the catalog
    suite: Option<String>,
    /// Catalog object; omit to run every compatible entry
    #[arg(long)]
    object: Option<String>,
    /// Quadrature grid level
    #[arg(long)]
    level: Option<usize>,
    /// analytic or fd
    #[arg(long)]
    method: Option<String>,
    /// Tolerance preset (default, fine)
    #[arg(long)]
    profile: Option<String>,
    /// key=value configuration file; command-line flags take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the JSON report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks (decimal or 0x-hex)
    #[arg(long, value_parser = seed_arg)]
    seed: Option<u64>,
}

fn seed_arg(s: &str) -> Result<u64, String> {
    parse_seed(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.suite.as_deref() == Some("list") {
        print!("{}", format_catalog());
        return ExitCode::SUCCESS;
    }
    let file_text = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let overrides = ConfigOverrides {
        suite: cli.suite,
        object: cli.object,
        level: cli.level,
        method: cli.method,
        profile: cli.profile,
        out: cli.out,
        seed: cli.seed,
    };
    let cfg = match resolve_config(file_text.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_suite(&cfg) {
        Ok(r) => r,
        Err(e @ (JacobiError::Config(_) | JacobiError::UnknownCatalog(_))) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let written = match &cfg.out {
        Some(path) => report.write_atomic(path),
        None => report.to_json().map(|j| println!("{j}")),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    for r in report
        .records
        .iter()
        .filter(|r| r.status.ne(&sphere_jacobi::report::Status::Pass))
    {
        eprintln!("{:?}: {} {}", r.status, r.check_id, r.note);
    }
    let s = report.summary;
    eprintln!(
        "{} checks: {} passed, {} failed, {} skipped ({:.1} s)",
        s.total, s.passed, s.failed, s.skipped, report.timing.total_seconds
    );
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
