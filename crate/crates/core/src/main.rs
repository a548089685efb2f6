use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use mgt_lab::cli::{run, RunManifest, Scenario, Verdict, BUNDLED};
use mgt_lab::LabError;

/// Exit codes: 0 every check passed, 1 some check failed, 2 configuration or
/// usage error, 3 a module failed while running.
#[derive(Parser)]
#[command(name = "mgtlab", version, about = "Spectral experiments for the Moore-Gibson-Thompson equation")]
struct Cli {
    /// Print the bundled scenario catalog and exit
    #[arg(long)]
    list: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file, or the whole bundled catalog with --all
    Run {
        scenario: Option<PathBuf>,
        #[arg(long, conflicts_with = "scenario")]
        all: bool,
        /// Scenarios run concurrently (default: $MGTLAB_JOBS or 1)
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

fn list() {
    for (name, text) in BUNDLED {
        let desc = Scenario::parse(text, name).map(|s| s.description).unwrap_or_default();
        println!("{name:<26} {desc}");
    }
}

fn report(m: &RunManifest) {
    for c in &m.checks {
        let v = match c.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::Skip => "SKIP",
        };
        println!("[{}] {v} {}: {}", m.scenario, c.name, c.detail);
    }
    println!("[{}] {} ({:.1} s)", m.scenario, if m.passed { "PASS" } else { "FAIL" }, m.wall_clock_s);
}

fn code_of(e: &LabError) -> u8 {
    if matches!(e, LabError::Config(_)) {
        2
    } else {
        3
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.list {
        list();
        return ExitCode::SUCCESS;
    }
    let Some(Cmd::Run { scenario, all, jobs, out }) = cli.cmd else {
        eprintln!("nothing to do: use `run <scenario.toml>`, `run --all` or `--list`");
        return ExitCode::from(2);
    };
    let mut items: Vec<(Scenario, String)> = vec![];
    if all {
        for (name, text) in BUNDLED {
            match Scenario::parse(text, name) {
                Ok(s) => items.push((s, text.to_string())),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            }
        }
    } else if let Some(path) = scenario {
        match Scenario::load(&path) {
            Ok(x) => items.push(x),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        }
    } else {
        eprintln!("run needs a scenario file or --all");
        return ExitCode::from(2);
    }
    let jobs = jobs.or_else(|| std::env::var("MGTLAB_JOBS").ok().and_then(|v| v.parse().ok())).unwrap_or(1).max(1);
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    };
    let results: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        items.par_iter().map(|(sc, src)| run(sc, src, &out)).collect()
    });
    let mut code = 0u8;
    for r in &results {
        match r {
            Ok(m) => {
                report(m);
                if !m.passed {
                    code = code.max(1);
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                code = code.max(code_of(e));
            }
        }
    }
    ExitCode::from(code)
}
