use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ofs_cli::config::RunConfig;
use ofs_cli::{commands, CliError, CliResult};

#[derive(Parser)]
#[command(name = "ofs", version, about = "Quasi-posterior sampling with open-faced sandwich adjustment")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output.dir` in the configuration.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for coverage and bootstrap parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate data from the configured model and run random-walk Metropolis.
    RunChain,
    /// Estimate the sandwich components and Ω for each configured estimator pair.
    Sandwich {
        #[arg(long)]
        chain: PathBuf,
    },
    /// Apply an adjustment to a chain (or undo it with --inverse).
    Adjust {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        omega: PathBuf,
        #[arg(long)]
        inverse: bool,
    },
    /// Repeated-sampling coverage experiment.
    SimulateCoverage,
    /// Two-pass OFS Gibbs on a synthetic hierarchical Poisson model.
    DemoPoisson,
    /// Print a coverage table.
    Report {
        #[arg(long)]
        table: PathBuf,
    },
}

fn load(cli: &Cli) -> CliResult<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("this subcommand needs --config".into()))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed_override {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let flag = cli.out_dir.as_deref();
    match &cli.command {
        Command::RunChain => {
            let cfg = load(cli)?;
            let s = commands::run_chain(&cfg, &cfg.out_dir(flag))?;
            println!(
                "wrote {} ({} draws, acceptance {:.3}) and {}",
                s.chain.display(),
                s.draws,
                s.acceptance_rate,
                s.data.display()
            );
        }
        Command::Sandwich { chain } => {
            let cfg = load(cli)?;
            for p in commands::sandwich(&cfg, chain, &cfg.out_dir(flag))?.omegas {
                println!("wrote {}", p.display());
            }
        }
        Command::Adjust { chain, omega, inverse } => {
            let out = match (flag, &cli.config) {
                (Some(d), _) => d.to_path_buf(),
                (None, Some(_)) => load(cli)?.out_dir(None),
                (None, None) => chain.parent().map(PathBuf::from).unwrap_or_default(),
            };
            let s = commands::adjust(chain, omega, *inverse, &out)?;
            println!("wrote {}", s.chain.display());
            println!("support violations: {}", s.support_violations);
        }
        Command::SimulateCoverage => {
            let cfg = load(cli)?;
            let out = cfg.out_dir(flag);
            let t = commands::simulate_coverage(&cfg, &out)?;
            print!("{}", ofs_core::coverage::render_report(&t.rows));
            println!(
                "{} failures, {} support violations; tables in {}",
                t.failures.len(),
                t.support_violations,
                out.display()
            );
        }
        Command::DemoPoisson => {
            let cfg = load(cli)?;
            let out = cfg.out_dir(flag);
            let s = commands::demo_poisson(&cfg, &out)?;
            println!("{} observations, {:.0}% intervals", s.observations, 100.0 * s.level);
            for t in &s.theta {
                println!(
                    "{:<8} truth {:>7.3}  raw [{:.3}, {:.3}]  ofs [{:.3}, {:.3}]  width ratio {:.3}",
                    t.name, t.truth, t.raw.0, t.raw.1, t.ofs.0, t.ofs.1, t.width_ratio
                );
            }
            for b in &s.beta {
                println!("{:<8} truth {:>7.3}  mean {:.3}  sd {:.3}", b.name, b.truth, b.mean, b.sd);
            }
            if !s.excluded.is_empty() {
                println!("excluded from adjustment: {}", s.excluded.join(", "));
            }
            println!("outputs in {}", out.display());
        }
        Command::Report { table } => print!("{}", commands::report(table)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
