//! `ctube`: scenario-driven front end for the constricting-tube toolkit.
//!
//! Subcommands: `run <cfg>` simulates a scenario and writes trajectory/summary
//! artifacts; `certify <cfg>` computes the design-time feasibility
//! certificate; `authority-map <cfg>` rasterizes the barrier authority over a
//! 2-D state box; `sweep <dir>` runs every `*.cfg` in a directory, each to
//! its own output directory, concurrently.

mod config;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Config;
use scenario::Overrides;

#[derive(Parser)]
#[command(name = "ctube", version, about = "constricting-tube scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonFlags {
    /// Output directory (overrides `[output] dir`)
    #[arg(long, value_name = "dir")]
    out: Option<PathBuf>,
    /// Random seed (overrides `[scenario] seed`)
    #[arg(long, value_name = "int")]
    seed: Option<u64>,
    /// Integration step in seconds (overrides `[integration] dt`)
    #[arg(long, value_name = "s")]
    dt: Option<f64>,
    /// Disable warm starting of receding-horizon plans
    #[arg(long)]
    no_warm_start: bool,
}

impl CommonFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            dt: self.dt,
            no_warm_start: self.no_warm_start,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; writes trajectory.csv and summary.json
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Compute the design-time feasibility certificate
    Certify {
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Rasterize the barrier authority sigma(x) over a 2-D grid
    AuthorityMap {
        config: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
    /// Run every *.cfg in a directory concurrently
    Sweep {
        dir: PathBuf,
        #[command(flatten)]
        flags: CommonFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, flags } => cmd_run(&config, &flags.overrides()),
        Command::Certify { config, flags } => cmd_certify(&config, &flags.overrides()),
        Command::AuthorityMap { config, flags } => {
            cmd_authority_map(&config, &flags.overrides())
        }
        Command::Sweep { dir, flags } => cmd_sweep(&dir, &flags.overrides()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn load(path: &PathBuf) -> Result<Config, String> {
    Config::parse_file(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn cmd_run(path: &PathBuf, ov: &Overrides) -> Result<(), String> {
    let cfg = load(path)?;
    let res = scenario::run_scenario(&cfg, ov).map_err(|e| format!("{}: {e}", path.display()))?;
    println!(
        "wrote {} ({} steps, {} infeasible)",
        res.out_dir.display(),
        res.trajectory.len(),
        res.trajectory.infeasible_steps.len()
    );
    println!("{}", serde_json::to_string_pretty(&res.summary).unwrap());
    Ok(())
}

fn cmd_certify(path: &PathBuf, ov: &Overrides) -> Result<(), String> {
    let cfg = load(path)?;
    let res = scenario::certify(&cfg, ov).map_err(|e| format!("{}: {e}", path.display()))?;
    print!("{}", res.report);
    Ok(())
}

fn cmd_authority_map(path: &PathBuf, ov: &Overrides) -> Result<(), String> {
    let cfg = load(path)?;
    let out =
        scenario::write_authority_map(&cfg, ov).map_err(|e| format!("{}: {e}", path.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn cmd_sweep(dir: &PathBuf, ov: &Overrides) -> Result<(), String> {
    let mut configs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "cfg"))
        .collect();
    configs.sort();
    if configs.is_empty() {
        return Err(format!("no *.cfg files in {}", dir.display()));
    }
    let handles: Vec<_> = configs
        .into_iter()
        .map(|path| {
            let mut ov = ov.clone();
            // each config gets a distinct directory under --out
            if let Some(base) = &ov.out {
                let stem = path.file_stem().expect("cfg has a stem").to_owned();
                ov.out = Some(base.join(stem));
            }
            std::thread::spawn(move || {
                let res = load(&path).and_then(|cfg| {
                    scenario::run_scenario(&cfg, &ov)
                        .map_err(|e| format!("{}: {e}", path.display()))
                });
                (path, res.map(|r| r.out_dir))
            })
        })
        .collect();
    let mut failures = 0usize;
    for h in handles {
        let (path, res) = h.join().expect("sweep worker panicked");
        match res {
            Ok(out) => println!("{} -> {}", path.display(), out.display()),
            Err(msg) => {
                eprintln!("error: {msg}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        Err(format!("{failures} configuration(s) failed"))
    } else {
        Ok(())
    }
}
