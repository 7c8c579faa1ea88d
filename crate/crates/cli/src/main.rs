use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use hava_cli::*;

#[derive(Parser)]
#[command(name = "hava", version, about = "Hybrid value alignment experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    config: Option<PathBuf>,
    /// Overrides the training seed (the dataset seed for gen-humans).
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Discounted returns of the reference grid policies per alpha.
    ToyTable {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
    /// Simulate the human driver dataset.
    GenHumans {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the data-driven speed envelope to the human dataset.
    FitDd {
        #[command(flatten)]
        common: Common,
        /// Replace a model fitted on a different dataset.
        #[arg(long)]
        force: bool,
    },
    /// Train one agent per seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Compare trained agents with the human dataset.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Reputation recovery under fully aligned actions.
    ReputationTrace {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
        #[arg(long, default_value_t = 60)]
        steps: usize,
        #[arg(long, default_value_t = 0.0)]
        w0: f64,
    },
}

fn load(common: &Common, humans_seed: bool) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        if humans_seed {
            cfg.humans.seed = s;
        } else {
            cfg.seed = s;
        }
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ToyTable { common, alphas } => {
            let mut cfg = load(&common, false)?;
            if let Some(a) = alphas {
                cfg.alphas = a;
            }
            let rows = cmd_toy_table(&cfg)?;
            let names = &rows[0].names;
            println!(
                "{:>6} {:>9} {}",
                "alpha",
                "recovery",
                names.iter().map(|n| format!("{n:>8}")).collect::<String>()
            );
            for r in &rows {
                let js: String = r.returns.iter().map(|j| format!("{j:>8.2}")).collect();
                println!(
                    "{:>6} {:>9} {js}  best {}",
                    r.alpha,
                    r.recovery_steps,
                    r.names[r.argmax()]
                );
            }
            println!("wrote {}", cfg.out.join("table1.csv").display());
        }
        Command::GenHumans { common } => {
            let cfg = load(&common, true)?;
            let s = cmd_gen_humans(&cfg)?;
            println!(
                "{} human trajectories in {}, finish ticks {}..={}",
                s.count,
                s.dir.display(),
                s.finish_min,
                s.finish_max
            );
        }
        Command::FitDd { common, force } => {
            let cfg = load(&common, false)?;
            let s = cmd_fit_dd(&cfg, force)?;
            println!(
                "fitted {} bins ({} empty) on {} samples, dataset {}",
                s.bins, s.empty_bins, s.samples, s.dataset_hash
            );
            println!("wrote {}", s.path.display());
        }
        Command::Train { common } => {
            let cfg = load(&common, false)?;
            let m = cmd_train(&cfg)?;
            for r in &m.runs {
                let extra = match (r.collision_ticks, r.visits_lawn) {
                    (Some(c), _) => format!("collision ticks {c}"),
                    (_, Some(l)) => format!("lawn {l}"),
                    _ => String::new(),
                };
                println!(
                    "{} seed {}: greedy finish {}{} return {:.2} {extra}",
                    m.label,
                    r.seed,
                    r.finish_time,
                    if r.truncated { " (truncated)" } else { "" },
                    r.greedy_return
                );
            }
            println!(
                "mean finish {:.1}, wrote {}",
                m.mean_finish_time(),
                cfg.out.display()
            );
        }
        Command::Eval { common } => {
            let cfg = load(&common, false)?;
            match cmd_eval(&cfg)? {
                EvalReport::Junction(e) => {
                    println!(
                        "{} alpha {}: mean greedy finish {:.1} vs humans {}..={}",
                        e.label,
                        e.alpha,
                        e.greedy.mean_finish_time,
                        e.humans.finish_min,
                        e.humans.finish_max
                    );
                    println!(
                        "violation median {:.3} mean {:.3} km/h",
                        e.greedy.violation.median, e.greedy.violation.mean
                    );
                    println!(
                        "KS p {:.4} on {:?}, collisions {}: {}",
                        e.verdict.p_value, e.verdict.basis, e.verdict.collisions, e.verdict.flag
                    );
                }
                EvalReport::Grid(g) => {
                    for r in &g.runs {
                        println!(
                            "{} seed {}: return {:.2}, lawn {}",
                            g.label,
                            r.seed,
                            r.greedy_return,
                            r.visits_lawn.unwrap_or(false)
                        );
                    }
                }
            }
            println!("wrote {}", cfg.out.join(EVAL_REPORT).display());
        }
        Command::ReputationTrace {
            common,
            alphas,
            steps,
            w0,
        } => {
            let mut cfg = load(&common, false)?;
            if let Some(a) = alphas {
                cfg.alphas = a;
            }
            for t in cmd_reputation_trace(&cfg, steps, w0)? {
                println!(
                    "alpha {:>5}: {} steps to full reputation",
                    t.alpha, t.recovery_steps
                );
            }
            println!("wrote {}", cfg.out.join("reputation_trace.csv").display());
        }
    }
    Ok(())
}
