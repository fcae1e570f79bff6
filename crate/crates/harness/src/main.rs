use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dplis_harness::accountant::{persist_accountant, run_accountant};
use dplis_harness::experiment::{persist, run_experiment};
use dplis_harness::pate::{persist_pate, run_pate};
use dplis_harness::toy::{persist_toy, run_toy};
use dplis_harness::{ExperimentConfig, HarnessError, Result, Task};

/// DP-SGD with loss smoothing: experiments, landscape diagnostics and privacy accounting.
#[derive(Parser)]
#[command(name = "dplis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// `key = value` experiment file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; run `i` uses `seed + i`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Multi-seed DP-SGD training (task mnist_mlp or synthetic_blobs).
    Train,
    /// Two-basin toy experiment, vanilla and smoothed.
    Toy,
    /// Train, then measure the (C_eps; I)-sharpness of every model.
    Sharpness,
    /// Train one model and write a filter-normalized loss slice.
    Slice,
    /// Teacher ensemble, noisy aggregation and student training.
    Pate,
    /// Privacy spend of the configured DP-SGD run.
    Accountant,
}

fn configure(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply_str(&cli.set.join("\n"))?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match cli.command {
        Command::Train if !matches!(cfg.task, Task::MnistMlp | Task::SyntheticBlobs) => {
            return Err(HarnessError::Invalid("train expects task = mnist_mlp or synthetic_blobs".into()))
        }
        Command::Train => {}
        Command::Toy => cfg.task = Task::Toy,
        Command::Sharpness => {
            cfg.task = Task::Sharpness;
            cfg.sharpness.get_or_insert_with(Default::default);
        }
        Command::Slice => cfg.task = Task::Slice,
        Command::Pate => cfg.task = Task::Pate,
        Command::Accountant => cfg.task = Task::Accountant,
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = configure(cli)?;
    let written = match cfg.task {
        Task::Toy => {
            let out = run_toy(&cfg)?;
            for (arm, s) in [("vanilla", &out.vanilla), ("smoothed", &out.smoothed)] {
                println!(
                    "{arm:>8}: capture {:.3}  median loss {:.4}  p99 loss {:.4}",
                    s.capture_fraction, s.median_loss, s.p99_loss
                );
            }
            persist_toy(&out, &cfg.out)?
        }
        Task::Pate => {
            let out = run_pate(&cfg)?;
            for r in &out.reports {
                println!(
                    "seed {}: eps {:.3}  labeled {}/{}  p_correct {:.4}  student {:.4}",
                    r.seed, r.spend.epsilon, r.labeled, r.spend.queries, r.p_correct, r.student_accuracy
                );
            }
            persist_pate(&out, &cfg.out)?
        }
        Task::Accountant => {
            let out = run_accountant(&cfg)?;
            println!(
                "q {}  sigma {}  T {}  delta {}  ->  eps {:.4}",
                out.spend.q, out.spend.sigma, out.spend.steps, out.spend.delta, out.spend.epsilon
            );
            persist_accountant(&out, &cfg.out)?
        }
        _ => {
            let out = run_experiment(&cfg)?;
            for r in &out.results {
                let sharp = r.sharpness.map(|s| format!("  sharpness {s:.4}")).unwrap_or_default();
                println!(
                    "seed {}: eps {:.3}  T {}  acc {:.4}  loss {:.4}{sharp}",
                    r.seed, r.spend.epsilon, r.spend.steps, r.accuracy, r.loss
                );
            }
            if let Some(s) = &out.accuracy {
                println!("accuracy mean {:.4}  std {:.4}  range [{:.4}, {:.4}]", s.mean, s.std, s.min, s.max);
            }
            let written = persist(&out, &cfg.out)?;
            if let Some(msg) = out.failure {
                return Err(HarnessError::PartialFailure(msg));
            }
            written
        }
    };
    for p in written {
        eprintln!("wrote {}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
