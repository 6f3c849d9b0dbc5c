use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use avwake::harness::{self, ExperimentConfig, PruneRecord, RunDir};
use avwake::{Error, Result};

#[derive(Parser)]
#[command(
    name = "avwake",
    version,
    about = "Audio-visual wake word spotting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON). Defaults to the audio-only experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the experiment and corpus seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory (the corpus directory for `synth`).
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Train the configured model.
    Train,
    /// Prune with the configured regime, starting from initialisation.
    Prune,
    /// Evaluate every checkpoint of the experiment on the test split.
    Eval,
    /// Set decision thresholds on the dev split.
    Calibrate,
    /// Parameter and FLOP counts.
    Flops,
    /// Tables and curves from a run directory.
    Report,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Divergence { .. } | Error::NonFinite { .. } => 3,
        Error::Calibration(_) => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let out = RunDir::create(&cli.out, cli.overwrite)?;
    match cli.command {
        Command::Synth => {
            let m = harness::cmd_synth(&cfg, &out)?;
            println!("wrote {} clips to {}", m.entries.len(), out.path.display());
        }
        Command::Train => {
            let o = harness::cmd_train(&cfg, &out)?;
            for l in &o.logs {
                println!("epoch {} mean loss {:.6}", l.epoch + 1, l.mean_loss);
            }
        }
        Command::Prune => {
            let o = harness::cmd_prune(&cfg, &out)?;
            let states = match &o.record {
                PruneRecord::Iterative(s) => vec![s],
                PruneRecord::Sequential { encoder, backend } => vec![encoder, backend],
                PruneRecord::OneShot { sparsity, .. } => {
                    println!("{}: one-shot at sparsity {sparsity:.4}", o.stem);
                    vec![]
                }
            };
            for s in states {
                println!(
                    "{}: scope {} final sparsity {:.4}",
                    o.stem,
                    s.scope,
                    s.final_sparsity()
                );
            }
        }
        Command::Calibrate => {
            for (stem, r) in harness::cmd_calibrate(&cfg, &out)? {
                let dev = r
                    .dev_one_minus_frr
                    .map_or("undefined".to_string(), |v| format!("{v:.4}"));
                println!("{stem}: threshold {} (dev 1-FRR {dev})", r.threshold);
            }
        }
        Command::Eval => {
            for (stem, r) in harness::cmd_eval(&cfg, &out)? {
                let rate = |v: Option<f64>| {
                    v.map_or("undefined".to_string(), |x| format!("{:.2}%", 100.0 * x))
                };
                print!(
                    "{stem}: FRR {} FAR {}",
                    rate(r.overall.frr()),
                    rate(r.overall.far())
                );
                for (snr, c) in &r.strata {
                    print!(" | {snr} dB FAR {}", rate(c.far()));
                }
                println!();
            }
        }
        Command::Flops => {
            for (stem, r) in harness::cmd_flops(&cfg, &out)? {
                println!(
                    "{stem}: {} parameters, {} FLOPs",
                    r.total_params(),
                    r.total_flops()
                );
            }
        }
        Command::Report => {
            let o = harness::build_report(&out)?;
            for p in &o.written {
                println!("wrote {}", p.display());
            }
            for (a, why) in &o.skipped {
                println!("skipped {a}: {why}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
