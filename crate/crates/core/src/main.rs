use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kpservo::experiment::{cmd_dataset_export, cmd_jacobian_check, cmd_servo, cmd_track_eval, ExperimentConfig};
use kpservo::Error;

#[derive(Parser)]
#[command(name = "kpservo", version, about = "Keypoint-based adaptive visual servoing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Seeded servo runs with per-run trajectories and a transient summary.
    Servo(Common),
    /// Raw / KF / UKF correction on scripted occlusion trajectories.
    TrackEval(Common),
    /// Online Jacobian estimate against the finite-difference oracle.
    JacobianCheck(Common),
    /// Workspace sweep writing keypoint annotation documents.
    DatasetExport(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long)]
    repeats: Option<usize>,
}

impl Common {
    fn load(&self) -> kpservo::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(r) = self.repeats {
            cfg.repeats = r;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: &Cli) -> kpservo::Result<()> {
    let common = match &cli.command {
        Command::Servo(c) | Command::TrackEval(c) | Command::JacobianCheck(c) | Command::DatasetExport(c) => c,
    };
    let cfg = common.load()?;
    let out = &common.out;
    match &cli.command {
        Command::Servo(_) => {
            let batch = cmd_servo(&cfg, out)?;
            print!("{}", kpservo::metrics::summary_table(&[("servo".into(), batch.report)]).0);
        }
        Command::TrackEval(_) => {
            cmd_track_eval(&cfg, out)?;
            print!("{}", std::fs::read_to_string(out.join("track_eval.txt"))?);
        }
        Command::JacobianCheck(_) => {
            cmd_jacobian_check(&cfg, out)?;
            print!("{}", std::fs::read_to_string(out.join("jacobian_check.txt"))?);
        }
        Command::DatasetExport(_) => {
            let summary = cmd_dataset_export(&cfg, out)?;
            for (joint, docs, speed) in summary.passes {
                println!("joint {joint}: {docs} documents at {speed:.6} rad/s");
            }
        }
    }
    println!("outputs written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
