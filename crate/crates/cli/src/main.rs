use std::path::PathBuf;
use std::process::ExitCode;

use amvnet_cli::{
    cmd_assert, cmd_eval, cmd_fuse, cmd_project, cmd_sweep, cmd_synth, cmd_train, exit_code, LoadedConfig,
    PredictionSource, SweepAxis, CHECKPOINT_FILE, EXIT_CONFIG, PREDICTIONS_DIR,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "amvnet", version, about = "Assertion-guided multi-view late fusion for LiDAR segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's out_dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scans, labels and two score files per scan.
    Synth(Common),
    /// Project scans to range view and polar BEV.
    Project(Common),
    /// Cosine-similarity histogram and uncertain fraction.
    Assert(Common),
    /// Train the point head on uncertain points of the train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        augment: bool,
    },
    /// Write fused predictions and source tags for every scan.
    Fuse {
        #[command(flatten)]
        common: Common,
        /// Defaults to <out>/checkpoint.amvm.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Metrics on the evaluation split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Fuse in memory with this checkpoint instead of reading prediction files.
        #[arg(long, conflicts_with = "predictions")]
        checkpoint: Option<PathBuf>,
        /// Defaults to <out>/predictions.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Retrain and evaluate for each value of tau or the neighbor count.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
}

fn run(command: Command) -> anyhow::Result<()> {
    let common = match &command {
        Command::Synth(c) | Command::Project(c) | Command::Assert(c) => c,
        Command::Train { common, .. }
        | Command::Fuse { common, .. }
        | Command::Eval { common, .. }
        | Command::Sweep { common, .. } => common,
    };
    let loaded = LoadedConfig::load(&common.config, common.seed)?;
    let out = loaded.out_dir(common.out.as_deref())?;
    match command {
        Command::Synth(_) => {
            let m = cmd_synth(&loaded, &out)?;
            println!("{} scans written to {}", m.scans.len(), out.display());
        }
        Command::Project(_) => {
            let rows = cmd_project(&loaded, &out)?;
            println!("{} scans projected", rows.len());
        }
        Command::Assert(_) => {
            let s = cmd_assert(&loaded, &out)?;
            println!("tau={} uncertain={}/{} fraction={:.4}", s.tau, s.uncertain, s.points, s.fraction());
        }
        Command::Train { augment, .. } => {
            let t = cmd_train(&loaded, &out, augment)?;
            if let Some(last) = t.trace.last() {
                println!("trained {} epochs, final loss {:.5}", t.trace.len(), last.mean_loss);
            }
        }
        Command::Fuse { checkpoint, .. } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT_FILE));
            let fused = cmd_fuse(&loaded, &ckpt, &out)?;
            let head: usize = fused.iter().map(|r| r.mask.uncertain_count()).sum();
            println!("{} scans fused, {head} points relabelled by the head", fused.len());
        }
        Command::Eval { checkpoint, predictions, .. } => {
            let source = match checkpoint {
                Some(c) => PredictionSource::Checkpoint(c),
                None => PredictionSource::Directory(predictions.unwrap_or_else(|| out.join(PREDICTIONS_DIR))),
            };
            let s = cmd_eval(&loaded, &source, &out)?;
            for m in &s.comparison {
                println!("{:<20} miou={:.4} fw_iou={:.4}", m.method, m.miou, m.fw_iou);
            }
        }
        Command::Sweep { axis, values, .. } => {
            for r in cmd_sweep(&loaded, axis, &values, &out)? {
                println!("{} miou={:.4} uncertain={:.4}", r.value, r.miou, r.uncertain_fraction);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
