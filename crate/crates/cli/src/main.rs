mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ursct",
    version,
    about = "Underwater image enhancement with a U-shaped Swin-conv transformer"
)]
struct Cli {
    /// Worker threads for evaluation; 1 keeps every output reproducible.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// `key = value` config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a setting, e.g. `--set model.window_size=4`. Applied after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on the paired dataset named by `data.train_dir`.
    Train {
        #[command(flatten)]
        config: ConfigArgs,

        /// Continue from a checkpoint written by an earlier run with the same config.
        #[arg(long)]
        resume: Option<PathBuf>,

        /// Suppress per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Enhance one image or every image in a directory.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image file or directory of PNG/JPEG images.
        #[arg(long)]
        input: PathBuf,
        /// Directory for the enhanced PNGs.
        #[arg(long)]
        output: PathBuf,
    },
    /// Score a checkpoint on a dataset and write a per-image CSV report.
    #[command(group(clap::ArgGroup::new("mode").required(true).args(["full_reference", "no_reference"])))]
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root with `raw/` and, for full-reference scoring, `reference/`.
        #[arg(long)]
        dataset: PathBuf,
        /// PSNR, SSIM and MS-SSIM against the reference images.
        #[arg(long)]
        full_reference: bool,
        /// UIQM and UCIQE of the enhanced images alone.
        #[arg(long)]
        no_reference: bool,
        #[arg(long)]
        report: PathBuf,
    },
    /// Train and score the module and loss ablation cells.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = GradModule::All)]
        module: GradModule,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GradModule {
    All,
    Tensor,
    Model,
    Losses,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return commands::Failure::usage(&e.to_string()).report(),
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.report(),
    }
}
