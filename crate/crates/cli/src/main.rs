use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

#[derive(Parser)]
#[command(name = "wlg", version, about = "Conductivity imaging from one current density magnitude")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Out {
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Clone)]
pub struct Inputs {
    #[arg(long)]
    pub mask: PathBuf,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub f: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the conductivity equation and write u, J and a = |J|.
    Forward {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Write interior data for a phantom, with optional noise.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        out: Out,
    },
    /// Minimize the weighted gradient for given a and f.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: Out,
    },
    /// Check optimality of (u, b); exit 0 iff every threshold passes.
    Certify {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        u: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Tolerances delta0 and epsG are read from here when given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Level-set audits, admissibility diagnostics and conductivity recovery.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        u: PathBuf,
        /// Field whose values are read along the level lines of `u`; defaults to `u`.
        #[arg(long)]
        u_ref: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        levels: usize,
        /// Half-width in nodes of the conductivity recovery window; 0 is pointwise.
        #[arg(long, default_value_t = 0)]
        sigma_window: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Reconstruct from every configured initialization and compare.
    Uniqtest {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        out: Out,
    },
    /// Write reference fields for a phantom and optionally compare a field against them.
    Oracle {
        #[arg(long)]
        phantom: String,
        #[arg(long, default_value_t = 129)]
        n: usize,
        #[arg(long, default_value = "disk")]
        domain: String,
        /// Scalar field file to compare against the reference.
        #[arg(long)]
        compare: Option<PathBuf>,
        #[arg(long, default_value_t = 5e-2)]
        max_linf: f64,
        #[arg(long)]
        max_l2: Option<f64>,
        #[command(flatten)]
        out: Out,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Forward { config, out } => commands::forward(&config, &out.out),
        Command::Synth { config, out } => commands::synth(&config, &out.out),
        Command::Reconstruct { config, inputs, out } => commands::reconstruct(&config, &inputs, &out.out),
        Command::Certify { inputs, u, b, config, out } => commands::certify(&inputs, &u, &b, config.as_deref(), &out.out),
        Command::Analyze { inputs, u, u_ref, levels, sigma_window, config, out } => {
            commands::analyze(&inputs, &u, u_ref.as_deref(), levels, sigma_window, config.as_deref(), &out.out)
        }
        Command::Uniqtest { config, inputs, out } => commands::uniqtest(&config, &inputs, &out.out),
        Command::Oracle { phantom, n, domain, compare, max_linf, max_l2, out } => {
            commands::oracle(&phantom, n, &domain, compare.as_deref(), max_linf, max_l2, &out.out)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("wlg: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
