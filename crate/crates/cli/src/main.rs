#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use clap::{Parser, Subcommand};
use ifol_cli::commands::{self, Options};
use ifol_cli::CliError;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "ifol", version, about = "Implicit finite operator learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Mesh JSON to evaluate on instead of the training mesh.
    #[arg(long, global = true)]
    eval_mesh: Option<PathBuf>,
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Output directory (overrides paths.out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "IFOL_THREADS")]
    threads: Option<usize>,
    /// Index of a single test sample.
    #[arg(long, global = true)]
    sample: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate training and test datasets.
    Sample,
    /// Meta-train the network.
    Train {
        /// Continue from the checkpoint instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Predict test samples and compare with the reference solver.
    Infer,
    /// Repeated one-step prediction for transient problems.
    Rollout,
    /// Reference finite-element solutions.
    Fem,
    /// Network and adjoint sensitivity maps.
    Sensitivity,
    /// Finite-difference verification suites.
    Gradcheck,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            std::process::exit(2);
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().expect("thread pool is configured once");
    }
    let opts = Options {
        config: cli.config,
        checkpoint: cli.checkpoint,
        eval_mesh: cli.eval_mesh,
        steps: cli.steps,
        out: cli.out,
        seed: cli.seed,
        sample: cli.sample,
        resume: matches!(cli.command, Command::Train { resume: true }),
    };
    let res: Result<(), CliError> = match cli.command {
        Command::Sample => commands::cmd_sample(&opts),
        Command::Train { .. } => commands::cmd_train(&opts),
        Command::Infer => commands::cmd_infer(&opts),
        Command::Rollout => commands::cmd_rollout(&opts),
        Command::Fem => commands::cmd_fem(&opts),
        Command::Sensitivity => commands::cmd_sensitivity(&opts),
        Command::Gradcheck => ifol_cli::cmd_gradcheck(&opts),
    };
    if let Err(e) = res {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
