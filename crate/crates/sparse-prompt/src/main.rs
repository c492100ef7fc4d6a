use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sparse_prompt::commands::{self, EmbedArgs, EmbedProvider, RunArgs};
use sparse_prompt::CliError;

#[derive(Parser)]
#[command(name = "sparse-prompt", version, about = "Continual learning with sparse task prompts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a task sequence and write report, events and checkpoint.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides `output_dir` in the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Stop updating dictionaries after this many tasks.
        #[arg(long, value_name = "N")]
        lazy_update_after: Option<usize>,
        #[arg(long)]
        freeze_dictionary: bool,
        #[arg(long)]
        freeze_alpha: bool,
        /// Run the whole sequence K times.
        #[arg(long, value_name = "K")]
        repeat: Option<usize>,
    },
    /// Turn task descriptions (JSON lines) into an embedding file.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "hashed")]
        provider: EmbedProvider,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.3)]
        noise_scale: f64,
    },
    /// Print the task similarity matrix of a checkpoint as CSV.
    Similarity {
        checkpoint: PathBuf,
        /// Single hidden layer (1-based) instead of the layer average.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Recompute P, F, G and capacity from a run's events and check report.json.
    Report { dir: PathBuf },
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            lazy_update_after,
            freeze_dictionary,
            freeze_alpha,
            repeat,
        } => {
            let r = commands::run(&RunArgs {
                config,
                seed,
                out,
                lazy_update_after,
                freeze_dictionary,
                freeze_alpha,
                repeat,
            })?;
            println!(
                "P={:.4} F={:.4} G={:.4} capacity={:.4}",
                r.final_average_performance,
                r.forgetting,
                r.generalization,
                r.capacity_usage.last().copied().unwrap_or(0.0)
            );
        }
        Command::Embed {
            input,
            out,
            provider,
            m,
            seed,
            noise_scale,
        } => {
            let recs = commands::embed(&EmbedArgs {
                input,
                out: out.clone(),
                provider,
                m,
                seed,
                noise_scale,
            })?;
            println!("wrote {} embeddings to {}", recs.len(), out.display());
        }
        Command::Similarity { checkpoint, layer } => {
            commands::similarity(&checkpoint, layer, &mut io::stdout().lock())?;
        }
        Command::Report { dir } => {
            print!("{}", commands::report(&dir)?.render());
            println!("report.json matches the event stream");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
