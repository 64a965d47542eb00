use std::path::PathBuf;
use std::process::ExitCode;

use caltext::cli::{self, Command, RunConfig};
use caltext::Preset;
use clap::Parser;

#[derive(Parser)]
#[command(name = "caltext", about = "Handwritten text-line recognition")]
struct Args {
    /// train | recognize | eval | viz
    command: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure(args: &Args) -> caltext::Result<RunConfig> {
    let command: Command = args.command.parse()?;
    let mut cfg = RunConfig::load(command, &args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(beam) = args.beam {
        cfg.beam = beam;
    }
    if let Some(p) = &args.preset {
        cfg.preset = p.parse::<Preset>()?;
    }
    if let Some(out) = &args.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { cli::EXIT_INPUT } else { cli::EXIT_OK };
            return ExitCode::from(code as u8);
        }
    };
    cli::init_threads();
    let result = configure(&args).and_then(|cfg| cli::run(&cfg));
    if let Err(e) = &result {
        eprintln!("caltext: {e}");
    }
    ExitCode::from(cli::exit_code(&result) as u8)
}
