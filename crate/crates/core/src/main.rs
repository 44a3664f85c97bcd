use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tcpdm::cli::{cmd_eval, cmd_synth, cmd_train, cmd_translate, RunConfig};
use tcpdm::Error;

#[derive(Parser)]
#[command(name = "tcpdm", version, about = "Temporally consistent patch diffusion for infrared-to-visible video")]
struct Cli {
    /// Config file applied after the TCPDM_PROFILE profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed (overrides train.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (overrides paths.output).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Per-key override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Temporal decay factor (overrides temporal.omega).
    #[arg(long, global = true)]
    omega: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic paired video dataset into --out.
    Synth,
    /// Train a denoiser on paths.dataset, writing paths.checkpoint.
    Train,
    /// Translate an infrared video into visible frames under --out.
    Translate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Score generated frames against references.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        flows: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    for kv in &cli.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.omega {
        cfg.omega = o;
    }
    if let Some(out) = &cli.out {
        cfg.output = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli, cfg: RunConfig) -> Result<(), Error> {
    match cli.command {
        Command::Synth => {
            let scene = cmd_synth(&cfg, &cfg.output)?;
            println!("wrote {} frames to {}", scene.visible.len(), cfg.output.display());
        }
        Command::Train => {
            let outcome = cmd_train(&cfg)?;
            let last = outcome.losses.last().copied().unwrap_or(f64::NAN);
            println!("trained {} iterations, final loss {last:.6}", outcome.losses.len());
        }
        Command::Translate { checkpoint, dataset } => {
            let checkpoint = checkpoint.unwrap_or_else(|| cfg.checkpoint.clone());
            let dataset = dataset.unwrap_or_else(|| cfg.dataset.clone());
            let video = cmd_translate(&cfg, &checkpoint, &dataset, &cfg.output)?;
            println!("wrote {} frames to {}", video.frames.len(), cfg.output.join("gen").display());
        }
        Command::Eval { generated, reference, flows } => {
            let report = cmd_eval(&generated, &reference, flows.as_deref(), &cfg.output)?;
            print!("{}", report.summary());
        }
    }
    Ok(())
}

fn is_config_error(e: &Error) -> bool {
    matches!(e, Error::InvalidConfig(_) | Error::ConfigMismatch(_) | Error::InvalidSchedule(_))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match run(cli, cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if is_config_error(&e) { 1 } else { 2 })
        }
    }
}
