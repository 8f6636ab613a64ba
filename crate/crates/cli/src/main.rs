use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ldm_cli::commands::{self, output_dir};
use ldm_cli::{CliError, Preset, RunConfig};
use ldm_core::Variant;

#[derive(Parser)]
#[command(
    name = "ldm",
    version,
    about = "Steady states of open spin chains with a Liouville density machine"
)]
struct Cli {
    /// Worker threads for sampling and sweeps; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `outputs` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a machine; `--checkpoint` resumes from saved parameters.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Estimate σx, σz, σzσz and σxσx from diagonal samples.
    Observables {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Exact steady states over the configured field sweep.
    EdSweep {
        #[command(flatten)]
        common: Common,
    },
    /// Acceptance rates, R-hat and physicality of a checkpoint.
    Diagnostics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print a shipped configuration.
    Preset {
        #[arg(value_parser = preset_name)]
        name: Preset,
        #[arg(long, value_enum, default_value = "zz")]
        variant: VariantArg,
        #[arg(long, default_value_t = 4)]
        sites: usize,
        #[arg(long, default_value_t = 1.0)]
        field: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Zz,
    Xx,
}

fn preset_name(name: &str) -> Result<Preset, String> {
    Preset::from_name(name).ok_or_else(|| {
        let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
        format!("unknown preset, expected one of {}", names.join(", "))
    })
}

fn load(common: &Common) -> Result<(RunConfig, PathBuf), CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = output_dir(&cfg, common.out.as_deref());
    Ok((cfg, out))
}

fn checkpoint(path: &Path) -> Result<ldm_core::LdmParameters, CliError> {
    commands::load_checkpoint(path)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Train { common, checkpoint: cp } => {
            let (cfg, out) = load(&common)?;
            let initial = cp.as_deref().map(checkpoint).transpose()?;
            commands::cmd_train(&cfg, initial, &out)?;
        }
        Command::Observables { common, checkpoint: cp } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_observables(&cfg, &checkpoint(&cp)?, &out)?;
        }
        Command::EdSweep { common } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_ed_sweep(&cfg, &out)?;
        }
        Command::Diagnostics { common, checkpoint: cp } => {
            let (cfg, out) = load(&common)?;
            commands::cmd_diagnostics(&cfg, &checkpoint(&cp)?, &out)?;
        }
        Command::Preset {
            name,
            variant,
            sites,
            field,
        } => {
            let variant = match variant {
                VariantArg::Zz => Variant::Zz,
                VariantArg::Xx => Variant::Xx,
            };
            print!("{}", name.config(variant, sites, field)?.to_json());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
