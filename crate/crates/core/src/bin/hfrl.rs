use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hfrl::metrics::{context_regression, precision, MetricsReport};
use hfrl::session::log::SessionLog;
use hfrl::session::server::{serve_session, ApiServer};
use hfrl::session::{replay, run_session_into, Mode, SessionConfig};
use hfrl::Result;

#[derive(Parser)]
#[command(
    name = "hfrl",
    version,
    about = "Reward learning from multi-type human feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tsv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulated session from a config file.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Session log to write.
        #[arg(short, long, default_value = "session.log")]
        log: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run an interactive session whose feedback arrives over HTTP.
    Serve {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long, default_value = "session.log")]
        log: PathBuf,
        /// Override the configured listen address.
        #[arg(long)]
        addr: Option<String>,
    },
    /// Re-translate and refit a log, checking it against its checkpoints.
    Replay {
        #[arg(short, long)]
        log: PathBuf,
        /// Config to use when the log has none.
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Print the metrics recorded in a log.
    Report {
        #[arg(short, long)]
        log: PathBuf,
        #[arg(short, long, value_enum, default_value = "tsv")]
        format: Format,
    },
    /// Regenerate the classification table and example fixtures.
    Goldens {
        #[arg(short, long, default_value = "fixtures")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Run { config, log, seed } => {
            let mut cfg = SessionConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let out = run_session_into(&cfg, SessionLog::create(&log)?)?;
            log::info!("wrote {} records to {}", out.len(), log.display());
            print_report(&out, Format::Tsv)
        }
        Command::Serve { config, log, addr } => {
            let mut cfg = SessionConfig::load(&config)?;
            cfg.mode = Mode::Interactive;
            cfg.api.enabled = true;
            if let Some(addr) = addr {
                cfg.api.addr = addr;
            }
            let server = ApiServer::start(&cfg.api.addr)?;
            log::info!(
                "serving session `{}` on http://{}/api/sessions",
                cfg.name,
                server.addr()
            );
            let out = serve_session(&cfg, SessionLog::create(&log)?, &server)?;
            log::info!(
                "session finished; wrote {} records to {}",
                out.len(),
                log.display()
            );
            Ok(())
        }
        Command::Replay { log, config } => {
            let fallback = config.map(SessionConfig::load).transpose()?;
            let parsed = SessionLog::load(&log)?;
            let r = replay(&parsed, fallback.as_ref())?;
            println!(
                "ok: {} episodes, {} instances, {} checkpoints reproduced, model version {}",
                r.store.len(),
                r.dataset.len(),
                r.checkpoints_verified,
                r.ensemble.version
            );
            Ok(())
        }
        Command::Report { log, format } => print_report(&SessionLog::load(&log)?, format),
        Command::Goldens { out } => {
            for path in hfrl::goldens::write_goldens(&out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn print_report(log: &SessionLog, format: Format) -> Result<()> {
    let instances = log.instances();
    let report = MetricsReport {
        snapshots: log.metrics(),
        precision_pooled_std: precision(&instances).ok().map(|p| p.pooled_std),
        context_coefficients: context_regression(&instances).ok().map(|c| c.to_vec()),
        ..MetricsReport::default()
    };
    match format {
        Format::Tsv => report.write_tsv(std::io::stdout().lock())?,
        Format::Json => println!("{}", report.to_json()),
    }
    Ok(())
}
