use std::net::{Ipv4Addr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ikemo_cli::api::{serve, AppState};
use ikemo_cli::commands;
use ikemo_core::{BatchConfig, ProblemRegistry, RunStatus, Session};

/// Interactive knowledge-based evolutionary multi-objective optimization.
///
/// Verbosity is set with IKEMO_LOG (error, warn, info, debug, trace).
#[derive(Parser)]
#[command(name = "ikemo", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct ConfigArg {
    /// Config file (JSON).
    #[arg(value_name = "CONFIG", required_unless_present = "config")]
    path: Option<PathBuf>,
    #[arg(long, value_name = "CONFIG", conflicts_with = "path")]
    config: Option<PathBuf>,
}

impl ConfigArg {
    fn path(&self) -> PathBuf {
        self.path
            .clone()
            .or_else(|| self.config.clone())
            .expect("enforced by clap")
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one optimization to the end of its budget, or until it waits
    /// for feedback.
    Run {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides evo.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to the config's `out` or runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Serve the run over HTTP on this port instead of running headless.
        #[arg(long, value_name = "PORT")]
        serve: Option<u16>,
        /// Generations between checkpoints (0: only when blocking or done).
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Continue a run from the checkpoint in its directory.
    Resume {
        dir: PathBuf,
        /// Feedback (JSON) answering the pending request.
        #[arg(long)]
        feedback: Option<PathBuf>,
        #[arg(long, value_name = "PORT")]
        serve: Option<u16>,
        #[arg(long, default_value_t = 10)]
        checkpoint_every: usize,
    },
    /// Run an agent x user x seed grid and report on it.
    Batch {
        #[command(flatten)]
        config: ConfigArg,
        /// Output root; defaults to the config's `out` or batch-out.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel runs; defaults to the number of CPUs.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Aggregate the run records under a directory.
    Report { dir: PathBuf },
    /// Start the HTTP API with no runs; runs are created with POST /runs.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Runs write to <out>/<id>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn addr(port: u16) -> SocketAddr {
    (Ipv4Addr::LOCALHOST, port).into()
}

fn serve_blocking(app: AppState, port: u16) -> Result<()> {
    tokio::runtime::Runtime::new()
        .context("cannot start runtime")?
        .block_on(serve(app, addr(port)))
}

fn serve_session(session: Session, dir: PathBuf, port: u16) -> Result<()> {
    let app = AppState::new(ProblemRegistry::default(), None);
    let id = app
        .spawn_in(session, Some(dir))
        .map_err(|e| anyhow::anyhow!("{e:?}"))?;
    eprintln!("run {id}");
    serve_blocking(app, port)
}

fn report_end(driver: &ikemo_cli::Driver) {
    let s = driver.session();
    let dir = driver
        .dir()
        .map(|d| d.path().display().to_string())
        .unwrap_or_default();
    match s.status() {
        RunStatus::PausedForFeedback => {
            eprintln!(
                "waiting for feedback at gen {} ({} FEs); rules in {dir}/rules.json",
                s.gen(),
                s.fe()
            );
            eprintln!("answer with: ikemo resume {dir} --feedback <file>");
        }
        status => println!(
            "{status:?} at gen {} with {} FEs, hv {:.6}; output in {dir}",
            s.gen(),
            s.fe(),
            s.hv()
        ),
    }
}

fn main_inner(cli: Cli) -> Result<()> {
    let registry = ProblemRegistry::default();
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            out,
            serve,
            checkpoint_every,
        } => {
            let cfg = commands::load_run_config(&config.path(), seed, out)?;
            if let Some(port) = serve {
                let dir = commands::default_out(&cfg);
                return serve_session(Session::new(cfg, &registry)?, dir, port);
            }
            let driver = commands::run(cfg, &registry, checkpoint_every)?;
            report_end(&driver);
        }
        Cmd::Resume {
            dir,
            feedback,
            serve,
            checkpoint_every,
        } => {
            let fb = feedback.map(|p| commands::read_feedback(&p)).transpose()?;
            if let Some(port) = serve {
                let cp = ikemo_cli::output::read_checkpoint(&dir)?;
                let mut session = Session::resume(cp, &registry)?;
                if let Some(fb) = fb {
                    session.submit_feedback(fb)?;
                }
                return serve_session(session, dir, port);
            }
            let driver = commands::resume(&dir, fb, &registry, checkpoint_every)?;
            report_end(&driver);
        }
        Cmd::Batch { config, out, jobs } => {
            let batch = BatchConfig::load(&config.path())?;
            let out = out
                .or_else(|| batch.out.clone())
                .unwrap_or_else(|| PathBuf::from("batch-out"));
            let jobs =
                jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let report = commands::batch(&batch, &registry, &out, jobs)?;
            print!("{}", report.to_csv());
        }
        Cmd::Report { dir } => {
            let report = commands::report(&dir)?;
            print!("{}", report.to_csv());
        }
        Cmd::Serve { port, out } => serve_blocking(AppState::new(registry, out), port)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IKEMO_LOG", "warn")).init();
    match main_inner(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
