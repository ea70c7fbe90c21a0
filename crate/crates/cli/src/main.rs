use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use bolaz_cli::serve::{serve, AppState};
use bolaz_cli::{
    cmd_analyze, cmd_replay, cmd_scan, emit, exit, load_enforcement, AnalyzeArgs, CliError,
    EnforceArgs, ScanArgs,
};
use clap::{Args, Parser, Subcommand};

/// Finds resource-ID injection points in a web app model, derives the
/// intervals of IDs each user may pass, and enforces them.
#[derive(Parser)]
#[command(name = "bolaz", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify endpoints and write the authorization policy.
    Analyze {
        #[arg(long)]
        app: PathBuf,
        /// Flow facts (JSON lines) to use instead of running the analysis.
        #[arg(long)]
        facts: Option<PathBuf>,
        #[arg(long)]
        policy_out: PathBuf,
        #[arg(long)]
        report_out: PathBuf,
    },
    /// Replay guarded parameters with other users' IDs against the fixture.
    Scan {
        #[arg(long)]
        app: PathBuf,
        /// Built from the app when omitted.
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Printed to stdout when omitted.
        #[arg(long)]
        findings_out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Replay a scenario under enforcement, or serve the enforcer over HTTP.
    Enforce(EnforceCmd),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("mode").required(true).args(["scenario", "listen"]))]
struct EnforceCmd {
    #[arg(long)]
    app: PathBuf,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Address to serve POST /authorize and POST /producer-response on.
    #[arg(long)]
    listen: Option<String>,
    /// Cache entry lifetime in seconds.
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    ttl: u64,
    #[arg(long = "cache-cap", default_value_t = 100_000)]
    cache_cap: usize,
    /// Run each session on its own thread.
    #[arg(long)]
    stress: bool,
    /// Printed to stdout when omitted.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match cli.command {
        Command::Analyze {
            app,
            facts,
            policy_out,
            report_out,
        } => {
            let summary = cmd_analyze(&AnalyzeArgs {
                app: &app,
                facts: facts.as_deref(),
                policy_out: &policy_out,
                report_out: &report_out,
            })?;
            emit(None, &summary)?;
            Ok(exit::CLEAN)
        }
        Command::Scan {
            app,
            policy,
            findings_out,
            seed,
        } => {
            let confirmed = cmd_scan(&ScanArgs {
                app: &app,
                policy: policy.as_deref(),
                findings_out: findings_out.as_deref(),
                seed,
            })?;
            Ok(if confirmed > 0 {
                exit::FINDINGS
            } else {
                exit::CLEAN
            })
        }
        Command::Enforce(cmd) => {
            let args = EnforceArgs {
                app: &cmd.app,
                policy: &cmd.policy,
                ttl: Duration::from_secs(cmd.ttl),
                cache_capacity: cmd.cache_cap,
            };
            if let Some(addr) = &cmd.listen {
                let loaded = load_enforcement(&args)?;
                let state = Arc::new(AppState {
                    enforcer: loaded.enforcer,
                    store: loaded.store,
                });
                let rt = tokio::runtime::Runtime::new().map_err(CliError::Serve)?;
                rt.block_on(serve(addr, state)).map_err(CliError::Serve)?;
                return Ok(exit::CLEAN);
            }
            let scenario = cmd
                .scenario
                .as_deref()
                .expect("clap requires --scenario or --listen");
            cmd_replay(&args, scenario, cmd.stress, cmd.report_out.as_deref())?;
            Ok(exit::CLEAN)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                exit::INPUT
            } else {
                exit::CLEAN
            });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
