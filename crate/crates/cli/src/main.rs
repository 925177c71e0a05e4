use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use madf::sim::{Protocol, Regime};
use madf::transition::SchedulerPolicy;
use madf_cli::{run, Command, ErrorReport, Format, RunConfig};

/// Analysis and simulation of mode-aware dataflow graphs.
#[derive(Parser)]
#[command(name = "madf", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// Output format.
    #[arg(long, global = true, default_value = "text")]
    format: Format,

    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Print failures as a JSON object on stdout.
    #[arg(long, global = true)]
    json_errors: bool,
}

#[derive(Args)]
struct Platform {
    /// Actor-to-PE allocation file.
    #[arg(long)]
    alloc: Option<PathBuf>,

    /// Scheduler for every PE, overriding the allocation file.
    #[arg(long)]
    scheduler: Option<SchedulerPolicy>,
}

#[derive(Args)]
struct Run {
    /// Scenario file: initial mode, requests, horizon.
    #[arg(long)]
    scenario: PathBuf,

    #[arg(long)]
    protocol: Option<Protocol>,

    /// `sps` or `self-timed`.
    #[arg(long)]
    regime: Option<Regime>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a graph file for structural problems.
    Validate { graph: PathBuf },
    /// Periods, start times and utilizations of every mode.
    Analyze { graph: PathBuf },
    /// Offsets and delay bounds for every ordered mode pair.
    Transition {
        graph: PathBuf,
        #[command(flatten)]
        platform: Platform,
    },
    /// Execute a scenario and check the trace against the analysis.
    Simulate {
        graph: PathBuf,
        #[command(flatten)]
        platform: Platform,
        #[command(flatten)]
        run: Run,
    },
    /// Schedules, transitions and optionally a simulation in one document.
    Report {
        input: PathBuf,
        /// Re-render a JSON report written earlier instead of a graph.
        #[arg(long)]
        load: bool,
        #[command(flatten)]
        platform: Platform,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Random consistent graphs with allocations, reproducible from a seed.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
}

impl Cli {
    fn config(&self) -> RunConfig {
        let mut cfg = RunConfig {
            format: self.format,
            ..RunConfig::default()
        };
        let platform = |cfg: &mut RunConfig, p: &Platform| {
            cfg.alloc = p.alloc.clone();
            cfg.scheduler = p.scheduler;
        };
        match &self.command {
            Cmd::Validate { graph } => {
                cfg.command = Some(Command::Validate);
                cfg.input = Some(graph.clone());
            }
            Cmd::Analyze { graph } => {
                cfg.command = Some(Command::Analyze);
                cfg.input = Some(graph.clone());
            }
            Cmd::Transition { graph, platform: p } => {
                cfg.command = Some(Command::Transition);
                cfg.input = Some(graph.clone());
                platform(&mut cfg, p);
            }
            Cmd::Simulate {
                graph,
                platform: p,
                run,
            } => {
                cfg.command = Some(Command::Simulate);
                cfg.input = Some(graph.clone());
                platform(&mut cfg, p);
                cfg.scenario = Some(run.scenario.clone());
                cfg.protocol = run.protocol;
                cfg.regime = run.regime;
            }
            Cmd::Report {
                input,
                load,
                platform: p,
                scenario,
                protocol,
                regime,
            } => {
                cfg.command = Some(Command::Report);
                cfg.input = Some(input.clone());
                cfg.load_report = *load;
                platform(&mut cfg, p);
                cfg.scenario = scenario.clone();
                cfg.protocol = *protocol;
                cfg.regime = *regime;
            }
            Cmd::Generate { seed, count } => {
                cfg.command = Some(Command::Generate);
                cfg.seed = Some(*seed);
                cfg.count = *count;
            }
        }
        cfg
    }
}

fn emit(out: Option<&PathBuf>, body: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, body).with_context(|| format!("cannot write {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(body.as_bytes())?;
            if !body.ends_with('\n') {
                stdout.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("MADF_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = run(&cli.config()).and_then(|o| emit(cli.out.as_ref(), &o.body).map(|_| o.code));
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            if cli.json_errors {
                println!("{}", ErrorReport::from_error(&err).to_json());
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(2)
        }
    }
}
