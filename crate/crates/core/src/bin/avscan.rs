use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use avscan::bytecode::{decode_hex, RawCode};
use avscan::detector::VerificationMode;
use avscan::report::{analyze, analyze_corpus, input_error_report, AnalyzeOptions, CorpusOptions, Verdict};
use avscan::watcher::{self, Sink, StartBlock, WatchOptions};

/// Finds public functions that pass an unverified address parameter to an
/// external call and then change state based on the result.
#[derive(Parser)]
#[command(name = "avscan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyse one contract given as a file (hex or raw bytes) or a hex string.
    Analyze {
        input: String,
        #[command(flatten)]
        opts: AnalysisArgs,
        /// Print the control-flow graph to stderr.
        #[arg(long)]
        dump_cfg: bool,
        /// Print every explored path to stderr.
        #[arg(long)]
        dump_trace: bool,
    },
    /// Analyse every bytecode file in a directory.
    Corpus {
        dir: PathBuf,
        /// JSON object mapping code hash or file stem to true/false.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
        /// Where per-contract reports go (default: <dir>/avscan-reports).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        opts: AnalysisArgs,
    },
    /// Follow a chain and analyse newly deployed contracts.
    Watch {
        #[arg(long)]
        rpc: String,
        /// Block number to start from, or "latest".
        #[arg(long, default_value = "latest")]
        from_block: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// stdout, file:PATH or webhook:URL
        #[arg(long, default_value = "stdout")]
        sink: String,
        #[arg(long, default_value = ".avscan-watch")]
        state_dir: PathBuf,
        /// Stop after this many blocks (runs forever by default).
        #[arg(long)]
        max_blocks: Option<u64>,
        /// Seconds between polls when caught up.
        #[arg(long, default_value_t = 4)]
        poll_secs: u64,
        #[command(flatten)]
        opts: AnalysisArgs,
    },
}

#[derive(Args, Clone)]
struct AnalysisArgs {
    /// Per-contract wall-clock budget in seconds.
    #[arg(long, default_value_t = 600)]
    timeout: u64,
    /// Paths explored per function.
    #[arg(long, default_value_t = 512)]
    max_paths: usize,
    /// Only equality with a trusted address counts as verification.
    #[arg(long, conflicts_with = "literal_phase1")]
    strict_phase1: bool,
    /// Any branch on the parameter counts as verification.
    #[arg(long)]
    literal_phase1: bool,
}

impl AnalysisArgs {
    fn options(&self) -> AnalyzeOptions {
        let mode = if self.strict_phase1 {
            VerificationMode::Strict
        } else if self.literal_phase1 {
            VerificationMode::Literal
        } else {
            VerificationMode::Whitelist
        };
        AnalyzeOptions {
            timeout: Duration::from_secs(self.timeout),
            max_paths: self.max_paths,
            mode,
            ..AnalyzeOptions::default()
        }
    }
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_input(input: &str) -> Result<RawCode, avscan::bytecode::BytecodeError> {
    let path = Path::new(input);
    if path.is_file() {
        RawCode::from_file(path)
    } else {
        decode_hex(input)
    }
}

/// Writes to stdout, ignoring a reader that went away.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}").and_then(|_| out.flush());
}

fn exit_for(verdicts: impl IntoIterator<Item = Verdict>) -> ExitCode {
    let mut code = 0;
    for v in verdicts {
        code = code.max(match v {
            Verdict::Clean => 0,
            Verdict::Vulnerable => 1,
            Verdict::Error | Verdict::Timeout => 2,
        });
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Analyze { input, opts, dump_cfg, dump_trace } => {
            let options = AnalyzeOptions { dump_cfg, dump_trace, ..opts.options() };
            let source = if Path::new(&input).is_file() { input.clone() } else { "<hex>".to_string() };
            let report = match load_input(&input) {
                Ok(code) => {
                    let a = analyze(&code, &source, &options);
                    if let Some(d) = a.cfg_dump {
                        eprint!("{d}");
                    }
                    if let Some(d) = a.trace_dump {
                        eprint!("{d}");
                    }
                    a.report
                }
                Err(e) => input_error_report(&source, &e),
            };
            emit(&report.to_json());
            exit_for([report.verdict])
        }
        Command::Corpus { dir, labels, jobs, out, opts } => {
            let out = out.unwrap_or_else(|| dir.join("avscan-reports"));
            let copts = CorpusOptions { jobs, labels, out: Some(out), analyze: opts.options() };
            match analyze_corpus(&dir, &copts) {
                Ok((summary, reports)) => {
                    emit(&serde_json::to_string_pretty(&summary).expect("summary serialises"));
                    exit_for(reports.iter().map(|r| r.verdict))
                }
                Err(e) => {
                    eprintln!("avscan: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::Watch { rpc, from_block, workers, sink, state_dir, max_blocks, poll_secs, opts } => {
            let start = match from_block.parse::<StartBlock>() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("avscan: {e}");
                    return ExitCode::from(2);
                }
            };
            let sink = match sink.parse::<Sink>() {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("avscan: {e}");
                    return ExitCode::from(2);
                }
            };
            let wopts = WatchOptions {
                start,
                workers,
                sink,
                state_dir,
                max_blocks,
                poll_interval: Duration::from_secs(poll_secs),
                analyze: opts.options(),
                ..WatchOptions::default()
            };
            let rpc = watcher::HttpRpc::new(&rpc);
            match watcher::run_watch(&rpc, &wopts) {
                Ok(stats) => {
                    eprintln!(
                        "avscan: processed {} blocks, {} contracts, {} alerts",
                        stats.blocks, stats.contracts, stats.alerts
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("avscan: {e}");
                    ExitCode::from(2)
                }
            }
        }
    }
}
