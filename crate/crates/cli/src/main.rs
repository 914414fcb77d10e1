use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use canids_core::artifact::ModelArtifact;
use canids_core::canlog::{parse_log_file, AttackKind, CanFrame, LogSchema};
use canids_core::config::{Profile, RunConfig, ENV_ENDPOINT, ENV_OUT};
use canids_core::error::{Error, Result};
use canids_core::explain::ReportView;
use canids_core::pipeline::{self, to_json, WindowSource, ARTIFACT_FILE, TEST_WINDOWS_FILE};
use canids_core::stream::{self, Pacing, ScoreOptions, Verdict};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

const DEFAULT_ENDPOINT: &str = "127.0.0.1:7878";

#[derive(Parser)]
#[command(
    name = "canids",
    version,
    about = "VAE + distilled-student intrusion detection for CAN bus logs"
)]
struct Cli {
    /// TOML run configuration; profile defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dataset profile. Must agree with --config when both are given.
    #[arg(long, global = true)]
    profile: Option<Profile>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, env = ENV_OUT)]
    out: Option<PathBuf>,
    /// Log only warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train VAE, teacher and student; write artifact and reports.
    Train,
    /// Metrics for a trained artifact.
    Evaluate(DataArgs),
    /// Shapley attributions for teacher and student.
    Explain {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, value_enum, default_value_t = View::PerClass)]
        view: View,
        /// Permutations per instance (overrides the config).
        #[arg(long)]
        permutations: Option<usize>,
        /// Instances per class (overrides the config).
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Replay a CAN log over TCP.
    Serve {
        #[arg(long, env = ENV_ENDPOINT, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
        /// Log to replay in the profile's CSV schema; the configured data is
        /// used when omitted.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = PacingMode::AsTimestamped)]
        pacing: PacingMode,
        /// Inter-frame gap for `--pacing fixed`, in microseconds.
        #[arg(long, default_value_t = 1000)]
        gap_us: u64,
        /// Exit after this many clients.
        #[arg(long)]
        max_clients: Option<usize>,
    },
    /// Score a replayed stream with a trained artifact.
    Score {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, env = ENV_ENDPOINT, default_value = DEFAULT_ENDPOINT)]
        endpoint: String,
        /// Score every frame position (stride 1) instead of tumbling windows.
        #[arg(long)]
        sliding: bool,
        /// Seconds to keep retrying the connection.
        #[arg(long, default_value_t = 10)]
        connect_timeout: u64,
    },
    /// Time batch inference and print the parameter table.
    Bench {
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 200)]
        repetitions: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
    },
    /// Write the synthetic corpus as CSV.
    Synth {
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Defaults to model.canids in the output directory.
    #[arg(long)]
    artifact: Option<PathBuf>,
    /// Window dump to use instead of the configured data; defaults to the
    /// test split written by `train` when present.
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Rebuild windows from the configured data even if a dump exists.
    #[arg(long, conflicts_with = "windows")]
    from_config: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum View {
    PerClass,
    Global,
}

#[derive(Clone, Copy, ValueEnum)]
enum PacingMode {
    AsTimestamped,
    Fixed,
    MaxSpeed,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => {
            let config = RunConfig::load(path)?;
            if let Some(p) = cli.profile {
                if p != config.profile {
                    return Err(Error::Config(format!(
                        "--profile {p} disagrees with profile {} in {}",
                        config.profile,
                        path.display()
                    )));
                }
            }
            config
        }
        None => RunConfig::defaults(cli.profile.unwrap_or(Profile::Synthetic)),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn load_artifact(path: Option<&PathBuf>, config: &RunConfig) -> Result<ModelArtifact> {
    let path = path.cloned().unwrap_or_else(|| config.out_dir.join(ARTIFACT_FILE));
    if !path.exists() {
        return Err(Error::Config(format!(
            "no model artifact at {}; run `canids train` or pass --artifact",
            path.display()
        )));
    }
    ModelArtifact::load(&path)
}

fn write_out(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn windows_for<'a>(args: &'a DataArgs, config: &'a RunConfig, dump: &'a Path) -> WindowSource<'a> {
    match &args.windows {
        Some(path) => WindowSource::Dump(path),
        None if !args.from_config && dump.exists() => WindowSource::Dump(dump),
        None => WindowSource::Config(config),
    }
}

fn replay_frames(config: &RunConfig, log: Option<&Path>) -> Result<Vec<CanFrame>> {
    match log {
        Some(path) => {
            let schema = match config.profile {
                Profile::Hcrl => LogSchema::hcrl(AttackKind::None),
                Profile::CicIov => LogSchema::cic_iov(),
                Profile::Synthetic => LogSchema::synthetic(),
            };
            Ok(parse_log_file(path, &schema)?.frames)
        }
        None => Ok(pipeline::load_frames(config)?.concat()),
    }
}

fn verdict_line(v: &Verdict) -> String {
    format!(
        "{},{},{},{:.6},{:.6e},{:.1},{:.1},{}\n",
        v.window_index,
        v.class,
        v.class_name,
        v.probability,
        v.reconstruction_error,
        v.latency_us,
        v.model_us,
        v.deadline_met
    )
}

fn run(cli: Cli) -> Result<()> {
    let config = resolve_config(&cli)?;
    let out = config.out_dir.clone();
    let dump = out.join(TEST_WINDOWS_FILE);
    match cli.command {
        Command::Train => {
            let (outcome, files) = pipeline::cmd_train(&config)?;
            println!("{}", outcome.evaluation.render());
            println!("artifact: {}", files.artifact.display());
            println!("report:   {}", files.report_text.display());
        }
        Command::Evaluate(args) => {
            let artifact = load_artifact(args.artifact.as_ref(), &config)?;
            let evaluation = pipeline::cmd_evaluate(&artifact, windows_for(&args, &config, &dump))?;
            let text = evaluation.render();
            write_out(&out, "evaluate_report.json", to_json(&evaluation)?)?;
            write_out(&out, "evaluate_report.txt", &text)?;
            println!("{text}");
        }
        Command::Explain {
            data,
            view,
            permutations,
            instances,
        } => {
            let mut artifact = load_artifact(data.artifact.as_ref(), &config)?;
            let explain = &mut artifact.metadata.config.explain;
            if let Some(p) = permutations {
                explain.permutations = p;
            }
            if let Some(i) = instances {
                explain.instances_per_class = i;
            }
            let windows = pipeline::resolve_windows(&artifact, windows_for(&data, &config, &dump))?;
            let report = pipeline::cmd_explain(&artifact, &windows)?;
            let view = match view {
                View::PerClass => ReportView::PerClass,
                View::Global => ReportView::Global,
            };
            let (json, text) = pipeline::write_shap_report(&report, &out, view)?;
            println!("{}", report.render(view));
            println!("wrote {} and {}", json.display(), text.display());
        }
        Command::Serve {
            endpoint,
            log,
            pacing,
            gap_us,
            max_clients,
        } => {
            let frames = replay_frames(&config, log.as_deref())?;
            let pacing = match pacing {
                PacingMode::AsTimestamped => Pacing::AsTimestamped,
                PacingMode::Fixed => Pacing::FixedGap(Duration::from_micros(gap_us)),
                PacingMode::MaxSpeed => Pacing::MaxSpeed,
            };
            let listener = stream::bind(&endpoint)?;
            let local = listener.local_addr().map_err(|e| Error::Net(e.to_string()))?;
            info!("replaying {} frames on {local}", frames.len());
            println!("listening on {local}");
            let report = stream::replay_serve(&listener, &frames, pacing, max_clients)?;
            println!("{}", to_json(&report)?);
        }
        Command::Score {
            artifact,
            endpoint,
            sliding,
            connect_timeout,
        } => {
            let artifact = load_artifact(artifact.as_ref(), &config)?;
            let window = artifact.metadata.config.window;
            let options = ScoreOptions {
                window,
                stride: if sliding { 1 } else { window },
            };
            let conn = stream::connect(&endpoint, Duration::from_secs(connect_timeout))?;
            fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let verdict_path = out.join("verdicts.csv");
            let file = fs::File::create(&verdict_path).map_err(|e| Error::io(&verdict_path, e))?;
            let mut verdicts = BufWriter::new(file);
            let io_err = |e| Error::io(&verdict_path, e);
            verdicts
                .write_all(b"window_index,class,class_name,probability,reconstruction_error,latency_us,model_us,deadline_met\n")
                .map_err(io_err)?;
            let summary = stream::score_stream(BufReader::new(conn), &artifact, options, |v| {
                verdicts.write_all(verdict_line(v).as_bytes()).map_err(io_err)
            })?;
            verdicts.flush().map_err(io_err)?;
            let json = summary.to_json()?;
            write_out(&out, "stream_summary.json", &json)?;
            println!("{json}");
        }
        Command::Bench {
            artifact,
            batch,
            repetitions,
            warmup,
        } => {
            let artifact = load_artifact(artifact.as_ref(), &config)?;
            let rows = pipeline::synthetic_batch(&artifact, batch, config.seed)?;
            let report = pipeline::cmd_bench(&artifact, &rows, repetitions, warmup)?;
            write_out(&out, "bench_report.json", to_json(&report)?)?;
            println!("{}", report.render());
        }
        Command::Synth { output } => {
            if config.profile != Profile::Synthetic {
                return Err(Error::Config("synth needs the synthetic profile".into()));
            }
            let path = output.unwrap_or_else(|| out.join("synthetic.csv"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let frames = pipeline::cmd_synth(&config, &path)?;
            println!("wrote {frames} frames to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
