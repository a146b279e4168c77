use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use comixify::api::{self, ServiceConfig};
use comixify::train::{self, TrainKind};
use comixify::classify;
use comixify_core::aesthetics::AestheticKind;
use comixify_core::ingest::{samples, FetchConfig, Fetcher, DEFAULT_MAX_BYTES, DEFAULT_SAMPLE_FPS};
use comixify_core::pipeline::{
    parse_aesthetic, parse_frames_mode, parse_style, run_pipeline, FramesMode, InputSpec, ModelRegistry,
    PipelineOptions, Stage, Style, DEFAULT_K,
};

#[derive(Parser)]
#[command(name = "comixify", version, about = "Turn videos into comic pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline once and write page PNGs.
    Run(RunArgs),
    /// Start the REST service.
    Serve(ServeArgs),
    /// List bundled sample videos.
    Samples {
        #[arg(long)]
        json: bool,
    },
    /// Train one model from a config file.
    Train {
        #[arg(value_enum)]
        kind: TrainKind,
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Video file path or http(s) URL.
    #[arg(long, required_unless_present = "sample", conflicts_with = "sample")]
    input: Option<String>,
    /// Name of a bundled sample.
    #[arg(long)]
    sample: Option<String>,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Candidate count; defaults to 4k clamped to the sampled frames.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value = "comixgan", value_parser = parse_style)]
    style: Style,
    #[arg(long, default_value = "basic", value_parser = parse_frames_mode)]
    frames_mode: FramesMode,
    #[arg(long, default_value = "nima", value_parser = parse_aesthetic)]
    aesthetic: AestheticKind,
    #[arg(long, default_value_t = DEFAULT_SAMPLE_FPS)]
    fps: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, env = "COMIXIFY_MODELS_DIR")]
    models_dir: Option<PathBuf>,
    /// Fail instead of using seeded models when a manifest is missing.
    #[arg(long)]
    strict_models: bool,
    /// Scratch space for downloads; a temporary directory by default.
    #[arg(long)]
    workdir: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, env = "COMIXIFY_PORT", default_value_t = api::DEFAULT_PORT)]
    port: u16,
    #[arg(long, env = "COMIXIFY_WORKDIR", default_value = "comixify-work")]
    workdir: PathBuf,
    #[arg(long, env = "COMIXIFY_MODELS_DIR")]
    models_dir: Option<PathBuf>,
    #[arg(long)]
    strict_models: bool,
    /// Keep job records in memory only.
    #[arg(long)]
    in_memory: bool,
    #[arg(long, default_value_t = api::DEFAULT_TIMEOUT.as_secs())]
    timeout_s: u64,
    #[arg(long, default_value_t = DEFAULT_MAX_BYTES / (1024 * 1024))]
    upload_cap_mb: u64,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn run(a: RunArgs) -> ExitCode {
    let input = match (a.input, a.sample) {
        (_, Some(s)) => InputSpec::Sample(s),
        (Some(i), None) if i.starts_with("http://") || i.starts_with("https://") => InputSpec::Url(i),
        (Some(i), None) => {
            let p = PathBuf::from(&i);
            if !p.is_file() {
                return fail(2, format!("{} stage failed: no such file {}", Stage::Fetch, p.display()));
            }
            InputSpec::Path(p)
        }
        (None, None) => unreachable!("clap requires an input"),
    };
    let opts = PipelineOptions {
        frames_mode: a.frames_mode,
        aesthetic: a.aesthetic,
        style: a.style,
        k: a.k,
        n: a.n,
        sample_fps: a.fps,
        ..Default::default()
    };
    let models = match ModelRegistry::load(a.models_dir.as_deref(), a.strict_models) {
        Ok(m) => m,
        Err(e) => return fail(2, e),
    };
    let tmp;
    let workdir = match a.workdir {
        Some(w) => w,
        None => match tempfile::tempdir() {
            Ok(t) => {
                tmp = t;
                tmp.path().to_path_buf()
            }
            Err(e) => return fail(1, format!("temporary directory: {e}")),
        },
    };
    let fetcher = Fetcher::new(FetchConfig::default());
    match run_pipeline(&input, &opts, &models, &workdir, &a.out, &fetcher) {
        Ok(out) => {
            for p in &out.pages {
                println!("{}", p.display());
            }
            let report = serde_json::json!({
                "source": out.source.uri,
                "n": out.n,
                "k": out.k,
                "keyframe_times_s": out.keyframe_times_s,
                "pages": out.pages,
                "timings": out.timings,
            });
            let path = a.out.join("run.json");
            if let Err(e) = std::fs::write(&path, serde_json::to_vec_pretty(&report).expect("report serialises")) {
                return fail(1, format!("writing {}: {e}", path.display()));
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = classify(&e).exit_code();
            fail(code as u8, e)
        }
    }
}

fn serve(a: ServeArgs) -> ExitCode {
    let cfg = ServiceConfig {
        models_dir: a.models_dir,
        workdir: a.workdir,
        port: a.port,
        upload_cap: a.upload_cap_mb * 1024 * 1024,
        timeout: Duration::from_secs(a.timeout_s),
        strict_models: a.strict_models,
        persistent: !a.in_memory,
    };
    let rt = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => return fail(1, e),
    };
    match rt.block_on(api::serve(cfg)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(1, e),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run(a) => run(a),
        Command::Serve(a) => serve(a),
        Command::Samples { json } => {
            let list = samples::list();
            if json {
                println!("{}", serde_json::to_string_pretty(&list).expect("samples serialise"));
            } else {
                for s in list {
                    println!("{}\t{:.1}s\t{}", s.name, s.duration_s, s.description);
                }
            }
            ExitCode::SUCCESS
        }
        Command::Train { kind, config } => match train::run(kind, &config) {
            Ok(s) => {
                println!("wrote {} ({})", s.manifest_dir.display(), s.detail);
                println!("log {}", s.log.display());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e.exit_code() as u8, e),
        },
    }
}
