//! `contourflow` command line. Every path argument is resolved against
//! `--workdir`; settings come from a TOML run config (`--config` or
//! `CONTOURFLOW_CONFIG`) with command-line flags taking precedence.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use contourflow_core::cfm::{load_checkpoint, save_checkpoint, train};
use contourflow_core::config::RunConfig;
use contourflow_core::corpus::{generate, load_split, read_manifest, write_corpus, Split};
use contourflow_core::degrade::{
    apply_degradation, DegradationSampler, DegradationSpec, FilterFamily,
};
use contourflow_core::features::{extract, ControlFeature, ControlSignal};
use contourflow_core::metrics::{ClipMetrics, MetricReport};
use contourflow_core::pipeline::{benchmark, fit_control, restore_clip, BenchmarkCase};
use contourflow_core::{AudioClip, Error as CoreError};
use contourflow_service::{serve, Service, ServiceConfig, OUTPUT_WAV};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("control file {} does not exist", .0.display())]
    MissingControl(PathBuf),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Core(CoreError::Config(_)) => 2,
            Self::Core(CoreError::Wav(_)) => 3,
            Self::Core(
                CoreError::Shape(_)
                | CoreError::CheckpointVersion { .. }
                | CoreError::Checkpoint(_)
                | CoreError::Control(_),
            ) => 4,
            Self::MissingControl(_) => 5,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "contourflow",
    version,
    about = "Contour-guided flow-matching bandwidth extension"
)]
pub struct Cli {
    /// Base directory for every relative path.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,
    /// Run config (TOML).
    #[arg(long, global = true, env = "CONTOURFLOW_CONFIG")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the toy corpus: WAV files plus manifest.json.
    Corpus(CorpusArgs),
    /// Apply one lowpass degradation to a WAV file.
    Degrade(DegradeArgs),
    /// Extract a control track (CSV) from a WAV file.
    Extract(ExtractArgs),
    /// Train a model on a corpus directory.
    Train(TrainArgs),
    /// Restore a band-limited WAV under a control track.
    Restore(RestoreArgs),
    /// Score estimates against references, or benchmark a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long, default_value = "corpus")]
    pub out: PathBuf,
    #[arg(long)]
    pub n_clips: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub clip_seconds: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// fir, biquad, chebyshev_i or brick_wall. Omit to draw a random spec.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub cutoff_hz: Option<f64>,
    /// FIR taps or IIR order.
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub ripple_db: Option<f64>,
    /// Spec file (TOML) instead of the flags above.
    #[arg(long, conflicts_with_all = ["family", "cutoff_hz", "order", "ripple_db"])]
    pub spec: Option<PathBuf>,
    /// Seed for a randomly drawn spec; defaults to the config's sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value = "dsc")]
    pub feature: String,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "corpus")]
    pub corpus: PathBuf,
    #[arg(long, default_value = "model/model.cfmr")]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Control CSV, e.g. from `extract`.
    #[arg(long)]
    pub control: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub cutoff_hz: Option<f64>,
    #[arg(long)]
    pub gl_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Clean reference WAVs (pairs mode).
    #[arg(long = "reference")]
    pub references: Vec<PathBuf>,
    /// Estimates, one per reference.
    #[arg(long = "estimate")]
    pub estimates: Vec<PathBuf>,
    /// Optional target controls, one per estimate, for adherence.
    #[arg(long = "control")]
    pub controls: Vec<PathBuf>,
    #[arg(long, default_value = "dsc")]
    pub feature: String,
    /// Benchmark mode: degrade and restore the corpus test split.
    #[arg(long, requires = "corpus")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "report.csv")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8750")]
    pub addr: String,
    #[arg(long)]
    pub max_sessions: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
}

struct Ctx {
    workdir: PathBuf,
    config: RunConfig,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        self.workdir.join(p)
    }
}

fn parent_dir(p: &Path) -> PathBuf {
    p.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report types serialize") + "\n"
}

fn read_control(path: &Path) -> CliResult<ControlSignal> {
    if !path.exists() {
        return Err(CliError::MissingControl(path.to_path_buf()));
    }
    Ok(ControlSignal::from_csv(&read_text(path)?)?)
}

/// Parses the command line and runs it, returning the text to print.
pub fn run(cli: Cli) -> CliResult<String> {
    let config_path = cli.config.as_ref().map(|p| cli.workdir.join(p));
    let config = RunConfig::load(config_path.as_deref())?;
    let ctx = Ctx {
        workdir: cli.workdir,
        config,
    };
    match cli.command {
        Command::Corpus(a) => cmd_corpus(ctx, a),
        Command::Degrade(a) => cmd_degrade(ctx, a),
        Command::Extract(a) => cmd_extract(ctx, a),
        Command::Train(a) => cmd_train(ctx, a),
        Command::Restore(a) => cmd_restore(ctx, a),
        Command::Eval(a) => cmd_eval(ctx, a),
        Command::Serve(a) => cmd_serve(ctx, a),
    }
}

fn cmd_corpus(mut ctx: Ctx, a: CorpusArgs) -> CliResult<String> {
    let c = &mut ctx.config.corpus;
    c.n_clips = a.n_clips.unwrap_or(c.n_clips);
    c.seed = a.seed.unwrap_or(c.seed);
    c.clip_seconds = a.clip_seconds.unwrap_or(c.clip_seconds);
    ctx.config.validate()?;
    let dir = ctx.path(&a.out);
    let clips = generate(&ctx.config.corpus)?;
    let manifest = write_corpus(&dir, &ctx.config.corpus, &clips)?;
    ctx.config.write_resolved(&dir)?;
    let count = |s| manifest.clips.iter().filter(|e| e.split == s).count();
    Ok(format!(
        "wrote {} clips to {} (train {}, val {}, test {})\n",
        manifest.clips.len(),
        dir.display(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test)
    ))
}

fn cmd_degrade(ctx: Ctx, a: DegradeArgs) -> CliResult<String> {
    let clip = AudioClip::read_wav(ctx.path(&a.input))?;
    let spec = if let Some(p) = &a.spec {
        toml::from_str::<DegradationSpec>(&read_text(&ctx.path(p))?)
            .map_err(|e| CoreError::Config(e.to_string()))?
    } else if let Some(family) = &a.family {
        let family: FilterFamily = family
            .parse()
            .map_err(|e: CoreError| CliError::Usage(e.to_string()))?;
        let cutoff = a
            .cutoff_hz
            .ok_or_else(|| CliError::Usage("--cutoff-hz is required with --family".into()))?;
        DegradationSpec {
            family,
            cutoff_hz: cutoff,
            order: a.order,
            ripple_db: a.ripple_db,
        }
    } else {
        let mut cfg = ctx.config.train.degradation.clone();
        cfg.seed = a.seed.unwrap_or(cfg.seed);
        DegradationSampler::new(cfg)?.sample_spec()
    };
    let out = apply_degradation(&clip, &spec)?;
    let path = ctx.path(&a.output);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    out.clip.write_wav(&path, OUTPUT_WAV)?;
    let spec_text = toml::to_string(&spec).map_err(|e| CoreError::Config(e.to_string()))?;
    write_file(&sibling(&path, ".degradation.toml"), spec_text)?;
    Ok(format!("{spec} -> {}\n", path.display()))
}

fn cmd_extract(ctx: Ctx, a: ExtractArgs) -> CliResult<String> {
    let feature: ControlFeature = a
        .feature
        .parse()
        .map_err(|e: CoreError| CliError::Usage(e.to_string()))?;
    let clip = AudioClip::read_wav(ctx.path(&a.input))?;
    let analysis = &ctx.config.train.analysis;
    let control = extract(&clip, feature, &analysis.dsc, analysis.stft)?;
    let path = ctx.path(&a.output);
    write_file(&path, control.to_csv())?;
    Ok(format!(
        "{} frames of {} -> {}\n",
        control.n_frames(),
        feature.name(),
        path.display()
    ))
}

fn cmd_train(mut ctx: Ctx, a: TrainArgs) -> CliResult<String> {
    let t = &mut ctx.config.train;
    t.steps = a.steps.unwrap_or(t.steps);
    t.seed = a.seed.unwrap_or(t.seed);
    ctx.config.validate()?;
    let corpus = ctx.path(&a.corpus);
    read_manifest(&corpus)?;
    let clips =
        |s| load_split(&corpus, s).map(|v| v.into_iter().map(|c| c.clip).collect::<Vec<_>>());
    let (model, report) = train(
        &clips(Split::Train)?,
        &clips(Split::Val)?,
        &ctx.config.train,
    )?;
    let out = ctx.path(&a.out);
    let dir = parent_dir(&out);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    save_checkpoint(&model, &out)?;
    write_file(&dir.join("train_report.json"), to_json(&report))?;
    ctx.config.write_resolved(&dir)?;
    Ok(format!(
        "validation loss {:.5} -> {:.5} (best at step {}), checkpoint {}\n",
        report.initial_val_loss,
        report.best_val_loss,
        report.best_step,
        out.display()
    ))
}

#[derive(Debug, Serialize)]
struct RestoreSummary {
    adherence: f64,
    lsd_vs_input: f64,
    clipped: usize,
    cutoff_hz: f64,
    boundary: usize,
    request: contourflow_core::pipeline::RestoreRequest,
}

fn cmd_restore(mut ctx: Ctx, a: RestoreArgs) -> CliResult<String> {
    let r = &mut ctx.config.restore;
    r.scale = a.scale.unwrap_or(r.scale);
    r.w = a.w.unwrap_or(r.w);
    r.steps = a.steps.unwrap_or(r.steps);
    r.cutoff_hz = a.cutoff_hz.or(r.cutoff_hz);
    r.gl_iters = a.gl_iters.unwrap_or(r.gl_iters);
    r.seed = a.seed.unwrap_or(r.seed);
    ctx.config.validate()?;
    let control = read_control(&ctx.path(&a.control))?;
    let model = load_checkpoint(ctx.path(&a.checkpoint))?;
    let input = AudioClip::read_wav(ctx.path(&a.input))?;
    let n_frames = model.analysis.stft.n_frames(input.len());
    let control = fit_control(&control, n_frames)?;
    let out = restore_clip(&model, &input, &control, &ctx.config.restore)?;
    let path = ctx.path(&a.output);
    let dir = parent_dir(&path);
    std::fs::create_dir_all(&dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;
    out.clip.write_wav(&path, OUTPUT_WAV)?;
    write_file(&sibling(&path, ".realized.csv"), out.realized.to_csv())?;
    let summary = RestoreSummary {
        adherence: out.adherence,
        lsd_vs_input: out.lsd_vs_input,
        clipped: out.clipped,
        cutoff_hz: out.cutoff_hz,
        boundary: out.boundary,
        request: ctx.config.restore.clone(),
    };
    write_file(&sibling(&path, ".json"), to_json(&summary))?;
    ctx.config.write_resolved(&dir)?;
    Ok(format!(
        "adherence {} lsd_vs_input {:.3} dB clipped {} -> {}\n",
        out.adherence,
        out.lsd_vs_input,
        out.clipped,
        path.display()
    ))
}

/// Runs `f` over `items` on scoped worker threads, keeping input order.
fn par_map<T: Sync, U: Send>(
    items: &[T],
    f: impl Fn(&T) -> CliResult<U> + Sync,
) -> CliResult<Vec<U>> {
    let workers = std::thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<CliResult<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("eval worker panicked")?);
        }
        Ok(out)
    })
}

pub fn benchmark_csv(cases: &[BenchmarkCase]) -> String {
    let mut s = String::from(
        "id,degradation,lsd_degraded,lsd_restored,adherence_degraded,adherence_restored,clipped\n",
    );
    for c in cases {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            c.id,
            c.spec,
            c.lsd_degraded,
            c.lsd_restored,
            c.adherence_degraded,
            c.adherence_restored,
            c.clipped
        );
    }
    s
}

fn cmd_eval(ctx: Ctx, a: EvalArgs) -> CliResult<String> {
    let out = ctx.path(&a.out);
    if let (Some(ckpt), Some(corpus)) = (&a.checkpoint, &a.corpus) {
        ctx.config.validate()?;
        let model = load_checkpoint(ctx.path(ckpt))?;
        let test = load_split(ctx.path(corpus), Split::Test)?;
        let cases = benchmark(&model, &test, &ctx.config.eval, &ctx.config.restore)?;
        write_file(&out, benchmark_csv(&cases))?;
        ctx.config.write_resolved(&parent_dir(&out))?;
        let lsd_wins = cases
            .iter()
            .filter(|c| c.lsd_restored < c.lsd_degraded)
            .count();
        let adh_wins = cases
            .iter()
            .filter(|c| c.adherence_restored < c.adherence_degraded)
            .count();
        return Ok(format!(
            "{} test clips: restored beats degraded on LSD for {lsd_wins}, on adherence for {adh_wins} -> {}\n",
            cases.len(),
            out.display()
        ));
    }
    if a.references.is_empty() || a.references.len() != a.estimates.len() {
        return Err(CliError::Usage(
            "give one --estimate per --reference (at least one pair)".into(),
        ));
    }
    if !a.controls.is_empty() && a.controls.len() != a.references.len() {
        return Err(CliError::Usage(
            "give either no --control or one per --reference".into(),
        ));
    }
    let feature: ControlFeature = a
        .feature
        .parse()
        .map_err(|e: CoreError| CliError::Usage(e.to_string()))?;
    let jobs: Vec<(PathBuf, PathBuf, Option<PathBuf>)> = (0..a.references.len())
        .map(|i| {
            (
                ctx.path(&a.references[i]),
                ctx.path(&a.estimates[i]),
                a.controls.get(i).map(|c| ctx.path(c)),
            )
        })
        .collect();
    let dsc = ctx.config.train.analysis.dsc;
    let clips = par_map(&jobs, |(r, e, c)| {
        let reference = AudioClip::read_wav(r)?;
        let estimate = AudioClip::read_wav(e)?;
        let target = c.as_deref().map(read_control).transpose()?;
        let id = e
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(ClipMetrics::compute(
            &id,
            &reference,
            &estimate,
            target.as_ref().map(|t| (t, feature, &dsc)),
        )?)
    })?;
    let report = MetricReport::from_clips(clips);
    write_file(&out, report.to_csv())?;
    ctx.config.write_resolved(&parent_dir(&out))?;
    Ok(report.to_table())
}

fn cmd_serve(ctx: Ctx, a: ServeArgs) -> CliResult<String> {
    let model = a
        .checkpoint
        .as_ref()
        .map(|p| load_checkpoint(ctx.path(p)))
        .transpose()?;
    let defaults = ServiceConfig::default();
    let cfg = ServiceConfig {
        max_sessions: a.max_sessions.unwrap_or(defaults.max_sessions),
        workers: a.workers.unwrap_or(defaults.workers),
        ..defaults
    };
    let service = Arc::new(Service::new(model, cfg));
    let handle = serve(service, &a.addr).map_err(|source| CliError::Io {
        path: PathBuf::from(&a.addr),
        source,
    })?;
    eprintln!("listening on http://{}/v1", handle.addr());
    handle.join();
    Ok(String::new())
}
