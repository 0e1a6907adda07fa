//! `evfeat`: synthesize, filter, train, track and evaluate from the command line.
//!
//! Every command reads a `key = value` config (`--config`), then applies
//! `--key value` overrides given after the command name.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evfeat_core::eval::{accuracy_curve, displacement_curve, export_curve};
use evfeat_core::io::{load_events, load_trajectories, read_text, write_atomic, write_events, write_trajectories, EventFormat};
use evfeat_core::matching::encode_matches;
use evfeat_core::pipeline::{check_basis, train, PipelineConfig};
use evfeat_core::subspace::{encode_basis, parse_basis};
use evfeat_core::tracker::{track_with, Descriptor, ProjectionDescriptor, TimeSurfaceDescriptor};
use evfeat_core::voxel::{encode_grid_dump, matricize};
use evfeat_core::{synthesize_scene, Error, EventIndex, EventStream, FeatureExtractor, Location, TrajectorySet};

#[derive(Parser)]
#[command(name = "evfeat", version, about = "Slow spatiotemporal features for event cameras")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene to `events` and its ground truth to `truth`.
    Synth(Common),
    /// Remove background activity from `events` into `filtered`.
    Filter(Common),
    /// Fit PCA, extract matches and fit slow features; writes into `out_dir`.
    Train(Common),
    /// Track the first point of every `init` trajectory with `basis`; writes `tracks`.
    Track(Common),
    /// Score `tracks` against `truth`; writes `<curve_prefix>_accuracy.csv` and `<curve_prefix>_displacement.csv`.
    Eval(Common),
    /// Dump weights of `basis` as voxel grids, one `<weights_out>_<k>.csv` per index.
    ExportWeights {
        /// Half-open index range such as `0..4`, or a single index.
        #[arg(long, default_value = "0..1")]
        range: String,
        #[command(flatten)]
        common: Common,
    },
    /// Track with time surfaces instead of a learned basis; writes `tracks`.
    BaselineTs(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Per-key overrides, `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(Error),
    #[error("{0}")]
    Core(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Parameter { .. } => 2,
                Error::Io { .. } => 3,
                Error::Parse { .. } => 4,
                Error::Shape { .. } => 5,
                Error::Degenerate(_) | Error::Conditioning { .. } => 6,
                _ => 1,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut pairs = Vec::new();
    let mut args = common.overrides.iter();
    while let Some(arg) = args.next() {
        let flag = arg
            .strip_prefix("--")
            .ok_or_else(|| CliError::Usage(format!("expected `--key value`, got `{arg}`")))?;
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.replace('-', "_"), v.to_string()),
            None => {
                let v = args
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("`--{flag}` needs a value")))?;
                (flag.replace('-', "_"), v.clone())
            }
        };
        pairs.push((key, value));
    }
    // `--config` may also land among the overrides when it follows one
    let config = match pairs.iter().rposition(|(k, _)| k == "config") {
        Some(i) => Some(PathBuf::from(pairs.remove(i).1)),
        None => common.config.clone(),
    };
    let mut cfg = match &config {
        Some(p) => PipelineConfig::parse(&read_text(p)?).map_err(CliError::Config)?,
        None => PipelineConfig::default(),
    };
    for (key, value) in &pairs {
        cfg.set(key, value).map_err(CliError::Config)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn event_format(cfg: &PipelineConfig, path: &Path) -> EventFormat {
    match cfg.event_format.as_str() {
        "auto" => EventFormat::from_path(path),
        // validated when the config was read
        f => f.parse().unwrap(),
    }
}

/// Names the file in parse errors that only carry an offset.
fn in_file<T>(path: &Path, r: evfeat_core::Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { location, message } if !location.contains(&*path.display().to_string()) => {
            CliError::Core(Error::Parse {
                location: format!("{}: {location}", path.display()),
                message,
            })
        }
        e => CliError::Core(e),
    })
}

fn read_events(cfg: &PipelineConfig, path: &Path) -> Result<EventStream> {
    in_file(path, load_events(path, event_format(cfg, path)))
}

fn read_basis(path: &Path) -> Result<evfeat_core::ProjectionBasis> {
    in_file(path, parse_basis(&read_text(path)?))
}

fn synth(cfg: &PipelineConfig) -> Result<()> {
    let (stream, truth) = synthesize_scene(&cfg.scene_spec())?;
    write_events(&stream, &cfg.events, event_format(cfg, &cfg.events))?;
    write_trajectories(&truth, &cfg.truth)?;
    Ok(())
}

fn filter(cfg: &PipelineConfig) -> Result<()> {
    let stream = read_events(cfg, &cfg.events)?;
    let kept = evfeat_core::filter_noise(&stream, cfg.filter_half_width, cfg.filter_window_us);
    write_events(&kept, &cfg.filtered, event_format(cfg, &cfg.filtered))?;
    Ok(())
}

fn train_cmd(cfg: &PipelineConfig) -> Result<()> {
    let stream = cfg.filter_stream(&read_events(cfg, &cfg.events)?);
    let m = train(std::slice::from_ref(&stream), cfg)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::Io {
        path: cfg.out_dir.clone(),
        source: e,
    })?;
    let out = |name: &str| cfg.out_dir.join(name);
    for (name, basis) in [
        ("pca.basis", &m.pca),
        ("pca_smoothed.basis", &m.pca_smoothed),
        ("pca_wide_smoothed.basis", &m.pca_wide_smoothed),
        ("sfa.basis", &m.sfa),
        ("sfa_smoothed.basis", &m.sfa_smoothed),
        ("sfa_reversed.basis", &m.sfa_reversed),
        ("sfa_reversed_smoothed.basis", &m.sfa_reversed_smoothed),
    ] {
        write_atomic(&out(name), encode_basis(basis).as_bytes())?;
    }
    write_atomic(&out("matches.bin"), &encode_matches(&m.matches.pairs, m.match_dim)?)?;
    write_atomic(&out("config.txt"), cfg.to_text().as_bytes())?;
    Ok(())
}

fn track_all<D: Descriptor>(cfg: &PipelineConfig, stream: &EventStream, descriptor: &D) -> Result<()> {
    let init = load_trajectories(&cfg.init)?;
    let params = cfg.tracker_params()?;
    let index = EventIndex::new(stream);
    let mut out = Vec::with_capacity(init.len());
    for tr in init.iter() {
        let p = tr
            .first()
            .ok_or_else(|| CliError::Usage(format!("{}: trajectory {} has no samples", cfg.init.display(), tr.id)))?;
        let at = Location::new(p.x.round() as i64, p.y.round() as i64, p.t);
        out.push(track_with(&index, at, descriptor, &params, tr.id)?.0);
    }
    write_trajectories(&TrajectorySet::new(out), &cfg.tracks)?;
    Ok(())
}

fn track(cfg: &PipelineConfig) -> Result<()> {
    let basis = read_basis(&cfg.basis)?;
    check_basis(&basis, cfg)?;
    let fx = FeatureExtractor::new(&basis)?;
    let stream = cfg.filter_stream(&read_events(cfg, &cfg.events)?);
    track_all(cfg, &stream, &ProjectionDescriptor::new(&fx, cfg.box_spec()?))
}

fn baseline_ts(cfg: &PipelineConfig) -> Result<()> {
    if !(cfg.tau_us > 0.0) {
        return Err(Error::Parameter {
            name: "tau_us",
            message: "must be > 0".into(),
        }
        .into());
    }
    let stream = cfg.filter_stream(&read_events(cfg, &cfg.events)?);
    track_all(cfg, &stream, &TimeSurfaceDescriptor { a: cfg.a, tau: cfg.tau_us })
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = base.extension().map(|e| e.to_string_lossy().into_owned()).unwrap_or_else(|| "csv".into());
    base.with_file_name(format!("{stem}{suffix}.{ext}"))
}

fn eval(cfg: &PipelineConfig) -> Result<()> {
    let est = load_trajectories(&cfg.tracks)?;
    let truth = load_trajectories(&cfg.truth)?;
    let acc = accuracy_curve(&est, &truth, cfg.radius, cfg.horizon_s, cfg.step_s)?;
    let dist = displacement_curve(&est, &truth, cfg.horizon_s, cfg.step_s)?;
    export_curve(&acc, &with_suffix(&cfg.curve_prefix, "_accuracy"))?;
    export_curve(&dist, &with_suffix(&cfg.curve_prefix, "_displacement"))?;
    Ok(())
}

fn parse_range(s: &str) -> Result<std::ops::Range<usize>> {
    let bad = || CliError::Usage(format!("bad --range `{s}`, expected `a..b` or an index"));
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a >= b {
                return Err(bad());
            }
            Ok(a..b)
        }
        None => {
            let k: usize = s.trim().parse().map_err(|_| bad())?;
            Ok(k..k + 1)
        }
    }
}

fn export_weights(cfg: &PipelineConfig, range: &str) -> Result<()> {
    let range = parse_range(range)?;
    let basis = read_basis(&cfg.basis)?;
    if range.end > basis.len() {
        return Err(CliError::Usage(format!(
            "--range {}..{} exceeds the {} weights in {}",
            range.start,
            range.end,
            basis.len(),
            cfg.basis.display()
        )));
    }
    for k in range {
        let grid = matricize(&basis.weights[k], basis.dims)?;
        write_atomic(&with_suffix(&cfg.weights_out, &format!("_{k}")), encode_grid_dump(&grid).as_bytes())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(c) => synth(&load_config(c)?),
        Command::Filter(c) => filter(&load_config(c)?),
        Command::Train(c) => train_cmd(&load_config(c)?),
        Command::Track(c) => track(&load_config(c)?),
        Command::Eval(c) => eval(&load_config(c)?),
        Command::ExportWeights { range, common } => export_weights(&load_config(common)?, range),
        Command::BaselineTs(c) => baseline_ts(&load_config(c)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("evfeat: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
