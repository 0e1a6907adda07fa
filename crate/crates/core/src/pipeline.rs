//! Declarative configuration and the training pipeline.
//!
//! A config is a flat `key = value` text file; `#` starts a comment. Every
//! key can be overridden individually, which is how the command line
//! passes `--key value` flags through.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::event::{filter_noise, EventIndex, EventStream};
use crate::matching::{extract_all_matches, DisplacementSet, MatchSet, Sampling};
use crate::subspace::{
    pca_spectrum, slowness_spectrum, smooth_basis, FeatureExtractor, PairSet, ProjectionBasis, SampleSet,
};
use crate::synth::{Motion, Pattern, Pose, SceneSpec};
use crate::tracker::{ReferenceWindow, StopRule, TrackerParams};
use crate::voxel::{convolve3d, gaussian_kernel, matricize, spike_count_matrix, vectorize, BoxSpec, Kernel3D, Location};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialSet {
    Diagonal,
    EightConnected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    // paths
    pub events: PathBuf,
    pub filtered: PathBuf,
    pub truth: PathBuf,
    pub init: PathBuf,
    pub out_dir: PathBuf,
    pub basis: PathBuf,
    pub tracks: PathBuf,
    pub curve_prefix: PathBuf,
    pub weights_out: PathBuf,
    /// `auto` picks CSV for `.csv` paths and the binary format otherwise.
    pub event_format: String,

    // scene generator
    pub width: u32,
    pub height: u32,
    pub pattern: Pattern,
    pub size: f64,
    pub motion: Motion,
    pub bright: bool,
    pub duration_us: u64,
    pub noise_rate: f64,
    pub jitter_us: f64,
    pub levels: usize,
    pub edge_width: f64,

    // noise filter
    pub filter: bool,
    pub filter_half_width: u32,
    pub filter_window_us: u64,

    // features
    pub a: usize,
    pub partitions: usize,
    pub window_us: u64,
    pub sigma: [f64; 3],
    pub variance_fraction: f64,
    pub n_pca: usize,
    pub n_sfa: usize,
    pub ridge: f64,
    pub max_samples: usize,
    pub max_matches: usize,

    // matching and tracking
    pub deltas_us: Vec<u64>,
    pub spatial_set: SpatialSet,
    pub overlap_r: f64,
    pub n0: usize,
    pub stop_rule: StopRule,
    pub reference_window: ReferenceWindow,
    pub tau_us: f64,

    // evaluation
    pub horizon_s: f64,
    pub step_s: f64,
    pub radius: f64,

    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            events: "events.bin".into(),
            filtered: "filtered.bin".into(),
            truth: "truth.csv".into(),
            init: "truth.csv".into(),
            out_dir: "model".into(),
            basis: "model/sfa_smoothed.basis".into(),
            tracks: "tracks.csv".into(),
            curve_prefix: "curve".into(),
            weights_out: "weights.csv".into(),
            event_format: "auto".into(),
            width: 128,
            height: 128,
            pattern: Pattern::Square,
            size: 24.0,
            motion: Motion::new(vec![
                Pose::new(0, 44.0, 44.0, 1.0, 0.0),
                Pose::new(2_000_000, 64.0, 64.0, 1.2, 0.0),
            ])
            .unwrap(),
            bright: true,
            duration_us: 2_000_000,
            noise_rate: 0.0,
            jitter_us: 0.0,
            levels: 6,
            edge_width: 1.0,
            filter: true,
            filter_half_width: 2,
            filter_window_us: 30_000,
            a: 10,
            partitions: 25,
            window_us: 100_000,
            sigma: [3.0, 3.0, 3.0],
            variance_fraction: 0.95,
            n_pca: 10,
            n_sfa: 150,
            ridge: 1e-6,
            max_samples: 50_000,
            max_matches: 50_000,
            deltas_us: vec![25_000, 50_000, 100_000, 200_000],
            spatial_set: SpatialSet::Diagonal,
            overlap_r: 0.5,
            n0: 5,
            stop_rule: StopRule::MinOverAll,
            reference_window: ReferenceWindow::Fixed,
            tau_us: 50_000.0,
            horizon_s: 1.5,
            step_s: 0.05,
            radius: 7.0,
            seed: 0,
        }
    }
}

/// Every recognized key, in file order.
pub const KEYS: &[&str] = &[
    "events",
    "filtered",
    "truth",
    "init",
    "out_dir",
    "basis",
    "tracks",
    "curve_prefix",
    "weights_out",
    "event_format",
    "width",
    "height",
    "pattern",
    "size",
    "motion",
    "bright",
    "duration_us",
    "noise_rate",
    "jitter_us",
    "levels",
    "edge_width",
    "filter",
    "filter_half_width",
    "filter_window_us",
    "a",
    "partitions",
    "window_us",
    "sigma",
    "variance_fraction",
    "n_pca",
    "n_sfa",
    "ridge",
    "max_samples",
    "max_matches",
    "deltas_us",
    "spatial_set",
    "overlap_r",
    "n0",
    "stop_rule",
    "reference_window",
    "tau_us",
    "horizon_s",
    "step_s",
    "radius",
    "seed",
];

fn key_name(key: &str) -> Result<&'static str> {
    KEYS.iter()
        .copied()
        .find(|k| *k == key)
        .ok_or_else(|| Error::param("config", format!("unknown key `{key}`")))
}

fn num<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::param(key, format!("cannot parse `{v}`")))
}

fn flag(key: &'static str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::param(key, format!("expected true or false, got `{v}`"))),
    }
}

fn list<T: std::str::FromStr>(key: &'static str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| num(key, s.trim())).collect()
}

impl PipelineConfig {
    /// Parses `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("config line {}", i + 1), "expected `key = value`"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key_name(key)?;
        let v = value;
        match key {
            "events" => self.events = v.into(),
            "filtered" => self.filtered = v.into(),
            "truth" => self.truth = v.into(),
            "init" => self.init = v.into(),
            "out_dir" => self.out_dir = v.into(),
            "basis" => self.basis = v.into(),
            "tracks" => self.tracks = v.into(),
            "curve_prefix" => self.curve_prefix = v.into(),
            "weights_out" => self.weights_out = v.into(),
            "event_format" => {
                if v != "auto" {
                    v.parse::<crate::io::EventFormat>()
                        .map_err(|_| Error::param(key, format!("unknown format `{v}`")))?;
                }
                self.event_format = v.into()
            }
            "width" => self.width = num(key, v)?,
            "height" => self.height = num(key, v)?,
            "pattern" => self.pattern = v.parse()?,
            "size" => self.size = num(key, v)?,
            "motion" => self.motion = v.parse()?,
            "bright" => self.bright = flag(key, v)?,
            "duration_us" => self.duration_us = num(key, v)?,
            "noise_rate" => self.noise_rate = num(key, v)?,
            "jitter_us" => self.jitter_us = num(key, v)?,
            "levels" => self.levels = num(key, v)?,
            "edge_width" => self.edge_width = num(key, v)?,
            "filter" => self.filter = flag(key, v)?,
            "filter_half_width" => self.filter_half_width = num(key, v)?,
            "filter_window_us" => self.filter_window_us = num(key, v)?,
            "a" => self.a = num(key, v)?,
            "partitions" => self.partitions = num(key, v)?,
            "window_us" => self.window_us = num(key, v)?,
            "sigma" => {
                let s: Vec<f64> = list(key, v)?;
                self.sigma = match s[..] {
                    [x] => [x, x, x],
                    [x, y, t] => [x, y, t],
                    _ => return Err(Error::param(key, "expected one value or three comma-separated values")),
                }
            }
            "variance_fraction" => self.variance_fraction = num(key, v)?,
            "n_pca" => self.n_pca = num(key, v)?,
            "n_sfa" => self.n_sfa = num(key, v)?,
            "ridge" => self.ridge = num(key, v)?,
            "max_samples" => self.max_samples = num(key, v)?,
            "max_matches" => self.max_matches = num(key, v)?,
            "deltas_us" => self.deltas_us = list(key, v)?,
            "spatial_set" => {
                self.spatial_set = match v {
                    "diagonal" => SpatialSet::Diagonal,
                    "eight" => SpatialSet::EightConnected,
                    _ => return Err(Error::param(key, format!("expected diagonal or eight, got `{v}`"))),
                }
            }
            "overlap_r" => self.overlap_r = num(key, v)?,
            "n0" => self.n0 = num(key, v)?,
            "stop_rule" => self.stop_rule = v.parse()?,
            "reference_window" => self.reference_window = v.parse()?,
            "tau_us" => self.tau_us = num(key, v)?,
            "horizon_s" => self.horizon_s = num(key, v)?,
            "step_s" => self.step_s = num(key, v)?,
            "radius" => self.radius = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            _ => unreachable!("key list and setter disagree on `{key}`"),
        }
        Ok(())
    }

    /// Serializes every key; parsing the result gives back the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        let pattern = match self.pattern {
            Pattern::Edge => "edge".to_string(),
            Pattern::Corner => "corner".to_string(),
            Pattern::Square => "square".to_string(),
            Pattern::Grid { cells } => format!("grid{cells}"),
            Pattern::Digit => "digit".to_string(),
        };
        let stop = match self.stop_rule {
            StopRule::MinOverAll => "min-over-all",
            StopRule::AtBest => "at-best",
        };
        let spatial = match self.spatial_set {
            SpatialSet::Diagonal => "diagonal",
            SpatialSet::EightConnected => "eight",
        };
        let p = |p: &PathBuf| p.display().to_string();
        let values: Vec<(&str, String)> = vec![
            ("events", p(&self.events)),
            ("filtered", p(&self.filtered)),
            ("truth", p(&self.truth)),
            ("init", p(&self.init)),
            ("out_dir", p(&self.out_dir)),
            ("basis", p(&self.basis)),
            ("tracks", p(&self.tracks)),
            ("curve_prefix", p(&self.curve_prefix)),
            ("weights_out", p(&self.weights_out)),
            ("event_format", self.event_format.clone()),
            ("width", self.width.to_string()),
            ("height", self.height.to_string()),
            ("pattern", pattern),
            ("size", self.size.to_string()),
            ("motion", self.motion.to_string()),
            ("bright", self.bright.to_string()),
            ("duration_us", self.duration_us.to_string()),
            ("noise_rate", self.noise_rate.to_string()),
            ("jitter_us", self.jitter_us.to_string()),
            ("levels", self.levels.to_string()),
            ("edge_width", self.edge_width.to_string()),
            ("filter", self.filter.to_string()),
            ("filter_half_width", self.filter_half_width.to_string()),
            ("filter_window_us", self.filter_window_us.to_string()),
            ("a", self.a.to_string()),
            ("partitions", self.partitions.to_string()),
            ("window_us", self.window_us.to_string()),
            ("sigma", format!("{},{},{}", self.sigma[0], self.sigma[1], self.sigma[2])),
            ("variance_fraction", self.variance_fraction.to_string()),
            ("n_pca", self.n_pca.to_string()),
            ("n_sfa", self.n_sfa.to_string()),
            ("ridge", self.ridge.to_string()),
            ("max_samples", self.max_samples.to_string()),
            ("max_matches", self.max_matches.to_string()),
            ("deltas_us", join(&self.deltas_us)),
            ("spatial_set", spatial.to_string()),
            ("overlap_r", self.overlap_r.to_string()),
            ("n0", self.n0.to_string()),
            ("stop_rule", stop.to_string()),
            (
                "reference_window",
                match self.reference_window {
                    ReferenceWindow::Fixed => "fixed",
                    ReferenceWindow::Stretched => "stretched",
                }
                .to_string(),
            ),
            ("tau_us", self.tau_us.to_string()),
            ("horizon_s", self.horizon_s.to_string()),
            ("step_s", self.step_s.to_string()),
            ("radius", self.radius.to_string()),
            ("seed", self.seed.to_string()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        for (k, v) in values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn box_spec(&self) -> Result<BoxSpec> {
        BoxSpec::new(self.a, self.window_us as f64, self.partitions)
    }

    pub fn kernel(&self) -> Result<Kernel3D> {
        gaussian_kernel(self.sigma[0], self.sigma[1], self.sigma[2])
    }

    pub fn displacement_set(&self) -> Result<DisplacementSet> {
        match self.spatial_set {
            SpatialSet::Diagonal => DisplacementSet::diagonal(self.deltas_us.clone(), self.overlap_r),
            SpatialSet::EightConnected => DisplacementSet::eight_connected(self.deltas_us.clone(), self.overlap_r),
        }
    }

    /// Tracker settings covering the evaluation horizon.
    pub fn tracker_params(&self) -> Result<TrackerParams> {
        let dset = self.displacement_set()?;
        let horizon = (self.horizon_s * 1e6).round() as u64;
        let iterations = TrackerParams::iterations_for(&dset, horizon);
        let mut p = TrackerParams::new(dset, self.box_spec()?, self.n0, iterations);
        p.stop_rule = self.stop_rule;
        p.reference_window = self.reference_window;
        Ok(p)
    }

    pub fn scene_spec(&self) -> SceneSpec {
        let mut s = SceneSpec::new(self.width, self.height, self.pattern, self.size, self.motion.clone(), self.duration_us);
        s.bright = self.bright;
        s.noise_rate = self.noise_rate;
        s.jitter_sigma = self.jitter_us;
        s.levels = self.levels;
        s.edge_width = self.edge_width;
        s.seed = self.seed;
        s
    }

    pub fn filter_stream(&self, stream: &EventStream) -> EventStream {
        if self.filter {
            filter_noise(stream, self.filter_half_width, self.filter_window_us)
        } else {
            stream.clone()
        }
    }
}

/// Every intermediate of a training run.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub pca: ProjectionBasis,
    pub pca_smoothed: ProjectionBasis,
    /// The leading `n_sfa` principal components, smoothed; the PCA tracking baseline.
    pub pca_wide_smoothed: ProjectionBasis,
    pub matches: MatchSet,
    /// Raw-count dimension of the stored matches.
    pub match_dim: usize,
    pub sfa: ProjectionBasis,
    pub sfa_smoothed: ProjectionBasis,
    /// The fastest projections, highest slowness first.
    pub sfa_reversed: ProjectionBasis,
    pub sfa_reversed_smoothed: ProjectionBasis,
}

fn stride(total: usize, cap: usize) -> usize {
    total.div_ceil(cap.max(1)).max(1)
}

/// Smoothed count vectors at every `stride`-th event of each stream.
pub fn sample_vectors(
    streams: &[EventStream],
    spec: &BoxSpec,
    sigma: [f64; 3],
    max_samples: usize,
) -> Result<SampleSet> {
    let kernel = gaussian_kernel(sigma[0], sigma[1], sigma[2])?;
    let total: usize = streams.iter().map(EventStream::len).sum();
    let k = stride(total, max_samples);
    let mut vectors = Vec::new();
    for s in streams {
        let index = EventIndex::new(s);
        for e in s.events().iter().step_by(k) {
            let grid = spike_count_matrix(&index, Location::of(e), spec);
            vectors.push(vectorize(&convolve3d(&grid, &kernel)));
        }
    }
    Ok(SampleSet {
        dims: spec.dims(),
        sigma,
        vectors,
    })
}

/// Smooths both raw count vectors of every match.
pub fn smoothed_pairs(matches: &MatchSet, spec: &BoxSpec, sigma: [f64; 3]) -> Result<PairSet> {
    let kernel = gaussian_kernel(sigma[0], sigma[1], sigma[2])?;
    let smooth = |v: &[f64]| -> Result<Vec<f64>> { Ok(vectorize(&convolve3d(&matricize(v, spec.dims())?, &kernel))) };
    Ok(PairSet {
        dims: spec.dims(),
        sigma,
        pairs: matches
            .pairs
            .iter()
            .map(|p| Ok((smooth(&p.pc)?, smooth(&p.pc_prime)?)))
            .collect::<Result<_>>()?,
    })
}

/// Learns the PCA basis, the matches it yields and the slow features, over
/// already filtered streams. Deterministic in its inputs.
pub fn train(streams: &[EventStream], cfg: &PipelineConfig) -> Result<TrainedModels> {
    let spec = cfg.box_spec()?;
    let kernel = cfg.kernel()?;
    let dset = cfg.displacement_set()?;
    if streams.iter().all(EventStream::is_empty) {
        return Err(Error::Degenerate("no events to train on".into()));
    }

    let samples = sample_vectors(streams, &spec, cfg.sigma, cfg.max_samples)?;
    let spectrum = pca_spectrum(&samples)?;
    drop(samples);
    let pca = spectrum.select(cfg.variance_fraction, Some(cfg.n_pca))?;
    let pca_smoothed = smooth_basis(&pca, &kernel)?;
    let pca_wide_smoothed = smooth_basis(&spectrum.leading(cfg.n_sfa), &kernel)?;
    let features = FeatureExtractor::new(&pca_smoothed)?;

    let total: usize = streams.iter().map(EventStream::len).sum();
    let k = stride(total, cfg.max_matches);
    let mut matches = MatchSet::default();
    for s in streams {
        let index = EventIndex::new(s);
        let m = extract_all_matches(&index, &features, &dset, &spec, Sampling::EveryKth(k))?;
        matches.pairs.extend(m.pairs);
        matches.skipped += m.skipped;
    }

    let pairs = smoothed_pairs(&matches, &spec, cfg.sigma)?;
    let spectrum = slowness_spectrum(&pairs, cfg.ridge)?;
    drop(pairs);
    let sfa = spectrum.slowest(cfg.n_sfa)?;
    let sfa_reversed = spectrum.fastest(cfg.n_sfa)?;
    Ok(TrainedModels {
        pca_smoothed,
        pca_wide_smoothed,
        sfa_smoothed: smooth_basis(&sfa, &kernel)?,
        sfa_reversed_smoothed: smooth_basis(&sfa_reversed, &kernel)?,
        pca,
        match_dim: spec.len(),
        matches,
        sfa,
        sfa_reversed,
    })
}

/// Checks that a persisted basis fits the configured box.
pub fn check_basis(basis: &ProjectionBasis, cfg: &PipelineConfig) -> Result<()> {
    let want = [cfg.a, cfg.a, cfg.partitions];
    if basis.dims != want {
        return Err(Error::shape(format!("basis for a={} M={}", cfg.a, cfg.partitions), format!("{:?}", basis.dims)));
    }
    Ok(())
}
