//! Feature-point tracking with single-pixel updates.
//!
//! Each iteration compares the feature at the current position against every
//! displaced candidate (window `dt / (1 + r)`) and moves to the closest one.
//! The current-position window is `T / (1 + r)` by default, or the
//! candidate's own stretched window. The move is spatial only when the box
//! neighborhoods are busy enough; otherwise the tracker holds its pixel and
//! just advances in time.

use crate::error::{Error, Result};
use crate::event::{EventIndex, EventStream};
use crate::matching::{argmin, dissimilarity, Displacement, DisplacementSet};
use crate::subspace::{FeatureExtractor, ProjectionBasis};
use crate::trajectory::{TrackPoint, Trajectory};
use crate::voxel::{box_count, BoxSpec, Location};

/// Which candidate counts gate a spatial move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StopRule {
    /// The smallest count over all candidates must exceed `N0`.
    #[default]
    MinOverAll,
    /// Only the best-matching candidate's count must exceed `N0`.
    AtBest,
}

impl std::str::FromStr for StopRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min-over-all" => Ok(StopRule::MinOverAll),
            "at-best" => Ok(StopRule::AtBest),
            _ => Err(Error::param("stop_rule", format!("expected min-over-all or at-best, got `{s}`"))),
        }
    }
}

/// Window of the feature at the tracker's current position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceWindow {
    /// `T / (1 + r)` for every candidate.
    #[default]
    Fixed,
    /// `dt / (1 + r)`, the same window as the candidate it is compared with.
    Stretched,
}

impl std::str::FromStr for ReferenceWindow {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(ReferenceWindow::Fixed),
            "stretched" => Ok(ReferenceWindow::Stretched),
            _ => Err(Error::param("reference_window", format!("expected fixed or stretched, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerParams {
    pub dset: DisplacementSet,
    /// Box geometry; `spec.window` is the full window `T`.
    pub spec: BoxSpec,
    /// Minimum event count for a spatial move.
    pub n0: usize,
    /// Number of trajectory samples, including the initial position.
    pub iterations: usize,
    pub stop_rule: StopRule,
    pub reference_window: ReferenceWindow,
    /// Candidates later than this are never considered; defaults to the last event time.
    pub end_time: Option<u64>,
}

impl TrackerParams {
    pub fn new(dset: DisplacementSet, spec: BoxSpec, n0: usize, iterations: usize) -> Self {
        TrackerParams {
            dset,
            spec,
            n0,
            iterations,
            stop_rule: StopRule::MinOverAll,
            reference_window: ReferenceWindow::Fixed,
            end_time: None,
        }
    }

    /// Enough iterations to cover `horizon` microseconds at the smallest temporal step.
    pub fn iterations_for(dset: &DisplacementSet, horizon: u64) -> usize {
        (horizon / dset.temporal()[0]) as usize + 1
    }

    fn count_window(&self) -> f64 {
        self.spec.window / (1.0 + self.dset.overlap())
    }
}

/// A local descriptor usable by the tracking loop.
pub trait Descriptor {
    type Feature;

    /// Descriptor of the neighborhood at `at` using a window of `window` microseconds.
    fn describe(&self, index: &EventIndex<'_>, at: Location, window: f64) -> Result<Self::Feature>;

    fn distance(&self, a: &Self::Feature, b: &Self::Feature) -> Result<f64>;
}

/// Projection of smoothed counts onto a learned basis.
pub struct ProjectionDescriptor<'a> {
    features: &'a FeatureExtractor,
    spec: BoxSpec,
}

impl<'a> ProjectionDescriptor<'a> {
    pub fn new(features: &'a FeatureExtractor, spec: BoxSpec) -> Self {
        ProjectionDescriptor { features, spec }
    }
}

impl Descriptor for ProjectionDescriptor<'_> {
    type Feature = Vec<f64>;

    fn describe(&self, index: &EventIndex<'_>, at: Location, window: f64) -> Result<Vec<f64>> {
        self.features.extract(index, at, &self.spec.with_window(window)?)
    }

    fn distance(&self, a: &Vec<f64>, b: &Vec<f64>) -> Result<f64> {
        dissimilarity(a, b)
    }
}

/// Per-pixel time of the latest event at or before the query time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSurface {
    pub a: usize,
    /// Query time.
    pub t: u64,
    /// `a * a` cells, x fastest; `None` where the pixel never fired.
    pub cells: Vec<Option<u64>>,
}

pub fn time_surface_feature(index: &EventIndex<'_>, center: Location, a: usize) -> TimeSurface {
    let lo = -((a / 2) as i64);
    let mut cells = Vec::with_capacity(a * a);
    for j in 0..a as i64 {
        for i in 0..a as i64 {
            let times = index.pixel_times(center.x + lo + i, center.y + lo + j);
            let n = times.partition_point(|&s| s <= center.t);
            cells.push(n.checked_sub(1).map(|k| times[k]));
        }
    }
    TimeSurface { a, t: center.t, cells }
}

/// Sum of squared differences of `exp(-(t_query - last) / tau)`; never-fired cells decay to 0.
pub fn time_surface_dissimilarity(reference: &TimeSurface, candidate: &TimeSurface, tau: f64) -> Result<f64> {
    if reference.cells.len() != candidate.cells.len() {
        return Err(Error::shape(reference.cells.len(), candidate.cells.len()));
    }
    let decay = |t: u64, last: Option<u64>| last.map_or(0.0, |s| (-((t - s) as f64) / tau).exp());
    Ok(reference
        .cells
        .iter()
        .zip(&candidate.cells)
        .map(|(&r, &c)| {
            let d = decay(reference.t, r) - decay(candidate.t, c);
            d * d
        })
        .sum())
}

pub struct TimeSurfaceDescriptor {
    pub a: usize,
    pub tau: f64,
}

impl Descriptor for TimeSurfaceDescriptor {
    type Feature = TimeSurface;

    fn describe(&self, index: &EventIndex<'_>, at: Location, _window: f64) -> Result<TimeSurface> {
        Ok(time_surface_feature(index, at, self.a))
    }

    fn distance(&self, a: &TimeSurface, b: &TimeSurface) -> Result<f64> {
        time_surface_dissimilarity(a, b, self.tau)
    }
}

/// One step of the tracking loop: the chosen displacement and whether it moved spatially.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub best: Displacement,
    pub min_count: usize,
    pub moved: bool,
}

/// Runs the tracking loop with any descriptor. Stops early, returning the
/// partial trajectory, once no candidate stays on the sensor within the
/// stream's time span.
pub fn track_with<D: Descriptor>(
    index: &EventIndex<'_>,
    p0: Location,
    descriptor: &D,
    params: &TrackerParams,
    id: u32,
) -> Result<(Trajectory, Vec<Step>)> {
    let stream = index.stream();
    if !stream.contains_pixel(p0.x, p0.y) {
        return Err(Error::param(
            "init",
            format!("initial position ({}, {}) is outside the {}x{} sensor", p0.x, p0.y, stream.width(), stream.height()),
        ));
    }
    if params.iterations == 0 {
        return Err(Error::param("iterations", "must be >= 1"));
    }
    let end = params
        .end_time
        .or_else(|| stream.time_span().map(|(_, e)| e))
        .unwrap_or(p0.t);
    let fixed_window = params.count_window();
    let count_spec = params.spec.with_window(fixed_window)?;

    let mut p = p0;
    let mut samples = vec![TrackPoint::new(p.x as f64, p.y as f64, p.t)];
    let mut steps = Vec::new();
    while samples.len() < params.iterations {
        let fixed = match params.reference_window {
            ReferenceWindow::Fixed => Some(descriptor.describe(index, p, fixed_window)?),
            ReferenceWindow::Stretched => None,
        };
        let mut scored = Vec::new();
        let mut counts = Vec::new();
        for &dt in params.dset.temporal() {
            if p.t + dt > end {
                break;
            }
            let window = params.dset.stretched_window(dt);
            let stretched = match &fixed {
                Some(_) => None,
                None => Some(descriptor.describe(index, p, window)?),
            };
            let current = fixed.as_ref().or(stretched.as_ref()).unwrap();
            for &(dx, dy) in params.dset.spatial() {
                let delta = Displacement { dx, dy, dt };
                let q = delta.apply(p);
                if !stream.contains_pixel(q.x, q.y) {
                    continue;
                }
                let cand = descriptor.describe(index, q, window)?;
                scored.push((delta, descriptor.distance(current, &cand)?));
                counts.push(box_count(index, q, &count_spec));
            }
        }
        let Some((best, _)) = argmin(&scored) else {
            break;
        };
        let gate = match params.stop_rule {
            StopRule::MinOverAll => *counts.iter().min().unwrap(),
            StopRule::AtBest => counts[scored.iter().position(|(d, _)| *d == best).unwrap()],
        };
        let moved = gate > params.n0;
        p = if moved {
            best.apply(p)
        } else {
            Location::new(p.x, p.y, p.t + best.dt)
        };
        samples.push(TrackPoint::new(p.x as f64, p.y as f64, p.t));
        steps.push(Step {
            best,
            min_count: gate,
            moved,
        });
    }
    Ok((Trajectory::new(id, samples), steps))
}

/// Tracks with a smoothed projection basis.
pub fn track_point(
    stream: &EventStream,
    p0: Location,
    basis: &ProjectionBasis,
    params: &TrackerParams,
) -> Result<Trajectory> {
    let features = FeatureExtractor::new(basis)?;
    let index = EventIndex::new(stream);
    let descriptor = ProjectionDescriptor::new(&features, params.spec);
    Ok(track_with(&index, p0, &descriptor, params, 0)?.0)
}

/// Tracks with time surfaces of side `params.spec.a` and decay `tau` microseconds.
pub fn track_point_ts(stream: &EventStream, p0: Location, params: &TrackerParams, tau: f64) -> Result<Trajectory> {
    if !(tau > 0.0) {
        return Err(Error::param("tau", "must be > 0"));
    }
    let index = EventIndex::new(stream);
    let descriptor = TimeSurfaceDescriptor { a: params.spec.a, tau };
    Ok(track_with(&index, p0, &descriptor, params, 0)?.0)
}
