//! Spatiotemporal feature learning for event cameras.
//!
//! Events are binned into local count grids, smoothed, and projected onto
//! learned bases: PCA first, then slow features fitted on point matches
//! found with the PCA features. The learned features drive a single-pixel
//! point tracker that is scored against synthetic ground truth.

pub mod error;
pub mod eval;
pub mod event;
pub mod io;
pub mod matching;
pub mod pipeline;
pub mod subspace;
pub mod synth;
pub mod tracker;
pub mod trajectory;
pub mod voxel;

pub use error::{Error, Result};
pub use eval::{accuracy_curve, displacement_curve, interpolate_truth, Curve, CurveSample};
pub use event::{filter_noise, Event, EventIndex, EventStream};
pub use matching::{Displacement, DisplacementSet, MatchPair, MatchSet, Sampling};
pub use subspace::{BasisKind, FeatureExtractor, PairSet, ProjectionBasis, SampleSet};
pub use synth::{synthesize_scene, Motion, Pattern, Pose, SceneSpec};
pub use tracker::{track_point, track_point_ts, StopRule, TrackerParams};
pub use trajectory::{TrackPoint, Trajectory, TrajectorySet};
pub use voxel::{gaussian_kernel, BoxSpec, Grid3, Kernel3D, Location};
