//! Synthetic event scenes with ground truth.
//!
//! A shape moves over the sensor along a piecewise-linear pose path. Its
//! outline is blurred into a linear intensity ramp, and a pixel (sampled at
//! its integer center) fires one event per contrast threshold the ramp
//! crosses: ON when the pixel brightens. Background activity is an
//! independent uniform Poisson process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::{Error, Result};
use crate::event::{Event, EventStream};
use crate::trajectory::{TrackPoint, Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pattern {
    /// A straight edge through the origin, dark on one side.
    Edge,
    /// A single right-angle corner at the origin.
    Corner,
    /// A square of side `size`.
    Square,
    /// `cells x cells` squares of side `size` separated by gaps of `size`.
    Grid { cells: usize },
    /// A seven-shaped polygon of height `size`.
    Digit,
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "edge" => Ok(Pattern::Edge),
            "corner" => Ok(Pattern::Corner),
            "square" => Ok(Pattern::Square),
            "digit" => Ok(Pattern::Digit),
            _ => match s.strip_prefix("grid") {
                Some("") => Ok(Pattern::Grid { cells: 2 }),
                Some(n) => n
                    .trim_start_matches(['-', ':'])
                    .parse()
                    .ok()
                    .filter(|&c| c > 0)
                    .map(|cells| Pattern::Grid { cells })
                    .ok_or_else(|| Error::param("pattern", format!("bad grid size in `{s}`"))),
                None => Err(Error::param("pattern", format!("unknown pattern `{s}`"))),
            },
        }
    }
}

/// Pose control point: center position, scale and rotation (radians) at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub scale: f64,
    pub angle: f64,
}

impl Pose {
    pub fn new(t: u64, x: f64, y: f64, scale: f64, angle: f64) -> Self {
        Pose { t, x, y, scale, angle }
    }

    fn lerp(a: &Pose, b: &Pose, t: f64) -> Pose {
        let span = (b.t - a.t) as f64;
        let u = ((t - a.t as f64) / span).clamp(0.0, 1.0);
        let mix = |p: f64, q: f64| p + (q - p) * u;
        Pose {
            t: t.round() as u64,
            x: mix(a.x, b.x),
            y: mix(a.y, b.y),
            scale: mix(a.scale, b.scale),
            angle: mix(a.angle, b.angle),
        }
    }

    /// Local shape coordinates to sensor coordinates.
    fn forward(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [
            self.x + self.scale * (c * p[0] - s * p[1]),
            self.y + self.scale * (s * p[0] + c * p[1]),
        ]
    }

    fn inverse(&self, q: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        let dx = (q[0] - self.x) / self.scale;
        let dy = (q[1] - self.y) / self.scale;
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

/// Piecewise-linear pose path; constant before the first and after the last control point.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    pub keys: Vec<Pose>,
}

impl Motion {
    pub fn new(keys: Vec<Pose>) -> Result<Self> {
        if keys.is_empty() {
            return Err(Error::param("motion", "need at least one control point"));
        }
        if keys.windows(2).any(|w| w[0].t >= w[1].t) {
            return Err(Error::param("motion", "control-point times must strictly increase"));
        }
        if keys.iter().any(|k| !(k.scale > 0.0) || !k.x.is_finite() || !k.y.is_finite() || !k.angle.is_finite()) {
            return Err(Error::param("motion", "scales must be positive and poses finite"));
        }
        Ok(Motion { keys })
    }

    pub fn pose_at(&self, t: f64) -> Pose {
        let k = &self.keys;
        if t <= k[0].t as f64 {
            return Pose { t: t.max(0.0) as u64, ..k[0] };
        }
        for w in k.windows(2) {
            if t <= w[1].t as f64 {
                return Pose::lerp(&w[0], &w[1], t);
            }
        }
        Pose { t: t as u64, ..*k.last().unwrap() }
    }
}

/// Text form: `t:x:y:scale:angle` control points separated by `;`.
impl std::str::FromStr for Motion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let keys = s
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| {
                let f: Vec<&str> = p.split(':').map(str::trim).collect();
                if f.len() != 5 {
                    return Err(Error::param("motion", format!("control point `{p}` needs t:x:y:scale:angle")));
                }
                let num = |v: &str| v.parse::<f64>().map_err(|_| Error::param("motion", format!("bad number `{v}`")));
                let t = f[0].parse::<u64>().map_err(|_| Error::param("motion", format!("bad time `{}`", f[0])))?;
                Ok(Pose::new(t, num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?))
            })
            .collect::<Result<Vec<_>>>()?;
        Motion::new(keys)
    }
}

impl std::fmt::Display for Motion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, k) in self.keys.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{}:{}:{}:{}:{}", k.t, k.x, k.y, k.scale, k.angle)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: u32,
    pub height: u32,
    pub pattern: Pattern,
    /// Pattern size in pixels at scale 1.
    pub size: f64,
    pub motion: Motion,
    /// True when the shape is brighter than the background.
    pub bright: bool,
    pub duration: u64,
    /// Background events per pixel per second.
    pub noise_rate: f64,
    /// Standard deviation of timestamp jitter, microseconds.
    pub jitter_sigma: f64,
    /// Contrast thresholds between background and shape; each one crossed fires an event.
    pub levels: usize,
    /// Width of the blurred intensity ramp across the outline, pixels; 0 gives hard edges.
    pub edge_width: f64,
    pub seed: u64,
    /// Time step of the crossing search, microseconds.
    pub step: u64,
    /// Spacing of ground-truth samples, microseconds.
    pub truth_step: u64,
}

impl SceneSpec {
    pub fn new(width: u32, height: u32, pattern: Pattern, size: f64, motion: Motion, duration: u64) -> Self {
        SceneSpec {
            width,
            height,
            pattern,
            size,
            motion,
            bright: true,
            duration,
            noise_rate: 0.0,
            jitter_sigma: 0.0,
            levels: 6,
            edge_width: 1.0,
            seed: 0,
            step: 250,
            truth_step: 5_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.duration == 0 {
            return Err(Error::param("duration", "must be > 0"));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::param("noise_rate", "must be finite and >= 0"));
        }
        if !(self.jitter_sigma >= 0.0 && self.jitter_sigma.is_finite()) {
            return Err(Error::param("jitter_sigma", "must be finite and >= 0"));
        }
        if self.levels == 0 {
            return Err(Error::param("levels", "must be >= 1"));
        }
        if !(self.edge_width >= 0.0 && self.edge_width.is_finite()) {
            return Err(Error::param("edge_width", "must be finite and >= 0"));
        }
        if !(self.size > 0.0) {
            return Err(Error::param("size", "must be > 0"));
        }
        if self.step == 0 || self.truth_step == 0 {
            return Err(Error::param("step", "time steps must be > 0"));
        }
        if self.width == 0 || self.height == 0 || self.width > 1 << 16 || self.height > 1 << 16 {
            return Err(Error::param("width/height", "sensor must be 1..=65536 pixels per side"));
        }
        Motion::new(self.motion.keys.clone()).map(|_| ())
    }
}

type Polygon = Vec<[f64; 2]>;

/// Polygons (union) and designated feature points in local coordinates.
fn shape(pattern: Pattern, size: f64) -> (Vec<Polygon>, Vec<[f64; 2]>) {
    let rect = |x0: f64, y0: f64, x1: f64, y1: f64| vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]];
    let far = 1e4;
    match pattern {
        Pattern::Edge => (vec![rect(0.0, -far, far, far)], vec![[0.0, 0.0]]),
        Pattern::Corner => (vec![rect(0.0, 0.0, far, far)], vec![[0.0, 0.0]]),
        Pattern::Square => {
            let h = size / 2.0;
            let poly = rect(-h, -h, h, h);
            (vec![poly.clone()], poly)
        }
        Pattern::Grid { cells } => {
            let pitch = 2.0 * size;
            let origin = -(pitch * cells as f64 - size) / 2.0;
            let mut polys = Vec::new();
            let mut points = Vec::new();
            for r in 0..cells {
                for c in 0..cells {
                    let x0 = origin + c as f64 * pitch;
                    let y0 = origin + r as f64 * pitch;
                    let poly = rect(x0, y0, x0 + size, y0 + size);
                    points.extend_from_slice(&poly);
                    polys.push(poly);
                }
            }
            (polys, points)
        }
        Pattern::Digit => {
            let s = size;
            let poly: Polygon = [
                [-0.5, -0.5],
                [0.5, -0.5],
                [0.5, -0.3],
                [0.05, 0.5],
                [-0.2, 0.5],
                [0.2, -0.3],
                [-0.5, -0.3],
            ]
            .iter()
            .map(|p| [p[0] * s, p[1] * s])
            .collect();
            (vec![poly.clone()], poly)
        }
    }
}

fn inside(poly: &Polygon, p: [f64; 2]) -> bool {
    let mut c = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + n - 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) && p[0] < (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0] {
            c = !c;
        }
    }
    c
}

fn outline_distance(poly: &Polygon, p: [f64; 2]) -> f64 {
    let n = poly.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
        let (px, py) = (p[0] - a[0], p[1] - a[1]);
        let u = ((px * ex + py * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
        best = best.min((px - u * ex).hypot(py - u * ey));
    }
    best
}

struct Scene {
    polys: Vec<Polygon>,
    motion: Motion,
    edge_width: f64,
    levels: usize,
}

impl Scene {
    /// Fraction of full contrast at a pixel center: 1 well inside, 0 well outside.
    fn coverage(&self, pose: &Pose, x: f64, y: f64) -> f64 {
        let q = pose.inverse([x, y]);
        let hit = self.polys.iter().position(|p| inside(p, q));
        if self.edge_width == 0.0 {
            return if hit.is_some() { 1.0 } else { 0.0 };
        }
        let signed = match hit {
            Some(k) => outline_distance(&self.polys[k], q),
            None => -self.polys.iter().map(|p| outline_distance(p, q)).fold(f64::INFINITY, f64::min),
        };
        (0.5 + signed * pose.scale / self.edge_width).clamp(0.0, 1.0)
    }

    /// Number of thresholds `(k + 0.5) / levels` below `cov`.
    fn level(&self, cov: f64) -> usize {
        ((cov * self.levels as f64 - 0.5).ceil().max(0.0) as usize).min(self.levels)
    }

    fn coverage_at(&self, t: f64, x: f64, y: f64) -> f64 {
        self.coverage(&self.motion.pose_at(t), x, y)
    }

    /// Pixel rectangle (inclusive) containing the blurred shape at any of the poses.
    fn bbox(&self, poses: &[Pose], width: u32, height: u32) -> Option<(i64, i64, i64, i64)> {
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for pose in poses {
            for poly in &self.polys {
                for &v in poly {
                    let q = pose.forward(v);
                    x0 = x0.min(q[0]);
                    y0 = y0.min(q[1]);
                    x1 = x1.max(q[0]);
                    y1 = y1.max(q[1]);
                }
            }
        }
        let pad = 1 + self.edge_width.ceil() as i64;
        let x0 = (x0.floor() as i64 - pad).max(0);
        let y0 = (y0.floor() as i64 - pad).max(0);
        let x1 = (x1.ceil() as i64 + pad).min(width as i64 - 1);
        let y1 = (y1.ceil() as i64 + pad).min(height as i64 - 1);
        (x0 <= x1 && y0 <= y1).then_some((x0, y0, x1, y1))
    }
}

/// Ground-truth paths of the pattern's feature points.
pub fn feature_trajectories(spec: &SceneSpec) -> TrajectorySet {
    let (_, points) = shape(spec.pattern, spec.size);
    let mut times: Vec<u64> = (0..=spec.duration).step_by(spec.truth_step as usize).collect();
    if *times.last().unwrap() != spec.duration {
        times.push(spec.duration);
    }
    points
        .iter()
        .enumerate()
        .map(|(id, &p)| {
            let samples = times
                .iter()
                .map(|&t| {
                    let q = spec.motion.pose_at(t as f64).forward(p);
                    TrackPoint::new(q[0], q[1], t)
                })
                .collect();
            Trajectory::new(id as u32, samples)
        })
        .collect()
}

/// Renders the scene into events plus the feature-point ground truth.
/// Deterministic for a fixed `seed`.
pub fn synthesize_scene(spec: &SceneSpec) -> Result<(EventStream, TrajectorySet)> {
    spec.validate()?;
    let (polys, _) = shape(spec.pattern, spec.size);
    let scene = Scene {
        polys,
        motion: spec.motion.clone(),
        edge_width: spec.edge_width,
        levels: spec.levels,
    };
    let (w, h) = (spec.width as usize, spec.height as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let jitter = (spec.jitter_sigma > 0.0).then(|| Normal::new(0.0, spec.jitter_sigma).unwrap());

    let pose0 = scene.motion.pose_at(0.0);
    let mut level = vec![0usize; w * h];
    if let Some((x0, y0, x1, y1)) = scene.bbox(&[pose0], spec.width, spec.height) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                level[y as usize * w + x as usize] = scene.level(scene.coverage(&pose0, x as f64, y as f64));
            }
        }
    }

    let mut events = Vec::new();
    let mut t_prev = 0u64;
    let mut pose_prev = pose0;
    while t_prev < spec.duration {
        let t_next = (t_prev + spec.step).min(spec.duration);
        let pose_next = scene.motion.pose_at(t_next as f64);
        let still = pose_next == Pose { t: pose_next.t, ..pose_prev };
        let region = scene.bbox(&[pose_prev, pose_next], spec.width, spec.height);
        if let (false, Some((x0, y0, x1, y1))) = (still, region) {
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (xf, yf) = (x as f64, y as f64);
                    let k = y as usize * w + x as usize;
                    let now = scene.level(scene.coverage(&pose_next, xf, yf));
                    let before = level[k];
                    if now == before {
                        continue;
                    }
                    let brighter = now > before;
                    let crossed = if brighter { before..now } else { now..before };
                    for l in crossed {
                        let threshold = (l as f64 + 0.5) / scene.levels as f64;
                        // bisect for the time the ramp passes this threshold
                        let (mut lo, mut hi) = (t_prev as f64, t_next as f64);
                        while hi - lo > 0.5 {
                            let mid = 0.5 * (lo + hi);
                            if (scene.coverage_at(mid, xf, yf) > threshold) == brighter {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        let mut t = hi.round();
                        if let Some(j) = &jitter {
                            t = (t + j.sample(&mut rng)).round().clamp(0.0, spec.duration as f64);
                        }
                        events.push(Event::new(x as u16, y as u16, t as u64, brighter == spec.bright));
                    }
                    level[k] = now;
                }
            }
        }
        t_prev = t_next;
        pose_prev = pose_next;
    }

    if spec.noise_rate > 0.0 {
        let mean = spec.noise_rate * (w * h) as f64 * spec.duration as f64 * 1e-6;
        let n = Poisson::new(mean)
            .map_err(|e| Error::param("noise_rate", e.to_string()))?
            .sample(&mut rng) as usize;
        for _ in 0..n {
            let x = rng.gen_range(0..spec.width) as u16;
            let y = rng.gen_range(0..spec.height) as u16;
            let t = rng.gen_range(0..spec.duration);
            events.push(Event::new(x, y, t, rng.gen_bool(0.5)));
        }
    }

    let stream = EventStream::new(spec.width, spec.height, events)?;
    Ok((stream, feature_trajectories(spec)))
}
