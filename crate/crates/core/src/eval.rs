//! Tracking accuracy against ground truth.
//!
//! Times on a curve are seconds since each tracker's initialization. Truth
//! is linearly interpolated; estimates are held at their latest sample.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_text, write_atomic};
use crate::trajectory::{Trajectory, TrajectorySet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveSample {
    /// Seconds since initialization.
    pub t: f64,
    pub value: f64,
    pub n_alive: usize,
}

/// A sampled curve; samples with no alive trackers are omitted.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Curve {
    pub samples: Vec<CurveSample>,
}

impl Curve {
    /// Value at the last sample with `t <= at` (seconds).
    pub fn value_at(&self, at: f64) -> Option<f64> {
        self.samples.iter().rev().find(|s| s.t <= at + 1e-9).map(|s| s.value)
    }

    pub fn last(&self) -> Option<&CurveSample> {
        self.samples.last()
    }

    pub fn max_value(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.value).reduce(f64::max)
    }
}

/// Position on `truth` at absolute time `t` by linear interpolation.
pub fn interpolate_truth(truth: &Trajectory, t: u64) -> Result<(f64, f64)> {
    let s = &truth.samples;
    let (Some(first), Some(last)) = (s.first(), s.last()) else {
        return Err(Error::Range { t, start: 0, end: 0 });
    };
    if t < first.t || t > last.t {
        return Err(Error::Range {
            t,
            start: first.t,
            end: last.t,
        });
    }
    let k = s.partition_point(|p| p.t < t);
    let b = s[k];
    if b.t == t || k == 0 {
        return Ok((b.x, b.y));
    }
    let a = s[k - 1];
    let u = (t - a.t) as f64 / (b.t - a.t) as f64;
    Ok((a.x + u * (b.x - a.x), a.y + u * (b.y - a.y)))
}

/// Latest estimate at or before `t`; the first sample before the estimate starts.
fn held_estimate(est: &Trajectory, t: u64) -> (f64, f64) {
    let k = est.samples.partition_point(|p| p.t <= t);
    let p = est.samples[k.saturating_sub(1)];
    (p.x, p.y)
}

/// Per grid time: the errors of all alive trackers.
fn errors_on_grid(
    estimates: &TrajectorySet,
    truth: &TrajectorySet,
    horizon: f64,
    step: f64,
) -> Result<Vec<(f64, Vec<f64>)>> {
    if !(step > 0.0) || !(horizon >= 0.0) {
        return Err(Error::param("horizon/step", "need horizon >= 0 and step > 0"));
    }
    let est_ids: BTreeSet<u32> = estimates.iter().map(|t| t.id).collect();
    let truth_ids: BTreeSet<u32> = truth.iter().map(|t| t.id).collect();
    if est_ids.len() != estimates.len() || truth_ids.len() != truth.len() {
        return Err(Error::Pairing("duplicate trajectory ids".into()));
    }
    if est_ids != truth_ids {
        let missing: Vec<_> = truth_ids.symmetric_difference(&est_ids).collect();
        return Err(Error::Pairing(format!("ids without a counterpart: {missing:?}")));
    }
    if let Some(t) = estimates.iter().chain(truth.iter()).find(|t| t.samples.is_empty()) {
        return Err(Error::Pairing(format!("trajectory {} has no samples", t.id)));
    }

    let step_us = (step * 1e6).round() as u64;
    let n = (horizon / step + 1e-9).floor() as u64;
    let mut out = Vec::new();
    for k in 0..=n {
        let s = k * step_us;
        let mut errors = Vec::new();
        for gt in truth.iter() {
            if gt.span() <= s {
                continue;
            }
            let t = gt.samples[0].t + s;
            let (gx, gy) = interpolate_truth(gt, t)?;
            let (ex, ey) = held_estimate(estimates.get(gt.id).unwrap(), t);
            errors.push((ex - gx).hypot(ey - gy));
        }
        if !errors.is_empty() {
            out.push((s as f64 / 1e6, errors));
        }
    }
    Ok(out)
}

/// Fraction of alive trackers within `radius` pixels of the truth.
pub fn accuracy_curve(
    estimates: &TrajectorySet,
    truth: &TrajectorySet,
    radius: f64,
    horizon: f64,
    step: f64,
) -> Result<Curve> {
    let samples = errors_on_grid(estimates, truth, horizon, step)?
        .into_iter()
        .map(|(t, e)| CurveSample {
            t,
            value: e.iter().filter(|&&d| d <= radius).count() as f64 / e.len() as f64,
            n_alive: e.len(),
        })
        .collect();
    Ok(Curve { samples })
}

/// Mean Euclidean error over alive trackers.
pub fn displacement_curve(estimates: &TrajectorySet, truth: &TrajectorySet, horizon: f64, step: f64) -> Result<Curve> {
    let samples = errors_on_grid(estimates, truth, horizon, step)?
        .into_iter()
        .map(|(t, e)| CurveSample {
            t,
            value: e.iter().sum::<f64>() / e.len() as f64,
            n_alive: e.len(),
        })
        .collect();
    Ok(Curve { samples })
}

pub fn encode_curve(curve: &Curve) -> String {
    let mut s = String::from("t,value,n_alive\n");
    for p in &curve.samples {
        s.push_str(&format!("{},{},{}\n", p.t, p.value, p.n_alive));
    }
    s
}

pub fn parse_curve(text: &str) -> Result<Curve> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,value,n_alive" => {}
        _ => return Err(Error::parse("line 1", "expected header `t,value,n_alive`")),
    }
    let mut samples = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::parse(loc, format!("expected 3 fields, got {}", f.len())));
        }
        let num = |v: &str| v.parse::<f64>().map_err(|_| Error::parse(&loc, format!("bad number `{v}`")));
        samples.push(CurveSample {
            t: num(f[0])?,
            value: num(f[1])?,
            n_alive: f[2].parse().map_err(|_| Error::parse(&loc, format!("bad count `{}`", f[2])))?,
        });
    }
    Ok(Curve { samples })
}

pub fn export_curve(curve: &Curve, path: &Path) -> Result<()> {
    write_atomic(path, encode_curve(curve).as_bytes())
}

pub fn load_curve(path: &Path) -> Result<Curve> {
    parse_curve(&read_text(path)?)
}
