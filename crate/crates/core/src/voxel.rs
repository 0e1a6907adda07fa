//! Box neighborhoods, spike-count voxel grids, 3D Gaussian kernels and the
//! weight/grid projection used by every feature in the crate.
//!
//! Voxel layout is x-fastest, then y, then t: `index = i + a*j + a*a*m`.
//! For a spatial side `a`, pixel offsets run over `[-a/2, a-1-a/2]`
//! (`-5..=4` for `a = 10`), so the center pixel sits at index `a/2`.
//! The temporal window is causal and half-open: `(t - T, t]`.

use crate::error::{Error, Result};
use crate::event::{trailing_window, Event, EventIndex};

/// A point in sensor space-time. Coordinates are signed so that displaced
/// candidates may fall off the sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Location {
    pub x: i64,
    pub y: i64,
    pub t: u64,
}

impl Location {
    pub fn new(x: i64, y: i64, t: u64) -> Self {
        Location { x, y, t }
    }

    pub fn of(e: &Event) -> Self {
        Location::new(e.x as i64, e.y as i64, e.t)
    }
}

/// Shape of a box neighborhood: `a` x `a` pixels over `window` microseconds
/// split into `partitions` temporal bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSpec {
    pub a: usize,
    pub window: f64,
    pub partitions: usize,
}

impl BoxSpec {
    pub fn new(a: usize, window: f64, partitions: usize) -> Result<Self> {
        if a == 0 {
            return Err(Error::param("a", "spatial side must be at least 1"));
        }
        if partitions == 0 {
            return Err(Error::param("partitions", "need at least one temporal partition"));
        }
        if !(window.is_finite() && window > 0.0) {
            return Err(Error::param("window", format!("temporal extent must be > 0, got {window}")));
        }
        Ok(BoxSpec { a, window, partitions })
    }

    /// Same spatial side and partition count over a different time window.
    pub fn with_window(&self, window: f64) -> Result<Self> {
        BoxSpec::new(self.a, window, self.partitions)
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a, self.a, self.partitions]
    }

    pub fn len(&self) -> usize {
        self.a * self.a * self.partitions
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Temporal extent of one voxel, in microseconds.
    pub fn voxel_duration(&self) -> f64 {
        self.window / self.partitions as f64
    }

    /// Offset of the first pixel relative to the center (non-positive).
    pub fn low_offset(&self) -> i64 {
        -((self.a / 2) as i64)
    }

    pub fn high_offset(&self) -> i64 {
        self.a as i64 - 1 - (self.a / 2) as i64
    }

    /// Temporal bin of an event `age` microseconds before the box's end time.
    /// Callers guarantee `0 <= age < window`.
    #[inline]
    pub fn bin_of_age(&self, age: f64) -> usize {
        let m = ((self.window - age) * self.partitions as f64 / self.window).floor();
        (m.max(0.0) as usize).min(self.partitions - 1)
    }
}

/// Visits every event inside the box around `center`: callback receives the
/// spatial indices `(i, j)`, the event's age `center.t - t`, and its stream position.
pub(crate) fn for_each_in_box(
    index: &EventIndex<'_>,
    center: Location,
    spec: &BoxSpec,
    mut f: impl FnMut(usize, usize, f64, u32),
) {
    let start = center.t as f64 - spec.window;
    let (lo, hi) = (spec.low_offset(), spec.high_offset());
    for (j, dy) in (lo..=hi).enumerate() {
        for (i, dx) in (lo..=hi).enumerate() {
            let (x, y) = (center.x + dx, center.y + dy);
            let times = index.pixel_times(x, y);
            if times.is_empty() {
                continue;
            }
            let range = trailing_window(times, start, center.t);
            if range.is_empty() {
                continue;
            }
            let ids = index.pixel_ids(x, y);
            for k in range {
                f(i, j, (center.t - times[k]) as f64, ids[k]);
            }
        }
    }
}

/// Number of events inside the box around `center`.
pub fn box_count(index: &EventIndex<'_>, center: Location, spec: &BoxSpec) -> usize {
    let start = center.t as f64 - spec.window;
    let (lo, hi) = (spec.low_offset(), spec.high_offset());
    let mut n = 0;
    for y in center.y + lo..=center.y + hi {
        for x in center.x + lo..=center.x + hi {
            let times = index.pixel_times(x, y);
            if !times.is_empty() {
                n += trailing_window(times, start, center.t).len();
            }
        }
    }
    n
}

/// Events inside the box around `center`, in stream order.
pub fn box_neighborhood(index: &EventIndex<'_>, center: Location, spec: &BoxSpec) -> Vec<Event> {
    let mut ids = Vec::new();
    for_each_in_box(index, center, spec, |_, _, _, id| ids.push(id));
    ids.sort_unstable();
    let events = index.stream().events();
    ids.into_iter().map(|id| events[id as usize]).collect()
}

/// Dense 3D array of reals in x-fastest order. Used for count grids,
/// matricized weights and kernels alike.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

/// An `a x a x M` grid of per-voxel event counts (reals once smoothed).
pub type CountGrid = Grid3;

impl Grid3 {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Grid3 {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut g = Grid3::zeros(dims);
        for m in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let k = g.offset(i, j, m);
                    g.data[k] = f(i, j, m);
                }
            }
        }
        g
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, m: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * m)
    }

    pub fn get(&self, i: usize, j: usize, m: usize) -> f64 {
        self.data[self.offset(i, j, m)]
    }

    pub fn set(&mut self, i: usize, j: usize, m: usize, v: f64) {
        let k = self.offset(i, j, m);
        self.data[k] = v;
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn scaled(&self, s: f64) -> Grid3 {
        Grid3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Flattens a grid into its voxel vector.
pub fn vectorize(grid: &Grid3) -> Vec<f64> {
    grid.data.clone()
}

/// Inverse of [`vectorize`].
pub fn matricize(values: &[f64], dims: [usize; 3]) -> Result<Grid3> {
    let n = dims[0] * dims[1] * dims[2];
    if values.len() != n {
        return Err(Error::shape(
            format!("{n} values for {}x{}x{}", dims[0], dims[1], dims[2]),
            format!("{} values", values.len()),
        ));
    }
    Ok(Grid3 {
        dims,
        data: values.to_vec(),
    })
}

/// Voxel histogram of the box neighborhood around `center`.
pub fn spike_count_matrix(index: &EventIndex<'_>, center: Location, spec: &BoxSpec) -> CountGrid {
    let mut grid = Grid3::zeros(spec.dims());
    let a = spec.a;
    for_each_in_box(index, center, spec, |i, j, age, _| {
        let m = spec.bin_of_age(age);
        grid.data[i + a * (j + a * m)] += 1.0;
    });
    grid
}

/// A 3D correlation kernel with odd extents on every axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3D {
    values: Grid3,
    factors: Option<[Vec<f64>; 3]>,
}

impl Kernel3D {
    /// A general kernel from explicit values.
    pub fn from_grid(values: Grid3) -> Result<Self> {
        if values.dims.iter().any(|d| d % 2 == 0) {
            return Err(Error::param("kernel", format!("extents must be odd, got {:?}", values.dims)));
        }
        Ok(Kernel3D { values, factors: None })
    }

    /// A separable kernel, the outer product of three odd-length 1D factors.
    pub fn separable(fx: Vec<f64>, fy: Vec<f64>, ft: Vec<f64>) -> Result<Self> {
        let dims = [fx.len(), fy.len(), ft.len()];
        if dims.iter().any(|d| d % 2 == 0) {
            return Err(Error::param("kernel", format!("extents must be odd, got {dims:?}")));
        }
        let values = Grid3::from_fn(dims, |i, j, m| fx[i] * fy[j] * ft[m]);
        Ok(Kernel3D {
            values,
            factors: Some([fx, fy, ft]),
        })
    }

    /// The 1x1x1 kernel holding a single 1.
    pub fn identity() -> Self {
        Kernel3D::separable(vec![1.0], vec![1.0], vec![1.0]).unwrap()
    }

    pub fn dims(&self) -> [usize; 3] {
        self.values.dims
    }

    pub fn center(&self) -> [usize; 3] {
        let d = self.values.dims;
        [d[0] / 2, d[1] / 2, d[2] / 2]
    }

    pub fn values(&self) -> &Grid3 {
        &self.values
    }

    pub fn factors(&self) -> Option<&[Vec<f64>; 3]> {
        self.factors.as_ref()
    }

    /// True when the kernel equals its point reflection through the center.
    pub fn is_mirror_symmetric(&self) -> bool {
        let [nx, ny, nt] = self.values.dims;
        let scale = self.values.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
        (0..nt).all(|m| {
            (0..ny).all(|j| {
                (0..nx).all(|i| {
                    let a = self.values.get(i, j, m);
                    let b = self.values.get(nx - 1 - i, ny - 1 - j, nt - 1 - m);
                    (a - b).abs() <= tol
                })
            })
        })
    }
}

fn gaussian_factor(sigma: f64) -> Vec<f64> {
    let half = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|u| (-((u * u) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Sampled, separable 3D Gaussian. Sigmas are in voxels (the temporal one in
/// units of one temporal partition); each axis is truncated at `ceil(3 sigma)`
/// and the kernel is normalized to unit sum.
pub fn gaussian_kernel(sigma_x: f64, sigma_y: f64, sigma_t: f64) -> Result<Kernel3D> {
    for (name, s) in [("sigma_x", sigma_x), ("sigma_y", sigma_y), ("sigma_t", sigma_t)] {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::param(name, format!("must be > 0, got {s}")));
        }
    }
    Kernel3D::separable(
        gaussian_factor(sigma_x),
        gaussian_factor(sigma_y),
        gaussian_factor(sigma_t),
    )
}

fn correlate_axis(src: &[f64], dst: &mut [f64], dims: [usize; 3], axis: usize, taps: &[f64]) {
    let half = (taps.len() / 2) as i64;
    let stride = match axis {
        0 => 1,
        1 => dims[0],
        _ => dims[0] * dims[1],
    };
    let len = dims[axis] as i64;
    for m in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let base = i + dims[0] * (j + dims[1] * m);
                let pos = [i, j, m][axis] as i64;
                let lo = (-half).max(-pos);
                let hi = half.min(len - 1 - pos);
                let mut acc = 0.0;
                for u in lo..=hi {
                    let k = (base as i64 + u * stride as i64) as usize;
                    acc += taps[(u + half) as usize] * src[k];
                }
                dst[base] = acc;
            }
        }
    }
}

/// "Same"-size correlation with zero padding. For a mirror-symmetric kernel
/// this is also the convolution. Separable kernels run as three 1D passes.
pub fn convolve3d(grid: &Grid3, kernel: &Kernel3D) -> Grid3 {
    let dims = grid.dims;
    if let Some([fx, fy, ft]) = &kernel.factors {
        let mut a = grid.data.clone();
        let mut b = vec![0.0; a.len()];
        correlate_axis(&a, &mut b, dims, 0, fx);
        correlate_axis(&b, &mut a, dims, 1, fy);
        correlate_axis(&a, &mut b, dims, 2, ft);
        return Grid3 { dims, data: b };
    }

    let kd = kernel.values.dims;
    let [cx, cy, ct] = kernel.center().map(|c| c as i64);
    let mut out = Grid3::zeros(dims);
    for m in 0..dims[2] as i64 {
        for j in 0..dims[1] as i64 {
            for i in 0..dims[0] as i64 {
                let mut acc = 0.0;
                for w in 0..kd[2] as i64 {
                    let mm = m + w - ct;
                    if mm < 0 || mm >= dims[2] as i64 {
                        continue;
                    }
                    for v in 0..kd[1] as i64 {
                        let jj = j + v - cy;
                        if jj < 0 || jj >= dims[1] as i64 {
                            continue;
                        }
                        for u in 0..kd[0] as i64 {
                            let ii = i + u - cx;
                            if ii < 0 || ii >= dims[0] as i64 {
                                continue;
                            }
                            acc += kernel.values.get(u as usize, v as usize, w as usize)
                                * grid.get(ii as usize, jj as usize, mm as usize);
                        }
                    }
                }
                out.set(i as usize, j as usize, m as usize, acc);
            }
        }
    }
    out
}

/// Sum of the element-wise product of two equally shaped grids.
pub fn project(weight: &Grid3, count: &Grid3) -> Result<f64> {
    if weight.dims != count.dims {
        return Err(Error::shape(format!("{:?}", weight.dims), format!("{:?}", count.dims)));
    }
    Ok(weight.data.iter().zip(&count.data).map(|(w, c)| w * c).sum())
}

/// Evaluates both sides of the smoothing/projection swap:
/// `lhs = project(w, C * K)` and `rhs = project(w * K, C)`.
/// They agree for any kernel equal to its own mirror image.
pub fn verify_projection_identity(weight: &Grid3, count: &Grid3, kernel: &Kernel3D) -> Result<(f64, f64)> {
    if weight.dims != count.dims {
        return Err(Error::shape(format!("{:?}", weight.dims), format!("{:?}", count.dims)));
    }
    if !kernel.is_mirror_symmetric() {
        return Err(Error::param(
            "kernel",
            "kernel is not mirror-symmetric; the identity needs the mirrored kernel on one side",
        ));
    }
    let lhs = project(weight, &convolve3d(count, kernel))?;
    let rhs = project(&convolve3d(weight, kernel), count)?;
    Ok((lhs, rhs))
}

/// Grid dump CSV: `nx,ny,nt` header, then `i,j,m,value` per voxel.
pub fn encode_grid_dump(grid: &Grid3) -> String {
    let [nx, ny, nt] = grid.dims;
    let mut out = format!("{nx},{ny},{nt}\n");
    for m in 0..nt {
        for j in 0..ny {
            for i in 0..nx {
                out.push_str(&format!("{i},{j},{m},{:.16e}\n", grid.get(i, j, m)));
            }
        }
    }
    out
}

pub fn parse_grid_dump(text: &str) -> Result<Grid3> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::parse("line 1", "missing dims header"))?;
    let dims: Vec<usize> = header
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| Error::parse("line 1", format!("bad dimension `{s}`"))))
        .collect::<Result<_>>()?;
    let dims: [usize; 3] = dims
        .try_into()
        .map_err(|_| Error::parse("line 1", "expected three dimensions"))?;
    let mut grid = Grid3::zeros(dims);
    for (n, line) in lines {
        let loc = || format!("line {}", n + 1);
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(Error::parse(loc(), "expected `i,j,m,value`"));
        }
        let idx: Vec<usize> = f[..3]
            .iter()
            .map(|s| s.parse().map_err(|_| Error::parse(loc(), format!("bad index `{s}`"))))
            .collect::<Result<_>>()?;
        let v: f64 = f[3].parse().map_err(|_| Error::parse(loc(), format!("bad value `{}`", f[3])))?;
        if idx[0] >= dims[0] || idx[1] >= dims[1] || idx[2] >= dims[2] {
            return Err(Error::parse(loc(), "voxel index out of range"));
        }
        grid.set(idx[0], idx[1], idx[2], v);
    }
    Ok(grid)
}
