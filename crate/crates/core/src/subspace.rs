//! Linear projection bases over voxel vectors: principal components of
//! smoothed count vectors, and slow features learned from matched pairs.
//!
//! Slow features minimise
//!
//! ```text
//! S(w) = mean_i (w'pc'_i - w'pc_i)^2 / mean_i (w'pc_i - mean_k w'pc_k)^2
//! ```
//!
//! which is the generalized Rayleigh quotient `w'Aw / w'Bw` with `A` the
//! second moment of the intra-pair differences and `B` the covariance of the
//! first pair elements. The problem is reduced to a symmetric one by whitening
//! with `B^{-1/2}` on the numerically non-null eigenspace of `B`.

use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::event::EventIndex;
use crate::voxel::{convolve3d, for_each_in_box, matricize, BoxSpec, Grid3, Kernel3D, Location};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Pca,
    Sfa,
    SfaReversed,
}

impl BasisKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            BasisKind::Pca => "pca",
            BasisKind::Sfa => "sfa",
            BasisKind::SfaReversed => "sfa-reversed",
        }
    }
}

impl std::str::FromStr for BasisKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(BasisKind::Pca),
            "sfa" => Ok(BasisKind::Sfa),
            "sfa-reversed" => Ok(BasisKind::SfaReversed),
            other => Err(Error::parse("basis header", format!("unknown basis kind `{other}`"))),
        }
    }
}

/// Ordered weight vectors over `a x a x M` voxels with one score each:
/// explained variance for PCA, slowness for SFA.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionBasis {
    pub kind: BasisKind,
    pub dims: [usize; 3],
    pub weights: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
    /// Mean of the (smoothed) training vectors.
    pub mean: Vec<f64>,
    /// Whether the weights already carry the Gaussian kernel.
    pub smoothed: bool,
    pub sigma: [f64; 3],
}

impl ProjectionBasis {
    pub fn dim(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Keeps the first `n` weights.
    pub fn truncated(&self, n: usize) -> ProjectionBasis {
        let n = n.min(self.len());
        ProjectionBasis {
            weights: self.weights[..n].to_vec(),
            scores: self.scores[..n].to_vec(),
            ..self.clone()
        }
    }
}

/// Smoothed count vectors used to fit a PCA basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub dims: [usize; 3],
    pub sigma: [f64; 3],
    pub vectors: Vec<Vec<f64>>,
}

/// Smoothed matched pairs `(pc, pc')` used to fit slow features.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub dims: [usize; 3],
    pub sigma: [f64; 3],
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
}

fn check_vectors<'a>(dims: [usize; 3], vs: impl Iterator<Item = &'a Vec<f64>>) -> Result<usize> {
    let d: usize = dims.iter().product();
    let mut n = 0;
    for v in vs {
        if v.len() != d {
            return Err(Error::shape(format!("vectors of length {d}"), format!("length {}", v.len())));
        }
        n += 1;
    }
    Ok(n)
}

fn column_mean<'a>(d: usize, rows: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    let mut n = 0usize;
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        n += 1;
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    mean
}

/// Population second-moment matrix `X'X / n` of the given rows, accumulated
/// in row blocks so the full sample matrix is never materialized twice.
fn gram(d: usize, rows: impl ExactSizeIterator<Item = Vec<f64>>) -> Mat<f64> {
    const BLOCK: usize = 1024;
    let n = rows.len();
    let mut g = Mat::<f64>::zeros(d, d);
    let mut x = Mat::<f64>::zeros(BLOCK.min(n), d);
    let mut filled = 0;
    let flush = |x: &Mat<f64>, filled: usize, g: &mut Mat<f64>| {
        let b = x.subrows(0, filled);
        *g += b.transpose() * b;
    };
    for r in rows {
        for (j, v) in r.into_iter().enumerate() {
            x[(filled, j)] = v;
        }
        filled += 1;
        if filled == x.nrows() {
            flush(&x, filled, &mut g);
            filled = 0;
        }
    }
    if filled > 0 {
        flush(&x, filled, &mut g);
    }
    let inv = 1.0 / n as f64;
    for j in 0..d {
        for i in 0..d {
            g[(i, j)] *= inv;
        }
    }
    g
}

/// Eigenpairs of a symmetric matrix, ascending.
fn symmetric_eigen(m: &Mat<f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let eig = m
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Degenerate(format!("eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let u = eig.U();
    let mut order: Vec<usize> = (0..s.nrows()).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    let values = order.iter().map(|&k| s[k]).collect();
    let vectors = Mat::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    Ok((values, vectors))
}

/// Flips `v` so that its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (k, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = k;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

fn column(m: &Mat<f64>, j: usize) -> Vec<f64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Full covariance spectrum of a sample set, descending in variance.
#[derive(Debug, Clone)]
pub struct PcaSpectrum {
    pub dims: [usize; 3],
    pub sigma: [f64; 3],
    pub mean: Vec<f64>,
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Unit eigenvectors, sign-fixed, one per value.
    pub vectors: Vec<Vec<f64>>,
}

pub fn pca_spectrum(samples: &SampleSet) -> Result<PcaSpectrum> {
    let n = check_vectors(samples.dims, samples.vectors.iter())?;
    if n < 2 {
        return Err(Error::param("samples", format!("need at least 2 samples, got {n}")));
    }
    let d: usize = samples.dims.iter().product();
    let mean = column_mean(d, samples.vectors.iter());
    let cov = gram(
        d,
        samples
            .vectors
            .iter()
            .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect::<Vec<_>>()),
    );
    let trace: f64 = (0..d).map(|i| cov[(i, i)]).sum();
    let mean_sq: f64 = mean.iter().map(|m| m * m).sum();
    if trace <= 1e-24 * mean_sq.max(1.0) {
        return Err(Error::Degenerate("samples have zero covariance".into()));
    }
    let (values, vectors) = symmetric_eigen(&cov)?;
    let desc = (0..d).rev();
    Ok(PcaSpectrum {
        dims: samples.dims,
        sigma: samples.sigma,
        values: desc.clone().map(|k| values[k]).collect(),
        vectors: desc
            .map(|k| {
                let mut w = column(&vectors, k);
                fix_sign(&mut w);
                w
            })
            .collect(),
        mean,
    })
}

impl PcaSpectrum {
    /// Fewest leading components whose eigenvalues reach `variance_fraction`
    /// of the total variance, capped at `k_max`.
    pub fn select(&self, variance_fraction: f64, k_max: Option<usize>) -> Result<ProjectionBasis> {
        if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
            return Err(Error::param("variance_fraction", format!("must lie in (0, 1], got {variance_fraction}")));
        }
        if k_max == Some(0) {
            return Err(Error::param("k_max", "must be at least 1"));
        }
        let total: f64 = self.values.iter().map(|v| v.max(0.0)).sum();
        let target = variance_fraction * total * (1.0 - 1e-12);
        let mut k = 0;
        let mut cum = 0.0;
        for v in &self.values {
            cum += v.max(0.0);
            k += 1;
            if cum >= target {
                break;
            }
        }
        if let Some(cap) = k_max {
            k = k.min(cap);
        }
        Ok(self.leading(k))
    }

    /// The first `k` components regardless of variance.
    pub fn leading(&self, k: usize) -> ProjectionBasis {
        let k = k.min(self.values.len());
        ProjectionBasis {
            kind: BasisKind::Pca,
            dims: self.dims,
            weights: self.vectors[..k].to_vec(),
            scores: self.values[..k].to_vec(),
            mean: self.mean.clone(),
            smoothed: false,
            sigma: self.sigma,
        }
    }
}

/// Principal components of the samples, keeping the fewest components whose
/// eigenvalues account for `variance_fraction` of the total variance, capped at `k_max`.
pub fn fit_pca(samples: &SampleSet, variance_fraction: f64, k_max: Option<usize>) -> Result<ProjectionBasis> {
    if !(variance_fraction > 0.0 && variance_fraction <= 1.0) {
        return Err(Error::param("variance_fraction", format!("must lie in (0, 1], got {variance_fraction}")));
    }
    if k_max == Some(0) {
        return Err(Error::param("k_max", "must be at least 1"));
    }
    pca_spectrum(samples)?.select(variance_fraction, k_max)
}

/// Full generalized spectrum of the slowness problem, ascending in slowness.
#[derive(Debug, Clone)]
pub struct SlownessSpectrum {
    pub dims: [usize; 3],
    pub sigma: [f64; 3],
    /// Mean of the first pair elements.
    pub mean: Vec<f64>,
    /// Slowness values, ascending.
    pub values: Vec<f64>,
    /// `B`-orthonormal eigenvectors, one per value.
    pub vectors: Vec<Vec<f64>>,
    /// Smallest eigenvalue of the pair covariance `B`.
    pub smallest_covariance_eigenvalue: f64,
    /// Eigenvalue floor below which `B` directions were discarded.
    pub floor: f64,
}

/// Solves `A w = lambda B w` on the eigenspace of `B` whose eigenvalues exceed
/// `ridge * trace(B) / d`; directions below that floor carry no usable signal.
pub fn slowness_spectrum(pairs: &PairSet, ridge: f64) -> Result<SlownessSpectrum> {
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::param("ridge", format!("must be finite and >= 0, got {ridge}")));
    }
    let n = check_vectors(pairs.dims, pairs.pairs.iter().flat_map(|(a, b)| [a, b]))? / 2;
    if n < 2 {
        return Err(Error::param("pairs", format!("need at least 2 pairs, got {n}")));
    }
    let d: usize = pairs.dims.iter().product();
    let mean = column_mean(d, pairs.pairs.iter().map(|(a, _)| a));
    let b = gram(
        d,
        pairs
            .pairs
            .iter()
            .map(|(a, _)| a.iter().zip(&mean).map(|(x, m)| x - m).collect::<Vec<_>>()),
    );
    let a = gram(
        d,
        pairs
            .pairs
            .iter()
            .map(|(p, q)| q.iter().zip(p).map(|(y, x)| y - x).collect::<Vec<_>>()),
    );

    let (b_vals, b_vecs) = symmetric_eigen(&b)?;
    let trace: f64 = b_vals.iter().sum();
    let smallest = b_vals[0];
    let floor = ridge * trace / d as f64;
    let kept: Vec<usize> = (0..d).filter(|&k| b_vals[k] > floor && b_vals[k] > 0.0).collect();
    if kept.is_empty() {
        return Err(Error::Conditioning {
            smallest_eigenvalue: smallest,
            usable_rank: 0,
            requested: 1,
        });
    }

    // whitening map P = V_r diag(lambda_r^{-1/2}), so that P'BP = I
    let r = kept.len();
    let p = Mat::from_fn(d, r, |i, j| b_vecs[(i, kept[j])] / b_vals[kept[j]].sqrt());
    let ap = &a * &p;
    let c = p.transpose() * &ap;
    let c = Mat::from_fn(r, r, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let (_, u) = symmetric_eigen(&c)?;
    let w = &p * &u;

    // Rounding in the whitening leaves the eigenvalues of C a little off the
    // quotient of the vectors actually returned, so score each vector directly.
    let aw = &ap * &u;
    let bw = &b * &w;
    let mut scored: Vec<(f64, Vec<f64>)> = (0..r)
        .map(|j| {
            let num: f64 = (0..d).map(|i| w[(i, j)] * aw[(i, j)]).sum();
            let den: f64 = (0..d).map(|i| w[(i, j)] * bw[(i, j)]).sum();
            let mut v: Vec<f64> = column(&w, j).iter().map(|x| x / den.sqrt()).collect();
            fix_sign(&mut v);
            (num / den, v)
        })
        .collect();
    scored.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (values, vectors) = scored.into_iter().unzip();
    Ok(SlownessSpectrum {
        dims: pairs.dims,
        sigma: pairs.sigma,
        mean,
        values,
        vectors,
        smallest_covariance_eigenvalue: smallest,
        floor,
    })
}

impl SlownessSpectrum {
    pub fn rank(&self) -> usize {
        self.values.len()
    }

    fn check_request(&self, n: usize) -> Result<()> {
        let d: usize = self.dims.iter().product();
        if n == 0 || n > d {
            return Err(Error::param("n_sfa", format!("must lie in 1..={d}, got {n}")));
        }
        if n > self.rank() {
            return Err(Error::Conditioning {
                smallest_eigenvalue: self.smallest_covariance_eigenvalue,
                usable_rank: self.rank(),
                requested: n,
            });
        }
        Ok(())
    }

    /// The `n` slowest directions, ascending slowness.
    pub fn slowest(&self, n: usize) -> Result<ProjectionBasis> {
        self.check_request(n)?;
        Ok(self.basis(BasisKind::Sfa, (0..n).collect()))
    }

    /// The `n` fastest directions, descending slowness.
    pub fn fastest(&self, n: usize) -> Result<ProjectionBasis> {
        self.check_request(n)?;
        let r = self.rank();
        Ok(self.basis(BasisKind::SfaReversed, (r - n..r).rev().collect()))
    }

    fn basis(&self, kind: BasisKind, idx: Vec<usize>) -> ProjectionBasis {
        ProjectionBasis {
            kind,
            dims: self.dims,
            weights: idx.iter().map(|&k| self.vectors[k].clone()).collect(),
            scores: idx.iter().map(|&k| self.values[k]).collect(),
            mean: self.mean.clone(),
            smoothed: false,
            sigma: self.sigma,
        }
    }
}

/// The `n_sfa` slowest projections for the matched pairs.
pub fn fit_sfa(pairs: &PairSet, n_sfa: usize, ridge: f64) -> Result<ProjectionBasis> {
    let d: usize = pairs.dims.iter().product();
    if n_sfa > d {
        return Err(Error::param("n_sfa", format!("{n_sfa} exceeds the dimension {d}")));
    }
    slowness_spectrum(pairs, ridge)?.slowest(n_sfa)
}

/// The `n` fastest projections, highest slowness first.
pub fn reverse_sfa(pairs: &PairSet, n: usize, ridge: f64) -> Result<ProjectionBasis> {
    let d: usize = pairs.dims.iter().product();
    if n > d {
        return Err(Error::param("n_sfa", format!("{n} exceeds the dimension {d}")));
    }
    slowness_spectrum(pairs, ridge)?.fastest(n)
}

/// Convolves every matricized weight with `kernel` once, so features can be
/// computed on raw count grids.
pub fn smooth_basis(basis: &ProjectionBasis, kernel: &Kernel3D) -> Result<ProjectionBasis> {
    if basis.smoothed {
        return Err(Error::AlreadySmoothed);
    }
    let weights = basis
        .weights
        .iter()
        .map(|w| Ok(convolve3d(&matricize(w, basis.dims)?, kernel).as_slice().to_vec()))
        .collect::<Result<_>>()?;
    Ok(ProjectionBasis {
        weights,
        smoothed: true,
        ..basis.clone()
    })
}

/// Projects box neighborhoods onto a smoothed basis. Weights are stored
/// voxel-major so each event adds one contiguous run of `n` weights.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    dims: [usize; 3],
    n: usize,
    voxel_major: Vec<f64>,
    offsets: Vec<f64>,
}

impl FeatureExtractor {
    pub fn new(basis: &ProjectionBasis) -> Result<Self> {
        if !basis.smoothed {
            return Err(Error::param("basis", "feature extraction needs a smoothed basis"));
        }
        if basis.dims[0] != basis.dims[1] {
            return Err(Error::shape("square spatial extent", format!("{:?}", basis.dims)));
        }
        let d = basis.dim();
        let n = basis.len();
        if basis.mean.len() != d {
            return Err(Error::shape(format!("mean of length {d}"), basis.mean.len()));
        }
        let mut voxel_major = vec![0.0; d * n];
        for (j, w) in basis.weights.iter().enumerate() {
            if w.len() != d {
                return Err(Error::shape(format!("weights of length {d}"), w.len()));
            }
            for (v, x) in w.iter().enumerate() {
                voxel_major[v * n + j] = *x;
            }
        }
        // constant per projection, so it cancels in every dissimilarity
        let offsets = basis
            .weights
            .iter()
            .map(|w| w.iter().zip(&basis.mean).map(|(a, b)| a * b).sum())
            .collect();
        Ok(FeatureExtractor {
            dims: basis.dims,
            n,
            voxel_major,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    fn check_spec(&self, spec: &BoxSpec) -> Result<()> {
        if spec.dims() != self.dims {
            return Err(Error::shape(format!("box {:?}", self.dims), format!("box {:?}", spec.dims())));
        }
        Ok(())
    }

    /// Feature of the box neighborhood around `center` under `spec`; the
    /// window of `spec` is re-binned into the basis' partitions.
    pub fn extract(&self, index: &EventIndex<'_>, center: Location, spec: &BoxSpec) -> Result<Vec<f64>> {
        self.check_spec(spec)?;
        let mut f: Vec<f64> = self.offsets.iter().map(|o| -o).collect();
        let a = spec.a;
        let n = self.n;
        for_each_in_box(index, center, spec, |i, j, age, _| {
            let v = i + a * (j + a * spec.bin_of_age(age));
            for (acc, w) in f.iter_mut().zip(&self.voxel_major[v * n..(v + 1) * n]) {
                *acc += w;
            }
        });
        Ok(f)
    }

    /// Feature of an explicit (raw) count grid.
    pub fn extract_grid(&self, grid: &Grid3) -> Result<Vec<f64>> {
        if grid.dims() != self.dims {
            return Err(Error::shape(format!("{:?}", self.dims), format!("{:?}", grid.dims())));
        }
        let mut f: Vec<f64> = self.offsets.iter().map(|o| -o).collect();
        for (v, &c) in grid.as_slice().iter().enumerate() {
            if c != 0.0 {
                for (acc, w) in f.iter_mut().zip(&self.voxel_major[v * self.n..(v + 1) * self.n]) {
                    *acc += c * w;
                }
            }
        }
        Ok(f)
    }
}

/// One-shot feature extraction; build a [`FeatureExtractor`] when extracting many.
pub fn extract_feature(
    index: &EventIndex<'_>,
    center: Location,
    basis: &ProjectionBasis,
    spec: &BoxSpec,
) -> Result<Vec<f64>> {
    FeatureExtractor::new(basis)?.extract(index, center, spec)
}

/// Basis file: a `kind,a,M,d,n,smoothed,sigma_x,sigma_y,sigma_t` record, the
/// mean vector, then `score,v_0,...,v_{d-1}` per weight; 17 significant digits.
pub fn encode_basis(basis: &ProjectionBasis) -> String {
    let d = basis.dim();
    let mut out = String::with_capacity((basis.len() + 1) * d * 25 + 64);
    out.push_str(&format!(
        "{},{},{},{},{},{},{:.16e},{:.16e},{:.16e}\n",
        basis.kind.as_str(),
        basis.dims[0],
        basis.dims[2],
        d,
        basis.len(),
        basis.smoothed as u8,
        basis.sigma[0],
        basis.sigma[1],
        basis.sigma[2],
    ));
    let row = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
        let mut first = true;
        for v in vals {
            if !first {
                out.push(',');
            }
            first = false;
            out.push_str(&format!("{v:.16e}"));
        }
        out.push('\n');
    };
    row(&mut out, &mut basis.mean.iter().copied());
    for (s, w) in basis.scores.iter().zip(&basis.weights) {
        row(&mut out, &mut std::iter::once(*s).chain(w.iter().copied()));
    }
    out
}

fn parse_floats(line: &str, n: usize) -> Result<Vec<f64>> {
    let loc = format!("basis line {n}");
    line.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::parse(loc.clone(), format!("bad number `{s}`"))))
        .collect()
}

pub fn parse_basis(text: &str) -> Result<ProjectionBasis> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::parse("basis line 1", "missing header"))?;
    let h: Vec<&str> = header.split(',').map(str::trim).collect();
    if h.len() != 9 {
        return Err(Error::parse("basis line 1", "expected `kind,a,M,d,n,smoothed,sigma_x,sigma_y,sigma_t`"));
    }
    let int = |s: &str, what: &str| -> Result<usize> {
        s.parse().map_err(|_| Error::parse("basis line 1", format!("bad {what} `{s}`")))
    };
    let kind: BasisKind = h[0].parse()?;
    let a = int(h[1], "a")?;
    let m = int(h[2], "M")?;
    let d = int(h[3], "d")?;
    let n = int(h[4], "n")?;
    let smoothed = match h[5] {
        "0" => false,
        "1" => true,
        s => return Err(Error::parse("basis line 1", format!("bad smoothed flag `{s}`"))),
    };
    let mut sigma = [0.0; 3];
    for (k, s) in h[6..9].iter().enumerate() {
        sigma[k] = s.parse().map_err(|_| Error::parse("basis line 1", format!("bad sigma `{s}`")))?;
    }
    if a * a * m != d {
        return Err(Error::parse("basis line 1", format!("d = {d} but a*a*M = {}", a * a * m)));
    }
    let mean = parse_floats(lines.next().ok_or_else(|| Error::parse("basis line 2", "missing mean"))?, 2)?;
    if mean.len() != d {
        return Err(Error::parse("basis line 2", format!("mean has {} values, expected {d}", mean.len())));
    }
    let mut weights = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    for k in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| Error::parse(format!("basis line {}", k + 3), "missing weight row"))?;
        let mut vals = parse_floats(line, k + 3)?;
        if vals.len() != d + 1 {
            return Err(Error::parse(
                format!("basis line {}", k + 3),
                format!("expected {} values, got {}", d + 1, vals.len()),
            ));
        }
        scores.push(vals[0]);
        vals.remove(0);
        weights.push(vals);
    }
    if lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::parse(format!("basis line {}", n + 3), "trailing data after weights"));
    }
    Ok(ProjectionBasis {
        kind,
        dims: [a, a, m],
        weights,
        scores,
        mean,
        smoothed,
        sigma,
    })
}
