//! Point-match extraction over the variable-temporal-displacement search
//! space. Each event is compared against its diagonal neighbors at a set of
//! later times; the box window is stretched to `dt / (1 + r)` so that the
//! feature dimension stays fixed across candidate speeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event::{EventIndex, EventStream};
use crate::subspace::FeatureExtractor;
use crate::voxel::{spike_count_matrix, vectorize, BoxSpec, Location};

/// Candidate displacements: spatial moves crossed with temporal offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementSet {
    spatial: Vec<(i32, i32)>,
    temporal: Vec<u64>,
    overlap: f64,
}

/// A single candidate displacement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Displacement {
    pub dx: i32,
    pub dy: i32,
    pub dt: u64,
}

impl Displacement {
    pub fn apply(&self, p: Location) -> Location {
        Location::new(p.x + self.dx as i64, p.y + self.dy as i64, p.t + self.dt)
    }
}

impl DisplacementSet {
    /// Spatial moves are sorted lexicographically and deduplicated; temporal
    /// offsets must be strictly increasing and positive; `0 < overlap < 1`.
    pub fn new(mut spatial: Vec<(i32, i32)>, temporal: Vec<u64>, overlap: f64) -> Result<Self> {
        spatial.sort_unstable();
        spatial.dedup();
        if spatial.is_empty() {
            return Err(Error::param("spatial_set", "no spatial moves"));
        }
        if spatial.iter().any(|&(x, y)| x.abs() > 1 || y.abs() > 1) {
            return Err(Error::param("spatial_set", "moves are limited to one pixel per axis"));
        }
        if temporal.is_empty() || temporal[0] == 0 || temporal.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("deltas_us", "temporal offsets must be positive and strictly increasing"));
        }
        if !(overlap > 0.0 && overlap < 1.0) {
            return Err(Error::param("overlap_r", format!("must lie in (0, 1), got {overlap}")));
        }
        Ok(DisplacementSet {
            spatial,
            temporal,
            overlap,
        })
    }

    /// The four diagonal moves `{-1, 1} x {-1, 1}`.
    pub fn diagonal(temporal: Vec<u64>, overlap: f64) -> Result<Self> {
        DisplacementSet::new(vec![(-1, -1), (-1, 1), (1, -1), (1, 1)], temporal, overlap)
    }

    /// All eight neighbors `{-1, 0, 1}^2 \ {(0, 0)}`.
    pub fn eight_connected(temporal: Vec<u64>, overlap: f64) -> Result<Self> {
        let spatial = (-1..=1)
            .flat_map(|x| (-1..=1).map(move |y| (x, y)))
            .filter(|&m| m != (0, 0))
            .collect();
        DisplacementSet::new(spatial, temporal, overlap)
    }

    pub fn spatial(&self) -> &[(i32, i32)] {
        &self.spatial
    }

    pub fn temporal(&self) -> &[u64] {
        &self.temporal
    }

    pub fn overlap(&self) -> f64 {
        self.overlap
    }

    pub fn max_dt(&self) -> u64 {
        *self.temporal.last().unwrap()
    }

    /// Window length for temporal offset `dt`: `dt / (1 + r)`.
    pub fn stretched_window(&self, dt: u64) -> f64 {
        dt as f64 / (1.0 + self.overlap)
    }

    /// Candidates in tie-break order: ascending `dt`, then lexicographic `(dx, dy)`.
    pub fn candidates(&self) -> impl Iterator<Item = Displacement> + '_ {
        self.temporal
            .iter()
            .flat_map(move |&dt| self.spatial.iter().map(move |&(dx, dy)| Displacement { dx, dy, dt }))
    }

    pub fn contains(&self, d: &Displacement) -> bool {
        self.temporal.contains(&d.dt) && self.spatial.contains(&(d.dx, d.dy))
    }
}

/// Squared Euclidean distance.
pub fn dissimilarity(f1: &[f64], f2: &[f64]) -> Result<f64> {
    if f1.len() != f2.len() {
        return Err(Error::shape(f1.len(), f2.len()));
    }
    Ok(f1.iter().zip(f2).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// A matched pair of raw count vectors and the displacement tying them.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchPair {
    pub source: Location,
    pub delta: Displacement,
    pub pc: Vec<f64>,
    pub pc_prime: Vec<f64>,
    pub dissimilarity: f64,
}

/// Scores every candidate for the event at `at`. Candidates falling off the
/// sensor are skipped. Returned in tie-break order.
pub fn score_candidates(
    index: &EventIndex<'_>,
    at: Location,
    features: &FeatureExtractor,
    dset: &DisplacementSet,
    spec: &BoxSpec,
) -> Result<Vec<(Displacement, f64)>> {
    let stream = index.stream();
    let mut out = Vec::new();
    for &dt in dset.temporal() {
        let window = spec.with_window(dset.stretched_window(dt))?;
        let reference = features.extract(index, at, &window)?;
        for &(dx, dy) in dset.spatial() {
            let delta = Displacement { dx, dy, dt };
            let target = delta.apply(at);
            if !stream.contains_pixel(target.x, target.y) {
                continue;
            }
            let candidate = features.extract(index, target, &window)?;
            out.push((delta, dissimilarity(&reference, &candidate)?));
        }
    }
    Ok(out)
}

/// First minimum in tie-break order.
pub(crate) fn argmin(scored: &[(Displacement, f64)]) -> Option<(Displacement, f64)> {
    let mut best: Option<(Displacement, f64)> = None;
    for &(d, s) in scored {
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((d, s));
        }
    }
    best
}

/// Finds the displacement whose stretched-window feature best matches the
/// event's own, and returns the raw count vectors of both boxes.
pub fn extract_match(
    index: &EventIndex<'_>,
    at: Location,
    features: &FeatureExtractor,
    dset: &DisplacementSet,
    spec: &BoxSpec,
) -> Result<MatchPair> {
    let stream = index.stream();
    if !stream.contains_pixel(at.x, at.y) {
        return Err(Error::param("event", format!("({}, {}) is off the sensor", at.x, at.y)));
    }
    let no_candidate = || Error::NoCandidate {
        x: at.x,
        y: at.y,
        t: at.t,
    };
    match stream.time_span() {
        Some((_, end)) if at.t + dset.max_dt() <= end => {}
        _ => return Err(no_candidate()),
    }
    let scored = score_candidates(index, at, features, dset, spec)?;
    let (delta, dissim) = argmin(&scored).ok_or_else(no_candidate)?;
    let window = spec.with_window(dset.stretched_window(delta.dt))?;
    Ok(MatchPair {
        source: at,
        delta,
        pc: vectorize(&spike_count_matrix(index, at, &window)),
        pc_prime: vectorize(&spike_count_matrix(index, delta.apply(at), &window)),
        dissimilarity: dissim,
    })
}

/// Which events to run match extraction on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    Every,
    EveryKth(usize),
    Fraction { p: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<MatchPair>,
    /// Sampled events for which no candidate was usable.
    pub skipped: usize,
}

pub fn sampled_events(stream: &EventStream, sampling: Sampling) -> Result<Vec<usize>> {
    let n = stream.len();
    Ok(match sampling {
        Sampling::Every => (0..n).collect(),
        Sampling::EveryKth(0) => return Err(Error::param("sampling", "stride must be at least 1")),
        Sampling::EveryKth(k) => (0..n).step_by(k).collect(),
        Sampling::Fraction { p, seed } => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param("sampling", format!("fraction must lie in [0, 1], got {p}")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).filter(|_| rng.gen_bool(p)).collect()
        }
    })
}

/// Runs [`extract_match`] over the sampled events in stream order.
pub fn extract_all_matches(
    index: &EventIndex<'_>,
    features: &FeatureExtractor,
    dset: &DisplacementSet,
    spec: &BoxSpec,
    sampling: Sampling,
) -> Result<MatchSet> {
    let events = index.stream().events();
    let mut out = MatchSet::default();
    for k in sampled_events(index.stream(), sampling)? {
        match extract_match(index, Location::of(&events[k]), features, dset, spec) {
            Ok(pair) => out.pairs.push(pair),
            Err(Error::NoCandidate { .. }) => out.skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub const MATCH_MAGIC: &[u8; 4] = b"MPR1";

/// Match-pair file: `MPR1`, u32 d, u32 count; then per pair the source
/// (u16 x, u16 y, u64 t), the delta (i8, i8, u64) and `2 d` f64 values
/// (`pc` then `pc'`). Little-endian throughout.
pub fn encode_matches(pairs: &[MatchPair], d: usize) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + pairs.len() * (22 + 16 * d));
    out.extend_from_slice(MATCH_MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for p in pairs {
        if p.pc.len() != d || p.pc_prime.len() != d {
            return Err(Error::shape(d, p.pc.len().max(p.pc_prime.len())));
        }
        let coord = |v: i64| u16::try_from(v).map_err(|_| Error::param("source", format!("{v} not a 16-bit pixel")));
        out.extend_from_slice(&coord(p.source.x)?.to_le_bytes());
        out.extend_from_slice(&coord(p.source.y)?.to_le_bytes());
        out.extend_from_slice(&p.source.t.to_le_bytes());
        out.push(p.delta.dx as i8 as u8);
        out.push(p.delta.dy as i8 as u8);
        out.extend_from_slice(&p.delta.dt.to_le_bytes());
        for v in p.pc.iter().chain(&p.pc_prime) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a match-pair file. The per-pair dissimilarity is not stored and
/// comes back as NaN.
pub fn decode_matches(bytes: &[u8]) -> Result<(usize, Vec<MatchPair>)> {
    if bytes.len() < 12 || &bytes[..4] != MATCH_MAGIC {
        return Err(Error::parse("offset 0", "missing `MPR1` header"));
    }
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let rec = 22 + 16 * d;
    if bytes.len() != 12 + count * rec {
        return Err(Error::parse(
            "offset 12",
            format!("{count} pairs of dimension {d} need {} bytes, file has {}", 12 + count * rec, bytes.len()),
        ));
    }
    let f64_at = |b: &[u8], k: usize| f64::from_le_bytes(b[k..k + 8].try_into().unwrap());
    let pairs = bytes[12..]
        .chunks_exact(rec)
        .map(|b| {
            let source = Location::new(
                u16::from_le_bytes([b[0], b[1]]) as i64,
                u16::from_le_bytes([b[2], b[3]]) as i64,
                u64::from_le_bytes(b[4..12].try_into().unwrap()),
            );
            let delta = Displacement {
                dx: b[12] as i8 as i32,
                dy: b[13] as i8 as i32,
                dt: u64::from_le_bytes(b[14..22].try_into().unwrap()),
            };
            let pc = (0..d).map(|k| f64_at(b, 22 + 8 * k)).collect();
            let pc_prime = (0..d).map(|k| f64_at(b, 22 + 8 * (d + k))).collect();
            MatchPair {
                source,
                delta,
                pc,
                pc_prime,
                dissimilarity: f64::NAN,
            }
        })
        .collect();
    Ok((d, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dissimilarity_basics() {
        assert_eq!(dissimilarity(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(dissimilarity(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 25.0);
        assert!(matches!(dissimilarity(&[0.0], &[0.0, 1.0]), Err(Error::Shape { .. })));
    }

    #[test]
    fn displacement_set_validation() {
        assert!(DisplacementSet::diagonal(vec![], 0.5).is_err());
        assert!(DisplacementSet::diagonal(vec![0, 10], 0.5).is_err());
        assert!(DisplacementSet::diagonal(vec![10, 10], 0.5).is_err());
        assert!(DisplacementSet::diagonal(vec![10], 0.0).is_err());
        assert!(DisplacementSet::diagonal(vec![10], 1.0).is_err());
        assert!(DisplacementSet::new(vec![(2, 0)], vec![10], 0.5).is_err());
        let d = DisplacementSet::eight_connected(vec![10, 20], 0.5).unwrap();
        assert_eq!(d.spatial().len(), 8);
        assert_eq!(d.candidates().count(), 16);
    }

    #[test]
    fn candidate_order_is_time_then_lexicographic() {
        let d = DisplacementSet::new(vec![(1, 1), (-1, 1), (1, -1), (-1, -1)], vec![5, 9], 0.25).unwrap();
        let c: Vec<(i32, i32, u64)> = d.candidates().map(|c| (c.dx, c.dy, c.dt)).collect();
        assert_eq!(
            c,
            vec![(-1, -1, 5), (-1, 1, 5), (1, -1, 5), (1, 1, 5), (-1, -1, 9), (-1, 1, 9), (1, -1, 9), (1, 1, 9)]
        );
        assert_eq!(d.stretched_window(5), 4.0);
    }

    #[test]
    fn argmin_takes_the_first_minimum() {
        let d = |dt| Displacement { dx: 1, dy: 1, dt };
        let scored = vec![(d(1), 3.0), (d(2), 1.0), (d(3), 1.0), (d(4), 2.0)];
        assert_eq!(argmin(&scored), Some((d(2), 1.0)));
        assert_eq!(argmin(&[]), None);
    }

    #[test]
    fn sampling_rules() {
        let events = (0..10).map(|k| crate::event::Event::new(0, 0, k, false)).collect();
        let s = EventStream::new(1, 1, events).unwrap();
        assert_eq!(sampled_events(&s, Sampling::EveryKth(2)).unwrap(), vec![0, 2, 4, 6, 8]);
        assert_eq!(sampled_events(&s, Sampling::Every).unwrap().len(), 10);
        assert!(sampled_events(&s, Sampling::EveryKth(0)).is_err());
        let a = sampled_events(&s, Sampling::Fraction { p: 0.5, seed: 7 }).unwrap();
        let b = sampled_events(&s, Sampling::Fraction { p: 0.5, seed: 7 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn match_file_round_trip() {
        let pairs = vec![MatchPair {
            source: Location::new(3, 65_535, 1 << 40),
            delta: Displacement { dx: -1, dy: 1, dt: 50_000 },
            pc: vec![0.0, 1.5, -2.0],
            pc_prime: vec![3.0, 0.25, 7.0],
            dissimilarity: 4.0,
        }];
        let bytes = encode_matches(&pairs, 3).unwrap();
        assert_eq!(bytes.len(), 12 + 22 + 48);
        let (d, back) = decode_matches(&bytes).unwrap();
        assert_eq!(d, 3);
        assert_eq!(back[0].source, pairs[0].source);
        assert_eq!(back[0].delta, pairs[0].delta);
        assert_eq!(back[0].pc, pairs[0].pc);
        assert_eq!(back[0].pc_prime, pairs[0].pc_prime);
        assert!(decode_matches(&bytes[..bytes.len() - 1]).is_err());
        assert!(encode_matches(&pairs, 4).is_err());
    }
}
