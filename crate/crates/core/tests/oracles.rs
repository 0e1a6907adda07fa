//! Cross-checks against independent implementations: nalgebra eigensolvers,
//! the closed-form Gaussian, naive convolution and direct projection.

use evfeat_core::subspace::{fit_pca, fit_sfa, pca_spectrum, slowness_spectrum, smooth_basis};
use evfeat_core::voxel::{convolve3d, spike_count_matrix, vectorize};
use evfeat_core::*;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIMS: [usize; 3] = [2, 2, 5];
const D: usize = 20;

/// Correlated samples `x = L z` with a random mixing matrix.
fn correlated(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let mix = DMatrix::from_fn(D, D, |_, _| rng.gen_range(-1.0..1.0));
    (0..n)
        .map(|_| {
            let z = DVector::from_fn(D, |_, _| rng.gen_range(-1.0..1.0));
            (&mix * z).iter().map(|v| v + 3.0).collect()
        })
        .collect()
}

fn mean_of(rows: &[Vec<f64>]) -> DVector<f64> {
    let mut m = DVector::zeros(D);
    for r in rows {
        m += DVector::from_column_slice(r);
    }
    m / rows.len() as f64
}

fn scatter(rows: impl Iterator<Item = DVector<f64>>) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(D, D);
    let mut n = 0.0;
    for r in rows {
        s += &r * r.transpose();
        n += 1.0;
    }
    s / n
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn pca_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vectors = correlated(&mut rng, 400);
    let m = mean_of(&vectors);
    let cov = scatter(vectors.iter().map(|v| DVector::from_column_slice(v) - &m));
    let oracle = SymmetricEigen::new(cov.clone());
    let mut want: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
    want.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let samples = SampleSet { dims: DIMS, sigma: [1.0; 3], vectors };
    let spec = pca_spectrum(&samples).unwrap();
    for (got, want) in spec.values.iter().zip(&want) {
        assert!(rel(*got, *want) < 1e-8, "{got} vs {want}");
    }
    for (w, lambda) in spec.vectors.iter().zip(&spec.values) {
        let w = DVector::from_column_slice(w);
        assert!((w.norm() - 1.0).abs() < 1e-10);
        let residual = (&cov * &w - &w * *lambda).norm();
        assert!(residual < 1e-8 * want[0], "residual {residual}");
    }

    let basis = fit_pca(&samples, 1.0, None).unwrap();
    assert_eq!(basis.len(), D);
    assert_eq!(basis.scores, spec.values);
}

#[test]
fn sfa_matches_cholesky_whitened_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = correlated(&mut rng, 600);
    // partners drift mostly along the last few coordinates
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = base
        .into_iter()
        .map(|p| {
            let q = p
                .iter()
                .enumerate()
                .map(|(k, v)| v + rng.gen_range(-1.0..1.0) * ((k + 1) as f64 / D as f64).powi(2))
                .collect();
            (p, q)
        })
        .collect();

    let m = mean_of(&pairs.iter().map(|(p, _)| p.clone()).collect::<Vec<_>>());
    let b = scatter(pairs.iter().map(|(p, _)| DVector::from_column_slice(p) - &m));
    let a = scatter(pairs.iter().map(|(p, q)| DVector::from_column_slice(q) - DVector::from_column_slice(p)));
    let l = Cholesky::new(b.clone()).unwrap().l();
    let l_inv = l.clone().try_inverse().unwrap();
    let c = &l_inv * &a * l_inv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut want: Vec<f64> = SymmetricEigen::new(c).eigenvalues.iter().copied().collect();
    want.sort_by(|x, y| x.partial_cmp(y).unwrap());

    let set = PairSet { dims: DIMS, sigma: [1.0; 3], pairs: pairs.clone() };
    let spec = slowness_spectrum(&set, 1e-12).unwrap();
    assert_eq!(spec.rank(), D);
    for (got, want) in spec.values.iter().zip(&want) {
        assert!(rel(*got, *want) < 1e-8, "{got} vs {want}");
    }

    let basis = fit_sfa(&set, D, 1e-12).unwrap();
    let w = DMatrix::from_fn(D, D, |i, j| basis.weights[j][i]);
    let gram = w.transpose() * &b * &w;
    let off = (gram - DMatrix::identity(D, D)).abs().max();
    assert!(off < 1e-8, "B-orthonormality residual {off}");
    for (k, score) in basis.scores.iter().enumerate() {
        let wk = w.column(k);
        let residual = (&a * wk - (&b * wk) * *score).norm();
        assert!(residual < 1e-8 * a.norm(), "generalized residual {residual}");
        // slowness quotient evaluated straight from the pairs
        let (mut num, mut den) = (0.0, 0.0);
        for (p, q) in &pairs {
            let yp = wk.dot(&DVector::from_column_slice(p));
            let yq = wk.dot(&DVector::from_column_slice(q));
            num += (yq - yp).powi(2);
            den += (yp - wk.dot(&m)).powi(2);
        }
        assert!(rel(num / den, *score) < 1e-8);
    }
}

#[test]
fn gaussian_kernel_matches_closed_form() {
    for (sx, sy, st) in [(1.0, 2.0, 3.0), (0.7, 0.7, 1.5), (3.0, 3.0, 3.0)] {
        let k = gaussian_kernel(sx, sy, st).unwrap();
        let [nx, ny, nt] = k.dims();
        let r = |s: f64| (3.0 * s as f64).ceil() as i64;
        assert_eq!([nx, ny, nt], [2 * r(sx) + 1, 2 * r(sy) + 1, 2 * r(st) + 1].map(|v| v as usize));
        let g = |u: i64, s: f64| (-(u * u) as f64 / (2.0 * s * s)).exp();
        let mut total = 0.0;
        for w in -r(st)..=r(st) {
            for v in -r(sy)..=r(sy) {
                for u in -r(sx)..=r(sx) {
                    total += g(u, sx) * g(v, sy) * g(w, st);
                }
            }
        }
        for (u, v, w) in [(0, 0, 0), (1, -1, 2), (-r(sx), r(sy), -r(st))] {
            let want = g(u, sx) * g(v, sy) * g(w, st) / total;
            let got = k.values().get((u + r(sx)) as usize, (v + r(sy)) as usize, (w + r(st)) as usize);
            assert!(rel(got, want) < 1e-12, "{got} vs {want}");
        }
    }
}

fn naive_convolve(grid: &Grid3, kernel: &Grid3) -> Grid3 {
    let [nx, ny, nt] = grid.dims();
    let [kx, ky, kt] = kernel.dims();
    let (cx, cy, ct) = ((kx / 2) as i64, (ky / 2) as i64, (kt / 2) as i64);
    Grid3::from_fn(grid.dims(), |i, j, m| {
        let mut acc = 0.0;
        for w in 0..kt as i64 {
            for v in 0..ky as i64 {
                for u in 0..kx as i64 {
                    // flipped kernel: true convolution
                    let (ii, jj, mm) = (i as i64 - (u - cx), j as i64 - (v - cy), m as i64 - (w - ct));
                    if (0..nx as i64).contains(&ii) && (0..ny as i64).contains(&jj) && (0..nt as i64).contains(&mm) {
                        acc += kernel.get(u as usize, v as usize, w as usize) * grid.get(ii as usize, jj as usize, mm as usize);
                    }
                }
            }
        }
        acc
    })
}

#[test]
fn separable_convolution_matches_naive_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let grid = Grid3::from_fn([7, 6, 9], |_, _, _| if rng.gen_bool(0.3) { rng.gen_range(0..4) as f64 } else { 0.0 });
    for sigma in [[1.0, 1.0, 1.0], [0.8, 1.3, 2.0]] {
        let k = gaussian_kernel(sigma[0], sigma[1], sigma[2]).unwrap();
        let fast = convolve3d(&grid, &k);
        let slow = naive_convolve(&grid, k.values());
        for (a, b) in fast.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let dense = Kernel3D::from_grid(k.values().clone()).unwrap();
        let via_dense = convolve3d(&grid, &dense);
        for (a, b) in via_dense.as_slice().iter().zip(slow.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn extracted_features_match_direct_projection_of_smoothed_counts() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let events: Vec<Event> = (0..3000)
        .map(|_| Event::new(rng.gen_range(0..24), rng.gen_range(0..24), rng.gen_range(0..200_000), rng.gen_bool(0.5)))
        .collect();
    let stream = EventStream::new(24, 24, events).unwrap();
    let index = EventIndex::new(&stream);
    let spec = BoxSpec::new(6, 50_000.0, 5).unwrap();
    let d = spec.len();
    let basis = ProjectionBasis {
        kind: BasisKind::Sfa,
        dims: spec.dims(),
        weights: (0..4).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
        scores: vec![0.1, 0.2, 0.3, 0.4],
        mean: (0..d).map(|_| rng.gen_range(0.0..0.5)).collect(),
        smoothed: false,
        sigma: [1.0, 1.0, 1.5],
    };
    let kernel = gaussian_kernel(1.0, 1.0, 1.5).unwrap();
    let fx = FeatureExtractor::new(&smooth_basis(&basis, &kernel).unwrap()).unwrap();

    let direct = |at: Location| -> Vec<f64> {
        let smoothed = vectorize(&convolve3d(&spike_count_matrix(&index, at, &spec), &kernel));
        basis.weights.iter().map(|w| w.iter().zip(&smoothed).map(|(a, b)| a * b).sum()).collect()
    };
    let locs: Vec<Location> = (0..20)
        .map(|_| Location::new(rng.gen_range(-2..26), rng.gen_range(-2..26), rng.gen_range(0..220_000)))
        .collect();
    let reference = locs[0];
    for &at in &locs[1..] {
        // features carry a constant offset per projection; differences are exact
        let got: Vec<f64> = fx
            .extract(&index, at, &spec)
            .unwrap()
            .iter()
            .zip(fx.extract(&index, reference, &spec).unwrap())
            .map(|(a, b)| a - b)
            .collect();
        let want: Vec<f64> = direct(at).iter().zip(direct(reference)).map(|(a, b)| a - b).collect();
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}
