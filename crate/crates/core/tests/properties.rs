use evfeat_core::eval::{accuracy_curve, displacement_curve};
use evfeat_core::io::{decode_events_binary, encode_events_binary, encode_events_csv, parse_events_csv};
use evfeat_core::io::{encode_trajectories, parse_trajectories};
use evfeat_core::matching::{decode_matches, encode_matches};
use evfeat_core::subspace::{encode_basis, parse_basis};
use evfeat_core::tracker::{track_with, TimeSurfaceDescriptor};
use evfeat_core::voxel::verify_projection_identity;
use evfeat_core::*;
use proptest::prelude::*;

fn events(w: u16, h: u16, n: usize, t_max: u64) -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0..w, 0..h, 0..t_max, any::<bool>()), 0..n)
        .prop_map(|v| v.into_iter().map(|(x, y, t, p)| Event::new(x, y, t, p)).collect())
}

fn grid(dims: [usize; 3]) -> impl Strategy<Value = Grid3> {
    prop::collection::vec(-3.0f64..3.0, dims.iter().product::<usize>())
        .prop_map(move |v| evfeat_core::voxel::matricize(&v, dims).unwrap())
}

fn path() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 2..12)
}

fn trajectory(id: u32, pts: &[(f64, f64)], dt: u64) -> Trajectory {
    Trajectory::new(
        id,
        pts.iter().enumerate().map(|(k, &(x, y))| TrackPoint::new(x, y, k as u64 * dt)).collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothing_moves_between_count_and_weight(
        (w, c) in (grid([5, 4, 6]), grid([5, 4, 6])),
        sx in 0.3f64..2.0, sy in 0.3f64..2.0, st in 0.3f64..2.0,
    ) {
        let k = gaussian_kernel(sx, sy, st).unwrap();
        let (lhs, rhs) = verify_projection_identity(&w, &c, &k).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn gaussian_kernel_is_symmetric_and_normalized(sx in 0.2f64..3.0, sy in 0.2f64..3.0, st in 0.2f64..3.0) {
        let k = gaussian_kernel(sx, sy, st).unwrap();
        prop_assert!(k.is_mirror_symmetric());
        prop_assert!((k.values().total() - 1.0).abs() < 1e-12);
        prop_assert!(k.values().as_slice().iter().all(|&v| v > 0.0));
    }

    #[test]
    fn streams_are_sorted_and_keep_every_event(ev in events(16, 16, 200, 10_000)) {
        let s = EventStream::new(16, 16, ev.clone()).unwrap();
        prop_assert_eq!(s.len(), ev.len());
        prop_assert!(s.events().windows(2).all(|p| p[0].t <= p[1].t));
    }

    #[test]
    fn event_files_round_trip(ev in events(40, 30, 100, u64::MAX / 2)) {
        let s = EventStream::new(40, 30, ev).unwrap();
        prop_assert_eq!(&decode_events_binary(&encode_events_binary(&s)).unwrap(), &s);
        prop_assert_eq!(&parse_events_csv(&encode_events_csv(&s)).unwrap(), &s);
    }

    #[test]
    fn trajectory_files_round_trip(pts in path(), id in 0u32..1000) {
        let set = TrajectorySet::new(vec![trajectory(id, &pts, 5_000), trajectory(id + 1, &pts[..1], 7)]);
        prop_assert_eq!(parse_trajectories(&encode_trajectories(&set)).unwrap(), set);
    }

    #[test]
    fn basis_and_match_files_round_trip(vals in prop::collection::vec(-1e6f64..1e6, 12)) {
        let basis = ProjectionBasis {
            kind: BasisKind::Pca,
            dims: [2, 2, 1],
            weights: vec![vals[..4].to_vec(), vals[4..8].to_vec()],
            scores: vec![vals[8], vals[9]],
            mean: vals[8..12].to_vec(),
            smoothed: true,
            sigma: [0.5, 1.0, 2.5],
        };
        prop_assert_eq!(parse_basis(&encode_basis(&basis)).unwrap(), basis);

        let pair = MatchPair {
            source: Location::new(3, 4, 1_000),
            delta: Displacement { dx: -1, dy: 1, dt: 25_000 },
            pc: vals[..4].to_vec(),
            pc_prime: vals[4..8].to_vec(),
            dissimilarity: vals[8].abs(),
        };
        let bytes = encode_matches(std::slice::from_ref(&pair), 4).unwrap();
        let (d, back) = decode_matches(&bytes).unwrap();
        prop_assert_eq!(d, 4);
        // the dissimilarity is not stored
        prop_assert_eq!((back[0].source, back[0].delta), (pair.source, pair.delta));
        prop_assert_eq!((&back[0].pc, &back[0].pc_prime), (&pair.pc, &pair.pc_prime));
    }

    #[test]
    fn noise_filter_matches_brute_force(ev in events(12, 12, 150, 200_000)) {
        let s = EventStream::new(12, 12, ev).unwrap();
        let kept = filter_noise(&s, 2, 30_000);
        let all = s.events();
        let want: Vec<Event> = all
            .iter()
            .enumerate()
            .filter(|(i, e)| {
                all.iter().enumerate().any(|(j, o)| {
                    j != *i
                        && (o.x as i64 - e.x as i64).abs() <= 2
                        && (o.y as i64 - e.y as i64).abs() <= 2
                        && o.t.abs_diff(e.t) <= 30_000
                })
            })
            .map(|(_, e)| *e)
            .collect();
        prop_assert_eq!(kept.events(), &want[..]);
    }

    #[test]
    fn accuracy_is_a_fraction_and_grows_with_radius(
        pts in path(),
        offsets in prop::collection::vec((-12.0f64..12.0, -12.0f64..12.0), 3),
        r in 1.0f64..10.0,
    ) {
        let truth: TrajectorySet = (0..3).map(|id| trajectory(id, &pts, 100_000)).collect();
        let est: TrajectorySet = offsets
            .iter()
            .enumerate()
            .map(|(id, &(ox, oy))| {
                let shifted: Vec<_> = pts.iter().map(|&(x, y)| (x + ox, y + oy)).collect();
                trajectory(id as u32, &shifted, 100_000)
            })
            .collect();
        let small = accuracy_curve(&est, &truth, r, 1.5, 0.05).unwrap();
        let large = accuracy_curve(&est, &truth, r + 2.0, 1.5, 0.05).unwrap();
        for (a, b) in small.samples.iter().zip(&large.samples) {
            prop_assert!((0.0..=1.0).contains(&a.value));
            prop_assert!(a.value <= b.value);
        }
        prop_assert!(small.samples.windows(2).all(|w| w[0].n_alive >= w[1].n_alive));
    }

    #[test]
    fn curves_ignore_a_common_translation(
        pts in path(),
        est_pts in path(),
        (tx, ty) in (-100.0f64..100.0, -100.0f64..100.0),
    ) {
        let n = pts.len().min(est_pts.len());
        let shift = |p: &[(f64, f64)]| p.iter().map(|&(x, y)| (x + tx, y + ty)).collect::<Vec<_>>();
        let set = |p: &[(f64, f64)]| TrajectorySet::new(vec![trajectory(0, &p[..n], 100_000)]);
        let (truth, est) = (set(&pts), set(&est_pts));
        let (truth2, est2) = (set(&shift(&pts)), set(&shift(&est_pts)));
        let a = displacement_curve(&est, &truth, 1.0, 0.05).unwrap();
        let b = displacement_curve(&est2, &truth2, 1.0, 0.05).unwrap();
        for (p, q) in a.samples.iter().zip(&b.samples) {
            prop_assert!((p.value - q.value).abs() < 1e-9);
        }
        prop_assert_eq!(
            accuracy_curve(&est, &truth, 7.0, 1.0, 0.05).unwrap(),
            accuracy_curve(&est2, &truth2, 7.0, 1.0, 0.05).unwrap()
        );
    }
}

fn params(n0: usize) -> TrackerParams {
    let dset = DisplacementSet::diagonal(vec![25_000, 50_000, 100_000, 200_000], 0.5).unwrap();
    TrackerParams::new(dset, BoxSpec::new(10, 100_000.0, 25).unwrap(), n0, 30)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn tracker_steps_are_unit_moves_forward_in_time(ev in events(32, 32, 600, 1_000_000), x in 0i64..32, y in 0i64..32) {
        let s = EventStream::new(32, 32, ev).unwrap();
        let index = EventIndex::new(&s);
        let d = TimeSurfaceDescriptor { a: 10, tau: 50_000.0 };
        let (tr, steps) = track_with(&index, Location::new(x, y, 0), &d, &params(0), 0).unwrap();
        prop_assert_eq!(tr.samples.len(), steps.len() + 1);
        for (w, st) in tr.samples.windows(2).zip(&steps) {
            prop_assert!(w[1].t > w[0].t);
            prop_assert!((w[1].x - w[0].x).abs() <= 1.0 && (w[1].y - w[0].y).abs() <= 1.0);
            prop_assert!(s.contains_pixel(w[1].x as i64, w[1].y as i64));
            prop_assert_eq!(st.moved, w[1].x != w[0].x || w[1].y != w[0].y);
            prop_assert_eq!(w[1].t - w[0].t, st.best.dt);
        }
    }

    #[test]
    fn tracker_holds_when_boxes_are_too_sparse(ev in events(32, 32, 100, 1_000_000), x in 0i64..32, y in 0i64..32) {
        let s = EventStream::new(32, 32, ev).unwrap();
        let index = EventIndex::new(&s);
        let d = TimeSurfaceDescriptor { a: 10, tau: 50_000.0 };
        // no box can hold more than every event in the stream
        let (tr, _) = track_with(&index, Location::new(x, y, 0), &d, &params(s.len()), 0).unwrap();
        prop_assert!(tr.samples.iter().all(|p| p.x == x as f64 && p.y == y as f64));
    }

    #[test]
    fn tracking_is_deterministic(ev in events(32, 32, 400, 1_000_000), x in 0i64..32, y in 0i64..32) {
        let s = EventStream::new(32, 32, ev).unwrap();
        let index = EventIndex::new(&s);
        let d = TimeSurfaceDescriptor { a: 10, tau: 50_000.0 };
        let a = track_with(&index, Location::new(x, y, 0), &d, &params(2), 0).unwrap();
        let b = track_with(&index, Location::new(x, y, 0), &d, &params(2), 0).unwrap();
        prop_assert_eq!(a, b);
    }
}
