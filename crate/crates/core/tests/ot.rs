use hmmrnn::numerics::RngStream;
use hmmrnn::ot::{align, cost_matrix, divergence_gradient, ot_eps, sinkhorn_divergence, PointCloud, SinkhornConfig};
use proptest::prelude::*;

mod common;
use common::{brute_force, cloud, divergence_fd_error, permutations, tight};

#[test]
fn small_blur_approaches_assignment_optimum() {
    let mut s = RngStream::new(31, 0);
    for k in 0..20 {
        let n = 1 + k % 5;
        let (x, y) = (cloud(n, 3, &mut s), cloud(n, 3, &mut s));
        let r = ot_eps(&x, &y, &tight(1e-3)).unwrap();
        let opt = brute_force(&cost_matrix(&x, &y).unwrap());
        assert!((r.transport_cost - opt).abs() < 1e-3, "instance {k}: {} vs {opt}", r.transport_cost);
    }
}

#[test]
fn blur_limit_is_monotone() {
    let mut s = RngStream::new(32, 0);
    for _ in 0..5 {
        let (x, y) = (cloud(4, 2, &mut s), cloud(4, 2, &mut s));
        let opt = brute_force(&cost_matrix(&x, &y).unwrap());
        let gaps: Vec<f64> = [1.0, 0.1, 0.01, 0.001].iter().map(|&e| (ot_eps(&x, &y, &tight(e)).unwrap().value - opt).abs()).collect();
        for w in gaps.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{gaps:?}");
        }
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut s = RngStream::new(33, 0);
    for k in 0..20 {
        let n = 1 + s.below(6);
        let m = 1 + s.below(6);
        let dim = 1 + s.below(4);
        let (x, y) = (cloud(n, dim, &mut s), cloud(m, dim, &mut s));
        let worst = divergence_fd_error(&x, &y, &tight(0.5));
        assert!(worst < 1e-4, "instance {k}: rel {worst}");
    }
}

#[test]
fn matched_clouds_have_zero_gradient() {
    let mut s = RngStream::new(34, 0);
    let x = cloud(5, 3, &mut s);
    let g = divergence_gradient(&x, &x.clone(), &tight(0.05)).unwrap();
    assert!(g.data().iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn alignment_respects_clusters_and_permutations() {
    let mut s = RngStream::new(35, 0);
    // two tight blobs far apart; within each blob the brute-force nearest assignment is unique
    let mut rows_x = Vec::new();
    let mut rows_y = Vec::new();
    for c in [0.0, 50.0] {
        for _ in 0..3 {
            rows_x.push(vec![c + s.gaussian(), s.gaussian()]);
            rows_y.push(vec![c + s.gaussian(), s.gaussian()]);
        }
    }
    let (x, y) = (PointCloud::from_rows(&rows_x).unwrap(), PointCloud::from_rows(&rows_y).unwrap());
    let cfg = tight(1e-3);
    let pairing = align(&x, &y, &cfg).unwrap();
    for (i, &j) in pairing.iter().enumerate() {
        assert_eq!(i / 3, j / 3, "point {i} crossed clusters");
    }
    // the pairing is the optimal permutation
    let c = cost_matrix(&x, &y).unwrap();
    let best = permutations(6)
        .into_iter()
        .min_by(|p, q| {
            let cp: f64 = p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
            let cq: f64 = q.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
            cp.total_cmp(&cq)
        })
        .unwrap();
    assert_eq!(pairing, best);

    let perm = [4, 1, 5, 0, 3, 2];
    let y_perm = PointCloud::from_rows(&perm.iter().map(|&k| rows_y[k].clone()).collect::<Vec<_>>()).unwrap();
    let permuted = align(&x, &y_perm, &cfg).unwrap();
    for i in 0..6 {
        assert_eq!(perm[permuted[i]], pairing[i]);
    }
    assert_eq!(align(&x, &x.clone(), &cfg).unwrap(), (0..6).collect::<Vec<_>>());
}

#[test]
fn capped_runs_are_flagged() {
    let mut s = RngStream::new(36, 0);
    let (x, y) = (cloud(5, 3, &mut s), cloud(5, 3, &mut s));
    let r = ot_eps(&x, &y, &SinkhornConfig { eps: 0.01, max_iters: 2, tol: 1e-12, extrapolate: false }).unwrap();
    assert!(!r.converged && r.marginal_error > 1e-12);
    assert!(divergence_gradient(&x, &y, &SinkhornConfig { eps: 0.01, max_iters: 2, tol: 1e-12, extrapolate: false }).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn divergence_properties(seed in any::<u64>(), n in 1usize..6, m in 1usize..6, shift in -5.0f64..5.0) {
        let mut s = RngStream::new(seed, 0);
        let (x, y) = (cloud(n, 3, &mut s), cloud(m, 3, &mut s));
        // blur comparable to the cost spread so every instance converges to 1e-12
        let cfg = tight(0.5);
        let sxy = sinkhorn_divergence(&x, &y, &cfg).unwrap();
        let syx = sinkhorn_divergence(&y, &x, &cfg).unwrap();
        prop_assert!(sxy >= -1e-9);
        prop_assert!((sxy - syx).abs() < 1e-9);
        prop_assert!(sinkhorn_divergence(&x, &x.clone(), &cfg).unwrap().abs() < 1e-9);
        let mv = |c: &PointCloud| {
            let mut p = c.points().clone();
            p.data_mut().iter_mut().for_each(|v| *v += shift);
            PointCloud::uniform(p).unwrap()
        };
        let moved = sinkhorn_divergence(&mv(&x), &mv(&y), &cfg).unwrap();
        prop_assert!((moved - sxy).abs() < 1e-9, "{} vs {}", moved, sxy);
        let c = cost_matrix(&x, &y).unwrap();
        prop_assert_eq!(c.transpose(), cost_matrix(&y, &x).unwrap());
    }
}
