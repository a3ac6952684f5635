use manisamp::chain::stream_rng;
use manisamp::moment::{
    curve_move, gram_moment_matrix, newton_to_elementary, neyman_chain_step, neyman_smooth_gof,
    power_sums, rank_diagnostic, solve_quartic_in_box, sqrt_jacobian_acceptance, MomentState,
    NeymanKernel, NeymanModel, NeymanStatistic,
};
use manisamp::validation::kolmogorov_survival;
use proptest::prelude::*;
use rand::Rng;

fn vandermonde_oracle(y: &[f64]) -> f64 {
    let n = y.len();
    let mut total = 0.0;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let s = [y[a], y[b], y[c], y[d]];
                    let mut v = 1.0;
                    for i in 0..4 {
                        for j in i + 1..4 {
                            v *= s[i] - s[j];
                        }
                    }
                    total += v * v;
                }
            }
        }
    }
    576.0 * total
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn gram_determinant_matches_vandermonde(y in prop::array::uniform5(0.0f64..1.0)) {
        let oracle = vandermonde_oracle(&y);
        prop_assume!(oracle > 1e-20);
        let g = gram_moment_matrix(&y, 4).unwrap();
        prop_assert!((g.determinant - oracle).abs() <= 1e-10 * oracle, "{} vs {}", g.determinant, oracle);
    }

    #[test]
    fn separated_quartic_roots_round_trip(mut r in prop::array::uniform4(0.0f64..1.0)) {
        r.sort_by(f64::total_cmp);
        prop_assume!(r.windows(2).all(|w| w[1] - w[0] >= 1e-3));
        let p = power_sums(&r, 4);
        let roots = solve_quartic_in_box(newton_to_elementary([p[0], p[1], p[2], p[3]])).unwrap();
        for (a, b) in roots.iter().zip(r) {
            prop_assert!((a - b).abs() <= 1e-8, "{:?} vs {:?}", roots, r);
        }
    }

    #[test]
    fn power_sums_are_symmetric(mut x in prop::collection::vec(0.0f64..1.0, 1..20)) {
        let a = power_sums(&x, 4);
        x.reverse();
        prop_assert_eq!(a, power_sums(&x, 4));
    }

    #[test]
    fn successful_moves_keep_local_sums(x in prop::array::uniform6(0.01f64..0.99), seed in any::<u64>()) {
        let state = MomentState::new(x.to_vec(), 4).unwrap();
        let mut rng = stream_rng(seed, 0);
        let rec = curve_move(&state, [0, 1, 2, 3, 4], 0.05, &mut rng);
        if let Some(y) = rec.proposal {
            let p = power_sums(&y, 4);
            for (a, b) in p.iter().zip(rec.local_sums) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert!(y.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}

#[test]
fn roots_are_assigned_uniformly() {
    let state = MomentState::new(vec![0.1, 0.3, 0.5, 0.7, 0.9, 0.2], 4).unwrap();
    let mut rng = stream_rng(14, 0);
    let mut counts = [0u64; 4];
    let mut moves = 0u64;
    while moves < 10_000 {
        let rec = curve_move(&state, [0, 1, 2, 3, 4], 0.01, &mut rng);
        let Some(y) = rec.proposal else { continue };
        moves += 1;
        let solved: Vec<f64> = (0..5).filter(|&k| k != rec.pivot).map(|k| y[k]).collect();
        let smallest = solved.iter().cloned().fold(f64::INFINITY, f64::min);
        counts[solved.iter().position(|&v| v == smallest).unwrap()] += 1;
    }
    let sd = (0.25 * 0.75 / moves as f64).sqrt();
    for c in counts {
        assert!(
            (c as f64 / moves as f64 - 0.25).abs() <= 3.0 * sd,
            "{counts:?}"
        );
    }
}

#[test]
fn square_root_acceptance_frequency() {
    let mut rng = stream_rng(15, 0);
    let trials = 100_000;
    let hits = (0..trials)
        .filter(|_| sqrt_jacobian_acceptance(1.0, 4.0, &mut rng).unwrap())
        .count();
    assert!((hits as f64 / trials as f64 - 0.5).abs() < 0.01);
}

#[test]
fn long_run_conserves_power_sums() {
    let mut rng = stream_rng(16, 0);
    let x: Vec<f64> = (0..12).map(|_| rng.random()).collect();
    let p0 = power_sums(&x, 4);
    let mut state = MomentState::new(x, 4).unwrap();
    let kernel = NeymanKernel::new(0.1);
    for _ in 0..100_000 {
        let rec = neyman_chain_step(&mut state, &kernel, &mut rng).unwrap();
        if let Some(y) = rec.proposal {
            let p = power_sums(&y, 4);
            for (a, b) in p.iter().zip(rec.local_sums) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        assert!(state.x.iter().all(|v| (0.0..=1.0).contains(v)));
    }
    let p = power_sums(&state.x, 4);
    for (a, b) in p.iter().zip(&p0) {
        assert!((a - b).abs() < 1e-7);
    }
    assert!(rank_diagnostic(&state.x).rank == 4);
}

fn two_sample_ks(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    kolmogorov_survival((n * m / (n + m)).sqrt() * d)
}

#[test]
fn runs_from_different_starts_agree() {
    let x = vec![0.08, 0.27, 0.41, 0.55, 0.73, 0.94];
    let kernel = NeymanKernel::new(0.15);
    let mut a = MomentState::new(x, 4).unwrap();
    let mut rng_a = stream_rng(17, 0);
    for _ in 0..50_000 {
        neyman_chain_step(&mut a, &kernel, &mut rng_a).unwrap();
    }
    let mut b = a.clone();
    let mut rng_b = stream_rng(18, 0);
    let collect = |s: &mut MomentState, rng: &mut manisamp::ChainRng| {
        let mut out = Vec::new();
        for step in 0..600_000 {
            neyman_chain_step(s, &kernel, rng).unwrap();
            if step % 300 == 0 {
                out.push(s.x[0]);
            }
        }
        out
    };
    let mut xa = collect(&mut a, &mut rng_a);
    let mut xb = collect(&mut b, &mut rng_b);
    let p = two_sample_ks(&mut xa, &mut xb);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn smooth_test_detects_a_fifth_degree_tilt() {
    // exp(c φ₅(y)) with φ₅ = √11 (252y⁵ − 630y⁴ + 560y³ − 210y² + 30y − 1)
    let c = 0.45 * 11f64.sqrt();
    let model = NeymanModel::new(
        [30.0, -210.0, 560.0, -630.0, 252.0]
            .iter()
            .map(|a| c * a)
            .collect(),
    )
    .unwrap();
    let kernel = NeymanKernel::new(0.1);
    let mut pvals: Vec<f64> = (0..200u64)
        .map(|r| {
            let mut rng = stream_rng(40_000 + r, 5);
            let data = model.sample(25, &mut rng);
            neyman_smooth_gof(&data, &kernel, r, 99, 500, NeymanStatistic::Legendre5)
                .unwrap()
                .p_value
        })
        .collect();
    pvals.sort_by(f64::total_cmp);
    assert!(pvals[100] < 0.5, "median p-value {}", pvals[100]);
}
