use num::{BigInt, BigRational, One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qcs::bounds::{
    delayed_walk_oracle, lemma1_bound, lemma2_bound, tau_async, tau_sync, theorem1_step_bound, theorem2_step_bound,
    token_walk_oracle, y_init,
};
use qcs::{generate_random_digraph, Digraph, DelayModel};

fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// Smallest `t` with `(num/den)^t <= e_num/e_den`, by exact integer powers.
fn smallest_tau(num: u64, den: u64, e_num: u64, e_den: u64) -> u64 {
    let (num, den) = (BigInt::from(num), BigInt::from(den));
    let (e_num, e_den) = (BigInt::from(e_num), BigInt::from(e_den));
    let mut t = 1u32;
    while &e_den * num::pow(num.clone(), t as usize) > &e_num * num::pow(den.clone(), t as usize) {
        t += 1;
    }
    u64::from(t)
}

#[test]
fn tau_matches_exact_power_search() {
    assert_eq!(smallest_tau(8, 9, 1, 100), 40);
    assert_eq!(tau_sync(0.01, 2, 2).unwrap(), 40);
    assert_eq!(tau_sync(0.5, 1, 1).unwrap(), smallest_tau(1, 2, 1, 2));
    assert_eq!(tau_async(0.01, 2, 2, &ratio(1, 5)).unwrap(), smallest_tau(224, 225, 1, 100));
    for (d, dmax) in [(1u32, 1u32), (1, 3), (2, 1), (2, 3), (3, 2)] {
        let base = 1u64 + u64::from(dmax);
        let den = base.pow(d);
        for (e_num, e_den) in [(1u64, 20u64), (1, 10), (1, 4), (1, 2), (3, 4)] {
            let eps = e_num as f64 / e_den as f64;
            assert_eq!(
                tau_sync(eps, d, dmax).unwrap(),
                smallest_tau(den - 1, den, e_num, e_den),
                "d={d} dmax={dmax} eps={eps}"
            );
        }
    }
}

#[test]
fn closed_forms_reproduce_worked_values() {
    assert_eq!(lemma1_bound(2, 2).unwrap(), ratio(1, 9));
    assert_eq!(lemma2_bound(2, 2, &ratio(1, 5)).unwrap(), ratio(1, 225));
    assert_eq!(y_init(&[10, 3, 5, 6], &ratio(11, 2)), 6);
    assert_eq!(theorem1_step_bound(6, 4, 40, 2), 802);
    assert_eq!(theorem2_step_bound(6, 4, 40, 2, 5), 4010);
}

/// Transition-matrix power in floating point, built straight from the
/// adjacency lists.
fn walk_by_matrix_power(g: &Digraph, start: usize, steps: u32) -> Vec<f64> {
    let n = g.node_count();
    let mut p = vec![vec![0.0; n]; n];
    for (v, row) in p.iter_mut().enumerate() {
        let share = 1.0 / (1 + g.out_degree(v)) as f64;
        row[v] = share;
        for &u in g.out_neighbors(v) {
            row[u] = share;
        }
    }
    let mut dist = vec![0.0; n];
    dist[start] = 1.0;
    for _ in 0..steps {
        dist = (0..n).map(|u| (0..n).map(|v| dist[v] * p[v][u]).sum()).collect();
    }
    dist
}

#[test]
fn token_walk_matches_floating_point_matrix_power() {
    for seed in 0..40u64 {
        let n = 2 + (seed % 7) as usize;
        let g = generate_random_digraph(n, 0.45, seed, 10_000).unwrap();
        for steps in [0u32, 1, 3, g.diameter()] {
            for s in 0..n {
                let approx = walk_by_matrix_power(&g, s, steps);
                let mut total = BigRational::zero();
                for (t, &a) in approx.iter().enumerate() {
                    let exact = token_walk_oracle(&g, s, t, steps).unwrap();
                    assert!((exact.to_f64().unwrap() - a).abs() < 1e-12);
                    total += exact;
                }
                assert!(total.is_one());
            }
        }
    }
}

#[test]
fn lemma1_dominates_on_small_graphs() {
    for seed in 0..60u64 {
        let n = 2 + (seed % 5) as usize;
        let g = generate_random_digraph(n, 0.3 + 0.1 * (seed % 5) as f64, seed, 10_000).unwrap();
        let bound = lemma1_bound(g.diameter(), g.max_out_degree() as u32).unwrap();
        for s in 0..n {
            for t in 0..n {
                assert!(token_walk_oracle(&g, s, t, g.diameter()).unwrap() >= bound);
            }
        }
    }
}

#[test]
fn lemma2_dominates_delayed_walk() {
    for (seed, b) in [(1u64, 2u32), (2, 3), (3, 2), (4, 3)] {
        let g = generate_random_digraph(4, 0.5, seed, 10_000).unwrap();
        let delays = DelayModel::uniform(b);
        let bmin = delays.min_max_delay_probability(4);
        let bound = lemma2_bound(g.diameter(), g.max_out_degree() as u32, &bmin).unwrap();
        for s in 0..4 {
            for t in 0..4 {
                let p = delayed_walk_oracle(&g, &delays, s, t, b * g.diameter()).unwrap();
                assert!(p >= bound, "seed {seed}: {s}->{t} {p} < {bound}");
            }
        }
    }
}

#[test]
fn delayed_walk_agrees_with_simulation() {
    let g = Digraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2), (2, 0)]).unwrap();
    let weights = [1u32, 2, 1];
    let delays = DelayModel::shared(weights.to_vec());
    let steps = 7u32;
    let trials = 200_000;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draw_delay = |rng: &mut ChaCha8Rng| -> u32 {
        let x = rng.gen_range(0..weights.iter().sum::<u32>());
        let mut acc = 0;
        for (i, &w) in weights.iter().enumerate() {
            acc += w;
            if x < acc {
                return i as u32 + 1;
            }
        }
        unreachable!()
    };
    let mut hits = [0u64; 4];
    for _ in 0..trials {
        let mut at = 0usize;
        let mut left = draw_delay(&mut rng);
        for _ in 0..steps {
            left -= 1;
            if left == 0 {
                let options: Vec<usize> = std::iter::once(at).chain(g.out_neighbors(at).iter().copied()).collect();
                at = options[rng.gen_range(0..options.len())];
                left = draw_delay(&mut rng);
            }
        }
        hits[at] += 1;
    }
    for (t, &h) in hits.iter().enumerate() {
        let exact = delayed_walk_oracle(&g, &delays, 0, t, steps).unwrap().to_f64().unwrap();
        let freq = h as f64 / trials as f64;
        let sigma = (exact * (1.0 - exact) / trials as f64).sqrt();
        assert!((freq - exact).abs() < 5.0 * sigma + 1e-9, "node {t}: {freq} vs {exact}");
    }
}
