use memb::theory::*;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

use common::{random_distribution, random_points};

#[test]
fn primal_equals_dual_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for case in 0..100 {
        let n = rng.random_range(2..=24);
        let pts = random_points(&mut rng, n, 1 + case % 2);
        let a = random_distribution(&mut rng, n, 0.3);
        let b = random_distribution(&mut rng, n, 0.3);
        let primal = wasserstein_discrete(&a, &b, &euclidean_cost(&pts, &pts)).unwrap();
        let (dual, f) = wasserstein_dual(&a, &b, &pts).unwrap();
        assert!((primal - dual).abs() < 1e-9, "case {case}: {primal} vs {dual}");
        // the witness is 1-Lipschitz and attains the value
        for i in 0..n {
            for j in 0..n {
                if (a[i] > 0.0 || b[i] > 0.0) && (a[j] > 0.0 || b[j] > 0.0) {
                    assert!(f[i] - f[j] <= euclidean(&pts[i], &pts[j]) + 1e-9);
                }
            }
        }
        let attained: f64 = (0..n).map(|i| f[i] * (a[i] - b[i])).sum();
        assert!((attained - dual).abs() < 1e-9);
    }
}

#[test]
fn vertex_enumeration_matches_on_three_point_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let pts = random_points(&mut rng, 3, 2);
        let a = random_distribution(&mut rng, 3, 0.0);
        let b = random_distribution(&mut rng, 3, 0.0);
        let cost = euclidean_cost(&pts, &pts);
        let brute = wasserstein_vertex_enumeration(&a, &b, &cost).unwrap();
        let primal = wasserstein_discrete(&a, &b, &cost).unwrap();
        assert!((brute - primal).abs() < 1e-9, "{brute} vs {primal}");
    }
}

#[test]
fn rectangular_and_non_metric_costs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let a = random_distribution(&mut rng, n, 0.0);
        let b = random_distribution(&mut rng, m, 0.0);
        let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..5.0)).collect()).collect();
        let brute = wasserstein_vertex_enumeration(&a, &b, &cost).unwrap();
        let primal = wasserstein_discrete(&a, &b, &cost).unwrap();
        assert!((brute - primal).abs() < 1e-9);
    }
}

#[test]
fn triangle_inequality_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..=12);
        let pts = random_points(&mut rng, n, 2);
        let [a, b, c] = [0, 1, 2].map(|_| random_distribution(&mut rng, n, 0.2));
        let w = |x: &[f64], y: &[f64]| w1_on_points(x, y, &pts).unwrap();
        assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9);
        assert!((w(&a, &b) - w(&b, &a)).abs() < 1e-9);
    }
}

#[test]
fn rejects_bad_marginals() {
    let pts = vec![vec![0.0], vec![1.0]];
    assert!(wasserstein_dual(&[0.6, 0.6], &[0.5, 0.5], &pts).is_err());
    assert!(w1_on_points(&[1.0], &[1.0, 0.0], &pts).is_err());
}

/// Two-state line {0, 1}, one action at 0, a single deterministic map.
fn tiny_mdp(map: Vec<Vec<usize>>, reward: [f64; 2], gamma: f64, initial: Vec<f64>) -> LipschitzMDP {
    LipschitzMDP::new(
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.0]],
        TransitionMixture::new(vec![map], vec![1.0]).unwrap(),
        vec![vec![reward[0]], vec![reward[1]]],
        gamma,
        initial,
    )
    .unwrap()
}

#[test]
fn exact_return_closed_forms() {
    let mdp = tiny_mdp(vec![vec![1], vec![0]], [2.0, 2.0], 0.9, vec![0.5, 0.5]);
    let pi = vec![vec![1.0], vec![1.0]];
    let eta = exact_return(&mdp, &mdp.kernel(), &pi, HORIZON_EPS).unwrap();
    assert!((eta - 20.0).abs() < HORIZON_EPS);
    // absorbing rewarding state
    let mdp = tiny_mdp(vec![vec![0], vec![0]], [1.0, 0.0], 0.8, vec![1.0, 0.0]);
    let eta = exact_return(&mdp, &mdp.kernel(), &pi, HORIZON_EPS).unwrap();
    assert!((eta - 5.0).abs() < HORIZON_EPS);
    assert!(matches!(
        LipschitzMDP::new(vec![vec![0.0]], vec![vec![0.0]], TransitionMixture::new(vec![vec![vec![0]]], vec![1.0]).unwrap(), vec![vec![0.0]], 1.0, vec![1.0]),
        Err(TheoryError::Discount(_))
    ));
}

fn small_instance(seed: u64) -> Instance {
    generate_instance(seed, &InstanceConfig { depth: 2, actions: 2, ..InstanceConfig::default() }).unwrap().0
}

#[test]
fn exact_return_matches_linear_solve() {
    for seed in 0..10 {
        let inst = small_instance(seed);
        let mdp = &inst.mdp;
        let p = mdp.kernel();
        let pi = mdp.policy_table(&inst.policy);
        let n = mdp.num_states();
        let mut m = DMatrix::<f64>::identity(n, n);
        let mut r = DVector::<f64>::zeros(n);
        for s in 0..n {
            for a in 0..mdp.num_actions() {
                r[s] += pi[s][a] * mdp.reward[s][a];
                for t in 0..n {
                    m[(s, t)] -= mdp.gamma * pi[s][a] * p[s][a][t];
                }
            }
        }
        let v = m.lu().solve(&r).unwrap();
        let oracle: f64 = (0..n).map(|s| mdp.initial[s] * v[s]).sum();
        let eta = exact_return(mdp, &p, &pi, HORIZON_EPS).unwrap();
        assert!((eta - oracle).abs() < 1e-9, "{eta} vs {oracle}");
    }
}

#[test]
fn exact_return_is_linear_in_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for seed in 0..10 {
        let inst = small_instance(seed);
        let mut m1 = inst.mdp.clone();
        let mut m2 = inst.mdp.clone();
        for row in m2.reward.iter_mut() {
            for r in row.iter_mut() {
                *r = rng.random_range(-1.0..1.0);
            }
        }
        let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let mut mix = m1.clone();
        for s in 0..mix.num_states() {
            for a in 0..mix.num_actions() {
                mix.reward[s][a] = x * m1.reward[s][a] + y * m2.reward[s][a];
            }
        }
        let p = m1.kernel();
        let pi = m1.policy_table(&inst.policy);
        let e = |m: &LipschitzMDP| exact_return(m, &p, &pi, 1e-13).unwrap();
        assert!((e(&mix) - (x * e(&m1) + y * e(&m2))).abs() < 1e-9);
        m1.reward.iter_mut().flatten().for_each(|r| *r = 0.0);
        assert_eq!(e(&m1), 0.0);
    }
}

#[test]
fn branched_return_limits() {
    for seed in 0..10 {
        let inst = generate_instance(seed, &InstanceConfig::default()).unwrap().0;
        let mdp = &inst.mdp;
        let a = analyze(&inst).unwrap();
        let base = exact_return(mdp, &a.p, &a.pi_d, HORIZON_EPS).unwrap();
        let k0 = branched_return(mdp, &a.p, &a.p_hat, &a.pi_d, &a.pi, 0, HORIZON_EPS).unwrap();
        assert!((k0 - base).abs() < 1e-12);
        for k in [1, 2, 5, 20] {
            let same = branched_return(mdp, &a.p, &a.p, &a.pi_d, &a.pi_d, k, HORIZON_EPS).unwrap();
            assert!((same - base).abs() < 1e-12);
        }
    }
}

fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

#[test]
fn branched_return_matches_monte_carlo() {
    let mut inst = small_instance(5);
    inst.mdp.gamma = 0.7;
    let mdp = &inst.mdp;
    let a = analyze(&inst).unwrap();
    let k = 2;
    let exact = branched_return(mdp, &a.p, &a.p_hat, &a.pi_d, &a.pi, k, HORIZON_EPS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let n = 1_000_000;
    let horizon = 60; // 0.7^60 · r_max / 0.3 < 1e-8
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..n {
        let mut s = sample_index(&mut rng, &mdp.initial);
        let mut g = 0.0;
        let mut discount = 1.0;
        for t in 0..horizon {
            let (kernel, policy) = if t < k { (&inst.model, &inst.policy) } else { (&mdp.transition, &inst.data_policy) };
            let act = policy.maps[sample_index(&mut rng, &policy.weights)][s];
            g += discount * mdp.reward[s][act];
            s = kernel.maps[sample_index(&mut rng, &kernel.weights)][s][act];
            discount *= mdp.gamma;
        }
        sum += g;
        sq += g * g;
    }
    let mean = sum / n as f64;
    let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - exact).abs() < 3.0 * se.max(1e-12), "MC {mean} ± {se} vs exact {exact}");
}

#[test]
fn lipschitz_constant_examples() {
    let line: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 * 0.7]).collect();
    assert!((lipschitz_constant(&line, &line).unwrap() - 1.0).abs() < 1e-12);
    let half: Vec<Vec<f64>> = line.iter().map(|x| vec![x[0] / 2.0]).collect();
    assert!((lipschitz_constant(&line, &half).unwrap() - 0.5).abs() < 1e-12);
    let dup = vec![vec![1.0], vec![1.0]];
    assert_eq!(lipschitz_constant(&dup, &dup), Err(TheoryError::DuplicatePoint(0, 1)));
}

#[test]
fn composition_constant_never_exceeds_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let (n1, n2) = (rng.random_range(2..=10), rng.random_range(2..=10));
        let m1 = random_points(&mut rng, n1, 2);
        let m2 = random_points(&mut rng, n2, 1);
        let m3 = random_points(&mut rng, n2, 3);
        let g: Vec<usize> = (0..n1).map(|_| rng.random_range(0..n2)).collect();
        // f: M2 → M3 as the i-th point ↦ m3[i]
        let kg = lipschitz_constant(&m1, &g.iter().map(|&j| m2[j].clone()).collect::<Vec<_>>()).unwrap();
        let kf = lipschitz_constant(&m2, &m3).unwrap();
        let kh = lipschitz_constant(&m1, &g.iter().map(|&j| m3[j].clone()).collect::<Vec<_>>()).unwrap();
        assert!(kh <= kf * kg + 1e-12);
    }
}

#[test]
fn lifted_policy_constant_is_at_least_one() {
    for seed in 0..20 {
        let inst = generate_instance(seed, &InstanceConfig::default()).unwrap().0;
        for map in &inst.policy.maps {
            assert!(policy_map_constant(&inst.mdp, map).unwrap() >= 1.0);
        }
        let c = lipschitz_constants(&inst.mdp, &[&inst.mdp.transition, &inst.model], &[&inst.policy, &inst.data_policy]).unwrap();
        assert!(c.k_bar < 1.0 && (c.k_bar - c.k_pi * c.k_m).abs() < 1e-15);
    }
}

#[test]
fn epsilons_examples() {
    let inst = generate_instance(8, &InstanceConfig::default()).unwrap().0;
    let mdp = &inst.mdp;
    let p = mdp.kernel();
    let pi = mdp.policy_table(&inst.policy);
    let (em, ep) = epsilons(mdp, &p, &p, &pi, &pi).unwrap();
    assert_eq!((em, ep), (0.0, 0.0));

    // hand 2-state pair on {0, 1}: rows (1, 0) vs (0.25, 0.75) → 0.75; (0.5, 0.5) vs (0.5, 0.5) → 0
    let two = LipschitzMDP::new(
        vec![vec![0.0], vec![1.0]],
        vec![vec![0.0]],
        TransitionMixture::new(vec![vec![vec![0], vec![0]]], vec![1.0]).unwrap(),
        vec![vec![0.0], vec![0.0]],
        0.5,
        vec![1.0, 0.0],
    )
    .unwrap();
    let p1 = vec![vec![vec![1.0, 0.0]], vec![vec![0.5, 0.5]]];
    let p2 = vec![vec![vec![0.25, 0.75]], vec![vec![0.5, 0.5]]];
    let one = vec![vec![1.0], vec![1.0]];
    let (em, ep) = epsilons(&two, &p1, &p2, &one, &one).unwrap();
    assert!((em - 0.75).abs() < 1e-12 && ep == 0.0);
}

fn exact_copy(seed: u64) -> Instance {
    let mut inst = generate_instance(seed, &InstanceConfig::default()).unwrap().0;
    inst.model = inst.mdp.transition.clone();
    inst.data_policy = inst.policy.clone();
    inst
}

#[test]
fn identical_processes_give_zero_everywhere() {
    let inst = exact_copy(9);
    let a = analyze(&inst).unwrap();
    assert_eq!((a.eps_m, a.eps_pi), (0.0, 0.0));
    let r = check_model_return_bound(&inst, &a).unwrap();
    assert_eq!((r.difference, r.bound), (0.0, Some(0.0)));
    assert!(r.pass);
    for k in [1, 3] {
        let r = check_branched_return_bound(&inst, &a, k).unwrap();
        assert!(r.difference < 1e-12 && r.bound == Some(0.0) && r.pass);
    }
    let lemmas = check_lemmas(&inst, &a).unwrap();
    for c in &lemmas.checks {
        if c.name != "composition" {
            assert!(c.max_lhs < 1e-12, "{}: {}", c.name, c.max_lhs);
        }
    }
    assert!(check_branched_return_bound(&inst, &a, 0).is_err());
}

#[test]
fn bounds_are_monotone_in_epsilons() {
    let c = LipschitzConstants { k_m: 0.5, k_pi: 1.2, k_r: 2.0, k_bar: 0.6 };
    for &(e1, e2) in &[(0.0, 0.1), (0.1, 0.3), (0.3, 1.0)] {
        assert!(model_return_bound(&c, 0.9, e2, 0.2) >= model_return_bound(&c, 0.9, e1, 0.2));
        assert!(model_return_bound(&c, 0.9, 0.2, e2) >= model_return_bound(&c, 0.9, 0.2, e1));
        for k in 1..6 {
            assert!(branched_return_bound(&c, 0.9, e2, 0.2, k) >= branched_return_bound(&c, 0.9, e1, 0.2, k));
            assert!(branched_return_bound(&c, 0.9, 0.2, e2, k) >= branched_return_bound(&c, 0.9, 0.2, e1, k));
        }
    }
    // policy-shift term shrinks with k; model term starts at zero
    let policy_only: Vec<f64> = (0..20).map(|k| branched_return_bound(&c, 0.9, 0.0, 1.0, k)).collect();
    assert!(policy_only.windows(2).all(|w| w[1] < w[0]));
    assert_eq!(branched_return_bound(&c, 0.9, 1.0, 0.0, 0), 0.0);
}

#[test]
fn branched_bound_increment_rules_out_interior_minimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..200 {
        let k_m = rng.random_range(0.05..0.9);
        let k_pi = rng.random_range(1.0..1.0 / k_m);
        let c = LipschitzConstants { k_m, k_pi, k_r: rng.random_range(0.1..3.0), k_bar: k_m * k_pi };
        let g = rng.random_range(0.3..0.99);
        let (em, ep) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
        let curve: Vec<f64> = (0..=K_SCAN).map(|k| branched_return_bound(&c, g, em, ep, k)).collect();
        for k in 0..30 {
            let step = curve[k + 1] - curve[k];
            let closed = branched_bound_increment(&c, g, em, ep, k);
            assert!((step - closed).abs() < 1e-9 * curve[k].abs().max(1.0));
        }
        assert_eq!(interior_minimizer(&curve), None);
    }
    assert_eq!(interior_minimizer(&[3.0, 1.0, 2.0]), Some(1));
    assert_eq!(interior_minimizer(&[3.0, 2.0, 1.0]), None);
    assert_eq!(interior_minimizer(&[3.0, 1.0, 1.0 + 1e-15, 1.0]), None);
}

#[test]
fn stated_model_return_coefficient_fails_for_constant_kernels() {
    // Two constant kernels (K_m = 0, so K̄ = 0) and one policy: the stated bound
    // is 0 although the returns differ; the corrected coefficient covers it.
    let states = vec![vec![0.0], vec![1.0]];
    let mdp = LipschitzMDP::new(
        states,
        vec![vec![0.0]],
        TransitionMixture::new(vec![vec![vec![0], vec![0]]], vec![1.0]).unwrap(),
        vec![vec![0.0], vec![1.0]],
        0.5,
        vec![1.0, 0.0],
    )
    .unwrap();
    let policy = MixturePolicy::new(vec![vec![0, 0]], vec![1.0]).unwrap();
    let inst = Instance {
        seed: 0,
        mdp,
        model: TransitionMixture::new(vec![vec![vec![1], vec![1]]], vec![1.0]).unwrap(),
        policy: policy.clone(),
        data_policy: policy,
    };
    let a = analyze(&inst).unwrap();
    assert_eq!(a.constants.k_bar, 0.0);
    let r = check_model_return_bound(&inst, &a).unwrap();
    assert!((r.difference - 1.0).abs() < 1e-9); // γ/(1−γ) · 1
    assert_eq!(r.bound, Some(0.0));
    assert!(!r.pass);
    assert_eq!(r.corrected_pass, Some(true));
}

#[test]
fn lemma_suite_holds_on_random_instances() {
    for seed in 0..30 {
        let (inst, _) = generate_instance(1000 + seed, &InstanceConfig::default()).unwrap();
        let a = analyze(&inst).unwrap();
        let report = check_lemmas(&inst, &a).unwrap();
        assert_eq!(report.violations(), 0, "{report:?}");
        for k in [1, 2, 3, 5] {
            assert!(check_branched_return_bound(&inst, &a, k).unwrap().pass);
        }
    }
}

#[test]
fn generation_is_seeded_and_validated() {
    let cfg = InstanceConfig::with_sizes(8, 3).unwrap();
    let (x, rx) = generate_instance(42, &cfg).unwrap();
    let (y, ry) = generate_instance(42, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
    assert_eq!(rx, ry);
    assert_eq!(x.mdp.num_states(), 8);
    assert!(InstanceConfig::with_sizes(5, 3).is_err());
    assert!(InstanceConfig::with_sizes(16, 9).is_err());
}
