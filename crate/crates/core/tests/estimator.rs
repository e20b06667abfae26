use ambs_core::agents::CostModel;
use ambs_core::bounds::sample_size_exact_model;
use ambs_core::learner::CountsModel;
use ambs_core::markov::{Dynamics, Provenance};
use ambs_core::rng::SeedStreams;
use ambs_core::shield::{estimate_bounded_safety, estimate_chain_safety, ShieldConfig, ShieldModel};
use ambs_core::{TabularPolicy, TransitionSystem};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Probability that the next `h` states all avoid `bad`, starting from `s`
/// (not checked), by summing over every path.
fn brute_force_safety(ts: &TransitionSystem, bad: &[bool], s: usize, h: usize) -> f64 {
    if h == 0 {
        return 1.0;
    }
    (0..ts.num_states())
        .filter(|&next| !bad[next])
        .map(|next| ts.prob(s, next) * brute_force_safety(ts, bad, next, h - 1))
        .sum()
}

#[test]
fn pac_guarantee_holds_on_a_leaky_chain() {
    let (eps, delta) = (0.09, 0.01);
    let m = sample_size_exact_model(eps, delta).unwrap() as usize;
    assert_eq!(m, 328);
    let ts = TransitionSystem::new(2, vec![0.9, 0.1, 0.0, 1.0], Provenance::ExactFromMdp).unwrap();
    let mu = 0.9 * 0.9;
    let rounds = 400;
    let failures = (0..rounds)
        .filter(|&seed| {
            let e = estimate_chain_safety(&ts, &[true, false], 0, 2, m, &SeedStreams::new(seed), 0).unwrap();
            (e.estimate - mu).abs() > eps
        })
        .count();
    let allowed = delta + 3.0 * (delta * (1.0 - delta) / rounds as f64).sqrt();
    assert!(
        failures as f64 / rounds as f64 <= allowed,
        "{failures} of {rounds} rounds missed"
    );
}

#[test]
fn estimates_center_on_the_learned_chain() {
    let (n, k, h, m) = (4, 2, 5, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let probs: Vec<f64> = (0..n * k)
        .flat_map(|_| {
            let row: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.05).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(move |x| x / total)
        })
        .collect();
    let truth = Dynamics::new(n, k, probs).unwrap();
    let mut counts = CountsModel::new(n, k);
    for s in 0..n {
        for a in 0..k {
            for _ in 0..6 {
                counts.observe(s, a, truth.sample(s, a, &mut rng)).unwrap();
            }
        }
    }
    let policy = TabularPolicy::uniform(n, k);
    let learned = counts.mle_dynamics();
    let chain = counts.learned_transition_system(&policy).unwrap();
    let bad = vec![false, false, false, true];
    let costs = CostModel::from_violations(bad.clone(), 10.0, 0.99).unwrap();
    let model = ShieldModel {
        dynamics: &learned,
        task_chain: &chain,
        costs: &costs,
        critics: None,
    };
    let cfg = ShieldConfig {
        num_samples: m,
        imagination_horizon: h,
        lookahead_horizon: h,
        use_critic_bootstrap: false,
        ..ShieldConfig::default()
    };
    let mu_hat = brute_force_safety(&chain, &bad, 0, h);
    assert!(mu_hat > 0.05 && mu_hat < 0.95, "degenerate instance: {mu_hat}");
    let streams = SeedStreams::new(3);
    let resamples = 10_000;
    let mean = (0..resamples)
        .map(|i| {
            estimate_bounded_safety(&model, &cfg, 0, None, &streams, i)
                .unwrap()
                .estimate
        })
        .sum::<f64>()
        / resamples as f64;
    let sd = (mu_hat * (1.0 - mu_hat) / (resamples as f64 * m as f64)).sqrt();
    assert!((mean - mu_hat).abs() <= 3.0 * sd, "mean {mean} vs {mu_hat} (sd {sd})");
}
