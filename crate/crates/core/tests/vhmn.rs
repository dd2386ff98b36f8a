use pihedge_core::vhmn::{
    fit, forward, forward_backward, posteriors, random_params, reestimate, sample_path,
    sample_path_seeded, Dims, FitConfig, SequencePair, VhmnParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Joint probability of one hidden path with the observed pair sequence.
fn path_probability(p: &VhmnParams, hidden: &[usize], seq: &SequencePair) -> f64 {
    let mut prob = p.z[hidden[0]];
    for t in 0..seq.len() {
        let (s, o) = (seq.visible[t], seq.observed[t]);
        prob *= p.b.get(hidden[t], s) * p.c.get(s, o);
        if t + 1 < seq.len() {
            prob *= p.a.get(hidden[t], hidden[t + 1]);
        }
    }
    prob
}

fn all_hidden_paths(j: usize, len: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| (0..j).map(move |h| [p.clone(), vec![h]].concat()))
            .collect();
    }
    out
}

fn enumerate(p: &VhmnParams, seq: &SequencePair) -> f64 {
    all_hidden_paths(p.dims().hidden, seq.len())
        .iter()
        .map(|h| path_probability(p, h, seq))
        .sum()
}

fn random_instance(rng: &mut ChaCha8Rng, dims: Dims, len: usize) -> (VhmnParams, SequencePair) {
    let params = random_params(dims, 1.0, rng);
    let visible = (0..len)
        .map(|_| rng.random_range(0..dims.visible))
        .collect();
    let observed = (0..len)
        .map(|_| rng.random_range(0..dims.observed))
        .collect();
    (params, SequencePair::new(visible, observed).unwrap())
}

#[test]
fn forward_matches_enumeration_two_steps() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let dims = Dims {
        hidden: 2,
        visible: 2,
        observed: 2,
    };
    for _ in 0..20 {
        let (p, seq) = random_instance(&mut rng, dims, 2);
        let tr = forward(&p, &seq).unwrap();
        let brute = enumerate(&p, &seq);
        assert!(
            (tr.log_likelihood.exp() - brute).abs() < 1e-12,
            "{} vs {brute}",
            tr.log_likelihood.exp()
        );
    }
}

#[test]
fn beta_zero_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = Dims {
        hidden: 2,
        visible: 3,
        observed: 2,
    };
    let (p, seq) = random_instance(&mut rng, dims, 3);
    let tr = forward_backward(&p, &seq).unwrap();
    let later: f64 = tr.scale[1..].iter().product();
    for i in 0..2 {
        // β₀(i) = P(s₁o₁ s₂o₂ | h₀ = i)
        let brute: f64 = all_hidden_paths(2, 2)
            .iter()
            .map(|rest| {
                let (h1, h2) = (rest[0], rest[1]);
                let e = |h: usize, t: usize| {
                    p.b.get(h, seq.visible[t]) * p.c.get(seq.visible[t], seq.observed[t])
                };
                p.a.get(i, h1) * e(h1, 1) * p.a.get(h1, h2) * e(h2, 2)
            })
            .sum();
        let unscaled = tr.beta[0][i] / later;
        assert!(
            (unscaled - brute).abs() < 1e-12 * brute.max(1e-300),
            "{unscaled} vs {brute}"
        );
    }
}

#[test]
fn pair_posterior_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = Dims {
        hidden: 2,
        visible: 2,
        observed: 3,
    };
    let (p, seq) = random_instance(&mut rng, dims, 2);
    let tr = forward_backward(&p, &seq).unwrap();
    let post = posteriors(&tr, &p, &seq);
    let total = enumerate(&p, &seq);
    for i in 0..2 {
        for j in 0..2 {
            let brute = path_probability(&p, &[i, j], &seq) / total;
            assert!((post.digamma[0][i][j] - brute).abs() < 1e-12);
        }
        let last: f64 = (0..2)
            .map(|h| path_probability(&p, &[h, i], &seq))
            .sum::<f64>()
            / total;
        assert!((post.gamma[1][i] - last).abs() < 1e-12);
    }
}

#[test]
fn forward_backward_identity_on_long_sequence() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = Dims {
        hidden: 2,
        visible: 30,
        observed: 30,
    };
    let p = random_params(dims, 5.0, &mut rng);
    let path = sample_path(&p, 400, &mut rng);
    let seq = SequencePair::new(path.visible, path.observed).unwrap();
    let tr = forward_backward(&p, &seq).unwrap();
    assert!(tr.log_likelihood.is_finite() && tr.log_likelihood < -1000.0);
    for t in 0..seq.len() {
        let s: f64 = (0..2).map(|i| tr.alpha[t][i] * tr.beta[t][i]).sum();
        assert!((s - 1.0).abs() < 1e-9);
    }
}

fn generator() -> VhmnParams {
    VhmnParams::from_rows(
        &[vec![0.9, 0.1], vec![0.2, 0.8]],
        &[vec![0.6, 0.3, 0.05, 0.05], vec![0.05, 0.15, 0.4, 0.4]],
        &[
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.0, 0.0, 0.5, 0.5],
        ],
        &[0.5, 0.5],
    )
    .unwrap()
}

#[test]
fn fitted_c_matches_generator() {
    let g = generator();
    let path = sample_path_seeded(&g, 100_000, 17, 0);
    let seq = SequencePair::new(path.visible, path.observed).unwrap();
    let cfg = FitConfig {
        restarts: 1,
        max_iters: 5,
        seed: 1,
        ..FitConfig::default()
    };
    let fitted = fit(&seq, g.dims(), &cfg).unwrap();
    for k in 0..4 {
        for l in 0..4 {
            assert!(
                (fitted.params.c.get(k, l) - g.c.get(k, l)).abs() < 1e-2,
                "c[{k}][{l}]"
            );
        }
    }
}

#[test]
fn fitted_likelihood_reaches_generator() {
    let g = generator();
    let len = 5000;
    let path = sample_path_seeded(&g, len, 5, 0);
    let seq = SequencePair::new(path.visible, path.observed).unwrap();
    let generating = forward(&g, &seq).unwrap().log_likelihood;
    let cfg = FitConfig {
        seed: 8,
        ..FitConfig::default()
    };
    let fitted = fit(&seq, g.dims(), &cfg).unwrap();
    let best = *fitted.trace.last().unwrap();
    assert!(
        best >= generating - 1e-3 * len as f64,
        "fitted {best}, generator {generating}"
    );
    assert_eq!(fitted.restarts.len(), 5);
}

#[test]
fn em_trace_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let dims = Dims {
        hidden: 3,
        visible: 6,
        observed: 5,
    };
    for round in 0..5 {
        let (_, seq) = random_instance(&mut rng, dims, 120);
        let fitted = fit(
            &seq,
            dims,
            &FitConfig {
                seed: round,
                restarts: 2,
                ..FitConfig::default()
            },
        )
        .unwrap();
        for w in fitted.trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(fitted.params.stochastic_error() <= 1e-12);
    }
}

#[test]
fn sampled_frequencies_match_generator() {
    let g = generator();
    let n = 100_000;
    let path = sample_path_seeded(&g, n, 99, 0);
    let mut a = [[0.0; 2]; 2];
    let mut b = [[0.0; 4]; 2];
    let mut c = [[0.0; 4]; 4];
    for t in 0..n {
        b[path.hidden[t]][path.visible[t]] += 1.0;
        c[path.visible[t]][path.observed[t]] += 1.0;
        if t + 1 < n {
            a[path.hidden[t]][path.hidden[t + 1]] += 1.0;
        }
    }
    let check = |counts: &[f64], expected: &[f64]| {
        let total: f64 = counts.iter().sum();
        for (x, e) in counts.iter().zip(expected) {
            assert!((x / total - e).abs() < 1e-2, "{} vs {e}", x / total);
        }
    };
    for i in 0..2 {
        check(&a[i], g.a.row(i));
        check(&b[i], g.b.row(i));
    }
    for k in 0..4 {
        check(&c[k], g.c.row(k));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_equals_enumeration(seed in any::<u64>(), j in 1usize..=3, k in 1usize..=3, l in 1usize..=3, len in 1usize..=4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (p, seq) = random_instance(&mut rng, Dims { hidden: j, visible: k, observed: l }, len);
        let brute = enumerate(&p, &seq);
        match forward(&p, &seq) {
            Ok(tr) => prop_assert!((tr.log_likelihood - brute.ln()).abs() < 1e-10),
            Err(_) => prop_assert_eq!(brute, 0.0),
        }
    }

    #[test]
    fn reestimate_keeps_rows_stochastic(seed in any::<u64>(), len in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = Dims { hidden: 2, visible: 5, observed: 4 };
        let (p, seq) = random_instance(&mut rng, dims, len);
        let tr = forward_backward(&p, &seq).unwrap();
        let post = posteriors(&tr, &p, &seq);
        for g in &post.gamma {
            prop_assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let next = reestimate(&post, &seq, dims.visible, dims.observed);
        prop_assert!(next.stochastic_error() <= 1e-12);
    }
}
