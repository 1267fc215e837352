use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_coxian(rng: &mut ChaCha8Rng) -> CoxianDuration {
    let mut row = |last: bool| {
        let s: f64 = rng.random_range(0.1..0.8);
        let a = if last { 0.0 } else { rng.random_range(0.0..(1.0 - s)) };
        (s, a, 1.0 - s - a)
    };
    let (s0, a0, e0) = row(false);
    let (s1, a1, e1) = row(true);
    CoxianDuration::new(vec![s0, s1], vec![a0, a1], vec![e0, e1]).unwrap()
}

fn random_probs(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn random_model(seed: u64) -> HsmmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p0: f64 = rng.random_range(0.2..0.8);
    let state = |rng: &mut ChaCha8Rng| {
        let e: f64 = rng.random_range(0.0..1.0);
        StateParams {
            duration: random_coxian(rng),
            entry: vec![e, 1.0 - e],
            emission: EmissionModel::Multinomial {
                probs: random_probs(rng, 2),
            },
        }
    };
    let no_dock = state(&mut rng);
    let dock = state(&mut rng);
    let m = HsmmModel {
        initial: [p0, 1.0 - p0],
        no_dock,
        dock,
    };
    m.validate().unwrap();
    m
}

fn all_sequences(n_states: usize, t: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..t {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n_states).map(move |s| {
                    let mut q = p.clone();
                    q.push(s);
                    q
                })
            })
            .collect();
    }
    out
}

fn path_prob(hmm: &ExpandedHmm, path: &[usize], obs: &[usize]) -> f64 {
    let mut p = hmm.initial[path[0]] * hmm.emission[path[0]][obs[0]];
    for t in 1..path.len() {
        p *= hmm.transition[path[t - 1]][path[t]] * hmm.emission[path[t]][obs[t]];
    }
    p
}

// Sum over every segmentation into alternating macro-state runs; a run
// closed by a switch has probability pmf(d), the final run survival(d).
fn duration_explicit_likelihood(model: &HsmmModel, obs: &[usize]) -> f64 {
    fn rec(model: &HsmmModel, obs: &[usize], from: usize, m: MacroState) -> f64 {
        let st = model.state(m);
        let t_len = obs.len();
        let mut total = 0.0;
        let mut emit = 1.0;
        for end in from + 1..=t_len {
            emit *= st.emission.prob(obs[end - 1]);
            let d = end - from;
            let dur = |f: &dyn Fn(usize) -> f64| st.entry.iter().enumerate().map(|(k, e)| e * f(k)).sum::<f64>();
            if end == t_len {
                total += emit * dur(&|k| st.duration.survival(k, d));
            } else {
                total += emit * dur(&|k| st.duration.pmf(k, d)) * rec(model, obs, end, m.other());
            }
        }
        total
    }
    MacroState::ALL
        .iter()
        .map(|&m| model.initial[m.index()] * rec(model, obs, 0, m))
        .sum()
}

#[test]
fn single_step_likelihood() {
    let m = random_model(1);
    for o in 0..2 {
        let expected = (m.initial[0] * m.no_dock.emission.prob(o) + m.initial[1] * m.dock.emission.prob(o)).ln();
        assert!((forward_likelihood(&m, &[o], None).unwrap() - expected).abs() < 1e-12);
    }
}

#[test]
fn forward_matches_exhaustive_enumeration() {
    for seed in 0..5 {
        let m = random_model(seed);
        let hmm = m.expand();
        for obs in all_sequences(2, 4) {
            let brute: f64 = all_sequences(4, 4).iter().map(|p| path_prob(&hmm, p, &obs)).sum();
            let ll = forward_likelihood(&m, &obs, None).unwrap();
            assert!((ll - brute.ln()).abs() < 1e-10, "seed {seed} obs {obs:?}");
        }
    }
}

#[test]
fn expanded_chain_matches_duration_explicit_sum() {
    for seed in 10..14 {
        let m = random_model(seed);
        for t in 1..=6 {
            let obs: Vec<usize> = (0..t).map(|i| (i * 7 + seed as usize) % 3 % 2).collect();
            let ll = forward_likelihood(&m, &obs, None).unwrap();
            let oracle = duration_explicit_likelihood(&m, &obs).ln();
            assert!((ll - oracle).abs() < 1e-10, "seed {seed} t {t}");
        }
    }
}

#[test]
fn fully_labeled_matches_phase_enumeration() {
    let m = random_model(3);
    let hmm = m.expand();
    let obs = [0, 1, 1, 0];
    let macros = [
        MacroState::NoDock,
        MacroState::NoDock,
        MacroState::Dock,
        MacroState::Dock,
    ];
    let labels: Vec<Label> = macros.iter().map(|&x| x.into()).collect();
    let brute: f64 = all_sequences(4, 4)
        .iter()
        .filter(|p| p.iter().zip(&macros).all(|(&s, &mac)| hmm.macro_of[s] == mac))
        .map(|p| path_prob(&hmm, p, &obs))
        .sum();
    let ll = forward_likelihood(&m, &obs, Some(&labels)).unwrap();
    assert!((ll - brute.ln()).abs() < 1e-10);
}

#[test]
fn inconsistent_labels_are_rejected() {
    // Dock that cannot end before sample 3 but is labelled NoDock at sample 1.
    let mut m = random_model(4);
    m.initial = [0.0, 1.0];
    m.dock.duration = CoxianDuration::new(vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
    let labels = [Label::Unlabeled, Label::NoDock, Label::Unlabeled];
    let err = forward_likelihood(&m, &[0, 1, 0], Some(&labels)).unwrap_err();
    assert!(err.to_string().contains("labels inconsistent with model support"));
    assert!(forward_likelihood(&m, &[0, 1], Some(&[Label::Dock])).is_err());
    assert!(forward_likelihood(&m, &[0, 2], None).is_err());
}

#[test]
fn marginals_sum_to_one_and_labels_clamp() {
    let m = random_model(5);
    let obs = [0, 1, 1, 0, 1, 0, 0, 1];
    let mut labels = vec![Label::Unlabeled; obs.len()];
    labels[2] = Label::Dock;
    labels[6] = Label::NoDock;
    let post = posteriors(&m, &obs, Some(&labels)).unwrap();
    let marg = post.macro_marginals(&m.expand());
    for g in &marg {
        assert!((g[0] + g[1] - 1.0).abs() < 1e-12);
    }
    assert!((marg[2][MacroState::Dock.index()] - 1.0).abs() < 1e-12);
    assert!((marg[6][MacroState::NoDock.index()] - 1.0).abs() < 1e-12);
}

#[test]
fn single_phase_is_plain_hmm() {
    let m = HsmmModel::with_emissions(
        1,
        4.0,
        EmissionModel::Multinomial { probs: vec![0.7, 0.3] },
        EmissionModel::Multinomial { probs: vec![0.2, 0.8] },
    )
    .unwrap();
    // Two-state HMM forward recursion written out directly.
    let stay = m.no_dock.duration.stay[0];
    let a = [[stay, 1.0 - stay], [1.0 - stay, stay]];
    let b = [[0.7, 0.3], [0.2, 0.8]];
    let obs = [1, 1, 0, 1, 0, 0, 1];
    let mut alpha = [0.5 * b[0][obs[0]], 0.5 * b[1][obs[0]]];
    for &o in &obs[1..] {
        alpha = [
            (alpha[0] * a[0][0] + alpha[1] * a[1][0]) * b[0][o],
            (alpha[0] * a[0][1] + alpha[1] * a[1][1]) * b[1][o],
        ];
    }
    let ll = forward_likelihood(&m, &obs, None).unwrap();
    assert!((ll - (alpha[0] + alpha[1]).ln()).abs() < 1e-12);
}

#[test]
fn viterbi_matches_exhaustive_search() {
    for seed in 20..24 {
        let m = random_model(seed);
        let hmm = m.expand();
        let obs = [0, 1, 1, 0, 0, 1];
        let best = all_sequences(4, 6)
            .iter()
            .map(|p| path_prob(&hmm, p, &obs))
            .fold(0.0, f64::max);
        let d = viterbi_decode(&m, &obs).unwrap();
        assert!((d.log_prob - best.ln()).abs() < 1e-10);
        assert!((path_prob(&hmm, &d.path, &obs).ln() - best.ln()).abs() < 1e-10);
    }
}

#[test]
fn separable_emissions_decode_exactly() {
    let m = HsmmModel::with_emissions(
        2,
        10.0,
        EmissionModel::Multinomial {
            probs: vec![0.999, 0.001],
        },
        EmissionModel::Multinomial {
            probs: vec![0.001, 0.999],
        },
    )
    .unwrap();
    let mut obs = vec![0; 30];
    obs[8..20].iter_mut().for_each(|o| *o = 1);
    let d = viterbi_decode(&m, &obs).unwrap();
    let want: Vec<MacroState> = obs
        .iter()
        .map(|&o| if o == 1 { MacroState::Dock } else { MacroState::NoDock })
        .collect();
    assert_eq!(d.labels, want);
    assert_eq!(d.events.len(), 1);
    assert_eq!((d.events[0].start, d.events[0].len), (8, 12));
}

#[test]
fn run_length_tags() {
    use crate::trace::EventTag;
    let labels: Vec<MacroState> = [0, 1, 0, 0, 1, 1, 1, 1, 0]
        .iter()
        .map(|&i| MacroState::from_index(i))
        .collect();
    let opts = DecodeOptions {
        min_len: 2,
        max_len: 3,
        ..DecodeOptions::default()
    };
    let ev = dock_events(&labels, &[0; 9], &opts);
    assert_eq!(ev.len(), 2);
    assert_eq!(ev[0].tag, EventTag::SpikeLike);
    assert_eq!(ev[1].tag, EventTag::Anomalous);
}

#[test]
fn duration_pmf_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let d = random_coxian(&mut rng);
    let walks = 1_000_000;
    let mut counts = vec![0usize; 21];
    for _ in 0..walks {
        let len = d.sample(0, &mut rng);
        if len <= 20 {
            counts[len] += 1;
        }
    }
    for (t, &c) in counts.iter().enumerate().skip(1) {
        let p = duration_pmf(&d, 0, t);
        let se = (p * (1.0 - p) / walks as f64).sqrt();
        let est = c as f64 / walks as f64;
        assert!((est - p).abs() <= 3.0 * se + 1e-12, "t={t}: {est} vs {p}");
    }
}

#[test]
fn zero_iterations_returns_initial() {
    let m = random_model(6);
    let obs = [0, 1, 0, 1];
    let out = em_train(&m, &obs, &[Label::Unlabeled; 4], 0, 1e-6).unwrap();
    assert_eq!(out, m);
}

#[test]
fn em_rejects_bad_input() {
    let m = random_model(7);
    assert!(em_train(&m, &[], &[], 5, 1e-6).is_err());
    let one_class = [Label::Dock, Label::Unlabeled];
    assert!(em_train(&m, &[0, 1], &one_class, 5, 1e-6).is_err());
}

#[test]
fn em_is_monotone() {
    let truth = random_model(8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (states, obs) = truth.sample(400, &mut rng);
    let labels: Vec<Label> = states
        .iter()
        .enumerate()
        .map(|(i, &s)| if i % 5 == 0 { s.into() } else { Label::Unlabeled })
        .collect();
    for (seed, lab) in [(0, labels.clone()), (1, vec![Label::Unlabeled; obs.len()])] {
        let init = random_model(100 + seed);
        let report = em_train_report(&init, &obs, &lab, 40, 0.0).unwrap();
        for w in report.log_likelihoods.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn em_monotone_with_mixture_and_sparse_bins() {
    let cfg = HsmmConfig {
        bins: 5,
        dock_components: 2,
        ..HsmmConfig::default()
    };
    // Symbol 4 never occurs, so its cells sit on the floor.
    let obs: Vec<usize> = (0..300)
        .map(|i| if (i / 25) % 2 == 0 { i % 2 } else { 2 + i % 2 })
        .collect();
    let init = HsmmModel::initialize(&cfg, &obs, &vec![Label::Unlabeled; obs.len()]).unwrap();
    let report = em_train_report(&init, &obs, &vec![Label::Unlabeled; obs.len()], 30, 0.0).unwrap();
    for w in report.log_likelihoods.windows(2) {
        assert!(w[1] >= w[0] - 1e-9);
    }
    for m in MacroState::ALL {
        assert!(report.model.state(m).emission.prob(4) >= EMISSION_FLOOR * 0.999);
    }
}

#[test]
fn generate_and_refit() {
    let truth = HsmmModel::with_emissions(
        1,
        15.0,
        EmissionModel::Multinomial { probs: vec![0.8, 0.2] },
        EmissionModel::Multinomial { probs: vec![0.3, 0.7] },
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (states, obs) = truth.sample(5000, &mut rng);
    let labels: Vec<Label> = states.iter().map(|&s| s.into()).collect();
    let init = HsmmModel::with_emissions(
        1,
        5.0,
        EmissionModel::Multinomial { probs: vec![0.5, 0.5] },
        EmissionModel::Multinomial {
            probs: vec![0.45, 0.55],
        },
    )
    .unwrap();
    let fit = em_train(&init, &obs, &labels, 50, 1e-8).unwrap();
    for m in MacroState::ALL {
        for o in 0..2 {
            let (a, b) = (fit.state(m).emission.prob(o), truth.state(m).emission.prob(o));
            assert!((a - b).abs() < 0.05, "{m:?} symbol {o}: {a} vs {b}");
        }
    }
}

#[test]
fn model_file_round_trip() {
    let (_, d) = discretize(&[0.0, 1.0, 2.0, 3.0], 2, BinScheme::Quantile).unwrap();
    let file = ModelFile {
        model: random_model(9),
        discretizer: Some(d),
    };
    let text = file.to_toml().unwrap();
    assert_eq!(ModelFile::from_toml(&text).unwrap(), file);
}
