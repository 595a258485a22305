mod common;

use std::fs;

use auxsearch::dsl::{a2_winner, LossCandidate, OperatorSpec, MAX_HORIZON};
use auxsearch::evolution::{
    aulc, bootstrap_population, category_counts, mutate_crossover, mutate_horizon,
    mutate_replacement, next_generation, random_candidate, read_search_log, resume_search,
    run_search, select_top, select_top_n, CandidateRecord, EvolutionConfig, EvolutionError,
    HammingSurrogate, HorizonDirection, SEARCH_LOG_FILE,
};
use auxsearch::rl::LearningCurve;
use auxsearch::seed::rng_from_seed;
use common::random_valid;
use proptest::prelude::*;

#[test]
fn replacement_flips_each_bit_at_one_over_twice_the_length() {
    let mut rng = rng_from_seed(1);
    let parent = a2_winner();
    let n = parent.source().len();
    assert_eq!(n, 12);
    let trials = 100_000;
    let mut flips = vec![0usize; 2 * n];
    for _ in 0..trials {
        let child = mutate_replacement(&parent, &mut rng);
        for (i, (a, b)) in child
            .source()
            .bits()
            .iter()
            .zip(parent.source().bits())
            .enumerate()
        {
            flips[i] += usize::from(a != b);
        }
        for (i, (a, b)) in child
            .target()
            .bits()
            .iter()
            .zip(parent.target().bits())
            .enumerate()
        {
            flips[n + i] += usize::from(a != b);
        }
    }
    let expected = 1.0 / 24.0;
    let overall = flips.iter().sum::<usize>() as f64 / (trials * 2 * n) as f64;
    assert!((overall / expected - 1.0).abs() < 0.1, "overall {overall}");
    for (i, &f) in flips.iter().enumerate() {
        let rate = f as f64 / trials as f64;
        assert!((rate / expected - 1.0).abs() < 0.1, "bit {i}: {rate}");
    }
}

#[test]
fn crossover_takes_each_bit_from_either_parent_evenly() {
    let mut rng = rng_from_seed(2);
    let a = a2_winner();
    let flipped = |bits: &[bool]| bits.iter().map(|b| !b).collect::<Vec<_>>();
    let b = LossCandidate::new(
        auxsearch::dsl::MaskPair::new(
            auxsearch::dsl::Mask::from_bits(flipped(a.source().bits())).unwrap(),
            auxsearch::dsl::Mask::from_bits(flipped(a.target().bits())).unwrap(),
        )
        .unwrap(),
        OperatorSpec::MSE,
    );
    let mut from_a = 0usize;
    let trials = 20_000;
    for _ in 0..trials {
        let c = mutate_crossover(&a, &b, &mut rng).unwrap();
        from_a += c
            .source()
            .bits()
            .iter()
            .zip(a.source().bits())
            .filter(|(x, y)| x == y)
            .count();
        from_a += c
            .target()
            .bits()
            .iter()
            .zip(a.target().bits())
            .filter(|(x, y)| x == y)
            .count();
    }
    let share = from_a as f64 / (trials * 24) as f64;
    assert!((share - 0.5).abs() < 0.01, "{share}");

    let short: LossCandidate = "src:{s0} tgt:{s1} op:mse k:1".parse().unwrap();
    assert!(matches!(
        mutate_crossover(&a, &short, &mut rng),
        Err(EvolutionError::HorizonMismatch { left: 3, right: 1 })
    ));
}

#[test]
fn unbiased_random_candidates_have_fair_bits() {
    let mut rng = rng_from_seed(3);
    let (mut ones, mut total) = (0usize, 0usize);
    let mut horizons = [0usize; MAX_HORIZON + 1];
    for _ in 0..20_000 {
        let c = random_candidate(&mut rng, None, OperatorSpec::MSE);
        horizons[c.horizon()] += 1;
        for bits in [c.source().bits(), c.target().bits()] {
            ones += bits.iter().filter(|&&b| b).count();
            total += bits.len();
        }
    }
    let mean = ones as f64 / total as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
    assert_eq!(horizons[0], 0);
    assert!(horizons[1..].iter().all(|&h| h > 1500), "{horizons:?}");
}

#[test]
fn horizon_mutation_bounces_at_the_bounds() {
    let mut rng = rng_from_seed(4);
    let k1: LossCandidate = "src:{s0} tgt:{s1} op:mse k:1".parse().unwrap();
    let down = mutate_horizon(&k1, HorizonDirection::Decrease, &mut rng);
    assert_eq!(down.horizon(), 2);
    assert_eq!(&down.source().bits()[..6], k1.source().bits());
    let c = a2_winner();
    let shorter = mutate_horizon(&c, HorizonDirection::Decrease, &mut rng);
    assert_eq!(shorter.source().bits(), &c.source().bits()[..9]);
    let mut long = c.clone();
    while long.horizon() < MAX_HORIZON {
        long = mutate_horizon(&long, HorizonDirection::Increase, &mut rng);
    }
    assert_eq!(
        mutate_horizon(&long, HorizonDirection::Increase, &mut rng).horizon(),
        9
    );
}

#[test]
fn next_generation_composition_and_validity() {
    let config = EvolutionConfig::default();
    assert_eq!(category_counts(&config), [50, 20, 10, 20]);
    let mut rng = rng_from_seed(5);
    for trial in 0..20 {
        let n = 1 + trial % 25;
        let survivors: Vec<LossCandidate> = (0..n)
            .map(|_| random_valid(&mut rng, OperatorSpec::MSE))
            .collect();
        let next = next_generation(&survivors, &config, &mut rng);
        assert_eq!(next.len(), 100);
        assert!(next.iter().all(LossCandidate::is_valid));
        assert!(next.iter().all(|c| c.operator() == OperatorSpec::MSE));
        for (i, child) in next[..50].iter().enumerate() {
            assert_eq!(
                child.horizon(),
                survivors[i % n].horizon(),
                "replacement child {i}"
            );
        }
        let paired = survivors.iter().enumerate().any(|(i, a)| {
            survivors
                .iter()
                .enumerate()
                .any(|(j, b)| i != j && a.horizon() == b.horizon())
        });
        if paired {
            for child in &next[50..70] {
                assert!(survivors.iter().any(|s| s.horizon() == child.horizon()));
            }
        }
        for child in &next[70..80] {
            assert!(survivors
                .iter()
                .any(|s| s.horizon().abs_diff(child.horizon()) == 1));
        }
    }
}

#[test]
fn next_generation_for_other_sizes_still_fills_the_population() {
    let mut rng = rng_from_seed(6);
    for p in [1, 3, 7, 8, 20, 33] {
        let config = EvolutionConfig {
            population: p,
            ..Default::default()
        };
        assert_eq!(category_counts(&config).iter().sum::<usize>(), p);
        let survivors = vec![a2_winner()];
        let next = next_generation(&survivors, &config, &mut rng);
        assert_eq!(next.len(), p);
        assert!(next.iter().all(LossCandidate::is_valid));
    }
}

#[test]
fn bootstrap_population_mixes_priors() {
    let config = EvolutionConfig::default();
    let pop = bootstrap_population(&config, &mut rng_from_seed(7));
    assert_eq!(pop.len(), 100);
    assert!(pop.iter().all(LossCandidate::is_valid));
    // forward-dynamics prior: states appear on one side only
    for c in &pop[75..88] {
        for j in 0..=c.horizon() {
            let i = 3 * j;
            assert!(c.source().bits()[i] != c.target().bits()[i], "{c}");
        }
    }
    // reward prior: no states or actions in the target
    for c in &pop[88..] {
        assert!(
            c.target()
                .bits()
                .iter()
                .enumerate()
                .all(|(i, &b)| i % 3 == 2 || !b),
            "{c}"
        );
    }
}

fn record(index: usize, score: f64) -> CandidateRecord {
    CandidateRecord {
        stage: 1,
        index,
        candidate: a2_winner(),
        aulc: score,
        checkpoints: vec![(1, score)],
        seed: index as u64,
        wall_ms: 0,
    }
}

proptest! {
    #[test]
    fn log_lines_round_trip_bit_exact(bits in any::<u64>(), seed in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        let mut r = record(0, x);
        r.seed = seed;
        let back = CandidateRecord::from_json_line(&r.to_json_line()).unwrap();
        prop_assert_eq!(back.aulc.to_bits(), bits);
        prop_assert_eq!(back.checkpoints[0].1.to_bits(), bits);
        prop_assert_eq!(back.seed, seed);
    }

    #[test]
    fn selection_keeps_the_best_and_is_idempotent(
        scores in proptest::collection::vec(prop_oneof![-100.0f64..100.0, Just(f64::NEG_INFINITY)], 1..60),
        fraction in 0.01f64..0.99,
    ) {
        let records: Vec<CandidateRecord> =
            scores.iter().enumerate().map(|(i, &s)| record(i, s)).collect();
        let top = select_top(&records, fraction);
        let expected = ((fraction * scores.len() as f64 + 1e-9).floor() as usize).max(1);
        prop_assert_eq!(top.len(), expected);
        let worst_kept = top.last().unwrap().aulc;
        for r in &records {
            if !top.iter().any(|t| t.index == r.index) {
                prop_assert!(r.aulc <= worst_kept);
            }
        }
        prop_assert!(top.windows(2).all(|w| w[0].aulc >= w[1].aulc));
        prop_assert_eq!(select_top(&top, 1.0), top.clone());
    }
}

#[test]
fn ties_go_to_the_lower_index() {
    assert_eq!(select_top_n(&[1.0, 3.0, 3.0, 2.0, 3.0], 2), vec![1, 2]);
}

#[test]
fn aulc_is_the_checkpoint_mean() {
    let curve = |pts: &[f64]| LearningCurve {
        checkpoints: pts
            .iter()
            .enumerate()
            .map(|(i, &s)| (1000 * (i as u64 + 1), s))
            .collect(),
        seed: 0,
        wall_ms: 0,
        env_steps: 0,
        diverged: false,
    };
    assert_eq!(aulc(&curve(&[1.0, 2.0, 3.0, 4.0, 5.0])).unwrap(), 3.0);
    assert_eq!(aulc(&curve(&[10.0])).unwrap(), 10.0);
    assert_eq!(aulc(&curve(&[0.0, 0.0, 90.0])).unwrap(), 30.0);
    assert_eq!(
        aulc(&curve(&[5.0, f64::NEG_INFINITY])).unwrap(),
        f64::NEG_INFINITY
    );
    assert!(matches!(aulc(&curve(&[])), Err(EvolutionError::EmptyCurve)));
}

fn surrogate_config(workers: usize) -> EvolutionConfig {
    EvolutionConfig {
        population: 20,
        stages: 4,
        seed: 42,
        workers,
        ..Default::default()
    }
}

#[test]
fn worker_count_does_not_change_the_log() {
    let evaluator = HammingSurrogate::hidden(42);
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    let a = run_search(&surrogate_config(1), &evaluator, Some(one.path())).unwrap();
    let b = run_search(&surrogate_config(8), &evaluator, Some(eight.path())).unwrap();
    assert_eq!(a.records().count(), 80);
    let text = fs::read(one.path().join(SEARCH_LOG_FILE)).unwrap();
    assert_eq!(text, fs::read(eight.path().join(SEARCH_LOG_FILE)).unwrap());
    for s in 1..=4 {
        let name = format!("stage-{s}-survivors.txt");
        assert_eq!(
            fs::read(one.path().join(&name)).unwrap(),
            fs::read(eight.path().join(&name)).unwrap()
        );
    }
    let parsed = read_search_log(&one.path().join(SEARCH_LOG_FILE)).unwrap();
    assert_eq!(parsed, a.records().cloned().collect::<Vec<_>>());
    assert_eq!(b.best().unwrap().aulc, a.best().unwrap().aulc);
}

#[test]
fn resume_after_an_interrupted_stage_reproduces_the_full_run() {
    let evaluator = HammingSurrogate::hidden(9);
    let config = surrogate_config(2);
    let full = tempfile::tempdir().unwrap();
    run_search(&config, &evaluator, Some(full.path())).unwrap();
    let expected = fs::read_to_string(full.path().join(SEARCH_LOG_FILE)).unwrap();

    let lines: Vec<&str> = expected.lines().collect();
    let cut = tempfile::tempdir().unwrap();
    // two whole stages, half of the third, and a torn final line
    let mut partial = lines[..50].join("\n");
    partial.push('\n');
    partial.push_str(&lines[50][..20]);
    fs::write(cut.path().join(SEARCH_LOG_FILE), partial).unwrap();
    let log = resume_search(&config, &evaluator, cut.path()).unwrap();
    assert_eq!(log.stages.len(), 4);
    assert_eq!(
        fs::read_to_string(cut.path().join(SEARCH_LOG_FILE)).unwrap(),
        expected
    );
}

#[test]
fn resume_rejects_a_log_from_another_configuration() {
    let evaluator = HammingSurrogate::hidden(9);
    let dir = tempfile::tempdir().unwrap();
    run_search(&surrogate_config(1), &evaluator, Some(dir.path())).unwrap();
    let other = EvolutionConfig {
        seed: 43,
        ..surrogate_config(1)
    };
    assert!(matches!(
        resume_search(&other, &evaluator, dir.path()),
        Err(EvolutionError::Log { line: 1, .. })
    ));
}

#[test]
fn failed_scores_serialize_as_null() {
    let r = record(3, f64::NEG_INFINITY);
    let line = r.to_json_line();
    assert!(
        line.starts_with(r#"{"stage":1,"index":3,"candidate":"src:{s1,a1,a2,a3}"#),
        "{line}"
    );
    assert!(line.contains(r#""aulc":null"#));
    assert_eq!(CandidateRecord::from_json_line(&line).unwrap(), r);
}
