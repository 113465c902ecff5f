use std::fs;

use proptest::prelude::*;
use softmorph::control::{Genome, MutationParams, ParamMask};
use softmorph::optimizer::{aggregate, experiment, hill_climb, run_experiment, ExperimentResult, RosterSettings, RunResult, ROSTER};

/// Arbitrary, deterministic and bumpy objective; one genome in seven fails.
fn bumpy(g: &Genome) -> Result<f64, String> {
    let mut h = g.p_kpa().to_bits() ^ g.theta_deg().to_bits().rotate_left(17);
    for a in g.actuators() {
        h = h.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((a.f as u64) << 8 | a.phi as u64);
    }
    if h % 7 == 0 {
        return Err("diverged".into());
    }
    Ok((h % 10_000) as f64 / 10_000.0 - 0.5)
}

fn run(seed: u64, history: Vec<f64>) -> RunResult {
    let best = experiment("flat-all", &RosterSettings::default()).unwrap().fixed;
    RunResult {
        seed,
        best_fitness: *history.last().unwrap(),
        history,
        best,
    }
}

fn histories() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..8, 1usize..12).prop_flat_map(|(runs, len)| {
        prop::collection::vec(
            prop::collection::vec(prop_oneof![9 => -1.0f64..1.0, 1 => Just(f64::NEG_INFINITY)], len),
            runs,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregate_bounds_and_order_independence(h in histories(), rotate in 0usize..8) {
        let runs: Vec<RunResult> = h.iter().enumerate().map(|(i, v)| run(i as u64, v.clone())).collect();
        let a = aggregate("x", runs.clone());
        let mut shuffled = runs;
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        shuffled.reverse();
        let b = aggregate("x", shuffled);
        prop_assert_eq!(&a, &b);
        for g in 0..a.mean.len() {
            prop_assert!(a.max[g] >= a.mean[g]);
            prop_assert!(a.std[g] >= 0.0);
            let column: Vec<f64> = h.iter().map(|r| r[g]).collect();
            prop_assert_eq!(a.max[g], column.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        }
    }

    #[test]
    fn climber_history_is_non_decreasing(seed in any::<u64>(), generations in 1usize..60, shape in any::<bool>(), theta in any::<bool>()) {
        let mut spec = experiment("flat-all", &RosterSettings::default()).unwrap();
        spec.generations = generations;
        spec.mask = ParamMask { orientation: theta, shape, control: true };
        let r = hill_climb(&spec, seed, bumpy);
        prop_assert_eq!(r.history.len(), generations + 1);
        prop_assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
        prop_assert_eq!(r.best_fitness, *r.history.last().unwrap());
        if r.best_fitness.is_finite() {
            prop_assert_eq!(bumpy(&r.best).unwrap(), r.best_fitness);
        }
    }
}

#[test]
fn every_roster_experiment_runs_with_a_mock_objective() {
    let settings = RosterSettings {
        generations: 10,
        runs: 3,
        base_seed: 40,
        mutation: MutationParams::default(),
        ..RosterSettings::default()
    };
    for name in ROSTER {
        let spec = experiment(name, &settings).unwrap();
        let result = run_experiment(&spec, bumpy, None).unwrap();
        assert_eq!(result.name, name);
        let seeds: Vec<u64> = result.runs.iter().map(|r| r.seed).collect();
        assert_eq!(seeds, vec![40, 41, 42]);
        assert_eq!(result.mean.len(), 11);
        for r in &result.runs {
            let fixed = &spec.fixed;
            if !spec.mask.shape {
                assert_eq!(r.best.p_kpa(), fixed.p_kpa());
            }
            if !spec.mask.orientation {
                assert_eq!(r.best.theta_deg(), fixed.theta_deg());
            }
        }
    }
}

#[test]
fn experiment_result_survives_a_file_round_trip() {
    let mut spec = experiment("hill-control", &RosterSettings::default()).unwrap();
    spec.generations = 8;
    spec.runs = 4;
    let result = run_experiment(&spec, bumpy, None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("result.json");
    fs::write(&path, serde_json::to_string_pretty(&result).unwrap()).unwrap();
    let back: ExperimentResult = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, result);
}
