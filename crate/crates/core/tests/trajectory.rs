mod common;

use common::{dtw_bruteforce, nearest_unit};
use enginewatch::glm::{residualize, GlmModel, ResidualMatrix, DEFAULT_RANK_TOL};
use enginewatch::som::{init_som, standardize, train_som, SomMap, Standardization, TrainingSchedule};
use enginewatch::superclass::{cluster_codebook, Linkage, SuperClassing};
use enginewatch::synthgen::{generate_fleet, FaultMode, FaultOnset, FaultSpec, GeneratorConfig};
use enginewatch::trajectory::{
    deviation_scores, distance_with, dtw_coords, extract_all, extract_trajectory, occupancy_distance,
    occupancy_shift, superclass_dwell, trajectory_distance, write_trajectories_csv, DistanceKind,
    DistanceOptions, Step, Trajectory, TrajectoryError,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_path(rng: &mut ChaCha8Rng, len: usize, side: usize) -> Vec<(usize, usize)> {
    (0..len).map(|_| (rng.random_range(0..side), rng.random_range(0..side))).collect()
}

fn as_trajectory(id: &str, cells: &[(usize, usize)]) -> Trajectory {
    Trajectory {
        engine_id: id.into(),
        map_id: "grid".into(),
        classes: 1,
        steps: cells
            .iter()
            .enumerate()
            .map(|(j, &(row, col))| Step {
                flight_index: j as u32,
                unit: row * 64 + col,
                row,
                col,
                class: 0,
            })
            .collect(),
    }
}

struct Fixture {
    residuals: ResidualMatrix,
    map: SomMap,
    sc: SuperClassing,
    faulted: String,
}

fn drift_fixture() -> Fixture {
    let mut config = GeneratorConfig {
        engines: 20,
        seed: 31,
        ..GeneratorConfig::default()
    };
    let faulted = config.engine_id(4);
    config.faults = vec![FaultSpec {
        engine_id: faulted.clone(),
        onset: FaultOnset::Fraction(0.5),
        vars: vec![4],
        mode: FaultMode::LinearDrift,
        magnitude: vec![0.05],
    }];
    let (ds, _) = generate_fleet(&config).unwrap();
    let model = GlmModel::fit(&ds, DEFAULT_RANK_TOL).unwrap();
    let residuals = residualize(&ds, &model.fits).unwrap();
    let (z, s) = standardize(&residuals).unwrap();
    let init = init_som(20, 20, &z, residuals.p(), s).unwrap();
    let map = train_som(&init, &z, &TrainingSchedule::for_grid(20, 20)).unwrap();
    let sc = cluster_codebook(&map, 5, Linkage::Ward).unwrap();
    Fixture {
        residuals,
        map,
        sc,
        faulted,
    }
}

#[test]
fn dtw_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..2000 {
        let la = rng.random_range(1..=6);
        let lb = rng.random_range(1..=6);
        let a = random_path(&mut rng, la, 4);
        let b = random_path(&mut rng, lb, 4);
        assert_eq!(dtw_coords(&a, &b), dtw_bruteforce(&a, &b), "{a:?} / {b:?}");
    }
}

#[test]
fn dtw_symmetric_with_zero_self_distance() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    for _ in 0..100 {
        let la = rng.random_range(1..200);
        let lb = rng.random_range(1..200);
        let a = as_trajectory("a", &random_path(&mut rng, la, 20));
        let b = as_trajectory("b", &random_path(&mut rng, lb, 20));
        let ab = trajectory_distance(&a, &b).unwrap();
        assert_eq!(ab, trajectory_distance(&b, &a).unwrap());
        assert!(ab >= 0.0);
        assert_eq!(trajectory_distance(&a, &a).unwrap(), 0.0);
    }
}

#[test]
fn dtw_shift_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..100 {
        let a = random_path(&mut rng, 30, 10);
        let b = random_path(&mut rng, 25, 10);
        let (dr, dc) = (rng.random_range(0..10), rng.random_range(0..10));
        let shift = |p: &[(usize, usize)]| p.iter().map(|&(r, c)| (r + dr, c + dc)).collect::<Vec<_>>();
        assert_eq!(dtw_coords(&a, &b), dtw_coords(&shift(&a), &shift(&b)));
    }
}

#[test]
fn point_distance_for_single_steps() {
    let a = as_trajectory("a", &[(0, 0)]);
    let b = as_trajectory("b", &[(3, 4)]);
    assert_eq!(trajectory_distance(&a, &b).unwrap(), 5.0);
}

#[test]
fn identical_trajectories_score_zero() {
    let cells = [(1, 2), (2, 2), (5, 0)];
    let ts: Vec<Trajectory> = (0..5).map(|i| as_trajectory(&format!("E{i}"), &cells)).collect();
    for kind in [DistanceKind::Dtw, DistanceKind::Occupancy] {
        let report = deviation_scores(&ts, &DistanceOptions { kind, stride: 1 }).unwrap();
        assert!(report.scores.iter().all(|&s| s == 0.0));
        assert_eq!(report.ranking, vec![0, 1, 2, 3, 4]);
    }
}

#[test]
fn report_matrix_symmetric_and_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let ts: Vec<Trajectory> = (0..8)
        .map(|i| {
            let len = rng.random_range(5..60);
            as_trajectory(&format!("E{i}"), &random_path(&mut rng, len, 8))
        })
        .collect();
    let opts = DistanceOptions::default();
    let report = deviation_scores(&ts, &opts).unwrap();
    for i in 0..8 {
        assert_eq!(report.matrix[i][i], 0.0);
        for j in 0..8 {
            assert_eq!(report.matrix[i][j], report.matrix[j][i]);
            assert!(report.matrix[i][j] >= 0.0);
        }
    }
    let again = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| deviation_scores(&ts, &opts).unwrap());
    assert_eq!(report, again);
    for w in report.ranking.windows(2) {
        assert!(report.scores[w[0]] >= report.scores[w[1]]);
    }
}

#[test]
fn fleet_trajectories_follow_nearest_codebooks() {
    let fx = drift_fixture();
    let trajectories = extract_all(&fx.map, &fx.sc, &fx.residuals).unwrap();
    assert_eq!(trajectories.len(), 20);
    let code = &fx.map.codebook;
    for (t, rows) in trajectories.iter().zip(fx.residuals.engine_rows()) {
        assert_eq!(t.len(), rows.len());
        for (step, r) in t.steps.iter().zip(rows.clone()) {
            let z = fx.map.standardization.apply(fx.residuals.row(r));
            assert_eq!(step.unit, nearest_unit(code, fx.map.dim, &z));
            assert_eq!((step.row, step.col), fx.map.coords(step.unit));
            assert_eq!(step.class, fx.sc.labels[step.unit]);
            assert_eq!(step.flight_index, fx.residuals.flight_index()[r]);
        }
    }

    // Occupancy of the drifting engine moves between halves more than a typical engine's.
    let shifts: Vec<f64> = trajectories.iter().map(occupancy_shift).collect();
    let faulted = trajectories.iter().position(|t| t.engine_id == fx.faulted).unwrap();
    let mut healthy: Vec<f64> = shifts.iter().enumerate().filter(|(i, _)| *i != faulted).map(|(_, s)| *s).collect();
    healthy.sort_by(f64::total_cmp);
    assert!(shifts[faulted] > healthy[healthy.len() / 2]);

    for t in &trajectories {
        let dwell = superclass_dwell(t, &fx.sc);
        assert!((dwell.occupancy.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(dwell.transitions.iter().flatten().sum::<usize>(), t.len() - 1);
    }

    let mut csv = Vec::new();
    write_trajectories_csv(&trajectories, &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("engine_id,flight_index,unit,row,col,superclass\n"));
    assert_eq!(text.lines().count(), 1 + fx.residuals.rows());
}

#[test]
fn constant_trajectory_on_a_codebook() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let s = Standardization {
        mean: vec![1.0, -2.0],
        std: vec![2.0, 0.5],
    };
    let code: Vec<f64> = (0..18).map(|_| rng.random_range(-3.0..3.0)).collect();
    let map = SomMap::from_codebook(3, 3, 2, code, s).unwrap();
    let sc = cluster_codebook(&map, 3, Linkage::Ward).unwrap();
    let rows: Vec<f64> = map.code(5).repeat(7);
    let t = extract_trajectory(&map, &sc, "E1", &[0, 1, 2, 3, 4, 5, 6], &rows).unwrap();
    assert!(t.steps.iter().all(|s| s.unit == 5 && (s.row, s.col) == (1, 2)));
    let dwell = superclass_dwell(&t, &sc);
    assert_eq!(dwell.changes(), 0);
    assert_eq!(dwell.occupancy[sc.labels[5]], 1.0);
    assert!(matches!(
        extract_trajectory(&map, &sc, "E2", &[], &[]),
        Err(TrajectoryError::EmptyEngine(_))
    ));
}

#[test]
fn occupancy_distance_is_total_variation() {
    let mut a = as_trajectory("a", &[(0, 0); 4]);
    let mut b = as_trajectory("b", &[(0, 0); 4]);
    a.classes = 3;
    b.classes = 3;
    for (s, c) in a.steps.iter_mut().zip([0, 0, 1, 2]) {
        s.class = c;
    }
    for (s, c) in b.steps.iter_mut().zip([2, 2, 2, 1]) {
        s.class = c;
    }
    // a = (0.5, 0.25, 0.25), b = (0, 0.25, 0.75)
    assert_eq!(occupancy_distance(&a, &b).unwrap(), 0.5);
    let strided = DistanceOptions {
        kind: DistanceKind::Occupancy,
        stride: 2,
    };
    // a keeps classes 0, 1; b keeps 2, 2.
    assert_eq!(distance_with(&a, &b, &strided).unwrap(), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn dtw_bounded_by_largest_cell_cost(seed in any::<u64>(), la in 1usize..30, lb in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_path(&mut rng, la, 6);
        let b = random_path(&mut rng, lb, 6);
        let d = dtw_coords(&a, &b);
        let max_cost = a.iter().flat_map(|p| b.iter().map(move |q| {
            ((p.0 as f64 - q.0 as f64).powi(2) + (p.1 as f64 - q.1 as f64).powi(2)).sqrt()
        })).fold(0.0, f64::max);
        prop_assert!(d >= 0.0 && d <= max_cost);
        prop_assert_eq!(d, dtw_coords(&b, &a));
    }
}
