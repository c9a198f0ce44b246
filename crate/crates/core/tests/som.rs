mod common;

use common::nearest_unit;
use enginewatch::glm::{residualize, GlmModel, DEFAULT_RANK_TOL};
use enginewatch::som::{
    component_plane, init_som, plane_smoothness, quantization_error, standardize, train_epoch,
    train_som, u_matrix, SomMap, Standardization, TrainingSchedule,
};
use enginewatch::synthgen::{generate_fleet, GeneratorConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn fleet_residuals(engines: usize, seed: u64) -> (Vec<f64>, Standardization, usize) {
    let config = GeneratorConfig {
        engines,
        flights: (120, 160),
        faults: vec![],
        seed,
        ..GeneratorConfig::default()
    };
    let (ds, _) = generate_fleet(&config).unwrap();
    let model = GlmModel::fit(&ds, DEFAULT_RANK_TOL).unwrap();
    let res = residualize(&ds, &model.fits).unwrap();
    let (z, s) = standardize(&res).unwrap();
    (z, s, res.p())
}

#[test]
fn bmu_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dim = 7;
    let code = gaussian(&mut rng, 20 * 20 * dim);
    let map = SomMap::from_codebook(20, 20, dim, code.clone(), Standardization::identity(dim)).unwrap();
    for _ in 0..1000 {
        let sample = gaussian(&mut rng, dim);
        assert_eq!(map.bmu(&sample).unwrap(), nearest_unit(&code, dim, &sample));
    }
}

#[test]
fn one_point_training_collapses_map() {
    let point = [0.3, -1.7, 2.25];
    let data: Vec<f64> = point.iter().copied().cycle().take(3 * 37).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for radius in [0.5, 1.0, 4.0] {
        let mut map =
            SomMap::from_codebook(5, 4, 3, gaussian(&mut rng, 60), Standardization::identity(3)).unwrap();
        train_epoch(&mut map, &data, radius).unwrap();
        for u in 0..map.units() {
            assert_eq!(map.code(u), &point[..], "radius {radius}, unit {u}");
        }
        assert_eq!(quantization_error(&map, &data).unwrap(), 0.0);
    }
}

/// Reference k-means step: plain sums per nearest centre, empty centres unchanged.
fn lloyd_step(centres: &[f64], dim: usize, data: &[f64]) -> Vec<f64> {
    let k = centres.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for s in data.chunks(dim) {
        let c = nearest_unit(centres, dim, s);
        counts[c] += 1;
        for d in 0..dim {
            sums[c * dim + d] += s[d];
        }
    }
    (0..k * dim)
        .map(|i| {
            let c = i / dim;
            if counts[c] == 0 {
                centres[i]
            } else {
                sums[i] / counts[c] as f64
            }
        })
        .collect()
}

#[test]
fn zero_radius_epoch_is_a_lloyd_step() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let data = gaussian(&mut rng, 10 * 2);
        let code = gaussian(&mut rng, 4 * 2);
        let expected = lloyd_step(&code, 2, &data);
        let mut map = SomMap::from_codebook(2, 2, 2, code, Standardization::identity(2)).unwrap();
        train_epoch(&mut map, &data, 0.0).unwrap();
        for (a, b) in map.codebook.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-10, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn zero_radius_distortion_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = gaussian(&mut rng, 500 * 3);
    let init = init_som(4, 4, &data, 3, Standardization::identity(3)).unwrap();
    let map = train_som(&init, &data, &TrainingSchedule::constant(10, 10, 0.0)).unwrap();
    assert_eq!(map.training_log.len(), 20);
    for w in map.training_log.windows(2) {
        assert!(w[1].distortion <= w[0].distortion, "{w:?}");
    }
}

#[test]
fn codebooks_stay_in_data_bounding_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let dim = 3;
    let data: Vec<f64> = (0..300 * dim).map(|_| rng.random_range(-1.0..2.0)).collect();
    let init = init_som(6, 5, &data, dim, Standardization::identity(dim)).unwrap();
    let map = train_som(&init, &data, &TrainingSchedule::for_grid(6, 5)).unwrap();
    for d in 0..dim {
        let col = data.iter().skip(d).step_by(dim);
        let lo = col.clone().fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        for u in 0..map.units() {
            let v = map.code(u)[d];
            assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
        }
    }
}

#[test]
fn quantization_error_matches_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dim = 4;
    let code = gaussian(&mut rng, 3 * 3 * dim);
    let data = gaussian(&mut rng, 250 * dim);
    let map = SomMap::from_codebook(3, 3, dim, code.clone(), Standardization::identity(dim)).unwrap();
    let mut total = 0.0;
    for s in data.chunks(dim) {
        let u = nearest_unit(&code, dim, s);
        let d2: f64 = s.iter().zip(&code[u * dim..]).map(|(a, b)| (a - b).powi(2)).sum();
        total += d2.sqrt();
    }
    let qe = quantization_error(&map, &data).unwrap();
    assert!((qe - total / 250.0).abs() < 1e-12);
}

#[test]
fn init_corners_sit_at_two_sigma_along_components() {
    // Closed-form eigendecomposition of the 2x2 sample covariance.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data: Vec<f64> = (0..400)
        .flat_map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            [1.0 + 3.0 * a, -2.0 + 1.2 * a + 0.5 * b]
        })
        .collect();
    let n = 400.0;
    let mx = data.iter().step_by(2).sum::<f64>() / n;
    let my = data.iter().skip(1).step_by(2).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in data.chunks(2) {
        sxx += (p[0] - mx).powi(2);
        syy += (p[1] - my).powi(2);
        sxy += (p[0] - mx) * (p[1] - my);
    }
    let (sxx, syy, sxy) = (sxx / (n - 1.0), syy / (n - 1.0), sxy / (n - 1.0));
    let tr = sxx + syy;
    let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
    let (l1, l2) = (tr / 2.0 + disc, tr / 2.0 - disc);
    let unit = |v: [f64; 2]| {
        let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
        [v[0] / norm, v[1] / norm]
    };
    let v1 = unit([sxy, l1 - sxx]);
    let v2 = unit([sxy, l2 - sxx]);

    let (rows, cols) = (5, 3);
    let map = init_som(rows, cols, &data, 2, Standardization::identity(2)).unwrap();
    let mut signs_seen = Vec::new();
    for (r, c) in [(0, 0), (0, cols - 1), (rows - 1, 0), (rows - 1, cols - 1)] {
        let code = map.code(map.unit_at(r, c));
        let found = [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)].into_iter().find(|&(s1, s2)| {
            (0..2).all(|d| {
                let expect = [mx, my][d] + s1 * 2.0 * l1.sqrt() * v1[d] + s2 * 2.0 * l2.sqrt() * v2[d];
                (code[d] - expect).abs() < 1e-9
            })
        });
        signs_seen.push(found.unwrap_or_else(|| panic!("corner ({r},{c}) = {code:?}")));
    }
    // Opposite corners take opposite signs on both components.
    assert_eq!(signs_seen[0].0, -signs_seen[3].0);
    assert_eq!(signs_seen[0].1, -signs_seen[3].1);
    signs_seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
    signs_seen.dedup();
    assert_eq!(signs_seen.len(), 4);
}

#[test]
fn training_is_bit_deterministic_across_thread_counts() {
    let (z, s, p) = fleet_residuals(6, 3);
    let init = init_som(8, 8, &z, p, s).unwrap();
    let schedule = TrainingSchedule::for_grid(8, 8);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train_som(&init, &z, &schedule).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one, four);
    assert_eq!(one.training_log.len(), 60);
    let json = serde_json::to_string(&one).unwrap();
    let back: SomMap = serde_json::from_str(&json).unwrap();
    assert_eq!(back, one);
}

#[test]
fn trained_map_planes_are_smooth() {
    let (z, s, p) = fleet_residuals(12, 9);
    let init = init_som(10, 10, &z, p, s).unwrap();
    let map = train_som(&init, &z, &TrainingSchedule::for_grid(10, 10)).unwrap();
    for m in 0..p {
        let plane = component_plane(&map, m).unwrap();
        let (neighbor, random) = plane_smoothness(&map, &plane);
        assert!(neighbor < random, "variable {m}: {neighbor} vs {random}");
    }
    let last = map.training_log.last().unwrap();
    let qe = quantization_error(&map, &z).unwrap();
    assert!(qe <= last.quantization_error * 1.05);
}

#[test]
fn u_matrix_zero_for_identical_codebooks() {
    let map = SomMap::from_codebook(20, 20, 7, [0.5, -1.0, 2.0, 0.0, 3.0, 1.0, -2.0].repeat(400), Standardization::identity(7))
        .unwrap();
    let u = u_matrix(&map);
    assert_eq!(u.len(), 400);
    assert!(u.iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bmu_agrees_with_brute_force(
        seed in any::<u64>(),
        rows in 2usize..6,
        cols in 2usize..6,
        dim in 1usize..5,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Coarse values make exact ties common.
        let code: Vec<f64> = (0..rows * cols * dim).map(|_| rng.random_range(-2i32..=2) as f64).collect();
        let map = SomMap::from_codebook(rows, cols, dim, code.clone(), Standardization::identity(dim)).unwrap();
        for _ in 0..20 {
            let sample: Vec<f64> = (0..dim).map(|_| rng.random_range(-3i32..=3) as f64 * 0.5).collect();
            prop_assert_eq!(map.bmu(&sample).unwrap(), nearest_unit(&code, dim, &sample));
        }
    }

    #[test]
    fn standardization_round_trips(values in proptest::collection::vec(-1e3f64..1e3, 12..60)) {
        let dim = 3;
        let n = values.len() / dim * dim;
        let data = &values[..n];
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        if let Ok(s) = Standardization::fit(data, dim, &names) {
            let back = s.invert_all(&s.apply_all(data));
            for (a, b) in back.iter().zip(data) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn u_matrix_nonnegative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let map = SomMap::from_codebook(4, 3, 2, gaussian(&mut rng, 24), Standardization::identity(2)).unwrap();
        prop_assert!(u_matrix(&map).iter().all(|v| *v >= 0.0));
    }
}
