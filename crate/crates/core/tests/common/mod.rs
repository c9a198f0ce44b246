//! Independent reference computations used by the integration and
//! acceptance tests. Nothing here calls into the library's numeric paths.

#![allow(dead_code)]

use enginewatch::dataset::{FleetDataset, FlightRecord, VariableSchema};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Gaussian elimination with partial pivoting on a dense square system.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        let d = a[col][col];
        assert!(d.abs() > 1e-300, "oracle system is singular");
        for row in (col + 1)..n {
            let f = a[row][col] / d;
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = ((row + 1)..n).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}

pub struct OracleFit {
    pub mu: f64,
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// Constrained least squares through the augmented normal equations:
/// full parameterization (intercept, one indicator per engine, covariates)
/// plus a Lagrange multiplier enforcing `sum_i n_i alpha_i = 0`.
pub fn constrained_ls_oracle(ds: &FleetDataset, m: usize) -> OracleFit {
    let n_engines = ds.engine_count();
    let q = ds.schema().q();
    let k = 1 + n_engines + q;
    let mut ata = vec![vec![0.0; k + 1]; k + 1];
    let mut aty = vec![0.0; k + 1];
    for (e, slice) in ds.engines().iter().enumerate() {
        for rec in &ds.records()[slice.records.clone()] {
            let mut row = vec![0.0; k];
            row[0] = 1.0;
            row[1 + e] = 1.0;
            row[1 + n_engines..].copy_from_slice(&rec.x);
            for a in 0..k {
                aty[a] += row[a] * rec.y[m];
                for b in 0..k {
                    ata[a][b] += row[a] * row[b];
                }
            }
        }
    }
    for (e, slice) in ds.engines().iter().enumerate() {
        ata[k][1 + e] = slice.len() as f64;
        ata[1 + e][k] = slice.len() as f64;
    }
    let theta = solve_dense(ata, aty);
    OracleFit {
        mu: theta[0],
        alpha: theta[1..1 + n_engines].to_vec(),
        lambda: theta[1 + n_engines..k].to_vec(),
    }
}

/// Random fleet with `engines` engines of `flights` range and `q` uniform covariates.
pub fn random_fleet(seed: u64, engines: usize, flights: (usize, usize), q: usize, p: usize) -> FleetDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let schema = VariableSchema::new(
        (0..p).map(|m| format!("y{m}")).collect(),
        (0..q).map(|k| format!("x{k}")).collect(),
    )
    .unwrap();
    let mut records = Vec::new();
    for e in 0..engines {
        let offset: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
        let n = rng.random_range(flights.0..=flights.1);
        for j in 0..n {
            let x: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..3.0)).collect();
            let y = (0..p)
                .map(|m| {
                    offset[m]
                        + x.iter().enumerate().map(|(k, v)| (k as f64 + 1.0) * 0.5 * v).sum::<f64>()
                        + rng.random_range(-1.0..1.0)
                        + m as f64
                })
                .collect();
            records.push(FlightRecord {
                engine_id: format!("E{e:02}"),
                flight_index: j as u32,
                y,
                x,
            });
        }
    }
    FleetDataset::new(schema, records).unwrap()
}

/// Pearson correlation computed directly from two slices.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa.sqrt() * sbb.sqrt())
}

/// Index of the nearest row of `codebook` (row-major, `dim` wide), lowest index on ties.
pub fn nearest_unit(codebook: &[f64], dim: usize, sample: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (u, c) in codebook.chunks(dim).enumerate() {
        let d: f64 = c.iter().zip(sample).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best_d {
            best_d = d;
            best = u;
        }
    }
    best
}

/// Normalized DTW by exhaustive enumeration of monotone warping paths:
/// minimum total cost, ties resolved towards the shorter path; returns cost / length.
pub fn dtw_bruteforce(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    fn cost(p: (usize, usize), q: (usize, usize)) -> f64 {
        let dr = p.0 as f64 - q.0 as f64;
        let dc = p.1 as f64 - q.1 as f64;
        (dr * dr + dc * dc).sqrt()
    }
    fn walk(
        a: &[(usize, usize)],
        b: &[(usize, usize)],
        i: usize,
        j: usize,
        acc: f64,
        len: usize,
        best: &mut (f64, usize),
    ) {
        let acc = acc + cost(a[i], b[j]);
        let len = len + 1;
        if i == a.len() - 1 && j == b.len() - 1 {
            if acc < best.0 || (acc == best.0 && len < best.1) {
                *best = (acc, len);
            }
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, len, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, len, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, len, best);
        }
    }
    let mut best = (f64::INFINITY, usize::MAX);
    // The first cell's cost is added onto 0.0, matching a prefix sum along the path.
    walk(a, b, 0, 0, 0.0, 0, &mut best);
    best.0 / best.1 as f64
}

/// Minimum total within-group sum of squares over all 2-partitions of `points`.
pub fn best_two_partition(points: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = points.len();
    let ss = |members: &[usize]| -> f64 {
        let d = points[0].len();
        let mut mean = vec![0.0; d];
        for &i in members {
            for c in 0..d {
                mean[c] += points[i][c];
            }
        }
        for v in mean.iter_mut() {
            *v /= members.len() as f64;
        }
        members
            .iter()
            .map(|&i| points[i].iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum()
    };
    let mut best = (f64::INFINITY, vec![]);
    // Fix point 0 in group 0 to skip mirrored partitions.
    for mask in 0u32..(1 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| if i == 0 { 0 } else { ((mask >> (i - 1)) & 1) as usize })
            .collect();
        let g0: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        let g1: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        if g1.is_empty() {
            continue;
        }
        let total = ss(&g0) + ss(&g1);
        if total < best.0 {
            best = (total, labels);
        }
    }
    best
}

/// True when two labelings describe the same partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}
