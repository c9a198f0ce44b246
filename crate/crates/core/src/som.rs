//! Rectangular batch self-organizing map.
//!
//! Units are indexed row-major: unit `u` sits at grid cell
//! `(u / cols, u % cols)`. Training data are z-scored residual vectors; the
//! map keeps the standardization so raw residuals can be projected later and
//! component planes can be reported in residual units.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::pca;
use crate::glm::ResidualMatrix;

#[derive(Debug, Error)]
pub enum SomError {
    #[error("no training data")]
    Empty,
    #[error("variable '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("degenerate data: all samples are identical")]
    Degenerate,
    #[error("sample contains non-finite values")]
    NonFinite,
    #[error("invalid grid {rows}x{cols}: need at least 4 units")]
    Grid { rows: usize, cols: usize },
    #[error("invalid training schedule: {0}")]
    Schedule(String),
    #[error("variable index {index} out of range (dim = {dim})")]
    VariableIndex { index: usize, dim: usize },
    #[error("unit index {index} out of range ({units} units)")]
    UnitIndex { index: usize, units: usize },
    #[error("shape error: {0}")]
    Shape(String),
}

/// Per-variable z-score parameters (population std).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Estimates parameters from row-major `data`; `names` label errors.
    pub fn fit(data: &[f64], dim: usize, names: &[String]) -> Result<Self, SomError> {
        if data.is_empty() {
            return Err(SomError::Empty);
        }
        let n = (data.len() / dim) as f64;
        let mut mean = vec![0.0; dim];
        for row in data.chunks(dim) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in data.chunks(dim) {
            for c in 0..dim {
                var[c] += (row[c] - mean[c]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for (c, s) in std.iter().enumerate() {
            if !(*s > 0.0) {
                let name = names.get(c).cloned().unwrap_or_else(|| format!("#{c}"));
                return Err(SomError::ZeroVariance(name));
            }
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_all(&self, data: &[f64]) -> Vec<f64> {
        data.chunks(self.mean.len()).flat_map(|r| self.apply(r)).collect()
    }

    pub fn invert_all(&self, data: &[f64]) -> Vec<f64> {
        data.chunks(self.mean.len()).flat_map(|r| self.invert(r)).collect()
    }
}

/// Z-scores every residual column. Returns the row-major standardized values.
pub fn standardize(residuals: &ResidualMatrix) -> Result<(Vec<f64>, Standardization), SomError> {
    let params = Standardization::fit(residuals.values(), residuals.p(), residuals.var_names())?;
    Ok((params.apply_all(residuals.values()), params))
}

/// Two-phase batch schedule. Radii are Gaussian neighbourhood widths in grid
/// units, interpolated linearly inside each phase (first epoch of a phase at
/// its start radius, last epoch at its end radius).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub epochs_rough: usize,
    pub epochs_fine: usize,
    pub radius_start: f64,
    pub radius_mid: f64,
    pub radius_end: f64,
    pub seed: u64,
}

impl TrainingSchedule {
    /// Rough phase `max(rows, cols) / 2 -> 3` over 20 epochs, fine phase `3 -> 1` over 40.
    pub fn for_grid(rows: usize, cols: usize) -> Self {
        let start = rows.max(cols) as f64 / 2.0;
        let mid = start.min(3.0);
        let end = mid.min(1.0);
        Self {
            epochs_rough: 20,
            epochs_fine: 40,
            radius_start: start,
            radius_mid: mid,
            radius_end: end,
            seed: 0,
        }
    }

    /// Every epoch at radius `r`.
    pub fn constant(epochs_rough: usize, epochs_fine: usize, r: f64) -> Self {
        Self {
            epochs_rough,
            epochs_fine,
            radius_start: r,
            radius_mid: r,
            radius_end: r,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SomError> {
        if self.epochs_rough == 0 || self.epochs_fine == 0 {
            return Err(SomError::Schedule("epoch counts must be positive".into()));
        }
        let ok = self.radius_end.is_finite()
            && self.radius_start.is_finite()
            && self.radius_start >= self.radius_mid
            && self.radius_mid >= self.radius_end
            && self.radius_end >= 0.0;
        if !ok {
            return Err(SomError::Schedule(
                "radii must satisfy start >= mid >= end >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs_rough + self.epochs_fine
    }

    pub fn radius(&self, epoch: usize) -> f64 {
        let lerp = |a: f64, b: f64, e: usize, n: usize| {
            if n <= 1 {
                a
            } else {
                a + (b - a) * e as f64 / (n - 1) as f64
            }
        };
        if epoch < self.epochs_rough {
            lerp(self.radius_start, self.radius_mid, epoch, self.epochs_rough)
        } else {
            lerp(
                self.radius_mid,
                self.radius_end,
                epoch - self.epochs_rough,
                self.epochs_fine,
            )
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub radius: f64,
    /// Mean distance to the BMU, measured on the codebook entering the epoch.
    pub quantization_error: f64,
    /// Mean squared distance to the BMU, same codebook.
    pub distortion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomMap {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub var_names: Vec<String>,
    /// Row-major `units x dim`, in standardized coordinates.
    pub codebook: Vec<f64>,
    pub standardization: Standardization,
    pub schedule: Option<TrainingSchedule>,
    pub training_log: Vec<EpochLog>,
}

impl SomMap {
    /// Map with an explicit codebook; mainly for tests and tools.
    pub fn from_codebook(
        rows: usize,
        cols: usize,
        dim: usize,
        codebook: Vec<f64>,
        standardization: Standardization,
    ) -> Result<Self, SomError> {
        if rows * cols < 4 || rows == 0 || cols == 0 {
            return Err(SomError::Grid { rows, cols });
        }
        if codebook.len() != rows * cols * dim || standardization.mean.len() != dim {
            return Err(SomError::Shape(format!(
                "codebook of {} values for {rows}x{cols} units of dimension {dim}",
                codebook.len()
            )));
        }
        if codebook.iter().any(|v| !v.is_finite()) {
            return Err(SomError::NonFinite);
        }
        Ok(Self {
            rows,
            cols,
            dim,
            var_names: (0..dim).map(|m| format!("v{m}")).collect(),
            codebook,
            standardization,
            schedule: None,
            training_log: Vec::new(),
        })
    }

    pub fn units(&self) -> usize {
        self.rows * self.cols
    }

    /// Short hash of the grid shape and codebook bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [self.rows, self.cols, self.dim] {
            hasher.update((v as u64).to_le_bytes());
        }
        for v in &self.codebook {
            hasher.update(v.to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn coords(&self, unit: usize) -> (usize, usize) {
        (unit / self.cols, unit % self.cols)
    }

    pub fn unit_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn code(&self, unit: usize) -> &[f64] {
        &self.codebook[unit * self.dim..(unit + 1) * self.dim]
    }

    pub fn grid_distance(&self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.coords(a);
        let (rb, cb) = self.coords(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        (dr * dr + dc * dc).sqrt()
    }

    /// Nearest unit and its squared distance; ties go to the lowest index.
    fn nearest(&self, sample: &[f64]) -> (usize, f64) {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (u, code) in self.codebook.chunks_exact(self.dim).enumerate() {
            let mut d = 0.0;
            for (a, b) in code.iter().zip(sample) {
                let t = a - b;
                d += t * t;
            }
            if d < best_d {
                best_d = d;
                best = u;
            }
        }
        (best, best_d)
    }

    /// BMU of a standardized sample.
    pub fn bmu(&self, sample: &[f64]) -> Result<usize, SomError> {
        if sample.len() != self.dim {
            return Err(SomError::Shape(format!(
                "sample of length {} for a map of dimension {}",
                sample.len(),
                self.dim
            )));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            return Err(SomError::NonFinite);
        }
        Ok(self.nearest(sample).0)
    }

    /// BMU of a raw (unstandardized) residual vector.
    pub fn bmu_raw(&self, residual: &[f64]) -> Result<usize, SomError> {
        self.bmu(&self.standardization.apply(residual))
    }

    /// BMUs of every row of `data`, in row order.
    pub fn bmus(&self, data: &[f64]) -> Result<Vec<usize>, SomError> {
        check_data(data, self.dim)?;
        Ok(data
            .par_chunks(self.dim)
            .map(|s| self.nearest(s).0)
            .collect())
    }
}

fn check_data(data: &[f64], dim: usize) -> Result<usize, SomError> {
    if data.is_empty() {
        return Err(SomError::Empty);
    }
    if data.len() % dim != 0 {
        return Err(SomError::Shape(format!(
            "{} values do not form rows of {dim}",
            data.len()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SomError::NonFinite);
    }
    Ok(data.len() / dim)
}

fn linspace(n: usize) -> Vec<f64> {
    if n == 1 {
        vec![0.0]
    } else {
        (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect()
    }
}

/// Linear initialization on the plane of the two leading principal
/// components: rows span PC1 and columns span PC2, each from -2 to +2
/// standard deviations around the data mean.
pub fn init_som(
    rows: usize,
    cols: usize,
    data: &[f64],
    dim: usize,
    standardization: Standardization,
) -> Result<SomMap, SomError> {
    if rows * cols < 4 || rows == 0 || cols == 0 {
        return Err(SomError::Grid { rows, cols });
    }
    let n = check_data(data, dim)?;
    if standardization.mean.len() != dim {
        return Err(SomError::Shape("standardization dimension mismatch".into()));
    }
    if data.chunks(dim).all(|r| r == &data[..dim]) {
        return Err(SomError::Degenerate);
    }
    debug_assert!(n >= 2);
    let k = dim.min(2);
    let pcs = pca(data, dim, k).map_err(|e| SomError::Shape(e.to_string()))?;
    let spread: Vec<Vec<f64>> = (0..2)
        .map(|c| {
            if c < k {
                let s = 2.0 * pcs.variances[c].sqrt();
                pcs.directions[c].iter().map(|v| v * s).collect()
            } else {
                vec![0.0; dim]
            }
        })
        .collect();
    let (a, b) = (linspace(rows), linspace(cols));
    let mut codebook = Vec::with_capacity(rows * cols * dim);
    for ar in &a {
        for bc in &b {
            for d in 0..dim {
                codebook.push(pcs.mean[d] + ar * spread[0][d] + bc * spread[1][d]);
            }
        }
    }
    let mut map = SomMap::from_codebook(rows, cols, dim, codebook, standardization)?;
    map.var_names = (0..dim).map(|m| format!("v{m}")).collect();
    Ok(map)
}

/// Neighbourhood weight between units at grid distance `d`; radius 0 is the indicator of `d == 0`.
fn neighborhood(d: f64, radius: f64) -> f64 {
    if radius == 0.0 {
        if d == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (-(d * d) / (2.0 * radius * radius)).exp()
    }
}

/// One batch epoch at a fixed radius. Every unit becomes the
/// neighbourhood-weighted mean of the samples; units with zero total weight
/// keep their codebook. Returns the error of the codebook entering the epoch.
pub fn train_epoch(map: &mut SomMap, data: &[f64], radius: f64) -> Result<EpochLog, SomError> {
    let n = check_data(data, map.dim)?;
    if data.len() != n * map.dim {
        return Err(SomError::Shape("data dimension mismatch".into()));
    }
    let dim = map.dim;
    let units = map.units();
    let hits: Vec<(usize, f64)> = data.par_chunks(dim).map(|s| map.nearest(s)).collect();

    // Per-BMU running means, sample order.
    let mut centroid = vec![0.0; units * dim];
    let mut count = vec![0usize; units];
    let mut qe = 0.0;
    let mut distortion = 0.0;
    for (sample, &(b, d2)) in data.chunks_exact(dim).zip(&hits) {
        qe += d2.sqrt();
        distortion += d2;
        count[b] += 1;
        let inv = 1.0 / count[b] as f64;
        let c = &mut centroid[b * dim..(b + 1) * dim];
        for (ci, si) in c.iter_mut().zip(sample) {
            *ci += (si - *ci) * inv;
        }
    }

    let occupied: Vec<usize> = (0..units).filter(|&b| count[b] > 0).collect();
    let updated: Vec<Option<Vec<f64>>> = (0..units)
        .into_par_iter()
        .map(|u| {
            let mut mean = vec![0.0; dim];
            let mut total = 0.0;
            for &b in &occupied {
                let w = neighborhood(map.grid_distance(b, u), radius) * count[b] as f64;
                if w == 0.0 {
                    continue;
                }
                total += w;
                let f = w / total;
                for (m, c) in mean.iter_mut().zip(&centroid[b * dim..(b + 1) * dim]) {
                    *m += (c - *m) * f;
                }
            }
            (total > 0.0).then_some(mean)
        })
        .collect();
    for (u, new) in updated.into_iter().enumerate() {
        if let Some(v) = new {
            map.codebook[u * dim..(u + 1) * dim].copy_from_slice(&v);
        }
    }
    Ok(EpochLog {
        epoch: map.training_log.len(),
        radius,
        quantization_error: qe / n as f64,
        distortion: distortion / n as f64,
    })
}

/// Batch training over the full schedule. Deterministic for given inputs.
pub fn train_som(map: &SomMap, data: &[f64], schedule: &TrainingSchedule) -> Result<SomMap, SomError> {
    schedule.validate()?;
    check_data(data, map.dim)?;
    let mut trained = map.clone();
    for epoch in 0..schedule.total_epochs() {
        let log = train_epoch(&mut trained, data, schedule.radius(epoch))?;
        trained.training_log.push(log);
    }
    trained.schedule = Some(schedule.clone());
    Ok(trained)
}

/// Mean Euclidean distance from each sample to its BMU codebook.
pub fn quantization_error(map: &SomMap, data: &[f64]) -> Result<f64, SomError> {
    let n = check_data(data, map.dim)?;
    let total: f64 = data
        .par_chunks(map.dim)
        .map(|s| map.nearest(s).1.sqrt())
        .collect::<Vec<f64>>()
        .iter()
        .sum();
    Ok(total / n as f64)
}

/// Mean codebook distance of each unit to its 4-neighbours.
pub fn u_matrix(map: &SomMap) -> Vec<f64> {
    let dist = |a: usize, b: usize| -> f64 {
        map.code(a)
            .iter()
            .zip(map.code(b))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    (0..map.units())
        .map(|u| {
            let (r, c) = map.coords(u);
            let mut neighbors = Vec::with_capacity(4);
            if r > 0 {
                neighbors.push(map.unit_at(r - 1, c));
            }
            if r + 1 < map.rows {
                neighbors.push(map.unit_at(r + 1, c));
            }
            if c > 0 {
                neighbors.push(map.unit_at(r, c - 1));
            }
            if c + 1 < map.cols {
                neighbors.push(map.unit_at(r, c + 1));
            }
            neighbors.iter().map(|&v| dist(u, v)).sum::<f64>() / neighbors.len() as f64
        })
        .collect()
}

/// Codebook component `m` of every unit, in residual units.
pub fn component_plane(map: &SomMap, m: usize) -> Result<Vec<f64>, SomError> {
    if m >= map.dim {
        return Err(SomError::VariableIndex {
            index: m,
            dim: map.dim,
        });
    }
    let (mean, std) = (map.standardization.mean[m], map.standardization.std[m]);
    Ok((0..map.units()).map(|u| map.code(u)[m] * std + mean).collect())
}

/// Mean absolute difference of a per-unit plane between 4-neighbours, and
/// between all pairs of distinct units.
pub fn plane_smoothness(map: &SomMap, plane: &[f64]) -> (f64, f64) {
    let mut neighbor = 0.0;
    let mut neighbor_n = 0usize;
    for u in 0..map.units() {
        let (r, c) = map.coords(u);
        if r + 1 < map.rows {
            neighbor += (plane[u] - plane[map.unit_at(r + 1, c)]).abs();
            neighbor_n += 1;
        }
        if c + 1 < map.cols {
            neighbor += (plane[u] - plane[map.unit_at(r, c + 1)]).abs();
            neighbor_n += 1;
        }
    }
    let mut all = 0.0;
    let mut all_n = 0usize;
    for a in 0..plane.len() {
        for b in (a + 1)..plane.len() {
            all += (plane[a] - plane[b]).abs();
            all_n += 1;
        }
    }
    (neighbor / neighbor_n as f64, all / all_n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_2x2(values: [f64; 4]) -> SomMap {
        SomMap::from_codebook(2, 2, 1, values.to_vec(), Standardization::identity(1)).unwrap()
    }

    #[test]
    fn unit_coordinates_round_trip() {
        let map = SomMap::from_codebook(3, 5, 1, vec![0.0; 15], Standardization::identity(1)).unwrap();
        for u in 0..15 {
            let (r, c) = map.coords(u);
            assert_eq!(map.unit_at(r, c), u);
        }
        assert_eq!(map.coords(7), (1, 2));
        assert!(SomMap::from_codebook(1, 3, 1, vec![0.0; 3], Standardization::identity(1)).is_err());
    }

    #[test]
    fn u_matrix_hand_computed() {
        let u = u_matrix(&map_2x2([0.0, 1.0, 2.0, 3.0]));
        // unit 0 neighbours: unit 1 (right) and unit 2 (below)
        assert!((u[0] - 1.5).abs() < 1e-15);
        assert!((u[1] - 1.5).abs() < 1e-15); // |1-0|, |1-3|
        assert!((u[2] - 1.5).abs() < 1e-15); // |2-0|, |2-3|
        assert!((u[3] - 1.5).abs() < 1e-15); // |3-1|, |3-2|
        assert!(u_matrix(&map_2x2([4.0; 4])).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn u_matrix_neighbor_counts() {
        // Unit 4 of a 3x3 map with a single spike: interior averages over 4 neighbours.
        let mut code = vec![0.0; 9];
        code[4] = 8.0;
        let map = SomMap::from_codebook(3, 3, 1, code, Standardization::identity(1)).unwrap();
        let u = u_matrix(&map);
        assert_eq!(u[4], 8.0);
        assert_eq!(u[1], 8.0 / 3.0); // edge: 3 neighbours, one of them the spike
        assert_eq!(u[0], 0.0); // corner: neighbours 1 and 3, both zero
    }

    #[test]
    fn bmu_exact_and_ties() {
        let mut code: Vec<f64> = (0..20).map(|u| u as f64 * 10.0).collect();
        let map = SomMap::from_codebook(4, 5, 1, code.clone(), Standardization::identity(1)).unwrap();
        assert_eq!(map.bmu(&[170.0]).unwrap(), 17);
        // units 3 and 7 equidistant from the sample, all others farther
        code = vec![100.0; 20];
        code[3] = 1.0;
        code[7] = -1.0;
        let map = SomMap::from_codebook(4, 5, 1, code, Standardization::identity(1)).unwrap();
        assert_eq!(map.bmu(&[0.0]).unwrap(), 3);
        assert!(matches!(map.bmu(&[f64::NAN]), Err(SomError::NonFinite)));
        assert!(map.bmu(&[0.0, 1.0]).is_err());
    }

    #[test]
    fn standardization_round_trip_and_errors() {
        let data = vec![1.0, 10.0, 2.0, 10.0, 3.0, 10.0];
        let names = vec!["a".to_string(), "flat".to_string()];
        match Standardization::fit(&data, 2, &names) {
            Err(SomError::ZeroVariance(n)) => assert_eq!(n, "flat"),
            other => panic!("unexpected {other:?}"),
        }
        let data = vec![1.0, 10.0, 2.0, 14.0, 3.0, 9.0, -4.0, 0.5];
        let s = Standardization::fit(&data, 2, &names).unwrap();
        let z = s.apply_all(&data);
        for c in 0..2 {
            let col: Vec<f64> = z.iter().skip(c).step_by(2).copied().collect();
            let mean = col.iter().sum::<f64>() / 4.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-10 && (var.sqrt() - 1.0).abs() < 1e-10);
        }
        let again = Standardization::fit(&z, 2, &names).unwrap().apply_all(&z);
        for (a, b) in z.iter().zip(&again) {
            assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in s.invert_all(&z).iter().zip(&data) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn schedule_radii() {
        let s = TrainingSchedule::for_grid(20, 20);
        assert_eq!((s.radius_start, s.radius_mid, s.radius_end), (10.0, 3.0, 1.0));
        assert_eq!(s.radius(0), 10.0);
        assert_eq!(s.radius(19), 3.0);
        assert_eq!(s.radius(20), 3.0);
        assert_eq!(s.radius(59), 1.0);
        let small = TrainingSchedule::for_grid(2, 3);
        small.validate().unwrap();
        assert_eq!(small.radius_start, 1.5);
        let mut bad = s.clone();
        bad.radius_end = 5.0;
        assert!(bad.validate().is_err());
        bad = s.clone();
        bad.epochs_fine = 0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_rejects_identical_samples() {
        let data = vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0];
        assert!(matches!(
            init_som(2, 2, &data, 2, Standardization::identity(2)),
            Err(SomError::Degenerate)
        ));
    }

    #[test]
    fn init_is_collinear_for_line_data() {
        let data: Vec<f64> = (0..50)
            .flat_map(|i| {
                let t = i as f64 / 10.0 - 2.5;
                let jitter = if i % 2 == 0 { 1e-6 } else { -1e-6 };
                [t, 0.5 * t + jitter]
            })
            .collect();
        let map = init_som(4, 4, &data, 2, Standardization::identity(2)).unwrap();
        // every codebook lies on the line y = 0.5 x up to the jitter scale
        for u in 0..16 {
            let c = map.code(u);
            assert!((c[1] - 0.5 * c[0]).abs() < 1e-4, "{c:?}");
        }
        let again = init_som(4, 4, &data, 2, Standardization::identity(2)).unwrap();
        assert_eq!(map, again);
    }

    #[test]
    fn component_plane_destandardizes() {
        let s = Standardization {
            mean: vec![10.0, -1.0],
            std: vec![2.0, 0.5],
        };
        let map = SomMap::from_codebook(2, 2, 2, vec![0.0, 1.0, 1.0, 1.0, -1.0, 1.0, 0.5, 1.0], s).unwrap();
        assert_eq!(component_plane(&map, 0).unwrap(), vec![10.0, 12.0, 8.0, 11.0]);
        assert_eq!(component_plane(&map, 1).unwrap(), vec![-0.5; 4]);
        assert!(matches!(
            component_plane(&map, 2),
            Err(SomError::VariableIndex { index: 2, dim: 2 })
        ));
    }

    #[test]
    fn quantization_error_zero_on_codebook() {
        let map = map_2x2([0.0, 1.0, 2.0, 3.0]);
        assert_eq!(quantization_error(&map, &[0.0, 1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert!((quantization_error(&map, &[0.5, 3.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(quantization_error(&map, &[]), Err(SomError::Empty)));
    }

    #[test]
    fn training_rejects_empty_data() {
        let map = map_2x2([0.0, 1.0, 2.0, 3.0]);
        let s = TrainingSchedule::constant(1, 1, 1.0);
        assert!(matches!(train_som(&map, &[], &s), Err(SomError::Empty)));
    }
}
