//! Engine trajectories over the map and distances between them.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::glm::ResidualMatrix;
use crate::som::{SomError, SomMap};
use crate::superclass::SuperClassing;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("engine '{0}' has no flights")]
    EmptyEngine(String),
    #[error("trajectories come from different maps ({0} vs {1})")]
    MapMismatch(String, String),
    #[error("super-classing covers {classes} units but the map has {units}")]
    ClassingMismatch { classes: usize, units: usize },
    #[error("need at least 3 trajectories, got {0}")]
    TooFew(usize),
    #[error("stride must be at least 1")]
    Stride,
    #[error("shape error: {0}")]
    Shape(String),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub flight_index: u32,
    pub unit: usize,
    pub row: usize,
    pub col: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub engine_id: String,
    /// Fingerprint of the map the steps were projected on.
    pub map_id: String,
    pub classes: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn coords(&self, stride: usize) -> Vec<(usize, usize)> {
        self.steps.iter().step_by(stride.max(1)).map(|s| (s.row, s.col)).collect()
    }

    pub fn class_sequence(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.class).collect()
    }
}

/// Projects one engine's standardized residual rows (`flights.len() x dim`,
/// row-major, already in flight order).
pub fn extract_trajectory(
    map: &SomMap,
    sc: &SuperClassing,
    engine_id: &str,
    flights: &[u32],
    standardized: &[f64],
) -> Result<Trajectory, TrajectoryError> {
    if flights.is_empty() {
        return Err(TrajectoryError::EmptyEngine(engine_id.to_string()));
    }
    if sc.units() != map.units() {
        return Err(TrajectoryError::ClassingMismatch {
            classes: sc.units(),
            units: map.units(),
        });
    }
    if standardized.len() != flights.len() * map.dim {
        return Err(TrajectoryError::Shape(format!(
            "{} residual values for {} flights of dimension {}",
            standardized.len(),
            flights.len(),
            map.dim
        )));
    }
    if flights.windows(2).any(|w| w[0] >= w[1]) {
        return Err(TrajectoryError::Shape(format!(
            "flights of engine '{engine_id}' are not strictly increasing"
        )));
    }
    let units = map.bmus(standardized)?;
    let steps = flights
        .iter()
        .zip(units)
        .map(|(&flight_index, unit)| {
            let (row, col) = map.coords(unit);
            Step {
                flight_index,
                unit,
                row,
                col,
                class: sc.labels[unit],
            }
        })
        .collect();
    Ok(Trajectory {
        engine_id: engine_id.to_string(),
        map_id: map.fingerprint(),
        classes: sc.k,
        steps,
    })
}

/// Trajectories of every engine in a residual matrix (raw residual units).
pub fn extract_all(
    map: &SomMap,
    sc: &SuperClassing,
    residuals: &ResidualMatrix,
) -> Result<Vec<Trajectory>, TrajectoryError> {
    if residuals.p() != map.dim {
        return Err(TrajectoryError::Shape(format!(
            "residuals have {} variables, map has {}",
            residuals.p(),
            map.dim
        )));
    }
    residuals
        .engine_ids()
        .iter()
        .zip(residuals.engine_rows())
        .map(|(id, rows)| {
            let raw = &residuals.values()[rows.start * map.dim..rows.end * map.dim];
            let z = map.standardization.apply_all(raw);
            extract_trajectory(map, sc, id, &residuals.flight_index()[rows.clone()], &z)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    #[default]
    Dtw,
    Occupancy,
}

impl std::str::FromStr for DistanceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dtw" => Ok(Self::Dtw),
            "occupancy" => Ok(Self::Occupancy),
            other => Err(format!("unknown distance '{other}' (expected dtw or occupancy)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistanceOptions {
    pub kind: DistanceKind,
    /// Keep every `stride`-th step before comparing.
    pub stride: usize,
}

impl Default for DistanceOptions {
    fn default() -> Self {
        Self {
            kind: DistanceKind::Dtw,
            stride: 1,
        }
    }
}

/// Path-length-normalized DTW between two grid-coordinate sequences.
///
/// Cells cost the Euclidean distance between coordinates. Among warping
/// paths of minimum total cost the shortest one is used for normalization.
pub fn dtw_coords(a: &[(usize, usize)], b: &[(usize, usize)]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return f64::NAN;
    }
    // The recurrence is transpose-symmetric; fixing the order makes the
    // floating-point evaluation identical for (a, b) and (b, a) anyway.
    let (a, b) = if a <= b { (a, b) } else { (b, a) };

    let span = |s: &[(usize, usize)]| s.iter().fold((0, 0), |m, p| (m.0.max(p.0), m.1.max(p.1)));
    let (ra, ca) = span(a);
    let (rb, cb) = span(b);
    let (rmax, cmax) = (ra.max(rb) + 1, ca.max(cb) + 1);
    let table: Vec<f64> = (0..rmax * cmax)
        .map(|i| {
            let (dr, dc) = ((i / cmax) as f64, (i % cmax) as f64);
            (dr * dr + dc * dc).sqrt()
        })
        .collect();
    let cost = |p: (usize, usize), q: (usize, usize)| table[p.0.abs_diff(q.0) * cmax + p.1.abs_diff(q.1)];

    let m = b.len();
    let mut prev: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    let mut cur: Vec<(f64, u32)> = vec![(f64::INFINITY, 0); m];
    for (i, &pa) in a.iter().enumerate() {
        for (j, &pb) in b.iter().enumerate() {
            let c = cost(pa, pb);
            if i == 0 && j == 0 {
                cur[0] = (0.0 + c, 1);
                continue;
            }
            let mut best = (f64::INFINITY, u32::MAX);
            let mut consider = |cand: (f64, u32)| {
                let v = (cand.0 + c, cand.1 + 1);
                if v.0 < best.0 || (v.0 == best.0 && v.1 < best.1) {
                    best = v;
                }
            };
            if i > 0 {
                consider(prev[j]);
            }
            if j > 0 {
                consider(cur[j - 1]);
            }
            if i > 0 && j > 0 {
                consider(prev[j - 1]);
            }
            cur[j] = best;
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (total, len) = prev[m - 1];
    total / len as f64
}

fn check_pair(a: &Trajectory, b: &Trajectory) -> Result<(), TrajectoryError> {
    if a.map_id != b.map_id {
        return Err(TrajectoryError::MapMismatch(a.map_id.clone(), b.map_id.clone()));
    }
    for t in [a, b] {
        if t.is_empty() {
            return Err(TrajectoryError::EmptyEngine(t.engine_id.clone()));
        }
    }
    Ok(())
}

/// Normalized DTW over grid coordinates.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, TrajectoryError> {
    distance_with(a, b, &DistanceOptions::default())
}

/// Fraction of steps spent in each super-class.
pub fn occupancy(t: &Trajectory) -> Vec<f64> {
    let mut occ = vec![0.0; t.classes];
    for s in &t.steps {
        occ[s.class] += 1.0;
    }
    occ.iter_mut().for_each(|v| *v /= t.len() as f64);
    occ
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Total-variation distance between super-class occupancy histograms.
pub fn occupancy_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, TrajectoryError> {
    check_pair(a, b)?;
    Ok(total_variation(&occupancy(a), &occupancy(b)))
}

pub fn distance_with(a: &Trajectory, b: &Trajectory, opts: &DistanceOptions) -> Result<f64, TrajectoryError> {
    if opts.stride == 0 {
        return Err(TrajectoryError::Stride);
    }
    check_pair(a, b)?;
    Ok(match opts.kind {
        DistanceKind::Dtw => dtw_coords(&a.coords(opts.stride), &b.coords(opts.stride)),
        DistanceKind::Occupancy => {
            let thin = |t: &Trajectory| Trajectory {
                steps: t.steps.iter().step_by(opts.stride).copied().collect(),
                ..t.clone()
            };
            total_variation(&occupancy(&thin(a)), &occupancy(&thin(b)))
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDistanceReport {
    pub engine_ids: Vec<String>,
    pub options: DistanceOptions,
    pub matrix: Vec<Vec<f64>>,
    /// Median distance of every engine to all the others.
    pub scores: Vec<f64>,
    /// Engine positions by decreasing score; equal scores keep engine order.
    pub ranking: Vec<usize>,
}

impl TrajectoryDistanceReport {
    pub fn rank_of(&self, engine_id: &str) -> Option<usize> {
        self.ranking.iter().position(|&e| self.engine_ids[e] == engine_id)
    }

    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["engine_id".to_string()];
        header.extend(self.engine_ids.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (id, row) in self.engine_ids.iter().zip(&self.matrix) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|v| format!("{v:.12e}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_ranking_csv<W: Write>(&self, out: W) -> Result<(), TrajectoryError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "engine_id", "score"]).map_err(csv_err)?;
        for (r, &e) in self.ranking.iter().enumerate() {
            w.write_record([
                (r + 1).to_string(),
                self.engine_ids[e].clone(),
                format!("{:.12e}", self.scores[e]),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> TrajectoryError {
    TrajectoryError::Io(std::io::Error::other(e))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Pairwise distances, per-engine median scores and the ranking.
pub fn deviation_scores(
    trajectories: &[Trajectory],
    opts: &DistanceOptions,
) -> Result<TrajectoryDistanceReport, TrajectoryError> {
    let n = trajectories.len();
    if n < 3 {
        return Err(TrajectoryError::TooFew(n));
    }
    if opts.stride == 0 {
        return Err(TrajectoryError::Stride);
    }
    for t in trajectories {
        check_pair(&trajectories[0], t)?;
    }
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| distance_with(&trajectories[i], &trajectories[j], opts))
        .collect::<Result<_, _>>()?;
    let mut matrix = vec![vec![0.0; n]; n];
    for (&(i, j), &v) in pairs.iter().zip(&values) {
        matrix[i][j] = v;
        matrix[j][i] = v;
    }
    let scores: Vec<f64> = (0..n)
        .map(|i| {
            let mut others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| matrix[i][j]).collect();
            median(&mut others)
        })
        .collect();
    let mut ranking: Vec<usize> = (0..n).collect();
    ranking.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    Ok(TrajectoryDistanceReport {
        engine_ids: trajectories.iter().map(|t| t.engine_id.clone()).collect(),
        options: *opts,
        matrix,
        scores,
        ranking,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dwell {
    pub occupancy: Vec<f64>,
    /// `transitions[a][b]` counts consecutive steps from class `a` to class `b`,
    /// staying put included; the total is `len - 1`.
    pub transitions: Vec<Vec<usize>>,
}

impl Dwell {
    /// Consecutive steps that change class.
    pub fn changes(&self) -> usize {
        (0..self.transitions.len())
            .flat_map(|a| (0..self.transitions.len()).map(move |b| (a, b)))
            .filter(|(a, b)| a != b)
            .map(|(a, b)| self.transitions[a][b])
            .sum()
    }
}

pub fn superclass_dwell(t: &Trajectory, sc: &SuperClassing) -> Dwell {
    let k = sc.k;
    let classes: Vec<usize> = t.steps.iter().map(|s| sc.labels[s.unit]).collect();
    let mut occ = vec![0.0; k];
    classes.iter().for_each(|&c| occ[c] += 1.0);
    occ.iter_mut().for_each(|v| *v /= classes.len().max(1) as f64);
    let mut transitions = vec![vec![0; k]; k];
    for w in classes.windows(2) {
        transitions[w[0]][w[1]] += 1;
    }
    Dwell {
        occupancy: occ,
        transitions,
    }
}

/// Total-variation distance between the class occupancy of the first and
/// second halves of a trajectory.
pub fn occupancy_shift(t: &Trajectory) -> f64 {
    let half = t.len() / 2;
    let part = |steps: &[Step]| {
        let mut occ = vec![0.0; t.classes];
        steps.iter().for_each(|s| occ[s.class] += 1.0);
        occ.iter_mut().for_each(|v| *v /= steps.len().max(1) as f64);
        occ
    };
    total_variation(&part(&t.steps[..half]), &part(&t.steps[half..]))
}

pub fn write_trajectories_csv<W: Write>(trajectories: &[Trajectory], out: W) -> Result<(), TrajectoryError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["engine_id", "flight_index", "unit", "row", "col", "superclass"])
        .map_err(csv_err)?;
    for t in trajectories {
        for s in &t.steps {
            w.write_record([
                t.engine_id.clone(),
                s.flight_index.to_string(),
                s.unit.to_string(),
                s.row.to_string(),
                s.col.to_string(),
                s.class.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
