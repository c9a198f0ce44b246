//! Agglomerative clustering of SOM code vectors into super-classes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::som::SomMap;

#[derive(Debug, Error)]
pub enum SuperclassError {
    #[error("k = {k} out of range 1..={units}")]
    K { k: usize, units: usize },
    #[error("unit {unit} out of range ({units} units)")]
    Unit { unit: usize, units: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Ward,
    Single,
    Complete,
}

/// One dendrogram merge. Leaves are `0..n`; the cluster formed by merge `s`
/// gets id `n + s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperClassing {
    pub k: usize,
    pub linkage: Linkage,
    /// Class of every unit, numbered by first appearance in unit order.
    pub labels: Vec<usize>,
    /// Mean member codebook per class, in residual units.
    pub centroids: Vec<Vec<f64>>,
    pub merge_history: Vec<Merge>,
}

impl SuperClassing {
    pub fn units(&self) -> usize {
        self.labels.len()
    }

    pub fn class_of_unit(&self, unit: usize) -> Result<usize, SuperclassError> {
        self.labels.get(unit).copied().ok_or(SuperclassError::Unit {
            unit,
            units: self.labels.len(),
        })
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        self.labels.iter().for_each(|&l| sizes[l] += 1);
        sizes
    }
}

/// Full merge sequence over `points` (each of the same dimension).
///
/// Distances are Euclidean; Ward heights follow the Lance-Williams recurrence
/// on squared distances and are reported as their square root. Equal
/// distances merge the pair with the lowest `(id, id)` first.
pub fn dendrogram(points: &[Vec<f64>], linkage: Linkage) -> Vec<Merge> {
    let n = points.len();
    if n < 2 {
        return Vec::new();
    }
    let total = 2 * n - 1;
    // Pairwise dissimilarity: squared for Ward, plain otherwise.
    let mut d = vec![0.0; total * total];
    for i in 0..n {
        for j in (i + 1)..n {
            let sq: f64 = points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let v = if linkage == Linkage::Ward { sq } else { sq.sqrt() };
            d[i * total + j] = v;
            d[j * total + i] = v;
        }
    }
    let mut size = vec![1usize; total];
    // Active ids in increasing order.
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for (x, &a) in active.iter().enumerate() {
            for &b in &active[x + 1..] {
                let v = d[a * total + b];
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (v, a, b) = best;
        let new = n + step;
        let (na, nb) = (size[a] as f64, size[b] as f64);
        active.retain(|&c| c != a && c != b);
        for &c in &active {
            let (dac, dbc) = (d[a * total + c], d[b * total + c]);
            let nc = size[c] as f64;
            let merged = match linkage {
                Linkage::Ward => ((na + nc) * dac + (nb + nc) * dbc - nc * v) / (na + nb + nc),
                Linkage::Single => dac.min(dbc),
                Linkage::Complete => dac.max(dbc),
            };
            d[new * total + c] = merged;
            d[c * total + new] = merged;
        }
        active.push(new);
        size[new] = size[a] + size[b];
        let height = if linkage == Linkage::Ward { v.max(0.0).sqrt() } else { v };
        merges.push(Merge {
            a,
            b,
            height,
            size: size[new],
        });
    }
    merges
}

/// Labels after applying the first `n - k` merges, numbered by first unit.
pub fn cut(merges: &[Merge], n: usize, k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n + merges.len()).collect();
    fn root(parent: &[usize], mut x: usize) -> usize {
        while parent[x] != x {
            x = parent[x];
        }
        x
    }
    for (s, m) in merges.iter().take(n - k).enumerate() {
        parent[m.a] = n + s;
        parent[m.b] = n + s;
    }
    let mut renumber = std::collections::HashMap::new();
    (0..n)
        .map(|u| {
            let r = root(&parent, u);
            let next = renumber.len();
            *renumber.entry(r).or_insert(next)
        })
        .collect()
}

/// Total within-class sum of squares of `points` under `labels`.
pub fn within_class_ss(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| {
            p.iter()
                .zip(&sums[l])
                .map(|(v, s)| (v - s / counts[l] as f64).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Clusters the map's standardized code vectors into `k` classes.
pub fn cluster_codebook(map: &SomMap, k: usize, linkage: Linkage) -> Result<SuperClassing, SuperclassError> {
    let units = map.units();
    if k == 0 || k > units {
        return Err(SuperclassError::K { k, units });
    }
    let points: Vec<Vec<f64>> = (0..units).map(|u| map.code(u).to_vec()).collect();
    let merge_history = dendrogram(&points, linkage);
    let labels = cut(&merge_history, units, k);

    let raw: Vec<Vec<f64>> = points.iter().map(|p| map.standardization.invert(p)).collect();
    let mut centroids = vec![vec![0.0; map.dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in raw.iter().zip(&labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n as f64);
    }
    Ok(SuperClassing {
        k,
        linkage,
        labels,
        centroids,
        merge_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::som::Standardization;

    fn line_map(values: &[f64]) -> SomMap {
        SomMap::from_codebook(1, values.len(), 1, values.to_vec(), Standardization::identity(1)).unwrap()
    }

    #[test]
    fn ward_heights_by_hand() {
        // 0, 1 merge at distance 1; then {0,1} with 10:
        // sqrt(2 * 2 * 1 / 3) * |10 - 0.5|
        let merges = dendrogram(&[vec![0.0], vec![1.0], vec![10.0]], Linkage::Ward);
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        assert!((merges[0].height - 1.0).abs() < 1e-12);
        assert_eq!((merges[1].a, merges[1].b), (2, 3));
        let expected = (4.0f64 / 3.0).sqrt() * 9.5;
        assert!((merges[1].height - expected).abs() < 1e-12);
        assert_eq!(merges[1].size, 3);
    }

    #[test]
    fn ties_merge_lowest_pair() {
        let merges = dendrogram(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]], Linkage::Ward);
        assert_eq!((merges[0].a, merges[0].b), (0, 1));
        assert_eq!((merges[1].a, merges[1].b), (2, 3));
    }

    #[test]
    fn k_bounds_and_extremes() {
        let map = line_map(&[0.0, 5.0, 1.0, 7.0]);
        assert!(matches!(cluster_codebook(&map, 0, Linkage::Ward), Err(SuperclassError::K { .. })));
        assert!(cluster_codebook(&map, 5, Linkage::Ward).is_err());
        let all = cluster_codebook(&map, 4, Linkage::Ward).unwrap();
        assert_eq!(all.labels, vec![0, 1, 2, 3]);
        let one = cluster_codebook(&map, 1, Linkage::Ward).unwrap();
        assert_eq!(one.labels, vec![0; 4]);
        assert!((one.centroids[0][0] - 13.0 / 4.0).abs() < 1e-12);
        assert_eq!(one.class_of_unit(3).unwrap(), 0);
        assert!(one.class_of_unit(4).is_err());
    }

    #[test]
    fn labels_follow_first_unit_order() {
        let map = line_map(&[10.0, 0.0, 10.5, 0.2]);
        let sc = cluster_codebook(&map, 2, Linkage::Ward).unwrap();
        assert_eq!(sc.labels, vec![0, 1, 0, 1]);
        assert_eq!(sc.class_sizes(), vec![2, 2]);
    }

    #[test]
    fn single_and_complete_linkage() {
        let pts = [vec![0.0], vec![1.0], vec![3.0], vec![6.0]];
        let single = dendrogram(&pts, Linkage::Single);
        let h: Vec<f64> = single.iter().map(|m| m.height).collect();
        assert_eq!(h, vec![1.0, 2.0, 3.0]);
        let complete = dendrogram(&pts, Linkage::Complete);
        let h: Vec<f64> = complete.iter().map(|m| m.height).collect();
        assert_eq!(h, vec![1.0, 3.0, 6.0]);
    }

    #[test]
    fn centroids_destandardized() {
        let s = Standardization {
            mean: vec![100.0],
            std: vec![10.0],
        };
        let map = SomMap::from_codebook(2, 2, 1, vec![-1.0, -1.2, 3.0, 3.1], s).unwrap();
        let sc = cluster_codebook(&map, 2, Linkage::Ward).unwrap();
        assert!((sc.centroids[0][0] - 89.0).abs() < 1e-10);
        assert!((sc.centroids[1][0] - 130.5).abs() < 1e-10);
    }
}
