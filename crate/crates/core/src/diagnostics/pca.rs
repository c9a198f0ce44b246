use nalgebra::{DMatrix, SymmetricEigen};

use super::DiagnosticsError;

/// Principal components of a row-major data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `k` unit directions of length `dim`, by decreasing variance.
    pub directions: Vec<Vec<f64>>,
    /// Covariance eigenvalues (sample covariance, `N - 1` denominator).
    pub variances: Vec<f64>,
    /// Fraction of the total variance carried by each direction.
    pub explained: Vec<f64>,
    /// Row-major `N x k` projections of the centred data.
    pub scores: Vec<f64>,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.directions.len()
    }

    pub fn score(&self, row: usize, c: usize) -> f64 {
        self.scores[row * self.k() + c]
    }
}

/// Eigendecomposition of the sample covariance of `data` (`rows x dim`, row-major).
///
/// Sign convention: the largest-magnitude loading of every direction is positive.
pub fn pca(data: &[f64], dim: usize, k: usize) -> Result<PcaResult, DiagnosticsError> {
    if dim == 0 || data.len() % dim != 0 {
        return Err(DiagnosticsError::Shape(format!(
            "{} values do not form rows of {dim}",
            data.len()
        )));
    }
    let n = data.len() / dim;
    if n < 2 {
        return Err(DiagnosticsError::Shape("PCA needs at least 2 rows".into()));
    }
    if k == 0 || k > dim {
        return Err(DiagnosticsError::Components { k, dim });
    }
    let mut mean = vec![0.0; dim];
    for row in data.chunks(dim) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for row in data.chunks(dim) {
        for a in 0..dim {
            let da = row[a] - mean[a];
            for b in a..dim {
                cov[(a, b)] += da * (row[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut directions = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold(0, |best, (i, x)| if x.abs() > v[best].abs() { i } else { best });
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        directions.push(v);
        variances.push(eig.eigenvalues[idx].max(0.0));
    }
    let explained = variances
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();

    let mut scores = Vec::with_capacity(n * k);
    for row in data.chunks(dim) {
        for d in &directions {
            scores.push(
                row.iter()
                    .zip(&mean)
                    .zip(d)
                    .map(|((x, m), w)| (x - m) * w)
                    .sum(),
            );
        }
    }
    Ok(PcaResult {
        dim,
        mean,
        directions,
        variances,
        explained,
        scores,
    })
}

/// Between-engine over within-engine scatter of the first two PCA scores.
///
/// `labels[r]` is the engine of score row `r`. Higher means engines form
/// tighter, better separated clusters.
pub fn engine_separation_stat(pca: &PcaResult, labels: &[usize]) -> Result<f64, DiagnosticsError> {
    let n = pca.scores.len() / pca.k();
    if labels.len() != n {
        return Err(DiagnosticsError::Shape(format!(
            "{} labels for {n} score rows",
            labels.len()
        )));
    }
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let present = {
        let mut seen = vec![false; groups];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|s| **s).count()
    };
    if present < 2 {
        return Err(DiagnosticsError::Shape(
            "separation needs at least 2 engines".into(),
        ));
    }
    let c = pca.k().min(2);
    let mut sums = vec![[0.0f64; 2]; groups];
    let mut counts = vec![0usize; groups];
    let mut grand = [0.0f64; 2];
    for (r, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for d in 0..c {
            let s = pca.score(r, d);
            sums[l][d] += s;
            grand[d] += s;
        }
    }
    for g in grand.iter_mut() {
        *g /= n as f64;
    }
    let means: Vec<[f64; 2]> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &cnt)| {
            if cnt == 0 {
                [0.0, 0.0]
            } else {
                [s[0] / cnt as f64, s[1] / cnt as f64]
            }
        })
        .collect();
    let mut between = 0.0;
    for (mean, &cnt) in means.iter().zip(&counts) {
        for d in 0..c {
            between += cnt as f64 * (mean[d] - grand[d]).powi(2);
        }
    }
    let mut within = 0.0;
    for (r, &l) in labels.iter().enumerate() {
        for d in 0..c {
            within += (pca.score(r, d) - means[l][d]).powi(2);
        }
    }
    Ok(if within > 0.0 { between / within } else { f64::INFINITY })
}
