//! Fixed-effect general linear model per engine variable.
//!
//! For every engine variable `m` the model is
//!
//! ```text
//! Y[i][j] = mu + alpha[i] + sum_k lambda[k] * X[i][j][k] + eps
//! ```
//!
//! subject to `sum_i n_i * alpha[i] = 0`. The constraint is folded into the
//! design (weighted-effects coding): the last engine's indicator column is
//! dropped and every other engine column carries `-n_i / n_last` on the last
//! engine's rows, so `alpha[last]` follows from the constraint. Covariates are
//! centred and scaled before factorization; coefficients are mapped back to
//! the original units afterwards. One Householder QR of the design serves all
//! `p` variables.

use std::io::{Read, Write};
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use thiserror::Error;

use crate::dataset::{FleetDataset, VariableSchema, ENGINE_ID_COLUMN, FLIGHT_INDEX_COLUMN};

/// Singular values below this fraction of the largest mark a rank-deficient design.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// `SSE <= DEGENERATE_SSE_RATIO * SST` is treated as a perfect fit.
pub const DEGENERATE_SSE_RATIO: f64 = 1e-20;

#[derive(Debug, Error)]
pub enum GlmError {
    #[error("singular design: columns {} are linearly dependent", .columns.join(", "))]
    SingularDesign { columns: Vec<String> },
    #[error("insufficient data: {records} records for {parameters} free parameters (need more records than engines + covariates)")]
    InsufficientData { records: usize, parameters: usize },
    #[error("variable index {index} out of range (p = {p})")]
    VariableIndex { index: usize, p: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("undefined correlation: variable '{0}' has zero variance")]
    ZeroVariance(String),
    #[error("residual file: {0}")]
    Format(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fisher test of the full model against the intercept-only model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    /// `+inf` when the fit is degenerate; serialized as `null`.
    #[serde(with = "nonfinite_as_null")]
    pub f_stat: f64,
    pub df_num: usize,
    pub df_den: usize,
    pub p_value: f64,
    /// Set when SSE vanishes (perfect fit).
    pub degenerate: bool,
}

mod nonfinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub var_index: usize,
    pub mu: f64,
    /// Engine effects in dataset engine order.
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    /// `SSE / (N - I - q)`.
    pub sigma2: f64,
    pub sse: f64,
    pub sst: f64,
    pub r2: f64,
    pub f_test: FTest,
}

impl GlmFit {
    pub fn fitted(&self, engine: usize, x: &[f64]) -> f64 {
        let env: f64 = self.lambda.iter().zip(x).map(|(l, v)| l * v).sum();
        self.mu + self.alpha[engine] + env
    }
}

/// Factorized design shared by all engine variables of one dataset.
pub struct GlmDesign<'a> {
    dataset: &'a FleetDataset,
    engine_of_row: Vec<usize>,
    counts: Vec<usize>,
    /// Covariates in the design; identically-zero columns are left out and get `lambda = 0`.
    active: Vec<usize>,
    x_center: Vec<f64>,
    x_scale: Vec<f64>,
    qr: nalgebra::linalg::QR<f64, nalgebra::Dyn, nalgebra::Dyn>,
    r: DMatrix<f64>,
}

fn column_names(dataset: &FleetDataset, active: &[usize]) -> Vec<String> {
    let engines = dataset.engines();
    let env = dataset.schema().env_var_names();
    let mut names = vec!["intercept".to_string()];
    names.extend(
        engines[..engines.len() - 1]
            .iter()
            .map(|e| format!("engine:{}", e.id)),
    );
    names.extend(active.iter().map(|&k| format!("env:{}", env[k])));
    names
}

/// Covariates that are not identically zero.
fn active_covariates(dataset: &FleetDataset) -> Vec<usize> {
    (0..dataset.schema().q())
        .filter(|&k| dataset.records().iter().any(|r| r.x[k] != 0.0))
        .collect()
}

/// Number of covariates that enter the design.
pub fn effective_covariates(dataset: &FleetDataset) -> usize {
    active_covariates(dataset).len()
}

impl<'a> GlmDesign<'a> {
    pub fn new(dataset: &'a FleetDataset, rank_tol: f64) -> Result<Self, GlmError> {
        let n = dataset.len();
        let n_engines = dataset.engine_count();
        let active = active_covariates(dataset);
        let q = active.len();
        let k = n_engines + q;
        if n <= k {
            return Err(GlmError::InsufficientData {
                records: n,
                parameters: k,
            });
        }
        let names = column_names(dataset, &active);
        let engine_of_row = dataset.engine_indices();
        let counts: Vec<usize> = dataset.engines().iter().map(|e| e.len()).collect();

        let mut x_center = vec![0.0; q];
        let mut x_scale = vec![1.0; q];
        for (kk, &src) in active.iter().enumerate() {
            let col = dataset.x_column(src);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            if !(std > 0.0) || std <= 1e-12 * mean.abs() {
                return Err(GlmError::SingularDesign {
                    columns: vec!["intercept".into(), names[n_engines + kk].clone()],
                });
            }
            x_center[kk] = mean;
            x_scale[kk] = std;
        }

        let last = n_engines - 1;
        let mut design = DMatrix::<f64>::zeros(n, k);
        for (row, rec) in dataset.records().iter().enumerate() {
            design[(row, 0)] = 1.0;
            let e = engine_of_row[row];
            if e < last {
                design[(row, 1 + e)] = 1.0;
            } else {
                for i in 0..last {
                    design[(row, 1 + i)] = -(counts[i] as f64) / counts[last] as f64;
                }
            }
            for kk in 0..q {
                design[(row, n_engines + kk)] = (rec.x[active[kk]] - x_center[kk]) / x_scale[kk];
            }
        }

        let qr = design.qr();
        let r = qr.r();
        let svd = r.clone().svd(false, true);
        let sv = &svd.singular_values;
        let smax = sv.max();
        let v_t = svd.v_t.as_ref().expect("requested right singular vectors");
        let mut offending: Vec<usize> = Vec::new();
        for (idx, s) in sv.iter().enumerate() {
            if *s <= rank_tol * smax {
                let row = v_t.row(idx);
                let vmax = row.amax();
                for (c, v) in row.iter().enumerate() {
                    if v.abs() > 0.1 * vmax && !offending.contains(&c) {
                        offending.push(c);
                    }
                }
            }
        }
        if !offending.is_empty() {
            offending.sort_unstable();
            return Err(GlmError::SingularDesign {
                columns: offending.into_iter().map(|c| names[c].clone()).collect(),
            });
        }

        Ok(Self {
            dataset,
            engine_of_row,
            counts,
            active,
            x_center,
            x_scale,
            qr,
            r,
        })
    }

    /// Fits every engine variable.
    pub fn fit_all(&self) -> Vec<GlmFit> {
        let p = self.dataset.schema().p();
        self.solve((0..p).collect())
    }

    pub fn fit(&self, m: usize) -> Result<GlmFit, GlmError> {
        let p = self.dataset.schema().p();
        if m >= p {
            return Err(GlmError::VariableIndex { index: m, p });
        }
        Ok(self.solve(vec![m]).pop().expect("one fit"))
    }

    fn solve(&self, vars: Vec<usize>) -> Vec<GlmFit> {
        let n = self.dataset.len();
        let n_engines = self.dataset.engine_count();
        let q = self.active.len();
        let k = n_engines + q;
        let mut rhs = DMatrix::<f64>::zeros(n, vars.len());
        for (row, rec) in self.dataset.records().iter().enumerate() {
            for (c, &m) in vars.iter().enumerate() {
                rhs[(row, c)] = rec.y[m];
            }
        }
        self.qr.q_tr_mul(&mut rhs);
        let top = rhs.rows(0, k).into_owned();
        let coef = self
            .r
            .solve_upper_triangular(&top)
            .expect("full-rank triangular factor");

        let last = n_engines - 1;
        vars.iter()
            .enumerate()
            .map(|(c, &m)| {
                let beta = coef.column(c);
                let mut alpha: Vec<f64> = (0..last).map(|i| beta[1 + i]).collect();
                let weighted: f64 = alpha
                    .iter()
                    .zip(&self.counts)
                    .map(|(a, &cnt)| a * cnt as f64)
                    .sum();
                alpha.push(-weighted / self.counts[last] as f64);
                let mut lambda = vec![0.0; self.dataset.schema().q()];
                let mut shift = 0.0;
                for (kk, &src) in self.active.iter().enumerate() {
                    lambda[src] = beta[n_engines + kk] / self.x_scale[kk];
                    shift += lambda[src] * self.x_center[kk];
                }
                let mu = beta[0] - shift;
                let mut fit = GlmFit {
                    var_index: m,
                    mu,
                    alpha,
                    lambda,
                    sigma2: 0.0,
                    sse: 0.0,
                    sst: 0.0,
                    r2: 0.0,
                    f_test: FTest {
                        f_stat: 0.0,
                        df_num: 0,
                        df_den: 0,
                        p_value: 1.0,
                        degenerate: false,
                    },
                };
                let (sse, sst) = sums_of_squares(self.dataset, &self.engine_of_row, &fit);
                fit.sse = sse;
                fit.sst = sst;
                let df_den = n - n_engines - q;
                fit.sigma2 = sse / df_den as f64;
                fit.r2 = if sst > 0.0 { (1.0 - sse / sst).clamp(0.0, 1.0) } else { 1.0 };
                fit.f_test = fisher(sse, sst, n_engines - 1 + q, df_den);
                fit
            })
            .collect()
    }
}

fn sums_of_squares(dataset: &FleetDataset, engine_of_row: &[usize], fit: &GlmFit) -> (f64, f64) {
    let m = fit.var_index;
    let n = dataset.len() as f64;
    let mean = dataset.records().iter().map(|r| r.y[m]).sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    for (rec, &e) in dataset.records().iter().zip(engine_of_row) {
        let r = rec.y[m] - fit.fitted(e, &rec.x);
        sse += r * r;
        sst += (rec.y[m] - mean).powi(2);
    }
    (sse, sst)
}

fn fisher(sse: f64, sst: f64, df_num: usize, df_den: usize) -> FTest {
    if sse <= DEGENERATE_SSE_RATIO * sst || sst == 0.0 {
        return FTest {
            f_stat: f64::INFINITY,
            df_num,
            df_den,
            p_value: 0.0,
            degenerate: true,
        };
    }
    if df_num == 0 {
        return FTest {
            f_stat: 0.0,
            df_num,
            df_den,
            p_value: 1.0,
            degenerate: false,
        };
    }
    let (d1, d2) = (df_num as f64, df_den as f64);
    let f = ((sst - sse).max(0.0) / d1) / (sse / d2);
    // Upper tail of F(d1, d2): I_{d2/(d2 + d1 f)}(d2/2, d1/2).
    let p_value = beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0);
    FTest {
        f_stat: f,
        df_num,
        df_den,
        p_value,
        degenerate: false,
    }
}

/// Least-squares fit of variable `m` under the sum-to-zero engine constraint.
pub fn fit_glm(dataset: &FleetDataset, m: usize) -> Result<GlmFit, GlmError> {
    GlmDesign::new(dataset, DEFAULT_RANK_TOL)?.fit(m)
}

/// Recomputes the F statistic of `fit` on `dataset`.
pub fn f_test(fit: &GlmFit, dataset: &FleetDataset) -> Result<FTest, GlmError> {
    check_fit_shape(fit, dataset)?;
    let n_engines = dataset.engine_count();
    let q = effective_covariates(dataset);
    let n = dataset.len();
    if n <= n_engines + q {
        return Err(GlmError::InsufficientData {
            records: n,
            parameters: n_engines + q,
        });
    }
    let (sse, sst) = sums_of_squares(dataset, &dataset.engine_indices(), fit);
    Ok(fisher(sse, sst, n_engines - 1 + q, n - n_engines - q))
}

fn check_fit_shape(fit: &GlmFit, dataset: &FleetDataset) -> Result<(), GlmError> {
    if fit.var_index >= dataset.schema().p() {
        return Err(GlmError::VariableIndex {
            index: fit.var_index,
            p: dataset.schema().p(),
        });
    }
    if fit.alpha.len() != dataset.engine_count() || fit.lambda.len() != dataset.schema().q() {
        return Err(GlmError::Shape(format!(
            "fit for variable {} has {} engine effects and {} covariates, dataset has {} engines and {} covariates",
            fit.var_index,
            fit.alpha.len(),
            fit.lambda.len(),
            dataset.engine_count(),
            dataset.schema().q()
        )));
    }
    Ok(())
}

/// The full set of per-variable fits with the labels needed to reuse it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub schema: VariableSchema,
    pub schema_hash: String,
    pub engine_ids: Vec<String>,
    pub flights: Vec<usize>,
    pub rank_tol: f64,
    pub fits: Vec<GlmFit>,
}

impl GlmModel {
    pub fn fit(dataset: &FleetDataset, rank_tol: f64) -> Result<Self, GlmError> {
        let design = GlmDesign::new(dataset, rank_tol)?;
        Ok(Self {
            schema: dataset.schema().clone(),
            schema_hash: dataset.schema().hash(),
            engine_ids: dataset.engines().iter().map(|e| e.id.clone()).collect(),
            flights: dataset.engines().iter().map(|e| e.len()).collect(),
            rank_tol,
            fits: design.fit_all(),
        })
    }
}

/// Corrected values: residuals of every engine variable, rows in dataset order.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    var_names: Vec<String>,
    engine_ids: Vec<String>,
    engine_rows: Vec<Range<usize>>,
    flight_index: Vec<u32>,
    /// Row-major `N x p`.
    values: Vec<f64>,
}

impl ResidualMatrix {
    /// Assembles a matrix from row-major values grouped by engine.
    pub fn new(
        var_names: Vec<String>,
        engine_ids: Vec<String>,
        engine_rows: Vec<Range<usize>>,
        flight_index: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self, GlmError> {
        let p = var_names.len();
        let n = flight_index.len();
        if p == 0 || values.len() != n * p {
            return Err(GlmError::Shape(format!(
                "{} values for {n} rows of {p} variables",
                values.len()
            )));
        }
        if engine_ids.len() != engine_rows.len() {
            return Err(GlmError::Shape("engine ids and row ranges differ in length".into()));
        }
        let mut expect = 0;
        for r in &engine_rows {
            if r.start != expect || r.end <= r.start {
                return Err(GlmError::Shape("engine row ranges must tile the rows".into()));
            }
            expect = r.end;
        }
        if expect != n {
            return Err(GlmError::Shape("engine row ranges must tile the rows".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GlmError::Shape("non-finite residual".into()));
        }
        Ok(Self {
            var_names,
            engine_ids,
            engine_rows,
            flight_index,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.flight_index.len()
    }

    pub fn p(&self) -> usize {
        self.var_names.len()
    }

    pub fn var_names(&self) -> &[String] {
        &self.var_names
    }

    pub fn engine_ids(&self) -> &[String] {
        &self.engine_ids
    }

    pub fn engine_rows(&self) -> &[Range<usize>] {
        &self.engine_rows
    }

    pub fn flight_index(&self) -> &[u32] {
        &self.flight_index
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn column(&self, m: usize) -> Vec<f64> {
        self.values.iter().skip(m).step_by(self.p()).copied().collect()
    }

    pub fn engine_position(&self, id: &str) -> Option<usize> {
        self.engine_ids.iter().position(|e| e == id)
    }

    pub fn write_csv<W: Write>(&self, out: W, comment: Option<&str>) -> Result<(), GlmError> {
        let mut out = out;
        if let Some(c) = comment {
            writeln!(out, "# {c}")?;
        }
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec![ENGINE_ID_COLUMN.to_string(), FLIGHT_INDEX_COLUMN.to_string()];
        header.extend(self.var_names.iter().cloned());
        wtr.write_record(&header)?;
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for (e, range) in self.engine_rows.iter().enumerate() {
            for i in range.clone() {
                row.clear();
                row.push(self.engine_ids[e].clone());
                row.push(self.flight_index[i].to_string());
                row.extend(self.row(i).iter().map(|v| v.to_string()));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`Self::write_csv`]; `#` lines are skipped.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, GlmError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 3 || header[0] != ENGINE_ID_COLUMN || header[1] != FLIGHT_INDEX_COLUMN {
            return Err(GlmError::Format(
                "expected header engine_id,flight_index,<variables>".into(),
            ));
        }
        let var_names = header[2..].to_vec();
        let mut engine_ids: Vec<String> = Vec::new();
        let mut engine_rows: Vec<Range<usize>> = Vec::new();
        let mut flight_index = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let id = &rec[0];
            if engine_ids.last().map(String::as_str) != Some(id) {
                if engine_ids.iter().any(|e| e == id) {
                    return Err(GlmError::Format(format!("engine {id} rows are not contiguous")));
                }
                engine_ids.push(id.to_string());
                engine_rows.push(i..i);
            }
            engine_rows.last_mut().expect("pushed").end = i + 1;
            flight_index.push(
                rec[1]
                    .parse()
                    .map_err(|e| GlmError::Format(format!("row {}: flight index: {e}", i + 1)))?,
            );
            for cell in rec.iter().skip(2) {
                values.push(
                    cell.parse::<f64>()
                        .map_err(|e| GlmError::Format(format!("row {}: '{cell}': {e}", i + 1)))?,
                );
            }
        }
        Self::new(var_names, engine_ids, engine_rows, flight_index, values)
    }
}

/// `R = Y - mu - alpha_i - lambda . X` for every record and variable.
pub fn residualize(dataset: &FleetDataset, fits: &[GlmFit]) -> Result<ResidualMatrix, GlmError> {
    let p = dataset.schema().p();
    if fits.len() != p {
        return Err(GlmError::Shape(format!("{} fits for {p} engine variables", fits.len())));
    }
    for (m, fit) in fits.iter().enumerate() {
        check_fit_shape(fit, dataset)?;
        if fit.var_index != m {
            return Err(GlmError::Shape(format!(
                "fit at position {m} is for variable {}",
                fit.var_index
            )));
        }
    }
    let mut values = Vec::with_capacity(dataset.len() * p);
    for (e, slice) in dataset.engines().iter().enumerate() {
        for rec in &dataset.records()[slice.records.clone()] {
            for fit in fits {
                values.push(rec.y[fit.var_index] - fit.fitted(e, &rec.x));
            }
        }
    }
    ResidualMatrix::new(
        dataset.schema().engine_var_names().to_vec(),
        dataset.engines().iter().map(|e| e.id.clone()).collect(),
        dataset.engines().iter().map(|e| e.records.clone()).collect(),
        dataset.records().iter().map(|r| r.flight_index).collect(),
        values,
    )
}

/// Pearson correlation matrix of the residual columns.
pub fn residual_correlation(residuals: &ResidualMatrix) -> Result<Vec<Vec<f64>>, GlmError> {
    let n = residuals.rows();
    let p = residuals.p();
    if n < 2 {
        return Err(GlmError::Shape("correlation needs at least 2 rows".into()));
    }
    let columns: Vec<Vec<f64>> = (0..p).map(|m| residuals.column(m)).collect();
    let centered: Vec<Vec<f64>> = columns
        .iter()
        .enumerate()
        .map(|(m, col)| {
            let mean = col.iter().sum::<f64>() / n as f64;
            let c: Vec<f64> = col.iter().map(|v| v - mean).collect();
            if c.iter().all(|v| *v == 0.0) {
                Err(GlmError::ZeroVariance(residuals.var_names()[m].clone()))
            } else {
                Ok(c)
            }
        })
        .collect::<Result<_, _>>()?;
    let norms: Vec<f64> = centered
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut corr = vec![vec![0.0; p]; p];
    for a in 0..p {
        corr[a][a] = 1.0;
        for b in (a + 1)..p {
            let dot: f64 = centered[a].iter().zip(&centered[b]).map(|(u, v)| u * v).sum();
            let r = (dot / (norms[a] * norms[b])).clamp(-1.0, 1.0);
            corr[a][b] = r;
            corr[b][a] = r;
        }
    }
    Ok(corr)
}
