//! Synthetic fleet generator.
//!
//! Engine measurements are drawn from the additive fixed-effect model
//!
//! ```text
//! Y[i][j][m] = mu[m] + alpha[i][m] + sum_k lambda[m][k] * X[i][j][k] + fault[i][j][m] + noise
//! ```
//!
//! with known coefficients, so every downstream stage can be checked against
//! ground truth. Environmental covariates are i.i.d. per flight. Noise may be
//! correlated across engine variables through block-equicorrelated groups.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetError, FleetDataset, FlightRecord, VariableSchema};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Derives an independent 64-bit seed for the named substream.
pub fn substream_seed(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn substream_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(substream_seed(seed, name))
}

/// Per-flight distribution of one environmental covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvDistribution {
    Uniform { lo: f64, hi: f64 },
    /// 0/1 flag, 1 with probability `p`.
    Bernoulli { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    /// Adds `magnitude * sigma * (j - onset + 1)` from the onset flight on.
    LinearDrift,
    /// Adds `magnitude * sigma` from the onset flight on.
    Step,
}

/// When a fault starts: an explicit flight ordinal, or a fraction of the
/// engine's life (resolved once the engine's flight count is drawn).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultOnset {
    Flight(usize),
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub engine_id: String,
    pub onset: FaultOnset,
    /// Engine-variable indices (0-based).
    pub vars: Vec<usize>,
    pub mode: FaultMode,
    /// One magnitude per affected variable, in units of that variable's noise std.
    pub magnitude: Vec<f64>,
}

/// A group of engine variables whose noise terms share pairwise correlation `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseGroup {
    pub vars: Vec<usize>,
    pub rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub engines: usize,
    /// Inclusive (min, max) flights per engine.
    pub flights: (usize, usize),
    #[serde(default)]
    pub schema: VariableSchema,
    pub mu: Vec<f64>,
    /// Std of the engine effects drawn per variable; ignored when `alpha` is given.
    #[serde(default)]
    pub alpha_std: Vec<f64>,
    /// Explicit engine effects, `engines` rows of `p` values. Re-centred so
    /// that the flight-weighted sum per variable is zero.
    #[serde(default)]
    pub alpha: Option<Vec<Vec<f64>>>,
    /// `p` rows of `q` coefficients.
    pub lambda: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    #[serde(default)]
    pub noise_groups: Vec<NoiseGroup>,
    pub env: Vec<EnvDistribution>,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let uniform = |lo, hi| EnvDistribution::Uniform { lo, hi };
        let flag = |p| EnvDistribution::Bernoulli { p };
        Self {
            engines: 91,
            flights: (500, 800),
            schema: VariableSchema::standard(),
            // %N2, psi, psia, degC, degC, degC, kg/h
            mu: vec![95.0, 60.0, 380.0, 560.0, 720.0, 95.0, 2400.0],
            alpha_std: vec![0.6, 3.0, 10.0, 8.0, 15.0, 3.0, 80.0],
            alpha: None,
            lambda: vec![
                vec![8.0, -0.15, -0.15, -0.1, -0.1, 0.05, 0.05, -0.004, -0.003, 0.03, 0.002, -0.3, -0.3],
                vec![20.0, -0.3, -0.3, -0.2, -0.2, 0.1, -0.2, 0.0, 0.0, 0.05, -0.02, -0.5, -0.5],
                vec![300.0, -3.0, -3.0, -2.0, -2.0, 1.0, -6.0, 0.02, 0.01, 0.5, 0.0, -4.0, -4.0],
                vec![150.0, -2.0, -2.0, -1.5, -1.5, 0.5, -1.5, 0.05, 0.03, 1.2, 0.05, -3.0, -3.0],
                vec![200.0, 4.0, 4.0, 3.0, 3.0, 1.0, -2.0, 0.25, 0.15, 2.5, 0.1, 6.0, 6.0],
                vec![10.0, 0.2, 0.2, 0.15, 0.15, 0.1, -0.3, 0.01, 0.01, 0.4, 0.15, 0.5, 0.5],
                vec![3000.0, 25.0, 25.0, 20.0, 20.0, 5.0, -40.0, 1.0, 0.8, 6.0, 0.5, 60.0, 60.0],
            ],
            noise_std: vec![0.25, 1.2, 4.0, 3.0, 5.0, 1.5, 30.0],
            noise_groups: vec![
                NoiseGroup {
                    vars: vec![0, 2, 3, 4, 6],
                    rho: 0.7,
                },
                NoiseGroup {
                    vars: vec![1, 5],
                    rho: 0.6,
                },
            ],
            env: vec![
                uniform(0.72, 0.84),
                flag(0.5),
                flag(0.7),
                flag(0.3),
                flag(0.6),
                flag(0.2),
                uniform(28.0, 41.0),
                uniform(20.0, 80.0),
                uniform(20.0, 80.0),
                uniform(-35.0, 15.0),
                uniform(0.0, 60.0),
                uniform(0.6, 1.2),
                uniform(0.6, 1.2),
            ],
            faults: vec![
                FaultSpec {
                    engine_id: "E025".into(),
                    onset: FaultOnset::Fraction(0.5),
                    vars: vec![4, 6],
                    mode: FaultMode::LinearDrift,
                    magnitude: vec![0.02, 0.01],
                },
                FaultSpec {
                    engine_id: "E088".into(),
                    onset: FaultOnset::Fraction(0.6),
                    vars: vec![1, 5],
                    mode: FaultMode::Step,
                    magnitude: vec![-4.0, 4.0],
                },
            ],
            seed: 7,
        }
    }
}

impl GeneratorConfig {
    /// Engine id for dense index `i` (zero-padded so lexical order equals numeric order).
    pub fn engine_id(&self, i: usize) -> String {
        let width = self.engines.to_string().len().max(3);
        format!("E{:0width$}", i + 1)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::Config(msg));
        let (p, q) = (self.schema.p(), self.schema.q());
        if self.engines == 0 {
            return bad("engines must be >= 1".into());
        }
        if self.flights.0 < 1 || self.flights.0 > self.flights.1 {
            return bad(format!("invalid flight range {:?}", self.flights));
        }
        if self.mu.len() != p {
            return bad(format!("mu has {} entries, expected {p}", self.mu.len()));
        }
        if self.noise_std.len() != p {
            return bad(format!("noise_std has {} entries, expected {p}", self.noise_std.len()));
        }
        if self.noise_std.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("noise_std entries must be finite and >= 0".into());
        }
        match &self.alpha {
            Some(a) => {
                if a.len() != self.engines || a.iter().any(|row| row.len() != p) {
                    return bad(format!("alpha must be {} rows of {p} values", self.engines));
                }
            }
            None => {
                if self.alpha_std.len() != p {
                    return bad(format!("alpha_std has {} entries, expected {p}", self.alpha_std.len()));
                }
                if self.alpha_std.iter().any(|s| !s.is_finite() || *s < 0.0) {
                    return bad("alpha_std entries must be finite and >= 0".into());
                }
            }
        }
        if self.lambda.len() != p || self.lambda.iter().any(|row| row.len() != q) {
            return bad(format!("lambda must be {p} rows of {q} values"));
        }
        if self.env.len() != q {
            return bad(format!("env has {} entries, expected {q}", self.env.len()));
        }
        for (k, d) in self.env.iter().enumerate() {
            match *d {
                EnvDistribution::Uniform { lo, hi } if !(lo.is_finite() && hi.is_finite() && lo < hi) => {
                    return bad(format!("env[{k}]: uniform needs lo < hi"));
                }
                EnvDistribution::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("env[{k}]: bernoulli p must be in [0, 1]"));
                }
                _ => {}
            }
        }
        let mut grouped = vec![false; p];
        for g in &self.noise_groups {
            if !(g.rho > -1.0 && g.rho < 1.0) {
                return bad(format!("noise group rho {} outside (-1, 1)", g.rho));
            }
            for &v in &g.vars {
                if v >= p {
                    return bad(format!("noise group references variable {v} >= {p}"));
                }
                if std::mem::replace(&mut grouped[v], true) {
                    return bad(format!("variable {v} appears in more than one noise group"));
                }
            }
        }
        for f in &self.faults {
            if !(0..self.engines).any(|i| self.engine_id(i) == f.engine_id) {
                return bad(format!("fault references unknown engine '{}'", f.engine_id));
            }
            if f.vars.is_empty() || f.vars.len() != f.magnitude.len() {
                return bad(format!(
                    "fault on {}: needs one magnitude per affected variable",
                    f.engine_id
                ));
            }
            if f.vars.iter().any(|&v| v >= p) {
                return bad(format!("fault on {}: variable index out of range", f.engine_id));
            }
            if f.magnitude.iter().any(|m| *m == 0.0 || !m.is_finite()) {
                return bad(format!("fault on {}: magnitudes must be finite and non-zero", f.engine_id));
            }
            if let FaultOnset::Fraction(fr) = f.onset {
                if !(0.0..1.0).contains(&fr) {
                    return bad(format!("fault on {}: onset fraction must be in [0, 1)", f.engine_id));
                }
            }
        }
        Ok(())
    }

    /// Correlation matrix of the noise vector.
    pub fn noise_correlation(&self) -> DMatrix<f64> {
        let p = self.schema.p();
        let mut corr = DMatrix::identity(p, p);
        for g in &self.noise_groups {
            for &a in &g.vars {
                for &b in &g.vars {
                    if a != b {
                        corr[(a, b)] = g.rho;
                    }
                }
            }
        }
        corr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedFault {
    pub engine_id: String,
    pub onset_flight: usize,
    pub vars: Vec<usize>,
    pub mode: FaultMode,
    pub magnitude: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultContribution {
    pub engine_id: String,
    pub flight_index: usize,
    /// Additive contribution to each of the `p` engine variables.
    pub values: Vec<f64>,
}

/// Coefficients and fault terms the fleet was generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub schema_hash: String,
    pub seed: u64,
    pub engine_ids: Vec<String>,
    pub flights: Vec<usize>,
    pub mu: Vec<f64>,
    /// Engine effects, one row per engine; flight-weighted column sums are zero.
    pub alpha: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub noise_std: Vec<f64>,
    pub faults: Vec<ResolvedFault>,
    pub fault_contributions: Vec<FaultContribution>,
}

impl GroundTruth {
    pub fn engine_index(&self, id: &str) -> Option<usize> {
        self.engine_ids.iter().position(|e| e == id)
    }
}

fn fault_offset(fault: &ResolvedFault, noise_std: &[f64], flight: usize, out: &mut [f64]) -> bool {
    if flight < fault.onset_flight {
        return false;
    }
    let steps = match fault.mode {
        FaultMode::LinearDrift => (flight - fault.onset_flight + 1) as f64,
        FaultMode::Step => 1.0,
    };
    for (&v, &mag) in fault.vars.iter().zip(&fault.magnitude) {
        out[v] += mag * noise_std[v] * steps;
    }
    true
}

/// Draws a fleet from `config`. Deterministic in `config.seed`; engines use
/// independent substreams, so the result does not depend on thread count.
pub fn generate_fleet(config: &GeneratorConfig) -> Result<(FleetDataset, GroundTruth), SynthError> {
    config.validate()?;
    let (p, q) = (config.schema.p(), config.schema.q());
    let ids: Vec<String> = (0..config.engines).map(|i| config.engine_id(i)).collect();

    let mut fleet_rng = substream_rng(config.seed, "fleet");
    let flights: Vec<usize> = (0..config.engines)
        .map(|_| fleet_rng.random_range(config.flights.0..=config.flights.1))
        .collect();
    let mut alpha: Vec<Vec<f64>> = match &config.alpha {
        Some(a) => a.clone(),
        None => (0..config.engines)
            .map(|_| {
                config
                    .alpha_std
                    .iter()
                    .map(|&s| s * fleet_rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect(),
    };
    let total: usize = flights.iter().sum();
    for m in 0..p {
        let weighted: f64 = alpha.iter().zip(&flights).map(|(a, &n)| a[m] * n as f64).sum();
        let shift = weighted / total as f64;
        for row in alpha.iter_mut() {
            row[m] -= shift;
        }
    }

    let mut faults = Vec::with_capacity(config.faults.len());
    for f in &config.faults {
        let i = ids.iter().position(|e| *e == f.engine_id).expect("validated");
        let onset_flight = match f.onset {
            FaultOnset::Flight(j) => j,
            FaultOnset::Fraction(fr) => (fr * flights[i] as f64).floor() as usize,
        };
        if onset_flight >= flights[i] {
            return Err(SynthError::Config(format!(
                "fault on {}: onset flight {onset_flight} >= engine's {} flights",
                f.engine_id, flights[i]
            )));
        }
        faults.push(ResolvedFault {
            engine_id: f.engine_id.clone(),
            onset_flight,
            vars: f.vars.clone(),
            mode: f.mode,
            magnitude: f.magnitude.clone(),
        });
    }

    let chol = config
        .noise_correlation()
        .cholesky()
        .ok_or_else(|| SynthError::Config("noise correlation is not positive definite".into()))?;
    let noise_factor = chol.l();

    let env_samplers: Vec<EnvSampler> = config
        .env
        .iter()
        .map(|d| match *d {
            EnvDistribution::Uniform { lo, hi } => {
                EnvSampler::Uniform(Uniform::new(lo, hi).expect("validated range"))
            }
            EnvDistribution::Bernoulli { p } => {
                EnvSampler::Bernoulli(Bernoulli::new(p).expect("validated probability"))
            }
        })
        .collect();
    let unit_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let per_engine: Vec<(Vec<FlightRecord>, Vec<FaultContribution>)> = (0..config.engines)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream_rng(config.seed, &format!("engine/{}", ids[i]));
            let engine_faults: Vec<&ResolvedFault> =
                faults.iter().filter(|f| f.engine_id == ids[i]).collect();
            let mut records = Vec::with_capacity(flights[i]);
            let mut contributions = Vec::new();
            let mut z = DVector::<f64>::zeros(p);
            for j in 0..flights[i] {
                let x: Vec<f64> = env_samplers.iter().map(|s| s.sample(&mut rng)).collect();
                for v in z.iter_mut() {
                    *v = unit_normal.sample(&mut rng);
                }
                let correlated = &noise_factor * &z;
                let mut fault = vec![0.0; p];
                let mut faulted = false;
                for f in &engine_faults {
                    faulted |= fault_offset(f, &config.noise_std, j, &mut fault);
                }
                let y: Vec<f64> = (0..p)
                    .map(|m| {
                        let env: f64 = (0..q).map(|k| config.lambda[m][k] * x[k]).sum();
                        config.mu[m]
                            + alpha[i][m]
                            + env
                            + fault[m]
                            + config.noise_std[m] * correlated[m]
                    })
                    .collect();
                if faulted {
                    contributions.push(FaultContribution {
                        engine_id: ids[i].clone(),
                        flight_index: j,
                        values: fault,
                    });
                }
                records.push(FlightRecord {
                    engine_id: ids[i].clone(),
                    flight_index: j as u32,
                    y,
                    x,
                });
            }
            (records, contributions)
        })
        .collect();

    let mut records = Vec::with_capacity(total);
    let mut fault_contributions = Vec::new();
    for (r, c) in per_engine {
        records.extend(r);
        fault_contributions.extend(c);
    }
    let dataset = FleetDataset::new(config.schema.clone(), records)?;
    let truth = GroundTruth {
        schema_hash: config.schema.hash(),
        seed: config.seed,
        engine_ids: ids,
        flights,
        mu: config.mu.clone(),
        alpha,
        lambda: config.lambda.clone(),
        noise_std: config.noise_std.clone(),
        faults,
        fault_contributions,
    };
    Ok((dataset, truth))
}

enum EnvSampler {
    Uniform(Uniform<f64>),
    Bernoulli(Bernoulli),
}

impl EnvSampler {
    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            EnvSampler::Uniform(u) => u.sample(rng),
            EnvSampler::Bernoulli(b) => {
                if b.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}
