//! Staged end-to-end run with persisted, hash-linked artifacts.
//!
//! Every stage reads its inputs from the output directory, checks that they
//! were produced by the current configuration and from each other, and
//! writes its results atomically.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{DatasetError, FleetDataset, VariableSchema};
use crate::diagnostics::{self, engine_separation_stat, pca, DiagnosticsError, FigureInputs, FigureOptions};
use crate::glm::{residualize, GlmError, GlmModel, ResidualMatrix, DEFAULT_RANK_TOL};
use crate::som::{
    component_plane, init_som, plane_smoothness, quantization_error, train_som, u_matrix, SomError, SomMap,
    Standardization, TrainingSchedule,
};
use crate::superclass::{cluster_codebook, Linkage, SuperClassing, SuperclassError};
use crate::synthgen::{generate_fleet, substream_seed, GeneratorConfig, GroundTruth, SynthError};
use crate::trajectory::{
    deviation_scores, extract_all, write_trajectories_csv, DistanceKind, DistanceOptions, Step, Trajectory,
    TrajectoryDistanceReport, TrajectoryError,
};

pub const FLEET_CSV: &str = "fleet.csv";
pub const GROUND_TRUTH: &str = "ground_truth.json";
pub const GLM_MODEL: &str = "glm_model.json";
pub const RESIDUALS_CSV: &str = "residuals.csv";
pub const FTEST_REPORT: &str = "ftest_report.txt";
pub const SOM_MODEL: &str = "som_model.json";
pub const UMATRIX_CSV: &str = "umatrix.csv";
pub const SUPERCLASSES: &str = "superclasses.json";
pub const SUPERCLASS_LABELS: &str = "superclass_labels.csv";
pub const TRAJECTORIES_CSV: &str = "trajectories.csv";
pub const DISTANCES_CSV: &str = "distances.csv";
pub const RANKING_CSV: &str = "deviation_ranking.csv";
pub const DEVIATION_REPORT: &str = "deviation_report.json";
pub const SUMMARY: &str = "summary.txt";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage '{stage}': missing upstream artifact {artifact} (run `{producer}` first)")]
    MissingArtifact {
        stage: &'static str,
        artifact: String,
        producer: &'static str,
    },
    #[error("stage '{stage}': incompatible artifact {artifact}: {reason}")]
    Incompatible {
        stage: &'static str,
        artifact: String,
        reason: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Glm(#[from] GlmError),
    #[error(transparent)]
    Som(#[from] SomError),
    #[error(transparent)]
    Superclass(#[from] SuperclassError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlmOptions {
    pub rank_tol: f64,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            rank_tol: DEFAULT_RANK_TOL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SomOptions {
    pub rows: usize,
    pub cols: usize,
    /// Z-score residuals before training.
    pub standardize: bool,
    /// Overrides of the grid-derived schedule.
    pub epochs_rough: Option<usize>,
    pub epochs_fine: Option<usize>,
    pub radius_start: Option<f64>,
    pub radius_mid: Option<f64>,
    pub radius_end: Option<f64>,
}

impl Default for SomOptions {
    fn default() -> Self {
        Self {
            rows: 20,
            cols: 20,
            standardize: true,
            epochs_rough: None,
            epochs_fine: None,
            radius_start: None,
            radius_mid: None,
            radius_end: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuperclassOptions {
    pub k: usize,
    pub linkage: Linkage,
}

impl Default for SuperclassOptions {
    fn default() -> Self {
        Self {
            k: 5,
            linkage: Linkage::Ward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryOptions {
    pub distance: DistanceKind,
    pub stride: usize,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            distance: DistanceKind::Dtw,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureSettings {
    pub enabled: bool,
    pub scatter_engines: Option<Vec<String>>,
    pub histogram_engines: Option<Vec<String>>,
    pub trajectory_engines: Option<Vec<String>>,
    /// Engine-variable index drawn behind the trajectories.
    pub background_var: usize,
}

impl Default for FigureSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            scatter_engines: None,
            histogram_engines: None,
            trajectory_engines: None,
            background_var: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub out: PathBuf,
    /// Global seed; the generator seed is derived from it.
    pub seed: u64,
    /// Fleet CSV to analyse instead of generating one.
    pub input: Option<PathBuf>,
    /// Generator configuration file (TOML or JSON); the built-in fleet when absent.
    pub generator: Option<PathBuf>,
    pub glm: GlmOptions,
    pub som: SomOptions,
    pub superclass: SuperclassOptions,
    pub trajectory: TrajectoryOptions,
    pub figures: FigureSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            seed: 7,
            input: None,
            generator: None,
            glm: GlmOptions::default(),
            som: SomOptions::default(),
            superclass: SuperclassOptions::default(),
            trajectory: TrajectoryOptions::default(),
            figures: FigureSettings::default(),
        }
    }
}

fn read_text(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn parse_config_text<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, PipelineError> {
    let is_json = path.extension().is_some_and(|e| e == "json");
    let parsed = if is_json {
        serde_json::from_str(text).map_err(|e| e.to_string())
    } else {
        toml::from_str(text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| PipelineError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

impl PipelineConfig {
    /// Reads a TOML (or `.json`) configuration; relative paths inside it
    /// resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let mut cfg: Self = parse_config_text(path, &read_text(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.out);
        if let Some(p) = cfg.input.as_mut() {
            rebase(p);
        }
        if let Some(p) = cfg.generator.as_mut() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.som.rows < 2 || self.som.cols < 2 {
            return Err(PipelineError::Config(format!(
                "grid must be at least 2x2, got {}x{}",
                self.som.rows, self.som.cols
            )));
        }
        if self.superclass.k < 1 {
            return Err(PipelineError::Config("superclasses must be at least 1".into()));
        }
        if self.trajectory.stride < 1 {
            return Err(PipelineError::Config("stride must be at least 1".into()));
        }
        if self.input.is_some() && self.generator.is_some() {
            return Err(PipelineError::Config("give either an input CSV or a generator config, not both".into()));
        }
        if !(self.glm.rank_tol > 0.0) {
            return Err(PipelineError::Config("rank_tol must be positive".into()));
        }
        self.schedule().validate()?;
        Ok(())
    }

    pub fn schedule(&self) -> TrainingSchedule {
        let mut s = TrainingSchedule::for_grid(self.som.rows, self.som.cols);
        if let Some(v) = self.som.epochs_rough {
            s.epochs_rough = v;
        }
        if let Some(v) = self.som.epochs_fine {
            s.epochs_fine = v;
        }
        if let Some(v) = self.som.radius_start {
            s.radius_start = v;
        }
        if let Some(v) = self.som.radius_mid {
            s.radius_mid = v;
        }
        if let Some(v) = self.som.radius_end {
            s.radius_end = v;
        }
        s.seed = substream_seed(self.seed, "schedule");
        s
    }

    /// Effective generator configuration, seeded from the global seed.
    pub fn generator_config(&self) -> Result<GeneratorConfig, PipelineError> {
        let mut g = match &self.generator {
            Some(path) => parse_config_text(path, &read_text(path)?)?,
            None => GeneratorConfig::default(),
        };
        g.seed = substream_seed(self.seed, "generator");
        Ok(g)
    }

    pub fn distance_options(&self) -> DistanceOptions {
        DistanceOptions {
            kind: self.trajectory.distance,
            stride: self.trajectory.stride,
        }
    }

    fn figure_options(&self) -> FigureOptions {
        FigureOptions {
            scatter_engines: self.figures.scatter_engines.clone(),
            histogram_engines: self.figures.histogram_engines.clone(),
            trajectory_engines: self.figures.trajectory_engines.clone(),
            background_var: self.figures.background_var,
            ..FigureOptions::default()
        }
    }

    /// Hash of everything that determines the output of `stage` and its upstream stages.
    pub fn stage_hash(&self, stage: Stage) -> Result<String, PipelineError> {
        let source = match &self.input {
            Some(path) => serde_json::json!({ "input_sha256": file_sha256(path)? }),
            None => serde_json::json!({ "generator": self.generator_config()? }),
        };
        let mut parts = vec![source];
        let stages = [
            (Stage::Fit, serde_json::to_value(&self.glm)),
            (Stage::Train, serde_json::to_value((&self.som, self.schedule()))),
            (Stage::Cluster, serde_json::to_value(&self.superclass)),
            (Stage::Trajectories, serde_json::to_value(&self.trajectory)),
            (Stage::Report, serde_json::to_value(&self.figures)),
        ];
        for (s, v) in stages {
            if s <= stage {
                parts.push(v.expect("options serialize"));
            }
        }
        Ok(short_hash(serde_json::to_string(&parts).expect("json").as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Generate,
    Fit,
    Train,
    Cluster,
    Trajectories,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Fit => "fit",
            Stage::Train => "train",
            Stage::Cluster => "cluster",
            Stage::Trajectories => "trajectories",
            Stage::Report => "report",
        }
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex::encode(&Sha256::digest(bytes)[..8])
}

pub fn file_sha256(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Lineage record carried by every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub schema_hash: String,
    pub config_hash: String,
    /// sha256 of each artifact this one was computed from.
    pub parents: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub provenance: Provenance,
    pub content: T,
}

const PROVENANCE_PREFIX: &str = "provenance ";

/// Writes `bytes` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact serializes");
    v.push(b'\n');
    v
}

struct Run<'a> {
    cfg: &'a PipelineConfig,
    stage: Stage,
}

impl Run<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.out.join(name)
    }

    fn provenance(&self, schema_hash: &str, parents: &[&str]) -> Result<Provenance, PipelineError> {
        let mut map = BTreeMap::new();
        for p in parents {
            map.insert(p.to_string(), file_sha256(&self.path(p))?);
        }
        Ok(Provenance {
            stage: self.stage.name().into(),
            schema_hash: schema_hash.into(),
            config_hash: self.cfg.stage_hash(self.stage)?,
            parents: map,
        })
    }

    fn require(&self, name: &str, producer: Stage) -> Result<PathBuf, PipelineError> {
        let path = self.path(name);
        if path.is_file() {
            Ok(path)
        } else {
            Err(PipelineError::MissingArtifact {
                stage: self.stage.name(),
                artifact: name.into(),
                producer: producer.name(),
            })
        }
    }

    fn incompatible(&self, artifact: &str, reason: String) -> PipelineError {
        PipelineError::Incompatible {
            stage: self.stage.name(),
            artifact: artifact.into(),
            reason,
        }
    }

    /// Checks an upstream artifact's lineage against the current configuration and schema.
    fn check(&self, name: &str, prov: &Provenance, producer: Stage, schema_hash: Option<&str>) -> Result<(), PipelineError> {
        let expected = self.cfg.stage_hash(producer)?;
        if prov.config_hash != expected {
            return Err(self.incompatible(
                name,
                format!(
                    "produced under config {} but the current configuration gives {expected}; rerun `{}`",
                    prov.config_hash,
                    producer.name()
                ),
            ));
        }
        if let Some(h) = schema_hash {
            if prov.schema_hash != h {
                return Err(self.incompatible(
                    name,
                    format!("schema hash {} does not match {h}", prov.schema_hash),
                ));
            }
        }
        for (parent, digest) in &prov.parents {
            let path = self.path(parent);
            let actual = if path.is_file() { file_sha256(&path)? } else { String::new() };
            if &actual != digest {
                return Err(self.incompatible(
                    name,
                    format!("{parent} changed since {name} was written; rerun `{}`", producer.name()),
                ));
            }
        }
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, name: &str, producer: Stage) -> Result<Artifact<T>, PipelineError> {
        let path = self.require(name, producer)?;
        let artifact: Artifact<T> = serde_json::from_str(&read_text(&path)?).map_err(|e| PipelineError::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Ok(artifact)
    }

    /// Provenance line at the top of a CSV artifact.
    fn csv_provenance(&self, name: &str, producer: Stage) -> Result<(PathBuf, Provenance), PipelineError> {
        let path = self.require(name, producer)?;
        let text = read_text(&path)?;
        let line = text.lines().next().unwrap_or("");
        let json = line
            .strip_prefix("# ")
            .and_then(|l| l.strip_prefix(PROVENANCE_PREFIX))
            .ok_or_else(|| self.incompatible(name, "no provenance line".into()))?;
        let prov = serde_json::from_str(json).map_err(|e| self.incompatible(name, e.to_string()))?;
        Ok((path, prov))
    }

    fn write_json<T: Serialize>(&self, name: &str, provenance: Provenance, content: &T) -> Result<(), PipelineError> {
        write_atomic(&self.path(name), &json_bytes(&Artifact { provenance, content }))
    }
}

fn provenance_comment(prov: &Provenance) -> String {
    format!("{PROVENANCE_PREFIX}{}", serde_json::to_string(prov).expect("json"))
}

fn start(cfg: &PipelineConfig, stage: Stage) -> Result<Run<'_>, PipelineError> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    Ok(Run { cfg, stage })
}

/// What a stage wrote, for progress output.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

pub fn cmd_generate(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Generate)?;
    let mut files = vec![FLEET_CSV.to_string()];
    let (dataset, truth) = match &cfg.input {
        Some(path) => (FleetDataset::load_csv(path, &VariableSchema::standard())?, None),
        None => {
            let (ds, gt) = generate_fleet(&cfg.generator_config()?)?;
            (ds, Some(gt))
        }
    };
    let prov = run.provenance(&dataset.schema().hash(), &[])?;
    let mut bytes = format!("# {}\n", provenance_comment(&prov)).into_bytes();
    dataset.write_csv(&mut bytes)?;
    write_atomic(&run.path(FLEET_CSV), &bytes)?;
    if let Some(gt) = truth {
        run.write_json(GROUND_TRUTH, prov.clone(), &gt)?;
        files.push(GROUND_TRUTH.into());
    }
    let s = dataset.summarize();
    Ok(StageOutcome {
        stage: Stage::Generate,
        files,
        notes: vec![format!(
            "{} engines, {} flights ({}..={} per engine)",
            s.engines, s.records, s.min_flights, s.max_flights
        )],
    })
}

fn load_fleet(run: &Run) -> Result<FleetDataset, PipelineError> {
    let (path, prov) = run.csv_provenance(FLEET_CSV, Stage::Generate)?;
    run.check(FLEET_CSV, &prov, Stage::Generate, None)?;
    let schema = match &run.cfg.input {
        Some(_) => VariableSchema::standard(),
        None => run.cfg.generator_config()?.schema,
    };
    if schema.hash() != prov.schema_hash {
        return Err(run.incompatible(FLEET_CSV, "schema hash does not match the configured schema".into()));
    }
    Ok(FleetDataset::load_csv(&path, &schema)?)
}

pub fn cmd_fit(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Fit)?;
    let dataset = load_fleet(&run)?;
    let model = GlmModel::fit(&dataset, cfg.glm.rank_tol)?;
    let residuals = residualize(&dataset, &model.fits)?;
    let prov = run.provenance(&model.schema_hash, &[FLEET_CSV])?;

    run.write_json(GLM_MODEL, prov.clone(), &model)?;
    let mut bytes = Vec::new();
    residuals.write_csv(&mut bytes, Some(&provenance_comment(&prov)))?;
    write_atomic(&run.path(RESIDUALS_CSV), &bytes)?;
    write_atomic(&run.path(FTEST_REPORT), ftest_report(&model).as_bytes())?;

    let notes = model
        .fits
        .iter()
        .map(|f| format!("{}: F = {}, p = {:.3e}", model.schema.engine_var_names()[f.var_index], fmt_f(f.f_test.f_stat), f.f_test.p_value))
        .collect();
    Ok(StageOutcome {
        stage: Stage::Fit,
        files: vec![GLM_MODEL.into(), RESIDUALS_CSV.into(), FTEST_REPORT.into()],
        notes,
    })
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.4}")
    } else {
        "inf".into()
    }
}

fn ftest_report(model: &GlmModel) -> String {
    let mut s = String::new();
    let n: usize = model.flights.iter().sum();
    let _ = writeln!(
        s,
        "Fixed-effect model per engine variable: {} engines, {} flights, {} environmental variables",
        model.engine_ids.len(),
        n,
        model.schema.q()
    );
    let _ = writeln!(s, "{:<32} {:>14} {:>6} {:>8} {:>12} {:>8} {:>14}", "variable", "F", "df1", "df2", "p-value", "R2", "sigma2");
    for f in &model.fits {
        let _ = writeln!(
            s,
            "{:<32} {:>14} {:>6} {:>8} {:>12.4e} {:>8.4} {:>14.6e}{}",
            model.schema.engine_var_names()[f.var_index],
            fmt_f(f.f_test.f_stat),
            f.f_test.df_num,
            f.f_test.df_den,
            f.f_test.p_value,
            f.r2,
            f.sigma2,
            if f.f_test.degenerate { "  (degenerate: exact fit)" } else { "" }
        );
    }
    s
}

fn load_residuals(run: &Run) -> Result<(ResidualMatrix, Provenance), PipelineError> {
    let (path, prov) = run.csv_provenance(RESIDUALS_CSV, Stage::Fit)?;
    run.check(RESIDUALS_CSV, &prov, Stage::Fit, None)?;
    let file = fs::File::open(&path).map_err(io_err(&path))?;
    Ok((ResidualMatrix::read_csv(std::io::BufReader::new(file))?, prov))
}

fn grid_csv(map: &SomMap, values: &[f64], comment: &str) -> Vec<u8> {
    let mut s = format!("# {comment}\n");
    for r in 0..map.rows {
        let row: Vec<String> = (0..map.cols).map(|c| values[map.unit_at(r, c)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s.into_bytes()
}

pub fn plane_file_name(var: &str) -> String {
    let clean: String = var
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("plane_{clean}.csv")
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Train)?;
    let (residuals, res_prov) = load_residuals(&run)?;
    let p = residuals.p();
    let params = if cfg.som.standardize {
        Standardization::fit(residuals.values(), p, residuals.var_names())?
    } else {
        Standardization::identity(p)
    };
    let data = params.apply_all(residuals.values());
    let mut init = init_som(cfg.som.rows, cfg.som.cols, &data, p, params)?;
    init.var_names = residuals.var_names().to_vec();
    let map = train_som(&init, &data, &cfg.schedule())?;

    let prov = run.provenance(&res_prov.schema_hash, &[RESIDUALS_CSV])?;
    run.write_json(SOM_MODEL, prov.clone(), &map)?;
    let comment = provenance_comment(&prov);
    write_atomic(&run.path(UMATRIX_CSV), &grid_csv(&map, &u_matrix(&map), &comment))?;
    let mut files = vec![SOM_MODEL.to_string(), UMATRIX_CSV.to_string()];
    for m in 0..p {
        let name = plane_file_name(&map.var_names[m]);
        write_atomic(&run.path(&name), &grid_csv(&map, &component_plane(&map, m)?, &comment))?;
        files.push(name);
    }
    let qe = quantization_error(&map, &data)?;
    Ok(StageOutcome {
        stage: Stage::Train,
        files,
        notes: vec![format!(
            "{}x{} map, {} epochs, final quantization error {qe:.4}",
            map.rows,
            map.cols,
            map.training_log.len()
        )],
    })
}

fn load_map(run: &Run) -> Result<(SomMap, Provenance), PipelineError> {
    let a: Artifact<SomMap> = run.read_json(SOM_MODEL, Stage::Train)?;
    run.check(SOM_MODEL, &a.provenance, Stage::Train, None)?;
    Ok((a.content, a.provenance))
}

pub fn cmd_cluster(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Cluster)?;
    let (map, map_prov) = load_map(&run)?;
    let sc = cluster_codebook(&map, cfg.superclass.k, cfg.superclass.linkage)?;
    let prov = run.provenance(&map_prov.schema_hash, &[SOM_MODEL])?;
    run.write_json(SUPERCLASSES, prov.clone(), &sc)?;
    let labels: Vec<f64> = sc.labels.iter().map(|&l| l as f64).collect();
    write_atomic(&run.path(SUPERCLASS_LABELS), &grid_csv(&map, &labels, &provenance_comment(&prov)))?;
    Ok(StageOutcome {
        stage: Stage::Cluster,
        files: vec![SUPERCLASSES.into(), SUPERCLASS_LABELS.into()],
        notes: vec![format!("{} super-classes of sizes {:?}", sc.k, sc.class_sizes())],
    })
}

fn load_superclasses(run: &Run, schema_hash: &str) -> Result<SuperClassing, PipelineError> {
    let a: Artifact<SuperClassing> = run.read_json(SUPERCLASSES, Stage::Cluster)?;
    run.check(SUPERCLASSES, &a.provenance, Stage::Cluster, Some(schema_hash))?;
    Ok(a.content)
}

pub fn cmd_trajectories(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Trajectories)?;
    let (residuals, res_prov) = load_residuals(&run)?;
    let (map, map_prov) = load_map(&run)?;
    if map_prov.schema_hash != res_prov.schema_hash {
        return Err(run.incompatible(SOM_MODEL, "schema hash differs from residuals.csv".into()));
    }
    let sc = load_superclasses(&run, &map_prov.schema_hash)?;
    let trajectories = extract_all(&map, &sc, &residuals)?;
    let report = deviation_scores(&trajectories, &cfg.distance_options())?;

    let prov = run.provenance(&map_prov.schema_hash, &[RESIDUALS_CSV, SOM_MODEL, SUPERCLASSES])?;
    let comment = format!("# {}\n", provenance_comment(&prov));
    let mut bytes = comment.clone().into_bytes();
    write_trajectories_csv(&trajectories, &mut bytes)?;
    write_atomic(&run.path(TRAJECTORIES_CSV), &bytes)?;
    let mut bytes = comment.clone().into_bytes();
    report.write_matrix_csv(&mut bytes)?;
    write_atomic(&run.path(DISTANCES_CSV), &bytes)?;
    let mut bytes = comment.into_bytes();
    report.write_ranking_csv(&mut bytes)?;
    write_atomic(&run.path(RANKING_CSV), &bytes)?;
    run.write_json(DEVIATION_REPORT, prov, &report)?;

    let notes = report
        .ranking
        .iter()
        .take(5)
        .enumerate()
        .map(|(r, &e)| format!("#{} {} (score {:.4})", r + 1, report.engine_ids[e], report.scores[e]))
        .collect();
    Ok(StageOutcome {
        stage: Stage::Trajectories,
        files: vec![
            TRAJECTORIES_CSV.into(),
            DISTANCES_CSV.into(),
            RANKING_CSV.into(),
            DEVIATION_REPORT.into(),
        ],
        notes,
    })
}

fn read_trajectories(run: &Run, map: &SomMap, sc: &SuperClassing) -> Result<Vec<Trajectory>, PipelineError> {
    let (path, prov) = run.csv_provenance(TRAJECTORIES_CSV, Stage::Trajectories)?;
    run.check(TRAJECTORIES_CSV, &prov, Stage::Trajectories, None)?;
    let parse_err = |message: String| PipelineError::Parse {
        path: path.clone(),
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&path)
        .map_err(|e| parse_err(e.to_string()))?;
    let map_id = map.fingerprint();
    let mut out: Vec<Trajectory> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| -> Result<usize, PipelineError> {
            rec.get(i)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| parse_err(format!("bad field {i} in {rec:?}")))
        };
        let id = rec.get(0).unwrap_or_default();
        let step = Step {
            flight_index: field(1)? as u32,
            unit: field(2)?,
            row: field(3)?,
            col: field(4)?,
            class: field(5)?,
        };
        if step.unit >= map.units() || step.class >= sc.k {
            return Err(parse_err(format!("step outside the map or classes: {rec:?}")));
        }
        match out.last_mut() {
            Some(t) if t.engine_id == id => t.steps.push(step),
            _ => out.push(Trajectory {
                engine_id: id.to_string(),
                map_id: map_id.clone(),
                classes: sc.k,
                steps: vec![step],
            }),
        }
    }
    Ok(out)
}

/// Between/within engine scatter on the first two components of z-scored rows.
pub fn separation_of(values: &[f64], dim: usize, labels: &[usize]) -> Result<f64, PipelineError> {
    let z = Standardization::fit(values, dim, &[])
        .map(|s| s.apply_all(values))
        .unwrap_or_else(|_| values.to_vec());
    let result = pca(&z, dim, dim.min(2))?;
    Ok(engine_separation_stat(&result, labels)?)
}

pub fn cmd_report(cfg: &PipelineConfig) -> Result<StageOutcome, PipelineError> {
    let run = start(cfg, Stage::Report)?;
    let dataset = load_fleet(&run)?;
    let glm: Artifact<GlmModel> = run.read_json(GLM_MODEL, Stage::Fit)?;
    run.check(GLM_MODEL, &glm.provenance, Stage::Fit, Some(&dataset.schema().hash()))?;
    let (residuals, _) = load_residuals(&run)?;
    let (map, map_prov) = load_map(&run)?;
    let sc = load_superclasses(&run, &map_prov.schema_hash)?;
    let trajectories = read_trajectories(&run, &map, &sc)?;
    let report: Artifact<TrajectoryDistanceReport> = run.read_json(DEVIATION_REPORT, Stage::Trajectories)?;
    run.check(DEVIATION_REPORT, &report.provenance, Stage::Trajectories, Some(&map_prov.schema_hash))?;
    let report = report.content;

    let mut files = Vec::new();
    if cfg.figures.enabled {
        let inputs = FigureInputs {
            dataset: Some(&dataset),
            map: Some(&map),
            superclasses: Some(&sc),
            trajectories: Some(&trajectories),
            report: Some(&report),
        };
        for (name, svg) in diagnostics::render_figures(&inputs, &cfg.figure_options())? {
            write_atomic(&run.path(name), svg.as_bytes())?;
            files.push(name.to_string());
        }
    }

    let labels = dataset.engine_indices();
    let raw: Vec<f64> = dataset.records().iter().flat_map(|r| r.y.iter().copied()).collect();
    let p = dataset.schema().p();
    let sep_raw = separation_of(&raw, p, &labels)?;
    let sep_res = separation_of(residuals.values(), p, &labels)?;
    let data = map.standardization.apply_all(residuals.values());
    let qe = quantization_error(&map, &data)?;

    let mut s = String::new();
    let n: usize = glm.content.flights.iter().sum();
    let _ = writeln!(s, "Fleet: {} engines, {} flights", glm.content.engine_ids.len(), n);
    let _ = writeln!(s, "\nEnvironmental model (F-test per engine variable)");
    for f in &glm.content.fits {
        let _ = writeln!(
            s,
            "  {:<32} F = {:>14}  p = {:.4e}  R2 = {:.4}",
            glm.content.schema.engine_var_names()[f.var_index],
            fmt_f(f.f_test.f_stat),
            f.f_test.p_value,
            f.r2
        );
    }
    let _ = writeln!(s, "\nEngine separation on the first two principal components (between/within)");
    let _ = writeln!(s, "  raw engine variables: {sep_raw:.4}");
    let _ = writeln!(s, "  residuals:            {sep_res:.4}");
    let _ = writeln!(s, "\nSelf-organizing map {}x{}", map.rows, map.cols);
    let _ = writeln!(s, "  epochs: {}", map.training_log.len());
    let _ = writeln!(s, "  quantization error: {qe:.6}");
    for m in 0..map.dim {
        let (nb, rnd) = plane_smoothness(&map, &component_plane(&map, m)?);
        let _ = writeln!(
            s,
            "  plane {:<32} neighbour diff {:.4}  random-pair diff {:.4}",
            map.var_names[m], nb, rnd
        );
    }
    let _ = writeln!(s, "\nSuper-classes: {} ({:?} linkage), sizes {:?}", sc.k, sc.linkage, sc.class_sizes());
    let _ = writeln!(
        s,
        "\nTrajectory deviation ({:?} distance, stride {})",
        report.options.kind, report.options.stride
    );
    for (r, &e) in report.ranking.iter().take(10).enumerate() {
        let _ = writeln!(s, "  #{:<3} {:<8} {:.6}", r + 1, report.engine_ids[e], report.scores[e]);
    }
    write_atomic(&run.path(SUMMARY), s.as_bytes())?;
    files.push(SUMMARY.into());
    Ok(StageOutcome {
        stage: Stage::Report,
        files,
        notes: vec![format!("separation raw {sep_raw:.3} vs residual {sep_res:.3}")],
    })
}

pub fn cmd_run(cfg: &PipelineConfig) -> Result<Vec<StageOutcome>, PipelineError> {
    Ok(vec![
        cmd_generate(cfg)?,
        cmd_fit(cfg)?,
        cmd_train(cfg)?,
        cmd_cluster(cfg)?,
        cmd_trajectories(cfg)?,
        cmd_report(cfg)?,
    ])
}

/// Ground truth written by the generate stage, if the fleet was synthesized.
pub fn load_ground_truth(cfg: &PipelineConfig) -> Result<Option<GroundTruth>, PipelineError> {
    let path = cfg.out.join(GROUND_TRUTH);
    if !path.is_file() {
        return Ok(None);
    }
    let a: Artifact<GroundTruth> = serde_json::from_str(&read_text(&path)?).map_err(|e| PipelineError::Parse {
        path,
        message: e.to_string(),
    })?;
    Ok(Some(a.content))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_toml_overrides() {
        let cfg: PipelineConfig = toml::from_str(
            r#"
            seed = 11
            [som]
            rows = 8
            cols = 6
            [superclass]
            k = 3
            linkage = "complete"
            [trajectory]
            distance = "occupancy"
            stride = 2
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!((cfg.som.rows, cfg.som.cols), (8, 6));
        assert_eq!(cfg.superclass.linkage, Linkage::Complete);
        assert_eq!(cfg.trajectory.distance, DistanceKind::Occupancy);
        assert!(cfg.som.standardize);
        assert_eq!(cfg.glm.rank_tol, DEFAULT_RANK_TOL);
        let s = cfg.schedule();
        assert_eq!((s.radius_start, s.radius_mid, s.radius_end), (4.0, 3.0, 1.0));
        cfg.validate().unwrap();
        assert!(toml::from_str::<PipelineConfig>("bogus = 1").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.som.rows = 1;
        assert!(matches!(cfg.validate(), Err(PipelineError::Config(_))));
        let mut cfg = PipelineConfig::default();
        cfg.superclass.k = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = PipelineConfig::default();
        cfg.som.radius_end = Some(50.0);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn stage_hashes_track_upstream_options_only() {
        let base = PipelineConfig::default();
        let mut other = base.clone();
        other.superclass.k = 6;
        for stage in [Stage::Generate, Stage::Fit, Stage::Train] {
            assert_eq!(base.stage_hash(stage).unwrap(), other.stage_hash(stage).unwrap());
        }
        assert_ne!(base.stage_hash(Stage::Cluster).unwrap(), other.stage_hash(Stage::Cluster).unwrap());
        other.seed = 8;
        assert_ne!(base.stage_hash(Stage::Generate).unwrap(), other.stage_hash(Stage::Generate).unwrap());
    }

    #[test]
    fn plane_names_are_file_safe() {
        assert_eq!(plane_file_name("exhaust_gas_temp"), "plane_exhaust_gas_temp.csv");
        assert_eq!(plane_file_name("a b/c"), "plane_a_b_c.csv");
    }
}
