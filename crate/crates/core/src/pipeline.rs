//! File-level commands chaining the library: simulate, reconstruct, evaluate
//! and ablate.
//!
//! Output tree of an experiment (one directory per scene):
//!
//! ```text
//! <output_dir>/
//!   <scene>/config.json                    rig, depth range, scenario table
//!   <scene>/scenario_XX/observations.csv   matched image points
//!   <scene>/scenario_XX/observations.json  sidecar (rig, noise, seed)
//!   <scene>/scenario_XX/ground_truth.json  points (row-0 frame) and motion
//!   <scene>/scenario_XX/ground_truth.ply   points at mid-exposure
//!   <scene>/scenario_XX/<mode>/report.json, points.ply, metrics.json
//!   ablation.csv, ablation.md, cells.csv
//! ```
//!
//! Every file carries the tool version and a configuration hash. No timings or
//! absolute paths are written, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{LightFieldIntrinsics, MotionState};
use crate::init::{triangulate_horizontal, InitReport};
use crate::metrics::{compute_metrics, reanchor, MetricsReport};
use crate::observations::{ObservationSet, ObservationSidecar};
use crate::par;
use crate::sim::{check_observability, default_rig, scene_motion, simulate, MotionClass, MotionScenario, Scene};
use crate::solver::{solve, Mode, SolveConfig, SolveReport};

pub const TOOL_VERSION: &str = concat!("rslf ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
}

impl Provenance {
    /// Hashes the concatenation of `parts`.
    pub fn of_parts<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Self {
        let mut hasher = Sha256::new();
        for part in parts {
            hasher.update((part.len() as u64).to_le_bytes());
            hasher.update(part);
        }
        let mut config_hash = String::with_capacity(64);
        for b in hasher.finalize().iter() {
            write!(config_hash, "{b:02x}").unwrap();
        }
        Self {
            tool_version: TOOL_VERSION.to_owned(),
            config_hash,
        }
    }

    /// One-line form for CSV and PLY comments.
    pub fn comment(&self) -> String {
        format!("{} config {}", self.tool_version, self.config_hash)
    }
}

fn default_scenarios() -> Vec<u8> {
    (0..=10).collect()
}

fn default_modes() -> Vec<Mode> {
    Mode::ALL.to_vec()
}

/// Experiment grid. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    /// Scene files: JSON [`Scene`] or ASCII PLY.
    pub scenes: Vec<PathBuf>,
    #[serde(default = "default_scenarios")]
    pub scenarios: Vec<u8>,
    /// Intrinsics JSON; the default rig when absent.
    #[serde(default)]
    pub rig: Option<PathBuf>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    pub output_dir: PathBuf,
    /// Solver settings shared by every cell; `mode` is taken from `modes`.
    #[serde(default)]
    pub solver: SolveConfig,
}

impl ExperimentManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.scenes.is_empty() {
            return bad("manifest lists no scenes".into());
        }
        if self.scenarios.is_empty() {
            return bad("manifest lists no scenarios".into());
        }
        if let Some(id) = self.scenarios.iter().find(|&&id| id > 10) {
            return bad(format!("scenario id {id} is outside 0..=10"));
        }
        if self.modes.is_empty() {
            return bad("manifest lists no modes".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        self.solver.validate()
    }
}

/// A loaded manifest with every referenced file read.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub manifest: ExperimentManifest,
    pub rig: LightFieldIntrinsics,
    pub scenes: Vec<Scene>,
    pub output_dir: PathBuf,
    pub provenance: Provenance,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_json<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> Result<T> {
    serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line() as u64,
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn load_scene(path: &Path) -> Result<(Scene, Vec<u8>)> {
    let bytes = read(path)?;
    let scene = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ply")) {
        let text = String::from_utf8_lossy(&bytes);
        let cloud = PointCloud::from_ply(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message,
        })?;
        Scene {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into()),
            rng_seed: 0,
            points: cloud.points,
        }
    } else {
        parse_json(&bytes, path)?
    };
    scene.validate().map_err(|e| match e {
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    })?;
    Ok((scene, bytes))
}

fn dir_name(name: &str) -> String {
    let cleaned: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if cleaned.is_empty() { "scene".into() } else { cleaned }
}

impl Experiment {
    /// Reads a manifest; `seed` and `output_dir` override its values. An
    /// overriding output directory is taken as given, not manifest-relative.
    pub fn load(path: &Path, seed: Option<u64>, output_dir: Option<&Path>) -> Result<Self> {
        let bytes = read(path)?;
        let mut manifest: ExperimentManifest = parse_json(&bytes, path)?;
        if let Some(seed) = seed {
            manifest.seed = seed;
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let mut exp = Self::from_manifest(manifest, base)?;
        if let Some(out) = output_dir {
            exp.output_dir = out.to_path_buf();
        }
        Ok(exp)
    }

    pub fn from_manifest(manifest: ExperimentManifest, base: &Path) -> Result<Self> {
        manifest.validate()?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

        let mut hashed: Vec<Vec<u8>> = vec![serde_json::to_vec(&manifest).expect("serializable")];
        let rig = match &manifest.rig {
            Some(p) => {
                let p = resolve(p);
                let bytes = read(&p)?;
                let rig: LightFieldIntrinsics = parse_json(&bytes, &p)?;
                rig.validate()?;
                hashed.push(bytes);
                rig
            }
            None => default_rig(),
        };
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        let mut names = std::collections::BTreeSet::new();
        for p in &manifest.scenes {
            let (scene, bytes) = load_scene(&resolve(p))?;
            if !names.insert(dir_name(&scene.name)) {
                return Err(Error::Validation(format!("duplicate scene name `{}`", scene.name)));
            }
            hashed.push(bytes);
            scenes.push(scene);
        }
        let provenance = Provenance::of_parts(hashed.iter().map(Vec::as_slice));
        Ok(Self {
            output_dir: resolve(&manifest.output_dir),
            manifest,
            rig,
            scenes,
            provenance,
        })
    }

    pub fn scene_dir(&self, scene: &Scene) -> PathBuf {
        self.output_dir.join(dir_name(&scene.name))
    }

    pub fn cell_dir(&self, scene: &Scene, scenario: u8) -> PathBuf {
        self.scene_dir(scene).join(format!("scenario_{scenario:02}"))
    }

    /// Noise seed of one (scene, scenario) cell.
    pub fn cell_seed(&self, scene_index: usize, scenario: u8) -> u64 {
        self.manifest
            .seed
            .wrapping_add(1000 * scene_index as u64)
            .wrapping_add(scenario as u64)
    }
}

/// Per-scene camera settings, written next to the scenario directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub scene: String,
    pub n_points: usize,
    pub rig: LightFieldIntrinsics,
    /// Smallest and largest point depth in the row-0 frame (m).
    pub depth_range: (f64, f64),
    pub scenarios: Vec<MotionScenario>,
    pub provenance: Provenance,
}

/// Reference geometry of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scene: String,
    pub scenario: u8,
    pub class: MotionClass,
    pub motion: MotionState,
    pub line_period: f64,
    /// Row whose camera frame the metrics use.
    pub anchor_row: f64,
    /// Points in the row-0 camera frame.
    pub points: PointCloud,
    pub provenance: Provenance,
}

impl GroundTruth {
    pub fn anchored(&self) -> PointCloud {
        reanchor(&self.points, &self.motion, self.line_period, self.anchor_row)
    }
}

/// One simulated (scene, scenario) cell held in memory.
#[derive(Debug, Clone)]
pub struct SimulatedCell {
    pub scene_index: usize,
    pub scenario: u8,
    pub observations: ObservationSet,
    pub ground_truth: GroundTruth,
    pub dir: PathBuf,
}

fn simulate_cells(exp: &Experiment) -> Result<Vec<SimulatedCell>> {
    let grid: Vec<(usize, u8)> = (0..exp.scenes.len())
        .flat_map(|i| exp.manifest.scenarios.iter().map(move |&s| (i, s)))
        .collect();
    par::map_indexed(&grid, |(_, &(i, id))| {
        let scene = &exp.scenes[i];
        let sc = MotionScenario::benchmark(id).expect("validated id");
        let seed = exp.cell_seed(i, id);
        let observations = simulate(scene, &sc, &exp.rig, exp.manifest.noise_sigma, seed)
            .map_err(|e| e.in_stage("simulate"))?;
        let ground_truth = GroundTruth {
            scene: scene.name.clone(),
            scenario: id,
            class: sc.class,
            motion: scene_motion(scene, &sc),
            line_period: exp.rig.line_period,
            anchor_row: exp.rig.center_row(),
            points: scene.cloud(),
            provenance: exp.provenance.clone(),
        };
        Ok(SimulatedCell {
            scene_index: i,
            scenario: id,
            observations,
            ground_truth,
            dir: exp.cell_dir(scene, id),
        })
    })
    .into_iter()
    .collect()
}

fn observation_files(obs: &ObservationSet, sidecar: &ObservationSidecar, prov: &Provenance) -> (Vec<u8>, Vec<u8>) {
    let csv = format!("# {}\n{}", prov.comment(), obs.to_csv());
    (csv.into_bytes(), to_json(sidecar))
}

/// Writes one observation CSV and sidecar per (scene, scenario) cell.
/// Returns the CSV paths in manifest order.
pub fn cmd_simulate(exp: &Experiment) -> Result<Vec<PathBuf>> {
    let cells = simulate_cells(exp)?;
    write_simulation(exp, &cells)
}

fn write_simulation(exp: &Experiment, cells: &[SimulatedCell]) -> Result<Vec<PathBuf>> {
    for scene in &exp.scenes {
        let depths = scene.points.iter().map(|p| p.z);
        let depth_range = (
            depths.clone().fold(f64::INFINITY, f64::min),
            depths.fold(f64::NEG_INFINITY, f64::max),
        );
        let config = SceneConfig {
            scene: scene.name.clone(),
            n_points: scene.points.len(),
            rig: exp.rig,
            depth_range,
            scenarios: exp
                .manifest
                .scenarios
                .iter()
                .filter_map(|&id| MotionScenario::benchmark(id))
                .collect(),
            provenance: exp.provenance.clone(),
        };
        write_atomic(&exp.scene_dir(scene).join("config.json"), &to_json(&config))?;
    }
    let mut written = Vec::with_capacity(cells.len());
    for cell in cells {
        let sidecar = ObservationSidecar {
            scene: Some(cell.ground_truth.scene.clone()),
            scenario: Some(cell.scenario),
            provenance: Some(exp.provenance.clone()),
            ..cell.observations.sidecar()
        };
        let (csv, side) = observation_files(&cell.observations, &sidecar, &exp.provenance);
        let csv_path = cell.dir.join("observations.csv");
        write_atomic(&csv_path, &csv)?;
        write_atomic(&cell.dir.join("observations.json"), &side)?;
        write_atomic(&cell.dir.join("ground_truth.json"), &to_json(&cell.ground_truth))?;
        let ply = cell.ground_truth.anchored().to_ply(Some(&format!(
            "{}\nmid-exposure frame (row {})",
            exp.provenance.comment(),
            cell.ground_truth.anchor_row
        )));
        write_atomic(&cell.dir.join("ground_truth.ply"), ply.as_bytes())?;
        written.push(csv_path);
    }
    Ok(written)
}

/// Sidecar path of an observation CSV (same stem, `.json`).
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn load_observations(csv_path: &Path) -> Result<(ObservationSet, ObservationSidecar, Vec<u8>)> {
    let side_path = sidecar_path(csv_path);
    let side_bytes = read(&side_path)?;
    let sidecar: ObservationSidecar = parse_json(&side_bytes, &side_path)?;
    let text = read_text(csv_path)?;
    let obs = ObservationSet::from_csv(&text, &sidecar, csv_path)?;
    let mut hashed = text.into_bytes();
    hashed.extend_from_slice(&side_bytes);
    Ok((obs, sidecar, hashed))
}

/// Observability check, linear initialization, then refinement. This is the
/// whole numerical content of `reconstruct`.
pub fn reconstruct(obs: &ObservationSet, cfg: &SolveConfig) -> Result<(InitReport, SolveReport)> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let check = check_observability(obs, None);
    if !check.observable && !cfg.force {
        return Err(Error::NotObservable(check.reasons.join("; ")).in_stage("observability"));
    }
    let init = triangulate_horizontal(obs).map_err(|e| e.in_stage("init"))?;
    let report = solve(obs, &init, cfg).map_err(|e| e.in_stage("solve"))?;
    Ok((init, report))
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    pub config: SolveConfig,
    /// Points the linear initialization could not triangulate.
    pub skipped: Vec<u32>,
    pub report: SolveReport,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructOptions {
    pub mode: Option<Mode>,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct ReconstructOutput {
    pub report_path: PathBuf,
    pub ply_path: PathBuf,
    pub file: ReconstructionFile,
}

fn write_reconstruction(dir: &Path, file: &ReconstructionFile) -> Result<(PathBuf, PathBuf)> {
    let report_path = dir.join("report.json");
    let ply_path = dir.join("points.ply");
    write_atomic(&report_path, &to_json(file))?;
    let comment = format!("{}\nmode {}, row-0 frame", file.provenance.comment(), file.report.mode);
    write_atomic(&ply_path, file.report.points.to_ply(Some(&comment)).as_bytes())?;
    Ok((report_path, ply_path))
}

/// Loads observations (and an optional JSON solver config), reconstructs and
/// writes `report.json` and `points.ply` into `out_dir`.
pub fn cmd_reconstruct(
    obs_path: &Path,
    config_path: Option<&Path>,
    out_dir: &Path,
    opts: ReconstructOptions,
) -> Result<ReconstructOutput> {
    let (obs, sidecar, mut hashed) = load_observations(obs_path).map_err(|e| e.in_stage("load"))?;
    let mut cfg = match config_path {
        Some(p) => {
            let bytes = read(p)?;
            parse_json::<SolveConfig>(&bytes, p).map_err(|e| e.in_stage("config"))?
        }
        None => SolveConfig::default(),
    };
    if let Some(mode) = opts.mode {
        cfg.mode = mode;
    }
    cfg.force |= opts.force;
    hashed.extend_from_slice(&serde_json::to_vec(&cfg).expect("serializable"));
    let (init, report) = reconstruct(&obs, &cfg)?;
    let file = ReconstructionFile {
        scene: sidecar.scene,
        scenario: sidecar.scenario,
        config: cfg,
        skipped: init.skipped,
        report,
        provenance: Provenance::of_parts([hashed.as_slice()]),
    };
    let (report_path, ply_path) = write_reconstruction(out_dir, &file)?;
    Ok(ReconstructOutput {
        report_path,
        ply_path,
        file,
    })
}

/// Compares a solve with the ground truth at mid-exposure: each point set is
/// moved to the anchor row with its own motion.
pub fn evaluate_report(report: &SolveReport, gt: &GroundTruth) -> Result<MetricsReport> {
    let est = reanchor(&report.points, &report.motion, gt.line_period, gt.anchor_row);
    compute_metrics(&est, &gt.anchored(), &format!("row {}", gt.anchor_row))
}

/// One line of the batch metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRow {
    pub scene: String,
    pub scenario: u8,
    pub class: MotionClass,
    pub mode: Mode,
    pub abs_rel: f64,
    pub abs_diff: f64,
    pub rms: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub n_points: usize,
    pub config_hash: String,
}

impl BatchRow {
    fn new(gt: &GroundTruth, mode: Mode, m: &MetricsReport, prov: &Provenance) -> Self {
        Self {
            scene: gt.scene.clone(),
            scenario: gt.scenario,
            class: gt.class,
            mode,
            abs_rel: m.abs_rel,
            abs_diff: m.abs_diff,
            rms: m.rms,
            delta1: m.delta1,
            delta2: m.delta2,
            delta3: m.delta3,
            n_points: m.n_points,
            config_hash: prov.config_hash.clone(),
        }
    }

    fn key(&self) -> (String, u8, Mode) {
        (self.scene.clone(), self.scenario, self.mode)
    }

    fn metrics(&self) -> [f64; 6] {
        [self.abs_rel, self.abs_diff, self.rms, self.delta1, self.delta2, self.delta3]
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

pub fn read_batch(path: &Path) -> Result<Vec<BatchRow>> {
    let text = read_text(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(|e| csv_error(path, e)))
        .collect()
}

fn batch_csv(rows: &[BatchRow]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(format!("# {TOOL_VERSION}\n").into_bytes());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

/// Per (mode, class) averages of a batch, GS/slow/fast like the paper's
/// summary table: `method,class,abs_rel,abs_diff,rms,delta1,delta2,delta3,cells`.
pub fn summarize_batch(rows: &[BatchRow]) -> String {
    let mut groups: BTreeMap<(Mode, MotionClass), (usize, [f64; 6])> = BTreeMap::new();
    for r in rows {
        let entry = groups.entry((r.mode, r.class)).or_insert((0, [0.0; 6]));
        entry.0 += 1;
        for (acc, v) in entry.1.iter_mut().zip(r.metrics()) {
            *acc += v;
        }
    }
    let mut out = format!("# {TOOL_VERSION}\nmethod,class,{},cells\n", crate::metrics::CSV_METRIC_COLUMNS);
    for ((mode, class), (n, sums)) in &groups {
        write!(out, "{mode},{}", class.label()).unwrap();
        for s in sums {
            write!(out, ",{}", s / *n as f64).unwrap();
        }
        writeln!(out, ",{n}").unwrap();
    }
    out
}

/// Path of the grouped summary written next to a batch table.
pub fn summary_path(batch: &Path) -> PathBuf {
    let stem = batch.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    batch.with_file_name(format!("{stem}_by_class.csv"))
}

#[derive(Debug, Clone)]
pub struct EvaluateOutput {
    pub metrics: MetricsReport,
    pub metrics_path: PathBuf,
    pub row: BatchRow,
}

/// Scores `report.json` against `ground_truth.json`, writes `metrics.json` to
/// `out_dir` and inserts (or replaces) the cell's row in the batch table.
pub fn cmd_evaluate(report_path: &Path, gt_path: &Path, out_dir: &Path, batch: &Path) -> Result<EvaluateOutput> {
    let report_bytes = read(report_path)?;
    let file: ReconstructionFile = parse_json(&report_bytes, report_path)?;
    let gt_bytes = read(gt_path)?;
    let gt: GroundTruth = parse_json(&gt_bytes, gt_path)?;
    let metrics = evaluate_report(&file.report, &gt).map_err(|e| e.in_stage("evaluate"))?;
    let prov = Provenance::of_parts([report_bytes.as_slice(), gt_bytes.as_slice()]);
    let metrics_path = out_dir.join("metrics.json");
    write_atomic(&metrics_path, &to_json(&MetricsFile {
        metrics: metrics.clone(),
        provenance: prov.clone(),
    }))?;

    let row = BatchRow::new(&gt, file.report.mode, &metrics, &prov);
    let mut rows = if batch.exists() { read_batch(batch)? } else { Vec::new() };
    rows.retain(|r| r.key() != row.key());
    rows.push(row.clone());
    rows.sort_by_key(BatchRow::key);
    write_atomic(batch, &batch_csv(&rows))?;
    write_atomic(&summary_path(batch), summarize_batch(&rows).as_bytes())?;
    Ok(EvaluateOutput {
        metrics,
        metrics_path,
        row,
    })
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub metrics: MetricsReport,
    pub provenance: Provenance,
}

/// Outcome of one (scene, scenario, mode) cell of an ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub scene: String,
    pub scenario: u8,
    pub class: MotionClass,
    pub mode: Mode,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
    pub exit_code: i32,
}

/// Mean RMS and δ<1.25 of one (mode, class) group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub rms: f64,
    pub delta1: f64,
    pub cells: usize,
}

/// A pairwise ordering check reported under the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingCheck {
    pub description: String,
    pub satisfied: usize,
    pub compared: usize,
    pub required_fraction: f64,
}

impl OrderingCheck {
    pub fn passed(&self) -> bool {
        self.compared > 0 && self.satisfied as f64 >= self.required_fraction * self.compared as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutcome {
    pub cells: Vec<CellResult>,
    /// Rows in manifest mode order; `None` where a class has no successful cell.
    pub table: Vec<(Mode, [Option<ClassScore>; 3])>,
    pub checks: Vec<OrderingCheck>,
}

const CLASSES: [MotionClass; 3] = [MotionClass::Gs, MotionClass::Slow, MotionClass::Fast];

fn rms_of(cells: &[CellResult], scene: &str, scenario: u8, mode: Mode) -> Option<f64> {
    cells
        .iter()
        .find(|c| c.scene == scene && c.scenario == scenario && c.mode == mode)
        .and_then(|c| c.metrics.as_ref())
        .map(|m| m.rms)
}

/// Counts moving cells where `a`'s RMS does not exceed `b`'s.
fn pairwise(cells: &[CellResult], a: Mode, b: Mode, fraction: f64) -> OrderingCheck {
    let (mut satisfied, mut compared) = (0, 0);
    for c in cells.iter().filter(|c| c.mode == a && c.class != MotionClass::Gs) {
        if let (Some(ra), Some(rb)) = (
            c.metrics.as_ref().map(|m| m.rms),
            rms_of(cells, &c.scene, c.scenario, b),
        ) {
            compared += 1;
            satisfied += usize::from(ra <= rb);
        }
    }
    OrderingCheck {
        description: format!("{a} RMS <= {b} RMS on moving cells"),
        satisfied,
        compared,
        required_fraction: fraction,
    }
}

fn ablation_checks(cells: &[CellResult], table: &[(Mode, [Option<ClassScore>; 3])]) -> Vec<OrderingCheck> {
    let has = |m: Mode| table.iter().any(|(mode, _)| *mode == m);
    let mut checks = Vec::new();
    if has(Mode::Full) && has(Mode::NoInit) {
        checks.push(pairwise(cells, Mode::Full, Mode::NoInit, 0.9));
    }
    if has(Mode::Full) && has(Mode::NoReg) {
        checks.push(pairwise(cells, Mode::Full, Mode::NoReg, 0.8));
    }
    let gs = |m: Mode| {
        table
            .iter()
            .find(|(mode, _)| *mode == m)
            .and_then(|(_, scores)| scores[0])
    };
    if let (Some(nors), Some(full)) = (gs(Mode::NoRs), gs(Mode::Full)) {
        checks.push(OrderingCheck {
            description: "NoRS RMS <= Full RMS on GS".into(),
            satisfied: usize::from(nors.rms <= full.rms),
            compared: 1,
            required_fraction: 1.0,
        });
    }
    checks
}

fn ablation_table(exp: &Experiment, cells: &[CellResult]) -> Vec<(Mode, [Option<ClassScore>; 3])> {
    exp.manifest
        .modes
        .iter()
        .map(|&mode| {
            let scores = CLASSES.map(|class| {
                let ok: Vec<&MetricsReport> = cells
                    .iter()
                    .filter(|c| c.mode == mode && c.class == class)
                    .filter_map(|c| c.metrics.as_ref())
                    .collect();
                (!ok.is_empty()).then(|| ClassScore {
                    rms: ok.iter().map(|m| m.rms).sum::<f64>() / ok.len() as f64,
                    delta1: ok.iter().map(|m| m.delta1).sum::<f64>() / ok.len() as f64,
                    cells: ok.len(),
                })
            });
            (mode, scores)
        })
        .collect()
}

fn render_ablation_csv(outcome: &AblationOutcome, prov: &Provenance) -> String {
    let mut out = format!("# {}\nmode", prov.comment());
    for class in CLASSES {
        write!(out, ",{0}_rms,{0}_delta1", class.label()).unwrap();
    }
    out.push('\n');
    for (mode, scores) in &outcome.table {
        out.push_str(mode.name());
        for s in scores {
            match s {
                Some(s) => write!(out, ",{},{}", s.rms, s.delta1).unwrap(),
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

fn render_ablation_md(outcome: &AblationOutcome, prov: &Provenance) -> String {
    let mut out = format!("<!-- {} -->\n\n", prov.comment());
    out.push_str("| Mode | GS RMS | GS δ<1.25 | slow RMS | slow δ<1.25 | fast RMS | fast δ<1.25 |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for (mode, scores) in &outcome.table {
        write!(out, "| {mode} ").unwrap();
        for s in scores {
            match s {
                Some(s) => write!(out, "| {:.4} | {:.3} ", s.rms, s.delta1).unwrap(),
                None => out.push_str("| – | – "),
            }
        }
        out.push_str("|\n");
    }
    let failed = outcome.cells.iter().filter(|c| c.error.is_some()).count();
    writeln!(out, "\nDepth RMS in meters at mid-exposure; {failed} failed cell(s).\n").unwrap();
    for c in &outcome.checks {
        writeln!(
            out,
            "- {}: {}/{} (need {:.0}%) {}",
            c.description,
            c.satisfied,
            c.compared,
            100.0 * c.required_fraction,
            if c.passed() { "PASS" } else { "FAIL" }
        )
        .unwrap();
    }
    out
}

fn render_cells_csv(cells: &[CellResult], prov: &Provenance) -> String {
    let mut out = format!(
        "# {}\nscene,scenario,class,mode,{},exit_code,error\n",
        prov.comment(),
        crate::metrics::CSV_METRIC_COLUMNS
    );
    for c in cells {
        write!(out, "{},{},{},{}", c.scene, c.scenario, c.class.label(), c.mode).unwrap();
        match &c.metrics {
            Some(m) => {
                for v in [m.abs_rel, m.abs_diff, m.rms, m.delta1, m.delta2, m.delta3] {
                    write!(out, ",{v}").unwrap();
                }
            }
            None => out.push_str(",,,,,,"),
        }
        let error = c.error.as_deref().unwrap_or("").replace(['"', '\n'], " ");
        writeln!(out, ",{},\"{error}\"", c.exit_code).unwrap();
    }
    out
}

/// Simulates the grid, runs every manifest mode on every cell and writes the
/// comparison table. Failing cells are recorded and the run continues.
pub fn cmd_ablate(exp: &Experiment) -> Result<AblationOutcome> {
    let sims = simulate_cells(exp)?;
    write_simulation(exp, &sims)?;

    let jobs: Vec<(&SimulatedCell, Mode)> = sims
        .iter()
        .flat_map(|cell| exp.manifest.modes.iter().map(move |&m| (cell, m)))
        .collect();
    let results = par::map_indexed(&jobs, |(_, &(cell, mode))| {
        let cfg = SolveConfig {
            mode,
            ..exp.manifest.solver.clone()
        };
        let run = reconstruct(&cell.observations, &cfg).and_then(|(init, report)| {
            let metrics = evaluate_report(&report, &cell.ground_truth).map_err(|e| e.in_stage("evaluate"))?;
            let file = ReconstructionFile {
                scene: Some(cell.ground_truth.scene.clone()),
                scenario: Some(cell.scenario),
                config: cfg.clone(),
                skipped: init.skipped,
                report,
                provenance: exp.provenance.clone(),
            };
            Ok((file, metrics))
        });
        (cell, mode, run)
    });

    let mut cells = Vec::with_capacity(results.len());
    for (cell, mode, run) in results {
        let gt = &cell.ground_truth;
        let result = match run {
            Ok((file, metrics)) => {
                let dir = cell.dir.join(mode.name());
                write_reconstruction(&dir, &file)?;
                write_atomic(&dir.join("metrics.json"), &to_json(&MetricsFile {
                    metrics: metrics.clone(),
                    provenance: exp.provenance.clone(),
                }))?;
                CellResult {
                    scene: gt.scene.clone(),
                    scenario: gt.scenario,
                    class: gt.class,
                    mode,
                    metrics: Some(metrics),
                    error: None,
                    exit_code: 0,
                }
            }
            Err(e) => CellResult {
                scene: gt.scene.clone(),
                scenario: gt.scenario,
                class: gt.class,
                mode,
                metrics: None,
                exit_code: e.exit_code(),
                error: Some(e.to_string()),
            },
        };
        cells.push(result);
    }

    let table = ablation_table(exp, &cells);
    let checks = ablation_checks(&cells, &table);
    let outcome = AblationOutcome { cells, table, checks };
    let prov = &exp.provenance;
    write_atomic(&exp.output_dir.join("ablation.csv"), render_ablation_csv(&outcome, prov).as_bytes())?;
    write_atomic(&exp.output_dir.join("ablation.md"), render_ablation_md(&outcome, prov).as_bytes())?;
    write_atomic(&exp.output_dir.join("cells.csv"), render_cells_csv(&outcome.cells, prov).as_bytes())?;
    Ok(outcome)
}
