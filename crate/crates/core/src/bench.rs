//! Benchmark harness: run configuration, the fracture parameter cases,
//! single runs with solve-unit budgets, sweeps sharing cached bases, and the
//! CSV summary.

use std::collections::HashMap;
use std::fmt;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_benchmark_geometry, build_single_fracture_geometry, MixedDimMesh, MortarConfig, MortarMode,
};
use crate::interface::GmresConfig;
use crate::linalg::norm_inf;
use crate::mfem::FractureLaw;
use crate::msbasis::{load_basis_for, save_basis, BasisFingerprint, MultiscaleFluxBasis};
use crate::nonlinear::{network_driver, DriverOutput, Method, Mode, OuterConfig};
use crate::problem::{Parameters, Problem};
use crate::subdomain::{SolveCounter, SolveUnits};
use crate::vtk::export_fields;

/// Fracture parameter presets. `K_γ` and `α_γ` scale with the aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    I,
    Ii,
    Iii,
    Iv,
    /// Full-length fractures get case `i`, the others case `ii` without
    /// inertia on a mortar coarsened by two.
    Heterogeneous,
    /// `K_γ` and `α_γ` from the `[custom]` table.
    Custom,
}

impl Case {
    /// `(K_γ, α_γ)` for aperture `eps`; `None` for the composite cases.
    pub fn values(self, eps: f64) -> Option<(f64, f64)> {
        match self {
            Case::I => Some((1e4 * eps, 1e4 / eps)),
            Case::Ii => Some((1e-4 * eps, 1e-4 / eps)),
            Case::Iii => Some((1e4 * eps, 1e-4 / eps)),
            Case::Iv => Some((1e-4 * eps, 1e4 / eps)),
            Case::Heterogeneous | Case::Custom => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Case::I => "i",
            Case::Ii => "ii",
            Case::Iii => "iii",
            Case::Iv => "iv",
            Case::Heterogeneous => "heterogeneous",
            Case::Custom => "custom",
        }
    }
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Case {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "i" | "1" => Case::I,
            "ii" | "2" => Case::Ii,
            "iii" | "3" => Case::Iii,
            "iv" | "4" => Case::Iv,
            "heterogeneous" | "het" => Case::Heterogeneous,
            "custom" => Case::Custom,
            other => return Err(Error::Config(format!("unknown case `{other}`"))),
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::FixedPoint => "fixed_point",
            Method::Newton => "newton",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed_point" | "fp" | "picard" => Ok(Method::FixedPoint),
            "newton" => Ok(Method::Newton),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Ms => "ms",
            Mode::Dd => "dd",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ms" => Ok(Mode::Ms),
            "dd" => Ok(Mode::Dd),
            other => Err(Error::Config(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Benchmark,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub kind: GeometryKind,
    pub level: u8,
    /// Cells per side of each sub-domain for the single-fracture geometry.
    pub n: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            kind: GeometryKind::Benchmark,
            level: 1,
            n: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MortarSection {
    pub mode: MortarMode,
    pub ratio: usize,
}

impl Default for MortarSection {
    fn default() -> Self {
        Self {
            mode: MortarMode::Conforming,
            ratio: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CustomSection {
    pub k_gamma: f64,
    pub alpha: f64,
}

impl Default for CustomSection {
    fn default() -> Self {
        Self {
            k_gamma: 1.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Directory for the run record and VTK files.
    pub dir: Option<PathBuf>,
    /// Directory of cached basis files.
    pub basis_dir: Option<PathBuf>,
    pub vtk: bool,
}

/// One run, read from TOML (dotted keys such as `geometry.level = 2` or
/// tables) with every key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub mortar: MortarSection,
    pub case: Case,
    pub custom: CustomSection,
    pub beta: f64,
    pub zeta: f64,
    /// Intersection coupling override; defaults to each fracture's `α_γ`.
    pub alpha_intersection: Option<f64>,
    pub method: Method,
    pub mode: Mode,
    pub tol_gmres: f64,
    pub tol_outer: f64,
    pub max_units: u64,
    pub max_outer: usize,
    pub warm_start: bool,
    pub preconditioned: bool,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            geometry: GeometrySection::default(),
            mortar: MortarSection::default(),
            case: Case::I,
            custom: CustomSection::default(),
            beta: 0.0,
            zeta: 0.0,
            alpha_intersection: None,
            method: Method::FixedPoint,
            mode: Mode::Ms,
            tol_gmres: 1e-6,
            tol_outer: 1e-6,
            max_units: 10_000,
            max_outer: 10_000,
            warm_start: true,
            preconditioned: true,
            output: OutputSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn benchmark(level: u8, case: Case) -> Self {
        Self {
            geometry: GeometrySection {
                level,
                ..GeometrySection::default()
            },
            case,
            ..Self::default()
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn with_zeta(self, zeta: f64) -> Self {
        Self { zeta, ..self }
    }

    pub fn with_method(self, method: Method) -> Self {
        Self { method, ..self }
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        Self { mode, ..self }
    }

    pub fn outer_config(&self) -> OuterConfig {
        OuterConfig {
            method: self.method,
            tol_outer: self.tol_outer,
            max_outer: self.max_outer,
            gmres: GmresConfig {
                tol: self.tol_gmres,
                max_iter: 10_000,
            },
            warm_start: self.warm_start,
            preconditioned: self.preconditioned,
        }
    }

    fn mortar_config(&self) -> MortarConfig {
        let base = MortarConfig::uniform(self.mortar.mode, self.mortar.ratio);
        match (self.case, self.geometry.kind) {
            (Case::Heterogeneous, GeometryKind::Benchmark) => {
                (2..6).fold(base, |m, f| m.with_fracture(f, MortarMode::Coarser, 2))
            }
            _ => base,
        }
    }

    pub fn build_mesh(&self) -> Result<MixedDimMesh> {
        let mortar = self.mortar_config();
        match self.geometry.kind {
            GeometryKind::Benchmark => build_benchmark_geometry(self.geometry.level, &mortar),
            GeometryKind::Single => build_single_fracture_geometry(self.geometry.n, &mortar),
        }
    }

    pub fn laws(&self, mesh: &MixedDimMesh) -> Result<Vec<FractureLaw>> {
        let eps = mesh.network.aperture;
        let with = |(k, a): (f64, f64), beta: f64, zeta: f64| {
            let law = FractureLaw::darcy(k, a).with_beta(beta).with_zeta(zeta);
            FractureLaw {
                alpha_intersection: self.alpha_intersection,
                ..law
            }
        };
        let n = mesh.network.fractures.len();
        let laws = match self.case {
            Case::Custom => vec![with((self.custom.k_gamma, self.custom.alpha), self.beta, self.zeta); n],
            Case::Heterogeneous => {
                if self.geometry.kind != GeometryKind::Benchmark {
                    return Err(Error::Config(
                        "the heterogeneous case needs the benchmark geometry".into(),
                    ));
                }
                let high = with(Case::I.values(eps).unwrap(), self.beta, self.zeta);
                let low = with(Case::Ii.values(eps).unwrap(), 0.0, 0.0);
                (0..n).map(|f| if f < 2 { high } else { low }).collect()
            }
            c => vec![with(c.values(eps).unwrap(), self.beta, self.zeta); n],
        };
        for l in &laws {
            l.check()?;
        }
        Ok(laws)
    }

    pub fn build_problem(&self) -> Result<Problem> {
        let mesh = Arc::new(self.build_mesh()?);
        let laws = self.laws(&mesh)?;
        let params = Parameters::uniform(&mesh, laws[0]).with_laws(laws);
        Problem::new(mesh, params)
    }
}

/// `true`, `false`, or `inf` when the solve budget ran out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convergence {
    True,
    False,
    Inf,
}

impl fmt::Display for Convergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convergence::True => "true",
            Convergence::False => "false",
            Convergence::Inf => "inf",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionNorms {
    pub fracture_pressure: f64,
    pub fracture_velocity: f64,
    pub matrix_pressure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: RunConfig,
    pub units: SolveUnits,
    pub units_total: u64,
    pub outer_iterations: usize,
    pub initial_iterations: usize,
    pub inner_iterations: Vec<usize>,
    pub converged: Convergence,
    /// The basis came from the cache instead of being assembled.
    pub basis_reused: bool,
    pub n_mortar: usize,
    pub n_triangles: usize,
    pub norms: Option<SolutionNorms>,
    pub error: Option<String>,
    pub wall_time_s: f64,
}

impl RunRecord {
    /// The record without timing, for determinism checks.
    pub fn without_time(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// Bases shared between runs, in memory and optionally on disk.
#[derive(Debug, Default)]
pub struct BasisCache {
    dir: Option<PathBuf>,
    memory: Mutex<HashMap<BasisFingerprint, Arc<MultiscaleFluxBasis>>>,
}

impl BasisCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir: Some(dir),
            memory: Mutex::default(),
        })
    }

    pub fn path_for(&self, fp: &BasisFingerprint) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("basis-{}.msfb", fp.short())))
    }

    pub fn lookup(&self, problem: &Problem) -> Result<Option<Arc<MultiscaleFluxBasis>>> {
        let fp = BasisFingerprint::of(problem);
        if let Some(b) = self.memory.lock().unwrap().get(&fp) {
            return Ok(Some(b.clone()));
        }
        match self.path_for(&fp) {
            Some(path) if path.exists() => {
                let b = Arc::new(load_basis_for(&path, problem)?);
                self.memory.lock().unwrap().insert(fp, b.clone());
                Ok(Some(b))
            }
            _ => Ok(None),
        }
    }

    pub fn insert(&self, basis: MultiscaleFluxBasis) -> Result<Arc<MultiscaleFluxBasis>> {
        if let Some(path) = self.path_for(&basis.fingerprint) {
            save_basis(&basis, &path)?;
        }
        let b = Arc::new(basis);
        self.memory.lock().unwrap().insert(b.fingerprint, b.clone());
        Ok(b)
    }
}

/// A run with everything needed for field output.
#[derive(Debug)]
pub struct RunArtifacts {
    pub record: RunRecord,
    pub problem: Problem,
    pub output: Option<DriverOutput>,
}

/// Executes one configuration. Solver failures, including an exhausted
/// budget, end up in the record; only invalid configurations are errors.
pub fn run_detailed(config: &RunConfig, cache: Option<&BasisCache>) -> Result<RunArtifacts> {
    let start = Instant::now();
    let outer = config.outer_config();
    outer.check()?;
    let problem = config.build_problem()?;
    let counter = SolveCounter::new(Some(config.max_units));
    let cached = match (config.mode, cache) {
        (Mode::Ms, Some(c)) => c.lookup(&problem)?,
        _ => None,
    };
    let result = network_driver(&problem, config.mode, cached.as_deref(), &outer, &counter);
    let units = counter.snapshot();
    let mut record = RunRecord {
        config: config.clone(),
        units,
        units_total: units.total(),
        outer_iterations: 0,
        initial_iterations: 0,
        inner_iterations: Vec::new(),
        converged: Convergence::False,
        basis_reused: cached.is_some(),
        n_mortar: problem.n_mortar(),
        n_triangles: problem.mesh.n_triangles(),
        norms: None,
        error: None,
        wall_time_s: 0.0,
    };
    let output = match result {
        Ok(mut out) => {
            if let (Some(c), Some(b)) = (cache, out.built_basis.take()) {
                c.insert(b)?;
            }
            let r = &out.report;
            record.outer_iterations = r.outer_iterations;
            record.initial_iterations = r.initial_iterations;
            record.inner_iterations = r.inner_iterations.clone();
            record.converged = Convergence::True;
            record.norms = Some(SolutionNorms {
                fracture_pressure: norm_inf(&r.final_state.p),
                fracture_velocity: norm_inf(&r.final_state.u),
                matrix_pressure: out.fields.iter().map(|f| norm_inf(&f.p)).fold(0.0, f64::max),
            });
            Some(out)
        }
        Err(e) => {
            record.converged = if e.is_budget() {
                Convergence::Inf
            } else {
                Convergence::False
            };
            if let Error::OuterNotConverged { iterations, .. } = e {
                record.outer_iterations = iterations;
            }
            record.error = Some(e.to_string());
            None
        }
    };
    record.wall_time_s = start.elapsed().as_secs_f64();
    Ok(RunArtifacts {
        record,
        problem,
        output,
    })
}

pub fn run(config: &RunConfig, cache: Option<&BasisCache>) -> Result<RunRecord> {
    Ok(run_detailed(config, cache)?.record)
}

/// Runs configurations in order; MS runs with a matching basis key reuse the
/// first run's basis.
pub fn sweep(configs: &[RunConfig], cache: &BasisCache) -> Result<Vec<RunRecord>> {
    configs.iter().map(|c| run(c, Some(cache))).collect()
}

#[derive(Debug, Serialize)]
struct CsvRow<'a> {
    case: String,
    level: u8,
    beta: f64,
    zeta: f64,
    method: String,
    mode: String,
    units_total: u64,
    units_basis: u64,
    units_interface: u64,
    outer_iters: usize,
    converged: &'a str,
}

pub const CSV_HEADER: [&str; 11] = [
    "case",
    "level",
    "beta",
    "zeta",
    "method",
    "mode",
    "units_total",
    "units_basis",
    "units_interface",
    "outer_iters",
    "converged",
];

pub fn write_csv<W: io::Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let conv = r.converged.to_string();
        w.serialize(CsvRow {
            case: r.config.case.to_string(),
            level: r.config.geometry.level,
            beta: r.config.beta,
            zeta: r.config.zeta,
            method: r.config.method.to_string(),
            mode: r.config.mode.to_string(),
            units_total: r.units_total,
            units_basis: r.units.basis,
            units_interface: r.units.interface,
            outer_iters: r.outer_iterations,
            converged: &conv,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// The benchmark matrix: the linear case table for every level, then the
/// inertia sweeps (both methods), the heterogeneous sweep and the
/// viscosity-law sweep for every level that supports them.
pub fn default_sweep(levels: &[u8]) -> Vec<RunConfig> {
    let modes = [Mode::Ms, Mode::Dd];
    let betas = [1.0, 1e2, 1e4, 1e6];
    let mut out = Vec::new();
    for &level in levels {
        for case in [Case::I, Case::Ii, Case::Iii, Case::Iv] {
            for mode in modes {
                out.push(RunConfig::benchmark(level, case).with_mode(mode));
            }
        }
    }
    for &level in levels {
        for method in [Method::FixedPoint, Method::Newton] {
            for case in [Case::I, Case::Iii] {
                for beta in betas {
                    for mode in modes {
                        out.push(
                            RunConfig::benchmark(level, case)
                                .with_beta(beta)
                                .with_method(method)
                                .with_mode(mode),
                        );
                    }
                }
            }
        }
        if level == 2 {
            for beta in betas {
                for mode in modes {
                    out.push(
                        RunConfig::benchmark(level, Case::Heterogeneous)
                            .with_beta(beta)
                            .with_mode(mode),
                    );
                }
            }
        }
        for case in [Case::I, Case::Iii] {
            for zeta in [0.5, 5.0, 7.5] {
                for mode in modes {
                    out.push(
                        RunConfig::benchmark(level, case)
                            .with_beta(20.0)
                            .with_zeta(zeta)
                            .with_mode(mode),
                    );
                }
            }
        }
    }
    out
}

/// Files and records of a sweep written by [`run_sweep`].
#[derive(Debug)]
pub struct SweepOutput {
    pub records: Vec<RunRecord>,
    pub csv: PathBuf,
    pub json: PathBuf,
    /// One directory per converged linear MS run with its field output.
    pub vtk_dirs: Vec<PathBuf>,
}

/// Runs `configs` in order and writes `sweep.csv`, `records.json` and, for
/// converged linear MS runs, VTK fields under `vtk/level<L>-case-<c>`.
/// `on_run` sees every run before its fields are dropped.
pub fn run_sweep(
    configs: &[RunConfig],
    cache: &BasisCache,
    dir: &Path,
    mut on_run: impl FnMut(&RunArtifacts),
) -> Result<SweepOutput> {
    std::fs::create_dir_all(dir)?;
    let mut records = Vec::with_capacity(configs.len());
    let mut vtk_dirs = Vec::new();
    for cfg in configs {
        let art = run_detailed(cfg, Some(cache))?;
        let linear_ms = cfg.beta == 0.0 && cfg.zeta == 0.0 && cfg.mode == Mode::Ms;
        if let (true, Some(out)) = (linear_ms, &art.output) {
            let sub = dir
                .join("vtk")
                .join(format!("level{}-case-{}", cfg.geometry.level, cfg.case));
            export_fields(&art.problem.mesh, &out.report.final_state, &out.fields, &sub)?;
            vtk_dirs.push(sub);
        }
        on_run(&art);
        records.push(art.record);
    }
    let csv = dir.join("sweep.csv");
    write_csv(&records, std::fs::File::create(&csv)?)?;
    let json = dir.join("records.json");
    std::fs::write(&json, serde_json::to_string_pretty(&records)?)?;
    Ok(SweepOutput {
        records,
        csv,
        json,
        vtk_dirs,
    })
}
