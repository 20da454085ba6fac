use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use msfrac_core::bench::{default_sweep, run_detailed, run_sweep, BasisCache, Case, Convergence, RunConfig};
use msfrac_core::geometry::validate;
use msfrac_core::linalg::relative_diff_inf;
use msfrac_core::msbasis::{assemble_basis, save_basis, BasisFingerprint};
use msfrac_core::nonlinear::{Method, Mode};
use msfrac_core::oracle::solve_monolithic;
use msfrac_core::subdomain::SolveCounter;
use msfrac_core::vtk::{export_fields, export_mesh};

#[derive(Parser)]
#[command(
    name = "msfrac",
    version,
    about = "Fracture-network flow with a multiscale flux basis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and validate a mesh, write it as VTK.
    Mesh(Common),
    /// Assemble the multiscale flux basis and store it.
    Basis(Common),
    /// Run one configuration.
    Solve(Common),
    /// Run the benchmark sweep and write a CSV summary.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated mesh levels.
        #[arg(long, value_delimiter = ',', default_value = "1,2")]
        levels: Vec<u8>,
    },
    /// Compare the interface pipeline against the monolithic solve.
    Oracle(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<Case>,
    #[arg(long)]
    level: Option<u8>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    zeta: Option<f64>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    tol_gmres: Option<f64>,
    #[arg(long)]
    tol_outer: Option<f64>,
    /// Solve-unit budget.
    #[arg(long)]
    max_units: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory of cached basis files.
    #[arg(long)]
    basis_dir: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.case {
            c.case = v;
        }
        if let Some(v) = self.level {
            c.geometry.level = v;
        }
        if let Some(v) = self.beta {
            c.beta = v;
        }
        if let Some(v) = self.zeta {
            c.zeta = v;
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.tol_gmres {
            c.tol_gmres = v;
        }
        if let Some(v) = self.tol_outer {
            c.tol_outer = v;
        }
        if let Some(v) = self.max_units {
            c.max_units = v;
        }
        if let Some(v) = &self.out {
            c.output.dir = Some(v.clone());
        }
        if let Some(v) = &self.basis_dir {
            c.output.basis_dir = Some(v.clone());
        }
        Ok(c)
    }
}

fn out_dir(config: &RunConfig, fallback: &str) -> PathBuf {
    config.output.dir.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn cache_for(config: &RunConfig) -> Result<BasisCache> {
    Ok(match &config.output.basis_dir {
        Some(d) => BasisCache::on_disk(d)?,
        None => BasisCache::in_memory(),
    })
}

fn mesh(common: &Common) -> Result<ExitCode> {
    let config = common.config()?;
    let mesh = config.build_mesh()?;
    let violations = validate(&mesh);
    println!(
        "sub-domains {}  triangles {}  branches {}  mortar cells {}  intersections {}",
        mesh.subdomains.len(),
        mesh.n_triangles(),
        mesh.branches.len(),
        mesh.n_mortar(),
        mesh.n_intersections()
    );
    let dir = out_dir(&config, "out/mesh");
    let files = export_mesh(&mesh, &dir)?;
    println!("wrote {} and {}", files.matrix.display(), files.fractures.display());
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("violation: {v:?}");
        }
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn basis(common: &Common) -> Result<ExitCode> {
    let config = common.config()?;
    let problem = config.build_problem()?;
    let counter = SolveCounter::unlimited();
    let basis = assemble_basis(&problem, &counter)?;
    let dir = config
        .output
        .basis_dir
        .clone()
        .unwrap_or_else(|| out_dir(&config, "out/basis"));
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("basis-{}.msfb", BasisFingerprint::of(&problem).short()));
    save_basis(&basis, &path)?;
    println!(
        "{} solve units, {} mortar dofs -> {}",
        counter.total(),
        basis.n_mortar,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn solve(common: &Common) -> Result<ExitCode> {
    let config = common.config()?;
    let cache = cache_for(&config)?;
    let art = run_detailed(&config, Some(&cache))?;
    let r = &art.record;
    println!(
        "case {} level {} beta {} zeta {} {} {}: units {} (basis {}, interface {}), outer {}, converged {}",
        config.case,
        config.geometry.level,
        config.beta,
        config.zeta,
        config.method,
        config.mode,
        r.units_total,
        r.units.basis,
        r.units.interface,
        r.outer_iterations,
        r.converged
    );
    if let Some(e) = &r.error {
        eprintln!("{e}");
    }
    if let Some(dir) = &config.output.dir {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("record.json"), r)?;
        if let Some(out) = &art.output {
            export_fields(&art.problem.mesh, &out.report.final_state, &out.fields, dir)?;
        }
    }
    Ok(if r.converged == Convergence::True {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn bench(common: &Common, levels: &[u8]) -> Result<ExitCode> {
    let base = common.config()?;
    let dir = out_dir(&base, "out/bench");
    let cache = cache_for(&base)?;
    let configs: Vec<RunConfig> = default_sweep(levels)
        .into_iter()
        .map(|cfg| RunConfig {
            tol_gmres: base.tol_gmres,
            tol_outer: base.tol_outer,
            max_units: base.max_units,
            max_outer: base.max_outer,
            ..cfg
        })
        .collect();
    let out = run_sweep(&configs, &cache, &dir, |art| {
        let (c, r) = (&art.record.config, &art.record);
        println!(
            "{:>13} L{} beta {:>7e} zeta {:>3} {:>11} {}: {:>5} units, outer {:>4}, {}",
            c.case, c.geometry.level, c.beta, c.zeta, c.method, c.mode, r.units_total, r.outer_iterations, r.converged
        );
    })?;
    let count = |v| out.records.iter().filter(|r| r.converged == v).count();
    println!(
        "{} runs ({} over budget, {} not converged) -> {}",
        out.records.len(),
        count(Convergence::Inf),
        count(Convergence::False),
        out.csv.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn oracle(common: &Common) -> Result<ExitCode> {
    let config = RunConfig {
        mode: Mode::Dd,
        ..common.config()?
    };
    let art = run_detailed(&config, None)?;
    let Some(out) = &art.output else {
        bail!("interface pipeline failed: {}", art.record.error.unwrap_or_default());
    };
    let mono = solve_monolithic(&art.problem, 1e-10, 10_000)?;
    let d_frac = relative_diff_inf(&out.report.final_state.pu(), &mono.state.pu());
    let flat = |f: &[msfrac_core::subdomain::SubdomainFields]| -> Vec<f64> {
        f.iter().flat_map(|x| x.p.iter().chain(&x.u).copied()).collect()
    };
    let d_matrix = relative_diff_inf(&flat(&out.fields), &flat(&mono.fields));
    println!(
        "fracture rel. diff {d_frac:.3e}, matrix rel. diff {d_matrix:.3e}, oracle iterations {}",
        mono.iterations
    );
    Ok(if d_frac.max(d_matrix) < 1e-5 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Mesh(c) => mesh(c),
        Command::Basis(c) => basis(c),
        Command::Solve(c) => solve(c),
        Command::Bench { common, levels } => bench(common, levels),
        Command::Oracle(c) => oracle(c),
    }
}
