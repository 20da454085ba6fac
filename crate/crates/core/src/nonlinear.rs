//! Outer linearizations of the fracture-network problem: lagged-coefficient
//! fixed point and Newton, plus the full driver (data response, optional
//! basis, outer loop, recovery).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interface::{
    apply_s_gamma, build_preconditioner, solve_linear_interface, FluxOperator, FractureSystem, GmresConfig,
    InterfaceState, Linearization,
};
use crate::linalg::{norm2, relative_diff_inf};
use crate::msbasis::{assemble_basis, MultiscaleFluxBasis};
use crate::problem::{Problem, SourceResponse};
use crate::subdomain::{SolveCounter, SolveUnits, SubdomainFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FixedPoint,
    Newton,
}

/// How `S_γ` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Precomputed multiscale flux basis.
    Ms,
    /// Sub-domain solves at every application.
    Dd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterConfig {
    pub method: Method,
    pub tol_outer: f64,
    pub max_outer: usize,
    pub gmres: GmresConfig,
    /// Start each inner solve from the previous outer iterate.
    pub warm_start: bool,
    /// Use the LU of the fracture block as (right) preconditioner.
    pub preconditioned: bool,
}

impl Default for OuterConfig {
    fn default() -> Self {
        Self {
            method: Method::FixedPoint,
            tol_outer: 1e-6,
            max_outer: 10_000,
            gmres: GmresConfig {
                tol: 1e-6,
                max_iter: 10_000,
            },
            warm_start: true,
            preconditioned: true,
        }
    }
}

impl OuterConfig {
    pub fn check(&self) -> Result<()> {
        if [self.tol_outer, self.gmres.tol].iter().any(|t| t.is_nan() || *t <= 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.max_outer == 0 || self.gmres.max_iter == 0 {
            return Err(Error::Config("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterReport {
    pub outer_iterations: usize,
    /// GMRes iterations of the linear initial guess.
    pub initial_iterations: usize,
    /// GMRes iterations per outer step.
    pub inner_iterations: Vec<usize>,
    /// Relative update of `(p, u)` per outer step.
    pub updates: Vec<f64>,
    /// `‖F‖₂ / ‖b‖₂` after each Newton step (empty for the fixed point).
    pub residuals: Vec<f64>,
    pub units: SolveUnits,
    pub converged: bool,
    pub final_state: InterfaceState,
}

/// A state together with its cached `S_γ(p)`.
#[derive(Debug, Clone)]
pub struct Iterate {
    pub state: InterfaceState,
    pub s_p: Vec<f64>,
    pub iterations: usize,
}

/// Solution of the linear (`β = 0`, `ζ = 0`) interface problem from zero.
pub fn initial_guess(
    problem: &Problem,
    flux: FluxOperator,
    g: &[f64],
    counter: &SolveCounter,
    config: &OuterConfig,
) -> Result<Iterate> {
    let zero = InterfaceState::zeros(&problem.layout);
    let system = FractureSystem::assemble(problem, &zero, Linearization::Linear)?;
    let lu = config
        .preconditioned
        .then(|| build_preconditioner(&system))
        .transpose()?;
    let b = system.rhs_with(g);
    let sol = solve_linear_interface(&system, flux, counter, &b, None, lu.as_ref(), &config.gmres)?;
    Ok(Iterate {
        state: sol.state,
        s_p: sol.s_p,
        iterations: sol.iterations,
    })
}

/// `F(w) = A(w)w + [0; W⊙S_γ(p); 0] − b` for a given `s_p = S_γ(p)`.
pub fn residual_with(problem: &Problem, g: &[f64], state: &InterfaceState, s_p: &[f64]) -> Result<Vec<f64>> {
    let system = FractureSystem::assemble(problem, state, Linearization::Picard)?;
    let mut f = system.apply_with(&state.to_vec(), s_p);
    for (fi, bi) in f.iter_mut().zip(system.rhs_with(g)) {
        *fi -= bi;
    }
    Ok(f)
}

/// Residual of the nonlinear interface system; evaluates `S_γ` once.
pub fn residual(
    problem: &Problem,
    flux: FluxOperator,
    g: &[f64],
    state: &InterfaceState,
    counter: &SolveCounter,
) -> Result<Vec<f64>> {
    let s = apply_s_gamma(&flux, &state.p, counter)?;
    residual_with(problem, g, state, &s)
}

fn rhs_norm(problem: &Problem, g: &[f64]) -> Result<f64> {
    let zero = InterfaceState::zeros(&problem.layout);
    let system = FractureSystem::assemble(problem, &zero, Linearization::Linear)?;
    Ok(norm2(&system.rhs_with(g)))
}

/// Fixed-point iteration with lagged coefficient `F⁻¹(w^{k−1})`.
pub fn fixed_point_solve(
    problem: &Problem,
    flux: FluxOperator,
    g: &[f64],
    counter: &SolveCounter,
    config: &OuterConfig,
) -> Result<OuterReport> {
    config.check()?;
    let init = initial_guess(problem, flux, g, counter, config)?;
    let (mut state, mut s_p) = (init.state, init.s_p);
    let (mut inner, mut updates) = (Vec::new(), Vec::new());
    for _ in 0..config.max_outer {
        let system = FractureSystem::assemble(problem, &state, Linearization::Picard)?;
        let lu = config
            .preconditioned
            .then(|| build_preconditioner(&system))
            .transpose()?;
        let b = system.rhs_with(g);
        let warm = config.warm_start.then_some((&state, s_p.as_slice()));
        let sol = solve_linear_interface(&system, flux, counter, &b, warm, lu.as_ref(), &config.gmres)?;
        let update = relative_diff_inf(&sol.state.pu(), &state.pu());
        inner.push(sol.iterations);
        updates.push(update);
        state = sol.state;
        s_p = sol.s_p;
        if update < config.tol_outer {
            return Ok(OuterReport {
                outer_iterations: inner.len(),
                initial_iterations: init.iterations,
                inner_iterations: inner,
                updates,
                residuals: Vec::new(),
                units: counter.snapshot(),
                converged: true,
                final_state: state,
            });
        }
    }
    Err(Error::OuterNotConverged {
        iterations: config.max_outer,
        last_update: updates.last().copied().unwrap_or(f64::NAN),
    })
}

/// Newton iteration `J(w^k) δ = −F(w^k)`, started from the linear solution.
/// Stops when both the relative update and `‖F‖₂ / ‖b‖₂` are below
/// `tol_outer`.
pub fn newton_solve(
    problem: &Problem,
    flux: FluxOperator,
    g: &[f64],
    counter: &SolveCounter,
    config: &OuterConfig,
) -> Result<OuterReport> {
    config.check()?;
    if problem.params.laws.iter().any(|l| l.zeta != 0.0) {
        return Err(Error::NewtonRequiresStandardLaw);
    }
    let bnorm = rhs_norm(problem, g)?;
    let scale = if bnorm > 0.0 { bnorm } else { 1.0 };
    let init = initial_guess(problem, flux, g, counter, config)?;
    let (mut state, mut s_p) = (init.state, init.s_p);
    let mut f = residual_with(problem, g, &state, &s_p)?;
    let mut fnorm = norm2(&f);
    let (mut inner, mut updates, mut residuals) = (Vec::new(), Vec::new(), Vec::new());
    let mut growth = 0;
    let gm = GmresConfig {
        tol: config.gmres.tol * scale,
        ..config.gmres
    };
    for _ in 0..config.max_outer {
        let jac = FractureSystem::assemble(problem, &state, Linearization::Newton)?;
        let lu = config.preconditioned.then(|| build_preconditioner(&jac)).transpose()?;
        let minus_f: Vec<f64> = f.iter().map(|v| -v).collect();
        let sol = solve_linear_interface_abs(&jac, flux, counter, &minus_f, lu.as_ref(), &gm)?;
        let mut next = state.to_vec();
        for (x, d) in next.iter_mut().zip(sol.state.to_vec()) {
            *x += d;
        }
        let next = InterfaceState::from_vec(&problem.layout, &next);
        let s_next: Vec<f64> = s_p.iter().zip(&sol.s_p).map(|(a, b)| a + b).collect();
        let update = relative_diff_inf(&next.pu(), &state.pu());
        let f_next = residual_with(problem, g, &next, &s_next)?;
        let fn_next = norm2(&f_next);
        inner.push(sol.iterations);
        updates.push(update);
        residuals.push(fn_next / scale);
        growth = if fn_next > fnorm { growth + 1 } else { 0 };
        state = next;
        s_p = s_next;
        f = f_next;
        fnorm = fn_next;
        if update < config.tol_outer && fnorm <= config.tol_outer * scale {
            return Ok(OuterReport {
                outer_iterations: inner.len(),
                initial_iterations: init.iterations,
                inner_iterations: inner,
                updates,
                residuals,
                units: counter.snapshot(),
                converged: true,
                final_state: state,
            });
        }
        if growth >= 3 {
            return Err(Error::NewtonDiverged(growth));
        }
    }
    Err(Error::OuterNotConverged {
        iterations: config.max_outer,
        last_update: updates.last().copied().unwrap_or(f64::NAN),
    })
}

/// Solves `A δ = r` from zero to the absolute target `config.tol`.
fn solve_linear_interface_abs(
    system: &FractureSystem,
    flux: FluxOperator,
    counter: &SolveCounter,
    r: &[f64],
    precond: Option<&crate::linalg::SparseLu>,
    config: &GmresConfig,
) -> Result<crate::interface::LinearSolve> {
    let rn = norm2(r);
    if rn == 0.0 {
        let layout = &system.layout;
        return Ok(crate::interface::LinearSolve {
            state: InterfaceState::zeros(layout),
            s_p: vec![0.0; layout.n_p],
            iterations: 0,
            history: vec![0.0],
        });
    }
    let relative = GmresConfig {
        tol: config.tol / rn,
        ..*config
    };
    solve_linear_interface(system, flux, counter, r, None, precond, &relative)
}

/// Everything a full run produces.
#[derive(Debug, Clone)]
pub struct DriverOutput {
    pub report: OuterReport,
    pub fields: Vec<SubdomainFields>,
    pub source: SourceResponse,
    /// The basis assembled during this run, if any.
    pub built_basis: Option<MultiscaleFluxBasis>,
}

/// Data response, basis (MS mode, unless `cached`), outer loop, recovery.
pub fn network_driver(
    problem: &Problem,
    mode: Mode,
    cached: Option<&MultiscaleFluxBasis>,
    config: &OuterConfig,
    counter: &SolveCounter,
) -> Result<DriverOutput> {
    config.check()?;
    let source = problem.source_response(counter)?;
    let built_basis = match (mode, cached) {
        (Mode::Ms, None) => Some(assemble_basis(problem, counter)?),
        _ => None,
    };
    let flux = match mode {
        Mode::Dd => FluxOperator::Direct(problem),
        Mode::Ms => FluxOperator::multiscale(problem, cached.or(built_basis.as_ref()).expect("basis available"))?,
    };
    let mut report = match config.method {
        Method::FixedPoint => fixed_point_solve(problem, flux, &source.g, counter, config)?,
        Method::Newton => newton_solve(problem, flux, &source.g, counter, config)?,
    };
    let fields = problem.recover(&report.final_state.p, &source, counter)?;
    report.units = counter.snapshot();
    Ok(DriverOutput {
        report,
        fields,
        source,
        built_basis,
    })
}
