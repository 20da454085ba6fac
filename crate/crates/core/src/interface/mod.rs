//! The reduced fracture-network problem in the unknowns `[U; P; P_T]`:
//! fracture velocities, mortar pressures and intersection pressures.
//!
//! The interface operator is the sparse fracture block plus the mortar flux
//! jump `S_γ`, applied matrix-free either through sub-domain solves or
//! through a precomputed multiscale flux basis.

pub mod gmres;

use std::cell::RefCell;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BranchEnd;
use crate::linalg::{axpy, Csr, SparseLu, Triplets};
use crate::mfem::{assemble_fracture, assemble_newton_jacobian, BoundaryValue};
use crate::msbasis::MultiscaleFluxBasis;
use crate::problem::{FractureLayout, Problem};
use crate::subdomain::{Phase, SolveCounter};

pub use gmres::{gmres_increment, gmres_solve, GmresConfig, GmresOutcome, Identity, LinearOperator, Preconditioner};

/// Fracture unknowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub p_t: Vec<f64>,
}

impl InterfaceState {
    pub fn zeros(layout: &FractureLayout) -> Self {
        Self {
            u: vec![0.0; layout.n_u],
            p: vec![0.0; layout.n_p],
            p_t: vec![0.0; layout.n_t],
        }
    }

    pub fn from_vec(layout: &FractureLayout, x: &[f64]) -> Self {
        let (nu, np) = (layout.n_u, layout.n_p);
        Self {
            u: x[..nu].to_vec(),
            p: x[nu..nu + np].to_vec(),
            p_t: x[nu + np..].to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.u.len() + self.p.len() + self.p_t.len());
        x.extend_from_slice(&self.u);
        x.extend_from_slice(&self.p);
        x.extend_from_slice(&self.p_t);
        x
    }

    /// `(p, u)` concatenated, the quantity monitored by the outer loops.
    pub fn pu(&self) -> Vec<f64> {
        let mut x = self.p.clone();
        x.extend_from_slice(&self.u);
        x
    }
}

/// How the fracture momentum block is linearized around a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Linearization {
    /// `β = 0`, `ζ = 0`: the state is ignored.
    Linear,
    /// Lagged coefficient `F⁻¹(w)`.
    Picard,
    /// Exact derivative of `u ↦ F⁻¹(u)u`.
    Newton,
}

/// Fracture-network part of the interface system at one linearization.
#[derive(Debug, Clone)]
pub struct FractureSystem {
    /// `[[M', −B'ᵀ, C'_Tᵀ], [B, 0, 0], [C_T, 0, 0]]`; primes mark fixed
    /// velocity rows replaced by identity rows.
    pub block: Csr,
    /// Right-hand side without the `g_γ` term.
    pub rhs: Vec<f64>,
    /// Mortar cell lengths.
    pub widths: Vec<f64>,
    /// Intersection rows `Σ u·n` (intersections × velocity dofs).
    pub c_t: Csr,
    pub fixed: Vec<bool>,
    pub layout: FractureLayout,
}

impl FractureSystem {
    pub fn assemble(problem: &Problem, state: &InterfaceState, lin: Linearization) -> Result<Self> {
        let layout = problem.layout.clone();
        let mesh = &problem.mesh;
        let (nu, np, nt) = (layout.n_u, layout.n_p, layout.n_t);
        let dim = layout.dim();
        let mut rhs = vec![0.0; dim];
        let mut fixed = vec![false; nu];
        let mut fixed_value = vec![0.0; nu];
        let scale = problem.params.fracture_flux_scale;

        for (bi, branch) in mesh.branches.iter().enumerate() {
            let n = branch.mortar.n_cells();
            let uo = layout.u_offsets[bi];
            for (k, end) in branch.ends.iter().enumerate() {
                let (node, normal) = if k == 0 { (uo, -1.0) } else { (uo + n, 1.0) };
                match *end {
                    BranchEnd::Intersection(_) => {}
                    BranchEnd::Boundary(side) => match problem.params.bc.on(side) {
                        BoundaryValue::Pressure(pd) => rhs[node] = -pd * normal,
                        BoundaryValue::Flux(q) => {
                            fixed[node] = true;
                            fixed_value[node] = normal * q * scale;
                        }
                    },
                    BranchEnd::Free => fixed[node] = true,
                }
            }
        }

        let mut t = Triplets::new(dim, dim);
        let mut ct = Triplets::new(nt, nu);
        for (bi, branch) in mesh.branches.iter().enumerate() {
            let n = branch.mortar.n_cells();
            let (uo, po) = (layout.u_offsets[bi], layout.p_offsets[bi]);
            let law = problem.law_of_branch(bi);
            let (u, p) = (&state.u[uo..uo + n + 1], &state.p[po..po + n]);
            let fm = match lin {
                Linearization::Linear => assemble_fracture(branch, &law.linearized(), u, p)?,
                Linearization::Picard => assemble_fracture(branch, law, u, p)?,
                Linearization::Newton => assemble_newton_jacobian(branch, law, u, p)?,
            };
            for (i, j, v) in fm.mass.iter() {
                if !fixed[uo + i] {
                    t.push(uo + i, uo + j, v);
                }
            }
            for (c, j, v) in fm.div.iter() {
                t.push(nu + po + c, uo + j, v);
                if !fixed[uo + j] {
                    t.push(uo + j, nu + po + c, -v);
                }
            }
            for k in 0..2 {
                if let BranchEnd::Intersection(ti) = branch.ends[k] {
                    let node = uo + fm.end_nodes[k];
                    let normal = fm.end_normals[k];
                    t.push(node, node, fm.robin_t[k]);
                    t.push(node, nu + np + ti, normal);
                    t.push(nu + np + ti, node, normal);
                    ct.push(ti, node, normal);
                }
            }
        }
        for i in 0..nu {
            if fixed[i] {
                t.push(i, i, 1.0);
                rhs[i] = fixed_value[i];
            }
        }
        let widths = mesh.mortar_widths();
        if let Some(f) = &problem.params.fracture_source {
            for m in 0..np {
                rhs[nu + m] = f[m] * widths[m];
            }
        }
        Ok(Self {
            block: t.into_csr(),
            rhs,
            widths,
            c_t: ct.into_csr(),
            fixed,
            layout,
        })
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    /// Full interface right-hand side for a given `g_γ`.
    pub fn rhs_with(&self, g: &[f64]) -> Vec<f64> {
        let mut b = self.rhs.clone();
        let nu = self.layout.n_u;
        for (m, gm) in g.iter().enumerate() {
            b[nu + m] += self.widths[m] * gm;
        }
        b
    }

    /// `y = block·x + [0; W⊙s; 0]` for a precomputed `s = S_γ(x_P)`.
    pub fn apply_with(&self, x: &[f64], s: &[f64]) -> Vec<f64> {
        let mut y = self.block.matvec(x);
        let nu = self.layout.n_u;
        for (m, sm) in s.iter().enumerate() {
            y[nu + m] += self.widths[m] * sm;
        }
        y
    }
}

/// Sum of `u·n` over the branch ends meeting at each intersection.
pub fn apply_s_t(system: &FractureSystem, u: &[f64]) -> Vec<f64> {
    system.c_t.matvec(u)
}

/// Source of the mortar flux jump `S_γ`.
#[derive(Debug, Clone, Copy)]
pub enum FluxOperator<'a> {
    Direct(&'a Problem),
    Multiscale(&'a MultiscaleFluxBasis),
}

impl<'a> FluxOperator<'a> {
    /// Binds a basis after checking it was built for `problem`.
    pub fn multiscale(problem: &Problem, basis: &'a MultiscaleFluxBasis) -> Result<Self> {
        basis.check_compatible(problem)?;
        Ok(FluxOperator::Multiscale(basis))
    }

    pub fn is_direct(&self) -> bool {
        matches!(self, FluxOperator::Direct(_))
    }
}

/// `S_γ(φ) = −Σ_i Dᵢᵀ uᵢ(Dᵢφ, 0)·nᵢ`. One solve unit in direct mode, none
/// with a basis.
pub fn apply_s_gamma(flux: &FluxOperator, phi: &[f64], counter: &SolveCounter) -> Result<Vec<f64>> {
    match flux {
        FluxOperator::Multiscale(basis) => basis.apply(phi),
        FluxOperator::Direct(problem) => {
            if phi.len() != problem.n_mortar() {
                return Err(Error::DimensionMismatch {
                    what: "mortar vector",
                    expected: problem.n_mortar(),
                    got: phi.len(),
                });
            }
            counter.charge(Phase::Interface, 1)?;
            let parts: Vec<Vec<f64>> = (0..problem.systems.len())
                .into_par_iter()
                .map(|i| {
                    let lambda = problem.mortar_to_trace(i, phi)?;
                    let flux = problem.systems[i].rtn_flux(&lambda)?;
                    let mut out = vec![0.0; problem.n_mortar()];
                    problem.trace_to_mortar_add(i, &flux, &mut out)?;
                    Ok(out)
                })
                .collect::<Result<_>>()?;
            let mut s = vec![0.0; problem.n_mortar()];
            for part in parts {
                axpy(1.0, &part, &mut s);
            }
            Ok(s)
        }
    }
}

/// Matrix-free interface operator. Records `S_γ` of every applied vector so
/// callers can rebuild `S_γ(x)` of a Krylov solution without new solves.
pub struct InterfaceOperator<'a> {
    pub system: &'a FractureSystem,
    pub flux: FluxOperator<'a>,
    pub counter: &'a SolveCounter,
    log: RefCell<Vec<Vec<f64>>>,
}

impl<'a> InterfaceOperator<'a> {
    pub fn new(system: &'a FractureSystem, flux: FluxOperator<'a>, counter: &'a SolveCounter) -> Self {
        Self {
            system,
            flux,
            counter,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn take_log(&self) -> Vec<Vec<f64>> {
        self.log.take()
    }
}

impl LinearOperator for InterfaceOperator<'_> {
    fn dim(&self) -> usize {
        self.system.dim()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let l = &self.system.layout;
        let s = apply_s_gamma(&self.flux, &x[l.n_u..l.n_u + l.n_p], self.counter)?;
        let y = self.system.apply_with(x, &s);
        self.log.borrow_mut().push(s);
        Ok(y)
    }
}

/// LU factorization of the fracture block without `S_γ`.
pub fn build_preconditioner(system: &FractureSystem) -> Result<SparseLu> {
    SparseLu::factor(&system.block, "fracture network block")
}

/// Result of one linear interface solve.
#[derive(Debug, Clone)]
pub struct LinearSolve {
    pub state: InterfaceState,
    /// `S_γ(state.p)`.
    pub s_p: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Solves `(block + S_γ) x = b` by preconditioned GMRes to
/// `‖b − Ax‖₂ ≤ tol ‖b‖₂`. A warm start `(x0, S_γ(x0_P))` costs no extra
/// solves; `precond = None` runs unpreconditioned.
pub fn solve_linear_interface(
    system: &FractureSystem,
    flux: FluxOperator,
    counter: &SolveCounter,
    b: &[f64],
    warm: Option<(&InterfaceState, &[f64])>,
    precond: Option<&SparseLu>,
    config: &GmresConfig,
) -> Result<LinearSolve> {
    let layout = &system.layout;
    let (x0, s0) = match warm {
        Some((state, s)) => (state.to_vec(), s.to_vec()),
        None => (vec![0.0; layout.dim()], vec![0.0; layout.n_p]),
    };
    let ax0 = system.apply_with(&x0, &s0);
    let r0: Vec<f64> = b.iter().zip(&ax0).map(|(bi, ai)| bi - ai).collect();
    let target = config.tol * crate::linalg::norm2(b);
    let op = InterfaceOperator::new(system, flux, counter);
    let out = match precond {
        Some(lu) => gmres_increment(&op, lu, &r0, target, config.max_iter)?,
        None => gmres_increment(&op, &Identity, &r0, target, config.max_iter)?,
    };
    let log = op.take_log();
    let mut x = x0;
    axpy(1.0, &out.solution, &mut x);
    let mut s = s0;
    for (y, sj) in out.coefficients.iter().zip(&log) {
        axpy(*y, sj, &mut s);
    }
    Ok(LinearSolve {
        state: InterfaceState::from_vec(layout, &x),
        s_p: s,
        iterations: out.iterations,
        history: out.history,
    })
}
