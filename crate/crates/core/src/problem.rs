//! A mixed-dimensional flow problem: mesh, parameters and the factorized
//! sub-domain systems with their mortar projections.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::MixedDimMesh;
use crate::mfem::{BoundaryConditions, FractureLaw, MatrixPermeability};
use crate::mortar::{build_projection, Direction, MortarProjection};
use crate::subdomain::{Phase, RobinSubdomainSystem, SolveCounter, SubdomainFields};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub perm: MatrixPermeability,
    /// One law per fracture (not per branch).
    pub laws: Vec<FractureLaw>,
    pub bc: BoundaryConditions,
    /// Cell source density per sub-domain; zero when `None`.
    pub matrix_source: Option<Vec<Vec<f64>>>,
    /// Fracture source density per mortar cell; zero when `None`.
    pub fracture_source: Option<Vec<f64>>,
    /// Converts a prescribed normal flux density on the outer boundary into
    /// a fracture flux at branch ends (the aperture).
    pub fracture_flux_scale: f64,
}

impl Parameters {
    /// Same law on every fracture of `mesh`, benchmark boundary data.
    pub fn uniform(mesh: &MixedDimMesh, law: FractureLaw) -> Self {
        Self {
            perm: MatrixPermeability::Isotropic(1.0),
            laws: vec![law; mesh.network.fractures.len()],
            bc: BoundaryConditions::benchmark(),
            matrix_source: None,
            fracture_source: None,
            fracture_flux_scale: mesh.network.aperture,
        }
    }

    pub fn with_laws(self, laws: Vec<FractureLaw>) -> Self {
        Self { laws, ..self }
    }

    pub fn with_bc(self, bc: BoundaryConditions) -> Self {
        Self { bc, ..self }
    }

    /// The same parameters with every law made linear (`β = 0`, `ζ = 0`).
    pub fn linearized(&self) -> Self {
        Self {
            laws: self.laws.iter().map(|l| l.linearized()).collect(),
            ..self.clone()
        }
    }
}

/// Position of the fracture unknowns in the interface vector `[U; P; P_T]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractureLayout {
    /// First velocity dof of each branch (branch `b` has `n_b + 1` nodes).
    pub u_offsets: Vec<usize>,
    /// First mortar pressure dof of each branch.
    pub p_offsets: Vec<usize>,
    pub n_u: usize,
    pub n_p: usize,
    pub n_t: usize,
}

impl FractureLayout {
    pub fn new(mesh: &MixedDimMesh) -> Self {
        let (mut u_offsets, mut p_offsets) = (Vec::new(), Vec::new());
        let (mut nu, mut np) = (0, 0);
        for b in &mesh.branches {
            u_offsets.push(nu);
            p_offsets.push(np);
            nu += b.mortar.n_cells() + 1;
            np += b.mortar.n_cells();
        }
        Self {
            u_offsets,
            p_offsets,
            n_u: nu,
            n_p: np,
            n_t: mesh.n_intersections(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n_u + self.n_p + self.n_t
    }
}

/// Data response of all sub-domains: the interface source `g_γ` on the
/// mortar grid plus the per-sub-domain fields kept for recovery.
#[derive(Debug, Clone)]
pub struct SourceResponse {
    pub g: Vec<f64>,
    pub fields: Vec<SubdomainFields>,
}

#[derive(Debug)]
pub struct Problem {
    pub mesh: Arc<MixedDimMesh>,
    pub params: Parameters,
    pub systems: Vec<RobinSubdomainSystem>,
    /// `projections[i][k]` belongs to `systems[i].blocks[k]`.
    pub projections: Vec<Vec<MortarProjection>>,
    pub layout: FractureLayout,
}

impl Problem {
    pub fn new(mesh: Arc<MixedDimMesh>, params: Parameters) -> Result<Self> {
        if params.laws.len() != mesh.network.fractures.len() {
            return Err(Error::DimensionMismatch {
                what: "fracture laws",
                expected: mesh.network.fractures.len(),
                got: params.laws.len(),
            });
        }
        for law in &params.laws {
            law.check()?;
        }
        let systems: Vec<RobinSubdomainSystem> = mesh
            .subdomains
            .par_iter()
            .map(|sd| {
                let source = params.matrix_source.as_ref().map(|s| s[sd.id].as_slice());
                RobinSubdomainSystem::new(
                    sd,
                    &mesh.traces[sd.id],
                    &params.perm,
                    |b| params.laws[mesh.branches[b].fracture].alpha,
                    &params.bc,
                    source,
                )
            })
            .collect::<Result<_>>()?;
        let mut projections = Vec::with_capacity(systems.len());
        for sys in &systems {
            let mut list = Vec::with_capacity(sys.blocks.len());
            for block in &sys.blocks {
                let trace = mesh.trace(sys.id, block.branch).expect("trace exists for block");
                let branch = &mesh.branches[block.branch];
                list.push(build_projection(sys.id, block.branch, &trace.grid, &branch.mortar)?);
            }
            projections.push(list);
        }
        let layout = FractureLayout::new(&mesh);
        Ok(Self {
            mesh,
            params,
            systems,
            projections,
            layout,
        })
    }

    pub fn n_mortar(&self) -> usize {
        self.layout.n_p
    }

    pub fn law_of_branch(&self, branch: usize) -> &FractureLaw {
        &self.params.laws[self.mesh.branches[branch].fracture]
    }

    /// Restricts a global mortar vector to the trace datum of sub-domain `i`.
    pub fn mortar_to_trace(&self, i: usize, phi: &[f64]) -> Result<Vec<f64>> {
        let sys = &self.systems[i];
        let mut lambda = vec![0.0; sys.n_trace()];
        for (block, proj) in sys.blocks.iter().zip(&self.projections[i]) {
            let off = self.layout.p_offsets[block.branch];
            let local = proj.apply(&phi[off..off + proj.n_mortar()], Direction::ToTrace)?;
            lambda[block.offset..block.offset + local.len()].copy_from_slice(&local);
        }
        Ok(lambda)
    }

    /// Adds the mortar projection of a trace vector of sub-domain `i` into
    /// the global mortar vector `out`.
    pub fn trace_to_mortar_add(&self, i: usize, trace: &[f64], out: &mut [f64]) -> Result<()> {
        let sys = &self.systems[i];
        for (block, proj) in sys.blocks.iter().zip(&self.projections[i]) {
            let off = self.layout.p_offsets[block.branch];
            let local = proj.apply(&trace[block.offset..block.offset + proj.n_trace()], Direction::ToMortar)?;
            for (o, v) in out[off..off + local.len()].iter_mut().zip(local) {
                *o += v;
            }
        }
        Ok(())
    }

    /// Computes `g_γ = −Σ_i Dᵀ S^RtN_i(0, f_i)` with one solve sweep.
    pub fn source_response(&self, counter: &SolveCounter) -> Result<SourceResponse> {
        counter.charge(Phase::Source, 1)?;
        let per: Vec<(Vec<f64>, SubdomainFields)> =
            self.systems.par_iter().map(|s| s.g_response()).collect::<Result<_>>()?;
        let mut g = vec![0.0; self.n_mortar()];
        let mut fields = Vec::with_capacity(per.len());
        for (i, (flux, f)) in per.into_iter().enumerate() {
            let neg: Vec<f64> = flux.iter().map(|v| -v).collect();
            self.trace_to_mortar_add(i, &neg, &mut g)?;
            fields.push(f);
        }
        Ok(SourceResponse { g, fields })
    }

    /// Recovers all sub-domain fields from a mortar pressure with one sweep.
    pub fn recover(
        &self,
        p_mortar: &[f64],
        source: &SourceResponse,
        counter: &SolveCounter,
    ) -> Result<Vec<SubdomainFields>> {
        counter.charge(Phase::Recovery, 1)?;
        (0..self.systems.len())
            .into_par_iter()
            .map(|i| {
                let lambda = self.mortar_to_trace(i, p_mortar)?;
                self.systems[i].recover_solution(&lambda, &source.fields[i])
            })
            .collect()
    }
}
