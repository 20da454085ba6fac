//! Factorized sub-domain Robin problems and solve-unit accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{SubdomainMesh, TraceMap};
use crate::linalg::{Csr, SparseLu, Triplets};
use crate::mfem::{assemble_subdomain, BoundaryConditions, MatrixPermeability, SubdomainMatrices};

/// Cost phases of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Basis,
    Source,
    Interface,
    Recovery,
}

/// Snapshot of a [`SolveCounter`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveUnits {
    pub basis: u64,
    pub source: u64,
    pub interface: u64,
    pub recovery: u64,
}

impl SolveUnits {
    pub fn total(&self) -> u64 {
        self.basis + self.source + self.interface + self.recovery
    }
}

/// Counts sweeps of higher-dimensional sub-domain solves, optionally under a
/// budget. Units are checked against the budget before they are charged, so
/// a run never exceeds it.
#[derive(Debug, Default)]
pub struct SolveCounter {
    phases: [AtomicU64; 4],
    total: AtomicU64,
    budget: Option<u64>,
}

impl SolveCounter {
    pub fn new(budget: Option<u64>) -> Self {
        Self {
            budget,
            ..Self::default()
        }
    }

    pub fn unlimited() -> Self {
        Self::new(None)
    }

    pub fn budget(&self) -> Option<u64> {
        self.budget
    }

    fn slot(phase: Phase) -> usize {
        match phase {
            Phase::Basis => 0,
            Phase::Source => 1,
            Phase::Interface => 2,
            Phase::Recovery => 3,
        }
    }

    pub fn charge(&self, phase: Phase, units: u64) -> Result<()> {
        let mut used = self.total.load(Ordering::SeqCst);
        loop {
            if let Some(budget) = self.budget {
                if used + units > budget {
                    return Err(Error::BudgetExceeded {
                        used,
                        requested: units,
                        budget,
                    });
                }
            }
            match self
                .total
                .compare_exchange(used, used + units, Ordering::SeqCst, Ordering::SeqCst)
            {
                Ok(_) => break,
                Err(now) => used = now,
            }
        }
        self.phases[Self::slot(phase)].fetch_add(units, Ordering::SeqCst);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> SolveUnits {
        let get = |p| self.phases[Self::slot(p)].load(Ordering::SeqCst);
        SolveUnits {
            basis: get(Phase::Basis),
            source: get(Phase::Source),
            interface: get(Phase::Interface),
            recovery: get(Phase::Recovery),
        }
    }
}

/// Mixed solution on one sub-domain: edge fluxes and cell pressures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdomainFields {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
}

impl SubdomainFields {
    pub fn zeros(n_edges: usize, n_cells: usize) -> Self {
        Self {
            u: vec![0.0; n_edges],
            p: vec![0.0; n_cells],
        }
    }

    pub fn add(&self, other: &SubdomainFields) -> SubdomainFields {
        SubdomainFields {
            u: self.u.iter().zip(&other.u).map(|(a, b)| a + b).collect(),
            p: self.p.iter().zip(&other.p).map(|(a, b)| a + b).collect(),
        }
    }
}

/// Which data enter a Robin solve besides the trace datum.
#[derive(Debug, Clone, Copy)]
pub enum Load<'a> {
    /// Homogeneous source and boundary data.
    Zero,
    /// The given cell source density, homogeneous boundary data.
    Source(&'a [f64]),
    /// The system's own source and boundary data.
    Data,
}

/// Trace edges of one incident branch inside the system's trace layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBlock {
    pub branch: usize,
    pub edges: Vec<usize>,
    pub offset: usize,
}

/// One sub-domain's mixed system with its saddle-point LU factorization.
#[derive(Debug)]
pub struct RobinSubdomainSystem {
    pub id: usize,
    pub matrices: SubdomainMatrices,
    pub blocks: Vec<TraceBlock>,
    areas: Vec<f64>,
    edge_lengths: Vec<f64>,
    source: Vec<f64>,
    n_trace: usize,
    lu: SparseLu,
}

impl RobinSubdomainSystem {
    /// Assembles and factorizes. `source` is a cell source density (zero when
    /// `None`); `alpha(branch)` gives the Robin coefficient per branch.
    pub fn new(
        mesh: &SubdomainMesh,
        traces: &[TraceMap],
        perm: &MatrixPermeability,
        alpha: impl Fn(usize) -> f64,
        bc: &BoundaryConditions,
        source: Option<&[f64]>,
    ) -> Result<Self> {
        let matrices = assemble_subdomain(mesh, traces, perm, alpha, bc)?;
        let (ne, nt) = (mesh.n_edges(), mesh.n_cells());
        let source = match source {
            Some(f) if f.len() != nt => {
                return Err(Error::DimensionMismatch {
                    what: "sub-domain source",
                    expected: nt,
                    got: f.len(),
                })
            }
            Some(f) => f.to_vec(),
            None => vec![0.0; nt],
        };
        let saddle = saddle_matrix(&matrices, ne, nt);
        let lu = SparseLu::factor(&saddle, &format!("sub-domain {}", mesh.id))?;
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (branch, edges) in &matrices.trace_rows {
            blocks.push(TraceBlock {
                branch: *branch,
                edges: edges.clone(),
                offset,
            });
            offset += edges.len();
        }
        Ok(Self {
            id: mesh.id,
            blocks,
            areas: (0..nt).map(|t| mesh.area(t)).collect(),
            edge_lengths: mesh.edges.iter().map(|e| e.length).collect(),
            source,
            n_trace: offset,
            lu,
            matrices,
        })
    }

    pub fn n_edges(&self) -> usize {
        self.edge_lengths.len()
    }

    pub fn n_cells(&self) -> usize {
        self.areas.len()
    }

    /// Length of the concatenated trace layout over all incident branches.
    pub fn n_trace(&self) -> usize {
        self.n_trace
    }

    pub fn block(&self, branch: usize) -> Option<&TraceBlock> {
        self.blocks.iter().find(|b| b.branch == branch)
    }

    /// The full saddle-point matrix, fixed rows replaced by identity rows.
    pub fn saddle(&self) -> Csr {
        saddle_matrix(&self.matrices, self.n_edges(), self.n_cells())
    }

    /// Right-hand side for trace datum `lambda` (a pressure per trace edge).
    pub fn rhs(&self, lambda: &[f64], load: Load) -> Result<Vec<f64>> {
        if lambda.len() != self.n_trace {
            return Err(Error::DimensionMismatch {
                what: "Robin trace datum",
                expected: self.n_trace,
                got: lambda.len(),
            });
        }
        let (ne, nt) = (self.n_edges(), self.n_cells());
        let mut rhs = vec![0.0; ne + nt];
        for block in &self.blocks {
            for (k, &e) in block.edges.iter().enumerate() {
                rhs[e] -= lambda[block.offset + k];
            }
        }
        match load {
            Load::Zero => {}
            Load::Source(f) => {
                if f.len() != nt {
                    return Err(Error::DimensionMismatch {
                        what: "sub-domain source",
                        expected: nt,
                        got: f.len(),
                    });
                }
                for t in 0..nt {
                    rhs[ne + t] = f[t] * self.areas[t];
                }
            }
            Load::Data => {
                for (r, b) in rhs.iter_mut().zip(&self.matrices.boundary_load) {
                    *r += b;
                }
                for t in 0..nt {
                    rhs[ne + t] = self.source[t] * self.areas[t];
                }
            }
        }
        for (e, fixed) in self.matrices.fixed.iter().enumerate() {
            if let Some(v) = fixed {
                rhs[e] = if matches!(load, Load::Data) { *v } else { 0.0 };
            }
        }
        Ok(rhs)
    }

    pub fn solve_robin(&self, lambda: &[f64], load: Load) -> Result<SubdomainFields> {
        let rhs = self.rhs(lambda, load)?;
        let x = self.lu.solve(&rhs);
        let ne = self.n_edges();
        Ok(SubdomainFields {
            u: x[..ne].to_vec(),
            p: x[ne..].to_vec(),
        })
    }

    /// Robin-to-Neumann flux `−u·n` on the trace edges for `(λ, f = 0)`.
    pub fn rtn_flux(&self, lambda: &[f64]) -> Result<Vec<f64>> {
        let fields = self.solve_robin(lambda, Load::Zero)?;
        Ok(self.trace_flux(&fields))
    }

    /// `−u·n` density on the trace edges of a given solution.
    pub fn trace_flux(&self, fields: &SubdomainFields) -> Vec<f64> {
        let mut out = vec![0.0; self.n_trace];
        for block in &self.blocks {
            for (k, &e) in block.edges.iter().enumerate() {
                out[block.offset + k] = -fields.u[e] / self.edge_lengths[e];
            }
        }
        out
    }

    /// Response to the source and boundary data with zero Robin datum:
    /// the trace flux `−u(0, f)·n` and the fields kept for recovery.
    pub fn g_response(&self) -> Result<(Vec<f64>, SubdomainFields)> {
        let fields = self.solve_robin(&vec![0.0; self.n_trace], Load::Data)?;
        Ok((self.trace_flux(&fields), fields))
    }

    /// Superposes the Robin response to `lambda` with the cached data response.
    pub fn recover_solution(&self, lambda: &[f64], data: &SubdomainFields) -> Result<SubdomainFields> {
        Ok(self.solve_robin(lambda, Load::Zero)?.add(data))
    }

    /// Cellwise divergence `∇·u_h` of a solution.
    pub fn divergence(&self, fields: &SubdomainFields) -> Vec<f64> {
        let div = self.matrices.b.matvec(&fields.u);
        div.iter().zip(&self.areas).map(|(d, a)| d / a).collect()
    }

    pub fn source(&self) -> &[f64] {
        &self.source
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        self.edge_lengths[e]
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }
}

fn saddle_matrix(m: &SubdomainMatrices, ne: usize, nt: usize) -> Csr {
    let mut t = Triplets::new(ne + nt, ne + nt);
    for (i, j, v) in m.a.iter() {
        if m.fixed[i].is_none() {
            t.push(i, j, v);
        }
    }
    for (c, e, v) in m.b.iter() {
        if m.fixed[e].is_none() {
            t.push(e, ne + c, -v);
        }
        t.push(ne + c, e, v);
    }
    for (e, f) in m.fixed.iter().enumerate() {
        if f.is_some() {
            t.push(e, e, 1.0);
        }
    }
    t.into_csr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_single_fracture_geometry, MortarConfig};
    use crate::linalg::{norm_inf, relative_diff_inf};

    fn system(n: usize, bc: BoundaryConditions, f: Option<&[f64]>) -> (RobinSubdomainSystem, SubdomainMesh) {
        let mesh = build_single_fracture_geometry(n, &MortarConfig::conforming()).unwrap();
        let sd = mesh.subdomains[0].clone();
        let sys = RobinSubdomainSystem::new(
            &sd,
            &mesh.traces[0],
            &MatrixPermeability::Isotropic(1.0),
            |_| 1.0,
            &bc,
            f,
        )
        .unwrap();
        (sys, sd)
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let (sys, _) = system(2, BoundaryConditions::benchmark(), None);
        let out = sys.solve_robin(&vec![0.0; sys.n_trace()], Load::Zero).unwrap();
        assert_eq!(norm_inf(&out.u), 0.0);
        assert_eq!(norm_inf(&out.p), 0.0);
    }

    #[test]
    fn robin_solve_is_linear_and_superposes() {
        let (sys, sd) = system(3, BoundaryConditions::zero_pressure(), None);
        let lam: Vec<f64> = (0..sys.n_trace()).map(|i| 0.3 + i as f64).collect();
        let lam2: Vec<f64> = lam.iter().map(|v| 2.0 * v).collect();
        let a = sys.solve_robin(&lam, Load::Zero).unwrap();
        let b = sys.solve_robin(&lam2, Load::Zero).unwrap();
        let a2: Vec<f64> = a.u.iter().map(|v| 2.0 * v).collect();
        assert!(relative_diff_inf(&b.u, &a2) < 1e-12);

        let f: Vec<f64> = (0..sd.n_cells()).map(|t| (t as f64 * 0.7).sin()).collect();
        let both = sys.solve_robin(&lam, Load::Source(&f)).unwrap();
        let only_f = sys.solve_robin(&vec![0.0; sys.n_trace()], Load::Source(&f)).unwrap();
        let sum = a.add(&only_f);
        assert!(relative_diff_inf(&both.u, &sum.u) < 1e-12);
        assert!(relative_diff_inf(&both.p, &sum.p) < 1e-12);
    }

    #[test]
    fn residual_of_factorized_solve_is_small() {
        let (sys, _) = system(4, BoundaryConditions::benchmark(), None);
        let lam: Vec<f64> = (0..sys.n_trace()).map(|i| (i as f64).cos()).collect();
        let rhs = sys.rhs(&lam, Load::Data).unwrap();
        let x = sys.lu.solve(&rhs);
        let r = sys.saddle().matvec(&x);
        let res: Vec<f64> = r.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        assert!(norm_inf(&res) / norm_inf(&rhs) < 1e-10);
        // Repeated solves are bit-identical.
        assert_eq!(sys.lu.solve(&rhs), x);
    }

    #[test]
    fn divergence_matches_source() {
        let n = 3;
        let mesh = build_single_fracture_geometry(n, &MortarConfig::conforming()).unwrap();
        let f: Vec<f64> = (0..mesh.subdomains[0].n_cells())
            .map(|t| 1.0 + t as f64 * 0.1)
            .collect();
        let (sys, _) = system(n, BoundaryConditions::benchmark(), Some(&f));
        let (_, fields) = sys.g_response().unwrap();
        for (d, s) in sys.divergence(&fields).iter().zip(&f) {
            assert!((d - s).abs() < 1e-10);
        }
    }

    #[test]
    fn sealed_box_outflow_equals_source_integral() {
        let n = 2;
        let mesh = build_single_fracture_geometry(n, &MortarConfig::conforming()).unwrap();
        let nt = mesh.subdomains[0].n_cells();
        let (sys, sd) = system(n, BoundaryConditions::sealed(), Some(&vec![3.0; nt]));
        let (flux, fields) = sys.g_response().unwrap();
        let area: f64 = (0..nt).map(|t| sd.area(t)).sum();
        let block = &sys.blocks[0];
        let outflow: f64 = block
            .edges
            .iter()
            .enumerate()
            .map(|(k, &e)| -flux[block.offset + k] * sd.edges[e].length)
            .sum();
        assert!((outflow - 3.0 * area).abs() < 1e-10 * 3.0 * area);
        assert!(fields.u.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn counter_respects_budget() {
        let c = SolveCounter::new(Some(5));
        c.charge(Phase::Basis, 3).unwrap();
        c.charge(Phase::Interface, 2).unwrap();
        assert!(c.charge(Phase::Recovery, 1).unwrap_err().is_budget());
        let s = c.snapshot();
        assert_eq!(s.total(), 5);
        assert_eq!(c.total(), 5);
        assert_eq!(s.recovery, 0);
    }
}
