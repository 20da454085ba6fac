//! Lowest-order Raviart–Thomas / P0 kernels.
//!
//! Sub-domain velocity dofs are edge fluxes `∫_e u·n_e`, with `n_e` pointing
//! out of the edge's first triangle. Fracture velocity dofs are nodal
//! tangential fluxes on each branch grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Branch, BranchEnd, EdgeTag, Side, SubdomainMesh};
use crate::linalg::{Csr, Triplets};

/// Below this midpoint speed the Forchheimer derivative term is dropped.
pub const NEWTON_SPEED_FLOOR: f64 = 1e-12;

/// Rock-matrix permeability, uniform over a sub-domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatrixPermeability {
    Isotropic(f64),
    Tensor([[f64; 2]; 2]),
}

impl Default for MatrixPermeability {
    fn default() -> Self {
        MatrixPermeability::Isotropic(1.0)
    }
}

impl MatrixPermeability {
    pub fn tensor(&self) -> [[f64; 2]; 2] {
        match *self {
            MatrixPermeability::Isotropic(k) => [[k, 0.0], [0.0, k]],
            MatrixPermeability::Tensor(t) => t,
        }
    }

    /// `K⁻¹`, failing unless `K` is symmetric positive definite.
    pub fn inverse(&self) -> Result<[[f64; 2]; 2]> {
        let k = self.tensor();
        let det = k[0][0] * k[1][1] - k[0][1] * k[1][0];
        let symmetric = (k[0][1] - k[1][0]).abs() <= 1e-14 * (k[0][1].abs() + k[1][0].abs() + 1.0);
        if !symmetric || k[0][0] <= 0.0 || det <= 0.0 {
            return Err(Error::Assembly(format!("permeability {k:?} is not SPD")));
        }
        Ok([[k[1][1] / det, -k[0][1] / det], [-k[1][0] / det, k[0][0] / det]])
    }
}

/// Outer boundary datum: a pressure, or an outward normal flux density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoundaryValue {
    Pressure(f64),
    Flux(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryConditions {
    pub left: BoundaryValue,
    pub right: BoundaryValue,
    pub bottom: BoundaryValue,
    pub top: BoundaryValue,
}

impl BoundaryConditions {
    /// Inflow on the left, unit pressure on the right, sealed top and bottom.
    pub fn benchmark() -> Self {
        Self {
            left: BoundaryValue::Flux(-1.0),
            right: BoundaryValue::Pressure(1.0),
            bottom: BoundaryValue::Flux(0.0),
            top: BoundaryValue::Flux(0.0),
        }
    }

    /// Homogeneous pressure on every side.
    pub fn zero_pressure() -> Self {
        let p = BoundaryValue::Pressure(0.0);
        Self {
            left: p,
            right: p,
            bottom: p,
            top: p,
        }
    }

    /// No-flow on every side.
    pub fn sealed() -> Self {
        let q = BoundaryValue::Flux(0.0);
        Self {
            left: q,
            right: q,
            bottom: q,
            top: q,
        }
    }

    pub fn on(&self, side: Side) -> BoundaryValue {
        match side {
            Side::Left => self.left,
            Side::Right => self.right,
            Side::Bottom => self.bottom,
            Side::Top => self.top,
        }
    }
}

/// Generalized Forchheimer law `F⁻¹(u, p) = K⁻¹ e^{ζp} + β|u|` plus the
/// normal coupling coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractureLaw {
    /// Tangential permeability `K_γ`.
    pub k: f64,
    /// Forchheimer coefficient `β_γ`.
    pub beta: f64,
    /// Viscosity–pressure exponent.
    pub zeta: f64,
    /// Normal coupling coefficient `α_γ`.
    pub alpha: f64,
    /// Coupling coefficient at intersection points; defaults to `alpha`.
    pub alpha_intersection: Option<f64>,
}

impl FractureLaw {
    pub fn darcy(k: f64, alpha: f64) -> Self {
        Self {
            k,
            beta: 0.0,
            zeta: 0.0,
            alpha,
            alpha_intersection: None,
        }
    }

    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn with_zeta(self, zeta: f64) -> Self {
        Self { zeta, ..self }
    }

    pub fn linearized(self) -> Self {
        Self {
            beta: 0.0,
            zeta: 0.0,
            ..self
        }
    }

    pub fn is_linear(&self) -> bool {
        self.beta == 0.0 && self.zeta == 0.0
    }

    pub fn alpha_t(&self) -> f64 {
        self.alpha_intersection.unwrap_or(self.alpha)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.k > 0.0 && self.beta >= 0.0 && self.alpha > 0.0 && self.alpha_t() > 0.0) || !self.zeta.is_finite() {
            return Err(Error::Assembly(format!("invalid fracture law {self:?}")));
        }
        Ok(())
    }

    /// Lagged coefficient `K⁻¹ e^{ζp} + β|u|`.
    pub fn coefficient(&self, u: f64, p: f64) -> f64 {
        let viscosity = if self.zeta == 0.0 { 1.0 } else { (self.zeta * p).exp() };
        viscosity / self.k + self.beta * u.abs()
    }

    /// Scalar derivative of `u ↦ (K⁻¹ + β|u|) u`, i.e. `K⁻¹ + 2β|u|`.
    pub fn jacobian_coefficient(&self, u: f64) -> f64 {
        if u.abs() < NEWTON_SPEED_FLOOR {
            self.coefficient(u, 0.0)
        } else {
            1.0 / self.k + 2.0 * self.beta * u.abs()
        }
    }
}

/// Assembled sub-domain blocks. The saddle system is `[[A, −Bᵀ], [B, 0]]`.
#[derive(Debug, Clone)]
pub struct SubdomainMatrices {
    pub a: Csr,
    pub b: Csr,
    /// Velocity load from Dirichlet pressure data.
    pub boundary_load: Vec<f64>,
    /// Strongly imposed flux values on Neumann edges.
    pub fixed: Vec<Option<f64>>,
    /// Fracture-trace edges grouped by branch, in mesh trace order.
    pub trace_rows: Vec<(usize, Vec<usize>)>,
}

/// Local RT0 mass matrix `∫ φ_k·G φ_l` for flux basis functions with
/// orientation signs `signs`.
pub fn rt0_local_mass(vertices: [[f64; 2]; 3], g: [[f64; 2]; 2], signs: [f64; 3]) -> [[f64; 3]; 3] {
    let [a, b, c] = vertices;
    let area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]));
    let cen = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
    let quad =
        |x: [f64; 2], y: [f64; 2]| x[0] * (g[0][0] * y[0] + g[0][1] * y[1]) + x[1] * (g[1][0] * y[0] + g[1][1] * y[1]);
    let d = vertices.map(|v| [cen[0] - v[0], cen[1] - v[1]]);
    let spread: f64 = d.iter().map(|&x| quad(x, x)).sum::<f64>() / 12.0;
    let mut m = [[0.0; 3]; 3];
    for k in 0..3 {
        for l in 0..3 {
            m[k][l] = signs[k] * signs[l] * (quad(d[k], d[l]) + spread) / (4.0 * area);
        }
    }
    m
}

/// RT0 velocity at the centroid of triangle `t` from edge fluxes `u`.
pub fn cell_velocity(mesh: &SubdomainMesh, t: usize, u: &[f64]) -> [f64; 2] {
    let c = mesh.centroid(t);
    let area = mesh.area(t);
    let mut v = [0.0; 2];
    for k in 0..3 {
        let a = mesh.vertices[mesh.triangles[t][k]];
        let w = mesh.edge_sign(t, k) * u[mesh.triangle_edges[t][k]] / (2.0 * area);
        v[0] += w * (c[0] - a[0]);
        v[1] += w * (c[1] - a[1]);
    }
    v
}

/// Assembles the sub-domain blocks with Robin coefficients `alpha(branch)`
/// on fracture traces.
pub fn assemble_subdomain(
    mesh: &SubdomainMesh,
    traces: &[crate::geometry::TraceMap],
    perm: &MatrixPermeability,
    alpha: impl Fn(usize) -> f64,
    bc: &BoundaryConditions,
) -> Result<SubdomainMatrices> {
    let g = perm.inverse()?;
    let (ne, nt) = (mesh.n_edges(), mesh.n_cells());
    let mut a = Triplets::new(ne, ne);
    let mut b = Triplets::new(nt, ne);
    for t in 0..nt {
        let verts = mesh.triangles[t].map(|v| mesh.vertices[v]);
        let signs = [0, 1, 2].map(|k| mesh.edge_sign(t, k));
        let local = rt0_local_mass(verts, g, signs);
        let dofs = mesh.triangle_edges[t];
        for k in 0..3 {
            for l in 0..3 {
                a.push(dofs[k], dofs[l], local[k][l]);
            }
            b.push(t, dofs[k], signs[k]);
        }
    }
    let mut boundary_load = vec![0.0; ne];
    let mut fixed = vec![None; ne];
    for (e, edge) in mesh.edges.iter().enumerate() {
        match edge.tag {
            EdgeTag::Interior => {}
            EdgeTag::Fracture { branch } => {
                let al = alpha(branch);
                if al.is_nan() || al <= 0.0 {
                    return Err(Error::Assembly(format!(
                        "Robin coefficient {al} on branch {branch} must be positive"
                    )));
                }
                a.push(e, e, 1.0 / (al * edge.length));
            }
            EdgeTag::Boundary(side) => match bc.on(side) {
                BoundaryValue::Pressure(p) => boundary_load[e] = -p,
                BoundaryValue::Flux(q) => fixed[e] = Some(q * edge.length),
            },
        }
    }
    let trace_rows = traces.iter().map(|t| (t.branch, t.edges.clone())).collect();
    Ok(SubdomainMatrices {
        a: a.into_csr(),
        b: b.into_csr(),
        boundary_load,
        fixed,
        trace_rows,
    })
}

/// Per-branch fracture blocks.
#[derive(Debug, Clone)]
pub struct FractureMatrices {
    /// Velocity block `⟨F⁻¹ u, v⟩` (or its Jacobian), nodes × nodes.
    pub mass: Csr,
    /// Divergence, cells × nodes.
    pub div: Csr,
    /// Cellwise coefficient used in `mass`.
    pub coefficients: Vec<f64>,
    /// `α_T⁻¹` at each end lying on an intersection, else 0.
    pub robin_t: [f64; 2],
    /// Outward normal of each end in tangential coordinates.
    pub end_normals: [f64; 2],
    /// Node index of each end.
    pub end_nodes: [usize; 2],
}

fn fracture_base(branch: &Branch, law: &FractureLaw) -> (usize, Csr, [f64; 2]) {
    let n = branch.mortar.n_cells();
    let mut div = Triplets::new(n, n + 1);
    for c in 0..n {
        div.push(c, c, -1.0);
        div.push(c, c + 1, 1.0);
    }
    let robin = branch.ends.map(|e| match e {
        BranchEnd::Intersection(_) => 1.0 / law.alpha_t(),
        _ => 0.0,
    });
    (n, div.into_csr(), robin)
}

fn midpoint_speeds(u: &[f64], n: usize) -> Vec<f64> {
    (0..n).map(|c| 0.5 * (u[c] + u[c + 1])).collect()
}

fn check_state(branch: &Branch, u: &[f64], p: &[f64]) -> Result<()> {
    let n = branch.mortar.n_cells();
    if u.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            what: "fracture velocity state",
            expected: n + 1,
            got: u.len(),
        });
    }
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            what: "fracture pressure state",
            expected: n,
            got: p.len(),
        });
    }
    Ok(())
}

/// Lagged fracture assembly: cell coefficient `K⁻¹ e^{ζ p_c} + β|ū_c|` with
/// `ū_c` the midpoint velocity of the state.
pub fn assemble_fracture(branch: &Branch, law: &FractureLaw, u: &[f64], p: &[f64]) -> Result<FractureMatrices> {
    check_state(branch, u, p)?;
    let (n, div, robin_t) = fracture_base(branch, law);
    let mid = midpoint_speeds(u, n);
    let coefficients: Vec<f64> = (0..n).map(|c| law.coefficient(mid[c], p[c])).collect();
    let mut m = Triplets::new(n + 1, n + 1);
    for (c, a) in coefficients.iter().enumerate() {
        let s = a * branch.mortar.cell_length(c);
        m.push(c, c, s / 3.0);
        m.push(c, c + 1, s / 6.0);
        m.push(c + 1, c, s / 6.0);
        m.push(c + 1, c + 1, s / 3.0);
    }
    Ok(FractureMatrices {
        mass: m.into_csr(),
        div,
        coefficients,
        robin_t,
        end_normals: [-1.0, 1.0],
        end_nodes: [0, n],
    })
}

/// Exact derivative of `u ↦ M(u) u` for the standard law (`ζ = 0`).
pub fn assemble_newton_jacobian(branch: &Branch, law: &FractureLaw, u: &[f64], p: &[f64]) -> Result<FractureMatrices> {
    if law.zeta != 0.0 {
        return Err(Error::NewtonRequiresStandardLaw);
    }
    check_state(branch, u, p)?;
    let (n, div, robin_t) = fracture_base(branch, law);
    let mid = midpoint_speeds(u, n);
    let coefficients: Vec<f64> = mid.iter().map(|&w| law.coefficient(w, 0.0)).collect();
    let mut m = Triplets::new(n + 1, n + 1);
    for c in 0..n {
        let h = branch.mortar.cell_length(c);
        let s = coefficients[c] * h;
        let local = [[s / 3.0, s / 6.0], [s / 6.0, s / 3.0]];
        // d(β|ū|)/dU_j = β sgn(ū) / 2 for both nodes of the cell.
        let lu = [h * (u[c] / 3.0 + u[c + 1] / 6.0), h * (u[c] / 6.0 + u[c + 1] / 3.0)];
        let d = if mid[c].abs() < NEWTON_SPEED_FLOOR {
            0.0
        } else {
            0.5 * law.beta * mid[c].signum()
        };
        for (i, row) in local.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                m.push(c + i, c + j, v + d * lu[i]);
            }
        }
    }
    Ok(FractureMatrices {
        mass: m.into_csr(),
        div,
        coefficients,
        robin_t,
        end_normals: [-1.0, 1.0],
        end_nodes: [0, n],
    })
}
