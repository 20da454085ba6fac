//! Monolithic verification path: every sub-domain, fracture and
//! intersection unknown in one sparse system, with the mortar coupling
//! assembled directly from interval overlaps rather than through `S_γ`.

use crate::error::{Error, Result};
use crate::geometry::Grid1d;
use crate::interface::{FractureSystem, InterfaceState, Linearization};
use crate::linalg::{relative_diff_inf, Csr, SparseLu, Triplets};
use crate::problem::Problem;
use crate::subdomain::SubdomainFields;

#[derive(Debug, Clone)]
pub struct MonolithicSystem {
    pub matrix: Csr,
    pub rhs: Vec<f64>,
    /// First global dof of each sub-domain block `[u_i; p_i]`.
    pub subdomain_offsets: Vec<usize>,
    /// First global dof of the fracture block `[U; P; P_T]`.
    pub fracture_offset: usize,
}

#[derive(Debug, Clone)]
pub struct MonolithicSolution {
    pub state: InterfaceState,
    pub fields: Vec<SubdomainFields>,
    pub iterations: usize,
}

/// Overlap lengths of two grids, computed pairwise.
fn pairwise_overlaps(trace: &Grid1d, mortar: &Grid1d) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::new();
    for e in 0..trace.n_cells() {
        for m in 0..mortar.n_cells() {
            let lo = trace.nodes[e].max(mortar.nodes[m]);
            let hi = trace.nodes[e + 1].min(mortar.nodes[m + 1]);
            if hi - lo > 1e-13 {
                out.push((e, m, hi - lo));
            }
        }
    }
    out
}

/// Global system with the fracture coefficient frozen at `state`.
pub fn assemble_monolithic(problem: &Problem, state: &InterfaceState) -> Result<MonolithicSystem> {
    let mesh = &problem.mesh;
    let mut offsets = Vec::with_capacity(mesh.subdomains.len());
    let mut n = 0;
    for sd in &mesh.subdomains {
        offsets.push(n);
        n += sd.n_edges() + sd.n_cells();
    }
    let f0 = n;
    let frac = FractureSystem::assemble(problem, state, Linearization::Picard)?;
    let layout = &frac.layout;
    let dim = f0 + layout.dim();
    let mut t = Triplets::new(dim, dim);
    let mut rhs = vec![0.0; dim];

    for (i, sd) in mesh.subdomains.iter().enumerate() {
        let sys = &problem.systems[i];
        let m = &sys.matrices;
        let (o, ne) = (offsets[i], sd.n_edges());
        for (r, c, v) in m.a.iter() {
            if m.fixed[r].is_none() {
                t.push(o + r, o + c, v);
            }
        }
        for (c, e, v) in m.b.iter() {
            t.push(o + ne + c, o + e, v);
            if m.fixed[e].is_none() {
                t.push(o + e, o + ne + c, -v);
            }
        }
        for e in 0..ne {
            rhs[o + e] = match m.fixed[e] {
                Some(v) => {
                    t.push(o + e, o + e, 1.0);
                    v
                }
                None => m.boundary_load[e],
            };
        }
        let source = sys.source();
        for c in 0..sd.n_cells() {
            rhs[o + ne + c] = source[c] * sd.area(c);
        }
        for trace in &mesh.traces[i] {
            let branch = &mesh.branches[trace.branch];
            let poff = f0 + layout.n_u + layout.p_offsets[trace.branch];
            for (k, mc, len) in pairwise_overlaps(&trace.grid, &branch.mortar) {
                let e = trace.edges[k];
                let el = sd.edges[e].length;
                t.push(o + e, poff + mc, len / el);
                t.push(poff + mc, o + e, -len / el);
            }
        }
    }
    for (r, c, v) in frac.block.iter() {
        t.push(f0 + r, f0 + c, v);
    }
    rhs[f0..].copy_from_slice(&frac.rhs);
    Ok(MonolithicSystem {
        matrix: t.into_csr(),
        rhs,
        subdomain_offsets: offsets,
        fracture_offset: f0,
    })
}

/// Direct solve, iterated on the frozen coefficient until the relative
/// update of the whole solution drops below `tol`.
pub fn solve_monolithic(problem: &Problem, tol: f64, max_iter: usize) -> Result<MonolithicSolution> {
    let layout = &problem.layout;
    let mut state = InterfaceState::zeros(layout);
    let mut prev: Option<Vec<f64>> = None;
    let linear = problem.params.laws.iter().all(|l| l.is_linear());
    for it in 1..=max_iter {
        let sys = assemble_monolithic(problem, &state)?;
        let x = SparseLu::factor(&sys.matrix, "monolithic system")?.solve(&sys.rhs);
        state = InterfaceState::from_vec(layout, &x[sys.fracture_offset..]);
        let done = linear || prev.as_ref().is_some_and(|p| relative_diff_inf(&x, p) < tol);
        if done {
            let fields = problem
                .mesh
                .subdomains
                .iter()
                .zip(&sys.subdomain_offsets)
                .map(|(sd, &o)| SubdomainFields {
                    u: x[o..o + sd.n_edges()].to_vec(),
                    p: x[o + sd.n_edges()..o + sd.n_edges() + sd.n_cells()].to_vec(),
                })
                .collect();
            return Ok(MonolithicSolution {
                state,
                fields,
                iterations: it,
            });
        }
        prev = Some(x);
    }
    Err(Error::OuterNotConverged {
        iterations: max_iter,
        last_update: f64::NAN,
    })
}
