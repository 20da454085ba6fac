//! Piecewise-constant L² projections between a mortar grid and a sub-domain
//! trace grid on the same branch.

use crate::error::{Error, Result};
use crate::geometry::Grid1d;
use crate::linalg::{Csr, Triplets};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToTrace,
    ToMortar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MortarProjection {
    pub subdomain: usize,
    pub branch: usize,
    /// trace cells × mortar cells.
    pub to_trace: Csr,
    /// mortar cells × trace cells.
    pub to_mortar: Csr,
}

/// Overlap lengths `|m ∩ e|` of two grids tiling the same interval, as
/// `(trace cell, mortar cell, length)` triples.
pub fn overlaps(trace: &Grid1d, mortar: &Grid1d) -> Result<Vec<(usize, usize, f64)>> {
    let scale = trace.length().abs().max(mortar.length().abs()).max(1.0);
    let (t0, m0) = (trace.nodes[0], mortar.nodes[0]);
    let (t1, m1) = (*trace.nodes.last().unwrap(), *mortar.nodes.last().unwrap());
    if (t0 - m0).abs() > 1e-12 * scale || (t1 - m1).abs() > 1e-12 * scale {
        return Err(Error::Geometry(format!(
            "trace grid [{t0}, {t1}] and mortar grid [{m0}, {m1}] tile different extents"
        )));
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < trace.n_cells() && j < mortar.n_cells() {
        let lo = trace.nodes[i].max(mortar.nodes[j]);
        let hi = trace.nodes[i + 1].min(mortar.nodes[j + 1]);
        if hi - lo > 1e-14 * scale {
            out.push((i, j, hi - lo));
        }
        if trace.nodes[i + 1] < mortar.nodes[j + 1] - 1e-14 * scale {
            i += 1;
        } else if mortar.nodes[j + 1] < trace.nodes[i + 1] - 1e-14 * scale {
            j += 1;
        } else {
            i += 1;
            j += 1;
        }
    }
    Ok(out)
}

pub fn build_projection(subdomain: usize, branch: usize, trace: &Grid1d, mortar: &Grid1d) -> Result<MortarProjection> {
    let (nt, nm) = (trace.n_cells(), mortar.n_cells());
    let mut to_trace = Triplets::new(nt, nm);
    let mut to_mortar = Triplets::new(nm, nt);
    for (e, m, len) in overlaps(trace, mortar)? {
        to_trace.push(e, m, len / trace.cell_length(e));
        to_mortar.push(m, e, len / mortar.cell_length(m));
    }
    Ok(MortarProjection {
        subdomain,
        branch,
        to_trace: to_trace.into_csr(),
        to_mortar: to_mortar.into_csr(),
    })
}

impl MortarProjection {
    pub fn n_trace(&self) -> usize {
        self.to_trace.nrows()
    }

    pub fn n_mortar(&self) -> usize {
        self.to_trace.ncols()
    }

    pub fn apply(&self, v: &[f64], direction: Direction) -> Result<Vec<f64>> {
        let m = match direction {
            Direction::ToTrace => &self.to_trace,
            Direction::ToMortar => &self.to_mortar,
        };
        if v.len() != m.ncols() {
            return Err(Error::DimensionMismatch {
                what: "mortar projection input",
                expected: m.ncols(),
                got: v.len(),
            });
        }
        Ok(m.matvec(v))
    }
}
