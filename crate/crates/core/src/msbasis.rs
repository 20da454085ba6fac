//! Offline multiscale flux basis: for every mortar pressure dof the
//! projected flux response of the adjacent sub-domains, stored densely per
//! sub-domain and applied online by linear combination.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mfem::BoundaryValue;
use crate::problem::Problem;
use crate::subdomain::{Phase, SolveCounter};

const MAGIC: &[u8; 8] = b"MSFBASIS";
const VERSION: u32 = 1;

/// Identifies what a basis depends on: mesh and dof order, matrix
/// permeability, Robin coefficients and the type (not value) of each outer
/// boundary condition. Nonlinear parameters and data are deliberately left
/// out so one basis serves every `β`, `ζ` and source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisFingerprint {
    pub geometry: [u8; 32],
    pub params: [u8; 32],
}

#[derive(Serialize)]
struct ParamKey<'a> {
    perm: &'a crate::mfem::MatrixPermeability,
    alpha: Vec<u64>,
    pressure_sides: [bool; 4],
}

impl BasisFingerprint {
    pub fn of(problem: &Problem) -> Self {
        let mesh = &problem.mesh;
        let mut h = Sha256::new();
        for sd in &mesh.subdomains {
            h.update(serde_json::to_vec(&(&sd.vertices, &sd.triangles)).expect("mesh serializes"));
        }
        for b in &mesh.branches {
            h.update(serde_json::to_vec(&(b.fracture, &b.sides, &b.mortar.nodes)).expect("branch serializes"));
        }
        let geometry: [u8; 32] = h.finalize().into();

        let bc = &problem.params.bc;
        let key = ParamKey {
            perm: &problem.params.perm,
            alpha: (0..mesh.branches.len())
                .map(|b| problem.law_of_branch(b).alpha.to_bits())
                .collect(),
            pressure_sides: [bc.left, bc.right, bc.bottom, bc.top].map(|v| matches!(v, BoundaryValue::Pressure(_))),
        };
        let params: [u8; 32] = Sha256::digest(serde_json::to_vec(&key).expect("key serializes")).into();
        Self { geometry, params }
    }

    pub fn hex(&self) -> String {
        let mut s = String::with_capacity(128);
        for b in self.geometry.iter().chain(&self.params) {
            write!(s, "{b:02x}").unwrap();
        }
        s
    }

    /// Short key for cache file names.
    pub fn short(&self) -> String {
        self.hex()[..16].to_string() + &self.hex()[64..80]
    }
}

/// Dense flux responses of one sub-domain: `values[ℓ·n + k]` is the flux on
/// mortar dof `mortar_indices[k]` due to a unit pressure on
/// `mortar_indices[ℓ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisBlock {
    pub subdomain: usize,
    pub mortar_indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl BasisBlock {
    pub fn dim(&self) -> usize {
        self.mortar_indices.len()
    }

    pub fn column(&self, l: usize) -> &[f64] {
        let n = self.dim();
        &self.values[l * n..(l + 1) * n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiscaleFluxBasis {
    pub fingerprint: BasisFingerprint,
    pub n_mortar: usize,
    pub blocks: Vec<BasisBlock>,
}

fn mortar_indices(problem: &Problem, i: usize) -> Vec<usize> {
    let mut idx = Vec::new();
    for block in &problem.systems[i].blocks {
        let off = problem.layout.p_offsets[block.branch];
        let n = problem.mesh.branches[block.branch].mortar.n_cells();
        idx.extend(off..off + n);
    }
    idx
}

/// Builds every column. Charges one solve unit per mortar dof up front.
pub fn assemble_basis(problem: &Problem, counter: &SolveCounter) -> Result<MultiscaleFluxBasis> {
    let n_mortar = problem.n_mortar();
    counter.charge(Phase::Basis, n_mortar as u64)?;
    let indices: Vec<Vec<usize>> = (0..problem.systems.len()).map(|i| mortar_indices(problem, i)).collect();
    let jobs: Vec<(usize, usize)> = indices
        .iter()
        .enumerate()
        .flat_map(|(i, idx)| (0..idx.len()).map(move |l| (i, l)))
        .collect();
    let columns: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(i, l)| {
            let mut phi = vec![0.0; n_mortar];
            phi[indices[i][l]] = 1.0;
            let lambda = problem.mortar_to_trace(i, &phi)?;
            let flux = problem.systems[i].rtn_flux(&lambda)?;
            let mut out = vec![0.0; n_mortar];
            problem.trace_to_mortar_add(i, &flux, &mut out)?;
            Ok(indices[i].iter().map(|&m| out[m]).collect())
        })
        .collect::<Result<_>>()?;
    let mut blocks: Vec<BasisBlock> = indices
        .into_iter()
        .enumerate()
        .map(|(i, idx)| BasisBlock {
            subdomain: i,
            values: Vec::with_capacity(idx.len() * idx.len()),
            mortar_indices: idx,
        })
        .collect();
    for (&(i, _), col) in jobs.iter().zip(columns) {
        blocks[i].values.extend(col);
    }
    Ok(MultiscaleFluxBasis {
        fingerprint: BasisFingerprint::of(problem),
        n_mortar,
        blocks,
    })
}

impl MultiscaleFluxBasis {
    pub fn check_compatible(&self, problem: &Problem) -> Result<()> {
        let current = BasisFingerprint::of(problem);
        if current != self.fingerprint || self.n_mortar != problem.n_mortar() {
            return Err(Error::StaleBasis(format!(
                "basis {} does not match problem {}",
                self.fingerprint.short(),
                current.short()
            )));
        }
        Ok(())
    }

    /// `Σ_ℓ φ_ℓ Ψ^ℓ`, summed over sub-domains.
    pub fn apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        if phi.len() != self.n_mortar {
            return Err(Error::DimensionMismatch {
                what: "mortar vector",
                expected: self.n_mortar,
                got: phi.len(),
            });
        }
        let mut out = vec![0.0; self.n_mortar];
        for block in &self.blocks {
            let n = block.dim();
            for (l, &ml) in block.mortar_indices.iter().enumerate() {
                let c = phi[ml];
                if c == 0.0 {
                    continue;
                }
                for (k, &mk) in block.mortar_indices.iter().enumerate() {
                    out[mk] += c * block.values[l * n + k];
                }
            }
        }
        Ok(out)
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&self.fingerprint.geometry);
        buf.extend_from_slice(&self.fingerprint.params);
        buf.extend_from_slice(&(self.n_mortar as u64).to_le_bytes());
        buf.extend_from_slice(&(self.blocks.len() as u64).to_le_bytes());
        for b in &self.blocks {
            buf.extend_from_slice(&(b.subdomain as u64).to_le_bytes());
            buf.extend_from_slice(&(b.dim() as u64).to_le_bytes());
            for &m in &b.mortar_indices {
                buf.extend_from_slice(&(m as u64).to_le_bytes());
            }
            for v in &b.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = Sha256::digest(&buf);
        buf.extend_from_slice(&sum);
        buf
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: &str| Error::CorruptBasis {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < MAGIC.len() + 4 + 64 + 16 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(8).ok_or_else(|| corrupt("truncated"))? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(r.take(4).ok_or_else(|| corrupt("truncated"))?.try_into().unwrap());
        if version != VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let geometry: [u8; 32] = r.take(32).ok_or_else(|| corrupt("truncated"))?.try_into().unwrap();
        let params: [u8; 32] = r.take(32).ok_or_else(|| corrupt("truncated"))?.try_into().unwrap();
        let n_mortar = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
        let n_blocks = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
        let mut blocks = Vec::new();
        for _ in 0..n_blocks {
            let subdomain = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
            let n = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
            if n > n_mortar {
                return Err(corrupt("block larger than mortar space"));
            }
            let mut idx = Vec::with_capacity(n);
            for _ in 0..n {
                let m = r.u64().ok_or_else(|| corrupt("truncated"))? as usize;
                if m >= n_mortar {
                    return Err(corrupt("mortar index out of range"));
                }
                idx.push(m);
            }
            let mut values = Vec::with_capacity(n * n);
            for _ in 0..n * n {
                values.push(f64::from_bits(r.u64().ok_or_else(|| corrupt("truncated"))?));
            }
            blocks.push(BasisBlock {
                subdomain,
                mortar_indices: idx,
                values,
            });
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            fingerprint: BasisFingerprint { geometry, params },
            n_mortar,
            blocks,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }
}

/// Path of the text manifest written next to a basis file.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Writes the binary file and its text manifest.
pub fn save_basis(basis: &MultiscaleFluxBasis, path: &Path) -> Result<()> {
    let bytes = basis.encode();
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    let mut m = String::new();
    writeln!(m, "format = msfbasis").unwrap();
    writeln!(m, "version = {VERSION}").unwrap();
    writeln!(m, "fingerprint = {}", basis.fingerprint.hex()).unwrap();
    writeln!(m, "mortar_dofs = {}", basis.n_mortar).unwrap();
    writeln!(m, "subdomains = {}", basis.blocks.len()).unwrap();
    for b in &basis.blocks {
        writeln!(m, "block.{} = {}", b.subdomain, b.dim()).unwrap();
    }
    fs::write(manifest_path(path), m)?;
    Ok(())
}

/// Reads a basis file, verifying its checksum and structure.
pub fn load_basis(path: &Path) -> Result<MultiscaleFluxBasis> {
    let bytes = fs::read(path)?;
    MultiscaleFluxBasis::decode(&bytes, path)
}

/// Reads a basis file and refuses it unless it was built for `problem`.
pub fn load_basis_for(path: &Path, problem: &Problem) -> Result<MultiscaleFluxBasis> {
    let basis = load_basis(path)?;
    basis.check_compatible(problem)?;
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_single_fracture_geometry, MortarConfig};
    use crate::interface::{apply_s_gamma, FluxOperator};
    use crate::mfem::FractureLaw;
    use crate::problem::Parameters;
    use std::sync::Arc;

    fn problem(n: usize, k: f64) -> Problem {
        let mesh = Arc::new(build_single_fracture_geometry(n, &MortarConfig::conforming()).unwrap());
        let mut params = Parameters::uniform(&mesh, FractureLaw::darcy(1.0, 1.0));
        params.perm = crate::mfem::MatrixPermeability::Isotropic(k);
        Problem::new(mesh, params).unwrap()
    }

    #[test]
    fn mirror_symmetric_one_by_one_blocks() {
        let p = problem(1, 1.0);
        let c = SolveCounter::unlimited();
        let basis = assemble_basis(&p, &c).unwrap();
        assert_eq!(c.snapshot().basis, 1);
        assert_eq!(basis.blocks.len(), 2);
        let (a, b) = (basis.blocks[0].values[0], basis.blocks[1].values[0]);
        assert_eq!(basis.blocks[0].dim(), 1);
        assert!((a - b).abs() < 1e-12 * a.abs());
    }

    #[test]
    fn unit_vector_gives_column_and_matches_direct() {
        let p = problem(3, 1.0);
        let c = SolveCounter::unlimited();
        let basis = assemble_basis(&p, &c).unwrap();
        assert_eq!(basis.apply(&[0.0; 3]).unwrap(), vec![0.0; 3]);
        let phi = [0.3, -1.2, 0.7];
        let ms = basis.apply(&phi).unwrap();
        let dd = apply_s_gamma(&FluxOperator::Direct(&p), &phi, &c).unwrap();
        for (a, b) in ms.iter().zip(&dd) {
            assert!((a - b).abs() < 1e-10 * dd.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        }
        let e1 = basis.apply(&[0.0, 1.0, 0.0]).unwrap();
        let col: f64 = basis.blocks.iter().map(|b| b.column(1)[1]).sum();
        assert_eq!(e1[1], col);
    }

    #[test]
    fn save_load_round_trip_and_guards() {
        let p = problem(2, 1.0);
        let basis = assemble_basis(&p, &SolveCounter::unlimited()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.msfb");
        save_basis(&basis, &path).unwrap();
        assert!(manifest_path(&path).exists());
        let back = load_basis_for(&path, &p).unwrap();
        assert_eq!(back, basis);

        let other = problem(2, 2.0);
        assert!(matches!(load_basis_for(&path, &other), Err(Error::StaleBasis(_))));

        let mut bytes = fs::read(&path).unwrap();
        bytes[40] ^= 1;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_basis(&path), Err(Error::CorruptBasis { .. })));
    }
}
