//! Mixed-dimensional Darcy flow in fractured porous media: RT0/P0 rock
//! matrix sub-domains coupled through mortars to a Darcy–Forchheimer
//! fracture network, with the matrix response either recomputed by
//! sub-domain solves or replayed from a precomputed multiscale flux basis.

pub mod bench;
pub mod error;
pub mod geometry;
pub mod interface;
pub mod linalg;
pub mod mfem;
pub mod mortar;
pub mod msbasis;
pub mod nonlinear;
pub mod oracle;
pub mod problem;
pub mod subdomain;
pub mod vtk;

pub use bench::{Case, Convergence, RunConfig, RunRecord};
pub use error::{Error, Result};
pub use geometry::{
    build_benchmark_geometry, build_single_fracture_geometry, FractureNetwork, MixedDimMesh, MortarConfig, MortarMode,
};
pub use interface::{FluxOperator, GmresConfig, InterfaceState};
pub use mfem::{BoundaryConditions, BoundaryValue, FractureLaw, MatrixPermeability};
pub use msbasis::{assemble_basis, load_basis, save_basis, MultiscaleFluxBasis};
pub use nonlinear::{network_driver, Method, Mode, OuterConfig, OuterReport};
pub use problem::{Parameters, Problem};
pub use subdomain::{SolveCounter, SolveUnits};
