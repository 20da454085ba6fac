use std::sync::{Arc, OnceLock};

use proptest::prelude::*;

use msfrac_core::bench::{Case, RunConfig};
use msfrac_core::geometry::{build_single_fracture_geometry, Grid1d, MortarConfig, MortarMode};
use msfrac_core::interface::gmres::LinearOperator;
use msfrac_core::interface::{
    apply_s_gamma, build_preconditioner, solve_linear_interface, FluxOperator, FractureSystem, InterfaceOperator,
    InterfaceState, Linearization,
};
use msfrac_core::linalg::{norm2, norm_inf};
use msfrac_core::mfem::{assemble_fracture, BoundaryConditions, FractureLaw};
use msfrac_core::mortar::{build_projection, Direction};
use msfrac_core::msbasis::{assemble_basis, MultiscaleFluxBasis};
use msfrac_core::problem::{Parameters, Problem};
use msfrac_core::subdomain::{Load, SolveCounter};
use msfrac_core::GmresConfig;

fn benchmark(level: u8) -> &'static (Problem, MultiscaleFluxBasis) {
    static CELLS: [OnceLock<(Problem, MultiscaleFluxBasis)>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
    CELLS[level as usize - 1].get_or_init(|| {
        let problem = RunConfig::benchmark(level, Case::Iii).build_problem().unwrap();
        let basis = assemble_basis(&problem, &SolveCounter::unlimited()).unwrap();
        (problem, basis)
    })
}

/// Single fracture, source term and mixed boundary data.
fn single() -> &'static Problem {
    static CELL: OnceLock<Problem> = OnceLock::new();
    CELL.get_or_init(|| {
        let mesh = Arc::new(build_single_fracture_geometry(4, &MortarConfig::uniform(MortarMode::Coarser, 2)).unwrap());
        let source = mesh
            .subdomains
            .iter()
            .map(|sd| (0..sd.n_cells()).map(|t| sd.centroid(t)[0] - 0.3).collect())
            .collect();
        let params = Parameters {
            matrix_source: Some(source),
            ..Parameters::uniform(&mesh, FractureLaw::darcy(1.0, 1.0)).with_bc(BoundaryConditions::benchmark())
        };
        Problem::new(mesh, params).unwrap()
    })
}

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    let scale = norm_inf(a).max(norm_inf(b)).max(1e-300);
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * scale)
}

fn vec_of(len: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn grid() -> impl Strategy<Value = Grid1d> {
    (0.1f64..3.0, prop::collection::vec(0.05f64..1.0, 1..12)).prop_map(|(len, w)| {
        let total: f64 = w.iter().sum();
        let mut nodes = vec![0.0];
        let mut acc = 0.0;
        for x in &w {
            acc += x;
            nodes.push(len * acc / total);
        }
        *nodes.last_mut().unwrap() = len;
        Grid1d { nodes }
    })
}

fn grid_pair() -> impl Strategy<Value = (Grid1d, Grid1d)> {
    (grid(), grid()).prop_map(|(a, b)| {
        // Rescale `b` onto the extent of `a`.
        let (la, lb) = (a.length(), b.length());
        let mut nodes: Vec<f64> = b.nodes.iter().map(|x| x * la / lb).collect();
        *nodes.last_mut().unwrap() = la;
        (a, Grid1d { nodes })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn projections_preserve_constants((trace, mortar) in grid_pair(), c in -10.0f64..10.0) {
        let p = build_projection(0, 0, &trace, &mortar).unwrap();
        let on_trace = p.apply(&vec![c; mortar.n_cells()], Direction::ToTrace).unwrap();
        let on_mortar = p.apply(&vec![c; trace.n_cells()], Direction::ToMortar).unwrap();
        prop_assert!(on_trace.iter().chain(&on_mortar).all(|v| (v - c).abs() <= 1e-12 * c.abs().max(1.0)));
    }

    #[test]
    fn projections_satisfy_weighted_adjoint((trace, mortar) in grid_pair(), seed in any::<u64>()) {
        let p = build_projection(0, 0, &trace, &mortar).unwrap();
        let v = vec_of(trace.n_cells(), seed);
        let w = vec_of(mortar.n_cells(), seed ^ 0x5a5a);
        let pv = p.apply(&v, Direction::ToMortar).unwrap();
        let pw = p.apply(&w, Direction::ToTrace).unwrap();
        let lhs: f64 = (0..mortar.n_cells()).map(|m| mortar.cell_length(m) * pv[m] * w[m]).sum();
        let rhs: f64 = (0..trace.n_cells()).map(|e| trace.cell_length(e) * v[e] * pw[e]).sum();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * trace.length().max(1.0));
    }

    #[test]
    fn conforming_round_trip_is_identity(g in grid(), seed in any::<u64>()) {
        let p = build_projection(0, 0, &g, &g).unwrap();
        let v = vec_of(g.n_cells(), seed);
        let back = p.apply(&p.apply(&v, Direction::ToTrace).unwrap(), Direction::ToMortar).unwrap();
        prop_assert!(rel_close(&v, &back, 1e-12));
    }

    #[test]
    fn robin_solve_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let sys = &single().systems[0];
        let (l1, l2) = (vec_of(sys.n_trace(), seed), vec_of(sys.n_trace(), seed + 1));
        let f1 = vec_of(sys.n_cells(), seed + 2);
        let combo: Vec<f64> = l1.iter().zip(&l2).map(|(x, y)| a * x + b * y).collect();
        let s1 = sys.solve_robin(&l1, Load::Zero).unwrap();
        let s2 = sys.solve_robin(&l2, Load::Zero).unwrap();
        let s = sys.solve_robin(&combo, Load::Zero).unwrap();
        let expect: Vec<f64> = s1.u.iter().zip(&s2.u).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_close(&s.u, &expect, 1e-10));
        let expect: Vec<f64> = s1.p.iter().zip(&s2.p).map(|(x, y)| a * x + b * y).collect();
        prop_assert!(rel_close(&s.p, &expect, 1e-10));

        // Source response is linear in f as well.
        let scaled: Vec<f64> = f1.iter().map(|x| a * x).collect();
        let r1 = sys.solve_robin(&vec![0.0; sys.n_trace()], Load::Source(&f1)).unwrap();
        let ra = sys.solve_robin(&vec![0.0; sys.n_trace()], Load::Source(&scaled)).unwrap();
        let expect: Vec<f64> = r1.u.iter().map(|x| a * x).collect();
        prop_assert!(rel_close(&ra.u, &expect, 1e-10));
    }

    #[test]
    fn robin_solve_superposes_with_data(seed in any::<u64>()) {
        for sys in &single().systems {
            let lambda = vec_of(sys.n_trace(), seed);
            let full = sys.solve_robin(&lambda, Load::Data).unwrap();
            let split = sys
                .solve_robin(&lambda, Load::Zero)
                .unwrap()
                .add(&sys.solve_robin(&vec![0.0; sys.n_trace()], Load::Data).unwrap());
            prop_assert!(rel_close(&full.u, &split.u, 1e-10));
            prop_assert!(rel_close(&full.p, &split.p, 1e-10));
        }
    }

    #[test]
    fn divergence_matches_source(seed in any::<u64>()) {
        let sys = &single().systems[1];
        let f = vec_of(sys.n_cells(), seed);
        let lambda = vec_of(sys.n_trace(), seed + 7);
        let sol = sys.solve_robin(&lambda, Load::Source(&f)).unwrap();
        let div = sys.divergence(&sol);
        prop_assert!(div.iter().zip(&f).all(|(d, s)| (d - s).abs() < 1e-10));
    }

    #[test]
    fn fracture_mass_is_spd(u in prop::collection::vec(-1e3f64..1e3, 5), beta in 0.0f64..1e4, zeta in -5.0f64..5.0) {
        let problem = single();
        let branch = &problem.mesh.branches[0];
        let n = branch.mortar.n_cells();
        let u: Vec<f64> = (0..=n).map(|i| u[i % u.len()]).collect();
        let p = vec![0.5; n];
        let law = FractureLaw::darcy(1.0, 1.0).with_beta(beta).with_zeta(zeta);
        let m = assemble_fracture(branch, &law, &u, &p).unwrap().mass.to_dense();
        prop_assert!(cholesky_succeeds(&m));
    }

    #[test]
    fn interface_operator_is_linear(seed in any::<u64>(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (problem, _) = benchmark(1);
        let zero = InterfaceState::zeros(&problem.layout);
        let system = FractureSystem::assemble(problem, &zero, Linearization::Linear).unwrap();
        let counter = SolveCounter::unlimited();
        let op = InterfaceOperator::new(&system, FluxOperator::Direct(problem), &counter);
        let (x, y) = (vec_of(system.dim(), seed), vec_of(system.dim(), seed + 1));
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let (ax, ay, ac) = (op.apply(&x).unwrap(), op.apply(&y).unwrap(), op.apply(&combo).unwrap());
        let expect: Vec<f64> = ax.iter().zip(&ay).map(|(p, q)| a * p + b * q).collect();
        prop_assert!(rel_close(&ac, &expect, 1e-10));
        prop_assert_eq!(counter.total(), 3);
    }
}

fn cholesky_succeeds(a: &[Vec<f64>]) -> bool {
    let n = a.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        if (0..n).any(|j| (a[i][j] - a[j][i]).abs() > 1e-12 * a[i][i].abs()) {
            return false;
        }
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

#[test]
fn basis_matches_direct_on_random_vectors() {
    for level in 1..=3 {
        let (problem, basis) = benchmark(level);
        let counter = SolveCounter::unlimited();
        let ms = FluxOperator::multiscale(problem, basis).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..100 {
            let phi = vec_of(problem.n_mortar(), 1000 * level as u64 + k);
            let direct = apply_s_gamma(&FluxOperator::Direct(problem), &phi, &counter).unwrap();
            let fast = apply_s_gamma(&ms, &phi, &counter).unwrap();
            let diff: Vec<f64> = direct.iter().zip(&fast).map(|(a, b)| a - b).collect();
            worst = worst.max(norm_inf(&diff) / norm_inf(&phi));
        }
        assert!(worst < 1e-10, "level {level}: {worst:e}");
        assert_eq!(counter.total(), 100);
    }
}

#[test]
fn benchmark_projections_preserve_constants() {
    for case in [Case::I, Case::Heterogeneous] {
        let problem = RunConfig::benchmark(2, case).build_problem().unwrap();
        for list in &problem.projections {
            for p in list {
                let t = p.apply(&vec![2.5; p.n_mortar()], Direction::ToTrace).unwrap();
                let m = p.apply(&vec![2.5; p.n_trace()], Direction::ToMortar).unwrap();
                assert!(
                    t.iter().chain(&m).all(|v| (v - 2.5).abs() < 1e-12),
                    "{case} {} {}",
                    p.subdomain,
                    p.branch
                );
            }
        }
    }
}

#[test]
fn gmres_history_matches_recomputed_residual() {
    let (problem, _) = benchmark(1);
    let zero = InterfaceState::zeros(&problem.layout);
    let system = FractureSystem::assemble(problem, &zero, Linearization::Linear).unwrap();
    let counter = SolveCounter::unlimited();
    let source = problem.source_response(&counter).unwrap();
    let b = system.rhs_with(&source.g);
    let lu = build_preconditioner(&system).unwrap();
    let before = counter.total();
    let config = GmresConfig {
        tol: 1e-8,
        max_iter: 500,
    };
    let sol = solve_linear_interface(
        &system,
        FluxOperator::Direct(problem),
        &counter,
        &b,
        None,
        Some(&lu),
        &config,
    )
    .unwrap();
    assert_eq!(counter.total() - before, sol.iterations as u64);

    let x = sol.state.to_vec();
    let s = apply_s_gamma(&FluxOperator::Direct(problem), &sol.state.p, &counter).unwrap();
    let r: Vec<f64> = system.apply_with(&x, &s).iter().zip(&b).map(|(a, b)| b - a).collect();
    let reported = *sol.history.last().unwrap();
    assert!(
        (norm2(&r) - reported).abs() <= 1e-12 * norm2(&b),
        "{} vs {reported}",
        norm2(&r)
    );
    assert!(rel_close(&s, &sol.s_p, 1e-10));
}
