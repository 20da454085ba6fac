use std::sync::Arc;

use msfrac_core::bench::{run, run_detailed, write_csv, BasisCache, Case, Convergence, RunConfig, CSV_HEADER};
use msfrac_core::geometry::{build_single_fracture_geometry, BranchEnd, EdgeTag, MortarConfig, MortarMode};
use msfrac_core::interface::{apply_s_t, FluxOperator, FractureSystem, Linearization};
use msfrac_core::linalg::{norm_inf, relative_diff_inf};
use msfrac_core::mfem::{BoundaryConditions, BoundaryValue, FractureLaw};
use msfrac_core::msbasis::{assemble_basis, load_basis_for, save_basis, BasisFingerprint};
use msfrac_core::nonlinear::{network_driver, Method, Mode, OuterConfig};
use msfrac_core::oracle::solve_monolithic;
use msfrac_core::problem::{Parameters, Problem};
use msfrac_core::subdomain::{SolveCounter, SubdomainFields};
use msfrac_core::vtk::export_fields;
use msfrac_core::{Error, InterfaceState};

fn flat(fields: &[SubdomainFields]) -> Vec<f64> {
    fields.iter().flat_map(|f| f.p.iter().chain(&f.u).copied()).collect()
}

fn state_of(config: &RunConfig) -> (InterfaceState, Vec<SubdomainFields>) {
    let art = run_detailed(config, None).unwrap();
    assert_eq!(art.record.converged, Convergence::True, "{:?}", art.record.error);
    let out = art.output.unwrap();
    (out.report.final_state, out.fields)
}

#[test]
fn counter_breakdown_per_mode() {
    let ms = run(&RunConfig::benchmark(1, Case::Ii), None).unwrap();
    assert_eq!(
        (ms.units.basis, ms.units.source, ms.units.interface, ms.units.recovery),
        (26, 1, 0, 1)
    );
    assert_eq!(ms.units_total, 28);

    let dd = run(
        &RunConfig::benchmark(1, Case::Ii).with_mode(Mode::Dd).with_beta(10.0),
        None,
    )
    .unwrap();
    let iters = dd.initial_iterations + dd.inner_iterations.iter().sum::<usize>();
    assert_eq!((dd.units.basis, dd.units.source, dd.units.recovery), (0, 1, 1));
    assert_eq!(dd.units.interface, iters as u64);
    assert_eq!(
        dd.units_total,
        dd.units.basis + dd.units.source + dd.units.interface + dd.units.recovery
    );
}

#[test]
fn ms_units_do_not_depend_on_law_or_tolerance() {
    for (beta, zeta, tol) in [(0.0, 0.0, 1e-6), (1e2, 0.0, 1e-6), (20.0, 0.5, 1e-6), (1e2, 0.0, 1e-9)] {
        let config = RunConfig {
            tol_gmres: tol,
            tol_outer: tol,
            ..RunConfig::benchmark(1, Case::I).with_beta(beta).with_zeta(zeta)
        };
        let r = run(&config, None).unwrap();
        assert_eq!(r.converged, Convergence::True);
        assert_eq!(r.units_total, 28, "beta {beta} zeta {zeta} tol {tol}");
    }
}

#[test]
fn fixed_point_and_newton_reach_the_same_state() {
    let base = RunConfig::benchmark(1, Case::I).with_beta(1e2);
    let (fp, _) = state_of(&base.clone().with_method(Method::FixedPoint));
    let (nt, _) = state_of(&base.with_method(Method::Newton));
    assert!(relative_diff_inf(&fp.pu(), &nt.pu()) < 1e-5);
}

#[test]
fn newton_rejects_pressure_dependent_viscosity() {
    let r = run(
        &RunConfig::benchmark(1, Case::I)
            .with_beta(1.0)
            .with_zeta(0.5)
            .with_method(Method::Newton),
        None,
    )
    .unwrap();
    assert_eq!(r.converged, Convergence::False);
    assert!(r.error.unwrap().contains(&Error::NewtonRequiresStandardLaw.to_string()));
}

#[test]
fn recovered_fields_are_locally_conservative() {
    let mesh = Arc::new(build_single_fracture_geometry(6, &MortarConfig::uniform(MortarMode::Coarser, 2)).unwrap());
    let source: Vec<Vec<f64>> = mesh
        .subdomains
        .iter()
        .map(|sd| (0..sd.n_cells()).map(|t| (3.0 * sd.centroid(t)[1]).sin()).collect())
        .collect();
    let params = Parameters {
        matrix_source: Some(source.clone()),
        ..Parameters::uniform(&mesh, FractureLaw::darcy(1.0, 1.0).with_beta(5.0))
    };
    let problem = Problem::new(mesh, params).unwrap();
    for mode in [Mode::Ms, Mode::Dd] {
        let out = network_driver(
            &problem,
            mode,
            None,
            &OuterConfig::default(),
            &SolveCounter::unlimited(),
        )
        .unwrap();
        for (i, sys) in problem.systems.iter().enumerate() {
            let div = sys.divergence(&out.fields[i]);
            for (d, f) in div.iter().zip(&source[i]) {
                assert!((d - f).abs() < 1e-8, "{mode}: {d} vs {f}");
            }
        }
    }
}

#[test]
fn oracle_conserves_mass_globally_and_matches_both_paths() {
    let config = RunConfig::benchmark(1, Case::Iii).with_beta(10.0);
    let problem = config.build_problem().unwrap();
    let mono = solve_monolithic(&problem, 1e-10, 1000).unwrap();

    let mut outflow = 0.0;
    let mut inflow = 0.0;
    for (sd, f) in problem.mesh.subdomains.iter().zip(&mono.fields) {
        for (e, edge) in sd.edges.iter().enumerate() {
            if let EdgeTag::Boundary(_) = edge.tag {
                outflow += f.u[e];
                inflow += f.u[e].min(0.0).abs();
            }
        }
    }
    for (bi, b) in problem.mesh.branches.iter().enumerate() {
        let uo = problem.layout.u_offsets[bi];
        let n = b.mortar.n_cells();
        for (k, end) in b.ends.iter().enumerate() {
            if let BranchEnd::Boundary(_) = end {
                let (u, sign) = if k == 0 {
                    (mono.state.u[uo], -1.0)
                } else {
                    (mono.state.u[uo + n], 1.0)
                };
                outflow += sign * u;
                inflow += (sign * u).min(0.0).abs();
            }
        }
    }
    assert!(
        outflow.abs() < 1e-10 * inflow,
        "net outflow {outflow:e} of inflow {inflow}"
    );

    for mode in [Mode::Ms, Mode::Dd] {
        let (state, fields) = state_of(&config.clone().with_mode(mode));
        assert!(relative_diff_inf(&state.pu(), &mono.state.pu()) < 1e-5, "{mode}");
        assert!(relative_diff_inf(&flat(&fields), &flat(&mono.fields)) < 1e-5, "{mode}");
    }
}

#[test]
fn intersection_fluxes_balance() {
    for beta in [0.0, 1e2] {
        let config = RunConfig::benchmark(1, Case::I).with_beta(beta);
        let problem = config.build_problem().unwrap();
        let (state, _) = state_of(&config);
        let system = FractureSystem::assemble(&problem, &state, Linearization::Picard).unwrap();
        let sums = apply_s_t(&system, &state.u);
        assert_eq!(sums.len(), problem.mesh.n_intersections());
        assert!(norm_inf(&sums) <= 1e-8 * norm_inf(&state.u), "beta {beta}: {sums:?}");
    }
}

#[test]
fn identical_configs_give_identical_records() {
    let config = RunConfig::benchmark(1, Case::Iv).with_beta(1e2).with_mode(Mode::Dd);
    let a = run(&config, None).unwrap().without_time();
    let b = run(&config, None).unwrap().without_time();
    assert_eq!(a, b);
}

#[test]
fn budget_exhaustion_is_recorded_as_inf() {
    let config = RunConfig {
        max_units: 50,
        ..RunConfig::benchmark(2, Case::Ii).with_mode(Mode::Dd)
    };
    let r = run(&config, None).unwrap();
    assert_eq!(r.converged, Convergence::Inf);
    assert!(r.units_total <= 50);
    assert!(r.norms.is_none());
    let json = serde_json::to_string(&r).unwrap();
    assert!(json.contains("\"converged\":\"inf\""));
    let mut csv = Vec::new();
    write_csv(&[r], &mut csv).unwrap();
    assert!(String::from_utf8(csv)
        .unwrap()
        .lines()
        .nth(1)
        .unwrap()
        .ends_with(",inf"));
}

#[test]
fn csv_schema_round_trips() {
    let cache = BasisCache::in_memory();
    let records: Vec<_> = [Case::I, Case::Iv]
        .into_iter()
        .map(|c| run(&RunConfig::benchmark(1, c), Some(&cache)).unwrap())
        .collect();
    let mut buf = Vec::new();
    write_csv(&records, &mut buf).unwrap();
    let mut reader = csv::Reader::from_reader(buf.as_slice());
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, CSV_HEADER);
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][0], "i");
    assert_eq!(&rows[0][7], "26");
    assert_eq!(&rows[1][7], "0");
    assert_eq!(&rows[1][10], "true");
}

#[test]
fn vtk_files_parse() {
    let config = RunConfig::benchmark(1, Case::Ii);
    let art = run_detailed(&config, None).unwrap();
    let out = art.output.unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_fields(&art.problem.mesh, &out.report.final_state, &out.fields, dir.path()).unwrap();

    let expect = [
        (
            &files.matrix,
            art.problem.mesh.n_triangles(),
            ["pressure", "velocity", "subdomain"],
        ),
        (
            &files.fractures,
            art.problem.mesh.n_mortar(),
            ["pressure", "velocity", "branch"],
        ),
    ];
    for (path, cells, names) in expect {
        let vtk = vtkio::Vtk::import(path).unwrap();
        let vtkio::model::DataSet::UnstructuredGrid { pieces, .. } = vtk.data else {
            panic!("not an unstructured grid");
        };
        let vtkio::model::Piece::Inline(piece) = &pieces[0] else {
            panic!("piece not inline");
        };
        assert_eq!(piece.cells.types.len(), cells);
        let found: Vec<String> = piece
            .data
            .cell
            .iter()
            .map(|a| match a {
                vtkio::model::Attribute::DataArray(d) => d.name.clone(),
                vtkio::model::Attribute::Field { name, .. } => name.clone(),
            })
            .collect();
        assert_eq!(found, names);
    }
}

#[test]
fn basis_keys_follow_case_pairs() {
    let fp = |c| BasisFingerprint::of(&RunConfig::benchmark(1, c).build_problem().unwrap());
    assert_eq!(fp(Case::I), fp(Case::Iv));
    assert_eq!(fp(Case::Ii), fp(Case::Iii));
    assert_ne!(fp(Case::I), fp(Case::Ii));
    assert_eq!(
        fp(Case::I),
        BasisFingerprint::of(
            &RunConfig::benchmark(1, Case::I)
                .with_beta(1e4)
                .with_zeta(5.0)
                .build_problem()
                .unwrap()
        )
    );
    assert_ne!(
        fp(Case::I),
        BasisFingerprint::of(&RunConfig::benchmark(2, Case::I).build_problem().unwrap())
    );
}

#[test]
fn stale_basis_is_rejected() {
    let p1 = RunConfig::benchmark(1, Case::I).build_problem().unwrap();
    let p2 = RunConfig::benchmark(1, Case::Ii).build_problem().unwrap();
    let basis = assemble_basis(&p1, &SolveCounter::unlimited()).unwrap();
    assert!(matches!(
        FluxOperator::multiscale(&p2, &basis),
        Err(Error::StaleBasis(_))
    ));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("b.msfb");
    save_basis(&basis, &path).unwrap();
    assert!(load_basis_for(&path, &p1).is_ok());
    assert!(matches!(load_basis_for(&path, &p2), Err(Error::StaleBasis(_))));

    // A changed boundary condition type also changes the basis.
    let neumann_right = BoundaryConditions {
        right: BoundaryValue::Flux(0.0),
        ..BoundaryConditions::benchmark()
    };
    let p3 = Problem::new(p1.mesh.clone(), p1.params.clone().with_bc(neumann_right)).unwrap();
    assert!(matches!(load_basis_for(&path, &p3), Err(Error::StaleBasis(_))));
}

#[test]
fn disk_cache_serves_later_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = RunConfig::benchmark(1, Case::I);
    let first = run(&config, Some(&BasisCache::on_disk(dir.path()).unwrap())).unwrap();
    // A fresh cache object only sees the file.
    let second = run(
        &config.clone().with_beta(1.0),
        Some(&BasisCache::on_disk(dir.path()).unwrap()),
    )
    .unwrap();
    assert!(!first.basis_reused && second.basis_reused);
    assert_eq!((first.units.basis, second.units.basis), (26, 0));
    assert_eq!(second.units_total, 2);
}
