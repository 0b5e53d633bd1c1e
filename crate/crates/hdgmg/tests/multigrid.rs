use hdgmg::experiments::{build_diffusion_multigrid, build_stokes_multigrid, CoarseMesh, ExperimentConfig, Problem};
use hdgmg::linalg::{dot, pcg, CsrMatrix, PcgOptions, Preconditioner};
use hdgmg::multigrid::{CycleSchedule, MgHierarchy};
use hdgmg::smoothers::{vertex_patches, Smoother, SmootherKind};
use hdgmg::mesh::MeshLevel;
use hdgmg::spaces::FacetSpace;

const KINDS: [SmootherKind; 4] = [SmootherKind::PointJacobi, SmootherKind::PointGaussSeidel, SmootherKind::BlockJacobi, SmootherKind::BlockGaussSeidel];

fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

/// Second level of small diffusion and penalized Stokes problems, with a
/// flag for the penalized ones.
fn test_systems() -> Vec<(MeshLevel, FacetSpace, CsrMatrix, bool)> {
    let mut out = Vec::new();
    for dim in [2, 3] {
        let mut cfg = ExperimentConfig::mg_diffusion(dim, Problem::Smooth, 2);
        cfg.coarse_mesh = CoarseMesh::Cells(2);
        let (hier, mg, spaces, _) = build_diffusion_multigrid(&cfg).unwrap();
        out.push((hier.level(1).clone(), spaces[1].clone(), mg.matrix(1).clone(), false));
        let mut cfg = ExperimentConfig::mg_stokes(dim, Problem::LidDriven, 2);
        cfg.coarse_mesh = CoarseMesh::Cells(2);
        let (hier, mg, spaces, _) = build_stokes_multigrid(&cfg).unwrap();
        out.push((hier.level(1).clone(), spaces[1].clone(), mg.matrix(1).clone(), true));
    }
    out
}

fn a_norm(a: &CsrMatrix, x: &[f64]) -> f64 {
    dot(x, &a.mul_vec(x)).sqrt()
}

#[test]
fn transposed_sweep_is_the_adjoint_smoother() {
    for (mesh, space, a, penalized) in test_systems() {
        let tol = if penalized { 1e-7 } else { 1e-12 };
        for kind in KINDS {
            let s = Smoother::new(kind, &a, Some(vertex_patches(&mesh, &space))).unwrap();
            let r = pseudo_random(a.nrows(), 1);
            let t = pseudo_random(a.nrows(), 2);
            let lhs = dot(&s.apply(&a, &r), &t);
            let rhs = dot(&r, &s.apply_transpose(&a, &t));
            assert!((lhs - rhs).abs() <= tol * lhs.abs().max(rhs.abs()), "{kind:?}: {lhs} vs {rhs}");
        }
    }
}

/// Power iteration on the error propagator `I - R A` measured in the energy norm.
fn contraction(a: &CsrMatrix, s: &Smoother, iters: usize) -> f64 {
    let mut x = pseudo_random(a.nrows(), 7);
    let zero = vec![0.0; a.nrows()];
    let mut rate = 0.0;
    for _ in 0..iters {
        let before = a_norm(a, &x);
        s.smooth(a, &mut x, &zero);
        let after = a_norm(a, &x);
        rate = after / before;
        x.iter_mut().for_each(|v| *v /= after);
    }
    rate
}

#[test]
fn smoothers_contract_in_the_energy_norm() {
    for (mesh, space, a, penalized) in test_systems() {
        for kind in KINDS {
            // Point smoothers are not meant for the penalized systems.
            if penalized && matches!(kind, SmootherKind::PointJacobi | SmootherKind::PointGaussSeidel) {
                continue;
            }
            let s = Smoother::new(kind, &a, Some(vertex_patches(&mesh, &space))).unwrap();
            let rate = contraction(&a, &s, 200);
            assert!(rate < 1.0, "{kind:?} on {} unknowns: rate {rate}", a.nrows());
        }
    }
}

#[test]
fn exact_coarse_solve_converges_in_one_iteration() {
    let cfg = ExperimentConfig::mg_diffusion(2, Problem::Smooth, 1);
    let (_, mg, _, rhs) = build_diffusion_multigrid(&cfg).unwrap();
    let cycle = mg.cycle(0, CycleSchedule::v(0, 1)).unwrap();
    let rep = pcg(cycle.matrix(), &rhs[0], &cycle, &PcgOptions::default()).unwrap();
    assert_eq!(rep.iterations, 1);
}

fn schedules(top: usize, m: usize) -> [CycleSchedule; 3] {
    [CycleSchedule::v(top, m), CycleSchedule::w(top, m), CycleSchedule::variable_v(top, m)]
}

fn check_symmetric_positive(mg: &MgHierarchy, top: usize, tol: f64) {
    let n = mg.matrix(top).nrows();
    for sched in schedules(top, 1) {
        let cycle = mg.cycle(top, sched.clone()).unwrap();
        for seed in 0..3 {
            let r = pseudo_random(n, 10 + seed);
            let s = pseudo_random(n, 20 + seed);
            let (mut br, mut bs) = (vec![0.0; n], vec![0.0; n]);
            cycle.precondition(&r, &mut br);
            cycle.precondition(&s, &mut bs);
            let (x, y) = (dot(&br, &s), dot(&r, &bs));
            let scale = (dot(&br, &r) * dot(&bs, &s)).sqrt();
            assert!((x - y).abs() <= tol * scale, "q={} {x} vs {y}", sched.q);
            assert!(dot(&br, &r) > 0.0, "q={} not positive", sched.q);
        }
    }
}

#[test]
fn cycles_are_symmetric_and_positive() {
    for kind in KINDS {
        let mut cfg = ExperimentConfig::mg_diffusion(2, Problem::Smooth, 4);
        cfg.smoother = kind;
        let (_, mg, _, _) = build_diffusion_multigrid(&cfg).unwrap();
        check_symmetric_positive(&mg, 3, 1e-11);
        let mut cfg = ExperimentConfig::mg_stokes(2, Problem::BackwardStep, 3);
        cfg.smoother = kind;
        let (_, mg, _, _) = build_stokes_multigrid(&cfg).unwrap();
        // The penalty of 1e8 costs about eight digits in every application.
        check_symmetric_positive(&mg, 2, 1e-7);
    }
}

/// Asymptotic energy-norm contraction of the stationary cycle.
fn cycle_rate(mg: &MgHierarchy, top: usize, sched: CycleSchedule) -> f64 {
    let cycle = mg.cycle(top, sched).unwrap();
    let a = mg.matrix(top);
    let zero = vec![0.0; a.nrows()];
    let mut x = pseudo_random(a.nrows(), 3);
    let mut rate = 0.0;
    for _ in 0..12 {
        let before = a_norm(a, &x);
        cycle.cycle_on(top, &zero, &mut x);
        let after = a_norm(a, &x);
        rate = after / before;
        x.iter_mut().for_each(|v| *v /= after);
    }
    rate
}

#[test]
fn v_cycle_contraction_is_level_independent_and_improves_with_smoothing() {
    let cfg = ExperimentConfig::mg_diffusion(2, Problem::Smooth, 6);
    let (_, mg, _, _) = build_diffusion_multigrid(&cfg).unwrap();
    let rates: Vec<f64> = (2..=5).map(|top| cycle_rate(&mg, top, CycleSchedule::v(top, 2))).collect();
    for r in &rates {
        assert!(*r < 1.0, "rates {rates:?}");
    }
    let spread = rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.1, "rates {rates:?}");
    let by_m: Vec<f64> = [1, 2, 4, 8].iter().map(|&m| cycle_rate(&mg, 4, CycleSchedule::v(4, m))).collect();
    for w in by_m.windows(2) {
        assert!(w[1] < w[0], "rates over m {by_m:?}");
    }
}

#[test]
fn w_cycle_contracts_for_stokes() {
    let mut cfg = ExperimentConfig::mg_stokes(2, Problem::LidDriven, 4);
    cfg.beta = 1000.0;
    let (_, mg, _, _) = build_stokes_multigrid(&cfg).unwrap();
    let rate = cycle_rate(&mg, 3, CycleSchedule::w(3, 4));
    assert!(rate < 1.0, "rate {rate}");
}
