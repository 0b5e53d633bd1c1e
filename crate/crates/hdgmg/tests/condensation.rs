//! The closed-form condensed systems and local recovery must agree with a
//! term-by-term assembly of the full HDG system followed by brute-force
//! elimination of the element unknowns.

use hdgmg::full_hdg::{assemble_full_hdg_diffusion, assemble_full_hdg_stokes, condense_brute_force, eval_monomial, solve_full};
use hdgmg::hdg_diffusion::{assemble_condensed_diffusion, element_diffusivity, recover_local_diffusion, DiffusionData, HdgError};
use hdgmg::hdg_stokes::{assemble_condensed_stokes, recover_local_stokes, StokesData, StokesSolution};
use hdgmg::mesh::{MeshLevel, Point};
use hdgmg::quadrature::{q_boundary0, qk0, qk1};
use hdgmg::spaces::FacetSpace;

fn alpha(x: &Point) -> f64 {
    1.0 + 0.5 * (3.0 * x[0]).sin() * (2.0 * x[1]).cos() + 0.3 * x[2]
}

fn beta(x: &Point) -> f64 {
    2.0 + x[0] * x[1] + x[2]
}

fn source(x: &Point) -> f64 {
    (x[0] + 2.0 * x[1]).exp() - x[2]
}

fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())), "{what}: {a} vs {b}");
}

fn meshes() -> Vec<MeshLevel> {
    vec![
        MeshLevel::unit_box_cells(2, 3).unwrap(),
        MeshLevel::backward_step_cells(2, 1).unwrap(),
        MeshLevel::unit_box_cells(3, 1).unwrap().refine().0,
    ]
}

#[test]
fn diffusion_condensation_matches_full_system() {
    for mesh in meshes() {
        for dirichlet_all in [true, false] {
            let space = FacetSpace::new(&mesh, 1, |x| dirichlet_all || x[0] < 1e-12);
            let alpha_h = element_diffusivity(&mesh, alpha);
            let data = DiffusionData { alpha_h: &alpha_h, beta: &beta, f: &source };
            let cond = assemble_condensed_diffusion(&mesh, &space, &data).unwrap();
            let full = assemble_full_hdg_diffusion(&mesh, &space, &data).unwrap();
            let oracle = condense_brute_force(&full).unwrap();
            let n = space.n_free();
            let dense = cond.matrix.to_dense();
            for i in 0..n {
                assert_close(-oracle.rhs[i], cond.rhs[i], 1e-10, "rhs");
                for j in 0..n {
                    assert_close(-oracle.matrix[(i, j)], dense[(i, j)], 1e-10, "matrix");
                }
            }
            assert!(cond.matrix.asymmetry() < 1e-14);

            // Recovery of the local fields equals the element block of the full solve.
            let x = solve_full(&mesh, &full, false).unwrap();
            let uhat = &x[full.global_offset()..];
            let local = recover_local_diffusion(&mesh, &space, &data, uhat).unwrap();
            let d = mesh.dim();
            for e in 0..mesh.n_elements() {
                let geom = mesh.element_geometry(e);
                let base = e * full.local_size;
                for k in 0..d {
                    assert_close(x[base + k], local.flux[e][k], 1e-9, "flux");
                }
                for i in 0..=d {
                    let u = eval_monomial(&geom, &x[base + d..base + 2 * d + 1], &geom.facet_barycenters[i]);
                    assert_close(u, local.values[e * (d + 1) + i], 1e-9, "u");
                }
            }
        }
    }
}

#[test]
fn diffusion_energy_identity() {
    let mesh = MeshLevel::unit_box_cells(2, 4).unwrap();
    let space = FacetSpace::new(&mesh, 1, |_| true);
    let alpha_h = element_diffusivity(&mesh, alpha);
    let data = DiffusionData { alpha_h: &alpha_h, beta: &beta, f: &source };
    let cond = assemble_condensed_diffusion(&mesh, &space, &data).unwrap();
    let uhat = cond.matrix.to_dense().cholesky().unwrap().solve(&cond.rhs);
    let local = recover_local_diffusion(&mesh, &space, &data, &uhat).unwrap();
    let full_uhat = space.extend(&uhat, None);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e);
        let a = alpha_h[e];
        let vals = &local.values[e * 3..e * 3 + 3];
        let uh = |x: &Point| -> f64 {
            let phi = g.facet_basis(x);
            (0..3).map(|i| vals[i] * phi[i]).sum()
        };
        let s = local.flux[e];
        lhs += qk0(&g, |_| (s[0] * s[0] + s[1] * s[1]) / a);
        let facets = mesh.element_facets(e);
        lhs += q_boundary0(&g, |i, x| a / g.h_facet(i) * (uh(x) - full_uhat[facets[i]]).powi(2));
        lhs += qk1(&g, |x| beta(x) * uh(x) * uh(x));
        rhs += qk1(&g, |x| source(x) * uh(x));
    }
    assert_close(lhs, rhs, 1e-10, "energy identity");
}

#[test]
fn all_neumann_annihilates_constants() {
    let mesh = MeshLevel::unit_box_cells(2, 3).unwrap();
    let space = FacetSpace::new(&mesh, 1, |_| false);
    let alpha_h = element_diffusivity(&mesh, alpha);
    let zero = |_: &Point| 0.0;
    let data = DiffusionData { alpha_h: &alpha_h, beta: &zero, f: &source };
    let cond = assemble_condensed_diffusion(&mesh, &space, &data).unwrap();
    let y = cond.matrix.mul_vec(&vec![1.0; space.n_free()]);
    assert!(y.iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn two_triangles_single_unknown() {
    let mesh = MeshLevel::unit_box_cells(2, 1).unwrap();
    let space = FacetSpace::new(&mesh, 1, |_| true);
    assert_eq!(space.n_free(), 1);
    let alpha_h = vec![1.0; 2];
    let zero = |_: &Point| 0.0;
    let one = |_: &Point| 1.0;
    let data = DiffusionData { alpha_h: &alpha_h, beta: &zero, f: &one };
    let cond = assemble_condensed_diffusion(&mesh, &space, &data).unwrap();
    // Independent check: the diagonal facet has gradient |F|/|K| n on each triangle.
    let expected = 2.0 * 0.5 * (2f64.sqrt() / 0.5).powi(2);
    assert_close(cond.matrix.get(0, 0), expected, 1e-14, "stiffness");
    assert_close(cond.rhs[0], 2.0 * 0.5 / 3.0, 1e-14, "load");
}

#[test]
fn invalid_coefficients_rejected() {
    let mesh = MeshLevel::unit_box_cells(2, 1).unwrap();
    let space = FacetSpace::new(&mesh, 1, |_| true);
    let zero = |_: &Point| 0.0;
    let neg = |_: &Point| -1.0;
    let bad_alpha = vec![0.0, 1.0];
    let data = DiffusionData { alpha_h: &bad_alpha, beta: &zero, f: &zero };
    assert!(matches!(assemble_condensed_diffusion(&mesh, &space, &data), Err(HdgError::InvalidCoefficient { .. })));
    let ok_alpha = vec![1.0, 1.0];
    let data = DiffusionData { alpha_h: &ok_alpha, beta: &neg, f: &zero };
    assert!(matches!(assemble_condensed_diffusion(&mesh, &space, &data), Err(HdgError::NegativeCoefficient { .. })));
}

fn stokes_f(x: &Point) -> Point {
    [x[1].sin() + 1.0, x[0] * x[0] - x[2], (x[0] + x[1]).cos()]
}

fn lid(x: &Point) -> Point {
    if x[1] > 1.0 - 1e-12 {
        [4.0 * x[0] * (1.0 - x[0]), 0.0, 0.0]
    } else {
        [0.0; 3]
    }
}

#[test]
fn stokes_condensation_matches_full_system() {
    for mesh in meshes() {
        for enclosed in [true, false] {
            let d = mesh.dim();
            let space = FacetSpace::new(&mesh, d, |x| enclosed || x[0] < 4.0);
            let data = StokesData { mu: 1.7, beta: &beta, f: &stokes_f, dirichlet_value: &lid };
            let cond = assemble_condensed_stokes(&mesh, &space, &data, 0.0).unwrap();
            assert_eq!(cond.enclosed, enclosed || mesh.n_elements() == 0 || !mesh_has_far_boundary(&mesh));
            let full = assemble_full_hdg_stokes(&mesh, &space, &data).unwrap();
            let oracle = condense_brute_force(&full).unwrap();
            let n = space.n_free();
            let ne = mesh.n_elements();
            let a = cond.matrix.to_dense();
            let div = cond.div.to_dense();
            for i in 0..n {
                assert_close(-oracle.rhs[i], cond.rhs[i], 1e-10, "velocity rhs");
                for j in 0..n {
                    assert_close(-oracle.matrix[(i, j)], a[(i, j)], 1e-10, "velocity block");
                }
                for e in 0..ne {
                    let w = cond.measures[e];
                    assert_close(oracle.matrix[(i, n + e)], w * div[(e, i)], 1e-10, "gradient block");
                    assert_close(oracle.matrix[(n + e, i)], w * div[(e, i)], 1e-10, "divergence block");
                }
            }
            for e in 0..ne {
                assert_close(oracle.rhs[n + e], -cond.measures[e] * cond.div_lift[e], 1e-10, "divergence rhs");
                for e2 in 0..ne {
                    assert!(oracle.matrix[(n + e, n + e2)].abs() < 1e-12);
                }
            }

            // Solve the saddle point problem exactly and compare local recovery.
            let x = solve_full(&mesh, &full, cond.enclosed).unwrap();
            let goff = full.global_offset();
            let sol = StokesSolution { velocity: x[goff..goff + n].to_vec(), pressure: x[goff + n..].to_vec() };
            let local = recover_local_stokes(&mesh, &space, &cond, &data, &sol).unwrap();
            for e in 0..ne {
                let geom = mesh.element_geometry(e);
                let base = e * full.local_size;
                for r in 0..d {
                    for c in 0..d {
                        assert_close(x[base + r * d + c], local.gradient[e][r][c], 1e-9, "gradient tensor");
                    }
                }
                for c in 0..d {
                    let coef = &x[base + d * d + c * (d + 1)..base + d * d + (c + 1) * (d + 1)];
                    for i in 0..=d {
                        let u = eval_monomial(&geom, coef, &geom.facet_barycenters[i]);
                        assert_close(u, local.values[e * (d + 1) + i][c], 1e-9, "velocity");
                    }
                }
            }
        }
    }
}

fn mesh_has_far_boundary(mesh: &MeshLevel) -> bool {
    (0..mesh.n_facets()).any(|f| mesh.is_boundary_facet(f) && mesh.facet_barycenter(f)[0] >= 4.0)
}

#[test]
fn stokes_energy_identity() {
    let mesh = MeshLevel::unit_box_cells(2, 3).unwrap();
    let space = FacetSpace::new(&mesh, 2, |_| true);
    let zero = |_: &Point| [0.0; 3];
    let data = StokesData { mu: 0.8, beta: &beta, f: &stokes_f, dirichlet_value: &zero };
    let cond = assemble_condensed_stokes(&mesh, &space, &data, 0.0).unwrap();
    let full = assemble_full_hdg_stokes(&mesh, &space, &data).unwrap();
    let x = solve_full(&mesh, &full, true).unwrap();
    let goff = full.global_offset();
    let n = space.n_free();
    let sol = StokesSolution { velocity: x[goff..goff + n].to_vec(), pressure: x[goff + n..].to_vec() };
    let local = recover_local_stokes(&mesh, &space, &cond, &data, &sol).unwrap();
    let uhat = space.extend(&sol.velocity, None);
    let (mut lhs, mut rhs) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let g = mesh.element_geometry(e);
        let vals = &local.values[e * 3..e * 3 + 3];
        let uh = |x: &Point, c: usize| -> f64 {
            let phi = g.facet_basis(x);
            (0..3).map(|i| vals[i][c] * phi[i]).sum()
        };
        let l = local.gradient[e];
        lhs += qk0(&g, |_| (0..2).flat_map(|r| (0..2).map(move |c| (r, c))).map(|(r, c)| l[r][c] * l[r][c]).sum::<f64>() / data.mu);
        let facets = mesh.element_facets(e);
        lhs += q_boundary0(&g, |i, x| data.mu / g.h_facet(i) * (0..2).map(|c| (uh(x, c) - uhat[facets[i] * 2 + c]).powi(2)).sum::<f64>());
        lhs += qk1(&g, |x| beta(x) * (uh(x, 0).powi(2) + uh(x, 1).powi(2)));
        rhs += qk1(&g, |x| {
            let f = stokes_f(x);
            f[0] * uh(x, 0) + f[1] * uh(x, 1)
        });
    }
    assert_close(lhs, rhs, 1e-9, "energy identity");
}
