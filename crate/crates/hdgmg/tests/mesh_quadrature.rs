use hdgmg::mesh::{ElementGeometry, FacetParent, MeshHierarchy, MeshLevel, Point};
use hdgmg::quadrature::{error_quadrature, grundmann_moeller, q_boundary0, qf0, qk0, qk1};
use proptest::prelude::*;

fn factorial(n: u32) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn random_simplex(dim: usize, coords: &[f64]) -> Option<ElementGeometry> {
    let verts: Vec<Point> = (0..=dim)
        .map(|i| [coords[3 * i], coords[3 * i + 1], if dim == 3 { coords[3 * i + 2] } else { 0.0 }])
        .collect();
    let g = ElementGeometry::from_vertices(dim, &verts);
    (g.measure > 1e-3).then_some(g)
}

/// Exact integral of `a + sum b_i l_i + sum c_ij l_i l_j` in barycentric
/// coordinates: `int l_i = |K|/(d+1)`, `int l_i l_j = |K| d! (1 + delta_ij) / (d+2)!`.
fn barycentric_quadratic_integral(dim: usize, measure: f64, a: f64, b: &[f64], c: &[f64]) -> f64 {
    let n = dim + 1;
    let mut s = a * measure + b.iter().sum::<f64>() * measure / n as f64;
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 2.0 } else { 1.0 };
            s += c[i * n + j] * measure * factorial(dim as u32) * delta / factorial(dim as u32 + 2);
        }
    }
    s
}

proptest! {
    #[test]
    fn reduced_rules_exact_for_affine(dim in 2usize..=3, coords in prop::collection::vec(-1.0f64..1.0, 12), a in -2.0f64..2.0, b in prop::collection::vec(-2.0f64..2.0, 4)) {
        let Some(g) = random_simplex(dim, &coords) else { return Ok(()) };
        let exact = barycentric_quadratic_integral(dim, g.measure, a, &b[..=dim], &vec![0.0; 16]);
        let f = |x: &Point| {
            let lam = g.barycentric(x);
            a + (0..=dim).map(|i| b[i] * lam[i]).sum::<f64>()
        };
        prop_assert!((qk0(&g, f) - exact).abs() < 1e-10 * (1.0 + exact.abs()));
        prop_assert!((qk1(&g, f) - exact).abs() < 1e-10 * (1.0 + exact.abs()));
        prop_assert!((error_quadrature(&g, |x, _| f(x)) - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn facet_barycenter_rule_exact_for_quadratics_in_2d(coords in prop::collection::vec(-1.0f64..1.0, 12), a in -2.0f64..2.0, b in prop::collection::vec(-2.0f64..2.0, 3), c in prop::collection::vec(-2.0f64..2.0, 9)) {
        let Some(g) = random_simplex(2, &coords) else { return Ok(()) };
        let exact = barycentric_quadratic_integral(2, g.measure, a, &b, &c);
        let f = |x: &Point| {
            let lam = g.barycentric(x);
            let mut s = a;
            for i in 0..3 {
                s += b[i] * lam[i];
                for j in 0..3 {
                    s += c[i * 3 + j] * lam[i] * lam[j];
                }
            }
            s
        };
        prop_assert!((qk1(&g, f) - exact).abs() < 1e-10 * (1.0 + exact.abs()));
    }

    #[test]
    fn boundary_rule_matches_divergence_theorem(dim in 2usize..=3, coords in prop::collection::vec(-1.0f64..1.0, 12), w in prop::collection::vec(-2.0f64..2.0, 3)) {
        // For a constant field w, the boundary integral of w.n vanishes; for x the
        // boundary integral of x.n equals d |K|.
        let Some(g) = random_simplex(dim, &coords) else { return Ok(()) };
        let flux_const = q_boundary0(&g, |i, _| (0..dim).map(|k| w[k] * g.normals[i][k]).sum());
        prop_assert!(flux_const.abs() < 1e-10);
        let flux_x = q_boundary0(&g, |i, x| (0..dim).map(|k| x[k] * g.normals[i][k]).sum());
        prop_assert!((flux_x - dim as f64 * g.measure).abs() < 1e-10);
    }
}

#[test]
fn degree_five_rule_on_reference_simplices() {
    // int over the unit triangle of x^a y^b = a! b! / (a + b + 2)!
    let tri = ElementGeometry::from_vertices(2, &[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    for a in 0..=5u32 {
        for b in 0..=(5 - a) {
            let q = error_quadrature(&tri, |x, _| x[0].powi(a as i32) * x[1].powi(b as i32));
            let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
            assert!((q - exact).abs() < 1e-14, "x^{a} y^{b}: {q} vs {exact}");
        }
    }
    let tet = ElementGeometry::from_vertices(3, &[[0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    for a in 0..=5u32 {
        for b in 0..=(5 - a) {
            for c in 0..=(5 - a - b) {
                let q = error_quadrature(&tet, |x, _| x[0].powi(a as i32) * x[1].powi(b as i32) * x[2].powi(c as i32));
                let exact = factorial(a) * factorial(b) * factorial(c) / factorial(a + b + c + 3);
                assert!((q - exact).abs() < 1e-14, "x^{a} y^{b} z^{c}");
            }
        }
    }
    assert_eq!(grundmann_moeller(2, 2).points.len(), 10);
}

#[test]
fn one_point_facet_rule() {
    let m = MeshLevel::unit_box_cells(3, 1).unwrap();
    let f = m.facet_geometry(0);
    let v = qf0(&f, |x| 1.0 + x[0] + 2.0 * x[1] - x[2]);
    let b = f.barycenter;
    assert!((v - f.measure * (1.0 + b[0] + 2.0 * b[1] - b[2])).abs() < 1e-15);
}

#[test]
fn refinement_counts_and_measures() {
    let m = MeshLevel::unit_box_cells(2, 1).unwrap();
    let (fine, parents) = m.refine();
    assert_eq!(fine.n_elements(), 8);
    assert_eq!(fine.n_facets(), 16);
    assert_eq!(parents.len(), 16);
    assert!((fine.total_measure() - 1.0).abs() < 1e-14);

    let step = MeshLevel::backward_step(2, 0.5).unwrap();
    assert!((step.total_measure() - 4.75).abs() < 1e-12);
    assert!(step.max_diameter() <= 0.5 + 1e-14);
    let step3 = MeshLevel::backward_step(3, 0.5).unwrap();
    assert!((step3.total_measure() - 4.75).abs() < 1e-12);
    assert!(step3.max_diameter() <= 0.5 + 1e-14);
}

fn check_hierarchy(h: &MeshHierarchy) {
    let c = h.children_per_element();
    for l in 1..h.n_levels() {
        let coarse = h.level(l - 1);
        let fine = h.level(l);
        assert_eq!(fine.n_elements(), c * coarse.n_elements());
        assert!((fine.max_diameter() - 0.5 * coarse.max_diameter()).abs() < 1e-12, "diameter halves under refinement");
        for e in 0..coarse.n_elements() {
            let s: f64 = h.child_elements(e).map(|k| fine.element_measure(k)).sum();
            assert!((s - coarse.element_measure(e)).abs() < 1e-14);
            for k in h.child_elements(e) {
                assert_eq!(h.parent_element(k), e);
            }
        }
        let parents = h.facet_parents(l);
        let mut covered = vec![0.0; coarse.n_facets()];
        for f in 0..fine.n_facets() {
            let fb = fine.facet_barycenter(f);
            match parents[f] {
                FacetParent::InteriorOfCoarseElement(e) => {
                    let lam = coarse.element_geometry(e).barycentric(&fb);
                    assert!(lam[..=coarse.dim()].iter().all(|&v| v > 1e-12), "facet strictly inside its coarse element");
                    assert!(!fine.is_boundary_facet(f));
                }
                FacetParent::OnCoarseFacet(cf) => {
                    covered[cf] += fine.facet_geometry(f).measure;
                    assert_eq!(fine.is_boundary_facet(f), coarse.is_boundary_facet(cf));
                }
            }
        }
        for cf in 0..coarse.n_facets() {
            assert!((covered[cf] - coarse.facet_geometry(cf).measure).abs() < 1e-13, "sub-facets tile each coarse facet");
        }
    }
}

#[test]
fn hierarchies_are_nested() {
    check_hierarchy(&MeshHierarchy::new(MeshLevel::unit_box_cells(2, 2).unwrap(), 3));
    check_hierarchy(&MeshHierarchy::new(MeshLevel::unit_box_cells(3, 1).unwrap(), 3));
    check_hierarchy(&MeshHierarchy::new(MeshLevel::backward_step_cells(3, 1).unwrap(), 2));
}

#[test]
fn facets_are_conforming() {
    for m in [MeshLevel::unit_box_cells(3, 2).unwrap().refine().0, MeshLevel::backward_step_cells(2, 2).unwrap()] {
        for f in 0..m.n_facets() {
            let (a, b) = m.facet_elements(f);
            let onb = m.facet_barycenter(f);
            let on_box = onb.iter().take(m.dim()).any(|&x| x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12 || (x - 5.0).abs() < 1e-12);
            if b.is_none() {
                assert!(on_box || (onb[0] - 0.5).abs() < 1e-12 || (onb[1] - 0.5).abs() < 1e-12);
            }
            assert!(m.element_facets(a).contains(&f));
        }
        let sorted = (1..m.n_facets()).all(|f| m.facet(f - 1) < m.facet(f));
        assert!(sorted, "facets in lexicographic order");
    }
}

#[test]
fn plain_export() {
    let m = MeshLevel::unit_box_cells(2, 1).unwrap();
    let mut out = Vec::new();
    m.write_plain(&mut out).unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 4);
    assert_eq!(text.lines().filter(|l| l.starts_with("e ")).count(), 2);
}
