//! Prolongation between nested facet spaces.
//!
//! A coarse facet function is reconstructed as a Crouzeix-Raviart function and
//! sampled at the fine facet barycenters. Fine facets lying on a coarse
//! interior facet see two different reconstructions and take their average.
//! For Stokes, the values on fine facets interior to a coarse element are
//! afterwards corrected by a local solve so that the coarse divergence is
//! reproduced exactly on each coarse element.

use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::mesh::{FacetParent, MeshHierarchy};
use crate::spaces::FacetSpace;

/// Averaging prolongation from level `l - 1` to level `l` as a sparse
/// `fine.n_free() x coarse.n_free()` matrix.
pub fn prolongation(hier: &MeshHierarchy, l: usize, coarse: &FacetSpace, fine: &FacetSpace) -> CsrMatrix {
    let cm = hier.level(l - 1);
    let fm = hier.level(l);
    let comps = coarse.components();
    assert_eq!(comps, fine.components());
    let mut t = TripletBuilder::with_capacity(fine.n_free(), coarse.n_free(), fine.n_free() * (cm.dim() + 1) * 2);
    let parents = hier.facet_parents(l);
    for f in 0..fm.n_facets() {
        let Some(row) = fine.dof(f) else { continue };
        let x = fm.facet_barycenter(f);
        let elems: Vec<usize> = match parents[f] {
            FacetParent::InteriorOfCoarseElement(e) => vec![e],
            FacetParent::OnCoarseFacet(cf) => {
                let (a, b) = cm.facet_elements(cf);
                b.map_or(vec![a], |b| vec![a, b])
            }
        };
        let w = 1.0 / elems.len() as f64;
        for &e in &elems {
            let geom = cm.element_geometry(e);
            let phi = geom.facet_basis(&x);
            for (i, &cf) in cm.element_facets(e).iter().enumerate() {
                let Some(col) = coarse.dof(cf) else { continue };
                let v = w * phi[i];
                if v.abs() > 1e-14 {
                    for c in 0..comps {
                        t.push(row + c, col + c, v);
                    }
                }
            }
        }
    }
    t.build().expect("dofs in range")
}

/// Free fine unknowns on facets interior to each coarse element.
pub fn interior_unknowns(hier: &MeshHierarchy, l: usize, fine: &FacetSpace) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new(); hier.level(l - 1).n_elements()];
    for (f, p) in hier.facet_parents(l).iter().enumerate() {
        if let (FacetParent::InteriorOfCoarseElement(e), Some(dof)) = (*p, fine.dof(f)) {
            out[e].extend(dof..dof + fine.components());
        }
    }
    out
}

/// Replaces the rows of `p` belonging to facets interior to coarse elements by
/// `P - K_II^{-1} (K P)_I`, where `K` is the fine operator. The result maps
/// coarse functions to fine functions that are `K`-orthogonal to all fine
/// functions supported on coarse element interiors.
pub fn divergence_corrected_prolongation(hier: &MeshHierarchy, l: usize, fine: &FacetSpace, fine_matrix: &CsrMatrix, p: &CsrMatrix) -> CsrMatrix {
    let blocks = interior_unknowns(hier, l, fine);
    let mut replacements = Vec::new();
    let mut kp: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut acc: std::collections::BTreeMap<usize, f64> = std::collections::BTreeMap::new();
    for block in &blocks {
        if block.is_empty() {
            continue;
        }
        let k_ii = fine_matrix.dense_block(block, block);
        let chol = k_ii.cholesky().expect("operator is positive definite on element interiors");
        kp.clear();
        let mut cols: Vec<usize> = Vec::new();
        for &r in block {
            acc.clear();
            let (kc, kv) = fine_matrix.row(r);
            for (&j, &a) in kc.iter().zip(kv) {
                let (pc, pv) = p.row(j);
                for (&c, &b) in pc.iter().zip(pv) {
                    *acc.entry(c).or_insert(0.0) += a * b;
                }
            }
            cols.extend(acc.keys().copied());
            kp.push(acc.iter().map(|(&c, &v)| (c, v)).collect());
        }
        cols.sort_unstable();
        cols.dedup();
        let m = block.len();
        let mut correction = vec![vec![0.0; cols.len()]; m];
        let mut rhs = vec![0.0; m];
        for (k, &c) in cols.iter().enumerate() {
            for r in 0..m {
                rhs[r] = kp[r].binary_search_by_key(&c, |&(cc, _)| cc).map_or(0.0, |i| kp[r][i].1);
            }
            chol.solve_in_place(&mut rhs);
            for r in 0..m {
                correction[r][k] = rhs[r];
            }
        }
        for (r, &row) in block.iter().enumerate() {
            let (pc, pv) = p.row(row);
            let mut entries: Vec<(usize, f64)> = pc.iter().copied().zip(pv.iter().copied()).collect();
            for (k, &c) in cols.iter().enumerate() {
                let v = correction[r][k];
                if v != 0.0 {
                    entries.push((c, -v));
                }
            }
            replacements.push((row, entries));
        }
    }
    p.with_rows_replaced(&replacements)
}

/// Restriction adjoint to `p` in the lumped facet inner products:
/// `R = D_coarse^{-1} P^T D_fine`.
pub fn weighted_restriction(p: &CsrMatrix, coarse: &FacetSpace, fine: &FacetSpace, r: &[f64]) -> Vec<f64> {
    let wr: Vec<f64> = r.iter().zip(fine.weights()).map(|(a, w)| a * w).collect();
    let mut out = vec![0.0; p.ncols()];
    p.transpose_matvec_add(&wr, &mut out);
    for (v, w) in out.iter_mut().zip(coarse.weights()) {
        *v /= w;
    }
    out
}
