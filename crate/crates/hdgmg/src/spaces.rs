//! Facet unknowns (one value per facet and component) and the local
//! affine reconstruction from facet-barycenter values.

use crate::mesh::{ElementGeometry, MeshLevel, Point};

/// Degree-of-freedom map for piecewise constant facet functions with
/// `components` values per facet. Dirichlet facets carry no unknowns.
#[derive(Clone, Debug)]
pub struct FacetSpace {
    components: usize,
    free_index: Vec<usize>,
    dirichlet: Vec<bool>,
    n_free_facets: usize,
    weights: Vec<f64>,
}

pub const NOT_FREE: usize = usize::MAX;

impl FacetSpace {
    /// `is_dirichlet` is evaluated at the barycenter of each boundary facet.
    pub fn new(mesh: &MeshLevel, components: usize, is_dirichlet: impl Fn(&Point) -> bool) -> FacetSpace {
        let nf = mesh.n_facets();
        let mut dirichlet = vec![false; nf];
        let mut free_index = vec![NOT_FREE; nf];
        let mut n_free_facets = 0;
        for f in 0..nf {
            if mesh.is_boundary_facet(f) && is_dirichlet(&mesh.facet_barycenter(f)) {
                dirichlet[f] = true;
            } else {
                free_index[f] = n_free_facets;
                n_free_facets += 1;
            }
        }
        let d1 = (mesh.dim() + 1) as f64;
        let mut facet_weight = vec![0.0; n_free_facets];
        for e in 0..mesh.n_elements() {
            let w = mesh.element_measure(e) / d1;
            for &f in mesh.element_facets(e) {
                if free_index[f] != NOT_FREE {
                    facet_weight[free_index[f]] += w;
                }
            }
        }
        let mut weights = Vec::with_capacity(n_free_facets * components);
        for w in facet_weight {
            weights.extend(std::iter::repeat(w).take(components));
        }
        FacetSpace {
            components,
            free_index,
            dirichlet,
            n_free_facets,
            weights,
        }
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of unknowns.
    pub fn n_free(&self) -> usize {
        self.n_free_facets * self.components
    }

    pub fn n_free_facets(&self) -> usize {
        self.n_free_facets
    }

    pub fn is_dirichlet(&self, f: usize) -> bool {
        self.dirichlet[f]
    }

    /// Index of the first component of facet `f`, or `None` on Dirichlet facets.
    pub fn dof(&self, f: usize) -> Option<usize> {
        let i = self.free_index[f];
        (i != NOT_FREE).then(|| i * self.components)
    }

    /// Diagonal weights of the mass-lumped inner product
    /// `sum_K |K|/(d+1) sum_i u(m_i) v(m_i)` in the unknown ordering.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Values of a full facet vector (one entry per facet and component) at
    /// the unknowns.
    pub fn restrict_to_free(&self, full: &[f64]) -> Vec<f64> {
        let c = self.components;
        let mut out = vec![0.0; self.n_free()];
        for (f, &i) in self.free_index.iter().enumerate() {
            if i != NOT_FREE {
                out[i * c..(i + 1) * c].copy_from_slice(&full[f * c..(f + 1) * c]);
            }
        }
        out
    }

    /// Full facet vector from unknowns and prescribed Dirichlet values.
    pub fn extend(&self, free: &[f64], dirichlet_values: Option<&[f64]>) -> Vec<f64> {
        let c = self.components;
        let mut out = vec![0.0; self.free_index.len() * c];
        for (f, &i) in self.free_index.iter().enumerate() {
            if i != NOT_FREE {
                out[f * c..(f + 1) * c].copy_from_slice(&free[i * c..(i + 1) * c]);
            } else if let Some(g) = dirichlet_values {
                out[f * c..(f + 1) * c].copy_from_slice(&g[f * c..(f + 1) * c]);
            }
        }
        out
    }
}

/// Gradient of the affine reconstruction of facet values on one element.
pub fn cr_gradient(geom: &ElementGeometry, values: &[f64]) -> Point {
    geom.facet_gradient(values)
}

/// Removes the measure-weighted mean of an elementwise constant function.
pub fn project_mean_zero(mesh: &MeshLevel, p: &mut [f64]) {
    let mut total = 0.0;
    let mut mean = 0.0;
    for (e, v) in p.iter().enumerate() {
        let m = mesh.element_measure(e);
        total += m;
        mean += m * v;
    }
    mean /= total;
    for v in p.iter_mut() {
        *v -= mean;
    }
}
