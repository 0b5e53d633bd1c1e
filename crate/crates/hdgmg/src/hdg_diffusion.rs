//! Statically condensed lowest-order HDG for `-div(alpha grad u) + beta u = f`
//! with homogeneous Dirichlet data on the marked part of the boundary.
//!
//! With one-point facet quadrature the local solve is closed form: the flux
//! is `-alpha_h` times the gradient of the affine function through the facet
//! values, and the condensed matrix is a Crouzeix-Raviart stiffness matrix
//! plus a diagonal reaction term damped by `gamma`.

use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::mesh::{ElementGeometry, MeshLevel, Point};
use crate::quadrature::{error_quadrature, qk1};
use crate::spaces::FacetSpace;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum HdgError {
    #[error("{name} must be positive and finite, got {value} on element {element}")]
    InvalidCoefficient { name: &'static str, value: f64, element: usize },
    #[error("{name} must be non-negative and finite, got {value} on element {element}")]
    NegativeCoefficient { name: &'static str, value: f64, element: usize },
    #[error("vector of length {got} does not match {expected} unknowns")]
    LengthMismatch { got: usize, expected: usize },
}

/// Elementwise constant diffusivity: the inverse of the facet-barycenter
/// average of `1 / alpha` on each element.
pub fn element_diffusivity(mesh: &MeshLevel, alpha: impl Fn(&Point) -> f64) -> Vec<f64> {
    (0..mesh.n_elements())
        .map(|e| {
            let g = mesh.element_geometry(e);
            g.measure / qk1(&g, |x| 1.0 / alpha(x))
        })
        .collect()
}

/// Data for one mesh level: `alpha_h` per element, pointwise `beta` and `f`.
pub struct DiffusionData<'a> {
    pub alpha_h: &'a [f64],
    pub beta: &'a dyn Fn(&Point) -> f64,
    pub f: &'a dyn Fn(&Point) -> f64,
}

/// Damping factor `alpha_h / (alpha_h + h_i^2 beta(m_i) / (d+1))` per local facet.
pub(crate) fn gammas(geom: &ElementGeometry, alpha_h: f64, beta: &dyn Fn(&Point) -> f64) -> [f64; 4] {
    let d1 = geom.n_facets() as f64;
    let mut g = [0.0; 4];
    for i in 0..geom.n_facets() {
        let h = geom.h_facet(i);
        g[i] = alpha_h / (alpha_h + h * h * beta(&geom.facet_barycenters[i]) / d1);
    }
    g
}

pub(crate) fn check_element(e: usize, geom: &ElementGeometry, scale: f64, scale_name: &'static str, beta: &dyn Fn(&Point) -> f64) -> Result<(), HdgError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(HdgError::InvalidCoefficient { name: scale_name, value: scale, element: e });
    }
    for i in 0..geom.n_facets() {
        let b = beta(&geom.facet_barycenters[i]);
        if !(b >= 0.0 && b.is_finite()) {
            return Err(HdgError::NegativeCoefficient { name: "beta", value: b, element: e });
        }
    }
    Ok(())
}

/// Condensed symmetric positive (semi)definite system for the facet unknowns.
#[derive(Clone, Debug)]
pub struct CondensedDiffusion {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
}

pub fn assemble_condensed_diffusion(mesh: &MeshLevel, space: &FacetSpace, data: &DiffusionData) -> Result<CondensedDiffusion, HdgError> {
    let n = space.n_free();
    let nv = mesh.dim() + 1;
    let mut trip = TripletBuilder::with_capacity(n, n, mesh.n_elements() * nv * nv);
    let mut rhs = vec![0.0; n];
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e);
        let a = data.alpha_h[e];
        check_element(e, &geom, a, "alpha", data.beta)?;
        let gamma = gammas(&geom, a, data.beta);
        let lumped = geom.measure / nv as f64;
        let dofs: Vec<Option<usize>> = mesh.element_facets(e).iter().map(|&f| space.dof(f)).collect();
        let mut grads = [[0.0; 3]; 4];
        for i in 0..nv {
            let s = geom.facet_measures[i] / geom.measure;
            grads[i] = geom.normals[i].map(|c| s * c);
        }
        for i in 0..nv {
            let Some(di) = dofs[i] else { continue };
            let m = &geom.facet_barycenters[i];
            rhs[di] += lumped * gamma[i] * (data.f)(m);
            for j in 0..nv {
                let Some(dj) = dofs[j] else { continue };
                let mut v = a * geom.measure * crate::mesh::dot(&grads[i], &grads[j]);
                if i == j {
                    v += lumped * gamma[i] * (data.beta)(m);
                }
                trip.push(di, dj, v);
            }
        }
    }
    Ok(CondensedDiffusion {
        matrix: trip.build().expect("dofs in range"),
        rhs,
    })
}

/// Local fields recovered from the facet solution: one flux vector per element
/// and the values of `u_h` at the facet barycenters of each element.
#[derive(Clone, Debug)]
pub struct DiffusionLocal {
    pub flux: Vec<Point>,
    pub values: Vec<f64>,
}

pub fn recover_local_diffusion(mesh: &MeshLevel, space: &FacetSpace, data: &DiffusionData, uhat: &[f64]) -> Result<DiffusionLocal, HdgError> {
    if uhat.len() != space.n_free() {
        return Err(HdgError::LengthMismatch { got: uhat.len(), expected: space.n_free() });
    }
    let nv = mesh.dim() + 1;
    let mut flux = Vec::with_capacity(mesh.n_elements());
    let mut values = Vec::with_capacity(mesh.n_elements() * nv);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e);
        let a = data.alpha_h[e];
        check_element(e, &geom, a, "alpha", data.beta)?;
        let gamma = gammas(&geom, a, data.beta);
        let mut local = [0.0; 4];
        for (i, &f) in mesh.element_facets(e).iter().enumerate() {
            local[i] = space.dof(f).map_or(0.0, |d| uhat[d]);
        }
        let g = geom.facet_gradient(&local);
        flux.push(g.map(|c| -a * c));
        for i in 0..nv {
            let h = geom.h_facet(i);
            let fi = (data.f)(&geom.facet_barycenters[i]);
            values.push(gamma[i] * (local[i] + h * h / (nv as f64 * a) * fi));
        }
    }
    Ok(DiffusionLocal { flux, values })
}

/// `L2` errors of `u_h` and of the flux against the exact `u` and `sigma`.
pub fn diffusion_errors(
    mesh: &MeshLevel,
    local: &DiffusionLocal,
    u: impl Fn(&Point) -> f64,
    sigma: impl Fn(&Point) -> Point,
) -> (f64, f64) {
    let nv = mesh.dim() + 1;
    let (mut eu, mut es) = (0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e);
        let vals = &local.values[e * nv..(e + 1) * nv];
        let s = local.flux[e];
        eu += error_quadrature(&geom, |x, lam| {
            let uh: f64 = (0..nv).map(|i| vals[i] * (1.0 - (nv - 1) as f64 * lam[i])).sum();
            (u(x) - uh).powi(2)
        });
        es += error_quadrature(&geom, |x, _| {
            let ex = sigma(x);
            (0..3).map(|k| (ex[k] - s[k]).powi(2)).sum()
        });
    }
    (eu.sqrt(), es.sqrt())
}
