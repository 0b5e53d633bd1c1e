//! Statically condensed lowest-order HDG for the generalized Stokes problem
//! `beta u - div(mu grad u) + grad p = f`, `div u = 0`, with Dirichlet data on
//! the marked boundary facets and do-nothing outflow elsewhere.
//!
//! The velocity block is a vector Crouzeix-Raviart stiffness matrix plus a
//! damped lumped reaction term. The pressure is elementwise constant and is
//! handled by an augmented Lagrangian Uzawa iteration.

use crate::hdg_diffusion::{check_element, gammas, HdgError};
use crate::linalg::{CsrMatrix, TripletBuilder};
use crate::mesh::{MeshLevel, Point};
use crate::quadrature::error_quadrature;
use crate::spaces::{project_mean_zero, FacetSpace};

pub struct StokesData<'a> {
    pub mu: f64,
    pub beta: &'a dyn Fn(&Point) -> f64,
    pub f: &'a dyn Fn(&Point) -> Point,
    /// Velocity prescribed on Dirichlet facets, evaluated at facet barycenters.
    pub dirichlet_value: &'a dyn Fn(&Point) -> Point,
}

/// Condensed velocity system with the divergence penalty already added.
#[derive(Clone, Debug)]
pub struct CondensedStokes {
    /// `A + penalty * B^T W B` on the free velocity unknowns.
    pub matrix: CsrMatrix,
    pub penalty: f64,
    /// Elementwise divergence of the reconstructed velocity, free part.
    pub div: CsrMatrix,
    /// Divergence contributed by the Dirichlet data, per element.
    pub div_lift: Vec<f64>,
    pub measures: Vec<f64>,
    /// Load with the Dirichlet lifting (including its penalty part) moved over.
    pub rhs: Vec<f64>,
    /// Full facet vector of prescribed values (zero at free facets).
    pub dirichlet: Vec<f64>,
    /// Whether the pressure is only determined up to a constant.
    pub enclosed: bool,
}

/// Assembles the condensed velocity system. `penalty` is `1/epsilon`; zero
/// gives the plain velocity stiffness matrix.
pub fn assemble_condensed_stokes(mesh: &MeshLevel, space: &FacetSpace, data: &StokesData, penalty: f64) -> Result<CondensedStokes, HdgError> {
    let d = mesh.dim();
    let nv = d + 1;
    assert_eq!(space.components(), d, "velocity space needs one component per direction");
    let n = space.n_free();
    let ne = mesh.n_elements();
    let mut dirichlet = vec![0.0; mesh.n_facets() * d];
    let mut enclosed = true;
    for f in 0..mesh.n_facets() {
        if space.is_dirichlet(f) {
            let g = (data.dirichlet_value)(&mesh.facet_barycenter(f));
            dirichlet[f * d..(f + 1) * d].copy_from_slice(&g[..d]);
        } else if mesh.is_boundary_facet(f) {
            enclosed = false;
        }
    }

    let mut trip = TripletBuilder::with_capacity(n, n, ne * nv * nv * d * d);
    let mut div = TripletBuilder::with_capacity(ne, n, ne * nv * d);
    let mut rhs = vec![0.0; n];
    let mut div_lift = vec![0.0; ne];
    let mut measures = vec![0.0; ne];
    let m = nv * d;
    let mut local = vec![0.0; m * m];
    for e in 0..ne {
        let geom = mesh.element_geometry(e);
        check_element(e, &geom, data.mu, "mu", data.beta)?;
        let gamma = gammas(&geom, data.mu, data.beta);
        let lumped = geom.measure / nv as f64;
        measures[e] = geom.measure;
        let facets = mesh.element_facets(e);
        let mut b = [0.0; 12];
        for i in 0..nv {
            let s = geom.facet_measures[i] / geom.measure;
            for c in 0..d {
                b[i * d + c] = s * geom.normals[i][c];
            }
        }
        local.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..nv {
            for j in 0..nv {
                let gij: f64 = (0..d).map(|c| b[i * d + c] * b[j * d + c]).sum();
                let mut v = data.mu * geom.measure * gij;
                if i == j {
                    v += lumped * gamma[i] * (data.beta)(&geom.facet_barycenters[i]);
                }
                for c in 0..d {
                    local[(i * d + c) * m + j * d + c] += v;
                }
            }
        }
        for r in 0..m {
            for s in 0..m {
                local[r * m + s] += penalty * geom.measure * b[r] * b[s];
            }
        }
        for i in 0..nv {
            match space.dof(facets[i]) {
                Some(di) => {
                    let fi = (data.f)(&geom.facet_barycenters[i]);
                    for c in 0..d {
                        rhs[di + c] += lumped * gamma[i] * fi[c];
                        div.push(e, di + c, b[i * d + c]);
                    }
                }
                None => {
                    let g = &dirichlet[facets[i] * d..(facets[i] + 1) * d];
                    for c in 0..d {
                        div_lift[e] += b[i * d + c] * g[c];
                    }
                }
            }
        }
        for i in 0..nv {
            let Some(di) = space.dof(facets[i]) else { continue };
            for j in 0..nv {
                match space.dof(facets[j]) {
                    Some(dj) => {
                        for c in 0..d {
                            for c2 in 0..d {
                                let v = local[(i * d + c) * m + j * d + c2];
                                if v != 0.0 {
                                    trip.push(di + c, dj + c2, v);
                                }
                            }
                        }
                    }
                    None => {
                        let g = &dirichlet[facets[j] * d..(facets[j] + 1) * d];
                        for c in 0..d {
                            for c2 in 0..d {
                                rhs[di + c] -= local[(i * d + c) * m + j * d + c2] * g[c2];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(CondensedStokes {
        matrix: trip.build().expect("dofs in range"),
        penalty,
        div: div.build().expect("dofs in range"),
        div_lift,
        measures,
        rhs,
        dirichlet,
        enclosed,
    })
}

impl CondensedStokes {
    /// Elementwise divergence of the reconstructed velocity.
    pub fn divergence(&self, velocity: &[f64]) -> Vec<f64> {
        let mut dv = self.div.mul_vec(velocity);
        for (a, b) in dv.iter_mut().zip(&self.div_lift) {
            *a += b;
        }
        dv
    }

    /// `B^T W p`.
    pub fn weighted_div_transpose(&self, p: &[f64]) -> Vec<f64> {
        let wp: Vec<f64> = p.iter().zip(&self.measures).map(|(a, b)| a * b).collect();
        let mut out = vec![0.0; self.div.ncols()];
        self.div.transpose_matvec_add(&wp, &mut out);
        out
    }
}

#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
}

/// Augmented Lagrangian Uzawa iteration starting from zero pressure:
/// `A_eps u_k = F + B^T W p_{k-1}`, `p_k = p_{k-1} - (div u_k) / eps`.
/// `solve` applies an (approximate) inverse of `A_eps`.
pub fn uzawa<E>(
    mesh: &MeshLevel,
    sys: &CondensedStokes,
    steps: usize,
    mut solve: impl FnMut(&[f64]) -> Result<Vec<f64>, E>,
) -> Result<StokesSolution, E> {
    let mut pressure = vec![0.0; sys.measures.len()];
    let mut velocity = vec![0.0; sys.rhs.len()];
    for _ in 0..steps.max(1) {
        let mut rhs = sys.rhs.clone();
        for (r, g) in rhs.iter_mut().zip(sys.weighted_div_transpose(&pressure)) {
            *r += g;
        }
        velocity = solve(&rhs)?;
        for (p, dv) in pressure.iter_mut().zip(sys.divergence(&velocity)) {
            *p -= sys.penalty * dv;
        }
        if sys.enclosed {
            project_mean_zero(mesh, &mut pressure);
        }
    }
    Ok(StokesSolution { velocity, pressure })
}

/// Gradient tensor `L_h` (row `c` is `-mu grad` of component `c`) per element
/// and velocity values at the facet barycenters of each element.
#[derive(Clone, Debug)]
pub struct StokesLocal {
    pub gradient: Vec<[Point; 3]>,
    pub values: Vec<Point>,
    pub pressure: Vec<f64>,
}

pub fn recover_local_stokes(mesh: &MeshLevel, space: &FacetSpace, sys: &CondensedStokes, data: &StokesData, sol: &StokesSolution) -> Result<StokesLocal, HdgError> {
    let d = mesh.dim();
    let nv = d + 1;
    if sol.velocity.len() != space.n_free() {
        return Err(HdgError::LengthMismatch { got: sol.velocity.len(), expected: space.n_free() });
    }
    let full = space.extend(&sol.velocity, Some(&sys.dirichlet));
    let mut gradient = Vec::with_capacity(mesh.n_elements());
    let mut values = Vec::with_capacity(mesh.n_elements() * nv);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e);
        let gamma = gammas(&geom, data.mu, data.beta);
        let facets = mesh.element_facets(e);
        let mut l = [[0.0; 3]; 3];
        for c in 0..d {
            let comp: Vec<f64> = facets.iter().map(|&f| full[f * d + c]).collect();
            l[c] = geom.facet_gradient(&comp).map(|g| -data.mu * g);
        }
        gradient.push(l);
        for i in 0..nv {
            let h = geom.h_facet(i);
            let fi = (data.f)(&geom.facet_barycenters[i]);
            let mut v = [0.0; 3];
            for c in 0..d {
                v[c] = gamma[i] * (full[facets[i] * d + c] + h * h / (nv as f64 * data.mu) * fi[c]);
            }
            values.push(v);
        }
    }
    Ok(StokesLocal {
        gradient,
        values,
        pressure: sol.pressure.clone(),
    })
}

/// Errors of the velocity, of the velocity gradient tensor and the `L2` norm
/// of the divergence of `u_h`.
#[derive(Clone, Copy, Debug)]
pub struct StokesErrors {
    pub velocity: f64,
    pub gradient: f64,
    pub divergence: f64,
}

/// `u` is the exact velocity and `l` the exact `-mu grad u` (row per component).
pub fn stokes_errors(mesh: &MeshLevel, local: &StokesLocal, u: impl Fn(&Point) -> Point, l: impl Fn(&Point) -> [Point; 3]) -> StokesErrors {
    let d = mesh.dim();
    let nv = d + 1;
    let (mut eu, mut el, mut ed) = (0.0, 0.0, 0.0);
    for e in 0..mesh.n_elements() {
        let geom = mesh.element_geometry(e);
        let vals = &local.values[e * nv..(e + 1) * nv];
        let lh = local.gradient[e];
        eu += error_quadrature(&geom, |x, lam| {
            let ex = u(x);
            (0..d)
                .map(|c| {
                    let uh: f64 = (0..nv).map(|i| vals[i][c] * (1.0 - d as f64 * lam[i])).sum();
                    (ex[c] - uh).powi(2)
                })
                .sum()
        });
        el += error_quadrature(&geom, |x, _| {
            let ex = l(x);
            let mut s = 0.0;
            for r in 0..d {
                for c in 0..d {
                    s += (ex[r][c] - lh[r][c]).powi(2);
                }
            }
            s
        });
        let mut dv = 0.0;
        for c in 0..d {
            let comp: Vec<f64> = vals.iter().map(|v| v[c]).collect();
            dv += geom.facet_gradient(&comp)[c];
        }
        ed += geom.measure * dv * dv;
    }
    StokesErrors {
        velocity: eu.sqrt(),
        gradient: el.sqrt(),
        divergence: ed.sqrt(),
    }
}
