//! Uncondensed HDG systems assembled term by term from the quadrature rules,
//! with local unknowns in a monomial basis. Used as an independent reference
//! for the closed-form condensation; intended for small meshes only.

use crate::hdg_diffusion::{DiffusionData, HdgError};
use crate::hdg_stokes::StokesData;
use crate::linalg::{CsrMatrix, DenseMatrix, LinalgError, Lu, TripletBuilder};
use crate::mesh::{ElementGeometry, MeshLevel, Point};
use crate::quadrature::{q_boundary0, qk0, qk1};
use crate::spaces::FacetSpace;

/// Assembled system. Unknowns `e * local_size .. (e + 1) * local_size` belong
/// to element `e`; the remaining unknowns (facet values, then pressures if
/// any) are global.
#[derive(Clone, Debug)]
pub struct FullSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub local_size: usize,
    pub n_elements: usize,
    pub n_facet_unknowns: usize,
    pub n_pressures: usize,
}

impl FullSystem {
    pub fn global_offset(&self) -> usize {
        self.local_size * self.n_elements
    }

    pub fn n_global(&self) -> usize {
        self.n_facet_unknowns + self.n_pressures
    }
}

/// Monomial basis `1, x - x_K, ...` on element `K`.
fn monomial(geom: &ElementGeometry, k: usize, x: &Point) -> f64 {
    if k == 0 {
        1.0
    } else {
        x[k - 1] - geom.barycenter[k - 1]
    }
}

/// Value at `x` of the local affine function with monomial coefficients `c`.
pub fn eval_monomial(geom: &ElementGeometry, c: &[f64], x: &Point) -> f64 {
    (0..=geom.dim).map(|k| c[k] * monomial(geom, k, x)).sum()
}

fn only(i: usize, v: impl Fn(&Point) -> f64) -> impl Fn(usize, &Point) -> f64 {
    move |k, x| if k == i { v(x) } else { 0.0 }
}

/// Reaction-diffusion system. Local unknowns: `d` flux components, then the
/// `d + 1` monomial coefficients of `u_h`.
pub fn assemble_full_hdg_diffusion(mesh: &MeshLevel, space: &FacetSpace, data: &DiffusionData) -> Result<FullSystem, HdgError> {
    let d = mesh.dim();
    let nv = d + 1;
    let ne = mesh.n_elements();
    let nl = d + nv;
    let goff = ne * nl;
    let n = goff + space.n_free();
    let mut t = TripletBuilder::new(n, n);
    let mut rhs = vec![0.0; n];
    for e in 0..ne {
        let geom = mesh.element_geometry(e);
        let a = data.alpha_h[e];
        if !(a > 0.0 && a.is_finite()) {
            return Err(HdgError::InvalidCoefficient { name: "alpha", value: a, element: e });
        }
        let tau = |k: usize| a / geom.h_facet(k);
        let s0 = e * nl;
        let u0 = s0 + d;
        let facets = mesh.element_facets(e);
        for ra in 0..d {
            t.push(s0 + ra, s0 + ra, qk0(&geom, |_| 1.0 / a));
            for i in 0..nv {
                if let Some(fi) = space.dof(facets[i]) {
                    let n_i = geom.normals[i];
                    t.push(s0 + ra, goff + fi, q_boundary0(&geom, only(i, |_| n_i[ra])));
                }
            }
        }
        for j in 0..nv {
            for k in 0..nv {
                let v = q_boundary0(&geom, |q, x| tau(q) * monomial(&geom, k, x) * monomial(&geom, j, x))
                    + qk1(&geom, |x| (data.beta)(x) * monomial(&geom, k, x) * monomial(&geom, j, x));
                t.push(u0 + j, u0 + k, v);
            }
            for i in 0..nv {
                if let Some(fi) = space.dof(facets[i]) {
                    t.push(u0 + j, goff + fi, -q_boundary0(&geom, only(i, |x| tau(i) * monomial(&geom, j, x))));
                }
            }
            rhs[u0 + j] = qk1(&geom, |x| (data.f)(x) * monomial(&geom, j, x));
        }
        for i in 0..nv {
            let Some(fi) = space.dof(facets[i]) else { continue };
            let row = goff + fi;
            let n_i = geom.normals[i];
            for b in 0..d {
                t.push(row, s0 + b, q_boundary0(&geom, only(i, |_| n_i[b])));
            }
            for k in 0..nv {
                t.push(row, u0 + k, q_boundary0(&geom, only(i, |x| tau(i) * monomial(&geom, k, x))));
            }
            t.push(row, row, -q_boundary0(&geom, only(i, |_| tau(i))));
        }
    }
    Ok(FullSystem {
        matrix: t.build().expect("indices in range"),
        rhs,
        local_size: nl,
        n_elements: ne,
        n_facet_unknowns: space.n_free(),
        n_pressures: 0,
    })
}

/// Generalized Stokes system. Local unknowns: the `d x d` gradient tensor
/// (row major), then `d + 1` monomial coefficients per velocity component.
/// Global unknowns: facet velocities, then one pressure per element.
pub fn assemble_full_hdg_stokes(mesh: &MeshLevel, space: &FacetSpace, data: &StokesData) -> Result<FullSystem, HdgError> {
    let d = mesh.dim();
    let nv = d + 1;
    let ne = mesh.n_elements();
    let nl = d * d + d * nv;
    let goff = ne * nl;
    let poff = goff + space.n_free();
    let n = poff + ne;
    let mu = data.mu;
    let mut t = TripletBuilder::new(n, n);
    let mut rhs = vec![0.0; n];
    let mut g = vec![0.0; mesh.n_facets() * d];
    for f in 0..mesh.n_facets() {
        if space.is_dirichlet(f) {
            let v = (data.dirichlet_value)(&mesh.facet_barycenter(f));
            g[f * d..(f + 1) * d].copy_from_slice(&v[..d]);
        }
    }
    for e in 0..ne {
        let geom = mesh.element_geometry(e);
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(HdgError::InvalidCoefficient { name: "mu", value: mu, element: e });
        }
        let tau = |k: usize| mu / geom.h_facet(k);
        let l0 = e * nl;
        let u0 = l0 + d * d;
        let facets = mesh.element_facets(e);
        // Column for facet component, or the prescribed value on Dirichlet facets.
        let facet_col = |i: usize, c: usize| -> Result<usize, f64> {
            match space.dof(facets[i]) {
                Some(fi) => Ok(goff + fi + c),
                None => Err(g[facets[i] * d + c]),
            }
        };
        for a in 0..d {
            for b in 0..d {
                let row = l0 + a * d + b;
                t.push(row, row, qk0(&geom, |_| 1.0 / mu));
                for i in 0..nv {
                    let n_i = geom.normals[i];
                    let v = q_boundary0(&geom, only(i, |_| n_i[b]));
                    match facet_col(i, a) {
                        Ok(col) => t.push(row, col, v),
                        Err(gv) => rhs[row] -= v * gv,
                    }
                }
            }
        }
        for a in 0..d {
            for j in 0..nv {
                let row = u0 + a * nv + j;
                for k in 0..nv {
                    let v = q_boundary0(&geom, |q, x| tau(q) * monomial(&geom, k, x) * monomial(&geom, j, x))
                        + qk1(&geom, |x| (data.beta)(x) * monomial(&geom, k, x) * monomial(&geom, j, x));
                    t.push(row, u0 + a * nv + k, v);
                }
                for i in 0..nv {
                    let v = -q_boundary0(&geom, only(i, |x| tau(i) * monomial(&geom, j, x)));
                    match facet_col(i, a) {
                        Ok(col) => t.push(row, col, v),
                        Err(gv) => rhs[row] -= v * gv,
                    }
                }
                rhs[row] = rhs[row] + qk1(&geom, |x| (data.f)(x)[a] * monomial(&geom, j, x));
            }
        }
        let prow = poff + e;
        for i in 0..nv {
            let n_i = geom.normals[i];
            for c in 0..d {
                let v = q_boundary0(&geom, only(i, |_| n_i[c]));
                match facet_col(i, c) {
                    Ok(col) => t.push(prow, col, v),
                    Err(gv) => rhs[prow] -= v * gv,
                }
            }
        }
        for i in 0..nv {
            let n_i = geom.normals[i];
            for c in 0..d {
                let Ok(row) = facet_col(i, c) else { continue };
                for b in 0..d {
                    t.push(row, l0 + c * d + b, q_boundary0(&geom, only(i, |_| n_i[b])));
                }
                t.push(row, prow, q_boundary0(&geom, only(i, |_| n_i[c])));
                for k in 0..nv {
                    t.push(row, u0 + c * nv + k, q_boundary0(&geom, only(i, |x| tau(i) * monomial(&geom, k, x))));
                }
                t.push(row, row, -q_boundary0(&geom, only(i, |_| tau(i))));
            }
        }
    }
    Ok(FullSystem {
        matrix: t.build().expect("indices in range"),
        rhs,
        local_size: nl,
        n_elements: ne,
        n_facet_unknowns: space.n_free(),
        n_pressures: ne,
    })
}

/// Schur complement onto the global unknowns, computed by eliminating each
/// element's local block with a dense solve.
#[derive(Clone, Debug)]
pub struct Condensed {
    pub matrix: DenseMatrix,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CondensationError {
    #[error("local unknown {row} of element {element} couples to unknown {col} of another element")]
    InterElementCoupling { element: usize, row: usize, col: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn local_factors(sys: &FullSystem, e: usize) -> Result<(Lu, Vec<usize>), CondensationError> {
    let goff = sys.global_offset();
    let rows: Vec<usize> = (e * sys.local_size..(e + 1) * sys.local_size).collect();
    for &r in &rows {
        let (cols, _) = sys.matrix.row(r);
        if let Some(&c) = cols.iter().find(|&&c| c < goff && !rows.contains(&c)) {
            return Err(CondensationError::InterElementCoupling { element: e, row: r, col: c });
        }
    }
    Ok((sys.matrix.dense_block(&rows, &rows).lu()?, rows))
}

pub fn condense_brute_force(sys: &FullSystem) -> Result<Condensed, CondensationError> {
    let goff = sys.global_offset();
    let ng = sys.n_global();
    let globals: Vec<usize> = (goff..goff + ng).collect();
    let mut s = sys.matrix.dense_block(&globals, &globals);
    let mut g = sys.rhs[goff..].to_vec();
    for e in 0..sys.n_elements {
        let (lu, rows) = local_factors(sys, e)?;
        let b = sys.matrix.dense_block(&rows, &globals);
        let c = sys.matrix.dense_block(&globals, &rows);
        let touched: Vec<usize> = (0..ng).filter(|&j| (0..rows.len()).any(|r| b[(r, j)] != 0.0 || c[(j, r)] != 0.0)).collect();
        let local_rhs = lu.solve(&sys.rhs[rows[0]..rows[0] + rows.len()]);
        let mut inv_b = Vec::with_capacity(touched.len());
        for &j in &touched {
            let col: Vec<f64> = (0..rows.len()).map(|r| b[(r, j)]).collect();
            inv_b.push(lu.solve(&col));
        }
        for &i in &touched {
            let ci: Vec<f64> = (0..rows.len()).map(|r| c[(i, r)]).collect();
            g[i] -= crate::linalg::dot(&ci, &local_rhs);
            for (k, &j) in touched.iter().enumerate() {
                s[(i, j)] -= crate::linalg::dot(&ci, &inv_b[k]);
            }
        }
    }
    Ok(Condensed { matrix: s, rhs: g })
}

/// Solves the full system by condensation and back substitution. With
/// `mean_zero_pressure` the pressure is constrained by a Lagrange multiplier
/// to have zero measure-weighted mean.
pub fn solve_full(mesh: &MeshLevel, sys: &FullSystem, mean_zero_pressure: bool) -> Result<Vec<f64>, CondensationError> {
    let cond = condense_brute_force(sys)?;
    let ng = sys.n_global();
    let goff = sys.global_offset();
    let global = if mean_zero_pressure && sys.n_pressures > 0 {
        let mut m = DenseMatrix::zeros(ng + 1, ng + 1);
        for i in 0..ng {
            for j in 0..ng {
                m[(i, j)] = cond.matrix[(i, j)];
            }
        }
        for e in 0..sys.n_pressures {
            let w = mesh.element_measure(e);
            m[(ng, sys.n_facet_unknowns + e)] = w;
            m[(sys.n_facet_unknowns + e, ng)] = w;
        }
        let mut rhs = cond.rhs.clone();
        rhs.push(0.0);
        let mut x = m.lu()?.solve(&rhs);
        x.truncate(ng);
        x
    } else {
        cond.matrix.lu()?.solve(&cond.rhs)
    };
    let mut x = vec![0.0; sys.matrix.nrows()];
    x[goff..].copy_from_slice(&global);
    let globals: Vec<usize> = (goff..goff + ng).collect();
    for e in 0..sys.n_elements {
        let (lu, rows) = local_factors(sys, e)?;
        let b = sys.matrix.dense_block(&rows, &globals);
        let bx = b.mul_vec(&global);
        let r: Vec<f64> = rows.iter().zip(&bx).map(|(&i, v)| sys.rhs[i] - v).collect();
        let xl = lu.solve(&r);
        x[rows[0]..rows[0] + rows.len()].copy_from_slice(&xl);
    }
    Ok(x)
}
