//! Point and vertex-patch relaxation for the condensed facet systems.
//!
//! Every smoother acts in place as `u <- u + R (f - A u)`. The transposed
//! sweep applies `R^T`: the same diagonal for the Jacobi variants and the
//! reversed ordering for the Gauss-Seidel variants.

use crate::linalg::{Cholesky, CsrMatrix};
use crate::mesh::MeshLevel;
use crate::spaces::FacetSpace;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmootherKind {
    PointJacobi,
    PointGaussSeidel,
    BlockJacobi,
    BlockGaussSeidel,
}

pub const POINT_JACOBI_DAMPING: f64 = 0.5;
pub const BLOCK_JACOBI_DAMPING: f64 = 0.4;

/// Free unknowns on all facets sharing a mesh vertex, one patch per vertex.
pub fn vertex_patches(mesh: &MeshLevel, space: &FacetSpace) -> Vec<Vec<usize>> {
    let mut patches = vec![Vec::new(); mesh.n_vertices()];
    for f in 0..mesh.n_facets() {
        if let Some(dof) = space.dof(f) {
            for &v in mesh.facet(f) {
                patches[v].extend(dof..dof + space.components());
            }
        }
    }
    patches.retain(|p| !p.is_empty());
    for p in &mut patches {
        p.sort_unstable();
    }
    patches
}

#[derive(Clone, Debug)]
pub struct Patch {
    dofs: Vec<usize>,
    factor: Cholesky,
}

#[derive(Clone, Debug)]
pub enum Smoother {
    PointJacobi { damping: f64, inv_diag: Vec<f64> },
    PointGaussSeidel { diag: Vec<f64> },
    BlockJacobi { damping: f64, patches: Vec<Patch> },
    BlockGaussSeidel { patches: Vec<Patch> },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SmootherError {
    #[error("diagonal entry {index} is not positive ({value})")]
    NonPositiveDiagonal { index: usize, value: f64 },
    #[error("patch matrix at patch {patch} is not positive definite")]
    SingularPatch { patch: usize },
}

fn factor_patches(a: &CsrMatrix, patches: Vec<Vec<usize>>) -> Result<Vec<Patch>, SmootherError> {
    patches
        .into_iter()
        .enumerate()
        .map(|(k, dofs)| {
            let block = a.dense_block(&dofs, &dofs);
            let factor = block.cholesky().map_err(|_| SmootherError::SingularPatch { patch: k })?;
            Ok(Patch { dofs, factor })
        })
        .collect()
}

impl Smoother {
    /// Builds a smoother for `a`. Block variants need the vertex patches.
    pub fn new(kind: SmootherKind, a: &CsrMatrix, patches: Option<Vec<Vec<usize>>>) -> Result<Smoother, SmootherError> {
        let diag = a.diagonal();
        if let Some((index, &value)) = diag.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(SmootherError::NonPositiveDiagonal { index, value });
        }
        Ok(match kind {
            SmootherKind::PointJacobi => Smoother::PointJacobi {
                damping: POINT_JACOBI_DAMPING,
                inv_diag: diag.iter().map(|v| 1.0 / v).collect(),
            },
            SmootherKind::PointGaussSeidel => Smoother::PointGaussSeidel { diag },
            SmootherKind::BlockJacobi => Smoother::BlockJacobi {
                damping: BLOCK_JACOBI_DAMPING,
                patches: factor_patches(a, patches.expect("block smoother needs patches"))?,
            },
            SmootherKind::BlockGaussSeidel => Smoother::BlockGaussSeidel {
                patches: factor_patches(a, patches.expect("block smoother needs patches"))?,
            },
        })
    }

    /// One forward sweep on `a u = f`.
    pub fn smooth(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64]) {
        self.sweep(a, u, f, false)
    }

    /// One sweep with the transposed smoother.
    pub fn smooth_transpose(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64]) {
        self.sweep(a, u, f, true)
    }

    /// `R r`, i.e. one sweep from a zero initial guess.
    pub fn apply(&self, a: &CsrMatrix, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        self.smooth(a, &mut z, r);
        z
    }

    pub fn apply_transpose(&self, a: &CsrMatrix, r: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; r.len()];
        self.smooth_transpose(a, &mut z, r);
        z
    }

    fn sweep(&self, a: &CsrMatrix, u: &mut [f64], f: &[f64], reverse: bool) {
        match self {
            Smoother::PointJacobi { damping, inv_diag } => {
                let r = a.residual(f, u);
                for i in 0..u.len() {
                    u[i] += damping * inv_diag[i] * r[i];
                }
            }
            Smoother::PointGaussSeidel { diag } => {
                let n = u.len();
                let mut step = |i: usize| {
                    let (cols, vals) = a.row(i);
                    let mut s = f[i];
                    for (&j, &v) in cols.iter().zip(vals) {
                        s -= v * u[j];
                    }
                    u[i] += s / diag[i];
                };
                if reverse {
                    (0..n).rev().for_each(&mut step);
                } else {
                    (0..n).for_each(&mut step);
                }
            }
            Smoother::BlockJacobi { damping, patches } => {
                let r = a.residual(f, u);
                let mut du = vec![0.0; u.len()];
                for p in patches {
                    let mut local: Vec<f64> = p.dofs.iter().map(|&i| r[i]).collect();
                    p.factor.solve_in_place(&mut local);
                    for (&i, v) in p.dofs.iter().zip(local) {
                        du[i] += v;
                    }
                }
                for i in 0..u.len() {
                    u[i] += damping * du[i];
                }
            }
            Smoother::BlockGaussSeidel { patches } => {
                let mut local = Vec::new();
                let mut step = |p: &Patch| {
                    local.clear();
                    for &i in &p.dofs {
                        let (cols, vals) = a.row(i);
                        let mut s = f[i];
                        for (&j, &v) in cols.iter().zip(vals) {
                            s -= v * u[j];
                        }
                        local.push(s);
                    }
                    p.factor.solve_in_place(&mut local);
                    for (&i, v) in p.dofs.iter().zip(&local) {
                        u[i] += v;
                    }
                };
                if reverse {
                    patches.iter().rev().for_each(&mut step);
                } else {
                    patches.iter().for_each(&mut step);
                }
            }
        }
    }
}
