//! Geometric multigrid on a hierarchy of condensed facet systems.
//!
//! Level 0 is solved exactly. On finer levels a cycle does `m_l` smoothing
//! sweeps, `q` recursive coarse corrections and `m_l` transposed sweeps, so
//! each cycle is a symmetric operator. `q = 1` with constant `m_l` is the
//! V-cycle, `q = 2` the W-cycle, and `q = 1` with `m_l = 2^(J-l) m_J` the
//! variable V-cycle.

use crate::linalg::{norm2, Cholesky, CsrMatrix, LinalgError, Preconditioner};
use crate::smoothers::Smoother;

#[derive(Clone, Debug)]
pub struct MgLevel {
    pub matrix: CsrMatrix,
    smoother: Option<Smoother>,
    prolongation: Option<CsrMatrix>,
    restriction: Option<CsrMatrix>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultigridError {
    #[error("hierarchy needs {levels} matrices, {levels_minus_one} prolongations and smoothers; got {matrices}, {prolongations}, {smoothers}")]
    Shape {
        levels: usize,
        levels_minus_one: usize,
        matrices: usize,
        prolongations: usize,
        smoothers: usize,
    },
    #[error("coarse matrix: {0}")]
    Coarse(#[from] LinalgError),
    #[error("cycle top level {top} exceeds hierarchy with {levels} levels")]
    TopLevel { top: usize, levels: usize },
    #[error("schedule has {got} step counts, expected {expected}")]
    Schedule { got: usize, expected: usize },
}

/// Level operators, transfers and smoothers, plus the coarse factorization.
#[derive(Clone, Debug)]
pub struct MgHierarchy {
    levels: Vec<MgLevel>,
    coarse: Cholesky,
}

impl MgHierarchy {
    /// `prolongations[k]` maps level `k` to level `k + 1`; `smoothers[k]`
    /// belongs to level `k + 1`.
    pub fn new(matrices: Vec<CsrMatrix>, prolongations: Vec<CsrMatrix>, smoothers: Vec<Smoother>) -> Result<MgHierarchy, MultigridError> {
        let n = matrices.len();
        if n == 0 || prolongations.len() + 1 != n || smoothers.len() + 1 != n {
            return Err(MultigridError::Shape {
                levels: n,
                levels_minus_one: n.saturating_sub(1),
                matrices: n,
                prolongations: prolongations.len(),
                smoothers: smoothers.len(),
            });
        }
        let c = &matrices[0];
        let coarse = Cholesky::factor(c.nrows(), |i, j| c.get(i, j))?;
        let mut levels = Vec::with_capacity(n);
        let mut ps = prolongations.into_iter();
        let mut ss = smoothers.into_iter();
        for (l, matrix) in matrices.into_iter().enumerate() {
            let (smoother, prolongation) = if l == 0 { (None, None) } else { (ss.next(), ps.next()) };
            let restriction = prolongation.as_ref().map(|p| p.transpose());
            levels.push(MgLevel {
                matrix,
                smoother,
                prolongation,
                restriction,
            });
        }
        Ok(MgHierarchy { levels, coarse })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &MgLevel {
        &self.levels[l]
    }

    pub fn matrix(&self, l: usize) -> &CsrMatrix {
        &self.levels[l].matrix
    }

    pub fn smoother(&self, l: usize) -> Option<&Smoother> {
        self.levels[l].smoother.as_ref()
    }

    pub fn prolongation(&self, l: usize) -> Option<&CsrMatrix> {
        self.levels[l].prolongation.as_ref()
    }

    /// Cycle whose finest level is `top`.
    pub fn cycle(&self, top: usize, schedule: CycleSchedule) -> Result<Cycle<'_>, MultigridError> {
        if top >= self.levels.len() {
            return Err(MultigridError::TopLevel { top, levels: self.levels.len() });
        }
        if schedule.steps.len() != top + 1 {
            return Err(MultigridError::Schedule { got: schedule.steps.len(), expected: top + 1 });
        }
        Ok(Cycle { hier: self, top, schedule })
    }
}

/// Number of recursive coarse corrections and smoothing steps per level
/// (entry `l` is used on level `l`; entry 0 is ignored).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CycleSchedule {
    pub q: usize,
    pub steps: Vec<usize>,
}

impl CycleSchedule {
    pub fn v(top: usize, m: usize) -> CycleSchedule {
        CycleSchedule { q: 1, steps: vec![m; top + 1] }
    }

    pub fn w(top: usize, m: usize) -> CycleSchedule {
        CycleSchedule { q: 2, steps: vec![m; top + 1] }
    }

    /// `m_l = 2^(top - l) m_top`.
    pub fn variable_v(top: usize, m_top: usize) -> CycleSchedule {
        CycleSchedule {
            q: 1,
            steps: (0..=top).map(|l| m_top << (top - l)).collect(),
        }
    }
}

pub struct Cycle<'a> {
    hier: &'a MgHierarchy,
    top: usize,
    schedule: CycleSchedule,
}

#[derive(Clone, Debug)]
pub struct StationaryReport {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub relative_residual: f64,
}

impl<'a> Cycle<'a> {
    pub fn top(&self) -> usize {
        self.top
    }

    pub fn matrix(&self) -> &'a CsrMatrix {
        &self.hier.levels[self.top].matrix
    }

    /// One cycle on `A_l u = f`, updating `u` in place.
    pub fn cycle_on(&self, l: usize, f: &[f64], u: &mut [f64]) {
        if l == 0 {
            u.copy_from_slice(f);
            self.hier.coarse.solve_in_place(u);
            return;
        }
        let level = &self.hier.levels[l];
        let a = &level.matrix;
        let smoother = level.smoother.as_ref().expect("fine levels have smoothers");
        let m = self.schedule.steps[l];
        for _ in 0..m {
            smoother.smooth(a, u, f);
        }
        let r = a.residual(f, u);
        let restriction = level.restriction.as_ref().expect("fine levels have transfers");
        let rc = restriction.mul_vec(&r);
        let mut ec = vec![0.0; rc.len()];
        for _ in 0..self.schedule.q {
            self.cycle_on(l - 1, &rc, &mut ec);
        }
        let pe = level.prolongation.as_ref().unwrap().mul_vec(&ec);
        for (ui, pi) in u.iter_mut().zip(pe) {
            *ui += pi;
        }
        for _ in 0..m {
            smoother.smooth_transpose(a, u, f);
        }
    }

    /// Stationary iteration `u <- MG(f, u)` from zero until
    /// `|r| <= rtol |f|`. Stops early once the residual has grown by
    /// `divergence_factor`.
    ///
    /// Runs in residual-correction form, `u += B r`, `r -= A B r`, with the
    /// residual updated recursively as in CG. The true residual of a system
    /// with a large penalty bottoms out far above `1e-8 |f|` in double
    /// precision.
    pub fn solve_stationary(&self, f: &[f64], rtol: f64, max_iter: usize, divergence_factor: f64) -> StationaryReport {
        let a = self.matrix();
        let n = f.len();
        let mut u = vec![0.0; n];
        let fnorm = norm2(f);
        if fnorm == 0.0 {
            return StationaryReport {
                solution: u,
                iterations: 0,
                converged: true,
                relative_residual: 0.0,
            };
        }
        let mut r = f.to_vec();
        let mut delta = vec![0.0; n];
        let mut ad = vec![0.0; n];
        let mut rel = 1.0;
        for it in 1..=max_iter {
            self.precondition(&r, &mut delta);
            a.matvec(&delta, &mut ad);
            for i in 0..n {
                u[i] += delta[i];
                r[i] -= ad[i];
            }
            rel = norm2(&r) / fnorm;
            if rel <= rtol {
                return StationaryReport {
                    solution: u,
                    iterations: it,
                    converged: true,
                    relative_residual: rel,
                };
            }
            if !rel.is_finite() || rel > divergence_factor {
                return StationaryReport {
                    solution: u,
                    iterations: it,
                    converged: false,
                    relative_residual: rel,
                };
            }
        }
        StationaryReport {
            solution: u,
            iterations: max_iter,
            converged: false,
            relative_residual: rel,
        }
    }
}

impl Preconditioner for Cycle<'_> {
    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        z.iter_mut().for_each(|v| *v = 0.0);
        self.cycle_on(self.top, r, z);
    }
}
