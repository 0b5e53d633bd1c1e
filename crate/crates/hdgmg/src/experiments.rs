//! End-to-end experiments: convergence studies with manufactured solutions
//! and multigrid iteration studies, reported per mesh level as CSV.
//!
//! Levels are numbered from 1 (the coarse mesh). A multigrid study on level
//! `J` uses levels `1..=J`, with the coarse level solved exactly.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::hdg_diffusion::{assemble_condensed_diffusion, diffusion_errors, element_diffusivity, recover_local_diffusion, DiffusionData, HdgError};
use crate::hdg_stokes::{assemble_condensed_stokes, recover_local_stokes, stokes_errors, uzawa, CondensedStokes, StokesData};
use crate::linalg::{estimate_condition_number, pcg, CsrMatrix, LinalgError, PcgOptions};
use crate::mesh::{MeshError, MeshHierarchy, MeshLevel, Point};
use crate::multigrid::{CycleSchedule, MgHierarchy, MultigridError};
use crate::smoothers::{vertex_patches, Smoother, SmootherError, SmootherKind};
use crate::spaces::FacetSpace;
use crate::transfer::{divergence_corrected_prolongation, prolongation};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Hdg(#[from] HdgError),
    #[error(transparent)]
    Multigrid(#[from] MultigridError),
    #[error(transparent)]
    Smoother(#[from] SmootherError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("solver did not reach the tolerance on level {level}")]
    NotConverged { level: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equation {
    Diffusion,
    Stokes,
}

/// How `alpha^{-1}` is carried to the coarse levels of the chessboard study.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoarseAverage {
    /// `alpha_l^{-1} = 2 / (rho + 1)`, the inverse of the mean of `alpha`.
    MeanOfAlpha,
    /// `alpha_l^{-1} = (rho + 1) / (2 rho)`, the mean of `alpha^{-1}`.
    MeanOfInverse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Problem {
    /// Manufactured smooth solution on the unit box.
    Smooth,
    /// Diffusion on the unit square with `alpha` alternating between 1 and
    /// `rho` on the cells of the finest level, `beta = 1`, `f = 1`.
    Chessboard { rho: f64, coarse: CoarseAverage },
    /// Diffusion with `alpha = 1`, constant `beta` and `f = 1`.
    Constant,
    /// Stokes flow in the unit box driven by the top lid, `f = 0`.
    LidDriven,
    /// Stokes flow over a backward-facing step with do-nothing outflow.
    BackwardStep,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CoarseMesh {
    /// Structured mesh whose element diameter does not exceed the value.
    MaxDiameter(f64),
    /// Structured mesh with this many cells per unit length.
    Cells(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CycleKind {
    V,
    W,
    VariableV,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Stationary multigrid iteration.
    Solver,
    /// Conjugate gradients preconditioned by one cycle.
    Preconditioner,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub problem: Problem,
    pub coarse_mesh: CoarseMesh,
    pub levels: usize,
    pub smoother: SmootherKind,
    /// Smoothing steps, or the steps on the finest level for the variable V-cycle.
    pub steps: usize,
    pub cycle: CycleKind,
    pub mode: Mode,
    /// Reaction coefficient; ignored by the smooth diffusion problem, where
    /// `beta = alpha`.
    pub beta: f64,
    pub viscosity: f64,
    pub epsilon: f64,
    pub uzawa_steps: usize,
    pub rtol: f64,
    pub max_iter: usize,
    /// Stationary iterations stop once the residual grew by this factor.
    pub divergence_factor: f64,
}

impl ExperimentConfig {
    fn base(dim: usize, problem: Problem, levels: usize) -> ExperimentConfig {
        let coarse_mesh = match (problem, dim) {
            (Problem::Chessboard { .. }, _) => CoarseMesh::Cells(4),
            (Problem::BackwardStep, _) => CoarseMesh::MaxDiameter(0.5),
            (_, 2) => CoarseMesh::MaxDiameter(0.25),
            _ => CoarseMesh::MaxDiameter(0.5),
        };
        ExperimentConfig {
            dim,
            problem,
            coarse_mesh,
            levels,
            smoother: SmootherKind::PointGaussSeidel,
            steps: 2,
            cycle: CycleKind::V,
            mode: Mode::Preconditioner,
            beta: 1.0,
            viscosity: 1.0,
            epsilon: 1e-8,
            uzawa_steps: 1,
            rtol: 1e-8,
            max_iter: 500,
            divergence_factor: 1e3,
        }
    }

    /// Smooth diffusion problem solved to `1e-10` by V-cycle preconditioned CG.
    pub fn converge_diffusion(dim: usize, levels: usize) -> ExperimentConfig {
        ExperimentConfig {
            rtol: 1e-10,
            ..Self::base(dim, Problem::Smooth, levels)
        }
    }

    /// Smooth Stokes problem with `beta = 10`, one Uzawa step, and W-cycle
    /// block Gauss-Seidel preconditioned CG.
    pub fn converge_stokes(dim: usize, levels: usize) -> ExperimentConfig {
        ExperimentConfig {
            beta: 10.0,
            smoother: SmootherKind::BlockGaussSeidel,
            cycle: CycleKind::W,
            steps: 2,
            rtol: 1e-10,
            ..Self::base(dim, Problem::Smooth, levels)
        }
    }

    pub fn mg_diffusion(dim: usize, problem: Problem, levels: usize) -> ExperimentConfig {
        Self::base(dim, problem, levels)
    }

    pub fn mg_stokes(dim: usize, problem: Problem, levels: usize) -> ExperimentConfig {
        ExperimentConfig {
            smoother: SmootherKind::BlockGaussSeidel,
            cycle: CycleKind::VariableV,
            steps: 1,
            ..Self::base(dim, problem, levels)
        }
    }

    pub fn validate(&self, equation: Equation) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(msg));
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dimension must be 2 or 3, got {}", self.dim));
        }
        if self.levels == 0 {
            return bad("at least one level is required".into());
        }
        if self.steps == 0 {
            return bad("smoothing steps must be positive".into());
        }
        if self.cycle == CycleKind::VariableV && self.levels > 1 && (self.steps << (self.levels - 1)) >> (self.levels - 1) != self.steps {
            return bad("variable V-cycle step counts overflow".into());
        }
        if !(self.rtol > 0.0 && self.rtol < 1.0) {
            return bad(format!("relative tolerance must lie in (0, 1), got {}", self.rtol));
        }
        if self.max_iter == 0 {
            return bad("iteration limit must be positive".into());
        }
        if !(self.divergence_factor > 1.0) {
            return bad("divergence factor must exceed 1".into());
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be non-negative and finite, got {}", self.beta));
        }
        match self.coarse_mesh {
            CoarseMesh::MaxDiameter(h) if !(h > 0.0 && h.is_finite()) => return bad(format!("coarse mesh size must be positive, got {h}")),
            CoarseMesh::Cells(0) => return bad("coarse mesh needs at least one cell".into()),
            _ => {}
        }
        match (equation, self.problem) {
            (Equation::Diffusion, Problem::Smooth | Problem::Constant) => {}
            (Equation::Diffusion, Problem::Chessboard { rho, .. }) => {
                if self.dim != 2 {
                    return bad("the chessboard problem is two-dimensional".into());
                }
                if !(rho > 0.0 && rho.is_finite()) {
                    return bad(format!("rho must be positive and finite, got {rho}"));
                }
                if !matches!(self.coarse_mesh, CoarseMesh::Cells(_)) {
                    return bad("the chessboard problem needs a cell-based coarse mesh".into());
                }
            }
            (Equation::Stokes, Problem::Smooth | Problem::LidDriven | Problem::BackwardStep) => {
                if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
                    return bad(format!("epsilon must be positive and finite, got {}", self.epsilon));
                }
                if self.uzawa_steps == 0 {
                    return bad("at least one Uzawa step is required".into());
                }
                if !(self.viscosity > 0.0 && self.viscosity.is_finite()) {
                    return bad(format!("viscosity must be positive and finite, got {}", self.viscosity));
                }
            }
            (eq, p) => return bad(format!("problem {p:?} is not available for {eq:?}")),
        }
        Ok(())
    }

    fn coarse_level(&self) -> Result<MeshLevel, MeshError> {
        match (self.problem, self.coarse_mesh) {
            (Problem::BackwardStep, CoarseMesh::MaxDiameter(h)) => MeshLevel::backward_step(self.dim, h),
            (Problem::BackwardStep, CoarseMesh::Cells(k)) => MeshLevel::backward_step_cells(self.dim, k),
            (_, CoarseMesh::MaxDiameter(h)) => MeshLevel::unit_box(self.dim, h),
            (_, CoarseMesh::Cells(n)) => MeshLevel::unit_box_cells(self.dim, n),
        }
    }

    fn schedule(&self, top: usize) -> CycleSchedule {
        match self.cycle {
            CycleKind::V => CycleSchedule::v(top, self.steps),
            CycleKind::W => CycleSchedule::w(top, self.steps),
            CycleKind::VariableV => CycleSchedule::variable_v(top, self.steps),
        }
    }

    fn needs_patches(&self) -> bool {
        matches!(self.smoother, SmootherKind::BlockJacobi | SmootherKind::BlockGaussSeidel)
    }
}

/// Results on one mesh level. `iterations` is `None` when the iteration
/// diverged or the preconditioner turned out indefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelReport {
    pub level: usize,
    pub dofs: usize,
    pub iterations: Option<usize>,
    pub kappa: Option<f64>,
    pub err_u: Option<f64>,
    pub err_flux: Option<f64>,
    pub err_div: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SolverReport {
    pub equation: Equation,
    pub levels: Vec<LevelReport>,
    pub wall_time: Duration,
}

/// `log2(previous / current)`, the observed order under halving of `h`.
pub fn eoc(previous: f64, current: f64) -> f64 {
    (previous / current).log2()
}

impl SolverReport {
    fn has_div(&self) -> bool {
        self.equation == Equation::Stokes && self.levels.iter().any(|l| l.err_div.is_some())
    }

    /// EOC of one error column; entry `k` compares rows `k - 1` and `k`.
    pub fn eocs(&self, column: impl Fn(&LevelReport) -> Option<f64>) -> Vec<Option<f64>> {
        let mut out = vec![None];
        for w in self.levels.windows(2) {
            out.push(match (column(&w[0]), column(&w[1])) {
                (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some(eoc(a, b)),
                _ => None,
            });
        }
        out.truncate(self.levels.len());
        out
    }

    pub fn to_csv(&self) -> String {
        let div = self.has_div();
        let mut s = String::from("level,dofs,iters,kappa,err_u,eoc_u,err_flux,eoc_flux");
        if div {
            s.push_str(",err_div,eoc_div");
        }
        s.push('\n');
        let eu = self.eocs(|l| l.err_u);
        let ef = self.eocs(|l| l.err_flux);
        let ed = self.eocs(|l| l.err_div);
        let sci = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.4e}"));
        let fixed = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.2}"));
        for (k, l) in self.levels.iter().enumerate() {
            let iters = l.iterations.map_or("N/A".to_string(), |i| i.to_string());
            let kappa = l.kappa.map_or(String::new(), |x| format!("{x:.3}"));
            let _ = write!(s, "{},{},{},{},{},{},{},{}", l.level, l.dofs, iters, kappa, sci(l.err_u), fixed(eu[k]), sci(l.err_flux), fixed(ef[k]));
            if div {
                let _ = write!(s, ",{},{}", sci(l.err_div), fixed(ed[k]));
            }
            s.push('\n');
        }
        s
    }
}

/// Exact solutions and data of the manufactured problems.
pub mod manufactured {
    use crate::mesh::Point;

    fn alpha_factor(x: &Point, dim: usize) -> f64 {
        let mut s = x[0].sin() * x[1].sin();
        if dim == 3 {
            s *= x[2].sin();
        }
        s
    }

    /// `alpha = beta = 1 + sin(x) sin(y) [sin(z)] / 2`.
    pub fn diffusion_alpha(x: &Point, dim: usize) -> f64 {
        1.0 + 0.5 * alpha_factor(x, dim)
    }

    fn alpha_gradient(x: &Point, dim: usize) -> Point {
        let (sx, sy, cx, cy) = (x[0].sin(), x[1].sin(), x[0].cos(), x[1].cos());
        if dim == 2 {
            [0.5 * cx * sy, 0.5 * sx * cy, 0.0]
        } else {
            let (sz, cz) = (x[2].sin(), x[2].cos());
            [0.5 * cx * sy * sz, 0.5 * sx * cy * sz, 0.5 * sx * sy * cz]
        }
    }

    /// `u = prod_k x_k (1 - x_k)`.
    pub fn diffusion_u(x: &Point, dim: usize) -> f64 {
        (0..dim).map(|k| x[k] - x[k] * x[k]).product()
    }

    fn diffusion_grad_u(x: &Point, dim: usize) -> Point {
        let mut g = [0.0; 3];
        for k in 0..dim {
            g[k] = (0..dim).map(|j| if j == k { 1.0 - 2.0 * x[j] } else { x[j] - x[j] * x[j] }).product();
        }
        g
    }

    fn diffusion_laplacian(x: &Point, dim: usize) -> f64 {
        (0..dim).map(|k| (0..dim).map(|j| if j == k { -2.0 } else { x[j] - x[j] * x[j] }).product::<f64>()).sum()
    }

    /// `sigma = -alpha grad u`.
    pub fn diffusion_flux(x: &Point, dim: usize) -> Point {
        let a = diffusion_alpha(x, dim);
        diffusion_grad_u(x, dim).map(|g| -a * g)
    }

    /// `f = -div(alpha grad u) + beta u` with `beta = alpha`.
    pub fn diffusion_source(x: &Point, dim: usize) -> f64 {
        let a = diffusion_alpha(x, dim);
        let ga = alpha_gradient(x, dim);
        let gu = diffusion_grad_u(x, dim);
        let adv: f64 = (0..dim).map(|k| ga[k] * gu[k]).sum();
        -a * diffusion_laplacian(x, dim) - adv + a * diffusion_u(x, dim)
    }

    // g(t) = t^2 (t - 1)^2 and its derivatives.
    fn g0(t: f64) -> f64 {
        t * t * (t - 1.0) * (t - 1.0)
    }
    fn g1(t: f64) -> f64 {
        2.0 * t * (t - 1.0) * (2.0 * t - 1.0)
    }
    fn g2(t: f64) -> f64 {
        12.0 * t * t - 12.0 * t + 2.0
    }
    fn g3(t: f64) -> f64 {
        24.0 * t - 12.0
    }

    /// Divergence-free velocity vanishing on the boundary of the unit box.
    pub fn stokes_u(x: &Point, dim: usize) -> Point {
        let (a, b) = (x[0], x[1]);
        if dim == 2 {
            [-g0(a) * g1(b), g0(b) * g1(a), 0.0]
        } else {
            let c = x[2];
            [g0(a) * g1(b) * g1(c), g0(b) * g1(a) * g1(c), -2.0 * g0(c) * g1(a) * g1(b)]
        }
    }

    /// `grad u`, row `i` holding the gradient of component `i`.
    pub fn stokes_grad_u(x: &Point, dim: usize) -> [Point; 3] {
        let (a, b) = (x[0], x[1]);
        if dim == 2 {
            [
                [-g1(a) * g1(b), -g0(a) * g2(b), 0.0],
                [g2(a) * g0(b), g1(a) * g1(b), 0.0],
                [0.0; 3],
            ]
        } else {
            let c = x[2];
            [
                [g1(a) * g1(b) * g1(c), g0(a) * g2(b) * g1(c), g0(a) * g1(b) * g2(c)],
                [g2(a) * g0(b) * g1(c), g1(a) * g1(b) * g1(c), g1(a) * g0(b) * g2(c)],
                [-2.0 * g0(c) * g2(a) * g1(b), -2.0 * g0(c) * g1(a) * g2(b), -2.0 * g1(c) * g1(a) * g1(b)],
            ]
        }
    }

    fn stokes_laplacian(x: &Point, dim: usize) -> Point {
        let (a, b) = (x[0], x[1]);
        if dim == 2 {
            [-(g2(a) * g1(b) + g0(a) * g3(b)), g3(a) * g0(b) + g1(a) * g2(b), 0.0]
        } else {
            let c = x[2];
            [
                g2(a) * g1(b) * g1(c) + g0(a) * g3(b) * g1(c) + g0(a) * g1(b) * g3(c),
                g3(a) * g0(b) * g1(c) + g1(a) * g2(b) * g1(c) + g1(a) * g0(b) * g3(c),
                -2.0 * (g0(c) * g3(a) * g1(b) + g0(c) * g1(a) * g3(b) + g2(c) * g1(a) * g1(b)),
            ]
        }
    }

    /// Mean-zero pressure.
    pub fn stokes_p(x: &Point, dim: usize) -> f64 {
        if dim == 2 {
            x[0] * (1.0 - x[0]) * (1.0 - x[1]) - 1.0 / 12.0
        } else {
            x[0] * (1.0 - x[0]) * (1.0 - x[1]) * (1.0 - x[2]) - 1.0 / 24.0
        }
    }

    fn stokes_grad_p(x: &Point, dim: usize) -> Point {
        let (a, b) = (x[0], x[1]);
        if dim == 2 {
            [(1.0 - 2.0 * a) * (1.0 - b), -a * (1.0 - a), 0.0]
        } else {
            let c = x[2];
            [(1.0 - 2.0 * a) * (1.0 - b) * (1.0 - c), -a * (1.0 - a) * (1.0 - c), -a * (1.0 - a) * (1.0 - b)]
        }
    }

    /// `f = beta u - mu lap u + grad p`.
    pub fn stokes_source(x: &Point, dim: usize, mu: f64, beta: f64) -> Point {
        let u = stokes_u(x, dim);
        let l = stokes_laplacian(x, dim);
        let gp = stokes_grad_p(x, dim);
        let mut f = [0.0; 3];
        for c in 0..dim {
            f[c] = beta * u[c] - mu * l[c] + gp[c];
        }
        f
    }

    /// Lid velocity on the top side, zero elsewhere.
    pub fn lid_velocity(x: &Point, dim: usize) -> Point {
        let top = if dim == 2 { x[1] } else { x[2] };
        if (top - 1.0).abs() > 1e-12 {
            return [0.0; 3];
        }
        if dim == 2 {
            [4.0 * x[0] * (1.0 - x[0]), 0.0, 0.0]
        } else {
            [16.0 * x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]), 0.0, 0.0]
        }
    }

    /// Parabolic inflow at `x = 0`, zero elsewhere.
    pub fn step_velocity(x: &Point, dim: usize) -> Point {
        if x[0].abs() > 1e-12 {
            return [0.0; 3];
        }
        let y = x[1];
        if dim == 2 {
            [16.0 * (1.0 - y) * (y - 0.5), 0.0, 0.0]
        } else {
            let z = x[2];
            [64.0 * (1.0 - y) * (y - 0.5) * z * (1.0 - z), 0.0, 0.0]
        }
    }
}

/// Outflow boundary of the step domain.
pub const STEP_OUTFLOW: f64 = 5.0;

fn all_dirichlet(_: &Point) -> bool {
    true
}

fn step_dirichlet(x: &Point) -> bool {
    (x[0] - STEP_OUTFLOW).abs() > 1e-12
}

/// Facet spaces and right-hand sides on all levels of a hierarchy; the
/// matrices live in the multigrid hierarchy.
struct Levels {
    spaces: Vec<FacetSpace>,
    rhs: Vec<Vec<f64>>,
}

fn make_smoother(cfg: &ExperimentConfig, mesh: &MeshLevel, space: &FacetSpace, a: &CsrMatrix) -> Result<Smoother, SmootherError> {
    let patches = cfg.needs_patches().then(|| vertex_patches(mesh, space));
    Smoother::new(cfg.smoother, a, patches)
}

fn diffusion_prolongations(hier: &MeshHierarchy, spaces: &[FacetSpace], top: usize) -> Vec<CsrMatrix> {
    (1..=top).map(|l| prolongation(hier, l, &spaces[l - 1], &spaces[l])).collect()
}

/// Per-level diffusivity for the diffusion problems. For the chessboard
/// problem it depends on which level is the finest.
fn diffusivity(cfg: &ExperimentConfig, hier: &MeshHierarchy, l: usize, top: usize) -> Vec<f64> {
    let mesh = hier.level(l);
    match cfg.problem {
        Problem::Smooth => element_diffusivity(mesh, |x| manufactured::diffusion_alpha(x, cfg.dim)),
        Problem::Chessboard { rho, coarse } => {
            if l == top {
                let cells = match cfg.coarse_mesh {
                    CoarseMesh::Cells(n) => n << top,
                    CoarseMesh::MaxDiameter(_) => unreachable!("validated"),
                };
                (0..mesh.n_elements())
                    .map(|e| {
                        let b = mesh.element_geometry(e).barycenter;
                        let i = (b[0] * cells as f64).floor() as usize;
                        let j = (b[1] * cells as f64).floor() as usize;
                        if (i + j) % 2 == 0 {
                            1.0
                        } else {
                            rho
                        }
                    })
                    .collect()
            } else {
                let value = match coarse {
                    CoarseAverage::MeanOfAlpha => (rho + 1.0) / 2.0,
                    CoarseAverage::MeanOfInverse => 2.0 * rho / (rho + 1.0),
                };
                vec![value; mesh.n_elements()]
            }
        }
        _ => vec![1.0; mesh.n_elements()],
    }
}

fn diffusion_level(cfg: &ExperimentConfig, hier: &MeshHierarchy, l: usize, top: usize, space: &FacetSpace) -> Result<(CsrMatrix, Vec<f64>), ExperimentError> {
    let alpha_h = diffusivity(cfg, hier, l, top);
    let dim = cfg.dim;
    let beta_const = cfg.beta;
    let (beta, f): (Box<dyn Fn(&Point) -> f64>, Box<dyn Fn(&Point) -> f64>) = match cfg.problem {
        Problem::Smooth => (Box::new(move |x| manufactured::diffusion_alpha(x, dim)), Box::new(move |x| manufactured::diffusion_source(x, dim))),
        Problem::Chessboard { .. } => (Box::new(|_| 1.0), Box::new(|_| 1.0)),
        _ => (Box::new(move |_| beta_const), Box::new(|_| 1.0)),
    };
    let data = DiffusionData { alpha_h: &alpha_h, beta: &*beta, f: &*f };
    let sys = assemble_condensed_diffusion(hier.level(l), space, &data)?;
    Ok((sys.matrix, sys.rhs))
}

fn diffusion_levels(cfg: &ExperimentConfig, hier: &MeshHierarchy, top: usize) -> Result<(Levels, Vec<CsrMatrix>), ExperimentError> {
    let mut spaces = Vec::new();
    let mut matrices = Vec::new();
    let mut rhs = Vec::new();
    for l in 0..=top {
        let space = FacetSpace::new(hier.level(l), 1, all_dirichlet);
        let (a, b) = diffusion_level(cfg, hier, l, top, &space)?;
        spaces.push(space);
        matrices.push(a);
        rhs.push(b);
    }
    Ok((Levels { spaces, rhs }, matrices))
}

fn assemble_mg(cfg: &ExperimentConfig, hier: &MeshHierarchy, levels: &Levels, matrices: Vec<CsrMatrix>, prolongations: Vec<CsrMatrix>) -> Result<MgHierarchy, ExperimentError> {
    let smoothers = (1..matrices.len())
        .map(|l| make_smoother(cfg, hier.level(l), &levels.spaces[l], &matrices[l]))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MgHierarchy::new(matrices, prolongations, smoothers)?)
}

/// Multigrid for the diffusion problem on levels `0..=top` (zero-based).
fn diffusion_multigrid(cfg: &ExperimentConfig, hier: &MeshHierarchy, top: usize) -> Result<(Levels, MgHierarchy), ExperimentError> {
    let (levels, matrices) = diffusion_levels(cfg, hier, top)?;
    let ps = diffusion_prolongations(hier, &levels.spaces, top);
    let mg = assemble_mg(cfg, hier, &levels, matrices, ps)?;
    Ok((levels, mg))
}

struct StokesProblem {
    dim: usize,
    mu: f64,
    beta: f64,
    problem: Problem,
}

impl StokesProblem {
    fn with_data<T>(&self, run: impl FnOnce(&StokesData) -> T) -> T {
        let (dim, mu, beta) = (self.dim, self.mu, self.beta);
        let beta_fn = move |_: &Point| beta;
        let zero = |_: &Point| [0.0; 3];
        let source = move |x: &Point| manufactured::stokes_source(x, dim, mu, beta);
        let lid = move |x: &Point| manufactured::lid_velocity(x, dim);
        let step = move |x: &Point| manufactured::step_velocity(x, dim);
        let (f, g): (&dyn Fn(&Point) -> Point, &dyn Fn(&Point) -> Point) = match self.problem {
            Problem::Smooth => (&source, &zero),
            Problem::LidDriven => (&zero, &lid),
            _ => (&zero, &step),
        };
        run(&StokesData { mu, beta: &beta_fn, f, dirichlet_value: g })
    }

    fn space(&self, mesh: &MeshLevel) -> FacetSpace {
        match self.problem {
            Problem::BackwardStep => FacetSpace::new(mesh, self.dim, step_dirichlet),
            _ => FacetSpace::new(mesh, self.dim, all_dirichlet),
        }
    }
}

fn stokes_problem(cfg: &ExperimentConfig) -> StokesProblem {
    StokesProblem {
        dim: cfg.dim,
        mu: cfg.viscosity,
        beta: cfg.beta,
        problem: cfg.problem,
    }
}

/// Penalized velocity systems on all levels with the same `epsilon`, the
/// divergence-corrected prolongations and the multigrid built on them. The
/// matrices are moved into the multigrid hierarchy, leaving the `matrix`
/// fields of the returned systems empty.
fn stokes_multigrid(cfg: &ExperimentConfig, hier: &MeshHierarchy) -> Result<(Levels, Vec<CondensedStokes>, MgHierarchy), ExperimentError> {
    let sp = stokes_problem(cfg);
    let penalty = 1.0 / cfg.epsilon;
    let mut spaces = Vec::new();
    let mut systems = Vec::new();
    for l in 0..hier.n_levels() {
        let space = sp.space(hier.level(l));
        let sys = sp.with_data(|data| assemble_condensed_stokes(hier.level(l), &space, data, penalty))?;
        spaces.push(space);
        systems.push(sys);
    }
    let ps = (1..hier.n_levels())
        .map(|l| {
            let p = prolongation(hier, l, &spaces[l - 1], &spaces[l]);
            divergence_corrected_prolongation(hier, l, &spaces[l], &systems[l].matrix, &p)
        })
        .collect();
    let matrices = systems.iter_mut().map(|s| std::mem::replace(&mut s.matrix, CsrMatrix::identity(0))).collect();
    let levels = Levels {
        rhs: systems.iter().map(|s| s.rhs.clone()).collect(),
        spaces,
    };
    let mg = assemble_mg(cfg, hier, &levels, matrices, ps)?;
    Ok((levels, systems, mg))
}

/// Iterations and condition estimate of one multigrid run on level `top`.
fn mg_run(cfg: &ExperimentConfig, mg: &MgHierarchy, top: usize, rhs: &[f64]) -> Result<(Option<usize>, Option<f64>, Option<Vec<f64>>), ExperimentError> {
    let cycle = mg.cycle(top, cfg.schedule(top))?;
    match cfg.mode {
        Mode::Solver => {
            let rep = cycle.solve_stationary(rhs, cfg.rtol, cfg.max_iter, cfg.divergence_factor);
            Ok(if rep.converged { (Some(rep.iterations), None, Some(rep.solution)) } else { (None, None, None) })
        }
        Mode::Preconditioner => {
            let opts = PcgOptions { rtol: cfg.rtol, max_iter: cfg.max_iter };
            match pcg(cycle.matrix(), rhs, &cycle, &opts) {
                Ok(rep) if rep.converged => {
                    let kappa = estimate_condition_number(&rep.lanczos).ok();
                    Ok((Some(rep.iterations), kappa, Some(rep.solution)))
                }
                Ok(_) | Err(LinalgError::IndefinitePreconditioner { .. }) => Ok((None, None, None)),
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn hierarchy(cfg: &ExperimentConfig) -> Result<MeshHierarchy, ExperimentError> {
    Ok(MeshHierarchy::new(cfg.coarse_level()?, cfg.levels))
}

/// Errors of the smooth diffusion problem on every level, each solved by
/// multigrid (direct solve on level 1).
pub fn run_converge_diffusion(cfg: &ExperimentConfig) -> Result<SolverReport, ExperimentError> {
    cfg.validate(Equation::Diffusion)?;
    if cfg.problem != Problem::Smooth {
        return Err(ExperimentError::Config("convergence studies need the smooth problem".into()));
    }
    let start = Instant::now();
    let hier = hierarchy(cfg)?;
    let top = cfg.levels - 1;
    let (levels, mg) = diffusion_multigrid(cfg, &hier, top)?;
    let dim = cfg.dim;
    let mut out = Vec::new();
    for l in 0..=top {
        let mesh = hier.level(l);
        let (iterations, kappa, sol) = mg_run(cfg, &mg, l, &levels.rhs[l])?;
        let uhat = sol.ok_or(ExperimentError::NotConverged { level: l + 1 })?;
        let alpha_h = element_diffusivity(mesh, |x| manufactured::diffusion_alpha(x, dim));
        let beta = move |x: &Point| manufactured::diffusion_alpha(x, dim);
        let f = move |x: &Point| manufactured::diffusion_source(x, dim);
        let data = DiffusionData { alpha_h: &alpha_h, beta: &beta, f: &f };
        let local = recover_local_diffusion(mesh, &levels.spaces[l], &data, &uhat)?;
        let (eu, es) = diffusion_errors(mesh, &local, |x| manufactured::diffusion_u(x, dim), |x| manufactured::diffusion_flux(x, dim));
        out.push(LevelReport {
            level: l + 1,
            dofs: levels.spaces[l].n_free(),
            iterations,
            kappa,
            err_u: Some(eu),
            err_flux: Some(es),
            err_div: None,
        });
    }
    Ok(SolverReport {
        equation: Equation::Diffusion,
        levels: out,
        wall_time: start.elapsed(),
    })
}

/// Errors of the smooth Stokes problem on every level after the configured
/// number of Uzawa steps, each velocity solve done by multigrid.
pub fn run_converge_stokes(cfg: &ExperimentConfig) -> Result<SolverReport, ExperimentError> {
    cfg.validate(Equation::Stokes)?;
    if cfg.problem != Problem::Smooth {
        return Err(ExperimentError::Config("convergence studies need the smooth problem".into()));
    }
    let start = Instant::now();
    let hier = hierarchy(cfg)?;
    let (levels, systems, mg) = stokes_multigrid(cfg, &hier)?;
    let sp = stokes_problem(cfg);
    let dim = cfg.dim;
    let mu = cfg.viscosity;
    let mut out = Vec::new();
    for l in 0..hier.n_levels() {
        let mesh = hier.level(l);
        let mut total = 0;
        let mut kappa = None;
        let sol = uzawa(mesh, &systems[l], cfg.uzawa_steps, |rhs| {
            let (it, k, sol) = mg_run(cfg, &mg, l, rhs)?;
            total += it.unwrap_or(0);
            kappa = kappa.or(k);
            sol.ok_or(ExperimentError::NotConverged { level: l + 1 })
        })?;
        let local = sp.with_data(|data| recover_local_stokes(mesh, &levels.spaces[l], &systems[l], data, &sol))?;
        let errs = stokes_errors(
            mesh,
            &local,
            |x| manufactured::stokes_u(x, dim),
            |x| manufactured::stokes_grad_u(x, dim).map(|row| row.map(|v| -mu * v)),
        );
        out.push(LevelReport {
            level: l + 1,
            dofs: levels.spaces[l].n_free(),
            iterations: Some(total),
            kappa,
            err_u: Some(errs.velocity),
            err_flux: Some(errs.gradient),
            err_div: Some(errs.divergence),
        });
    }
    Ok(SolverReport {
        equation: Equation::Stokes,
        levels: out,
        wall_time: start.elapsed(),
    })
}

/// Multigrid iteration counts for the diffusion problem on levels `2..=J`.
pub fn run_mg_diffusion(cfg: &ExperimentConfig) -> Result<SolverReport, ExperimentError> {
    cfg.validate(Equation::Diffusion)?;
    let start = Instant::now();
    let hier = hierarchy(cfg)?;
    let mut out = Vec::new();
    let per_top = matches!(cfg.problem, Problem::Chessboard { .. });
    let shared = if per_top { None } else { Some(diffusion_multigrid(cfg, &hier, cfg.levels - 1)?) };
    for top in 1..cfg.levels {
        let owned;
        let (levels, mg) = match &shared {
            Some((levels, mg)) => (levels, mg),
            None => {
                owned = diffusion_multigrid(cfg, &hier, top)?;
                (&owned.0, &owned.1)
            }
        };
        let (iterations, kappa, _) = mg_run(cfg, mg, top, &levels.rhs[top])?;
        out.push(LevelReport {
            level: top + 1,
            dofs: levels.spaces[top].n_free(),
            iterations,
            kappa,
            err_u: None,
            err_flux: None,
            err_div: None,
        });
    }
    Ok(SolverReport {
        equation: Equation::Diffusion,
        levels: out,
        wall_time: start.elapsed(),
    })
}

/// Multigrid iteration counts for the first Uzawa velocity solve of a Stokes
/// problem on levels `2..=J`.
pub fn run_mg_stokes(cfg: &ExperimentConfig) -> Result<SolverReport, ExperimentError> {
    cfg.validate(Equation::Stokes)?;
    let start = Instant::now();
    let hier = hierarchy(cfg)?;
    let (levels, _, mg) = stokes_multigrid(cfg, &hier)?;
    let mut out = Vec::new();
    for top in 1..cfg.levels {
        let (iterations, kappa, _) = mg_run(cfg, &mg, top, &levels.rhs[top])?;
        out.push(LevelReport {
            level: top + 1,
            dofs: levels.spaces[top].n_free(),
            iterations,
            kappa,
            err_u: None,
            err_flux: None,
            err_div: None,
        });
    }
    Ok(SolverReport {
        equation: Equation::Stokes,
        levels: out,
        wall_time: start.elapsed(),
    })
}

/// Multigrid hierarchy for the configured diffusion problem with the finest
/// level `levels - 1`, for callers that drive the cycles themselves.
pub fn build_diffusion_multigrid(cfg: &ExperimentConfig) -> Result<(MeshHierarchy, MgHierarchy, Vec<FacetSpace>, Vec<Vec<f64>>), ExperimentError> {
    cfg.validate(Equation::Diffusion)?;
    let hier = hierarchy(cfg)?;
    let (levels, mg) = diffusion_multigrid(cfg, &hier, cfg.levels - 1)?;
    Ok((hier, mg, levels.spaces, levels.rhs))
}

/// Multigrid hierarchy and condensed systems for the configured Stokes
/// problem. The level matrices are held by the multigrid hierarchy only.
pub fn build_stokes_multigrid(cfg: &ExperimentConfig) -> Result<(MeshHierarchy, MgHierarchy, Vec<FacetSpace>, Vec<CondensedStokes>), ExperimentError> {
    cfg.validate(Equation::Stokes)?;
    let hier = hierarchy(cfg)?;
    let (levels, systems, mg) = stokes_multigrid(cfg, &hier)?;
    Ok((hier, mg, levels.spaces, systems))
}
