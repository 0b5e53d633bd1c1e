use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use hdgmg::experiments::{
    run_converge_diffusion, run_converge_stokes, run_mg_diffusion, run_mg_stokes, CoarseAverage, CoarseMesh, CycleKind, ExperimentConfig, Mode,
    Problem, SolverReport,
};
use hdgmg::mesh::MeshHierarchy;
use hdgmg::smoothers::SmootherKind;

/// Lowest-order HDG discretizations and multigrid solvers: convergence and
/// iteration-count studies written as CSV.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Error and EOC table for the smooth reaction-diffusion problem.
    ConvergeDiffusion(Common),
    /// Error and EOC table for the smooth generalized Stokes problem.
    ConvergeStokes(Common),
    /// Multigrid iteration counts for reaction-diffusion.
    MgDiffusion(Common),
    /// Multigrid iteration counts for the first Uzawa velocity solve.
    MgStokes(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum SmootherArg {
    Pjac,
    Pgs,
    Bjac,
    Bgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CycleArg {
    V,
    W,
    Varv,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Solver,
    Precond,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProblemArg {
    Smooth,
    Chessboard,
    Constant,
    Lid,
    Step,
}

#[derive(Clone, Copy, ValueEnum)]
enum AverageArg {
    Alpha,
    Inverse,
}

#[derive(Args)]
struct Common {
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Number of mesh levels, the coarse mesh being level 1.
    #[arg(long, default_value_t = 4)]
    levels: usize,
    /// Defaults to `smooth`, or `lid` for mg-stokes.
    #[arg(long, value_enum)]
    problem: Option<ProblemArg>,
    #[arg(long, value_enum)]
    smoother: Option<SmootherArg>,
    /// Smoothing steps (on the finest level for the variable V-cycle).
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, value_enum)]
    cycle: Option<CycleArg>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    beta: Option<f64>,
    /// Coefficient ratio of the chessboard problem.
    #[arg(long, default_value_t = 100.0)]
    rho: f64,
    /// Coarse-level diffusivity of the chessboard problem.
    #[arg(long, value_enum, default_value = "alpha")]
    coarse_average: AverageArg,
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    uzawa_steps: Option<usize>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Coarse mesh with this many cells per unit length instead of the default.
    #[arg(long)]
    coarse_cells: Option<usize>,
    /// CSV output file; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the finest mesh in a plain `v`/`e` line format.
    #[arg(long)]
    mesh_out: Option<PathBuf>,
}

impl Common {
    fn problem(&self, default: Problem) -> Problem {
        match self.problem {
            None => default,
            Some(ProblemArg::Smooth) => Problem::Smooth,
            Some(ProblemArg::Chessboard) => Problem::Chessboard {
                rho: self.rho,
                coarse: match self.coarse_average {
                    AverageArg::Alpha => CoarseAverage::MeanOfAlpha,
                    AverageArg::Inverse => CoarseAverage::MeanOfInverse,
                },
            },
            Some(ProblemArg::Constant) => Problem::Constant,
            Some(ProblemArg::Lid) => Problem::LidDriven,
            Some(ProblemArg::Step) => Problem::BackwardStep,
        }
    }

    fn apply(&self, mut cfg: ExperimentConfig) -> ExperimentConfig {
        if let Some(s) = self.smoother {
            cfg.smoother = match s {
                SmootherArg::Pjac => SmootherKind::PointJacobi,
                SmootherArg::Pgs => SmootherKind::PointGaussSeidel,
                SmootherArg::Bjac => SmootherKind::BlockJacobi,
                SmootherArg::Bgs => SmootherKind::BlockGaussSeidel,
            };
        }
        if let Some(c) = self.cycle {
            cfg.cycle = match c {
                CycleArg::V => CycleKind::V,
                CycleArg::W => CycleKind::W,
                CycleArg::Varv => CycleKind::VariableV,
            };
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Solver => Mode::Solver,
                ModeArg::Precond => Mode::Preconditioner,
            };
        }
        cfg.steps = self.steps.unwrap_or(cfg.steps);
        cfg.beta = self.beta.unwrap_or(cfg.beta);
        cfg.epsilon = self.eps.unwrap_or(cfg.epsilon);
        cfg.uzawa_steps = self.uzawa_steps.unwrap_or(cfg.uzawa_steps);
        cfg.rtol = self.rtol.unwrap_or(cfg.rtol);
        cfg.max_iter = self.max_iter.unwrap_or(cfg.max_iter);
        if let Some(n) = self.coarse_cells {
            cfg.coarse_mesh = CoarseMesh::Cells(n);
        }
        cfg
    }
}

fn write_output(common: &Common, cfg: &ExperimentConfig, report: &SolverReport) -> Result<()> {
    let csv = report.to_csv();
    match &common.out {
        Some(path) => std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(csv.as_bytes())?,
    }
    if let Some(path) = &common.mesh_out {
        let coarse = match (cfg.problem, cfg.coarse_mesh) {
            (Problem::BackwardStep, CoarseMesh::MaxDiameter(h)) => hdgmg::mesh::MeshLevel::backward_step(cfg.dim, h)?,
            (Problem::BackwardStep, CoarseMesh::Cells(k)) => hdgmg::mesh::MeshLevel::backward_step_cells(cfg.dim, k)?,
            (_, CoarseMesh::MaxDiameter(h)) => hdgmg::mesh::MeshLevel::unit_box(cfg.dim, h)?,
            (_, CoarseMesh::Cells(n)) => hdgmg::mesh::MeshLevel::unit_box_cells(cfg.dim, n)?,
        };
        let hier = MeshHierarchy::new(coarse, cfg.levels);
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        hier.finest().write_plain(BufWriter::new(file))?;
    }
    eprintln!("wall time {:.2}s", report.wall_time.as_secs_f64());
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (common, cfg, report) = match &cli.command {
        Command::ConvergeDiffusion(c) => {
            let mut cfg = c.apply(ExperimentConfig::converge_diffusion(c.dim, c.levels));
            cfg.problem = c.problem(Problem::Smooth);
            let r = run_converge_diffusion(&cfg)?;
            (c, cfg, r)
        }
        Command::ConvergeStokes(c) => {
            let mut cfg = c.apply(ExperimentConfig::converge_stokes(c.dim, c.levels));
            cfg.problem = c.problem(Problem::Smooth);
            let r = run_converge_stokes(&cfg)?;
            (c, cfg, r)
        }
        Command::MgDiffusion(c) => {
            let cfg = c.apply(ExperimentConfig::mg_diffusion(c.dim, c.problem(Problem::Smooth), c.levels));
            let r = run_mg_diffusion(&cfg)?;
            (c, cfg, r)
        }
        Command::MgStokes(c) => {
            let cfg = c.apply(ExperimentConfig::mg_stokes(c.dim, c.problem(Problem::LidDriven), c.levels));
            let r = run_mg_stokes(&cfg)?;
            (c, cfg, r)
        }
    };
    write_output(common, &cfg, &report)
}
