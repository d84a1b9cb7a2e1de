//! Benchmark harness: generate a problem, build ACR preconditioners over a
//! sweep of H-matrix options, solve, and record timings, ranks and memory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use acr_core::{
    cg, convdiff_system, gaussian_random_field, gmres, helmholtz_system, poisson_system, AcrError, AcrOptions,
    AcrPreconditioner, BlockTridiagonalSystem, CoefficientField, Grid, HOptions, KrylovOptions,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

mod plan;

pub use plan::{comm_volume, plane_assignment, ParallelPlan};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] AcrError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, BenchError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Poisson,
    Convdiff,
    Helmholtz,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cg,
    Gmres,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    /// Orders of magnitude between the largest and smallest coefficient;
    /// 0 gives a constant coefficient.
    pub contrast: f64,
    pub seed: u64,
    /// Convection strength.
    pub alpha: f64,
    /// Vortex parameter of the recirculating flow.
    pub vortices: f64,
    /// Helmholtz frequency.
    pub freq: f64,
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self { contrast: 0.0, seed: 1, alpha: 0.0, vortices: 8.0, freq: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub problem: ProblemKind,
    pub n: usize,
    pub sweep: Vec<HOptions>,
    pub params: ProblemParams,
    pub solver: SolverKind,
    pub krylov: KrylovOptions,
    /// CSV destination; the config echo goes next to it with a `.json`
    /// extension.
    pub output: Option<PathBuf>,
    /// Run sweep points concurrently.
    pub concurrent: bool,
}

impl BenchConfig {
    pub fn new(problem: ProblemKind, n: usize, sweep: Vec<HOptions>) -> Self {
        let solver = match problem {
            ProblemKind::Poisson => SolverKind::Cg,
            _ => SolverKind::Gmres,
        };
        Self {
            problem,
            n,
            sweep,
            params: ProblemParams::default(),
            solver,
            krylov: KrylovOptions::default(),
            output: None,
            concurrent: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(BenchError::Invalid("empty sweep".into()));
        }
        for h in &self.sweep {
            h.validate()?;
        }
        self.krylov.validate()?;
        let p = &self.params;
        if !(p.contrast >= 0.0 && p.contrast.is_finite()) {
            return Err(BenchError::Invalid(format!("contrast must be >= 0, got {}", p.contrast)));
        }
        match self.problem {
            ProblemKind::Poisson => {}
            ProblemKind::Convdiff if !(p.alpha >= 0.0 && p.alpha.is_finite()) => {
                return Err(BenchError::Invalid(format!("alpha must be >= 0, got {}", p.alpha)));
            }
            ProblemKind::Convdiff if !p.vortices.is_finite() => {
                return Err(BenchError::Invalid("vortex parameter must be finite".into()));
            }
            ProblemKind::Convdiff => {}
            ProblemKind::Helmholtz if !(p.freq >= 0.0 && p.freq.is_finite()) => {
                return Err(BenchError::Invalid(format!("frequency must be >= 0, got {}", p.freq)));
            }
            ProblemKind::Helmholtz => {}
        }
        if self.solver == SolverKind::Cg && self.problem == ProblemKind::Convdiff && p.alpha > 0.0 {
            return Err(BenchError::Invalid("CG needs a symmetric system; use gmres for convdiff".into()));
        }
        Ok(())
    }

    /// Coefficient field of the configured problem (`None` for Helmholtz).
    pub fn field(&self) -> Result<Option<CoefficientField>> {
        if self.problem == ProblemKind::Helmholtz {
            return Ok(None);
        }
        let grid = Grid::cube(self.n)?;
        let p = &self.params;
        let field = if p.contrast > 0.0 {
            gaussian_random_field(&grid, 3.0 * grid.h(), p.contrast, p.seed)?
        } else {
            CoefficientField::constant(grid, 1.0)?
        };
        Ok(Some(field))
    }

    pub fn system(&self) -> Result<BlockTridiagonalSystem<f64>> {
        let grid = Grid::cube(self.n)?;
        let p = &self.params;
        let sys = match (self.problem, self.field()?) {
            (ProblemKind::Poisson, Some(k)) => poisson_system(&grid, &k)?,
            (ProblemKind::Convdiff, Some(k)) => convdiff_system(&grid, &k, p.alpha, p.vortices)?,
            _ => helmholtz_system(&grid, p.freq)?,
        };
        Ok(sys)
    }
}

/// One sweep point. Failed points keep their config columns and carry the
/// error in `error`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    pub problem: ProblemKind,
    pub n: usize,
    pub epsilon: f64,
    pub eta: String,
    pub n_min: usize,
    pub contrast: f64,
    pub seed: u64,
    pub alpha: f64,
    pub vortices: f64,
    pub freq: f64,
    pub solver: SolverKind,
    pub setup_seconds: f64,
    /// Median of three preconditioner applications.
    pub apply_seconds: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_rank: usize,
    pub avg_rank: f64,
    pub footprint_bytes: usize,
    pub relres: f64,
    pub error: String,
    #[serde(skip)]
    pub solution: Vec<f64>,
}

/// Column order of [`write_csv`].
pub const CSV_COLUMNS: [&str; 20] = [
    "problem",
    "n",
    "epsilon",
    "eta",
    "n_min",
    "contrast",
    "seed",
    "alpha",
    "vortices",
    "freq",
    "solver",
    "setup_seconds",
    "apply_seconds",
    "iterations",
    "converged",
    "max_rank",
    "avg_rank",
    "footprint_bytes",
    "relres",
    "error",
];

impl BenchRecord {
    fn blank(cfg: &BenchConfig, h: &HOptions) -> Self {
        let p = &cfg.params;
        Self {
            problem: cfg.problem,
            n: cfg.n,
            epsilon: h.epsilon,
            eta: h.admissibility.to_string(),
            n_min: h.n_min,
            contrast: p.contrast,
            seed: p.seed,
            alpha: p.alpha,
            vortices: p.vortices,
            freq: p.freq,
            solver: cfg.solver,
            setup_seconds: f64::NAN,
            apply_seconds: f64::NAN,
            iterations: 0,
            converged: false,
            max_rank: 0,
            avg_rank: 0.0,
            footprint_bytes: 0,
            relres: f64::NAN,
            error: String::new(),
            solution: Vec::new(),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_empty()
    }
}

fn error_kind(e: &AcrError) -> String {
    match e {
        AcrError::InvalidInput(_) => "invalid_input",
        AcrError::ShapeMismatch { .. } => "shape_mismatch",
        AcrError::LengthMismatch { .. } => "length_mismatch",
        AcrError::TreeMismatch => "tree_mismatch",
        AcrError::SingularPivot { .. } => "singular_pivot",
        AcrError::Breakdown { .. } => "breakdown",
        AcrError::Factorization(_) => "factorization",
        AcrError::Io(_) => "io",
    }
    .into()
}

fn median3(mut t: [f64; 3]) -> f64 {
    t.sort_by(f64::total_cmp);
    t[1]
}

fn run_point(cfg: &BenchConfig, sys: &BlockTridiagonalSystem<f64>, h: &HOptions) -> BenchRecord {
    let mut rec = BenchRecord::blank(cfg, h);
    let start = Instant::now();
    let pre = match AcrPreconditioner::setup(sys, AcrOptions::new(*h)) {
        Ok(p) => p,
        Err(e) => {
            rec.error = error_kind(&e);
            return rec;
        }
    };
    rec.setup_seconds = start.elapsed().as_secs_f64();
    let stats = pre.rank_stats();
    rec.max_rank = stats.max_rank;
    rec.avg_rank = stats.avg_rank;
    rec.footprint_bytes = pre.footprint();

    let mut out = vec![0.0; sys.len()];
    let mut times = [0.0; 3];
    for t in &mut times {
        let s = Instant::now();
        if let Err(e) = pre.apply_into(sys.rhs(), &mut out) {
            rec.error = error_kind(&e);
            return rec;
        }
        *t = s.elapsed().as_secs_f64();
    }
    rec.apply_seconds = median3(times);

    let res = match cfg.solver {
        SolverKind::Cg => cg(sys, &pre, sys.rhs(), &cfg.krylov),
        SolverKind::Gmres => gmres(sys, &pre, sys.rhs(), &cfg.krylov),
    };
    match res {
        Ok(r) => {
            rec.iterations = r.iterations;
            rec.converged = r.converged;
            rec.relres = r.relres;
            rec.solution = r.x;
        }
        Err(e) => rec.error = error_kind(&e),
    }
    rec
}

/// Run every sweep point of `cfg` on one seeded problem. Failing points are
/// recorded and the sweep goes on. When `cfg.output` is set the records are
/// written as CSV plus a JSON echo of the config.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let sys = cfg.system()?;
    let records: Vec<BenchRecord> = if cfg.concurrent {
        cfg.sweep.par_iter().map(|h| run_point(cfg, &sys, h)).collect()
    } else {
        cfg.sweep.iter().map(|h| run_point(cfg, &sys, h)).collect()
    };
    if let Some(path) = &cfg.output {
        write_csv(&records, BufWriter::new(File::create(path)?))?;
        write_echo(cfg, BufWriter::new(File::create(echo_path(path))?))?;
    }
    Ok(records)
}

pub fn echo_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub fn write_csv<W: Write>(records: &[BenchRecord], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    epsilon: f64,
    eta: String,
    n_min: usize,
}

#[derive(Serialize)]
struct ConfigEcho<'a> {
    problem: ProblemKind,
    n: usize,
    params: &'a ProblemParams,
    solver: SolverKind,
    tol: f64,
    max_iters: usize,
    restart: usize,
    sweep: Vec<SweepPoint>,
}

pub fn write_echo<W: Write>(cfg: &BenchConfig, mut w: W) -> Result<()> {
    let echo = ConfigEcho {
        problem: cfg.problem,
        n: cfg.n,
        params: &cfg.params,
        solver: cfg.solver,
        tol: cfg.krylov.tol,
        max_iters: cfg.krylov.max_iters,
        restart: cfg.krylov.restart,
        sweep: cfg
            .sweep
            .iter()
            .map(|h| SweepPoint { epsilon: h.epsilon, eta: h.admissibility.to_string(), n_min: h.n_min })
            .collect(),
    };
    serde_json::to_writer_pretty(&mut w, &echo)?;
    writeln!(w)?;
    Ok(())
}
