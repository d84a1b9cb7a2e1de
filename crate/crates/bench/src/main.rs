use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use acr_bench::{
    plane_assignment, run_benchmark, write_csv, BenchConfig, BenchError, ProblemKind, ProblemParams, SolverKind,
};
use acr_core::{AcrOptions, AcrPreconditioner, Admissibility, HOptions, KrylovOptions};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "acr-bench", version, about = "ACR preconditioner benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Assemble a problem and write it in Matrix Market format.
    Generate {
        #[command(flatten)]
        problem: ProblemArgs,
        /// Matrix output path.
        #[arg(long)]
        out: PathBuf,
        /// Right-hand side output, one value per line.
        #[arg(long)]
        rhs: Option<PathBuf>,
        /// Coefficient field output (binary).
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Build one preconditioner and print per-level statistics.
    Factor {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        h: PointArgs,
        /// Level statistics CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build one preconditioner and solve.
    Solve {
        #[command(flatten)]
        problem: ProblemArgs,
        #[command(flatten)]
        h: PointArgs,
        #[command(flatten)]
        solver: SolverArgs,
        /// Record CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve over the cartesian product of the given option lists.
    Sweep {
        #[command(flatten)]
        problem: ProblemArgs,
        #[arg(long, value_delimiter = ',', default_value = "1e-1,1e-2,1e-4,1e-6")]
        eps: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        eta: Vec<Admissibility>,
        #[arg(long, value_delimiter = ',', default_value = "32")]
        n_min: Vec<usize>,
        #[command(flatten)]
        solver: SolverArgs,
        /// Record CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run sweep points concurrently.
        #[arg(long)]
        concurrent: bool,
    },
    /// Plane distribution and communication model.
    Plan {
        /// Number of planes (power of two).
        #[arg(long)]
        n: usize,
        /// Number of nodes (power of two).
        #[arg(long)]
        p: usize,
        /// Rank used in the volume estimate.
        #[arg(long, default_value_t = 16)]
        k: usize,
    },
}

#[derive(Args)]
struct ProblemArgs {
    #[arg(long, value_enum, default_value = "poisson")]
    problem: ProblemKind,
    /// Interior points per direction.
    #[arg(long, default_value_t = 15)]
    n: usize,
    /// Coefficient contrast in orders of magnitude (0 = constant).
    #[arg(long, default_value_t = 0.0)]
    contrast: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Convection strength.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Vortex parameter of the flow.
    #[arg(long, default_value_t = 8.0)]
    vortices: f64,
    /// Helmholtz frequency.
    #[arg(long, default_value_t = 0.0)]
    freq: f64,
}

impl ProblemArgs {
    fn params(&self) -> ProblemParams {
        ProblemParams {
            contrast: self.contrast,
            seed: self.seed,
            alpha: self.alpha,
            vortices: self.vortices,
            freq: self.freq,
        }
    }
}

#[derive(Args)]
struct PointArgs {
    #[arg(long, default_value_t = 1e-2)]
    eps: f64,
    /// Admissibility weight, or `weak`.
    #[arg(long, default_value = "2")]
    eta: Admissibility,
    #[arg(long, default_value_t = 32)]
    n_min: usize,
}

impl PointArgs {
    fn options(&self) -> HOptions {
        HOptions::new(self.eps, self.eta, self.n_min)
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Defaults to cg for poisson and gmres otherwise.
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    #[arg(long, default_value_t = 30)]
    restart: usize,
}

fn config(problem: &ProblemArgs, sweep: Vec<HOptions>, solver: &SolverArgs, out: Option<PathBuf>) -> BenchConfig {
    let mut cfg = BenchConfig::new(problem.problem, problem.n, sweep);
    cfg.params = problem.params();
    if let Some(s) = solver.solver {
        cfg.solver = s;
    }
    cfg.krylov = KrylovOptions {
        tol: solver.tol,
        max_iters: solver.max_iters,
        restart: solver.restart,
        ..KrylovOptions::default()
    };
    cfg.output = out;
    cfg
}

fn sink(out: Option<&PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn bench(cfg: BenchConfig) -> Result<bool, BenchError> {
    let records = run_benchmark(&cfg)?;
    if cfg.output.is_none() {
        write_csv(&records, io::stdout().lock())?;
    }
    for r in records.iter().filter(|r| !r.ok()) {
        eprintln!("eps={} eta={} n_min={}: {}", r.epsilon, r.eta, r.n_min, r.error);
    }
    Ok(records.iter().all(|r| r.ok()))
}

fn run(cli: Cli) -> Result<bool, BenchError> {
    match cli.cmd {
        Cmd::Generate { problem, out, rhs, field } => {
            let cfg = BenchConfig::new(problem.problem, problem.n, vec![HOptions::default()]);
            let cfg = BenchConfig { params: problem.params(), ..cfg };
            cfg.validate()?;
            let sys = cfg.system()?;
            sys.write_matrix_market(BufWriter::new(File::create(&out)?))?;
            if let Some(p) = rhs {
                let mut w = BufWriter::new(File::create(p)?);
                for v in sys.rhs() {
                    writeln!(w, "{v:e}")?;
                }
                w.flush()?;
            }
            if let Some(p) = field {
                match cfg.field()? {
                    Some(k) => k.write_binary(BufWriter::new(File::create(p)?))?,
                    None => return Err(BenchError::Invalid("helmholtz has no coefficient field".into())),
                }
            }
            Ok(true)
        }
        Cmd::Factor { problem, h, out } => {
            let mut cfg = BenchConfig::new(problem.problem, problem.n, vec![h.options()]);
            cfg.params = problem.params();
            cfg.validate()?;
            let sys = cfg.system()?;
            let pre = AcrPreconditioner::setup(&sys, AcrOptions::new(h.options()))?;
            pre.stats().write_csv(sink(out.as_ref())?)?;
            let rs = pre.rank_stats();
            eprintln!(
                "setup {:.3}s, {} levels, {} bytes (dense {}), max rank {}, avg rank {:.2}",
                pre.stats().setup_seconds,
                pre.num_levels(),
                pre.footprint(),
                pre.dense_bytes(),
                rs.max_rank,
                rs.avg_rank
            );
            Ok(true)
        }
        Cmd::Solve { problem, h, solver, out } => bench(config(&problem, vec![h.options()], &solver, out)),
        Cmd::Sweep { problem, eps, eta, n_min, solver, out, concurrent } => {
            let mut sweep = Vec::new();
            for &m in &n_min {
                for &a in &eta {
                    for &e in &eps {
                        sweep.push(HOptions::new(e, a, m));
                    }
                }
            }
            let mut cfg = config(&problem, sweep, &solver, out);
            cfg.concurrent = concurrent;
            bench(cfg)
        }
        Cmd::Plan { n, p, k } => {
            let plan = plane_assignment(n, p)?;
            let mut w = io::stdout().lock();
            writeln!(w, "level,surviving,per_node,idle_nodes,messages")?;
            for r in 0..plan.levels() {
                let per: Vec<String> = plan.planes_per_node[r].iter().map(|c| c.to_string()).collect();
                writeln!(
                    w,
                    "{r},{},{},{},{}",
                    plan.surviving[r].len(),
                    per.join(" "),
                    plan.idle_nodes(r),
                    plan.messages[r]
                )?;
            }
            eprintln!("C-level {}, volume estimate {} (k = {k})", plan.c_level, plan.volume(k));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
