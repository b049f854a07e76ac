use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use asker::problem::{bimodal_mean, synth_ba, BimodalConfig, ResidualMode, SynthBaConfig};
use asker_bench::bal::BalData;
use asker_bench::bench::{
    run_bench, run_solver, trace_csv, trace_file_name, write_atomic, write_profiles_from_traces,
};
use asker_bench::manifest::{bal_instance, synthetic_instance, Instance, Manifest, SolverKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "asker", version, about = "Robust least-squares solvers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one problem with one solver and write its trace.
    Solve(SolveArgs),
    /// Run every cell of a manifest.
    Bench {
        manifest: PathBuf,
        #[arg(long, default_value = "bench-out")]
        out_dir: PathBuf,
        /// Overrides the manifest's worker count.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Recompute performance profiles from the trace files in a directory.
    Profile {
        dir: PathBuf,
        /// Iteration cap of the mean measure.
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
    },
    /// Write a synthetic bundle adjustment problem as a BAL file.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        cameras: usize,
        #[arg(long, default_value_t = 100)]
        points: usize,
        #[arg(long, default_value_t = 0.25)]
        outlier_fraction: f64,
    },
}

#[derive(Args)]
struct SolveArgs {
    /// `synthetic`, `robust-mean` or the path of a BAL file.
    #[arg(long, default_value = "synthetic")]
    problem: String,
    #[arg(long, default_value = "asker")]
    solver: SolverKind,
    /// Kernel width in the residual's native units: pixels for bundle
    /// adjustment, data units for the robust mean.
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "metric")]
    residual_mode: ResidualMode,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn solve(args: &SolveArgs) -> anyhow::Result<ExitCode> {
    let (name, instance): (String, Instance) = match args.problem.as_str() {
        "synthetic" => {
            let cfg = SynthBaConfig { seed: args.seed, ..Default::default() };
            ("synthetic".into(), synthetic_instance(&cfg, args.tau, 1.0)?)
        }
        "robust-mean" => {
            let p = bimodal_mean::<f64>(&BimodalConfig { seed: args.seed, ..Default::default() })?;
            let inst = Instance {
                problem: Box::new(p),
                theta0: vec![6.0],
                tau: args.tau,
                inlier_threshold: None,
                content_hash: String::new(),
            };
            ("robust-mean".into(), inst)
        }
        path => {
            let data = BalData::read(Path::new(path))?;
            let stem = Path::new(path).file_stem().and_then(|s| s.to_str()).unwrap_or("bal").replace("__", "_");
            (stem, bal_instance(&data, args.residual_mode, args.tau, 1.0)?)
        }
    };
    let manifest = Manifest {
        name: "cli".into(),
        seeds: vec![args.seed],
        max_iterations: args.max_iters,
        workers: 1,
        solvers: vec![args.solver],
        asker: Default::default(),
        irls: Default::default(),
        gnc: Default::default(),
        problems: Vec::new(),
        base_dir: PathBuf::new(),
    };
    let setup = manifest.solver_setup(args.solver)?;
    let sol = run_solver(&setup, &instance)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let path = args.out_dir.join(trace_file_name(&name, args.solver.as_str(), args.seed));
    write_atomic(&path, &trace_csv(&sol.trace))?;
    let last = sol.trace.last();
    println!(
        "{} {}: psi {:.6e} after {} iterations ({}){}",
        name,
        args.solver.as_str(),
        sol.psi,
        sol.trace.iterations(),
        if sol.trace.converged() { "converged" } else { "iteration cap" },
        last.inlier_fraction.map(|v| format!(", inlier fraction {v:.3}")).unwrap_or_default()
    );
    println!("trace: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Solve(args) => solve(&args),
        Command::Bench { manifest, out_dir, workers } => {
            let mut m = match Manifest::load(&manifest) {
                Ok(m) => m,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(ExitCode::from(2));
                }
            };
            if let Some(w) = workers.filter(|&w| w > 0) {
                m.workers = w;
            }
            let report = run_bench(&m, &out_dir)?;
            let failed = report.failures();
            println!("{}: {} cells, {} failed, output in {}", m.name, report.cells.len(), failed, out_dir.display());
            Ok(if failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Profile { dir, max_iters } => {
            for (m, p) in write_profiles_from_traces(&dir, max_iters)? {
                let p = p.map_err(anyhow::Error::msg).with_context(|| format!("{} profile", m.as_str()))?;
                println!("profile_{}.csv: {} instances, solvers {}", m.as_str(), p.problems, p.solvers.join(" "));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen { out, seed, cameras, points, outlier_fraction } => {
            let cfg = SynthBaConfig {
                seed,
                n_cameras: cameras,
                n_points: points,
                outlier_fraction,
                ..Default::default()
            };
            let s = synth_ba::<f64>(&cfg)?;
            let data = BalData::from_problem(&s.problem, &s.theta_init)?;
            write_atomic(&out, &data.serialize())?;
            println!("{}: {} cameras, {} points, {} observations", out.display(), data.n_cameras, data.n_points, data.num_observations());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
