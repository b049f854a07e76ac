//! Runs a manifest and writes traces, a summary and performance profiles.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use asker::{asker_solve, gnc_solve, irls_solve, Kernel, Solution, Trace};
use rayon::prelude::*;

use crate::manifest::{Instance, Manifest, SolverKind, SolverSetup};
use crate::metrics::{best_psi, default_grid, mean_best_psi, performance_profile, Measure, Profile};

pub const TRACE_HEADER: &str = "iter,time_ms,psi,f,h,step_kind,lambda,lambda_h,accepted,inlier_frac";
pub const SUMMARY_HEADER: &str = "problem,solver,seed,status,n_blocks,param_dim,content_hash,iterations,last_psi,best_psi,mean_psi,inlier_frac,converged,wall_ms,error";

/// Runs one solver on one instance.
pub fn run_solver(setup: &SolverSetup, instance: &Instance) -> asker::Result<Solution<f64>> {
    let kernel = Kernel::new(instance.tau)?;
    let p = instance.problem.as_ref();
    match setup {
        SolverSetup::Irls(c) => {
            let c = asker::IrlsConfig { inlier_threshold: instance.inlier_threshold, ..c.clone() };
            irls_solve(p, &kernel, &instance.theta0, &c)
        }
        SolverSetup::Gnc(s, c) => {
            let c = asker::IrlsConfig { inlier_threshold: instance.inlier_threshold, ..c.clone() };
            gnc_solve(p, &kernel, &instance.theta0, s, &c)
        }
        SolverSetup::Asker(c) => {
            let c = asker::AskerConfig { inlier_threshold: instance.inlier_threshold, ..c.clone() };
            asker_solve(p, &kernel, &instance.theta0, &c)
        }
    }
}

pub fn trace_csv(trace: &Trace) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for r in &trace.records {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.time_ms,
            r.psi,
            r.f,
            r.h,
            r.step_kind,
            r.lambda,
            opt(r.lambda_h),
            u8::from(r.accepted),
            opt(r.inlier_fraction)
        );
    }
    s
}

/// Reads the Ψ column of a trace file.
pub fn parse_trace_psi(text: &str) -> anyhow::Result<Vec<f64>> {
    let mut lines = text.lines();
    anyhow::ensure!(lines.next() == Some(TRACE_HEADER), "unexpected trace header");
    lines
        .enumerate()
        .map(|(i, l)| {
            let field = l.split(',').nth(2).with_context(|| format!("trace line {}: missing psi", i + 2))?;
            field.parse::<f64>().with_context(|| format!("trace line {}: bad psi `{field}`", i + 2))
        })
        .collect()
}

pub fn trace_file_name(problem: &str, solver: &str, seed: u64) -> String {
    format!("trace__{problem}__{solver}__{seed}.csv")
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub problem: String,
    pub solver: SolverKind,
    pub seed: u64,
    pub n_blocks: usize,
    pub param_dim: usize,
    pub content_hash: String,
    pub wall_ms: f64,
    pub outcome: Result<Solution<f64>, String>,
}

impl CellResult {
    pub fn ok(&self) -> bool {
        self.outcome.is_ok()
    }

    fn summary_row(&self, cap: usize) -> String {
        let mut row = format!(
            "{},{},{},{},{},{},{},",
            self.problem,
            self.solver.as_str(),
            self.seed,
            if self.ok() { "ok" } else { "error" },
            self.n_blocks,
            self.param_dim,
            self.content_hash
        );
        match &self.outcome {
            Ok(sol) => {
                let psi = sol.trace.psi();
                let last = sol.trace.last();
                let inl = last.inlier_fraction.map(|v| v.to_string()).unwrap_or_default();
                let _ = write!(
                    row,
                    "{},{},{},{},{},{},{},",
                    sol.trace.iterations(),
                    last.psi,
                    best_psi(&psi),
                    mean_best_psi(&psi, cap),
                    inl,
                    sol.trace.converged(),
                    self.wall_ms
                );
            }
            Err(e) => {
                let _ = write!(row, ",,,,,false,{},{}", self.wall_ms, e.replace([',', '\n'], ";"));
            }
        }
        row
    }
}

pub struct BenchReport {
    pub cells: Vec<CellResult>,
    pub profiles: Vec<(Measure, Result<Profile, String>)>,
}

impl BenchReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.ok()).count()
    }
}

/// Writes `contents` to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, contents: &str) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming to {}", path.display()))?;
    Ok(())
}

/// `measures[instance][solver]` where an instance is a (problem, seed) pair.
type Table = BTreeMap<String, BTreeMap<String, f64>>;

fn instance_key(problem: &str, seed: u64) -> String {
    format!("{problem}#{seed}")
}

fn profiles_from(tables: [Table; 2]) -> Vec<(Measure, Result<Profile, String>)> {
    let grid = default_grid();
    Measure::ALL
        .iter()
        .zip(tables)
        .map(|(m, t)| (*m, performance_profile(&t, &grid).map_err(|e| e.to_string())))
        .collect()
}

fn profile_file(m: Measure) -> String {
    format!("profile_{}.csv", m.as_str())
}

pub fn run_bench(manifest: &Manifest, out_dir: &Path) -> anyhow::Result<BenchReport> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut jobs = Vec::new();
    for spec in &manifest.problems {
        for &seed in manifest.seeds_for(spec) {
            jobs.push((spec, seed));
        }
    }
    let setups: Vec<(SolverKind, SolverSetup)> =
        manifest.solvers.iter().map(|&k| manifest.solver_setup(k).map(|s| (k, s))).collect::<Result<_, _>>()?;

    let pool = rayon::ThreadPoolBuilder::new().num_threads(manifest.workers).build()?;
    let cells: Vec<CellResult> = pool.install(|| {
        jobs.par_iter()
            .flat_map_iter(|&(spec, seed)| {
                let instance = manifest.instantiate(spec, seed);
                setups.iter().map(move |(kind, setup)| {
                    let id = spec.id().to_string();
                    match &instance {
                        Err(e) => CellResult {
                            problem: id,
                            solver: *kind,
                            seed,
                            n_blocks: 0,
                            param_dim: 0,
                            content_hash: String::new(),
                            wall_ms: 0.0,
                            outcome: Err(format!("{e:#}")),
                        },
                        Ok(inst) => {
                            log::info!("{id} seed {seed}: {}", kind.as_str());
                            let start = Instant::now();
                            let outcome = run_solver(setup, inst).map_err(|e| e.to_string());
                            CellResult {
                                problem: id,
                                solver: *kind,
                                seed,
                                n_blocks: inst.problem.num_blocks(),
                                param_dim: inst.problem.param_dim(),
                                content_hash: inst.content_hash.clone(),
                                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                                outcome,
                            }
                        }
                    }
                })
            })
            .collect()
    });

    let cap = manifest.max_iterations;
    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    let mut tables: [Table; 2] = Default::default();
    for c in &cells {
        summary.push_str(&c.summary_row(cap));
        summary.push('\n');
        match &c.outcome {
            Ok(sol) => {
                write_atomic(&out_dir.join(trace_file_name(&c.problem, c.solver.as_str(), c.seed)), &trace_csv(&sol.trace))?;
                let psi = sol.trace.psi();
                let key = instance_key(&c.problem, c.seed);
                tables[0].entry(key.clone()).or_default().insert(c.solver.as_str().into(), best_psi(&psi));
                tables[1].entry(key).or_default().insert(c.solver.as_str().into(), mean_best_psi(&psi, cap));
            }
            Err(e) => log::error!("{} {} seed {}: {e}", c.problem, c.solver.as_str(), c.seed),
        }
    }
    write_atomic(&out_dir.join("summary.csv"), &summary)?;
    let profiles = profiles_from(tables);
    write_profiles(&profiles, out_dir)?;
    Ok(BenchReport { cells, profiles })
}

fn write_profiles(profiles: &[(Measure, Result<Profile, String>)], out_dir: &Path) -> anyhow::Result<()> {
    for (m, p) in profiles {
        match p {
            Ok(p) => write_atomic(&out_dir.join(profile_file(*m)), &p.to_csv())?,
            Err(e) => log::warn!("{} profile: {e}", m.as_str()),
        }
    }
    Ok(())
}

/// Recomputes both profiles from the trace files in `dir`, using `cap` as the
/// iteration cap of the mean measure.
pub fn profile_from_traces(dir: &Path, cap: usize) -> anyhow::Result<Vec<(Measure, Result<Profile, String>)>> {
    let mut tables: [Table; 2] = Default::default();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    paths.sort();
    for path in paths {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else { continue };
        let Some(stem) = name.strip_prefix("trace__").and_then(|n| n.strip_suffix(".csv")) else { continue };
        let parts: Vec<&str> = stem.split("__").collect();
        let [problem, solver, seed] = parts[..] else {
            log::warn!("skipping {name}: unexpected file name");
            continue;
        };
        let seed: u64 = seed.parse().with_context(|| format!("bad seed in {name}"))?;
        let text = std::fs::read_to_string(&path)?;
        let psi = parse_trace_psi(&text).with_context(|| name.to_string())?;
        let key = instance_key(problem, seed);
        tables[0].entry(key.clone()).or_default().insert(solver.into(), best_psi(&psi));
        tables[1].entry(key).or_default().insert(solver.into(), mean_best_psi(&psi, cap));
    }
    Ok(profiles_from(tables))
}

/// Recomputes profiles from traces and writes them next to the traces.
pub fn write_profiles_from_traces(dir: &Path, cap: usize) -> anyhow::Result<Vec<(Measure, Result<Profile, String>)>> {
    let profiles = profile_from_traces(dir, cap)?;
    write_profiles(&profiles, dir)?;
    Ok(profiles)
}

/// Summary text with the wall-clock column blanked, for run-to-run comparison.
pub fn mask_wall_clock(summary: &str) -> String {
    let col = SUMMARY_HEADER.split(',').position(|c| c == "wall_ms").expect("wall_ms column");
    summary
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            if let Some(v) = f.get_mut(col) {
                *v = "";
            }
            f.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}
