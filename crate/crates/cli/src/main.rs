//! `cmp`: command-line front end for the coordinated motion planning toolkit.
//!
//! Exit codes: 0 success, 2 usage or precondition error, 3 solver failure,
//! 4 validation failure.

mod archive;
mod config;
mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cmp_core::astar::TieBreak;
use cmp_core::distance::OracleCache;
use cmp_core::io::{generate_instance, read_instance, read_solution, write_instance, write_solution};
use cmp_core::optimize::{
    anti_stall, conflict_optimize, feasible_optimize, ConflictConfig, OptimizeBudget, Progress,
};
use cmp_core::stepplan::{greedy_solve, StepPlanConfig};
use cmp_core::storage::{self, MatchingMode, StorageConfig, StorageKind, TwoPhaseConfig};
use cmp_core::transform::Symmetry;
use cmp_core::validate::{lower_bound, validate};
use cmp_core::{Error, Instance, Solution};

use archive::Archive;
use config::Config;

#[derive(Parser)]
#[command(name = "cmp", version, about = "Coordinated motion planning: solve, optimize, validate, export")]
struct Cli {
    /// key = value configuration file; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a feasible solution with a storage strategy or the greedy planner.
    Solve(SolveArgs),
    /// Reduce the makespan of a feasible solution.
    Optimize(OptimizeArgs),
    /// Check a solution against the five feasibility constraints.
    Validate(ValidateArgs),
    /// Print the trivial makespan lower bound.
    Lowerbound(InstanceArg),
    /// Rotate an instance (and solution) or swap starts with targets.
    Transform(TransformArgs),
    /// Render a solution as an animated SVG.
    ExportSvg(SvgArgs),
    /// Inspect or prune the solution archive.
    Archive(ArchiveArgs),
    /// Write a random instance.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct InstanceArg {
    #[arg(short, long)]
    instance: PathBuf,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance files; several run as independent jobs.
    #[arg(short, long, required = true, num_args = 1..)]
    instance: Vec<PathBuf>,
    /// greedy, cross, cootie, dichotomy or escape.
    #[arg(short, long)]
    strategy: Option<String>,
    /// Depth parameter of the bounding box.
    #[arg(long)]
    b: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated seeds, one job each.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// greedy or exact storage matching (cross only).
    #[arg(long)]
    matching: Option<String>,
    /// Greedy planner look-ahead.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n_exact: Option<usize>,
    #[arg(long)]
    round_budget_ms: Option<u64>,
    #[arg(long)]
    stall_window: Option<usize>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Directory for per-job solution files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Archive directory (also CMP_ARCHIVE_DIR or `archive_dir` in the config).
    #[arg(long)]
    archive_dir: Option<PathBuf>,
    #[arg(long)]
    no_archive: bool,
    /// Timestamp written into solution files (default: now).
    #[arg(long)]
    timestamp: Option<u64>,
    /// Parallel jobs.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short = 'S', long)]
    solution: PathBuf,
    /// feasible, conflict or auto.
    #[arg(short, long)]
    method: Option<String>,
    /// Seconds.
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long)]
    max_pops: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_makespan: Option<usize>,
    /// Tactic attempts for `auto`.
    #[arg(long)]
    attempts: Option<usize>,
    /// Keep pop counters between makespan targets.
    #[arg(long)]
    keep_q: bool,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short = 'S', long)]
    solution: PathBuf,
    /// Print the full report as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct TransformArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short = 'S', long)]
    solution: Option<PathBuf>,
    /// rot90, rot180, rot270 or reverse.
    #[arg(long)]
    op: String,
    #[arg(long)]
    out_instance: PathBuf,
    #[arg(long)]
    out_solution: Option<PathBuf>,
    #[arg(long)]
    timestamp: Option<u64>,
}

#[derive(Args)]
struct SvgArgs {
    #[arg(short, long)]
    instance: PathBuf,
    #[arg(short = 'S', long)]
    solution: PathBuf,
    /// start or target.
    #[arg(long, default_value = "start")]
    color: String,
    #[arg(long, default_value_t = 200)]
    step_ms: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ArchiveArgs {
    #[command(subcommand)]
    action: ArchiveAction,
    #[arg(long, global = true)]
    dir: Option<PathBuf>,
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum ArchiveAction {
    List,
    Best,
    Gc,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(short)]
    n: usize,
    #[arg(short)]
    w: usize,
    #[arg(long, default_value_t = 0.0)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug)]
enum Fail {
    Usage(String),
    Solver(String),
    Invalid(String),
}

impl Fail {
    fn code(&self) -> u8 {
        match self {
            Fail::Usage(_) => 2,
            Fail::Solver(_) => 3,
            Fail::Invalid(_) => 4,
        }
    }
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Stalled { .. }
            | Error::BudgetExhausted { .. }
            | Error::Internal(_)
            | Error::Decomposition { .. } => Fail::Solver(msg),
            Error::Validation(_) | Error::Structural(_) => Fail::Invalid(msg),
            _ => Fail::Usage(msg),
        }
    }
}

impl From<std::io::Error> for Fail {
    fn from(e: std::io::Error) -> Self {
        Fail::Usage(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Fail>;

fn usage(msg: impl Into<String>) -> Fail {
    Fail::Usage(msg.into())
}

fn read_file(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_instance(path: &Path) -> CliResult<Instance> {
    read_instance(&read_file(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_solution(path: &Path, inst: &Instance) -> CliResult<Solution> {
    read_solution(&read_file(path)?, inst).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> CliResult {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn archive_for(common: &CommonArgs, cfg: &Config) -> CliResult<Option<Archive>> {
    if common.no_archive {
        return Ok(None);
    }
    let dir = match &common.archive_dir {
        Some(d) => Some(d.clone()),
        None => match std::env::var_os("CMP_ARCHIVE_DIR") {
            Some(d) => Some(PathBuf::from(d)),
            None => cfg.get::<PathBuf>("archive_dir").map_err(usage)?,
        },
    };
    dir.map(|d| Archive::open(d).map_err(Fail::from)).transpose()
}

/// Validates, then writes the solution and its archive entry.
fn emit(
    inst: &Instance,
    s: &Solution,
    solver: &str,
    ts: u64,
    output: Option<&Path>,
    archive: Option<&Archive>,
) -> CliResult {
    let report = validate(inst, s)?;
    if !report.feasible {
        return Err(Fail::Invalid(format!("{solver} produced an infeasible solution: {}", report.violations[0])));
    }
    write_out(output, &write_solution(s, solver, ts))?;
    if let Some(a) = archive {
        let p = a.save(inst, s, solver, ts)?;
        eprintln!("archived {}", p.display());
    }
    Ok(())
}

fn report_line(inst: &Instance, s: &Solution, solver: &str) -> CliResult<String> {
    let lb = lower_bound(inst, &mut OracleCache::new(inst))?;
    let m = s.makespan();
    let ratio = if lb == 0 { 1.0 } else { m as f64 / lb as f64 };
    let d = cmp_core::validate::distance_sum(s);
    Ok(format!("instance={} solver={solver} makespan={m} lower_bound={lb} ratio={ratio:.3} distance_sum={d}", inst.name()))
}

fn thread_pool(jobs: usize) -> CliResult<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| usage(e.to_string()))
}

fn solve_one(inst: &Instance, strategy: &str, seed: Option<u64>, a: &SolveArgs, cfg: &Config) -> CliResult<Solution> {
    if strategy == "greedy" {
        let d = StepPlanConfig::default();
        let sp = StepPlanConfig {
            k: cfg.pick(a.k, "k", d.k).map_err(usage)?,
            n_exact: cfg.pick(a.n_exact, "n_exact", d.n_exact).map_err(usage)?,
            round_budget: Duration::from_millis(
                cfg.pick(a.round_budget_ms, "round_budget_ms", d.round_budget.as_millis() as u64).map_err(usage)?,
            ),
            stall_window: match a.stall_window {
                Some(w) => Some(w),
                None => cfg.get("stall_window").map_err(usage)?,
            },
            commit: 1,
        };
        return Ok(greedy_solve(inst, &sp)?);
    }
    let kind: StorageKind = strategy.parse()?;
    let matching = match cfg.pick(a.matching.clone(), "matching", "greedy".to_string()).map_err(usage)?.as_str() {
        "greedy" => MatchingMode::Greedy,
        "exact" => MatchingMode::Exact,
        other => return Err(usage(format!("unknown matching {other:?}"))),
    };
    let b = match a.b {
        Some(b) => Some(b),
        None => cfg.get("b").map_err(usage)?,
    };
    let scfg = StorageConfig { b, matching, order_seed: seed };
    let run = TwoPhaseConfig {
        tie_break: seed.map_or(TieBreak::Deterministic, TieBreak::Random),
        ..TwoPhaseConfig::default()
    };
    Ok(storage::solve(kind, inst, &scfg, &run)?.solution)
}

fn cmd_solve(a: SolveArgs, cfg: &Config) -> CliResult {
    let strategy = cfg.pick(a.strategy.clone(), "strategy", "cross".to_string()).map_err(usage)?;
    if !["greedy", "cross", "cootie", "dichotomy", "escape"].contains(&strategy.as_str()) {
        return Err(usage(format!("unknown strategy {strategy:?}")));
    }
    let seeds: Vec<Option<u64>> = if a.seeds.is_empty() {
        vec![match a.seed {
            Some(s) => Some(s),
            None => cfg.get("seed").map_err(usage)?,
        }]
    } else {
        a.seeds.iter().copied().map(Some).collect()
    };
    let instances: Vec<Instance> = a.instance.iter().map(|p| load_instance(p)).collect::<CliResult<_>>()?;
    let jobs: Vec<(usize, Option<u64>)> =
        (0..instances.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    if jobs.len() > 1 && a.output.is_some() {
        return Err(usage("--output needs a single job; use --out-dir"));
    }
    let archive = archive_for(&a.common, cfg)?;
    let ts = a.common.timestamp.unwrap_or_else(now);
    let workers = cfg.pick(a.common.jobs, "jobs", 1).map_err(usage)?;
    let results: Vec<CliResult<Solution>> = thread_pool(workers)?.install(|| {
        jobs.par_iter().map(|&(i, seed)| solve_one(&instances[i], &strategy, seed, &a, cfg)).collect()
    });
    let mut first_err = None;
    for (&(i, seed), res) in jobs.iter().zip(results) {
        let inst = &instances[i];
        let outcome = res.and_then(|s| {
            let tag = match seed {
                Some(sd) => format!("{strategy}:seed={sd}"),
                None => strategy.clone(),
            };
            let out = match (&a.output, &a.out_dir) {
                (Some(p), _) => Some(p.clone()),
                (None, Some(d)) => {
                    fs::create_dir_all(d)?;
                    Some(d.join(format!("{}.{strategy}.s{}.json", inst.name(), seed.unwrap_or(0))))
                }
                (None, None) if jobs.len() == 1 => None,
                (None, None) => return Err(usage("several jobs need --out-dir")),
            };
            emit(inst, &s, &tag, ts, out.as_deref(), archive.as_ref())?;
            eprintln!("{}", report_line(inst, &s, &tag)?);
            Ok(())
        });
        if let Err(e) = outcome {
            if jobs.len() > 1 {
                eprintln!("error: {}: {}", inst.name(), describe(&e));
            }
            first_err.get_or_insert(e);
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn progress_printer() -> impl FnMut(&Progress) {
    |p: &Progress| {
        if let Ok(line) = serde_json::to_string(p) {
            eprintln!("{line}");
        }
    }
}

fn cmd_optimize(a: OptimizeArgs, cfg: &Config) -> CliResult {
    let inst = load_instance(&a.instance)?;
    let s = load_solution(&a.solution, &inst)?;
    let method = cfg.pick(a.method.clone(), "method", "auto".to_string()).map_err(usage)?;
    let seed = cfg.pick(a.seed, "seed", 0).map_err(usage)?;
    let time_limit = match a.time_limit {
        Some(t) => Some(t),
        None => cfg.get::<f64>("time_limit").map_err(usage)?,
    };
    if time_limit.is_some_and(|t| t <= 0.0) || a.max_pops == Some(0) {
        return Err(usage("limits must be positive"));
    }
    let max_pops = match a.max_pops {
        Some(p) => Some(p),
        None => cfg.get("max_pops").map_err(usage)?,
    };
    let budget = OptimizeBudget {
        time_limit: time_limit.map(Duration::from_secs_f64),
        max_pops: if max_pops.is_none() && time_limit.is_none() { Some(20_000) } else { max_pops },
        target_makespan: a.target_makespan,
        seed,
    };
    let ccfg = ConflictConfig { reset_q: !a.keep_q, ..ConflictConfig::default() };
    let mut progress = progress_printer();
    let (out, tag) = match method.as_str() {
        "feasible" => (feasible_optimize(&inst, &s, &budget, &mut progress)?, "feasible"),
        "conflict" => (conflict_optimize(&inst, &s, &ccfg, &budget, &mut progress)?.solution, "conflict"),
        "auto" => {
            let shuffle = OptimizeBudget { max_pops: Some(20 * inst.len()), time_limit: None, ..budget };
            let f = feasible_optimize(&inst, &s, &shuffle, &mut progress)?;
            let attempts = cfg.pick(a.attempts, "attempts", 8).map_err(usage)?;
            let per_attempt = OptimizeBudget {
                time_limit: budget.time_limit.map(|t| t / attempts.max(1) as u32),
                ..budget
            };
            let out = anti_stall(&inst, &f, &per_attempt, attempts, budget.time_limit, &mut progress)?;
            (out.solution, "auto")
        }
        other => return Err(usage(format!("unknown method {other:?}"))),
    };
    let archive = archive_for(&a.common, cfg)?;
    let ts = a.common.timestamp.unwrap_or_else(now);
    emit(&inst, &out, tag, ts, a.output.as_deref(), archive.as_ref())?;
    eprintln!("{} input_makespan={}", report_line(&inst, &out, tag)?, s.makespan());
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> CliResult {
    let inst = load_instance(&a.instance)?;
    let s = load_solution(&a.solution, &inst)?;
    let report = validate(&inst, &s)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(|e| usage(e.to_string()))?);
    } else {
        println!(
            "feasible={} makespan={} distance_sum={} violations={}",
            report.feasible,
            report.makespan,
            report.distance_sum,
            report.violations.len()
        );
        for v in report.violations.iter().take(20) {
            println!("  {v}");
        }
    }
    if report.feasible {
        Ok(())
    } else {
        Err(Fail::Invalid("solution is infeasible".into()))
    }
}

fn cmd_lowerbound(a: InstanceArg) -> CliResult {
    let inst = load_instance(&a.instance)?;
    println!("{}", lower_bound(&inst, &mut OracleCache::new(&inst))?);
    Ok(())
}

fn cmd_transform(a: TransformArgs) -> CliResult {
    let op: Symmetry = a.op.parse()?;
    let inst = load_instance(&a.instance)?;
    let out = op.apply_instance(&inst);
    match (&a.solution, &a.out_solution) {
        (Some(sp), Some(op_path)) => {
            let s = load_solution(sp, &inst)?;
            let report = validate(&inst, &s)?;
            if op == Symmetry::Reverse && !report.feasible {
                return Err(Fail::Invalid("reverse needs a feasible solution".into()));
            }
            let ts = a.timestamp.unwrap_or_else(now);
            let ts_sol = op.apply_solution(&s);
            let check = validate(&out, &ts_sol)?;
            if check.feasible != report.feasible || check.makespan != report.makespan {
                return Err(Fail::Solver("transform changed feasibility or makespan".into()));
            }
            fs::write(op_path, write_solution(&ts_sol, &format!("transform:{op}"), ts))?;
        }
        (None, None) => {}
        _ => return Err(usage("--solution and --out-solution go together")),
    }
    fs::write(&a.out_instance, write_instance(&out))?;
    Ok(())
}

fn cmd_export_svg(a: SvgArgs) -> CliResult {
    let inst = load_instance(&a.instance)?;
    let s = load_solution(&a.solution, &inst)?;
    let report = validate(&inst, &s).map_err(|e| usage(e.to_string()))?;
    if !report.feasible {
        return Err(usage(format!("refusing to render an infeasible solution: {}", report.violations[0])));
    }
    let coloring = match a.color.as_str() {
        "start" => svg::Coloring::ByStart,
        "target" => svg::Coloring::ByTarget,
        other => return Err(usage(format!("unknown coloring {other:?}"))),
    };
    write_out(a.output.as_deref(), svg::render(&inst, &s, coloring, a.step_ms).as_bytes())
}

fn cmd_archive(a: ArchiveArgs, cfg: &Config) -> CliResult {
    let dir = match &a.dir {
        Some(d) => d.clone(),
        None => match std::env::var_os("CMP_ARCHIVE_DIR") {
            Some(d) => PathBuf::from(d),
            None => cfg.get::<PathBuf>("archive_dir").map_err(usage)?.ok_or_else(|| usage("no archive directory given"))?,
        },
    };
    if !dir.is_dir() {
        return Err(usage(format!("archive directory {} does not exist", dir.display())));
    }
    let archive = Archive::open(&dir)?;
    let print_entry = |e: &archive::ArchiveEntry| {
        println!("{}\t{}\t{}\t{}\t{}\t{}", e.instance, e.makespan, e.distance_sum, e.solver, e.timestamp, e.path.display())
    };
    match a.action {
        ArchiveAction::List => {
            let scan = archive.scan()?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&scan).map_err(|e| usage(e.to_string()))?);
            } else {
                scan.entries.iter().for_each(print_entry);
                for (p, why) in &scan.quarantined {
                    println!("QUARANTINED\t{}\t{why}", p.display());
                }
            }
        }
        ArchiveAction::Best => {
            let best = archive.best()?;
            if a.json {
                println!("{}", serde_json::to_string_pretty(&best).map_err(|e| usage(e.to_string()))?);
            } else {
                best.values().for_each(print_entry);
            }
        }
        ArchiveAction::Gc => {
            for p in archive.gc()? {
                println!("removed\t{}", p.display());
            }
        }
    }
    Ok(())
}

fn cmd_generate(a: GenerateArgs) -> CliResult {
    let inst = generate_instance(a.n, a.w, a.density, a.seed)?;
    write_out(a.output.as_deref(), &write_instance(&inst))
}

fn describe(f: &Fail) -> &str {
    match f {
        Fail::Usage(m) | Fail::Solver(m) | Fail::Invalid(m) => m,
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(p) => Config::load(p).map_err(usage)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Solve(a) => cmd_solve(a, &cfg),
        Command::Optimize(a) => cmd_optimize(a, &cfg),
        Command::Validate(a) => cmd_validate(a),
        Command::Lowerbound(a) => cmd_lowerbound(a),
        Command::Transform(a) => cmd_transform(a),
        Command::ExportSvg(a) => cmd_export_svg(a),
        Command::Archive(a) => cmd_archive(a, &cfg),
        Command::Generate(a) => cmd_generate(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", describe(&f));
            ExitCode::from(f.code())
        }
    }
}
