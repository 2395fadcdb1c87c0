//! Makespan reduction by rerouting robots one at a time.
//!
//! The Feasible Optimizer keeps the solution feasible throughout and only
//! accepts reroutes that do not delay anything. The Conflict Optimizer
//! targets makespan `m − 1` directly: robots moving at the last step are
//! queued, and each popped robot gets the path that conflicts with the
//! lightest set of other robots, which are then queued in turn. Robots that
//! keep being popped get heavier (`1 + q²`), so the search is pushed to route
//! around them.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::astar::{find_path, Grid, ReservationTable, SearchConfig, TableMode, TieBreak};
use crate::distance::OracleCache;
use crate::error::{Error, Result};
use crate::model::{Instance, Path, Rect, Solution};
use crate::transform::Symmetry;
use crate::validate::{lower_bound, validate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OptimizeBudget {
    pub time_limit: Option<Duration>,
    /// Reroutes (feasible) or queue pops (conflict).
    pub max_pops: Option<usize>,
    /// Stop as soon as this makespan is reached.
    pub target_makespan: Option<usize>,
    pub seed: u64,
}

impl Default for OptimizeBudget {
    fn default() -> Self {
        Self { time_limit: None, max_pops: Some(10_000), target_makespan: None, seed: 0 }
    }
}

impl OptimizeBudget {
    pub fn pops(max_pops: usize, seed: u64) -> Self {
        Self { max_pops: Some(max_pops), seed, ..Self::default() }
    }

    pub fn time(limit: Duration, seed: u64) -> Self {
        Self { time_limit: Some(limit), max_pops: None, seed, ..Self::default() }
    }
}

struct Clock {
    start: Instant,
    budget: OptimizeBudget,
    pops: usize,
}

impl Clock {
    fn new(budget: OptimizeBudget) -> Self {
        Self { start: Instant::now(), budget, pops: 0 }
    }

    fn exhausted(&self) -> bool {
        self.budget.max_pops.is_some_and(|p| self.pops >= p)
            || self.budget.time_limit.is_some_and(|t| self.start.elapsed() >= t)
    }

    fn reached(&self, m: usize) -> bool {
        self.budget.target_makespan.is_some_and(|t| m <= t)
    }

    fn elapsed_ms(&self) -> u64 {
        self.start.elapsed().as_millis() as u64
    }
}

/// One improvement record, emitted whenever the makespan drops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Progress {
    pub elapsed_ms: u64,
    pub makespan: usize,
    pub queue_len: usize,
}

/// Search region covering every cell a solution or instance touches, with
/// slack for detours.
pub fn search_grid(inst: &Instance, s: &Solution) -> Grid {
    let cells = inst
        .obstacles()
        .iter()
        .copied()
        .chain(inst.robots().iter().flat_map(|r| [r.start, r.target]))
        .chain(s.paths.iter().flat_map(|p| p.positions.iter().copied()));
    let rect = Rect::enclosing(cells).expect("non-empty instance").expanded(3);
    Grid::new(inst, rect)
}

fn check_input(inst: &Instance, s: &Solution) -> Result<Solution> {
    let report = validate(inst, s)?;
    if !report.feasible {
        return Err(Error::Validation(format!(
            "input solution is infeasible: {}",
            report.violations[0]
        )));
    }
    Ok(s.clone().compact())
}

fn snapshot(inst: &Instance, table: &ReservationTable) -> Solution {
    Solution::from_paths(
        inst.name(),
        (0..inst.len()).map(|r| table.path(r).expect("all robots registered").clone()).collect(),
    )
    .compact()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeasibleVariant {
    /// Forward search with randomized tie-breaking.
    RandomForward,
    /// Backward in time: the robot leaves its start as late as possible.
    Reversed,
    /// Backward with a random forced hold of at least one step on the target.
    ReversedHold,
}

impl FeasibleVariant {
    pub const CYCLE: [FeasibleVariant; 3] =
        [FeasibleVariant::RandomForward, FeasibleVariant::Reversed, FeasibleVariant::ReversedHold];
}

/// Reroutes robots one at a time in a feasible table. A robot may only move
/// at the last step if it already did, so neither the makespan nor the
/// number of last-step movers can grow.
pub fn feasible_optimize(
    inst: &Instance,
    s: &Solution,
    budget: &OptimizeBudget,
    on_progress: &mut dyn FnMut(&Progress),
) -> Result<Solution> {
    let s = check_input(inst, s)?;
    let n = inst.len();
    let grid = search_grid(inst, &s);
    let mut cache = OracleCache::new(inst);
    let lb = lower_bound(inst, &mut cache)?;
    let mut table = ReservationTable::new(n, TableMode::Feasible);
    for (r, p) in s.paths.iter().enumerate() {
        table
            .register(r, p.clone().trimmed())
            .map_err(|e| Error::Internal(format!("validated input rejected by table: {e:?}")))?;
    }
    let mut clock = Clock::new(*budget);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut iteration = 0usize;
    let mut m = table.horizon();
    'outer: while m > lb && !clock.exhausted() && !clock.reached(m) {
        order.shuffle(&mut rng);
        for &r in &order {
            if clock.exhausted() || m <= lb || clock.reached(m) {
                break 'outer;
            }
            clock.pops += 1;
            let variant = FeasibleVariant::CYCLE[iteration % 3];
            iteration += 1;
            let old = table.unregister(r).expect("registered");
            let moved_last = old.arrival() == m;
            let robot = inst.robot(r);
            let seed = rng.gen::<u64>();
            let cfg = match variant {
                FeasibleVariant::RandomForward => {
                    SearchConfig::forward().with_deadline(if moved_last { m } else { m - 1 }).random(seed)
                }
                FeasibleVariant::Reversed => SearchConfig::reversed(m).hold(usize::from(!moved_last)),
                FeasibleVariant::ReversedHold => SearchConfig::reversed(m).hold(rng.gen_range(1..=3)).random(seed),
            };
            let goal = match variant {
                FeasibleVariant::RandomForward => robot.target,
                _ => robot.start,
            };
            let oracle = cache.get(goal);
            let path = match find_path(&grid, &table, robot, &cfg, &oracle) {
                Ok(found) => found.path.trimmed(),
                Err(_) => old.clone(),
            };
            if let Err(e) = table.register(r, path) {
                table.register(r, old).expect("old path was feasible");
                return Err(Error::Internal(format!("feasible reroute ({variant:?}) conflicted: {e:?}")));
            }
            let now = table.horizon();
            if now < m {
                m = now;
                on_progress(&Progress { elapsed_ms: clock.elapsed_ms(), makespan: m, queue_len: 0 });
            }
        }
    }
    Ok(snapshot(inst, &table))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConflictConfig {
    /// Reset pop counters after every successful round.
    pub reset_q: bool,
    pub random_ties: bool,
    /// Queue newly conflicting robots in random order.
    pub shuffle_insertion: bool,
}

impl Default for ConflictConfig {
    fn default() -> Self {
        Self { reset_q: true, random_ties: false, shuffle_insertion: false }
    }
}

#[derive(Debug, Clone)]
pub struct ConflictOutcome {
    pub solution: Solution,
    /// The makespan equals the lower bound.
    pub proven_optimal: bool,
    /// Successful makespan reductions.
    pub improvements: usize,
    pub pops: usize,
}

/// FIFO of robots with membership flags and pop counters.
#[derive(Debug, Clone)]
pub struct ConflictQueue {
    queue: VecDeque<usize>,
    queued: Vec<bool>,
    q: Vec<u64>,
}

impl ConflictQueue {
    pub fn new(n: usize) -> Self {
        Self { queue: VecDeque::new(), queued: vec![false; n], q: vec![0; n] }
    }

    /// Adds `r` unless it is already waiting.
    pub fn push(&mut self, r: usize) -> bool {
        if self.queued[r] {
            return false;
        }
        self.queued[r] = true;
        self.queue.push_back(r);
        true
    }

    pub fn pop(&mut self) -> Option<usize> {
        let r = self.queue.pop_front()?;
        self.queued[r] = false;
        self.q[r] += 1;
        Some(r)
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn pops_of(&self, r: usize) -> u64 {
        self.q[r]
    }

    pub fn weight(&self, r: usize) -> u64 {
        1 + self.q[r] * self.q[r]
    }

    pub fn weights(&self) -> Vec<u64> {
        (0..self.q.len()).map(|r| self.weight(r)).collect()
    }

    pub fn reset_counters(&mut self) {
        self.q.iter_mut().for_each(|q| *q = 0);
    }

    fn clear(&mut self) {
        self.queue.clear();
        self.queued.iter_mut().for_each(|f| *f = false);
    }
}

/// Repairs conflicts by rerouting popped robots until the queue empties.
/// Returns `Ok(true)` on an empty queue, `Ok(false)` when the budget runs
/// out or a robot cannot meet `deadline`.
#[allow(clippy::too_many_arguments)]
fn drain(
    inst: &Instance,
    grid: &Grid,
    cache: &mut OracleCache,
    table: &mut ReservationTable,
    queue: &mut ConflictQueue,
    deadline: usize,
    cfg: &ConflictConfig,
    clock: &mut Clock,
    rng: &mut ChaCha8Rng,
) -> bool {
    while !queue.is_empty() {
        if clock.exhausted() {
            return false;
        }
        let r = queue.pop().expect("non-empty");
        clock.pops += 1;
        let old = if table.is_registered(r) { Some(table.unregister(r).expect("registered")) } else { None };
        let weights = queue.weights();
        let robot = inst.robot(r);
        let mut search = SearchConfig::forward().with_deadline(deadline).conflict(&weights);
        if cfg.random_ties {
            search.tie_break = TieBreak::Random(rng.gen());
        }
        let oracle = cache.get(robot.target);
        match find_path(grid, table, robot, &search, &oracle) {
            Ok(found) => {
                let path = found.path.trimmed();
                let mut hit: Vec<usize> = table.conflicts_of(&path, r).into_iter().collect();
                table.register(r, path).expect("conflict tables accept any path");
                if cfg.shuffle_insertion {
                    hit.shuffle(rng);
                }
                for j in hit {
                    queue.push(j);
                }
            }
            Err(_) => {
                if let Some(p) = old {
                    table.register(r, p).expect("conflict tables accept any path");
                }
                queue.push(r);
                return false;
            }
        }
    }
    true
}

/// Lowers the makespan of a feasible solution one unit at a time until the
/// lower bound, the target or the budget is reached; returns the last
/// feasible solution.
pub fn conflict_optimize(
    inst: &Instance,
    s: &Solution,
    cfg: &ConflictConfig,
    budget: &OptimizeBudget,
    on_progress: &mut dyn FnMut(&Progress),
) -> Result<ConflictOutcome> {
    let mut best = check_input(inst, s)?;
    let n = inst.len();
    let mut cache = OracleCache::new(inst);
    let lb = lower_bound(inst, &mut cache)?;
    if best.makespan() <= lb {
        return Ok(ConflictOutcome { solution: best, proven_optimal: true, improvements: 0, pops: 0 });
    }
    let grid = search_grid(inst, &best);
    let mut table = ReservationTable::new(n, TableMode::Conflict);
    for (r, p) in best.paths.iter().enumerate() {
        table.register(r, p.clone().trimmed()).expect("conflict tables accept any path");
    }
    let mut clock = Clock::new(*budget);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut queue = ConflictQueue::new(n);
    let mut improvements = 0;
    while best.makespan() > lb && !clock.reached(best.makespan()) && !clock.exhausted() {
        let m = best.makespan();
        let mut movers = best.movers_at_end();
        if cfg.shuffle_insertion {
            movers.shuffle(&mut rng);
        }
        queue.clear();
        if cfg.reset_q {
            queue.reset_counters();
        }
        for r in movers {
            queue.push(r);
        }
        if !drain(inst, &grid, &mut cache, &mut table, &mut queue, m - 1, cfg, &mut clock, &mut rng) {
            break;
        }
        let next = snapshot(inst, &table);
        let report = validate(inst, &next)?;
        if !report.feasible || next.makespan() >= m {
            return Err(Error::Internal(format!(
                "conflict repair ended with makespan {} (target {}) and {} violations",
                next.makespan(),
                m - 1,
                report.violations.len()
            )));
        }
        best = next;
        improvements += 1;
        on_progress(&Progress { elapsed_ms: clock.elapsed_ms(), makespan: best.makespan(), queue_len: 0 });
    }
    let proven_optimal = best.makespan() <= lb;
    Ok(ConflictOutcome { solution: best, proven_optimal, improvements, pops: clock.pops })
}

/// Builds a solution of makespan at most `m0` with every robot initially
/// pathless and queued. Failure is common on dense instances.
pub fn conflict_from_scratch(inst: &Instance, m0: usize, cfg: &ConflictConfig, budget: &OptimizeBudget) -> Result<Solution> {
    let n = inst.len();
    let mut cache = OracleCache::new(inst);
    let lb = lower_bound(inst, &mut cache)?;
    if m0 < lb {
        return Err(Error::InvalidArgument(format!("makespan {m0} is below the lower bound {lb}")));
    }
    let trivial = Solution::from_paths(inst.name(), inst.robots().iter().map(|r| Path::new(vec![r.start, r.target])).collect());
    let grid = search_grid(inst, &trivial);
    let mut table = ReservationTable::new(n, TableMode::Conflict);
    let mut clock = Clock::new(*budget);
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);
    let mut queue = ConflictQueue::new(n);
    let mut ids: Vec<usize> = (0..n).collect();
    if cfg.shuffle_insertion {
        ids.shuffle(&mut rng);
    }
    for r in ids {
        queue.push(r);
    }
    if !drain(inst, &grid, &mut cache, &mut table, &mut queue, m0, cfg, &mut clock, &mut rng) {
        return Err(Error::BudgetExhausted { pops: clock.pops, queued: queue.len() });
    }
    let s = snapshot(inst, &table);
    let report = validate(inst, &s)?;
    if !report.feasible || s.makespan() > m0 {
        return Err(Error::Internal(format!("scratch repair produced an invalid solution: {:?}", report.violations.first())));
    }
    Ok(s)
}

/// Stall-avoidance tactics, applied in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Tactic {
    /// Swap starts and targets and run the optimizer on the reversed paths.
    Reverse,
    /// Reshuffle paths with the Feasible Optimizer before repairing.
    FeasibleShuffle,
    /// Randomized A* tie-breaking.
    RandomPaths,
    /// Queue conflicting robots in random order.
    ShuffledInsertion,
}

impl Tactic {
    pub const ROTATION: [Tactic; 4] =
        [Tactic::Reverse, Tactic::FeasibleShuffle, Tactic::RandomPaths, Tactic::ShuffledInsertion];
}

#[derive(Debug, Clone)]
pub struct AntiStallOutcome {
    pub solution: Solution,
    pub proven_optimal: bool,
    /// Tactics that produced an improvement, in order.
    pub wins: Vec<Tactic>,
    pub attempts: usize,
}

/// Runs one tactic followed by the Conflict Optimizer.
pub fn apply_tactic(
    inst: &Instance,
    s: &Solution,
    tactic: Tactic,
    budget: &OptimizeBudget,
    on_progress: &mut dyn FnMut(&Progress),
) -> Result<ConflictOutcome> {
    match tactic {
        Tactic::Reverse => {
            let rinst = Symmetry::Reverse.apply_instance(inst);
            let rsol = Symmetry::Reverse.apply_solution(s);
            let mut out = conflict_optimize(&rinst, &rsol, &ConflictConfig::default(), budget, on_progress)?;
            out.solution = Symmetry::Reverse.apply_solution(&out.solution);
            Ok(out)
        }
        Tactic::FeasibleShuffle => {
            let shuffle = OptimizeBudget { max_pops: Some(4 * inst.len()), time_limit: None, ..*budget };
            let shuffled = feasible_optimize(inst, s, &shuffle, on_progress)?;
            conflict_optimize(inst, &shuffled, &ConflictConfig::default(), budget, on_progress)
        }
        Tactic::RandomPaths => {
            let cfg = ConflictConfig { random_ties: true, ..ConflictConfig::default() };
            conflict_optimize(inst, s, &cfg, budget, on_progress)
        }
        Tactic::ShuffledInsertion => {
            let cfg = ConflictConfig { shuffle_insertion: true, ..ConflictConfig::default() };
            conflict_optimize(inst, s, &cfg, budget, on_progress)
        }
    }
}

/// Alternates the four tactics, each followed by conflict repair under
/// `per_attempt`, keeping the best solution. Stops at the lower bound, after
/// `attempts` tries, or when `total` runs out.
pub fn anti_stall(
    inst: &Instance,
    s: &Solution,
    per_attempt: &OptimizeBudget,
    attempts: usize,
    total: Option<Duration>,
    on_progress: &mut dyn FnMut(&Progress),
) -> Result<AntiStallOutcome> {
    let start = Instant::now();
    let mut best = check_input(inst, s)?;
    let mut wins = Vec::new();
    let mut proven_optimal = false;
    let mut done = 0;
    for a in 0..attempts {
        if total.is_some_and(|t| start.elapsed() >= t) {
            break;
        }
        let tactic = Tactic::ROTATION[a % 4];
        let budget = OptimizeBudget { seed: per_attempt.seed.wrapping_add(a as u64), ..*per_attempt };
        let out = apply_tactic(inst, &best, tactic, &budget, on_progress)?;
        done += 1;
        if out.solution.makespan() < best.makespan() {
            best = out.solution;
            wins.push(tactic);
        }
        if out.proven_optimal {
            proven_optimal = true;
            break;
        }
        if per_attempt.target_makespan.is_some_and(|t| best.makespan() <= t) {
            break;
        }
    }
    Ok(AntiStallOutcome { solution: best, proven_optimal, wins, attempts: done })
}
