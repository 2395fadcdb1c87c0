//! Greedy k-step planner: each round picks one short move sequence per
//! robot maximizing a distance-weighted objective, then commits only its
//! first step.

use std::time::{Duration, Instant};

use crate::distance::{compute_bounding_box, OracleCache, INFINITY};
use crate::error::{Error, Result};
use crate::model::{Cell, Instance, Move, Path, Solution};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePath {
    pub robot: usize,
    /// `k + 1` cells starting at the robot's current position.
    pub cells: Vec<Cell>,
    pub weight: i64,
}

#[derive(Debug, Clone, Copy)]
pub struct StepPlanConfig {
    pub k: usize,
    /// Wall-clock cap on local search per round.
    pub round_budget: Duration,
    /// Rounds without a new best total distance before giving up; three
    /// times the box width when `None`.
    pub stall_window: Option<usize>,
    /// Rounds with at most this many robots are solved exactly.
    pub n_exact: usize,
    /// Steps committed per round.
    pub commit: usize,
}

impl Default for StepPlanConfig {
    fn default() -> Self {
        Self { k: 3, round_budget: Duration::from_secs(1), stall_window: None, n_exact: 4, commit: 1 }
    }
}

/// `(δ(p0) − δ(pk)) · (δ(p0)² + 1)`; unreachable cells count as very far.
pub fn weight(d0: u32, dk: u32) -> i64 {
    let cap = |d: u32| if d == INFINITY { 1_000_000i64 } else { d as i64 };
    let (d0, dk) = (cap(d0), cap(dk));
    (d0 - dk) * (d0 * d0 + 1)
}

/// All obstacle-free move sequences of length `k` from `pos`.
pub fn candidates(inst: &Instance, robot: usize, pos: Cell, k: usize, cache: &mut OracleCache) -> Vec<CandidatePath> {
    let oracle = cache.get(inst.robot(robot).target);
    let d0 = oracle.query(pos);
    let mut out = Vec::new();
    let mut stack = vec![vec![pos]];
    while let Some(cells) = stack.pop() {
        if cells.len() == k + 1 {
            let weight = weight(d0, oracle.query(*cells.last().unwrap()));
            out.push(CandidatePath { robot, cells, weight });
            continue;
        }
        let last = *cells.last().unwrap();
        for m in Move::ALL.iter().rev() {
            let next = last + m.delta();
            if !inst.is_obstacle(next) {
                let mut c = cells.clone();
                c.push(next);
                stack.push(c);
            }
        }
    }
    // Best first; among equal weights prefer early progress, then fewer moves,
    // so committed first steps do not wander between equivalent plans.
    let key = |p: &CandidatePath| {
        let along: u64 = p.cells[1..].iter().map(|&c| oracle.query(c) as u64).sum();
        let moves = p.cells.windows(2).filter(|w| w[0] != w[1]).count();
        (std::cmp::Reverse(p.weight), along, moves)
    };
    out.sort_by_cached_key(key);
    out
}

/// Two move sequences over the same steps violate neither the collision nor
/// the overlap rule.
pub fn compatible(a: &[Cell], b: &[Cell]) -> bool {
    for t in 1..a.len().min(b.len()) {
        if a[t] == b[t] {
            return false;
        }
        let da = a[t] - a[t - 1];
        let db = b[t] - b[t - 1];
        if (a[t] == b[t - 1] || b[t] == a[t - 1]) && da != db {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub moves: Vec<Move>,
    /// Selected candidate index per robot.
    pub choice: Vec<usize>,
    /// Selected cells per robot.
    pub paths: Vec<Vec<Cell>>,
    pub objective: i64,
    pub exact: bool,
}

/// Exhaustive branch and bound over `robots`, each restricted to candidates
/// compatible with every entry of `fixed`. Returns `None` if some robot has
/// no admissible candidate.
fn branch_and_bound(
    cands: &[Vec<CandidatePath>],
    robots: &[usize],
    fixed: &[&[Cell]],
) -> Option<(i64, Vec<usize>)> {
    let allowed: Vec<Vec<usize>> = robots
        .iter()
        .map(|&r| {
            (0..cands[r].len())
                .filter(|&i| fixed.iter().all(|f| compatible(&cands[r][i].cells, f)))
                .collect()
        })
        .collect();
    if allowed.iter().any(Vec::is_empty) {
        return None;
    }
    let best_of: Vec<i64> = robots.iter().zip(&allowed).map(|(&r, a)| cands[r][a[0]].weight).collect();
    let mut suffix = vec![0i64; robots.len() + 1];
    for i in (0..robots.len()).rev() {
        suffix[i] = suffix[i + 1] + best_of[i];
    }
    struct Ctx<'a> {
        cands: &'a [Vec<CandidatePath>],
        robots: &'a [usize],
        allowed: &'a [Vec<usize>],
        suffix: &'a [i64],
        pick: Vec<usize>,
        best: Option<(i64, Vec<usize>)>,
    }
    fn go(ctx: &mut Ctx, depth: usize, value: i64) {
        if let Some((b, _)) = &ctx.best {
            if value + ctx.suffix[depth] <= *b {
                return;
            }
        }
        if depth == ctx.robots.len() {
            ctx.best = Some((value, ctx.pick.clone()));
            return;
        }
        let r = ctx.robots[depth];
        for &i in &ctx.allowed[depth] {
            let cells = &ctx.cands[r][i].cells;
            let ok = (0..depth).all(|d| compatible(cells, &ctx.cands[ctx.robots[d]][ctx.pick[d]].cells));
            if !ok {
                continue;
            }
            ctx.pick.push(i);
            go(ctx, depth + 1, value + ctx.cands[r][i].weight);
            ctx.pick.pop();
        }
    }
    let mut ctx = Ctx { cands, robots, allowed: &allowed, suffix: &suffix, pick: Vec::new(), best: None };
    go(&mut ctx, 0, 0);
    ctx.best
}

fn wait_index(c: &[CandidatePath]) -> usize {
    c.iter().position(|p| p.cells.iter().all(|&x| x == p.cells[0])).expect("waiting is always a candidate")
}

/// Selects one candidate per robot; exact for at most `cfg.n_exact` robots.
pub fn plan_round(inst: &Instance, positions: &[Cell], cfg: &StepPlanConfig, cache: &mut OracleCache) -> Result<RoundPlan> {
    if cfg.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let n = inst.len();
    let cands: Vec<Vec<CandidatePath>> = (0..n).map(|r| candidates(inst, r, positions[r], cfg.k, cache)).collect();
    let robots: Vec<usize> = (0..n).collect();
    let finish = |choice: Vec<usize>, exact: bool| {
        let objective = choice.iter().enumerate().map(|(r, &i)| cands[r][i].weight).sum();
        let moves = choice
            .iter()
            .enumerate()
            .map(|(r, &i)| Move::between(cands[r][i].cells[0], cands[r][i].cells[1]).expect("unit step"))
            .collect();
        let paths = choice.iter().enumerate().map(|(r, &i)| cands[r][i].cells.clone()).collect();
        RoundPlan { moves, choice, paths, objective, exact }
    };
    if n <= cfg.n_exact {
        let (_, choice) = branch_and_bound(&cands, &robots, &[]).expect("all-wait is feasible");
        return Ok(finish(choice, true));
    }

    // Greedy by decreasing distance: each robot takes its best candidate that
    // is compatible with the choices so far and with everyone else waiting.
    let waits: Vec<Vec<Cell>> = (0..n).map(|r| vec![positions[r]; cfg.k + 1]).collect();
    let mut order = robots.clone();
    let d0: Vec<u32> = (0..n).map(|r| cache.get(inst.robot(r).target).query(positions[r])).collect();
    order.sort_by_key(|&r| (std::cmp::Reverse(d0[r]), r));
    let mut choice: Vec<Option<usize>> = vec![None; n];
    for (pos, &r) in order.iter().enumerate() {
        let pending: Vec<usize> = order[pos + 1..].to_vec();
        let pick = (0..cands[r].len())
            .find(|&i| {
                let cells = &cands[r][i].cells;
                pending.iter().all(|&o| compatible(cells, &waits[o]))
                    && (0..n).all(|o| choice[o].is_none_or(|j| compatible(cells, &cands[o][j].cells)))
            })
            .unwrap_or_else(|| wait_index(&cands[r]));
        choice[r] = Some(pick);
    }
    let mut choice: Vec<usize> = choice.into_iter().map(Option::unwrap).collect();

    // Local search: re-solve small clusters of nearby robots exactly.
    let deadline = Instant::now() + cfg.round_budget;
    let reach = 2 * cfg.k as u32 + 1;
    let cluster_size = cfg.n_exact.max(2);
    let mut improved = true;
    let mut passes = 0;
    while improved && passes < 4 && Instant::now() < deadline {
        improved = false;
        passes += 1;
        for &r in &order {
            if Instant::now() >= deadline {
                break;
            }
            let mut near: Vec<usize> = (0..n).filter(|&o| positions[o].l1(positions[r]) <= reach).collect();
            near.sort_by_key(|&o| (positions[o].l1(positions[r]), o));
            near.truncate(cluster_size);
            let fixed: Vec<&[Cell]> = (0..n)
                .filter(|o| !near.contains(o))
                .map(|o| cands[o][choice[o]].cells.as_slice())
                .collect();
            let current: i64 = near.iter().map(|&o| cands[o][choice[o]].weight).sum();
            if let Some((value, pick)) = branch_and_bound(&cands, &near, &fixed) {
                if value > current {
                    for (&o, &i) in near.iter().zip(&pick) {
                        choice[o] = i;
                    }
                    improved = true;
                }
            }
        }
    }
    Ok(finish(choice, false))
}

/// Repeats `plan_round` until every robot is home or progress stalls.
pub fn greedy_solve(inst: &Instance, cfg: &StepPlanConfig) -> Result<Solution> {
    let w = compute_bounding_box(inst, 2).width() as usize;
    let window = cfg.stall_window.unwrap_or(3 * w);
    let cap = 50 * w;
    let mut cache = OracleCache::new(inst);
    let n = inst.len();
    let mut positions: Vec<Cell> = inst.robots().iter().map(|r| r.start).collect();
    let mut paths: Vec<Vec<Cell>> = positions.iter().map(|&c| vec![c]).collect();
    let total = |pos: &[Cell], cache: &mut OracleCache| -> u64 {
        (0..n).map(|r| cache.get(inst.robot(r).target).query(pos[r]) as u64).sum()
    };
    let mut best = total(&positions, &mut cache);
    let mut since_best = 0;
    let mut rounds = 0;
    while best > 0 || positions.iter().zip(inst.robots()).any(|(p, r)| *p != r.target) {
        if rounds >= cap || since_best >= window {
            return Err(Error::Stalled { rounds });
        }
        let plan = plan_round(inst, &positions, cfg, &mut cache)?;
        let cands = plan.paths;
        let steps = cfg.commit.clamp(1, cfg.k);
        for s in 1..=steps {
            for r in 0..n {
                paths[r].push(cands[r][s]);
            }
            rounds += 1;
        }
        for r in 0..n {
            positions[r] = cands[r][steps];
        }
        let now = total(&positions, &mut cache);
        if now < best {
            best = now;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    Ok(Solution::from_paths(inst.name(), paths.into_iter().map(Path::new).collect()))
}
