//! Space-time A* against a reservation table.
//!
//! A registered path occupies its cells up to its last move and then stays
//! parked on its final cell forever. The same rule applies to the path being
//! searched: it must reach its goal and be able to hold it afterwards.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rustc_hash::FxHashMap;
use smallvec::SmallVec;

use crate::distance::{DistanceOracle, INFINITY};
use crate::model::{Cell, Instance, Move, Path, Rect, Robot};

pub type RobotId = usize;

/// Default node-expansion budget per search.
pub const DEFAULT_BUDGET: usize = 2_000_000;

/// Free/blocked map of the finite region searches may use.
#[derive(Debug, Clone)]
pub struct Grid {
    rect: Rect,
    blocked: Vec<bool>,
}

impl Grid {
    pub fn new(inst: &Instance, rect: Rect) -> Self {
        let mut blocked = vec![false; rect.area()];
        for &o in inst.obstacles() {
            if rect.contains(o) {
                blocked[rect.index(o)] = true;
            }
        }
        Self { rect, blocked }
    }

    #[inline]
    pub fn is_free(&self, c: Cell) -> bool {
        self.rect.contains(c) && !self.blocked[self.rect.index(c)]
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMode {
    /// At most one robot per (cell, time); registration rejects conflicts.
    Feasible,
    /// Overlapping paths are allowed and tracked.
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TableError {
    AlreadyRegistered(RobotId),
    NotRegistered(RobotId),
    PathMismatch(RobotId),
    Conflicts { robot: RobotId, with: Vec<RobotId> },
}

type Occupants = SmallVec<[u32; 2]>;

/// Hash index from (cell, time) to the robots there, plus the parked
/// final cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReservationTable {
    mode: TableMode,
    cells: FxHashMap<(Cell, u32), Occupants>,
    parked: FxHashMap<Cell, SmallVec<[(u32, u32); 1]>>,
    paths: Vec<Option<Path>>,
    arrivals: BTreeMap<usize, usize>,
}

impl ReservationTable {
    pub fn new(n: usize, mode: TableMode) -> Self {
        Self {
            mode,
            cells: FxHashMap::default(),
            parked: FxHashMap::default(),
            paths: vec![None; n],
            arrivals: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> TableMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Latest time at which any registered robot still moves.
    pub fn horizon(&self) -> usize {
        self.arrivals.keys().next_back().copied().unwrap_or(0)
    }

    pub fn path(&self, r: RobotId) -> Option<&Path> {
        self.paths[r].as_ref()
    }

    pub fn is_registered(&self, r: RobotId) -> bool {
        self.paths[r].is_some()
    }

    /// Robots (other than `r` itself) that `path` would conflict with.
    pub fn conflicts_of(&self, path: &Path, r: RobotId) -> BTreeSet<RobotId> {
        let mut out = BTreeSet::new();
        let mut buf = SmallVec::new();
        self.vertex_events(path.first(), 0, r, &mut buf);
        let end = path.len().max(self.horizon()) + 1;
        for t in 0..end {
            self.step_events(path.at(t), path.at(t + 1), t, r, &mut buf);
        }
        out.extend(buf.iter().map(|&j| j as usize));
        out
    }

    pub fn register(&mut self, r: RobotId, path: Path) -> Result<(), TableError> {
        if self.paths[r].is_some() {
            return Err(TableError::AlreadyRegistered(r));
        }
        if self.mode == TableMode::Feasible {
            let with: Vec<_> = self.conflicts_of(&path, r).into_iter().collect();
            if !with.is_empty() {
                return Err(TableError::Conflicts { robot: r, with });
            }
        }
        let arrival = path.arrival();
        for t in 0..arrival {
            self.cells.entry((path.positions[t], t as u32)).or_default().push(r as u32);
        }
        self.parked.entry(path.positions[arrival]).or_default().push((r as u32, arrival as u32));
        *self.arrivals.entry(arrival).or_default() += 1;
        self.paths[r] = Some(path);
        Ok(())
    }

    pub fn unregister(&mut self, r: RobotId) -> Result<Path, TableError> {
        let path = self.paths[r].take().ok_or(TableError::NotRegistered(r))?;
        let arrival = path.arrival();
        for t in 0..arrival {
            let key = (path.positions[t], t as u32);
            let occ = self.cells.get_mut(&key).expect("registered cell");
            occ.retain(|j| *j != r as u32);
            if occ.is_empty() {
                self.cells.remove(&key);
            }
        }
        let last = path.positions[arrival];
        let occ = self.parked.get_mut(&last).expect("parked cell");
        occ.retain(|(j, _)| *j != r as u32);
        if occ.is_empty() {
            self.parked.remove(&last);
        }
        match self.arrivals.get_mut(&arrival) {
            Some(k) if *k > 1 => *k -= 1,
            _ => {
                self.arrivals.remove(&arrival);
            }
        }
        Ok(path)
    }

    /// Unregisters `r` after checking it holds exactly `expected`.
    pub fn unregister_exact(&mut self, r: RobotId, expected: &Path) -> Result<Path, TableError> {
        match &self.paths[r] {
            None => Err(TableError::NotRegistered(r)),
            Some(p) if p != expected => Err(TableError::PathMismatch(r)),
            Some(_) => self.unregister(r),
        }
    }

    #[inline]
    fn occupants(&self, c: Cell, t: usize, out: &mut Occupants) {
        out.clear();
        if let Some(o) = self.cells.get(&(c, t as u32)) {
            out.extend_from_slice(o);
        }
        if let Some(p) = self.parked.get(&c) {
            out.extend(p.iter().filter(|(_, from)| *from as usize <= t).map(|(j, _)| *j));
        }
    }

    #[inline]
    fn position(&self, j: u32, t: usize) -> Cell {
        self.paths[j as usize].as_ref().expect("occupant is registered").at(t)
    }

    fn vertex_events(&self, c: Cell, t: usize, me: RobotId, out: &mut SmallVec<[u32; 4]>) {
        let mut occ = Occupants::new();
        self.occupants(c, t, &mut occ);
        push_unique(out, occ.iter().copied().filter(|&j| j as usize != me));
    }

    /// Robots conflicting with robot `me` moving from `a` at time `t` to `b`
    /// at `t + 1`: a collision at `b`, or an overlap with a robot that
    /// leaves `b` or enters `a` with a different delta.
    fn step_events(&self, a: Cell, b: Cell, t: usize, me: RobotId, out: &mut SmallVec<[u32; 4]>) {
        let delta = b - a;
        let mut occ = Occupants::new();
        self.occupants(b, t + 1, &mut occ);
        push_unique(out, occ.iter().copied().filter(|&j| j as usize != me));
        self.occupants(b, t, &mut occ);
        push_unique(
            out,
            occ.iter()
                .copied()
                .filter(|&j| j as usize != me && self.position(j, t + 1) - b != delta),
        );
        self.occupants(a, t + 1, &mut occ);
        push_unique(
            out,
            occ.iter()
                .copied()
                .filter(|&j| j as usize != me && a - self.position(j, t) != delta),
        );
    }
}

#[inline]
fn push_unique(out: &mut SmallVec<[u32; 4]>, it: impl Iterator<Item = u32>) {
    for j in it {
        if !out.contains(&j) {
            out.push(j);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SearchMode<'a> {
    Feasible,
    /// Conflicts allowed; each conflicting (robot, step) event costs that
    /// robot's weight. `u64::MAX` marks a robot that must not be touched.
    Conflict(&'a [u64]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Search from the target backwards in time; the resulting path leaves
    /// its start as late as possible.
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TieBreak {
    Deterministic,
    /// Ties broken by the running sum of per-cell pseudo-random weights.
    Random(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct SearchConfig<'a> {
    pub mode: SearchMode<'a>,
    pub direction: Direction,
    /// Forward: latest arrival time. Reversed: the fixed horizon, required.
    pub deadline: Option<usize>,
    /// Reversed only: forced waits on the target before searching.
    pub hold_at_goal: usize,
    pub tie_break: TieBreak,
    pub budget: usize,
}

impl Default for SearchConfig<'_> {
    fn default() -> Self {
        Self {
            mode: SearchMode::Feasible,
            direction: Direction::Forward,
            deadline: None,
            hold_at_goal: 0,
            tie_break: TieBreak::Deterministic,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl<'a> SearchConfig<'a> {
    pub fn forward() -> Self {
        Self::default()
    }

    pub fn with_deadline(mut self, t: usize) -> Self {
        self.deadline = Some(t);
        self
    }

    pub fn reversed(horizon: usize) -> Self {
        Self { direction: Direction::Reversed, deadline: Some(horizon), ..Self::default() }
    }

    pub fn conflict(mut self, weights: &'a [u64]) -> Self {
        self.mode = SearchMode::Conflict(weights);
        self
    }

    pub fn random(mut self, seed: u64) -> Self {
        self.tie_break = TieBreak::Random(seed);
        self
    }

    pub fn hold(mut self, h: usize) -> Self {
        self.hold_at_goal = h;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Found {
    /// Forward: from time 0 to arrival. Reversed: exactly horizon + 1 cells.
    pub path: Path,
    /// Summed conflict weight (0 in feasible mode).
    pub cost: u64,
    pub expanded: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureReason {
    /// Open list exhausted: no path exists within the deadline.
    NoPath,
    Budget,
    /// The goal is unreachable even ignoring other robots, or the start is
    /// already blocked.
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchFailure {
    pub reason: FailureReason,
    pub expanded: usize,
    /// Smallest remaining distance to the goal among expanded states.
    pub closest: u32,
}

pub type SearchResult = Result<Found, SearchFailure>;

#[inline]
fn cell_noise(seed: u64, c: Cell) -> u64 {
    let mut z = seed ^ ((c.x as u32 as u64) << 32 | c.y as u32 as u64);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    (z ^ (z >> 31)) >> 32
}

struct Node {
    cell: Cell,
    tau: u32,
    parent: u32,
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    weight: u64,
    f: u32,
    tie: u64,
    deeper: Reverse<u32>,
    x: i32,
    y: i32,
    seq: u32,
}

/// Searches a path for `robot`, whose own path must not be registered.
/// `oracle` must measure distances to the search goal: the target when
/// searching forward, the start when searching reversed.
pub fn find_path(
    grid: &Grid,
    table: &ReservationTable,
    robot: &Robot,
    cfg: &SearchConfig,
    oracle: &DistanceOracle,
) -> SearchResult {
    debug_assert!(!table.is_registered(robot.id), "robot {} still registered", robot.id);
    let me = robot.id;
    let reversed = cfg.direction == Direction::Reversed;
    let (origin, goal) = if reversed { (robot.target, robot.start) } else { (robot.start, robot.target) };
    debug_assert_eq!(oracle.target(), goal);
    let weights = match cfg.mode {
        SearchMode::Feasible => None,
        SearchMode::Conflict(w) => Some(w),
    };
    let fail = |reason, expanded, closest| Err(SearchFailure { reason, expanded, closest });

    let h0 = oracle.query(origin);
    if h0 == INFINITY || !grid.is_free(goal) || !grid.is_free(origin) {
        return fail(FailureReason::Unreachable, 0, h0);
    }
    // Time horizon in search time. Reversed searches map search time tau to
    // table time horizon - tau.
    let horizon = if reversed {
        cfg.deadline.expect("reversed search needs a horizon")
    } else {
        table.horizon()
    };
    let deadline = cfg.deadline.unwrap_or(usize::MAX);
    if reversed {
        debug_assert!(horizon >= table.horizon());
    }
    if (h0 as usize).saturating_add(if reversed { cfg.hold_at_goal } else { 0 }) > deadline {
        return fail(FailureReason::NoPath, 0, h0);
    }
    let table_time = |tau: usize| if reversed { horizon - tau } else { tau };

    // Cost of one event set; None when forbidden.
    let price = |events: &SmallVec<[u32; 4]>| -> Option<u64> {
        match weights {
            None => events.is_empty().then_some(0),
            Some(w) => {
                let mut sum = 0u64;
                for &j in events {
                    let wj = w[j as usize];
                    if wj == u64::MAX {
                        return None;
                    }
                    sum = sum.saturating_add(wj);
                }
                Some(sum)
            }
        }
    };

    // Occupancy of the goal cell over table time, for the hold check.
    let goal_busy: Vec<(usize, u32)> = {
        let mut v = Vec::new();
        let mut occ = Occupants::new();
        for t in 0..=table.horizon() {
            table.occupants(goal, t, &mut occ);
            v.extend(occ.iter().filter(|&&j| j as usize != me).map(|&j| (t, j)));
        }
        v
    };
    // Robots parked on the goal before the horizon ends stay there forever.
    let parked_on_goal: SmallVec<[u32; 4]> = table
        .parked
        .get(&goal)
        .map(|p| p.iter().map(|(j, _)| *j).filter(|&j| j as usize != me).collect())
        .unwrap_or_default();
    let hold_events = |tau: usize| -> SmallVec<[u32; 4]> {
        let mut ev = SmallVec::new();
        if reversed {
            // Holding the start during table times [0, horizon - tau).
            let limit = horizon - tau;
            push_unique(&mut ev, goal_busy.iter().filter(|(t, _)| *t < limit).map(|(_, j)| *j));
        } else {
            push_unique(&mut ev, goal_busy.iter().filter(|(t, _)| *t > tau).map(|(_, j)| *j));
            push_unique(&mut ev, parked_on_goal.iter().copied());
        }
        ev
    };

    let noise = |c: Cell| match cfg.tie_break {
        TieBreak::Deterministic => 0,
        TieBreak::Random(seed) => cell_noise(seed, c),
    };

    let mut nodes: Vec<Node> = Vec::new();
    let mut open: BinaryHeap<Reverse<(Key, bool)>> = BinaryHeap::new();
    let mut best: FxHashMap<(Cell, u32), (u64, u32)> = FxHashMap::default();
    let mut seq = 0u32;
    let clamp_tau = |tau: usize| -> u32 {
        // Beyond the table horizon the world is static (forward only).
        if reversed {
            tau as u32
        } else {
            tau.min(horizon + 1) as u32
        }
    };

    // Start state, including forced holds on the origin.
    let mut start_events = SmallVec::new();
    table.vertex_events(origin, table_time(0), me, &mut start_events);
    let hold = if reversed { cfg.hold_at_goal.min(horizon) } else { 0 };
    let mut cost0 = 0u64;
    match price(&start_events) {
        Some(w) => cost0 += w,
        None => return fail(FailureReason::NoPath, 0, h0),
    }
    nodes.push(Node { cell: origin, tau: 0, parent: u32::MAX });
    for tau in 0..hold {
        let mut ev = SmallVec::new();
        table.step_events(origin, origin, table_time(tau + 1), me, &mut ev);
        match price(&ev) {
            Some(w) => cost0 += w,
            None => return fail(FailureReason::NoPath, 0, h0),
        }
        let parent = nodes.len() as u32 - 1;
        nodes.push(Node { cell: origin, tau: tau as u32 + 1, parent });
    }
    let root = nodes.len() as u32 - 1;
    let root_tie = noise(origin);
    best.insert((origin, clamp_tau(hold)), (cost0, hold as u32));
    open.push(Reverse((
        Key {
            weight: cost0,
            f: hold as u32 + h0,
            tie: root_tie,
            deeper: Reverse(hold as u32),
            x: origin.x,
            y: origin.y,
            seq,
        },
        false,
    )));
    let mut ties: Vec<u64> = vec![0; nodes.len()];
    ties[root as usize] = root_tie;
    // The heap stores node indices through `seq`.
    let mut heap_node: Vec<u32> = vec![root];

    let mut expanded = 0usize;
    let mut closest = h0;
    let mut ev = SmallVec::new();
    while let Some(Reverse((key, terminal))) = open.pop() {
        let idx = heap_node[key.seq as usize];
        let node = &nodes[idx as usize];
        let (cell, tau) = (node.cell, node.tau as usize);
        let g_weight = key.weight;
        if terminal {
            let path = rebuild(&nodes, idx, reversed, horizon);
            return Ok(Found { path, cost: g_weight, expanded });
        }
        if let Some(&(w, t)) = best.get(&(cell, clamp_tau(tau))) {
            if (w, t) < (g_weight, tau as u32) {
                continue;
            }
        }
        expanded += 1;
        if expanded > cfg.budget {
            return fail(FailureReason::Budget, expanded, closest);
        }
        let h = oracle.query(cell);
        closest = closest.min(h);

        if cell == goal {
            let hold_ev = hold_events(tau);
            if let Some(extra) = price(&hold_ev) {
                if weights.is_none() {
                    let path = rebuild(&nodes, idx, reversed, horizon);
                    return Ok(Found { path, cost: 0, expanded });
                }
                seq += 1;
                heap_node.push(idx);
                open.push(Reverse((
                    Key {
                        weight: g_weight + extra,
                        f: tau as u32,
                        tie: ties[idx as usize],
                        deeper: Reverse(tau as u32),
                        x: cell.x,
                        y: cell.y,
                        seq,
                    },
                    true,
                )));
            }
        }
        if tau >= deadline {
            continue;
        }
        for mv in Move::ALL {
            let next = cell + mv.delta();
            if !grid.is_free(next) {
                continue;
            }
            let hn = oracle.query(next);
            if hn == INFINITY || tau + 1 + hn as usize > deadline {
                continue;
            }
            ev.clear();
            if reversed {
                // Table time runs backwards: the robot moves next -> cell, and
                // must also be alone on `next` at the earlier time.
                let t = horizon - tau - 1;
                table.step_events(next, cell, t, me, &mut ev);
                table.vertex_events(next, t, me, &mut ev);
            } else {
                table.step_events(cell, next, tau, me, &mut ev);
            }
            let Some(step_cost) = price(&ev) else { continue };
            let w = g_weight + step_cost;
            let nt = tau + 1;
            let k = (next, clamp_tau(nt));
            match best.get(&k) {
                Some(&(bw, bt)) if (bw, bt) <= (w, nt as u32) => continue,
                _ => {
                    best.insert(k, (w, nt as u32));
                }
            }
            let tie = ties[idx as usize] + noise(next);
            nodes.push(Node { cell: next, tau: nt as u32, parent: idx });
            ties.push(tie);
            seq += 1;
            heap_node.push(nodes.len() as u32 - 1);
            open.push(Reverse((
                Key {
                    weight: w,
                    f: nt as u32 + hn,
                    tie,
                    deeper: Reverse(nt as u32),
                    x: next.x,
                    y: next.y,
                    seq,
                },
                false,
            )));
        }
    }
    fail(FailureReason::NoPath, expanded, closest)
}

fn rebuild(nodes: &[Node], mut idx: u32, reversed: bool, horizon: usize) -> Path {
    let mut cells = Vec::new();
    while idx != u32::MAX {
        cells.push(nodes[idx as usize].cell);
        idx = nodes[idx as usize].parent;
    }
    cells.reverse();
    if reversed {
        // cells[tau] is the table-time position horizon - tau.
        let start = *cells.last().expect("non-empty");
        let mut positions = vec![start; horizon + 1 - cells.len()];
        positions.extend(cells.iter().rev());
        Path::new(positions)
    } else {
        Path::new(cells)
    }
}

/// Earliest-arrival walk along a fixed sequence of cells, waiting whenever
/// the next cell is not yet clear. Feasible mode only.
pub fn follow_route(table: &ReservationTable, robot: RobotId, route: &[Cell], budget: usize) -> Option<Path> {
    assert!(!route.is_empty());
    let last = route.len() - 1;
    let horizon = table.horizon();
    let goal = route[last];
    let mut ev = SmallVec::new();
    table.vertex_events(route[0], 0, robot, &mut ev);
    if !ev.is_empty() {
        return None;
    }
    // Breadth-first over (route index, time); key time clamped past the horizon.
    let mut parents: FxHashMap<(u32, u32), (u32, u32)> = FxHashMap::default();
    let mut frontier = vec![0u32];
    let mut seen_static = vec![false; route.len()];
    let mut visited = 0usize;
    let mut occ = Occupants::new();
    for t in 0.. {
        if frontier.is_empty() || visited > budget {
            return None;
        }
        let mut next_frontier = Vec::new();
        for &i in &frontier {
            visited += 1;
            let i_us = i as usize;
            if i_us == last {
                // Goal must stay clear afterwards.
                let clear = (t + 1..=horizon).all(|tt| {
                    table.occupants(goal, tt, &mut occ);
                    occ.iter().all(|&j| j as usize == robot)
                }) && table
                    .parked
                    .get(&goal)
                    .is_none_or(|p| p.iter().all(|(j, _)| *j as usize == robot));
                if clear {
                    let mut cells = vec![route[i_us]];
                    let (mut ci, mut ct) = (i, t as u32);
                    while let Some(&(pi, pt)) = parents.get(&(ci, ct)) {
                        cells.push(route[pi as usize]);
                        ci = pi;
                        ct = pt;
                    }
                    cells.reverse();
                    return Some(Path::new(cells));
                }
            }
            let options = if i_us < last { vec![i + 1, i] } else { vec![i] };
            for j in options {
                ev.clear();
                table.step_events(route[i_us], route[j as usize], t, robot, &mut ev);
                if !ev.is_empty() {
                    continue;
                }
                if t + 1 > horizon {
                    if seen_static[j as usize] {
                        continue;
                    }
                    seen_static[j as usize] = true;
                }
                if parents.contains_key(&(j, t as u32 + 1)) {
                    continue;
                }
                parents.insert((j, t as u32 + 1), (i, t as u32));
                next_frontier.push(j);
            }
        }
        frontier = next_frontier;
    }
    None
}
