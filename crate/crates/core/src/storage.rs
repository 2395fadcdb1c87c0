//! Storage networks and the two-phase robot-by-robot construction.
//!
//! Every robot gets a parking cell outside the bounding box. Phase one moves
//! robots from their starts to storage (by increasing start depth, or along
//! a scripted motion), which is always possible. Phase two replaces each
//! robot's path by a direct start-to-target path, by decreasing target
//! depth; such a path exists because start-to-storage and
//! storage-to-target paths both do.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::astar::{find_path, follow_route, Grid, ReservationTable, SearchConfig, TableMode, TieBreak};
use crate::distance::{compute_bounding_box, compute_depth, BoundingBox, DepthField, OracleCache, INFINITY};
use crate::error::{Error, Result};
use crate::matching::min_cost_assignment;
use crate::model::{Cell, Instance, Path, Rect, Robot, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StorageKind {
    Cross,
    Cootie,
    Dichotomy,
    Escape,
}

impl StorageKind {
    pub fn default_b(self) -> u32 {
        match self {
            StorageKind::Cross | StorageKind::Cootie => 2,
            StorageKind::Dichotomy => 3,
            StorageKind::Escape => 4,
        }
    }
}

impl fmt::Display for StorageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageKind::Cross => "cross",
            StorageKind::Cootie => "cootie",
            StorageKind::Dichotomy => "dichotomy",
            StorageKind::Escape => "escape",
        })
    }
}

impl FromStr for StorageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cross" => Ok(StorageKind::Cross),
            "cootie" => Ok(StorageKind::Cootie),
            "dichotomy" => Ok(StorageKind::Dichotomy),
            "escape" => Ok(StorageKind::Escape),
            other => Err(Error::InvalidArgument(format!("unknown storage strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchingMode {
    /// Robots by decreasing start-to-target distance each take their
    /// cheapest free cell.
    #[default]
    Greedy,
    /// Minimum total weight assignment.
    Exact,
}

/// Parking cells outside the box and the robot-to-cell assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StorageNetwork {
    pub kind: StorageKind,
    pub bbox: BoundingBox,
    /// Sorted, outside `bbox`.
    pub cells: Vec<Cell>,
    /// Storage cell of each robot, indexed by robot id.
    pub assignment: Vec<Cell>,
}

impl StorageNetwork {
    /// Region enclosing the box and the network with a two-cell slack ring.
    pub fn region(&self) -> Rect {
        self.cells
            .iter()
            .fold(self.bbox.rect, |r, &c| r.including(c))
            .expanded(2)
    }

    /// Cells that cannot reach the box without crossing another network
    /// cell. Empty for a valid network.
    pub fn escape_failures(&self, inst: &Instance) -> Vec<Cell> {
        let region = self.region();
        let members: FxHashSet<Cell> = self.cells.iter().copied().collect();
        let mut failures = Vec::new();
        let mut seen = vec![u32::MAX; region.area()];
        for (k, &p) in self.cells.iter().enumerate() {
            let stamp = k as u32;
            let mut queue = VecDeque::from([p]);
            seen[region.index(p)] = stamp;
            let mut ok = false;
            while let Some(c) = queue.pop_front() {
                if self.bbox.rect.contains(c) {
                    ok = true;
                    break;
                }
                for nb in c.neighbors() {
                    if region.contains(nb)
                        && seen[region.index(nb)] != stamp
                        && !members.contains(&nb)
                        && !inst.is_obstacle(nb)
                    {
                        seen[region.index(nb)] = stamp;
                        queue.push_back(nb);
                    }
                }
            }
            if !ok {
                failures.push(p);
            }
        }
        failures
    }

    pub fn is_injective(&self) -> bool {
        let set: FxHashSet<Cell> = self.cells.iter().copied().collect();
        let mut used = FxHashSet::default();
        self.assignment.iter().all(|c| set.contains(c) && used.insert(*c))
    }
}

/// Robot orders for the two phases.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhasePlan {
    pub phase1: Vec<usize>,
    pub phase2: Vec<usize>,
}

/// How robots get from their starts to storage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Phase1Motion {
    /// One A* search per robot in `PhasePlan::phase1` order.
    Search,
    /// Precomputed, mutually feasible paths (one per robot).
    Scripted(Vec<Path>),
    /// Fixed cell routes walked in `phase1` order, waiting until clear.
    Routes(Vec<Vec<Cell>>),
}

#[derive(Debug, Clone)]
pub struct StorageLayout {
    pub network: StorageNetwork,
    pub plan: PhasePlan,
    pub motion: Phase1Motion,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StorageConfig {
    /// Depth parameter; the strategy default when `None`.
    pub b: Option<u32>,
    pub matching: MatchingMode,
    /// Shuffles depth ties when set; robot id order otherwise.
    pub order_seed: Option<u64>,
}

fn ordered_by<K: Ord>(n: usize, key: impl Fn(usize) -> K, seed: Option<u64>) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).collect();
    if let Some(seed) = seed {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ids.sort_by_key(|&i| key(i));
    } else {
        ids.sort_by_key(|&i| (key(i), i));
    }
    ids
}

/// Phase orders by increasing start depth and decreasing target depth.
pub fn depth_plan(inst: &Instance, depth: &DepthField, seed: Option<u64>) -> PhasePlan {
    let n = inst.len();
    let phase1 = ordered_by(n, |i| depth.depth(inst.robot(i).start), seed);
    let phase2 = ordered_by(n, |i| Reverse(depth.depth(inst.robot(i).target)), seed.map(|s| s ^ 0x5bd1));
    PhasePlan { phase1, phase2 }
}

pub fn build(kind: StorageKind, inst: &Instance, cfg: &StorageConfig) -> Result<StorageLayout> {
    let b = cfg.b.unwrap_or(kind.default_b());
    if b < 2 {
        return Err(Error::InvalidArgument(format!("depth parameter b = {b} must be at least 2")));
    }
    let bbox = compute_bounding_box(inst, b);
    let depth = compute_depth(inst, &bbox);
    let mut cache = OracleCache::with_box(inst, bbox);
    match kind {
        StorageKind::Cross => {
            let network = build_cross(inst, bbox, cfg.matching, &mut cache);
            Ok(StorageLayout { network, plan: depth_plan(inst, &depth, cfg.order_seed), motion: Phase1Motion::Search })
        }
        StorageKind::Cootie => {
            let network = build_cootie(inst, bbox, &mut cache);
            Ok(StorageLayout { network, plan: depth_plan(inst, &depth, cfg.order_seed), motion: Phase1Motion::Search })
        }
        StorageKind::Dichotomy => {
            let (network, script) = build_dichotomy(inst, bbox)?;
            let center = box_center(&bbox.rect);
            let phase2 = ordered_by(inst.len(), |i| inst.robot(i).target.x.abs_diff(center.x), cfg.order_seed);
            let phase1 = (0..inst.len()).collect();
            Ok(StorageLayout { network, plan: PhasePlan { phase1, phase2 }, motion: Phase1Motion::Scripted(script) })
        }
        StorageKind::Escape => {
            let esc = build_escape(inst, bbox)?;
            let phase2 = depth_plan(inst, &depth, cfg.order_seed).phase2;
            Ok(StorageLayout {
                network: esc.network,
                plan: PhasePlan { phase1: esc.order, phase2 },
                motion: Phase1Motion::Routes(esc.routes),
            })
        }
    }
}

/// Even columns directly above/below the box and even rows directly
/// left/right of it, grown ring by ring until there is room for everyone.
pub fn cross_cells(bbox: &BoundingBox, n: usize) -> Vec<Cell> {
    let r = bbox.rect;
    let want = n + n / 2 + 8;
    let mut cells = Vec::new();
    let mut d = 0;
    while cells.len() < want {
        d += 1;
        for x in (r.min.x..=r.max.x).filter(|x| x.rem_euclid(2) == 0) {
            cells.push(Cell::new(x, r.max.y + d));
            cells.push(Cell::new(x, r.min.y - d));
        }
        for y in (r.min.y..=r.max.y).filter(|y| y.rem_euclid(2) == 0) {
            cells.push(Cell::new(r.max.x + d, y));
            cells.push(Cell::new(r.min.x - d, y));
        }
    }
    cells.sort();
    cells
}

pub fn build_cross(inst: &Instance, bbox: BoundingBox, matching: MatchingMode, cache: &mut OracleCache) -> StorageNetwork {
    let cells = cross_cells(&bbox, inst.len());
    let weight = |cache: &mut OracleCache, r: &Robot, s: Cell| -> i64 {
        let a = cache.get(r.start).query(s);
        let b = cache.get(r.target).query(s);
        if a == INFINITY || b == INFINITY {
            i64::MAX / 8
        } else {
            (a + b) as i64
        }
    };
    let assignment = match matching {
        MatchingMode::Greedy => {
            let mut order: Vec<&Robot> = inst.robots().iter().collect();
            let d: Vec<u32> = inst.robots().iter().map(|r| cache.get(r.target).query(r.start)).collect();
            order.sort_by_key(|r| (Reverse(d[r.id]), r.id));
            let mut taken = vec![false; cells.len()];
            let mut assignment = vec![Cell::default(); inst.len()];
            for r in order {
                let (k, _) = cells
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| !taken[*k])
                    .map(|(k, &s)| (k, weight(cache, r, s)))
                    .min_by_key(|&(k, w)| (w, k))
                    .expect("capacity exceeds robot count");
                taken[k] = true;
                assignment[r.id] = cells[k];
            }
            assignment
        }
        MatchingMode::Exact => {
            let mut cost = Vec::with_capacity(inst.len() * cells.len());
            for r in inst.robots() {
                for &s in &cells {
                    cost.push(weight(cache, r, s));
                }
            }
            min_cost_assignment(&cost, inst.len(), cells.len())
                .into_iter()
                .map(|k| cells[k])
                .collect()
        }
    };
    StorageNetwork { kind: StorageKind::Cross, bbox, cells, assignment }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Side {
    Top,
    Right,
    Bottom,
    Left,
}

fn nearest_side(r: &Rect, c: Cell) -> (Side, i32) {
    [
        (Side::Top, r.max.y - c.y),
        (Side::Right, r.max.x - c.x),
        (Side::Bottom, c.y - r.min.y),
        (Side::Left, c.x - r.min.x),
    ]
    .into_iter()
    .min_by_key(|&(s, d)| (d, s))
    .expect("four sides")
}

/// Slot rows at odd offsets beyond one side, skipping the two corner lanes
/// so the empty even rows lead back into the box.
fn cootie_slots(r: &Rect, side: Side, count: usize) -> Vec<Cell> {
    let span = match side {
        Side::Top | Side::Bottom => (r.min.x + 1)..=(r.max.x - 1),
        Side::Left | Side::Right => (r.min.y + 1)..=(r.max.y - 1),
    };
    let width = span.clone().count().max(1);
    let rows = count.div_ceil(width) + 1;
    let mut out = Vec::with_capacity(rows * width);
    for k in 0..rows as i32 {
        let e = 2 * k + 1;
        for s in span.clone() {
            out.push(match side {
                Side::Top => Cell::new(s, r.max.y + e),
                Side::Bottom => Cell::new(s, r.min.y - e),
                Side::Right => Cell::new(r.max.x + e, s),
                Side::Left => Cell::new(r.min.x - e, s),
            });
        }
    }
    out
}

/// Four diamond-like clusters, one beyond each side. Each robot parks beyond
/// the side nearest its start; deeper robots claim the closest slots first,
/// so robots near the side travel farther out and the sweep stays parallel.
pub fn build_cootie(inst: &Instance, bbox: BoundingBox, cache: &mut OracleCache) -> StorageNetwork {
    let rect = bbox.rect;
    let sides: Vec<(Side, i32)> = inst.robots().iter().map(|r| nearest_side(&rect, r.start)).collect();
    let mut cells = Vec::new();
    let mut assignment = vec![Cell::default(); inst.len()];
    for side in [Side::Top, Side::Right, Side::Bottom, Side::Left] {
        let mut members: Vec<usize> = (0..inst.len()).filter(|&i| sides[i].0 == side).collect();
        let slots = cootie_slots(&rect, side, members.len() + members.len() / 4 + 2);
        members.sort_by_key(|&i| (Reverse(sides[i].1), i));
        let mut taken = vec![false; slots.len()];
        for i in members {
            let start = inst.robot(i).start;
            let oracle = cache.get(start);
            let (k, _) = slots
                .iter()
                .enumerate()
                .filter(|(k, _)| !taken[*k])
                .map(|(k, &s)| (k, oracle.query(s)))
                .min_by_key(|&(k, d)| (d, k))
                .expect("slot capacity exceeds side population");
            taken[k] = true;
            assignment[i] = slots[k];
        }
        cells.extend(slots);
    }
    cells.sort();
    StorageNetwork { kind: StorageKind::Cootie, bbox, cells, assignment }
}

fn box_center(r: &Rect) -> Cell {
    Cell::new((r.min.x + r.max.x).div_euclid(2), (r.min.y + r.max.y).div_euclid(2))
}

/// Scripted parallel evacuation for obstacle-free instances. With the box
/// centre as origin: (1) every robot moves vertically from (x, y) to
/// (x, 2y); (2) robots whose target has x >= 0 move one more row outward, so
/// rows alternate between the two sides; (3) rows pack horizontally, right
/// side robots to the right and left side robots to the left, until each
/// robot is outside the box (rows crossing the box) or on its own half.
pub fn build_dichotomy(inst: &Instance, bbox: BoundingBox) -> Result<(StorageNetwork, Vec<Path>)> {
    if !inst.obstacles().is_empty() {
        return Err(Error::Unsupported("the dichotomy strategy only handles instances without obstacles".into()));
    }
    let rect = bbox.rect;
    let center = box_center(&rect);
    let n = inst.len();
    let right: Vec<bool> = inst.robots().iter().map(|r| r.target.x >= center.x).collect();

    let mut paths: Vec<Vec<Cell>> = inst.robots().iter().map(|r| vec![r.start]).collect();
    // Step 1: vertical spreading, all robots in parallel.
    let rel_y: Vec<i32> = inst.robots().iter().map(|r| r.start.y - center.y).collect();
    let spread = rel_y.iter().map(|y| y.unsigned_abs() as usize).max().unwrap_or(0);
    for t in 1..=spread {
        for i in 0..n {
            let last = *paths[i].last().unwrap();
            let dy = rel_y[i];
            let step = if (t as i32) <= dy.abs() { dy.signum() } else { 0 };
            paths[i].push(Cell::new(last.x, last.y + step));
        }
    }
    // Step 2: right side robots move one row further out.
    for i in 0..n {
        let last = *paths[i].last().unwrap();
        let step = if right[i] { if rel_y[i] >= 0 { 1 } else { -1 } } else { 0 };
        paths[i].push(Cell::new(last.x, last.y + step));
    }
    // Step 3: horizontal packing per row.
    let mut rows: FxHashMap<i32, Vec<usize>> = FxHashMap::default();
    for i in 0..n {
        rows.entry(paths[i].last().unwrap().y).or_default().push(i);
    }
    let mut goal_x = vec![0i32; n];
    for (y, mut ids) in rows {
        let inside = y >= rect.min.y && y <= rect.max.y;
        ids.sort_by_key(|&i| paths[i].last().unwrap().x);
        if right[ids[0]] {
            let floor = if inside { rect.max.x + 1 } else { center.x + 1 };
            let mut prev = i32::MIN;
            for &i in &ids {
                let x = paths[i].last().unwrap().x;
                let f = x.max(floor).max(prev.saturating_add(1));
                goal_x[i] = f;
                prev = f;
            }
        } else {
            let ceil = if inside { rect.min.x - 1 } else { center.x - 1 };
            let mut prev = i32::MAX;
            for &i in ids.iter().rev() {
                let x = paths[i].last().unwrap().x;
                let f = x.min(ceil).min(prev.saturating_sub(1));
                goal_x[i] = f;
                prev = f;
            }
        }
    }
    let pack = (0..n)
        .map(|i| paths[i].last().unwrap().x.abs_diff(goal_x[i]) as usize)
        .max()
        .unwrap_or(0);
    for _ in 0..pack {
        for i in 0..n {
            let last = *paths[i].last().unwrap();
            let step = (goal_x[i] - last.x).signum();
            paths[i].push(Cell::new(last.x + step, last.y));
        }
    }
    let script: Vec<Path> = paths.into_iter().map(|p| Path::new(p).trimmed()).collect();
    let assignment: Vec<Cell> = script.iter().map(Path::last).collect();
    let mut cells = assignment.clone();
    cells.sort();
    Ok((StorageNetwork { kind: StorageKind::Dichotomy, bbox, cells, assignment }, script))
}

const DIRS: [Cell; 4] = [Cell::new(0, 1), Cell::new(1, 0), Cell::new(0, -1), Cell::new(-1, 0)];

/// Rectangle of robots that moves in one straight direction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub rect: Rect,
    pub dir: Cell,
    /// 1-based layer number.
    pub layer: usize,
    /// Block entered by this one; `None` for blocks leaving the box.
    pub into: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct EscapePlan {
    pub network: StorageNetwork,
    pub blocks: Vec<Block>,
    pub layers: usize,
    /// Block index of each free cell of the box.
    pub block_of: FxHashMap<Cell, usize>,
    /// Evacuation order of robots.
    pub order: Vec<usize>,
    /// Route of each robot from start to storage.
    pub routes: Vec<Vec<Cell>>,
}

/// Largest rectangle under a histogram: (area, first column, last column, height).
fn largest_in_histogram(h: &[usize]) -> Option<(usize, usize, usize, usize)> {
    let mut best: Option<(usize, usize, usize, usize)> = None;
    let mut stack: Vec<usize> = Vec::new();
    for i in 0..=h.len() {
        let cur = if i < h.len() { h[i] } else { 0 };
        while let Some(&top) = stack.last() {
            if h[top] <= cur {
                break;
            }
            stack.pop();
            let left = stack.last().map_or(0, |&s| s + 1);
            let area = h[top] * (i - left);
            if area > 0 && best.is_none_or(|b| area > b.0) {
                best = Some((area, left, i - 1, h[top]));
            }
        }
        stack.push(i);
    }
    best
}

/// Layered decomposition of the free cells of the box into straight-moving
/// rectangular blocks, storage on two of every three rows and columns
/// outside the box, and per-robot evacuation routes.
pub fn build_escape(inst: &Instance, bbox: BoundingBox) -> Result<EscapePlan> {
    let rect = bbox.rect;
    let free = |c: Cell| rect.contains(c) && !inst.is_obstacle(c);

    // Straight-line exit length per direction (None when blocked).
    let mut ray: Vec<Vec<Option<u32>>> = vec![vec![None; rect.area()]; 4];
    for (d, dir) in DIRS.iter().enumerate() {
        // Visit cells so that c + dir is done before c.
        let mut cells: Vec<Cell> = rect.cells().collect();
        cells.sort_by_key(|c| Reverse(c.x * dir.x + c.y * dir.y));
        for c in cells {
            if !free(c) {
                continue;
            }
            let next = c + *dir;
            ray[d][rect.index(c)] = if !rect.contains(next) {
                Some(1)
            } else {
                ray[d][rect.index(next)].map(|k| k + 1)
            };
        }
    }

    let mut block_of: Vec<Option<usize>> = vec![None; rect.area()];
    let mut blocks: Vec<Block> = Vec::new();

    // Layer 1: repeatedly the largest rectangle of unassigned cells sharing a
    // clear exit direction; ties toward the exterior.
    loop {
        let mut best: Option<(usize, Reverse<u32>, usize, Rect)> = None;
        for d in 0..4 {
            let dir = DIRS[d];
            // Histogram rows are taken perpendicular to the direction of motion.
            let (len_a, len_b) = if dir.x == 0 { (rect.height(), rect.width()) } else { (rect.width(), rect.height()) };
            let cell_at = |a: usize, b: usize| -> Cell {
                if dir.x == 0 {
                    let y = if dir.y > 0 { rect.max.y - a as i32 } else { rect.min.y + a as i32 };
                    Cell::new(rect.min.x + b as i32, y)
                } else {
                    let x = if dir.x > 0 { rect.max.x - a as i32 } else { rect.min.x + a as i32 };
                    Cell::new(x, rect.min.y + b as i32)
                }
            };
            let mut h = vec![0usize; len_b];
            for a in 0..len_a {
                for (b, hb) in h.iter_mut().enumerate() {
                    let c = cell_at(a, b);
                    let ok = block_of[rect.index(c)].is_none() && ray[d][rect.index(c)].is_some();
                    *hb = if ok { *hb + 1 } else { 0 };
                }
                if let Some((area, b0, b1, height)) = largest_in_histogram(&h) {
                    let front = (b0..=b1)
                        .map(|b| ray[d][rect.index(cell_at(a + 1 - height, b))].unwrap_or(u32::MAX))
                        .max()
                        .unwrap_or(u32::MAX);
                    let r = Rect::enclosing([cell_at(a + 1 - height, b0), cell_at(a, b1)]).unwrap();
                    let cand = (area, Reverse(front), d, r);
                    let better = match &best {
                        None => true,
                        Some(cur) => (cand.0, cand.1, Reverse(cand.2)) > (cur.0, cur.1, Reverse(cur.2)),
                    };
                    if better {
                        best = Some(cand);
                    }
                }
            }
        }
        let Some((_, _, d, r)) = best else { break };
        let id = blocks.len();
        for c in r.cells() {
            block_of[rect.index(c)] = Some(id);
        }
        blocks.push(Block { rect: r, dir: DIRS[d], layer: 1, into: None });
    }

    // Later layers: blocks moving straight into a block of an earlier layer.
    let mut layer = 1;
    loop {
        let previous: Vec<usize> = (0..blocks.len()).collect();
        let mut added = false;
        for bi in previous {
            let target = blocks[bi].rect;
            for dir in DIRS {
                // Cells behind side `-dir` of the target move along `dir` into it.
                loop {
                    let (span, behind): (Vec<Cell>, Cell) = if dir.y == 1 {
                        ((target.min.x..=target.max.x).map(|x| Cell::new(x, target.min.y - 1)).collect(), Cell::new(0, -1))
                    } else if dir.y == -1 {
                        ((target.min.x..=target.max.x).map(|x| Cell::new(x, target.max.y + 1)).collect(), Cell::new(0, 1))
                    } else if dir.x == 1 {
                        ((target.min.y..=target.max.y).map(|y| Cell::new(target.min.x - 1, y)).collect(), Cell::new(-1, 0))
                    } else {
                        ((target.min.y..=target.max.y).map(|y| Cell::new(target.max.x + 1, y)).collect(), Cell::new(1, 0))
                    };
                    let heights: Vec<usize> = span
                        .iter()
                        .map(|&c0| {
                            let mut k = 0;
                            let mut c = c0;
                            while free(c) && block_of[rect.index(c)].is_none() {
                                k += 1;
                                c = c + behind;
                            }
                            k
                        })
                        .collect();
                    let Some((_, b0, b1, height)) = largest_in_histogram(&heights) else { break };
                    let far = Cell::new(
                        span[b1].x + behind.x * (height as i32 - 1),
                        span[b1].y + behind.y * (height as i32 - 1),
                    );
                    let r = Rect::enclosing([span[b0], far]).unwrap();
                    let id = blocks.len();
                    for c in r.cells() {
                        block_of[rect.index(c)] = Some(id);
                    }
                    blocks.push(Block { rect: r, dir, layer: layer + 1, into: Some(bi) });
                    added = true;
                }
            }
        }
        if !added {
            break;
        }
        layer += 1;
    }
    let layers = blocks.iter().map(|b| b.layer).max().unwrap_or(0);

    let stranded: Vec<Cell> = inst
        .robots()
        .iter()
        .map(|r| r.start)
        .filter(|&c| block_of[rect.index(c)].is_none())
        .collect();
    if !stranded.is_empty() {
        return Err(Error::Decomposition { stranded });
    }

    // Route inside the box: straight moves from block to block until the
    // last cell before the exterior.
    let mut inner: FxHashMap<Cell, Vec<Cell>> = FxHashMap::default();
    fn inner_route(
        c: Cell,
        rect: &Rect,
        blocks: &[Block],
        block_of: &[Option<usize>],
        memo: &mut FxHashMap<Cell, Vec<Cell>>,
    ) -> Vec<Cell> {
        if let Some(r) = memo.get(&c) {
            return r.clone();
        }
        let b = block_of[rect.index(c)].expect("assigned cell");
        let dir = blocks[b].dir;
        let mut route = vec![c];
        let mut cur = c;
        let result = loop {
            let next = cur + dir;
            if !rect.contains(next) {
                break route;
            }
            match block_of[rect.index(next)] {
                Some(nb) if nb != b && blocks[b].into == Some(nb) => {
                    let mut tail = inner_route(next, rect, blocks, block_of, memo);
                    route.append(&mut tail);
                    break route;
                }
                _ => {
                    route.push(next);
                    cur = next;
                }
            }
        };
        memo.insert(c, result.clone());
        result
    }
    let inner_routes: Vec<Vec<Cell>> = inst
        .robots()
        .iter()
        .map(|r| inner_route(r.start, &rect, &blocks, &block_of, &mut inner))
        .collect();

    // Evacuation order: robots whose start lies on another's route go first.
    let n = inst.len();
    let start_of: FxHashMap<Cell, usize> = inst.robots().iter().map(|r| (r.start, r.id)).collect();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, route) in inner_routes.iter().enumerate() {
        let mut seen = FxHashSet::default();
        for c in &route[1..] {
            if let Some(&j) = start_of.get(c) {
                if j != i && seen.insert(j) {
                    indegree[i] += 1;
                    dependents[j].push(i);
                }
            }
        }
    }
    let key = |i: usize| {
        let b = block_of[rect.index(inst.robot(i).start)].unwrap();
        (blocks[b].layer, inner_routes[i].len(), i)
    };
    let mut order = Vec::with_capacity(n);
    let mut done = vec![false; n];
    let mut ready: BinaryHeap<Reverse<(usize, usize, usize)>> =
        (0..n).filter(|&i| indegree[i] == 0).map(|i| Reverse(key(i))).collect();
    while order.len() < n {
        let next = match ready.pop() {
            Some(Reverse((_, _, i))) => i,
            None => {
                // Dependency cycle: release the most advanced waiting robot.
                (0..n).filter(|&i| !done[i]).min_by_key(|&i| key(i)).unwrap()
            }
        };
        if done[next] {
            continue;
        }
        done[next] = true;
        order.push(next);
        for &k in &dependents[next] {
            indegree[k] = indegree[k].saturating_sub(1);
            if indegree[k] == 0 && !done[k] {
                ready.push(Reverse(key(k)));
            }
        }
    }

    // Storage on cells outside the box with neither coordinate divisible by 3,
    // leaving the ring right around the box as a corridor.
    let want = n + n / 4 + 8;
    let mut cells = Vec::new();
    let mut ring = 0;
    while cells.len() < want {
        ring += 1;
        let outer = rect.expanded(ring);
        for c in outer.cells() {
            let on_ring = !rect.expanded(ring - 1).contains(c);
            if ring > 1 && on_ring && c.x.rem_euclid(3) != 0 && c.y.rem_euclid(3) != 0 {
                cells.push(c);
            }
        }
    }
    cells.sort();
    let members: FxHashSet<Cell> = cells.iter().copied().collect();
    let mut taken: FxHashSet<Cell> = FxHashSet::default();
    let mut assignment = vec![Cell::default(); n];
    let region = rect.expanded(ring + 2);
    let mut routes = vec![Vec::new(); n];
    // Later evacuees take the closest cells so earlier ones do not block them.
    for &i in order.iter().rev() {
        let exit = *inner_routes[i].last().unwrap();
        // BFS outside the box over non-storage cells, ending on a free slot.
        let mut prev: FxHashMap<Cell, Cell> = FxHashMap::default();
        let mut queue = VecDeque::from([exit]);
        prev.insert(exit, exit);
        let mut slot = None;
        while let Some(c) = queue.pop_front() {
            if members.contains(&c) && !taken.contains(&c) {
                slot = Some(c);
                break;
            }
            if members.contains(&c) {
                continue;
            }
            let mut nbs = c.neighbors();
            nbs.sort();
            for nb in nbs {
                if region.contains(nb) && !rect.contains(nb) && !prev.contains_key(&nb) {
                    prev.insert(nb, c);
                    queue.push_back(nb);
                }
            }
        }
        let slot = slot.ok_or_else(|| Error::Internal("escape storage exhausted".into()))?;
        taken.insert(slot);
        assignment[i] = slot;
        let mut tail = vec![slot];
        let mut c = slot;
        while c != exit {
            c = prev[&c];
            tail.push(c);
        }
        tail.pop();
        tail.reverse();
        let mut route = inner_routes[i].clone();
        route.extend(tail);
        routes[i] = route;
    }
    let block_of: FxHashMap<Cell, usize> = rect
        .cells()
        .filter_map(|c| block_of[rect.index(c)].map(|b| (c, b)))
        .collect();
    Ok(EscapePlan {
        network: StorageNetwork { kind: StorageKind::Escape, bbox, cells, assignment },
        blocks,
        layers,
        block_of,
        order,
        routes,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct TwoPhaseConfig {
    pub tie_break: TieBreak,
    pub budget: usize,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self { tie_break: TieBreak::Deterministic, budget: crate::astar::DEFAULT_BUDGET }
    }
}

#[derive(Debug, Clone)]
pub struct TwoPhaseOutcome {
    pub solution: Solution,
    /// Time at which the last robot reaches storage in phase one.
    pub storage_phase: usize,
    /// Phase-one solution (everyone parked in storage).
    pub parked: Solution,
    /// Route walks that fell back to a free search.
    pub fallbacks: usize,
}

pub fn run_two_phase(inst: &Instance, layout: &StorageLayout, cfg: &TwoPhaseConfig) -> Result<TwoPhaseOutcome> {
    let net = &layout.network;
    let n = inst.len();
    let grid = Grid::new(inst, net.region());
    let mut cache = OracleCache::with_box(inst, net.bbox);
    let mut table = ReservationTable::new(n, TableMode::Feasible);
    let search = SearchConfig { tie_break: cfg.tie_break, budget: cfg.budget, ..SearchConfig::forward() };
    let mut fallbacks = 0;

    let internal = |phase: &str, r: usize, e: &dyn fmt::Debug| {
        Error::Internal(format!("{phase}: no path for robot {r} ({e:?})"))
    };

    match &layout.motion {
        Phase1Motion::Scripted(script) => {
            for (r, p) in script.iter().enumerate() {
                table
                    .register(r, p.clone())
                    .map_err(|e| internal("scripted phase", r, &e))?;
            }
        }
        Phase1Motion::Search | Phase1Motion::Routes(_) => {
            for r in inst.robots() {
                table
                    .register(r.id, Path::stationary(r.start, 0))
                    .map_err(|e| internal("initial placement", r.id, &e))?;
            }
            for &r in &layout.plan.phase1 {
                table.unregister(r).expect("registered");
                let robot = inst.robot(r);
                let parked = Robot { id: r, start: robot.start, target: net.assignment[r] };
                let walked = match &layout.motion {
                    Phase1Motion::Routes(routes) => follow_route(&table, r, &routes[r], cfg.budget),
                    _ => None,
                };
                let path = match walked {
                    Some(p) => p,
                    None => {
                        if matches!(layout.motion, Phase1Motion::Routes(_)) {
                            fallbacks += 1;
                        }
                        let oracle = cache.get(parked.target);
                        find_path(&grid, &table, &parked, &search, &oracle)
                            .map_err(|e| internal("storage phase", r, &e))?
                            .path
                    }
                };
                table.register(r, path).map_err(|e| internal("storage phase", r, &e))?;
            }
        }
    }
    let storage_phase = table.horizon();
    let parked = Solution::from_paths(
        inst.name(),
        (0..n).map(|r| table.path(r).unwrap().clone()).collect(),
    );

    for &r in &layout.plan.phase2 {
        table.unregister(r).expect("registered");
        let robot = inst.robot(r);
        let oracle = cache.get(robot.target);
        let found = find_path(&grid, &table, robot, &search, &oracle).map_err(|e| internal("target phase", r, &e))?;
        table.register(r, found.path).map_err(|e| internal("target phase", r, &e))?;
    }
    let solution = Solution::from_paths(inst.name(), (0..n).map(|r| table.path(r).unwrap().clone()).collect());
    Ok(TwoPhaseOutcome { solution, storage_phase, parked, fallbacks })
}

/// Builds the network for `kind` and runs both phases.
pub fn solve(kind: StorageKind, inst: &Instance, cfg: &StorageConfig, run: &TwoPhaseConfig) -> Result<TwoPhaseOutcome> {
    let layout = build(kind, inst, cfg)?;
    run_two_phase(inst, &layout, run)
}
