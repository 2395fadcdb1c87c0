//! Bounding boxes, depth fields and the compressed obstacle-avoiding
//! distance oracle.
//!
//! Along any grid row the distance to a fixed target changes by -1, 0 or +1
//! per step, so a row is a piecewise-linear function of `x`. The oracle keeps
//! only the cells where that function is not locally linear; every other
//! value is recovered by binary search and interpolation. Cells outside the
//! box are answered by projecting onto the box: the box ring holds no
//! obstacles, so detours outside it never help.

use std::collections::VecDeque;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::model::{Cell, Instance, Rect};

/// Distance value used for obstacles and sealed-off cells.
pub const INFINITY: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub rect: Rect,
    /// Minimum depth guaranteed for every start, target and obstacle.
    pub b: u32,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.rect.width().max(self.rect.height())
    }
}

/// Minimal box holding every start, target and obstacle in its strict
/// interior, grown by `b - 2` on each side.
pub fn compute_bounding_box(inst: &Instance, b: u32) -> BoundingBox {
    assert!(b >= 2, "depth parameter must be at least 2");
    let cells = inst
        .robots()
        .iter()
        .flat_map(|r| [r.start, r.target])
        .chain(inst.obstacles().iter().copied());
    let tight = Rect::enclosing(cells).expect("instance has robots");
    BoundingBox { rect: tight.expanded(b as i32 - 1), b }
}

/// Multi-source BFS over the free cells of `rect`, seeded with `sources`.
fn bfs(rect: Rect, blocked: impl Fn(Cell) -> bool, sources: impl IntoIterator<Item = (Cell, u32)>) -> Vec<u32> {
    let mut dist = vec![INFINITY; rect.area()];
    let mut queue = VecDeque::new();
    for (c, d) in sources {
        let i = rect.index(c);
        if d < dist[i] {
            dist[i] = d;
            queue.push_back(c);
        }
    }
    while let Some(c) = queue.pop_front() {
        let d = dist[rect.index(c)] + 1;
        for nb in c.neighbors() {
            if rect.contains(nb) && !blocked(nb) {
                let j = rect.index(nb);
                if dist[j] == INFINITY {
                    dist[j] = d;
                    queue.push_back(nb);
                }
            }
        }
    }
    dist
}

/// Obstacle-avoiding distance from each cell of the box to its exterior.
#[derive(Debug, Clone)]
pub struct DepthField {
    rect: Rect,
    depth: Vec<u32>,
}

impl DepthField {
    /// 0 outside the box, [`INFINITY`] for sealed cells. Obstacles report
    /// one more than their best free neighbor.
    pub fn depth(&self, c: Cell) -> u32 {
        if self.rect.contains(c) {
            self.depth[self.rect.index(c)]
        } else {
            0
        }
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }
}

pub fn compute_depth(inst: &Instance, bbox: &BoundingBox) -> DepthField {
    let rect = bbox.rect;
    let ring = rect
        .cells()
        .filter(|c| !rect.contains_strictly(*c) && !inst.is_obstacle(*c))
        .map(|c| (c, 1));
    let mut depth = bfs(rect, |c| inst.is_obstacle(c), ring);
    for &o in inst.obstacles() {
        if !rect.contains(o) {
            continue;
        }
        let best = o
            .neighbors()
            .iter()
            .map(|&nb| if rect.contains(nb) { depth[rect.index(nb)] } else { 0 })
            .filter(|&d| d != INFINITY)
            .min();
        depth[rect.index(o)] = best.map_or(INFINITY, |d| d + 1);
    }
    DepthField { rect, depth }
}

/// Compressed per-target distance table.
#[derive(Debug, Clone)]
pub struct DistanceOracle {
    target: Cell,
    rect: Rect,
    /// Per row (indexed from `rect.min.y`), sorted `(x, dist)` breakpoints.
    rows: Vec<Vec<(i32, u32)>>,
}

#[inline]
fn is_linear(l: u32, m: u32, r: u32) -> bool {
    if l == INFINITY || m == INFINITY || r == INFINITY {
        l == INFINITY && m == INFINITY && r == INFINITY
    } else {
        2 * m as u64 == l as u64 + r as u64
    }
}

impl DistanceOracle {
    pub fn target(&self) -> Cell {
        self.target
    }

    pub fn rect(&self) -> Rect {
        self.rect
    }

    /// Total number of stored breakpoints.
    pub fn stored(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row_breakpoints(&self, y: i32) -> Option<&[(i32, u32)]> {
        if y < self.rect.min.y || y > self.rect.max.y {
            return None;
        }
        Some(&self.rows[(y - self.rect.min.y) as usize])
    }

    /// Exact obstacle-avoiding L1 distance from `p` to the target.
    #[inline]
    pub fn query(&self, p: Cell) -> u32 {
        let mut ignored = 0;
        self.query_counted(p, &mut ignored)
    }

    /// Like [`query`](Self::query), adding the number of key comparisons
    /// made to `comparisons`.
    pub fn query_counted(&self, p: Cell, comparisons: &mut usize) -> u32 {
        let q = self.rect.clamp(p);
        let extra = p.l1(q);
        let row = &self.rows[(q.y - self.rect.min.y) as usize];
        // Last breakpoint with x <= q.x; the row always stores both ends.
        let (mut lo, mut hi) = (0usize, row.len());
        while lo < hi {
            let mid = (lo + hi) / 2;
            *comparisons += 1;
            if row[mid].0 <= q.x {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let (xs, ds) = row[lo - 1];
        *comparisons += 1;
        let d = if xs == q.x {
            ds
        } else if ds == INFINITY {
            INFINITY
        } else {
            let (xn, dn) = row[lo];
            let span = (xn - xs) as i64;
            let off = (q.x - xs) as i64;
            (ds as i64 + (dn as i64 - ds as i64) * off / span) as u32
        };
        if d == INFINITY {
            INFINITY
        } else {
            d + extra
        }
    }
}

/// BFS from `target` over `bbox` (widened to hold the target if needed)
/// followed by row compression.
pub fn build_oracle(inst: &Instance, bbox: &BoundingBox, target: Cell) -> DistanceOracle {
    debug_assert!(!inst.is_obstacle(target));
    let mut rect = bbox.rect;
    if !rect.contains_strictly(target) {
        rect = rect.union(Rect::new(target, target).expanded(1));
    }
    let dist = bfs(rect, |c| inst.is_obstacle(c), [(target, 0)]);
    let w = rect.width();
    let rows = (0..rect.height())
        .map(|ry| {
            let line = &dist[ry * w..(ry + 1) * w];
            let mut out = Vec::new();
            for i in 0..w {
                let keep = i == 0 || i + 1 == w || !is_linear(line[i - 1], line[i], line[i + 1]);
                if keep {
                    out.push((rect.min.x + i as i32, line[i]));
                }
            }
            out
        })
        .collect();
    DistanceOracle { target, rect, rows }
}

/// Anything that can report obstacle-avoiding distances between cells.
pub trait Distances {
    fn dist(&mut self, from: Cell, to: Cell) -> u32;
}

/// Lazily built oracles for one instance, keyed by target cell.
#[derive(Debug, Clone)]
pub struct OracleCache<'a> {
    inst: &'a Instance,
    bbox: BoundingBox,
    oracles: FxHashMap<Cell, Arc<DistanceOracle>>,
}

impl<'a> OracleCache<'a> {
    pub fn new(inst: &'a Instance) -> Self {
        Self::with_box(inst, compute_bounding_box(inst, 2))
    }

    pub fn with_box(inst: &'a Instance, bbox: BoundingBox) -> Self {
        Self { inst, bbox, oracles: FxHashMap::default() }
    }

    pub fn instance(&self) -> &'a Instance {
        self.inst
    }

    pub fn get(&mut self, target: Cell) -> Arc<DistanceOracle> {
        let (inst, bbox) = (self.inst, self.bbox);
        self.oracles
            .entry(target)
            .or_insert_with(|| Arc::new(build_oracle(inst, &bbox, target)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.oracles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.oracles.is_empty()
    }
}

impl Distances for OracleCache<'_> {
    fn dist(&mut self, from: Cell, to: Cell) -> u32 {
        if self.inst.is_obstacle(to) || self.inst.is_obstacle(from) {
            return INFINITY;
        }
        self.get(to).query(from)
    }
}
