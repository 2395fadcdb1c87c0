//! Domain types shared by every solver: cells, moves, robots, instances,
//! paths and solutions.

use std::fmt;
use std::ops::{Add, Sub};

use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest coordinate magnitude accepted anywhere in the toolkit.
pub const COORD_LIMIT: i32 = 1_000_000;

/// A lattice point of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Cell {
    pub x: i32,
    pub y: i32,
}

impl Cell {
    #[inline]
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn l1(self, other: Cell) -> u32 {
        self.x.abs_diff(other.x) + self.y.abs_diff(other.y)
    }

    #[inline]
    pub fn neighbors(self) -> [Cell; 4] {
        [
            Cell::new(self.x, self.y + 1),
            Cell::new(self.x + 1, self.y),
            Cell::new(self.x, self.y - 1),
            Cell::new(self.x - 1, self.y),
        ]
    }

    pub fn in_range(self) -> bool {
        self.x.abs() <= COORD_LIMIT && self.y.abs() <= COORD_LIMIT
    }
}

impl Add for Cell {
    type Output = Cell;
    #[inline]
    fn add(self, rhs: Cell) -> Cell {
        Cell::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Cell {
    type Output = Cell;
    #[inline]
    fn sub(self, rhs: Cell) -> Cell {
        Cell::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

impl From<(i32, i32)> for Cell {
    fn from((x, y): (i32, i32)) -> Self {
        Cell::new(x, y)
    }
}

/// One of the five unit motions a robot may perform per time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Move {
    North,
    South,
    East,
    West,
    Wait,
}

impl Move {
    pub const ALL: [Move; 5] = [Move::North, Move::East, Move::South, Move::West, Move::Wait];

    #[inline]
    pub const fn delta(self) -> Cell {
        match self {
            Move::North => Cell::new(0, 1),
            Move::South => Cell::new(0, -1),
            Move::East => Cell::new(1, 0),
            Move::West => Cell::new(-1, 0),
            Move::Wait => Cell::new(0, 0),
        }
    }

    pub const fn opposite(self) -> Move {
        match self {
            Move::North => Move::South,
            Move::South => Move::North,
            Move::East => Move::West,
            Move::West => Move::East,
            Move::Wait => Move::Wait,
        }
    }

    /// The move taking `from` to `to`, if they are at most one step apart.
    pub fn between(from: Cell, to: Cell) -> Option<Move> {
        match (to.x - from.x, to.y - from.y) {
            (0, 1) => Some(Move::North),
            (0, -1) => Some(Move::South),
            (1, 0) => Some(Move::East),
            (-1, 0) => Some(Move::West),
            (0, 0) => Some(Move::Wait),
            _ => None,
        }
    }

    /// Direction letter used in solution files; `None` for waits.
    pub const fn letter(self) -> Option<char> {
        match self {
            Move::North => Some('N'),
            Move::South => Some('S'),
            Move::East => Some('E'),
            Move::West => Some('W'),
            Move::Wait => None,
        }
    }

    pub fn from_letter(c: char) -> Option<Move> {
        match c {
            'N' => Some(Move::North),
            'S' => Some(Move::South),
            'E' => Some(Move::East),
            'W' => Some(Move::West),
            _ => None,
        }
    }
}

#[inline]
pub fn apply_move(c: Cell, mv: Move) -> Cell {
    c + mv.delta()
}

/// A labeled robot with its start and target cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Robot {
    pub id: usize,
    pub start: Cell,
    pub target: Cell,
}

/// Obstacles plus robots. Construction checks every consistency rule, so
/// any `Instance` value in hand is well formed.
#[derive(Debug, Clone)]
pub struct Instance {
    name: String,
    obstacles: Vec<Cell>,
    obstacle_set: FxHashSet<Cell>,
    robots: Vec<Robot>,
}

impl PartialEq for Instance {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.obstacles == other.obstacles && self.robots == other.robots
    }
}

impl Eq for Instance {}

impl Instance {
    /// Builds an instance from start/target pairs; robot ids follow the
    /// order of `pairs`.
    pub fn new(
        name: impl Into<String>,
        obstacles: Vec<Cell>,
        pairs: impl IntoIterator<Item = (Cell, Cell)>,
    ) -> Result<Self> {
        let robots: Vec<Robot> = pairs
            .into_iter()
            .enumerate()
            .map(|(id, (start, target))| Robot { id, start, target })
            .collect();
        if robots.is_empty() {
            return Err(Error::Validation("instance has no robots".into()));
        }
        let mut obstacle_set = FxHashSet::default();
        for (i, &o) in obstacles.iter().enumerate() {
            if !o.in_range() {
                return Err(Error::Validation(format!("obstacle {i} at {o} is out of coordinate range")));
            }
            if !obstacle_set.insert(o) {
                return Err(Error::Validation(format!("obstacle {i} at {o} is listed twice")));
            }
        }
        let mut starts = FxHashSet::default();
        let mut targets = FxHashSet::default();
        for r in &robots {
            let i = r.id;
            if !r.start.in_range() || !r.target.in_range() {
                return Err(Error::Validation(format!("robot {i} lies outside the coordinate range")));
            }
            if obstacle_set.contains(&r.start) {
                return Err(Error::Validation(format!("start {i} at {} is an obstacle", r.start)));
            }
            if obstacle_set.contains(&r.target) {
                return Err(Error::Validation(format!("target {i} at {} is an obstacle", r.target)));
            }
            if !starts.insert(r.start) {
                return Err(Error::Validation(format!("duplicate start at index {i} ({})", r.start)));
            }
            if !targets.insert(r.target) {
                return Err(Error::Validation(format!("duplicate target at index {i} ({})", r.target)));
            }
        }
        Ok(Self { name: name.into(), obstacles, obstacle_set, robots })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn obstacles(&self) -> &[Cell] {
        &self.obstacles
    }

    #[inline]
    pub fn is_obstacle(&self, c: Cell) -> bool {
        self.obstacle_set.contains(&c)
    }

    pub fn robots(&self) -> &[Robot] {
        &self.robots
    }

    pub fn robot(&self, id: usize) -> &Robot {
        &self.robots[id]
    }

    pub fn len(&self) -> usize {
        self.robots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.robots.is_empty()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

/// Dense per-time-step positions of one robot.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Path {
    pub positions: Vec<Cell>,
}

impl Path {
    pub fn new(positions: Vec<Cell>) -> Self {
        Self { positions }
    }

    pub fn stationary(c: Cell, makespan: usize) -> Self {
        Self { positions: vec![c; makespan + 1] }
    }

    /// Number of steps (positions minus one).
    pub fn len(&self) -> usize {
        self.positions.len().saturating_sub(1)
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn first(&self) -> Cell {
        self.positions[0]
    }

    pub fn last(&self) -> Cell {
        *self.positions.last().expect("path has at least one position")
    }

    /// Position at time `t`, holding the final cell after the path ends.
    #[inline]
    pub fn at(&self, t: usize) -> Cell {
        self.positions[t.min(self.positions.len() - 1)]
    }

    /// True when every consecutive pair differs by a unit move or a wait.
    pub fn is_connected(&self) -> bool {
        self.positions.windows(2).all(|w| w[0].l1(w[1]) <= 1)
    }

    /// Time of the last non-wait move (0 for a stationary path).
    pub fn arrival(&self) -> usize {
        let mut t = self.positions.len().saturating_sub(1);
        while t > 0 && self.positions[t] == self.positions[t - 1] {
            t -= 1;
        }
        t
    }

    /// Drops trailing waits.
    pub fn trimmed(mut self) -> Self {
        let a = self.arrival();
        self.positions.truncate(a + 1);
        self
    }

    pub fn padded(mut self, makespan: usize) -> Self {
        let last = self.last();
        if self.positions.len() < makespan + 1 {
            self.positions.resize(makespan + 1, last);
        }
        self
    }

    pub fn moves(&self) -> impl Iterator<Item = Move> + '_ {
        self.positions
            .windows(2)
            .map(|w| Move::between(w[0], w[1]).expect("connected path"))
    }

    pub fn reversed(&self) -> Self {
        let mut positions = self.positions.clone();
        positions.reverse();
        Self { positions }
    }
}

/// One path per robot, all of the same length.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub instance_name: String,
    pub paths: Vec<Path>,
}

impl Solution {
    /// Pads ragged paths to a common length.
    pub fn from_paths(instance_name: impl Into<String>, paths: Vec<Path>) -> Self {
        let m = paths.iter().map(Path::len).max().unwrap_or(0);
        Self {
            instance_name: instance_name.into(),
            paths: paths.into_iter().map(|p| p.padded(m)).collect(),
        }
    }

    pub fn makespan(&self) -> usize {
        self.paths.first().map(Path::len).unwrap_or(0)
    }

    /// Robots whose position at the final step differs from the step before.
    pub fn movers_at_end(&self) -> Vec<usize> {
        let m = self.makespan();
        if m == 0 {
            return Vec::new();
        }
        self.paths
            .iter()
            .enumerate()
            .filter(|(_, p)| p.positions[m] != p.positions[m - 1])
            .map(|(i, _)| i)
            .collect()
    }

    /// Removes trailing time steps in which no robot moves.
    pub fn compact(mut self) -> Self {
        let m = self.paths.iter().map(Path::arrival).max().unwrap_or(0);
        for p in &mut self.paths {
            p.positions.truncate(m + 1);
        }
        self
    }
}

/// Extends every path by repeating its final cell until it has `makespan` steps.
pub fn pad_solution(s: &Solution, makespan: usize) -> Result<Solution> {
    let m = s.makespan();
    if makespan < m {
        return Err(Error::InvalidArgument(format!(
            "cannot pad a makespan-{m} solution down to {makespan}"
        )));
    }
    Ok(Solution {
        instance_name: s.instance_name.clone(),
        paths: s.paths.iter().cloned().map(|p| p.padded(makespan)).collect(),
    })
}

/// Axis-aligned inclusive rectangle of cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub min: Cell,
    pub max: Cell,
}

impl Rect {
    pub fn new(min: Cell, max: Cell) -> Self {
        Self { min, max }
    }

    /// Smallest rectangle containing every cell of the iterator.
    pub fn enclosing(cells: impl IntoIterator<Item = Cell>) -> Option<Self> {
        let mut it = cells.into_iter();
        let first = it.next()?;
        let mut r = Rect::new(first, first);
        for c in it {
            r = r.including(c);
        }
        Some(r)
    }

    pub fn including(self, c: Cell) -> Self {
        Rect::new(
            Cell::new(self.min.x.min(c.x), self.min.y.min(c.y)),
            Cell::new(self.max.x.max(c.x), self.max.y.max(c.y)),
        )
    }

    pub fn union(self, o: Rect) -> Self {
        self.including(o.min).including(o.max)
    }

    pub fn expanded(self, by: i32) -> Self {
        Rect::new(
            Cell::new(self.min.x - by, self.min.y - by),
            Cell::new(self.max.x + by, self.max.y + by),
        )
    }

    #[inline]
    pub fn width(&self) -> usize {
        (self.max.x - self.min.x + 1) as usize
    }

    #[inline]
    pub fn height(&self) -> usize {
        (self.max.y - self.min.y + 1) as usize
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    #[inline]
    pub fn contains(&self, c: Cell) -> bool {
        c.x >= self.min.x && c.x <= self.max.x && c.y >= self.min.y && c.y <= self.max.y
    }

    #[inline]
    pub fn contains_strictly(&self, c: Cell) -> bool {
        c.x > self.min.x && c.x < self.max.x && c.y > self.min.y && c.y < self.max.y
    }

    /// Row-major index of a contained cell.
    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        debug_assert!(self.contains(c));
        (c.y - self.min.y) as usize * self.width() + (c.x - self.min.x) as usize
    }

    #[inline]
    pub fn cell_at(&self, idx: usize) -> Cell {
        let w = self.width();
        Cell::new(self.min.x + (idx % w) as i32, self.min.y + (idx / w) as i32)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        (self.min.y..=self.max.y).flat_map(move |y| (self.min.x..=self.max.x).map(move |x| Cell::new(x, y)))
    }

    /// Nearest contained cell (coordinate-wise clamp).
    #[inline]
    pub fn clamp(&self, c: Cell) -> Cell {
        Cell::new(c.x.clamp(self.min.x, self.max.x), c.y.clamp(self.min.y, self.max.y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_move_examples() {
        assert_eq!(apply_move(Cell::new(0, 0), Move::North), Cell::new(0, 1));
        assert_eq!(apply_move(Cell::new(2, 3), Move::West), Cell::new(1, 3));
        assert_eq!(apply_move(Cell::new(5, 5), Move::Wait), Cell::new(5, 5));
    }

    #[test]
    fn opposite_moves_cancel() {
        for mv in [Move::North, Move::South, Move::East, Move::West] {
            let c = Cell::new(-4, 9);
            assert_eq!(apply_move(apply_move(c, mv), mv.opposite()), c);
        }
    }

    #[test]
    fn move_deltas_are_unit() {
        assert_eq!(Move::ALL.len(), 5);
        for mv in Move::ALL {
            assert!(mv.delta().l1(Cell::default()) <= 1);
            assert_eq!(Move::between(Cell::new(1, 1), apply_move(Cell::new(1, 1), mv)), Some(mv));
        }
    }

    fn sol(paths: Vec<Vec<(i32, i32)>>) -> Solution {
        Solution {
            instance_name: "t".into(),
            paths: paths
                .into_iter()
                .map(|p| Path::new(p.into_iter().map(Cell::from).collect()))
                .collect(),
        }
    }

    #[test]
    fn pad_identity_and_repeat() {
        let s = sol(vec![vec![(0, 0), (1, 0), (1, 1), (1, 1)]]);
        assert_eq!(pad_solution(&s, 3).unwrap(), s);
        let s = sol(vec![vec![(0, 0), (1, 0)]]);
        let p = pad_solution(&s, 3).unwrap();
        assert_eq!(p, sol(vec![vec![(0, 0), (1, 0), (1, 0), (1, 0)]]));
    }

    #[test]
    fn pad_below_makespan_rejected() {
        let s = sol(vec![vec![(0, 0); 5]]);
        assert!(matches!(pad_solution(&s, 2), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn instance_rejects_inconsistencies() {
        let c = Cell::new;
        assert!(Instance::new("a", vec![], [(c(0, 0), c(1, 0)), (c(0, 0), c(2, 0))]).is_err());
        assert!(Instance::new("a", vec![], [(c(0, 0), c(1, 0)), (c(3, 0), c(1, 0))]).is_err());
        assert!(Instance::new("a", vec![c(1, 0)], [(c(0, 0), c(1, 0))]).is_err());
        assert!(Instance::new("a", vec![], Vec::<(Cell, Cell)>::new()).is_err());
        assert!(Instance::new("a", vec![c(5, 5)], [(c(0, 0), c(1, 0))]).is_ok());
    }

    #[test]
    fn arrival_and_compact() {
        let s = sol(vec![vec![(0, 0), (1, 0), (1, 0)], vec![(4, 4), (4, 4), (4, 4)]]);
        assert_eq!(s.paths[0].arrival(), 1);
        assert_eq!(s.clone().compact().makespan(), 1);
        assert_eq!(s.movers_at_end(), Vec::<usize>::new());
    }

    #[test]
    fn rect_index_roundtrip() {
        let r = Rect::new(Cell::new(-3, 2), Cell::new(4, 9));
        for (i, c) in r.cells().enumerate() {
            assert_eq!(r.index(c), i);
            assert_eq!(r.cell_at(i), c);
        }
    }
}
