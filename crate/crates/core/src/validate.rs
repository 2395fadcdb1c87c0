//! Independent feasibility checker and solution metrics.
//!
//! The validator never looks at solver state; it only reads the instance
//! and the dense paths, so every other module is judged by it.

use std::fmt;

use rustc_hash::FxHashMap;
use serde::Serialize;
use smallvec::SmallVec;

use crate::distance::{Distances, INFINITY};
use crate::error::{Error, Result};
use crate::model::{Cell, Instance, Solution};

/// The five feasibility rules a solution must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Constraint {
    /// Paths begin at the start and end at the target.
    Endpoints = 1,
    /// Consecutive positions are at most one unit apart.
    StepLength = 2,
    /// No path enters an obstacle.
    Obstacle = 3,
    /// No two robots share a cell at the same time.
    Collision = 4,
    /// A robot entering a cell vacated in the same step must move with the
    /// same delta as the robot that left it.
    Overlap = 5,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub constraint: Constraint,
    pub robots: Vec<usize>,
    pub time: usize,
    pub cell: Cell,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "constraint {} ({:?}) robots {:?} at t={} cell {}",
            self.constraint as u8, self.constraint, self.robots, self.time, self.cell
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub feasible: bool,
    pub violations: Vec<Violation>,
    pub makespan: usize,
    pub distance_sum: usize,
}

pub fn validate(inst: &Instance, s: &Solution) -> Result<ValidationReport> {
    let n = inst.len();
    if s.paths.len() != n {
        return Err(Error::Structural(format!("{} paths for {n} robots", s.paths.len())));
    }
    let len = s.paths[0].positions.len();
    if len == 0 {
        return Err(Error::Structural("path 0 is empty".into()));
    }
    if let Some(i) = s.paths.iter().position(|p| p.positions.len() != len) {
        return Err(Error::Structural(format!(
            "path {i} has {} positions, path 0 has {len}",
            s.paths[i].positions.len()
        )));
    }
    let m = len - 1;
    let mut violations = Vec::new();
    let mut push = |constraint, robots: Vec<usize>, time, cell| {
        violations.push(Violation { constraint, robots, time, cell })
    };

    for (i, (r, p)) in inst.robots().iter().zip(&s.paths).enumerate() {
        if p.positions[0] != r.start {
            push(Constraint::Endpoints, vec![i], 0, p.positions[0]);
        }
        if p.positions[m] != r.target {
            push(Constraint::Endpoints, vec![i], m, p.positions[m]);
        }
        for (t, &c) in p.positions.iter().enumerate() {
            if inst.is_obstacle(c) {
                push(Constraint::Obstacle, vec![i], t, c);
            }
            if t > 0 && p.positions[t - 1].l1(c) > 1 {
                push(Constraint::StepLength, vec![i], t, c);
            }
        }
    }

    // Every robot on a cell, so stacked robots are all checked for overlap.
    let mut prev: FxHashMap<Cell, SmallVec<[usize; 1]>> = FxHashMap::default();
    let mut cur: FxHashMap<Cell, SmallVec<[usize; 1]>> = FxHashMap::default();
    for t in 0..=m {
        cur.clear();
        for (i, p) in s.paths.iter().enumerate() {
            let c = p.positions[t];
            let here = cur.entry(c).or_default();
            if let Some(&j) = here.first() {
                push(Constraint::Collision, vec![j, i], t, c);
            }
            here.push(i);
        }
        if t > 0 {
            // Every robot i is checked against whoever stood on its new cell
            // one step earlier; iterating over all i covers both orders.
            for (i, p) in s.paths.iter().enumerate() {
                let c = p.positions[t];
                let di = c - p.positions[t - 1];
                for &j in prev.get(&c).into_iter().flatten() {
                    if j == i {
                        continue;
                    }
                    let q = &s.paths[j].positions;
                    if di != q[t] - q[t - 1] {
                        push(Constraint::Overlap, vec![i, j], t, c);
                    }
                }
            }
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    Ok(ValidationReport {
        feasible: violations.is_empty(),
        violations,
        makespan: m,
        distance_sum: distance_sum(s),
    })
}

/// Number of non-wait moves over all robots.
pub fn distance_sum(s: &Solution) -> usize {
    s.paths
        .iter()
        .map(|p| p.positions.windows(2).filter(|w| w[0] != w[1]).count())
        .sum()
}

/// Largest obstacle-avoiding start-to-target distance.
pub fn lower_bound(inst: &Instance, dist: &mut impl Distances) -> Result<usize> {
    let mut best = 0;
    for r in inst.robots() {
        let d = dist.dist(r.start, r.target);
        if d == INFINITY {
            return Err(Error::Infeasible(format!("robot {} cannot reach its target", r.id)));
        }
        best = best.max(d as usize);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::OracleCache;
    use crate::model::Path;

    fn c(x: i32, y: i32) -> Cell {
        Cell::new(x, y)
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
    fn identity_solution_is_feasible() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(0, 0)), (c(1, 0), c(1, 0))]).unwrap();
        let r = validate(&inst, &sol(vec![vec![(0, 0)], vec![(1, 0)]])).unwrap();
        assert!(r.feasible);
        assert_eq!(r.makespan, 0);
    }

    #[test]
    fn swap_is_an_overlap_violation() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(1, 0)), (c(1, 0), c(0, 0))]).unwrap();
        let r = validate(&inst, &sol(vec![vec![(0, 0), (1, 0)], vec![(1, 0), (0, 0)]])).unwrap();
        assert!(!r.feasible);
        assert!(r.violations.iter().all(|v| v.constraint == Constraint::Overlap));
        assert_eq!(r.violations.len(), 2);
    }

    #[test]
    fn train_move_is_feasible() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(1, 0)), (c(1, 0), c(2, 0))]).unwrap();
        let r = validate(&inst, &sol(vec![vec![(0, 0), (1, 0)], vec![(1, 0), (2, 0)]])).unwrap();
        assert!(r.feasible, "{:?}", r.violations);
    }

    #[test]
    fn orthogonal_follow_is_rejected() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(1, 0)), (c(1, 0), c(1, 1))]).unwrap();
        let r = validate(&inst, &sol(vec![vec![(0, 0), (1, 0)], vec![(1, 0), (1, 1)]])).unwrap();
        assert_eq!(r.violations.len(), 1);
        assert_eq!(r.violations[0].constraint, Constraint::Overlap);
    }

    #[test]
    fn each_basic_constraint_is_reported() {
        let inst = Instance::new("t", vec![c(1, 1)], [(c(0, 0), c(2, 0)), (c(0, 2), c(0, 3))]).unwrap();
        let r = validate(&inst, &sol(vec![vec![(0, 0), (2, 0)], vec![(0, 2), (1, 1)]])).unwrap();
        let kinds: Vec<_> = r.violations.iter().map(|v| v.constraint).collect();
        assert!(kinds.contains(&Constraint::StepLength));
        assert!(kinds.contains(&Constraint::Obstacle));
        assert!(kinds.contains(&Constraint::Endpoints));
        let r = validate(&inst, &sol(vec![vec![(0, 0), (0, 1), (1, 1)], vec![(0, 2), (0, 1), (0, 3)]])).unwrap();
        assert!(r.violations.iter().any(|v| v.constraint == Constraint::Collision));
    }

    #[test]
    fn structural_errors() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(1, 0)), (c(5, 0), c(5, 0))]).unwrap();
        assert!(matches!(
            validate(&inst, &sol(vec![vec![(0, 0), (1, 0)], vec![(5, 0)]])),
            Err(Error::Structural(_))
        ));
        assert!(matches!(validate(&inst, &sol(vec![vec![(0, 0)]])), Err(Error::Structural(_))));
    }

    #[test]
    fn lower_bound_examples() {
        let inst = Instance::new("t", vec![], [(c(0, 0), c(3, 4))]).unwrap();
        assert_eq!(lower_bound(&inst, &mut OracleCache::new(&inst)).unwrap(), 7);
        let inst = Instance::new("t", vec![], [(c(0, 0), c(3, 4)), (c(10, 0), c(10, 12))]).unwrap();
        assert_eq!(lower_bound(&inst, &mut OracleCache::new(&inst)).unwrap(), 12);
        let wall = vec![c(1, -1), c(1, 0), c(1, 1)];
        let inst = Instance::new("t", wall, [(c(0, 0), c(2, 0))]).unwrap();
        assert_eq!(lower_bound(&inst, &mut OracleCache::new(&inst)).unwrap(), 6);
    }

    #[test]
    fn distance_sum_counts_moves() {
        assert_eq!(distance_sum(&sol(vec![vec![(0, 0); 4]])), 0);
        assert_eq!(distance_sum(&sol(vec![vec![(0, 0), (1, 0), (2, 0), (3, 0), (3, 0), (3, 0)]])), 3);
    }
}
