//! JSON interchange for instances and solutions, and a seeded instance
//! generator.
//!
//! Solution files store one record per time step mapping robot indices to
//! direction letters (`N` = +y, `E` = +x, `S` = -y, `W` = -x). Robots that
//! wait are omitted from the record.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Cell, Instance, Move, Path, Rect, Solution};

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    name: String,
    obstacles: Vec<[i32; 2]>,
    starts: Vec<[i32; 2]>,
    targets: Vec<[i32; 2]>,
}

fn to_cells(v: &[[i32; 2]]) -> Vec<Cell> {
    v.iter().map(|&[x, y]| Cell::new(x, y)).collect()
}

fn to_pairs(v: impl IntoIterator<Item = Cell>) -> Vec<[i32; 2]> {
    v.into_iter().map(|c| [c.x, c.y]).collect()
}

pub fn read_instance(bytes: &[u8]) -> Result<Instance> {
    let doc: InstanceDoc = serde_json::from_slice(bytes)?;
    if doc.starts.len() != doc.targets.len() {
        return Err(Error::Validation(format!(
            "{} starts but {} targets (first unmatched index {})",
            doc.starts.len(),
            doc.targets.len(),
            doc.starts.len().min(doc.targets.len())
        )));
    }
    let starts = to_cells(&doc.starts);
    let targets = to_cells(&doc.targets);
    Instance::new(doc.name, to_cells(&doc.obstacles), starts.into_iter().zip(targets))
}

pub fn write_instance(inst: &Instance) -> Vec<u8> {
    let doc = InstanceDoc {
        name: inst.name().to_string(),
        obstacles: to_pairs(inst.obstacles().iter().copied()),
        starts: to_pairs(inst.robots().iter().map(|r| r.start)),
        targets: to_pairs(inst.robots().iter().map(|r| r.target)),
    };
    serde_json::to_vec(&doc).expect("instance serializes")
}

/// Bookkeeping stored next to the steps of a solution file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub makespan: usize,
    pub distance_sum: usize,
    #[serde(default)]
    pub solver: String,
    /// Unix seconds; 0 when unknown.
    #[serde(default)]
    pub timestamp: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolutionDoc {
    instance: String,
    steps: Vec<BTreeMap<String, String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<SolutionMeta>,
}

/// Counts non-wait moves; the step records carry exactly these.
fn move_count(s: &Solution) -> usize {
    s.paths
        .iter()
        .map(|p| p.positions.windows(2).filter(|w| w[0] != w[1]).count())
        .sum()
}

/// Serializes a solution with a `meta` block built from `solver` and
/// `timestamp`. Paths must be connected.
pub fn write_solution(s: &Solution, solver: &str, timestamp: u64) -> Vec<u8> {
    let m = s.makespan();
    let mut steps = vec![BTreeMap::new(); m];
    for (i, p) in s.paths.iter().enumerate() {
        for (t, mv) in p.moves().enumerate() {
            if let Some(letter) = mv.letter() {
                steps[t].insert(i.to_string(), letter.to_string());
            }
        }
    }
    let doc = SolutionDoc {
        instance: s.instance_name.clone(),
        steps,
        meta: Some(SolutionMeta {
            makespan: m,
            distance_sum: move_count(s),
            solver: solver.to_string(),
            timestamp,
        }),
    };
    serde_json::to_vec(&doc).expect("solution serializes")
}

/// Parses a solution file against the instance whose starts anchor the paths.
pub fn read_solution(bytes: &[u8], inst: &Instance) -> Result<Solution> {
    read_solution_with_meta(bytes, inst).map(|(s, _)| s)
}

pub fn read_solution_with_meta(bytes: &[u8], inst: &Instance) -> Result<(Solution, Option<SolutionMeta>)> {
    let doc: SolutionDoc = serde_json::from_slice(bytes)?;
    let n = inst.len();
    let m = doc.steps.len();
    let mut moves = vec![vec![Move::Wait; m]; n];
    for (t, record) in doc.steps.iter().enumerate() {
        for (key, letter) in record {
            let idx: usize = key
                .parse()
                .map_err(|_| Error::Parse(format!("step {t}: robot key {key:?} is not an index")))?;
            if idx >= n {
                return Err(Error::Parse(format!("step {t}: robot index {idx} out of range (n = {n})")));
            }
            let mut chars = letter.chars();
            let mv = match (chars.next(), chars.next()) {
                (Some(c), None) => Move::from_letter(c),
                _ => None,
            }
            .ok_or_else(|| Error::Parse(format!("step {t}: unknown direction {letter:?} for robot {idx}")))?;
            moves[idx][t] = mv;
        }
    }
    let paths = inst
        .robots()
        .iter()
        .zip(moves)
        .map(|(r, mvs)| {
            let mut positions = Vec::with_capacity(m + 1);
            let mut c = r.start;
            positions.push(c);
            for mv in mvs {
                c = c + mv.delta();
                positions.push(c);
            }
            Path::new(positions)
        })
        .collect();
    Ok((Solution { instance_name: doc.instance, paths }, doc.meta))
}

/// Random instance inside `[0, w)²`. Robots are only placed on cells
/// connected to the outside of the square, so every instance is solvable.
pub fn generate_instance(n: usize, w: usize, density: f64, seed: u64) -> Result<Instance> {
    if !(0.0..1.0).contains(&density) {
        return Err(Error::InvalidArgument(format!("density {density} outside [0, 1)")));
    }
    if w == 0 || w > 10_000 {
        return Err(Error::InvalidArgument(format!("side {w} out of range")));
    }
    let cells = w * w;
    let n_obs = (density * cells as f64).ceil() as usize;
    if n == 0 || n + n_obs > cells {
        return Err(Error::Capacity(format!(
            "{n} robots and {n_obs} obstacles do not fit in {cells} cells"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let square = Rect::new(Cell::new(0, 0), Cell::new(w as i32 - 1, w as i32 - 1));
    let all: Vec<Cell> = square.cells().collect();

    let mut shuffled = all.clone();
    shuffled.shuffle(&mut rng);
    let mut obstacles: Vec<Cell> = shuffled[..n_obs].to_vec();
    obstacles.sort();
    let obstacle_set: FxHashSet<Cell> = obstacles.iter().copied().collect();

    // Cells reachable from the ring just outside the square.
    let outer = square.expanded(1);
    let mut seen = vec![false; outer.area()];
    let mut queue = VecDeque::new();
    for c in outer.cells().filter(|c| !square.contains(*c)) {
        seen[outer.index(c)] = true;
        queue.push_back(c);
    }
    while let Some(c) = queue.pop_front() {
        for nb in c.neighbors() {
            if outer.contains(nb) && !seen[outer.index(nb)] && !obstacle_set.contains(&nb) {
                seen[outer.index(nb)] = true;
                queue.push_back(nb);
            }
        }
    }
    let free: Vec<Cell> = all.iter().copied().filter(|c| seen[outer.index(*c)]).collect();
    if free.len() < n {
        return Err(Error::Capacity(format!(
            "only {} reachable free cells for {n} robots",
            free.len()
        )));
    }
    let starts: Vec<Cell> = free.choose_multiple(&mut rng, n).copied().collect();
    let targets: Vec<Cell> = free.choose_multiple(&mut rng, n).copied().collect();
    let name = format!("gen_n{n}_w{w}_d{}_s{seed}", (density * 100.0).round() as u32);
    Instance::new(name, obstacles, starts.into_iter().zip(targets))
}
