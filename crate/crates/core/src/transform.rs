//! Problem symmetries: quarter-turn rotations and start/target reversal.
//! Each maps feasible solutions to feasible solutions of the same makespan.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Cell, Instance, Path, Solution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symmetry {
    Rot90,
    Rot180,
    Rot270,
    /// Swap starts with targets and run every path backwards in time.
    Reverse,
}

impl Symmetry {
    pub const ALL: [Symmetry; 4] = [Symmetry::Rot90, Symmetry::Rot180, Symmetry::Rot270, Symmetry::Reverse];

    pub fn inverse(self) -> Symmetry {
        match self {
            Symmetry::Rot90 => Symmetry::Rot270,
            Symmetry::Rot270 => Symmetry::Rot90,
            other => other,
        }
    }

    fn map_cell(self, c: Cell) -> Cell {
        match self {
            Symmetry::Rot90 => Cell::new(-c.y, c.x),
            Symmetry::Rot180 => Cell::new(-c.x, -c.y),
            Symmetry::Rot270 => Cell::new(c.y, -c.x),
            Symmetry::Reverse => c,
        }
    }

    pub fn apply_instance(self, inst: &Instance) -> Instance {
        let obstacles = inst.obstacles().iter().map(|&o| self.map_cell(o)).collect();
        let pairs: Vec<(Cell, Cell)> = inst
            .robots()
            .iter()
            .map(|r| match self {
                Symmetry::Reverse => (r.target, r.start),
                _ => (self.map_cell(r.start), self.map_cell(r.target)),
            })
            .collect();
        Instance::new(inst.name(), obstacles, pairs).expect("symmetries preserve instance validity")
    }

    pub fn apply_solution(self, s: &Solution) -> Solution {
        let paths = s
            .paths
            .iter()
            .map(|p| match self {
                Symmetry::Reverse => p.reversed(),
                _ => Path::new(p.positions.iter().map(|&c| self.map_cell(c)).collect()),
            })
            .collect();
        Solution { instance_name: s.instance_name.clone(), paths }
    }
}

impl fmt::Display for Symmetry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Symmetry::Rot90 => "rot90",
            Symmetry::Rot180 => "rot180",
            Symmetry::Rot270 => "rot270",
            Symmetry::Reverse => "reverse",
        })
    }
}

impl FromStr for Symmetry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rot90" => Ok(Symmetry::Rot90),
            "rot180" => Ok(Symmetry::Rot180),
            "rot270" => Ok(Symmetry::Rot270),
            "reverse" => Ok(Symmetry::Reverse),
            other => Err(Error::InvalidArgument(format!("unknown transform {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::generate_instance;

    #[test]
    fn four_quarter_turns_are_identity() {
        let inst = generate_instance(12, 8, 0.1, 3).unwrap();
        let mut cur = inst.clone();
        for _ in 0..4 {
            cur = Symmetry::Rot90.apply_instance(&cur);
        }
        assert_eq!(cur, inst);
        let r180 = Symmetry::Rot180.apply_instance(&inst);
        assert_eq!(Symmetry::Rot90.apply_instance(&Symmetry::Rot90.apply_instance(&inst)), r180);
    }

    #[test]
    fn reverse_is_an_involution() {
        let inst = generate_instance(12, 8, 0.1, 3).unwrap();
        let twice = Symmetry::Reverse.apply_instance(&Symmetry::Reverse.apply_instance(&inst));
        assert_eq!(twice, inst);
    }

    #[test]
    fn parse_roundtrip() {
        for s in Symmetry::ALL {
            assert_eq!(s.to_string().parse::<Symmetry>().unwrap(), s);
        }
        assert!("flip".parse::<Symmetry>().is_err());
    }
}
