//! Coordinated motion planning for labeled unit-square robots on the
//! integer grid.
//!
//! Initial solutions come from a greedy k-step planner ([`stepplan`]) or
//! from storage-network strategies ([`storage`]) driven by space-time A*
//! ([`astar`]). The [`optimize`] module then lowers the makespan. Every
//! output is checked by the independent validator in [`validate`].

pub mod astar;
pub mod distance;
pub mod error;
pub mod io;
pub mod matching;
pub mod model;
pub mod optimize;
pub mod stepplan;
pub mod storage;
pub mod transform;
pub mod validate;

pub use error::{Error, Result};
pub use model::{apply_move, pad_solution, Cell, Instance, Move, Path, Rect, Robot, Solution};
