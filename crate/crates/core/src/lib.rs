//! Goal-oriented dialogue agents for a partially observed gridsworld.
//!
//! The agent never sees the grid. It talks to a simulated user that answers
//! questions about the scene and carries out movement commands, and it is
//! trained with double DQN to reach the goal in as few turns as possible.

pub mod agent;
pub mod dialogue;
pub mod evalsuite;
pub mod grid;
pub mod neural;
pub mod scenegen;
pub mod trainer;

mod fsutil;
pub use fsutil::{write_atomic, AtomicFile};
