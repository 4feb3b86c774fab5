//! Teacher-student curriculum learning for task-oriented dialogue policies.
//!
//! A student DQN learns a movie-booking dialogue policy against an
//! agenda-based user simulator; an optional teacher DQN picks which user
//! goal the student trains on next, gated by a difficulty curriculum.

pub mod curriculum;
pub mod domain;
pub mod error;
pub mod neural;
pub mod orchestrator;
pub mod replay;
pub mod student;
pub mod teacher;
pub mod user_sim;

pub use error::{Error, Result};
