//! Synthesis of proactive-assistance joint plans for a robot-human pair under
//! the human's partial observability.
//!
//! The library is organized around five pieces:
//! - [`model`]: the planning formalism (states, beliefs, sensor model, belief update)
//! - [`pddl`]: parsers for the dual-version domain files, problem files and
//!   sensor files, plus grounding into a [`model::MaCoppProblem`]
//! - [`conformant`]: the human's decision algorithm, a cost-optimal
//!   belief-space planner
//! - [`mcts`]: utility-tree construction and joint-plan extraction
//! - [`harness`]: runs, metrics, machine-readable reports and the brute-force
//!   verification oracle

pub mod conformant;
pub mod harness;
pub mod mcts;
pub mod model;
pub mod pddl;
