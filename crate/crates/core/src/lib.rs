//! Reinforcement-learning testbed for topological control of small power
//! grids: a masked discrete action space over busbar assignments, a DC
//! power flow with loss correction, three observation encodings, and a
//! PPO trainer with its own reverse-mode autodiff.

pub mod action;
pub mod chronics;
pub mod env;
pub mod episode;
pub mod fixtures;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod obs;
pub mod powerflow;
pub mod ppo;
