//! Desk-scale study of reward confusion in offline preference learning.
//!
//! Grid-world tasks plant spurious correlations (a ripple sensor, biased goal
//! positions, biased object colors) into otherwise simple goal-reaching
//! problems. Scripted policies of several skill levels generate fragment
//! datasets; a Bayesian reward network is trained from pairwise preferences;
//! and planning against the learned reward measures how often the learned
//! signal latches onto the confound instead of the true goal.
//!
//! The mitigation under study maintains a sorted chain of ranked fragments,
//! inserts new fragments with model-guided search, derives the transitive
//! preferences the ranking implies, and picks insertion candidates by
//! expected information gain.

pub mod acquisition;
pub mod chain;
pub mod config;
pub mod env;
pub mod eventlog;
pub mod graph;
pub mod harness;
pub mod oracle;
pub mod planner;
pub mod reward;
pub mod rollouts;
pub mod seeding;
pub mod stats;
