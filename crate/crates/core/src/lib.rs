//! Approximate model-based shielding for tabular MDPs.
//!
//! The crate learns a maximum-likelihood dynamics model from interaction,
//! estimates bounded safety of a task policy by sampling traces through the
//! learned model, and overrides proposed actions with a backup policy when
//! the estimate falls short. An exact dynamic-programming checker serves as
//! the oracle for every estimate.

pub mod agents;
pub mod bounds;
pub mod formula;
pub mod gridworld;
pub mod learner;
pub mod markov;
pub mod pctl;
pub mod rng;
pub mod shield;
pub mod trainer;

pub use formula::{parse_formula, Atom, LabelSet, SafetyFormula};
pub use markov::{ActionId, LabeledMdp, StateId, TabularPolicy, TransitionSystem};
