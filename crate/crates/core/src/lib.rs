//! Program induction for bandit decision strategies.
//!
//! A strategy is a four-program tuple over a typed expression language:
//! an initial memory vector, an initial action distribution, a memory
//! update rule, and a policy. Strategies are scored by a posterior that
//! trades task value against description length under a PCFG prior, and
//! explored with Metropolis-Hastings over syntax trees.

pub mod analysis;
pub mod cli;
pub mod dsl;
pub mod interp;
pub mod mcmc;
pub mod seeds;
pub mod tasks;
pub mod value;
