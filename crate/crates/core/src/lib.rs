//! Bayesian inference of effective population size from heterochronous
//! sequence data under the Tajima coalescent and the infinite sites model.
//!
//! Module order follows the data flow: genealogies and their prior, the
//! data model, allocations and the likelihood, then the sampler, simulator,
//! counting and diagnostics built on top.

pub mod allocation;
pub mod coalescent_prior;
pub mod counting;
pub mod demographic;
pub mod diagnostics;
pub mod genealogy;
pub mod ism_data;
pub mod likelihood;
pub mod mcmc;
pub mod simulator;

pub use genealogy::{CoalescentEvent, Node, RankedGenealogy, SamplingSchedule};
