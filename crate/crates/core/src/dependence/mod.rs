//! Dependence machinery: exact mixing coefficients for finite Markov chains,
//! the big/small block planner, block sums, and constructive couplings.

pub mod blocking;
pub mod chain;
pub mod coupling;

pub use blocking::{block_sums, plan_blocks, BlockDiagnostics, BlockScheme, BlockSums};
pub use chain::{ChainSpec, FiniteMarkovChain, TauProfile, VarianceGrowth};
pub use coupling::{
    couple_blocks, m_dependent_block_independence, CouplingReport, IndependenceReport,
    MovingWindowSeries,
};
