//! Incremental neural architecture search.
//!
//! Architectures are labeled DAG cells; a search moves from an architecture
//! to one of its neighbors (vertex/edge additions and removals, label
//! changes) or stops. The crate provides the search spaces, canonical
//! hashing, neighborhood generation, performance oracles, the search MDP,
//! baseline agents, a transformer-based dueling Q-network with its training
//! loop, and the evaluation statistics.

pub mod agents;
pub mod arch;
pub mod env;
pub mod eval;
pub mod graph;
pub mod neighborhood;
pub mod oracle;
pub mod par;
pub mod space;
pub mod training;

pub use arch::{Architecture, Cell};
pub use graph::{canonical_hash, is_isomorphic_bruteforce, CellGraph, Digest, GraphError, Label, Violation};
pub use space::{SpaceError, SpaceSpec};
