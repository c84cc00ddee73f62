//! Forelem loops over tuple reservoirs, the transformations that derive
//! sparse data structures from them, concretization to executable variants,
//! and the search and coverage tooling around those variants.

pub mod ir;
pub mod transform;
pub mod exec;
pub mod concretize;
pub mod ingest;
pub mod search;
