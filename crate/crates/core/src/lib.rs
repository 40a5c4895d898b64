//! Compositional models as string diagrams with numeric semantics, their
//! description-length accounting, and compressive refinement search.

pub mod syntax;
pub mod semantics;
pub mod interpret;
pub mod mdl;
pub mod refine;
pub mod zoo;
mod linalg;
