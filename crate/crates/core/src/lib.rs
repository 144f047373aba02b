//! Swarm formation simulator wrapped by a training-free runtime adaptation
//! loop: a rule-table meta-policy picks a logical primitive, each primitive's
//! behavior is a composable symbolic-program pipeline, and degraded formation
//! quality triggers candidate pipeline edits that are validated on shadow
//! clones of the world before being hot-swapped in. Every adaptation episode
//! is appended to a provenance log that later episodes retrieve by context
//! similarity.

pub mod adaptation;
pub mod control;
pub mod geom;
pub mod harness;
pub mod metaagent;
pub mod moderator;
pub mod programs;
pub mod provenance;
pub mod rng;
pub mod scoring;
pub mod world;
