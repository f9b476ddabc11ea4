//! Joint prediction of moral foundations and moral roles with weighted
//! first-order rules, MAP inference over hinge-loss potentials, and
//! structured learning.

pub mod analysis;
pub mod dsl;
pub mod error;
pub mod exec;
pub mod features;
pub mod grounding;
pub mod inference;
pub mod kb;
pub mod learning;
pub mod lexicon;
pub mod params;
pub mod pipeline;
pub mod synthetic;
pub mod taxonomy;

pub use error::{Error, Result};
pub use taxonomy::{MoralFoundation, MoralRole, Polarity};
