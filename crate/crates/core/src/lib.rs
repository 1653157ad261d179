//! Joint necessity prediction and tag recommendation for code review requests.
//!
//! Request necessity prediction and tag recommendation are both cast as
//! masked-token prediction over one descriptive template. Code segments are
//! represented by a trainable prefix plus frozen data-flow-graph vectors.

pub mod answering;
pub mod config;
pub mod corpus;
pub mod dfg;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipeline;
pub mod prefix;
pub mod prompting;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
