pub mod arithmetic;
pub mod backend;
pub mod checkpoint;
pub mod dataset;
pub mod eco;
pub mod embedding;
pub mod harness;
pub mod metrics;
pub mod readability;
pub mod registry;
pub mod retrieval;
