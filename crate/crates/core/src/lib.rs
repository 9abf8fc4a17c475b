pub mod binio;
pub mod corpus;
pub mod generation;
pub mod harness;
pub mod langid;
pub mod metrics;
pub mod optim;
pub mod retrieval;
pub mod text;
pub mod vocab;
