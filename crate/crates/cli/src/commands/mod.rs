pub mod corpus;
pub mod eval;
pub mod label;
pub mod server;
pub mod svm;
pub mod synth;
