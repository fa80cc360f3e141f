//! Batch extraction of binary condition labels from free-text radiology
//! reports via a logprob-exposing chat-completions server, with ROC/EER
//! threshold calibration and linear-SVM training over precomputed image
//! embeddings (instance-level, or bag-level through the normalized set
//! kernel).
//!
//! The numeric modules ([`eval`], [`svm`]) are generic over the scalar type
//! through [`num::Float`]; the aliases at the crate root fix f64, which is
//! what the CLI uses.

pub mod condition;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod mock;
pub mod num;
pub mod prompt;
pub mod svm;
pub mod synthetic;
pub mod wire;

pub use condition::{ConditionSpec, Granularity};
pub use corpus::{Report, SectionConfig, SectionKind, SectionSpan};
pub use gateway::{ClientConfig, GatewayClient, LabelRecord, TokenScore};
pub use mock::RuleTable;
pub use num::{derive_seed, Float};
pub use prompt::{PromptBundle, Strategy, TemplateSet, ANSWER_INSTRUCTION};

/// f64 instantiations of the scalar-generic types.
pub type ScoredSet = eval::ScoredSet<f64>;
pub type ScoredItem = eval::ScoredItem<f64>;
pub type RocAnalysis = eval::RocAnalysis<f64>;
pub type MetricsBundle = eval::MetricsBundle<f64>;
pub type SvmModel = svm::SvmModel<f64>;
pub type SvmParams = svm::solver::SvmParams<f64>;
pub type SavedModel = svm::io::SavedModel<f64>;
