//! Iterative exemplar retrieval for in-context learning.
//!
//! A retriever keeps a recurrent state over the exemplars chosen so far and
//! picks the next one by maximum inner product search with a query derived
//! from that state. It is trained with PPO against a language-model
//! environment that scores how likely the reference parse becomes under the
//! growing prompt. Evaluation decodes with the retrieved prompt and reports
//! exact match at k and SMatch.
//!
//! Start with the `examples/` directory; each example covers one capability.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod encoder;
pub mod environment;
pub mod error;
pub mod evaluation;
pub mod exemplar_store;
pub mod model;
pub mod pipeline;
pub mod policy;
pub mod recurrent;
pub mod synthetic_task;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use encoder::{Embedder, HashingEmbedder};
pub use environment::synthetic::SyntheticOracleEnv;
pub use environment::LmEnvironment;
pub use error::{Error, Result};
pub use exemplar_store::{Exemplar, ExemplarStore, IngestOptions, Record};
pub use model::{InitScheme, RetrieverModel};
pub use pipeline::{evaluate, EvalSettings, Retriever};
pub use policy::SamplingConfig;
pub use trainer::{Trainer, TrainerConfig, TrainerState};
