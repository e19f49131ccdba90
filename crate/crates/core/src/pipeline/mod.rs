//! Corpus ingestion, embedding resolution, epoch streaming and cost accounting.

pub mod config;
pub mod epoch;
pub mod flops;
pub mod ingest;
pub mod provider;

pub use config::RunConfig;
pub use epoch::{assemble_super_batch, epoch_order, super_batches, SelectionEngine, SelectionRecord, SuperBatch};
pub use flops::{flops_report, CostModel, RunCounters, RunReport};
pub use ingest::{ingest_corpus, Corpus, CorpusFormat, IngestStats};
pub use provider::{embed_uncached, EmbeddingProvider, ReferenceResolver, ShardProvider, TableProvider};
