//! Corpus ingestion, preprocessing and feature construction.

pub mod corpus;
pub mod ctr;
pub mod embeddings;
pub mod history;
pub mod preprocess;
pub mod quantize;
pub mod records;
pub mod synthetic;
pub mod vocab;

pub use corpus::{
    Candidate, Corpus, FeatureSettings, HistoryItem, ImpressionSample, NewsCatalog, PopularityTime,
    PrepareSettings, PreparedCorpus, Split,
};
pub use ctr::{compute_ctr, CtrIndex, CtrSettings, CtrSnapshot, ViewCounting};
pub use embeddings::{load_embeddings, write_embeddings, EmbeddingFile};
pub use history::{build_user_history, ClickLog, UserHistory};
pub use preprocess::{preprocess_news, NewsArticle, PreprocessSettings};
pub use quantize::{quantize_popularity, quantize_recency};
pub use records::{ClickEvent, RawImpression, RawNews};
pub use synthetic::{
    generate_synthetic_corpus, synthetic_embeddings, SyntheticConfig, SyntheticCorpus,
};
pub use vocab::{build_vocabulary, Vocabulary};
