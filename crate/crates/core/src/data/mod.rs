//! Corpus ingestion, vocabularies, BIOES handling and embedding loading.

pub mod bioes;
pub mod conll;
pub mod corpus;
pub mod embeddings;
pub mod synthetic;
pub mod vocab;

pub use bioes::{bioes_spans, is_bioes_label, to_bioes, Span};
pub use conll::{parse_conll, preprocess_ner, read_conll, write_conll, RawSentence};
pub use corpus::{
    split_semi_supervised, subsample_indices, Corpus, Sentence, SplitManifest, VocabOptions, Vocabularies,
};
pub use embeddings::{load_embeddings, PretrainedEmbeddings};
pub use synthetic::{synthetic_corpus, SyntheticConfig, SyntheticGrammar};
pub use vocab::{Vocab, PAD_TOKEN, UNK_TOKEN};
