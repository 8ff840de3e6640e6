//! Corpus construction: multi-annotator aggregation and agreement,
//! adapters for external corpora, synthetic corpus generation and
//! deterministic match-level splits.

mod annotations;
mod civil;
mod dota;
mod split;
mod synthetic;

pub use annotations::{
    aggregate_annotations, annotator_line_class, fleiss_kappa, read_annotations, AggregationError,
    AgreementError, AgreementTable, AnnotationSet, Span,
};
pub use civil::{adapt_cc_threads, read_comments_csv, CivilCommentsError, Comment};
pub use dota::{adapt_dota, read_merged_sentences, DotaError, MergedLine, MergedSentence, SentenceLabel};
pub use split::{split_corpus, CorpusSplit, SplitError};
pub use synthetic::{
    generate_synthetic, ContextRule, IdentityRule, KeywordRule, SynthConfig, SynthError,
    SynthPreset,
};
