//! Contextual biasing for speech decoding with a weighted Aho-Corasick graph.
//!
//! A word-level ARPA language model and a keyword list are segmented into
//! subword pieces and loaded into one context graph. During beam search each
//! hypothesis carries a cursor into the graph; advancing it yields a score
//! delta that is added (scaled by `lambda`) to the acoustic log probability.
//!
//! * [`arpa`]: ARPA parsing and Katz back-off scoring.
//! * [`subword`]: vocabulary loading and greedy longest-match segmentation.
//! * [`context_graph`]: the automaton, incremental scoring, binary file format.
//! * [`graph_builder`]: LM and keyword costs, single-trie merge.
//! * [`decoder`]: fused beam search over emission matrices, n-best rescoring.
//! * [`eval`]: WER, NE accuracy, NE-WER, OOV accuracy, RTFX.

pub mod arpa;
pub mod context_graph;
pub mod decoder;
pub mod eval;
pub mod graph_builder;
pub mod subword;

pub use arpa::ArpaModel;
pub use context_graph::{ContextEntry, ContextGraph, MatchState, Provenance, TokenId};
pub use decoder::{beam_search, DecodeOptions, EmissionMatrix, Hypothesis};
pub use graph_builder::{build_context_graph, BiasingConfig};
pub use subword::SubwordVocab;
