//! Turns an ARPA LM and a keyword list into costed context entries and merges
//! them into a single context graph.
//!
//! LM n-grams get a per-arc cost of `exp_base ^ LMw` on every subword arc of
//! the n-gram, where `LMw` is the stored log10 weight. Keywords get
//!
//! | keyword n-gram                | per-arc cost                   |
//! |-------------------------------|--------------------------------|
//! | present in the LM with `LMw`  | `exp_base ^ LMw + alpha_in_lm` |
//! | absent (or no LM supplied)    | `alpha_out_lm`                 |
//!
//! Membership is an exact lookup at order = keyword word count.

use std::collections::BTreeMap;
use std::f64::consts::E;

use thiserror::Error;

use crate::arpa::{self, ArpaModel};
use crate::context_graph::{ContextEntry, ContextGraph, GraphError, Provenance, TokenId};
use crate::subword::SubwordVocab;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("alpha values must be finite and non-negative (in_lm={in_lm}, out_lm={out_lm})")]
    Alpha { in_lm: f64, out_lm: f64 },
    #[error("exponent base must be > 1, got {0}")]
    ExpBase(f64),
    #[error("invalid LM order range {min}..={max}")]
    OrderRange { min: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasingConfig {
    pub alpha_in_lm: f64,
    pub alpha_out_lm: f64,
    pub exp_base: f64,
    pub lm_min_order: usize,
    /// `None` keeps every order up to the model's maximum.
    pub lm_max_order: Option<usize>,
    pub divide_by_pieces: bool,
}

impl Default for BiasingConfig {
    fn default() -> Self {
        Self {
            alpha_in_lm: 0.5,
            alpha_out_lm: 1.5,
            exp_base: E,
            lm_min_order: 1,
            lm_max_order: None,
            divide_by_pieces: false,
        }
    }
}

impl BiasingConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let ok = |a: f64| a.is_finite() && a >= 0.0;
        if !ok(self.alpha_in_lm) || !ok(self.alpha_out_lm) {
            return Err(ConfigError::Alpha {
                in_lm: self.alpha_in_lm,
                out_lm: self.alpha_out_lm,
            });
        }
        if !(self.exp_base.is_finite() && self.exp_base > 1.0) {
            return Err(ConfigError::ExpBase(self.exp_base));
        }
        let max = self.lm_max_order.unwrap_or(usize::MAX);
        if self.lm_min_order < 1 || self.lm_min_order > max {
            return Err(ConfigError::OrderRange {
                min: self.lm_min_order,
                max,
            });
        }
        Ok(())
    }

    /// Converts a stored log10 LM weight into a positive per-arc cost for a
    /// path of `pieces` arcs.
    pub fn lm_arc_cost(&self, log10_weight: f64, pieces: usize) -> f64 {
        let cost = self.exp_base.powf(log10_weight);
        if self.divide_by_pieces && pieces > 0 {
            cost / pieces as f64
        } else {
            cost
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KeywordError {
    #[error("keyword {index} is empty")]
    Empty { index: usize },
    #[error("keyword {index} (`{surface}`): {source}")]
    Entry {
        index: usize,
        surface: String,
        source: GraphError,
    },
}

/// Keyword list file: one phrase per line, whitespace-separated words.
/// Blank lines and `#` comment lines are skipped.
pub fn parse_phrase_list(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect()
}

/// One entry per LM n-gram in the configured order range, skipping n-grams
/// that contain `<s>`, `</s>` or `<unk>`. Output order is unspecified.
pub fn lm_entries(
    model: &ArpaModel,
    vocab: &SubwordVocab,
    cfg: &BiasingConfig,
) -> Vec<ContextEntry> {
    let max = cfg.lm_max_order.unwrap_or(usize::MAX).min(model.max_order());
    let mut out = Vec::new();
    for order in cfg.lm_min_order..=max {
        for (words, weight) in model.ngrams(order) {
            if words.iter().any(|w| arpa::is_reserved(w)) {
                continue;
            }
            let tokens = vocab.segment_phrase(words);
            let arc_cost = cfg.lm_arc_cost(weight.logprob, tokens.len());
            // Costs are positive by construction, tokens non-empty.
            if let Ok(entry) = ContextEntry::new(tokens, arc_cost, Provenance::Lm, words.join(" ")) {
                out.push(entry);
            }
        }
    }
    out
}

/// Applies the keyword cost cases to each phrase. Bad phrases are reported
/// individually and do not stop the rest.
pub fn keyword_entries<S: AsRef<str>>(
    keywords: &[Vec<S>],
    model: Option<&ArpaModel>,
    vocab: &SubwordVocab,
    cfg: &BiasingConfig,
) -> (Vec<ContextEntry>, Vec<KeywordError>) {
    let mut entries = Vec::new();
    let mut errors = Vec::new();
    for (index, words) in keywords.iter().enumerate() {
        let words: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
        let tokens = vocab.segment_phrase(&words);
        if tokens.is_empty() {
            errors.push(KeywordError::Empty { index });
            continue;
        }
        let surface = words.join(" ");
        // Keywords longer than the LM order are simply not in the LM.
        let lm_weight = model
            .and_then(|m| m.lookup(&words).ok().flatten())
            .map(|w| w.logprob);
        let (arc_cost, provenance) = match lm_weight {
            Some(lmw) => (
                cfg.lm_arc_cost(lmw, tokens.len()) + cfg.alpha_in_lm,
                Provenance::KeywordInLm,
            ),
            None => (cfg.alpha_out_lm, Provenance::KeywordOutLm),
        };
        match ContextEntry::new(tokens, arc_cost, provenance, surface.clone()) {
            Ok(e) => entries.push(e),
            Err(source) => errors.push(KeywordError::Entry {
                index,
                surface,
                source,
            }),
        }
    }
    (entries, errors)
}

/// Single-trie merge: LM entries first, then keywords. A keyword replaces an
/// LM entry on the same token path; among duplicates of the same kind the
/// strongest entry is kept. Output is sorted by token sequence.
pub fn merge(lm: Vec<ContextEntry>, keywords: Vec<ContextEntry>) -> Vec<ContextEntry> {
    let mut by_path: BTreeMap<Vec<TokenId>, ContextEntry> = BTreeMap::new();
    for e in lm {
        upsert(&mut by_path, e);
    }
    for e in keywords {
        match by_path.get(e.tokens()) {
            Some(existing) if existing.provenance().is_keyword() => upsert(&mut by_path, e),
            _ => {
                by_path.insert(e.tokens().to_vec(), e);
            }
        }
    }
    by_path.into_values().collect()
}

fn upsert(map: &mut BTreeMap<Vec<TokenId>, ContextEntry>, e: ContextEntry) {
    match map.get_mut(e.tokens()) {
        Some(existing) => {
            if e.outranks(existing) {
                *existing = e;
            }
        }
        None => {
            map.insert(e.tokens().to_vec(), e);
        }
    }
}

/// Counts describing what went into a graph.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildSummary {
    pub lm_entries: usize,
    pub keyword_entries: usize,
    pub replaced_lm_entries: usize,
    pub merged_entries: usize,
    pub nodes: usize,
}

/// LM-only, keyword-only or combined graph, depending on which inputs are
/// given. Keyword errors are returned alongside the graph.
pub fn build_context_graph<S: AsRef<str>>(
    model: Option<&ArpaModel>,
    keywords: &[Vec<S>],
    vocab: &SubwordVocab,
    cfg: &BiasingConfig,
) -> Result<(ContextGraph, BuildSummary, Vec<KeywordError>), ConfigError> {
    cfg.validate()?;
    let lm = model.map(|m| lm_entries(m, vocab, cfg)).unwrap_or_default();
    let (kw, errors) = keyword_entries(keywords, model, vocab, cfg);

    let lm_paths: std::collections::HashSet<&[TokenId]> =
        lm.iter().map(ContextEntry::tokens).collect();
    let replaced = kw
        .iter()
        .map(ContextEntry::tokens)
        .collect::<std::collections::HashSet<_>>()
        .into_iter()
        .filter(|t| lm_paths.contains(t))
        .count();
    let mut summary = BuildSummary {
        lm_entries: lm_paths.len(),
        keyword_entries: kw.len(),
        replaced_lm_entries: replaced,
        ..Default::default()
    };

    let merged = merge(lm, kw);
    summary.merged_entries = merged.len();
    let graph = ContextGraph::build(merged).expect("merged entries are valid");
    summary.nodes = graph.len();
    Ok((graph, summary, errors))
}
