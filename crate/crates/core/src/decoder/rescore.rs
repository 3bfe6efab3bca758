//! N-best rescoring with a context graph or a word-level ARPA LM.
//!
//! N-best files are JSON lines, one candidate per line:
//!
//! ```text
//! {"utt_id": "u1", "base_score": -1.0, "text": "c a"}
//! {"utt_id": "u1", "base_score": -1.2, "tokens": [0, 1]}
//! ```

use serde::{Deserialize, Serialize};

use super::DecodeError;
use crate::arpa::ArpaModel;
use crate::context_graph::{ContextGraph, TokenId};
use crate::subword::SubwordVocab;

/// Multiplier taking log10 LM scores to natural log.
pub const LN_10: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, PartialEq)]
pub enum CandidateText {
    Tokens(Vec<TokenId>),
    Words(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: CandidateText,
    pub base_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NBestList {
    pub utt_id: String,
    pub candidates: Vec<Candidate>,
}

pub enum Scorer<'a> {
    Graph {
        graph: &'a ContextGraph,
        /// Needed to segment word candidates.
        vocab: Option<&'a SubwordVocab>,
    },
    WordLm {
        model: &'a ArpaModel,
        /// Needed to detokenize token candidates.
        vocab: Option<&'a SubwordVocab>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoredCandidate {
    pub text: CandidateText,
    pub base_score: f64,
    /// Unscaled contextual score (natural log for the LM scorer).
    pub context_score: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RescoredList {
    pub utt_id: String,
    pub candidates: Vec<RescoredCandidate>,
    /// Set to ln 10 when LM log10 scores were converted.
    pub log10_to_ln: Option<f64>,
}

impl Scorer<'_> {
    fn score(&self, text: &CandidateText) -> Result<f64, DecodeError> {
        match (self, text) {
            (Scorer::Graph { graph, .. }, CandidateText::Tokens(t)) => Ok(graph.score_sequence(t)),
            (Scorer::Graph { graph, vocab }, CandidateText::Words(w)) => {
                let vocab = vocab.ok_or_else(|| {
                    DecodeError::Config("graph rescoring of word candidates needs a vocabulary".into())
                })?;
                Ok(graph.score_sequence(&vocab.segment_phrase(w)))
            }
            (Scorer::WordLm { model, .. }, CandidateText::Words(w)) => {
                Ok(model.sequence_logprob(w) * LN_10)
            }
            (Scorer::WordLm { model, vocab }, CandidateText::Tokens(t)) => {
                let vocab = vocab.ok_or_else(|| {
                    DecodeError::Config("word-LM rescoring of token candidates needs a vocabulary".into())
                })?;
                Ok(model.sequence_logprob(&vocab.detokenize_ids(t)) * LN_10)
            }
        }
    }
}

/// `score = base_score + lambda * context_score`, sorted descending. Ties keep
/// input order.
pub fn rescore_nbest(
    nbest: &NBestList,
    scorer: &Scorer<'_>,
    lambda: f64,
) -> Result<RescoredList, DecodeError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(DecodeError::Config(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    let mut candidates = nbest
        .candidates
        .iter()
        .map(|c| {
            let context_score = scorer.score(&c.text)?;
            Ok(RescoredCandidate {
                text: c.text.clone(),
                base_score: c.base_score,
                context_score,
                score: c.base_score + lambda * context_score,
            })
        })
        .collect::<Result<Vec<_>, DecodeError>>()?;
    candidates.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(RescoredList {
        utt_id: nbest.utt_id.clone(),
        candidates,
        log10_to_ln: matches!(scorer, Scorer::WordLm { .. }).then_some(LN_10),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InRecord {
    utt_id: String,
    base_score: f64,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    tokens: Option<Vec<TokenId>>,
}

#[derive(Serialize)]
struct OutRecord<'a> {
    utt_id: &'a str,
    rank: usize,
    score: f64,
    base_score: f64,
    context_score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tokens: Option<&'a [TokenId]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    log10_to_ln: Option<f64>,
}

/// Groups candidate lines by utterance, preserving first-seen order.
pub fn parse_nbest(text: &str) -> Result<Vec<NBestList>, DecodeError> {
    let mut lists: Vec<NBestList> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| DecodeError::NBest { line: i + 1, msg };
        let rec: InRecord = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if !rec.base_score.is_finite() {
            return Err(err("base_score must be finite".into()));
        }
        let text = match (rec.text, rec.tokens) {
            (Some(t), None) => {
                CandidateText::Words(t.split_whitespace().map(String::from).collect())
            }
            (None, Some(t)) => CandidateText::Tokens(t),
            _ => return Err(err("exactly one of `text` or `tokens` is required".into())),
        };
        let slot = *index.entry(rec.utt_id.clone()).or_insert_with(|| {
            lists.push(NBestList {
                utt_id: rec.utt_id.clone(),
                candidates: Vec::new(),
            });
            lists.len() - 1
        });
        lists[slot].candidates.push(Candidate {
            text,
            base_score: rec.base_score,
        });
    }
    Ok(lists)
}

/// One JSON line per candidate, ranks starting at 1.
pub fn write_rescored(list: &RescoredList) -> String {
    let mut out = String::new();
    for (i, c) in list.candidates.iter().enumerate() {
        let (text, tokens) = match &c.text {
            CandidateText::Words(w) => (Some(w.join(" ")), None),
            CandidateText::Tokens(t) => (None, Some(t.as_slice())),
        };
        let rec = OutRecord {
            utt_id: &list.utt_id,
            rank: i + 1,
            score: c.score,
            base_score: c.base_score,
            context_score: c.context_score,
            text,
            tokens,
            log10_to_ln: list.log10_to_ln,
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}
