//! Shallow-fusion decoding against a context graph.
//!
//! [`beam_search`] is a frame-synchronous search over an [`EmissionMatrix`]:
//! at each frame every hypothesis either takes the blank (acoustic score
//! only) or emits one non-blank token, which also advances its context
//! cursor. Hypotheses are ranked by `base + lambda * ctx`. Hypotheses that
//! reach the same token sequence are merged by log-sum-exp of their base
//! scores; their context state is a function of the tokens, so it agrees.
//!
//! [`rescore`] covers the n-best path.

mod rescore;

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::context_graph::{ContextGraph, MatchState, TokenId};

pub use rescore::{
    parse_nbest, rescore_nbest, write_rescored, Candidate, CandidateText, NBestList,
    RescoredCandidate, RescoredList, Scorer, LN_10,
};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("emissions line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("invalid decoder configuration: {0}")]
    Config(String),
    #[error("n-best line {line}: {msg}")]
    NBest { line: usize, msg: String },
}

/// Per-frame log probabilities, row-major `frames x vocab_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionMatrix {
    frames: usize,
    vocab_size: usize,
    blank_id: TokenId,
    frame_shift_s: f64,
    logprobs: Vec<f64>,
}

impl EmissionMatrix {
    pub fn new(
        vocab_size: usize,
        blank_id: TokenId,
        frame_shift_s: f64,
        logprobs: Vec<f64>,
    ) -> Result<Self, DecodeError> {
        let bad = |msg: String| DecodeError::Format { line: 1, msg };
        if vocab_size == 0 {
            return Err(bad("vocabulary size must be positive".into()));
        }
        if blank_id as usize >= vocab_size {
            return Err(bad(format!("blank id {blank_id} outside 0..{vocab_size}")));
        }
        if !(frame_shift_s.is_finite() && frame_shift_s > 0.0) {
            return Err(bad(format!("frame shift must be positive, got {frame_shift_s}")));
        }
        if logprobs.len() % vocab_size != 0 {
            return Err(bad(format!(
                "{} values do not form rows of {vocab_size}",
                logprobs.len()
            )));
        }
        let m = Self {
            frames: logprobs.len() / vocab_size,
            vocab_size,
            blank_id,
            frame_shift_s,
            logprobs,
        };
        for t in 0..m.frames {
            let row = m.row(t);
            if row.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                return Err(DecodeError::Format {
                    line: t + 2,
                    msg: "values must be finite log probabilities or -inf".into(),
                });
            }
            if row.iter().all(|v| *v == f64::NEG_INFINITY) {
                return Err(DecodeError::Format {
                    line: t + 2,
                    msg: "row has no reachable token".into(),
                });
            }
        }
        Ok(m)
    }

    pub fn from_rows(
        rows: &[Vec<f64>],
        blank_id: TokenId,
        frame_shift_s: f64,
    ) -> Result<Self, DecodeError> {
        let v = rows.first().map_or(0, Vec::len);
        if let Some(t) = rows.iter().position(|r| r.len() != v) {
            return Err(DecodeError::Format {
                line: t + 2,
                msg: format!("row has {} values, expected {v}", rows[t].len()),
            });
        }
        Self::new(v.max(1), blank_id, frame_shift_s, rows.concat())
    }

    /// Text layout: header `T V blank_id frame_shift_s`, then `T` rows of
    /// `V` whitespace-separated floats.
    pub fn parse(text: &str) -> Result<Self, DecodeError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(DecodeError::Format {
            line: 1,
            msg: "empty emissions file".into(),
        })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        let header_err = || DecodeError::Format {
            line: 1,
            msg: format!("expected `T V blank_id frame_shift_s`, got `{header}`"),
        };
        if h.len() != 4 {
            return Err(header_err());
        }
        let frames: usize = h[0].parse().map_err(|_| header_err())?;
        let vocab_size: usize = h[1].parse().map_err(|_| header_err())?;
        let blank_id: TokenId = h[2].parse().map_err(|_| header_err())?;
        let frame_shift_s: f64 = h[3].parse().map_err(|_| header_err())?;

        let mut logprobs = Vec::with_capacity(frames * vocab_size);
        let mut rows = 0;
        for (idx, line) in lines {
            let before = logprobs.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| DecodeError::Format {
                    line: idx + 1,
                    msg: format!("invalid number `{tok}`"),
                })?;
                logprobs.push(v);
            }
            if logprobs.len() - before != vocab_size {
                return Err(DecodeError::Format {
                    line: idx + 1,
                    msg: format!(
                        "row has {} values, expected {vocab_size}",
                        logprobs.len() - before
                    ),
                });
            }
            rows += 1;
        }
        if rows != frames {
            return Err(DecodeError::Format {
                line: 1,
                msg: format!("header declares {frames} frames, found {rows}"),
            });
        }
        Self::new(vocab_size, blank_id, frame_shift_s, logprobs)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{} {} {} {}\n",
            self.frames, self.vocab_size, self.blank_id, self.frame_shift_s
        );
        for t in 0..self.frames {
            let row: Vec<String> = self.row(t).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn blank_id(&self) -> TokenId {
        self.blank_id
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    /// Audio covered by the matrix.
    pub fn duration_s(&self) -> f64 {
        self.frames as f64 * self.frame_shift_s
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.logprobs[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    /// Largest `|logsumexp(row)|` over all frames.
    pub fn max_normalization_error(&self) -> f64 {
        (0..self.frames)
            .map(|t| log_sum_exp(self.row(t)).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        self.max_normalization_error() <= tol
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Symmetric two-term log-sum-exp.
#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Scale on context scores, `lambda` in `base + lambda * ctx`.
    pub lambda: f64,
    /// When false, pruning sees only completed-match credit; partial-prefix
    /// credit is applied at the end.
    pub bias_in_pruning: bool,
    /// Number of hypotheses returned.
    pub nbest: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam: 8,
            lambda: 1.0,
            bias_in_pruning: true,
            nbest: 1,
        }
    }
}

impl DecodeOptions {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.beam == 0 {
            return Err(DecodeError::Config("beam must be at least 1".into()));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(DecodeError::Config(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            )));
        }
        if self.nbest == 0 {
            return Err(DecodeError::Config("nbest must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted tokens, blanks excluded.
    pub tokens: Vec<TokenId>,
    /// Accumulated acoustic log probability.
    pub base_score: f64,
    pub ctx_state: MatchState,
    /// Accumulated (unscaled) context score.
    pub ctx_score: f64,
    /// `base_score + lambda * ctx_score`.
    pub combined: f64,
}

/// Best-first hypotheses after finalization.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub hypotheses: Vec<Hypothesis>,
}

impl DecodeOutput {
    pub fn best(&self) -> &Hypothesis {
        &self.hypotheses[0]
    }
}

struct Expansion {
    parent: usize,
    token: Option<TokenId>,
    base: f64,
    state: MatchState,
    ctx: f64,
    key: f64,
}

/// Ranks by score descending, then token sequence ascending.
fn rank(a_score: f64, a_tokens: &[TokenId], b_score: f64, b_tokens: &[TokenId]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.cmp(b_tokens))
}

/// Scores closer than this (relative, floored at 1) count as tied in the
/// final ranking. Sequences with equal true scores reach them through
/// different merge orders, so exact float comparison would order them by
/// rounding noise.
pub const SCORE_TIE_EPS: f64 = 1e-9;

/// Best-first by score; each run of neighbours within [`SCORE_TIE_EPS`] of
/// each other is then ordered by token sequence.
fn rank_final(hyps: &mut [Hypothesis]) {
    hyps.sort_by(|a, b| rank(a.combined, &a.tokens, b.combined, &b.tokens));
    let mut start = 0;
    for i in 1..=hyps.len() {
        let tied = i < hyps.len() && {
            let (a, b) = (hyps[i - 1].combined, hyps[i].combined);
            a - b <= SCORE_TIE_EPS * a.abs().max(b.abs()).max(1.0)
        };
        if !tied {
            hyps[start..i].sort_by(|a, b| a.tokens.cmp(&b.tokens));
            start = i;
        }
    }
}

pub fn beam_search(
    em: &EmissionMatrix,
    graph: Option<&ContextGraph>,
    opts: &DecodeOptions,
) -> Result<DecodeOutput, DecodeError> {
    opts.validate()?;
    let empty = ContextGraph::empty();
    let graph = graph.unwrap_or(&empty);
    let lambda = opts.lambda;
    let prune_key = |base: f64, state: MatchState, ctx: f64| {
        if opts.bias_in_pruning {
            base + lambda * ctx
        } else {
            base + lambda * (ctx - graph.node(state.node()).path_cost())
        }
    };

    let mut hyps = vec![Hypothesis {
        tokens: Vec::new(),
        base_score: 0.0,
        ctx_state: graph.root_state(),
        ctx_score: 0.0,
        combined: 0.0,
    }];
    let blank = em.blank_id();

    for t in 0..em.frames() {
        let row = em.row(t);

        // A token extension (q, v) lands on an existing hypothesis p when
        // p.tokens == q.tokens + [v]; such candidates merge with p's blank
        // extension instead of forming a new hypothesis.
        let index: HashMap<&[TokenId], usize> = hyps
            .iter()
            .enumerate()
            .map(|(i, h)| (h.tokens.as_slice(), i))
            .collect();
        let mut lands_on: HashMap<(usize, TokenId), usize> = HashMap::new();
        for (p, h) in hyps.iter().enumerate() {
            if let Some((&last, prefix)) = h.tokens.split_last() {
                if let Some(&q) = index.get(prefix) {
                    lands_on.insert((q, last), p);
                }
            }
        }

        let mut cands: Vec<Expansion> = Vec::with_capacity(hyps.len() * row.len());
        let mut same_slot: Vec<Option<usize>> = vec![None; hyps.len()];
        let mut add_same = |cands: &mut Vec<Expansion>, p: usize, base: f64| match same_slot[p] {
            Some(slot) => cands[slot].base = log_add(cands[slot].base, base),
            None => {
                same_slot[p] = Some(cands.len());
                cands.push(Expansion {
                    parent: p,
                    token: None,
                    base,
                    state: hyps[p].ctx_state,
                    ctx: hyps[p].ctx_score,
                    key: 0.0,
                });
            }
        };

        for (q, h) in hyps.iter().enumerate() {
            for (v, &lp) in row.iter().enumerate() {
                if lp == f64::NEG_INFINITY {
                    continue;
                }
                let v = v as TokenId;
                let base = h.base_score + lp;
                if v == blank {
                    add_same(&mut cands, q, base);
                } else if let Some(&p) = lands_on.get(&(q, v)) {
                    add_same(&mut cands, p, base);
                } else {
                    let (state, delta) = graph.advance(h.ctx_state, v);
                    cands.push(Expansion {
                        parent: q,
                        token: Some(v),
                        base,
                        state,
                        ctx: h.ctx_score + delta,
                        key: 0.0,
                    });
                }
            }
        }
        for c in &mut cands {
            c.key = prune_key(c.base, c.state, c.ctx);
        }

        let cmp = |a: &Expansion, b: &Expansion| {
            b.key.total_cmp(&a.key).then_with(|| {
                let ta = hyps[a.parent].tokens.iter().chain(a.token.iter());
                let tb = hyps[b.parent].tokens.iter().chain(b.token.iter());
                ta.cmp(tb)
            })
        };
        if cands.len() > opts.beam {
            cands.select_nth_unstable_by(opts.beam - 1, cmp);
            cands.truncate(opts.beam);
        }
        cands.sort_by(cmp);

        hyps = cands
            .into_iter()
            .map(|c| {
                let mut tokens = hyps[c.parent].tokens.clone();
                tokens.extend(c.token);
                Hypothesis {
                    tokens,
                    base_score: c.base,
                    ctx_state: c.state,
                    ctx_score: c.ctx,
                    combined: c.base + lambda * c.ctx,
                }
            })
            .collect();
    }

    for h in &mut hyps {
        let (state, delta) = graph.finalize(h.ctx_state);
        h.ctx_state = state;
        h.ctx_score += delta;
        h.combined = h.base_score + lambda * h.ctx_score;
    }
    rank_final(&mut hyps);
    hyps.truncate(opts.nbest);
    Ok(DecodeOutput { hypotheses: hyps })
}
