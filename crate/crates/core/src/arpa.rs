//! ARPA back-off n-gram language models.
//!
//! Parses the standard text format written by SRILM and KenLM:
//!
//! ```text
//! \data\
//! ngram 1=<count>
//! ngram 2=<count>
//!
//! \1-grams:
//! <log10_prob> <word> [<log10_backoff>]
//!
//! \2-grams:
//! <log10_prob> <word1> <word2> [<log10_backoff>]
//!
//! \end\
//! ```
//!
//! Words are compared byte-exact. Sentence boundaries are never inserted
//! implicitly; callers that want `<s>`/`</s>` context must add the symbols.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::io::BufRead;

use thiserror::Error;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// log10 probability assigned to an OOV word when the model has no `<unk>`
/// unigram. Same floor SRILM uses for impossible events.
pub const UNK_FLOOR_LOG10: f64 = -99.0;

/// True for `<s>`, `</s>` and `<unk>`.
pub fn is_reserved(word: &str) -> bool {
    matches!(word, BOS | EOS | UNK)
}

#[derive(Debug, Error)]
pub enum ArpaError {
    #[error("missing \\data\\ header")]
    MissingDataHeader,
    #[error("line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("unexpected end of input (no \\end\\ marker)")]
    Truncated,
    #[error("n-gram of length {len} is outside the model orders 1..={max}")]
    OrderOutOfRange { len: usize, max: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Non-fatal problems found while parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArpaWarning {
    CountMismatch {
        order: usize,
        declared: usize,
        found: usize,
    },
    /// A backoff weight on the highest order was dropped.
    TopOrderBackoff { line: usize },
}

impl fmt::Display for ArpaWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArpaWarning::CountMismatch {
                order,
                declared,
                found,
            } => write!(
                f,
                "{order}-gram count mismatch: header declares {declared}, section has {found}"
            ),
            ArpaWarning::TopOrderBackoff { line } => {
                write!(f, "line {line}: backoff weight on highest order ignored")
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgramWeight {
    /// log10 probability.
    pub logprob: f64,
    /// log10 back-off weight, absent on the highest order.
    pub backoff: Option<f64>,
}

/// A parsed back-off language model. Immutable after parsing.
#[derive(Debug, Clone, Default)]
pub struct ArpaModel {
    declared: BTreeMap<usize, usize>,
    // tables[n - 1] holds the n-grams.
    tables: Vec<HashMap<Vec<String>, NgramWeight>>,
    vocab: HashSet<String>,
    warnings: Vec<ArpaWarning>,
}

impl PartialEq for ArpaModel {
    /// Entry-set equality. Warnings and header bookkeeping are ignored.
    fn eq(&self, other: &Self) -> bool {
        self.tables.len() == other.tables.len()
            && self.tables.iter().zip(&other.tables).all(|(a, b)| {
                a.len() == b.len()
                    && a.iter().all(|(k, v)| {
                        b.get(k).is_some_and(|w| {
                            w.logprob.to_bits() == v.logprob.to_bits()
                                && w.backoff.map(f64::to_bits) == v.backoff.map(f64::to_bits)
                        })
                    })
            })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Preamble,
    Header,
    Grams(usize),
    Done,
}

impl ArpaModel {
    pub fn parse_str(text: &str) -> Result<Self, ArpaError> {
        Self::parse(text.as_bytes())
    }

    pub fn parse<R: BufRead>(reader: R) -> Result<Self, ArpaError> {
        let mut model = ArpaModel::default();
        let mut section = Section::Preamble;

        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }

            match section {
                Section::Preamble => {
                    if line == "\\data\\" {
                        section = Section::Header;
                    }
                }
                Section::Done => break,
                _ if line == "\\end\\" => section = Section::Done,
                _ if line.starts_with('\\') => {
                    let order = parse_section_marker(line).ok_or_else(|| ArpaError::Malformed {
                        line: lineno,
                        msg: format!("unrecognized section marker `{line}`"),
                    })?;
                    if !model.declared.contains_key(&order) {
                        return Err(ArpaError::Malformed {
                            line: lineno,
                            msg: format!("section for order {order} not declared in header"),
                        });
                    }
                    section = Section::Grams(order);
                }
                Section::Header => {
                    let (order, count) =
                        parse_count_line(line).ok_or_else(|| ArpaError::Malformed {
                            line: lineno,
                            msg: format!("expected `ngram N=count`, got `{line}`"),
                        })?;
                    if order == 0 || model.declared.insert(order, count).is_some() {
                        return Err(ArpaError::Malformed {
                            line: lineno,
                            msg: format!("invalid or repeated order {order} in header"),
                        });
                    }
                }
                Section::Grams(order) => model.parse_row(order, line, lineno)?,
            }
        }

        match section {
            Section::Preamble => return Err(ArpaError::MissingDataHeader),
            Section::Done => {}
            _ => return Err(ArpaError::Truncated),
        }

        let max_order = model.declared.keys().next_back().copied().unwrap_or(0);
        model.tables.resize_with(max_order, HashMap::new);
        for (&order, &declared) in &model.declared {
            let found = model.tables[order - 1].len();
            if found != declared {
                model.warnings.push(ArpaWarning::CountMismatch {
                    order,
                    declared,
                    found,
                });
            }
        }
        if let Some(unigrams) = model.tables.first() {
            model.vocab = unigrams.keys().map(|k| k[0].clone()).collect();
        }
        Ok(model)
    }

    fn parse_row(&mut self, order: usize, line: &str, lineno: usize) -> Result<(), ArpaError> {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != order + 1 && fields.len() != order + 2 {
            return Err(ArpaError::Malformed {
                line: lineno,
                msg: format!(
                    "{order}-gram row needs {} or {} fields, found {}",
                    order + 1,
                    order + 2,
                    fields.len()
                ),
            });
        }
        let logprob = parse_float(fields[0], lineno)?;
        if logprob > 0.0 {
            return Err(ArpaError::Malformed {
                line: lineno,
                msg: format!("positive log probability {logprob}"),
            });
        }
        let mut backoff = match fields.get(order + 1) {
            Some(s) => Some(parse_float(s, lineno)?),
            None => None,
        };
        let is_top = self.declared.keys().next_back() == Some(&order);
        if is_top && backoff.is_some() {
            self.warnings
                .push(ArpaWarning::TopOrderBackoff { line: lineno });
            backoff = None;
        }
        let words: Vec<String> = fields[1..=order].iter().map(|w| w.to_string()).collect();
        if self.tables.len() < order {
            self.tables.resize_with(order, HashMap::new);
        }
        self.tables[order - 1].insert(words, NgramWeight { logprob, backoff });
        Ok(())
    }

    /// Highest n-gram order present in the header.
    pub fn max_order(&self) -> usize {
        self.tables.len()
    }

    /// Header counts, keyed by order.
    pub fn declared_counts(&self) -> &BTreeMap<usize, usize> {
        &self.declared
    }

    /// Number of parsed entries for `order` (1-based).
    pub fn count(&self, order: usize) -> usize {
        order
            .checked_sub(1)
            .and_then(|i| self.tables.get(i))
            .map_or(0, HashMap::len)
    }

    pub fn warnings(&self) -> &[ArpaWarning] {
        &self.warnings
    }

    pub fn vocab(&self) -> &HashSet<String> {
        &self.vocab
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.vocab.contains(word)
    }

    /// Iterates the n-grams of one order in arbitrary order.
    pub fn ngrams(&self, order: usize) -> impl Iterator<Item = (&[String], &NgramWeight)> {
        order
            .checked_sub(1)
            .and_then(|i| self.tables.get(i))
            .into_iter()
            .flat_map(|t| t.iter().map(|(k, v)| (k.as_slice(), v)))
    }

    /// Exact lookup in the table whose order equals `words.len()`. No back-off.
    pub fn lookup<S: AsRef<str>>(&self, words: &[S]) -> Result<Option<NgramWeight>, ArpaError> {
        let len = words.len();
        if len == 0 || len > self.max_order() {
            return Err(ArpaError::OrderOutOfRange {
                len,
                max: self.max_order(),
            });
        }
        Ok(self.get(words))
    }

    fn get<S: AsRef<str>>(&self, words: &[S]) -> Option<NgramWeight> {
        let key: Vec<String> = words.iter().map(|w| w.as_ref().to_string()).collect();
        self.tables.get(words.len().checked_sub(1)?)?.get(&key).copied()
    }

    /// log10 P(word | context) under Katz back-off. `context` is truncated to
    /// the last `max_order - 1` words.
    pub fn conditional_logprob<S: AsRef<str>>(&self, context: &[S], word: &str) -> f64 {
        let word = if self.vocab.contains(word) { word } else { UNK };
        let context: Vec<&str> = context
            .iter()
            .map(|w| w.as_ref())
            .map(|w| if self.vocab.contains(w) { w } else { UNK })
            .collect();
        let keep = self.max_order().saturating_sub(1).min(context.len());
        self.backoff_logprob(&context[context.len() - keep..], word)
    }

    fn backoff_logprob(&self, context: &[&str], word: &str) -> f64 {
        let mut total = 0.0;
        let mut ctx = context;
        loop {
            let mut gram: Vec<&str> = ctx.to_vec();
            gram.push(word);
            if let Some(w) = self.get(&gram) {
                return total + w.logprob;
            }
            if ctx.is_empty() {
                // Only reachable for OOV words when <unk> is absent.
                return total + UNK_FLOOR_LOG10;
            }
            total += self.get(ctx).and_then(|w| w.backoff).unwrap_or(0.0);
            ctx = &ctx[1..];
        }
    }

    /// Sum of conditional log10 probabilities of `words`, each conditioned on
    /// the words preceding it. OOV words are mapped to `<unk>`.
    pub fn sequence_logprob<S: AsRef<str>>(&self, words: &[S]) -> f64 {
        (0..words.len())
            .map(|i| self.conditional_logprob(&words[..i], words[i].as_ref()))
            .sum()
    }

    /// Writes the model back out as ARPA text. Entries are sorted so output is
    /// deterministic; floats use the shortest round-trip representation.
    pub fn to_arpa_string(&self) -> String {
        let mut out = String::from("\\data\\\n");
        for (i, table) in self.tables.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", i + 1, table.len());
        }
        for (i, table) in self.tables.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", i + 1);
            let mut rows: Vec<_> = table.iter().collect();
            rows.sort_by(|a, b| a.0.cmp(b.0));
            for (words, w) in rows {
                let _ = write!(out, "{}\t{}", w.logprob, words.join(" "));
                if let Some(bo) = w.backoff {
                    let _ = write!(out, "\t{bo}");
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}

fn parse_section_marker(line: &str) -> Option<usize> {
    line.strip_prefix('\\')?
        .strip_suffix("-grams:")?
        .parse()
        .ok()
}

fn parse_count_line(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix("ngram")?.trim_start();
    let (order, count) = rest.split_once('=')?;
    Some((order.trim().parse().ok()?, count.trim().parse().ok()?))
}

fn parse_float(s: &str, line: usize) -> Result<f64, ArpaError> {
    let v: f64 = s.parse().map_err(|_| ArpaError::Malformed {
        line,
        msg: format!("invalid number `{s}`"),
    })?;
    if v.is_nan() {
        return Err(ArpaError::Malformed {
            line,
            msg: "NaN weight".into(),
        });
    }
    Ok(v)
}
