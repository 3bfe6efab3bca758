//! WER, named-entity accuracy, NE-WER, OOV-entity accuracy and RTFX.
//!
//! Entities are plain word phrases matched as contiguous whole-word
//! subsequences. Accuracy is counted per occurrence: if an entity occurs `r`
//! times in a reference and `h` times in the paired hypothesis, `min(r, h)`
//! of the `r` occurrences count as recognized.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::ops::AddAssign;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{refs} references but {hyps} hypotheses")]
    LengthMismatch { refs: usize, hyps: usize },
    #[error("wall-clock time must be positive, got {0}")]
    NonPositiveWallTime(f64),
    #[error("audio duration must be non-negative, got {0}")]
    NegativeAudio(f64),
    #[error("line {line}: duplicate utterance id `{id}`")]
    DuplicateUtterance { line: usize, id: String },
    #[error("report line {line}: {msg}")]
    Report { line: usize, msg: String },
}

/// Edit-operation counts from one or more alignments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WerCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub ref_words: usize,
}

impl WerCounts {
    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    pub fn correct(&self) -> usize {
        self.ref_words - self.substitutions - self.deletions
    }

    /// True when there were no reference words; [`ratio`](Self::ratio) then
    /// reports the raw insertion count.
    pub fn empty_reference(&self) -> bool {
        self.ref_words == 0
    }

    pub fn ratio(&self) -> f64 {
        if self.ref_words == 0 {
            self.insertions as f64
        } else {
            self.errors() as f64 / self.ref_words as f64
        }
    }
}

impl AddAssign for WerCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.insertions += rhs.insertions;
        self.deletions += rhs.deletions;
        self.ref_words += rhs.ref_words;
    }
}

/// Unit-cost Levenshtein alignment. When several alignments reach the minimum,
/// the backtrace (from the end) prefers a diagonal step, then an insertion,
/// then a deletion.
pub fn wer<S: AsRef<str>>(reference: &[S], hypothesis: &[S]) -> WerCounts {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut dp = vec![0u32; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j as u32;
    }
    for i in 1..=n {
        dp[i * w] = i as u32;
        for j in 1..=m {
            let sub = u32::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            dp[i * w + j] = (dp[(i - 1) * w + j - 1] + sub)
                .min(dp[i * w + j - 1] + 1)
                .min(dp[(i - 1) * w + j] + 1);
        }
    }

    let mut counts = WerCounts {
        ref_words: n,
        ..Default::default()
    };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = dp[i * w + j];
        if i > 0 && j > 0 {
            let sub = u32::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if dp[(i - 1) * w + j - 1] + sub == here {
                counts.substitutions += sub as usize;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && dp[i * w + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    counts
}

/// Corpus-level counts over paired utterances.
pub fn corpus_wer<S: AsRef<str>>(
    refs: &[Vec<S>],
    hyps: &[Vec<S>],
) -> Result<WerCounts, EvalError> {
    check_paired(refs.len(), hyps.len())?;
    let mut total = WerCounts::default();
    for (r, h) in refs.iter().zip(hyps) {
        total += wer(r, h);
    }
    Ok(total)
}

fn check_paired(refs: usize, hyps: usize) -> Result<(), EvalError> {
    if refs == hyps {
        Ok(())
    } else {
        Err(EvalError::LengthMismatch { refs, hyps })
    }
}

/// Number of (possibly overlapping) positions where `needle` occurs.
pub fn count_occurrences<S: AsRef<str>, T: AsRef<str>>(haystack: &[S], needle: &[T]) -> usize {
    if needle.is_empty() || needle.len() > haystack.len() {
        return 0;
    }
    haystack
        .windows(needle.len())
        .filter(|win| win.iter().zip(needle).all(|(a, b)| a.as_ref() == b.as_ref()))
        .count()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NeAccuracy {
    pub correct: usize,
    pub total: usize,
}

impl NeAccuracy {
    pub fn ratio(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

fn unique_entities<S: AsRef<str>>(entities: &[Vec<S>]) -> Vec<Vec<&str>> {
    let set: BTreeSet<Vec<&str>> = entities
        .iter()
        .map(|e| e.iter().map(AsRef::as_ref).collect::<Vec<_>>())
        .filter(|e| !e.is_empty())
        .collect();
    set.into_iter().collect()
}

/// `None` when no entity occurs in any reference.
pub fn ne_accuracy<S: AsRef<str>, E: AsRef<str>>(
    refs: &[Vec<S>],
    hyps: &[Vec<S>],
    entities: &[Vec<E>],
) -> Result<Option<NeAccuracy>, EvalError> {
    check_paired(refs.len(), hyps.len())?;
    let entities = unique_entities(entities);
    let mut acc = NeAccuracy::default();
    for (r, h) in refs.iter().zip(hyps) {
        for e in &entities {
            let in_ref = count_occurrences(r, e);
            if in_ref > 0 {
                acc.total += in_ref;
                acc.correct += in_ref.min(count_occurrences(h, e));
            }
        }
    }
    Ok((acc.total > 0).then_some(acc))
}

/// WER over the utterances whose reference contains at least one entity.
pub fn ne_wer<S: AsRef<str>, E: AsRef<str>>(
    refs: &[Vec<S>],
    hyps: &[Vec<S>],
    entities: &[Vec<E>],
) -> Result<Option<WerCounts>, EvalError> {
    check_paired(refs.len(), hyps.len())?;
    let entities = unique_entities(entities);
    let mut total = WerCounts::default();
    let mut any = false;
    for (r, h) in refs.iter().zip(hyps) {
        if entities.iter().any(|e| count_occurrences(r, e) > 0) {
            total += wer(r, h);
            any = true;
        }
    }
    Ok(any.then_some(total))
}

/// Entities with at least one word outside `known_vocab`.
pub fn oov_entities<'a, E: AsRef<str>>(
    entities: &'a [Vec<E>],
    known_vocab: &HashSet<String>,
) -> Vec<&'a [E]> {
    entities
        .iter()
        .filter(|e| e.iter().any(|w| !known_vocab.contains(w.as_ref())))
        .map(Vec::as_slice)
        .collect()
}

/// [`ne_accuracy`] restricted to OOV entities.
pub fn oov_accuracy<S: AsRef<str>, E: AsRef<str>>(
    refs: &[Vec<S>],
    hyps: &[Vec<S>],
    entities: &[Vec<E>],
    known_vocab: &HashSet<String>,
) -> Result<Option<NeAccuracy>, EvalError> {
    let oov: Vec<Vec<&str>> = oov_entities(entities, known_vocab)
        .into_iter()
        .map(|e| e.iter().map(AsRef::as_ref).collect())
        .collect();
    if oov.is_empty() {
        check_paired(refs.len(), hyps.len())?;
        return Ok(None);
    }
    ne_accuracy(refs, hyps, &oov)
}

/// Inverse real-time factor: audio seconds per wall-clock second.
pub fn rtfx(audio_seconds: f64, wall_seconds: f64) -> Result<f64, EvalError> {
    if !(wall_seconds > 0.0) {
        return Err(EvalError::NonPositiveWallTime(wall_seconds));
    }
    if !(audio_seconds >= 0.0) {
        return Err(EvalError::NegativeAudio(audio_seconds));
    }
    Ok(audio_seconds / wall_seconds)
}

/// Parses `utt_id<TAB>text` lines. A line without a tab is an utterance with
/// empty text.
pub fn parse_transcripts(text: &str) -> Result<Vec<(String, Vec<String>)>, EvalError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line.split_once('\t').unwrap_or((line, ""));
        let id = id.trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(EvalError::DuplicateUtterance { line: i + 1, id });
        }
        out.push((id, words.split_whitespace().map(String::from).collect()));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub utterances: usize,
    pub wer: WerCounts,
    pub ne_accuracy: Option<NeAccuracy>,
    pub ne_wer: Option<WerCounts>,
    pub oov_accuracy: Option<NeAccuracy>,
    pub rtfx: Option<f64>,
}

/// Inputs to [`evaluate`], paired by position.
pub struct EvalInput<'a> {
    pub refs: &'a [Vec<String>],
    pub hyps: &'a [Vec<String>],
    pub entities: &'a [Vec<String>],
    pub known_vocab: Option<&'a HashSet<String>>,
    /// `(audio_seconds, wall_seconds)`.
    pub timing: Option<(f64, f64)>,
}

pub fn evaluate(input: &EvalInput<'_>) -> Result<EvalReport, EvalError> {
    let EvalInput {
        refs,
        hyps,
        entities,
        known_vocab,
        timing,
    } = *input;
    Ok(EvalReport {
        utterances: refs.len(),
        wer: corpus_wer(refs, hyps)?,
        ne_accuracy: ne_accuracy(refs, hyps, entities)?,
        ne_wer: ne_wer(refs, hyps, entities)?,
        oov_accuracy: match known_vocab {
            Some(v) => oov_accuracy(refs, hyps, entities, v)?,
            None => None,
        },
        rtfx: timing.map(|(a, w)| rtfx(a, w)).transpose()?,
    })
}

const ABSENT: &str = "absent";

impl EvalReport {
    /// `key: value` lines with fixed field names. Absent metrics are written
    /// as `absent`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}: {v}");
        };
        kv("utterances", self.utterances.to_string());
        write_wer(&mut kv, "wer", Some(&self.wer));
        kv("ne_counting", "per_occurrence".into());
        write_acc(&mut kv, "ne", self.ne_accuracy.as_ref());
        write_wer(&mut kv, "ne_wer", self.ne_wer.as_ref());
        write_acc(&mut kv, "oov", self.oov_accuracy.as_ref());
        kv("rtfx", self.rtfx.map_or(ABSENT.into(), |r| r.to_string()));
        out
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut fields: HashMap<&str, (usize, &str)> = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line.split_once(':').ok_or(EvalError::Report {
                line: i + 1,
                msg: "expected `key: value`".into(),
            })?;
            fields.insert(k.trim(), (i + 1, v.trim()));
        }
        let get = |k: &str| -> Result<(usize, &str), EvalError> {
            fields.get(k).copied().ok_or(EvalError::Report {
                line: 0,
                msg: format!("missing field `{k}`"),
            })
        };
        let num = |k: &str| -> Result<Option<usize>, EvalError> {
            let (line, v) = get(k)?;
            if v == ABSENT {
                return Ok(None);
            }
            v.parse().map(Some).map_err(|_| EvalError::Report {
                line,
                msg: format!("`{k}` is not an integer"),
            })
        };
        let wer_counts = |p: &str| -> Result<Option<WerCounts>, EvalError> {
            Ok(
                match (
                    num(&format!("{p}_substitutions"))?,
                    num(&format!("{p}_insertions"))?,
                    num(&format!("{p}_deletions"))?,
                    num(&format!("{p}_ref_words"))?,
                ) {
                    (Some(s), Some(i), Some(d), Some(n)) => Some(WerCounts {
                        substitutions: s,
                        insertions: i,
                        deletions: d,
                        ref_words: n,
                    }),
                    _ => None,
                },
            )
        };
        let acc = |p: &str| -> Result<Option<NeAccuracy>, EvalError> {
            Ok(
                match (num(&format!("{p}_correct"))?, num(&format!("{p}_total"))?) {
                    (Some(correct), Some(total)) => Some(NeAccuracy { correct, total }),
                    _ => None,
                },
            )
        };
        let (rline, rtfx) = get("rtfx")?;
        let rtfx = if rtfx == ABSENT {
            None
        } else {
            Some(rtfx.parse().map_err(|_| EvalError::Report {
                line: rline,
                msg: "`rtfx` is not a number".into(),
            })?)
        };
        Ok(Self {
            utterances: num("utterances")?.unwrap_or(0),
            wer: wer_counts("wer")?.ok_or(EvalError::Report {
                line: 0,
                msg: "corpus WER counts are required".into(),
            })?,
            ne_accuracy: acc("ne")?,
            ne_wer: wer_counts("ne_wer")?,
            oov_accuracy: acc("oov")?,
            rtfx,
        })
    }
}

fn write_wer(kv: &mut impl FnMut(&str, String), prefix: &str, w: Option<&WerCounts>) {
    let show = |f: &dyn Fn(&WerCounts) -> String| w.map_or(ABSENT.to_string(), f);
    kv(prefix, show(&|w| w.ratio().to_string()));
    kv(&format!("{prefix}_substitutions"), show(&|w| w.substitutions.to_string()));
    kv(&format!("{prefix}_insertions"), show(&|w| w.insertions.to_string()));
    kv(&format!("{prefix}_deletions"), show(&|w| w.deletions.to_string()));
    kv(&format!("{prefix}_ref_words"), show(&|w| w.ref_words.to_string()));
    kv(&format!("{prefix}_empty_reference"), show(&|w| w.empty_reference().to_string()));
}

fn write_acc(kv: &mut impl FnMut(&str, String), prefix: &str, a: Option<&NeAccuracy>) {
    let show = |f: &dyn Fn(&NeAccuracy) -> String| a.map_or(ABSENT.to_string(), f);
    kv(&format!("{prefix}_accuracy"), show(&|a| a.ratio().to_string()));
    kv(&format!("{prefix}_correct"), show(&|a| a.correct.to_string()));
    kv(&format!("{prefix}_total"), show(&|a| a.total.to_string()));
}
