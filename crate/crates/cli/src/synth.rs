//! Synthetic end-to-end demo.
//!
//! Sentences come from a word Markov chain in which every common word has a
//! strongly preferred successor. Each word has an acoustically confusable
//! partner, and in a fixed share of tokens the emission matrix prefers the
//! partner. A bigram LM estimated from separate chain samples knows the
//! preferred successors, so its entries can undo confusions that a graph
//! holding only the rare entity names cannot.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use acbias::arpa::ArpaModel;
use acbias::context_graph::ContextGraph;
use acbias::decoder::{beam_search, DecodeOptions, EmissionMatrix};
use acbias::eval::{corpus_wer, ne_accuracy, NeAccuracy, WerCounts};
use acbias::graph_builder::{build_context_graph, BiasingConfig};
use acbias::subword::{SubwordVocab, DEFAULT_MARKER};
use anyhow::{Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairs of words that sound alike; index `2k` and `2k + 1` are partners.
const COMMON: [&str; 12] = [
    "bat", "pat", "cold", "gold", "dime", "time", "fan", "van", "sip", "zip", "tied", "died",
];

/// Entity names: two pieces each, with a confusable piece for each half.
const ENTITIES: [(&str, [&str; 2], [&str; 2]); 3] = [
    ("zorvex", ["zor", "vex"], ["zar", "vox"]),
    ("quilan", ["qui", "lan"], ["kwi", "lin"]),
    ("marbek", ["mar", "bek"], ["mer", "bik"]),
];

const BLANK_PIECE: &str = "<blk>";

#[derive(Debug, Clone)]
pub struct DemoConfig {
    pub seed: u64,
    pub utterances: usize,
    /// Sentences used to estimate the LM.
    pub lm_sentences: usize,
    /// Probability that a common word moves to its preferred successor.
    pub follow: f64,
    pub entity_rate: f64,
    /// Share of tokens whose emission prefers the confusable piece.
    pub confusion: f64,
    pub frame_shift_s: f64,
    pub search: DecodeOptions,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: crate::config::DEFAULT_SEED,
            utterances: 200,
            lm_sentences: 3000,
            follow: 0.7,
            entity_rate: 0.1,
            confusion: 0.35,
            frame_shift_s: crate::config::DEFAULT_FRAME_SHIFT_S,
            search: DecodeOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub words: Vec<String>,
    pub emissions: EmissionMatrix,
}

#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub vocab_text: String,
    pub arpa_text: String,
    pub keywords: Vec<Vec<String>>,
    pub utterances: Vec<Utterance>,
}

fn successor(i: usize) -> usize {
    (5 * i + 3) % COMMON.len()
}

fn sentence(rng: &mut ChaCha8Rng, cfg: &DemoConfig) -> Vec<String> {
    let len = rng.gen_range(6..=12);
    let mut out: Vec<String> = Vec::with_capacity(len);
    let mut prev: Option<usize> = None;
    for _ in 0..len {
        if out.len() > 0 && rng.gen_bool(cfg.entity_rate) {
            out.push(ENTITIES[rng.gen_range(0..ENTITIES.len())].0.to_string());
            prev = None;
            continue;
        }
        let w = match prev {
            Some(p) if rng.gen_bool(cfg.follow) => successor(p),
            _ => rng.gen_range(0..COMMON.len()),
        };
        out.push(COMMON[w].to_string());
        prev = Some(w);
    }
    out
}

fn pieces() -> Vec<String> {
    let m = DEFAULT_MARKER;
    let mut v = vec![BLANK_PIECE.to_string()];
    v.extend(COMMON.iter().map(|w| format!("{m}{w}")));
    for (_, [a, b], [da, db]) in ENTITIES {
        v.extend([format!("{m}{a}"), b.to_string(), format!("{m}{da}"), db.to_string()]);
    }
    v
}

/// Confusable partner of every piece.
fn partners(vocab: &SubwordVocab) -> HashMap<u32, u32> {
    let m = DEFAULT_MARKER;
    let id = |p: &str| vocab.id(p).expect("demo piece");
    let mut out = HashMap::new();
    for k in 0..COMMON.len() {
        out.insert(id(&format!("{m}{}", COMMON[k])), id(&format!("{m}{}", COMMON[k ^ 1])));
    }
    for (_, [a, b], [da, db]) in ENTITIES {
        out.insert(id(&format!("{m}{a}")), id(&format!("{m}{da}")));
        out.insert(id(b), id(db));
    }
    out
}

fn fmt_log10(p: f64) -> String {
    format!("{:.6}", p.log10())
}

/// Maximum-likelihood bigram LM with Katz-style normalised back-off weights;
/// only frequent, likely bigrams are kept.
fn estimate_arpa(sentences: &[Vec<String>]) -> String {
    let mut uni: BTreeMap<String, usize> = BTreeMap::new();
    let mut hist: BTreeMap<String, usize> = BTreeMap::new();
    let mut bi: BTreeMap<(String, String), usize> = BTreeMap::new();
    for s in sentences {
        let mut seq = vec!["<s>".to_string()];
        seq.extend(s.iter().cloned());
        seq.push("</s>".to_string());
        for w in &seq[1..] {
            *uni.entry(w.clone()).or_default() += 1;
        }
        for pair in seq.windows(2) {
            *hist.entry(pair[0].clone()).or_default() += 1;
            *bi.entry((pair[0].clone(), pair[1].clone())).or_default() += 1;
        }
    }
    let total: usize = uni.values().sum();
    let p_uni = |w: &str| uni.get(w).copied().unwrap_or(0) as f64 / total as f64;

    let kept: Vec<((String, String), f64)> = bi
        .iter()
        .filter_map(|((h, w), &c)| {
            let p = c as f64 / hist[h] as f64;
            (c >= 20 && p >= 0.2 && w != "</s>").then(|| ((h.clone(), w.clone()), p))
        })
        .collect();

    let mut backoff: BTreeMap<&str, f64> = BTreeMap::new();
    for h in hist.keys() {
        let (num, den) = kept
            .iter()
            .filter(|((kh, _), _)| kh == h)
            .fold((1.0, 1.0), |(n, d), ((_, w), p)| (n - p, d - p_uni(w)));
        backoff.insert(h.as_str(), num / den);
    }

    let mut out = String::from("\\data\\\n");
    let _ = writeln!(out, "ngram 1={}", uni.len() + 1);
    let _ = writeln!(out, "ngram 2={}\n", kept.len());
    out.push_str("\\1-grams:\n");
    let _ = writeln!(out, "-99\t<s>\t{}", fmt_log10(backoff["<s>"]));
    for w in uni.keys() {
        match backoff.get(w.as_str()) {
            Some(&b) => {
                let _ = writeln!(out, "{}\t{w}\t{}", fmt_log10(p_uni(w)), fmt_log10(b));
            }
            None => {
                let _ = writeln!(out, "{}\t{w}", fmt_log10(p_uni(w)));
            }
        }
    }
    out.push_str("\n\\2-grams:\n");
    for ((h, w), p) in &kept {
        let _ = writeln!(out, "{}\t{h} {w}", fmt_log10(*p));
    }
    out.push_str("\n\\end\\\n");
    out
}

/// Normalised log probabilities with a small multiplicative jitter.
fn frame(rng: &mut ChaCha8Rng, v: usize, peaks: &[(u32, f64)]) -> Vec<f64> {
    let rest = 1.0 - peaks.iter().map(|p| p.1).sum::<f64>();
    let others = v - peaks.len();
    let mut probs = vec![rest / others as f64; v];
    for &(id, p) in peaks {
        probs[id as usize] = p;
    }
    for p in probs.iter_mut() {
        *p *= rng.gen_range(-0.2f64..0.2).exp();
    }
    let z: f64 = probs.iter().sum();
    probs.iter().map(|p| (p / z).ln()).collect()
}

fn emissions(
    rng: &mut ChaCha8Rng,
    tokens: &[u32],
    vocab_size: usize,
    partner: &HashMap<u32, u32>,
    cfg: &DemoConfig,
) -> EmissionMatrix {
    let blank = 0;
    let mut rows = vec![frame(rng, vocab_size, &[(blank, 0.9)])];
    for &t in tokens {
        let other = partner[&t];
        let (pt, po) = if rng.gen_bool(cfg.confusion) { (0.30, 0.55) } else { (0.70, 0.15) };
        rows.push(frame(rng, vocab_size, &[(t, pt), (other, po), (blank, 0.05)]));
        rows.push(frame(rng, vocab_size, &[(blank, 0.9)]));
    }
    EmissionMatrix::from_rows(&rows, blank, cfg.frame_shift_s).expect("generated rows are valid")
}

pub fn generate(cfg: &DemoConfig) -> DemoCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let vocab_pieces = pieces();
    let vocab = SubwordVocab::from_pieces(&vocab_pieces, DEFAULT_MARKER).expect("demo vocab");
    let partner = partners(&vocab);

    let training: Vec<Vec<String>> = (0..cfg.lm_sentences).map(|_| sentence(&mut rng, cfg)).collect();
    let arpa_text = estimate_arpa(&training);

    let utterances = (0..cfg.utterances)
        .map(|i| {
            let words = sentence(&mut rng, cfg);
            let tokens = vocab.segment_phrase(&words);
            Utterance {
                id: format!("utt{:04}", i + 1),
                emissions: emissions(&mut rng, &tokens, vocab.len(), &partner, cfg),
                words,
            }
        })
        .collect();

    DemoCorpus {
        vocab_text: vocab_pieces.join("\n") + "\n",
        arpa_text,
        keywords: ENTITIES.iter().map(|e| vec![e.0.to_string()]).collect(),
        utterances,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRow {
    pub setup: &'static str,
    pub wer: WerCounts,
    pub ne: Option<NeAccuracy>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoReport {
    pub rows: Vec<DemoRow>,
}

impl DemoReport {
    pub fn row(&self, setup: &str) -> &DemoRow {
        self.rows.iter().find(|r| r.setup == setup).expect("known setup")
    }

    /// The direction the demo is meant to show.
    pub fn combined_beats_keywords_only(&self) -> bool {
        self.row("lm_plus_keywords").wer.ratio() < self.row("keywords_only").wer.ratio()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("setup\twer\terrors\tref_words\tne_accuracy\n");
        for r in &self.rows {
            let ne = r.ne.map_or("absent".to_string(), |a| format!("{:.4}", a.ratio()));
            let _ = writeln!(
                out,
                "{}\t{:.4}\t{}\t{}\t{ne}",
                r.setup,
                r.wer.ratio(),
                r.wer.errors(),
                r.wer.ref_words
            );
        }
        let _ = writeln!(
            out,
            "lm_plus_keywords_beats_keywords_only\t{}",
            self.combined_beats_keywords_only()
        );
        out
    }
}

/// Decodes the corpus with no graph, keyword-only, LM-only and combined
/// graphs.
pub fn run(corpus: &DemoCorpus, cfg: &DemoConfig) -> Result<DemoReport> {
    let vocab = SubwordVocab::from_lines(&corpus.vocab_text)?;
    let model = ArpaModel::parse_str(&corpus.arpa_text).context("parsing demo LM")?;
    let biasing = BiasingConfig::default();
    let no_kw: Vec<Vec<String>> = Vec::new();

    let graphs: [(&'static str, Option<ContextGraph>); 4] = [
        ("no_graph", None),
        ("keywords_only", Some(build_context_graph(None, &corpus.keywords, &vocab, &biasing)?.0)),
        ("lm_only", Some(build_context_graph(Some(&model), &no_kw, &vocab, &biasing)?.0)),
        (
            "lm_plus_keywords",
            Some(build_context_graph(Some(&model), &corpus.keywords, &vocab, &biasing)?.0),
        ),
    ];

    let refs: Vec<Vec<String>> = corpus.utterances.iter().map(|u| u.words.clone()).collect();
    let mut rows = Vec::new();
    for (setup, graph) in &graphs {
        let hyps = corpus
            .utterances
            .iter()
            .map(|u| {
                let out = beam_search(&u.emissions, graph.as_ref(), &cfg.search)?;
                Ok(vocab.detokenize_ids(&out.best().tokens))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(DemoRow {
            setup,
            wer: corpus_wer(&refs, &hyps)?,
            ne: ne_accuracy(&refs, &hyps, &corpus.keywords)?,
        });
    }
    Ok(DemoReport { rows })
}

/// Writes `lm.arpa`, `vocab.txt`, `keywords.txt`, `refs.txt` and one
/// emission file per utterance under `emissions/`.
pub fn write_corpus(corpus: &DemoCorpus, dir: &Path) -> Result<()> {
    let em_dir = dir.join("emissions");
    fs::create_dir_all(&em_dir).with_context(|| format!("creating {}", em_dir.display()))?;
    let write = |name: &Path, text: &str| {
        fs::write(name, text).with_context(|| format!("writing {}", name.display()))
    };
    write(&dir.join("lm.arpa"), &corpus.arpa_text)?;
    write(&dir.join("vocab.txt"), &corpus.vocab_text)?;
    let kw: String = corpus.keywords.iter().map(|k| k.join(" ") + "\n").collect();
    write(&dir.join("keywords.txt"), &kw)?;
    let refs: String = corpus
        .utterances
        .iter()
        .map(|u| format!("{}\t{}\n", u.id, u.words.join(" ")))
        .collect();
    write(&dir.join("refs.txt"), &refs)?;
    for u in &corpus.utterances {
        write(&em_dir.join(format!("{}.txt", u.id)), &u.emissions.to_text())?;
    }
    Ok(())
}
