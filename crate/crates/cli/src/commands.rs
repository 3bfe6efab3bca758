use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use acbias::arpa::ArpaModel;
use acbias::context_graph::{ContextGraph, TokenId};
use acbias::decoder::{
    beam_search, parse_nbest, rescore_nbest, write_rescored, DecodeOptions, EmissionMatrix,
    Scorer,
};
use acbias::eval::{evaluate, parse_transcripts, EvalInput, EvalReport};
use acbias::graph_builder::{build_context_graph, parse_phrase_list, BuildSummary};
use acbias::subword::SubwordVocab;
use anyhow::{Context, Result};
use log::{info, warn};
use rayon::prelude::*;

use crate::args::{BuildGraphArgs, DecodeArgs, EvaluateArgs, RescoreArgs, ScoreArgs};
use crate::config::{input, optional_input, output, FileConfig};
use crate::error::{FormatError, UsageError};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<SubwordVocab> {
    SubwordVocab::from_lines(&read_text(path)?)
        .with_context(|| format!("loading vocabulary {}", path.display()))
}

pub fn load_arpa(path: &Path) -> Result<ArpaModel> {
    let model = ArpaModel::parse_str(&read_text(path)?)
        .with_context(|| format!("parsing ARPA model {}", path.display()))?;
    for w in model.warnings() {
        warn!("{}: {w}", path.display());
    }
    Ok(model)
}

pub fn load_graph(path: &Path) -> Result<ContextGraph> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    ContextGraph::from_bytes(&bytes).with_context(|| format!("loading graph {}", path.display()))
}

fn parse_token_ids(text: &str) -> Result<Vec<TokenId>> {
    text.split_whitespace()
        .map(|t| {
            t.parse()
                .map_err(|_| UsageError(format!("`{t}` is not a token id")).into())
        })
        .collect()
}

pub fn summary_text(s: &BuildSummary) -> String {
    format!(
        "lm_entries: {}\nkeyword_entries: {}\nreplaced_lm_entries: {}\nmerged_entries: {}\nnodes: {}\n",
        s.lm_entries, s.keyword_entries, s.replaced_lm_entries, s.merged_entries, s.nodes
    )
}

pub fn build_graph(file: &FileConfig, args: &BuildGraphArgs) -> Result<String> {
    let arpa = optional_input(&args.arpa, &file.arpa, "arpa")?;
    let keywords = optional_input(&args.keywords, &file.keywords, "keywords")?;
    let vocab = input(&args.vocab, &file.vocab, "vocab")?;
    let out = output(&args.out, "out")?;
    if arpa.is_none() && keywords.is_none() {
        return Err(UsageError("build-graph needs --arpa, --keywords or both".into()).into());
    }
    let cfg = file.biasing(&args.bias)?;
    let vocab = load_vocab(&vocab)?;
    let model = arpa.as_deref().map(load_arpa).transpose()?;
    let phrases = match &keywords {
        Some(p) => parse_phrase_list(&read_text(p)?),
        None => Vec::new(),
    };
    let (graph, summary, errors) = build_context_graph(model.as_ref(), &phrases, &vocab, &cfg)?;
    for e in &errors {
        warn!("skipping keyword: {e}");
    }
    write_file(&out, graph.to_bytes())?;
    info!("wrote {} ({} nodes)", out.display(), graph.len());
    Ok(summary_text(&summary))
}

pub fn score(file: &FileConfig, args: &ScoreArgs) -> Result<String> {
    let graph = load_graph(&input(&args.graph, &file.graph, "graph")?)?;
    let tokens = match (&args.tokens, &args.text) {
        (Some(t), _) => parse_token_ids(t)?,
        (None, Some(text)) => {
            let vocab = load_vocab(&input(&args.vocab, &file.vocab, "vocab")?)?;
            let words: Vec<&str> = text.split_whitespace().collect();
            vocab.segment_phrase(&words)
        }
        (None, None) => return Err(UsageError("give --tokens or --text".into()).into()),
    };
    let mut out = String::from("step\ttoken\tnode\tdelta\taccumulated\n");
    let mut state = graph.root_state();
    for (i, &t) in tokens.iter().enumerate() {
        let (next, delta) = graph.advance(state, t);
        state = next;
        let _ = writeln!(out, "{}\t{t}\t{}\t{delta}\t{}", i + 1, state.node(), state.accumulated());
    }
    let (end, delta) = graph.finalize(state);
    let _ = writeln!(out, "finalize\t-\t{}\t{delta}\t{}", end.node(), end.accumulated());
    let _ = writeln!(out, "total\t{}", end.accumulated());
    Ok(out)
}

/// Emission files sorted by utterance id (file stem).
pub fn emission_files(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let files: Vec<PathBuf> = if path.is_dir() {
        let mut v = Vec::new();
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            let p = entry?.path();
            if p.is_file() {
                v.push(p);
            }
        }
        v
    } else {
        vec![path.to_path_buf()]
    };
    let mut by_id = BTreeMap::new();
    for p in files {
        let id = p
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| FormatError(format!("bad emission file name {}", p.display())))?
            .to_string();
        if let Some(prev) = by_id.insert(id.clone(), p.clone()) {
            return Err(FormatError(format!(
                "utterance `{id}` appears twice ({} and {})",
                prev.display(),
                p.display()
            ))
            .into());
        }
    }
    if by_id.is_empty() {
        return Err(UsageError(format!("no emission files in {}", path.display())).into());
    }
    Ok(by_id.into_iter().collect())
}

fn load_emissions(path: &Path, frame_shift: Option<f64>) -> Result<EmissionMatrix> {
    let em = EmissionMatrix::parse(&read_text(path)?)
        .with_context(|| format!("parsing emissions {}", path.display()))?;
    match frame_shift {
        Some(fs) => {
            let rows: Vec<Vec<f64>> = (0..em.frames()).map(|t| em.row(t).to_vec()).collect();
            Ok(EmissionMatrix::from_rows(&rows, em.blank_id(), fs)?)
        }
        None => Ok(em),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UttResult {
    pub utt_id: String,
    /// Best first.
    pub nbest: Vec<(Vec<TokenId>, f64, f64)>,
    pub audio_s: f64,
    pub wall_s: f64,
}

/// Runs the search over every utterance; results come back in utterance-id
/// order whatever the thread count.
pub fn decode_corpus(
    files: &[(String, PathBuf)],
    graph: Option<&ContextGraph>,
    opts: &DecodeOptions,
    frame_shift: Option<f64>,
    jobs: Option<usize>,
) -> Result<(Vec<UttResult>, f64)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .context("starting worker threads")?;
    let start = Instant::now();
    let results = pool.install(|| {
        files
            .par_iter()
            .map(|(id, path)| -> Result<UttResult> {
                let em = load_emissions(path, frame_shift)?;
                let t0 = Instant::now();
                let out = beam_search(&em, graph, opts)
                    .with_context(|| format!("decoding {id}"))?;
                let wall_s = t0.elapsed().as_secs_f64();
                Ok(UttResult {
                    utt_id: id.clone(),
                    nbest: out
                        .hypotheses
                        .into_iter()
                        .map(|h| (h.tokens, h.base_score, h.combined))
                        .collect(),
                    audio_s: em.duration_s(),
                    wall_s,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;
    Ok((results, start.elapsed().as_secs_f64()))
}

fn render(tokens: &[TokenId], vocab: Option<&SubwordVocab>) -> String {
    match vocab {
        Some(v) => v.detokenize_ids(tokens).join(" "),
        None => tokens.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" "),
    }
}

fn rtfx_or_inf(audio_s: f64, wall_s: f64) -> f64 {
    acbias::eval::rtfx(audio_s, wall_s).unwrap_or(f64::INFINITY)
}

pub fn hyps_text(results: &[UttResult], vocab: Option<&SubwordVocab>) -> String {
    let mut out = String::new();
    for r in results {
        let best = r.nbest.first().map_or(&[][..], |h| h.0.as_slice());
        let _ = writeln!(out, "{}\t{}", r.utt_id, render(best, vocab));
    }
    out
}

pub fn nbest_text(results: &[UttResult]) -> String {
    let mut out = String::new();
    for r in results {
        for (tokens, base, _) in &r.nbest {
            let rec = serde_json::json!({ "utt_id": r.utt_id, "base_score": base, "tokens": tokens });
            out.push_str(&rec.to_string());
            out.push('\n');
        }
    }
    out
}

/// Tab-separated; the last line holds corpus totals with the wall time of
/// the whole run.
pub fn timing_text(results: &[UttResult], corpus_wall_s: f64) -> String {
    let mut out = String::from("utt_id\taudio_s\twall_s\trtfx\n");
    let mut audio = 0.0;
    for r in results {
        audio += r.audio_s;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.utt_id,
            r.audio_s,
            r.wall_s,
            rtfx_or_inf(r.audio_s, r.wall_s)
        );
    }
    let _ = writeln!(
        out,
        "corpus\t{audio}\t{corpus_wall_s}\t{}",
        rtfx_or_inf(audio, corpus_wall_s)
    );
    out
}

/// `(audio_s, wall_s)` from the corpus line of a timing file.
pub fn parse_corpus_timing(text: &str) -> Result<(f64, f64)> {
    let line = text
        .lines()
        .find(|l| l.starts_with("corpus\t"))
        .ok_or_else(|| FormatError("timing file has no corpus line".into()))?;
    let f: Vec<&str> = line.split('\t').collect();
    let num = |i: usize| -> Result<f64> {
        f.get(i)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| FormatError(format!("bad timing line `{line}`")).into())
    };
    Ok((num(1)?, num(2)?))
}

pub fn decode(file: &FileConfig, args: &DecodeArgs) -> Result<String> {
    let emissions = input(&args.emissions, &file.emissions, "emissions")?;
    let graph = optional_input(&args.graph, &file.graph, "graph")?;
    let vocab = optional_input(&args.vocab, &file.vocab, "vocab")?;
    let out = output(&args.out, "out")?;
    let opts = file.search(&args.search, args.nbest)?;
    let frame_shift = file.frame_shift(&args.search)?;
    let jobs = file.jobs(&args.search)?;

    let graph = graph.as_deref().map(load_graph).transpose()?;
    let vocab = vocab.as_deref().map(load_vocab).transpose()?;
    let files = emission_files(&emissions)?;
    let (results, wall) = decode_corpus(&files, graph.as_ref(), &opts, frame_shift, jobs)?;

    write_file(&out, hyps_text(&results, vocab.as_ref()))?;
    if let Some(p) = &args.nbest_out {
        write_file(p, nbest_text(&results))?;
    }
    let timing = timing_text(&results, wall);
    if let Some(p) = args.timing.as_ref().or(file.timing.as_ref()) {
        write_file(p, &timing)?;
    }
    let audio: f64 = results.iter().map(|r| r.audio_s).sum();
    Ok(format!(
        "utterances: {}\naudio_s: {audio}\nwall_s: {wall}\nrtfx: {}\n",
        results.len(),
        rtfx_or_inf(audio, wall)
    ))
}

pub fn rescore(file: &FileConfig, args: &RescoreArgs) -> Result<String> {
    let nbest = input(&args.nbest, &file.nbest, "nbest")?;
    let vocab = optional_input(&args.vocab, &file.vocab, "vocab")?;
    let lambda = args.lambda.or(file.lambda).unwrap_or(DecodeOptions::default().lambda);
    let vocab = vocab.as_deref().map(load_vocab).transpose()?;

    // A flag on either side wins over both config keys.
    let graph_path = args.graph.as_ref().or(args.arpa.as_ref().map_or(file.graph.as_ref(), |_| None));
    let (graph, model) = match graph_path {
        Some(p) => (Some(load_graph(&input(&Some(p.clone()), &None, "graph")?)?), None),
        None => {
            let p = input(&args.arpa, &file.arpa, "arpa")
                .context("rescore needs --graph or --arpa")?;
            (None, Some(load_arpa(&p)?))
        }
    };
    let scorer = match (&graph, &model) {
        (Some(graph), _) => Scorer::Graph { graph, vocab: vocab.as_ref() },
        (None, Some(model)) => Scorer::WordLm { model, vocab: vocab.as_ref() },
        (None, None) => unreachable!("one scorer source is always loaded"),
    };

    let mut lists = parse_nbest(&read_text(&nbest)?)
        .with_context(|| format!("parsing n-best file {}", nbest.display()))?;
    lists.sort_by(|a, b| a.utt_id.cmp(&b.utt_id));
    let mut out = String::new();
    for list in &lists {
        out.push_str(&write_rescored(&rescore_nbest(list, &scorer, lambda)?));
    }
    match &args.out {
        Some(p) => {
            write_file(p, &out)?;
            Ok(format!("utterances: {}\n", lists.len()))
        }
        None => Ok(out),
    }
}

fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    Ok(read_text(path)?
        .lines()
        .filter_map(|l| l.split_whitespace().next())
        .map(String::from)
        .collect())
}

pub fn evaluate_cmd(file: &FileConfig, args: &EvaluateArgs) -> Result<String> {
    let refs_path = input(&args.refs, &file.refs, "refs")?;
    let hyps_path = input(&args.hyps, &file.hyps, "hyps")?;
    let entities = optional_input(&args.entities, &file.entities, "entities")?;
    let known = match (&args.known_vocab, &args.arpa) {
        (Some(_), _) => Some(load_word_list(&input(&args.known_vocab, &None, "known-vocab")?)?),
        (None, Some(_)) => Some(load_arpa(&input(&args.arpa, &None, "arpa")?)?.vocab().clone()),
        (None, None) => optional_input(&None, &file.known_vocab, "known-vocab")?
            .as_deref()
            .map(load_word_list)
            .transpose()?,
    };
    let timing = optional_input(&args.timing, &file.timing, "timing")?
        .as_deref()
        .map(|p| parse_corpus_timing(&read_text(p)?))
        .transpose()?;

    let refs = parse_transcripts(&read_text(&refs_path)?)
        .with_context(|| format!("parsing {}", refs_path.display()))?;
    let hyps: BTreeMap<String, Vec<String>> = parse_transcripts(&read_text(&hyps_path)?)
        .with_context(|| format!("parsing {}", hyps_path.display()))?
        .into_iter()
        .collect();
    let mut refs: Vec<_> = refs;
    refs.sort_by(|a, b| a.0.cmp(&b.0));
    let ref_ids: HashSet<&str> = refs.iter().map(|(id, _)| id.as_str()).collect();
    for id in hyps.keys().filter(|id| !ref_ids.contains(id.as_str())) {
        warn!("hypothesis `{id}` has no reference; ignored");
    }
    let hyp_words: Vec<Vec<String>> = refs
        .iter()
        .map(|(id, _)| match hyps.get(id) {
            Some(h) => h.clone(),
            None => {
                warn!("no hypothesis for `{id}`; scored as empty");
                Vec::new()
            }
        })
        .collect();
    let ref_words: Vec<Vec<String>> = refs.into_iter().map(|(_, w)| w).collect();
    let entity_list = match &entities {
        Some(p) => parse_phrase_list(&read_text(p)?),
        None => Vec::new(),
    };

    let report: EvalReport = evaluate(&EvalInput {
        refs: &ref_words,
        hyps: &hyp_words,
        entities: &entity_list,
        known_vocab: known.as_ref(),
        timing,
    })?;
    let text = report.to_text();
    match &args.out {
        Some(p) => {
            write_file(p, &text)?;
            Ok(text)
        }
        None => Ok(text),
    }
}
