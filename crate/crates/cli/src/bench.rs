//! Matcher throughput on synthetic graphs.
//!
//! Graphs of different sizes are nested prefixes of one random entry list and
//! all sizes scan the same stream, so the only thing that changes between
//! rows is the graph.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use acbias::context_graph::{ContextEntry, ContextGraph, Provenance, TokenId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Entry counts, e.g. `[100, 1000, 10000]`.
    pub sizes: Vec<usize>,
    pub stream_len: usize,
    pub alphabet: u32,
    pub max_entry_len: usize,
    /// Independent states advanced in lockstep (default: the decoder's
    /// default beam).
    pub lanes: usize,
    /// Best of this many timed passes.
    pub repeats: usize,
    pub seed: u64,
    /// Chance that the stream continues with a whole entry path instead of
    /// one uniform random token.
    pub splice: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            sizes: vec![100, 1000, 10_000],
            stream_len: 2_000_000,
            alphabet: 500,
            max_entry_len: 4,
            lanes: acbias::decoder::DecodeOptions::default().beam,
            repeats: 5,
            seed: crate::config::DEFAULT_SEED,
            splice: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub entries: usize,
    pub nodes: usize,
    /// With `lanes` interleaved states.
    pub tokens_per_sec: f64,
    /// One state, every lookup waiting on the previous one.
    pub serial_tokens_per_sec: f64,
    pub fail_steps_per_token: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    /// First row is the empty graph.
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Throughput of the smallest non-empty graph over the largest.
    pub fn slowdown(&self) -> f64 {
        let sized: Vec<&BenchRow> = self.rows.iter().filter(|r| r.entries > 0).collect();
        match (sized.first(), sized.last()) {
            (Some(a), Some(b)) => a.tokens_per_sec / b.tokens_per_sec,
            _ => 1.0,
        }
    }

    pub fn largest(&self) -> &BenchRow {
        self.rows.iter().max_by_key(|r| r.entries).expect("report has rows")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from(
            "entries\tnodes\ttokens_per_sec\tserial_tokens_per_sec\tfail_steps_per_token\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.0}\t{:.0}\t{:.4}",
                r.entries, r.nodes, r.tokens_per_sec, r.serial_tokens_per_sec, r.fail_steps_per_token
            );
        }
        let _ = writeln!(out, "slowdown_smallest_to_largest\t{:.3}", self.slowdown());
        out
    }
}

/// `n` random entries with distinct paths, deterministic in `rng`.
pub fn random_entries(rng: &mut ChaCha8Rng, n: usize, alphabet: u32, max_len: usize) -> Vec<ContextEntry> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let len = rng.gen_range(1..=max_len);
        let tokens: Vec<TokenId> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
        if !seen.insert(tokens.clone()) {
            continue;
        }
        let cost = rng.gen_range(0.1..2.0);
        out.push(ContextEntry::new(tokens, cost, Provenance::KeywordOutLm, "").expect("valid entry"));
    }
    out
}

/// Uniform random tokens, with a whole entry path spliced in at each step
/// with probability `splice`.
pub fn synthetic_stream(
    rng: &mut ChaCha8Rng,
    len: usize,
    alphabet: u32,
    entries: &[ContextEntry],
    splice: f64,
) -> Vec<TokenId> {
    let mut out = Vec::with_capacity(len + 8);
    while out.len() < len {
        if !entries.is_empty() && rng.gen_bool(splice) {
            let e = &entries[rng.gen_range(0..entries.len())];
            out.extend_from_slice(e.tokens());
        } else {
            out.push(rng.gen_range(0..alphabet));
        }
    }
    out.truncate(len);
    out
}

/// Tokens per second of `advance` over `stream`, best of `repeats`.
///
/// The stream is cut into `lanes` equal slices scanned in lockstep, one
/// state per slice, the way a beam search advances several hypotheses per
/// frame. One lane is a plain serial scan.
pub fn measure(graph: &ContextGraph, stream: &[TokenId], lanes: usize, repeats: usize) -> f64 {
    let lanes = lanes.max(1);
    let width = stream.len() / lanes;
    let slices: Vec<&[TokenId]> = (0..lanes).map(|l| &stream[l * width..(l + 1) * width]).collect();
    let mut best = f64::INFINITY;
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        let mut states = vec![graph.root_state(); lanes];
        for i in 0..width {
            for (state, slice) in states.iter_mut().zip(&slices) {
                *state = graph.advance(*state, slice[i]).0;
            }
        }
        black_box(&states);
        best = best.min(start.elapsed().as_secs_f64());
    }
    (width * lanes) as f64 / best.max(1e-12)
}

pub fn run(cfg: &BenchConfig) -> BenchReport {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let largest = cfg.sizes.iter().copied().max().unwrap_or(0);
    let all = random_entries(&mut rng, largest, cfg.alphabet, cfg.max_entry_len);
    let stream = synthetic_stream(&mut rng, cfg.stream_len, cfg.alphabet, &all, cfg.splice);

    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut rows = Vec::new();
    for n in std::iter::once(0).chain(sizes.into_iter().filter(|&n| n > 0)) {
        let graph = ContextGraph::build(all[..n].to_vec()).expect("random entries are valid");
        // Warm the caches and the branch predictor once before timing.
        measure(&graph, &stream[..stream.len().min(100_000)], cfg.lanes, 1);
        let tokens_per_sec = measure(&graph, &stream, cfg.lanes, cfg.repeats);
        let serial_tokens_per_sec = measure(&graph, &stream, 1, cfg.repeats);
        let stats = graph.scan_stats(&stream);
        rows.push(BenchRow {
            entries: n,
            nodes: graph.len(),
            tokens_per_sec,
            serial_tokens_per_sec,
            fail_steps_per_token: stats.fail_steps as f64 / stream.len().max(1) as f64,
        });
    }
    BenchReport { rows }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_inputs() {
        let mut a = ChaCha8Rng::seed_from_u64(3);
        let mut b = ChaCha8Rng::seed_from_u64(3);
        let ea = random_entries(&mut a, 50, 20, 4);
        let eb = random_entries(&mut b, 50, 20, 4);
        assert_eq!(ea, eb);
        assert_eq!(
            synthetic_stream(&mut a, 1000, 20, &ea, 0.3),
            synthetic_stream(&mut b, 1000, 20, &eb, 0.3)
        );
    }

    #[test]
    fn small_run_has_one_row_per_size() {
        let report = run(&BenchConfig {
            sizes: vec![10, 100],
            stream_len: 10_000,
            repeats: 1,
            ..Default::default()
        });
        let entries: Vec<usize> = report.rows.iter().map(|r| r.entries).collect();
        assert_eq!(entries, vec![0, 10, 100]);
        assert!(report.rows.iter().all(|r| r.tokens_per_sec > 0.0));
        assert_eq!(report.rows[0].fail_steps_per_token, 0.0);
    }
}
