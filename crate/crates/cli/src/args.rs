use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Contextual biasing with weighted Aho-Corasick context graphs.
///
/// Log verbosity is read from RUST_LOG (default: warn).
#[derive(Debug, Parser)]
#[command(name = "acbias", version)]
pub struct Cli {
    /// TOML file with default paths and knobs. Flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a context graph from an ARPA LM and/or a keyword list.
    BuildGraph(BuildGraphArgs),
    /// Print per-token score deltas of a token or word sequence.
    Score(ScoreArgs),
    /// Beam search over emission matrices with optional graph fusion.
    Decode(DecodeArgs),
    /// Rerank n-best lists with a context graph or a word-level LM.
    Rescore(RescoreArgs),
    /// WER, NE accuracy, NE-WER, OOV accuracy and RTFX report.
    Evaluate(EvaluateArgs),
    /// Matcher throughput on synthetic graphs of increasing size.
    Bench(BenchArgs),
    /// Synthetic end-to-end run comparing keyword-only and LM+keyword graphs.
    Demo(DemoArgs),
}

/// Graph construction knobs.
#[derive(Debug, Clone, Default, Args)]
pub struct BiasArgs {
    /// Bonus added to keywords found in the LM.
    #[arg(long)]
    pub alpha_in_lm: Option<f64>,
    /// Arc cost of keywords missing from the LM.
    #[arg(long)]
    pub alpha_out_lm: Option<f64>,
    /// Base used to turn log10 LM weights into arc costs.
    #[arg(long)]
    pub exp_base: Option<f64>,
    #[arg(long)]
    pub lm_min_order: Option<usize>,
    /// Highest LM order loaded into the graph (default: all).
    #[arg(long)]
    pub lm_max_order: Option<usize>,
    /// Divide LM arc costs by the number of pieces of the n-gram.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub divide_by_pieces: Option<bool>,
}

#[derive(Debug, Clone, Args)]
pub struct BuildGraphArgs {
    #[arg(long)]
    pub arpa: Option<PathBuf>,
    /// One phrase per line; `#` starts a comment line.
    #[arg(long)]
    pub keywords: Option<PathBuf>,
    /// Subword vocabulary, one piece per line (extra tab fields ignored).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output graph file.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub bias: BiasArgs,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Needed with --text.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Whitespace-separated token ids.
    #[arg(long, conflicts_with = "text", required_unless_present = "text")]
    pub tokens: Option<String>,
    /// Words, segmented with --vocab.
    #[arg(long)]
    pub text: Option<String>,
}

/// Search knobs.
#[derive(Debug, Clone, Default, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub beam: Option<usize>,
    /// Scale on context scores.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Let partial-match credit influence pruning.
    #[arg(long, num_args = 0..=1, default_missing_value = "true", value_name = "BOOL")]
    pub bias_in_pruning: Option<bool>,
    /// Overrides the frame shift stored in emission files.
    #[arg(long)]
    pub frame_shift_s: Option<f64>,
    /// Worker threads across utterances (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    /// Emission file or directory of emission files (utterance id = file stem).
    #[arg(long)]
    pub emissions: Option<PathBuf>,
    /// Context graph; without it the search is unbiased.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Turns token ids into words in the output.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Hypotheses, `utt_id<TAB>text`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Per-utterance and corpus timing.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    /// N-best list in the format read by `rescore`.
    #[arg(long)]
    pub nbest_out: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub nbest: usize,
    #[command(flatten)]
    pub search: SearchArgs,
}

#[derive(Debug, Clone, Args)]
pub struct RescoreArgs {
    /// JSON lines with utt_id, base_score and text or tokens.
    #[arg(long)]
    pub nbest: Option<PathBuf>,
    #[arg(long, conflicts_with = "arpa")]
    pub graph: Option<PathBuf>,
    /// Rescore with a word-level LM instead of a graph.
    #[arg(long)]
    pub arpa: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// `utt_id<TAB>text` references.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// `utt_id<TAB>text` hypotheses; missing utterances count as empty.
    #[arg(long)]
    pub hyps: Option<PathBuf>,
    /// Entity phrases, one per line.
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Known words for OOV accuracy, one per line.
    #[arg(long, conflicts_with = "arpa")]
    pub known_vocab: Option<PathBuf>,
    /// Take the known words from an ARPA model.
    #[arg(long)]
    pub arpa: Option<PathBuf>,
    /// Timing file written by `decode`, for RTFX.
    #[arg(long)]
    pub timing: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Graph sizes in entries.
    #[arg(long, value_delimiter = ',', default_values_t = [100, 1000, 10000])]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 2_000_000)]
    pub stream_len: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Independent match states advanced in lockstep, as a beam would.
    #[arg(long, default_value_t = 8)]
    pub lanes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Chance per stream step of splicing in a whole entry path instead of
    /// one random token. Higher values mean deeper matches.
    #[arg(long, default_value_t = 0.0)]
    pub splice: f64,
    /// Fail when the largest graph runs below this many tokens per second.
    #[arg(long, default_value_t = 1e6)]
    pub min_tokens_per_sec: f64,
    /// Fail when smallest/largest throughput exceeds this ratio.
    #[arg(long, default_value_t = 2.0)]
    pub max_slowdown: f64,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 200)]
    pub utterances: usize,
    /// Also write the generated corpus (LM, vocab, keywords, emissions,
    /// references) here.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
}
