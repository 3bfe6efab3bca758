//! Library side of the `acbias` command-line tool: argument types, config
//! resolution, subcommand implementations, the matcher benchmark and the
//! synthetic demo corpus.

pub mod args;
pub mod bench;
pub mod commands;
pub mod config;
pub mod error;
pub mod synth;

use anyhow::Result;

use args::{Cli, Command};
use config::FileConfig;
use error::CheckFailed;

/// Runs one subcommand and returns what it prints on stdout.
pub fn run(cli: &Cli) -> Result<String> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::BuildGraph(a) => commands::build_graph(&file, a),
        Command::Score(a) => commands::score(&file, a),
        Command::Decode(a) => commands::decode(&file, a),
        Command::Rescore(a) => commands::rescore(&file, a),
        Command::Evaluate(a) => commands::evaluate_cmd(&file, a),
        Command::Bench(a) => {
            if !(0.0..=1.0).contains(&a.splice) {
                return Err(error::UsageError(format!("--splice must be in [0, 1], got {}", a.splice)).into());
            }
            let cfg = bench::BenchConfig {
                sizes: a.sizes.clone(),
                stream_len: a.stream_len,
                repeats: a.repeats,
                lanes: a.lanes,
                seed: file.seed(a.seed),
                splice: a.splice,
                ..Default::default()
            };
            let report = bench::run(&cfg);
            let text = report.to_text();
            let largest = report.largest();
            if largest.entries > 0 && largest.tokens_per_sec < a.min_tokens_per_sec {
                return Err(CheckFailed(format!(
                    "{text}throughput {:.0} tokens/s on {} entries is below {:.0}",
                    largest.tokens_per_sec, largest.entries, a.min_tokens_per_sec
                ))
                .into());
            }
            if report.slowdown() > a.max_slowdown {
                return Err(CheckFailed(format!(
                    "{text}slowdown {:.3} exceeds {}",
                    report.slowdown(),
                    a.max_slowdown
                ))
                .into());
            }
            Ok(text)
        }
        Command::Demo(a) => {
            let cfg = synth::DemoConfig {
                seed: file.seed(a.seed),
                utterances: a.utterances,
                search: file.search(&a.search, 1)?,
                ..Default::default()
            };
            let corpus = synth::generate(&cfg);
            if let Some(dir) = &a.out_dir {
                synth::write_corpus(&corpus, dir)?;
            }
            let report = synth::run(&corpus, &cfg)?;
            let text = report.to_text();
            if !report.combined_beats_keywords_only() {
                return Err(CheckFailed(format!(
                    "{text}LM+keyword graph did not improve WER over the keyword-only graph"
                ))
                .into());
            }
            Ok(text)
        }
    }
}
