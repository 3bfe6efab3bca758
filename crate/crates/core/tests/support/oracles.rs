//! Brute-force reference implementations used by the property and acceptance
//! tests. Nothing here touches the automaton, the DP aligner or the beam
//! search it checks.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::Rng;

/// Token path with its completion credit.
pub type OracleEntry = (Vec<u32>, f64);

/// Sum of entry costs over every (start, end) window of `stream` that spells
/// an entry.
pub fn occurrence_score(entries: &[OracleEntry], stream: &[u32]) -> f64 {
    let mut total = 0.0;
    for i in 0..stream.len() {
        for j in i + 1..=stream.len() {
            for (tokens, cost) in entries {
                if tokens.as_slice() == &stream[i..j] {
                    total += cost;
                }
            }
        }
    }
    total
}

/// All prefixes of all entries, including the empty path.
pub fn trie_paths(entries: &[OracleEntry]) -> HashSet<Vec<u32>> {
    let mut set = HashSet::new();
    set.insert(Vec::new());
    for (tokens, _) in entries {
        for k in 1..=tokens.len() {
            set.insert(tokens[..k].to_vec());
        }
    }
    set
}

/// Longest proper suffix of `path` that is a trie path.
pub fn longest_proper_suffix(path: &[u32], paths: &HashSet<Vec<u32>>) -> Vec<u32> {
    (1..=path.len())
        .map(|start| path[start..].to_vec())
        .find(|s| paths.contains(s))
        .unwrap_or_default()
}

/// Longest proper suffix of `path` that is a complete entry.
pub fn nearest_entry_suffix(path: &[u32], ends: &HashSet<Vec<u32>>) -> Option<Vec<u32>> {
    (1..path.len())
        .map(|start| path[start..].to_vec())
        .find(|s| ends.contains(s))
}

/// Random entries with distinct token paths.
pub fn random_entries<R: Rng>(
    rng: &mut R,
    alphabet: u32,
    max_entries: usize,
    max_len: usize,
) -> Vec<(Vec<u32>, f64)> {
    let n = rng.gen_range(0..=max_entries);
    let mut by_path: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for _ in 0..n {
        let len = rng.gen_range(1..=max_len);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..alphabet)).collect();
        let arc = (rng.gen_range(1..=40) as f64) * 0.125;
        by_path.insert(tokens, arc);
    }
    by_path.into_iter().collect()
}

pub fn random_stream<R: Rng>(rng: &mut R, alphabet: u32, max_len: usize) -> Vec<u32> {
    let len = rng.gen_range(0..=max_len);
    (0..len).map(|_| rng.gen_range(0..alphabet)).collect()
}

/// Minimal unit-cost edit distance by plain recursion over suffixes, memoized.
pub fn edit_distance<S: PartialEq>(a: &[S], b: &[S]) -> usize {
    fn go<S: PartialEq>(a: &[S], b: &[S], memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if a.is_empty() {
            return b.len();
        }
        if b.is_empty() {
            return a.len();
        }
        let key = (a.len(), b.len());
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let keep = go(&a[1..], &b[1..], memo) + usize::from(a[0] != b[0]);
        let del = go(&a[1..], b, memo) + 1;
        let ins = go(a, &b[1..], memo) + 1;
        let v = keep.min(del).min(ins);
        memo.insert(key, v);
        v
    }
    go(a, b, &mut HashMap::new())
}

fn lse(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub tokens: Vec<u32>,
    pub base: f64,
    pub ctx: f64,
    pub combined: f64,
}

/// Enumerates every label sequence (one label per frame), groups them by the
/// emitted token sequence, and ranks groups by
/// `logsumexp(path scores) + lambda * occurrence_score`, ties broken by
/// ascending token sequence.
pub fn exhaustive_decode(
    rows: &[Vec<f64>],
    blank: u32,
    entries: &[OracleEntry],
    lambda: f64,
) -> Vec<Scored> {
    let v = rows.first().map_or(1, Vec::len);
    let t = rows.len();
    let mut groups: BTreeMap<Vec<u32>, Vec<f64>> = BTreeMap::new();
    let total = v.pow(t as u32);
    for code in 0..total {
        let mut c = code;
        let mut labels = Vec::with_capacity(t);
        for _ in 0..t {
            labels.push((c % v) as u32);
            c /= v;
        }
        labels.reverse();
        let score: f64 = labels
            .iter()
            .enumerate()
            .map(|(f, &l)| rows[f][l as usize])
            .sum();
        if score == f64::NEG_INFINITY {
            continue;
        }
        let tokens: Vec<u32> = labels.into_iter().filter(|&l| l != blank).collect();
        groups.entry(tokens).or_default().push(score);
    }
    let mut out: Vec<Scored> = groups
        .into_iter()
        .map(|(tokens, scores)| {
            let base = lse(&scores);
            let ctx = occurrence_score(entries, &tokens);
            Scored {
                combined: base + lambda * ctx,
                tokens,
                base,
                ctx,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.combined
            .total_cmp(&a.combined)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    out
}
