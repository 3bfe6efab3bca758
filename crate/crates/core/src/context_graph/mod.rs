//! Weighted Aho-Corasick context graph over token ids.
//!
//! Each entry is a token sequence with a per-arc cost. The automaton is a trie
//! of all entry paths plus fail links (longest proper suffix that is also a
//! trie path) and output links (nearest entry end on the fail chain).
//!
//! Scoring a stream gives provisional credit for partial matches and takes it
//! back when a match breaks:
//!
//! * every node `u` carries `P(u)`, the sum of arc costs from the root;
//! * every node carries `M(u)`, the summed entry cost of all entries ending at
//!   `u` or on its output chain;
//! * moving from `u` to `v` scores `P(v) - P(u) + M(v)`;
//! * [`ContextGraph::finalize`] scores `-P(u)` and returns to the root.
//!
//! The deltas telescope, so a finalized stream scores exactly the sum of
//! `entry_cost` over every occurrence of every entry in the stream, while a
//! partially matched prefix already lifts a hypothesis during search.

mod codec;

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

pub use codec::{FORMAT_VERSION, MAGIC};

pub type TokenId = u32;
pub type NodeId = u32;

pub const ROOT: NodeId = 0;
const NONE: u32 = u32::MAX;
const MASK_WORDS: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("entry `{surface}` has no tokens")]
    EmptyEntry { surface: String },
    #[error("entry `{surface}` has invalid arc cost {cost}")]
    InvalidCost { surface: String, cost: f64 },
    #[error("not a context graph file (bad magic)")]
    BadMagic,
    #[error("unsupported graph format version {0}")]
    UnsupportedVersion(u32),
    #[error("graph file checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("graph file truncated")]
    Truncated,
    #[error("corrupt graph file: {0}")]
    Corrupt(String),
}

/// Where an entry's cost came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Provenance {
    Lm,
    KeywordInLm,
    KeywordOutLm,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Lm => "lm",
            Provenance::KeywordInLm => "keyword_in_lm",
            Provenance::KeywordOutLm => "keyword_out_lm",
        }
    }

    pub fn is_keyword(self) -> bool {
        !matches!(self, Provenance::Lm)
    }

    fn code(self) -> u8 {
        self as u8
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Provenance::Lm),
            1 => Some(Provenance::KeywordInLm),
            2 => Some(Provenance::KeywordOutLm),
            _ => None,
        }
    }
}

/// One biasable token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    tokens: Vec<TokenId>,
    arc_cost: f64,
    entry_cost: f64,
    provenance: Provenance,
    surface: String,
}

impl ContextEntry {
    /// `entry_cost` is derived as `arc_cost * tokens.len()`.
    pub fn new(
        tokens: Vec<TokenId>,
        arc_cost: f64,
        provenance: Provenance,
        surface: impl Into<String>,
    ) -> Result<Self, GraphError> {
        let surface = surface.into();
        if tokens.is_empty() {
            return Err(GraphError::EmptyEntry { surface });
        }
        if !(arc_cost.is_finite() && arc_cost >= 0.0) {
            return Err(GraphError::InvalidCost {
                surface,
                cost: arc_cost,
            });
        }
        let entry_cost = arc_cost * tokens.len() as f64;
        Ok(Self {
            tokens,
            arc_cost,
            entry_cost,
            provenance,
            surface,
        })
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn arc_cost(&self) -> f64 {
        self.arc_cost
    }

    pub fn entry_cost(&self) -> f64 {
        self.entry_cost
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    /// Preference between two entries on the same token path: higher arc
    /// cost, then keyword provenance over LM, then the smaller surface.
    pub(crate) fn outranks(&self, other: &ContextEntry) -> bool {
        self.arc_cost
            .total_cmp(&other.arc_cost)
            .then(self.provenance.cmp(&other.provenance))
            .then(other.surface.cmp(&self.surface))
            == Ordering::Greater
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    token: TokenId,
    parent: NodeId,
    arc_cost: f64,
    fail: NodeId,
    output: NodeId,
    entry: u32,
    path_cost: f64,
    output_sum: f64,
    depth: u32,
    first_edge: u32,
    edge_count: u32,
}

impl Node {
    /// Token on the arc into this node. Meaningless for the root.
    pub fn token(&self) -> TokenId {
        self.token
    }

    pub fn parent(&self) -> Option<NodeId> {
        (self.parent != NONE).then_some(self.parent)
    }

    pub fn arc_cost(&self) -> f64 {
        self.arc_cost
    }

    pub fn fail(&self) -> NodeId {
        self.fail
    }

    pub fn output(&self) -> Option<NodeId> {
        (self.output != NONE).then_some(self.output)
    }

    /// Index into [`ContextGraph::entries`] when an entry ends here.
    pub fn entry(&self) -> Option<usize> {
        (self.entry != NONE).then_some(self.entry as usize)
    }

    pub fn is_end(&self) -> bool {
        self.entry != NONE
    }

    /// Sum of arc costs from the root, `P(u)`.
    pub fn path_cost(&self) -> f64 {
        self.path_cost
    }

    /// Entry cost summed over this node and its output chain, `M(u)`.
    pub fn output_sum(&self) -> f64 {
        self.output_sum
    }

    pub fn depth(&self) -> usize {
        self.depth as usize
    }
}

/// Per-hypothesis cursor into a [`ContextGraph`]. Cheap to copy, so beam
/// search forks it freely.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MatchState {
    node: NodeId,
    accumulated: f64,
}

impl MatchState {
    pub fn node(&self) -> NodeId {
        self.node
    }

    /// Running total of all deltas applied to this state.
    pub fn accumulated(&self) -> f64 {
        self.accumulated
    }

    pub fn is_root(&self) -> bool {
        self.node == ROOT
    }
}

/// Counters for matcher work over a stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub tokens: u64,
    pub fail_steps: u64,
}

/// Immutable weighted Aho-Corasick automaton.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextGraph {
    nodes: Vec<Node>,
    // (token, child) pairs, grouped per node and sorted by token.
    edges: Vec<(TokenId, NodeId)>,
    // Dense goto table for the root, indexed by token.
    root_next: Vec<NodeId>,
    // Compact per-node copies of what the scan loop reads.
    links: Vec<Link>,
    scores: Vec<(f64, f64)>,
    // Child tokens in edge order. Nodes are numbered breadth-first, so edge
    // `i` always leads to node `i + 1` and a node's children are one
    // contiguous run of this array.
    edge_tokens: Vec<TokenId>,
    entries: Vec<ContextEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Link {
    // Bit `t % MASK_BITS` is set for every child token `t`; a clear bit
    // skips the child search.
    mask: [u64; MASK_WORDS],
    fail: NodeId,
    first_edge: u32,
}


struct TrieBuilder {
    children: Vec<BTreeMap<TokenId, usize>>,
    arc_cost: Vec<f64>,
    entry: Vec<Option<usize>>,
}

impl ContextGraph {
    /// Root-only graph.
    pub fn empty() -> Self {
        Self::build(Vec::new()).expect("empty graph always builds")
    }

    /// Builds the automaton. Entries with identical token paths are collapsed
    /// to one (see [`ContextEntry`] ordering: highest arc cost wins). Node
    /// numbering is breadth-first with children in ascending token order, so
    /// the result does not depend on the input order.
    pub fn build(entries: Vec<ContextEntry>) -> Result<Self, GraphError> {
        for e in &entries {
            if e.tokens.is_empty() {
                return Err(GraphError::EmptyEntry {
                    surface: e.surface.clone(),
                });
            }
            if !(e.arc_cost.is_finite() && e.arc_cost >= 0.0) {
                return Err(GraphError::InvalidCost {
                    surface: e.surface.clone(),
                    cost: e.arc_cost,
                });
            }
        }
        let entries = canonical_entries(entries);

        let mut trie = TrieBuilder {
            children: vec![BTreeMap::new()],
            arc_cost: vec![0.0],
            entry: vec![None],
        };
        for (idx, e) in entries.iter().enumerate() {
            let mut node = 0;
            for &tok in &e.tokens {
                node = match trie.children[node].get(&tok) {
                    Some(&child) => child,
                    None => {
                        let child = trie.children.len();
                        trie.children.push(BTreeMap::new());
                        trie.arc_cost.push(0.0);
                        trie.entry.push(None);
                        trie.children[node].insert(tok, child);
                        child
                    }
                };
                // Shared arcs take the strongest cost among entries using them.
                trie.arc_cost[node] = trie.arc_cost[node].max(e.arc_cost);
            }
            trie.entry[node] = Some(idx);
        }

        Ok(Self::from_trie(trie, entries))
    }

    fn from_trie(trie: TrieBuilder, entries: Vec<ContextEntry>) -> Self {
        let n = trie.children.len();
        // Breadth-first renumbering.
        let mut order = Vec::with_capacity(n);
        let mut parent_tok = vec![(NONE, NONE); n];
        let mut queue = VecDeque::from([0usize]);
        while let Some(old) = queue.pop_front() {
            order.push(old);
            for (&tok, &child) in &trie.children[old] {
                parent_tok[child] = (old as u32, tok);
                queue.push_back(child);
            }
        }
        let mut new_id = vec![0u32; n];
        for (new, &old) in order.iter().enumerate() {
            new_id[old] = new as u32;
        }

        let mut nodes = Vec::with_capacity(n);
        let mut edges = Vec::with_capacity(n.saturating_sub(1));
        for &old in &order {
            let (parent_old, token) = parent_tok[old];
            let first_edge = edges.len() as u32;
            edges.extend(
                trie.children[old]
                    .iter()
                    .map(|(&tok, &child)| (tok, new_id[child])),
            );
            nodes.push(Node {
                token,
                parent: if parent_old == NONE {
                    NONE
                } else {
                    new_id[parent_old as usize]
                },
                arc_cost: trie.arc_cost[old],
                fail: ROOT,
                output: NONE,
                entry: trie.entry[old].map_or(NONE, |e| e as u32),
                path_cost: 0.0,
                output_sum: 0.0,
                depth: 0,
                first_edge,
                edge_count: trie.children[old].len() as u32,
            });
        }

        let root_len = edges[..nodes[0].edge_count as usize]
            .last()
            .map_or(0, |&(tok, _)| tok as usize + 1);
        let mut root_next = vec![NONE; root_len];
        for &(tok, child) in &edges[..nodes[0].edge_count as usize] {
            root_next[tok as usize] = child;
        }

        let mut graph = Self {
            nodes,
            edges,
            root_next,
            links: Vec::new(),
            scores: Vec::new(),
            edge_tokens: Vec::new(),
            entries,
        };
        graph.link();
        graph.links = graph
            .nodes
            .iter()
            .map(|n| Link {
                mask: graph.edges[n.first_edge as usize..(n.first_edge + n.edge_count) as usize]
                    .iter()
                    .fold([0; MASK_WORDS], |mut m, &(t, _)| {
                        m[(t as usize / 64) % MASK_WORDS] |= 1 << (t % 64);
                        m
                    }),
                fail: n.fail,
                first_edge: n.first_edge,
            })
            .collect();
        // Sentinel so the child count of the last node is a difference too.
        graph.links.push(Link {
            mask: [0; MASK_WORDS],
            fail: ROOT,
            first_edge: graph.edges.len() as u32,
        });
        debug_assert!(graph.edges.iter().enumerate().all(|(i, &(_, c))| c as usize == i + 1));
        graph.edge_tokens = graph.edges.iter().map(|&(t, _)| t).collect();
        graph.scores = graph.nodes.iter().map(|n| (n.path_cost, n.output_sum)).collect();
        graph
    }

    /// Computes fail/output links, `P` and `M` in BFS order, so every link
    /// target is final before it is read.
    fn link(&mut self) {
        for id in 1..self.nodes.len() {
            let Node {
                parent,
                token,
                arc_cost,
                ..
            } = self.nodes[id];
            let fail = if parent == ROOT {
                ROOT
            } else {
                let mut f = self.nodes[parent as usize].fail;
                loop {
                    if let Some(next) = self.child(f, token) {
                        break next;
                    }
                    if f == ROOT {
                        break ROOT;
                    }
                    f = self.nodes[f as usize].fail;
                }
            };
            let fail_node = &self.nodes[fail as usize];
            let output = if fail_node.is_end() {
                fail
            } else {
                fail_node.output
            };
            let inherited = if output == NONE {
                0.0
            } else {
                self.nodes[output as usize].output_sum
            };
            let own = self.nodes[id]
                .entry()
                .map_or(0.0, |e| self.entries[e].entry_cost);
            let parent_node = &self.nodes[parent as usize];
            let (path_cost, depth) = (parent_node.path_cost + arc_cost, parent_node.depth + 1);

            let node = &mut self.nodes[id];
            node.fail = fail;
            node.output = output;
            node.path_cost = path_cost;
            node.depth = depth;
            node.output_sum = own + inherited;
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    /// True when the graph is root-only.
    pub fn is_empty(&self) -> bool {
        self.nodes.len() == 1
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Entries in canonical (token-sequence) order.
    pub fn entries(&self) -> &[ContextEntry] {
        &self.entries
    }

    pub fn children(&self, id: NodeId) -> &[(TokenId, NodeId)] {
        let n = &self.nodes[id as usize];
        &self.edges[n.first_edge as usize..(n.first_edge + n.edge_count) as usize]
    }

    #[inline]
    pub fn child(&self, id: NodeId, token: TokenId) -> Option<NodeId> {
        if id == ROOT {
            return self
                .root_next
                .get(token as usize)
                .copied()
                .filter(|&c| c != NONE);
        }
        let kids = self.children(id);
        kids.binary_search_by_key(&token, |&(t, _)| t)
            .ok()
            .map(|i| kids[i].1)
    }

    /// Token path from the root to `id`.
    pub fn path(&self, id: NodeId) -> Vec<TokenId> {
        let mut path = Vec::with_capacity(self.nodes[id as usize].depth as usize);
        let mut cur = id;
        while cur != ROOT {
            let n = &self.nodes[cur as usize];
            path.push(n.token);
            cur = n.parent;
        }
        path.reverse();
        path
    }

    /// Node reached by following `tokens` exactly from the root.
    pub fn find(&self, tokens: &[TokenId]) -> Option<NodeId> {
        tokens
            .iter()
            .try_fold(ROOT, |node, &tok| self.child(node, tok))
    }

    #[inline]
    fn goto(&self, mut node: NodeId, token: TokenId, stats: &mut ScanStats) -> NodeId {
        loop {
            if node == ROOT {
                return match self.root_next.get(token as usize) {
                    Some(&c) if c != NONE => c,
                    _ => ROOT,
                };
            }
            let l = &self.links[node as usize];
            if l.mask[(token as usize / 64) % MASK_WORDS] & (1 << (token % 64)) != 0 {
                let lo = l.first_edge as usize;
                let hi = self.links[node as usize + 1].first_edge as usize;
                if let Some(i) = find_token(&self.edge_tokens[lo..hi], token) {
                    return (lo + i + 1) as NodeId;
                }
            }
            node = l.fail;
            stats.fail_steps += 1;
        }
    }

    pub fn root_state(&self) -> MatchState {
        MatchState::default()
    }

    /// Consumes one token. Returns the new state and the score delta, which is
    /// negative when a failure transition gives back prefix credit.
    #[inline]
    pub fn advance(&self, state: MatchState, token: TokenId) -> (MatchState, f64) {
        self.advance_counted(state, token, &mut ScanStats::default())
    }

    /// [`ContextGraph::advance`], counting fail steps into `stats`.
    #[inline]
    pub fn advance_counted(
        &self,
        state: MatchState,
        token: TokenId,
        stats: &mut ScanStats,
    ) -> (MatchState, f64) {
        stats.tokens += 1;
        let (from_p, _) = self.scores[state.node as usize];
        let next = self.goto(state.node, token, stats);
        let (to_p, to_m) = self.scores[next as usize];
        let delta = (to_p - from_p) + to_m;
        (
            MatchState {
                node: next,
                accumulated: state.accumulated + delta,
            },
            delta,
        )
    }

    /// Ends a hypothesis: gives back the outstanding prefix credit and
    /// returns to the root.
    pub fn finalize(&self, state: MatchState) -> (MatchState, f64) {
        let delta = 0.0 - self.nodes[state.node as usize].path_cost;
        (
            MatchState {
                node: ROOT,
                accumulated: state.accumulated + delta,
            },
            delta,
        )
    }

    /// Total score of a complete token stream (advance every token, then
    /// finalize).
    pub fn score_sequence(&self, tokens: &[TokenId]) -> f64 {
        let end = tokens
            .iter()
            .fold(self.root_state(), |s, &t| self.advance(s, t).0);
        self.finalize(end).0.accumulated
    }

    /// Runs the matcher over `tokens` and reports the work done.
    pub fn scan_stats(&self, tokens: &[TokenId]) -> ScanStats {
        let mut stats = ScanStats::default();
        let mut state = self.root_state();
        for &t in tokens {
            state = self.advance_counted(state, t, &mut stats).0;
        }
        stats
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        codec::decode(bytes)
    }
}

/// Sorts by token sequence and collapses duplicate paths.
/// Position of `token` in the sorted `kids`. Short runs are scanned without
/// early exit so the loop compiles to straight-line compares.
#[inline]
fn find_token(kids: &[TokenId], token: TokenId) -> Option<usize> {
    if kids.len() > 32 {
        return kids.binary_search(&token).ok();
    }
    let below = kids.iter().filter(|&&t| t < token).count();
    (kids.get(below) == Some(&token)).then_some(below)
}

fn canonical_entries(mut entries: Vec<ContextEntry>) -> Vec<ContextEntry> {
    entries.sort_by(|a, b| a.tokens.cmp(&b.tokens));
    let mut out: Vec<ContextEntry> = Vec::with_capacity(entries.len());
    for e in entries {
        match out.last_mut() {
            Some(last) if last.tokens == e.tokens => {
                if e.outranks(last) {
                    *last = e;
                }
            }
            _ => out.push(e),
        }
    }
    out
}
