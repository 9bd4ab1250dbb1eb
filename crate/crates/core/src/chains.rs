//! Inference chains and the entailment graph built from them.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::seq2seq::Seq2Seq;

pub const DEFAULT_MAX_LEN: usize = 10;

/// Turns a sentence into the key used for repeat detection and node identity.
pub trait Canonicalizer: Send + Sync {
    fn canonical(&self, tokens: &[String]) -> String;
}

/// Token-wise equality: tokens trimmed, empty ones dropped, single spaces.
pub struct ExactCanon;

/// Case-folded, leading article dropped. Analysis only.
pub struct LooseCanon;

impl Canonicalizer for ExactCanon {
    fn canonical(&self, tokens: &[String]) -> String {
        tokens
            .iter()
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Canonicalizer for LooseCanon {
    fn canonical(&self, tokens: &[String]) -> String {
        let lowered: Vec<String> = ExactCanon
            .canonical(tokens)
            .split(' ')
            .map(str::to_lowercase)
            .collect();
        let skip = matches!(lowered.first().map(String::as_str), Some("the" | "a" | "an")) && lowered.len() > 1;
        lowered[skip as usize..].join(" ")
    }
}

pub fn canonicalizers() -> Registry<dyn Canonicalizer> {
    let mut r: Registry<dyn Canonicalizer> = Registry::new("canonicalizer");
    r.register("exact", Box::new(ExactCanon))
        .register("loose", Box::new(LooseCanon));
    r
}

/// Sentence-to-sentence generation step.
pub trait Generator {
    fn generate(&mut self, sentence: &[String]) -> Result<Vec<String>>;

    /// Batched form; results line up with `sentences`.
    fn generate_batch(&mut self, sentences: &[Vec<String>]) -> Vec<Result<Vec<String>>> {
        sentences.iter().map(|s| self.generate(s)).collect()
    }
}

impl<F> Generator for F
where
    F: FnMut(&[String]) -> Result<Vec<String>>,
{
    fn generate(&mut self, sentence: &[String]) -> Result<Vec<String>> {
        self(sentence)
    }
}

/// Greedy decoding with a trained model. An empty output is an error,
/// since it cannot be fed back in.
pub struct ModelGenerator<'a> {
    pub model: &'a Seq2Seq,
    pub vocab: &'a Vocabulary,
    pub chunk: usize,
}

fn non_empty(out: Vec<String>) -> Result<Vec<String>> {
    if out.is_empty() {
        Err(Error::InvalidArgument("model generated an empty sentence".into()))
    } else {
        Ok(out)
    }
}

impl Generator for ModelGenerator<'_> {
    fn generate(&mut self, sentence: &[String]) -> Result<Vec<String>> {
        non_empty(self.model.greedy_decode(self.vocab, sentence)?)
    }

    fn generate_batch(&mut self, sentences: &[Vec<String>]) -> Vec<Result<Vec<String>>> {
        match self.model.greedy_decode_many(self.vocab, sentences, self.chunk) {
            Ok(outs) => outs.into_iter().map(non_empty).collect(),
            // Fall back to one at a time so a bad input only fails itself.
            Err(_) => sentences.iter().map(|s| self.generate(s)).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Repeat,
    MaxLength,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferenceChain {
    pub sentences: Vec<Vec<String>>,
    pub stop: StopReason,
    /// The generated sentence that was already in the chain (repeat stops).
    pub closing: Option<Vec<String>>,
}

impl InferenceChain {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

impl fmt::Display for InferenceChain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sentences.iter().map(|s| s.join(" ")).collect();
        f.write_str(&parts.join(" → "))
    }
}

/// Chain growth shared by the single-chain and lockstep builders.
struct Growing {
    chain: Vec<Vec<String>>,
    seen: HashSet<String>,
    last: String,
}

enum Advance {
    Continue,
    Done(StopReason, Option<Vec<String>>),
}

impl Growing {
    fn new(seed: Vec<String>, canon: &dyn Canonicalizer) -> Self {
        let last = canon.canonical(&seed);
        Growing {
            chain: vec![seed],
            seen: HashSet::from([last.clone()]),
            last,
        }
    }

    fn push(&mut self, next: Vec<String>, canon: &dyn Canonicalizer, max_len: usize) -> Advance {
        let key = canon.canonical(&next);
        if self.seen.contains(&key) {
            return Advance::Done(StopReason::Repeat, Some(next));
        }
        self.seen.insert(key.clone());
        self.last = key;
        self.chain.push(next);
        self.at_limit(max_len)
    }

    fn at_limit(&self, max_len: usize) -> Advance {
        if self.chain.len() >= max_len {
            Advance::Done(StopReason::MaxLength, None)
        } else {
            Advance::Continue
        }
    }

    fn finish(self, stop: StopReason, closing: Option<Vec<String>>) -> InferenceChain {
        InferenceChain {
            sentences: self.chain,
            stop,
            closing,
        }
    }
}

fn check_seed(seed: &[String], max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    if ExactCanon.canonical(seed).is_empty() {
        return Err(Error::InvalidArgument("empty seed sentence".into()));
    }
    Ok(())
}

/// Feeds each output back in until a sentence repeats or `max_len`
/// sentences are collected, comparing sentences with exact canonical form.
pub fn generate_chain(seed: &[String], generator: &mut dyn Generator, max_len: usize) -> Result<InferenceChain> {
    generate_chain_with(seed, generator, max_len, &ExactCanon)
}

pub fn generate_chain_with(
    seed: &[String],
    generator: &mut dyn Generator,
    max_len: usize,
    canon: &dyn Canonicalizer,
) -> Result<InferenceChain> {
    check_seed(seed, max_len)?;
    let mut g = Growing::new(seed.to_vec(), canon);
    let mut state = g.at_limit(max_len);
    loop {
        if let Advance::Done(stop, closing) = state {
            return Ok(g.finish(stop, closing));
        }
        let next = generator
            .generate(g.chain.last().expect("chain is never empty"))
            .map_err(|e| Error::Generator {
                partial: g.chain.clone(),
                source: Box::new(e),
            })?;
        state = g.push(next, canon, max_len);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub tokens: Vec<String>,
    /// Some chain starts here.
    pub seed: bool,
    /// The generator maps this sentence to itself.
    pub fixed_point: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredChain {
    pub seed_index: usize,
    /// Canonical keys of the chain's sentences.
    pub nodes: Vec<String>,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedChain {
    pub seed_index: usize,
    pub error: String,
}

/// Directed graph of single generation steps. Edge `(a, b)` means the
/// generator produced `b` from `a`. Keys are canonical sentences.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EntailmentGraph {
    pub nodes: BTreeMap<String, GraphNode>,
    pub edges: BTreeSet<(String, String)>,
    pub chains: Vec<StoredChain>,
    pub skipped: Vec<SkippedChain>,
    #[serde(skip)]
    out: BTreeMap<String, String>,
}

impl EntailmentGraph {
    pub fn new() -> Self {
        Self::default()
    }

    fn node(&mut self, key: &str, tokens: &[String]) -> &mut GraphNode {
        self.nodes.entry(key.to_string()).or_insert_with(|| GraphNode {
            tokens: tokens.to_vec(),
            seed: false,
            fixed_point: false,
        })
    }

    fn add_edge(&mut self, from: &str, to: &str) -> Result<()> {
        if self.nodes.get(from).is_some_and(|n| n.fixed_point) {
            return Err(Error::OutDegree(from.to_string()));
        }
        match self.out.get(from) {
            Some(existing) if existing != to => Err(Error::OutDegree(from.to_string())),
            Some(_) => Ok(()),
            None => {
                self.out.insert(from.to_string(), to.to_string());
                self.edges.insert((from.to_string(), to.to_string()));
                Ok(())
            }
        }
    }

    /// Merges one chain: its sentences become nodes, consecutive pairs
    /// become edges, and a sentence that generated itself is marked as a
    /// fixed point.
    pub fn add_chain(&mut self, seed_index: usize, chain: &InferenceChain, canon: &dyn Canonicalizer) -> Result<()> {
        let keys: Vec<String> = chain.sentences.iter().map(|s| canon.canonical(s)).collect();
        for (k, s) in keys.iter().zip(&chain.sentences) {
            self.node(k, s);
        }
        self.nodes.get_mut(&keys[0]).expect("just inserted").seed = true;
        for w in keys.windows(2) {
            self.add_edge(&w[0], &w[1])?;
        }
        let last = keys.last().expect("chain is never empty");
        if let Some(closing) = &chain.closing {
            if canon.canonical(closing) == *last {
                if self.out.contains_key(last) {
                    return Err(Error::OutDegree(last.clone()));
                }
                self.nodes.get_mut(last).expect("present").fixed_point = true;
            }
        }
        self.chains.push(StoredChain {
            seed_index,
            nodes: keys,
            stop: chain.stop,
        });
        Ok(())
    }

    pub fn out_degree(&self, key: &str) -> usize {
        self.edges.iter().filter(|(a, _)| a == key).count()
    }
}

/// Runs chains from every seed in lockstep, batching generator calls and
/// memoizing outputs by canonical sentence. A chain whose generator call
/// fails is skipped (and listed in [`EntailmentGraph::skipped`]).
pub fn build_graph(
    seeds: &[Vec<String>],
    generator: &mut dyn Generator,
    max_len: usize,
    canon: &dyn Canonicalizer,
) -> Result<EntailmentGraph> {
    if seeds.is_empty() {
        return Err(Error::EmptyDataset("no seed sentences".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidArgument("max_len must be at least 1".into()));
    }
    let mut graph = EntailmentGraph::new();
    let mut finished: Vec<Option<Result<InferenceChain, String>>> = vec![None; seeds.len()];
    let mut active: Vec<(usize, Growing)> = Vec::new();
    for (i, s) in seeds.iter().enumerate() {
        if let Err(e) = check_seed(s, max_len) {
            finished[i] = Some(Err(e.to_string()));
            continue;
        }
        let g = Growing::new(s.clone(), canon);
        match g.at_limit(max_len) {
            Advance::Done(stop, c) => finished[i] = Some(Ok(g.finish(stop, c))),
            Advance::Continue => active.push((i, g)),
        }
    }
    let mut cache: HashMap<String, Result<Vec<String>, String>> = HashMap::new();
    while !active.is_empty() {
        let mut pending_keys = Vec::new();
        let mut pending = Vec::new();
        for (_, g) in &active {
            if !cache.contains_key(&g.last) && !pending_keys.contains(&g.last) {
                pending_keys.push(g.last.clone());
                pending.push(g.chain.last().expect("non-empty").clone());
            }
        }
        if !pending.is_empty() {
            let outs = generator.generate_batch(&pending);
            for (k, o) in pending_keys.into_iter().zip(outs) {
                cache.insert(k, o.map_err(|e| e.to_string()));
            }
        }
        let mut still = Vec::with_capacity(active.len());
        for (i, mut g) in active {
            match cache[&g.last].clone() {
                Err(e) => {
                    log::warn!("chain from seed {i} skipped: {e}");
                    finished[i] = Some(Err(e));
                }
                Ok(next) => match g.push(next, canon, max_len) {
                    Advance::Continue => still.push((i, g)),
                    Advance::Done(stop, c) => finished[i] = Some(Ok(g.finish(stop, c))),
                },
            }
        }
        active = still;
    }
    for (i, f) in finished.into_iter().enumerate() {
        match f.expect("every seed finishes") {
            Ok(chain) => graph.add_chain(i, &chain, canon)?,
            Err(error) => graph.skipped.push(SkippedChain { seed_index: i, error }),
        }
    }
    Ok(graph)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    /// in-degree → number of nodes with it.
    pub in_degree_histogram: BTreeMap<usize, usize>,
    /// Nodes with in-degree ≥ 2.
    pub convergence_nodes: usize,
    pub fixed_points: usize,
    pub longest_chain: usize,
    pub chains: usize,
    pub skipped_chains: usize,
    /// Weakly connected component sizes, largest first.
    pub component_sizes: Vec<usize>,
}

pub fn graph_stats(graph: &EntailmentGraph) -> GraphStats {
    let index: HashMap<&str, usize> = graph.nodes.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
    let mut in_deg = vec![0usize; index.len()];
    let mut uf = UnionFind::<usize>::new(index.len());
    for (a, b) in &graph.edges {
        let (ia, ib) = (index[a.as_str()], index[b.as_str()]);
        in_deg[ib] += 1;
        uf.union(ia, ib);
    }
    let mut in_degree_histogram = BTreeMap::new();
    for d in &in_deg {
        *in_degree_histogram.entry(*d).or_insert(0) += 1;
    }
    let mut comp: HashMap<usize, usize> = HashMap::new();
    for i in 0..index.len() {
        *comp.entry(uf.find(i)).or_insert(0) += 1;
    }
    let mut component_sizes: Vec<usize> = comp.into_values().collect();
    component_sizes.sort_unstable_by(|a, b| b.cmp(a));
    GraphStats {
        nodes: graph.nodes.len(),
        edges: graph.edges.len(),
        in_degree_histogram,
        convergence_nodes: in_deg.iter().filter(|d| **d >= 2).count(),
        fixed_points: graph.nodes.values().filter(|n| n.fixed_point).count(),
        longest_chain: graph.chains.iter().map(|c| c.nodes.len()).max().unwrap_or(0),
        chains: graph.chains.len(),
        skipped_chains: graph.skipped.len(),
        component_sizes,
    }
}

/// Serializes a graph to some text format.
pub trait GraphExporter: Send + Sync {
    fn extension(&self) -> &'static str;
    fn write(&self, graph: &EntailmentGraph, out: &mut dyn Write) -> Result<()>;
}

pub struct DotExporter;
pub struct JsonlExporter;

fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            _ => out.push(c),
        }
    }
    out
}

impl GraphExporter for DotExporter {
    fn extension(&self) -> &'static str {
        "dot"
    }

    fn write(&self, graph: &EntailmentGraph, out: &mut dyn Write) -> Result<()> {
        let ids: HashMap<&str, usize> = graph.nodes.keys().enumerate().map(|(i, k)| (k.as_str(), i)).collect();
        writeln!(out, "digraph entailment {{")?;
        writeln!(out, "  node [fontname=\"Helvetica\"];")?;
        for (i, (key, node)) in graph.nodes.iter().enumerate() {
            let style = if node.seed {
                "shape=box, style=filled, fillcolor=\"#cfe2f3\""
            } else {
                "shape=ellipse"
            };
            let periph = if node.fixed_point { ", peripheries=2" } else { "" };
            writeln!(out, "  n{i} [label=\"{}\", {style}{periph}];", dot_escape(key))?;
        }
        for (a, b) in &graph.edges {
            writeln!(out, "  n{} -> n{};", ids[a.as_str()], ids[b.as_str()])?;
        }
        writeln!(out, "}}")?;
        Ok(())
    }
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum JsonlRecord<'a> {
    Node {
        id: &'a str,
        tokens: &'a [String],
        seed: bool,
        fixed_point: bool,
        chains: Vec<usize>,
    },
    Edge {
        from: &'a str,
        to: &'a str,
        chains: Vec<usize>,
    },
}

impl GraphExporter for JsonlExporter {
    fn extension(&self) -> &'static str {
        "jsonl"
    }

    fn write(&self, graph: &EntailmentGraph, out: &mut dyn Write) -> Result<()> {
        // Provenance: which seed chains pass through each node and edge.
        let mut node_chains: HashMap<&str, BTreeSet<usize>> = HashMap::new();
        let mut edge_chains: HashMap<(&str, &str), BTreeSet<usize>> = HashMap::new();
        for c in &graph.chains {
            for k in &c.nodes {
                node_chains.entry(k).or_default().insert(c.seed_index);
            }
            for w in c.nodes.windows(2) {
                edge_chains.entry((&w[0], &w[1])).or_default().insert(c.seed_index);
            }
        }
        let list = |s: Option<&BTreeSet<usize>>| s.map(|s| s.iter().copied().collect()).unwrap_or_default();
        for (key, node) in &graph.nodes {
            let rec = JsonlRecord::Node {
                id: key,
                tokens: &node.tokens,
                seed: node.seed,
                fixed_point: node.fixed_point,
                chains: list(node_chains.get(key.as_str())),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        for (a, b) in &graph.edges {
            let rec = JsonlRecord::Edge {
                from: a,
                to: b,
                chains: list(edge_chains.get(&(a.as_str(), b.as_str()))),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn graph_exporters() -> Registry<dyn GraphExporter> {
    let mut r: Registry<dyn GraphExporter> = Registry::new("graph format");
    r.register("dot", Box::new(DotExporter))
        .register("jsonl", Box::new(JsonlExporter));
    r
}

pub fn export_graph(graph: &EntailmentGraph, format: &str, out: &mut dyn Write) -> Result<()> {
    graph_exporters().get(format)?.write(graph, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(String::from).collect()
    }

    fn scripted(map: &[(&str, &str)]) -> impl FnMut(&[String]) -> Result<Vec<String>> {
        let m: HashMap<String, String> = map.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        move |x: &[String]| {
            m.get(&x.join(" "))
                .map(|y| s(y))
                .ok_or_else(|| Error::InvalidArgument(format!("no script for {:?}", x.join(" "))))
        }
    }

    #[test]
    fn identity_stops_immediately() {
        let mut id = |x: &[String]| -> Result<Vec<String>> { Ok(x.to_vec()) };
        let c = generate_chain(&s("a man"), &mut id, 10).unwrap();
        assert_eq!(c.sentences, vec![s("a man")]);
        assert_eq!(c.stop, StopReason::Repeat);
    }

    #[test]
    fn scripted_cycle() {
        let mut g = scripted(&[("a", "b"), ("b", "c"), ("c", "b")]);
        let c = generate_chain(&s("a"), &mut g, 10).unwrap();
        assert_eq!(c.sentences, vec![s("a"), s("b"), s("c")]);
        assert_eq!(c.stop, StopReason::Repeat);
        assert_eq!(c.to_string(), "a → b → c");
    }

    #[test]
    fn unbounded_hits_max_len() {
        let mut g = |x: &[String]| -> Result<Vec<String>> { Ok(vec![format!("{}1", x[0])]) };
        let c = generate_chain(&s("a"), &mut g, 5).unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.stop, StopReason::MaxLength);
        assert!(generate_chain(&s("a"), &mut g, 0).is_err());
    }

    #[test]
    fn generator_failure_keeps_partial_chain() {
        let mut g = scripted(&[("a", "b")]);
        match generate_chain(&s("a"), &mut g, 10) {
            Err(Error::Generator { partial, .. }) => assert_eq!(partial, vec![s("a"), s("b")]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn whitespace_does_not_defeat_repeat_check() {
        let mut g = |_: &[String]| -> Result<Vec<String>> { Ok(vec![" a ".into(), "".into(), "man".into()]) };
        let c = generate_chain(&s("a man"), &mut g, 10).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn loose_canon_drops_article_and_case() {
        let l = LooseCanon;
        assert_eq!(l.canonical(&s("The people are smiling .")), l.canonical(&s("people are smiling .")));
        assert_ne!(ExactCanon.canonical(&s("The people")), ExactCanon.canonical(&s("people")));
        assert_eq!(l.canonical(&s("A")), "a");
    }

    #[test]
    fn convergence_fixture() {
        let mut g = scripted(&[("a", "b"), ("d", "b"), ("b", "b")]);
        let graph = build_graph(&[s("a"), s("d")], &mut g, 10, &ExactCanon).unwrap();
        assert_eq!(graph.nodes.keys().collect::<Vec<_>>(), ["a", "b", "d"]);
        let edges: Vec<_> = graph.edges.iter().cloned().collect();
        assert_eq!(edges, [("a".into(), "b".into()), ("d".into(), "b".into())]);
        assert!(graph.nodes["b"].fixed_point);
        assert!(graph.nodes["a"].seed && !graph.nodes["b"].seed);
        let st = graph_stats(&graph);
        assert_eq!((st.nodes, st.edges, st.convergence_nodes, st.longest_chain), (3, 2, 1, 2));
        assert_eq!(st.fixed_points, 1);
        assert_eq!(st.component_sizes, vec![3]);
        assert_eq!(st.in_degree_histogram, BTreeMap::from([(0, 2), (2, 1)]));
    }

    #[test]
    fn straight_chain_fixture() {
        let mut g = scripted(&[("a", "b"), ("b", "c"), ("c", "c")]);
        let graph = build_graph(&[s("a")], &mut g, 10, &ExactCanon).unwrap();
        let st = graph_stats(&graph);
        assert_eq!((st.nodes, st.edges, st.convergence_nodes, st.longest_chain), (3, 2, 0, 3));
    }

    #[test]
    fn identity_graph_and_empty_stats() {
        let mut id = |x: &[String]| -> Result<Vec<String>> { Ok(x.to_vec()) };
        let graph = build_graph(&[s("x y")], &mut id, 10, &ExactCanon).unwrap();
        assert_eq!((graph.nodes.len(), graph.edges.len()), (1, 0));
        assert_eq!(graph_stats(&EntailmentGraph::new()), GraphStats::default());
        assert!(build_graph(&[], &mut id, 10, &ExactCanon).is_err());
    }

    #[test]
    fn failing_chain_is_skipped() {
        let mut g = scripted(&[("a", "b"), ("b", "b")]);
        let graph = build_graph(&[s("a"), s("zzz")], &mut g, 10, &ExactCanon).unwrap();
        assert_eq!(graph.chains.len(), 1);
        assert_eq!(graph.skipped.len(), 1);
        assert_eq!(graph.skipped[0].seed_index, 1);
    }

    #[test]
    fn conflicting_out_edge_is_an_error() {
        let mut graph = EntailmentGraph::new();
        let c1 = InferenceChain {
            sentences: vec![s("a"), s("b")],
            stop: StopReason::MaxLength,
            closing: None,
        };
        let c2 = InferenceChain {
            sentences: vec![s("a"), s("c")],
            stop: StopReason::MaxLength,
            closing: None,
        };
        graph.add_chain(0, &c1, &ExactCanon).unwrap();
        assert!(matches!(graph.add_chain(1, &c2, &ExactCanon), Err(Error::OutDegree(_))));
    }

    #[test]
    fn dot_export() {
        let mut g = scripted(&[("say \"hi\"", "b"), ("b", "b")]);
        let graph = build_graph(&[s("say \"hi\"")], &mut g, 10, &ExactCanon).unwrap();
        let mut a = Vec::new();
        export_graph(&graph, "dot", &mut a).unwrap();
        let text = String::from_utf8(a.clone()).unwrap();
        assert_eq!(text.matches("->").count(), 1);
        assert!(text.contains(r#"label="say \"hi\"""#));
        let mut b = Vec::new();
        export_graph(&graph, "dot", &mut b).unwrap();
        assert_eq!(a, b);
        assert!(export_graph(&graph, "gml", &mut b).is_err());
    }

    #[test]
    fn jsonl_export_nodes_then_edges() {
        let mut g = scripted(&[("a", "b"), ("d", "b"), ("b", "b")]);
        let graph = build_graph(&[s("a"), s("d")], &mut g, 10, &ExactCanon).unwrap();
        let mut buf = Vec::new();
        export_graph(&graph, "jsonl", &mut buf).unwrap();
        let lines: Vec<serde_json::Value> = String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let kinds: Vec<&str> = lines.iter().map(|v| v["type"].as_str().unwrap()).collect();
        assert_eq!(kinds, ["node", "node", "node", "edge", "edge"]);
        assert_eq!(lines[1]["chains"], serde_json::json!([0, 1]));
        assert_eq!(lines[4]["chains"], serde_json::json!([1]));
    }

    proptest! {
        #[test]
        fn random_scripts_terminate(
            script in prop::collection::vec(0usize..50, 50),
            seeds in prop::collection::vec(0usize..50, 1..6),
            max_len in 1usize..15,
        ) {
            let name = |i: usize| format!("s{i}");
            let mut g = |x: &[String]| -> Result<Vec<String>> {
                let i: usize = x[0][1..].parse().unwrap();
                Ok(vec![name(script[i])])
            };
            let seed_s: Vec<Vec<String>> = seeds.iter().map(|i| vec![name(*i)]).collect();
            let graph = build_graph(&seed_s, &mut g, max_len, &ExactCanon).unwrap();
            for (i, seed) in seed_s.iter().enumerate() {
                let c = generate_chain(seed, &mut g, max_len).unwrap();
                prop_assert!(c.len() >= 1 && c.len() <= max_len);
                let uniq: HashSet<_> = c.sentences.iter().collect();
                prop_assert_eq!(uniq.len(), c.len());
                let keys: Vec<String> = c.sentences.iter().map(|s| s.join(" ")).collect();
                prop_assert_eq!(&graph.chains[i].nodes, &keys);
            }
            for k in graph.nodes.keys() {
                prop_assert!(graph.out_degree(k) <= 1);
            }
        }
    }
}
