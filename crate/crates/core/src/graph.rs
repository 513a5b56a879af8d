//! The service search graph: a bipartite graph of query and service nodes
//! joined by interaction edges (click-through activity) and correlation edges
//! (shared city/brand/category), plus the exposure-based head/tail split with
//! query-side induced subgraphs.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::io::{CorrelationRecord, CorrelationType, InteractionRecord, NodeKind, NodeRecord};
use crate::{Error, Result};

/// Which encoder a query belongs to after the exposure split.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Head,
    Tail,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Head => "head",
            Side::Tail => "tail",
        }
    }
}

/// Edge features share one dense layout so both edge kinds feed the same
/// attention machinery: [ctr, log1p(clicks), city, brand, category].
pub const EDGE_DIM: usize = 5;

pub fn interaction_features(ctr: f64, clicks: u64, include_log_clicks: bool) -> Vec<f64> {
    let volume = if include_log_clicks { (1.0 + clicks as f64).ln() } else { 0.0 };
    vec![ctr, volume, 0.0, 0.0, 0.0]
}

pub fn correlation_features(ctype: CorrelationType) -> Vec<f64> {
    let mut f = vec![0.0; EDGE_DIM];
    f[2 + ctype as usize] = 1.0;
    f
}

#[derive(Clone, Debug)]
pub struct Node {
    pub id: String,
    pub kind: NodeKind,
    pub attributes: Vec<f64>,
    pub exposure: Option<u64>,
    pub intention_id: Option<String>,
    /// Index of this node in the full graph; stable across induced subgraphs
    /// so embedding-table rows stay aligned.
    pub uid: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Interaction,
    Correlation,
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub query: usize,
    pub service: usize,
    pub kind: EdgeKind,
    pub features: Vec<f64>,
}

/// Counters emitted alongside a build so data problems are visible.
#[derive(Clone, Debug, Default, Serialize)]
pub struct BuildReport {
    pub n_queries: usize,
    pub n_services: usize,
    pub n_interaction_edges: usize,
    pub n_correlation_edges: usize,
    pub n_isolated_nodes: usize,
    pub n_duplicate_interactions: usize,
    pub n_conflicting_correlations: usize,
}

/// Immutable bipartite graph. Adjacency stores (neighbor node index, edge
/// index) pairs for both endpoints of every edge.
#[derive(Clone, Debug)]
pub struct ServiceSearchGraph {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<(usize, usize)>>,
    index: BTreeMap<String, usize>,
    /// Raw correlation records (deduplicated, conflict-merged) retained for
    /// anchor-pair mining.
    correlations: Vec<(usize, usize, CorrelationType)>,
}

impl ServiceSearchGraph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn lookup(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn correlations(&self) -> &[(usize, usize, CorrelationType)] {
        &self.correlations
    }

    pub fn query_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Query)
    }

    pub fn service_indices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Service)
    }

    fn assert_bipartite(&self) -> Result<()> {
        for e in &self.edges {
            if self.nodes[e.query].kind != NodeKind::Query
                || self.nodes[e.service].kind != NodeKind::Service
            {
                return Err(Error::Graph(format!(
                    "edge {} -> {} is not query -> service",
                    self.nodes[e.query].id, self.nodes[e.service].id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BuildOptions {
    /// Zero out the log(1+clicks) channel, leaving CTR as the only
    /// interaction feature.
    pub include_log_clicks: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions { include_log_clicks: true }
    }
}

pub fn build_graph(
    nodes: &[NodeRecord],
    interactions: &[InteractionRecord],
    correlations: &[CorrelationRecord],
    opts: BuildOptions,
) -> Result<(ServiceSearchGraph, BuildReport)> {
    let mut index = BTreeMap::new();
    let mut out_nodes = Vec::with_capacity(nodes.len());
    let mut attr_len: Option<usize> = None;
    for (uid, r) in nodes.iter().enumerate() {
        if index.insert(r.id.clone(), uid).is_some() {
            return Err(Error::Graph(format!("duplicate node id {}", r.id)));
        }
        match attr_len {
            None => attr_len = Some(r.features.len()),
            Some(n) if n != r.features.len() => {
                return Err(Error::Graph(format!(
                    "node {} has {} attributes, expected {n}",
                    r.id,
                    r.features.len()
                )))
            }
            _ => {}
        }
        match (r.kind, r.exposure) {
            (NodeKind::Query, None) => {
                return Err(Error::Graph(format!("query {} lacks exposure", r.id)))
            }
            (NodeKind::Service, Some(_)) => {
                return Err(Error::Graph(format!("service {} must not carry exposure", r.id)))
            }
            _ => {}
        }
        out_nodes.push(Node {
            id: r.id.clone(),
            kind: r.kind,
            attributes: r.features.clone(),
            exposure: r.exposure,
            intention_id: r.intention_id.clone(),
            uid,
        });
    }

    let mut report = BuildReport {
        n_queries: out_nodes.iter().filter(|n| n.kind == NodeKind::Query).count(),
        n_services: out_nodes.iter().filter(|n| n.kind == NodeKind::Service).count(),
        ..BuildReport::default()
    };

    let resolve = |id: &str, role: NodeKind| -> Result<usize> {
        let i = *index
            .get(id)
            .ok_or_else(|| Error::Graph(format!("dangling node id {id}")))?;
        if out_nodes[i].kind != role {
            return Err(Error::Graph(format!(
                "{id} used as {role:?} but declared {:?}",
                out_nodes[i].kind
            )));
        }
        Ok(i)
    };

    // Duplicate interaction records aggregate by summing before the CTR
    // computation.
    let mut agg: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
    for r in interactions {
        let q = resolve(&r.query_id, NodeKind::Query)?;
        let s = resolve(&r.service_id, NodeKind::Service)?;
        let slot = agg.entry((q, s)).or_insert((0, 0));
        if slot != &(0, 0) {
            report.n_duplicate_interactions += 1;
        }
        slot.0 += r.clicks;
        slot.1 += r.impressions;
    }

    let mut edges = Vec::new();
    for (&(q, s), &(clicks, impressions)) in &agg {
        if impressions == 0 {
            return Err(Error::Graph(format!(
                "pair ({}, {}) has clicks with zero impressions",
                out_nodes[q].id, out_nodes[s].id
            )));
        }
        let ctr = clicks as f64 / impressions as f64;
        if !(0.0..=1.0).contains(&ctr) {
            return Err(Error::Graph(format!(
                "pair ({}, {}) has ctr {ctr} outside [0,1]",
                out_nodes[q].id, out_nodes[s].id
            )));
        }
        edges.push(Edge {
            query: q,
            service: s,
            kind: EdgeKind::Interaction,
            features: interaction_features(ctr, clicks, opts.include_log_clicks),
        });
    }
    report.n_interaction_edges = edges.len();

    // Conflicting correlation types for one pair merge by priority
    // (city > brand > category); exact duplicates collapse silently.
    let mut corr: BTreeMap<(usize, usize), CorrelationType> = BTreeMap::new();
    for r in correlations {
        let q = resolve(&r.query_id, NodeKind::Query)?;
        let s = resolve(&r.service_id, NodeKind::Service)?;
        corr.entry((q, s))
            .and_modify(|t| {
                if r.ctype != *t {
                    report.n_conflicting_correlations += 1;
                    *t = (*t).min(r.ctype);
                }
            })
            .or_insert(r.ctype);
    }
    let correlations_kept: Vec<(usize, usize, CorrelationType)> =
        corr.iter().map(|(&(q, s), &t)| (q, s, t)).collect();
    for &(q, s, t) in &correlations_kept {
        edges.push(Edge {
            query: q,
            service: s,
            kind: EdgeKind::Correlation,
            features: correlation_features(t),
        });
        report.n_correlation_edges += 1;
    }

    let mut adjacency = vec![Vec::new(); out_nodes.len()];
    for (ei, e) in edges.iter().enumerate() {
        adjacency[e.query].push((e.service, ei));
        adjacency[e.service].push((e.query, ei));
    }
    report.n_isolated_nodes = adjacency.iter().filter(|a| a.is_empty()).count();

    let graph = ServiceSearchGraph {
        nodes: out_nodes,
        edges,
        adjacency,
        index,
        correlations: correlations_kept,
    };
    graph.assert_bipartite()?;
    Ok((graph, report))
}

/// Exposure-based partition of queries plus the induced subgraphs. Services
/// may appear in both subgraphs; queries in exactly one.
#[derive(Clone, Debug)]
pub struct HeadTailSplit {
    pub head_queries: BTreeSet<String>,
    pub tail_queries: BTreeSet<String>,
    pub head_graph: ServiceSearchGraph,
    pub tail_graph: ServiceSearchGraph,
}

impl HeadTailSplit {
    pub fn side_of(&self, query_id: &str) -> Option<Side> {
        if self.head_queries.contains(query_id) {
            Some(Side::Head)
        } else if self.tail_queries.contains(query_id) {
            Some(Side::Tail)
        } else {
            None
        }
    }

    pub fn graph_of(&self, side: Side) -> &ServiceSearchGraph {
        match side {
            Side::Head => &self.head_graph,
            Side::Tail => &self.tail_graph,
        }
    }
}

/// Turn a head fraction into a count, clamped to [1, n_queries-1].
pub fn head_count_for_fraction(n_queries: usize, fraction: f64) -> usize {
    let k = (n_queries as f64 * fraction).round() as usize;
    k.clamp(1, n_queries.saturating_sub(1).max(1))
}

pub fn split_head_tail(graph: &ServiceSearchGraph, head_count: usize) -> Result<HeadTailSplit> {
    let mut queries: Vec<usize> = graph.query_indices().collect();
    if head_count == 0 {
        return Err(Error::Graph("head count must be at least 1".to_string()));
    }
    if head_count >= queries.len() {
        return Err(Error::Graph(format!(
            "head count {head_count} must be smaller than the query count {}",
            queries.len()
        )));
    }
    // Ties in exposure break by lexicographic id so the split is stable.
    queries.sort_by(|&a, &b| {
        let (na, nb) = (graph.node(a), graph.node(b));
        nb.exposure
            .cmp(&na.exposure)
            .then_with(|| na.id.cmp(&nb.id))
    });
    let head_set: BTreeSet<usize> = queries[..head_count].iter().copied().collect();

    let head_queries: BTreeSet<String> =
        head_set.iter().map(|&i| graph.node(i).id.clone()).collect();
    let tail_queries: BTreeSet<String> = queries[head_count..]
        .iter()
        .map(|&i| graph.node(i).id.clone())
        .collect();

    let head_graph = induce(graph, &head_set)?;
    let tail_set: BTreeSet<usize> = queries[head_count..].iter().copied().collect();
    let tail_graph = induce(graph, &tail_set)?;

    Ok(HeadTailSplit { head_queries, tail_queries, head_graph, tail_graph })
}

/// Query-side induction: keep the given queries, every edge whose query
/// endpoint is kept, and every service touched by a kept edge.
fn induce(graph: &ServiceSearchGraph, queries: &BTreeSet<usize>) -> Result<ServiceSearchGraph> {
    let kept_edges: Vec<&Edge> =
        graph.edges().iter().filter(|e| queries.contains(&e.query)).collect();
    let mut kept_nodes: BTreeSet<usize> = queries.clone();
    for e in &kept_edges {
        kept_nodes.insert(e.service);
    }

    let mut remap = BTreeMap::new();
    let mut nodes = Vec::with_capacity(kept_nodes.len());
    let mut index = BTreeMap::new();
    for &old in &kept_nodes {
        let node = graph.node(old).clone();
        remap.insert(old, nodes.len());
        index.insert(node.id.clone(), nodes.len());
        nodes.push(node);
    }

    let edges: Vec<Edge> = kept_edges
        .iter()
        .map(|e| Edge {
            query: remap[&e.query],
            service: remap[&e.service],
            kind: e.kind,
            features: e.features.clone(),
        })
        .collect();

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for (ei, e) in edges.iter().enumerate() {
        adjacency[e.query].push((e.service, ei));
        adjacency[e.service].push((e.query, ei));
    }

    let correlations: Vec<(usize, usize, CorrelationType)> = graph
        .correlations()
        .iter()
        .filter(|(q, _, _)| queries.contains(q))
        .map(|&(q, s, t)| (remap[&q], remap[&s], t))
        .collect();

    let sub = ServiceSearchGraph { nodes, edges, adjacency, index, correlations };
    sub.assert_bipartite()?;
    Ok(sub)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn query(id: &str, exposure: u64) -> NodeRecord {
        NodeRecord {
            id: id.into(),
            kind: NodeKind::Query,
            features: vec![0.0; 3],
            exposure: Some(exposure),
            intention_id: None,
        }
    }

    fn service(id: &str) -> NodeRecord {
        NodeRecord {
            id: id.into(),
            kind: NodeKind::Service,
            features: vec![0.0; 3],
            exposure: None,
            intention_id: None,
        }
    }

    fn interaction(q: &str, s: &str, clicks: u64, impressions: u64) -> InteractionRecord {
        InteractionRecord {
            query_id: q.into(),
            service_id: s.into(),
            clicks,
            impressions,
        }
    }

    fn correlation(q: &str, s: &str, t: CorrelationType) -> CorrelationRecord {
        CorrelationRecord { query_id: q.into(), service_id: s.into(), ctype: t }
    }

    #[test]
    fn single_interaction_edge_gets_ratio_ctr() {
        let (g, report) = build_graph(
            &[query("q1", 10), service("s1")],
            &[interaction("q1", "s1", 3, 10)],
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].features[0], 0.3);
        assert_eq!(report.n_interaction_edges, 1);
    }

    #[test]
    fn interaction_and_correlation_make_two_edges() {
        let (g, _) = build_graph(
            &[query("q1", 10), service("s1")],
            &[interaction("q1", "s1", 1, 2)],
            &[correlation("q1", "s1", CorrelationType::Brand)],
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.edges().len(), 2);
        let kinds: Vec<EdgeKind> = g.edges().iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EdgeKind::Interaction));
        assert!(kinds.contains(&EdgeKind::Correlation));
        let corr = g.edges().iter().find(|e| e.kind == EdgeKind::Correlation).unwrap();
        assert_eq!(corr.features, vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn duplicate_interactions_aggregate_before_ctr() {
        let (g, report) = build_graph(
            &[query("q1", 10), service("s1")],
            &[interaction("q1", "s1", 1, 4), interaction("q1", "s1", 2, 6)],
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].features[0], 0.3);
        assert_eq!(report.n_duplicate_interactions, 1);
    }

    #[test]
    fn isolated_service_is_kept_and_counted() {
        let (g, report) = build_graph(
            &[query("q1", 10), service("s1"), service("s2")],
            &[interaction("q1", "s1", 1, 2)],
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.nodes().len(), 3);
        assert_eq!(report.n_isolated_nodes, 1);
    }

    #[test]
    fn build_rejects_bad_records() {
        let base = [query("q1", 10), service("s1")];
        assert!(build_graph(
            &base,
            &[interaction("q1", "missing", 1, 2)],
            &[],
            BuildOptions::default()
        )
        .is_err());
        assert!(build_graph(
            &base,
            &[interaction("q1", "s1", 1, 0)],
            &[],
            BuildOptions::default()
        )
        .is_err());
        assert!(build_graph(
            &[query("q1", 10), NodeRecord { exposure: Some(5), ..service("s1") }],
            &[],
            &[],
            BuildOptions::default()
        )
        .is_err());
    }

    #[test]
    fn conflicting_correlation_types_merge_by_priority() {
        let (g, report) = build_graph(
            &[query("q1", 10), service("s1")],
            &[],
            &[
                correlation("q1", "s1", CorrelationType::Category),
                correlation("q1", "s1", CorrelationType::City),
            ],
            BuildOptions::default(),
        )
        .unwrap();
        assert_eq!(g.edges().len(), 1);
        assert_eq!(g.edges()[0].features, vec![0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(report.n_conflicting_correlations, 1);
    }

    #[test]
    fn split_takes_top_exposure_and_breaks_ties_by_id() {
        let (g, _) = build_graph(
            &[query("a", 100), query("b", 10), query("c", 1), service("s1")],
            &[
                interaction("a", "s1", 1, 2),
                interaction("b", "s1", 1, 2),
                interaction("c", "s1", 1, 2),
            ],
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        let split = split_head_tail(&g, 1).unwrap();
        assert!(split.head_queries.contains("a"));
        assert_eq!(split.tail_queries.len(), 2);
        assert_eq!(split.side_of("a"), Some(Side::Head));
        assert_eq!(split.side_of("c"), Some(Side::Tail));

        // Shared service appears in both induced subgraphs.
        assert!(split.head_graph.lookup("s1").is_some());
        assert!(split.tail_graph.lookup("s1").is_some());
        // Queries appear on exactly one side.
        assert!(split.head_graph.lookup("b").is_none());
        assert!(split.tail_graph.lookup("a").is_none());
    }

    #[test]
    fn split_rejects_degenerate_head_counts() {
        let (g, _) = build_graph(
            &[query("a", 2), query("b", 1), service("s1")],
            &[interaction("a", "s1", 1, 2)],
            &[],
            BuildOptions::default(),
        )
        .unwrap();
        assert!(split_head_tail(&g, 0).is_err());
        assert!(split_head_tail(&g, 2).is_err());
    }

    #[test]
    fn induced_edges_follow_the_query_side() {
        let (g, _) = build_graph(
            &[query("a", 100), query("b", 1), service("s1"), service("s2")],
            &[interaction("a", "s1", 1, 2), interaction("b", "s2", 1, 2)],
            &[correlation("b", "s1", CorrelationType::City)],
            BuildOptions::default(),
        )
        .unwrap();
        let split = split_head_tail(&g, 1).unwrap();
        assert_eq!(split.head_graph.edges().len(), 1);
        assert_eq!(split.tail_graph.edges().len(), 2);
        // s1 reaches the tail graph only through b's correlation edge.
        assert!(split.tail_graph.lookup("s1").is_some());
        assert!(split.head_graph.lookup("s2").is_none());
        // uids still point at the full graph.
        let s1_tail = split.tail_graph.lookup("s1").unwrap();
        assert_eq!(split.tail_graph.node(s1_tail).uid, g.lookup("s1").unwrap());
    }

    #[test]
    fn head_count_fraction_clamps() {
        assert_eq!(head_count_for_fraction(1000, 0.01), 10);
        assert_eq!(head_count_for_fraction(10, 0.0), 1);
        assert_eq!(head_count_for_fraction(10, 1.0), 9);
    }
}
