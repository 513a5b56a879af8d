//! Contrastive objectives for pre-training, all built on InfoNCE with
//! in-batch negatives:
//!
//! - KTCL (knowledge transfer): tail queries pull toward their mined head
//!   anchor queries; services co-encoded by both encoders align symmetrically.
//! - SECL (structure enhancement): each layer-l state pulls toward the same
//!   node's layer-0 anchor against other batch members.
//! - IGCL (intention generalization): node readouts pull toward the tree
//!   embeddings of their intention-ancestor path against same-level
//!   negatives, hard ones from the same tree, easy ones from other trees.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::forest::IntentionForest;
use crate::graph::{HeadTailSplit, ServiceSearchGraph};
use crate::tape::{Tape, Var};
use crate::{Error, Result};

/// A (tail query, head query) anchor pair: the head shares at least one
/// correlation value with the tail and maximizes attribute relevance, with
/// exposure and id as deterministic tie breaks.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorPair {
    pub tail_id: String,
    pub head_id: String,
    pub relevance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MiningReport {
    pub n_pairs: usize,
    /// Tail queries sharing no correlation value with any head.
    pub n_skipped_tails: usize,
}

fn cosine_f64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

/// Relevance ties closer than this resolve by exposure, then id.
const RELEVANCE_TIE: f64 = 1e-12;

/// For every tail query, pick the best head query among those sharing a
/// correlation value: max attribute-cosine relevance, ties broken by max
/// exposure, then lexicographic id. Tails with no candidate are skipped.
pub fn mine_anchor_pairs(
    graph: &ServiceSearchGraph,
    split: &HeadTailSplit,
) -> (Vec<AnchorPair>, MiningReport) {
    use std::collections::{BTreeMap, BTreeSet};

    // (service, correlation type) → head queries holding that record.
    let mut by_value: BTreeMap<(usize, u8), Vec<usize>> = BTreeMap::new();
    let mut tail_records: BTreeMap<usize, Vec<(usize, u8)>> = BTreeMap::new();
    for &(q, s, t) in graph.correlations() {
        let id = &graph.node(q).id;
        if split.head_queries.contains(id) {
            by_value.entry((s, t as u8)).or_default().push(q);
        } else if split.tail_queries.contains(id) {
            tail_records.entry(q).or_default().push((s, t as u8));
        }
    }

    let mut pairs = Vec::new();
    let mut report = MiningReport::default();
    for tail_id in &split.tail_queries {
        let Some(tail_idx) = graph.lookup(tail_id) else { continue };
        let mut candidates: BTreeSet<usize> = BTreeSet::new();
        if let Some(records) = tail_records.get(&tail_idx) {
            for key in records {
                if let Some(heads) = by_value.get(key) {
                    candidates.extend(heads.iter().copied());
                }
            }
        }
        if candidates.is_empty() {
            report.n_skipped_tails += 1;
            continue;
        }
        let tail_attrs = &graph.node(tail_idx).attributes;
        let scored: Vec<(usize, f64)> = candidates
            .iter()
            .map(|&h| (h, cosine_f64(tail_attrs, &graph.node(h).attributes)))
            .collect();
        let best_rel = scored.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
        let winner = scored
            .iter()
            .filter(|(_, r)| *r >= best_rel - RELEVANCE_TIE)
            .map(|&(h, _)| h)
            .max_by(|&a, &b| {
                let (na, nb) = (graph.node(a), graph.node(b));
                na.exposure
                    .cmp(&nb.exposure)
                    .then_with(|| nb.id.cmp(&na.id))
            })
            .expect("candidates nonempty");
        pairs.push(AnchorPair {
            tail_id: tail_id.clone(),
            head_id: graph.node(winner).id.clone(),
            relevance: cosine_f64(tail_attrs, &graph.node(winner).attributes),
        });
    }
    report.n_pairs = pairs.len();
    (pairs, report)
}

/// Write mined pairs as `tail_id ⇥ head_id ⇥ relevance` for inspection.
pub fn write_anchor_pairs(path: &std::path::Path, pairs: &[AnchorPair]) -> Result<()> {
    use std::io::Write;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{:.8e}", p.tail_id, p.head_id, p.relevance)?;
    }
    Ok(())
}

/// Embeddings for one knowledge-transfer batch: anchor pairs as (tail, head)
/// readouts and services co-encoded by both encoders as (head-side,
/// tail-side) readouts.
pub struct KtclBatch {
    pub pairs: Vec<(Var, Var)>,
    pub services: Vec<(Var, Var)>,
}

/// Query direction: each tail anchors against its head positive with the
/// batch's other heads as negatives. Service direction: symmetric two-way
/// alignment of the two encodings of each shared service against in-batch
/// service negatives. Empty directions contribute zero.
pub fn ktcl_loss(tape: &mut Tape, batch: &KtclBatch, tau: f64) -> Result<Var> {
    if batch.pairs.is_empty() && batch.services.is_empty() {
        return Err(Error::Train("knowledge-transfer batch is empty".to_string()));
    }
    let mut total = tape.constant_scalar(0.0)?;
    for (i, &(tail, head)) in batch.pairs.iter().enumerate() {
        let negatives: Vec<Var> = batch
            .pairs
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &(_, h))| h)
            .collect();
        let term = tape.info_nce(tail, head, &negatives, tau)?;
        total = tape.add(total, term)?;
    }
    for (i, &(head_side, tail_side)) in batch.services.iter().enumerate() {
        let other_tails: Vec<Var> = batch
            .services
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &(_, t))| t)
            .collect();
        let other_heads: Vec<Var> = batch
            .services
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, &(h, _))| h)
            .collect();
        let fwd = tape.info_nce(head_side, tail_side, &other_tails, tau)?;
        let bwd = tape.info_nce(tail_side, head_side, &other_heads, tau)?;
        total = tape.add(total, fwd)?;
        total = tape.add(total, bwd)?;
    }
    Ok(total)
}

/// Structure enhancement over one batch group: for each node q and each layer
/// l ≥ 1, the layer-0 state anchors against the same node's layer-l state
/// with other members' layer-l states as negatives; averaged over layers,
/// summed over the batch. `nodes[i]` holds [z^(0), ..., z^(L)].
///
/// ReLU updates can kill a node outright (every unit negative), leaving an
/// exact zero state whose cosine is undefined. Such states carry no signal,
/// so their terms are skipped, they are removed from negative pools, and the
/// skip count is returned alongside the loss.
pub fn secl_loss(tape: &mut Tape, nodes: &[Vec<Var>], tau: f64) -> Result<(Var, usize)> {
    if nodes.is_empty() {
        return Err(Error::Train("structure-enhancement batch is empty".to_string()));
    }
    let l_layers = nodes[0].len().saturating_sub(1);
    if l_layers == 0 {
        return Err(Error::Train(
            "structure enhancement needs at least one propagation layer".to_string(),
        ));
    }
    if nodes.iter().any(|n| n.len() != l_layers + 1) {
        return Err(Error::Train("ragged layer stacks in batch".to_string()));
    }
    let alive = |tape: &Tape, v: Var| tape.value(v).l2_norm() >= crate::tape::NORM_EPS;
    let mut dropped = 0usize;
    let mut total = tape.constant_scalar(0.0)?;
    for (q, stack) in nodes.iter().enumerate() {
        let anchor = stack[0];
        if !alive(tape, anchor) {
            dropped += l_layers;
            continue;
        }
        let mut node_sum = tape.constant_scalar(0.0)?;
        for l in 1..=l_layers {
            if !alive(tape, stack[l]) {
                dropped += 1;
                continue;
            }
            let negatives: Vec<Var> = nodes
                .iter()
                .enumerate()
                .filter(|(k, other)| *k != q && alive(tape, other[l]))
                .map(|(_, other)| other[l])
                .collect();
            let term = tape.info_nce(anchor, stack[l], &negatives, tau)?;
            node_sum = tape.add(node_sum, term)?;
        }
        let averaged = tape.scalar_mul(node_sum, 1.0 / l_layers as f64)?;
        total = tape.add(total, averaged)?;
    }
    Ok((total, dropped))
}

/// Whether negative pools match the level of the positive under comparison or
/// always the leaf's level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelAnchor {
    Positive,
    Leaf,
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IgclConfig {
    pub n_hard: usize,
    pub n_easy: usize,
    pub level_anchor: LevelAnchor,
}

impl Default for IgclConfig {
    fn default() -> Self {
        IgclConfig { n_hard: 5, n_easy: 5, level_anchor: LevelAnchor::Positive }
    }
}

/// Sample negative intention sets for each positive on the path. Hard
/// negatives come from the same tree at the matching level, excluding the
/// path and the positive's descendants; easy negatives come from other trees
/// at that level. Sampling is without replacement and seeded by the caller's
/// generator.
pub fn igcl_negatives(
    forest: &IntentionForest,
    path: &[usize],
    cfg: &IgclConfig,
    rng: &mut impl Rng,
) -> Vec<Vec<usize>> {
    use std::collections::BTreeSet;
    let leaf = path[0];
    let exclude_base: BTreeSet<usize> = path.iter().copied().collect();
    let mut out = Vec::with_capacity(path.len());
    for &j in path {
        let level = match cfg.level_anchor {
            LevelAnchor::Positive => forest.node(j).level,
            LevelAnchor::Leaf => forest.node(leaf).level,
        };
        let tree = forest.node(j).tree;
        let mut exclude = exclude_base.clone();
        exclude.extend(forest.descendants(j));

        let mut hard: Vec<usize> = forest
            .at_level(tree, level)
            .iter()
            .copied()
            .filter(|i| !exclude.contains(i))
            .collect();
        let mut easy: Vec<usize> = forest.at_level_other_trees(tree, level);

        let mut negs = Vec::with_capacity(cfg.n_hard + cfg.n_easy);
        hard.shuffle(rng);
        negs.extend(hard.into_iter().take(cfg.n_hard));
        easy.shuffle(rng);
        negs.extend(easy.into_iter().take(cfg.n_easy));
        out.push(negs);
    }
    out
}

/// One node's contribution to intention generalization: its readout anchors
/// against each tree embedding on its intention path.
pub struct IgclTerm {
    pub readout: Var,
    /// Per path positive: the tree embedding and its sampled negatives.
    pub positives: Vec<(Var, Vec<Var>)>,
}

/// Sum over nodes of (1/|path|) Σ_j InfoNCE(readout, tree_j, negatives_j).
/// Positives with no negatives contribute exactly zero and are counted.
pub fn igcl_loss(tape: &mut Tape, terms: &[IgclTerm], tau: f64) -> Result<(Var, usize)> {
    let mut total = tape.constant_scalar(0.0)?;
    let mut dropped = 0;
    for term in terms {
        if term.positives.is_empty() {
            continue;
        }
        let weight = 1.0 / term.positives.len() as f64;
        let mut node_sum = tape.constant_scalar(0.0)?;
        for (positive, negatives) in &term.positives {
            if negatives.is_empty() {
                dropped += 1;
                continue;
            }
            let nce = tape.info_nce(term.readout, *positive, negatives, tau)?;
            node_sum = tape.add(node_sum, nce)?;
        }
        let weighted = tape.scalar_mul(node_sum, weight)?;
        total = tape.add(total, weighted)?;
    }
    Ok((total, dropped))
}
