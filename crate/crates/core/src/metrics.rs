//! Ranking metrics: AUC, grouped AUC, NDCG@K, sliced head/tail/overall
//! reporting. AUC is computed from a rank sum held in integer half-units so
//! it equals the O(n²) pair-counting definition exactly, tie handling and
//! monotone-transform invariance included.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::graph::Side;
use crate::{Error, Result};

/// One scored, labeled (query, service) pair. `side` comes from the head/tail
/// split, never from user input.
#[derive(Clone, Debug)]
pub struct EvalRecord {
    pub query_id: String,
    pub service_id: String,
    pub label: u8,
    pub score: f64,
    pub side: Side,
}

fn validate_scores<'a>(items: impl Iterator<Item = &'a f64>) -> Result<()> {
    for s in items {
        if !s.is_finite() {
            return Err(Error::Metric(format!("non-finite score {s}")));
        }
    }
    Ok(())
}

/// AUC of (label, score) pairs: the probability that a random positive
/// outscores a random negative, ties counting one half. O(n log n).
pub fn auc_pairs(items: &[(u8, f64)]) -> Result<f64> {
    validate_scores(items.iter().map(|(_, s)| s))?;
    let n_pos = items.iter().filter(|(l, _)| *l == 1).count() as u64;
    let n_neg = items.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Metric(format!(
            "AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| items[a].1.partial_cmp(&items[b].1).expect("finite scores"));

    // Sum of positive ranks with midranks for ties, carried in half-units:
    // the midrank of a tie block spanning 1-based positions [lo, hi] is
    // (lo+hi)/2, i.e. lo+hi half-units, which stays integral.
    let mut rank2_pos: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && items[order[j + 1]].1 == items[order[i]].1 {
            j += 1;
        }
        let midrank2 = (i as u64 + 1) + (j as u64 + 1);
        for &idx in &order[i..=j] {
            if items[idx].0 == 1 {
                rank2_pos += midrank2;
            }
        }
        i = j + 1;
    }
    let u2 = rank2_pos - n_pos * (n_pos + 1);
    Ok(u2 as f64 / (2 * n_pos * n_neg) as f64)
}

pub fn auc(records: &[EvalRecord]) -> Result<f64> {
    let items: Vec<(u8, f64)> = records.iter().map(|r| (r.label, r.score)).collect();
    auc_pairs(&items)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupedAuc {
    pub value: f64,
    pub n_groups_used: usize,
    pub n_skipped_groups: usize,
}

fn by_query(records: &[EvalRecord]) -> BTreeMap<&str, Vec<&EvalRecord>> {
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.query_id.as_str()).or_default().push(r);
    }
    groups
}

/// Per-query AUC averaged with record-count weights. Groups lacking either
/// class are skipped and counted.
pub fn gauc(records: &[EvalRecord]) -> Result<GroupedAuc> {
    let mut weighted = 0.0;
    let mut weight = 0u64;
    let mut used = 0;
    let mut skipped = 0;
    for (_, group) in by_query(records) {
        let items: Vec<(u8, f64)> = group.iter().map(|r| (r.label, r.score)).collect();
        let n_pos = items.iter().filter(|(l, _)| *l == 1).count();
        if n_pos == 0 || n_pos == items.len() {
            skipped += 1;
            continue;
        }
        let w = items.len() as u64;
        weighted += w as f64 * auc_pairs(&items)?;
        weight += w;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Metric("every query group is single-class".to_string()));
    }
    Ok(GroupedAuc { value: weighted / weight as f64, n_groups_used: used, n_skipped_groups: skipped })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ndcg {
    pub value: f64,
    pub n_queries_used: usize,
}

/// Mean NDCG@K over queries with at least one positive. Binary gains with the
/// linear DCG form label/log2(rank+1); score ties break by service id.
pub fn ndcg_at_k(records: &[EvalRecord], k: usize) -> Result<Ndcg> {
    if k == 0 {
        return Err(Error::Metric("K must be at least 1".to_string()));
    }
    validate_scores(records.iter().map(|r| &r.score))?;
    let mut total = 0.0;
    let mut used = 0;
    for (_, mut group) in by_query(records) {
        let n_pos = group.iter().filter(|r| r.label == 1).count();
        if n_pos == 0 {
            continue;
        }
        group.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("finite scores")
                .then_with(|| a.service_id.cmp(&b.service_id))
        });
        let dcg: f64 = group
            .iter()
            .take(k)
            .enumerate()
            .map(|(r, rec)| rec.label as f64 / ((r + 2) as f64).log2())
            .sum();
        let idcg: f64 = (0..n_pos.min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
        total += dcg / idcg;
        used += 1;
    }
    if used == 0 {
        return Err(Error::Metric("no query has a positive label".to_string()));
    }
    Ok(Ndcg { value: total / used as f64, n_queries_used: used })
}

/// Metrics for one slice; `None` marks a metric undefined on the slice (empty
/// or single-class input).
#[derive(Clone, Debug, Default, Serialize)]
pub struct SliceMetrics {
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub ndcg: Option<f64>,
    pub n_queries: usize,
    pub n_pairs: usize,
    pub n_skipped_groups: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SliceReport {
    pub k: usize,
    /// GAUC aggregation: record-count-weighted mean of per-query AUC,
    /// single-class groups skipped.
    pub gauc_weighting: &'static str,
    pub head: SliceMetrics,
    pub tail: SliceMetrics,
    pub overall: SliceMetrics,
}

fn slice_metrics(records: &[&EvalRecord], k: usize) -> SliceMetrics {
    let owned: Vec<EvalRecord> = records.iter().map(|r| (*r).clone()).collect();
    let groups = by_query(&owned);
    let g = gauc(&owned).ok();
    SliceMetrics {
        auc: auc(&owned).ok(),
        gauc: g.map(|g| g.value),
        ndcg: ndcg_at_k(&owned, k).ok().map(|n| n.value),
        n_queries: groups.len(),
        n_pairs: owned.len(),
        n_skipped_groups: g.map(|g| g.n_skipped_groups).unwrap_or(groups.len()),
    }
}

/// Head/tail/overall metrics over one record set.
pub fn slice_report(records: &[EvalRecord], k: usize) -> Result<SliceReport> {
    if k == 0 {
        return Err(Error::Metric("K must be at least 1".to_string()));
    }
    validate_scores(records.iter().map(|r| &r.score))?;
    let head: Vec<&EvalRecord> = records.iter().filter(|r| r.side == Side::Head).collect();
    let tail: Vec<&EvalRecord> = records.iter().filter(|r| r.side == Side::Tail).collect();
    let all: Vec<&EvalRecord> = records.iter().collect();
    Ok(SliceReport {
        k,
        gauc_weighting: "record-count weighted mean of per-query AUC; single-class groups skipped",
        head: slice_metrics(&head, k),
        tail: slice_metrics(&tail, k),
        overall: slice_metrics(&all, k),
    })
}

impl SliceReport {
    /// Aligned text table with the head/tail/overall column layout.
    pub fn render_text(&self) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "n/a".to_string(),
        };
        let mut out = String::new();
        out.push_str(&format!(
            "{:<16}{:>12}{:>12}{:>12}\n",
            "metric", "head", "tail", "overall"
        ));
        let rows: [(&str, [Option<f64>; 3]); 3] = [
            ("auc", [self.head.auc, self.tail.auc, self.overall.auc]),
            ("gauc", [self.head.gauc, self.tail.gauc, self.overall.gauc]),
            (
                "ndcg",
                [self.head.ndcg, self.tail.ndcg, self.overall.ndcg],
            ),
        ];
        for (name, vals) in rows {
            let label = if name == "ndcg" { format!("ndcg@{}", self.k) } else { name.to_string() };
            out.push_str(&format!(
                "{label:<16}{:>12}{:>12}{:>12}\n",
                fmt(vals[0]),
                fmt(vals[1]),
                fmt(vals[2])
            ));
        }
        let count_rows: [(&str, fn(&SliceMetrics) -> usize); 3] = [
            ("n_queries", |m| m.n_queries),
            ("n_pairs", |m| m.n_pairs),
            ("skipped_groups", |m| m.n_skipped_groups),
        ];
        for (name, get) in count_rows {
            out.push_str(&format!(
                "{name:<16}{:>12}{:>12}{:>12}\n",
                get(&self.head),
                get(&self.tail),
                get(&self.overall)
            ));
        }
        out
    }
}

/// O(n²) pair-counting AUC used as an independent oracle in tests.
pub fn auc_pair_counting(items: &[(u8, f64)]) -> Result<f64> {
    validate_scores(items.iter().map(|(_, s)| s))?;
    let pos: Vec<f64> = items.iter().filter(|(l, _)| *l == 1).map(|(_, s)| *s).collect();
    let neg: Vec<f64> = items.iter().filter(|(l, _)| *l == 0).map(|(_, s)| *s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Metric("AUC needs both classes".to_string()));
    }
    let mut wins2: u64 = 0;
    for p in &pos {
        for n in &neg {
            if p > n {
                wins2 += 2;
            } else if p == n {
                wins2 += 1;
            }
        }
    }
    Ok(wins2 as f64 / (2 * pos.len() as u64 * neg.len() as u64) as f64)
}
