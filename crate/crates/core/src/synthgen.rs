//! Seeded generator of desk-scale search scenarios: a Zipf-skewed query
//! traffic log, an intention forest, latent-affinity click behavior, and
//! chronologically split supervision files.
//!
//! The latent state (per-node vectors, true click probabilities) stays in
//! memory and is never written to the dataset files; it exists so tests can
//! score against the ground truth.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::forest::{validate_forest, IntentionForest};
use crate::io::{
    self, CorrelationRecord, CorrelationType, IntentionRecord, InteractionRecord, LabelRecord,
    NodeKind, NodeRecord,
};
use crate::seed;
use crate::{Error, Result};

/// Dimension of the hidden affinity vectors.
pub const LATENT_DIM: usize = 8;
/// Dimension of the observable node attributes: noisy latents plus
/// normalized city, brand, and category ids.
pub const ATTR_DIM: usize = LATENT_DIM + 3;

const N_CITIES: u64 = 12;
const N_BRANDS: u64 = 30;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub n_queries: usize,
    pub n_services: usize,
    pub n_trees: usize,
    /// Intention forest depth; every leaf sits at this level.
    pub max_depth: usize,
    pub zipf_exponent: f64,
    /// Number of search sessions in the traffic log.
    pub sessions: usize,
    /// Probability of flipping a supervision label.
    pub label_noise: f64,
    pub seed: u64,
    /// Labeled candidate services per query, half by affinity, half random.
    pub candidates_per_query: usize,
    /// Probability of recording a matching (query, service) correlation.
    pub correlation_rate: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            n_queries: 600,
            n_services: 220,
            n_trees: 3,
            max_depth: 5,
            zipf_exponent: 1.9,
            sessions: 15_000,
            label_noise: 0.02,
            seed: 7,
            candidates_per_query: 12,
            correlation_rate: 0.15,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |detail: &str| Err(Error::Config(detail.to_string()));
        if self.n_queries == 0 || self.n_services == 0 || self.n_trees == 0 || self.sessions == 0 {
            return err("all counts must be at least 1");
        }
        if self.max_depth == 0 || self.max_depth > 5 {
            return err("max_depth must be in 1..=5");
        }
        if !(self.zipf_exponent > 0.0) {
            return err("zipf_exponent must be positive");
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return err("label_noise must be in [0, 0.5)");
        }
        if self.candidates_per_query < 2 || self.candidates_per_query > self.n_services {
            return err("candidates_per_query must be in 2..=n_services");
        }
        if !(0.0..=1.0).contains(&self.correlation_rate) {
            return err("correlation_rate must be in [0, 1]");
        }
        if self.n_trees > self.n_queries.min(self.n_services) {
            return err("more intention trees than nodes to assign");
        }
        Ok(())
    }
}

/// One entry of the raw traffic log: at step `t`, query `query` was shown
/// service `service` and did or did not click.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SessionEvent {
    pub t: usize,
    pub query: usize,
    pub service: usize,
    pub clicked: bool,
}

/// A fully generated scenario: the dataset files in memory plus the hidden
/// ground truth that produced them.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub nodes: Vec<NodeRecord>,
    pub intentions: Vec<IntentionRecord>,
    pub interactions: Vec<InteractionRecord>,
    pub correlations: Vec<CorrelationRecord>,
    /// All supervision records in chronological order.
    pub labels: Vec<LabelRecord>,
    pub train: Vec<LabelRecord>,
    pub val: Vec<LabelRecord>,
    pub test: Vec<LabelRecord>,
    pub events: Vec<SessionEvent>,
    query_ids: Vec<String>,
    service_ids: Vec<String>,
    /// true_p[q][s] = latent click probability.
    true_p: Vec<Vec<f64>>,
    candidates: Vec<Vec<usize>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    dot / (na * nb)
}

/// Cosine weight, intention-overlap weight, and bias of the click logit.
const AFFINITY_GAIN: f64 = 4.0;
const INTENTION_GAIN: f64 = 2.0;
const LOGIT_BIAS: f64 = -1.0;

fn grow_forest(config: &ScenarioConfig, rng: &mut ChaCha20Rng) -> Vec<IntentionRecord> {
    let mut records = Vec::new();
    for t in 0..config.n_trees {
        let root = format!("i{t}");
        records.push(IntentionRecord { id: root.clone(), parent_id: None });
        let mut frontier = vec![root];
        for _ in 1..config.max_depth {
            let mut next = Vec::new();
            for parent in &frontier {
                let n_children = rng.random_range(2..=3);
                for c in 0..n_children {
                    let id = format!("{parent}.{c}");
                    records.push(IntentionRecord {
                        id: id.clone(),
                        parent_id: Some(parent.clone()),
                    });
                    next.push(id);
                }
            }
            frontier = next;
        }
    }
    records
}

/// Latent center per intention: the root draws from a unit normal and each
/// child perturbs its parent with variance shrinking by depth, so nearby
/// intentions have nearby centers.
fn intention_centers(forest: &IntentionForest, rng: &mut ChaCha20Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![Vec::new(); forest.len()];
    let mut queue: Vec<usize> = forest.roots().to_vec();
    let mut at = 0;
    while at < queue.len() {
        let idx = queue[at];
        at += 1;
        let node = forest.node(idx);
        let std = 0.7f64.powi(node.level as i32 - 1);
        let dist = Normal::new(0.0, std).expect("positive std");
        let center: Vec<f64> = match node.parent {
            None => (0..LATENT_DIM).map(|_| dist.sample(rng)).collect(),
            Some(p) => centers[p].iter().map(|c| c + dist.sample(rng)).collect(),
        };
        centers[idx] = center;
        queue.extend(node.children.iter().copied());
    }
    centers
}

/// Shared-ancestor count between two leaf paths (each ordered leaf to root).
fn intention_overlap(a: &[usize], b: &[usize]) -> usize {
    a.iter().rev().zip(b.iter().rev()).take_while(|(x, y)| x == y).count()
}

struct NodeDraw {
    leaf: usize,
    latent: Vec<f64>,
    city: u64,
    brand: u64,
}

impl Scenario {
    pub fn generate(config: ScenarioConfig) -> Result<Scenario> {
        config.validate()?;
        let root = config.seed;

        let mut forest_rng = seed::rng(root, "forest");
        let intentions = grow_forest(&config, &mut forest_rng);
        let forest = validate_forest(&intentions, config.max_depth)?;
        let leaves: Vec<usize> =
            (0..forest.len()).filter(|&i| forest.node(i).children.is_empty()).collect();

        let mut latent_rng = seed::rng(root, "latent");
        let centers = intention_centers(&forest, &mut latent_rng);
        let unit = Normal::new(0.0, 1.0).expect("positive std");
        let draw_node = |rng: &mut ChaCha20Rng| {
            let leaf = leaves[rng.random_range(0..leaves.len())];
            let latent: Vec<f64> =
                centers[leaf].iter().map(|c| c + 0.5 * unit.sample(rng)).collect();
            (leaf, latent)
        };
        let mut queries: Vec<NodeDraw> = (0..config.n_queries)
            .map(|_| {
                let (leaf, latent) = draw_node(&mut latent_rng);
                NodeDraw { leaf, latent, city: 0, brand: 0 }
            })
            .collect();
        let mut services: Vec<NodeDraw> = (0..config.n_services)
            .map(|_| {
                let (leaf, latent) = draw_node(&mut latent_rng);
                NodeDraw { leaf, latent, city: 0, brand: 0 }
            })
            .collect();

        // Category = the ancestor at level min(2, depth), indexed across the
        // forest; it doubles as the third observable id.
        let cat_level = config.max_depth.min(2);
        let cat_nodes: Vec<usize> =
            (0..forest.len()).filter(|&i| forest.node(i).level == cat_level).collect();
        let cat_index: BTreeMap<usize, usize> =
            cat_nodes.iter().enumerate().map(|(pos, &idx)| (idx, pos)).collect();
        let category_of = |leaf: usize| -> usize {
            let path = forest
                .ancestors(&forest.node(leaf).id)
                .expect("leaf id resolves in its own forest");
            let ancestor = path[path.len() - cat_level];
            cat_index[&ancestor]
        };

        let noise = Normal::new(0.0, 0.1).expect("positive std");
        let mut attrs_rng = seed::rng(root, "attrs");
        let attributes = |draws: &mut [NodeDraw], rng: &mut ChaCha20Rng| -> Vec<Vec<f64>> {
            draws
                .iter_mut()
                .map(|d| {
                    let mut a: Vec<f64> =
                        d.latent.iter().map(|x| x + noise.sample(rng)).collect();
                    d.city = rng.random_range(0..N_CITIES);
                    d.brand = rng.random_range(0..N_BRANDS);
                    a.push((d.city as f64 + 0.5) / N_CITIES as f64);
                    a.push((d.brand as f64 + 0.5) / N_BRANDS as f64);
                    a.push((category_of(d.leaf) as f64 + 0.5) / cat_nodes.len() as f64);
                    a
                })
                .collect()
        };
        let query_attrs = attributes(&mut queries, &mut attrs_rng);
        let service_attrs = attributes(&mut services, &mut attrs_rng);

        let paths: Vec<Vec<usize>> = (0..forest.len())
            .map(|i| forest.ancestors(&forest.node(i).id).expect("own forest"))
            .collect();
        let true_p: Vec<Vec<f64>> = queries
            .iter()
            .map(|q| {
                services
                    .iter()
                    .map(|s| {
                        let affinity = cosine(&q.latent, &s.latent);
                        let overlap = intention_overlap(&paths[q.leaf], &paths[s.leaf]) as f64
                            / config.max_depth as f64;
                        sigmoid(AFFINITY_GAIN * affinity + INTENTION_GAIN * overlap + LOGIT_BIAS)
                    })
                    .collect()
            })
            .collect();

        let mut cand_rng = seed::rng(root, "candidates");
        let n_top = config.candidates_per_query / 2;
        let candidates: Vec<Vec<usize>> = (0..config.n_queries)
            .map(|q| {
                let mut by_p: Vec<usize> = (0..config.n_services).collect();
                by_p.sort_by(|&a, &b| {
                    true_p[q][b].partial_cmp(&true_p[q][a]).expect("finite").then(a.cmp(&b))
                });
                let mut picked: Vec<usize> = by_p[..n_top].to_vec();
                let mut rest: Vec<usize> = by_p[n_top..].to_vec();
                rest.sort_unstable();
                for _ in 0..(config.candidates_per_query - n_top).min(rest.len()) {
                    picked.push(rest.swap_remove(cand_rng.random_range(0..rest.len())));
                }
                picked.sort_unstable();
                picked
            })
            .collect();

        let mut traffic_rng = seed::rng(root, "traffic");
        let zipf = Zipf::new(config.n_queries as f64, config.zipf_exponent)
            .map_err(|e| Error::Config(format!("zipf: {e}")))?;
        let events: Vec<SessionEvent> = (0..config.sessions)
            .map(|t| {
                let query = zipf.sample(&mut traffic_rng) as usize - 1;
                let service = candidates[query]
                    [traffic_rng.random_range(0..candidates[query].len())];
                let clicked = traffic_rng.random::<f64>() < true_p[query][service];
                SessionEvent { t, query, service, clicked }
            })
            .collect();

        let mut exposure = vec![0u64; config.n_queries];
        for e in &events {
            exposure[e.query] += 1;
        }

        // The interaction graph only sees the training period, so edges never
        // leak evaluation-period behavior.
        let train_cutoff = config.sessions * 8 / 10;
        let mut agg: BTreeMap<(usize, usize), (u64, u64)> = BTreeMap::new();
        for e in events.iter().filter(|e| e.t < train_cutoff) {
            let cell = agg.entry((e.query, e.service)).or_insert((0, 0));
            cell.0 += e.clicked as u64;
            cell.1 += 1;
        }

        let query_ids: Vec<String> = (0..config.n_queries).map(|i| format!("q{i:05}")).collect();
        let service_ids: Vec<String> =
            (0..config.n_services).map(|i| format!("s{i:05}")).collect();
        let interactions: Vec<InteractionRecord> = agg
            .iter()
            .map(|(&(q, s), &(clicks, impressions))| InteractionRecord {
                query_id: query_ids[q].clone(),
                service_id: service_ids[s].clone(),
                clicks,
                impressions,
            })
            .collect();

        let mut corr_rng = seed::rng(root, "correlations");
        let mut correlations = Vec::new();
        for (q, qd) in queries.iter().enumerate() {
            for (s, sd) in services.iter().enumerate() {
                let matches = [
                    (qd.city == sd.city, CorrelationType::City),
                    (qd.brand == sd.brand, CorrelationType::Brand),
                    (category_of(qd.leaf) == category_of(sd.leaf), CorrelationType::Category),
                ];
                for (hit, ctype) in matches {
                    if hit && corr_rng.random::<f64>() < config.correlation_rate {
                        correlations.push(CorrelationRecord {
                            query_id: query_ids[q].clone(),
                            service_id: service_ids[s].clone(),
                            ctype,
                        });
                    }
                }
            }
        }

        // Supervision: a per-query affinity threshold drawn between the 20th
        // and 80th percentile of the candidates' true probabilities, so
        // labels are a monotone function of true probability (the oracle
        // ceiling is exact), then optional noise flips.
        let mut label_rng = seed::rng(root, "labels");
        let mut first_seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for e in &events {
            first_seen.entry((e.query, e.service)).or_insert(e.t);
        }
        let mut time_rng = seed::rng(root, "times");
        let mut timed: Vec<(usize, LabelRecord)> = Vec::new();
        for q in 0..config.n_queries {
            let mut sorted_p: Vec<f64> =
                candidates[q].iter().map(|&s| true_p[q][s]).collect();
            sorted_p.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let m = sorted_p.len();
            let lo = sorted_p[(m - 1) * 2 / 10];
            let hi = sorted_p[(m - 1) * 8 / 10];
            let threshold = lo + label_rng.random::<f64>() * (hi - lo);
            for &s in &candidates[q] {
                let mut label = (true_p[q][s] >= threshold) as u8;
                if config.label_noise > 0.0 && label_rng.random::<f64>() < config.label_noise {
                    label ^= 1;
                }
                let t = *first_seen
                    .entry((q, s))
                    .or_insert_with(|| time_rng.random_range(0..config.sessions));
                timed.push((
                    t,
                    LabelRecord {
                        query_id: query_ids[q].clone(),
                        service_id: service_ids[s].clone(),
                        label,
                    },
                ));
            }
        }
        timed.sort_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.1.query_id.cmp(&b.1.query_id))
                .then_with(|| a.1.service_id.cmp(&b.1.service_id))
        });
        let labels: Vec<LabelRecord> = timed.into_iter().map(|(_, r)| r).collect();
        let n = labels.len();
        let (a, b) = (n * 8 / 10, n * 9 / 10);
        let train = labels[..a].to_vec();
        let val = labels[a..b].to_vec();
        let test = labels[b..].to_vec();

        let mut nodes = Vec::with_capacity(config.n_queries + config.n_services);
        for (i, d) in queries.iter().enumerate() {
            nodes.push(NodeRecord {
                id: query_ids[i].clone(),
                kind: NodeKind::Query,
                features: query_attrs[i].clone(),
                exposure: Some(exposure[i]),
                intention_id: Some(forest.node(d.leaf).id.clone()),
            });
        }
        for (i, d) in services.iter().enumerate() {
            nodes.push(NodeRecord {
                id: service_ids[i].clone(),
                kind: NodeKind::Service,
                features: service_attrs[i].clone(),
                exposure: None,
                intention_id: Some(forest.node(d.leaf).id.clone()),
            });
        }

        Ok(Scenario {
            config,
            nodes,
            intentions,
            interactions,
            correlations,
            labels,
            train,
            val,
            test,
            events,
            query_ids,
            service_ids,
            true_p,
            candidates,
        })
    }

    /// The latent click probability, if both ids exist.
    pub fn true_probability(&self, query_id: &str, service_id: &str) -> Option<f64> {
        let q = self.query_ids.binary_search_by(|x| x.as_str().cmp(query_id)).ok()?;
        let s = self.service_ids.binary_search_by(|x| x.as_str().cmp(service_id)).ok()?;
        Some(self.true_p[q][s])
    }

    /// The query's labeled candidates sorted by descending true click
    /// probability (ties by service id): the best ordering any ranker can
    /// reach on this scenario.
    pub fn oracle_rank(&self, query_id: &str) -> Result<Vec<String>> {
        let q = self
            .query_ids
            .binary_search_by(|x| x.as_str().cmp(query_id))
            .map_err(|_| Error::Data(format!("unknown query {query_id}")))?;
        let mut order = self.candidates[q].clone();
        order.sort_by(|&a, &b| {
            self.true_p[q][b]
                .partial_cmp(&self.true_p[q][a])
                .expect("finite")
                .then_with(|| self.service_ids[a].cmp(&self.service_ids[b]))
        });
        Ok(order.into_iter().map(|s| self.service_ids[s].clone()).collect())
    }

    /// Write the eight dataset files into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        io::write_nodes(&dir.join("nodes.jsonl"), &self.nodes)?;
        io::write_intentions(&dir.join("intentions.jsonl"), &self.intentions)?;
        io::write_interactions(&dir.join("interactions.tsv"), &self.interactions)?;
        io::write_correlations(&dir.join("correlations.tsv"), &self.correlations)?;
        io::write_labels(&dir.join("labels.tsv"), &self.labels)?;
        io::write_labels(&dir.join("train.tsv"), &self.train)?;
        io::write_labels(&dir.join("val.tsv"), &self.val)?;
        io::write_labels(&dir.join("test.tsv"), &self.test)?;
        Ok(())
    }
}

/// Fraction of total volume carried by the top `fraction` of entries.
pub fn top_share(volumes: &[u64], fraction: f64) -> f64 {
    let mut sorted = volumes.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let k = ((sorted.len() as f64 * fraction).ceil() as usize).clamp(1, sorted.len());
    let total: u64 = sorted.iter().sum();
    if total == 0 {
        return 0.0;
    }
    sorted[..k].iter().sum::<u64>() as f64 / total as f64
}

/// Gini coefficient of a volume distribution; 0 = uniform, →1 = concentrated.
pub fn gini(volumes: &[u64]) -> f64 {
    let mut sorted = volumes.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let total: u64 = sorted.iter().sum();
    if sorted.is_empty() || total == 0 {
        return 0.0;
    }
    let weighted: f64 =
        sorted.iter().enumerate().map(|(i, &x)| (i as f64 + 1.0) * x as f64).sum();
    (2.0 * weighted) / (n * total as f64) - (n + 1.0) / n
}
