//! Loading a dataset directory (or an in-memory scenario) into the assembled
//! training workspace: graph, head/tail split, intention forest, mined anchor
//! pairs, and the three label splits.

use std::path::{Path, PathBuf};

use garcia_core::contrastive::{mine_anchor_pairs, AnchorPair, MiningReport};
use garcia_core::forest::{validate_forest, IntentionForest};
use garcia_core::graph::{
    build_graph, head_count_for_fraction, split_head_tail, BuildOptions, BuildReport,
    HeadTailSplit, ServiceSearchGraph,
};
use garcia_core::io::{
    load_correlations, load_intentions, load_interactions, load_labels, load_nodes,
    CorrelationRecord, IntentionRecord, InteractionRecord, LabelRecord, NodeRecord,
};
use garcia_core::synthgen::Scenario;

use crate::{validation, CliResult, RunConfig};

/// Everything the training and evaluation stages need, assembled once.
pub struct Workspace {
    pub graph: ServiceSearchGraph,
    pub build: BuildReport,
    pub split: HeadTailSplit,
    pub forest: IntentionForest,
    pub pairs: Vec<AnchorPair>,
    pub mining: MiningReport,
    pub train: Vec<LabelRecord>,
    pub val: Vec<LabelRecord>,
    pub test: Vec<LabelRecord>,
    pub attr_dim: usize,
}

impl Workspace {
    pub fn n_nodes(&self) -> usize {
        self.graph.nodes().len()
    }
}

/// The file names `gen-data` writes and every later stage reads.
pub const DATASET_FILES: [&str; 8] = [
    "nodes.jsonl",
    "intentions.jsonl",
    "interactions.tsv",
    "correlations.tsv",
    "labels.tsv",
    "train.tsv",
    "val.tsv",
    "test.tsv",
];

fn require_file(dir: &Path, name: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    if !path.is_file() {
        return Err(validation(anyhow::anyhow!(
            "missing input file {}; expected the data directory to contain {name}",
            path.display()
        )));
    }
    Ok(path)
}

pub fn load_workspace(dir: &Path, cfg: &RunConfig) -> CliResult<Workspace> {
    if !dir.is_dir() {
        return Err(validation(anyhow::anyhow!(
            "data directory {} does not exist",
            dir.display()
        )));
    }
    let nodes = load_nodes(&require_file(dir, "nodes.jsonl")?).map_err(validation)?;
    let intentions = load_intentions(&require_file(dir, "intentions.jsonl")?).map_err(validation)?;
    let interactions =
        load_interactions(&require_file(dir, "interactions.tsv")?).map_err(validation)?;
    let correlations =
        load_correlations(&require_file(dir, "correlations.tsv")?).map_err(validation)?;
    let train = load_labels(&require_file(dir, "train.tsv")?).map_err(validation)?;
    let val = load_labels(&require_file(dir, "val.tsv")?).map_err(validation)?;
    let test = load_labels(&require_file(dir, "test.tsv")?).map_err(validation)?;
    assemble(cfg, &nodes, &intentions, &interactions, &correlations, train, val, test)
}

pub fn workspace_from_scenario(scenario: &Scenario, cfg: &RunConfig) -> CliResult<Workspace> {
    assemble(
        cfg,
        &scenario.nodes,
        &scenario.intentions,
        &scenario.interactions,
        &scenario.correlations,
        scenario.train.clone(),
        scenario.val.clone(),
        scenario.test.clone(),
    )
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    cfg: &RunConfig,
    nodes: &[NodeRecord],
    intentions: &[IntentionRecord],
    interactions: &[InteractionRecord],
    correlations: &[CorrelationRecord],
    train: Vec<LabelRecord>,
    val: Vec<LabelRecord>,
    test: Vec<LabelRecord>,
) -> CliResult<Workspace> {
    let attr_dim = nodes
        .first()
        .map(|n| n.features.len())
        .ok_or_else(|| validation(anyhow::anyhow!("the node file holds no records")))?;
    let opts = BuildOptions { include_log_clicks: cfg.include_log_clicks };
    let (graph, build) =
        build_graph(nodes, interactions, correlations, opts).map_err(validation)?;
    let n_queries = graph.query_indices().count();
    let head_count = head_count_for_fraction(n_queries, cfg.head_fraction);
    let split = split_head_tail(&graph, head_count).map_err(validation)?;
    let forest = validate_forest(intentions, cfg.train.hyper.h_levels).map_err(validation)?;
    let (pairs, mining) = mine_anchor_pairs(&graph, &split);
    Ok(Workspace {
        graph,
        build,
        split,
        forest,
        pairs,
        mining,
        train,
        val,
        test,
        attr_dim,
    })
}
