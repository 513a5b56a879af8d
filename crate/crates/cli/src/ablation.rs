//! The ablation harness: trains the full framework next to its stripped-down
//! arms on identical data, seed by seed, and records sliced test metrics so
//! the tail-improvement claim can be checked directionally.

use serde::{Deserialize, Serialize};

use garcia_core::encoder::{init_params, HyperParams, HEAD_NS, SHARED_NS, TAIL_NS};
use garcia_core::graph::HeadTailSplit;
use garcia_core::io::LabelRecord;
use garcia_core::metrics::{slice_report, EvalRecord, SliceMetrics, SliceReport};
use garcia_core::params::{AdamState, ParameterSet};
use garcia_core::seed;
use garcia_core::synthgen::Scenario;
use garcia_core::training::{
    config_hash, finetune, pretrain, Checkpoint, Predictor, Stage, TrainData,
};

use crate::dataset::{workspace_from_scenario, Workspace};
use crate::{runtime, validation, CliResult, RunConfig};

/// The compared variants: the full framework, single-objective removals, no
/// pre-training at all, and one encoder shared across head and tail.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Full,
    WoSe,
    WoIg,
    WoAll,
    Shared,
}

pub const ARMS: [Arm; 5] = [Arm::Full, Arm::WoSe, Arm::WoIg, Arm::WoAll, Arm::Shared];

impl Arm {
    pub fn name(self) -> &'static str {
        match self {
            Arm::Full => "full",
            Arm::WoSe => "wo_se",
            Arm::WoIg => "wo_ig",
            Arm::WoAll => "wo_all",
            Arm::Shared => "shared",
        }
    }
}

/// Score labeled pairs with a trained model; the record side comes from the
/// exposure split.
pub fn score_records(
    params: &ParameterSet,
    split: &HeadTailSplit,
    hyper: &HyperParams,
    records: &[LabelRecord],
) -> CliResult<Vec<EvalRecord>> {
    let mut predictor = Predictor::new(params, split, hyper).map_err(runtime)?;
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let side = split.side_of(&r.query_id).ok_or_else(|| {
            validation(anyhow::anyhow!("query {} is not in the graph", r.query_id))
        })?;
        let score = predictor.predict(&r.query_id, &r.service_id).map_err(runtime)?;
        out.push(EvalRecord {
            query_id: r.query_id.clone(),
            service_id: r.service_id.clone(),
            label: r.label,
            score,
            side,
        });
    }
    Ok(out)
}

/// One slice of one run, flattened for JSON/CSV round trips.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SliceRow {
    pub slice: String,
    pub auc: Option<f64>,
    pub gauc: Option<f64>,
    pub ndcg: Option<f64>,
    pub n_queries: usize,
    pub n_pairs: usize,
    pub n_skipped_groups: usize,
}

fn slice_row(name: &str, m: &SliceMetrics) -> SliceRow {
    SliceRow {
        slice: name.to_string(),
        auc: m.auc,
        gauc: m.gauc,
        ndcg: m.ndcg,
        n_queries: m.n_queries,
        n_pairs: m.n_pairs,
        n_skipped_groups: m.n_skipped_groups,
    }
}

pub fn slice_rows(report: &SliceReport) -> Vec<SliceRow> {
    vec![
        slice_row("head", &report.head),
        slice_row("tail", &report.tail),
        slice_row("overall", &report.overall),
    ]
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRun {
    pub arm: String,
    pub seed: u64,
    pub rows: Vec<SliceRow>,
    /// Composite pre-training loss per step; empty for the arm that skips
    /// pre-training.
    pub pretrain_loss: Vec<f64>,
    /// Validation AUC per fine-tuning epoch.
    pub val_auc: Vec<f64>,
    pub best_epoch: usize,
}

/// Per-seed comparison of the full arm against no pre-training: tail AUC at
/// least as high, and overall AUC above or within the stated slack.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionalSummary {
    pub seeds: usize,
    pub overall_slack: f64,
    pub tail_wins: usize,
    pub overall_holds: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationResult {
    pub k: usize,
    pub seeds: Vec<u64>,
    pub runs: Vec<AblationRun>,
    pub summary: DirectionalSummary,
}

pub const OVERALL_SLACK: f64 = 0.01;

/// Train and evaluate one arm on an assembled workspace.
pub fn run_arm(ws: &Workspace, cfg: &RunConfig, arm: Arm) -> CliResult<AblationRun> {
    let mut train_cfg = cfg.train.clone();
    match arm {
        Arm::WoSe => train_cfg.hyper.alpha = 0.0,
        Arm::WoIg => train_cfg.hyper.beta = 0.0,
        _ => {}
    }
    let namespaces: &[&str] = if arm == Arm::Shared {
        &[SHARED_NS]
    } else {
        &[HEAD_NS, TAIL_NS]
    };
    let params = init_params(
        &train_cfg.hyper,
        namespaces,
        ws.n_nodes(),
        ws.attr_dim,
        ws.forest.len(),
        train_cfg.seed,
    )
    .map_err(runtime)?;
    let data = TrainData {
        split: &ws.split,
        forest: &ws.forest,
        pairs: &ws.pairs,
        train: &ws.train,
        val: &ws.val,
    };

    let (checkpoint, pretrain_loss) = if arm == Arm::WoAll {
        let adam = AdamState::new(&params);
        let checkpoint = Checkpoint {
            params,
            adam,
            epoch: 0,
            stage: Stage::Pretrained,
            config_hash: config_hash(&train_cfg),
        };
        (checkpoint, Vec::new())
    } else {
        let (checkpoint, report) = pretrain(params, &data, &train_cfg).map_err(runtime)?;
        (checkpoint, report.loss_history)
    };
    let (tuned, ft) = finetune(checkpoint, &data, &train_cfg).map_err(runtime)?;

    let records = score_records(&tuned.params, &ws.split, &train_cfg.hyper, &ws.test)?;
    let report = slice_report(&records, cfg.k).map_err(runtime)?;
    Ok(AblationRun {
        arm: arm.name().to_string(),
        seed: cfg.seed,
        rows: slice_rows(&report),
        pretrain_loss,
        val_auc: ft.val_auc,
        best_epoch: ft.best_epoch,
    })
}

fn row_auc(run: &AblationRun, slice: &str) -> Option<f64> {
    run.rows.iter().find(|r| r.slice == slice).and_then(|r| r.auc)
}

fn summarize(seeds: &[u64], runs: &[AblationRun]) -> DirectionalSummary {
    let mut tail_wins = 0;
    let mut overall_holds = 0;
    for &seed_val in seeds {
        let find = |arm: Arm| runs.iter().find(|r| r.arm == arm.name() && r.seed == seed_val);
        let (Some(full), Some(wo_all)) = (find(Arm::Full), find(Arm::WoAll)) else {
            continue;
        };
        if let (Some(a), Some(b)) = (row_auc(full, "tail"), row_auc(wo_all, "tail")) {
            if a >= b {
                tail_wins += 1;
            }
        }
        if let (Some(a), Some(b)) = (row_auc(full, "overall"), row_auc(wo_all, "overall")) {
            if a >= b - OVERALL_SLACK {
                overall_holds += 1;
            }
        }
    }
    DirectionalSummary {
        seeds: seeds.len(),
        overall_slack: OVERALL_SLACK,
        tail_wins,
        overall_holds,
    }
}

/// Run every arm over `n_seeds` derived seeds. Arms within one seed share the
/// generated scenario and the assembled workspace, so they differ only in
/// training. `progress` receives one line per finished run.
pub fn run_ablation(
    cfg: &RunConfig,
    n_seeds: usize,
    mut progress: impl FnMut(&AblationRun),
) -> CliResult<AblationResult> {
    if n_seeds == 0 {
        return Err(validation(anyhow::anyhow!("seeds must be at least 1")));
    }
    let seeds: Vec<u64> =
        (0..n_seeds).map(|i| seed::sub_seed(cfg.seed, &format!("ablate-{i}"))).collect();
    let mut runs = Vec::with_capacity(n_seeds * ARMS.len());
    for &seed_val in &seeds {
        let mut seed_cfg = cfg.clone();
        seed_cfg.seed = seed_val;
        let seed_cfg = seed_cfg.resolve(None)?;
        let scenario = Scenario::generate(seed_cfg.scenario.clone()).map_err(runtime)?;
        let ws = workspace_from_scenario(&scenario, &seed_cfg)?;
        for arm in ARMS {
            let run = run_arm(&ws, &seed_cfg, arm)?;
            progress(&run);
            runs.push(run);
        }
    }
    let summary = summarize(&seeds, &runs);
    Ok(AblationResult { k: cfg.k, seeds, runs, summary })
}

/// One CSV row per arm per seed per slice.
pub fn ablation_csv(result: &AblationResult) -> String {
    let mut out =
        String::from("arm,seed,slice,auc,gauc,ndcg,k,n_queries,n_pairs,n_skipped_groups\n");
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for run in &result.runs {
        for row in &run.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                run.arm,
                run.seed,
                row.slice,
                cell(row.auc),
                cell(row.gauc),
                cell(row.ndcg),
                result.k,
                row.n_queries,
                row.n_pairs,
                row.n_skipped_groups
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use garcia_core::synthgen::ScenarioConfig;

    fn tiny_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.head_fraction = 0.25;
        cfg.k = 5;
        cfg.scenario = ScenarioConfig {
            n_queries: 24,
            n_services: 14,
            n_trees: 2,
            max_depth: 3,
            sessions: 400,
            candidates_per_query: 6,
            correlation_rate: 0.7,
            ..ScenarioConfig::default()
        };
        cfg.train.epochs_pretrain = 1;
        cfg.train.epochs_finetune = 1;
        cfg.train.batch_size = 16;
        cfg.train.hyper.embed_dim = 8;
        cfg.train.hyper.h_levels = 3;
        cfg.resolve(Some(11)).unwrap()
    }

    #[test]
    fn every_arm_produces_three_slices_per_seed() {
        let cfg = tiny_config();
        let mut seen = Vec::new();
        let result = run_ablation(&cfg, 2, |run| seen.push(run.arm.clone())).unwrap();
        assert_eq!(result.runs.len(), ARMS.len() * 2);
        assert_eq!(seen.len(), ARMS.len() * 2);
        for run in &result.runs {
            assert_eq!(run.rows.len(), 3);
            let slices: Vec<&str> = run.rows.iter().map(|r| r.slice.as_str()).collect();
            assert_eq!(slices, ["head", "tail", "overall"]);
            if run.arm == "wo_all" {
                assert!(run.pretrain_loss.is_empty());
            } else {
                assert!(!run.pretrain_loss.is_empty());
            }
            assert!(!run.val_auc.is_empty());
        }
        assert_eq!(result.summary.seeds, 2);
        assert!(result.summary.tail_wins <= 2);

        let csv = ablation_csv(&result);
        assert_eq!(csv.lines().count(), 1 + ARMS.len() * 2 * 3);
        assert!(csv.starts_with("arm,seed,slice,"));
    }

    #[test]
    fn arms_share_data_but_differ_in_training() {
        let cfg = tiny_config();
        let scenario = Scenario::generate(cfg.scenario.clone()).unwrap();
        let ws = workspace_from_scenario(&scenario, &cfg).unwrap();
        let full = run_arm(&ws, &cfg, Arm::Full).unwrap();
        let full_again = run_arm(&ws, &cfg, Arm::Full).unwrap();
        let wo_se = run_arm(&ws, &cfg, Arm::WoSe).unwrap();

        let auc = |run: &AblationRun| row_auc(run, "overall").unwrap();
        assert_eq!(auc(&full).to_bits(), auc(&full_again).to_bits());
        assert_eq!(full.pretrain_loss, full_again.pretrain_loss);
        assert_ne!(full.pretrain_loss, wo_se.pretrain_loss);
    }

    #[test]
    fn summary_counts_wins_and_slack() {
        let mk = |arm: &str, seed_val: u64, tail: f64, overall: f64| AblationRun {
            arm: arm.to_string(),
            seed: seed_val,
            rows: vec![
                SliceRow {
                    slice: "head".into(),
                    auc: Some(0.9),
                    gauc: None,
                    ndcg: None,
                    n_queries: 1,
                    n_pairs: 1,
                    n_skipped_groups: 0,
                },
                SliceRow {
                    slice: "tail".into(),
                    auc: Some(tail),
                    gauc: None,
                    ndcg: None,
                    n_queries: 1,
                    n_pairs: 1,
                    n_skipped_groups: 0,
                },
                SliceRow {
                    slice: "overall".into(),
                    auc: Some(overall),
                    gauc: None,
                    ndcg: None,
                    n_queries: 1,
                    n_pairs: 1,
                    n_skipped_groups: 0,
                },
            ],
            pretrain_loss: Vec::new(),
            val_auc: vec![0.5],
            best_epoch: 0,
        };
        let runs = vec![
            mk("full", 1, 0.80, 0.85),
            mk("wo_all", 1, 0.75, 0.86),
            mk("full", 2, 0.70, 0.80),
            mk("wo_all", 2, 0.72, 0.84),
        ];
        let s = summarize(&[1, 2], &runs);
        assert_eq!(s.tail_wins, 1);
        assert_eq!(s.overall_holds, 1);
    }
}
