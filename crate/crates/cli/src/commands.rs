//! One function per subcommand. Each returns its output directory (or the
//! retrieval ranking) so tests can drive commands without a subprocess; the
//! binary is a thin argv wrapper over these.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use garcia_core::contrastive::write_anchor_pairs;
use garcia_core::encoder::{init_params, HEAD_NS, TAIL_NS};
use garcia_core::graph::BuildReport;
use garcia_core::metrics::{slice_report, SliceReport};
use garcia_core::synthgen::{gini, top_share, Scenario};
use garcia_core::training::{
    config_hash, export_embeddings, load_embeddings, retrieve_topk, Checkpoint, TrainData,
};

use crate::ablation::{ablation_csv, run_ablation, score_records, AblationResult};
use crate::chart::{grouped_bar_chart, line_chart, Series};
use crate::dataset::{load_workspace, Workspace, DATASET_FILES};
use crate::{fresh_run_dir, runtime, validation, write_json, CliResult, RunConfig};

/// Flags shared by every pipeline command.
#[derive(Clone, Debug, Default)]
pub struct CommonArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        RunConfig::load(self.config.as_deref())?.resolve(self.seed)
    }
}

fn train_data<'a>(ws: &'a Workspace) -> TrainData<'a> {
    TrainData {
        split: &ws.split,
        forest: &ws.forest,
        pairs: &ws.pairs,
        train: &ws.train,
        val: &ws.val,
    }
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(validation(anyhow::anyhow!(
            "missing checkpoint file {}; run the pretrain or finetune command first",
            path.display()
        )));
    }
    Checkpoint::load(path).map_err(validation)
}

#[derive(Serialize)]
struct GenReport {
    n_queries: usize,
    n_services: usize,
    n_intentions: usize,
    n_sessions: usize,
    n_interaction_records: usize,
    n_correlation_records: usize,
    n_labels: usize,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    top_1pct_pv_share: f64,
    pv_gini: f64,
}

pub fn gen_data(common: &CommonArgs) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let out = fresh_run_dir(common.out.as_deref(), "gen-data")?;
    let started = Instant::now();
    let scenario = Scenario::generate(cfg.scenario.clone()).map_err(runtime)?;
    scenario.write_files(&out).map_err(runtime)?;

    let mut volumes = vec![0u64; cfg.scenario.n_queries];
    for event in &scenario.events {
        volumes[event.query] += 1;
    }
    let report = GenReport {
        n_queries: cfg.scenario.n_queries,
        n_services: cfg.scenario.n_services,
        n_intentions: scenario.intentions.len(),
        n_sessions: scenario.events.len(),
        n_interaction_records: scenario.interactions.len(),
        n_correlation_records: scenario.correlations.len(),
        n_labels: scenario.labels.len(),
        n_train: scenario.train.len(),
        n_val: scenario.val.len(),
        n_test: scenario.test.len(),
        top_1pct_pv_share: top_share(&volumes, 0.01),
        pv_gini: gini(&volumes),
    };
    write_json(&out, "gen_report.json", &report)?;
    cfg.write_resolved(&out)?;
    println!(
        "wrote {} dataset files to {} in {:.1}s (top-1% PV share {:.4})",
        DATASET_FILES.len(),
        out.display(),
        started.elapsed().as_secs_f64(),
        report.top_1pct_pv_share
    );
    Ok(out)
}

#[derive(Serialize)]
struct GraphShape {
    n_nodes: usize,
    n_edges: usize,
}

#[derive(Serialize)]
struct GraphReportOut {
    build: BuildReport,
    n_head_queries: usize,
    n_tail_queries: usize,
    head_graph: GraphShape,
    tail_graph: GraphShape,
    n_anchor_pairs: usize,
    n_skipped_tails: usize,
}

pub fn build_graph_cmd(common: &CommonArgs, data: &Path) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let ws = load_workspace(data, &cfg)?;
    let out = fresh_run_dir(common.out.as_deref(), "build-graph")?;

    let report = GraphReportOut {
        build: ws.build.clone(),
        n_head_queries: ws.split.head_queries.len(),
        n_tail_queries: ws.split.tail_queries.len(),
        head_graph: GraphShape {
            n_nodes: ws.split.head_graph.nodes().len(),
            n_edges: ws.split.head_graph.edges().len(),
        },
        tail_graph: GraphShape {
            n_nodes: ws.split.tail_graph.nodes().len(),
            n_edges: ws.split.tail_graph.edges().len(),
        },
        n_anchor_pairs: ws.mining.n_pairs,
        n_skipped_tails: ws.mining.n_skipped_tails,
    };
    write_json(&out, "graph_report.json", &report)?;

    #[derive(Serialize)]
    struct SplitOut<'a> {
        head: &'a std::collections::BTreeSet<String>,
        tail: &'a std::collections::BTreeSet<String>,
    }
    write_json(
        &out,
        "split.json",
        &SplitOut { head: &ws.split.head_queries, tail: &ws.split.tail_queries },
    )?;
    write_anchor_pairs(&out.join("anchor_pairs.tsv"), &ws.pairs).map_err(runtime)?;
    cfg.write_resolved(&out)?;
    println!(
        "graph: {} queries ({} head, {} tail), {} services, {} interaction + {} correlation \
         edges; {} anchor pairs ({} tails unmatched); reports in {}",
        ws.build.n_queries,
        ws.split.head_queries.len(),
        ws.split.tail_queries.len(),
        ws.build.n_services,
        ws.build.n_interaction_edges,
        ws.build.n_correlation_edges,
        ws.mining.n_pairs,
        ws.mining.n_skipped_tails,
        out.display()
    );
    Ok(out)
}

#[derive(Serialize, Deserialize)]
pub struct PretrainOut {
    pub n_steps: usize,
    pub dropped_positives: usize,
    pub loss_history: Vec<f64>,
}

pub fn pretrain_cmd(common: &CommonArgs, data: &Path) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let ws = load_workspace(data, &cfg)?;
    if ws.pairs.is_empty() {
        return Err(validation(anyhow::anyhow!(
            "no anchor pairs could be mined from {}; tail queries share no correlated services \
             with head queries",
            data.display()
        )));
    }
    let out = fresh_run_dir(common.out.as_deref(), "pretrain")?;
    let params = init_params(
        &cfg.train.hyper,
        &[HEAD_NS, TAIL_NS],
        ws.n_nodes(),
        ws.attr_dim,
        ws.forest.len(),
        cfg.train.seed,
    )
    .map_err(runtime)?;

    let started = Instant::now();
    let (checkpoint, report) =
        garcia_core::training::pretrain(params, &train_data(&ws), &cfg.train).map_err(runtime)?;
    checkpoint.save(&out.join("pretrained.ckpt")).map_err(runtime)?;
    write_json(
        &out,
        "pretrain_report.json",
        &PretrainOut {
            n_steps: report.n_steps,
            dropped_positives: report.dropped_positives,
            loss_history: report.loss_history.clone(),
        },
    )?;
    cfg.write_resolved(&out)?;
    println!(
        "pre-trained {} steps in {:.1}s; loss {:.6} -> {:.6}; checkpoint in {}",
        report.n_steps,
        started.elapsed().as_secs_f64(),
        report.loss_history.first().copied().unwrap_or(f64::NAN),
        report.loss_history.last().copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(out)
}

#[derive(Serialize, Deserialize)]
pub struct FinetuneOut {
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_bce: Vec<f64>,
    pub val_auc: Vec<f64>,
}

pub fn finetune_cmd(common: &CommonArgs, data: &Path, checkpoint: &Path) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let ws = load_workspace(data, &cfg)?;
    let loaded = load_checkpoint(checkpoint)?;
    if loaded.config_hash != config_hash(&cfg.train) {
        eprintln!(
            "warning: checkpoint {} was written under different training settings",
            checkpoint.display()
        );
    }
    let out = fresh_run_dir(common.out.as_deref(), "finetune")?;
    let started = Instant::now();
    let (tuned, report) =
        garcia_core::training::finetune(loaded, &train_data(&ws), &cfg.train).map_err(runtime)?;
    tuned.save(&out.join("finetuned.ckpt")).map_err(runtime)?;
    write_json(
        &out,
        "finetune_report.json",
        &FinetuneOut {
            best_epoch: report.best_epoch,
            stopped_early: report.stopped_early,
            train_bce: report.train_bce.clone(),
            val_auc: report.val_auc.clone(),
        },
    )?;
    cfg.write_resolved(&out)?;
    println!(
        "fine-tuned {} epochs in {:.1}s; best epoch {} (val AUC {:.4}); checkpoint in {}",
        report.val_auc.len(),
        started.elapsed().as_secs_f64(),
        report.best_epoch,
        report.val_auc.get(report.best_epoch).copied().unwrap_or(f64::NAN),
        out.display()
    );
    Ok(out)
}

#[derive(Serialize)]
struct EvalOut<'a> {
    split: &'a str,
    k: usize,
    checkpoint: String,
    n_records: usize,
    report: &'a SliceReport,
}

pub fn eval_cmd(
    common: &CommonArgs,
    data: &Path,
    checkpoint: &Path,
    split_name: &str,
    k: Option<usize>,
) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let k = k.unwrap_or(cfg.k);
    if k == 0 {
        return Err(validation(anyhow::anyhow!("k must be at least 1")));
    }
    let ws = load_workspace(data, &cfg)?;
    let records_in = match split_name {
        "train" => &ws.train,
        "val" => &ws.val,
        "test" => &ws.test,
        other => {
            return Err(validation(anyhow::anyhow!(
                "unknown split {other:?}; expected train, val, or test"
            )))
        }
    };
    let loaded = load_checkpoint(checkpoint)?;
    let out = fresh_run_dir(common.out.as_deref(), "eval")?;
    let scored = score_records(&loaded.params, &ws.split, &cfg.train.hyper, records_in)?;
    let report = slice_report(&scored, k).map_err(runtime)?;

    // Only the file name goes into the artifacts: run directories carry
    // timestamps, and reports must be byte-identical across equal-seed runs.
    let checkpoint_name = checkpoint
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    write_json(
        &out,
        "report.json",
        &EvalOut {
            split: split_name,
            k,
            checkpoint: checkpoint_name.clone(),
            n_records: scored.len(),
            report: &report,
        },
    )?;
    let text = format!(
        "split: {split_name}\ncheckpoint: {checkpoint_name}\nrecords: {}\ngauc weighting: {}\n\n{}",
        scored.len(),
        report.gauc_weighting,
        report.render_text()
    );
    std::fs::write(out.join("report.txt"), &text)
        .map_err(|e| runtime(anyhow::anyhow!("writing report.txt: {e}")))?;
    cfg.write_resolved(&out)?;
    println!("{text}\nreports in {}", out.display());
    Ok(out)
}

pub fn export_cmd(common: &CommonArgs, data: &Path, checkpoint: &Path) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let ws = load_workspace(data, &cfg)?;
    let loaded = load_checkpoint(checkpoint)?;
    let out = fresh_run_dir(common.out.as_deref(), "export")?;
    let path = out.join("embeddings.tsv");
    let count =
        export_embeddings(&loaded.params, &ws.split, &cfg.train.hyper, &path).map_err(runtime)?;
    cfg.write_resolved(&out)?;
    println!("exported {count} embedding records to {}", path.display());
    Ok(out)
}

pub fn retrieve_cmd(
    config: Option<&Path>,
    data: &Path,
    embeddings: &Path,
    query: &str,
    k: Option<usize>,
) -> CliResult<Vec<(String, f64)>> {
    let cfg = RunConfig::load(config)?.resolve(None)?;
    let ws = load_workspace(data, &cfg)?;
    if !embeddings.is_file() {
        return Err(validation(anyhow::anyhow!(
            "missing embeddings file {}; run the export command first",
            embeddings.display()
        )));
    }
    let table = load_embeddings(embeddings).map_err(validation)?;
    let top = retrieve_topk(&table, &ws.graph, query, k.unwrap_or(cfg.k)).map_err(validation)?;
    for (rank, (service, score)) in top.iter().enumerate() {
        println!("{}\t{service}\t{score:.6}", rank + 1);
    }
    Ok(top)
}

pub fn ablate_cmd(common: &CommonArgs, n_seeds: usize) -> CliResult<PathBuf> {
    let cfg = common.resolve()?;
    let out = fresh_run_dir(common.out.as_deref(), "ablate")?;
    let started = Instant::now();
    let total = n_seeds * crate::ablation::ARMS.len();
    let mut done = 0usize;
    let result = run_ablation(&cfg, n_seeds, |run| {
        done += 1;
        let auc_of = |slice: &str| {
            run.rows
                .iter()
                .find(|r| r.slice == slice)
                .and_then(|r| r.auc)
                .map(|a| format!("{a:.4}"))
                .unwrap_or_else(|| "n/a".to_string())
        };
        println!(
            "[{done}/{total}] arm={} seed={} tail_auc={} overall_auc={}",
            run.arm,
            run.seed,
            auc_of("tail"),
            auc_of("overall")
        );
    })?;
    write_json(&out, "ablation.json", &result)?;
    std::fs::write(out.join("ablation.csv"), ablation_csv(&result))
        .map_err(|e| runtime(anyhow::anyhow!("writing ablation.csv: {e}")))?;
    cfg.write_resolved(&out)?;
    println!(
        "ablation over {} seeds finished in {:.1}s; full vs wo_all: tail AUC wins {}/{}, \
         overall holds {}/{}; results in {}",
        n_seeds,
        started.elapsed().as_secs_f64(),
        result.summary.tail_wins,
        result.summary.seeds,
        result.summary.overall_holds,
        result.summary.seeds,
        out.display()
    );
    Ok(out)
}

struct MetricsRow {
    source: &'static str,
    arm: String,
    seed: String,
    slice: String,
    auc: Option<f64>,
    gauc: Option<f64>,
    ndcg: Option<f64>,
    k: usize,
    n_queries: Option<u64>,
    n_pairs: Option<u64>,
    n_skipped_groups: Option<u64>,
}

struct CurveRow {
    source: &'static str,
    series: String,
    step: usize,
    value: f64,
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let cell = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let count = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut out = String::from(
        "source,arm,seed,slice,auc,gauc,ndcg,k,n_queries,n_pairs,n_skipped_groups\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.source,
            r.arm,
            r.seed,
            r.slice,
            cell(r.auc),
            cell(r.gauc),
            cell(r.ndcg),
            r.k,
            count(r.n_queries),
            count(r.n_pairs),
            count(r.n_skipped_groups)
        ));
    }
    out
}

fn curves_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("source,series,step,value\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.source, r.series, r.step, r.value));
    }
    out
}

const SLICES: [&str; 3] = ["head", "tail", "overall"];

fn ablation_report(
    result: &AblationResult,
    out: &Path,
    rows: &mut Vec<MetricsRow>,
    curves: &mut Vec<CurveRow>,
    wrote: &mut Vec<String>,
) -> CliResult<()> {
    for run in &result.runs {
        for row in &run.rows {
            rows.push(MetricsRow {
                source: "ablation",
                arm: run.arm.clone(),
                seed: run.seed.to_string(),
                slice: row.slice.clone(),
                auc: row.auc,
                gauc: row.gauc,
                ndcg: row.ndcg,
                k: result.k,
                n_queries: Some(row.n_queries as u64),
                n_pairs: Some(row.n_pairs as u64),
                n_skipped_groups: Some(row.n_skipped_groups as u64),
            });
        }
    }

    let mut arms: Vec<String> = Vec::new();
    for run in &result.runs {
        if !arms.contains(&run.arm) {
            arms.push(run.arm.clone());
        }
    }
    let mean_auc = |arm: &str, slice: &str| {
        let values: Vec<f64> = result
            .runs
            .iter()
            .filter(|r| r.arm == arm)
            .filter_map(|r| r.rows.iter().find(|row| row.slice == slice).and_then(|row| row.auc))
            .collect();
        if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    };
    let series: Vec<Series> = SLICES
        .iter()
        .map(|slice| {
            Series::new(*slice, arms.iter().map(|arm| mean_auc(arm, slice)).collect())
        })
        .collect();
    let svg = grouped_bar_chart(
        &format!("test AUC by arm, mean of {} seeds", result.seeds.len()),
        "AUC",
        &arms,
        &series,
    );
    std::fs::write(out.join("ablation_auc.svg"), svg)
        .map_err(|e| runtime(anyhow::anyhow!("writing ablation_auc.svg: {e}")))?;
    wrote.push("ablation_auc.svg".to_string());

    if let Some(&first_seed) = result.seeds.first() {
        let loss_series: Vec<Series> = result
            .runs
            .iter()
            .filter(|r| r.seed == first_seed && !r.pretrain_loss.is_empty())
            .map(|r| Series::new(r.arm.clone(), r.pretrain_loss.clone()))
            .collect();
        for s in &loss_series {
            for (step, &v) in s.values.iter().enumerate() {
                curves.push(CurveRow {
                    source: "ablation",
                    series: format!("pretrain_loss/{}", s.name),
                    step,
                    value: v,
                });
            }
        }
        if !loss_series.is_empty() {
            let svg = line_chart(
                "pre-training loss by arm, first seed",
                "step",
                "composite loss",
                &loss_series,
            );
            std::fs::write(out.join("ablation_pretrain_loss.svg"), svg)
                .map_err(|e| runtime(anyhow::anyhow!("writing ablation_pretrain_loss.svg: {e}")))?;
            wrote.push("ablation_pretrain_loss.svg".to_string());
        }
    }
    Ok(())
}

fn json_f64(value: &serde_json::Value, path: &[&str]) -> Option<f64> {
    let mut at = value;
    for key in path {
        at = at.get(key)?;
    }
    at.as_f64()
}

fn json_u64(value: &serde_json::Value, path: &[&str]) -> Option<u64> {
    let mut at = value;
    for key in path {
        at = at.get(key)?;
    }
    at.as_u64()
}

fn eval_report(
    value: &serde_json::Value,
    out: &Path,
    rows: &mut Vec<MetricsRow>,
    wrote: &mut Vec<String>,
) -> CliResult<()> {
    let k = json_u64(value, &["k"]).unwrap_or(0) as usize;
    for slice in SLICES {
        rows.push(MetricsRow {
            source: "eval",
            arm: String::new(),
            seed: String::new(),
            slice: slice.to_string(),
            auc: json_f64(value, &["report", slice, "auc"]),
            gauc: json_f64(value, &["report", slice, "gauc"]),
            ndcg: json_f64(value, &["report", slice, "ndcg"]),
            k,
            n_queries: json_u64(value, &["report", slice, "n_queries"]),
            n_pairs: json_u64(value, &["report", slice, "n_pairs"]),
            n_skipped_groups: json_u64(value, &["report", slice, "n_skipped_groups"]),
        });
    }
    let metric_names = ["auc", "gauc", "ndcg"];
    let series: Vec<Series> = SLICES
        .iter()
        .map(|slice| {
            Series::new(
                *slice,
                metric_names
                    .iter()
                    .map(|m| json_f64(value, &["report", slice, m]).unwrap_or(f64::NAN))
                    .collect(),
            )
        })
        .collect();
    let groups: Vec<String> = vec!["auc".into(), "gauc".into(), format!("ndcg@{k}")];
    let svg = grouped_bar_chart("sliced ranking metrics", "value", &groups, &series);
    std::fs::write(out.join("eval_metrics.svg"), svg)
        .map_err(|e| runtime(anyhow::anyhow!("writing eval_metrics.svg: {e}")))?;
    wrote.push("eval_metrics.svg".to_string());
    Ok(())
}

fn read_json_file(path: &Path) -> CliResult<serde_json::Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| validation(anyhow::anyhow!("{}: {e}", path.display())))
}

pub fn report_cmd(in_dir: &Path, out: Option<&Path>) -> CliResult<PathBuf> {
    if !in_dir.is_dir() {
        return Err(validation(anyhow::anyhow!(
            "input directory {} does not exist",
            in_dir.display()
        )));
    }
    let out = fresh_run_dir(out, "report")?;
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut curves: Vec<CurveRow> = Vec::new();
    let mut wrote: Vec<String> = Vec::new();

    let ablation_path = in_dir.join("ablation.json");
    if ablation_path.is_file() {
        let text = std::fs::read_to_string(&ablation_path)
            .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", ablation_path.display())))?;
        let result: AblationResult = serde_json::from_str(&text)
            .map_err(|e| validation(anyhow::anyhow!("{}: {e}", ablation_path.display())))?;
        ablation_report(&result, &out, &mut rows, &mut curves, &mut wrote)?;
    }

    let pretrain_path = in_dir.join("pretrain_report.json");
    if pretrain_path.is_file() {
        let report: PretrainOut = serde_json::from_str(
            &std::fs::read_to_string(&pretrain_path)
                .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", pretrain_path.display())))?,
        )
        .map_err(|e| validation(anyhow::anyhow!("{}: {e}", pretrain_path.display())))?;
        for (step, &v) in report.loss_history.iter().enumerate() {
            curves.push(CurveRow { source: "pretrain", series: "loss".to_string(), step, value: v });
        }
        let svg = line_chart(
            "pre-training composite loss",
            "step",
            "loss",
            &[Series::new("loss", report.loss_history.clone())],
        );
        std::fs::write(out.join("pretrain_loss.svg"), svg)
            .map_err(|e| runtime(anyhow::anyhow!("writing pretrain_loss.svg: {e}")))?;
        wrote.push("pretrain_loss.svg".to_string());
    }

    let finetune_path = in_dir.join("finetune_report.json");
    if finetune_path.is_file() {
        let report: FinetuneOut = serde_json::from_str(
            &std::fs::read_to_string(&finetune_path)
                .map_err(|e| validation(anyhow::anyhow!("cannot read {}: {e}", finetune_path.display())))?,
        )
        .map_err(|e| validation(anyhow::anyhow!("{}: {e}", finetune_path.display())))?;
        for (step, &v) in report.train_bce.iter().enumerate() {
            curves.push(CurveRow { source: "finetune", series: "train_bce".to_string(), step, value: v });
        }
        for (step, &v) in report.val_auc.iter().enumerate() {
            curves.push(CurveRow { source: "finetune", series: "val_auc".to_string(), step, value: v });
        }
        let bce = line_chart(
            "fine-tuning training BCE",
            "step",
            "mean BCE",
            &[Series::new("train_bce", report.train_bce.clone())],
        );
        std::fs::write(out.join("finetune_bce.svg"), bce)
            .map_err(|e| runtime(anyhow::anyhow!("writing finetune_bce.svg: {e}")))?;
        wrote.push("finetune_bce.svg".to_string());
        let auc = line_chart(
            "validation AUC by epoch",
            "epoch",
            "AUC",
            &[Series::new("val_auc", report.val_auc.clone())],
        );
        std::fs::write(out.join("finetune_val_auc.svg"), auc)
            .map_err(|e| runtime(anyhow::anyhow!("writing finetune_val_auc.svg: {e}")))?;
        wrote.push("finetune_val_auc.svg".to_string());
    }

    let eval_path = in_dir.join("report.json");
    if eval_path.is_file() {
        let value = read_json_file(&eval_path)?;
        eval_report(&value, &out, &mut rows, &mut wrote)?;
    }

    if wrote.is_empty() {
        return Err(validation(anyhow::anyhow!(
            "nothing to report in {}; expected ablation.json, pretrain_report.json, \
             finetune_report.json, or report.json",
            in_dir.display()
        )));
    }
    if !rows.is_empty() {
        std::fs::write(out.join("metrics.csv"), metrics_csv(&rows))
            .map_err(|e| runtime(anyhow::anyhow!("writing metrics.csv: {e}")))?;
        wrote.push("metrics.csv".to_string());
    }
    if !curves.is_empty() {
        std::fs::write(out.join("loss_curves.csv"), curves_csv(&curves))
            .map_err(|e| runtime(anyhow::anyhow!("writing loss_curves.csv: {e}")))?;
        wrote.push("loss_curves.csv".to_string());
    }
    println!("wrote {} to {}", wrote.join(", "), out.display());
    Ok(out)
}
