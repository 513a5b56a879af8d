//! Two-stage optimization: contrastive pre-training of both encoders and the
//! tree encoder, then supervised fine-tuning of the click MLP (and, unless
//! frozen, the encoders) with early stopping on validation AUC. Also home to
//! checkpoint serialization, bulk prediction, embedding export, and
//! inner-product retrieval.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::{
    igcl_loss, igcl_negatives, ktcl_loss, secl_loss, AnchorPair, IgclConfig, IgclTerm, KtclBatch,
};
use crate::encoder::{
    encode_adaptive, encode_intentions, encode_nodes, HyperParams, LayerStates, HEAD_NS,
    SHARED_NS, TAIL_NS,
};
use crate::forest::IntentionForest;
use crate::graph::{HeadTailSplit, ServiceSearchGraph, Side};
use crate::io::LabelRecord;
use crate::metrics::auc_pairs;
use crate::params::{adam_step, AdamState, ParameterSet};
use crate::seed;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs_pretrain: usize,
    pub epochs_finetune: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hyper: HyperParams,
    pub seed: u64,
    /// Fine-tuning epochs without a validation-AUC improvement before
    /// stopping.
    pub patience: usize,
    pub igcl: IgclConfig,
    /// Freeze both encoders during fine-tuning and train the MLP alone.
    pub finetune_mlp_only: bool,
    /// Keep the contrastive objective as a regularizer during fine-tuning.
    pub include_cl_in_finetune: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_pretrain: 10,
            epochs_finetune: 10,
            batch_size: 1024,
            lr: 1e-4,
            hyper: HyperParams::default(),
            seed: 7,
            patience: 3,
            igcl: IgclConfig::default(),
            finetune_mlp_only: false,
            include_cl_in_finetune: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |detail: &str| Err(Error::Config(detail.to_string()));
        if self.epochs_pretrain == 0 || self.epochs_finetune == 0 {
            return err("epoch counts must be positive");
        }
        if self.batch_size < 2 {
            return err("batch_size must be at least 2 for in-batch negatives");
        }
        if !(self.lr > 0.0) {
            return err("lr must be positive");
        }
        if self.patience == 0 {
            return err("patience must be positive");
        }
        self.hyper.validate()
    }
}

/// Borrowed views of everything a training stage needs.
pub struct TrainData<'a> {
    pub split: &'a HeadTailSplit,
    pub forest: &'a IntentionForest,
    pub pairs: &'a [AnchorPair],
    pub train: &'a [LabelRecord],
    pub val: &'a [LabelRecord],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrained,
    Finetuned,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub params: ParameterSet,
    pub adam: AdamState,
    pub epoch: u64,
    pub stage: Stage,
    pub config_hash: [u8; 32],
}

/// SHA-256 of the serialized training configuration; stored in checkpoints so
/// a reload under different settings is detectable.
pub fn config_hash(cfg: &TrainConfig) -> [u8; 32] {
    let json = serde_json::to_string(cfg).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    hasher.finalize().into()
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"GRCA";
const CHECKPOINT_VERSION: u32 = 1;

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    w.write_all(&(t.rows() as u32).to_le_bytes())?;
    w.write_all(&(t.cols() as u32).to_le_bytes())?;
    for v in t.data() {
        w.write_all(&v.to_bits().to_le_bytes())?;
    }
    Ok(())
}

fn read_exact_n(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact_n(r, 4)?.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    Ok(u64::from_le_bytes(read_exact_n(r, 8)?.try_into().expect("8 bytes")))
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rows = read_u32(r)? as usize;
    let cols = read_u32(r)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Checkpoint("tensor shape overflows".to_string()))?;
    let bytes = read_exact_n(r, n * 8)?;
    let data: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_bits(u64::from_le_bytes(c.try_into().expect("8 bytes"))))
        .collect();
    Tensor::new(rows, cols, data)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&self.config_hash)?;
        w.write_all(&[match self.stage {
            Stage::Pretrained => 0u8,
            Stage::Finetuned => 1,
        }])?;
        w.write_all(&self.epoch.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, tensor) in self.params.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_tensor(&mut w, tensor)?;
        }
        let (m, v, t) = self.adam.parts();
        for moments in [m, v] {
            if moments.len() != self.params.len() {
                return Err(Error::Checkpoint(
                    "optimizer state does not cover the parameters".to_string(),
                ));
            }
            for (name, _) in self.params.iter() {
                let tensor = moments.get(name).ok_or_else(|| {
                    Error::Checkpoint(format!("optimizer state missing {name}"))
                })?;
                write_tensor(&mut w, tensor)?;
            }
        }
        w.write_all(&t.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let magic = read_exact_n(&mut r, 4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let config_hash: [u8; 32] =
            read_exact_n(&mut r, 32)?.try_into().expect("32 bytes");
        let stage = match read_exact_n(&mut r, 1)?[0] {
            0 => Stage::Pretrained,
            1 => Stage::Finetuned,
            other => return Err(Error::Checkpoint(format!("unknown stage byte {other}"))),
        };
        let epoch = read_u64(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let mut params = ParameterSet::new();
        let mut names = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let name = String::from_utf8(read_exact_n(&mut r, name_len)?)
                .map_err(|e| Error::Checkpoint(format!("parameter name not utf-8: {e}")))?;
            let tensor = read_tensor(&mut r)?;
            params.insert(&name, tensor)?;
            names.push(name);
        }
        let read_moments = |r: &mut BufReader<std::fs::File>| -> Result<BTreeMap<String, Tensor>> {
            let mut map = BTreeMap::new();
            for name in &names {
                map.insert(name.clone(), read_tensor(r)?);
            }
            Ok(map)
        };
        let m = read_moments(&mut r)?;
        let v = read_moments(&mut r)?;
        let t = read_u64(&mut r)?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint {
            params,
            adam: AdamState::from_parts(m, v, t),
            epoch,
            stage,
            config_hash,
        })
    }
}

/// The encoder layout a parameter set was initialized with: one shared
/// encoder when a `shared/` table exists, otherwise the dual head/tail pair.
pub fn encoder_namespaces(params: &ParameterSet) -> (&'static str, &'static str) {
    if params.contains(&format!("{SHARED_NS}/emb")) {
        (SHARED_NS, SHARED_NS)
    } else {
        (HEAD_NS, TAIL_NS)
    }
}

/// Encode both subgraphs under whichever layout the parameters carry.
fn encode_split(
    tape: &mut Tape,
    split: &HeadTailSplit,
    params: &ParameterSet,
    hyper: &HyperParams,
) -> Result<(LayerStates, LayerStates)> {
    let (head_ns, tail_ns) = encoder_namespaces(params);
    if head_ns == tail_ns {
        let head = encode_nodes(tape, &split.head_graph, params, head_ns, hyper)?;
        let tail = encode_nodes(tape, &split.tail_graph, params, tail_ns, hyper)?;
        Ok((head, tail))
    } else {
        encode_adaptive(tape, split, params, head_ns, tail_ns, hyper)
    }
}

fn first_non_finite(params: &ParameterSet) -> Option<String> {
    for (name, tensor) in params.iter() {
        if tensor.data().iter().any(|v| !v.is_finite()) {
            return Some(name.clone());
        }
    }
    None
}

/// Services adjacent to any batch query that both encoders cover, capped for
/// tape economy; the shared coverage is what makes the service-alignment
/// direction of knowledge transfer well defined.
fn batch_services(split: &HeadTailSplit, batch: &[&AnchorPair], cap: usize) -> Vec<String> {
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut collect = |graph: &ServiceSearchGraph, query_id: &str| {
        if let Some(q) = graph.lookup(query_id) {
            for &(neighbor, _) in graph.neighbors(q) {
                seen.insert(graph.node(neighbor).id.clone());
            }
        }
    };
    for pair in batch {
        collect(&split.tail_graph, &pair.tail_id);
        collect(&split.head_graph, &pair.head_id);
    }
    seen.into_iter()
        .filter(|id| {
            split.head_graph.lookup(id).is_some() && split.tail_graph.lookup(id).is_some()
        })
        .take(cap)
        .collect()
}

struct StepLosses {
    total: Var,
    ktcl: Var,
    secl: Var,
    igcl: Var,
    dropped_positives: usize,
}

fn readout_or_err(states: &LayerStates, id: &str) -> Result<Var> {
    states
        .readout_of(id)
        .ok_or_else(|| Error::Train(format!("{id} missing from the {} graph", states.namespace)))
}

fn stacks_for(states: &LayerStates, ids: &BTreeSet<&str>) -> Result<Vec<Vec<Var>>> {
    ids.iter()
        .map(|id| {
            let idx = states
                .lookup(id)
                .ok_or_else(|| Error::Train(format!("{id} missing from batch graph")))?;
            Ok(states.layer_stack(idx))
        })
        .collect()
}

/// Build the full pre-training objective for one batch of anchor-pair
/// indices on the given tape. Returns the composite and its three parts.
fn step_losses(
    tape: &mut Tape,
    params: &ParameterSet,
    data: &TrainData,
    cfg: &TrainConfig,
    chunk: &[usize],
    rng: &mut ChaCha20Rng,
) -> Result<StepLosses> {
    let hyper = &cfg.hyper;
    let (head, tail) = encode_split(tape, data.split, params, hyper)?;
    let tree = encode_intentions(tape, data.forest, params, hyper)?;

    let batch: Vec<&AnchorPair> = chunk.iter().map(|&i| &data.pairs[i]).collect();
    let mut pair_vars = Vec::with_capacity(batch.len());
    for pair in &batch {
        pair_vars.push((readout_or_err(&tail, &pair.tail_id)?, readout_or_err(&head, &pair.head_id)?));
    }
    let services = batch_services(data.split, &batch, cfg.batch_size);
    let mut service_vars = Vec::with_capacity(services.len());
    for id in &services {
        service_vars.push((readout_or_err(&head, id)?, readout_or_err(&tail, id)?));
    }
    let ktcl = ktcl_loss(
        tape,
        &KtclBatch { pairs: pair_vars, services: service_vars },
        hyper.tau,
    )?;

    let head_queries: BTreeSet<&str> = batch.iter().map(|p| p.head_id.as_str()).collect();
    let tail_queries: BTreeSet<&str> = batch.iter().map(|p| p.tail_id.as_str()).collect();
    let service_ids: BTreeSet<&str> = services.iter().map(|s| s.as_str()).collect();
    let mut secl = tape.constant_scalar(0.0)?;
    let mut dead_states = 0usize;
    for (states, ids) in [
        (&head, &head_queries),
        (&tail, &tail_queries),
        (&head, &service_ids),
        (&tail, &service_ids),
    ] {
        if ids.is_empty() {
            continue;
        }
        let (group, dead) = secl_loss(tape, &stacks_for(states, ids)?, hyper.tau)?;
        dead_states += dead;
        secl = tape.add(secl, group)?;
    }

    let mut members: BTreeSet<(Side, &str)> = BTreeSet::new();
    members.extend(head_queries.iter().map(|&id| (Side::Head, id)));
    members.extend(tail_queries.iter().map(|&id| (Side::Tail, id)));
    for &id in &service_ids {
        members.insert((Side::Head, id));
        members.insert((Side::Tail, id));
    }
    let mut terms = Vec::new();
    for (side, id) in members {
        let graph = data.split.graph_of(side);
        let node = graph.node(graph.lookup(id).expect("member came from this graph"));
        let Some(intention) = &node.intention_id else { continue };
        let path = data.forest.ancestors(intention)?;
        let negatives = igcl_negatives(data.forest, &path, &cfg.igcl, rng);
        let states = match side {
            Side::Head => &head,
            Side::Tail => &tail,
        };
        let positives = path
            .iter()
            .zip(&negatives)
            .map(|(&j, negs)| (tree.of(j), negs.iter().map(|&n| tree.of(n)).collect()))
            .collect();
        terms.push(IgclTerm { readout: readout_or_err(states, id)?, positives });
    }
    let (igcl, igcl_dropped) = igcl_loss(tape, &terms, hyper.tau)?;

    let weighted_secl = tape.scalar_mul(secl, hyper.alpha)?;
    let weighted_igcl = tape.scalar_mul(igcl, hyper.beta)?;
    let mut total = tape.add(ktcl, weighted_secl)?;
    total = tape.add(total, weighted_igcl)?;
    Ok(StepLosses { total, ktcl, secl, igcl, dropped_positives: igcl_dropped + dead_states })
}

/// The composite objective and its parts evaluated on one batch of anchor
/// pairs, with negative sampling seeded from the config.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveValues {
    pub total: f64,
    pub ktcl: f64,
    pub secl: f64,
    pub igcl: f64,
    pub dropped_positives: usize,
}

pub fn evaluate_objective(
    params: &ParameterSet,
    data: &TrainData,
    cfg: &TrainConfig,
    chunk: &[usize],
) -> Result<ObjectiveValues> {
    let mut tape = Tape::new();
    let mut rng = seed::rng(cfg.seed, "objective");
    let losses = step_losses(&mut tape, params, data, cfg, chunk, &mut rng)?;
    Ok(ObjectiveValues {
        total: tape.value(losses.total).as_scalar()?,
        ktcl: tape.value(losses.ktcl).as_scalar()?,
        secl: tape.value(losses.secl).as_scalar()?,
        igcl: tape.value(losses.igcl).as_scalar()?,
        dropped_positives: losses.dropped_positives,
    })
}

#[derive(Clone, Debug, Default)]
pub struct PretrainReport {
    /// Composite loss per optimization step.
    pub loss_history: Vec<f64>,
    pub n_steps: usize,
    /// Contrastive terms skipped for degeneracy: intention paths with no
    /// sampleable negatives plus zero-norm (dead ReLU) layer states.
    pub dropped_positives: usize,
}

fn non_finite_loss_error(step: usize, value: f64, params: &ParameterSet) -> Error {
    let culprit = first_non_finite(params)
        .map(|name| format!("first non-finite tensor: {name}"))
        .unwrap_or_else(|| "parameters are finite; the loss graph overflowed".to_string());
    Error::Train(format!("non-finite loss {value} at step {step}; {culprit}"))
}

/// The tape refuses to build non-finite tensors, so a poisoned parameter
/// surfaces as a construction error; name the offender for the diagnostic.
fn augment_step_error(e: Error, step: usize, params: &ParameterSet) -> Error {
    match first_non_finite(params) {
        Some(name) => Error::Train(format!(
            "step {step} failed (first non-finite tensor: {name}): {e}"
        )),
        None => e,
    }
}

pub fn pretrain(
    params: ParameterSet,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, PretrainReport)> {
    cfg.validate()?;
    if data.pairs.is_empty() {
        return Err(Error::Train("no anchor pairs to pre-train on".to_string()));
    }
    let mut params = params;
    let mut adam = AdamState::new(&params);
    let mut rng = seed::rng(cfg.seed, "pretrain");
    let mut report = PretrainReport::default();

    for epoch in 0..cfg.epochs_pretrain {
        let mut order: Vec<usize> = (0..data.pairs.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0;
        let mut epoch_steps = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let losses = step_losses(&mut tape, &params, data, cfg, chunk, &mut rng)
                .map_err(|e| augment_step_error(e, report.n_steps, &params))?;
            let value = tape.value(losses.total).as_scalar()?;
            if !value.is_finite() {
                return Err(non_finite_loss_error(report.n_steps, value, &params));
            }
            let grads = tape.backward(losses.total, &params)?;
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            report.loss_history.push(value);
            report.dropped_positives += losses.dropped_positives;
            report.n_steps += 1;
            epoch_sum += value;
            epoch_steps += 1;
        }
        log::info!(
            "pretrain epoch {epoch}: mean loss {:.6} over {epoch_steps} steps",
            epoch_sum / epoch_steps.max(1) as f64
        );
    }
    let checkpoint = Checkpoint {
        params,
        adam,
        epoch: cfg.epochs_pretrain as u64,
        stage: Stage::Pretrained,
        config_hash: config_hash(cfg),
    };
    Ok((checkpoint, report))
}

/// Two-layer click head: ŷ = σ(W2·ReLU(W1[z_q ‖ z_s] + b1) + b2).
pub fn mlp_forward(tape: &mut Tape, params: &ParameterSet, zq: Var, zs: Var) -> Result<Var> {
    let x = tape.concat(&[zq, zs])?;
    let w1 = tape.param(params, "mlp/w1")?;
    let b1 = tape.param(params, "mlp/b1")?;
    let w2 = tape.param(params, "mlp/w2")?;
    let b2 = tape.param(params, "mlp/b2")?;
    let mut h = tape.matvec(w1, x)?;
    h = tape.add(h, b1)?;
    h = tape.relu(h)?;
    let mut out = tape.matvec(w2, h)?;
    out = tape.add(out, b2)?;
    let y = tape.sigmoid(out)?;
    tape.index(y, 0)
}

fn side_states<'a>(
    split: &HeadTailSplit,
    head: &'a LayerStates,
    tail: &'a LayerStates,
    query_id: &str,
) -> Result<(&'a LayerStates, &'a LayerStates)> {
    match split.side_of(query_id) {
        Some(Side::Head) => Ok((head, tail)),
        Some(Side::Tail) => Ok((tail, head)),
        None => Err(Error::Data(format!("unknown query {query_id}"))),
    }
}

/// ŷ for one pair: the query reads from its own side's encoder and the
/// service follows the query's side when that encoder covers it.
fn pair_prediction(
    tape: &mut Tape,
    params: &ParameterSet,
    split: &HeadTailSplit,
    head: &LayerStates,
    tail: &LayerStates,
    query_id: &str,
    service_id: &str,
) -> Result<Var> {
    let (same, other) = side_states(split, head, tail, query_id)?;
    let zq = readout_or_err(same, query_id)?;
    let zs = same
        .readout_of(service_id)
        .or_else(|| other.readout_of(service_id))
        .ok_or_else(|| Error::Data(format!("service {service_id} not in either graph")))?;
    mlp_forward(tape, params, zq, zs)
}

#[derive(Clone, Debug, Default)]
pub struct FinetuneReport {
    /// Mean training BCE per optimization step.
    pub train_bce: Vec<f64>,
    /// Validation AUC after each epoch.
    pub val_auc: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

fn bce_term(tape: &mut Tape, prediction: Var, label: u8) -> Result<Var> {
    let clamped = tape.clamp(prediction, BCE_CLAMP, 1.0 - BCE_CLAMP)?;
    let prob = if label == 1 {
        clamped
    } else {
        let negated = tape.neg(clamped)?;
        tape.add_scalar(negated, 1.0)?
    };
    let log_prob = tape.log(prob)?;
    tape.neg(log_prob)
}

pub fn finetune(
    checkpoint: Checkpoint,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, FinetuneReport)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Train("no training labels".to_string()));
    }
    let n_pos = data.train.iter().filter(|r| r.label == 1).count();
    if n_pos == 0 || n_pos == data.train.len() {
        return Err(Error::Train(format!(
            "training labels are all class {}; BCE cannot rank",
            (n_pos > 0) as u8
        )));
    }

    let mut params = checkpoint.params;
    let mut adam = AdamState::new(&params);
    let mut rng = seed::rng(cfg.seed, "finetune");
    let mut report = FinetuneReport::default();
    let mut best: Option<(f64, usize, ParameterSet)> = None;
    let mut since_best = 0usize;
    let mut final_epoch = 0u64;
    let mut cl_cursor = 0usize;

    for epoch in 0..cfg.epochs_finetune {
        final_epoch = epoch as u64 + 1;
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let (head, tail) = encode_split(&mut tape, data.split, &params, &cfg.hyper)?;
            let mut sum = tape.constant_scalar(0.0)?;
            for &i in chunk {
                let record = &data.train[i];
                let prediction = pair_prediction(
                    &mut tape,
                    &params,
                    data.split,
                    &head,
                    &tail,
                    &record.query_id,
                    &record.service_id,
                )?;
                let term = bce_term(&mut tape, prediction, record.label)?;
                sum = tape.add(sum, term)?;
            }
            let mut loss = tape.scalar_mul(sum, 1.0 / chunk.len() as f64)?;
            let bce_value = tape.value(loss).as_scalar()?;
            if cfg.include_cl_in_finetune && !data.pairs.is_empty() {
                let span: Vec<usize> = (0..cfg.batch_size.min(data.pairs.len()))
                    .map(|k| (cl_cursor + k) % data.pairs.len())
                    .collect();
                cl_cursor = (cl_cursor + span.len()) % data.pairs.len();
                let cl = step_losses(&mut tape, &params, data, cfg, &span, &mut rng)?;
                loss = tape.add(loss, cl.total)?;
            }
            let value = tape.value(loss).as_scalar()?;
            if !value.is_finite() {
                return Err(non_finite_loss_error(report.train_bce.len(), value, &params));
            }
            let mut grads = tape.backward(loss, &params)?;
            if cfg.finetune_mlp_only {
                for (name, grad) in grads.iter_mut() {
                    if !name.starts_with("mlp/") {
                        *grad = Tensor::zeros(grad.rows(), grad.cols());
                    }
                }
            }
            adam_step(&mut params, &grads, &mut adam, cfg.lr)?;
            report.train_bce.push(bce_value);
        }

        let mut predictor = Predictor::new(&params, data.split, &cfg.hyper)?;
        let mut scored = Vec::with_capacity(data.val.len());
        for record in data.val {
            scored.push((record.label, predictor.predict(&record.query_id, &record.service_id)?));
        }
        let val_auc = auc_pairs(&scored)?;
        report.val_auc.push(val_auc);
        log::info!("finetune epoch {epoch}: val AUC {val_auc:.4}");
        let improved = best.as_ref().is_none_or(|(b, _, _)| val_auc > *b);
        if improved {
            best = Some((val_auc, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                report.stopped_early = true;
                break;
            }
        }
    }

    let (_, best_epoch, best_params) = best.expect("at least one epoch ran");
    report.best_epoch = best_epoch;
    let out = Checkpoint {
        params: best_params,
        adam,
        epoch: final_epoch,
        stage: Stage::Finetuned,
        config_hash: config_hash(cfg),
    };
    Ok((out, report))
}

/// Forward-only scorer: encodes both graphs once, then runs the click head
/// per pair on the same tape, so scores match training forwards exactly.
pub struct Predictor<'a> {
    tape: Tape,
    head: LayerStates,
    tail: LayerStates,
    params: &'a ParameterSet,
    split: &'a HeadTailSplit,
}

impl<'a> Predictor<'a> {
    pub fn new(
        params: &'a ParameterSet,
        split: &'a HeadTailSplit,
        hyper: &HyperParams,
    ) -> Result<Predictor<'a>> {
        let mut tape = Tape::new();
        let (head, tail) = encode_split(&mut tape, split, params, hyper)?;
        Ok(Predictor { tape, head, tail, params, split })
    }

    pub fn predict(&mut self, query_id: &str, service_id: &str) -> Result<f64> {
        let y = pair_prediction(
            &mut self.tape,
            self.params,
            self.split,
            &self.head,
            &self.tail,
            query_id,
            service_id,
        )?;
        self.tape.value(y).as_scalar()
    }

    /// The node's readout on the given side, if that encoder covers it.
    pub fn readout(&self, id: &str, side: Side) -> Option<Vec<f64>> {
        let states = match side {
            Side::Head => &self.head,
            Side::Tail => &self.tail,
        };
        states.readout_of(id).map(|v| self.tape.value(v).data().to_vec())
    }
}

/// Write one record per node per side that encodes it:
/// `id ⇥ side ⇥ comma-separated floats` at nine significant digits.
/// Returns the record count.
pub fn export_embeddings(
    params: &ParameterSet,
    split: &HeadTailSplit,
    hyper: &HyperParams,
    path: &Path,
) -> Result<usize> {
    let predictor = Predictor::new(params, split, hyper)?;
    let mut records: Vec<(String, Side)> = Vec::new();
    for (graph, side) in [(&split.head_graph, Side::Head), (&split.tail_graph, Side::Tail)] {
        for node in graph.nodes() {
            records.push((node.id.clone(), side));
        }
    }
    records.sort();
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for (id, side) in &records {
        let vector = predictor.readout(id, *side).expect("record came from this graph");
        let floats: Vec<String> = vector.iter().map(|v| format!("{v:.8e}")).collect();
        writeln!(w, "{id}\t{}\t{}", side.as_str(), floats.join(","))?;
    }
    w.flush()?;
    Ok(records.len())
}

/// Embeddings loaded back from an export: per id, the sides that carry it.
pub struct EmbeddingTable {
    pub records: BTreeMap<String, Vec<(Side, Vec<f64>)>>,
}

impl EmbeddingTable {
    pub fn get(&self, id: &str, side: Side) -> Option<&Vec<f64>> {
        self.records.get(id)?.iter().find(|(s, _)| *s == side).map(|(_, v)| v)
    }

    /// The record on `side` if present, else the other side's.
    fn preferring(&self, id: &str, side: Side) -> Option<&Vec<f64>> {
        let entries = self.records.get(id)?;
        entries
            .iter()
            .find(|(s, _)| *s == side)
            .or_else(|| entries.first())
            .map(|(_, v)| v)
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path)?;
    let mut records: BTreeMap<String, Vec<(Side, Vec<f64>)>> = BTreeMap::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| Error::Data(format!("{}:{}: {msg}", path.display(), lineno + 1));
        let mut cols = line.split('\t');
        let (id, side, floats) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
            (Some(i), Some(s), Some(f), None) => (i, s, f),
            _ => return Err(at("expected 3 tab-separated columns".to_string())),
        };
        let side = match side {
            "head" => Side::Head,
            "tail" => Side::Tail,
            other => return Err(at(format!("unknown side {other:?}"))),
        };
        let vector: Vec<f64> = floats
            .split(',')
            .map(|f| f.parse::<f64>().map_err(|e| at(format!("bad float {f:?}: {e}"))))
            .collect::<Result<_>>()?;
        if vector.is_empty() {
            return Err(at("empty vector".to_string()));
        }
        records.entry(id.to_string()).or_default().push((side, vector));
    }
    Ok(EmbeddingTable { records })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn retrieval_candidates<'t>(
    table: &'t EmbeddingTable,
    graph: &'t ServiceSearchGraph,
    query_id: &str,
) -> Result<(Side, &'t Vec<f64>, Vec<(&'t str, &'t Vec<f64>)>)> {
    let entries = table
        .records
        .get(query_id)
        .ok_or_else(|| Error::Data(format!("unknown query {query_id}")))?;
    let (side, qvec) = entries.first().map(|(s, v)| (*s, v)).expect("no empty entries stored");
    let mut services = Vec::new();
    for idx in graph.service_indices() {
        let id = graph.node(idx).id.as_str();
        if let Some(vector) = table.preferring(id, side) {
            services.push((id, vector));
        }
    }
    Ok((side, qvec, services))
}

/// Exact top-K retrieval by inner product over every exported service
/// embedding, descending, ties by service id.
pub fn retrieve_topk(
    table: &EmbeddingTable,
    graph: &ServiceSearchGraph,
    query_id: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    let (_, qvec, services) = retrieval_candidates(table, graph, query_id)?;
    let mut scored: Vec<(String, f64)> =
        services.into_iter().map(|(id, v)| (id.to_string(), dot(qvec, v))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(scored)
}

/// Same ranking via a bounded min-heap over a single streaming pass;
/// cross-checks the sort-based implementation.
pub fn retrieve_topk_streaming(
    table: &EmbeddingTable,
    graph: &ServiceSearchGraph,
    query_id: &str,
    k: usize,
) -> Result<Vec<(String, f64)>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq, Eq)]
    struct Entry(u64, Reverse<String>);
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> std::cmp::Ordering {
            self.0.cmp(&other.0).then_with(|| self.1.cmp(&other.1))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(other))
        }
    }
    // Order-preserving map from f64 to u64 so ranking can use integer keys.
    fn key(score: f64) -> u64 {
        let bits = score.to_bits();
        if score >= 0.0 {
            bits | (1 << 63)
        } else {
            !bits
        }
    }
    fn unkey(key: u64) -> f64 {
        if key & (1 << 63) != 0 {
            f64::from_bits(key & !(1 << 63))
        } else {
            f64::from_bits(!key)
        }
    }

    let (_, qvec, services) = retrieval_candidates(table, graph, query_id)?;
    if k == 0 {
        return Ok(Vec::new());
    }
    let mut heap: BinaryHeap<Reverse<Entry>> = BinaryHeap::with_capacity(k + 1);
    for (id, vector) in services {
        heap.push(Reverse(Entry(key(dot(qvec, vector)), Reverse(id.to_string()))));
        if heap.len() > k {
            heap.pop();
        }
    }
    // Ascending by Reverse(Entry) is descending by goodness: best first.
    let out: Vec<(String, f64)> = heap
        .into_sorted_vec()
        .into_iter()
        .map(|Reverse(Entry(score, Reverse(id)))| (id, unkey(score)))
        .collect();
    Ok(out)
}
