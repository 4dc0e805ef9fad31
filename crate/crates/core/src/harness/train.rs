use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{invalid, Error, Result};
use crate::feature_store::{Dataset, NormalizationStats, Split};
use crate::models::{
    count_parameters, encode, forward, init_store, logits, predict_label, EncodedData, ExperimentConfig, GraphChoice,
    GraphInputs, ModelKind, ModelSpec, Predictor,
};
use crate::numcore::{apply_bn_updates, Adam, ParameterStore, PlateauScheduler, SchedulerEvent, Tape, TrainConfig};
use crate::prior_graph::{mask_and_binarise, MaskMode, PriorGraph};

pub const CHECKPOINT_FORMAT: &str = "privgraph-checkpoint/1";

const SHUFFLE_STREAM: u64 = 1;
const RANDOM_FEATURE_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 256;

/// Independent generator for one purpose, derived from the run seed.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_feature_seed(seed: u64) -> u64 {
    stream_rng(seed, RANDOM_FEATURE_STREAM).gen()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LrFloor,
    EpochCap,
    Budget,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_ba: f64,
    pub lr: f64,
    /// Validation records predicted private, to make collapse visible.
    pub val_predicted_private: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub history: Vec<EpochLog>,
    /// Epochs of the separate scene-head stage, when there is one.
    pub pretrain_history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    pub wall_clock_secs: f64,
    pub metrics: BTreeMap<String, MetricsReport>,
    pub params_optimised: usize,
    pub params_total: usize,
}

impl RunRecord {
    pub fn test(&self) -> Option<&MetricsReport> {
        self.metrics.get("test")
    }

    /// The record with timing removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> RunRecord {
        RunRecord { wall_clock_secs: 0.0, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub vocab_hash: String,
    /// The graph exactly as the model consumed it.
    pub graph: Option<PriorGraph>,
    pub normalization: Option<NormalizationStats>,
    pub epoch: usize,
    pub scheduler: PlateauScheduler,
    pub store: ParameterStore,
}

impl Checkpoint {
    pub fn spec(&self) -> Result<&ModelSpec> {
        self.config.model().ok_or_else(|| invalid("checkpoint holds no model"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serialisable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut c: Checkpoint = serde_json::from_str(text).map_err(|e| invalid(format!("checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(invalid(format!("unsupported checkpoint format {:?}", c.format)));
        }
        c.store.reindex();
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub record: RunRecord,
    pub checkpoint: Checkpoint,
}

/// The masked graph a spec consumes, or `None` for graph-free models.
pub fn resolve_graph(spec: &ModelSpec, ds: &Dataset, graph: Option<&PriorGraph>) -> Result<Option<PriorGraph>> {
    if !spec.uses_graph() {
        return Ok(None);
    }
    let mode = match spec.graph {
        GraphChoice::None => return Ok(Some(PriorGraph::zero(&ds.vocabulary))),
        GraphChoice::Cooccurrence => MaskMode::GpaObjects,
        GraphChoice::Bipartite => MaskMode::GipBipartite,
    };
    let g = graph.ok_or_else(|| invalid(format!("model uses the {} graph; supply a prior graph", spec.graph)))?;
    g.check_vocab(&ds.vocabulary)?;
    if let Some(m) = g.mask {
        if m != mode {
            return Err(invalid(format!("graph was masked as {m}, model needs {mode}")));
        }
    }
    Ok(Some(mask_and_binarise(g, mode)))
}

/// Class probabilities in eval mode, chunked in parallel.
pub fn predict_proba(
    spec: &ModelSpec,
    store: &ParameterStore,
    enc: &EncodedData,
    graph: Option<&GraphInputs>,
    idx: &[usize],
) -> Result<Vec<[f64; 2]>> {
    let chunks: Vec<Result<Vec<[f64; 2]>>> = idx
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let mut tape = Tape::new(false, 0);
            let p = forward(spec, &mut tape, store, enc, graph, chunk);
            tape.status()?;
            let v = tape.value(p);
            Ok((0..chunk.len()).map(|r| [v.get(r, 0), v.get(r, 1)]).collect())
        })
        .collect();
    let mut out = Vec::with_capacity(idx.len());
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

pub fn evaluate_indices(
    spec: &ModelSpec,
    store: &ParameterStore,
    enc: &EncodedData,
    graph: Option<&GraphInputs>,
    idx: &[usize],
) -> Result<MetricsReport> {
    let probs = predict_proba(spec, store, enc, graph, idx)?;
    let pred: Vec<usize> = probs.iter().map(|p| predict_label(p)).collect();
    let truth: Vec<usize> = idx.iter().map(|&i| enc.labels[i]).collect();
    MetricsReport::from_predictions(&truth, &pred)
}

struct Clock {
    start: Instant,
    budget: f64,
}

impl Clock {
    fn exhausted(&self) -> bool {
        self.start.elapsed().as_secs_f64() >= self.budget
    }
}

struct Fit {
    best: ParameterStore,
    best_epoch: usize,
    history: Vec<EpochLog>,
    stop: StopReason,
    scheduler: PlateauScheduler,
}

#[allow(clippy::too_many_arguments)]
fn fit(
    spec: &ModelSpec,
    mut store: ParameterStore,
    enc: &EncodedData,
    graph: Option<&GraphInputs>,
    train_idx: &[usize],
    val_idx: &[usize],
    tc: &TrainConfig,
    class_weights: Option<[f64; 2]>,
    clock: &Clock,
    stream: u64,
) -> Result<Fit> {
    let adam = Adam { weight_decay: tc.weight_decay, ..Adam::default() };
    let mut sched = PlateauScheduler::new(tc.lr0, tc.lr_factor, tc.patience, tc.lr_min);
    let mut rng = stream_rng(tc.seed, stream);
    let mut order = train_idx.to_vec();
    let mut best: Option<(f64, ParameterStore, usize)> = None;
    let mut history = Vec::new();
    let mut stop = StopReason::EpochCap;
    let weights = class_weights.map(|w| w.to_vec());
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tc.batch_size) {
            let mut tape = Tape::new(true, rng.gen());
            let z = logits(spec, &mut tape, &store, enc, graph, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| enc.labels[i]).collect();
            tape.set_scope("loss");
            let loss = tape.softmax_cross_entropy(z, &labels, weights.as_deref());
            tape.status()?;
            loss_sum += tape.value(loss).get(0, 0) * batch.len() as f64;
            store.zero_grad();
            tape.backward(loss, &mut store)?;
            apply_bn_updates(&mut store, &tape.take_bn_updates())?;
            adam.step(&mut store, sched.lr);
        }
        let val = evaluate_indices(spec, &store, enc, graph, val_idx)?;
        let ba = val.balanced_accuracy;
        history.push(EpochLog {
            epoch,
            train_loss: loss_sum / train_idx.len() as f64,
            val_ba: ba,
            lr: sched.lr,
            val_predicted_private: val.confusion[0][1] + val.confusion[1][1],
        });
        if best.as_ref().map_or(true, |(b, _, _)| ba > *b) {
            best = Some((ba, store.clone(), epoch));
        }
        if sched.step(ba) == SchedulerEvent::Stop {
            stop = StopReason::LrFloor;
            break;
        }
        // Checked after the epoch so every run has at least one validated epoch.
        if clock.exhausted() && epoch < tc.max_epochs {
            stop = StopReason::Budget;
            break;
        }
    }
    let (best, best_epoch) = match best {
        Some((_, s, e)) => (s, e),
        None => (store, 0),
    };
    Ok(Fit { best, best_epoch, history, stop, scheduler: sched })
}

/// Inverse class frequency on the training records, `N / (2 N_y)`.
pub fn class_weights(labels: &[usize], train: &[usize]) -> [f64; 2] {
    let mut n = [0usize; 2];
    for &i in train {
        n[labels[i]] += 1;
    }
    let total = train.len() as f64;
    [0, 1].map(|y| if n[y] == 0 { 0.0 } else { total / (2.0 * n[y] as f64) })
}

fn split_indices(ds: &Dataset) -> Result<[Vec<usize>; 3]> {
    if !ds.has_splits() {
        return Err(invalid("dataset has no train/val/test assignment; apply a split file first"));
    }
    let idx = Split::ALL.map(|s| ds.indices(s));
    if idx[0].is_empty() || idx[1].is_empty() {
        return Err(invalid("training and validation splits must be non-empty"));
    }
    Ok(idx)
}

/// Trains `cfg` on the train split, selecting the epoch with the highest
/// validation balanced accuracy, and reports every non-empty split.
pub fn train(cfg: &ExperimentConfig, ds: &Dataset, graph: Option<&PriorGraph>) -> Result<TrainOutput> {
    cfg.validate()?;
    let spec = match &cfg.predictor {
        Predictor::Model(m) => m,
        Predictor::Baseline(b) => return Err(invalid(format!("baseline {b} has nothing to train; evaluate it instead"))),
    };
    let tc = &cfg.train;
    let clock = Clock { start: Instant::now(), budget: tc.budget_secs };
    let [train_idx, val_idx, test_idx] = split_indices(ds)?;
    let graph = resolve_graph(spec, ds, graph)?;
    let graph_inputs = graph.as_ref().map(GraphInputs::from_graph);
    let enc = encode(spec, ds, None, &train_idx, random_feature_seed(tc.seed))?;
    let weights = spec.weighted_loss.then(|| class_weights(&enc.labels, &train_idx));
    let mut store = init_store(spec, tc.seed)?;

    let mut pretrain_history = Vec::new();
    if spec.s2p_pretrained {
        let head = ModelSpec { kind: ModelKind::S2p, s2p_pretrained: false, ..spec.clone() };
        let head_store = init_store(&head, tc.seed)?;
        let stage = fit(&head, head_store, &enc, None, &train_idx, &val_idx, tc, weights, &clock, SHUFFLE_STREAM + 10)?;
        for slot in stage.best.slots() {
            *store.value_mut(&slot.name)? = slot.value.clone();
        }
        pretrain_history = stage.history;
    }

    let stage = fit(spec, store, &enc, graph_inputs.as_ref(), &train_idx, &val_idx, tc, weights, &clock, SHUFFLE_STREAM)?;
    let mut metrics = BTreeMap::new();
    for (split, idx) in Split::ALL.iter().zip([&train_idx, &val_idx, &test_idx]) {
        if !idx.is_empty() {
            metrics.insert(split.to_string(), evaluate_indices(spec, &stage.best, &enc, graph_inputs.as_ref(), idx)?);
        }
    }
    let counts = count_parameters(spec);
    let record = RunRecord {
        name: cfg.preset.clone().unwrap_or_else(|| spec.kind.to_string()),
        config_hash: cfg.hash(),
        seed: tc.seed,
        history: stage.history,
        pretrain_history,
        best_epoch: stage.best_epoch,
        stop_reason: stage.stop,
        wall_clock_secs: clock.start.elapsed().as_secs_f64(),
        metrics,
        params_optimised: counts.optimised,
        params_total: counts.total,
    };
    let checkpoint = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        config: cfg.clone(),
        config_hash: cfg.hash(),
        vocab_hash: ds.vocabulary.hash(),
        graph,
        normalization: enc.norm.clone(),
        epoch: stage.best_epoch,
        scheduler: stage.scheduler,
        store: stage.best,
    };
    Ok(TrainOutput { record, checkpoint })
}

/// Metrics of a saved model on one split (or every record).
pub fn evaluate(ckpt: &Checkpoint, ds: &Dataset, split: Option<Split>) -> Result<MetricsReport> {
    let spec = ckpt.spec()?;
    if ckpt.vocab_hash != ds.vocabulary.hash() {
        return Err(invalid("checkpoint was trained with a different vocabulary"));
    }
    let idx: Vec<usize> = match split {
        Some(s) => ds.indices(s),
        None => (0..ds.records.len()).collect(),
    };
    if idx.is_empty() {
        return Err(invalid("cannot evaluate an empty split"));
    }
    let enc = encode(spec, ds, ckpt.normalization.as_ref(), &[], random_feature_seed(ckpt.config.train.seed))?;
    let graph = ckpt.graph.as_ref().map(GraphInputs::from_graph);
    if spec.uses_graph() && graph.is_none() {
        return Err(invalid("checkpoint lacks the graph its model consumes"));
    }
    evaluate_indices(spec, &ckpt.store, &enc, graph.as_ref(), &idx)
}
