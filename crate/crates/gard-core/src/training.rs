//! Mini-batch training over events, k-fold cross-validation, ablation
//! variants, evaluation, and the early-detection curve.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::graph::{
    build_adjacency, extract_pairs, normalize_adjacency, slice_event, EventGraph, GraphError,
    MaskPlan,
};
use crate::losses::{
    rec1_loss, rec2_loss, sup_loss, total_loss, uniformity_loss, LossBreakdown, LossError,
    LossTerms,
};
use crate::metrics::{report_from_confusion, MetricsReport};
use crate::model::{
    classify, global_forward, init_params, local_forward, readout, Activation, ModelDims,
    ModelError, ModelParams,
};
use crate::optim::{Adam, OptimError};
use crate::seeding::derive_seed;
use crate::tape::Tape;
use crate::tensor::{KernelError, Tensor};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("training diverged at epoch {epoch}: {source}")]
    DivergedGradient {
        epoch: usize,
        #[source]
        source: OptimError,
    },
    #[error("training diverged at epoch {epoch}: total loss is not finite")]
    DivergedLoss { epoch: usize },
    #[error("config: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which loss terms train. Every variant keeps the full architecture and the
/// supervised head; variants differ only in which self-supervised terms are
/// executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Supervised + both reconstructions + uniformity.
    Full,
    /// Supervised objective only.
    Sup,
    /// No global (masked-GCN) reconstruction.
    Ngs,
    /// No local (parent/child MLP) reconstruction.
    Nls,
    /// No uniformity regularizer.
    Nu,
}

impl Variant {
    pub fn local_branch(self) -> bool {
        matches!(self, Variant::Full | Variant::Ngs | Variant::Nu)
    }

    pub fn global_branch(self) -> bool {
        matches!(self, Variant::Full | Variant::Nls | Variant::Nu)
    }

    pub fn uniformity(self) -> bool {
        matches!(self, Variant::Full | Variant::Ngs | Variant::Nls)
    }
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(Variant::Full),
            "sup" => Ok(Variant::Sup),
            "ngs" => Ok(Variant::Ngs),
            "nls" => Ok(Variant::Nls),
            "nu" => Ok(Variant::Nu),
            other => Err(format!(
                "unknown variant {other:?} (expected full|sup|ngs|nls|nu)"
            )),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::Sup => "sup",
            Variant::Ngs => "ngs",
            Variant::Nls => "nls",
            Variant::Nu => "nu",
        };
        f.write_str(s)
    }
}

/// Hyperparameters, ablation flags, seeds, fold count, and deadlines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_ratio: f64,
    pub d_h: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub t: f64,
    /// Project representations onto the unit hypersphere before the
    /// uniformity term. On raw representations the term is unbounded below
    /// and overwhelms training at moderate alpha2, so this defaults on; turn
    /// it off to apply the Gaussian potential to raw vectors.
    pub uniformity_normalize: bool,
    pub variant: Variant,
    pub folds: usize,
    pub seed: u64,
    pub deadlines_min: Vec<f64>,
    pub stratified: bool,
    pub activation: Activation,
    pub classifier_hidden: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Early stop after this many epochs without training-loss improvement.
    pub patience: usize,
    /// Fold-level parallelism bound.
    pub jobs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            epochs: 200,
            batch_size: 32,
            mask_ratio: 0.25,
            d_h: 64,
            alpha1: 0.05,
            alpha2: 0.5,
            t: 2.0,
            uniformity_normalize: true,
            variant: Variant::Full,
            folds: 5,
            seed: 0,
            // Deadline spread in minutes; a config list, not a canonical set.
            deadlines_min: vec![10.0, 20.0, 30.0, 40.0, 60.0, 80.0, 100.0, 120.0],
            stratified: true,
            activation: Activation::Relu,
            classifier_hidden: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 20,
            jobs: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0) {
            return Err(TrainError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.folds < 2 {
            return Err(TrainError::Config(format!(
                "folds must be ≥ 2, got {}",
                self.folds
            )));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(TrainError::Config(format!(
                "mask_ratio must lie in (0, 1), got {}",
                self.mask_ratio
            )));
        }
        if self.deadlines_min.windows(2).any(|w| w[0] > w[1]) {
            return Err(TrainError::Config(
                "deadlines must be sorted ascending".to_string(),
            ));
        }
        if self.alpha1 < 0.0 || self.alpha2 < 0.0 {
            return Err(TrainError::Config("alpha weights must be ≥ 0".to_string()));
        }
        if !(self.t > 0.0) {
            return Err(TrainError::Config(format!("t must be > 0, got {}", self.t)));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::Config(
                "epochs and batch_size must be ≥ 1".to_string(),
            ));
        }
        if self.jobs == 0 {
            return Err(TrainError::Config("jobs must be ≥ 1".to_string()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        let mut cfg = self.clone();
        cfg.seed = seed;
        cfg
    }

    pub fn model_dims(&self, d: usize, classes: usize) -> ModelDims {
        ModelDims {
            d,
            d_h: self.d_h,
            classes,
            classifier_hidden: self.classifier_hidden,
        }
    }
}

/// Mean loss values over one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub batches: usize,
    pub l_sup: f64,
    pub l_rec1: f64,
    pub l_rec2: f64,
    pub l_uni: f64,
    pub total: f64,
}

/// Write per-epoch loss rows. Columns for terms a variant never executes are
/// absent entirely.
pub fn write_train_log_csv(
    path: impl AsRef<Path>,
    variant: Variant,
    logs_per_fold: &[(usize, &[EpochLog])],
) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io_err = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    let mut columns = vec!["fold", "epoch", "l_sup"];
    if variant.local_branch() {
        columns.push("l_rec1");
    }
    if variant.global_branch() {
        columns.push("l_rec2");
    }
    if variant.uniformity() {
        columns.push("l_uni");
    }
    columns.push("total");
    writeln!(file, "{}", columns.join(",")).map_err(io_err)?;
    for (fold, logs) in logs_per_fold {
        for log in *logs {
            let mut row = vec![fold.to_string(), log.epoch.to_string(), format!("{}", log.l_sup)];
            if variant.local_branch() {
                row.push(format!("{}", log.l_rec1));
            }
            if variant.global_branch() {
                row.push(format!("{}", log.l_rec2));
            }
            if variant.uniformity() {
                row.push(format!("{}", log.l_uni));
            }
            row.push(format!("{}", log.total));
            writeln!(file, "{}", row.join(",")).map_err(io_err)?;
        }
    }
    Ok(())
}

// Per-event tensors reused across epochs. Adjacency and pairing depend only
// on the event, so they are built once per fold.
pub(crate) struct EventTensors {
    x: Tensor<f64>,
    a_hat: Tensor<f64>,
    pairs: Option<(Tensor<f64>, Tensor<f64>)>,
    label: usize,
    n_nodes: usize,
}

impl EventTensors {
    pub(crate) fn node_count(&self) -> usize {
        self.n_nodes
    }
}

pub(crate) fn prepare_event(event: &EventGraph) -> Result<EventTensors, TrainError> {
    let a_hat = normalize_adjacency(&build_adjacency(event)?).to_tensor();
    let pairs = match extract_pairs::<f64>(event) {
        Ok(p) => Some(p),
        Err(GraphError::NoPairs { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    Ok(EventTensors {
        x: event.features(),
        a_hat,
        pairs,
        label: event.label,
        n_nodes: event.node_count(),
    })
}

/// One mini-batch: sample a fresh mask plan per event and build the loss.
fn run_batch(
    tape: &mut Tape<f64>,
    params: &ModelParams<f64>,
    prepared: &[EventTensors],
    batch: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Tensor<f64>, LossBreakdown), TrainError> {
    let plans = if cfg.variant.global_branch() {
        batch
            .iter()
            .map(|&idx| MaskPlan::sample(prepared[idx].n_nodes, cfg.mask_ratio, rng))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        Vec::new()
    };
    batch_loss(tape, params, prepared, batch, cfg, &plans)
}

/// Forward every branch the variant executes over one batch and combine the
/// weighted loss. Mask plans come from the caller so the whole computation is
/// a deterministic function of the parameters (as the gradient self-check
/// requires).
pub(crate) fn batch_loss(
    tape: &mut Tape<f64>,
    params: &ModelParams<f64>,
    prepared: &[EventTensors],
    batch: &[usize],
    cfg: &TrainConfig,
    plans: &[MaskPlan],
) -> Result<(Tensor<f64>, LossBreakdown), TrainError> {
    let mut rec1_parts = Vec::new();
    let mut rec2_parts = Vec::new();
    let mut logit_rows = Vec::new();
    let mut m_rows = Vec::new();
    let mut labels = Vec::new();

    for (pos, &idx) in batch.iter().enumerate() {
        let ev = &prepared[idx];
        if cfg.variant.local_branch() {
            match &ev.pairs {
                Some((x_p, x_c)) => {
                    let local = local_forward(tape, params, x_p, x_c)?;
                    let loss = rec1_loss(tape, x_p, x_c, &local.z_p, &local.z_c)?;
                    rec1_parts.push(loss);
                }
                // Events without edges have no pairs; they contribute 0.
                None => rec1_parts.push(Tensor::scalar(0.0)),
            }
        }
        if cfg.variant.global_branch() {
            let plan = &plans[pos];
            let masked = tape.replace_rows(&ev.x, &plan.masked_indices, &params.mask_token)?;
            let (z, _) = global_forward(tape, params, &ev.a_hat, &masked)?;
            rec2_parts.push(rec2_loss(tape, &ev.x, &z, plan)?);
        }
        let rep = readout(tape, params, &ev.a_hat, &ev.x)?;
        let cls = classify(tape, params, &rep.m)?;
        logit_rows.push(cls.logits);
        m_rows.push(rep.m);
        labels.push(ev.label);
    }

    let logits = tape.concat_rows(&logit_rows)?;
    let sup = sup_loss(tape, &logits, &labels)?;
    let mean_of = |tape: &mut Tape<f64>, parts: &[Tensor<f64>]| -> Result<Tensor<f64>, TrainError> {
        let stacked = tape.concat_rows(parts)?;
        Ok(tape.mean_rows(&stacked)?)
    };
    let rec1 = if cfg.variant.local_branch() {
        Some(mean_of(tape, &rec1_parts)?)
    } else {
        None
    };
    let rec2 = if cfg.variant.global_branch() {
        Some(mean_of(tape, &rec2_parts)?)
    } else {
        None
    };
    let uni = if cfg.variant.uniformity() {
        let m = tape.concat_rows(&m_rows)?;
        let m = if cfg.uniformity_normalize {
            tape.row_l2_normalize(&m)?
        } else {
            m
        };
        uniformity_loss(tape, &m, cfg.t)?
    } else {
        None
    };
    let terms = LossTerms {
        sup,
        rec1,
        rec2,
        uni,
    };
    let (total, breakdown) = total_loss(tape, &terms, cfg.alpha1, cfg.alpha2)?;
    Ok((total, breakdown))
}

/// Train fresh parameters on `events`: per epoch, shuffle, batch, forward the
/// variant's branches, backward, Adam step. Returns the final parameters and
/// the per-epoch loss log.
pub fn train_fold(
    events: &[&EventGraph],
    d: usize,
    classes: usize,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f64>, Vec<EpochLog>), TrainError> {
    cfg.validate()?;
    if events.is_empty() {
        return Err(TrainError::Config("empty training set".to_string()));
    }
    let params: ModelParams<f64> =
        init_params(cfg.model_dims(d, classes), cfg.activation, cfg.seed);
    let trainable = params.trainable();
    let mut adam = Adam::new(&trainable, cfg.beta1, cfg.beta2, cfg.eps);
    let prepared: Vec<EventTensors> = events
        .iter()
        .map(|e| prepare_event(e))
        .collect::<Result<_, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));

    let mut logs = Vec::new();
    let mut best_total = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            params.zero_grad();
            let mut tape = Tape::new();
            let (total, breakdown) =
                run_batch(&mut tape, &params, &prepared, batch, cfg, &mut rng)?;
            if !breakdown.total.is_finite() {
                return Err(TrainError::DivergedLoss { epoch });
            }
            tape.backward(&total)?;
            adam.step(&trainable, cfg.lr)
                .map_err(|source| TrainError::DivergedGradient { epoch, source })?;
            sums[0] += breakdown.l_sup;
            sums[1] += breakdown.l_rec1;
            sums[2] += breakdown.l_rec2;
            sums[3] += breakdown.l_uni;
            sums[4] += breakdown.total;
            batches += 1;
        }
        let inv = 1.0 / batches as f64;
        let log = EpochLog {
            epoch,
            batches,
            l_sup: sums[0] * inv,
            l_rec1: sums[1] * inv,
            l_rec2: sums[2] * inv,
            l_uni: sums[3] * inv,
            total: sums[4] * inv,
        };
        logs.push(log);
        if log.total < best_total - 1e-12 {
            best_total = log.total;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }
    Ok((params, logs))
}

/// Predicted class per event: argmax of the classifier probabilities, ties
/// broken toward the lowest class index. No masking is applied at inference.
pub fn predict(params: &ModelParams<f64>, event: &EventGraph) -> Result<usize, TrainError> {
    let ev = prepare_event(event)?;
    let mut tape = Tape::new();
    let rep = readout(&mut tape, params, &ev.a_hat, &ev.x)?;
    let cls = classify(&mut tape, params, &rep.m)?;
    let probs = cls.probs.data();
    let mut best = 0usize;
    let mut best_p = f64::NEG_INFINITY;
    for (i, &p) in probs.iter().enumerate() {
        if p > best_p {
            best_p = p;
            best = i;
        }
    }
    Ok(best)
}

/// Confusion-matrix metrics of the model over a set of events.
pub fn evaluate(
    params: &ModelParams<f64>,
    events: &[&EventGraph],
    classes: usize,
) -> Result<MetricsReport, TrainError> {
    let mut confusion = vec![vec![0usize; classes]; classes];
    for event in events {
        let pred = predict(params, event)?;
        confusion[event.label][pred] += 1;
    }
    Ok(report_from_confusion(confusion))
}

/// Deterministic k-fold assignment over event indices. With stratification the
/// per-class counts differ by at most one across folds. Returns
/// (train_ids, test_ids) per fold, each sorted ascending.
pub fn kfold_split(
    labels: &[usize],
    folds: usize,
    stratified: bool,
    seed: u64,
) -> Result<Vec<(Vec<usize>, Vec<usize>)>, TrainError> {
    if folds < 2 {
        return Err(TrainError::Config(format!("folds must be ≥ 2, got {folds}")));
    }
    if labels.len() < folds {
        return Err(TrainError::Config(format!(
            "{} events cannot fill {} folds",
            labels.len(),
            folds
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
    let mut fold_of = vec![0usize; labels.len()];
    if stratified {
        let classes = labels.iter().copied().max().unwrap_or(0) + 1;
        for class in 0..classes {
            let mut members: Vec<usize> = (0..labels.len())
                .filter(|&i| labels[i] == class)
                .collect();
            if !members.is_empty() && members.len() < folds {
                eprintln!(
                    "warning: class {class} has {} event(s), fewer than {folds} folds; \
                     placing best-effort",
                    members.len()
                );
            }
            members.shuffle(&mut rng);
            for (pos, &idx) in members.iter().enumerate() {
                fold_of[idx] = pos % folds;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.shuffle(&mut rng);
        for (pos, &idx) in order.iter().enumerate() {
            fold_of[idx] = pos % folds;
        }
    }
    let mut splits = Vec::with_capacity(folds);
    for fold in 0..folds {
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] == fold).collect();
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold_of[i] != fold).collect();
        splits.push((train, test));
    }
    Ok(splits)
}

/// Per-fold and pooled cross-validation results.
#[derive(Debug, Clone, Serialize)]
pub struct CvOutcome {
    /// Micro-average over the pooled confusion matrix.
    pub aggregate: MetricsReport,
    pub per_fold: Vec<MetricsReport>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    #[serde(skip)]
    pub fold_logs: Vec<Vec<EpochLog>>,
}

/// Train one model per fold from a fresh initialization (seed + fold index)
/// and pool the test confusions. Folds run on up to `cfg.jobs` threads; the
/// result is identical for any job count.
pub fn cross_validate(corpus: &Corpus, cfg: &TrainConfig) -> Result<CvOutcome, TrainError> {
    cfg.validate()?;
    let labels = corpus.labels();
    let splits = kfold_split(&labels, cfg.folds, cfg.stratified, cfg.seed)?;
    let classes = corpus.meta.classes;
    let d = corpus.meta.d;

    let run_fold = |fold: usize| -> Result<(MetricsReport, Vec<EpochLog>), TrainError> {
        let (train_ids, test_ids) = &splits[fold];
        let train_events: Vec<&EventGraph> =
            train_ids.iter().map(|&i| &corpus.events[i]).collect();
        let test_events: Vec<&EventGraph> = test_ids.iter().map(|&i| &corpus.events[i]).collect();
        let fold_cfg = cfg.with_seed(cfg.seed + fold as u64);
        let (params, logs) = train_fold(&train_events, d, classes, &fold_cfg)?;
        let report = evaluate(&params, &test_events, classes)?;
        Ok((report, logs))
    };

    let mut results: Vec<Option<Result<(MetricsReport, Vec<EpochLog>), TrainError>>> =
        (0..cfg.folds).map(|_| None).collect();
    if cfg.jobs <= 1 {
        for (fold, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_fold(fold));
        }
    } else {
        let fold_ids: Vec<usize> = (0..cfg.folds).collect();
        for chunk in fold_ids.chunks(cfg.jobs) {
            let outputs: Vec<(usize, Result<(MetricsReport, Vec<EpochLog>), TrainError>)> =
                std::thread::scope(|scope| {
                    let handles: Vec<_> = chunk
                        .iter()
                        .map(|&fold| scope.spawn(move || (fold, run_fold(fold))))
                        .collect();
                    handles.into_iter().map(|h| h.join().expect("fold thread")).collect()
                });
            for (fold, result) in outputs {
                results[fold] = Some(result);
            }
        }
    }

    let mut pooled = vec![vec![0usize; classes]; classes];
    let mut per_fold = Vec::with_capacity(cfg.folds);
    let mut fold_logs = Vec::with_capacity(cfg.folds);
    for slot in results {
        let (report, logs) = slot.expect("every fold ran")?;
        for (row, pooled_row) in report.confusion.iter().zip(pooled.iter_mut()) {
            for (v, p) in row.iter().zip(pooled_row.iter_mut()) {
                *p += v;
            }
        }
        per_fold.push(report);
        fold_logs.push(logs);
    }
    let accs: Vec<f64> = per_fold.iter().map(|r| r.accuracy).collect();
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let var = accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / accs.len() as f64;
    Ok(CvOutcome {
        aggregate: report_from_confusion(pooled),
        per_fold,
        mean_accuracy: mean,
        std_accuracy: var.sqrt(),
        fold_logs,
    })
}

/// One accuracy point per deadline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarlyPoint {
    pub deadline_min: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EarlyCurve {
    pub points: Vec<EarlyPoint>,
}

/// Evaluate the same trained parameters on deadline-sliced copies of the test
/// events, one point per deadline, no re-training.
pub fn early_detect(
    params: &ModelParams<f64>,
    events: &[&EventGraph],
    deadlines_min: &[f64],
    classes: usize,
) -> Result<EarlyCurve, TrainError> {
    if deadlines_min.is_empty() {
        return Err(TrainError::Config("deadlines must be nonempty".to_string()));
    }
    let mut points = Vec::with_capacity(deadlines_min.len());
    for &deadline in deadlines_min {
        let sliced: Vec<EventGraph> = events.iter().map(|e| slice_event(e, deadline)).collect();
        let refs: Vec<&EventGraph> = sliced.iter().collect();
        let report = evaluate(params, &refs, classes)?;
        points.push(EarlyPoint {
            deadline_min: deadline,
            accuracy: report.accuracy,
        });
    }
    Ok(EarlyCurve { points })
}

/// Write the early curve as `deadline_min,accuracy` rows.
pub fn write_early_curve_csv(
    path: impl AsRef<Path>,
    curve: &EarlyCurve,
) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io_err = |source| TrainError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    writeln!(file, "deadline_min,accuracy").map_err(io_err)?;
    for p in &curve.points {
        writeln!(file, "{},{}", p.deadline_min, p.accuracy).map_err(io_err)?;
    }
    Ok(())
}
