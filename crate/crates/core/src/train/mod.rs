//! Training loops: pre-training under several objectives, linear probing,
//! and the two fine-tuning regimes.
//!
//! Every loop samples minibatches with replacement, follows the
//! warmup-cosine schedule of its [`OptimConfig`], and aborts with
//! [`Error::Diverged`] as soon as the loss stops being finite. Master
//! weights are kept in `f64` during a run and rounded to `f32` once at the
//! end; parameters outside the trainable set are never touched, so freeze
//! contracts hold bit for bit.

mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

pub use optim::{warmup_cosine, AdamW, OptimConfig, FINETUNE_LR_GRID, PROBE_LR_GRID};

use crate::checkpoint::{meta_keys, write_atomic, WeightSnapshot};
use crate::error::{Error, Result};
use crate::nn::tape::{Mat, Tape};
use crate::nn::{
    argmax_rows, bind, check_encoder_layout, classification_objective, encoder_features, encoder_graph,
    head_logits, init_encoder, init_head, init_param, params_from_snapshot, write_back, ModelConfig,
    ModelGraph, ParamSpec, ParamValues, Trainable, HEAD_BIAS, HEAD_WEIGHT,
};
use crate::rng::SeededRng;
use crate::taskgen::{sample_task, LabeledBatch, Split, TaskSpec};

/// Pre-training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PretrainScheme {
    /// Cross-entropy on the pre-training labels through a throwaway head.
    Supervised,
    /// Zero a fraction of input coordinates, substitute a learned mask
    /// token, and reconstruct the hidden coordinates with a linear decoder.
    MaskedRecon { mask_fraction: f64 },
    /// NT-Xent between two gaussian-noise views of each input, through a
    /// throwaway projection.
    Contrastive { temperature: f64, view_noise: f64 },
    /// No training; the encoder stays at its random initialization.
    RandomInit,
}

impl PretrainScheme {
    pub fn masked_recon() -> Self {
        PretrainScheme::MaskedRecon { mask_fraction: 0.5 }
    }

    pub fn contrastive() -> Self {
        PretrainScheme::Contrastive {
            temperature: 0.1,
            view_noise: 0.5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            PretrainScheme::Supervised => "supervised",
            PretrainScheme::MaskedRecon { .. } => "masked-recon",
            PretrainScheme::Contrastive { .. } => "contrastive",
            PretrainScheme::RandomInit => "random-init",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PretrainScheme::MaskedRecon { mask_fraction } if !(mask_fraction > 0.0 && mask_fraction < 1.0) => {
                Err(Error::invalid(format!("mask_fraction must lie in (0, 1), got {mask_fraction}")))
            }
            PretrainScheme::Contrastive { temperature, view_noise } if !(temperature > 0.0) || !(view_noise >= 0.0) => {
                Err(Error::invalid("temperature must be positive and view noise non-negative"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for PretrainScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PretrainScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(PretrainScheme::Supervised),
            "masked-recon" | "mae" => Ok(PretrainScheme::masked_recon()),
            "contrastive" => Ok(PretrainScheme::contrastive()),
            "random-init" | "random" => Ok(PretrainScheme::RandomInit),
            other => Err(Error::invalid(format!("unknown pre-training scheme {other:?}"))),
        }
    }
}

/// How a pre-trained encoder is adapted to one task.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FinetuneRegime {
    /// Probe a random head on the frozen encoder, then train the encoder
    /// with that head frozen.
    Aligned,
    /// Train encoder and a random head jointly.
    Full,
}

impl FinetuneRegime {
    pub fn name(&self) -> &'static str {
        match self {
            FinetuneRegime::Aligned => "aligned",
            FinetuneRegime::Full => "full",
        }
    }

    pub fn trainable(&self) -> Trainable {
        match self {
            FinetuneRegime::Aligned => Trainable::EncoderOnly,
            FinetuneRegime::Full => Trainable::All,
        }
    }
}

impl fmt::Display for FinetuneRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FinetuneRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(FinetuneRegime::Aligned),
            "full" => Ok(FinetuneRegime::Full),
            other => Err(Error::invalid(format!("unknown fine-tuning regime {other:?}"))),
        }
    }
}

/// One row of a training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Writes `iteration,loss,lr` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, log: &[LossRecord]) -> Result<()> {
    let mut out = String::from("iteration,loss,lr\n");
    for r in log {
        out.push_str(&format!("{},{},{}\n", r.iteration, r.loss, r.lr));
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

pub(crate) fn select_rows(m: &Mat, indices: &[usize]) -> Mat {
    let mut data = Vec::with_capacity(indices.len() * m.cols);
    for &i in indices {
        data.extend_from_slice(m.row(i));
    }
    Mat::from_vec(indices.len(), m.cols, data)
}

fn minibatch(rng: &mut SeededRng, n: usize, size: usize) -> Vec<usize> {
    (0..size).map(|_| rng.below(n)).collect()
}

/// Runs `optim.iterations` AdamW steps on `values`. `objective` draws its
/// own minibatch and returns the loss and the gradients of the parameters
/// that should move.
fn optimize<F>(values: &mut ParamValues, optim: &OptimConfig, rng: &mut SeededRng, mut objective: F) -> Result<Vec<LossRecord>>
where
    F: FnMut(&ParamValues, &mut SeededRng) -> (f64, ParamValues),
{
    optim.validate()?;
    let mut adam = AdamW::new(optim);
    let mut log = Vec::with_capacity(optim.iterations);
    for step in 0..optim.iterations {
        let lr = optim.lr_at(step);
        let (loss, grads) = objective(values, rng);
        if !loss.is_finite() {
            return Err(Error::Diverged { iteration: step, loss });
        }
        log.push(LossRecord {
            iteration: step,
            loss,
            lr,
        });
        adam.step(values, &grads, lr);
    }
    let finite = values.values().all(|m| m.data.iter().all(|v| v.is_finite() && v.abs() < f32::MAX as f64));
    if !finite {
        return Err(Error::Diverged {
            iteration: optim.iterations,
            loss: f64::NAN,
        });
    }
    Ok(log)
}

/// Result of [`pretrain`].
#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    /// `θ_pre`: encoder tensors only.
    pub snapshot: WeightSnapshot,
    pub log: Vec<LossRecord>,
    /// Objective on a fixed probe batch before and after training.
    pub initial_objective: f64,
    pub final_objective: f64,
    /// Supervised scheme only: accuracy of the throwaway head on the corpus.
    pub train_accuracy: Option<f64>,
}

struct AuxLayout {
    specs: Vec<ParamSpec>,
}

impl AuxLayout {
    fn new(config: &ModelConfig, scheme: PretrainScheme, num_labels: usize) -> Self {
        let f = config.feature_dim;
        let d = config.input_dim;
        let specs = match scheme {
            PretrainScheme::Supervised => vec![
                ParamSpec {
                    path: "aux.cls.weight".into(),
                    shape: vec![num_labels, f],
                    init: crate::nn::Init::Xavier { fan_in: f, fan_out: num_labels },
                },
                ParamSpec {
                    path: "aux.cls.bias".into(),
                    shape: vec![num_labels],
                    init: crate::nn::Init::Zeros,
                },
            ],
            PretrainScheme::MaskedRecon { .. } => vec![
                ParamSpec {
                    path: "aux.mask_token".into(),
                    shape: vec![d],
                    init: crate::nn::Init::Zeros,
                },
                ParamSpec {
                    path: "aux.decoder.weight".into(),
                    shape: vec![d, f],
                    init: crate::nn::Init::Xavier { fan_in: f, fan_out: d },
                },
                ParamSpec {
                    path: "aux.decoder.bias".into(),
                    shape: vec![d],
                    init: crate::nn::Init::Zeros,
                },
            ],
            PretrainScheme::Contrastive { .. } => vec![
                ParamSpec {
                    path: "aux.proj.weight".into(),
                    shape: vec![f, f],
                    init: crate::nn::Init::Xavier { fan_in: f, fan_out: f },
                },
                ParamSpec {
                    path: "aux.proj.bias".into(),
                    shape: vec![f],
                    init: crate::nn::Init::Zeros,
                },
            ],
            PretrainScheme::RandomInit => Vec::new(),
        };
        AuxLayout { specs }
    }
}

/// Masks `round(fraction·D)` coordinates of every row.
fn draw_mask(rng: &mut SeededRng, rows: usize, cols: usize, fraction: f64) -> Mat {
    let hidden = ((fraction * cols as f64).round() as usize).clamp(1, cols);
    let mut mask = Mat::zeros(rows, cols);
    let mut idx: Vec<usize> = (0..cols).collect();
    for r in 0..rows {
        rng.shuffle(&mut idx);
        for &c in &idx[..hidden] {
            mask.data[r * cols + c] = 1.0;
        }
    }
    mask
}

/// Loss of one pre-training objective on `inputs` and its gradients over
/// every encoder and auxiliary parameter.
pub(crate) fn pretrain_objective(
    config: &ModelConfig,
    scheme: PretrainScheme,
    values: &ParamValues,
    inputs: &Mat,
    labels: &[usize],
    rng: &mut SeededRng,
) -> (f64, ParamValues) {
    let mut tape = Tape::new();
    let vars = bind(&mut tape, values);
    let loss = match scheme {
        PretrainScheme::Supervised => {
            let x = tape.leaf(inputs.clone());
            let f = encoder_graph(&mut tape, config, &vars, x);
            let z = tape.matmul_nt(f, vars["aux.cls.weight"]);
            let z = tape.add_row(z, vars["aux.cls.bias"]);
            tape.cross_entropy(z, labels)
        }
        PretrainScheme::MaskedRecon { mask_fraction } => {
            let mask = draw_mask(rng, inputs.rows, inputs.cols, mask_fraction);
            let mut kept = inputs.clone();
            for (v, m) in kept.data.iter_mut().zip(&mask.data) {
                *v *= 1.0 - m;
            }
            let kept = tape.leaf(kept);
            let token = tape.row_times_const(vars["aux.mask_token"], mask.clone());
            let x = tape.add(kept, token);
            let f = encoder_graph(&mut tape, config, &vars, x);
            let rec = tape.matmul_nt(f, vars["aux.decoder.weight"]);
            let rec = tape.add_row(rec, vars["aux.decoder.bias"]);
            tape.masked_mse(rec, inputs.clone(), mask)
        }
        PretrainScheme::Contrastive { temperature, view_noise } => {
            let b = inputs.rows;
            let mut views = Mat::zeros(2 * b, inputs.cols);
            for copy in 0..2 {
                for i in 0..inputs.data.len() {
                    views.data[copy * inputs.data.len() + i] = inputs.data[i] + view_noise * rng.normal();
                }
            }
            let x = tape.leaf(views);
            let f = encoder_graph(&mut tape, config, &vars, x);
            let z = tape.matmul_nt(f, vars["aux.proj.weight"]);
            let z = tape.add_row(z, vars["aux.proj.bias"]);
            let z = tape.normalize_rows(z);
            let sim = tape.matmul_nt(z, z);
            let sim = tape.scale(sim, 1.0 / temperature);
            let mut self_mask = Mat::zeros(2 * b, 2 * b);
            for i in 0..2 * b {
                self_mask.data[i * 2 * b + i] = -1e9;
            }
            let sim = tape.add_const(sim, &self_mask);
            let targets: Vec<usize> = (0..2 * b).map(|i| (i + b) % (2 * b)).collect();
            tape.cross_entropy(sim, &targets)
        }
        PretrainScheme::RandomInit => return (0.0, ParamValues::new()),
    };
    let grads = tape.backward(loss);
    let out = vars
        .iter()
        .map(|(k, &v)| {
            let g = grads.get(v).cloned().unwrap_or_else(|| {
                let m = tape.value(v);
                Mat::zeros(m.rows, m.cols)
            });
            (k.clone(), g)
        })
        .collect();
    (tape.value(loss).scalar(), out)
}

/// Trains an encoder on `corpus` under `scheme` and returns `θ_pre`.
///
/// Labels in `corpus` are only read by the supervised scheme. Auxiliary
/// heads (classifier, decoder, projection) are dropped from the result.
pub fn pretrain(
    config: &ModelConfig,
    scheme: PretrainScheme,
    optim: &OptimConfig,
    corpus: &LabeledBatch,
    num_labels: usize,
    rng: &SeededRng,
) -> Result<PretrainOutcome> {
    scheme.validate()?;
    optim.validate()?;
    if corpus.input_dim() != config.input_dim {
        return Err(Error::Shape {
            left: corpus.inputs.shape().to_vec(),
            right: vec![0, config.input_dim],
        });
    }
    let mut encoder = init_encoder(config, rng)?;
    encoder.set_meta(meta_keys::ROLE, "pretrained")?;
    encoder.set_meta(meta_keys::SCHEME, scheme.name())?;
    encoder.set_meta(meta_keys::SEED, rng.seed().to_string())?;
    if scheme == PretrainScheme::RandomInit || optim.iterations == 0 {
        return Ok(PretrainOutcome {
            snapshot: encoder,
            log: Vec::new(),
            initial_objective: f64::NAN,
            final_objective: f64::NAN,
            train_accuracy: None,
        });
    }
    if corpus.is_empty() {
        return Err(Error::invalid("pre-training corpus is empty"));
    }

    let mut values = params_from_snapshot(&encoder);
    let mut aux_rng = rng.split("aux-init");
    for spec in AuxLayout::new(config, scheme, num_labels).specs {
        let t = init_param(&spec, &mut aux_rng);
        values.insert(spec.path.clone(), crate::nn::tensor_to_mat(&t));
    }

    let inputs = corpus.inputs_f64();
    let probe_idx: Vec<usize> = (0..corpus.len().min(256)).collect();
    let probe_x = select_rows(&inputs, &probe_idx);
    let probe_y: Vec<usize> = probe_idx.iter().map(|&i| corpus.labels[i]).collect();
    let probe_objective = |values: &ParamValues| {
        let mut fixed = rng.split("probe-objective");
        pretrain_objective(config, scheme, values, &probe_x, &probe_y, &mut fixed).0
    };
    let initial_objective = probe_objective(&values);

    let mut loop_rng = rng.split("pretrain-loop");
    let log = optimize(&mut values, optim, &mut loop_rng, |vals, r| {
        let idx = minibatch(r, corpus.len(), optim.batch_size);
        let x = select_rows(&inputs, &idx);
        let y: Vec<usize> = idx.iter().map(|&i| corpus.labels[i]).collect();
        pretrain_objective(config, scheme, vals, &x, &y, r)
    })?;
    let final_objective = probe_objective(&values);

    let train_accuracy = match scheme {
        PretrainScheme::Supervised => {
            let f = encoder_features(config, &values, &inputs);
            let preds = argmax_rows(&head_logits(&values["aux.cls.weight"], &values["aux.cls.bias"], &f));
            Some(fraction_correct(&preds, &corpus.labels))
        }
        _ => None,
    };
    write_back(&mut encoder, &values)?;
    Ok(PretrainOutcome {
        snapshot: encoder,
        log,
        initial_objective,
        final_objective,
        train_accuracy,
    })
}

pub(crate) fn fraction_correct(preds: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Accuracy of `encoder` + `head` on `batch`.
pub fn accuracy(config: &ModelConfig, encoder: &WeightSnapshot, head: &WeightSnapshot, batch: &LabeledBatch) -> Result<f64> {
    let model = ModelGraph::from_parts(config, encoder, head)?;
    let preds = model.predict(&batch.inputs)?;
    Ok(fraction_correct(&preds, &batch.labels))
}

/// Result of [`linear_probe`].
#[derive(Clone, Debug)]
pub struct ProbeOutcome {
    pub head: WeightSnapshot,
    /// Eval-split accuracy of the frozen encoder with the probed head.
    pub accuracy: f64,
    pub log: Vec<LossRecord>,
}

fn head_meta(head: &mut WeightSnapshot, task: &TaskSpec, pre: &WeightSnapshot, phase: &str, acc: f64) -> Result<()> {
    head.set_meta(meta_keys::ROLE, "head")?;
    head.set_meta(meta_keys::TASK_ID, task.task_id.clone())?;
    head.set_meta(meta_keys::BASE_HASH, pre.encoder_hash().to_string())?;
    head.set_meta("phase", phase)?;
    head.set_meta("num_classes", task.num_classes.to_string())?;
    head.set_meta(meta_keys::ACCURACY, acc.to_string())?;
    Ok(())
}

/// Trains a randomly initialized head on the frozen encoder `pre`.
pub fn linear_probe(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    task: &TaskSpec,
    optim: &OptimConfig,
    rng: &SeededRng,
) -> Result<ProbeOutcome> {
    optim.validate()?;
    check_encoder_layout(config, pre)?;
    let rng = rng.split("probe").split(&task.task_id);
    let train = sample_task(task, Split::Train, task.train_count)?;
    let eval = sample_task(task, Split::Eval, task.eval_count)?;
    let enc_values = params_from_snapshot(&pre.encoder());
    let train_f = encoder_features(config, &enc_values, &train.inputs_f64());
    let eval_f = encoder_features(config, &enc_values, &eval.inputs_f64());

    let mut head = init_head(config.feature_dim, task.num_classes, &rng)?;
    let mut values = params_from_snapshot(&head);
    let mut loop_rng = rng.split("loop");
    let log = optimize(&mut values, optim, &mut loop_rng, |vals, r| {
        let idx = minibatch(r, train.len(), optim.batch_size);
        let x = select_rows(&train_f, &idx);
        let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        let mut tape = Tape::new();
        let w = tape.leaf(vals[HEAD_WEIGHT].clone());
        let b = tape.leaf(vals[HEAD_BIAS].clone());
        let f = tape.leaf(x);
        let z = tape.matmul_nt(f, w);
        let z = tape.add_row(z, b);
        let loss = tape.cross_entropy(z, &y);
        let g = tape.backward(loss);
        let mut grads = BTreeMap::new();
        grads.insert(HEAD_WEIGHT.to_string(), g.get(w).unwrap().clone());
        grads.insert(HEAD_BIAS.to_string(), g.get(b).unwrap().clone());
        (tape.value(loss).scalar(), grads)
    })?;
    write_back(&mut head, &values)?;
    let hw = crate::nn::tensor_to_mat(&head.entries()[HEAD_WEIGHT]);
    let hb = crate::nn::tensor_to_mat(&head.entries()[HEAD_BIAS]);
    let accuracy = fraction_correct(&argmax_rows(&head_logits(&hw, &hb, &eval_f)), &eval.labels);
    head_meta(&mut head, task, pre, "probe", accuracy)?;
    Ok(ProbeOutcome { head, accuracy, log })
}

/// Result of [`finetune`].
#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    /// `θ_ft`: encoder tensors only, with `base-hash` of `θ_pre`.
    pub encoder: WeightSnapshot,
    pub head: WeightSnapshot,
    /// Eval-split accuracy of the fine-tuned encoder with `head`.
    pub accuracy: f64,
    pub log: Vec<LossRecord>,
}

/// Fine-tunes `pre` on `task` starting from `head`. The aligned regime
/// trains only the encoder; the full regime trains both.
pub fn finetune(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    head: &WeightSnapshot,
    task: &TaskSpec,
    regime: FinetuneRegime,
    optim: &OptimConfig,
    rng: &SeededRng,
) -> Result<FinetuneOutcome> {
    optim.validate()?;
    let model = ModelGraph::from_parts(config, pre, head)?;
    if model.head_out_dim() != task.num_classes {
        return Err(Error::Compatibility(format!(
            "head has {} outputs, task {} has {} classes",
            model.head_out_dim(),
            task.task_id,
            task.num_classes
        )));
    }
    let rng = rng.split("finetune").split(&task.task_id).split(regime.name());
    let train = sample_task(task, Split::Train, task.train_count)?;
    let eval = sample_task(task, Split::Eval, task.eval_count)?;
    let inputs = train.inputs_f64();

    let mut values = params_from_snapshot(model.params());
    let trainable = regime.trainable();
    let mut loop_rng = rng.split("loop");
    let log = optimize(&mut values, optim, &mut loop_rng, |vals, r| {
        let idx = minibatch(r, train.len(), optim.batch_size);
        let x = select_rows(&inputs, &idx);
        let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
        classification_objective(config, vals, &x, &y, trainable)
    })?;

    let mut params = model.params().clone();
    write_back(&mut params, &values)?;
    let mut encoder = params.encoder();
    let mut head_ft = params.head();
    let accuracy = accuracy(config, &encoder, &head_ft, &eval)?;

    for (k, v) in pre.meta() {
        if k.starts_with("config.") || k == meta_keys::SCHEME {
            encoder.set_meta(k.clone(), v.clone())?;
        }
    }
    config.write_meta(&mut encoder)?;
    encoder.set_meta(meta_keys::ROLE, "finetuned")?;
    encoder.set_meta(meta_keys::BASE_HASH, pre.encoder_hash().to_string())?;
    encoder.set_meta(meta_keys::TASK_ID, task.task_id.clone())?;
    encoder.set_meta(meta_keys::REGIME, regime.name())?;
    encoder.set_meta(meta_keys::SEED, rng.seed().to_string())?;
    encoder.set_meta(meta_keys::ACCURACY, accuracy.to_string())?;
    let mut clean_head = WeightSnapshot::new();
    clean_head.extend_from(&head_ft);
    head_ft = clean_head;
    head_meta(&mut head_ft, task, pre, regime.name(), accuracy)?;
    Ok(FinetuneOutcome {
        encoder,
        head: head_ft,
        accuracy,
        log,
    })
}

/// Outcome of a learning-rate line search.
#[derive(Clone, Debug, PartialEq)]
pub struct LrSearch {
    pub best_lr: f64,
    /// `(lr, held-out accuracy)`; `None` marks a diverged run.
    pub table: Vec<(f64, Option<f64>)>,
}

/// Runs `trial` for every learning rate in `grid` and keeps the one with the
/// highest held-out accuracy. Diverged runs are never selected; ties go to
/// the smaller learning rate.
pub fn lr_line_search<F>(grid: &[f64], mut trial: F) -> Result<LrSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::invalid("learning-rate grid is empty"));
    }
    let mut table = Vec::with_capacity(grid.len());
    for &lr in grid {
        match trial(lr) {
            Ok(acc) if acc.is_finite() => table.push((lr, Some(acc))),
            Ok(_) => table.push((lr, None)),
            Err(e) if e.is_divergence() => table.push((lr, None)),
            Err(e) => return Err(e),
        }
    }
    let best = table
        .iter()
        .filter_map(|&(lr, acc)| acc.map(|a| (lr, a)))
        .fold(None, |best: Option<(f64, f64)>, (lr, a)| match best {
            Some((blr, ba)) if ba > a || (ba == a && blr <= lr) => Some((blr, ba)),
            _ => Some((lr, a)),
        })
        .ok_or_else(|| Error::invalid("every learning rate in the grid diverged"))?;
    Ok(LrSearch {
        best_lr: best.0,
        table,
    })
}

/// Fresh random head for a task, for the full regime.
pub fn random_head(config: &ModelConfig, task: &TaskSpec, rng: &SeededRng) -> Result<WeightSnapshot> {
    init_head(config.feature_dim, task.num_classes, &rng.split("full-head").split(&task.task_id))
}
