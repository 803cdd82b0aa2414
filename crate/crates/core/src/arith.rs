//! Task vectors and task addition.
//!
//! A [`TaskVector`] is the encoder-only difference `θ_ft − θ_pre`. Merging
//! computes `θ_pre + Σ λ_t·τ_t` per element with the sum accumulated in
//! `f64` in input order and rounded to `f32` once. When the accumulated
//! delta is exactly zero the pre-trained value is copied bit for bit, so
//! `λ = 0` reproduces `θ_pre` exactly (signed zeros included).
//!
//! Head tensors never enter a task vector and are never written by a merge.
//!
//! # Report CSV
//!
//! [`EvaluationReport::to_csv`] writes the columns
//! `lambda,task_id,merged_acc,single_acc,normalized`. Each evaluated
//! coefficient contributes one row per task (where `normalized` is that
//! task's merged/single ratio) followed by an `__all__` row holding the
//! absolute and normalized averages. A final `__selected__` row repeats the
//! averages at the chosen coefficient.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::checkpoint::{meta_keys, write_atomic, Namespace, SnapshotHash, WeightSnapshot, ENCODER_PREFIX};
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelGraph, HEAD_BIAS, HEAD_WEIGHT};
use crate::taskgen::{sample_task, LabeledBatch, Split, TaskSpec};
use crate::tensor::Tensor;
use crate::train::fraction_correct;

/// `θ_ft − θ_pre` over the encoder namespace.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskVector {
    entries: BTreeMap<String, Tensor>,
    base_hash: SnapshotHash,
    task_id: String,
}

impl TaskVector {
    pub fn new(entries: BTreeMap<String, Tensor>, base_hash: SnapshotHash, task_id: impl Into<String>) -> Result<Self> {
        if let Some(bad) = entries.keys().find(|k| Namespace::of(k) != Some(Namespace::Encoder)) {
            return Err(Error::Compatibility(format!("task vector entry {bad} is outside the encoder namespace")));
        }
        Ok(TaskVector {
            entries,
            base_hash,
            task_id: task_id.into(),
        })
    }

    /// All-zero vector over the encoder of `pre`.
    pub fn zeros_like(pre: &WeightSnapshot, task_id: impl Into<String>) -> Self {
        let entries = pre
            .encoder()
            .entries()
            .iter()
            .map(|(k, t)| (k.clone(), Tensor::zeros(t.shape())))
            .collect();
        TaskVector {
            entries,
            base_hash: pre.encoder_hash(),
            task_id: task_id.into(),
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, Tensor> {
        &self.entries
    }

    pub fn base_hash(&self) -> SnapshotHash {
        self.base_hash
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn l2_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data())
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Stores the vector as a snapshot with `role=task-vector`.
    pub fn to_snapshot(&self) -> Result<WeightSnapshot> {
        let mut s = WeightSnapshot::new();
        for (k, t) in &self.entries {
            s.insert(k.clone(), t.clone())?;
        }
        s.set_meta(meta_keys::ROLE, "task-vector")?;
        s.set_meta(meta_keys::BASE_HASH, self.base_hash.to_string())?;
        s.set_meta(meta_keys::TASK_ID, self.task_id.clone())?;
        Ok(s)
    }

    pub fn from_snapshot(snapshot: &WeightSnapshot) -> Result<Self> {
        let base = snapshot
            .meta_value(meta_keys::BASE_HASH)
            .ok_or_else(|| Error::Compatibility("task vector has no base-hash".into()))?
            .parse()?;
        let task_id = snapshot.meta_value(meta_keys::TASK_ID).unwrap_or_default();
        TaskVector::new(snapshot.entries().clone(), base, task_id)
    }
}

fn check_base(expected: SnapshotHash, found: Option<&str>) -> Result<()> {
    match found {
        Some(h) if h == expected.to_string() => Ok(()),
        other => Err(Error::ForeignFineTune {
            expected,
            found: other.unwrap_or("<missing>").to_string(),
        }),
    }
}

/// `τ = θ_ft − θ_pre` over the encoder namespace.
///
/// `θ_ft` must carry `base-hash` equal to the encoder hash of `θ_pre`
/// unless `force` is set. Each element is `fl32(ft − pre)`.
pub fn extract_task_vector(ft: &WeightSnapshot, pre: &WeightSnapshot, force: bool) -> Result<TaskVector> {
    let base = pre.encoder_hash();
    if !force {
        check_base(base, ft.meta_value(meta_keys::BASE_HASH))?;
    }
    let ft_enc = ft.encoder();
    let pre_enc = pre.encoder();
    let ft_keys: Vec<&String> = ft_enc.entries().keys().collect();
    let pre_keys: Vec<&String> = pre_enc.entries().keys().collect();
    if ft_keys != pre_keys {
        return Err(Error::Compatibility(format!(
            "encoder paths differ: fine-tuned has {} tensors, pre-trained has {}",
            ft_keys.len(),
            pre_keys.len()
        )));
    }
    let mut entries = BTreeMap::new();
    for (k, a) in ft_enc.entries() {
        let b = &pre_enc.entries()[k];
        if a.shape() != b.shape() {
            return Err(Error::Compatibility(format!("{k}: shape {:?} vs {:?}", a.shape(), b.shape())));
        }
        let diff = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
        entries.insert(k.clone(), Tensor::new(a.shape().to_vec(), diff)?);
    }
    let task_id = ft.meta_value(meta_keys::TASK_ID).unwrap_or_default();
    TaskVector::new(entries, base, task_id)
}

/// `θ_pre + Σ λ_t·τ_t`, with `meta.role = merged`.
///
/// The head namespace of `θ_pre`, if any, is carried over untouched.
pub fn apply_task_vectors(pre: &WeightSnapshot, vectors: &[(&TaskVector, f64)]) -> Result<WeightSnapshot> {
    let base = pre.encoder_hash();
    for (v, lambda) in vectors {
        check_base(base, Some(&v.base_hash.to_string()))?;
        if !lambda.is_finite() {
            return Err(Error::invalid(format!("coefficient for {} is not finite", v.task_id)));
        }
        for (k, t) in &v.entries {
            match pre.get(k) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::Compatibility(format!("{k}: shape {:?} vs {:?}", t.shape(), p.shape())));
                }
                None => return Err(Error::Compatibility(format!("{k} is not in the pre-trained snapshot"))),
            }
        }
    }
    let mut out = WeightSnapshot::new();
    for (k, p) in pre.entries() {
        if !k.starts_with(ENCODER_PREFIX) {
            out.insert(k.clone(), p.clone())?;
            continue;
        }
        let terms: Vec<(&[f32], f64)> = vectors
            .iter()
            .filter_map(|(v, l)| v.entries.get(k).map(|t| (t.data(), *l)))
            .collect();
        let data = p
            .data()
            .iter()
            .enumerate()
            .map(|(i, &base)| {
                let mut delta = 0.0f64;
                for (d, l) in &terms {
                    delta += l * d[i] as f64;
                }
                if delta == 0.0 {
                    base
                } else {
                    (base as f64 + delta) as f32
                }
            })
            .collect();
        out.insert(k.clone(), Tensor::new(p.shape().to_vec(), data)?)?;
    }
    for (k, v) in pre.meta() {
        if k.starts_with("config.") || k == meta_keys::SCHEME {
            out.set_meta(k.clone(), v.clone())?;
        }
    }
    out.set_meta(meta_keys::ROLE, "merged")?;
    out.set_meta(meta_keys::BASE_HASH, base.to_string())?;
    let lambdas: Vec<String> = vectors.iter().map(|(v, l)| format!("{}:{}", v.task_id, l)).collect();
    out.set_meta("lambdas", lambdas.join(","))?;
    Ok(out)
}

/// Candidate coefficients for the uniform line search, strictly increasing.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientGrid {
    values: Vec<f64>,
}

impl Default for CoefficientGrid {
    /// `{0, 0.05, …, 1}`: 21 values.
    fn default() -> Self {
        CoefficientGrid {
            values: (0..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

impl CoefficientGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("coefficient grid is empty"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("coefficient grid has non-finite values"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("coefficient grid must be strictly increasing"));
        }
        Ok(CoefficientGrid { values })
    }

    /// `count` equispaced values from `lo` to `hi` inclusive.
    pub fn equispaced(lo: f64, hi: f64, count: usize) -> Result<Self> {
        match count {
            0 => Err(Error::invalid("coefficient grid is empty")),
            1 => CoefficientGrid::new(vec![lo]),
            _ => CoefficientGrid::new(
                (0..count)
                    .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                    .collect(),
            ),
        }
    }

    /// Parses `a,b,c` or `lo:hi:count`.
    pub fn parse(text: &str) -> Result<Self> {
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad coefficient {s:?}")))
        };
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() == 3 {
            let count = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad grid size {:?}", parts[2])))?;
            return CoefficientGrid::equispaced(num(parts[0])?, num(parts[1])?, count);
        }
        CoefficientGrid::new(text.split(',').map(num).collect::<Result<_>>()?)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// How coefficients are chosen for a merge.
#[derive(Clone, Debug, PartialEq)]
pub enum MergeConfig {
    /// Fixed per-task coefficients.
    Explicit(Vec<(String, f64)>),
    /// One coefficient shared by every task, picked by line search.
    UniformSearch(CoefficientGrid),
}

impl MergeConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            MergeConfig::Explicit(pairs) => match pairs.iter().find(|(_, l)| !l.is_finite()) {
                Some((t, _)) => Err(Error::invalid(format!("coefficient for {t} is not finite"))),
                None => Ok(()),
            },
            MergeConfig::UniformSearch(grid) => CoefficientGrid::new(grid.values.clone()).map(|_| ()),
        }
    }
}

/// Mean over tasks of `merged_t / single_t`.
pub fn normalized_accuracy(merged: &[f64], single: &[f64]) -> Result<f64> {
    if merged.len() != single.len() {
        return Err(Error::invalid(format!(
            "{} merged accuracies for {} reference accuracies",
            merged.len(),
            single.len()
        )));
    }
    if merged.is_empty() {
        return Err(Error::invalid("normalized accuracy of an empty task set"));
    }
    let mut sum = 0.0;
    for (i, (m, s)) in merged.iter().zip(single).enumerate() {
        if !(*s > 0.0) {
            return Err(Error::DegenerateReference(format!("single-task accuracy of task #{i} is {s}")));
        }
        sum += m / s;
    }
    Ok(sum / merged.len() as f64)
}

/// Accuracy of one task under one merged model.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskAccuracy {
    pub task_id: String,
    pub single: f64,
    pub merged: f64,
}

/// Every task's accuracy at one coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub lambda: f64,
    pub tasks: Vec<TaskAccuracy>,
    pub absolute_avg: f64,
    pub normalized_avg: f64,
}

impl CurvePoint {
    pub fn new(lambda: f64, tasks: Vec<TaskAccuracy>) -> Result<Self> {
        let merged: Vec<f64> = tasks.iter().map(|t| t.merged).collect();
        let single: Vec<f64> = tasks.iter().map(|t| t.single).collect();
        let normalized_avg = normalized_accuracy(&merged, &single)?;
        let absolute_avg = merged.iter().sum::<f64>() / merged.len() as f64;
        Ok(CurvePoint {
            lambda,
            tasks,
            absolute_avg,
            normalized_avg,
        })
    }
}

/// Outcome of a merge: the chosen point plus the full curve when searched.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub selected: CurvePoint,
    /// Every evaluated coefficient, in grid order.
    pub curve: Vec<CurvePoint>,
    pub regime: Option<String>,
    pub meta: BTreeMap<String, String>,
}

impl EvaluationReport {
    pub fn lambda(&self) -> f64 {
        self.selected.lambda
    }

    pub fn normalized_avg(&self) -> f64 {
        self.selected.normalized_avg
    }

    pub fn absolute_avg(&self) -> f64 {
        self.selected.absolute_avg
    }

    /// Normalized accuracy at `lambda`, if it was evaluated.
    pub fn curve_value(&self, lambda: f64) -> Option<f64> {
        self.curve.iter().find(|p| p.lambda == lambda).map(|p| p.normalized_avg)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,task_id,merged_acc,single_acc,normalized\n");
        let points = if self.curve.is_empty() {
            std::slice::from_ref(&self.selected)
        } else {
            &self.curve[..]
        };
        for p in points {
            for t in &p.tasks {
                out.push_str(&format!("{},{},{},{},{}\n", p.lambda, t.task_id, t.merged, t.single, t.merged / t.single));
            }
            out.push_str(&summary_row(p, "__all__"));
        }
        out.push_str(&summary_row(&self.selected, "__selected__"));
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_csv().as_bytes())
    }
}

fn summary_row(p: &CurvePoint, label: &str) -> String {
    let single = p.tasks.iter().map(|t| t.single).sum::<f64>() / p.tasks.len().max(1) as f64;
    format!("{},{label},{},{},{}\n", p.lambda, p.absolute_avg, single, p.normalized_avg)
}

/// Evaluates merged encoders against task-specific heads on fixed eval
/// batches. Batches are drawn once at construction.
pub struct MergeEvaluator<'a> {
    config: &'a ModelConfig,
    heads: &'a BTreeMap<String, WeightSnapshot>,
    tasks: Vec<(&'a TaskSpec, LabeledBatch)>,
}

impl<'a> MergeEvaluator<'a> {
    pub fn new(config: &'a ModelConfig, heads: &'a BTreeMap<String, WeightSnapshot>, tasks: &'a [TaskSpec]) -> Result<Self> {
        let mut prepared = Vec::with_capacity(tasks.len());
        for task in tasks {
            let head = heads.get(&task.task_id).ok_or_else(|| Error::MissingHead(task.task_id.clone()))?;
            let classes = head.get(HEAD_WEIGHT).map(|w| w.shape()[0]);
            if classes != Some(task.num_classes) || head.get(HEAD_BIAS).is_none() {
                return Err(Error::Compatibility(format!(
                    "head for {} does not match its {} classes",
                    task.task_id, task.num_classes
                )));
            }
            prepared.push((task, sample_task(task, Split::Eval, task.eval_count)?));
        }
        Ok(MergeEvaluator {
            config,
            heads,
            tasks: prepared,
        })
    }

    /// Per-task eval accuracy of `encoder` with each task's head.
    pub fn evaluate(&self, encoder: &WeightSnapshot) -> Result<Vec<(String, f64)>> {
        self.tasks
            .iter()
            .map(|(task, batch)| {
                let model = ModelGraph::from_parts(self.config, encoder, &self.heads[&task.task_id])?;
                let preds = model.predict(&batch.inputs)?;
                Ok((task.task_id.clone(), fraction_correct(&preds, &batch.labels)))
            })
            .collect()
    }
}

/// Per-task eval accuracy of `merged` with each task's head attached.
pub fn evaluate_merged(
    config: &ModelConfig,
    merged: &WeightSnapshot,
    heads: &BTreeMap<String, WeightSnapshot>,
    tasks: &[TaskSpec],
) -> Result<Vec<(String, f64)>> {
    MergeEvaluator::new(config, heads, tasks)?.evaluate(merged)
}

fn reference(single: &BTreeMap<String, f64>, task_id: &str) -> Result<f64> {
    single
        .get(task_id)
        .copied()
        .ok_or_else(|| Error::DegenerateReference(format!("no single-task accuracy for {task_id}")))
}

/// Merges with fixed per-task coefficients and scores the result.
pub fn evaluate_explicit(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    vectors: &[(&TaskVector, f64)],
    heads: &BTreeMap<String, WeightSnapshot>,
    tasks: &[TaskSpec],
    single: &BTreeMap<String, f64>,
) -> Result<EvaluationReport> {
    let merged = apply_task_vectors(pre, vectors)?;
    let accs = evaluate_merged(config, &merged, heads, tasks)?;
    let rows = accs
        .into_iter()
        .map(|(task_id, merged)| {
            Ok(TaskAccuracy {
                single: reference(single, &task_id)?,
                task_id,
                merged,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lambda = vectors.first().map_or(0.0, |v| v.1);
    Ok(EvaluationReport {
        selected: CurvePoint::new(lambda, rows)?,
        curve: Vec::new(),
        regime: None,
        meta: BTreeMap::new(),
    })
}

/// Uniform-coefficient line search: every task gets the same `λ` and the
/// grid value with the highest normalized accuracy wins, ties going to the
/// smaller `λ`. Grid points are evaluated in parallel and reduced in grid
/// order.
pub fn line_search_lambda(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    vectors: &[&TaskVector],
    heads: &BTreeMap<String, WeightSnapshot>,
    tasks: &[TaskSpec],
    single: &BTreeMap<String, f64>,
    grid: &CoefficientGrid,
) -> Result<EvaluationReport> {
    if tasks.is_empty() {
        return Err(Error::invalid("line search needs at least one task"));
    }
    let evaluator = MergeEvaluator::new(config, heads, tasks)?;
    let refs = tasks
        .iter()
        .map(|t| reference(single, &t.task_id))
        .collect::<Result<Vec<_>>>()?;
    let curve = grid
        .values()
        .par_iter()
        .map(|&lambda| {
            let weighted: Vec<(&TaskVector, f64)> = vectors.iter().map(|v| (*v, lambda)).collect();
            let merged = apply_task_vectors(pre, &weighted)?;
            let rows = evaluator
                .evaluate(&merged)?
                .into_iter()
                .zip(&refs)
                .map(|((task_id, merged), &single)| TaskAccuracy { task_id, single, merged })
                .collect();
            CurvePoint::new(lambda, rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, p) in curve.iter().enumerate() {
        if p.normalized_avg > curve[best].normalized_avg {
            best = i;
        }
    }
    Ok(EvaluationReport {
        selected: curve[best].clone(),
        curve,
        regime: None,
        meta: BTreeMap::new(),
    })
}

/// Zero-shot head weights `W ∈ R^{d_emb × N}`: column `n` is the mean of
/// class `n`'s template embeddings, L2-normalized when `normalize` is set.
pub fn build_zeroshot_head(embeddings: &[Vec<Vec<f32>>], d_emb: usize, normalize: bool) -> Result<Tensor> {
    let n = embeddings.len();
    let mut w = vec![0f32; d_emb * n];
    for (class, templates) in embeddings.iter().enumerate() {
        if templates.is_empty() {
            return Err(Error::invalid(format!("class {class} has no template embeddings")));
        }
        let mut mean = vec![0f64; d_emb];
        for t in templates {
            if t.len() != d_emb {
                return Err(Error::Shape {
                    left: vec![t.len()],
                    right: vec![d_emb],
                });
            }
            for (m, &v) in mean.iter_mut().zip(t) {
                *m += v as f64;
            }
        }
        for m in &mut mean {
            *m /= templates.len() as f64;
        }
        if normalize {
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::invalid(format!("class {class} has a zero mean embedding")));
            }
            for m in &mut mean {
                *m /= norm;
            }
        }
        for (row, m) in mean.iter().enumerate() {
            w[row * n + class] = *m as f32;
        }
    }
    Tensor::new(vec![d_emb, n], w)
}

/// Head snapshot for a zero-shot weight matrix: `head.weight = Wᵀ`, zero
/// bias.
pub fn zeroshot_head_snapshot(w: &Tensor) -> Result<WeightSnapshot> {
    let [d, n] = w.shape() else {
        return Err(Error::invalid("zero-shot head weights must be a matrix"));
    };
    let (d, n) = (*d, *n);
    let mut t = vec![0f32; d * n];
    for r in 0..d {
        for c in 0..n {
            t[c * d + r] = w.data()[r * n + c];
        }
    }
    let mut s = WeightSnapshot::new();
    s.insert(HEAD_WEIGHT, Tensor::new(vec![n, d], t)?)?;
    s.insert(HEAD_BIAS, Tensor::zeros(&[n]))?;
    s.set_meta(meta_keys::ROLE, "head")?;
    s.set_meta("phase", "zero-shot")?;
    Ok(s)
}

/// Groups `label v…` rows by class for [`build_zeroshot_head`].
pub fn group_by_class(batch: &LabeledBatch, num_classes: usize) -> Vec<Vec<Vec<f32>>> {
    let d = batch.input_dim();
    let mut out = vec![Vec::new(); num_classes];
    for (i, &y) in batch.labels.iter().enumerate() {
        if y < num_classes {
            out[y].push(batch.inputs.data()[i * d..(i + 1) * d].to_vec());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::gaussian_sample;
    use proptest::prelude::*;

    fn snap(pairs: &[(&str, Vec<f32>)]) -> WeightSnapshot {
        let mut s = WeightSnapshot::new();
        for (k, v) in pairs {
            s.insert(*k, Tensor::from_slice(v)).unwrap();
        }
        s
    }

    fn random_pair(seed: u64) -> (WeightSnapshot, WeightSnapshot) {
        let mut rng = SeededRng::new(seed);
        let mut pre = WeightSnapshot::new();
        let mut ft = WeightSnapshot::new();
        for (k, shape) in [("encoder.a", vec![3, 4]), ("encoder.b", vec![5])] {
            let p = gaussian_sample(&mut rng, &shape, 0.0, 1.0).unwrap();
            let d = gaussian_sample(&mut rng, &shape, 0.0, 0.1).unwrap();
            let f: Vec<f32> = p.data().iter().zip(d.data()).map(|(a, b)| a + b).collect();
            ft.insert(k, Tensor::new(shape.clone(), f).unwrap()).unwrap();
            pre.insert(k, p).unwrap();
        }
        pre.insert("head.weight", Tensor::full(&[2, 2], 7.0)).unwrap();
        ft.set_meta("base-hash", pre.encoder_hash().to_string()).unwrap();
        ft.set_meta("task-id", "t").unwrap();
        (pre, ft)
    }

    fn ulp(x: f32) -> f32 {
        let x = x.abs();
        f32::from_bits(x.to_bits() + 1) - x
    }

    #[test]
    fn extraction_matches_scalar_loop() {
        let (pre, ft) = random_pair(1);
        let tau = extract_task_vector(&ft, &pre, false).unwrap();
        assert!(tau.entries().keys().all(|k| k.starts_with("encoder.")));
        for (k, t) in tau.entries() {
            let a = ft.get(k).unwrap().data();
            let b = pre.get(k).unwrap().data();
            for i in 0..t.len() {
                let expect = a[i] - b[i];
                assert_eq!(t.data()[i].to_bits(), expect.to_bits());
            }
        }
    }

    #[test]
    fn identity_and_inverse() {
        let (pre, ft) = random_pair(2);
        let mut same = pre.clone();
        same.set_meta("base-hash", pre.encoder_hash().to_string()).unwrap();
        let zero = extract_task_vector(&same, &pre, false).unwrap();
        assert!(zero.entries().values().all(|t| t.data().iter().all(|&v| v == 0.0)));

        let tau = extract_task_vector(&ft, &pre, false).unwrap();
        let back = apply_task_vectors(&pre, &[(&tau, 1.0)]).unwrap();
        for (k, t) in ft.entries() {
            let p = pre.get(k).unwrap().data();
            for (i, (x, y)) in t.data().iter().zip(back.get(k).unwrap().data()).enumerate() {
                assert!((x - y).abs() <= ulp(x.abs().max(p[i].abs())));
            }
        }
        assert!(back.namespace_bit_eq(&pre, Namespace::Head));
        assert_eq!(back.meta_value("role"), Some("merged"));

        let unchanged = apply_task_vectors(&pre, &[(&tau, 0.0)]).unwrap();
        assert!(unchanged.namespace_bit_eq(&pre, Namespace::Encoder));
        assert!(unchanged.namespace_bit_eq(&pre, Namespace::Head));
    }

    #[test]
    fn three_parameter_hand_example() {
        let pre = snap(&[("encoder.w", vec![1.0, -2.0, 0.5])]);
        let h = pre.encoder_hash();
        let t1 = TaskVector::new(
            [("encoder.w".to_string(), Tensor::from_slice(&[0.5, 1.0, -1.0]))].into(),
            h,
            "a",
        )
        .unwrap();
        let t2 = TaskVector::new(
            [("encoder.w".to_string(), Tensor::from_slice(&[2.0, -0.25, 4.0]))].into(),
            h,
            "b",
        )
        .unwrap();
        // 1 + 0.5*0.5 + 0.25*2 = 1.75; -2 + 0.5 - 0.0625 = -1.5625; 0.5 - 0.5 + 1 = 1
        let m = apply_task_vectors(&pre, &[(&t1, 0.5), (&t2, 0.25)]).unwrap();
        assert_eq!(m.get("encoder.w").unwrap().data(), &[1.75, -1.5625, 1.0]);
    }

    #[test]
    fn foreign_fine_tune_is_rejected_unless_forced() {
        let (pre, mut ft) = random_pair(3);
        ft.set_meta("base-hash", "0000000000000001").unwrap();
        assert!(matches!(extract_task_vector(&ft, &pre, false), Err(Error::ForeignFineTune { .. })));
        let tau = extract_task_vector(&ft, &pre, true).unwrap();
        let (other, _) = random_pair(4);
        assert!(matches!(apply_task_vectors(&other, &[(&tau, 1.0)]), Err(Error::ForeignFineTune { .. })));

        let mut bad_shape = pre.clone();
        bad_shape.insert("encoder.b", Tensor::zeros(&[6])).unwrap();
        assert!(matches!(extract_task_vector(&ft, &bad_shape, true), Err(Error::Compatibility(_))));
        assert!(TaskVector::new([("head.weight".to_string(), Tensor::zeros(&[1]))].into(), pre.encoder_hash(), "x").is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let (pre, ft) = random_pair(5);
        let tau = extract_task_vector(&ft, &pre, false).unwrap();
        let back = TaskVector::from_snapshot(&tau.to_snapshot().unwrap()).unwrap();
        assert_eq!(back, tau);
    }

    #[test]
    fn default_grid_is_21_values() {
        let g = CoefficientGrid::default();
        assert_eq!(g.values().len(), 21);
        let printed: Vec<String> = g.values().iter().map(|v| v.to_string()).collect();
        assert_eq!(printed[0], "0");
        assert_eq!(printed[1], "0.05");
        assert_eq!(printed[3], "0.15");
        assert_eq!(printed[20], "1");
        for (i, v) in g.values().iter().enumerate() {
            assert!((v - 0.05 * i as f64).abs() < 1e-12);
        }
        assert_eq!(CoefficientGrid::parse("0:1:21").unwrap(), g);
        assert!(CoefficientGrid::parse("0.5,0.1").is_err());
        assert!(CoefficientGrid::parse("").is_err());
        assert_eq!(CoefficientGrid::parse("-1:1:3").unwrap().values(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn normalized_accuracy_examples() {
        assert_eq!(normalized_accuracy(&[0.7, 0.4], &[0.7, 0.4]).unwrap(), 1.0);
        assert!((normalized_accuracy(&[0.81, 0.72], &[0.9, 0.8]).unwrap() - 0.9).abs() < 1e-12);
        let v = normalized_accuracy(&[0.5, 0.9], &[1.0, 0.9]).unwrap();
        assert_eq!(v, 0.75);
        assert!((v - 1.4 / 1.9).abs() > 0.01);
        assert!(matches!(normalized_accuracy(&[0.5], &[0.0]), Err(Error::DegenerateReference(_))));
    }

    #[test]
    fn zeroshot_head_oracle() {
        let mut rng = SeededRng::new(9);
        let emb: Vec<Vec<Vec<f32>>> = (0..2)
            .map(|_| (0..3).map(|_| (0..4).map(|_| rng.normal() as f32).collect()).collect())
            .collect();
        let w = build_zeroshot_head(&emb, 4, true).unwrap();
        assert_eq!(w.shape(), &[4, 2]);
        for c in 0..2 {
            let mut mean = [0f64; 4];
            for t in &emb[c] {
                for r in 0..4 {
                    mean[r] += t[r] as f64 / 3.0;
                }
            }
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            for r in 0..4 {
                assert!((w.data()[r * 2 + c] as f64 - mean[r] / norm).abs() < 1e-6);
            }
        }
        let one = build_zeroshot_head(&[vec![vec![3.0, 4.0]]], 2, true).unwrap();
        assert_eq!(one.data(), &[0.6, 0.8]);
        let raw = build_zeroshot_head(&[vec![vec![3.0, 4.0], vec![3.0, 4.0]]], 2, false).unwrap();
        assert_eq!(raw.data(), &[3.0, 4.0]);
        assert!(build_zeroshot_head(&[vec![]], 2, true).is_err());
        assert!(build_zeroshot_head(&[vec![vec![1.0]]], 2, true).is_err());

        let head = zeroshot_head_snapshot(&w).unwrap();
        assert_eq!(head.get("head.weight").unwrap().shape(), &[2, 4]);
        assert_eq!(head.get("head.weight").unwrap().data()[1], w.data()[2]);
    }

    fn tau_from(pre: &WeightSnapshot, values: &[f32]) -> TaskVector {
        TaskVector::new(
            [("encoder.w".to_string(), Tensor::from_slice(values))].into(),
            pre.encoder_hash(),
            "p",
        )
        .unwrap()
    }

    fn within_ulps(a: f32, b: f32, n: u32) -> bool {
        if a == b {
            return true;
        }
        let scale = a.abs().max(b.abs());
        (a - b).abs() <= n as f32 * ulp(scale)
    }

    proptest! {
        #[test]
        fn merge_is_linear_in_lambda(
            base in prop::collection::vec(-4.0f32..4.0, 6),
            delta in prop::collection::vec(-1.0f32..1.0, 6),
            a in -2.0f64..2.0,
            b in -2.0f64..2.0,
        ) {
            let pre = snap(&[("encoder.w", base)]);
            let tau = tau_from(&pre, &delta);
            let split = apply_task_vectors(&pre, &[(&tau, a), (&tau, b)]).unwrap();
            let joint = apply_task_vectors(&pre, &[(&tau, a + b)]).unwrap();
            for (x, y) in split.get("encoder.w").unwrap().data().iter().zip(joint.get("encoder.w").unwrap().data()) {
                prop_assert!(within_ulps(*x, *y, 4), "{x} vs {y}");
            }
        }

        #[test]
        fn merge_ignores_vector_order(
            base in prop::collection::vec(-4.0f32..4.0, 6),
            vs in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 6), 3),
            ls in prop::collection::vec(-3.0f64..3.0, 3),
        ) {
            let pre = snap(&[("encoder.w", base)]);
            let taus: Vec<TaskVector> = vs.iter().map(|v| tau_from(&pre, v)).collect();
            let fwd = apply_task_vectors(&pre, &[(&taus[0], ls[0]), (&taus[1], ls[1]), (&taus[2], ls[2])]).unwrap();
            let rev = apply_task_vectors(&pre, &[(&taus[2], ls[2]), (&taus[0], ls[0]), (&taus[1], ls[1])]).unwrap();
            for (x, y) in fwd.get("encoder.w").unwrap().data().iter().zip(rev.get("encoder.w").unwrap().data()) {
                prop_assert!(within_ulps(*x, *y, 4), "{x} vs {y}");
            }
        }
    }
}
