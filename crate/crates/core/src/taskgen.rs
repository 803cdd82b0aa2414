//! Synthetic classification tasks and the plain-text dataset format.
//!
//! A synthetic task places one or more cluster centers per class on a
//! scaled standard-simplex template (`center_j = s * e_j`, class `j % K`),
//! rotates them by a task-specific orthogonal matrix `R_t`, and adds
//! isotropic gaussian noise. Tasks of one suite differ only in `R_t`.
//!
//! Dataset files are UTF-8 text:
//!
//! ```text
//! D num_classes
//! label v0 v1 ... v(D-1)        training rows
//! ---
//! label v0 v1 ... v(D-1)        evaluation rows
//! ```
//!
//! The `---` separator is optional; without it every row is a training row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::nn::tape::Mat;
use crate::nn::tensor_to_mat;
use crate::rng::{mix64, SeededRng};
use crate::tensor::Tensor;

/// Parameters of one synthetic input distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub input_dim: usize,
    pub clusters_per_class: usize,
    pub cluster_separation: f64,
    pub noise_std: f64,
    pub rotation_seed: u64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            input_dim: 32,
            clusters_per_class: 1,
            cluster_separation: 3.0,
            noise_std: 0.8,
            rotation_seed: 0,
        }
    }
}

impl SyntheticParams {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.noise_std > 0.0) || !(self.cluster_separation > 0.0) {
            return Err(Error::invalid("noise_std and cluster_separation must be positive"));
        }
        if self.clusters_per_class == 0 {
            return Err(Error::invalid("clusters_per_class must be positive"));
        }
        if num_classes * self.clusters_per_class > self.input_dim {
            return Err(Error::invalid(format!(
                "{} clusters do not fit in {} input dimensions",
                num_classes * self.clusters_per_class,
                self.input_dim
            )));
        }
        Ok(())
    }

    /// The task's orthogonal transform `R_t`, `[D, D]` row-major.
    pub fn rotation(&self) -> Mat {
        random_orthogonal(self.input_dim, self.rotation_seed)
    }
}

/// Haar-like random orthogonal matrix: modified Gram-Schmidt, applied twice,
/// over the rows of a gaussian matrix.
pub fn random_orthogonal(dim: usize, seed: u64) -> Mat {
    let mut rng = SeededRng::new(seed).split("rotation");
    let mut rows: Vec<Vec<f64>> = (0..dim).map(|_| (0..dim).map(|_| rng.normal()).collect()).collect();
    for _pass in 0..2 {
        for i in 0..dim {
            for j in 0..i {
                let dot: f64 = (0..dim).map(|k| rows[i][k] * rows[j][k]).sum();
                for k in 0..dim {
                    rows[i][k] -= dot * rows[j][k];
                }
            }
            let norm = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
            rows[i].iter_mut().for_each(|v| *v /= norm);
        }
    }
    Mat::from_vec(dim, dim, rows.into_iter().flatten().collect())
}

/// Where a task's samples come from.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskSource {
    Synthetic(SyntheticParams),
    File(PathBuf),
}

/// A classification task `t` with its input distribution `μ_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSpec {
    pub task_id: String,
    pub source: TaskSource,
    pub num_classes: usize,
    pub train_count: usize,
    pub eval_count: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
    /// Held-out data for hyper-parameter selection. Synthetic tasks draw it
    /// from its own sub-stream; file tasks reuse their evaluation rows.
    Validation,
}

impl Split {
    fn label(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Validation => "validation",
        }
    }
}

/// Inputs `[b, D]` with one label per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl LabeledBatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "batch inputs {:?} do not match {} labels",
                inputs.shape(),
                labels.len()
            )));
        }
        Ok(LabeledBatch { inputs, labels })
    }

    pub fn empty(input_dim: usize) -> Self {
        LabeledBatch {
            inputs: Tensor::new(vec![0, input_dim], vec![]).unwrap(),
            labels: vec![],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.shape()[1]
    }

    pub fn inputs_f64(&self) -> Mat {
        tensor_to_mat(&self.inputs)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabeledBatch {
        let d = self.input_dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.inputs.data()[i * d..(i + 1) * d]);
        }
        LabeledBatch {
            inputs: Tensor::new(vec![indices.len(), d], data).unwrap(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn take(&self, count: usize) -> LabeledBatch {
        self.select(&(0..count.min(self.len())).collect::<Vec<_>>())
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid(format!("task {} needs >= 2 classes", self.task_id)));
        }
        if self.train_count == 0 || self.eval_count == 0 {
            return Err(Error::invalid(format!("task {} needs positive split counts", self.task_id)));
        }
        if let TaskSource::Synthetic(p) = &self.source {
            p.validate(self.num_classes)?;
        }
        Ok(())
    }

    pub fn input_dim(&self) -> Result<usize> {
        match &self.source {
            TaskSource::Synthetic(p) => Ok(p.input_dim),
            TaskSource::File(path) => Ok(load_dataset_file(path)?.input_dim),
        }
    }

    /// Same task with a different sampling seed; the distribution is unchanged.
    pub fn with_seed(&self, seed: u64) -> TaskSpec {
        TaskSpec {
            seed,
            ..self.clone()
        }
    }

    pub fn count_for(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train_count,
            Split::Eval | Split::Validation => self.eval_count,
        }
    }
}

/// Draws `count` samples of `split`. Deterministic in `(spec, split, count)`;
/// a shorter draw is a prefix of a longer one.
pub fn sample_task(spec: &TaskSpec, split: Split, count: usize) -> Result<LabeledBatch> {
    spec.validate()?;
    match &spec.source {
        TaskSource::Synthetic(params) => {
            let rng = SeededRng::new(spec.seed).split(&spec.task_id).split(split.label());
            Ok(sample_synthetic(params, spec.num_classes, &params.rotation(), rng, count))
        }
        TaskSource::File(path) => {
            let data = load_dataset_file(path)?;
            if data.num_classes != spec.num_classes {
                return Err(Error::invalid(format!(
                    "{} declares {} classes, task {} expects {}",
                    path.display(),
                    data.num_classes,
                    spec.task_id,
                    spec.num_classes
                )));
            }
            let rows = match split {
                Split::Train => &data.train,
                Split::Eval | Split::Validation => &data.eval,
            };
            if count > rows.len() {
                return Err(Error::invalid(format!(
                    "{} has {} {} rows, {} requested",
                    path.display(),
                    rows.len(),
                    split.label(),
                    count
                )));
            }
            Ok(rows.take(count))
        }
    }
}

fn sample_synthetic(
    params: &SyntheticParams,
    num_classes: usize,
    rotation: &Mat,
    mut rng: SeededRng,
    count: usize,
) -> LabeledBatch {
    let d = params.input_dim;
    let mut data = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    let mut center = vec![0.0f64; d];
    for i in 0..count {
        let label = i % num_classes;
        let cluster = if params.clusters_per_class > 1 {
            rng.below(params.clusters_per_class)
        } else {
            0
        };
        center.iter_mut().for_each(|v| *v = 0.0);
        center[label + num_classes * cluster] = params.cluster_separation;
        for r in 0..d {
            let rotated: f64 = (0..d).fold(0.0, |acc, k| acc + rotation.at(r, k) * center[k]);
            data.push((rotated + params.noise_std * rng.normal()) as f32);
        }
        labels.push(label);
    }
    LabeledBatch {
        inputs: Tensor::new(vec![count, d], data).unwrap(),
        labels,
    }
}

/// Default number of rotated template copies in a pre-training corpus.
pub const PRETRAINING_ROTATIONS: usize = 16;

/// Pre-training corpus: `rotations` copies of the cluster template, each
/// under its own random rotation, with every cluster of every copy carrying
/// its own label. The rotations come from a seed stream disjoint from the
/// one [`make_task_suite`] uses, so no downstream task is seen verbatim.
/// Returns the batch and its label count, `rotations · K · clusters_per_class`.
pub fn pretraining_corpus(
    params: &SyntheticParams,
    num_classes: usize,
    rotations: usize,
    count: usize,
    seed: u64,
) -> Result<(LabeledBatch, usize)> {
    params.validate(num_classes)?;
    if rotations == 0 {
        return Err(Error::invalid("a pre-training corpus needs at least one rotation"));
    }
    let clusters = num_classes * params.clusters_per_class;
    let single = SyntheticParams {
        clusters_per_class: 1,
        ..params.clone()
    };
    let d = params.input_dim;
    let root = SeededRng::new(seed).split("pretraining-corpus");
    let mut data = Vec::with_capacity(count * d);
    let mut labels = Vec::with_capacity(count);
    for r in 0..rotations {
        let share = count / rotations + usize::from(r < count % rotations);
        let rotation = random_orthogonal(d, root.split(&format!("rotation{r}")).next_u64());
        let part = sample_synthetic(&single, clusters, &rotation, root.split(&format!("samples{r}")), share);
        data.extend_from_slice(part.inputs.data());
        labels.extend(part.labels.iter().map(|y| y + r * clusters));
    }
    let batch = LabeledBatch::new(Tensor::new(vec![labels.len(), d], data)?, labels)?;
    Ok((batch, rotations * clusters))
}

/// Settings shared by every task of a generated suite.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteTemplate {
    pub params: SyntheticParams,
    pub num_classes: usize,
    pub train_count: usize,
    pub eval_count: usize,
}

impl Default for SuiteTemplate {
    fn default() -> Self {
        SuiteTemplate {
            params: SyntheticParams::default(),
            num_classes: 8,
            train_count: 2048,
            eval_count: 512,
        }
    }
}

/// `count` tasks `task0..` that differ only in id and rotation seed.
pub fn make_task_suite(count: usize, base_seed: u64, template: &SuiteTemplate) -> Result<Vec<TaskSpec>> {
    if count == 0 {
        return Err(Error::invalid("a suite needs at least one task"));
    }
    (0..count)
        .map(|i| {
            let spec = TaskSpec {
                task_id: format!("task{i}"),
                source: TaskSource::Synthetic(SyntheticParams {
                    // mix64 is a bijection, so distinct indices give distinct seeds.
                    rotation_seed: mix64(base_seed.wrapping_add(i as u64)),
                    ..template.params.clone()
                }),
                num_classes: template.num_classes,
                train_count: template.train_count,
                eval_count: template.eval_count,
                seed: base_seed,
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// Contents of a dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFile {
    pub input_dim: usize,
    pub num_classes: usize,
    pub train: LabeledBatch,
    pub eval: LabeledBatch,
}

pub const SPLIT_SEPARATOR: &str = "---";

pub fn load_dataset_file(path: impl AsRef<Path>) -> Result<DatasetFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

pub fn parse_dataset(text: &str, origin: &Path) -> Result<DatasetFile> {
    let err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| err(1, "missing header".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let (input_dim, num_classes) = match head.as_slice() {
        [d, k] => (
            d.parse::<usize>().map_err(|_| err(1, format!("bad dimension {d:?}")))?,
            k.parse::<usize>().map_err(|_| err(1, format!("bad class count {k:?}")))?,
        ),
        _ => return Err(err(1, "header must be \"D num_classes\"".into())),
    };
    if input_dim == 0 || num_classes < 2 {
        return Err(err(1, "need D >= 1 and num_classes >= 2".into()));
    }
    let mut parts: [(Vec<f32>, Vec<usize>); 2] = Default::default();
    let mut current = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if trimmed == SPLIT_SEPARATOR {
            if current == 1 {
                return Err(err(lineno, "second split separator".into()));
            }
            current = 1;
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != input_dim + 1 {
            return Err(err(
                lineno,
                format!("expected {} fields, found {}", input_dim + 1, fields.len()),
            ));
        }
        let label: usize = fields[0]
            .parse()
            .map_err(|_| err(lineno, format!("bad label {:?}", fields[0])))?;
        if label >= num_classes {
            return Err(err(lineno, format!("label {label} >= num_classes {num_classes}")));
        }
        let (values, labels) = &mut parts[current];
        for f in &fields[1..] {
            let v: f32 = f.parse().map_err(|_| err(lineno, format!("bad value {f:?}")))?;
            if !v.is_finite() {
                return Err(err(lineno, format!("non-finite value {f:?}")));
            }
            values.push(v);
        }
        labels.push(label);
    }
    let [(tv, tl), (ev, el)] = parts;
    Ok(DatasetFile {
        input_dim,
        num_classes,
        train: LabeledBatch::new(Tensor::new(vec![tl.len(), input_dim], tv)?, tl)?,
        eval: LabeledBatch::new(Tensor::new(vec![el.len(), input_dim], ev)?, el)?,
    })
}

/// Companion writer for [`load_dataset_file`]. Values are written in the
/// shortest form that parses back to the same `f32`.
pub fn write_dataset_file(path: impl AsRef<Path>, num_classes: usize, train: &LabeledBatch, eval: &LabeledBatch) -> Result<()> {
    let path = path.as_ref();
    write_atomic(path, format_dataset(num_classes, train, eval)?.as_bytes())
}

pub fn format_dataset(num_classes: usize, train: &LabeledBatch, eval: &LabeledBatch) -> Result<String> {
    let d = train.input_dim();
    if eval.input_dim() != d {
        return Err(Error::Shape {
            left: train.inputs.shape().to_vec(),
            right: eval.inputs.shape().to_vec(),
        });
    }
    let mut out = format!("{d} {num_classes}\n");
    push_rows(&mut out, train, num_classes)?;
    if !eval.is_empty() {
        out.push_str(SPLIT_SEPARATOR);
        out.push('\n');
        push_rows(&mut out, eval, num_classes)?;
    }
    Ok(out)
}

fn push_rows(out: &mut String, batch: &LabeledBatch, num_classes: usize) -> Result<()> {
    let d = batch.input_dim();
    for (i, &label) in batch.labels.iter().enumerate() {
        if label >= num_classes {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        write!(out, "{label}").unwrap();
        for v in &batch.inputs.data()[i * d..(i + 1) * d] {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(noise: f64, sep: f64) -> TaskSpec {
        TaskSpec {
            task_id: "t".into(),
            source: TaskSource::Synthetic(SyntheticParams {
                noise_std: noise,
                cluster_separation: sep,
                rotation_seed: 99,
                ..Default::default()
            }),
            num_classes: 4,
            train_count: 256,
            eval_count: 256,
            seed: 3,
        }
    }

    #[test]
    fn empty_and_deterministic() {
        let s = spec(0.8, 3.0);
        assert!(sample_task(&s, Split::Train, 0).unwrap().is_empty());
        let a = sample_task(&s, Split::Train, 50).unwrap();
        let b = sample_task(&s, Split::Train, 50).unwrap();
        assert_eq!(a, b);
        let longer = sample_task(&s, Split::Train, 80).unwrap();
        assert_eq!(longer.take(50), a);
        let e = sample_task(&s, Split::Eval, 50).unwrap();
        assert_ne!(a.inputs, e.inputs);
    }

    #[test]
    fn rotation_is_orthogonal() {
        for seed in [0, 1, 12345] {
            let r = random_orthogonal(32, seed);
            let rtr = crate::nn::tape::matmul_tn(&r, &r);
            for i in 0..32 {
                for j in 0..32 {
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((rtr.at(i, j) - target).abs() < 1e-5);
                }
            }
        }
    }

    /// Nearest-centroid classifier fit on the training split.
    fn nearest_centroid_accuracy(train: &LabeledBatch, eval: &LabeledBatch, k: usize) -> f64 {
        let d = train.input_dim();
        let mut centroids = vec![vec![0.0f64; d]; k];
        let mut counts = vec![0usize; k];
        for (i, &y) in train.labels.iter().enumerate() {
            counts[y] += 1;
            for j in 0..d {
                centroids[y][j] += train.inputs.data()[i * d + j] as f64;
            }
        }
        for (c, n) in centroids.iter_mut().zip(&counts) {
            c.iter_mut().for_each(|v| *v /= *n as f64);
        }
        let correct = eval
            .labels
            .iter()
            .enumerate()
            .filter(|&(i, &y)| {
                let x = &eval.inputs.data()[i * d..(i + 1) * d];
                let dist = |c: &Vec<f64>| x.iter().zip(c).map(|(a, b)| (*a as f64 - b).powi(2)).sum::<f64>();
                let best = (0..k).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).unwrap();
                best == y
            })
            .count();
        correct as f64 / eval.len() as f64
    }

    #[test]
    fn low_noise_is_separable_by_nearest_centroid() {
        let s = spec(0.001, 4.0);
        let train = sample_task(&s, Split::Train, 256).unwrap();
        let eval = sample_task(&s, Split::Eval, 256).unwrap();
        assert!(nearest_centroid_accuracy(&train, &eval, 4) > 0.99);
    }

    #[test]
    fn suite_rotations_are_distinct() {
        let suite = make_task_suite(8, 5, &SuiteTemplate::default()).unwrap();
        assert_eq!(suite.len(), 8);
        let mut seeds: Vec<u64> = suite
            .iter()
            .map(|s| match &s.source {
                TaskSource::Synthetic(p) => p.rotation_seed,
                _ => unreachable!(),
            })
            .collect();
        seeds.sort();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
        assert_eq!(make_task_suite(1, 5, &SuiteTemplate::default()).unwrap().len(), 1);
        assert!(make_task_suite(0, 5, &SuiteTemplate::default()).is_err());
    }

    #[test]
    fn dataset_fixture_parses_exactly() {
        let text = "3 2\n1 0.5 -1 2\n---\n0 0 0.25 8\n";
        let d = parse_dataset(text, Path::new("fixture")).unwrap();
        assert_eq!(d.train.labels, vec![1]);
        assert_eq!(d.train.inputs.data(), &[0.5, -1.0, 2.0]);
        assert_eq!(d.eval.labels, vec![0]);
        assert_eq!(d.eval.inputs.data(), &[0.0, 0.25, 8.0]);
    }

    #[test]
    fn dataset_errors_carry_line_numbers() {
        let e = parse_dataset("2 2\n0 1 2\n2 1 1\n", Path::new("f")).unwrap_err();
        assert!(e.to_string().contains("f:3"), "{e}");
        let e = parse_dataset("2 2\n0 1\n", Path::new("f")).unwrap_err();
        assert!(e.to_string().contains("f:2"), "{e}");
    }

    #[test]
    fn dataset_round_trip() {
        let s = spec(0.8, 3.0);
        let train = sample_task(&s, Split::Train, 40).unwrap();
        let eval = sample_task(&s, Split::Eval, 10).unwrap();
        let text = format_dataset(4, &train, &eval).unwrap();
        let back = parse_dataset(&text, Path::new("mem")).unwrap();
        assert_eq!(back.train, train);
        assert_eq!(back.eval, eval);
    }

    #[test]
    fn pretraining_corpus_layout() {
        let p = SyntheticParams {
            noise_std: 1e-6,
            ..Default::default()
        };
        let (batch, labels) = pretraining_corpus(&p, 4, 3, 26, 0).unwrap();
        assert_eq!(labels, 12);
        assert_eq!(batch.len(), 26);
        assert!(batch.labels.iter().all(|&y| y < 12));
        // every row sits on a rotated template center at radius s
        for i in 0..26 {
            let row = &batch.inputs.data()[i * 32..(i + 1) * 32];
            let norm = row.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((norm - 3.0).abs() < 1e-4);
        }
        assert_eq!(pretraining_corpus(&p, 4, 3, 26, 0).unwrap().0, batch);
        assert_ne!(pretraining_corpus(&p, 4, 3, 26, 1).unwrap().0, batch);
        assert!(pretraining_corpus(&p, 4, 0, 26, 0).is_err());
    }
}
