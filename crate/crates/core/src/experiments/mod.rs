//! End-to-end studies: regime comparison, `λ` sweeps, task-count sweeps
//! and disentanglement heatmaps.
//!
//! Every run writes into one output directory:
//!
//! ```text
//! checkpoints/<scheme>.pretrained.tvf
//! checkpoints/<scheme>.probe.<task>.tvf
//! checkpoints/<scheme>.<regime>.<task>.{encoder,head,vector}.tvf
//! logs/*.csv                                   loss curves of computed stages
//! reports/<scheme>-<regime>.csv                line-search report
//! reports/<scheme>-<regime>-lambda.csv         λ sweep
//! reports/<scheme>-<regime>-tasks.csv          one row per merged combination
//! reports/<scheme>-<regime>-tasks-summary.csv  per-n mean and spread
//! reports/summary.csv
//! heatmaps/<scheme>-<regime>-<t1>-<t2>.{csv,pgm} and -box.csv
//! manifest.csv                                 stage,inputs_hash,output_path,status
//! ```
//!
//! A checkpoint stage hashes a canonical description of its inputs
//! (settings plus the hashes of upstream checkpoints) and stores it as the
//! `inputs-hash` metadata value. When the file on disk carries the same
//! value the stage is skipped and marked `reused` in the manifest.

mod plan;

pub use plan::{ExperimentPlan, LambdaPolicy, SweepSettings};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::info;
use rayon::prelude::*;

use crate::arith::{apply_task_vectors, evaluate_merged, extract_task_vector, line_search_lambda, EvaluationReport, TaskVector};
use crate::checkpoint::{fnv1a64, load_tvf, meta_keys, save_tvf, write_atomic, WeightSnapshot};
use crate::disentangle::{self, format_g6, region_mean, render_heatmap, DisentanglementGrid};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::taskgen::{pretraining_corpus, sample_task, LabeledBatch, Split, TaskSpec};
use crate::train::{
    accuracy, finetune, linear_probe, lr_line_search, pretrain, random_head, write_loss_csv, FinetuneRegime,
    LossRecord, OptimConfig, PretrainScheme,
};

pub const INPUTS_HASH: &str = "inputs-hash";
const LR_KEY: &str = "lr";

/// Whether a stage ran or was satisfied from disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageStatus {
    Computed,
    Reused,
}

impl StageStatus {
    pub fn name(self) -> &'static str {
        match self {
            StageStatus::Computed => "computed",
            StageStatus::Reused => "reused",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub stage: String,
    pub inputs_hash: u64,
    pub output_path: String,
    pub status: StageStatus,
}

/// `manifest.csv`, rewritten after every record. Rows are sorted by stage
/// and path so concurrent stages cannot reorder the file.
struct Manifest {
    path: PathBuf,
    rows: Mutex<Vec<ManifestRow>>,
}

impl Manifest {
    fn record(&self, row: ManifestRow) -> Result<()> {
        let mut rows = self.rows.lock().unwrap_or_else(|p| p.into_inner());
        rows.retain(|r| r.output_path != row.output_path);
        rows.push(row);
        rows.sort_by(|a, b| (&a.stage, &a.output_path).cmp(&(&b.stage, &b.output_path)));
        let mut text = String::from("stage,inputs_hash,output_path,status\n");
        for r in rows.iter() {
            let _ = writeln!(text, "{},{:016x},{},{}", r.stage, r.inputs_hash, r.output_path, r.status.name());
        }
        write_atomic(&self.path, text.as_bytes())
    }
}

/// One task of one regime.
#[derive(Clone, Debug)]
pub struct TaskRun {
    pub task_id: String,
    pub probe_head: WeightSnapshot,
    /// Eval accuracy of `θ_pre` with the probed head.
    pub probe_accuracy: f64,
    pub encoder: WeightSnapshot,
    pub head: WeightSnapshot,
    /// Single-task fine-tuned eval accuracy, the normalization reference.
    pub accuracy: f64,
    pub vector: TaskVector,
}

/// All tasks of one `(scheme, regime)` pair plus the full-suite line search.
#[derive(Clone, Debug)]
pub struct RegimeRun {
    pub scheme: PretrainScheme,
    pub regime: FinetuneRegime,
    pub tasks: Vec<TaskRun>,
    pub report: EvaluationReport,
}

impl RegimeRun {
    pub fn label(&self) -> String {
        format!("{}-{}", self.scheme.name(), self.regime.name())
    }

    pub fn heads(&self) -> BTreeMap<String, WeightSnapshot> {
        self.tasks.iter().map(|t| (t.task_id.clone(), t.head.clone())).collect()
    }

    pub fn single(&self) -> BTreeMap<String, f64> {
        self.tasks.iter().map(|t| (t.task_id.clone(), t.accuracy)).collect()
    }

    pub fn vectors(&self) -> Vec<&TaskVector> {
        self.tasks.iter().map(|t| &t.vector).collect()
    }

    /// Mean over tasks of probe accuracy divided by fine-tuned accuracy.
    pub fn probe_normalized(&self) -> f64 {
        let n = self.tasks.len() as f64;
        self.tasks.iter().map(|t| t.probe_accuracy / t.accuracy).sum::<f64>() / n
    }
}

#[derive(Clone, Debug)]
pub struct SchemeRun {
    pub scheme: PretrainScheme,
    pub pretrained: WeightSnapshot,
    pub regimes: Vec<RegimeRun>,
}

/// Output of [`run_regime_comparison`].
#[derive(Clone, Debug)]
pub struct RegimeComparison {
    pub schemes: Vec<SchemeRun>,
}

impl RegimeComparison {
    pub fn run(&self, scheme: PretrainScheme, regime: FinetuneRegime) -> Option<&RegimeRun> {
        self.schemes
            .iter()
            .filter(|s| s.scheme == scheme)
            .flat_map(|s| &s.regimes)
            .find(|r| r.regime == regime)
    }

    pub fn runs(&self) -> impl Iterator<Item = &RegimeRun> {
        self.schemes.iter().flat_map(|s| &s.regimes)
    }
}

/// `(λ, normalized, absolute)` points of one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaCurve {
    pub scheme: PretrainScheme,
    pub regime: FinetuneRegime,
    pub points: Vec<(f64, f64, f64)>,
    pub selected: f64,
    pub probe_normalized: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinationResult {
    pub n: usize,
    pub task_ids: Vec<String>,
    pub lambda: f64,
    pub normalized: f64,
    pub absolute: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CountSummary {
    pub n: usize,
    pub combinations: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Output of [`run_task_count_sweep`] for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub scheme: PretrainScheme,
    pub regime: FinetuneRegime,
    pub combinations: Vec<CombinationResult>,
    pub per_n: Vec<CountSummary>,
}

impl SweepResult {
    pub fn mean_for(&self, n: usize) -> Option<f64> {
        self.per_n.iter().find(|s| s.n == n).map(|s| s.mean)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XiResult {
    pub scheme: PretrainScheme,
    pub regime: FinetuneRegime,
    pub grid: DisentanglementGrid,
    /// Mean `ξ` over `[0,1]²`, `None` when the grid misses that box.
    pub unit_box: Option<f64>,
    /// Mean `ξ` over `[−1,1]²`.
    pub search_box: Option<f64>,
}

/// Everything [`run_plan`] produced.
#[derive(Clone, Debug)]
pub struct PlanOutcome {
    pub comparison: RegimeComparison,
    pub curves: Vec<LambdaCurve>,
    pub sweeps: Vec<SweepResult>,
    pub disentanglement: Vec<XiResult>,
}

fn rel(out: &Path, path: &Path) -> String {
    path.strip_prefix(out).unwrap_or(path).display().to_string()
}

/// Loads `paths` when every file carries `hash`.
fn load_cached(paths: &[&Path], hash: &str) -> Option<Vec<WeightSnapshot>> {
    paths
        .iter()
        .map(|p| {
            let s = load_tvf(p).ok()?;
            (s.meta_value(INPUTS_HASH) == Some(hash)).then_some(s)
        })
        .collect()
}

fn meta_f64(snapshot: &WeightSnapshot, key: &str) -> Result<f64> {
    snapshot
        .meta_value(key)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::invalid(format!("checkpoint lacks a numeric {key:?} value")))
}

/// A plan bound to its suite and output directory. The `run_*` functions
/// are thin wrappers that build one of these.
pub struct Experiment {
    plan: ExperimentPlan,
    suite: Vec<TaskSpec>,
    manifest: Manifest,
}

impl Experiment {
    pub fn new(plan: ExperimentPlan) -> Result<Self> {
        plan.validate()?;
        let suite = plan.suite()?;
        let manifest = Manifest {
            path: plan.out_dir.join("manifest.csv"),
            rows: Mutex::new(Vec::new()),
        };
        Ok(Experiment { plan, suite, manifest })
    }

    pub fn plan(&self) -> &ExperimentPlan {
        &self.plan
    }

    pub fn suite(&self) -> &[TaskSpec] {
        &self.suite
    }

    fn out(&self, parts: &[&str]) -> PathBuf {
        let mut p = self.plan.out_dir.clone();
        for part in parts {
            p.push(part);
        }
        p
    }

    /// Runs `compute` unless every path already holds a snapshot stamped
    /// with the hash of `desc`.
    fn stage<F>(&self, stage: &str, desc: &str, paths: &[&Path], compute: F) -> Result<Vec<WeightSnapshot>>
    where
        F: FnOnce() -> Result<(Vec<WeightSnapshot>, Vec<(PathBuf, Vec<LossRecord>)>)>,
    {
        let inputs_hash = fnv1a64(desc.as_bytes());
        let hex = format!("{inputs_hash:016x}");
        let (snapshots, status) = match load_cached(paths, &hex) {
            Some(s) => (s, StageStatus::Reused),
            None => {
                let (mut snapshots, logs) = compute().map_err(|e| e.in_stage(stage))?;
                for (s, p) in snapshots.iter_mut().zip(paths) {
                    s.set_meta(INPUTS_HASH, hex.clone())?;
                    save_tvf(s, p)?;
                }
                for (p, log) in logs {
                    write_loss_csv(p, &log)?;
                }
                (snapshots, StageStatus::Computed)
            }
        };
        for p in paths {
            self.manifest.record(ManifestRow {
                stage: stage.to_string(),
                inputs_hash,
                output_path: rel(&self.plan.out_dir, p),
                status,
            })?;
        }
        info!("{stage}: {}", status.name());
        Ok(snapshots)
    }

    /// Records a derived (non-checkpoint) output in the manifest.
    fn record_output(&self, stage: &str, desc: &str, path: &Path) -> Result<()> {
        self.manifest.record(ManifestRow {
            stage: stage.to_string(),
            inputs_hash: fnv1a64(desc.as_bytes()),
            output_path: rel(&self.plan.out_dir, path),
            status: StageStatus::Computed,
        })
    }

    fn rng(&self) -> SeededRng {
        SeededRng::new(self.plan.seed)
    }

    fn pretrained(&self, scheme: PretrainScheme) -> Result<WeightSnapshot> {
        let plan = &self.plan;
        let name = scheme.name();
        let path = self.out(&["checkpoints", &format!("{name}.pretrained.tvf")]);
        let desc = format!(
            "pretrain|{}|{:?}|{:?}|{:?}|k{}|r{}|n{}|seed{}",
            plan.config,
            scheme,
            plan.pretrain,
            plan.synthetic_params(),
            plan.template.num_classes,
            plan.pretrain_rotations,
            plan.pretrain_count,
            plan.seed
        );
        let log_path = self.out(&["logs", &format!("{name}.pretrain.csv")]);
        let mut out = self.stage(&format!("pretrain:{name}"), &desc, &[&path], || {
            let (corpus, labels) = pretraining_data(plan)?;
            let outcome = pretrain(&plan.config, scheme, &plan.pretrain, &corpus, labels, &self.rng())?;
            Ok((vec![outcome.snapshot], vec![(log_path.clone(), outcome.log)]))
        })?;
        Ok(out.remove(0))
    }

    fn select_lr<F>(&self, optim: &OptimConfig, trial: F) -> Result<f64>
    where
        F: FnMut(f64) -> Result<f64>,
    {
        if self.plan.lr_search {
            Ok(lr_line_search(&optim.lr_grid, trial)?.best_lr)
        } else {
            Ok(optim.lr)
        }
    }

    /// Probed head and its eval accuracy over the frozen encoder.
    fn probe(&self, scheme: PretrainScheme, pre: &WeightSnapshot, task: &TaskSpec) -> Result<(WeightSnapshot, f64)> {
        let plan = &self.plan;
        let name = scheme.name();
        let id = &task.task_id;
        let path = self.out(&["checkpoints", &format!("{name}.probe.{id}.tvf")]);
        let desc = format!(
            "probe|{task:?}|pre{}|{:?}|search{}|seed{}",
            pre.encoder_hash(),
            plan.probe,
            plan.lr_search,
            plan.seed
        );
        let log_path = self.out(&["logs", &format!("{name}.probe.{id}.csv")]);
        let mut out = self.stage(&format!("probe:{name}:{id}"), &desc, &[&path], || {
            let rng = self.rng();
            let lr = self.select_lr(&plan.probe, |lr| {
                let val = sample_task(task, Split::Validation, task.eval_count)?;
                let p = linear_probe(&plan.config, pre, task, &plan.probe.with_lr(lr), &rng)?;
                accuracy(&plan.config, pre, &p.head, &val)
            })?;
            let outcome = linear_probe(&plan.config, pre, task, &plan.probe.with_lr(lr), &rng)?;
            let mut head = outcome.head;
            head.set_meta(LR_KEY, lr.to_string())?;
            Ok((vec![head], vec![(log_path.clone(), outcome.log)]))
        })?;
        let head = out.remove(0);
        let eval = sample_task(task, Split::Eval, task.eval_count)?;
        let acc = accuracy(&plan.config, pre, &head, &eval)?;
        Ok((head, acc))
    }

    fn finetune_task(
        &self,
        scheme: PretrainScheme,
        regime: FinetuneRegime,
        pre: &WeightSnapshot,
        probe: &(WeightSnapshot, f64),
        task: &TaskSpec,
    ) -> Result<TaskRun> {
        let plan = &self.plan;
        let id = &task.task_id;
        let stem = format!("{}.{}.{id}", scheme.name(), regime.name());
        let enc_path = self.out(&["checkpoints", &format!("{stem}.encoder.tvf")]);
        let head_path = self.out(&["checkpoints", &format!("{stem}.head.tvf")]);
        let vec_path = self.out(&["checkpoints", &format!("{stem}.vector.tvf")]);
        let head0 = match regime {
            FinetuneRegime::Aligned => probe.0.clone(),
            FinetuneRegime::Full => random_head(&plan.config, task, &self.rng())?,
        };
        let desc = format!(
            "finetune|{regime}|{task:?}|pre{}|head{}|{:?}|search{}|seed{}",
            pre.encoder_hash(),
            head0.hash(),
            plan.finetune,
            plan.lr_search,
            plan.seed
        );
        let log_path = self.out(&["logs", &format!("{stem}.csv")]);
        let out = self.stage(&format!("finetune:{stem}"), &desc, &[&enc_path, &head_path], || {
            let rng = self.rng();
            let lr = self.select_lr(&plan.finetune, |lr| {
                let val = sample_task(task, Split::Validation, task.eval_count)?;
                let f = finetune(&plan.config, pre, &head0, task, regime, &plan.finetune.with_lr(lr), &rng)?;
                accuracy(&plan.config, &f.encoder, &f.head, &val)
            })?;
            let outcome = finetune(&plan.config, pre, &head0, task, regime, &plan.finetune.with_lr(lr), &rng)?;
            let (mut encoder, head) = (outcome.encoder, outcome.head);
            encoder.set_meta(LR_KEY, lr.to_string())?;
            Ok((vec![encoder, head], vec![(log_path.clone(), outcome.log)]))
        })?;
        let (encoder, head) = (out[0].clone(), out[1].clone());
        let vdesc = format!("extract|{}|{}", encoder.hash(), pre.encoder_hash());
        let v = self.stage(&format!("extract:{stem}"), &vdesc, &[&vec_path], || {
            Ok((vec![extract_task_vector(&encoder, pre, false)?.to_snapshot()?], Vec::new()))
        })?;
        Ok(TaskRun {
            task_id: id.clone(),
            probe_head: probe.0.clone(),
            probe_accuracy: probe.1,
            accuracy: meta_f64(&encoder, meta_keys::ACCURACY)?,
            vector: TaskVector::from_snapshot(&v[0])?,
            encoder,
            head,
        })
    }

    fn train_scheme(&self, scheme: PretrainScheme) -> Result<SchemeRun> {
        let plan = &self.plan;
        let pre = self.pretrained(scheme)?;
        let probes = self
            .suite
            .par_iter()
            .map(|t| self.probe(scheme, &pre, t))
            .collect::<Result<Vec<_>>>()?;
        let mut regimes = Vec::new();
        for &regime in &plan.regimes {
            let tasks = self
                .suite
                .par_iter()
                .zip(&probes)
                .map(|(t, p)| self.finetune_task(scheme, regime, &pre, p, t))
                .collect::<Result<Vec<_>>>()?;
            let label = format!("{}-{}", scheme.name(), regime.name());
            let stage = format!("search:{label}");
            let heads: BTreeMap<String, WeightSnapshot> =
                tasks.iter().map(|t| (t.task_id.clone(), t.head.clone())).collect();
            let single: BTreeMap<String, f64> = tasks.iter().map(|t| (t.task_id.clone(), t.accuracy)).collect();
            let vectors: Vec<&TaskVector> = tasks.iter().map(|t| &t.vector).collect();
            let mut report = line_search_lambda(&plan.config, &pre, &vectors, &heads, &self.suite, &single, &plan.grid)
                .map_err(|e| e.in_stage(stage.clone()))?;
            report.regime = Some(regime.name().to_string());
            report.meta.insert("scheme".into(), scheme.name().into());
            let path = self.out(&["reports", &format!("{label}.csv")]);
            report.write_csv(&path)?;
            self.record_output(&stage, &format!("{stage}|{:?}", plan.grid), &path)?;
            regimes.push(RegimeRun {
                scheme,
                regime,
                tasks,
                report,
            });
        }
        Ok(SchemeRun {
            scheme,
            pretrained: pre,
            regimes,
        })
    }

    /// Pre-trains, probes, fine-tunes and line-searches every scheme and
    /// regime of the plan.
    pub fn regime_comparison(&self) -> Result<RegimeComparison> {
        let schemes = self
            .plan
            .schemes
            .iter()
            .map(|&s| self.train_scheme(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(RegimeComparison { schemes })
    }

    /// Writes the `λ` curve of every pair.
    pub fn lambda_sweep(&self, comparison: &RegimeComparison) -> Result<Vec<LambdaCurve>> {
        let mut curves = Vec::new();
        for run in comparison.runs() {
            let curve = LambdaCurve {
                scheme: run.scheme,
                regime: run.regime,
                points: run
                    .report
                    .curve
                    .iter()
                    .map(|p| (p.lambda, p.normalized_avg, p.absolute_avg))
                    .collect(),
                selected: run.report.lambda(),
                probe_normalized: run.probe_normalized(),
            };
            let mut text = String::from("lambda,normalized_acc,absolute_acc\n");
            for (l, n, a) in &curve.points {
                let _ = writeln!(text, "{l},{n},{a}");
            }
            let path = self.out(&["reports", &format!("{}-lambda.csv", run.label())]);
            write_atomic(&path, text.as_bytes())?;
            self.record_output(&format!("lambda:{}", run.label()), &text, &path)?;
            curves.push(curve);
        }
        Ok(curves)
    }

    /// Merges up to `max_combinations` subsets of each size in the sweep
    /// range and records their normalized accuracy. Size-1 subsets always
    /// use `λ = 1`, which reproduces the fine-tuned model.
    pub fn task_count_sweep(&self, comparison: &RegimeComparison) -> Result<Vec<SweepResult>> {
        let plan = &self.plan;
        let sweep = &plan.sweep;
        let mut results = Vec::new();
        for run in comparison.runs() {
            let pre = &comparison
                .schemes
                .iter()
                .find(|s| s.scheme == run.scheme)
                .expect("run belongs to a scheme")
                .pretrained;
            let heads = run.heads();
            let single = run.single();
            let n_max = sweep.n_max.min(self.suite.len());
            let jobs: Vec<(usize, Vec<usize>)> = (sweep.n_min..=n_max)
                .flat_map(|n| {
                    sample_combinations(self.suite.len(), n, sweep.max_combinations, sweep.seed)
                        .into_iter()
                        .map(move |c| (n, c))
                })
                .collect();
            let combinations = jobs
                .par_iter()
                .map(|(n, combo)| {
                    let tasks: Vec<TaskSpec> = combo.iter().map(|&i| self.suite[i].clone()).collect();
                    let vectors: Vec<&TaskVector> = combo.iter().map(|&i| &run.tasks[i].vector).collect();
                    // One task has nothing to merge: its combination is the
                    // fine-tuned model itself.
                    let policy = if combo.len() == 1 { LambdaPolicy::Fixed(Some(1.0)) } else { sweep.policy };
                    let (lambda, normalized, absolute) = match policy {
                        LambdaPolicy::Search => {
                            let r = line_search_lambda(&plan.config, pre, &vectors, &heads, &tasks, &single, &plan.grid)?;
                            (r.lambda(), r.normalized_avg(), r.absolute_avg())
                        }
                        LambdaPolicy::Fixed(l) => {
                            let lambda = l.unwrap_or_else(|| run.report.lambda());
                            let weighted: Vec<(&TaskVector, f64)> = vectors.iter().map(|v| (*v, lambda)).collect();
                            let merged = apply_task_vectors(pre, &weighted)?;
                            let accs = evaluate_merged(&plan.config, &merged, &heads, &tasks)?;
                            let m = accs.len() as f64;
                            let abs = accs.iter().map(|(_, a)| a).sum::<f64>() / m;
                            let norm = accs.iter().map(|(id, a)| a / single[id]).sum::<f64>() / m;
                            (lambda, norm, abs)
                        }
                    };
                    Ok(CombinationResult {
                        n: *n,
                        task_ids: tasks.iter().map(|t| t.task_id.clone()).collect(),
                        lambda,
                        normalized,
                        absolute,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_stage(format!("sweep:{}", run.label())))?;
            let per_n = (sweep.n_min..=n_max)
                .map(|n| {
                    let vals: Vec<f64> = combinations.iter().filter(|c| c.n == n).map(|c| c.normalized).collect();
                    CountSummary {
                        n,
                        combinations: vals.len(),
                        mean: vals.iter().sum::<f64>() / vals.len() as f64,
                        min: vals.iter().copied().fold(f64::INFINITY, f64::min),
                        max: vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    }
                })
                .collect();
            let result = SweepResult {
                scheme: run.scheme,
                regime: run.regime,
                combinations,
                per_n,
            };
            self.write_sweep(&run.label(), &result)?;
            results.push(result);
        }
        Ok(results)
    }

    fn write_sweep(&self, label: &str, result: &SweepResult) -> Result<()> {
        let mut rows = String::from("n,tasks,lambda,normalized_acc,absolute_acc\n");
        for c in &result.combinations {
            let _ = writeln!(rows, "{},{},{},{},{}", c.n, c.task_ids.join("+"), c.lambda, c.normalized, c.absolute);
        }
        let mut summary = String::from("n,combinations,mean,min,max\n");
        for s in &result.per_n {
            let _ = writeln!(summary, "{},{},{},{},{}", s.n, s.combinations, s.mean, s.min, s.max);
        }
        let stage = format!("sweep:{label}");
        let p1 = self.out(&["reports", &format!("{label}-tasks.csv")]);
        let p2 = self.out(&["reports", &format!("{label}-tasks-summary.csv")]);
        write_atomic(&p1, rows.as_bytes())?;
        write_atomic(&p2, summary.as_bytes())?;
        self.record_output(&stage, &rows, &p1)?;
        self.record_output(&stage, &summary, &p2)
    }

    /// `ξ` heatmap of the plan's task pair for every scheme and regime.
    pub fn disentanglement(&self, comparison: &RegimeComparison) -> Result<Vec<XiResult>> {
        let (a, b) = self.plan.xi_pair_ids(&self.suite)?;
        let idx = |id: &str| self.suite.iter().position(|t| t.task_id == id).expect("validated pair");
        let (i, j) = (idx(&a), idx(&b));
        let mut results = Vec::new();
        for scheme in &comparison.schemes {
            for run in &scheme.regimes {
                let stage = format!("xi:{}", run.label());
                let grid = disentangle::grid(
                    &self.plan.config,
                    &scheme.pretrained,
                    [&run.tasks[i].vector, &run.tasks[j].vector],
                    [&run.tasks[i].head, &run.tasks[j].head],
                    [&self.suite[i], &self.suite[j]],
                    &self.plan.xi,
                )
                .map_err(|e| e.in_stage(stage.clone()))?;
                let stem = format!("{}-{a}-{b}", run.label());
                let csv = self.out(&["heatmaps", &format!("{stem}.csv")]);
                let pgm = self.out(&["heatmaps", &format!("{stem}.pgm")]);
                let boxp = self.out(&["heatmaps", &format!("{stem}-box.csv")]);
                render_heatmap(&grid, &csv, &pgm, Some(&boxp))?;
                let desc = format!("{stage}|{:?}|{}|{}", self.plan.xi, run.tasks[i].vector.base_hash(), stem);
                for p in [&csv, &pgm, &boxp] {
                    self.record_output(&stage, &desc, p)?;
                }
                results.push(XiResult {
                    scheme: run.scheme,
                    regime: run.regime,
                    unit_box: region_mean(&grid, (0.0, 1.0), (0.0, 1.0)).ok(),
                    search_box: region_mean(&grid, (-1.0, 1.0), (-1.0, 1.0)).ok(),
                    grid,
                });
            }
        }
        Ok(results)
    }

    /// Writes `reports/summary.csv`, one row per scheme and regime.
    pub fn write_summary(&self, outcome: &PlanOutcome) -> Result<PathBuf> {
        let mut text = String::from("scheme,regime,lambda,normalized_acc,absolute_acc,probe_normalized,xi_unit_box,xi_search_box\n");
        let opt = |v: Option<f64>| v.map(format_g6).unwrap_or_default();
        for run in outcome.comparison.runs() {
            let xi = outcome
                .disentanglement
                .iter()
                .find(|x| x.scheme == run.scheme && x.regime == run.regime);
            let _ = writeln!(
                text,
                "{},{},{},{},{},{},{},{}",
                run.scheme.name(),
                run.regime.name(),
                run.report.lambda(),
                run.report.normalized_avg(),
                run.report.absolute_avg(),
                run.probe_normalized(),
                opt(xi.and_then(|x| x.unit_box)),
                opt(xi.and_then(|x| x.search_box)),
            );
        }
        let path = self.out(&["reports", "summary.csv"]);
        write_atomic(&path, text.as_bytes())?;
        self.record_output("summary", &text, &path)?;
        Ok(path)
    }

    pub fn run_all(&self) -> Result<PlanOutcome> {
        let comparison = self.regime_comparison()?;
        let curves = self.lambda_sweep(&comparison)?;
        let (sweeps, disentanglement) = if self.suite.len() >= 2 {
            (self.task_count_sweep(&comparison)?, self.disentanglement(&comparison)?)
        } else {
            (Vec::new(), Vec::new())
        };
        let outcome = PlanOutcome {
            comparison,
            curves,
            sweeps,
            disentanglement,
        };
        self.write_summary(&outcome)?;
        Ok(outcome)
    }
}

/// The plan's pre-training corpus and its label count: rotated copies of
/// the synthetic template sized to the model input.
pub fn pretraining_data(plan: &ExperimentPlan) -> Result<(LabeledBatch, usize)> {
    let mut params = plan.synthetic_params().clone();
    params.input_dim = plan.config.input_dim;
    pretraining_corpus(
        &params,
        plan.template.num_classes,
        plan.pretrain_rotations,
        plan.pretrain_count,
        plan.seed,
    )
}

/// Up to `max` size-`n` subsets of `0..t`, each sorted. All subsets are
/// enumerated in lexicographic order; when there are more than `max` they
/// are shuffled with a seeded stream and the first `max` kept, re-sorted.
pub fn sample_combinations(t: usize, n: usize, max: usize, seed: u64) -> Vec<Vec<usize>> {
    fn rec(start: usize, t: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n {
            out.push(cur.clone());
            return;
        }
        for i in start..t {
            cur.push(i);
            rec(i + 1, t, n, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    if n <= t {
        rec(0, t, n, &mut Vec::new(), &mut all);
    }
    if all.len() > max {
        let mut rng = SeededRng::new(seed).split(&format!("n{n}"));
        rng.shuffle(&mut all);
        all.truncate(max);
        all.sort();
    }
    all
}

pub fn run_regime_comparison(plan: &ExperimentPlan) -> Result<RegimeComparison> {
    Experiment::new(plan.clone())?.regime_comparison()
}

pub fn run_lambda_sweep(plan: &ExperimentPlan) -> Result<Vec<LambdaCurve>> {
    let exp = Experiment::new(plan.clone())?;
    let comparison = exp.regime_comparison()?;
    exp.lambda_sweep(&comparison)
}

pub fn run_task_count_sweep(plan: &ExperimentPlan) -> Result<Vec<SweepResult>> {
    if plan.suite()?.len() < 2 {
        return Err(Error::invalid("a task-count sweep needs at least two tasks"));
    }
    let exp = Experiment::new(plan.clone())?;
    let comparison = exp.regime_comparison()?;
    exp.task_count_sweep(&comparison)
}

pub fn run_disentanglement(plan: &ExperimentPlan) -> Result<Vec<XiResult>> {
    let exp = Experiment::new(plan.clone())?;
    let comparison = exp.regime_comparison()?;
    exp.disentanglement(&comparison)
}

/// Runs every study of the plan and writes the summary.
pub fn run_plan(plan: &ExperimentPlan) -> Result<PlanOutcome> {
    Experiment::new(plan.clone())?.run_all()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_plan(out: &Path, tasks: usize) -> ExperimentPlan {
        let text = format!(
            "out = {}\ntasks = {tasks}\ninput_dim = 8\nnum_classes = 3\nhidden_dims = 16\nfeature_dim = 8\n\
             train_count = 128\neval_count = 64\npretrain_iterations = 40\npretrain_count = 256\n\
             iterations = 40\nwarmup = 4\ngrid = 0:1:5\nsweep_n = 1:2\nxi_range = -1:1\nxi_resolution = 3\nxi_samples = 32\n",
            out.display()
        );
        ExperimentPlan::parse(&text, Path::new("tiny")).unwrap()
    }

    #[test]
    fn combinations_are_capped_and_seeded() {
        assert_eq!(sample_combinations(4, 2, 10, 0).len(), 6);
        assert_eq!(sample_combinations(4, 2, 10, 0)[0], vec![0, 1]);
        let a = sample_combinations(8, 3, 10, 5);
        assert_eq!(a.len(), 10);
        assert_eq!(a, sample_combinations(8, 3, 10, 5));
        assert_ne!(a, sample_combinations(8, 3, 10, 6));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|c| c.windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn single_task_plan_reaches_one_at_lambda_one() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path(), 1);
        plan.grid = crate::arith::CoefficientGrid::new(vec![1.0]).unwrap();
        let cmp = run_regime_comparison(&plan).unwrap();
        for run in cmp.runs() {
            assert_eq!(run.report.lambda(), 1.0);
            assert_eq!(run.report.normalized_avg(), 1.0);
            assert_eq!(run.report.selected.tasks.len(), 1);
        }
    }

    #[test]
    fn rerun_reuses_checkpoints_and_reproduces_reports() {
        let dir = tempfile::tempdir().unwrap();
        let plan = tiny_plan(dir.path(), 3);
        let first = run_plan(&plan).unwrap();
        let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
        let report = read("reports/supervised-aligned.csv");
        let heat = read("heatmaps/supervised-aligned-task0-task1.pgm");
        let summary = read("reports/summary.csv");
        let second = run_plan(&plan).unwrap();
        assert_eq!(report, read("reports/supervised-aligned.csv"));
        assert_eq!(heat, read("heatmaps/supervised-aligned-task0-task1.pgm"));
        assert_eq!(summary, read("reports/summary.csv"));
        let manifest = String::from_utf8(read("manifest.csv")).unwrap();
        assert!(manifest.lines().filter(|l| l.contains(".tvf")).all(|l| l.ends_with(",reused")), "{manifest}");

        let run = first.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Aligned).unwrap();
        assert_eq!(run.report.selected.tasks.len(), 3);
        assert_eq!(first.curves[0].points.len(), 5);
        // λ = 0 leaves θ_pre with the probed heads.
        assert_eq!(first.curves[0].points[0].1, run.probe_normalized());
        let sweep = &second.sweeps[0];
        assert_eq!(sweep.per_n.len(), 2);
        assert_eq!(sweep.per_n[1].combinations, 3);
        assert_eq!(first.disentanglement[0].grid.values.len(), 3);
    }

    #[test]
    fn changed_settings_recompute() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = tiny_plan(dir.path(), 2);
        plan.regimes = vec![FinetuneRegime::Aligned];
        run_regime_comparison(&plan).unwrap();
        plan.finetune.lr *= 2.0;
        run_regime_comparison(&plan).unwrap();
        let manifest = std::fs::read_to_string(dir.path().join("manifest.csv")).unwrap();
        let status = |needle: &str| manifest.lines().find(|l| l.contains(needle)).unwrap().rsplit(',').next().unwrap().to_string();
        assert_eq!(status("supervised.pretrained.tvf"), "reused");
        assert_eq!(status("supervised.aligned.task0.encoder.tvf"), "computed");
    }
}
