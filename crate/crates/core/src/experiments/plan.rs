//! `key = value` experiment plans.

use std::fs;
use std::path::{Path, PathBuf};

use crate::arith::CoefficientGrid;
use crate::disentangle::GridSpec;
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::taskgen::{
    load_dataset_file, make_task_suite, SuiteTemplate, SyntheticParams, TaskSource, TaskSpec, PRETRAINING_ROTATIONS,
};
use crate::train::{FinetuneRegime, OptimConfig, PretrainScheme};

/// How the task-count sweep picks `λ` for each combination of two or more
/// tasks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaPolicy {
    /// A fresh uniform line search per combination.
    Search,
    /// One coefficient for every combination; `None` reuses the `λ*` of the
    /// full-suite line search.
    Fixed(Option<f64>),
}

/// Task-count sweep settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSettings {
    pub n_min: usize,
    pub n_max: usize,
    pub max_combinations: usize,
    pub seed: u64,
    pub policy: LambdaPolicy,
}

/// Everything one end-to-end run needs. See [`ExperimentPlan::apply`] for
/// the plan-file keys.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task_count: usize,
    pub template: SuiteTemplate,
    /// When non-empty, tasks come from these dataset files instead of the
    /// synthetic template.
    pub task_files: Vec<PathBuf>,
    pub config: ModelConfig,
    pub schemes: Vec<PretrainScheme>,
    pub regimes: Vec<FinetuneRegime>,
    pub grid: CoefficientGrid,
    pub pretrain: OptimConfig,
    pub pretrain_rotations: usize,
    pub pretrain_count: usize,
    pub probe: OptimConfig,
    pub finetune: OptimConfig,
    pub lr_search: bool,
    pub sweep: SweepSettings,
    pub xi: GridSpec,
    /// Task ids of the disentanglement pair; defaults to the first two tasks.
    pub xi_pair: Option<(String, String)>,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            task_count: 8,
            template: SuiteTemplate::default(),
            task_files: Vec::new(),
            config: ModelConfig::default(),
            schemes: vec![PretrainScheme::Supervised],
            regimes: vec![FinetuneRegime::Aligned, FinetuneRegime::Full],
            grid: CoefficientGrid::default(),
            pretrain: OptimConfig::default(),
            pretrain_rotations: PRETRAINING_ROTATIONS,
            pretrain_count: 4096,
            probe: OptimConfig::probe_default(),
            finetune: OptimConfig::finetune_default(),
            lr_search: false,
            sweep: SweepSettings {
                n_min: 1,
                n_max: 4,
                max_combinations: 10,
                seed: 0,
                policy: LambdaPolicy::Search,
            },
            xi: GridSpec::default(),
            xi_pair: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::invalid(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list<T>(value: &str, item: impl Fn(&str) -> Result<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(item)
        .collect()
}

fn parse_range(key: &str, value: &str) -> Result<(String, String)> {
    value
        .split_once(':')
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .ok_or_else(|| Error::invalid(format!("{key}: expected lo:hi, got {value:?}")))
}

impl ExperimentPlan {
    /// Reads a plan file on top of the defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut plan = ExperimentPlan::default();
        plan.merge_text(&text, path)?;
        Ok(plan)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut plan = ExperimentPlan::default();
        plan.merge_text(text, origin)?;
        Ok(plan)
    }

    /// Applies every `key = value` line of `text`. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn merge_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err("expected key = value".into()))?;
            self.apply(key.trim(), value.trim()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(())
    }

    /// Sets one key.
    ///
    /// | key | meaning |
    /// |---|---|
    /// | `seed` | master seed for initialization, training and task sampling |
    /// | `out` | output directory |
    /// | `tasks` | number of synthetic tasks |
    /// | `task_files` | comma-separated dataset files, one task each (overrides the synthetic suite) |
    /// | `num_classes`, `input_dim`, `clusters_per_class`, `separation`, `noise` | synthetic template |
    /// | `train_count`, `eval_count` | samples per task and split |
    /// | `arch` | `mlp` or `attn` |
    /// | `hidden_dims` | comma-separated mlp widths |
    /// | `feature_dim` | encoder output width |
    /// | `token_count`, `token_dim`, `block_count` | attn shape |
    /// | `schemes` | comma-separated pre-training schemes |
    /// | `regimes` | comma-separated fine-tuning regimes |
    /// | `grid` | λ grid, `a,b,c` or `lo:hi:count` |
    /// | `pretrain_iterations`, `pretrain_lr`, `pretrain_rotations`, `pretrain_count` | pre-training |
    /// | `probe_lr`, `finetune_lr` | peak learning rates |
    /// | `iterations`, `batch_size`, `warmup`, `weight_decay` | shared by probing and fine-tuning |
    /// | `lr_search` | select learning rates on the validation split |
    /// | `sweep_n` | task-count range `lo:hi` |
    /// | `sweep_max_combinations`, `sweep_seed` | combination sampling |
    /// | `sweep_policy` | `search` or `fixed` |
    /// | `sweep_fixed_lambda` | coefficient for the fixed policy |
    /// | `xi_range`, `xi_resolution`, `xi_samples`, `xi_seed` | disentanglement grid |
    /// | `xi_pair` | two task ids |
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.template.params;
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "out" => self.out_dir = PathBuf::from(value),
            "tasks" => self.task_count = parse_num(key, value)?,
            "task_files" => self.task_files = parse_list(value, |s| Ok(PathBuf::from(s)))?,
            "num_classes" => self.template.num_classes = parse_num(key, value)?,
            "input_dim" => {
                p.input_dim = parse_num(key, value)?;
                self.config.input_dim = p.input_dim;
            }
            "clusters_per_class" => p.clusters_per_class = parse_num(key, value)?,
            "separation" => p.cluster_separation = parse_num(key, value)?,
            "noise" => p.noise_std = parse_num(key, value)?,
            "train_count" => self.template.train_count = parse_num(key, value)?,
            "eval_count" => self.template.eval_count = parse_num(key, value)?,
            "arch" => {
                self.config = match value {
                    "mlp" => ModelConfig::mlp(self.config.input_dim, vec![64, 64], self.config.feature_dim),
                    "attn" => {
                        let token_count = 4;
                        ModelConfig::attn(token_count, self.config.input_dim / token_count, 1, self.config.feature_dim)
                    }
                    _ => return Err(Error::invalid(format!("arch: unknown architecture {value:?}"))),
                }
            }
            "hidden_dims" => {
                let dims = parse_list(value, |s| parse_num(key, s))?;
                self.config = ModelConfig::mlp(self.config.input_dim, dims, self.config.feature_dim);
            }
            "feature_dim" => self.config.feature_dim = parse_num(key, value)?,
            "token_count" | "token_dim" | "block_count" => {
                let v: usize = parse_num(key, value)?;
                let (mut t, mut d, mut b) = match self.config.arch {
                    crate::nn::Architecture::Attn {
                        token_count,
                        token_dim,
                        block_count,
                    } => (token_count, token_dim, block_count),
                    _ => (4, self.config.input_dim / 4, 1),
                };
                match key {
                    "token_count" => t = v,
                    "token_dim" => d = v,
                    _ => b = v,
                }
                self.config = ModelConfig::attn(t, d, b, self.config.feature_dim);
                self.config.input_dim = t * d;
            }
            "schemes" => self.schemes = parse_list(value, str::parse)?,
            "regimes" => self.regimes = parse_list(value, str::parse)?,
            "grid" => self.grid = CoefficientGrid::parse(value)?,
            "pretrain_iterations" => {
                self.pretrain.iterations = parse_num(key, value)?;
                self.pretrain.warmup_steps = self.pretrain.iterations / 10;
            }
            "pretrain_lr" => self.pretrain.lr = parse_num(key, value)?,
            "pretrain_rotations" => self.pretrain_rotations = parse_num(key, value)?,
            "pretrain_count" => self.pretrain_count = parse_num(key, value)?,
            "probe_lr" => self.probe.lr = parse_num(key, value)?,
            "finetune_lr" => self.finetune.lr = parse_num(key, value)?,
            "iterations" => {
                let v = parse_num(key, value)?;
                self.probe.iterations = v;
                self.finetune.iterations = v;
            }
            "batch_size" => {
                let v = parse_num(key, value)?;
                self.probe.batch_size = v;
                self.finetune.batch_size = v;
            }
            "warmup" => {
                let v = parse_num(key, value)?;
                self.probe.warmup_steps = v;
                self.finetune.warmup_steps = v;
            }
            "weight_decay" => {
                let v = parse_num(key, value)?;
                self.probe.weight_decay = v;
                self.finetune.weight_decay = v;
                self.pretrain.weight_decay = v;
            }
            "lr_search" => self.lr_search = parse_bool(key, value)?,
            "sweep_n" => {
                let (a, b) = parse_range(key, value)?;
                self.sweep.n_min = parse_num(key, &a)?;
                self.sweep.n_max = parse_num(key, &b)?;
            }
            "sweep_max_combinations" => self.sweep.max_combinations = parse_num(key, value)?,
            "sweep_seed" => self.sweep.seed = parse_num(key, value)?,
            "sweep_policy" => {
                self.sweep.policy = match value {
                    "search" => LambdaPolicy::Search,
                    "fixed" => match self.sweep.policy {
                        LambdaPolicy::Fixed(l) => LambdaPolicy::Fixed(l),
                        LambdaPolicy::Search => LambdaPolicy::Fixed(None),
                    },
                    _ => return Err(Error::invalid(format!("sweep_policy: expected search or fixed, got {value:?}"))),
                }
            }
            "sweep_fixed_lambda" => self.sweep.policy = LambdaPolicy::Fixed(Some(parse_num(key, value)?)),
            "xi_range" => {
                let (a, b) = parse_range(key, value)?;
                self.xi.lambda_min = parse_num(key, &a)?;
                self.xi.lambda_max = parse_num(key, &b)?;
            }
            "xi_resolution" => self.xi.resolution = parse_num(key, value)?,
            "xi_samples" => self.xi.samples_per_task = parse_num(key, value)?,
            "xi_seed" => self.xi.seed = parse_num(key, value)?,
            "xi_pair" => {
                let ids = parse_list(value, |s| Ok(s.to_string()))?;
                match ids.as_slice() {
                    [a, b] => self.xi_pair = Some((a.clone(), b.clone())),
                    _ => return Err(Error::invalid("xi_pair: expected two task ids")),
                }
            }
            _ => return Err(Error::invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// The task suite: dataset files when given, otherwise the synthetic
    /// template.
    pub fn suite(&self) -> Result<Vec<TaskSpec>> {
        if self.task_files.is_empty() {
            return make_task_suite(self.task_count, self.seed, &self.template);
        }
        self.task_files
            .iter()
            .map(|path| {
                let data = load_dataset_file(path)?;
                let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("task");
                Ok(TaskSpec {
                    task_id: stem.to_string(),
                    source: TaskSource::File(path.clone()),
                    num_classes: data.num_classes,
                    train_count: data.train.len(),
                    eval_count: data.eval.len(),
                    seed: self.seed,
                })
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.schemes.is_empty() || self.regimes.is_empty() {
            return Err(Error::invalid("a plan needs at least one scheme and one regime"));
        }
        for s in &self.schemes {
            s.validate()?;
        }
        for o in [&self.pretrain, &self.probe, &self.finetune] {
            o.validate()?;
        }
        let suite = self.suite()?;
        let t = suite.len();
        if suite.iter().any(|s| s.input_dim().ok() != Some(self.config.input_dim)) {
            return Err(Error::invalid("task input width differs from the model input_dim"));
        }
        let sw = &self.sweep;
        if sw.n_min < 1 || sw.n_min > sw.n_max || sw.n_min > t {
            return Err(Error::invalid(format!(
                "sweep_n {}:{} must start within 1..={t}",
                sw.n_min, sw.n_max
            )));
        }
        if sw.max_combinations == 0 {
            return Err(Error::invalid("sweep_max_combinations must be at least 1"));
        }
        self.xi.validate()?;
        if t >= 2 || self.xi_pair.is_some() {
            let (a, b) = self.xi_pair_ids(&suite)?;
            if a == b {
                return Err(Error::invalid("xi_pair needs two distinct tasks"));
            }
        }
        Ok(())
    }

    pub(crate) fn xi_pair_ids(&self, suite: &[TaskSpec]) -> Result<(String, String)> {
        let pair = match &self.xi_pair {
            Some(p) => p.clone(),
            None if suite.len() >= 2 => (suite[0].task_id.clone(), suite[1].task_id.clone()),
            None => return Err(Error::invalid("disentanglement needs at least two tasks")),
        };
        for id in [&pair.0, &pair.1] {
            if !suite.iter().any(|t| &t.task_id == id) {
                return Err(Error::invalid(format!("xi_pair: unknown task {id:?}")));
            }
        }
        Ok(pair)
    }

    pub fn synthetic_params(&self) -> &SyntheticParams {
        &self.template.params
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let text = "\
# comment
seed = 3
tasks = 4
num_classes = 6
schemes = supervised, random-init
regimes = aligned
grid = 0:1:11
hidden_dims = 16
iterations = 100
warmup = 10
sweep_n = 1:3
sweep_policy = fixed
xi_range = -1:1
xi_resolution = 5
xi_pair = task1,task2
";
        let plan = ExperimentPlan::parse(text, Path::new("plan.txt")).unwrap();
        assert_eq!(plan.seed, 3);
        assert_eq!(plan.template.num_classes, 6);
        assert_eq!(plan.schemes, vec![PretrainScheme::Supervised, PretrainScheme::RandomInit]);
        assert_eq!(plan.regimes, vec![FinetuneRegime::Aligned]);
        assert_eq!(plan.grid.values().len(), 11);
        assert_eq!(plan.config, ModelConfig::mlp(32, vec![16], 32));
        assert_eq!(plan.finetune.iterations, 100);
        assert_eq!(plan.sweep.policy, LambdaPolicy::Fixed(None));
        assert_eq!(plan.xi.resolution, 5);
        plan.validate().unwrap();
        assert_eq!(plan.suite().unwrap().len(), 4);
    }

    #[test]
    fn reports_bad_lines() {
        let err = ExperimentPlan::parse("seed = 1\nbogus = 2\n", Path::new("p")).unwrap_err();
        assert!(err.to_string().contains("p:2"), "{err}");
        assert!(ExperimentPlan::parse("no equals sign", Path::new("p")).is_err());
        let plan = ExperimentPlan::parse("tasks = 2\nsweep_n = 3:4", Path::new("p")).unwrap();
        assert!(plan.validate().is_err());
    }
}
