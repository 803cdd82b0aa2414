//! Golden fixtures: tiny files whose bytes are frozen in `fixtures/`.
//!
//! `fixtures/MANIFEST` holds one tab-separated line per fixture:
//!
//! ```text
//! path<TAB>fnv1a64 hex<TAB>command<TAB>description
//! ```
//!
//! Every fixture is produced by [`generate`], so the recorded command
//! (`taskarith make-fixture <name> --out <path>`) regenerates it exactly.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::arith::{apply_task_vectors, build_zeroshot_head, zeroshot_head_snapshot, CurvePoint, EvaluationReport, TaskAccuracy, TaskVector};
use crate::checkpoint::{fnv1a64, write_atomic, WeightSnapshot};
use crate::disentangle::{grid_on, grid_to_csv, grid_to_pgm, DisentanglementGrid, GridSpec, PairContext};
use crate::error::{Error, Result};
use crate::nn::ModelConfig;
use crate::taskgen::{format_dataset, LabeledBatch};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "MANIFEST";

/// One entry of the manifest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoldenFixture {
    pub path: String,
    pub hash: u64,
    pub command: String,
    pub description: String,
}

/// Names accepted by [`generate`], with their file names and descriptions.
pub const FIXTURES: [(&str, &str, &str); 7] = [
    ("two-tensor", "two-tensor.tvf", "two tensors (encoder.w 2x2, head.b 2) with role=pretrained"),
    ("tiny-dataset", "tiny-dataset.txt", "4-dimensional, 3-class dataset with 4 train and 2 eval rows"),
    ("zeroshot-head", "zeroshot-head.tvf", "zero-shot head from 3 classes of 2 template embeddings each"),
    ("scalar-merge", "scalar-merge.tvf", "scalar encoder merged with both scalar task vectors at 0.5"),
    ("scalar-xi-csv", "scalar-xi.csv", "disentanglement grid of the scalar pair over [-1,1] at resolution 5"),
    ("scalar-xi-pgm", "scalar-xi.pgm", "PGM rendering of the same grid"),
    ("tiny-report", "tiny-report.csv", "evaluation report with two coefficients and two tasks"),
];

/// Two-tensor snapshot used by the format documentation.
pub fn two_tensor() -> WeightSnapshot {
    let mut s = WeightSnapshot::new();
    s.insert("encoder.w", Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).expect("shape"))
        .expect("new key");
    s.insert("head.b", Tensor::from_slice(&[0.5, -0.5])).expect("new key");
    s.set_meta("role", "pretrained").expect("valid meta");
    s
}

/// A one-weight, one-bias encoder `f = w·x + b` with two task vectors, two
/// sign heads and four samples per task. Small enough to enumerate every
/// prediction by hand.
pub struct ScalarPair {
    pub config: ModelConfig,
    pub pre: WeightSnapshot,
    pub vectors: [TaskVector; 2],
    /// Task 1 predicts class 0 iff `f ≥ 0`, task 2 iff `f ≤ 0` (ties go to
    /// the lower class index).
    pub heads: [WeightSnapshot; 2],
    pub samples: [Tensor; 2],
}

impl ScalarPair {
    pub fn new() -> Self {
        let mut pre = WeightSnapshot::new();
        pre.insert("encoder.layer0.weight", Tensor::new(vec![1, 1], vec![1.0]).expect("shape"))
            .expect("new key");
        pre.insert("encoder.layer0.bias", Tensor::from_slice(&[0.0])).expect("new key");
        let vector = |dw: f32, db: f32, id: &str| {
            let entries = BTreeMap::from([
                ("encoder.layer0.weight".to_string(), Tensor::new(vec![1, 1], vec![dw]).expect("shape")),
                ("encoder.layer0.bias".to_string(), Tensor::from_slice(&[db])),
            ]);
            TaskVector::new(entries, pre.encoder_hash(), id).expect("matching layout")
        };
        let head = |sign: f32| {
            let mut s = WeightSnapshot::new();
            s.insert("head.weight", Tensor::new(vec![2, 1], vec![sign, -sign]).expect("shape"))
                .expect("new key");
            s.insert("head.bias", Tensor::zeros(&[2])).expect("new key");
            s
        };
        ScalarPair {
            config: ModelConfig::mlp(1, vec![], 1),
            vectors: [vector(-1.0, 0.5, "a"), vector(0.5, -1.0, "b")],
            pre,
            heads: [head(1.0), head(-1.0)],
            samples: [
                Tensor::new(vec![4, 1], vec![-2.0, -0.5, 0.5, 2.0]).expect("shape"),
                Tensor::new(vec![4, 1], vec![-1.0, 0.25, 0.8, 3.0]).expect("shape"),
            ],
        }
    }

    pub fn context(&self) -> PairContext<'_> {
        PairContext {
            config: &self.config,
            pre: &self.pre,
            vectors: [&self.vectors[0], &self.vectors[1]],
            heads: [&self.heads[0], &self.heads[1]],
            samples: [&self.samples[0], &self.samples[1]],
        }
    }

    pub fn grid(&self, spec: &GridSpec) -> Result<DisentanglementGrid> {
        spec.validate()?;
        let coords = spec.coords();
        Ok(DisentanglementGrid {
            spec: spec.clone(),
            task_ids: ["a".into(), "b".into()],
            values: grid_on(&self.context(), &coords)?,
            coords,
        })
    }
}

impl Default for ScalarPair {
    fn default() -> Self {
        Self::new()
    }
}

fn scalar_grid() -> Result<DisentanglementGrid> {
    ScalarPair::new().grid(&GridSpec {
        lambda_min: -1.0,
        lambda_max: 1.0,
        resolution: 5,
        samples_per_task: 4,
        seed: 0,
    })
}

fn tiny_report() -> Result<EvaluationReport> {
    let point = |lambda: f64, merged: [f64; 2]| {
        let tasks = ["task0", "task1"]
            .iter()
            .zip(merged)
            .zip([0.9, 0.5])
            .map(|((id, merged), single)| TaskAccuracy {
                task_id: id.to_string(),
                single,
                merged,
            })
            .collect();
        CurvePoint::new(lambda, tasks)
    };
    let curve = vec![point(0.0, [0.45, 0.25])?, point(0.5, [0.81, 0.3])?];
    Ok(EvaluationReport {
        selected: curve[1].clone(),
        curve,
        regime: Some("aligned".into()),
        meta: BTreeMap::new(),
    })
}

/// Bytes of the named fixture.
pub fn generate(name: &str) -> Result<Vec<u8>> {
    match name {
        "two-tensor" => Ok(two_tensor().to_tvf_bytes()),
        "tiny-dataset" => {
            let batch = |rows: Vec<f32>, labels: Vec<usize>| {
                LabeledBatch::new(Tensor::new(vec![labels.len(), 4], rows)?, labels)
            };
            let train = batch(
                vec![
                    0.5, -1.0, 2.0, 0.0, //
                    1.5, 0.25, -0.75, 3.0, //
                    -2.0, 1.0, 0.5, -0.5, //
                    0.0, 0.0, 1.0, 1.0,
                ],
                vec![0, 1, 2, 1],
            )?;
            let eval = batch(vec![1.0, -1.0, 1.0, -1.0, 0.125, 0.5, -0.25, 2.5], vec![2, 0])?;
            Ok(format_dataset(3, &train, &eval)?.into_bytes())
        }
        "zeroshot-head" => {
            let emb = vec![
                vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]],
                vec![vec![0.0, 0.0, 2.0], vec![0.0, 2.0, 0.0]],
                vec![vec![3.0, 4.0, 0.0], vec![3.0, 4.0, 0.0]],
            ];
            let w = build_zeroshot_head(&emb, 3, true)?;
            Ok(zeroshot_head_snapshot(&w)?.to_tvf_bytes())
        }
        "scalar-merge" => {
            let pair = ScalarPair::new();
            let merged = apply_task_vectors(&pair.pre, &[(&pair.vectors[0], 0.5), (&pair.vectors[1], 0.5)])?;
            Ok(merged.to_tvf_bytes())
        }
        "scalar-xi-csv" => Ok(grid_to_csv(&scalar_grid()?).into_bytes()),
        "scalar-xi-pgm" => Ok(grid_to_pgm(&scalar_grid()?)),
        "tiny-report" => Ok(tiny_report()?.to_csv().into_bytes()),
        _ => Err(Error::invalid(format!("unknown fixture {name:?}"))),
    }
}

pub fn command_for(name: &str, file: &str) -> String {
    format!("taskarith make-fixture {name} --out fixtures/{file}")
}

/// Writes every fixture and the manifest into `dir`.
pub fn write_all(dir: impl AsRef<Path>) -> Result<Vec<GoldenFixture>> {
    let dir = dir.as_ref();
    let mut entries = Vec::new();
    for (name, file, description) in FIXTURES {
        let bytes = generate(name)?;
        write_atomic(&dir.join(file), &bytes)?;
        entries.push(GoldenFixture {
            path: file.to_string(),
            hash: fnv1a64(&bytes),
            command: command_for(name, file),
            description: description.to_string(),
        });
    }
    write_atomic(&dir.join(MANIFEST), format_manifest(&entries).as_bytes())?;
    Ok(entries)
}

pub fn format_manifest(entries: &[GoldenFixture]) -> String {
    entries
        .iter()
        .map(|e| format!("{}\t{:016x}\t{}\t{}\n", e.path, e.hash, e.command, e.description))
        .collect()
}

pub fn parse_manifest(text: &str, origin: &Path) -> Result<Vec<GoldenFixture>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |reason: &str| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            let [path, hash, command, description] = f.as_slice() else {
                return Err(err("expected 4 tab-separated fields"));
            };
            Ok(GoldenFixture {
                path: path.to_string(),
                hash: u64::from_str_radix(hash, 16).map_err(|_| err("bad hash"))?,
                command: command.to_string(),
                description: description.to_string(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FixtureStatus {
    Ok,
    Missing,
    Mismatch { expected: u64, found: u64 },
}

/// Per-fixture outcome of [`verify_fixtures`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VerifyReport {
    pub results: Vec<(PathBuf, FixtureStatus)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(|(_, s)| *s == FixtureStatus::Ok)
    }

    pub fn failures(&self) -> impl Iterator<Item = &(PathBuf, FixtureStatus)> {
        self.results.iter().filter(|(_, s)| *s != FixtureStatus::Ok)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (path, status) in &self.results {
            match status {
                FixtureStatus::Ok => writeln!(f, "ok       {}", path.display())?,
                FixtureStatus::Missing => writeln!(f, "MISSING  {}", path.display())?,
                FixtureStatus::Mismatch { expected, found } => writeln!(
                    f,
                    "MISMATCH {} (expected {expected:016x}, found {found:016x})",
                    path.display()
                )?,
            }
        }
        Ok(())
    }
}

/// Re-hashes every fixture listed in `dir/MANIFEST`.
pub fn verify_fixtures(dir: impl AsRef<Path>) -> Result<VerifyReport> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let results = parse_manifest(&text, &manifest_path)?
        .into_iter()
        .map(|entry| {
            let path = dir.join(&entry.path);
            let status = match fs::read(&path) {
                Err(_) => FixtureStatus::Missing,
                Ok(bytes) if fnv1a64(&bytes) == entry.hash => FixtureStatus::Ok,
                Ok(bytes) => FixtureStatus::Mismatch {
                    expected: entry.hash,
                    found: fnv1a64(&bytes),
                },
            };
            (path, status)
        })
        .collect();
    Ok(VerifyReport { results })
}

/// Directory of the checked-in fixtures.
pub fn default_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checked_in_fixtures_verify() {
        let report = verify_fixtures(default_dir()).unwrap();
        assert!(report.passed(), "{report}");
        assert_eq!(report.results.len(), FIXTURES.len());
    }

    #[test]
    fn regeneration_matches_recorded_hashes() {
        let dir = default_dir();
        let text = fs::read_to_string(dir.join(MANIFEST)).unwrap();
        let entries = parse_manifest(&text, &dir).unwrap();
        for (entry, (name, file, _)) in entries.iter().zip(FIXTURES) {
            assert_eq!(entry.path, file);
            assert_eq!(entry.command, command_for(name, file));
            assert_eq!(fnv1a64(&generate(name).unwrap()), entry.hash, "{name}");
            assert!(generate(name).unwrap().len() <= 100 * 1024);
        }
    }

    #[test]
    fn corrupted_and_missing_fixtures_fail() {
        let tmp = tempfile::tempdir().unwrap();
        write_all(tmp.path()).unwrap();
        let target = tmp.path().join("two-tensor.tvf");
        let mut bytes = fs::read(&target).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&target, bytes).unwrap();
        fs::remove_file(tmp.path().join("tiny-report.csv")).unwrap();
        let report = verify_fixtures(tmp.path()).unwrap();
        assert!(!report.passed());
        let failures: Vec<_> = report.failures().collect();
        assert_eq!(failures.len(), 2);
        assert!(matches!(failures[0].1, FixtureStatus::Mismatch { .. }));
        assert_eq!(failures[1].1, FixtureStatus::Missing);
    }

    #[test]
    fn scalar_grid_matches_independent_table() {
        // Enumerated by a separate script: float32-rounded merged weights,
        // f64 forward, ties to the lowest class index.
        let expected = [
            [0.25, 0.0, 0.25, 0.0, 0.25],
            [0.5, 0.0, 0.0, 0.0, 0.25],
            [0.5, 0.25, 0.0, 0.0, 0.25],
            [0.25, 0.5, 0.0, 0.25, 0.5],
            [0.25, 0.25, 0.25, 0.75, 1.0],
        ];
        let g = scalar_grid().unwrap();
        assert_eq!(g.coords, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        for (row, want) in g.values.iter().zip(expected) {
            assert_eq!(row.as_slice(), want.as_slice());
        }
    }
}
