//! Pairwise weight-disentanglement error.
//!
//! For task vectors `τ1`, `τ2` and coefficients `(λ1, λ2)`,
//! `ξ = Σ_t P_{x∼μ_t}[f(x; θ + λ_t·τ_t) ≠ f(x; θ + λ1·τ1 + λ2·τ2)]`, where
//! both models in term `t` use task `t`'s head. Each task's samples are
//! drawn once per `(task, seed)` and shared by every grid cell, which makes
//! `ξ(0, 0) = 0` and `ξ_{τ1,τ2}(a, b) = ξ_{τ2,τ1}(b, a)` hold exactly.
//!
//! # Heatmap files
//!
//! The CSV has a header `lambda1/lambda2,<λ2 coordinates…>` and one row per
//! `λ1` coordinate, led by that coordinate. Numbers are printed with six
//! significant digits (`%.6g`). The PGM is binary P5 with
//! `width = height = resolution`, rows indexed by `λ1`, and pixel
//! `round(255·(1 − ξ/2))`: light cells are disentangled. The optional
//! overlay file lists the corners of the `[−1, 1]²` box with their nearest
//! pixel coordinates.

use std::path::Path;

use rayon::prelude::*;

use crate::arith::{apply_task_vectors, TaskVector};
use crate::checkpoint::{write_atomic, WeightSnapshot};
use crate::error::{Error, Result};
use crate::nn::{ModelConfig, ModelGraph};
use crate::taskgen::{sample_task, Split, TaskSpec};
use crate::tensor::Tensor;

/// Grid extent and sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Points per axis.
    pub resolution: usize,
    pub samples_per_task: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lambda_min: -3.0,
            lambda_max: 3.0,
            resolution: 25,
            samples_per_task: 512,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min.is_finite() && self.lambda_max.is_finite() && self.lambda_min < self.lambda_max) {
            return Err(Error::invalid(format!(
                "grid range must satisfy min < max, got [{}, {}]",
                self.lambda_min, self.lambda_max
            )));
        }
        if self.resolution < 2 {
            return Err(Error::invalid("grid resolution must be at least 2"));
        }
        if self.samples_per_task == 0 {
            return Err(Error::invalid("samples_per_task must be at least 1"));
        }
        Ok(())
    }

    /// Axis coordinates, endpoints included.
    pub fn coords(&self) -> Vec<f64> {
        let span = self.lambda_max - self.lambda_min;
        (0..self.resolution)
            .map(|i| self.lambda_min + span * i as f64 / (self.resolution - 1) as f64)
            .collect()
    }

    /// The fixed evaluation samples of `task` under this spec's seed.
    pub fn samples(&self, task: &TaskSpec) -> Result<Tensor> {
        let task = match task.source {
            crate::taskgen::TaskSource::Synthetic(_) => task.with_seed(self.seed),
            crate::taskgen::TaskSource::File(_) => task.clone(),
        };
        let count = match task.source {
            crate::taskgen::TaskSource::File(_) => self.samples_per_task.min(task.eval_count),
            _ => self.samples_per_task,
        };
        Ok(sample_task(&task, Split::Eval, count)?.inputs)
    }
}

/// A square matrix of `ξ` values; `values[i][j]` sits at `(coords[i], coords[j])`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisentanglementGrid {
    /// For a grid read back from CSV, `samples_per_task` is 0 and `seed` 0.
    pub spec: GridSpec,
    pub task_ids: [String; 2],
    pub coords: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

/// Everything `ξ` needs besides the coefficients.
pub struct PairContext<'a> {
    pub config: &'a ModelConfig,
    pub pre: &'a WeightSnapshot,
    pub vectors: [&'a TaskVector; 2],
    pub heads: [&'a WeightSnapshot; 2],
    pub samples: [&'a Tensor; 2],
}

impl PairContext<'_> {
    fn predict(&self, lambdas: &[(usize, f64)], task: usize) -> Result<Vec<usize>> {
        let weighted: Vec<(&TaskVector, f64)> = lambdas.iter().map(|&(t, l)| (self.vectors[t], l)).collect();
        let merged = apply_task_vectors(self.pre, &weighted)?;
        ModelGraph::from_parts(self.config, &merged, self.heads[task])?.predict(self.samples[task])
    }

    fn joint(&self, l1: f64, l2: f64) -> Result<[Vec<usize>; 2]> {
        let both = [(0, l1), (1, l2)];
        Ok([self.predict(&both, 0)?, self.predict(&both, 1)?])
    }

    /// `ξ(λ1, λ2)`.
    pub fn xi(&self, l1: f64, l2: f64) -> Result<f64> {
        let single = [self.predict(&[(0, l1)], 0)?, self.predict(&[(1, l2)], 1)?];
        Ok(xi_from_predictions(&single, &self.joint(l1, l2)?))
    }
}

fn disagreement(a: &[usize], b: &[usize]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64
}

fn xi_from_predictions(single: &[Vec<usize>; 2], joint: &[Vec<usize>; 2]) -> f64 {
    disagreement(&single[0], &joint[0]) + disagreement(&single[1], &joint[1])
}

fn check_pair(pre: &WeightSnapshot, vectors: [&TaskVector; 2]) -> Result<()> {
    let base = pre.encoder_hash();
    for v in vectors {
        if v.base_hash() != base {
            return Err(Error::ForeignFineTune {
                expected: base,
                found: v.base_hash().to_string(),
            });
        }
    }
    Ok(())
}

/// `ξ(λ1, λ2)` for two tasks, drawing each task's fixed samples from `spec`.
#[allow(clippy::too_many_arguments)]
pub fn xi(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    vectors: [&TaskVector; 2],
    heads: [&WeightSnapshot; 2],
    tasks: [&TaskSpec; 2],
    spec: &GridSpec,
    l1: f64,
    l2: f64,
) -> Result<f64> {
    check_pair(pre, vectors)?;
    let s = [spec.samples(tasks[0])?, spec.samples(tasks[1])?];
    PairContext {
        config,
        pre,
        vectors,
        heads,
        samples: [&s[0], &s[1]],
    }
    .xi(l1, l2)
}

/// Evaluates `ξ` on every cell of `spec`'s grid. Cells run in parallel;
/// single-vector predictions are computed once per axis value.
pub fn grid(
    config: &ModelConfig,
    pre: &WeightSnapshot,
    vectors: [&TaskVector; 2],
    heads: [&WeightSnapshot; 2],
    tasks: [&TaskSpec; 2],
    spec: &GridSpec,
) -> Result<DisentanglementGrid> {
    spec.validate()?;
    check_pair(pre, vectors)?;
    let s = [spec.samples(tasks[0])?, spec.samples(tasks[1])?];
    let ctx = PairContext {
        config,
        pre,
        vectors,
        heads,
        samples: [&s[0], &s[1]],
    };
    let values = grid_on(&ctx, &spec.coords())?;
    Ok(DisentanglementGrid {
        spec: spec.clone(),
        task_ids: [tasks[0].task_id.clone(), tasks[1].task_id.clone()],
        coords: spec.coords(),
        values,
    })
}

/// The `ξ` matrix of `ctx` over `coords × coords`.
pub fn grid_on(ctx: &PairContext<'_>, coords: &[f64]) -> Result<Vec<Vec<f64>>> {
    let single = |task: usize| -> Result<Vec<Vec<usize>>> {
        coords.par_iter().map(|&l| ctx.predict(&[(task, l)], task)).collect()
    };
    let (s1, s2) = (single(0)?, single(1)?);
    let n = coords.len();
    let cells: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|k| {
            let (i, j) = (k / n, k % n);
            let joint = ctx.joint(coords[i], coords[j])?;
            Ok(xi_from_predictions(&[s1[i].clone(), s2[j].clone()], &joint))
        })
        .collect::<Result<_>>()?;
    Ok(cells.chunks(n).map(|r| r.to_vec()).collect())
}

/// Mean `ξ` over the cells whose coordinates fall in the closed box
/// `[l1.0, l1.1] × [l2.0, l2.1]`.
pub fn region_mean(grid: &DisentanglementGrid, l1: (f64, f64), l2: (f64, f64)) -> Result<f64> {
    const TOL: f64 = 1e-9;
    let (lo, hi) = match (grid.coords.first(), grid.coords.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => return Err(Error::invalid("empty grid")),
    };
    for (a, b) in [l1, l2] {
        if a > b || a < lo - TOL || b > hi + TOL {
            return Err(Error::invalid(format!("box [{a}, {b}] is outside the grid range [{lo}, {hi}]")));
        }
    }
    let inside = |v: f64, (a, b): (f64, f64)| v >= a - TOL && v <= b + TOL;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &x) in grid.coords.iter().enumerate() {
        for (j, &y) in grid.coords.iter().enumerate() {
            if inside(x, l1) && inside(y, l2) {
                sum += grid.values[i][j];
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::invalid("box contains no grid cells"));
    }
    Ok(sum / count as f64)
}

/// `%.6g`.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{:.5e}", v);
    let (mantissa, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{m}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    strip_zeros(&format!("{:.*}", decimals, v)).to_string()
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn grid_to_csv(grid: &DisentanglementGrid) -> String {
    let mut out = String::from("lambda1/lambda2");
    for c in &grid.coords {
        out.push(',');
        out.push_str(&format_g6(*c));
    }
    out.push('\n');
    for (c, row) in grid.coords.iter().zip(&grid.values) {
        out.push_str(&format_g6(*c));
        for v in row {
            out.push(',');
            out.push_str(&format_g6(*v));
        }
        out.push('\n');
    }
    out
}

/// Pixel intensity of one cell.
pub fn pixel(xi: f64) -> u8 {
    (255.0 * (1.0 - xi / 2.0)).round().clamp(0.0, 255.0) as u8
}

pub fn grid_to_pgm(grid: &DisentanglementGrid) -> Vec<u8> {
    let n = grid.coords.len();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    for row in &grid.values {
        out.extend(row.iter().map(|&v| pixel(v)));
    }
    out
}

/// Corners of `[−1, 1]²` clipped to the grid, with their nearest cell.
pub fn overlay_text(grid: &DisentanglementGrid) -> String {
    let nearest = |target: f64| {
        let mut best = 0;
        for (i, c) in grid.coords.iter().enumerate() {
            if (c - target).abs() < (grid.coords[best] - target).abs() {
                best = i;
            }
        }
        best
    };
    let mut out = String::from("lambda1,lambda2,row,col\n");
    for (a, b) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, 1.0), (1.0, -1.0)] {
        out.push_str(&format!("{},{},{},{}\n", format_g6(a), format_g6(b), nearest(a), nearest(b)));
    }
    out
}

/// Writes the CSV and PGM renderings, plus the box overlay when requested.
pub fn render_heatmap(
    grid: &DisentanglementGrid,
    csv_path: impl AsRef<Path>,
    pgm_path: impl AsRef<Path>,
    overlay_path: Option<&Path>,
) -> Result<()> {
    write_atomic(csv_path.as_ref(), grid_to_csv(grid).as_bytes())?;
    write_atomic(pgm_path.as_ref(), &grid_to_pgm(grid))?;
    if let Some(p) = overlay_path {
        write_atomic(p, overlay_text(grid).as_bytes())?;
    }
    Ok(())
}

/// Reads a grid back from its CSV rendering.
pub fn parse_grid_csv(text: &str, origin: &Path) -> Result<DisentanglementGrid> {
    let err = |line: usize, reason: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let num = |line: usize, s: &str| s.trim().parse::<f64>().map_err(|_| err(line, format!("bad number {s:?}")));
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut cols = header.split(',');
    if cols.next() != Some("lambda1/lambda2") {
        return Err(err(1, "header must start with lambda1/lambda2".into()));
    }
    let coords2 = cols.map(|c| num(1, c)).collect::<Result<Vec<_>>>()?;
    let mut coords = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut cells = line.split(',');
        coords.push(num(i + 2, cells.next().unwrap_or(""))?);
        let row = cells.map(|c| num(i + 2, c)).collect::<Result<Vec<_>>>()?;
        if row.len() != coords2.len() {
            return Err(err(i + 2, format!("{} cells, header has {}", row.len(), coords2.len())));
        }
        values.push(row);
    }
    if coords != coords2 || coords.len() < 2 {
        return Err(err(1, "grid must be square with matching axes".into()));
    }
    Ok(DisentanglementGrid {
        spec: GridSpec {
            lambda_min: coords[0],
            lambda_max: coords[coords.len() - 1],
            resolution: coords.len(),
            samples_per_task: 0,
            seed: 0,
        },
        task_ids: [String::new(), String::new()],
        coords,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_encoder, init_head};
    use crate::rng::SeededRng;
    use crate::tensor::gaussian_sample;

    // encoder f = w·x + b (one weight, one bias); head rows ±1, zero bias.
    fn scalar_pre() -> WeightSnapshot {
        let mut s = WeightSnapshot::new();
        s.insert("encoder.layer0.weight", Tensor::new(vec![1, 1], vec![1.0]).unwrap()).unwrap();
        s.insert("encoder.layer0.bias", Tensor::from_slice(&[0.0])).unwrap();
        s
    }

    fn scalar_vector(pre: &WeightSnapshot, dw: f32, db: f32, id: &str) -> TaskVector {
        TaskVector::new(
            [
                ("encoder.layer0.weight".to_string(), Tensor::new(vec![1, 1], vec![dw]).unwrap()),
                ("encoder.layer0.bias".to_string(), Tensor::from_slice(&[db])),
            ]
            .into(),
            pre.encoder_hash(),
            id,
        )
        .unwrap()
    }

    fn sign_head(sign: f32) -> WeightSnapshot {
        let mut s = WeightSnapshot::new();
        s.insert("head.weight", Tensor::new(vec![2, 1], vec![sign, -sign]).unwrap()).unwrap();
        s.insert("head.bias", Tensor::zeros(&[2])).unwrap();
        s
    }

    #[test]
    fn tiny_fixture_matches_hand_table() {
        let config = ModelConfig::mlp(1, vec![], 1);
        let pre = scalar_pre();
        let t1 = scalar_vector(&pre, -1.0, 0.5, "a");
        let t2 = scalar_vector(&pre, 0.5, -1.0, "b");
        // head1 predicts 0 iff f > 0, head2 predicts 0 iff f < 0.
        let (h1, h2) = (sign_head(1.0), sign_head(-1.0));
        let x1 = Tensor::new(vec![4, 1], vec![-2.0, -0.5, 0.5, 2.0]).unwrap();
        let x2 = Tensor::new(vec![4, 1], vec![-1.0, 0.25, 0.8, 3.0]).unwrap();
        let ctx = PairContext {
            config: &config,
            pre: &pre,
            vectors: [&t1, &t2],
            heads: [&h1, &h2],
            samples: [&x1, &x2],
        };
        // (1,1): single1 f=0.5 → [0,0,0,0]; joint f=0.5x−0.5 → [1,1,1,0]: 3/4.
        //        single2 f=1.5x−1 → [0,0,1,1]; joint → [0,0,0,1]: 1/4.
        assert_eq!(ctx.xi(1.0, 1.0).unwrap(), 1.0);
        // (1,0): term 1 is a self-comparison; single2 f=x → [0,1,1,1],
        //        joint f=0.5 → [1,1,1,1]: 1/4.
        assert_eq!(ctx.xi(1.0, 0.0).unwrap(), 0.25);
        // (−1,2): single1 f=2x−0.5 → [1,1,0,0]; joint f=3x−2.5 → [1,1,1,0]: 1/4.
        //         single2 f=2x−2 → [0,0,0,1]; joint → [0,0,0,1]: 0.
        assert_eq!(ctx.xi(-1.0, 2.0).unwrap(), 0.25);
        assert_eq!(ctx.xi(0.0, 0.0).unwrap(), 0.0);
    }

    fn random_setup() -> (ModelConfig, WeightSnapshot, TaskVector, TaskVector, WeightSnapshot, WeightSnapshot, Tensor, Tensor) {
        let config = ModelConfig::mlp(4, vec![6], 3);
        let rng = SeededRng::new(11);
        let pre = init_encoder(&config, &rng).unwrap();
        let mut r = rng.split("vectors");
        let mut vec_for = |id: &str| {
            let entries = pre
                .entries()
                .iter()
                .map(|(k, t)| (k.clone(), gaussian_sample(&mut r, t.shape(), 0.0, 0.5).unwrap()))
                .collect();
            TaskVector::new(entries, pre.encoder_hash(), id).unwrap()
        };
        let (t1, t2) = (vec_for("a"), vec_for("b"));
        let h1 = init_head(3, 3, &rng.split("h1")).unwrap();
        let h2 = init_head(3, 2, &rng.split("h2")).unwrap();
        let mut s = rng.split("samples");
        let x1 = gaussian_sample(&mut s, &[40, 4], 0.0, 1.0).unwrap();
        let x2 = gaussian_sample(&mut s, &[30, 4], 0.0, 1.0).unwrap();
        (config, pre, t1, t2, h1, h2, x1, x2)
    }

    #[test]
    fn grid_properties() {
        let (config, pre, t1, t2, h1, h2, x1, x2) = random_setup();
        let coords = GridSpec {
            resolution: 9,
            ..Default::default()
        }
        .coords();
        assert_eq!(coords[4], 0.0);
        let fwd = PairContext {
            config: &config,
            pre: &pre,
            vectors: [&t1, &t2],
            heads: [&h1, &h2],
            samples: [&x1, &x2],
        };
        let rev = PairContext {
            config: &config,
            pre: &pre,
            vectors: [&t2, &t1],
            heads: [&h2, &h1],
            samples: [&x2, &x1],
        };
        let a = grid_on(&fwd, &coords).unwrap();
        let b = grid_on(&rev, &coords).unwrap();
        assert_eq!(a[4][4], 0.0);
        for i in 0..9 {
            for j in 0..9 {
                assert!((0.0..=2.0).contains(&a[i][j]));
                assert_eq!(a[i][j].to_bits(), b[j][i].to_bits());
                assert_eq!(a[i][j], fwd.xi(coords[i], coords[j]).unwrap());
            }
        }
        assert!(a.iter().flatten().any(|&v| v > 0.0));
        assert_eq!(a, grid_on(&fwd, &coords).unwrap());
    }

    #[test]
    fn zero_second_vector_reduces_to_one_term() {
        let (config, pre, t1, _, h1, h2, x1, x2) = random_setup();
        let zero = TaskVector::zeros_like(&pre, "z");
        let ctx = PairContext {
            config: &config,
            pre: &pre,
            vectors: [&t1, &zero],
            heads: [&h1, &h2],
            samples: [&x1, &x2],
        };
        let base = ModelGraph::from_parts(&config, &pre, &h2).unwrap().predict(&x2).unwrap();
        let moved = apply_task_vectors(&pre, &[(&t1, 1.5)]).unwrap();
        let moved = ModelGraph::from_parts(&config, &moved, &h2).unwrap().predict(&x2).unwrap();
        assert_eq!(ctx.xi(1.5, 0.7).unwrap(), disagreement(&base, &moved));
    }

    #[test]
    fn spec_validation() {
        let bad = GridSpec {
            lambda_min: 0.0,
            lambda_max: 0.0,
            resolution: 2,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(GridSpec { resolution: 1, ..Default::default() }.validate().is_err());
        assert!(GridSpec { samples_per_task: 0, ..Default::default() }.validate().is_err());
        let c = GridSpec::default().coords();
        assert_eq!((c.len(), c[0], c[12], c[24]), (25, -3.0, 0.0, 3.0));
    }

    fn grid_of(values: Vec<Vec<f64>>) -> DisentanglementGrid {
        let spec = GridSpec {
            resolution: values.len(),
            ..Default::default()
        };
        DisentanglementGrid {
            coords: spec.coords(),
            spec,
            task_ids: ["a".into(), "b".into()],
            values,
        }
    }

    #[test]
    fn pgm_and_csv_rendering() {
        let zero = grid_of(vec![vec![0.0; 3]; 3]);
        let pgm = grid_to_pgm(&zero);
        assert!(pgm.starts_with(b"P5\n3 3\n255\n"));
        assert!(pgm[11..].iter().all(|&p| p == 255));
        assert_eq!(pixel(2.0), 0);
        assert_eq!(pixel(1.0), 128);

        let g = grid_of(vec![vec![0.0, 0.125, 1.0 / 3.0], vec![2.0, 1e-7, 0.5], vec![1.0, 0.25, 0.0625]]);
        let csv = grid_to_csv(&g);
        assert_eq!(csv.lines().next().unwrap(), "lambda1/lambda2,-3,0,3");
        assert_eq!(csv.lines().nth(1).unwrap(), "-3,0,0.125,0.333333");
        assert_eq!(csv.lines().nth(2).unwrap(), "0,2,1e-07,0.5");
        let back = parse_grid_csv(&csv, Path::new("g.csv")).unwrap();
        assert_eq!(grid_to_csv(&back), csv);
        assert_eq!(grid_to_pgm(&back), grid_to_pgm(&g));
        assert!(parse_grid_csv("x,1\n", Path::new("g.csv")).is_err());

        let overlay = overlay_text(&grid_of(vec![vec![0.0; 7]; 7]));
        assert_eq!(overlay.lines().nth(1).unwrap(), "-1,-1,2,2");
    }

    #[test]
    fn format_g6_matches_printf() {
        for (v, s) in [
            (0.0, "0"),
            (1.0, "1"),
            (-2.75, "-2.75"),
            (0.123456789, "0.123457"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (2.0 / 3.0, "0.666667"),
        ] {
            assert_eq!(format_g6(v), s, "{v}");
        }
    }

    #[test]
    fn region_mean_oracle() {
        let mut rng = SeededRng::new(4);
        let values: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| rng.next_f64() * 2.0).collect()).collect();
        let g = grid_of(values.clone());
        let all = values.iter().flatten().sum::<f64>() / 25.0;
        assert!((region_mean(&g, (-3.0, 3.0), (-3.0, 3.0)).unwrap() - all).abs() < 1e-12);
        assert_eq!(region_mean(&g, (1.5, 1.5), (-1.5, -1.5)).unwrap(), values[3][1]);
        // coords are -3,-1.5,0,1.5,3; box [-1,1.5]×[0,3] holds rows 2..=3, cols 2..=4
        let mut sum = 0.0;
        for i in 2..=3 {
            for j in 2..=4 {
                sum += values[i][j];
            }
        }
        assert!((region_mean(&g, (-1.0, 1.5), (0.0, 3.0)).unwrap() - sum / 6.0).abs() < 1e-12);
        assert!(region_mean(&g, (0.1, 0.2), (0.1, 0.2)).is_err());
        assert!(region_mean(&g, (-4.0, 0.0), (0.0, 1.0)).is_err());
    }
}
