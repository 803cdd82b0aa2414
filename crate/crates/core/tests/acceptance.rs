//! The ten acceptance criteria, one pass/fail line each.
//!
//! `cargo test -p taskarith --test acceptance` runs them alone; the process
//! exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use taskarith::arith::{apply_task_vectors, evaluate_merged, normalized_accuracy, CoefficientGrid};
use taskarith::checkpoint::{load_tvf, save_tvf, Namespace, WeightSnapshot};
use taskarith::disentangle::{self, region_mean, GridSpec};
use taskarith::experiments::{Experiment, ExperimentPlan, RegimeComparison, XiResult};
use taskarith::fixtures::{self, ScalarPair};
use taskarith::nn::gradcheck;
use taskarith::train::{linear_probe, random_head, FinetuneRegime, PretrainScheme};
use taskarith::SeededRng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: u64) -> Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s as f64,
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn plan(out: &Path, text: &str) -> ExperimentPlan {
    let mut p = ExperimentPlan::parse(text, Path::new("acceptance")).expect("plan parses");
    p.out_dir = out.to_path_buf();
    p
}

/// Four tasks, supervised and random-init encoders, both regimes.
const FOUR_TASKS: &str = "seed = 0\ntasks = 4\nschemes = supervised, random-init\nregimes = aligned, full\n";

/// Spacing between `x` and the next float away from zero.
fn ulp(x: f32) -> f32 {
    let a = x.abs();
    f32::from_bits(a.to_bits() + 1) - a
}

struct Run {
    exp: Experiment,
    comparison: RegimeComparison,
    train_time: Duration,
}

fn pre_of<'a>(cmp: &'a RegimeComparison, scheme: PretrainScheme) -> &'a WeightSnapshot {
    &cmp.schemes.iter().find(|s| s.scheme == scheme).unwrap().pretrained
}

fn criterion1(run: &Run) -> Check {
    let start = Instant::now();
    let cfg = &run.exp.plan().config;
    let mut checked = 0;
    for scheme in &run.comparison.schemes {
        for r in &scheme.regimes {
            for (t, task) in r.tasks.iter().zip(run.exp.suite()) {
                let merged = apply_task_vectors(&scheme.pretrained, &[(&t.vector, 1.0)]).map_err(|e| e.to_string())?;
                for (k, ft) in t.encoder.entries() {
                    let pre = scheme.pretrained.get(k).unwrap().data();
                    let got = merged.get(k).unwrap().data();
                    for i in 0..ft.len() {
                        let f = ft.data()[i];
                        let tol = ulp(pre[i].abs().max(f.abs()));
                        ensure((got[i] - f).abs() <= tol, format!("{k}[{i}] of {}: {} vs {f}", t.task_id, got[i]))?;
                    }
                }
                let heads = [(t.task_id.clone(), t.head.clone())].into();
                let acc = evaluate_merged(cfg, &merged, &heads, std::slice::from_ref(task)).map_err(|e| e.to_string())?;
                ensure(acc[0].1 == t.accuracy, format!("{}: merged {} vs single {}", t.task_id, acc[0].1, t.accuracy))?;
                checked += 1;
            }
        }
    }
    within(start.elapsed(), 10)?;
    Ok(format!("{checked} fine-tuned checkpoints"))
}

fn criterion2() -> Check {
    let start = Instant::now();
    let suite = gradcheck::layer_suite();
    let mut worst = ("", 0.0f64);
    for c in &suite {
        ensure(c.params <= 1000, format!("{} has {} parameters", c.name, c.params))?;
        if c.max_rel_error >= worst.1 {
            worst = (c.name, c.max_rel_error);
        }
    }
    ensure(worst.1 < 1e-4, format!("{}: relative error {:.2e}", worst.0, worst.1))?;
    within(start.elapsed(), 30)?;
    Ok(format!("{} checks, worst {:.1e} ({})", suite.len(), worst.1, worst.0))
}

fn criterion3(run: &Run) -> Check {
    let plan = run.exp.plan();
    let pre = pre_of(&run.comparison, PretrainScheme::Supervised);
    let rng = SeededRng::new(plan.seed);
    let before = pre.to_tvf_bytes();
    let task = &run.exp.suite()[0];
    let probe = linear_probe(&plan.config, pre, task, &plan.probe, &rng).map_err(|e| e.to_string())?;
    ensure(pre.to_tvf_bytes() == before, "probing touched θ_pre")?;
    ensure(probe.head.restrict(Namespace::Encoder).is_empty(), "probe output carries encoder tensors")?;
    let aligned = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Aligned).unwrap();
    let full = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Full).unwrap();
    for (t, task) in aligned.tasks.iter().zip(run.exp.suite()) {
        ensure(t.head.namespace_bit_eq(&t.probe_head, Namespace::Head), format!("aligned moved the head of {}", t.task_id))?;
        ensure(!t.encoder.namespace_bit_eq(pre, Namespace::Encoder), format!("aligned left {} encoder unchanged", task.task_id))?;
    }
    for (t, task) in full.tasks.iter().zip(run.exp.suite()) {
        let head0 = random_head(&plan.config, task, &rng).map_err(|e| e.to_string())?;
        ensure(!t.head.namespace_bit_eq(&head0, Namespace::Head), format!("full FT kept the head of {}", t.task_id))?;
        ensure(!t.encoder.namespace_bit_eq(pre, Namespace::Encoder), format!("full FT kept the encoder of {}", t.task_id))?;
    }
    Ok("probe, aligned and full contracts hold byte for byte".into())
}

fn criterion4(run: &Run) -> Check {
    let start = Instant::now();
    let pair = ScalarPair::new();
    let ctx = pair.context();
    let oracle = [((1.0, 1.0), 1.0), ((1.0, 0.0), 0.25), ((-1.0, 2.0), 0.25), ((0.0, 0.0), 0.0)];
    for ((a, b), want) in oracle {
        let got = ctx.xi(a, b).map_err(|e| e.to_string())?;
        ensure(got == want, format!("tiny fixture ξ({a},{b}) = {got}, oracle {want}"))?;
    }

    let plan = run.exp.plan();
    let pre = pre_of(&run.comparison, PretrainScheme::Supervised);
    let r = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Aligned).unwrap();
    let suite = run.exp.suite();
    let spec = GridSpec {
        resolution: 9,
        ..GridSpec::default()
    };
    let (a, b) = (&r.tasks[0], &r.tasks[1]);
    let g = disentangle::grid(&plan.config, pre, [&a.vector, &b.vector], [&a.head, &b.head], [&suite[0], &suite[1]], &spec)
        .map_err(|e| e.to_string())?;
    let s = disentangle::grid(&plan.config, pre, [&b.vector, &a.vector], [&b.head, &a.head], [&suite[1], &suite[0]], &spec)
        .map_err(|e| e.to_string())?;
    ensure(g.values[4][4] == 0.0, format!("ξ(0,0) = {}", g.values[4][4]))?;
    for i in 0..9 {
        for j in 0..9 {
            let v = g.values[i][j];
            ensure((0.0..=2.0).contains(&v), format!("ξ out of range: {v}"))?;
            ensure(v == s.values[j][i], format!("asymmetric cell ({i},{j}): {v} vs {}", s.values[j][i]))?;
        }
    }
    within(start.elapsed(), 60)?;
    Ok(format!("hand oracle matches; 9x9 grids in {:.1} s", start.elapsed().as_secs_f64()))
}

fn criterion5(run: &Run) -> Check {
    let grid = CoefficientGrid::default();
    let expected: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    ensure(grid.values() == expected.as_slice(), format!("default grid {:?}", grid.values()))?;
    for r in run.comparison.runs() {
        let curve = &r.report.curve;
        let mut best = 0;
        for i in 1..curve.len() {
            if curve[i].normalized_avg > curve[best].normalized_avg {
                best = i;
            }
        }
        ensure(curve.len() == 21, "curve does not cover the grid")?;
        ensure(
            curve[best].lambda == r.report.lambda(),
            format!("{}: λ* {} vs brute force {}", r.label(), r.report.lambda(), curve[best].lambda),
        )?;
    }
    let mean_of_ratios = normalized_accuracy(&[0.81, 0.3], &[0.9, 0.5]).map_err(|e| e.to_string())?;
    ensure(mean_of_ratios == 0.75, format!("normalized accuracy {mean_of_ratios}, expected 0.75"))?;
    Ok("21-value grid, λ* = brute-force argmax, mean of ratios".into())
}

fn criterion6(run: &Run) -> Check {
    let aligned = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Aligned).unwrap();
    let full = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Full).unwrap();
    let (a, f) = (aligned.report.normalized_avg(), full.report.normalized_avg());
    let msg = format!("aligned {a:.4}, full {f:.4}, gap {:.4}", a - f);
    ensure(a >= 0.85, format!("{msg}: aligned below 0.85"))?;
    ensure(a - f >= 0.10, format!("{msg}: gap below 0.10"))?;
    within(run.train_time, 300)?;
    Ok(format!("{msg}; training {:.1} s", run.train_time.as_secs_f64()))
}

fn criterion7(run: &Run) -> Check {
    let aligned = run.comparison.run(PretrainScheme::Supervised, FinetuneRegime::Aligned).unwrap();
    let at_zero = aligned.report.curve_value(0.0).ok_or("curve lacks λ = 0")?;
    let best = aligned.report.normalized_avg();
    let probing = aligned.probe_normalized();
    ensure(at_zero == probing, format!("value(0) {at_zero} vs independent probing {probing}"))?;
    let gain = best - at_zero;
    ensure((0.0..=0.10).contains(&gain), format!("value(λ*) − value(0) = {gain:.4}"))?;
    Ok(format!("λ* = {}, gain over probing {gain:.4}", aligned.report.lambda()))
}

fn criterion8(xi: &[XiResult], elapsed: Duration) -> Check {
    let find = |s| {
        xi.iter()
            .find(|x| x.scheme == s && x.regime == FinetuneRegime::Aligned)
            .and_then(|x| region_mean(&x.grid, (0.0, 1.0), (0.0, 1.0)).ok())
    };
    let sup = find(PretrainScheme::Supervised).ok_or("no supervised grid")?;
    let rnd = find(PretrainScheme::RandomInit).ok_or("no random-init grid")?;
    let msg = format!("ξ over [0,1]²: supervised {sup:.4}, random-init {rnd:.4}, margin {:.4}", rnd - sup);
    ensure(rnd - sup >= 0.02, msg.clone())?;
    within(elapsed, 180)?;
    Ok(msg)
}

fn criterion9(out: &Path) -> Check {
    let start = Instant::now();
    let p = plan(out, "seed = 0\ntasks = 8\nregimes = aligned\nsweep_n = 1:4\n");
    let exp = Experiment::new(p).map_err(|e| e.to_string())?;
    let cmp = exp.regime_comparison().map_err(|e| e.to_string())?;
    let sweep = exp.task_count_sweep(&cmp).map_err(|e| e.to_string())?;
    let means: Vec<f64> = (1..=4).map(|n| sweep[0].mean_for(n).unwrap()).collect();
    let msg = format!("means n=1..4: {}", means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(", "));
    ensure(means[0] == 1.0, format!("{msg}: n=1 is not exactly 1.0"))?;
    for w in means.windows(2) {
        ensure(w[1] <= w[0] + 0.02, format!("{msg}: increase beyond 0.02"))?;
    }
    within(start.elapsed(), 600)?;
    Ok(msg)
}

fn criterion10(run: &Run, second_out: &Path) -> Check {
    let out = &run.exp.plan().out_dir;
    let mut tvfs = 0;
    for entry in fs::read_dir(out.join("checkpoints")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let bytes = fs::read(&path).map_err(|e| e.to_string())?;
        let loaded = load_tvf(&path).map_err(|e| e.to_string())?;
        ensure(loaded.to_tvf_bytes() == bytes, format!("{} does not round-trip", path.display()))?;
        let copy = second_out.join("roundtrip.tvf");
        save_tvf(&loaded, &copy).map_err(|e| e.to_string())?;
        ensure(fs::read(&copy).map_err(|e| e.to_string())? == bytes, "re-save differs")?;
        tvfs += 1;
    }

    let again = plan(&second_out.join("run"), FOUR_TASKS);
    let exp = Experiment::new(again).map_err(|e| e.to_string())?;
    let cmp = exp.regime_comparison().map_err(|e| e.to_string())?;
    exp.lambda_sweep(&cmp).map_err(|e| e.to_string())?;
    exp.disentanglement(&cmp).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for dir in ["reports", "heatmaps"] {
        for entry in fs::read_dir(out.join(dir)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = path.file_name().unwrap();
            let other = second_out.join("run").join(dir).join(name);
            let same = fs::read(&path).ok() == fs::read(&other).ok();
            ensure(same, format!("{dir}/{} differs between runs", name.to_string_lossy()))?;
            compared += 1;
        }
    }
    let report = fixtures::verify_fixtures(fixtures::default_dir()).map_err(|e| e.to_string())?;
    ensure(report.passed(), format!("fixtures:\n{report}"))?;
    Ok(format!("{tvfs} TVF round trips, {compared} identical outputs, {} fixtures", report.results.len()))
}

// Runs without the libtest harness so the per-criterion lines are always
// printed, not only on failure.
fn main() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let exp = Experiment::new(plan(&dir.path().join("four"), FOUR_TASKS)).unwrap();
    let comparison = exp.regime_comparison().unwrap();
    exp.lambda_sweep(&comparison).unwrap();
    let run = Run {
        exp,
        comparison,
        train_time: start.elapsed(),
    };
    let xi_start = Instant::now();
    let xi = run.exp.disentanglement(&run.comparison).unwrap();
    let xi_time = xi_start.elapsed();

    let results: Vec<(usize, &str, Check)> = vec![
        (1, "algebraic identity", criterion1(&run)),
        (2, "gradient suite", criterion2()),
        (3, "freeze contracts", criterion3(&run)),
        (4, "disentanglement properties", criterion4(&run)),
        (5, "line-search protocol", criterion5(&run)),
        (6, "regime comparison", criterion6(&run)),
        (7, "probing vs addition", criterion7(&run)),
        (8, "pre-training and disentanglement", criterion8(&xi, xi_time)),
        (9, "task-count decay", criterion9(&dir.path().join("eight"))),
        (10, "formats and determinism", criterion10(&run, &dir.path().join("again"))),
    ];
    let mut failed = Vec::new();
    for (id, name, result) in &results {
        match result {
            Ok(detail) => println!("criterion {id:>2} PASS  {name}: {detail}"),
            Err(detail) => {
                println!("criterion {id:>2} FAIL  {name}: {detail}");
                failed.push(*id);
            }
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("all {} acceptance criteria passed", results.len());
}
