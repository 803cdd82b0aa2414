//! Central finite-difference checks of the tape's gradients.

use super::model::{classification_objective, init_encoder, init_head, params_from_snapshot, Trainable};
use super::tape::{Mat, Tape, Var};
use super::ModelConfig;
use crate::rng::SeededRng;

/// Step used by [`max_rel_error`].
pub const EPS: f64 = 1e-3;

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub name: &'static str,
    pub params: usize,
    pub max_rel_error: f64,
}

/// Largest relative error between tape gradients of every leaf and central
/// differences of `build`, which is re-run from scratch per perturbation.
/// The denominator is floored at `1e-3` so near-zero gradients compare
/// absolutely.
pub fn max_rel_error<F>(leaves: &[Mat], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss);
    let eval = |ls: &[Mat]| {
        let mut t = Tape::new();
        let vs: Vec<Var> = ls.iter().map(|m| t.leaf(m.clone())).collect();
        let l = build(&mut t, &vs);
        t.value(l).scalar()
    };
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        for k in 0..leaf.data.len() {
            let mut plus = leaves.to_vec();
            plus[li].data[k] += EPS;
            let mut minus = leaves.to_vec();
            minus[li].data[k] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let analytic = grads.get(vars[li]).map_or(0.0, |g| g.data[k]);
            let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    worst
}

fn random_mat(rng: &mut SeededRng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
}

fn op_check<F>(name: &'static str, leaves: Vec<Mat>, build: F) -> LayerCheck
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    LayerCheck {
        name,
        params: leaves.iter().map(|m| m.data.len()).sum(),
        max_rel_error: max_rel_error(&leaves, build),
    }
}

/// Checks a whole classifier through [`classification_objective`] with
/// every parameter trainable.
fn model_check(name: &'static str, config: &ModelConfig, seed: u64) -> LayerCheck {
    let rng = SeededRng::new(seed);
    let mut values = params_from_snapshot(&init_encoder(config, &rng).expect("valid config"));
    values.extend(params_from_snapshot(&init_head(config.feature_dim, 3, &rng.split("head")).expect("3 classes")));
    let mut r = rng.split("batch");
    let x = random_mat(&mut r, 4, config.input_dim);
    let labels = [0, 2, 1, 2];
    let (_, grads) = classification_objective(config, &values, &x, &labels, Trainable::All);
    let loss = |v: &super::ParamValues| classification_objective(config, v, &x, &labels, Trainable::All).0;
    let mut worst: f64 = 0.0;
    for (key, m) in &values {
        for k in 0..m.data.len() {
            let mut plus = values.clone();
            plus.get_mut(key).expect("key").data[k] += EPS;
            let mut minus = values.clone();
            minus.get_mut(key).expect("key").data[k] -= EPS;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * EPS);
            let analytic = grads[key].data[k];
            worst = worst.max((numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-3));
        }
    }
    LayerCheck {
        name,
        params: values.values().map(|m| m.data.len()).sum(),
        max_rel_error: worst,
    }
}

/// Every differentiable operation plus a small mlp and attention
/// classifier, each under 1k parameters, on seeded inputs.
pub fn layer_suite() -> Vec<LayerCheck> {
    let rng = SeededRng::new(1);
    let probe = |rows, cols| random_mat(&mut rng.split(&format!("probe{rows}x{cols}")), rows, cols);
    let w43 = probe(4, 3);
    let w32 = probe(3, 2);
    let w34 = probe(3, 4);
    let w35 = probe(3, 5);
    let w24 = probe(2, 4);
    let w33 = probe(3, 3);
    let w23 = probe(2, 3);
    let mut r = SeededRng::new(2);
    let mut m = |rows, cols| random_mat(&mut r, rows, cols);
    let mask = Mat::from_vec(4, 3, (0..12).map(|i| (i % 2) as f64).collect());
    let mse_mask = Mat::from_vec(3, 4, (0..12).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect());
    let target = m(3, 4);
    let mut checks = vec![
        op_check("dense", vec![m(4, 5), m(3, 5), m(1, 3)], |t, v| {
            let y = t.matmul_nt(v[0], v[1]);
            let y = t.add_row(y, v[2]);
            t.weighted_sum(y, w43.clone())
        }),
        op_check("matmul/add/scale", vec![m(3, 4), m(4, 2), m(3, 2)], |t, v| {
            let y = t.matmul(v[0], v[1]);
            let y = t.add(y, v[2]);
            let y = t.scale(y, 0.7);
            t.weighted_sum(y, w32.clone())
        }),
        op_check("gelu", vec![m(3, 4)], |t, v| {
            let y = t.gelu(v[0]);
            t.weighted_sum(y, w34.clone())
        }),
        op_check("layer_norm", vec![m(3, 5), m(1, 5), m(1, 5)], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]);
            t.weighted_sum(y, w35.clone())
        }),
        op_check("softmax", vec![m(2, 4)], |t, v| {
            let y = t.softmax_rows(v[0]);
            t.weighted_sum(y, w24.clone())
        }),
        op_check("normalize_rows", vec![m(3, 3)], |t, v| {
            let y = t.normalize_rows(v[0]);
            t.weighted_sum(y, w33.clone())
        }),
        op_check("slice/concat/reshape/pool", vec![m(4, 3), m(1, 3)], |t, v| {
            let a = t.slice_rows(v[0], 0, 2);
            let b = t.slice_rows(v[0], 2, 2);
            let c = t.concat_rows(&[b, a]);
            let mm = t.row_times_const(v[1], mask.clone());
            let c = t.add(c, mm);
            let r = t.reshape(c, 6, 2);
            let r = t.reshape(r, 4, 3);
            let p = t.mean_pool_groups(r, 2);
            let p = t.add_const(p, &Mat::from_vec(2, 3, vec![1.0; 6]));
            t.weighted_sum(p, w23.clone())
        }),
        op_check("cross_entropy", vec![m(5, 3)], |t, v| t.cross_entropy(v[0], &[0, 2, 1, 1, 0])),
        op_check("masked_mse", vec![m(3, 4)], |t, v| t.masked_mse(v[0], target.clone(), mse_mask.clone())),
    ];
    checks.push(model_check("mlp classifier", &ModelConfig::mlp(6, vec![8, 8], 5), 3));
    checks.push(model_check("attn classifier", &ModelConfig::attn(3, 4, 1, 4), 4));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn models_stay_under_1k_parameters() {
        for c in layer_suite() {
            assert!(c.params <= 1000, "{} has {} parameters", c.name, c.params);
            assert!(c.max_rel_error < 1e-4, "{}: {}", c.name, c.max_rel_error);
        }
    }

    #[test]
    fn a_wrong_gradient_is_detected() {
        // The leaf is copied into a fresh constant, so the tape reports no
        // gradient while the loss clearly depends on it.
        let leaves = [Mat::from_vec(1, 2, vec![0.3, -0.7])];
        let err = max_rel_error(&leaves, |t, v| {
            let c = t.value(v[0]).clone();
            let k = t.leaf(c);
            t.weighted_sum(k, Mat::from_vec(1, 2, vec![1.0, 1.0]))
        });
        assert!(err > 0.5);
    }
}
