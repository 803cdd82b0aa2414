//! Dense `f32` tensors and the few element-wise kernels the rest of the
//! crate builds on.
//!
//! Reductions accumulate in `f64`, strictly left to right over the flat
//! row-major buffer, and round once at the end.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Row-major `f32` tensor.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_slice(values: &[f32]) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Bitwise equality, distinguishing `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// Little-endian byte image of the data.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0f64, |acc, &v| acc + v as f64)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub(crate) fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// `a * x + y`, computed in `f64` and rounded once per element.
///
/// When `a * x[i]` is zero the output element is `y[i]` bit for bit, so
/// `a = 0` reproduces `y` exactly (including signed zeros).
pub fn elementwise_axpy(a: f32, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    x.check_same_shape(y)?;
    let data = x
        .data
        .iter()
        .zip(&y.data)
        .map(|(&xi, &yi)| {
            let delta = a as f64 * xi as f64;
            if delta == 0.0 {
                yi
            } else {
                (yi as f64 + delta) as f32
            }
        })
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Tensor of independent `N(mean, std^2)` draws.
pub fn gaussian_sample(rng: &mut SeededRng, shape: &[usize], mean: f32, std: f32) -> Result<Tensor> {
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian needs finite mean and std >= 0, got mean={mean}, std={std}"
        )));
    }
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| (mean as f64 + std as f64 * rng.normal()) as f32)
        .collect();
    Ok(Tensor {
        shape: shape.to_vec(),
        data,
    })
}

/// Tensor of independent `U(lo, hi)` draws.
pub fn uniform_sample(rng: &mut SeededRng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.uniform(lo as f64, hi as f64) as f32)
        .collect();
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn axpy_examples() {
        let x = Tensor::from_slice(&[1.0, 2.0]);
        let y = Tensor::from_slice(&[3.0, 4.0]);
        assert_eq!(elementwise_axpy(1.0, &x, &y).unwrap().data(), &[4.0, 6.0]);

        let x = Tensor::from_slice(&[2.0, -2.0]);
        let y = Tensor::from_slice(&[1.0, 1.0]);
        assert_eq!(elementwise_axpy(0.5, &x, &y).unwrap().data(), &[2.0, 0.0]);
    }

    #[test]
    fn axpy_zero_scale_is_identity_bitwise() {
        let x = Tensor::from_slice(&[7.0, -3.5, 1e30]);
        let y = Tensor::from_slice(&[-0.0, 0.25, f32::MIN_POSITIVE]);
        let out = elementwise_axpy(0.0, &x, &y).unwrap();
        assert!(out.bit_eq(&y));
    }

    #[test]
    fn axpy_shape_mismatch_names_both_shapes() {
        let x = Tensor::zeros(&[2, 3]);
        let y = Tensor::zeros(&[3, 2]);
        let err = elementwise_axpy(1.0, &x, &y).unwrap_err().to_string();
        assert!(err.contains("incompatible shapes"));
        assert!(err.contains("[2, 3]") && err.contains("[3, 2]"));
    }

    #[test]
    fn gaussian_degenerate_and_deterministic() {
        let mut rng = SeededRng::new(5);
        let t = gaussian_sample(&mut rng, &[4, 4], 1.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&v| v == 1.5));

        let a = gaussian_sample(&mut SeededRng::new(9), &[64], 0.0, 1.0).unwrap();
        let b = gaussian_sample(&mut SeededRng::new(9), &[64], 0.0, 1.0).unwrap();
        assert!(a.bit_eq(&b));

        let c = gaussian_sample(&mut SeededRng::new(1), &[64], 0.0, 1.0).unwrap();
        let d = gaussian_sample(&mut SeededRng::new(2), &[64], 0.0, 1.0).unwrap();
        let differing = c.data().iter().zip(d.data()).filter(|(x, y)| x != y).count();
        assert_eq!(differing, 64);
    }

    #[test]
    fn gaussian_rejects_negative_std() {
        let err = gaussian_sample(&mut SeededRng::new(0), &[2], 0.0, -1.0).unwrap_err();
        assert!(err.to_string().contains("invalid parameter"));
    }

    #[test]
    fn gaussian_mean_within_five_sigma() {
        let n = 4096;
        let t = gaussian_sample(&mut SeededRng::new(77), &[n], 2.0, 3.0).unwrap();
        assert!((t.mean() - 2.0).abs() < 5.0 * 3.0 / (n as f64).sqrt());
    }

    proptest! {
        #[test]
        fn axpy_exact_on_small_integers(
            a in -64i32..64,
            xs in proptest::collection::vec(-4096i32..4096, 1..32),
            seed in any::<u64>(),
        ) {
            let mut rng = SeededRng::new(seed);
            let ys: Vec<i32> = xs.iter().map(|_| rng.below(8192) as i32 - 4096).collect();
            let x = Tensor::from_slice(&xs.iter().map(|&v| v as f32).collect::<Vec<_>>());
            let y = Tensor::from_slice(&ys.iter().map(|&v| v as f32).collect::<Vec<_>>());
            let out = elementwise_axpy(a as f32, &x, &y).unwrap();
            for ((o, xi), yi) in out.data().iter().zip(&xs).zip(&ys) {
                prop_assert_eq!(*o, (a * xi + yi) as f32);
            }
        }
    }
}
