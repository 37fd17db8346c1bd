use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor2;

const STD_FLOOR: f64 = 1e-8;

/// Per-feature mean and standard deviation of model inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

/// Streaming mean/variance accumulator (Welford) per column.
#[derive(Debug, Clone)]
pub struct MomentAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(width: usize) -> Self {
        MomentAccumulator { count: 0, mean: vec![0.0; width], m2: vec![0.0; width] }
    }

    pub fn push(&mut self, row: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(row) {
            let d = x - *m;
            *m += d / n;
            *s += d * (x - *m);
        }
    }

    pub fn push_rows(&mut self, t: &Tensor2<f64>) {
        for i in 0..t.rows() {
            self.push(t.row(i));
        }
    }

    /// Mean and population standard deviation, floored.
    pub fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.count.max(1) as f64;
        let std = self.m2.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        (self.mean.clone(), std)
    }
}

impl NormStats {
    pub fn identity(inputs: usize, outputs: usize) -> Self {
        NormStats {
            input_mean: vec![0.0; inputs],
            input_std: vec![1.0; inputs],
            output_mean: vec![0.0; outputs],
            output_std: vec![1.0; outputs],
        }
    }

    /// Fits statistics over all rows of the given input and output tensors.
    pub fn fit<'a>(
        inputs: impl IntoIterator<Item = &'a Tensor2<f64>>,
        outputs: impl IntoIterator<Item = &'a Tensor2<f64>>,
    ) -> Result<Self> {
        let mut inputs = inputs.into_iter().peekable();
        let mut outputs = outputs.into_iter().peekable();
        let (Some(fi), Some(fo)) = (inputs.peek(), outputs.peek()) else {
            return Err(Error::InvalidArgument("cannot fit statistics on an empty corpus".into()));
        };
        let mut acc_in = MomentAccumulator::new(fi.cols());
        let mut acc_out = MomentAccumulator::new(fo.cols());
        inputs.for_each(|t| acc_in.push_rows(t));
        outputs.for_each(|t| acc_out.push_rows(t));
        let (input_mean, input_std) = acc_in.finish();
        let (output_mean, output_std) = acc_out.finish();
        Ok(NormStats { input_mean, input_std, output_mean, output_std })
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.input_mean.len() == self.input_std.len()
            && self.output_mean.len() == self.output_std.len()
            && self.input_std.iter().chain(&self.output_std).all(|s| s.is_finite() && *s > 0.0)
            && self.input_mean.iter().chain(&self.output_mean).all(|m| m.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config("normalisation statistics are inconsistent".into()))
        }
    }

    pub fn normalize_inputs<T: Scalar>(&self, x: &Tensor2<f64>) -> Tensor2<T> {
        apply(x, &self.input_mean, &self.input_std)
    }

    pub fn normalize_outputs<T: Scalar>(&self, y: &Tensor2<f64>) -> Tensor2<T> {
        apply(y, &self.output_mean, &self.output_std)
    }

    pub fn denormalize_outputs<T: Scalar>(&self, y: &Tensor2<T>) -> Tensor2<f64> {
        let mut out = Tensor2::zeros(y.rows(), y.cols());
        for i in 0..y.rows() {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = y.get(i, j).as_f64() * self.output_std[j] + self.output_mean[j];
            }
        }
        out
    }

    pub fn denormalize_inputs(&self, x: &Tensor2<f64>) -> Tensor2<f64> {
        let mut out = x.clone();
        for i in 0..x.rows() {
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = *o * self.input_std[j] + self.input_mean[j];
            }
        }
        out
    }
}

fn apply<T: Scalar>(x: &Tensor2<f64>, mean: &[f64], std: &[f64]) -> Tensor2<T> {
    assert_eq!(x.cols(), mean.len(), "feature width does not match the statistics");
    let mut out = Tensor2::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        for (j, (o, &v)) in out.row_mut(i).iter_mut().zip(x.row(i)).enumerate() {
            *o = T::of((v - mean[j]) / std[j]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_feature_and_constant_feature() {
        let x = Tensor2::from_rows(&[vec![0.0, 5.0], vec![2.0, 5.0]]).unwrap();
        let y = Tensor2::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let s = NormStats::fit([&x], [&y]).unwrap();
        assert_eq!(s.input_mean, vec![1.0, 5.0]);
        assert_eq!(s.input_std, vec![1.0, STD_FLOOR]);
        let z: Tensor2<f64> = s.normalize_inputs(&x);
        assert_eq!(z.get(0, 1), 0.0);
        assert_eq!(z.get(0, 0), -1.0);
    }

    #[test]
    fn round_trip_is_identity() {
        let mut rng = rand::rng();
        let x = Tensor2::<f64>::uniform(50, 3, 40.0, &mut rng);
        let s = NormStats::fit([&x], [&x]).unwrap();
        let z: Tensor2<f64> = s.normalize_outputs(&x);
        let back = s.denormalize_outputs(&z);
        assert!(back.max_abs_diff(&x) < 1e-10);
        // Normalised columns have zero mean and unit variance.
        let fitted = NormStats::fit([&z], [&z]).unwrap();
        for j in 0..3 {
            assert!(fitted.input_mean[j].abs() < 1e-6);
            assert!((fitted.input_std[j].powi(2) - 1.0).abs() < 1e-4);
        }
    }
}
