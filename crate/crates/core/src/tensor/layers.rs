use rand::Rng;

use super::ops::{gelu, gelu_backward};
use super::{gemm, matmul, Tensor2};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const RMS_EPS: f64 = 1e-6;

/// Affine map `y = x W + b` with `W: p x q`, `b: 1 x q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor2<T>,
    pub bias: Tensor2<T>,
}

impl<T: Scalar> Linear<T> {
    /// Uniform initialisation with bound `1/sqrt(p)` for weights and biases.
    pub fn new(p: usize, q: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (p.max(1) as f64).sqrt();
        Linear {
            weight: Tensor2::uniform(p, q, bound, rng).into_param(),
            bias: Tensor2::uniform(1, q, bound, rng).into_param(),
        }
    }

    pub fn zeros(p: usize, q: usize) -> Self {
        Linear {
            weight: Tensor2::zeros(p, q).into_param(),
            bias: Tensor2::zeros(1, q).into_param(),
        }
    }

    pub fn from_parts(weight: Tensor2<T>, bias: Tensor2<T>) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias {:?} does not match weight {:?}",
                bias.shape(),
                weight.shape()
            )));
        }
        Ok(Linear { weight: weight.into_param(), bias: bias.into_param() })
    }

    pub fn in_features(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Tensor2<T>) -> Result<Tensor2<T>> {
        if x.cols() != self.in_features() {
            return Err(Error::Shape(format!(
                "linear expects {} input features, got {}",
                self.in_features(),
                x.cols()
            )));
        }
        let mut y = Tensor2::zeros(x.rows(), self.out_features());
        for i in 0..x.rows() {
            y.row_mut(i).copy_from_slice(self.bias.data());
        }
        gemm(T::one(), x, false, &self.weight, false, T::one(), &mut y)?;
        Ok(y)
    }

    /// Accumulates weight and bias gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Tensor2<T>, dy: &Tensor2<T>) -> Result<Tensor2<T>> {
        self.accumulate(x, dy)?;
        self.backward_input(dy)
    }

    /// Input gradient only; parameter gradients untouched.
    pub fn backward_input(&self, dy: &Tensor2<T>) -> Result<Tensor2<T>> {
        matmul(dy, false, &self.weight, true)
    }

    fn accumulate(&mut self, x: &Tensor2<T>, dy: &Tensor2<T>) -> Result<()> {
        let dw = matmul(x, true, dy, false)?;
        self.weight.accumulate_grad(dw.data());
        let (_, gb) = self.bias.data_and_grad_mut();
        for i in 0..dy.rows() {
            for (g, &d) in gb.iter_mut().zip(dy.row(i)) {
                *g += d;
            }
        }
        Ok(())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor2<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor2<T>)) {
        f(&format!("{prefix}.weight"), &self.weight);
        f(&format!("{prefix}.bias"), &self.bias);
    }
}

/// Row-wise `x / sqrt(mean(x^2) + eps) * gain`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsNorm<T> {
    pub gain: Tensor2<T>,
}

impl<T: Scalar> RmsNorm<T> {
    pub fn new(d: usize) -> Self {
        RmsNorm { gain: Tensor2::filled(1, d, T::one()).into_param() }
    }

    /// Output and the per-row inverse RMS needed by `backward`.
    pub fn forward(&self, x: &Tensor2<T>) -> Result<(Tensor2<T>, Vec<T>)> {
        let d = self.gain.cols();
        if x.cols() != d {
            return Err(Error::Shape(format!("rmsnorm expects width {d}, got {}", x.cols())));
        }
        let eps = T::of(RMS_EPS);
        let inv_d = T::one() / T::of(d as f64);
        let mut y = Tensor2::zeros(x.rows(), d);
        let mut inv = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let ms = row.iter().map(|&v| v * v).sum::<T>() * inv_d;
            let r = T::one() / (ms + eps).sqrt();
            for ((o, &v), &g) in y.row_mut(i).iter_mut().zip(row).zip(self.gain.data()) {
                *o = v * r * g;
            }
            inv.push(r);
        }
        Ok((y, inv))
    }

    pub fn backward(&mut self, x: &Tensor2<T>, inv_rms: &[T], dy: &Tensor2<T>) -> Tensor2<T> {
        let d = self.gain.cols();
        let inv_d = T::one() / T::of(d as f64);
        let mut dx = Tensor2::zeros(x.rows(), d);
        let mut dgain = vec![T::zero(); d];
        let gain = self.gain.data().to_vec();
        for i in 0..x.rows() {
            let (row, g_row, r) = (x.row(i), dy.row(i), inv_rms[i]);
            let mut dot = T::zero();
            for k in 0..d {
                dot += g_row[k] * gain[k] * row[k];
                dgain[k] += g_row[k] * row[k] * r;
            }
            let c = r * r * r * dot * inv_d;
            for (k, o) in dx.row_mut(i).iter_mut().enumerate() {
                *o = r * gain[k] * g_row[k] - c * row[k];
            }
        }
        self.gain.accumulate_grad(&dgain);
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor2<T>)) {
        f(&format!("{prefix}.gain"), &mut self.gain);
    }

    pub fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor2<T>)) {
        f(&format!("{prefix}.gain"), &self.gain);
    }
}

/// `out(GeLU(left x) * (right x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedMlp<T> {
    pub left: Linear<T>,
    pub right: Linear<T>,
    pub out: Linear<T>,
}

/// Intermediates of a gated MLP forward pass.
#[derive(Debug, Clone)]
pub struct GatedMlpCache<T> {
    left: Tensor2<T>,
    activated: Tensor2<T>,
    gate: Tensor2<T>,
    hidden: Tensor2<T>,
}

impl<T: Scalar> GatedMlp<T> {
    pub fn new(d: usize, expansion: usize, rng: &mut impl Rng) -> Self {
        GatedMlp {
            left: Linear::new(d, expansion * d, rng),
            right: Linear::new(d, expansion * d, rng),
            out: Linear::new(expansion * d, d, rng),
        }
    }

    pub fn forward(&self, x: &Tensor2<T>) -> Result<(Tensor2<T>, GatedMlpCache<T>)> {
        let left = self.left.forward(x)?;
        let gate = self.right.forward(x)?;
        let activated = gelu(&left);
        let data = activated.data().iter().zip(gate.data()).map(|(&a, &g)| a * g).collect();
        let hidden = Tensor2::from_vec(left.rows(), left.cols(), data)?;
        let y = self.out.forward(&hidden)?;
        Ok((y, GatedMlpCache { left, activated, gate, hidden }))
    }

    pub fn backward(&mut self, x: &Tensor2<T>, cache: &GatedMlpCache<T>, dy: &Tensor2<T>) -> Result<Tensor2<T>> {
        let dh = self.out.backward(&cache.hidden, dy)?;
        let (rows, cols) = dh.shape();
        let d_act: Vec<T> = dh.data().iter().zip(cache.gate.data()).map(|(&a, &b)| a * b).collect();
        let d_gate: Vec<T> = dh.data().iter().zip(cache.activated.data()).map(|(&a, &b)| a * b).collect();
        let d_left = gelu_backward(&cache.left, &Tensor2::from_vec(rows, cols, d_act)?);
        let mut dx = self.left.backward(x, &d_left)?;
        dx.add_assign(&self.right.backward(x, &Tensor2::from_vec(rows, cols, d_gate)?)?)?;
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor2<T>)) {
        self.left.visit_params(&format!("{prefix}.left"), f);
        self.right.visit_params(&format!("{prefix}.right"), f);
        self.out.visit_params(&format!("{prefix}.out"), f);
    }

    pub fn visit_params_ref(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor2<T>)) {
        self.left.visit_params_ref(&format!("{prefix}.left"), f);
        self.right.visit_params_ref(&format!("{prefix}.right"), f);
        self.out.visit_params_ref(&format!("{prefix}.out"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_linear_passes_input_through() {
        let x = Tensor2::<f64>::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0]]).unwrap();
        let l = Linear::from_parts(Tensor2::identity(2), Tensor2::zeros(1, 2)).unwrap();
        assert_eq!(l.forward(&x).unwrap(), x);
    }

    #[test]
    fn hand_computed_linear() {
        let x = Tensor2::<f64>::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let l = Linear::from_parts(
            Tensor2::from_rows(&[vec![1.0], vec![1.0]]).unwrap(),
            Tensor2::from_rows(&[vec![3.0]]).unwrap(),
        )
        .unwrap();
        assert_eq!(l.forward(&x).unwrap().data(), &[6.0]);
        assert!(l.forward(&Tensor2::zeros(1, 3)).is_err());
    }

    #[test]
    fn rmsnorm_of_constant_and_zero_rows() {
        let n = RmsNorm::<f64>::new(4);
        let x = Tensor2::from_rows(&[vec![-2.5; 4], vec![0.0; 4]]).unwrap();
        let (y, _) = n.forward(&x).unwrap();
        for &v in y.row(0) {
            assert!((v + 1.0).abs() < 1e-6);
        }
        assert!(y.row(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gated_mlp_degenerate_gates() {
        let mut rng = rand::rng();
        let x = Tensor2::<f64>::uniform(3, 4, 1.0, &mut rng);
        let mut m = GatedMlp::<f64>::new(4, 3, &mut rng);
        // Constant unit gate reduces to a plain GeLU MLP.
        m.right = Linear::from_parts(Tensor2::zeros(4, 12), Tensor2::filled(1, 12, 1.0)).unwrap();
        let (y, _) = m.forward(&x).unwrap();
        let plain = m.out.forward(&gelu(&m.left.forward(&x).unwrap())).unwrap();
        assert!(y.max_abs_diff(&plain) < 1e-14);
        // Zero left branch kills the product.
        m.left = Linear::zeros(4, 12);
        let (y, _) = m.forward(&x).unwrap();
        for i in 0..3 {
            assert_eq!(y.row(i), m.out.bias.data());
        }
    }
}
