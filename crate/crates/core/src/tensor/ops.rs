use super::{check_same, Tensor2};
use crate::error::Result;
use crate::scalar::Scalar;

pub fn relu<T: Scalar>(x: &Tensor2<T>) -> Tensor2<T> {
    map(x, |v| v.max(T::zero()))
}

/// Gradient of `relu` given its input `x`.
pub fn relu_backward<T: Scalar>(x: &Tensor2<T>, dy: &Tensor2<T>) -> Tensor2<T> {
    zip(x, dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

/// `tanh` through a single `exp`; saturates cleanly at both ends.
#[inline]
fn tanh_exp<T: Scalar>(u: T) -> T {
    let two = T::of(2.0);
    T::one() - two / (T::one() + (two * u).exp())
}

/// Tanh approximation of GeLU.
pub fn gelu<T: Scalar>(x: &Tensor2<T>) -> Tensor2<T> {
    let (c, k, half) = (T::of(SQRT_2_OVER_PI), T::of(GELU_CUBIC), T::of(0.5));
    map(x, |v| half * v * (T::one() + tanh_exp(c * (v + k * v * v * v))))
}

pub fn gelu_backward<T: Scalar>(x: &Tensor2<T>, dy: &Tensor2<T>) -> Tensor2<T> {
    let (c, k, half, three) = (T::of(SQRT_2_OVER_PI), T::of(GELU_CUBIC), T::of(0.5), T::of(3.0));
    zip(x, dy, |v, g| {
        let t = tanh_exp(c * (v + k * v * v * v));
        let d = half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + three * k * v * v);
        g * d
    })
}

/// Mean of squared differences over all entries, with its gradient wrt `pred`.
pub fn mse_loss<T: Scalar>(pred: &Tensor2<T>, target: &Tensor2<T>) -> Result<(T, Tensor2<T>)> {
    check_same(pred, target, "mse_loss")?;
    let n = T::of(pred.len().max(1) as f64);
    let mut sum = T::zero();
    let two = T::of(2.0);
    let grad = zip(pred, target, |p, t| {
        let d = p - t;
        sum += d * d;
        two * d / n
    });
    Ok((sum / n, grad))
}

fn map<T: Scalar>(x: &Tensor2<T>, f: impl Fn(T) -> T) -> Tensor2<T> {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor2::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

fn zip<T: Scalar>(a: &Tensor2<T>, b: &Tensor2<T>, mut f: impl FnMut(T, T) -> T) -> Tensor2<T> {
    assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor2::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor2<f64> {
        Tensor2::from_vec(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[-1.0, 2.0])).data(), &[0.0, 2.0]);
        assert_eq!(relu_backward(&t(&[-1.0, 2.0]), &t(&[5.0, 5.0])).data(), &[0.0, 5.0]);
    }

    #[test]
    fn gelu_matches_reference_values_and_finite_differences() {
        let y = gelu(&t(&[0.0, 1.0, -1.0]));
        // Reference: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
        let r = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        for (v, x) in y.data().iter().zip([0.0, 1.0, -1.0]) {
            assert!((v - r(x)).abs() < 1e-15);
        }
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (r(x + h) - r(x - h)) / (2.0 * h);
            let g = gelu_backward(&t(&[x]), &t(&[1.0])).data()[0];
            assert!((fd - g).abs() < 1e-8, "x = {x}");
        }
    }

    #[test]
    fn mse_examples() {
        let a = Tensor2::<f64>::from_vec(2, 3, vec![1.0; 6]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let b = Tensor2::<f64>::zeros(2, 3);
        let (l, g) = mse_loss(&a, &b).unwrap();
        assert_eq!(l, 1.0);
        assert!(g.data().iter().all(|&v| (v - 2.0 / 6.0).abs() < 1e-15));
        assert!(mse_loss(&a, &Tensor2::zeros(3, 2)).is_err());
    }
}
