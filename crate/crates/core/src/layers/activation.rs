use crate::tensor::{Backward, Element, Tape, Tensor};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// `λ·x` for `x > 0`, `λ·α·(eˣ − 1)` otherwise.
pub fn selu<T: Element>(tape: &mut Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let (lambda, la) = (T::lit(SELU_LAMBDA), T::lit(SELU_LAMBDA * SELU_ALPHA));
    let out = x
        .data()
        .iter()
        .map(|&v| if v > T::zero() { lambda * v } else { la * v.exp_m1() })
        .collect();
    let value = Tensor::from_parts(x.shape(), out);
    tape.record(value, &[x], SeluBackward { x: x.detach() })
}

struct SeluBackward<T> {
    x: Tensor<T>,
}

impl<T: Element> Backward<T> for SeluBackward<T> {
    fn name(&self) -> &'static str {
        "selu"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let (lambda, la) = (T::lit(SELU_LAMBDA), T::lit(SELU_LAMBDA * SELU_ALPHA));
        let dx = self
            .x
            .data()
            .iter()
            .zip(grad)
            .map(|(&v, &g)| g * if v > T::zero() { lambda } else { la * v.exp() })
            .collect();
        vec![Some(dx)]
    }
}

/// Logistic function, evaluated without overflow for large `|x|`.
pub fn sigmoid_scalar<T: Element>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Element>(tape: &mut Tape<T>, x: &Tensor<T>) -> Tensor<T> {
    let out: Vec<T> = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
    let value = Tensor::from_parts(x.shape(), out);
    let saved = value.clone();
    tape.record(value, &[x], SigmoidBackward { y: saved })
}

struct SigmoidBackward<T> {
    y: Tensor<T>,
}

impl<T: Element> Backward<T> for SigmoidBackward<T> {
    fn name(&self) -> &'static str {
        "sigmoid"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let dx = self
            .y
            .data()
            .iter()
            .zip(grad)
            .map(|(&y, &g)| g * y * (T::one() - y))
            .collect();
        vec![Some(dx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check_with, Shape};

    fn apply(f: fn(&mut Tape<f64>, &Tensor<f64>) -> Tensor<f64>, v: &[f64]) -> Vec<f64> {
        let x = Tensor::from_vec((1, 1, v.len()), v.to_vec()).unwrap();
        f(&mut Tape::inference(), &x).into_vec()
    }

    #[test]
    fn selu_values() {
        let y = apply(selu, &[0.0, 1.0, -800.0, 1e-12, -1e-12]);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 1.0507009873554805);
        assert!((y[2] + SELU_LAMBDA * SELU_ALPHA).abs() < 1e-15);
        assert!((y[2] + 1.7581).abs() < 1e-4);
        assert!(y[3].abs() < 1e-11 && y[4].abs() < 1e-11);
    }

    #[test]
    fn sigmoid_values() {
        let y = apply(sigmoid, &[0.0, 2.0, 100.0, -100.0]);
        assert_eq!(y[0], 0.5);
        assert!((y[1] - 0.8807970779778823).abs() < 1e-15);
        assert!(y.iter().all(|v| v.is_finite()));
        assert!(y[3] > 0.0 && y[2] <= 1.0);
        for x in [-30.0, -2.5, -0.1, 0.7, 13.0] {
            let s: f64 = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_checks() {
        let near_kink = |v: &[Tensor<f64>]| v[0].data().iter().any(|x| x.abs() < 1e-3);
        for seed in 0..5 {
            let r = grad_check_with("selu", &[Shape::new(2, 3, 7)], seed, |t, v| Ok(selu(t, &v[0])), near_kink)
                .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
            let r = grad_check_with("sigmoid", &[Shape::new(2, 3, 7)], seed, |t, v| Ok(sigmoid(t, &v[0])), |_| false)
                .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }
}
