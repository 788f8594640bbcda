//! Central finite-difference oracle for reverse-mode rules.
//!
//! The scalar objective is `Σ r ⊙ op(inputs)` for a fixed random projection
//! `r`, so rules whose plain sum has a vanishing gradient (batch
//! normalization, for one) are still exercised. Numeric derivatives are
//! formed per output element before projecting:
//! `Σ_k r_k · (y⁺_k − y⁻_k) / (x⁺ − x⁻)`, dividing by the step that was
//! actually representable.

use super::{Shape, Tape, Tensor, TensorError};

pub const STEP: f64 = 1e-5;
pub const EPS_ABS: f64 = 1e-8;
pub const MAX_RESAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub op: String,
    pub max_rel_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GradCheckError {
    #[error("{op}: every input draw was degenerate after {attempts} resamples")]
    Degenerate { op: String, attempts: usize },
    #[error(transparent)]
    Op(#[from] TensorError),
}

/// `|analytic − numeric| / max(|analytic|, |numeric|, EPS_ABS)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(EPS_ABS);
    (analytic - numeric).abs() / scale
}

/// Checks `op` at inputs drawn uniformly from `[-1, 1)` with the given
/// shapes.
pub fn grad_check<F>(
    name: &str,
    shapes: &[Shape],
    seed: u64,
    op: F,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    grad_check_with(name, shapes, seed, op, |_| false)
}

/// Like [`grad_check`], redrawing the inputs while `degenerate` reports
/// them too close to a point of non-differentiability.
pub fn grad_check_with<F, D>(
    name: &str,
    shapes: &[Shape],
    seed: u64,
    op: F,
    degenerate: D,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
    D: Fn(&[Tensor<f64>]) -> bool,
{
    for attempt in 0..=MAX_RESAMPLES as u64 {
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, &s)| Tensor::uniform(s, -1.0, 1.0, draw_seed(seed, attempt, i as u64)))
            .collect();
        if degenerate(&inputs) {
            continue;
        }
        return grad_check_at(name, &inputs, seed, op);
    }
    Err(GradCheckError::Degenerate {
        op: name.to_string(),
        attempts: MAX_RESAMPLES,
    })
}

/// Checks `op` at an explicit point.
pub fn grad_check_at<F>(
    name: &str,
    inputs: &[Tensor<f64>],
    seed: u64,
    op: F,
) -> Result<GradCheckReport, GradCheckError>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Tensor<f64>> = inputs.iter().map(|x| tape.leaf(x)).collect();
    let out = op(&mut tape, &leaves)?;
    let projection = Tensor::uniform(out.shape(), -1.0, 1.0, seed ^ 0x9e37_79b9_7f4a_7c15);
    let weighted = tape.mul(&out, &projection)?;
    let root = tape.sum(&weighted);
    let grads = tape.backward(&root)?;

    let mut max_rel_error = 0.0_f64;
    let mut checked = 0;
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .get(leaf)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; leaf.numel()]);
        for j in 0..leaf.numel() {
            let x = inputs[i].data()[j];
            let (xp, xm) = (x + STEP, x - STEP);
            let step = xp - xm;
            let yp = eval_perturbed(&op, inputs, i, j, xp)?;
            let ym = eval_perturbed(&op, inputs, i, j, xm)?;
            let numeric: f64 = yp
                .data()
                .iter()
                .zip(ym.data())
                .zip(projection.data())
                .map(|((&p, &m), &r)| r * ((p - m) / step))
                .sum();
            max_rel_error = max_rel_error.max(relative_error(analytic[j], numeric));
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        op: name.to_string(),
        max_rel_error,
        checked,
    })
}

fn eval_perturbed<F>(
    op: &F,
    inputs: &[Tensor<f64>],
    which: usize,
    element: usize,
    value: f64,
) -> Result<Tensor<f64>, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Tensor<f64>]) -> Result<Tensor<f64>, TensorError>,
{
    let mut shifted = inputs.to_vec();
    shifted[which].data_mut()[element] = value;
    let mut tape = Tape::inference();
    op(&mut tape, &shifted)
}

fn draw_seed(seed: u64, attempt: u64, input: u64) -> u64 {
    seed.wrapping_mul(0x2545_f491_4f6c_dd1d)
        .wrapping_add(attempt << 32)
        .wrapping_add(input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_exact() {
        let report = grad_check("identity", &[Shape::new(2, 3, 5)], 1, |tape, x| {
            Ok(tape.identity(&x[0]))
        })
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.checked, 30);
    }

    #[test]
    fn composite_of_three_ops() {
        for seed in 0..5 {
            let report = grad_check(
                "mul-add-scale",
                &[Shape::new(2, 3, 4), Shape::new(2, 3, 1), Shape::new(2, 3, 4)],
                seed,
                |tape, x| {
                    let p = tape.mul(&x[0], &x[1])?;
                    let q = tape.add(&p, &x[2])?;
                    let r = tape.mul(&q, &x[0])?;
                    Ok(tape.scale(&r, 0.7))
                },
            )
            .unwrap();
            assert!(report.passes(1e-4), "{report:?}");
        }
    }

    #[test]
    fn degenerate_draws_are_reported() {
        let err = grad_check_with(
            "never",
            &[Shape::new(1, 1, 2)],
            0,
            |tape, x| Ok(tape.identity(&x[0])),
            |_| true,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            GradCheckError::Degenerate {
                attempts: MAX_RESAMPLES,
                ..
            }
        ));
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(1e-9, 0.0) - 0.1).abs() < 1e-12);
    }
}
