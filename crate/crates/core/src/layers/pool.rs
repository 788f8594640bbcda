use crate::tensor::{Backward, Element, Shape, Tape, Tensor, TensorError};

use super::conv::conv_output_len;

/// Windowed maximum over time. Padding positions act as −∞; the gradient
/// goes to the first (lowest index) maximal element of each window.
pub fn maxpool1d<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    if padding >= kernel {
        return Err(TensorError::shape(
            "maxpool1d",
            format!("padding {padding} must be smaller than kernel {kernel}"),
        ));
    }
    let out_len = conv_output_len(s.len, kernel, stride, padding)
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            TensorError::shape(
                "maxpool1d",
                format!("kernel {kernel} leaves no output for length {} (padding {padding})", s.len),
            )
        })?;
    let rows = s.batch * s.channels;
    let mut out = Vec::with_capacity(rows * out_len);
    let mut argmax = Vec::with_capacity(rows * out_len);
    for (r, row) in x.data().chunks(s.len).enumerate() {
        for t in 0..out_len {
            let start = (t * stride).saturating_sub(padding);
            let end = (t * stride + kernel - padding).min(s.len);
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            argmax.push(r * s.len + best);
        }
    }
    let value = Tensor::from_parts(Shape::new(s.batch, s.channels, out_len), out);
    Ok(tape.record(value, &[x], MaxPoolBackward { argmax, numel: s.numel() }))
}

struct MaxPoolBackward {
    argmax: Vec<usize>,
    numel: usize,
}

impl<T: Element> Backward<T> for MaxPoolBackward {
    fn name(&self) -> &'static str {
        "maxpool1d"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); self.numel];
        for (&i, &g) in self.argmax.iter().zip(grad) {
            dx[i] += g;
        }
        vec![Some(dx)]
    }
}

/// Mean over time: `(B, C, L) → (B, C, 1)`.
pub fn global_avg_pool<T: Element>(tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    if s.len == 0 {
        return Err(TensorError::shape("global_avg_pool", format!("empty time axis in {s}")));
    }
    let n = s.len as f64;
    let out = x
        .data()
        .chunks(s.len)
        .map(|row| T::lit(row.iter().map(|v| v.as_f64()).sum::<f64>() / n))
        .collect();
    let value = Tensor::from_parts(Shape::new(s.batch, s.channels, 1), out);
    Ok(tape.record(value, &[x], GapBackward { len: s.len }))
}

struct GapBackward {
    len: usize,
}

impl<T: Element> Backward<T> for GapBackward {
    fn name(&self) -> &'static str {
        "global_avg_pool"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::lit(self.len as f64);
        let dx = grad
            .iter()
            .flat_map(|&g| std::iter::repeat_n(g * inv, self.len))
            .collect();
        vec![Some(dx)]
    }
}

/// True when some unpadded window's top two values are within 1e-3,
/// where the max is not differentiable in practice.
pub fn has_near_tie(x: &Tensor<f64>, kernel: usize, stride: usize) -> bool {
    x.data().chunks(x.shape().len).any(|row| {
        row.windows(kernel).step_by(stride).any(|w| {
            let mut v = w.to_vec();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            v[0] - v[1] < 1e-3
        })
    })
}
