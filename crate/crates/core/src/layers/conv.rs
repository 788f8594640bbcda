use crate::tensor::{Backward, Element, Shape, Tape, Tensor, TensorError};

/// Stride, zero-padding (applied to both ends) and group count of a 1-D
/// convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvOptions {
    fn default() -> Self {
        ConvOptions {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl ConvOptions {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvOptions {
            stride,
            padding,
            groups,
        }
    }

    pub fn padded(padding: usize) -> Self {
        ConvOptions {
            padding,
            ..Default::default()
        }
    }
}

/// Output length `floor((len + 2·padding − kernel) / stride) + 1`, or `None`
/// when the kernel does not fit.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = len + 2 * padding;
    (stride > 0 && kernel > 0 && kernel <= padded).then(|| (padded - kernel) / stride + 1)
}

#[derive(Clone, Copy, Debug)]
struct Geometry {
    batch: usize,
    in_channels: usize,
    out_channels: usize,
    in_per_group: usize,
    out_per_group: usize,
    kernel: usize,
    len: usize,
    out_len: usize,
    opts: ConvOptions,
}

impl Geometry {
    fn check(
        op: &'static str,
        x: Shape,
        w: Shape,
        bias: Option<Shape>,
        opts: ConvOptions,
    ) -> Result<Self, TensorError> {
        let err = |d: String| Err(TensorError::shape(op, d));
        if opts.groups == 0 || opts.stride == 0 {
            return err(format!("stride and groups must be ≥ 1, got {opts:?}"));
        }
        let (out_channels, in_per_group, kernel) = (w.batch, w.channels, w.len);
        if x.channels % opts.groups != 0 || out_channels % opts.groups != 0 {
            return err(format!(
                "channels {} → {out_channels} not divisible by {} groups",
                x.channels, opts.groups
            ));
        }
        if in_per_group * opts.groups != x.channels {
            return err(format!(
                "weight {w} expects {} input channels, input is {x}",
                in_per_group * opts.groups
            ));
        }
        if let Some(b) = bias {
            if b != Shape::new(1, out_channels, 1) {
                return err(format!("bias {b} does not match {out_channels} output channels"));
            }
        }
        let Some(out_len) = conv_output_len(x.len, kernel, opts.stride, opts.padding) else {
            return err(format!(
                "kernel {kernel} longer than padded input {} + 2·{}",
                x.len, opts.padding
            ));
        };
        Ok(Geometry {
            batch: x.batch,
            in_channels: x.channels,
            out_channels,
            in_per_group,
            out_per_group: out_channels / opts.groups,
            kernel,
            len: x.len,
            out_len,
            opts,
        })
    }

    /// Output positions `t` whose input tap `t·stride + k − padding` lies
    /// inside the unpadded signal, and the first such input index.
    fn valid_range(&self, k: usize) -> (usize, usize, usize) {
        let (s, p) = (self.opts.stride, self.opts.padding);
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        if self.len + p < k + 1 {
            return (0, 0, 0);
        }
        let hi = ((self.len - 1 + p - k) / s + 1).min(self.out_len);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, lo * s + k - p)
    }
}

/// `out[b,o,t] = bias[o] + Σ_{c,k} w[o,c,k] · x_pad[b, g(o)·C_in/G + c, t·stride + k]`.
///
/// `weight` is `(C_out, C_in / groups, K)`; `bias`, when present, is
/// `(1, C_out, 1)`.
pub fn conv1d<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    opts: ConvOptions,
) -> Result<Tensor<T>, TensorError> {
    let geo = Geometry::check(
        "conv1d",
        x.shape(),
        weight.shape(),
        bias.map(Tensor::shape),
        opts,
    )?;
    let out = forward(&geo, x.data(), weight.data(), bias.map(Tensor::data));
    let value = Tensor::from_parts(Shape::new(geo.batch, geo.out_channels, geo.out_len), out);
    let op = Conv1dBackward {
        geo,
        x: x.detach(),
        weight: weight.detach(),
        has_bias: bias.is_some(),
    };
    Ok(match bias {
        Some(b) => tape.record(value, &[x, weight, b], op),
        None => tape.record(value, &[x, weight], op),
    })
}

/// Pointwise linear map over channels at every time step:
/// `out[b,:,t] = W · x[b,:,t] + bias`. `weight` is `(C_out, C_in, 1)`.
pub fn linear<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>, TensorError> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.len != 1 || ws.channels != xs.channels {
        return Err(TensorError::shape(
            "linear",
            format!("weight {ws} cannot map input {xs}"),
        ));
    }
    conv1d(tape, x, weight, bias, ConvOptions::default())
}

fn forward<T: Element>(geo: &Geometry, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let g = geo;
    let s = g.opts.stride;
    let mut out = vec![T::zero(); g.batch * g.out_channels * g.out_len];
    for b in 0..g.batch {
        for o in 0..g.out_channels {
            let row = &mut out[(b * g.out_channels + o) * g.out_len..][..g.out_len];
            if let Some(bias) = bias {
                row.fill(bias[o]);
            }
            let c_base = (o / g.out_per_group) * g.in_per_group;
            for c in 0..g.in_per_group {
                let xr = &x[(b * g.in_channels + c_base + c) * g.len..][..g.len];
                let wr = &w[(o * g.in_per_group + c) * g.kernel..][..g.kernel];
                for (k, &wk) in wr.iter().enumerate() {
                    let (lo, hi, start) = g.valid_range(k);
                    if lo == hi {
                        continue;
                    }
                    let dst = &mut row[lo..hi];
                    if s == 1 {
                        axpy(dst, wk, &xr[start..start + (hi - lo)]);
                    } else {
                        for (d, &v) in dst.iter_mut().zip(xr[start..].iter().step_by(s)) {
                            *d += wk * v;
                        }
                    }
                }
            }
        }
    }
    out
}

struct Conv1dBackward<T> {
    geo: Geometry,
    x: Tensor<T>,
    weight: Tensor<T>,
    has_bias: bool,
}

impl<T: Element> Backward<T> for Conv1dBackward<T> {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, grad: &[T], needed: &[bool]) -> Vec<Option<Vec<T>>> {
        let g = &self.geo;
        let s = g.opts.stride;
        let (x, w) = (self.x.data(), self.weight.data());
        let grad_row = |b: usize, o: usize| &grad[(b * g.out_channels + o) * g.out_len..][..g.out_len];

        let dx = needed[0].then(|| {
            let mut dx = vec![T::zero(); x.len()];
            for b in 0..g.batch {
                for o in 0..g.out_channels {
                    let gr = grad_row(b, o);
                    let c_base = (o / g.out_per_group) * g.in_per_group;
                    for c in 0..g.in_per_group {
                        let dxr = &mut dx[(b * g.in_channels + c_base + c) * g.len..][..g.len];
                        let wr = &w[(o * g.in_per_group + c) * g.kernel..][..g.kernel];
                        for (k, &wk) in wr.iter().enumerate() {
                            let (lo, hi, start) = g.valid_range(k);
                            if lo == hi {
                                continue;
                            }
                            if s == 1 {
                                axpy(&mut dxr[start..start + (hi - lo)], wk, &gr[lo..hi]);
                            } else {
                                for (d, &gv) in dxr[start..].iter_mut().step_by(s).zip(&gr[lo..hi]) {
                                    *d += wk * gv;
                                }
                            }
                        }
                    }
                }
            }
            dx
        });

        let dw = needed[1].then(|| {
            let mut dw = vec![T::zero(); w.len()];
            for o in 0..g.out_channels {
                let c_base = (o / g.out_per_group) * g.in_per_group;
                for c in 0..g.in_per_group {
                    for k in 0..g.kernel {
                        let (lo, hi, start) = g.valid_range(k);
                        if lo == hi {
                            continue;
                        }
                        let mut acc = T::zero();
                        for b in 0..g.batch {
                            let gr = &grad_row(b, o)[lo..hi];
                            let xr = &x[(b * g.in_channels + c_base + c) * g.len..][..g.len];
                            acc += if s == 1 {
                                dot(gr, &xr[start..start + (hi - lo)])
                            } else {
                                gr.iter()
                                    .zip(xr[start..].iter().step_by(s))
                                    .map(|(&a, &v)| a * v)
                                    .sum()
                            };
                        }
                        dw[(o * g.in_per_group + c) * g.kernel + k] = acc;
                    }
                }
            }
            dw
        });

        let mut out = vec![dx, dw];
        if self.has_bias {
            out.push(needed[2].then(|| {
                (0..g.out_channels)
                    .map(|o| (0..g.batch).map(|b| grad_row(b, o).iter().copied().sum::<T>()).sum())
                    .collect()
            }));
        }
        out
    }
}

#[inline]
pub(crate) fn axpy<T: Element>(dst: &mut [T], a: T, src: &[T]) {
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += a * v;
    }
}

/// Dot product with eight independent accumulators so the compiler can
/// vectorize it; the summation order is fixed.
#[inline]
pub(crate) fn dot<T: Element>(a: &[T], b: &[T]) -> T {
    const LANES: usize = 8;
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::zero(); LANES];
    let chunks = n / LANES;
    for i in 0..chunks {
        let (ca, cb) = (&a[i * LANES..][..LANES], &b[i * LANES..][..LANES]);
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * LANES..n {
        tail += a[i] * b[i];
    }
    let pair = |i: usize| acc[i] + acc[i + 4];
    (pair(0) + pair(2)) + (pair(1) + pair(3)) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn t(shape: (usize, usize, usize), v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn run(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, opts: ConvOptions) -> Tensor<f64> {
        conv1d(&mut Tape::inference(), x, w, b, opts).unwrap()
    }

    #[test]
    fn identity_kernel() {
        let x = t((1, 1, 4), &[5.0, 6.0, 7.0, 8.0]);
        let y = run(&x, &t((1, 1, 1), &[1.0]), Some(&t((1, 1, 1), &[0.0])), ConvOptions::default());
        assert_eq!(y.data(), &[5.0, 6.0, 7.0, 8.0]);
    }

    #[test]
    fn zero_kernel_leaves_bias() {
        let x = Tensor::uniform((1, 1, 4), -1.0, 1.0, 2);
        let y = run(&x, &Tensor::zeros((1, 1, 3)), Some(&t((1, 1, 1), &[3.0])), ConvOptions::default());
        assert_eq!(y.data(), &[3.0, 3.0]);
    }

    #[test]
    fn padded_box_filter() {
        let x = t((1, 1, 4), &[1.0, 2.0, 3.0, 4.0]);
        let y = run(&x, &t((1, 1, 3), &[1.0, 1.0, 1.0]), None, ConvOptions::padded(1));
        assert_eq!(y.data(), &[3.0, 6.0, 9.0, 7.0]);
    }

    #[test]
    fn strided_output_length() {
        assert_eq!(conv_output_len(16000, 9, 3, 4), Some(5334));
        assert_eq!(conv_output_len(2, 5, 1, 1), None);
        let x = Tensor::uniform((1, 1, 10), -1.0, 1.0, 3);
        let y = run(&x, &Tensor::ones((2, 1, 3)), None, ConvOptions::new(3, 1, 1));
        assert_eq!(y.shape(), Shape::new(1, 2, 4));
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::<f64>::inference();
        let x = Tensor::zeros((1, 3, 8));
        // 3 input channels do not split into 2 groups.
        let e = conv1d(&mut tape, &x, &Tensor::zeros((2, 1, 3)), None, ConvOptions::new(1, 0, 2));
        assert!(e.is_err());
        let e = conv1d(&mut tape, &x, &Tensor::zeros((2, 3, 9)), None, ConvOptions::default());
        assert!(e.is_err());
        let e = conv1d(&mut tape, &x, &Tensor::zeros((2, 3, 3)), Some(&Tensor::zeros((1, 3, 1))), ConvOptions::default());
        assert!(e.is_err());
    }

    #[test]
    fn linear_hand_matmul() {
        let w = t((2, 2, 1), &[1.0, 2.0, 3.0, 4.0]);
        let b = t((1, 2, 1), &[0.0, 1.0]);
        let x = t((1, 2, 1), &[5.0, 6.0]);
        let y = linear(&mut Tape::inference(), &x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[17.0, 40.0]);
    }

    #[test]
    fn linear_identity_and_constant() {
        let x = Tensor::<f64>::uniform((3, 4, 1), -1.0, 1.0, 5);
        let mut eye = vec![0.0; 16];
        for i in 0..4 {
            eye[i * 4 + i] = 1.0;
        }
        let id = linear(&mut Tape::inference(), &x, &t((4, 4, 1), &eye), Some(&Tensor::zeros((1, 4, 1)))).unwrap();
        assert_eq!(id, x);
        let b = t((1, 4, 1), &[1.0, 2.0, 3.0, 4.0]);
        let c = linear(&mut Tape::inference(), &x, &Tensor::zeros((4, 4, 1)), Some(&b)).unwrap();
        for bi in 0..3 {
            assert_eq!(&c.data()[bi * 4..bi * 4 + 4], b.data());
        }
    }

    #[test]
    fn linear_rejects_mismatch() {
        let e = linear(&mut Tape::<f64>::inference(), &Tensor::zeros((1, 3, 1)), &Tensor::zeros((2, 2, 1)), None);
        assert!(matches!(e, Err(TensorError::Shape { op: "linear", .. })));
    }

    #[test]
    fn grad_checks() {
        for seed in 0..5 {
            let r = grad_check(
                "linear",
                &[Shape::new(2, 4, 1), Shape::new(3, 4, 1), Shape::new(1, 3, 1)],
                seed,
                |tape, v| linear(tape, &v[0], &v[1], Some(&v[2])),
            )
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
            let r = grad_check(
                "conv1d",
                &[Shape::new(1, 2, 8), Shape::new(3, 2, 3), Shape::new(1, 3, 1)],
                seed,
                |tape, v| conv1d(tape, &v[0], &v[1], Some(&v[2]), ConvOptions::padded(1)),
            )
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
            let r = grad_check(
                "conv1d-grouped-strided",
                &[Shape::new(2, 4, 11), Shape::new(4, 1, 3)],
                seed,
                |tape, v| conv1d(tape, &v[0], &v[1], None, ConvOptions::new(2, 2, 4)),
            )
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..37).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..37).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-9);
    }
}
