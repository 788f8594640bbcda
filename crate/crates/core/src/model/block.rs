use crate::layers::{batch_norm1d, conv1d, global_avg_pool, linear, selu, sigmoid, BatchNormConfig, ConvOptions, Mode, RunningStats};
use crate::tensor::{Element, Shape, Tape, Tensor, TensorError};

/// A convolution's weight and optional bias, borrowed from a parameter set.
#[derive(Clone, Copy, Debug)]
pub struct ConvRef<'a, T: Element> {
    pub weight: &'a Tensor<T>,
    pub bias: Option<&'a Tensor<T>>,
}

impl<'a, T: Element> ConvRef<'a, T> {
    pub fn new(weight: &'a Tensor<T>, bias: Option<&'a Tensor<T>>) -> Self {
        ConvRef { weight, bias }
    }
}

/// Channel attention: the per-channel time average is treated as a
/// one-channel sequence of length `C`, filtered by a `(1, 1, k)` kernel
/// with same-padding, squashed by a sigmoid and used to rescale `x`.
pub fn meca_forward<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    let k = weight.shape().len;
    if weight.shape() != Shape::new(1, 1, k) || k % 2 == 0 {
        return Err(TensorError::shape(
            "meca",
            format!("kernel must be (1, 1, odd k), got {}", weight.shape()),
        ));
    }
    let pooled = global_avg_pool(tape, x)?;
    let seq = tape.reshape(&pooled, Shape::new(s.batch, 1, s.channels))?;
    let filtered = conv1d(tape, &seq, weight, None, ConvOptions::padded((k - 1) / 2))?;
    let y = sigmoid(tape, &filtered);
    let y = tape.reshape(&y, Shape::new(s.batch, s.channels, 1))?;
    tape.mul(x, &y)
}

/// Hierarchical split: `Y₁ = X₁`, `Yᵢ = Kᵢ(Xᵢ + Yᵢ₋₁)`, output is the
/// concatenation of all `Yᵢ`. The number of groups is `kernels.len() + 1`.
pub fn res2net_split_forward<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    kernels: &[ConvRef<'_, T>],
) -> Result<Tensor<T>, TensorError> {
    let s = x.shape();
    let groups = kernels.len() + 1;
    if s.channels % groups != 0 {
        return Err(TensorError::shape(
            "res2net_split",
            format!("{} channels do not split into {groups} groups", s.channels),
        ));
    }
    let width = s.channels / groups;
    let mut ys = vec![tape.narrow_channels(x, 0, width)?];
    for (i, k) in kernels.iter().enumerate() {
        let ksize = k.weight.shape().len;
        if ksize % 2 == 0 {
            return Err(TensorError::shape(
                "res2net_split",
                format!("kernel {} must have odd length", k.weight.shape()),
            ));
        }
        let xi = tape.narrow_channels(x, (i + 1) * width, width)?;
        let prev = ys.last().expect("first group pushed above");
        let sum = tape.add(&xi, prev)?;
        ys.push(conv1d(tape, &sum, k.weight, k.bias, ConvOptions::padded(ksize / 2))?);
    }
    let parts: Vec<&Tensor<T>> = ys.iter().collect();
    tape.concat_channels(&parts)
}

/// Parameters of one residual block.
#[derive(Clone, Debug)]
pub struct BlockWeights<'a, T: Element> {
    pub splits: Vec<ConvRef<'a, T>>,
    pub norm_weight: &'a Tensor<T>,
    pub norm_bias: &'a Tensor<T>,
    pub mlp_in: ConvRef<'a, T>,
    pub mlp_out: ConvRef<'a, T>,
    pub meca: Option<&'a Tensor<T>>,
}

/// `x + meca(mlp_out(selu(mlp_in(bn(split(x))))))`, with the attention
/// step skipped when `w.meca` is `None`.
pub fn block_forward<T: Element>(
    tape: &mut Tape<T>,
    x: &Tensor<T>,
    w: &BlockWeights<'_, T>,
    stats: &mut RunningStats<T>,
    mode: Mode,
    bn: BatchNormConfig,
) -> Result<Tensor<T>, TensorError> {
    let h = res2net_split_forward(tape, x, &w.splits)?;
    let h = batch_norm1d(tape, &h, w.norm_weight, w.norm_bias, stats, mode, bn)?;
    let h = linear(tape, &h, w.mlp_in.weight, w.mlp_in.bias)?;
    let h = selu(tape, &h);
    let mut h = linear(tape, &h, w.mlp_out.weight, w.mlp_out.bias)?;
    if let Some(k) = w.meca {
        h = meca_forward(tape, &h, k)?;
    }
    if h.shape() != x.shape() {
        return Err(TensorError::shape(
            "block",
            format!("branch output {} does not match input {}", h.shape(), x.shape()),
        ));
    }
    tape.add(x, &h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{sigmoid_scalar, SELU_ALPHA, SELU_LAMBDA};
    use crate::tensor::grad_check;

    fn t(shape: (usize, usize, usize), v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    fn inf() -> Tape<f64> {
        Tape::inference()
    }

    #[test]
    fn meca_zero_kernel_halves() {
        let x = Tensor::uniform((2, 4, 6), -1.0, 1.0, 3);
        let y = meca_forward(&mut inf(), &x, &Tensor::zeros((1, 1, 3))).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, b / 2.0);
        }
        let zero = Tensor::zeros((2, 4, 6));
        let y = meca_forward(&mut inf(), &zero, &Tensor::uniform((1, 1, 3), -1.0, 1.0, 1)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn meca_hand_example() {
        // Channel means 1..4; kernel [1, 0, 0] reads the previous channel.
        let x = t((1, 4, 2), &[0.5, 1.5, 2.0, 2.0, 1.0, 5.0, 4.0, 4.0]);
        let y = meca_forward(&mut inf(), &x, &t((1, 1, 3), &[1.0, 0.0, 0.0])).unwrap();
        for c in 0..4 {
            let a = sigmoid_scalar(c as f64);
            for i in 0..2 {
                assert!((y.at(0, c, i) - x.at(0, c, i) * a).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn meca_constant_input_gives_uniform_attention_interior() {
        let x = Tensor::full((1, 8, 5), 0.7);
        let w = t((1, 1, 3), &[0.2, 0.3, 0.4]);
        let y = meca_forward(&mut inf(), &x, &w).unwrap();
        // Interior channels see a full window, so their weights agree.
        let a: Vec<f64> = (1..7).map(|c| y.at(0, c, 0) / 0.7).collect();
        assert!(a.iter().all(|&v| (v - a[0]).abs() < 1e-15 && v > 0.0 && v < 1.0));
    }

    #[test]
    fn meca_kernel_shape_errors() {
        let x = Tensor::<f64>::zeros((1, 4, 2));
        assert!(meca_forward(&mut inf(), &x, &Tensor::zeros((1, 1, 2))).is_err());
        assert!(meca_forward(&mut inf(), &x, &Tensor::zeros((1, 2, 3))).is_err());
    }

    fn identity_kernel(w: usize) -> Tensor<f64> {
        let mut v = vec![0.0; w * w * 3];
        for o in 0..w {
            v[(o * w + o) * 3 + 1] = 1.0;
        }
        t((w, w, 3), &v)
    }

    #[test]
    fn split_zero_kernels() {
        let x = Tensor::uniform((2, 8, 5), -1.0, 1.0, 2);
        let zero = Tensor::zeros((2, 2, 3));
        let kernels = [ConvRef::new(&zero, None); 3];
        let y = res2net_split_forward(&mut inf(), &x, &kernels).unwrap();
        for b in 0..2 {
            for c in 0..8 {
                let expect: Vec<f64> = if c < 2 { x.row(b, c).to_vec() } else { vec![0.0; 5] };
                assert_eq!(y.row(b, c), expect.as_slice());
            }
        }
    }

    #[test]
    fn split_identity_kernels_prefix_sums() {
        let x = Tensor::uniform((2, 8, 5), -1.0, 1.0, 9);
        let id = identity_kernel(2);
        let kernels = [ConvRef::new(&id, None); 3];
        let y = res2net_split_forward(&mut inf(), &x, &kernels).unwrap();
        for b in 0..2 {
            for j in 0..2 {
                for i in 0..5 {
                    let mut acc = 0.0;
                    for g in 0..4 {
                        acc += x.at(b, g * 2 + j, i);
                        assert!((y.at(b, g * 2 + j, i) - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn split_matches_straight_line_oracle() {
        // C = 4, L = 1: each group is one channel and only the kernel's
        // centre tap touches the sample.
        for seed in 0..5 {
            let x = Tensor::<f64>::uniform((1, 4, 1), -1.0, 1.0, seed);
            let ks: Vec<Tensor<f64>> = (0..3).map(|i| Tensor::uniform((1, 1, 3), -1.0, 1.0, 100 + seed * 3 + i)).collect();
            let bs: Vec<Tensor<f64>> = (0..3).map(|i| Tensor::uniform((1, 1, 1), -1.0, 1.0, 200 + seed * 3 + i)).collect();
            let kernels: Vec<_> = ks.iter().zip(&bs).map(|(k, b)| ConvRef::new(k, Some(b))).collect();
            let y = res2net_split_forward(&mut inf(), &x, &kernels).unwrap();
            let xv = x.data();
            let k = |i: usize, v: f64| ks[i].data()[1] * v + bs[i].data()[0];
            let y1 = xv[0];
            let y2 = k(0, xv[1] + y1);
            let y3 = k(1, xv[2] + y2);
            let y4 = k(2, xv[3] + y3);
            let expect = [y1, y2, y3, y4];
            for c in 0..4 {
                assert!((y.data()[c] - expect[c]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn split_indivisible_channels() {
        let x = Tensor::<f64>::zeros((1, 6, 3));
        let zero = Tensor::zeros((1, 1, 3));
        assert!(res2net_split_forward(&mut inf(), &x, &[ConvRef::new(&zero, None); 3]).is_err());
    }

    struct Owned {
        splits: Vec<Tensor<f64>>,
        gamma: Tensor<f64>,
        beta: Tensor<f64>,
        w_in: Tensor<f64>,
        b_in: Tensor<f64>,
        w_out: Tensor<f64>,
        b_out: Tensor<f64>,
        meca: Tensor<f64>,
    }

    impl Owned {
        fn random(c: usize, seed: u64) -> Self {
            let w = c / 4;
            Owned {
                splits: (0..3).map(|i| Tensor::uniform((w, w, 3), -0.5, 0.5, seed * 10 + i)).collect(),
                gamma: Tensor::uniform((1, c, 1), 0.5, 1.5, seed * 10 + 3),
                beta: Tensor::uniform((1, c, 1), -0.5, 0.5, seed * 10 + 4),
                w_in: Tensor::uniform((4 * c, c, 1), -0.5, 0.5, seed * 10 + 5),
                b_in: Tensor::uniform((1, 4 * c, 1), -0.5, 0.5, seed * 10 + 6),
                w_out: Tensor::uniform((c, 4 * c, 1), -0.5, 0.5, seed * 10 + 7),
                b_out: Tensor::uniform((1, c, 1), -0.5, 0.5, seed * 10 + 8),
                meca: Tensor::uniform((1, 1, 3), -1.0, 1.0, seed * 10 + 9),
            }
        }

        fn weights(&self, meca: bool) -> BlockWeights<'_, f64> {
            BlockWeights {
                splits: self.splits.iter().map(|k| ConvRef::new(k, None)).collect(),
                norm_weight: &self.gamma,
                norm_bias: &self.beta,
                mlp_in: ConvRef::new(&self.w_in, Some(&self.b_in)),
                mlp_out: ConvRef::new(&self.w_out, Some(&self.b_out)),
                meca: meca.then_some(&self.meca),
            }
        }
    }

    #[test]
    fn zero_branch_is_passthrough() {
        let c = 8;
        let z = |s: (usize, usize, usize)| Tensor::<f64>::zeros(s);
        let o = Owned {
            splits: vec![z((2, 2, 3)), z((2, 2, 3)), z((2, 2, 3))],
            gamma: z((1, c, 1)),
            beta: z((1, c, 1)),
            w_in: z((32, c, 1)),
            b_in: z((1, 32, 1)),
            w_out: z((c, 32, 1)),
            b_out: z((1, c, 1)),
            meca: z((1, 1, 3)),
        };
        let x = Tensor::uniform((2, c, 7), -1.0, 1.0, 5);
        let mut stats = RunningStats::new(c);
        let y = block_forward(&mut inf(), &x, &o.weights(true), &mut stats, Mode::Eval, BatchNormConfig::default())
            .unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn single_element_hand_computation() {
        // C = 4, L = 1, B = 1, eval mode with identity running statistics.
        let o = Owned::random(4, 7);
        let x = t((1, 4, 1), &[0.3, -0.8, 0.5, 0.1]);
        let mut stats = RunningStats::new(4);
        let y = block_forward(&mut inf(), &x, &o.weights(true), &mut stats, Mode::Eval, BatchNormConfig::default())
            .unwrap();

        let xv = x.data();
        let centre = |i: usize| o.splits[i].data()[1];
        let mut h = [xv[0], 0.0, 0.0, 0.0];
        for i in 1..4 {
            h[i] = centre(i - 1) * (xv[i] + h[i - 1]);
        }
        let inv = 1.0 / (1.0 + 1e-5_f64).sqrt();
        let hn: Vec<f64> = (0..4).map(|c| o.gamma.data()[c] * h[c] * inv + o.beta.data()[c]).collect();
        let act: Vec<f64> = (0..16)
            .map(|j| {
                let z = o.b_in.data()[j] + (0..4).map(|c| o.w_in.data()[j * 4 + c] * hn[c]).sum::<f64>();
                if z > 0.0 {
                    SELU_LAMBDA * z
                } else {
                    SELU_LAMBDA * SELU_ALPHA * z.exp_m1()
                }
            })
            .collect();
        let m: Vec<f64> = (0..4)
            .map(|c| o.b_out.data()[c] + (0..16).map(|j| o.w_out.data()[c * 16 + j] * act[j]).sum::<f64>())
            .collect();
        let k = o.meca.data();
        for c in 0..4 {
            let left = if c > 0 { m[c - 1] } else { 0.0 };
            let right = if c < 3 { m[c + 1] } else { 0.0 };
            let a = sigmoid_scalar(k[0] * left + k[1] * m[c] + k[2] * right);
            let expect = xv[c] + m[c] * a;
            assert!((y.data()[c] - expect).abs() < 1e-12, "{c}: {} vs {expect}", y.data()[c]);
        }
    }

    #[test]
    fn grad_checks() {
        for seed in 0..5 {
            let r = grad_check("meca", &[Shape::new(2, 6, 4), Shape::new(1, 1, 3)], seed, |tape, v| {
                meca_forward(tape, &v[0], &v[1])
            })
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
            let r = grad_check(
                "res2net_split",
                &[
                    Shape::new(2, 8, 5),
                    Shape::new(2, 2, 3),
                    Shape::new(2, 2, 3),
                    Shape::new(2, 2, 3),
                ],
                seed,
                |tape, v| {
                    let ks: Vec<_> = v[1..].iter().map(|k| ConvRef::new(k, None)).collect();
                    res2net_split_forward(tape, &v[0], &ks)
                },
            )
            .unwrap();
            assert!(r.passes(1e-4), "{r:?}");
        }
    }
}
