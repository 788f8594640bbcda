//! Structural and pointwise primitives recorded directly on the tape.

use super::{Backward, Element, Shape, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Mul,
}

impl<T: Element> Tape<T> {
    /// `a + b`, with `b` either the same shape as `a` or `(B, C, 1)`.
    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.elementwise(a, b, BinaryKind::Add)
    }

    /// `a ⊙ b`, with the same broadcast rule as [`Tape::add`].
    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        self.elementwise(a, b, BinaryKind::Mul)
    }

    pub fn elementwise(
        &mut self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        kind: BinaryKind,
    ) -> Result<Tensor<T>, TensorError> {
        let (sa, sb) = (a.shape(), b.shape());
        let broadcast = if sa == sb {
            false
        } else if sb == Shape::new(sa.batch, sa.channels, 1) {
            true
        } else {
            return Err(TensorError::shape(
                "elementwise",
                format!("cannot combine {sa} with {sb}"),
            ));
        };
        let len = sa.len;
        let (ad, bd) = (a.data(), b.data());
        let out: Vec<T> = if broadcast {
            let mut out = Vec::with_capacity(ad.len());
            for (row, &w) in ad.chunks(len.max(1)).zip(bd) {
                match kind {
                    BinaryKind::Add => out.extend(row.iter().map(|&x| x + w)),
                    BinaryKind::Mul => out.extend(row.iter().map(|&x| x * w)),
                }
            }
            out
        } else {
            match kind {
                BinaryKind::Add => ad.iter().zip(bd).map(|(&x, &y)| x + y).collect(),
                BinaryKind::Mul => ad.iter().zip(bd).map(|(&x, &y)| x * y).collect(),
            }
        };
        let value = Tensor::from_parts(sa, out);
        let op = Elementwise {
            kind,
            broadcast,
            len,
            a: (kind == BinaryKind::Mul).then(|| a.detach()),
            b: (kind == BinaryKind::Mul).then(|| b.detach()),
        };
        Ok(self.record(value, &[a, b], op))
    }

    /// Sum of every element, as a `(1, 1, 1)` tensor.
    pub fn sum(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let total = x.data().iter().copied().sum::<T>();
        let value = Tensor::scalar(total);
        self.record(value, &[x], SumAll { n: x.numel() })
    }

    /// `factor · x` for a constant factor.
    pub fn scale(&mut self, x: &Tensor<T>, factor: T) -> Tensor<T> {
        let value = Tensor::from_parts(x.shape(), x.data().iter().map(|&v| v * factor).collect());
        self.record(value, &[x], Scale { factor })
    }

    /// Pass-through, recorded as its own node.
    pub fn identity(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let value = x.detach();
        self.record(value, &[x], Identity)
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&mut self, x: &Tensor<T>, shape: Shape) -> Result<Tensor<T>, TensorError> {
        if shape.numel() != x.numel() {
            return Err(TensorError::shape(
                "reshape",
                format!("{} cannot be viewed as {shape}", x.shape()),
            ));
        }
        let value = Tensor::from_parts(shape, x.data().to_vec());
        Ok(self.record(value, &[x], Identity))
    }

    /// Channels `start..start + count` of every batch element.
    pub fn narrow_channels(
        &mut self,
        x: &Tensor<T>,
        start: usize,
        count: usize,
    ) -> Result<Tensor<T>, TensorError> {
        let s = x.shape();
        if start + count > s.channels {
            return Err(TensorError::shape(
                "narrow_channels",
                format!("channels {start}..{} out of range for {s}", start + count),
            ));
        }
        let out_shape = Shape::new(s.batch, count, s.len);
        let mut out = Vec::with_capacity(out_shape.numel());
        let d = x.data();
        for b in 0..s.batch {
            let base = (b * s.channels + start) * s.len;
            out.extend_from_slice(&d[base..base + count * s.len]);
        }
        let value = Tensor::from_parts(out_shape, out);
        Ok(self.record(value, &[x], Narrow { full: s, start }))
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::shape("concat_channels", "no inputs"))?
            .shape();
        let mut channels = Vec::with_capacity(parts.len());
        for p in parts {
            let s = p.shape();
            if s.batch != first.batch || s.len != first.len {
                return Err(TensorError::shape(
                    "concat_channels",
                    format!("{s} does not match {first} outside the channel axis"),
                ));
            }
            channels.push(s.channels);
        }
        let total: usize = channels.iter().sum();
        let out_shape = Shape::new(first.batch, total, first.len);
        let mut out = Vec::with_capacity(out_shape.numel());
        for b in 0..first.batch {
            for p in parts {
                let s = p.shape();
                let base = b * s.channels * s.len;
                out.extend_from_slice(&p.data()[base..base + s.channels * s.len]);
            }
        }
        let value = Tensor::from_parts(out_shape, out);
        let op = Concat {
            batch: first.batch,
            len: first.len,
            channels,
        };
        Ok(self.record(value, parts, op))
    }
}

struct Elementwise<T> {
    kind: BinaryKind,
    broadcast: bool,
    len: usize,
    a: Option<Tensor<T>>,
    b: Option<Tensor<T>>,
}

impl<T: Element> Backward<T> for Elementwise<T> {
    fn name(&self) -> &'static str {
        match self.kind {
            BinaryKind::Add => "add",
            BinaryKind::Mul => "mul",
        }
    }

    fn backward(&self, grad: &[T], needed: &[bool]) -> Vec<Option<Vec<T>>> {
        let len = self.len.max(1);
        // Gradient for `a`: grad, times b when multiplying.
        let ga = needed[0].then(|| match (&self.kind, &self.b) {
            (BinaryKind::Mul, Some(b)) => {
                let bd = b.data();
                if self.broadcast {
                    let mut out = Vec::with_capacity(grad.len());
                    for (row, &w) in grad.chunks(len).zip(bd) {
                        out.extend(row.iter().map(|&g| g * w));
                    }
                    out
                } else {
                    grad.iter().zip(bd).map(|(&g, &y)| g * y).collect()
                }
            }
            _ => grad.to_vec(),
        });
        let gb = needed[1].then(|| {
            let full: Vec<T> = match (&self.kind, &self.a) {
                (BinaryKind::Mul, Some(a)) => grad.iter().zip(a.data()).map(|(&g, &x)| g * x).collect(),
                _ => grad.to_vec(),
            };
            if self.broadcast {
                full.chunks(len).map(|row| row.iter().copied().sum()).collect()
            } else {
                full
            }
        });
        vec![ga, gb]
    }
}

struct SumAll {
    n: usize,
}

impl<T: Element> Backward<T> for SumAll {
    fn name(&self) -> &'static str {
        "sum"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(vec![grad[0]; self.n])]
    }
}

struct Scale<T> {
    factor: T,
}

impl<T: Element> Backward<T> for Scale<T> {
    fn name(&self) -> &'static str {
        "scale"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.iter().map(|&g| g * self.factor).collect())]
    }
}

struct Identity;

impl<T: Element> Backward<T> for Identity {
    fn name(&self) -> &'static str {
        "identity"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        vec![Some(grad.to_vec())]
    }
}

struct Narrow {
    full: Shape,
    start: usize,
}

impl<T: Element> Backward<T> for Narrow {
    fn name(&self) -> &'static str {
        "narrow_channels"
    }
    fn backward(&self, grad: &[T], _: &[bool]) -> Vec<Option<Vec<T>>> {
        let s = self.full;
        let mut out = vec![T::zero(); s.numel()];
        let block = grad.len() / s.batch.max(1);
        for b in 0..s.batch {
            let base = (b * s.channels + self.start) * s.len;
            out[base..base + block].copy_from_slice(&grad[b * block..(b + 1) * block]);
        }
        vec![Some(out)]
    }
}

struct Concat {
    batch: usize,
    len: usize,
    channels: Vec<usize>,
}

impl<T: Element> Backward<T> for Concat {
    fn name(&self) -> &'static str {
        "concat_channels"
    }
    fn backward(&self, grad: &[T], needed: &[bool]) -> Vec<Option<Vec<T>>> {
        let total: usize = self.channels.iter().sum();
        let mut offset = 0;
        self.channels
            .iter()
            .zip(needed)
            .map(|(&c, &need)| {
                let start = offset;
                offset += c;
                need.then(|| {
                    let mut out = Vec::with_capacity(self.batch * c * self.len);
                    for b in 0..self.batch {
                        let base = (b * total + start) * self.len;
                        out.extend_from_slice(&grad[base..base + c * self.len]);
                    }
                    out
                })
            })
            .collect()
    }
}
