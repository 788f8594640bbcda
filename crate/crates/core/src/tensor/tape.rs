use std::fmt;

use super::{Element, Shape, Tensor, TensorError};

/// Handle to a node on one [`Tape`]. Meaningless on any other tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Reverse rule for one recorded operation. Saved activations live in the
/// implementing struct and are dropped as soon as the rule has run.
pub trait Backward<T: Element> {
    fn name(&self) -> &'static str;

    /// `grad` is the gradient of the root with respect to this node's
    /// output. Returns one entry per recorded input, in recording order;
    /// entries whose `needed` flag is false may be `None`.
    fn backward(&self, grad: &[T], needed: &[bool]) -> Vec<Option<Vec<T>>>;
}

struct Node<T> {
    shape: Shape,
    inputs: Vec<Option<NodeId>>,
    // `None` marks a leaf.
    op: Option<Box<dyn Backward<T>>>,
}

/// Single-pass recording of differentiable operations.
///
/// Nodes are appended in execution order, so every node's inputs precede
/// it. A tape built with [`Tape::inference`] records nothing: operations
/// still compute their values but return untracked tensors.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("recording", &self.recording)
            .finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Retain {
    All,
    Leaves,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn inference() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Starts tracking `value` as a gradient-receiving leaf.
    pub fn leaf(&mut self, value: &Tensor<T>) -> Tensor<T> {
        let plain = value.detach();
        if !self.recording {
            return plain;
        }
        let id = self.push(Node {
            shape: value.shape(),
            inputs: Vec::new(),
            op: None,
        });
        plain.with_node(id)
    }

    /// Attaches `value` to the tape as the output of `op` applied to
    /// `inputs`. Untracked inputs are remembered as such; if none of them is
    /// tracked (or the tape is not recording) the op is dropped.
    pub fn record<B>(&mut self, value: Tensor<T>, inputs: &[&Tensor<T>], op: B) -> Tensor<T>
    where
        B: Backward<T> + 'static,
    {
        let value = value.detach();
        if !self.recording || inputs.iter().all(|t| t.node().is_none()) {
            return value;
        }
        let id = self.push(Node {
            shape: value.shape(),
            inputs: inputs.iter().map(|t| t.node()).collect(),
            op: Some(Box::new(op)),
        });
        value.with_node(id)
    }

    fn push(&mut self, node: Node<T>) -> NodeId {
        for input in node.inputs.iter().flatten() {
            debug_assert!(input.0 < self.nodes.len());
        }
        self.nodes.push(node);
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar root. Gradients are kept for every node;
    /// nodes the root does not depend on get zeros.
    pub fn backward(self, root: &Tensor<T>) -> Result<Gradients<T>, TensorError> {
        self.sweep(root, Retain::All)
    }

    /// Like [`Tape::backward`] but releases intermediate gradients as the
    /// sweep passes them; only leaves keep theirs.
    pub fn backward_leaves(self, root: &Tensor<T>) -> Result<Gradients<T>, TensorError> {
        self.sweep(root, Retain::Leaves)
    }

    fn sweep(mut self, root: &Tensor<T>, retain: Retain) -> Result<Gradients<T>, TensorError> {
        if root.shape() != Shape::SCALAR {
            return Err(TensorError::NonScalarRoot(root.shape()));
        }
        let root_id = match root.node() {
            Some(id) if id.0 < self.nodes.len() => id.0,
            _ => return Err(TensorError::Detached),
        };

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root_id] = Some(vec![T::one()]);

        for id in (0..=root_id).rev() {
            let Some(op) = self.nodes[id].op.take() else {
                continue;
            };
            let (lower, upper) = grads.split_at_mut(id);
            let Some(grad) = upper[0].as_ref() else {
                continue;
            };
            let inputs = &self.nodes[id].inputs;
            let needed: Vec<bool> = inputs.iter().map(Option::is_some).collect();
            let local = op.backward(grad, &needed);
            debug_assert_eq!(local.len(), inputs.len(), "{}", op.name());
            for (input, g) in inputs.iter().zip(local) {
                let (Some(input), Some(g)) = (input, g) else {
                    continue;
                };
                debug_assert_eq!(g.len(), self.nodes[input.0].shape.numel(), "{}", op.name());
                match &mut lower[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(g),
                }
            }
            if retain == Retain::Leaves {
                upper[0] = None;
            }
        }

        let grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| {
                let keep = retain == Retain::All || node.op.is_none() && node.inputs.is_empty();
                keep.then(|| match g {
                    Some(g) => Tensor::from_parts(node.shape, g),
                    None => Tensor::zeros(node.shape),
                })
            })
            .collect();
        Ok(Gradients { grads })
    }
}

/// Result of a reverse sweep, indexed by the tensors that were tracked.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> fmt::Debug for Gradients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gradients").field("retained", &self.len()).finish()
    }
}

impl<T: Element> Gradients<T> {
    /// Gradient of the root with respect to `t`, if `t` was tracked and its
    /// gradient retained.
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        let id = t.node()?;
        self.grads.get(id.0)?.as_ref()
    }

    pub fn get_node(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0)?.as_ref()
    }

    pub fn len(&self) -> usize {
        self.grads.iter().flatten().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
