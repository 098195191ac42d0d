//! Reverse-mode automatic differentiation over a recording tape.
//!
//! A [`Tape`] records each primitive together with the values backward
//! needs, then replays the records in exact reverse order, accumulating
//! gradients by summation wherever a value fans out. The tape's
//! [`Mode`] selects the ReLU backward rule: `Standard` propagates the
//! plain subgradient, `Guided` additionally masks out negative upstream
//! gradients. The mode is fixed for the lifetime of the tape, so a whole
//! backward pass always runs under one rule.
//!
//! A tape and its tensors belong to one pass on one thread; independent
//! passes use independent tapes and may run concurrently.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::Tensor;

/// Backward rule selector for ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Standard,
    Guided,
}

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ValueId(usize);

enum Record {
    Leaf,
    Relu {
        input: ValueId,
    },
    Conv2d {
        input: ValueId,
        kernel: ValueId,
        bias: ValueId,
    },
    MaxPool {
        input: ValueId,
        switches: Vec<u32>,
    },
    Fc {
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    },
    LogSoftmax {
        input: ValueId,
    },
    NllLoss {
        log_probs: ValueId,
        target: usize,
    },
    Scale {
        input: ValueId,
        factor: f32,
    },
    Reshape {
        input: ValueId,
    },
}

struct Node {
    value: Tensor,
    record: Record,
}

/// Wengert tape: ordered records of primitive ops with saved inputs.
pub struct Tape {
    mode: Mode,
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new(mode: Mode) -> Self {
        Tape {
            mode,
            nodes: Vec::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> ValueId {
        self.push(value, Record::Leaf)
    }

    /// Forward value held at `id`.
    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, record: Record) -> ValueId {
        self.nodes.push(Node { value, record });
        ValueId(self.nodes.len() - 1)
    }

    pub fn relu(&mut self, input: ValueId) -> ValueId {
        let out = ops::relu(self.value(input));
        self.push(out, Record::Relu { input })
    }

    pub fn conv2d(&mut self, input: ValueId, kernel: ValueId, bias: ValueId) -> Result<ValueId> {
        let out = ops::conv2d(self.value(input), self.value(kernel), self.value(bias))?;
        self.push(
            out,
            Record::Conv2d {
                input,
                kernel,
                bias,
            },
        );
        Ok(ValueId(self.nodes.len() - 1))
    }

    pub fn max_pool(&mut self, input: ValueId, window: usize, stride: usize) -> Result<ValueId> {
        let (out, switches) = ops::max_pool(self.value(input), window, stride)?;
        Ok(self.push(out, Record::MaxPool { input, switches }))
    }

    pub fn fully_connected(
        &mut self,
        input: ValueId,
        weight: ValueId,
        bias: ValueId,
    ) -> Result<ValueId> {
        let out = ops::fully_connected(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            out,
            Record::Fc {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn log_softmax(&mut self, input: ValueId) -> Result<ValueId> {
        let out = ops::log_softmax(self.value(input))?;
        Ok(self.push(out, Record::LogSoftmax { input }))
    }

    pub fn nll_loss(&mut self, log_probs: ValueId, target: usize) -> Result<ValueId> {
        let out = ops::nll_loss(self.value(log_probs), target)?;
        Ok(self.push(out, Record::NllLoss { log_probs, target }))
    }

    pub fn scale(&mut self, input: ValueId, factor: f32) -> Result<ValueId> {
        let out = ops::scale(self.value(input), factor)?;
        Ok(self.push(out, Record::Scale { input, factor }))
    }

    /// Shape-only view change; gradients pass through untouched.
    pub fn reshape(&mut self, input: ValueId, shape: Vec<usize>) -> Result<ValueId> {
        let out = self.value(input).clone().reshaped(shape)?;
        Ok(self.push(out, Record::Reshape { input }))
    }

    /// Replays the tape in reverse from `output`, seeding with `seed`.
    ///
    /// Returns one gradient per recorded value; gradients of values that do
    /// not feed `output` are zero. Fan-out accumulates by summation.
    pub fn backward(&self, output: ValueId, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape {
                detail: "backward requested before any forward pass was recorded".into(),
            });
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::Tape {
                detail: format!(
                    "output id {} not on this tape ({} nodes)",
                    output.0,
                    self.nodes.len()
                ),
            });
        }
        let out_shape = self.nodes[output.0].value.shape();
        if seed.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                op: "backward seed",
                expected: format!("{:?}", out_shape),
                got: format!("{:?}", seed.shape()),
            });
        }
        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape().to_vec()))
            .collect();
        grads[output.0] = seed.clone();

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            // Dead branches carry an all-zero gradient and contribute nothing.
            if idx != output.0 && grads[idx].data().iter().all(|&v| v == 0.0) {
                continue;
            }
            let g = std::mem::replace(&mut grads[idx], Tensor::zeros(vec![1]));
            match &node.record {
                Record::Leaf => {
                    grads[idx] = g;
                    continue;
                }
                Record::Relu { input } => {
                    let d = match self.mode {
                        Mode::Standard => ops::relu_backward(self.value(*input), &g),
                        Mode::Guided => ops::relu_backward_guided(self.value(*input), &g),
                    };
                    accumulate(&mut grads[input.0], &d);
                }
                Record::Conv2d {
                    input,
                    kernel,
                    bias,
                } => {
                    let (dx, dk, db) = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*kernel),
                        self.value(*bias),
                        &g,
                    )?;
                    accumulate(&mut grads[input.0], &dx);
                    accumulate(&mut grads[kernel.0], &dk);
                    accumulate(&mut grads[bias.0], &db);
                }
                Record::MaxPool { input, switches } => {
                    let dx = ops::max_pool_backward(self.value(*input).shape(), switches, &g);
                    accumulate(&mut grads[input.0], &dx);
                }
                Record::Fc {
                    input,
                    weight,
                    bias,
                } => {
                    let (dx, dw, db) =
                        ops::fully_connected_backward(self.value(*input), self.value(*weight), &g)?;
                    accumulate(&mut grads[input.0], &dx);
                    accumulate(&mut grads[weight.0], &dw);
                    accumulate(&mut grads[bias.0], &db);
                }
                Record::LogSoftmax { input } => {
                    let dx = ops::log_softmax_backward(&node.value, &g);
                    accumulate(&mut grads[input.0], &dx);
                }
                Record::NllLoss { log_probs, target } => {
                    let dx = ops::nll_loss_backward(self.value(*log_probs).len(), *target, &g);
                    accumulate(&mut grads[log_probs.0], &dx);
                }
                Record::Scale { input, factor } => {
                    let mut dx = g.clone();
                    for v in dx.data_mut() {
                        *v *= factor;
                    }
                    accumulate(&mut grads[input.0], &dx);
                }
                Record::Reshape { input } => {
                    let target_shape = self.value(*input).shape().to_vec();
                    let dx = g.clone().reshaped(target_shape)?;
                    accumulate(&mut grads[input.0], &dx);
                }
            }
            grads[idx] = g;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(dst: &mut Tensor, src: &Tensor) {
    debug_assert_eq!(dst.shape(), src.shape());
    for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
        *d += s;
    }
}

/// Per-value gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn take(&mut self, id: ValueId) -> Tensor {
        std::mem::replace(&mut self.grads[id.0], Tensor::zeros(vec![1]))
    }
}
