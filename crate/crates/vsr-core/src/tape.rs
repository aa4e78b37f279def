//! Reverse-mode automatic differentiation tape.
//!
//! Every differentiable operation is a method on [`Tape`].  While the tape is
//! recording, each op that involves a gradient-bearing operand pushes one
//! backward step; [`Tape::backward`] seeds the loss gradient with one and
//! replays the steps in reverse, accumulating into `grad` buffers.  Replay
//! order is exactly reverse recording order, so gradients are deterministic
//! down to the last bit for a fixed forward pass.
//!
//! A tape and the tensors recorded on it belong to a single thread.  Calling
//! `backward` twice accumulates gradients twice; callers zero gradients
//! between steps.  Ops on a non-recording tape (see [`Tape::inference`])
//! compute forward values only, which is how evaluation and decoding run
//! without paying for history.

use alloc::boxed::Box;
use alloc::vec::Vec;
use core::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

type BackStep = Box<dyn Fn()>;

pub struct Tape {
    steps: RefCell<Vec<BackStep>>,
    /// Output tensor of each recorded step; after replay the gradients of
    /// non-leaf outputs are cleared so a later backward starts fresh.
    outputs: RefCell<Vec<Tensor>>,
    recording: Cell<bool>,
}

impl Tape {
    /// A recording tape, for training.
    pub fn new() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: Cell::new(true),
        }
    }

    /// A non-recording tape: ops run forward-only.
    pub fn inference() -> Tape {
        Tape {
            steps: RefCell::new(Vec::new()),
            outputs: RefCell::new(Vec::new()),
            recording: Cell::new(false),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording.get()
    }

    /// Number of recorded backward steps.
    pub fn len(&self) -> usize {
        self.steps.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a backward step for `out` if the tape is recording and any
    /// operand carries gradient history (`involved`).  Marks `out` as tracked
    /// so downstream ops record too.
    pub(crate) fn record_if(&self, involved: bool, out: &Tensor, back: impl Fn() + 'static) {
        if self.recording.get() && involved {
            out.mark_tracked();
            self.steps.borrow_mut().push(Box::new(back));
            self.outputs.borrow_mut().push(out.clone());
        }
    }

    /// Propagate gradients from a scalar loss back to every leaf that
    /// contributed to it.  Leaf gradients accumulate across calls (two
    /// backward passes double them); intermediate gradients are cleared
    /// after the sweep so each pass starts from a clean slate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(Error::shape(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if !loss.data()[0].is_finite() {
            return Err(Error::numeric(alloc::format!(
                "backward on non-finite loss {}",
                loss.data()[0]
            )));
        }
        loss.seed_unit_grad();
        let steps = self.steps.borrow();
        for step in steps.iter().rev() {
            step();
        }
        drop(steps);
        for out in self.outputs.borrow().iter() {
            if !out.is_leaf_param() {
                out.zero_grad();
            }
        }
        Ok(())
    }

    /// Drop all recorded steps, releasing the tensors they hold.
    pub fn clear(&self) {
        self.steps.borrow_mut().clear();
        self.outputs.borrow_mut().clear();
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}
