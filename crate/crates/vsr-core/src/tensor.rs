//! Dense tensors with shared ownership.
//!
//! A `Tensor` is a cheap-to-clone handle (`Rc`) to a row-major contiguous
//! buffer of f64 values plus an optional gradient buffer.  Mutation goes
//! through interior mutability so the autodiff tape can hold handles to every
//! operand and write gradients during the backward sweep.  Handles are not
//! `Send`: a tensor graph is confined to one thread by construction.

use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};
use core::fmt;

use crate::error::{Error, Result};
use crate::rng::StreamRng;

/// Numeric precision of a tensor's values.
///
/// Storage is always f64.  In `F32` mode every operation result is rounded
/// through f32 before being stored, so the value stream is exactly what a
/// single-precision engine would produce while the implementation stays one
/// code path.  Gradients are kept in f64 in both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    /// Result precision of an op over operands: reduced precision is sticky.
    pub fn combine(self, other: Precision) -> Precision {
        if self == Precision::F32 || other == Precision::F32 {
            Precision::F32
        } else {
            Precision::F64
        }
    }

    #[inline]
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            Precision::F64 => v,
            Precision::F32 => v as f32 as f64,
        }
    }

    pub fn quantize_all(self, data: &mut [f64]) {
        if self == Precision::F32 {
            for v in data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: Cell<bool>,
    /// Set by the tape when this tensor is produced by a recorded op; such a
    /// tensor carries history and its consumers must also be recorded.
    tracked: Cell<bool>,
    precision: Precision,
}

/// Shared handle to a tensor.  Cloning is O(1) and aliases the same buffer.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides of a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl Tensor {
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(Error::shape(alloc::format!(
                "shape {:?} wants {} values, got {}",
                shape,
                numel(shape),
                data.len()
            )));
        }
        Ok(Self::build(shape.to_vec(), data, Precision::F64))
    }

    pub(crate) fn build(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
                tracked: Cell::new(false),
                precision,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::build(shape.to_vec(), vec![0.0; numel(shape)], Precision::F64)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::build(shape.to_vec(), vec![value; numel(shape)], Precision::F64)
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::build(vec![], vec![value], Precision::F64)
    }

    /// I.i.d. normal entries with the given std, drawn from `rng`.
    pub fn randn(shape: &[usize], std: f64, rng: &mut StreamRng) -> Tensor {
        let data = (0..numel(shape)).map(|_| rng.normal_scaled(0.0, std)).collect();
        Self::build(shape.to_vec(), data, Precision::F64)
    }

    /// I.i.d. uniform entries in [lo, hi).
    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut StreamRng) -> Tensor {
        let data = (0..numel(shape)).map(|_| rng.uniform_range(lo, hi)).collect();
        Self::build(shape.to_vec(), data, Precision::F64)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.inner.shape)
    }

    /// Borrow the value buffer.  Callers must drop the borrow before any
    /// mutation of the same tensor.
    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// The single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> f64 {
        let d = self.inner.data.borrow();
        assert!(d.len() == 1, "item() on tensor with {} elements", d.len());
        d[0]
    }

    pub fn precision(&self) -> Precision {
        self.inner.precision
    }

    /// Copy of this tensor stored at the given precision (values rounded when
    /// narrowing).  The copy carries no gradient state.
    pub fn with_precision(&self, precision: Precision) -> Tensor {
        let mut data = self.to_vec();
        precision.quantize_all(&mut data);
        Self::build(self.inner.shape.clone(), data, precision)
    }

    /// Mark this tensor as a trainable leaf.  Builder style so parameter
    /// construction reads as one expression.
    pub fn requires_grad(self) -> Tensor {
        self.inner.requires_grad.set(true);
        self
    }

    pub fn is_leaf_param(&self) -> bool {
        self.inner.requires_grad.get()
    }

    /// Whether the backward sweep must propagate through this tensor.
    pub(crate) fn wants_grad(&self) -> bool {
        self.inner.requires_grad.get() || self.inner.tracked.get()
    }

    pub(crate) fn mark_tracked(&self) {
        self.inner.tracked.set(true);
    }

    /// A copy detached from any recorded history: plain data, no flags.
    pub fn detach(&self) -> Tensor {
        Self::build(self.inner.shape.clone(), self.to_vec(), self.inner.precision)
    }

    /// Current gradient, if any backward pass has written one.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Add `1.0` to the gradient of a scalar tensor; backward entry point.
    pub(crate) fn seed_unit_grad(&self) {
        self.accum_grad(|g| g[0] += 1.0);
    }

    /// Run `f` over the gradient buffer, allocating zeros on first touch.
    pub(crate) fn accum_grad(&self, f: impl FnOnce(&mut [f64])) {
        let mut slot = self.inner.grad.borrow_mut();
        let buf = slot.get_or_insert_with(|| vec![0.0; self.len()]);
        f(buf);
    }

    /// Read the gradient while holding the borrow; `None` when no gradient
    /// has reached this tensor.
    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.inner.grad.borrow()
    }

    /// Mutate the value buffer in place.  Used by optimizers and loaders; the
    /// tensor keeps its precision, so F32 tensors re-quantize after mutation.
    pub fn update_data(&self, f: impl FnOnce(&mut [f64])) {
        let mut d = self.inner.data.borrow_mut();
        f(&mut d);
        self.inner.precision.quantize_all(&mut d);
    }

    /// Overwrite the values from a slice of the same length.
    pub fn copy_from(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::shape(alloc::format!(
                "copy_from: have {} elements, got {}",
                self.len(),
                values.len()
            )));
        }
        self.update_data(|d| d.copy_from_slice(values));
        Ok(())
    }

    /// Stable identity of the underlying buffer, for debugging and maps.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    pub fn same_buffer(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// True when every value is finite.
    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let d = self.inner.data.borrow();
        let preview: Vec<f64> = d.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("precision", &self.inner.precision)
            .field("requires_grad", &self.inner.requires_grad.get())
            .field("data", &preview)
            .finish()
    }
}

/// Shape as a short display string, for error messages.
pub fn fmt_shape(shape: &[usize]) -> String {
    alloc::format!("{shape:?}")
}
