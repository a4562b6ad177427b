//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a cheaply clonable handle to shared storage. Data is
//! interior-mutable so optimizers can update parameters in place; a gradient
//! buffer of identical shape is present exactly when the tensor participates
//! in differentiation. Gradients are only ever accumulated into, never
//! overwritten, so callers zero them between backward passes.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Ref, RefCell, RefMut};
use core::fmt;

use crate::error::{CoreError, Result};

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: Option<RefCell<Vec<f64>>>,
}

/// Shared handle to a dense tensor. `Clone` aliases the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.contains(&0) {
        return Err(CoreError::Contract(alloc::format!(
            "tensor extents must be positive, got {shape:?}"
        )));
    }
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(CoreError::Contract(alloc::format!(
            "shape {shape:?} holds {numel} values but {len} were supplied"
        )));
    }
    Ok(())
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        let grad = requires_grad.then(|| RefCell::new(vec![0.0; data.len()]));
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad,
            }),
        }
    }

    /// Constant tensor from row-major values.
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Tensor> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        Ok(Tensor::build(shape, data, false))
    }

    /// Learnable tensor: identical to [`Tensor::from_vec`] but with a
    /// zero-initialized gradient buffer attached.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Tensor> {
        let shape = shape.into();
        check_shape(&shape, data.len())?;
        Ok(Tensor::build(shape, data, true))
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor::build(shape, vec![0.0; n], false)
    }

    pub fn param_zeros(shape: impl Into<Vec<usize>>) -> Tensor {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        Tensor::build(shape, vec![0.0; n], true)
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Tensor {
        Tensor::build(vec![1], vec![value], false)
    }

    /// Fresh op output. Finiteness of forward results is a library invariant,
    /// checked in debug builds.
    pub(crate) fn output(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Tensor {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite value in op output"
        );
        Tensor::build(shape, data, requires_grad)
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.borrow().len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.grad.is_some()
    }

    /// True when both handles alias the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.inner.data.borrow()
    }

    pub(crate) fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        let d = self.data();
        if d.len() != 1 {
            return Err(CoreError::Contract(alloc::format!(
                "item() needs a single-element tensor, shape is {:?}",
                self.shape()
            )));
        }
        Ok(d[0])
    }

    /// Overwrite the stored values (same length required). Used by optimizer
    /// updates and gradient checking.
    pub fn set_data(&self, values: &[f64]) -> Result<()> {
        let mut d = self.inner.data.borrow_mut();
        if d.len() != values.len() {
            return Err(CoreError::Contract(alloc::format!(
                "set_data length {} does not match tensor of {} values",
                values.len(),
                d.len()
            )));
        }
        d.copy_from_slice(values);
        Ok(())
    }

    pub fn grad(&self) -> Option<Ref<'_, Vec<f64>>> {
        self.inner.grad.as_ref().map(|g| g.borrow())
    }

    pub(crate) fn grad_mut(&self) -> Option<RefMut<'_, Vec<f64>>> {
        self.inner.grad.as_ref().map(|g| g.borrow_mut())
    }

    pub fn grad_vec(&self) -> Option<Vec<f64>> {
        self.inner.grad.as_ref().map(|g| g.borrow().clone())
    }

    pub fn zero_grad(&self) {
        if let Some(g) = &self.inner.grad {
            g.borrow_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Add `delta` into the gradient buffer. No-op on constants.
    pub fn accumulate_grad(&self, delta: &[f64]) {
        if let Some(g) = &self.inner.grad {
            let mut g = g.borrow_mut();
            debug_assert_eq!(g.len(), delta.len());
            for (gi, di) in g.iter_mut().zip(delta) {
                *gi += di;
            }
        }
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.inner.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.inner.shape[1]
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.requires_grad())
            .field("data", &self.inner.data.borrow())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_length_agreement_is_enforced() {
        assert!(Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
        assert!(Tensor::from_vec(vec![0], vec![]).is_err());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn grad_buffer_present_iff_param() {
        let c = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let p = Tensor::param(vec![2], vec![1.0, 2.0]).unwrap();
        assert!(c.grad().is_none());
        assert!(!c.requires_grad());
        assert_eq!(p.grad_vec().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn grad_accumulates_instead_of_overwriting() {
        let p = Tensor::param(vec![2], vec![0.0, 0.0]).unwrap();
        p.accumulate_grad(&[1.0, 2.0]);
        p.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(p.grad_vec().unwrap(), vec![2.0, 4.0]);
        p.zero_grad();
        assert_eq!(p.grad_vec().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn clones_alias_storage() {
        let p = Tensor::param(vec![1], vec![3.0]).unwrap();
        let q = p.clone();
        q.set_data(&[5.0]).unwrap();
        assert_eq!(p.item().unwrap(), 5.0);
        assert!(p.same_storage(&q));
    }
}
