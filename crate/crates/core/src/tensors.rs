//! Uniform access to a model's named parameter tensors.
//!
//! The optimizer, gradient clipping, checkpoint serialization, and the
//! finite-difference gradient checker all need to walk "every parameter" of
//! a parameter struct without caring what each tensor means. Structs expose
//! that walk through [`NamedTensors`]: a deterministic, stable-ordered list
//! of `(path, tensor)` pairs. Paths are `/`-separated (`layers/0/ffn/in/weight`)
//! and double as checkpoint keys.

use ndarray::{Array1, Array2};

/// Borrowed view of one parameter tensor.
pub enum TensorRef<'a> {
    Vector(&'a Array1<f64>),
    Matrix(&'a Array2<f64>),
}

/// Mutable view of one parameter tensor.
pub enum TensorMut<'a> {
    Vector(&'a mut Array1<f64>),
    Matrix(&'a mut Array2<f64>),
}

impl<'a> TensorRef<'a> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Vector(v) => vec![v.len()],
            TensorRef::Matrix(m) => m.shape().to_vec(),
        }
    }

    /// Contiguous element slice. All parameter tensors in this crate are
    /// allocated in standard row-major layout, so this cannot fail.
    pub fn as_slice(&self) -> &[f64] {
        match self {
            TensorRef::Vector(v) => v.as_slice().expect("parameter tensors are contiguous"),
            TensorRef::Matrix(m) => m.as_slice().expect("parameter tensors are contiguous"),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorRef::Vector(v) => v.len(),
            TensorRef::Matrix(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl<'a> TensorMut<'a> {
    pub fn shape(&self) -> Vec<usize> {
        match self {
            TensorMut::Vector(v) => vec![v.len()],
            TensorMut::Matrix(m) => m.shape().to_vec(),
        }
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        match self {
            TensorMut::Vector(v) => v.as_slice_mut().expect("parameter tensors are contiguous"),
            TensorMut::Matrix(m) => m.as_slice_mut().expect("parameter tensors are contiguous"),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorMut::Vector(v) => v.len(),
            TensorMut::Matrix(m) => m.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Stable-ordered walk over a struct's parameter tensors.
///
/// `tensors()` and `tensors_mut()` must list the same paths in the same
/// order, and two structurally-identical values (e.g. parameters and their
/// gradient accumulator) must agree on that order — callers zip the lists.
pub trait NamedTensors {
    fn tensors(&self) -> Vec<(String, TensorRef<'_>)>;
    fn tensors_mut(&mut self) -> Vec<(String, TensorMut<'_>)>;

    /// Total number of scalar parameters.
    fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}
