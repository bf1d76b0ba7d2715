use crate::error::{dim_err, Result};
use crate::scalar::Scalar;

/// Dense row-major array of rank 0 to 3, laid out as (batch, channels, length).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > 3 {
            return Err(dim_err!("rank {} exceeds 3", shape.len()));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {:?} holds {} values but {} were given",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n]).expect("zeros shape")
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("full shape")
    }

    pub fn scalar(value: T) -> Self {
        Self::new(&[], vec![value]).expect("scalar shape")
    }

    /// Row vector shaped `[1, 1, len]`.
    pub fn signal(samples: &[T]) -> Self {
        Self::new(&[1, 1, samples.len()], samples.to_vec()).expect("signal shape")
    }

    /// Marks the tensor as a differentiable leaf (or clears the mark).
    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.set_requires_grad(requires_grad);
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        self.grad = if requires_grad {
            Some(vec![T::zero(); self.data.len()])
        } else {
            None
        };
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    pub(crate) fn accumulate_grad(&mut self, delta: &[T]) {
        if let Some(g) = self.grad.as_mut() {
            for (acc, d) in g.iter_mut().zip(delta) {
                *acc += *d;
            }
        }
    }

    /// Unpacks a rank-3 shape.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [b, c, l] => Ok((b, c, l)),
            _ => Err(dim_err!("expected rank-3 tensor, got shape {:?}", self.shape)),
        }
    }

    /// Unpacks a rank-1 shape.
    pub fn dims1(&self) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(dim_err!("expected rank-1 tensor, got shape {:?}", self.shape)),
        }
    }

    /// Returns the single value of a scalar (or one-element) tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Converts element type, dropping any gradient.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor::new(&self.shape, self.data.iter().map(|v| U::lit(v.as_f64())).collect()).expect("same shape")
    }
}
