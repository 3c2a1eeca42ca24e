use std::fmt;

use crate::error::{Result, TensorError};
use crate::real::Real;

/// Dimensions `(n, c, h, w)` of a rank-4 tensor.
///
/// Lower-rank values use trailing unit dims: a matrix `[rows, cols]` is
/// `(rows, cols, 1, 1)`, a vector `[len]` is `(len, 1, 1, 1)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape([rows, cols, 1, 1])
    }

    pub const fn vector(len: usize) -> Self {
        Shape([len, 1, 1, 1])
    }

    pub const fn scalar() -> Self {
        Shape([1, 1, 1, 1])
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }

    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }

    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    /// Elements in one `h×w` plane.
    #[inline]
    pub fn plane(&self) -> usize {
        self.0[2] * self.0[3]
    }

    /// Elements in one item of the leading dimension.
    #[inline]
    pub fn item(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn with_n(&self, n: usize) -> Shape {
        Shape([n, self.0[1], self.0[2], self.0[3]])
    }

    pub fn with_c(&self, c: usize) -> Shape {
        Shape([self.0[0], c, self.0[2], self.0[3]])
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "[{n}, {c}, {h}, {w}]")
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Dense row-major rank-4 array over `(n, c, h, w)`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
                expected: shape.numel(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.numel());
        for a in 0..n {
            for b in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f([a, b, y, x]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn scalar(v: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Tensor {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Shape::matrix(rows, cols), data)
    }

    pub fn from_f64(shape: Shape, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.data.len() {
            return Err(TensorError::shape(
                "reshape",
                format!("{} -> {}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Items `[start, end)` along the leading dimension.
    pub fn slice_n(&self, start: usize, end: usize) -> Tensor<T> {
        let item = self.shape.item();
        Tensor {
            shape: self.shape.with_n(end - start),
            data: self.data[start * item..end * item].to_vec(),
        }
    }

    /// Stacks tensors along the leading dimension.
    pub fn cat_n(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::arg("cat_n", "no inputs"))?;
        let mut n = 0;
        for p in parts {
            if p.shape.item() != first.shape.item()
                || p.shape.0[1..] != first.shape.0[1..]
            {
                return Err(TensorError::shape(
                    "cat_n",
                    format!("{} vs {}", p.shape, first.shape),
                ));
            }
            n += p.shape.n();
        }
        let mut data = Vec::with_capacity(n * first.shape.item());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: first.shape.with_n(n),
            data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Largest elementwise absolute difference; `None` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (a, b)| m.max((*a - *b).abs())),
        )
    }
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{} ", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        if self.data.len() > SHOWN {
            write!(f, "{head:?}..")
        } else {
            write!(f, "{head:?}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_shape() {
        assert!(Tensor::<f64>::new(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        assert!(Tensor::<f64>::new(Shape::new(1, 2, 2, 2), vec![0.0; 8]).is_ok());
    }

    #[test]
    fn offsets_are_row_major() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 5), |[n, c, h, w]| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.data()[Shape::new(2, 3, 4, 5).offset(1, 0, 2, 1)], 1021.0);
    }

    #[test]
    fn slice_and_cat_round_trip() {
        let t = Tensor::<f32>::from_fn(Shape::new(5, 2, 1, 3), |[n, c, _, w]| {
            (n * 6 + c * 3 + w) as f32
        });
        let a = t.slice_n(0, 2);
        let b = t.slice_n(2, 5);
        assert_eq!(Tensor::cat_n(&[&a, &b]).unwrap(), t);
    }
}
