//! Dense 4-D tensors and the reverse-mode autodiff tape built on them.
//!
//! [`Tensor4`] is a plain value (shape plus row-major data). Differentiable
//! computation happens on a [`Graph`], which records every op applied to
//! [`Var`] handles and replays them in reverse during [`Graph::backward`].
//!
//! Everything is generic over [`Element`] so the same kernels run in `f32`
//! for training and in `f64` for gradient verification.

use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;

use crate::error::{Error, Result};

mod gradcheck;
mod graph;
pub mod kernels;
mod rng;

pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{sigmoid_value, Activation, Graph, Var};
pub use rng::PrngState;

/// Floating-point element type usable by the kernels.
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + MulAssign
    + Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    /// Sigmoid clamp bound; outputs live in `[SIGMOID_EPS, 1 - SIGMOID_EPS]`.
    const SIGMOID_EPS: f64 = 1e-7;

    /// Row-major `C = A·B + beta·C` with arbitrary strides, `beta` ∈ {0, 1}.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        accumulate: bool,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits element type")
    }
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                accumulate: bool,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                let beta = if accumulate { 1.0 } else { 0.0 };
                // SAFETY: callers size the slices so that every strided index
                // touched by an m×k, k×n, m×n product lies inside them; the
                // debug assertions below check the extreme offsets.
                debug_assert!(k == 0 || max_offset(m, k, rsa, csa) < a.len());
                debug_assert!(k == 0 || max_offset(k, n, rsb, csb) < b.len());
                debug_assert!(max_offset(m, n, rsc, csc) < c.len());
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_element!(f32, matrixmultiply::sgemm);
impl_element!(f64, matrixmultiply::dgemm);

fn max_offset(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    ((rows as isize - 1) * rs + (cols as isize - 1) * cs) as usize
}

/// `(n, c, h, w)` extent of a [`Tensor4`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape4 {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape4 { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape4::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn is_positive(&self) -> bool {
        self.n > 0 && self.c > 0 && self.h > 0 && self.w > 0
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl From<[usize; 4]> for Shape4 {
    fn from(d: [usize; 4]) -> Self {
        Shape4::new(d[0], d[1], d[2], d[3])
    }
}

impl fmt::Display for Shape4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Contiguous row-major `(n, c, h, w)` array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T = f32> {
    shape: Shape4,
    data: Vec<T>,
}

impl<T: Element> Tensor4<T> {
    pub fn from_vec(shape: impl Into<Shape4>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        if data.len() != shape.numel() {
            return Err(Error::Shape {
                op: "from_vec",
                detail: format!(
                    "{} elements do not fill shape {shape} ({} required)",
                    data.len(),
                    shape.numel()
                ),
            });
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn full(shape: impl Into<Shape4>, value: T) -> Self {
        let shape = shape.into();
        Tensor4 {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn zeros(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: impl Into<Shape4>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full(Shape4::scalar(), value)
    }

    pub fn from_fn(shape: impl Into<Shape4>, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor4 { shape, data }
    }

    /// Samples i.i.d. from `U[lo, hi)`.
    pub fn uniform(shape: impl Into<Shape4>, lo: f64, hi: f64, rng: &mut PrngState) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| T::lit(lo + (hi - lo) * rng.gen::<f64>()))
            .collect();
        Tensor4 { shape, data }
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let o = self.shape.offset(n, c, h, w);
        self.data[o] = v;
    }

    pub fn reshape(self, shape: impl Into<Shape4>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// The single value of a `(1,1,1,1)` tensor.
    pub fn item(&self) -> Result<T> {
        if self.shape != Shape4::scalar() {
            return Err(Error::Contract(format!(
                "expected a scalar (1, 1, 1, 1) tensor, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.expect_same_shape("dot", other)?;
        Ok(self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).sum())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Element>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self
                .data
                .iter()
                .map(|x| U::from_f64(x.to_f64().unwrap_or(f64::NAN)).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Channels `start..start+len` of every batch item.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.c {
            return Err(Error::Shape {
                op: "slice_channels",
                detail: format!("channels {start}..{} out of range for {s}", start + len),
            });
        }
        let plane = s.plane();
        let mut data = Vec::with_capacity(s.n * len * plane);
        for n in 0..s.n {
            let base = s.offset(n, start, 0, 0);
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Ok(Tensor4 {
            shape: Shape4::new(s.n, len, s.h, s.w),
            data,
        })
    }

    /// Items `start..start+len` along the batch axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let s = self.shape;
        if len == 0 || start + len > s.n {
            return Err(Error::Shape {
                op: "slice_batch",
                detail: format!("items {start}..{} out of range for {s}", start + len),
            });
        }
        let item = s.c * s.plane();
        Ok(Tensor4 {
            shape: Shape4::new(len, s.c, s.h, s.w),
            data: self.data[start * item..(start + len) * item].to_vec(),
        })
    }

    /// Concatenates along the batch axis; all items must share `(c, h, w)`.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Shape {
            op: "stack",
            detail: "no tensors to stack".into(),
        })?;
        let s = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(|t| t.numel()).sum());
        let mut n = 0;
        for t in items {
            let ts = t.shape;
            if (ts.c, ts.h, ts.w) != (s.c, s.h, s.w) {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: s,
                    rhs: ts,
                });
            }
            n += ts.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 {
            shape: Shape4::new(n, s.c, s.h, s.w),
            data,
        })
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }
}
