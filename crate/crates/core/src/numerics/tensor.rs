use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::grid::ImageGrid;
use crate::error::{shape, Result};

/// Channel-major tensor shape. Vectors are `(n, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w }
    }

    pub const fn vector(n: usize) -> Self {
        Self { c: n, h: 1, w: 1 }
    }

    pub const fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }
}

/// Dense `C × H × W` activation tensor used inside the networks.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, v: f64) -> Self {
        Self {
            shape,
            data: vec![v; shape.len()],
        }
    }

    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(crate::error::shape(format!(
                "tensor data length {} does not match {:?}",
                data.len(),
                shape
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: Shape::vector(data.len()),
            data,
        }
    }

    /// HWC grid to CHW tensor.
    pub fn from_grid(g: &ImageGrid) -> Self {
        let (h, w, c) = g.dims();
        let mut data = vec![0.0; h * w * c];
        let src = g.data();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data[ch * h * w + y * w + x] = src[(y * w + x) * c + ch];
                }
            }
        }
        Self {
            shape: Shape::new(c, h, w),
            data,
        }
    }

    /// CHW tensor to HWC grid.
    pub fn to_grid(&self) -> ImageGrid {
        let Shape { c, h, w } = self.shape;
        ImageGrid::from_fn(h, w, c, |y, x, ch| self.data[ch * h * w + y * w + x])
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let p = self.shape.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Spatial window `[top, top + h) × [left, left + w)` of every channel.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Tensor> {
        let s = self.shape;
        if top + h > s.h || left + w > s.w {
            return Err(shape(format!("crop {h}x{w} at ({top}, {left}) outside {s:?}")));
        }
        let mut data = Vec::with_capacity(s.c * h * w);
        for c in 0..s.c {
            for y in top..top + h {
                let row = c * s.plane() + y * s.w;
                data.extend_from_slice(&self.data[row + left..row + left + w]);
            }
        }
        Ok(Tensor {
            shape: Shape::new(s.c, h, w),
            data,
        })
    }

    pub fn ensure_shape(&self, s: Shape, what: &str) -> Result<()> {
        if self.shape == s {
            Ok(())
        } else {
            Err(shape(format!("{what}: expected {s:?}, got {:?}", self.shape)))
        }
    }
}

/// `c = alpha · op(a) · op(b) + beta · c` for row-major matrices, where
/// `op(a)` is `m × k` and `op(b)` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices were checked to cover every index addressed by the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
