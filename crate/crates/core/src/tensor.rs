//! Minimal dense tensors for the network code: an NCHW batch tensor and a
//! row-major matrix, with a thin wrapper over the `matrixmultiply` sgemm
//! kernel. Nothing here is clever; the layers own all the structure.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::ImageTensor;

/// Batch tensor in NCHW layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor4 {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor buffer size mismatch");
        Self { n, c, h, w, data }
    }

    /// Stack single-channel images into a batch.
    pub fn from_images(images: &[ImageTensor]) -> Self {
        assert!(!images.is_empty());
        let (h, w) = (images[0].h, images[0].w);
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            assert_eq!((img.h, img.w), (h, w), "batch images must share a shape");
            data.extend_from_slice(&img.data);
        }
        Self {
            n: images.len(),
            c: 1,
            h,
            w,
            data,
        }
    }

    #[inline]
    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.h * self.w
    }

    /// Slice holding one image of the batch (all channels).
    #[inline]
    pub fn image(&self, n: usize) -> &[f32] {
        let len = self.c * self.h * self.w;
        &self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn image_mut(&mut self, n: usize) -> &mut [f32] {
        let len = self.c * self.h * self.w;
        &mut self.data[n * len..(n + 1) * len]
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((n * self.c + c) * self.h + y) * self.w + x]
    }

    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    pub fn map(mut self, f: impl Fn(f32) -> f32) -> Self {
        for v in &mut self.data {
            *v = f(*v);
        }
        self
    }
}

/// Row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer size mismatch");
        Self { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// `c += a(m,k) . b(k,n)`, with optional transposes on raw slices.
///
/// `a` is `m x k` (or `k x m` when `trans_a`), `b` is `k x n` (or `n x k`
/// when `trans_b`), `c` is `m x n`, all row-major.
#[allow(clippy::too_many_arguments)]
pub fn gemm_acc(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    trans_a: bool,
    b: &[f32],
    trans_b: bool,
    c: &mut [f32],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a {
        (1isize, m as isize)
    } else {
        (k as isize, 1isize)
    };
    let (rsb, csb) = if trans_b {
        (1isize, k as isize)
    } else {
        (n as isize, 1isize)
    };
    unsafe {
        matrixmultiply::sgemm(
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
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a . b` into a fresh matrix (no accumulation).
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul inner dimension mismatch");
    let mut c = Matrix::zeros(a.rows, b.cols);
    gemm_acc(
        a.rows, a.cols, b.cols, &a.data, false, &b.data, false, &mut c.data,
    );
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposes() {
        // a^T where a is stored 3x2: logical a' is 2x3
        let a = vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // 3x2 storage
        let b = vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = vec![0.0; 4];
        gemm_acc(2, 3, 2, &a, true, &b, false, &mut c);
        assert_eq!(c, vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn tensor_indexing_roundtrip() {
        let mut t = Tensor4::zeros(2, 3, 4, 5);
        t.data[((1 * 3 + 2) * 4 + 3) * 5 + 4] = 9.0;
        assert_eq!(t.at(1, 2, 3, 4), 9.0);
        assert_eq!(t.image(1).len(), 3 * 4 * 5);
    }
}
