//! Row-major dense kernels shared by the tape ops.
//!
//! Every output element is accumulated in a fixed order that depends only on
//! its own row, so results do not change with batch size or partitioning.

use super::tensor::Real;

/// `c += a · b` with `a: m×k`, `b: k×n`, `c: m×n`.
pub fn matmul_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_ip * b_pj;
            }
        }
    }
}

/// `c += aᵀ · b` with `a: k×m`, `b: k×n`, `c: m×n`.
pub fn matmul_at_b_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &a_pi) in a_row.iter().enumerate() {
            if a_pi == T::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_ij, &b_pj) in c_row.iter_mut().zip(b_row) {
                *c_ij = *c_ij + a_pi * b_pj;
            }
        }
    }
}

/// `c += a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`.
pub fn matmul_a_bt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc = acc + x * y;
            }
            c[i * n + j] = c[i * n + j] + acc;
        }
    }
}

/// Geometry of a square-kernel 2-D convolution over one sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// Calls `f(col_row, col_col, input_index)` for every in-bounds tap.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (oh, ow) = (self.out_height(), self.out_width());
        let k = self.kernel;
        for c in 0..self.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.height as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.width as isize {
                                continue;
                            }
                            let input = (c * self.height + iy as usize) * self.width + ix as usize;
                            f(row, oy * ow + ox, input);
                        }
                    }
                }
            }
        }
    }

    pub fn im2col<T: Real>(&self, input: &[T], cols: &mut [T]) {
        let n = self.col_cols();
        cols.iter_mut().for_each(|v| *v = T::zero());
        self.for_each_tap(|row, col, idx| cols[row * n + col] = input[idx]);
    }

    pub fn col2im_acc<T: Real>(&self, cols: &[T], input_grad: &mut [T]) {
        let n = self.col_cols();
        self.for_each_tap(|row, col, idx| input_grad[idx] = input_grad[idx] + cols[row * n + col]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
        let mut t = vec![0.0; a.len()];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = a[r * cols + c];
            }
        }
        t
    }

    #[test]
    fn matmul_variants_agree_with_triple_loop() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let expect = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        matmul_acc(&a, &b, &mut c, m, k, n);
        let mut c_tn = vec![0.0; m * n];
        matmul_at_b_acc(&transpose(&a, m, k), &b, &mut c_tn, m, k, n);
        let mut c_nt = vec![0.0; m * n];
        matmul_a_bt_acc(&a, &transpose(&b, k, n), &mut c_nt, m, k, n);
        for i in 0..m * n {
            assert!((c[i] - expect[i]).abs() < 1e-12);
            assert!((c_tn[i] - expect[i]).abs() < 1e-12);
            assert!((c_nt[i] - expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_extents() {
        let g = ConvGeometry {
            channels: 1,
            height: 32,
            width: 32,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        assert_eq!((g.out_height(), g.out_width()), (16, 16));
        assert_eq!(g.col_rows(), 9);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeometry {
            channels: 2,
            height: 5,
            width: 4,
            kernel: 3,
            stride: 2,
            pad: 1,
        };
        let x: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let y: Vec<f64> = (0..g.col_rows() * g.col_cols())
            .map(|i| (i as f64 * 0.7).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        g.col2im_acc(&y, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
