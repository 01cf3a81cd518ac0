//! Dense kernels shared by the convolution ops.

/// Convolution window geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.kernel) / self.stride + 1
    }
}

/// Unfolds `(C, H, W)` into a `(C*k*k, Ho*Wo)` row-major matrix.
pub(crate) fn im2col(x: &[f32], channels: usize, height: usize, width: usize, win: Window, cols: &mut [f32]) {
    im2col_band(x, channels, height, width, win, 0..win.out_len(height), cols);
}

/// [`im2col`] restricted to the output rows in `band`.
pub(crate) fn im2col_band(
    x: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    win: Window,
    band: std::ops::Range<usize>,
    cols: &mut [f32],
) {
    let wo = win.out_len(width);
    let k = win.kernel;
    let n = band.len() * wo;
    debug_assert_eq!(cols.len(), channels * k * k * n);
    for c in 0..channels {
        let plane = &x[c * height * width..(c + 1) * height * width];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * n..][..n];
                for (r, oh) in band.clone().enumerate() {
                    let ih = (oh * win.stride + ki) as isize - win.pad as isize;
                    let dst = &mut row[r * wo..(r + 1) * wo];
                    if ih < 0 || ih >= height as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[ih as usize * width..(ih as usize + 1) * width];
                    for (ow, d) in dst.iter_mut().enumerate() {
                        let iw = (ow * win.stride + kj) as isize - win.pad as isize;
                        *d = if iw < 0 || iw >= width as isize { 0.0 } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back into `(C, H, W)`, accumulating.
pub(crate) fn col2im(cols: &[f32], channels: usize, height: usize, width: usize, win: Window, x: &mut [f32]) {
    let (ho, wo) = (win.out_len(height), win.out_len(width));
    let k = win.kernel;
    let n = ho * wo;
    for c in 0..channels {
        let plane = &mut x[c * height * width..(c + 1) * height * width];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * n..][..n];
                for oh in 0..ho {
                    let ih = (oh * win.stride + ki) as isize - win.pad as isize;
                    if ih < 0 || ih >= height as isize {
                        continue;
                    }
                    let dst = &mut plane[ih as usize * width..(ih as usize + 1) * width];
                    for (ow, &v) in row[oh * wo..(oh + 1) * wo].iter().enumerate() {
                        let iw = (ow * win.stride + kj) as isize - win.pad as isize;
                        if iw >= 0 && iw < width as isize {
                            dst[iw as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `C = op(A) * op(B)` (or `C +=` when `accumulate`), all row-major.
/// `op(A)` is `m x k` and `op(B)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    gemm_strided(m, k, n, a, a_trans, b, b_trans, c, n, accumulate);
}

/// [`gemm`] writing into a `C` whose rows are `ldc` apart.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    ldc: usize,
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && ldc >= n);
    assert!(m == 0 || c.len() >= (m - 1) * ldc + n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index the strides can reach.
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
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let win = Window { kernel: 3, stride: 2, pad: 1 };
        let (c, h, w) = (2, 5, 4);
        let x: Vec<f32> = (0..c * h * w).map(|i| ((i * 7 % 11) as f32) - 5.0).collect();
        let n = win.out_len(h) * win.out_len(w) * c * 9;
        let y: Vec<f32> = (0..n).map(|i| ((i * 5 % 13) as f32) - 6.0).collect();
        let mut cols = vec![0.0; n];
        im2col(&x, c, h, w, win, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&y, c, h, w, win, &mut back);
        let lhs: f32 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f32 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
