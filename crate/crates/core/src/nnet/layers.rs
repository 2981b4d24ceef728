//! Batched layer kernels.
//!
//! Activations use a channel-major batch layout: element `(c, b, y, x)` of a
//! `channels x batch x h x w` tensor lives at `((c * batch + b) * h + y) * w + x`,
//! so a 3x3 convolution over the whole batch is a single matrix product
//! against the im2col matrix.

/// Row-major view of a matrix, optionally read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, transposed: false }
    }

    pub fn t(self) -> Self {
        Self { transposed: !self.transposed, ..self }
    }

    fn shape(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.transposed {
            (1, self.cols as isize)
        } else {
            (self.cols as isize, 1)
        }
    }
}

/// `c = a * b + beta * c` with `c` row-major.
pub(crate) fn gemm(a: Mat, b: Mat, beta: f64, c: &mut [f64]) {
    let (m, k) = a.shape();
    let (k2, n) = b.shape();
    assert_eq!(k, k2, "inner dimensions differ");
    assert!(a.data.len() >= a.rows * a.cols && b.data.len() >= b.rows * b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the shapes and strides describe regions inside the asserted
    // slice lengths, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub batch: usize,
    pub h: usize,
    pub w: usize,
}

impl ConvDims {
    pub fn plane(&self) -> usize {
        self.batch * self.h * self.w
    }

    pub fn taps(&self) -> usize {
        self.cin * 9
    }
}

/// Unfold 3x3 neighborhoods (zero padding 1) into a `cin*9 x batch*h*w` matrix.
pub(crate) fn im2col(x: &[f64], d: ConvDims, cols: &mut [f64]) {
    let (h, w, np) = (d.h, d.w, d.plane());
    for ci in 0..d.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * np..][..np];
                for b in 0..d.batch {
                    let src = &x[(ci * d.batch + b) * h * w..][..h * w];
                    let dst = &mut row[b * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        let out = &mut dst[y * w..][..w];
                        if sy < 0 || sy >= h as isize {
                            out.fill(0.0);
                            continue;
                        }
                        let line = &src[sy as usize * w..][..w];
                        match kx {
                            0 => {
                                out[0] = 0.0;
                                out[1..].copy_from_slice(&line[..w - 1]);
                            }
                            1 => out.copy_from_slice(line),
                            _ => {
                                out[..w - 1].copy_from_slice(&line[1..]);
                                out[w - 1] = 0.0;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto the input grid.
pub(crate) fn col2im(cols: &[f64], d: ConvDims, dx: &mut [f64]) {
    let (h, w, np) = (d.h, d.w, d.plane());
    dx[..d.cin * np].fill(0.0);
    for ci in 0..d.cin {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * np..][..np];
                for b in 0..d.batch {
                    let src = &row[b * h * w..][..h * w];
                    let dst = &mut dx[(ci * d.batch + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let line = &mut dst[sy as usize * w..][..w];
                        let g = &src[y * w..][..w];
                        match kx {
                            0 => {
                                for (o, v) in line[..w - 1].iter_mut().zip(&g[1..]) {
                                    *o += v;
                                }
                            }
                            1 => {
                                for (o, v) in line.iter_mut().zip(g) {
                                    *o += v;
                                }
                            }
                            _ => {
                                for (o, v) in line[1..].iter_mut().zip(&g[..w - 1]) {
                                    *o += v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out = W * cols + b`, W is `cout x cin*9`.
pub(crate) fn conv_forward(cols: &[f64], d: ConvDims, weight: &[f64], bias: &[f64], out: &mut [f64]) {
    let np = d.plane();
    for (co, &bv) in bias.iter().enumerate().take(d.cout) {
        out[co * np..(co + 1) * np].fill(bv);
    }
    gemm(Mat::new(weight, d.cout, d.taps()), Mat::new(cols, d.taps(), np), 1.0, out);
}

/// Accumulate weight and bias gradients; optionally produce `dcols = W^T dout`.
pub(crate) fn conv_backward(
    cols: &[f64],
    dout: &[f64],
    d: ConvDims,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dcols: Option<&mut [f64]>,
) {
    let np = d.plane();
    gemm(Mat::new(dout, d.cout, np), Mat::new(cols, d.taps(), np).t(), 1.0, dweight);
    for (co, db) in dbias.iter_mut().enumerate().take(d.cout) {
        *db += dout[co * np..(co + 1) * np].iter().sum::<f64>();
    }
    if let Some(dcols) = dcols {
        gemm(Mat::new(weight, d.cout, d.taps()).t(), Mat::new(dout, d.cout, np), 0.0, dcols);
    }
}

pub(crate) fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Zero the gradient wherever the (post-activation) output is not positive.
pub(crate) fn relu_backward(y: &[f64], dy: &mut [f64]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2x2 max-pool with stride 2 over `planes` planes of `h x w`; trailing odd
/// rows and columns are dropped. Records the winning input index per output.
pub(crate) fn maxpool_forward(x: &[f64], planes: usize, h: usize, w: usize, out: &mut [f64], argmax: &mut [usize]) {
    let (oh, ow) = (h / 2, w / 2);
    for p in 0..planes {
        let base = p * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                let o = (p * oh + oy) * ow + ox;
                out[o] = x[best];
                argmax[o] = best;
            }
        }
    }
}

pub(crate) fn maxpool_backward(dout: &[f64], argmax: &[usize], dx: &mut [f64]) {
    dx.fill(0.0);
    for (g, &i) in dout.iter().zip(argmax) {
        dx[i] += g;
    }
}

/// `y = x W^T + b` for `x: batch x nin`, `W: nout x nin`.
pub(crate) fn fc_forward(x: &[f64], batch: usize, nin: usize, weight: &[f64], bias: &[f64], nout: usize, y: &mut [f64]) {
    for row in y[..batch * nout].chunks_exact_mut(nout) {
        row.copy_from_slice(&bias[..nout]);
    }
    gemm(Mat::new(x, batch, nin), Mat::new(weight, nout, nin).t(), 1.0, y);
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn fc_backward(
    x: &[f64],
    dy: &[f64],
    batch: usize,
    nin: usize,
    nout: usize,
    weight: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
    dx: Option<&mut [f64]>,
) {
    gemm(Mat::new(dy, batch, nout).t(), Mat::new(x, batch, nin), 1.0, dweight);
    for row in dy[..batch * nout].chunks_exact(nout) {
        for (db, g) in dbias.iter_mut().zip(row) {
            *db += g;
        }
    }
    if let Some(dx) = dx {
        gemm(Mat::new(dy, batch, nout), Mat::new(weight, nout, nin), 0.0, dx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = stream(seed);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Direct 3x3 convolution with zero padding, sample-major indexing.
    fn naive_conv(x: &[f64], d: ConvDims, wt: &[f64], bias: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; d.cout * d.plane()];
        for co in 0..d.cout {
            for b in 0..d.batch {
                for y in 0..d.h {
                    for xx in 0..d.w {
                        let mut acc = bias[co];
                        for ci in 0..d.cin {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let sy = y as isize + ky as isize - 1;
                                    let sx = xx as isize + kx as isize - 1;
                                    if sy < 0 || sx < 0 || sy >= d.h as isize || sx >= d.w as isize {
                                        continue;
                                    }
                                    let xi = ((ci * d.batch + b) * d.h + sy as usize) * d.w + sx as usize;
                                    acc += wt[(co * d.cin + ci) * 9 + ky * 3 + kx] * x[xi];
                                }
                            }
                        }
                        out[((co * d.batch + b) * d.h + y) * d.w + xx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a = random(3 * 4, 1);
        let b = random(4 * 5, 2);
        let mut c = vec![0.0; 15];
        gemm(Mat::new(&a, 3, 4), Mat::new(&b, 4, 5), 0.0, &mut c);
        for i in 0..3 {
            for j in 0..5 {
                let e: f64 = (0..4).map(|k| a[i * 4 + k] * b[k * 5 + j]).sum();
                assert!((c[i * 5 + j] - e).abs() < 1e-12);
            }
        }
        // a^T (4x3) times a (3x4)
        let mut g = vec![0.0; 16];
        gemm(Mat::new(&a, 3, 4).t(), Mat::new(&a, 3, 4), 0.0, &mut g);
        for i in 0..4 {
            for j in 0..4 {
                let e: f64 = (0..3).map(|k| a[k * 4 + i] * a[k * 4 + j]).sum();
                assert!((g[i * 4 + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_matches_direct_convolution() {
        let d = ConvDims { cin: 2, cout: 3, batch: 2, h: 5, w: 4 };
        let x = random(d.cin * d.plane(), 3);
        let wt = random(d.cout * d.taps(), 4);
        let bias = random(d.cout, 5);
        let mut cols = vec![0.0; d.taps() * d.plane()];
        im2col(&x, d, &mut cols);
        let mut out = vec![0.0; d.cout * d.plane()];
        conv_forward(&cols, d, &wt, &bias, &mut out);
        for (a, e) in out.iter().zip(naive_conv(&x, d, &wt, &bias)) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let d = ConvDims { cin: 3, cout: 1, batch: 2, h: 4, w: 3 };
        let x = random(d.cin * d.plane(), 6);
        let c = random(d.taps() * d.plane(), 7);
        let mut cols = vec![0.0; c.len()];
        im2col(&x, d, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&c, d, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn maxpool_floors_odd_sizes() {
        let x: Vec<f64> = (0..15).map(|v| v as f64).collect();
        let mut out = vec![0.0; 2];
        let mut arg = vec![0; 2];
        maxpool_forward(&x, 1, 5, 3, &mut out, &mut arg);
        assert_eq!(out, vec![4.0, 10.0]);
        let mut dx = vec![1.0; 15];
        maxpool_backward(&[1.0, 2.0], &arg, &mut dx);
        assert_eq!(dx.iter().sum::<f64>(), 3.0);
        assert_eq!(dx[4], 1.0);
        assert_eq!(dx[10], 2.0);
    }

    #[test]
    fn fc_matches_naive() {
        let (n, nin, nout) = (3, 5, 2);
        let x = random(n * nin, 8);
        let wt = random(nout * nin, 9);
        let b = random(nout, 10);
        let mut y = vec![0.0; n * nout];
        fc_forward(&x, n, nin, &wt, &b, nout, &mut y);
        for s in 0..n {
            for o in 0..nout {
                let e = b[o] + (0..nin).map(|i| wt[o * nin + i] * x[s * nin + i]).sum::<f64>();
                assert!((y[s * nout + o] - e).abs() < 1e-12);
            }
        }
    }
}
