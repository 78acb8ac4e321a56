//! 1-D convolution kernels (plain and transposed) lowered to matrix products
//! through im2col / col2im.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }
}

impl ConvSpec {
    /// Stride-1 convolution padded to preserve length.
    pub fn same(kernel: usize, dilation: usize) -> Self {
        Self {
            padding: dilation * (kernel - 1) / 2,
            dilation,
            ..Self::default()
        }
    }

    pub fn conv_out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = len + 2 * self.padding;
        (padded >= span).then(|| (padded - span) / self.stride + 1)
    }

    pub fn transpose_out_len(&self, len: usize, kernel: usize) -> Option<usize> {
        ((len - 1) * self.stride + kernel).checked_sub(2 * self.padding)
    }
}

/// Row-major `C = alpha * op(A) * op(B) + beta * C` with `op(A)` of shape `m×k`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices cover the strided extents computed above.
    unsafe {
        matrixmultiply::dgemm(
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
            n as isize,
            1,
        );
    }
}

/// Geometry linking an "image" of length `img_len` to `col_len` column
/// positions: column `t`, tap `k` reads image position `t*stride + k*dilation - pad`.
#[derive(Debug, Clone, Copy)]
struct Lowering {
    channels: usize,
    img_len: usize,
    col_len: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    pad: usize,
}

impl Lowering {
    /// Range of `t` whose position for tap `k` lies inside the image.
    fn valid(&self, k: usize) -> (usize, usize, isize) {
        let offset = (k * self.dilation) as isize - self.pad as isize;
        let s = self.stride as isize;
        let lo = if offset >= 0 { 0 } else { ((-offset) + s - 1) / s }.min(self.col_len as isize);
        // t*s + offset <= img_len - 1
        let hi_excl = if self.img_len as isize - 1 - offset < 0 {
            0
        } else {
            ((self.img_len as isize - 1 - offset) / s + 1).min(self.col_len as isize)
        };
        (lo as usize, (hi_excl.max(lo)) as usize, offset)
    }

    fn im2col(&self, img: &[f64], col: &mut [f64]) {
        for c in 0..self.channels {
            let src = &img[c * self.img_len..(c + 1) * self.img_len];
            for k in 0..self.kernel {
                let row = &mut col[(c * self.kernel + k) * self.col_len..][..self.col_len];
                let (lo, hi, offset) = self.valid(k);
                row[..lo].fill(0.0);
                row[hi..].fill(0.0);
                if lo == hi {
                    continue;
                }
                if self.stride == 1 {
                    let start = (lo as isize + offset) as usize;
                    row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                } else {
                    for (t, slot) in row.iter_mut().enumerate().take(hi).skip(lo) {
                        *slot = src[(t as isize * self.stride as isize + offset) as usize];
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[f64], img: &mut [f64]) {
        for c in 0..self.channels {
            let dst = &mut img[c * self.img_len..(c + 1) * self.img_len];
            for k in 0..self.kernel {
                let row = &col[(c * self.kernel + k) * self.col_len..][..self.col_len];
                let (lo, hi, offset) = self.valid(k);
                if lo == hi {
                    continue;
                }
                if self.stride == 1 {
                    let start = (lo as isize + offset) as usize;
                    for (d, v) in dst[start..start + hi - lo].iter_mut().zip(&row[lo..hi]) {
                        *d += v;
                    }
                } else {
                    for (t, v) in row.iter().enumerate().take(hi).skip(lo) {
                        dst[(t as isize * self.stride as isize + offset) as usize] += v;
                    }
                }
            }
        }
    }
}

struct ConvDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    groups: usize,
}

impl ConvDims {
    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }
}

fn conv_dims(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> ConvDims {
    assert_eq!(x.shape().len(), 3, "conv input must be [B, C, T]");
    let (batch, c_in, t_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (c_out, cin_g, kernel) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(cin_g * spec.groups, c_in, "weight/input channel mismatch");
    assert_eq!(c_out % spec.groups, 0);
    let t_out = spec
        .conv_out_len(t_in, kernel)
        .unwrap_or_else(|| panic!("input of length {t_in} too short for kernel {kernel}"));
    ConvDims {
        batch,
        c_in,
        c_out,
        kernel,
        t_in,
        t_out,
        groups: spec.groups,
    }
}

fn conv_lowering(d: &ConvDims, spec: &ConvSpec) -> Lowering {
    Lowering {
        channels: d.cin_g(),
        img_len: d.t_in,
        col_len: d.t_out,
        kernel: d.kernel,
        stride: spec.stride,
        dilation: spec.dilation,
        pad: spec.padding,
    }
}

fn add_bias(out: &mut Tensor, bias: Option<&Tensor>) {
    if let Some(b) = bias {
        let (batch, c, t) = (out.dim(0), out.dim(1), out.dim(2));
        let data = out.data_mut();
        for bi in 0..batch {
            for ci in 0..c {
                let bv = b.data()[ci];
                for v in &mut data[(bi * c + ci) * t..][..t] {
                    *v += bv;
                }
            }
        }
    }
}

/// Bias gradient: sum of the output gradient over batch and time.
pub fn bias_grad(gout: &Tensor) -> Tensor {
    let (batch, c, t) = (gout.dim(0), gout.dim(1), gout.dim(2));
    let mut g = vec![0.0; c];
    for bi in 0..batch {
        for (ci, gv) in g.iter_mut().enumerate() {
            *gv += gout.data()[(bi * c + ci) * t..][..t].iter().sum::<f64>();
        }
    }
    Tensor::new(vec![c], g)
}

/// `x: [B, Cin, T]`, `w: [Cout, Cin/groups, K]`.
pub fn conv1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let d = conv_dims(x, w, spec);
    let low = conv_lowering(&d, spec);
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    let rows = cin_g * d.kernel;
    let mut out = Tensor::zeros(&[d.batch, d.c_out, d.t_out]);
    let mut col = vec![0.0; rows * d.t_out];
    for b in 0..d.batch {
        for g in 0..d.groups {
            let xg = &x.data()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
            low.im2col(xg, &mut col);
            let wg = &w.data()[g * cout_g * rows..][..cout_g * rows];
            let og = &mut out.data_mut()[(b * d.c_out + g * cout_g) * d.t_out..][..cout_g * d.t_out];
            gemm(cout_g, rows, d.t_out, wg, false, &col, false, 0.0, og);
        }
    }
    add_bias(&mut out, bias);
    out
}

/// Gradients of [`conv1d`] with respect to its input and weight.
pub fn conv1d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    spec: &ConvSpec,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = conv_dims(x, w, spec);
    let low = conv_lowering(&d, spec);
    let (cin_g, cout_g) = (d.cin_g(), d.cout_g());
    let rows = cin_g * d.kernel;
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_weight.then(|| Tensor::zeros(w.shape()));
    let mut col = vec![0.0; rows * d.t_out];
    for b in 0..d.batch {
        for g in 0..d.groups {
            let go = &gout.data()[(b * d.c_out + g * cout_g) * d.t_out..][..cout_g * d.t_out];
            if let Some(gw) = gw.as_mut() {
                let xg = &x.data()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
                low.im2col(xg, &mut col);
                let gwg = &mut gw.data_mut()[g * cout_g * rows..][..cout_g * rows];
                gemm(cout_g, d.t_out, rows, go, false, &col, true, 1.0, gwg);
            }
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[g * cout_g * rows..][..cout_g * rows];
                gemm(rows, cout_g, d.t_out, wg, true, go, false, 0.0, &mut col);
                let gxg = &mut gx.data_mut()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
                low.col2im(&col, gxg);
            }
        }
    }
    (gx, gw)
}

struct TransposeDims {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    t_in: usize,
    t_out: usize,
    groups: usize,
}

fn transpose_dims(x: &Tensor, w: &Tensor, spec: &ConvSpec) -> TransposeDims {
    assert_eq!(x.shape().len(), 3, "conv input must be [B, C, T]");
    assert_eq!(spec.dilation, 1, "dilated transposed convolution is not supported");
    let (batch, c_in, t_in) = (x.dim(0), x.dim(1), x.dim(2));
    let (w_in, cout_g, kernel) = (w.dim(0), w.dim(1), w.dim(2));
    assert_eq!(w_in, c_in, "weight/input channel mismatch");
    assert_eq!(c_in % spec.groups, 0);
    let t_out = spec
        .transpose_out_len(t_in, kernel)
        .expect("transposed convolution output would be empty");
    TransposeDims {
        batch,
        c_in,
        c_out: cout_g * spec.groups,
        kernel,
        t_in,
        t_out,
        groups: spec.groups,
    }
}

fn transpose_lowering(d: &TransposeDims, spec: &ConvSpec) -> Lowering {
    Lowering {
        channels: d.c_out / d.groups,
        img_len: d.t_out,
        col_len: d.t_in,
        kernel: d.kernel,
        stride: spec.stride,
        dilation: 1,
        pad: spec.padding,
    }
}

/// `x: [B, Cin, T]`, `w: [Cin, Cout/groups, K]`; output length
/// `(T - 1) * stride - 2 * padding + K`.
pub fn conv_transpose1d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, spec: &ConvSpec) -> Tensor {
    let d = transpose_dims(x, w, spec);
    let low = transpose_lowering(&d, spec);
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let rows = cout_g * d.kernel;
    let mut out = Tensor::zeros(&[d.batch, d.c_out, d.t_out]);
    let mut col = vec![0.0; rows * d.t_in];
    for b in 0..d.batch {
        for g in 0..d.groups {
            let xg = &x.data()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
            let wg = &w.data()[g * cin_g * rows..][..cin_g * rows];
            gemm(rows, cin_g, d.t_in, wg, true, xg, false, 0.0, &mut col);
            let og = &mut out.data_mut()[(b * d.c_out + g * cout_g) * d.t_out..][..cout_g * d.t_out];
            low.col2im(&col, og);
        }
    }
    add_bias(&mut out, bias);
    out
}

pub fn conv_transpose1d_backward(
    x: &Tensor,
    w: &Tensor,
    gout: &Tensor,
    spec: &ConvSpec,
    need_input: bool,
    need_weight: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let d = transpose_dims(x, w, spec);
    let low = transpose_lowering(&d, spec);
    let cin_g = d.c_in / d.groups;
    let cout_g = d.c_out / d.groups;
    let rows = cout_g * d.kernel;
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut gw = need_weight.then(|| Tensor::zeros(w.shape()));
    let mut col = vec![0.0; rows * d.t_in];
    for b in 0..d.batch {
        for g in 0..d.groups {
            let go = &gout.data()[(b * d.c_out + g * cout_g) * d.t_out..][..cout_g * d.t_out];
            low.im2col(go, &mut col);
            if let Some(gx) = gx.as_mut() {
                let wg = &w.data()[g * cin_g * rows..][..cin_g * rows];
                let gxg = &mut gx.data_mut()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
                gemm(cin_g, rows, d.t_in, wg, false, &col, false, 0.0, gxg);
            }
            if let Some(gw) = gw.as_mut() {
                let xg = &x.data()[(b * d.c_in + g * cin_g) * d.t_in..][..cin_g * d.t_in];
                let gwg = &mut gw.data_mut()[g * cin_g * rows..][..cin_g * rows];
                gemm(cin_g, d.t_in, rows, xg, false, &col, true, 1.0, gwg);
            }
        }
    }
    (gx, gw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Direct-summation reference.
    fn naive_conv(x: &Tensor, w: &Tensor, b: &Tensor, s: &ConvSpec) -> Tensor {
        let (bn, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
        let (cout, cin_g, k) = (w.dim(0), w.dim(1), w.dim(2));
        let cout_g = cout / s.groups;
        let tout = s.conv_out_len(t, k).unwrap();
        let mut out = Tensor::zeros(&[bn, cout, tout]);
        for bi in 0..bn {
            for co in 0..cout {
                let g = co / cout_g;
                for to in 0..tout {
                    let mut acc = b.data()[co];
                    for ci in 0..cin_g {
                        for kk in 0..k {
                            let pos = (to * s.stride + kk * s.dilation) as isize - s.padding as isize;
                            if pos >= 0 && (pos as usize) < t {
                                acc += w.data()[(co * cin_g + ci) * k + kk]
                                    * x.data()[(bi * cin + g * cin_g + ci) * t + pos as usize];
                            }
                        }
                    }
                    out.data_mut()[(bi * cout + co) * tout + to] = acc;
                }
            }
        }
        out
    }

    fn naive_transpose(x: &Tensor, w: &Tensor, b: &Tensor, s: &ConvSpec) -> Tensor {
        let (bn, cin, t) = (x.dim(0), x.dim(1), x.dim(2));
        let (_, cout_g, k) = (w.dim(0), w.dim(1), w.dim(2));
        let cin_g = cin / s.groups;
        let cout = cout_g * s.groups;
        let tout = s.transpose_out_len(t, k).unwrap();
        let mut out = Tensor::zeros(&[bn, cout, tout]);
        for bi in 0..bn {
            for co in 0..cout {
                for to in 0..tout {
                    out.data_mut()[(bi * cout + co) * tout + to] = b.data()[co];
                }
            }
            for ci in 0..cin {
                let g = ci / cin_g;
                for ti in 0..t {
                    for oc in 0..cout_g {
                        for kk in 0..k {
                            let pos = (ti * s.stride + kk) as isize - s.padding as isize;
                            if pos >= 0 && (pos as usize) < tout {
                                let co = g * cout_g + oc;
                                out.data_mut()[(bi * cout + co) * tout + pos as usize] += x.data()
                                    [(bi * cin + ci) * t + ti]
                                    * w.data()[(ci * cout_g + oc) * k + kk];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn close(a: &Tensor, b: &Tensor) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-10, "{x} vs {y}");
        }
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for spec in [
            ConvSpec::default(),
            ConvSpec::same(5, 3),
            ConvSpec { stride: 3, padding: 2, dilation: 1, groups: 1 },
            ConvSpec { stride: 2, padding: 4, dilation: 2, groups: 2 },
            ConvSpec { stride: 4, padding: 20, dilation: 1, groups: 4 },
        ] {
            let x = random(&[2, 4, 37], &mut rng);
            let w = random(&[8, 4 / spec.groups, 5], &mut rng);
            let b = random(&[8], &mut rng);
            close(&conv1d(&x, &w, Some(&b), &spec), &naive_conv(&x, &w, &b, &spec));
        }
    }

    #[test]
    fn short_inputs_with_wide_padding() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for (t, k, d) in [(1, 7, 1), (2, 11, 5), (1, 3, 3)] {
            let spec = ConvSpec::same(k, d);
            let x = random(&[1, 3, t], &mut rng);
            let w = random(&[2, 3, k], &mut rng);
            let b = random(&[2], &mut rng);
            close(&conv1d(&x, &w, Some(&b), &spec), &naive_conv(&x, &w, &b, &spec));
            let y = conv1d(&x, &w, None, &spec);
            let g = random(y.shape(), &mut rng);
            let (gx, _) = conv1d_backward(&x, &w, &g, &spec, true, false);
            assert!((dot(&y, &g) - dot(&x, &gx.unwrap())).abs() < 1e-9);
        }
    }

    #[test]
    fn transpose_matches_direct_sum() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for (k, stride, padding, groups) in [(16, 8, 4, 1), (4, 2, 1, 1), (8, 4, 2, 2), (3, 1, 1, 1)] {
            let spec = ConvSpec { stride, padding, dilation: 1, groups };
            let x = random(&[2, 4, 9], &mut rng);
            let w = random(&[4, 6 / groups, k], &mut rng);
            let b = random(&[w.dim(1) * groups], &mut rng);
            let out = conv_transpose1d(&x, &w, Some(&b), &spec);
            close(&out, &naive_transpose(&x, &w, &b, &spec));
            if 2 * padding == k - stride {
                assert_eq!(out.dim(2), 9 * stride);
            }
        }
    }

    #[test]
    fn backward_is_adjoint_of_forward() {
        // <conv(x), g> = <x, conv^T(g)> and the same identity for the weight.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let spec = ConvSpec { stride: 2, padding: 3, dilation: 2, groups: 2 };
        let x = random(&[2, 4, 30], &mut rng);
        let w = random(&[6, 2, 4], &mut rng);
        let y = conv1d(&x, &w, None, &spec);
        let g = random(y.shape(), &mut rng);
        let (gx, gw) = conv1d_backward(&x, &w, &g, &spec, true, true);
        let lhs = dot(&y, &g);
        assert!((lhs - dot(&x, &gx.unwrap())).abs() < 1e-9);
        assert!((lhs - dot(&w, &gw.unwrap())).abs() < 1e-9);

        let tspec = ConvSpec { stride: 4, padding: 2, dilation: 1, groups: 2 };
        let x = random(&[2, 4, 7], &mut rng);
        let w = random(&[4, 3, 8], &mut rng);
        let y = conv_transpose1d(&x, &w, None, &tspec);
        let g = random(y.shape(), &mut rng);
        let (gx, gw) = conv_transpose1d_backward(&x, &w, &g, &tspec, true, true);
        let lhs = dot(&y, &g);
        assert!((lhs - dot(&x, &gx.unwrap())).abs() < 1e-9);
        assert!((lhs - dot(&w, &gw.unwrap())).abs() < 1e-9);
    }
}
