//! Numeric kernels behind the graph operations. These work on raw slices and
//! know nothing about differentiation bookkeeping.

use super::Float;

/// Geometry of a 2-D convolution over NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    /// Rows of the unfolded patch matrix.
    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }

    fn out_pixels(&self) -> usize {
        self.out_height() * self.out_width()
    }

    /// A 1x1, stride 1, unpadded conv reads its input directly as the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_channels, self.out_height(), self.out_width()]
    }
}

/// Unfold one image [C, H, W] into a [C*kh*kw, Ho*Wo] patch matrix.
fn im2col<T: Float>(geo: &ConvGeometry, image: &[T], cols: &mut [T]) {
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let pad = geo.padding as isize;
    let mut row = 0;
    for c in 0..geo.in_channels {
        let plane = &image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= geo.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= geo.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Scatter-add a patch-matrix gradient back onto one image gradient.
fn col2im<T: Float>(geo: &ConvGeometry, cols: &[T], image: &mut [T]) {
    let (ho, wo) = (geo.out_height(), geo.out_width());
    let pad = geo.padding as isize;
    let mut row = 0;
    for c in 0..geo.in_channels {
        let plane = &mut image[c * geo.height * geo.width..(c + 1) * geo.height * geo.width];
        for ky in 0..geo.kernel_h {
            for kx in 0..geo.kernel_w {
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * geo.stride + ky) as isize - pad;
                    if iy < 0 || iy >= geo.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * geo.width..(iy as usize + 1) * geo.width];
                    for ox in 0..wo {
                        let ix = (ox * geo.stride + kx) as isize - pad;
                        if ix >= 0 && ix < geo.width as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<T: Float>(
    geo: &ConvGeometry,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let k = geo.patch_len();
    let p = geo.out_pixels();
    let img = geo.in_channels * geo.height * geo.width;
    let mut out = vec![T::zero(); geo.batch * geo.out_channels * p];
    let mut cols = if geo.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * p]
    };
    for n in 0..geo.batch {
        let image = &input[n * img..(n + 1) * img];
        let patches: &[T] = if geo.is_pointwise() {
            image
        } else {
            im2col(geo, image, &mut cols);
            &cols
        };
        let dst = &mut out[n * geo.out_channels * p..(n + 1) * geo.out_channels * p];
        if let Some(b) = bias {
            for (co, chunk) in dst.chunks_mut(p).enumerate() {
                chunk.fill(b[co]);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        T::gemm(
            geo.out_channels,
            k,
            p,
            T::one(),
            weight,
            k as isize,
            1,
            patches,
            p as isize,
            1,
            beta,
            dst,
            p as isize,
            1,
        );
    }
    out
}

/// Gradients of a convolution. Returns `(d_input, d_weight, d_bias)`; each is
/// only computed when requested.
#[allow(clippy::type_complexity)]
pub fn conv2d_backward<T: Float>(
    geo: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let k = geo.patch_len();
    let p = geo.out_pixels();
    let img = geo.in_channels * geo.height * geo.width;
    let co = geo.out_channels;
    let mut d_input = want_input.then(|| vec![T::zero(); input.len()]);
    let mut d_weight = want_weight.then(|| vec![T::zero(); weight.len()]);
    let mut d_bias = want_bias.then(|| vec![T::zero(); co]);
    let pointwise = geo.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * p] };
    let mut d_cols = if want_input && !pointwise {
        vec![T::zero(); k * p]
    } else {
        Vec::new()
    };

    for n in 0..geo.batch {
        let g = &grad_out[n * co * p..(n + 1) * co * p];
        if let Some(db) = d_bias.as_mut() {
            for (c, chunk) in g.chunks(p).enumerate() {
                db[c] += chunk.iter().copied().sum::<T>();
            }
        }
        if let Some(dw) = d_weight.as_mut() {
            let image = &input[n * img..(n + 1) * img];
            let patches: &[T] = if pointwise {
                image
            } else {
                im2col(geo, image, &mut cols);
                &cols
            };
            // dW[co, k] += g[co, p] * patches^T[p, k]
            T::gemm(
                co,
                p,
                k,
                T::one(),
                g,
                p as isize,
                1,
                patches,
                1,
                p as isize,
                T::one(),
                dw,
                k as isize,
                1,
            );
        }
        if let Some(dx) = d_input.as_mut() {
            let dst = &mut dx[n * img..(n + 1) * img];
            // dcols[k, p] = W^T[k, co] * g[co, p]
            if pointwise {
                T::gemm(
                    k, co, p, T::one(), weight, 1, k as isize, g, p as isize, 1, T::zero(), dst,
                    p as isize, 1,
                );
            } else {
                T::gemm(
                    k,
                    co,
                    p,
                    T::one(),
                    weight,
                    1,
                    k as isize,
                    g,
                    p as isize,
                    1,
                    T::zero(),
                    &mut d_cols,
                    p as isize,
                    1,
                );
                col2im(geo, &d_cols, dst);
            }
        }
    }
    (d_input, d_weight, d_bias)
}

/// `out[n, k] = sum_d input[n, d] * weight[k, d] + bias[k]`.
pub fn linear_forward<T: Float>(
    n: usize,
    d: usize,
    k: usize,
    input: &[T],
    weight: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    if let Some(b) = bias {
        for row in out.chunks_mut(k) {
            row.copy_from_slice(b);
        }
    }
    let beta = if bias.is_some() { T::one() } else { T::zero() };
    T::gemm(
        n, d, k, T::one(), input, d as isize, 1, weight, 1, d as isize, beta, &mut out, k as isize,
        1,
    );
    out
}

#[allow(clippy::type_complexity, clippy::too_many_arguments)]
pub fn linear_backward<T: Float>(
    n: usize,
    d: usize,
    k: usize,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    want_input: bool,
    want_weight: bool,
    want_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let d_input = want_input.then(|| {
        let mut dx = vec![T::zero(); n * d];
        T::gemm(
            n, k, d, T::one(), grad_out, k as isize, 1, weight, d as isize, 1, T::zero(), &mut dx,
            d as isize, 1,
        );
        dx
    });
    let d_weight = want_weight.then(|| {
        let mut dw = vec![T::zero(); k * d];
        T::gemm(
            k, n, d, T::one(), grad_out, 1, k as isize, input, d as isize, 1, T::zero(), &mut dw,
            d as isize, 1,
        );
        dw
    });
    let d_bias = want_bias.then(|| {
        let mut db = vec![T::zero(); k];
        for row in grad_out.chunks(k) {
            for (acc, &g) in db.iter_mut().zip(row) {
                *acc += g;
            }
        }
        db
    });
    (d_input, d_weight, d_bias)
}

/// Per-channel batch statistics over an NCHW tensor: biased mean and variance.
pub fn channel_moments<T: Float>(
    input: &[T],
    batch: usize,
    channels: usize,
    spatial: usize,
) -> (Vec<T>, Vec<T>) {
    let count = T::of((batch * spatial) as f64);
    let mut mean = vec![T::zero(); channels];
    let mut var = vec![T::zero(); channels];
    for c in 0..channels {
        let mut acc = T::zero();
        for n in 0..batch {
            let off = (n * channels + c) * spatial;
            acc += input[off..off + spatial].iter().copied().sum::<T>();
        }
        let m = acc / count;
        let mut sq = T::zero();
        for n in 0..batch {
            let off = (n * channels + c) * spatial;
            for &v in &input[off..off + spatial] {
                let dv = v - m;
                sq += dv * dv;
            }
        }
        mean[c] = m;
        var[c] = sq / count;
    }
    (mean, var)
}
