//! Spatial ops: convolution (im2col + gemm), pooling, nearest upsampling.

use super::{gemm, GradMap, Op, PoolMode, Tensor};
use crate::error::{Error, Result};

pub(crate) struct Conv2dCtx {
    pub(crate) input: Tensor,
    pub(crate) kernel: Tensor,
    pub(crate) bias: Tensor,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    /// Unfolded input, `[C_in * kH * kW, H' * W']`. `None` for pointwise
    /// convolutions, where the input itself already has that layout.
    cols: Option<Vec<f64>>,
}

struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Output columns `ox` whose input column `ox * stride + kx - padding`
    /// lies inside the image.
    fn valid_cols(&self, kx: usize) -> std::ops::Range<usize> {
        let lo = self.padding.saturating_sub(kx).div_ceil(self.stride);
        let hi = if self.w + self.padding > kx {
            ((self.w + self.padding - kx - 1) / self.stride + 1).min(self.out_w)
        } else {
            0
        };
        lo..hi.max(lo)
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let pixels = self.pixels();
        let mut cols = Vec::with_capacity(self.rows() * pixels);
        for c in 0..self.channels {
            let plane = &input[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let valid = self.valid_cols(kx);
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize || valid.is_empty() {
                            cols.resize(cols.len() + self.out_w, 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let first = valid.start * self.stride + kx - self.padding;
                        cols.resize(cols.len() + valid.start, 0.0);
                        if self.stride == 1 {
                            cols.extend_from_slice(&src[first..first + valid.len()]);
                        } else {
                            cols.extend(src[first..].iter().step_by(self.stride).take(valid.len()));
                        }
                        cols.resize(cols.len() + self.out_w - valid.end, 0.0);
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[f64], out: &mut [f64]) {
        let pixels = self.pixels();
        for c in 0..self.channels {
            let plane = &mut out[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * pixels..(row + 1) * pixels];
                    let valid = self.valid_cols(kx);
                    if valid.is_empty() {
                        continue;
                    }
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let col_row =
                            &src[oy * self.out_w + valid.start..oy * self.out_w + valid.end];
                        let first = valid.start * self.stride + kx - self.padding;
                        for (d, v) in dst[first..].iter_mut().step_by(self.stride).zip(col_row) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }
}

/// Output side of a convolution along one axis.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

impl Tensor {
    /// 2-D cross-correlation of a `[C_in, H, W]` input with a
    /// `[C_out, C_in, kH, kW]` kernel plus a `[C_out]` bias.
    pub fn conv2d(
        &self,
        kernel: &Tensor,
        bias: &Tensor,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let (channels, h, w) = self.chw("conv2d")?;
        let [c_out, k_in, kh, kw] = *kernel.shape() else {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel must be [C_out, C_in, kH, kW], got {:?}",
                    kernel.shape()
                ),
            ));
        };
        if k_in != channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if bias.shape() != [c_out] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: vec![c_out],
                rhs: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d", "stride must be at least 1"));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::invalid(
                "conv2d",
                format!(
                    "kernel {kh}x{kw} larger than padded input {}x{}",
                    h + 2 * padding,
                    w + 2 * padding
                ),
            ));
        }
        let geom = Geometry {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: conv_output_size(h, kh, stride, padding),
            out_w: conv_output_size(w, kw, stride, padding),
        };
        let pixels = geom.pixels();
        let cols = (!geom.is_pointwise()).then(|| geom.im2col(self.data()));
        let unfolded = cols.as_deref().unwrap_or(self.data());

        let mut out = Vec::with_capacity(c_out * pixels);
        for &b in bias.data() {
            out.extend(std::iter::repeat_n(b, pixels));
        }
        gemm(
            c_out,
            geom.rows(),
            pixels,
            1.0,
            kernel.data(),
            false,
            unfolded,
            false,
            1.0,
            &mut out,
        );
        Ok(Tensor::from_op(
            vec![c_out, geom.out_h, geom.out_w],
            out,
            Op::Conv2d(Box::new(Conv2dCtx {
                input: self.clone(),
                kernel: kernel.clone(),
                bias: bias.clone(),
                stride,
                padding,
                out_h: geom.out_h,
                out_w: geom.out_w,
                cols,
            })),
        ))
    }

    /// Stride-1 convolution of a `[C]` vector tiled over a `height x width`
    /// map, without materializing the tiles. Equal to
    /// `broadcast_spatial(height, width)` followed by a bias-free
    /// [`Tensor::conv2d`].
    pub fn conv2d_tiled(
        &self,
        kernel: &Tensor,
        height: usize,
        width: usize,
        padding: usize,
    ) -> Result<Tensor> {
        let [channels] = *self.shape() else {
            return Err(Error::invalid(
                "conv2d_tiled",
                format!("input must be a [C] vector, got {:?}", self.shape()),
            ));
        };
        let [c_out, k_in, kh, kw] = *kernel.shape() else {
            return Err(Error::invalid(
                "conv2d_tiled",
                format!(
                    "kernel must be [C_out, C_in, kH, kW], got {:?}",
                    kernel.shape()
                ),
            ));
        };
        if k_in != channels {
            return Err(Error::ShapeMismatch {
                op: "conv2d_tiled",
                lhs: self.shape().to_vec(),
                rhs: kernel.shape().to_vec(),
            });
        }
        if height == 0 || width == 0 || kh > height + 2 * padding || kw > width + 2 * padding {
            return Err(Error::invalid(
                "conv2d_tiled",
                format!("kernel {kh}x{kw} does not fit a {height}x{width} map padded by {padding}"),
            ));
        }
        let tiled = Tiled::new(height, width, kh, kw, padding);
        let taps = tiled.tap_vectors(kernel.data(), self.data(), c_out);
        let mut out = vec![0.0; c_out * tiled.pixels()];
        for (plane, t) in out
            .chunks_exact_mut(tiled.pixels())
            .zip(taps.chunks_exact(tiled.taps()))
        {
            tiled.forward_plane(t, plane);
        }
        Ok(Tensor::from_op(
            vec![c_out, tiled.out_h, tiled.out_w],
            out,
            Op::ConvTiled {
                input: self.clone(),
                kernel: kernel.clone(),
                height,
                width,
                padding,
            },
        ))
    }

    /// Non-overlapping `window x window` pooling.
    pub fn pool2d(&self, window: usize, mode: PoolMode) -> Result<Tensor> {
        let (c, h, w) = self.chw("pool2d")?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(Error::invalid(
                "pool2d",
                format!("spatial size {h}x{w} is not divisible by window {window}"),
            ));
        }
        let (oh, ow) = (h / window, w / window);
        let x = self.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        let mut argmax = Vec::new();
        let area = (window * window) as f64;
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0;
                    let mut sum = 0.0;
                    for dy in 0..window {
                        let row = (ch * h + oy * window + dy) * w + ox * window;
                        for (i, &v) in x[row..row + window].iter().enumerate() {
                            sum += v;
                            if v > best {
                                best = v;
                                best_idx = row + i;
                            }
                        }
                    }
                    match mode {
                        PoolMode::Max => {
                            out.push(best);
                            argmax.push(best_idx);
                        }
                        PoolMode::Avg => out.push(sum / area),
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            out,
            Op::Pool2d {
                input: self.clone(),
                window,
                mode,
                argmax,
            },
        ))
    }

    /// Nearest-neighbour upsampling: each pixel becomes a
    /// `factor x factor` block.
    pub fn upsample_nearest(&self, factor: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw("upsample_nearest")?;
        if factor == 0 {
            return Err(Error::invalid(
                "upsample_nearest",
                "factor must be at least 1",
            ));
        }
        let (oh, ow) = (h * factor, w * factor);
        let x = self.data();
        let mut out = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for y in 0..oh {
                let src = &x[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                for &v in src {
                    out.extend(std::iter::repeat_n(v, factor));
                }
            }
        }
        Ok(Tensor::from_op(
            vec![c, oh, ow],
            out,
            Op::Upsample {
                input: self.clone(),
                factor,
            },
        ))
    }
}

pub(super) fn conv2d_backward(ctx: &Conv2dCtx, g: &[f64], acc: &mut GradMap) {
    let (channels, h, w) = ctx.input.chw("conv2d").expect("validated in forward");
    let kshape = ctx.kernel.shape();
    let (c_out, kh, kw) = (kshape[0], kshape[2], kshape[3]);
    let geom = Geometry {
        channels,
        h,
        w,
        kh,
        kw,
        stride: ctx.stride,
        padding: ctx.padding,
        out_h: ctx.out_h,
        out_w: ctx.out_w,
    };
    let pixels = geom.pixels();
    let rows = geom.rows();

    if ctx.bias.requires_grad() {
        acc.accumulate(
            &ctx.bias,
            g.chunks_exact(pixels).map(|c| c.iter().sum()).collect(),
        );
    }
    if ctx.kernel.requires_grad() {
        let unfolded = ctx.cols.as_deref().unwrap_or(ctx.input.data());
        acc.accumulate_with(&ctx.kernel, |dk| {
            gemm(c_out, pixels, rows, 1.0, g, false, unfolded, true, 1.0, dk);
        });
    }
    if ctx.input.requires_grad() {
        if geom.is_pointwise() {
            acc.accumulate_with(&ctx.input, |dx| {
                gemm(
                    rows,
                    c_out,
                    pixels,
                    1.0,
                    ctx.kernel.data(),
                    true,
                    g,
                    false,
                    1.0,
                    dx,
                );
            });
        } else {
            let mut dcols = vec![0.0; rows * pixels];
            gemm(
                rows,
                c_out,
                pixels,
                1.0,
                ctx.kernel.data(),
                true,
                g,
                false,
                0.0,
                &mut dcols,
            );
            acc.accumulate_with(&ctx.input, |dx| geom.col2im(&dcols, dx));
        }
    }
}

pub(super) fn pool2d_backward(
    input: &Tensor,
    window: usize,
    mode: PoolMode,
    argmax: &[usize],
    g: &[f64],
    acc: &mut GradMap,
) {
    match mode {
        PoolMode::Max => acc.accumulate_with(input, |dx| {
            for (&idx, &v) in argmax.iter().zip(g) {
                dx[idx] += v;
            }
        }),
        PoolMode::Avg => {
            let (_, h, w) = input.chw("pool2d").expect("validated in forward");
            let (oh, ow) = (h / window, w / window);
            let share = 1.0 / (window * window) as f64;
            acc.accumulate_with(input, |dx| {
                for (i, &v) in g.iter().enumerate() {
                    let (ch, rem) = (i / (oh * ow), i % (oh * ow));
                    let (oy, ox) = (rem / ow, rem % ow);
                    for dy in 0..window {
                        let row = (ch * h + oy * window + dy) * w + ox * window;
                        for d in &mut dx[row..row + window] {
                            *d += v * share;
                        }
                    }
                }
            });
        }
    }
}

/// Tap geometry of a convolution over a constant-per-channel map. Along
/// each axis, an output position sees a contiguous range of kernel taps and
/// a kernel tap reaches a contiguous range of output positions.
struct Tiled {
    kh: usize,
    kw: usize,
    /// Valid kernel rows per output row, valid kernel columns per output
    /// column.
    rows: Vec<std::ops::Range<usize>>,
    cols: Vec<std::ops::Range<usize>>,
    /// Output rows reached by each kernel row, output columns by each kernel
    /// column.
    row_reach: Vec<std::ops::Range<usize>>,
    col_reach: Vec<std::ops::Range<usize>>,
    out_h: usize,
    out_w: usize,
}

impl Tiled {
    fn new(height: usize, width: usize, kh: usize, kw: usize, padding: usize) -> Self {
        let out_h = conv_output_size(height, kh, 1, padding);
        let out_w = conv_output_size(width, kw, 1, padding);
        // tap k at output o reads input o + k - padding, valid in [0, size)
        let taps_at = |o: usize, k: usize, size: usize| {
            let lo = padding.saturating_sub(o).min(k);
            lo..(size + padding).saturating_sub(o).min(k).max(lo)
        };
        let reach = |k: usize, out: usize, size: usize| {
            let lo = padding.saturating_sub(k).min(out);
            lo..(size + padding).saturating_sub(k).min(out).max(lo)
        };
        Self {
            kh,
            kw,
            rows: (0..out_h).map(|o| taps_at(o, kh, height)).collect(),
            cols: (0..out_w).map(|o| taps_at(o, kw, width)).collect(),
            row_reach: (0..kh).map(|k| reach(k, out_h, height)).collect(),
            col_reach: (0..kw).map(|k| reach(k, out_w, width)).collect(),
            out_h,
            out_w,
        }
    }

    fn pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }

    /// `[C_out, taps]`: the kernel at each tap applied to the vector.
    fn tap_vectors(&self, kernel: &[f64], v: &[f64], c_out: usize) -> Vec<f64> {
        let taps = self.taps();
        let mut out = vec![0.0; c_out * taps];
        for (o, dst) in out.chunks_exact_mut(taps).enumerate() {
            for (c, &x) in v.iter().enumerate() {
                let k = &kernel[(o * v.len() + c) * taps..(o * v.len() + c + 1) * taps];
                for (d, &w) in dst.iter_mut().zip(k) {
                    *d += w * x;
                }
            }
        }
        out
    }

    /// Output plane of one channel from its tap values, through a 2-D prefix
    /// sum over the kernel window.
    fn forward_plane(&self, taps: &[f64], out: &mut [f64]) {
        let stride = self.kw + 1;
        let mut prefix = vec![0.0; (self.kh + 1) * stride];
        for ky in 0..self.kh {
            for kx in 0..self.kw {
                prefix[(ky + 1) * stride + kx + 1] = taps[ky * self.kw + kx]
                    + prefix[ky * stride + kx + 1]
                    + prefix[(ky + 1) * stride + kx]
                    - prefix[ky * stride + kx];
            }
        }
        for (oy, r) in self.rows.iter().enumerate() {
            let row = &mut out[oy * self.out_w..(oy + 1) * self.out_w];
            for (d, c) in row.iter_mut().zip(&self.cols) {
                *d = prefix[r.end * stride + c.end]
                    - prefix[r.start * stride + c.end]
                    - prefix[r.end * stride + c.start]
                    + prefix[r.start * stride + c.start];
            }
        }
    }

    /// Gradient of the tap values of one channel: the output gradient summed
    /// over the positions each tap reaches.
    fn backward_plane(&self, g: &[f64], dtaps: &mut [f64]) {
        let mut prefix = vec![0.0; self.out_w + 1];
        let mut per_row = vec![0.0; self.out_h * self.kw];
        for oy in 0..self.out_h {
            let row = &g[oy * self.out_w..(oy + 1) * self.out_w];
            for (i, v) in row.iter().enumerate() {
                prefix[i + 1] = prefix[i] + v;
            }
            for (kx, reach) in self.col_reach.iter().enumerate() {
                per_row[oy * self.kw + kx] = prefix[reach.end] - prefix[reach.start];
            }
        }
        for (ky, reach) in self.row_reach.iter().enumerate() {
            for oy in reach.clone() {
                for kx in 0..self.kw {
                    dtaps[ky * self.kw + kx] += per_row[oy * self.kw + kx];
                }
            }
        }
    }
}

pub(super) fn conv_tiled_backward(
    input: &Tensor,
    kernel: &Tensor,
    (height, width, padding): (usize, usize, usize),
    g: &[f64],
    acc: &mut GradMap,
) {
    let kshape = kernel.shape();
    let (c_out, c_in, kh, kw) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    let tiled = Tiled::new(height, width, kh, kw, padding);
    let taps = tiled.taps();
    let pixels = tiled.pixels();
    let mut dtap = vec![0.0; c_out * taps];
    for (d, plane) in dtap.chunks_exact_mut(taps).zip(g.chunks_exact(pixels)) {
        tiled.backward_plane(plane, d);
    }
    if kernel.requires_grad() {
        acc.accumulate_with(kernel, |dk| {
            for o in 0..c_out {
                for (c, &x) in input.data().iter().enumerate() {
                    let row = &mut dk[(o * c_in + c) * taps..(o * c_in + c + 1) * taps];
                    for (t, d) in row.iter_mut().enumerate() {
                        *d += dtap[o * taps + t] * x;
                    }
                }
            }
        });
    }
    if input.requires_grad() {
        acc.accumulate_with(input, |dx| {
            let k = kernel.data();
            for o in 0..c_out {
                for (c, d) in dx.iter_mut().enumerate() {
                    let row = &k[(o * c_in + c) * taps..(o * c_in + c + 1) * taps];
                    *d += row
                        .iter()
                        .enumerate()
                        .map(|(t, w)| w * dtap[o * taps + t])
                        .sum::<f64>();
                }
            }
        });
    }
}

pub(super) fn upsample_backward(input: &Tensor, factor: usize, g: &[f64], acc: &mut GradMap) {
    let (c, h, w) = input.chw("upsample_nearest").expect("validated in forward");
    let ow = w * factor;
    acc.accumulate_with(input, |dx| {
        for ch in 0..c {
            for y in 0..h * factor {
                let dst = &mut dx[(ch * h + y / factor) * w..(ch * h + y / factor + 1) * w];
                let src = &g[(ch * h * factor + y) * ow..(ch * h * factor + y + 1) * ow];
                for (x, &v) in src.iter().enumerate() {
                    dst[x / factor] += v;
                }
            }
        }
    });
}
