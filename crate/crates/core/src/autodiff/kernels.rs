//! Raw convolution and pooling kernels on flat buffers.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::{row_major, transposed};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub batch: usize,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeometry {
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_height * self.out_width
    }
}

/// Output extent of a strided, padded window sweep (`None` if the kernel does not fit).
pub fn conv_out_extent(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if kernel == 0 || stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds sample `n` of a batch into columns `n·Ho·Wo ..` of a `[C·k·k, B·Ho·Wo]` matrix.
fn im2col<T: Real>(g: &ConvGeometry, sample: &[T], n: usize, cols: &mut [T]) {
    let plane = g.out_plane();
    let stride = g.batch * plane;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let chan = &sample[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * stride + n * plane..row * stride + (n + 1) * plane];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let line = &mut dst[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &chan[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        *out = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Folds columns `n·Ho·Wo ..` of a column gradient back onto sample `n` (accumulating).
fn col2im<T: Real>(g: &ConvGeometry, cols: &[T], n: usize, sample_grad: &mut [T]) {
    let plane = g.out_plane();
    let stride = g.batch * plane;
    let k = g.kernel;
    for c in 0..g.in_channels {
        let chan = &mut sample_grad[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * stride + n * plane..row * stride + (n + 1) * plane];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut chan[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_width {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Whole-batch column matrix `[C·k·k, B·Ho·Wo]`.
fn batch_cols<T: Real>(g: &ConvGeometry, input: &[T]) -> Vec<T> {
    let in_len = g.in_channels * g.height * g.width;
    let mut cols = vec![T::zero(); g.patch_len() * g.batch * g.out_plane()];
    for n in 0..g.batch {
        im2col(g, &input[n * in_len..(n + 1) * in_len], n, &mut cols);
    }
    cols
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeometry, input: &[T], weight: &[T]) -> Vec<T> {
    let plane = g.out_plane();
    let wide = g.batch * plane;
    let cols = batch_cols(g, input);
    let mut flat = vec![T::zero(); g.out_channels * wide];
    T::gemm(g.out_channels, g.patch_len(), wide, weight, row_major(g.patch_len()), &cols, row_major(wide), T::zero(), &mut flat);
    // [Co, B, plane] → [B, Co, plane]
    let mut out = vec![T::zero(); flat.len()];
    for co in 0..g.out_channels {
        for n in 0..g.batch {
            let src = &flat[co * wide + n * plane..co * wide + (n + 1) * plane];
            out[(n * g.out_channels + co) * plane..(n * g.out_channels + co + 1) * plane].copy_from_slice(src);
        }
    }
    out
}

/// Gradients of a convolution. Either output may be skipped.
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeometry,
    input: &[T],
    weight: &[T],
    grad_out: &[T],
    grad_input: Option<&mut [T]>,
    grad_weight: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let wide = g.batch * plane;
    let patch = g.patch_len();
    // [B, Co, plane] → [Co, B, plane]
    let mut gflat = vec![T::zero(); g.out_channels * wide];
    for n in 0..g.batch {
        for co in 0..g.out_channels {
            let src = &grad_out[(n * g.out_channels + co) * plane..(n * g.out_channels + co + 1) * plane];
            gflat[co * wide + n * plane..co * wide + (n + 1) * plane].copy_from_slice(src);
        }
    }
    if let Some(gw) = grad_weight {
        let cols = batch_cols(g, input);
        T::gemm(g.out_channels, wide, patch, &gflat, row_major(wide), &cols, transposed(wide), T::one(), gw);
    }
    if let Some(gi) = grad_input {
        let mut dcols = vec![T::zero(); patch * wide];
        T::gemm(patch, g.out_channels, wide, weight, transposed(patch), &gflat, row_major(wide), T::zero(), &mut dcols);
        let in_len = g.in_channels * g.height * g.width;
        for n in 0..g.batch {
            col2im(g, &dcols, n, &mut gi[n * in_len..(n + 1) * in_len]);
        }
    }
}
