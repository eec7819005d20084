//! Composite operations built from tape primitives.

use std::sync::Arc;

use super::tape::{Var, GATHER_ZERO};

/// Zero-pad the two trailing (spatial) axes of `[B, C, H, W]` by `pad` cells.
pub fn pad2d<'t>(x: &Var<'t>, pad: usize) -> Var<'t> {
    let s = x.shape();
    assert_eq!(s.len(), 4, "pad2d expects [B, C, H, W], got {s:?}");
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut index = Vec::with_capacity(b * c * hp * wp);
    for plane in 0..b * c {
        for i in 0..hp {
            for j in 0..wp {
                let inside = i >= pad && i < h + pad && j >= pad && j < w + pad;
                index.push(if inside {
                    plane * h * w + (i - pad) * w + (j - pad)
                } else {
                    GATHER_ZERO
                });
            }
        }
    }
    x.gather(Arc::new(index), &[b, c, hp, wp])
}

/// Stride-1 valid convolution.
///
/// `x: [B, C, H, W]`, `kernel: [F, C, KH, KW]`, `bias: [F]` gives
/// `[B, F, H-KH+1, W-KW+1]`. Lowered to an im2col gather and one matmul.
pub fn conv2d<'t>(x: &Var<'t>, kernel: &Var<'t>, bias: &Var<'t>) -> Var<'t> {
    let s = x.shape();
    let k = kernel.shape();
    assert_eq!(s.len(), 4, "conv2d input must be [B, C, H, W], got {s:?}");
    assert_eq!(k.len(), 4, "conv2d kernel must be [F, C, KH, KW], got {k:?}");
    assert_eq!(
        s[1], k[1],
        "conv2d channel mismatch: input {s:?}, kernel {k:?}"
    );
    assert!(k[2] <= s[2] && k[3] <= s[3], "conv2d kernel {k:?} larger than input {s:?}");
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (f, kh, kw) = (k[0], k[2], k[3]);
    let (ho, wo) = (h - kh + 1, w - kw + 1);
    let patch = c * kh * kw;

    let mut index = Vec::with_capacity(b * ho * wo * patch);
    for bi in 0..b {
        for i in 0..ho {
            for j in 0..wo {
                for ci in 0..c {
                    for di in 0..kh {
                        for dj in 0..kw {
                            index.push(((bi * c + ci) * h + i + di) * w + j + dj);
                        }
                    }
                }
            }
        }
    }
    let cols = x.gather(Arc::new(index), &[b * ho * wo, patch]);
    let weights = kernel.reshape(&[f, patch]);
    // [B*Ho*Wo, F]
    let out = cols.matmul_t(&weights, false, true).add_row(bias);

    let mut perm = Vec::with_capacity(b * f * ho * wo);
    for bi in 0..b {
        for fi in 0..f {
            for p in 0..ho * wo {
                perm.push((bi * ho * wo + p) * f + fi);
            }
        }
    }
    out.gather(Arc::new(perm), &[b, f, ho, wo])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{Tape, Tensor};

    #[test]
    fn all_ones_kernel_sums_input() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::new(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()));
        let k = tape.leaf(Tensor::full(&[1, 1, 3, 3], 1.0));
        let b = tape.leaf(Tensor::zeros(&[1]));
        let y = conv2d(&x, &k, &b);
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 45.0);
    }

    #[test]
    fn padding_preserves_spatial_size() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::full(&[2, 3, 5, 5], 1.0));
        let k = tape.leaf(Tensor::full(&[4, 3, 3, 3], 1.0));
        let b = tape.leaf(Tensor::zeros(&[4]));
        let y = conv2d(&pad2d(&x, 1), &k, &b);
        assert_eq!(y.shape(), &[2, 4, 5, 5]);
        // corner sees a 2x2 patch of ones in each of 3 channels
        assert_eq!(y.value().data()[0], 12.0);
        // centre sees the full 3x3 patch
        assert_eq!(y.value().data()[12], 27.0);
    }
}
