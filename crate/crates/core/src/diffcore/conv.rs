//! Patch extraction for NHWC convolutions.
//!
//! A strided convolution maps an image `[h, w, c]` to patches
//! `[oh * ow, k * k * c]`; the transposed convolution is its adjoint and
//! scatters patches back with `col2im`.

use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    /// Spatial size and channels of the patch-extracted image.
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(h: usize, w: usize, c: usize, kernel: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::config("kernel and stride must be positive"));
        }
        if h + 2 * pad < kernel || w + 2 * pad < kernel {
            return Err(Error::config(format!(
                "kernel {kernel} does not fit a {h}x{w} image with padding {pad}"
            )));
        }
        Ok(Self {
            h,
            w,
            c,
            kernel,
            stride,
            pad,
            out_h: (h + 2 * pad - kernel) / stride + 1,
            out_w: (w + 2 * pad - kernel) / stride + 1,
        })
    }

    /// Geometry of the transposed convolution producing an image from a
    /// `[in_h, in_w]` input; the result is the geometry of that output image.
    pub fn transposed(
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let h = ((in_h - 1) * stride + kernel)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::config("transposed convolution padding too large"))?;
        let w = ((in_w - 1) * stride + kernel)
            .checked_sub(2 * pad)
            .ok_or_else(|| Error::config("transposed convolution padding too large"))?;
        let g = Self::new(h, w, out_c, kernel, stride, pad)?;
        if g.out_h != in_h || g.out_w != in_w {
            return Err(Error::config("inconsistent transposed convolution geometry"));
        }
        Ok(g)
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.c
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.h * self.w * self.c
    }

    #[inline]
    fn source(&self, o: usize, k: usize, dim: usize) -> Option<usize> {
        let p = (o * self.stride + k).checked_sub(self.pad)?;
        (p < dim).then_some(p)
    }

    pub fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        let pl = self.patch_len();
        let kc = self.kernel * self.c;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &mut cols[(oy * self.out_w + ox) * pl..][..pl];
                for ky in 0..self.kernel {
                    let dst = &mut row[ky * kc..(ky + 1) * kc];
                    let Some(iy) = self.source(oy, ky, self.h) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    for kx in 0..self.kernel {
                        let d = &mut dst[kx * self.c..(kx + 1) * self.c];
                        match self.source(ox, kx, self.w) {
                            Some(ix) => {
                                let s = (iy * self.w + ix) * self.c;
                                d.copy_from_slice(&img[s..s + self.c]);
                            }
                            None => d.fill(T::zero()),
                        }
                    }
                }
            }
        }
    }

    /// Accumulates patches into `img` (adjoint of [`im2col`](Self::im2col)).
    pub fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        let pl = self.patch_len();
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let row = &cols[(oy * self.out_w + ox) * pl..][..pl];
                for ky in 0..self.kernel {
                    let Some(iy) = self.source(oy, ky, self.h) else {
                        continue;
                    };
                    for kx in 0..self.kernel {
                        let Some(ix) = self.source(ox, kx, self.w) else {
                            continue;
                        };
                        let s = (iy * self.w + ix) * self.c;
                        let src = &row[(ky * self.kernel + kx) * self.c..][..self.c];
                        for (a, &b) in img[s..s + self.c].iter_mut().zip(src) {
                            *a = *a + b;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_sizes() {
        let g = ConvGeom::new(32, 32, 3, 4, 2, 1).unwrap();
        assert_eq!((g.out_h, g.out_w), (16, 16));
        let g = ConvGeom::new(64, 64, 3, 4, 2, 0).unwrap();
        assert_eq!(g.out_h, 31);
        let t = ConvGeom::transposed(2, 2, 8, 4, 2, 1).unwrap();
        assert_eq!((t.h, t.w), (4, 4));
        let t = ConvGeom::transposed(13, 13, 8, 6, 2, 0).unwrap();
        assert_eq!(t.h, 30);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = ConvGeom::new(5, 4, 2, 3, 2, 1).unwrap();
        let x: Vec<f64> = (0..g.image_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.positions() * g.patch_len())
            .map(|i| (i as f64 * 0.91).cos())
            .collect();
        let mut cols = vec![0.0; y.len()];
        g.im2col(&x, &mut cols);
        let mut img = vec![0.0; x.len()];
        g.col2im(&y, &mut img);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&img).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
