//! Dense numeric kernels for the graph ops: convolution via im2col + GEMM,
//! padding, pooling and upsampling. GEMMs run single-threaded (matrixmultiply)
//! so results do not depend on the parallelism setting; batch loops use
//! disjoint-write parallelism only.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Array4, ArrayView2, ArrayView4, ArrayViewMut2, ShapeBuilder};

use crate::parallel::for_each_chunk_mut;

/// Output spatial size of a valid (unpadded) convolution.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize) -> usize {
    assert!(input >= kernel, "conv input {input} smaller than kernel {kernel}");
    (input - kernel) / stride + 1
}

fn im2col(x: ArrayView4<'_, f64>, b: usize, k: usize, stride: usize) -> Array2<f64> {
    let (_, c_in, h, w) = x.dim();
    let ho = conv_out_size(h, k, stride);
    let wo = conv_out_size(w, k, stride);
    let mut col = Array2::<f64>::zeros((c_in * k * k, ho * wo));
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let mut dst = col.row_mut(row);
                let dst = dst.as_slice_mut().unwrap();
                for oy in 0..ho {
                    let iy = oy * stride + ky;
                    for ox in 0..wo {
                        dst[oy * wo + ox] = x[[b, ci, iy, ox * stride + kx]];
                    }
                }
            }
        }
    }
    col
}

fn col2im(
    dcol: ArrayView2<'_, f64>,
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    mut dx: ndarray::ArrayViewMut3<'_, f64>,
) {
    let ho = conv_out_size(h, k, stride);
    let wo = conv_out_size(w, k, stride);
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = dcol.row(row);
                let src = src.as_slice().unwrap();
                for oy in 0..ho {
                    let iy = oy * stride + ky;
                    for ox in 0..wo {
                        dx[[ci, iy, ox * stride + kx]] += src[oy * wo + ox];
                    }
                }
            }
        }
    }
}

/// Valid convolution, NCHW input, OIHW weights.
pub fn conv2d_forward(x: ArrayView4<'_, f64>, w: ArrayView4<'_, f64>, stride: usize) -> Array4<f64> {
    let (bsz, c_in, h, wd) = x.dim();
    let (c_out, wc_in, k, k2) = w.dim();
    assert_eq!(c_in, wc_in);
    assert_eq!(k, k2);
    let ho = conv_out_size(h, k, stride);
    let wo = conv_out_size(wd, k, stride);
    let w_mat = w
        .to_shape((c_out, c_in * k * k))
        .expect("weights contiguous");
    let mut out = Array4::<f64>::zeros((bsz, c_out, ho, wo));
    let chunk = c_out * ho * wo;
    let out_slice = out.as_slice_mut().unwrap();
    for_each_chunk_mut(out_slice, chunk, |b, dst| {
        let col = im2col(x, b, k, stride);
        let mut y: ArrayViewMut2<'_, f64> =
            ArrayViewMut2::from_shape((c_out, ho * wo).strides((ho * wo, 1)), dst).unwrap();
        general_mat_mul(1.0, &w_mat.view(), &col.view(), 0.0, &mut y);
    });
    out
}

/// Gradients of the valid convolution w.r.t. input and weights.
pub fn conv2d_backward(
    x: ArrayView4<'_, f64>,
    w: ArrayView4<'_, f64>,
    dy: ArrayView4<'_, f64>,
    stride: usize,
    need_dx: bool,
    need_dw: bool,
) -> (Option<Array4<f64>>, Option<Array4<f64>>) {
    let (bsz, c_in, h, wd) = x.dim();
    let (c_out, _, k, _) = w.dim();
    let ho = conv_out_size(h, k, stride);
    let wo = conv_out_size(wd, k, stride);
    let w_mat = w
        .to_shape((c_out, c_in * k * k))
        .expect("weights contiguous");

    let dw = if need_dw {
        // Sequential accumulation keeps the summation order fixed.
        let mut dw_mat = Array2::<f64>::zeros((c_out, c_in * k * k));
        for b in 0..bsz {
            let col = im2col(x, b, k, stride);
            let dy_b = dy
                .slice(ndarray::s![b, .., .., ..])
                .to_shape((c_out, ho * wo))
                .unwrap()
                .to_owned();
            general_mat_mul(1.0, &dy_b.view(), &col.t(), 1.0, &mut dw_mat);
        }
        Some(dw_mat.into_shape_with_order((c_out, c_in, k, k)).unwrap())
    } else {
        None
    };

    let dx = if need_dx {
        let mut dx = Array4::<f64>::zeros((bsz, c_in, h, wd));
        let chunk = c_in * h * wd;
        let dx_slice = dx.as_slice_mut().unwrap();
        for_each_chunk_mut(dx_slice, chunk, |b, dst| {
            let dy_b = dy
                .slice(ndarray::s![b, .., .., ..])
                .to_shape((c_out, ho * wo))
                .unwrap()
                .to_owned();
            let mut dcol = Array2::<f64>::zeros((c_in * k * k, ho * wo));
            general_mat_mul(1.0, &w_mat.t(), &dy_b.view(), 0.0, &mut dcol);
            let dxb = ndarray::ArrayViewMut3::from_shape((c_in, h, wd), dst).unwrap();
            col2im(dcol.view(), c_in, h, wd, k, stride, dxb);
        });
        Some(dx)
    } else {
        None
    };

    (dx, dw)
}

fn reflect_index(i: isize, n: isize) -> usize {
    // Reflection without repeating the edge sample, torch "reflect" mode.
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    debug_assert!(i >= 0 && i < n);
    i as usize
}

pub fn reflect_pad(x: ArrayView4<'_, f64>, p: usize) -> Array4<f64> {
    let (bsz, c, h, w) = x.dim();
    assert!(h > p && w > p, "reflect pad {p} needs spatial size > {p}");
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = Array4::<f64>::zeros((bsz, c, hp, wp));
    let chunk = c * hp * wp;
    let out_slice = out.as_slice_mut().unwrap();
    for_each_chunk_mut(out_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, hp, wp), dst).unwrap();
        for ci in 0..c {
            for y in 0..hp {
                let sy = reflect_index(y as isize - p as isize, h as isize);
                for xx in 0..wp {
                    let sx = reflect_index(xx as isize - p as isize, w as isize);
                    o[[ci, y, xx]] = x[[b, ci, sy, sx]];
                }
            }
        }
    });
    out
}

pub fn reflect_pad_adjoint(dy: ArrayView4<'_, f64>, p: usize, h: usize, w: usize) -> Array4<f64> {
    let (bsz, c, hp, wp) = dy.dim();
    assert_eq!(hp, h + 2 * p);
    assert_eq!(wp, w + 2 * p);
    let mut dx = Array4::<f64>::zeros((bsz, c, h, w));
    let chunk = c * h * w;
    let dx_slice = dx.as_slice_mut().unwrap();
    for_each_chunk_mut(dx_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, h, w), dst).unwrap();
        for ci in 0..c {
            for y in 0..hp {
                let sy = reflect_index(y as isize - p as isize, h as isize);
                for xx in 0..wp {
                    let sx = reflect_index(xx as isize - p as isize, w as isize);
                    o[[ci, sy, sx]] += dy[[b, ci, y, xx]];
                }
            }
        }
    });
    dx
}

pub fn upsample2_forward(x: ArrayView4<'_, f64>) -> Array4<f64> {
    let (bsz, c, h, w) = x.dim();
    let mut out = Array4::<f64>::zeros((bsz, c, 2 * h, 2 * w));
    let chunk = c * 4 * h * w;
    let out_slice = out.as_slice_mut().unwrap();
    for_each_chunk_mut(out_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, 2 * h, 2 * w), dst).unwrap();
        for ci in 0..c {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    o[[ci, y, xx]] = x[[b, ci, y / 2, xx / 2]];
                }
            }
        }
    });
    out
}

pub fn upsample2_backward(dy: ArrayView4<'_, f64>) -> Array4<f64> {
    let (bsz, c, h2, w2) = dy.dim();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut dx = Array4::<f64>::zeros((bsz, c, h, w));
    let chunk = c * h * w;
    let dx_slice = dx.as_slice_mut().unwrap();
    for_each_chunk_mut(dx_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, h, w), dst).unwrap();
        for ci in 0..c {
            for y in 0..h2 {
                for xx in 0..w2 {
                    o[[ci, y / 2, xx / 2]] += dy[[b, ci, y, xx]];
                }
            }
        }
    });
    dx
}

pub fn avgpool2_forward(x: ArrayView4<'_, f64>) -> Array4<f64> {
    let (bsz, c, h, w) = x.dim();
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Array4::<f64>::zeros((bsz, c, ho, wo));
    let chunk = c * ho * wo;
    let out_slice = out.as_slice_mut().unwrap();
    for_each_chunk_mut(out_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, ho, wo), dst).unwrap();
        for ci in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    o[[ci, y, xx]] = 0.25
                        * (x[[b, ci, 2 * y, 2 * xx]]
                            + x[[b, ci, 2 * y, 2 * xx + 1]]
                            + x[[b, ci, 2 * y + 1, 2 * xx]]
                            + x[[b, ci, 2 * y + 1, 2 * xx + 1]]);
                }
            }
        }
    });
    out
}

pub fn avgpool2_backward(dy: ArrayView4<'_, f64>) -> Array4<f64> {
    let (bsz, c, ho, wo) = dy.dim();
    let (h, w) = (ho * 2, wo * 2);
    let mut dx = Array4::<f64>::zeros((bsz, c, h, w));
    let chunk = c * h * w;
    let dx_slice = dx.as_slice_mut().unwrap();
    for_each_chunk_mut(dx_slice, chunk, |b, dst| {
        let mut o = ndarray::ArrayViewMut3::from_shape((c, h, w), dst).unwrap();
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    o[[ci, y, xx]] = 0.25 * dy[[b, ci, y / 2, xx / 2]];
                }
            }
        }
    });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;
    use rand::{Rng, SeedableRng};

    fn randn4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_simple_fn(shape, || rng.gen::<f64>() - 0.5)
    }

    #[test]
    fn conv_matches_naive() {
        let x = randn4((2, 3, 7, 7), 1);
        let w = randn4((4, 3, 3, 3), 2);
        let y = conv2d_forward(x.view(), w.view(), 2);
        assert_eq!(y.dim(), (2, 4, 3, 3));
        for b in 0..2 {
            for co in 0..4 {
                for oy in 0..3 {
                    for ox in 0..3 {
                        let mut acc = 0.0;
                        for ci in 0..3 {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    acc += x[[b, ci, oy * 2 + ky, ox * 2 + kx]]
                                        * w[[co, ci, ky, kx]];
                                }
                            }
                        }
                        assert!((y[[b, co, oy, ox]] - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_difference() {
        let x = randn4((1, 2, 6, 6), 3);
        let w = randn4((3, 2, 3, 3), 4);
        let dy = randn4((1, 3, 4, 4), 5);
        let loss = |x: &Array4<f64>, w: &Array4<f64>| -> f64 {
            let y = conv2d_forward(x.view(), w.view(), 1);
            (&y * &dy).sum()
        };
        let (dx, dw) = conv2d_backward(x.view(), w.view(), dy.view(), 1, true, true);
        let (dx, dw) = (dx.unwrap(), dw.unwrap());
        let h = 1e-6;
        for idx in [[0usize, 0, 0, 0], [0, 1, 3, 2], [0, 0, 5, 5]] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "dx mismatch at {idx:?}");
        }
        for idx in [[0usize, 0, 0, 0], [2, 1, 2, 2]] {
            let mut wp = w.clone();
            wp[idx] += h;
            let mut wm = w.clone();
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - dw[idx]).abs() < 1e-6, "dw mismatch at {idx:?}");
        }
    }

    #[test]
    fn reflect_pad_round_trip_shapes() {
        let x = randn4((1, 1, 4, 4), 7);
        let p = reflect_pad(x.view(), 1);
        assert_eq!(p.dim(), (1, 1, 6, 6));
        assert_eq!(p[[0, 0, 0, 0]], x[[0, 0, 1, 1]]);
        assert_eq!(p[[0, 0, 0, 1]], x[[0, 0, 1, 0]]);
        let adj = reflect_pad_adjoint(p.view(), 1, 4, 4);
        assert_eq!(adj.dim(), x.dim());
    }

    #[test]
    fn pool_and_upsample_adjoints() {
        // <dy, f(x)> == <f^T(dy), x> for linear ops.
        let x = randn4((2, 2, 4, 4), 8);
        let dy = randn4((2, 2, 8, 8), 9);
        let lhs = (&upsample2_forward(x.view()) * &dy).sum();
        let rhs = (&upsample2_backward(dy.view()) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);

        let dy2 = randn4((2, 2, 2, 2), 10);
        let lhs = (&avgpool2_forward(x.view()) * &dy2).sum();
        let rhs = (&avgpool2_backward(dy2.view()) * &x).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
