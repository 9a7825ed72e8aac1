//! Dense 2-d convolution and bilinear resampling with hand-written
//! backward passes. These are the building blocks of the toy backbone,
//! the score heads and the fusion stage.

use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Zero-padded strided 2-d convolution (cross-correlation).
///
/// `input` is `[B, Cin, H, W]`, `weight` `[Cout, Cin, KH, KW]`, `bias`
/// `[Cout]`. The padded extent must divide evenly:
/// `(H + 2*pad - KH) % stride == 0` and likewise for W.
/// Output range `[lo, hi)` for which `o*stride + k - pad` stays in
/// `[0, extent)`.
fn valid_out_range(
    extent: usize,
    out_len: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    // o*stride + k - pad <= extent - 1
    let hi = if extent + pad > k {
        ((extent + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (b, cin, h, w, cout, kh, kw) = conv2d_dims(input, weight, bias)?;
    let (oh, ow) = conv2d_out_size(h, w, kh, kw, stride, pad)?;
    let x = input.data();
    let wt = weight.data();
    let bv = bias.data();
    let mut out = vec![0.0f64; b * cout * oh * ow];
    // Shift-and-add: one weighted row pass per (oc, ic, u, v) tap keeps the
    // inner loop contiguous over output columns.
    for bi in 0..b {
        for oc in 0..cout {
            let obase = (bi * cout + oc) * oh * ow;
            out[obase..obase + oh * ow].fill(bv[oc]);
            for ic in 0..cin {
                let xbase = (bi * cin + ic) * h * w;
                let wbase = (oc * cin + ic) * kh * kw;
                for u in 0..kh {
                    let (oy_lo, oy_hi) = valid_out_range(h, oh, u, stride, pad);
                    for v in 0..kw {
                        let tap = wt[wbase + u * kw + v];
                        if tap == 0.0 {
                            continue;
                        }
                        let (ox_lo, ox_hi) = valid_out_range(w, ow, v, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + u - pad;
                            let xrow = xbase + iy * w;
                            let orow = obase + oy * ow;
                            if stride == 1 {
                                let xs = &x[xrow + ox_lo + v - pad..xrow + ox_hi - 1 + v - pad + 1];
                                let os = &mut out[orow + ox_lo..orow + ox_hi];
                                for (o, &xv) in os.iter_mut().zip(xs) {
                                    *o += tap * xv;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * stride + v - pad;
                                    out[orow + ox] += tap * x[xrow + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[b, cout, oh, ow], out)
}

/// Backward of [`conv2d`]: cotangents for input, weight and bias.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    stride: usize,
    pad: usize,
    gy: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let s = input.shape();
    let ws = weight.shape();
    let (b, cin, h, w) = (s[0], s[1], s[2], s[3]);
    let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
    let gs = gy.shape();
    let (oh, ow) = (gs[2], gs[3]);
    let x = input.data();
    let wt = weight.data();
    let g = gy.data();
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; wt.len()];
    let mut gb = vec![0.0f64; cout];
    for bi in 0..b {
        for oc in 0..cout {
            let obase = (bi * cout + oc) * oh * ow;
            gb[oc] += g[obase..obase + oh * ow].iter().sum::<f64>();
            for ic in 0..cin {
                let xbase = (bi * cin + ic) * h * w;
                let wbase = (oc * cin + ic) * kh * kw;
                for u in 0..kh {
                    let (oy_lo, oy_hi) = valid_out_range(h, oh, u, stride, pad);
                    for v in 0..kw {
                        let tap = wt[wbase + u * kw + v];
                        let (ox_lo, ox_hi) = valid_out_range(w, ow, v, stride, pad);
                        if ox_lo >= ox_hi {
                            continue;
                        }
                        let mut tap_grad = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * stride + u - pad;
                            let xrow = xbase + iy * w;
                            let orow = obase + oy * ow;
                            if stride == 1 {
                                let off = xrow + ox_lo + v - pad;
                                let n = ox_hi - ox_lo;
                                let gs = &g[orow + ox_lo..orow + ox_hi];
                                let xs = &x[off..off + n];
                                let gxs = &mut gx[off..off + n];
                                for ((go, &xv), gxv) in gs.iter().zip(xs).zip(gxs) {
                                    tap_grad += go * xv;
                                    *gxv += go * tap;
                                }
                            } else {
                                for ox in ox_lo..ox_hi {
                                    let ix = ox * stride + v - pad;
                                    let go = g[orow + ox];
                                    tap_grad += go * x[xrow + ix];
                                    gx[xrow + ix] += go * tap;
                                }
                            }
                        }
                        gw[wbase + u * kw + v] += tap_grad;
                    }
                }
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), gx).expect("input shape"),
        Tensor::from_vec(weight.shape(), gw).expect("weight shape"),
        Tensor::from_vec(&[cout], gb).expect("bias shape"),
    )
}

fn conv2d_dims(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let s = input.shape();
    let ws = weight.shape();
    if s.len() != 4 || ws.len() != 4 {
        return Err(dim_err!(
            "conv2d wants [B,C,H,W] input and [O,I,KH,KW] weight"
        ));
    }
    if ws[1] != s[1] {
        return Err(dim_err!(
            "conv2d channel mismatch: input {} vs weight {}",
            s[1],
            ws[1]
        ));
    }
    if bias.shape() != [ws[0]] {
        return Err(dim_err!(
            "conv2d bias shape {:?}, want [{}]",
            bias.shape(),
            ws[0]
        ));
    }
    Ok((s[0], s[1], s[2], s[3], ws[0], ws[2], ws[3]))
}

pub fn conv2d_out_size(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(dim_err!("conv2d stride must be positive"));
    }
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    if hp < kh || wp < kw {
        return Err(dim_err!(
            "kernel {kh}x{kw} larger than padded input {hp}x{wp}"
        ));
    }
    Ok(((hp - kh) / stride + 1, (wp - kw) / stride + 1))
}

/// Bilinear resize of `[B, C, H, W]` to `(out_h, out_w)` with half-pixel
/// sample centers: source coordinate `(o + 0.5) * in/out - 0.5`, clamped.
/// When the size already matches the input passes through bit-exactly.
pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(dim_err!("bilinear_resize wants [B,C,H,W], got {s:?}"));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let taps_y = resize_taps(h, out_h);
    let taps_x = resize_taps(w, out_w);
    let x = input.data();
    let mut out = vec![0.0f64; b * c * out_h * out_w];
    for bc in 0..b * c {
        let ibase = bc * h * w;
        let obase = bc * out_h * out_w;
        for (oy, &(y0, y1, wy)) in taps_y.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in taps_x.iter().enumerate() {
                let v00 = x[ibase + y0 * w + x0];
                let v01 = x[ibase + y0 * w + x1];
                let v10 = x[ibase + y1 * w + x0];
                let v11 = x[ibase + y1 * w + x1];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[obase + oy * out_w + ox] = top + (bot - top) * wy;
            }
        }
    }
    Tensor::from_vec(&[b, c, out_h, out_w], out)
}

/// Backward of [`bilinear_resize`]: scatter the four interpolation weights.
pub fn bilinear_resize_backward(gy: &Tensor, in_h: usize, in_w: usize) -> Tensor {
    let s = gy.shape();
    let (b, c, oh, ow) = (s[0], s[1], s[2], s[3]);
    if (oh, ow) == (in_h, in_w) {
        return gy.clone();
    }
    let taps_y = resize_taps(in_h, oh);
    let taps_x = resize_taps(in_w, ow);
    let g = gy.data();
    let mut gx = vec![0.0f64; b * c * in_h * in_w];
    for bc in 0..b * c {
        let ibase = bc * in_h * in_w;
        let obase = bc * oh * ow;
        for (oy, &(y0, y1, wy)) in taps_y.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in taps_x.iter().enumerate() {
                let go = g[obase + oy * ow + ox];
                gx[ibase + y0 * in_w + x0] += go * (1.0 - wy) * (1.0 - wx);
                gx[ibase + y0 * in_w + x1] += go * (1.0 - wy) * wx;
                gx[ibase + y1 * in_w + x0] += go * wy * (1.0 - wx);
                gx[ibase + y1 * in_w + x1] += go * wy * wx;
            }
        }
    }
    Tensor::from_vec(&[b, c, in_h, in_w], gx).expect("shape by construction")
}

/// For each output position: (low index, high index, fractional weight).
fn resize_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(in_len - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::rng::SplitMix64;

    #[test]
    fn stride_shape_arithmetic() {
        let x = Tensor::zeros(&[6, 3, 64, 176]);
        let w = Tensor::zeros(&[4, 3, 3, 3]);
        let b = Tensor::zeros(&[4]);
        // stride-2 with pad 1 halves each even extent
        let y = conv2d(&x, &w, &b, 2, 1).unwrap();
        assert_eq!(y.shape(), &[6, 4, 32, 88]);
        // kernel larger than the padded input is rejected
        let x2 = Tensor::zeros(&[1, 3, 2, 2]);
        let w5 = Tensor::zeros(&[4, 3, 5, 5]);
        assert!(conv2d(&x2, &w5, &b, 1, 0).is_err());
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = SplitMix64::new(3);
        let x = rng.uniform_tensor(&[1, 1, 4, 4], -1.0, 1.0);
        let w = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_known_sum() {
        // 2x2 all-ones kernel sums each window.
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let w = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let y = conv2d(&x, &w, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[10.0]);
    }

    #[test]
    fn conv2d_gradient_check() {
        let mut rng = SplitMix64::new(5);
        let x = rng.uniform_tensor(&[2, 2, 5, 5], -1.0, 1.0);
        let w = rng.uniform_tensor(&[3, 2, 3, 3], -1.0, 1.0);
        let b = rng.uniform_tensor(&[3], -1.0, 1.0);
        let fwd = |xs: &[Tensor]| conv2d(&xs[0], &xs[1], &xs[2], 2, 1);
        let vjp = |xs: &[Tensor], g: &Tensor| {
            let (gx, gw, gb) = conv2d_backward(&xs[0], &xs[1], 2, 1, g);
            Ok(vec![gx, gw, gb])
        };
        GradCheck {
            forward: &fwd,
            vjp: &vjp,
            eps: 1e-5,
            tolerance: 1e-4,
        }
        .run("conv2d", &[x, w, b])
        .unwrap();
    }

    #[test]
    fn resize_identity_passthrough_is_bit_exact() {
        let mut rng = SplitMix64::new(7);
        let x = rng.uniform_tensor(&[1, 2, 8, 8], -1.0, 1.0);
        let y = bilinear_resize(&x, 8, 8).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn resize_matches_naive_two_axis_oracle() {
        let mut rng = SplitMix64::new(9);
        let (h, w, oh, ow) = (32usize, 32usize, 200usize, 200usize);
        let x = rng.uniform_tensor(&[1, 1, h, w], -1.0, 1.0);
        let y = bilinear_resize(&x, oh, ow).unwrap();
        // Naive per-output-pixel interpolation, separately per axis.
        for oy in 0..oh {
            for ox in 0..ow {
                let sy =
                    ((oy as f64 + 0.5) * h as f64 / oh as f64 - 0.5).clamp(0.0, (h - 1) as f64);
                let sx =
                    ((ox as f64 + 0.5) * w as f64 / ow as f64 - 0.5).clamp(0.0, (w - 1) as f64);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let a = x.at(&[0, 0, y0, x0]) * (1.0 - fx) + x.at(&[0, 0, y0, x1]) * fx;
                let b = x.at(&[0, 0, y1, x0]) * (1.0 - fx) + x.at(&[0, 0, y1, x1]) * fx;
                let want = a * (1.0 - fy) + b * fy;
                assert!((y.at(&[0, 0, oy, ox]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_gradient_check() {
        let mut rng = SplitMix64::new(11);
        let x = rng.uniform_tensor(&[1, 2, 4, 5], -1.0, 1.0);
        let fwd = |xs: &[Tensor]| bilinear_resize(&xs[0], 7, 9);
        let vjp = |xs: &[Tensor], g: &Tensor| {
            Ok(vec![bilinear_resize_backward(
                g,
                xs[0].shape()[2],
                xs[0].shape()[3],
            )])
        };
        GradCheck {
            forward: &fwd,
            vjp: &vjp,
            eps: 1e-5,
            tolerance: 1e-4,
        }
        .run("bilinear_resize", &[x])
        .unwrap();
    }
}
