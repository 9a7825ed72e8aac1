//! The small set of differentiable operations the rest of the pipeline is
//! built from. Every forward here has a hand-written backward next to it;
//! all of them are checked against central differences in the test suite.
//!
//! Axis-generic ops view a tensor of shape `[..., L, ...]` as
//! `(outer, L, inner)` blocks: `outer` is the product of extents before the
//! axis, `inner` the product after, and the flat offset of `(o, l, i)` is
//! `(o * L + l) * inner + i`.

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

/// (outer, axis_len, inner) decomposition used by the axis-generic ops.
fn axis_blocks(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {axis} out of range for shape {shape:?}"));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

// ── softmax ────────────────────────────────────────────────────────

/// Softmax along `axis`, computed with max-subtraction so arbitrarily large
/// finite inputs cannot overflow.
pub fn softmax(input: &Tensor, axis: usize) -> Result<Tensor> {
    if !input.all_finite() {
        return Err(Error::Numeric(
            "softmax input contains non-finite values".into(),
        ));
    }
    let (outer, len, inner) = axis_blocks(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![0.0f64; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut m = f64::NEG_INFINITY;
            for l in 0..len {
                m = m.max(x[base + l * inner]);
            }
            let mut s = 0.0;
            for l in 0..len {
                let e = (x[base + l * inner] - m).exp();
                out[base + l * inner] = e;
                s += e;
            }
            for l in 0..len {
                out[base + l * inner] /= s;
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// Backward of [`softmax`] given its output `y` and cotangent `gy`:
/// `gx = y * (gy - sum_axis(gy * y))`.
pub fn softmax_backward(y: &Tensor, gy: &Tensor, axis: usize) -> Tensor {
    assert_eq!(y.shape(), gy.shape(), "softmax_backward shape mismatch");
    let (outer, len, inner) = axis_blocks(y.shape(), axis).expect("axis validated in forward");
    let yv = y.data();
    let g = gy.data();
    let mut gx = vec![0.0f64; yv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut dot = 0.0;
            for l in 0..len {
                let k = base + l * inner;
                dot += g[k] * yv[k];
            }
            for l in 0..len {
                let k = base + l * inner;
                gx[k] = yv[k] * (g[k] - dot);
            }
        }
    }
    Tensor::from_vec(y.shape(), gx).expect("same shape as input")
}

// ── average pooling ────────────────────────────────────────────────

/// Arithmetic mean along `axis`; the axis collapses to extent 1.
pub fn avgpool_axis(input: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, len, inner) = axis_blocks(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![0.0f64; outer * inner];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut s = 0.0;
            for l in 0..len {
                s += x[base + l * inner];
            }
            out[o * inner + i] = s / len as f64;
        }
    }
    let mut shape = input.shape().to_vec();
    shape[axis] = 1;
    Tensor::from_vec(&shape, out)
}

/// Backward of [`avgpool_axis`]: the cotangent spreads uniformly, scaled by
/// `1 / axis_len`.
pub fn avgpool_axis_backward(gy: &Tensor, input_shape: &[usize], axis: usize) -> Tensor {
    let (outer, len, inner) = axis_blocks(input_shape, axis).expect("axis validated in forward");
    let g = gy.data();
    debug_assert_eq!(g.len(), outer * inner);
    let mut gx = vec![0.0f64; outer * len * inner];
    let inv = 1.0 / len as f64;
    for o in 0..outer {
        for i in 0..inner {
            let v = g[o * inner + i] * inv;
            let base = o * len * inner + i;
            for l in 0..len {
                gx[base + l * inner] = v;
            }
        }
    }
    Tensor::from_vec(input_shape, gx).expect("shape by construction")
}

// ── depthwise 1-d convolution ──────────────────────────────────────

/// Valid (no padding) per-sample per-channel correlation.
///
/// `input` is `[B, C, L]`, `kernel` is `[B, C, K]` with `K <= L`; the output
/// is `[B, C, L-K+1]` with `out[b,c,j] = sum_k input[b,c,j+k] * kernel[b,c,k]`.
pub fn conv1d_depthwise(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (ish, ksh) = (input.shape(), kernel.shape());
    if ish.len() != 3 || ksh.len() != 3 {
        return Err(dim_err!(
            "conv1d_depthwise wants rank-3 tensors, got {ish:?} and {ksh:?}"
        ));
    }
    if ish[0] != ksh[0] || ish[1] != ksh[1] {
        return Err(dim_err!(
            "conv1d_depthwise batch/channel mismatch: {ish:?} vs {ksh:?}"
        ));
    }
    let (b, c, l, k) = (ish[0], ish[1], ish[2], ksh[2]);
    if k > l {
        return Err(dim_err!("kernel length {k} exceeds input length {l}"));
    }
    let out_len = l - k + 1;
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![0.0f64; b * c * out_len];
    for bc in 0..b * c {
        let xr = &x[bc * l..(bc + 1) * l];
        let wr = &w[bc * k..(bc + 1) * k];
        let or = &mut out[bc * out_len..(bc + 1) * out_len];
        for (j, o) in or.iter_mut().enumerate() {
            let mut s = 0.0;
            for (t, &wt) in wr.iter().enumerate() {
                s += xr[j + t] * wt;
            }
            *o = s;
        }
    }
    Tensor::from_vec(&[b, c, out_len], out)
}

/// Backward of [`conv1d_depthwise`] w.r.t. both arguments.
pub fn conv1d_depthwise_backward(input: &Tensor, kernel: &Tensor, gy: &Tensor) -> (Tensor, Tensor) {
    let (b, c, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let k = kernel.shape()[2];
    let out_len = l - k + 1;
    assert_eq!(
        gy.shape(),
        &[b, c, out_len],
        "conv1d_depthwise_backward cotangent shape"
    );
    let x = input.data();
    let w = kernel.data();
    let g = gy.data();
    let mut gx = vec![0.0f64; x.len()];
    let mut gw = vec![0.0f64; w.len()];
    for bc in 0..b * c {
        let xr = &x[bc * l..(bc + 1) * l];
        let wr = &w[bc * k..(bc + 1) * k];
        let gr = &g[bc * out_len..(bc + 1) * out_len];
        let gxr = &mut gx[bc * l..(bc + 1) * l];
        let gwr = &mut gw[bc * k..(bc + 1) * k];
        for (j, &gj) in gr.iter().enumerate() {
            for t in 0..k {
                gxr[j + t] += gj * wr[t];
                gwr[t] += gj * xr[j + t];
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), gx).expect("input shape"),
        Tensor::from_vec(kernel.shape(), gw).expect("kernel shape"),
    )
}

// ── positive part ──────────────────────────────────────────────────

/// max(0, x). The subgradient at 0 is fixed to 0 so gradient checks are
/// deterministic.
pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, gy: &Tensor) -> Tensor {
    assert_eq!(x.shape(), gy.shape(), "relu_backward shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(gy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

// ── multi-layer perceptron ─────────────────────────────────────────

/// One affine layer: `weight` is `[out, in]`, `bias` is `[out]`.
#[derive(Clone, Debug)]
pub struct MlpLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl MlpLayer {
    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Intermediates kept for [`mlp_backward`]: the input of each layer and each
/// layer's pre-activation output.
pub struct MlpCache {
    layer_inputs: Vec<Tensor>,
    pre_activations: Vec<Tensor>,
}

/// Affine chain with the positive-part nonlinearity between consecutive
/// layers (none after the last). Input `[B, M]`, output `[B, N]`.
pub fn mlp_forward(input: &Tensor, layers: &[MlpLayer]) -> Result<Tensor> {
    mlp_forward_cached(input, layers).map(|(y, _)| y)
}

pub fn mlp_forward_cached(input: &Tensor, layers: &[MlpLayer]) -> Result<(Tensor, MlpCache)> {
    if input.rank() != 2 {
        return Err(dim_err!(
            "mlp input must be [B, M], got {:?}",
            input.shape()
        ));
    }
    if layers.is_empty() {
        return Err(dim_err!("mlp needs at least one layer"));
    }
    let batch = input.shape()[0];
    let mut cache = MlpCache {
        layer_inputs: Vec::new(),
        pre_activations: Vec::new(),
    };
    let mut x = input.clone();
    for (li, layer) in layers.iter().enumerate() {
        let (m, n) = (layer.in_dim(), layer.out_dim());
        if x.shape()[1] != m {
            return Err(dim_err!(
                "mlp layer {li} expects {m} inputs, got {}",
                x.shape()[1]
            ));
        }
        if layer.bias.shape() != [n] {
            return Err(dim_err!(
                "mlp layer {li} bias shape {:?}, want [{n}]",
                layer.bias.shape()
            ));
        }
        let w = layer.weight.data();
        let bv = layer.bias.data();
        let xv = x.data();
        let mut y = vec![0.0f64; batch * n];
        for b in 0..batch {
            let xr = &xv[b * m..(b + 1) * m];
            let yr = &mut y[b * n..(b + 1) * n];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wr = &w[o * m..(o + 1) * m];
                let mut s = bv[o];
                for (xi, wi) in xr.iter().zip(wr) {
                    s += xi * wi;
                }
                *yo = s;
            }
        }
        let pre = Tensor::from_vec(&[batch, n], y)?;
        cache.layer_inputs.push(x);
        cache.pre_activations.push(pre.clone());
        x = if li + 1 < layers.len() {
            relu(&pre)
        } else {
            pre
        };
    }
    Ok((x, cache))
}

/// Backward of [`mlp_forward_cached`]. Returns the input cotangent and one
/// (d_weight, d_bias) pair per layer.
pub fn mlp_backward(
    layers: &[MlpLayer],
    cache: &MlpCache,
    gy: &Tensor,
) -> (Tensor, Vec<(Tensor, Tensor)>) {
    let mut grads: Vec<(Tensor, Tensor)> = Vec::with_capacity(layers.len());
    let mut g = gy.clone();
    for li in (0..layers.len()).rev() {
        let layer = &layers[li];
        let (m, n) = (layer.in_dim(), layer.out_dim());
        // Nonlinearity sits after every layer but the last.
        if li + 1 < layers.len() {
            g = relu_backward(&cache.pre_activations[li], &g);
        }
        let x = &cache.layer_inputs[li];
        let batch = x.shape()[0];
        let xv = x.data();
        let gv = g.data();
        let w = layer.weight.data();
        let mut gw = vec![0.0f64; n * m];
        let mut gb = vec![0.0f64; n];
        let mut gx = vec![0.0f64; batch * m];
        for b in 0..batch {
            let xr = &xv[b * m..(b + 1) * m];
            let gr = &gv[b * n..(b + 1) * n];
            let gxr = &mut gx[b * m..(b + 1) * m];
            for o in 0..n {
                let go = gr[o];
                gb[o] += go;
                let wr = &w[o * m..(o + 1) * m];
                let gwr = &mut gw[o * m..(o + 1) * m];
                for i in 0..m {
                    gwr[i] += go * xr[i];
                    gxr[i] += go * wr[i];
                }
            }
        }
        grads.push((
            Tensor::from_vec(&[n, m], gw).expect("weight shape"),
            Tensor::from_vec(&[n], gb).expect("bias shape"),
        ));
        g = Tensor::from_vec(&[batch, m], gx).expect("input shape");
    }
    grads.reverse();
    (g, grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    // Independent oracle: quadruple loop over (b, c, j, k).
    fn conv1d_naive(input: &Tensor, kernel: &Tensor) -> Tensor {
        let (b, c, l) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let k = kernel.shape()[2];
        let out_len = l - k + 1;
        let mut out = Tensor::zeros(&[b, c, out_len]);
        for bi in 0..b {
            for ci in 0..c {
                for j in 0..out_len {
                    let mut s = 0.0;
                    for t in 0..k {
                        s += input.at(&[bi, ci, j + t]) * kernel.at(&[bi, ci, t]);
                    }
                    out.set(&[bi, ci, j], s);
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_identity_kernel() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 1], vec![1.0]).unwrap();
        let y = conv1d_depthwise(&x, &k).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn conv1d_summation_kernel() {
        let x = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let k = Tensor::from_vec(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let y = conv1d_depthwise(&x, &k).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn conv1d_matches_naive_oracle() {
        let mut rng = SplitMix64::new(11);
        let x = rng.uniform_tensor(&[2, 3, 9], -2.0, 2.0);
        let k = rng.uniform_tensor(&[2, 3, 5], -2.0, 2.0);
        let y = conv1d_depthwise(&x, &k).unwrap();
        let oracle = conv1d_naive(&x, &k);
        assert!(y.max_abs_diff(&oracle) < 1e-12);
    }

    #[test]
    fn conv1d_shape_errors() {
        let x = Tensor::zeros(&[1, 2, 4]);
        assert!(conv1d_depthwise(&x, &Tensor::zeros(&[1, 3, 2])).is_err());
        assert!(conv1d_depthwise(&x, &Tensor::zeros(&[1, 2, 5])).is_err());
    }

    #[test]
    fn conv1d_linear_in_input() {
        let mut rng = SplitMix64::new(5);
        let x = rng.uniform_tensor(&[1, 2, 7], -1.0, 1.0);
        let k = rng.uniform_tensor(&[1, 2, 3], -1.0, 1.0);
        let a = 3.25;
        let lhs = conv1d_depthwise(&x.scale(a), &k).unwrap();
        let rhs = conv1d_depthwise(&x, &k).unwrap().scale(a);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let y = softmax(&Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap(), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax(&Tensor::from_vec(&[2], vec![1000.0, 1000.0]).unwrap(), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        assert!(y.all_finite());
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = SplitMix64::new(2);
        let x = rng.uniform_tensor(&[16], -30.0, 30.0);
        let y = softmax(&x, 0).unwrap();
        assert_close(y.sum(), 1.0, 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::from_vec(&[2], vec![f64::NAN, 0.0]).unwrap();
        assert!(matches!(
            softmax(&x, 0),
            Err(crate::error::Error::Numeric(_))
        ));
    }

    #[test]
    fn avgpool_constant_and_pairs() {
        let c = Tensor::filled(&[2, 3, 4], 7.5);
        let y = avgpool_axis(&c, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.5));

        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = avgpool_axis(&x, 3).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 1]);
        assert_eq!(y.data(), &[1.5, 3.5]);
    }

    #[test]
    fn avgpool_matches_naive_mean() {
        let mut rng = SplitMix64::new(9);
        let x = rng.uniform_tensor(&[2, 4, 8, 8], -5.0, 5.0);
        let y = avgpool_axis(&x, 1).unwrap();
        for b in 0..2 {
            for h in 0..8 {
                for w in 0..8 {
                    let mean: f64 = (0..4).map(|c| x.at(&[b, c, h, w])).sum::<f64>() / 4.0;
                    assert_close(y.at(&[b, 0, h, w]), mean, 1e-12);
                }
            }
        }
    }

    #[test]
    fn mlp_zero_weights_zero_output() {
        let layers = vec![
            MlpLayer {
                weight: Tensor::zeros(&[3, 2]),
                bias: Tensor::zeros(&[3]),
            },
            MlpLayer {
                weight: Tensor::zeros(&[2, 3]),
                bias: Tensor::zeros(&[2]),
            },
        ];
        let y = mlp_forward(
            &Tensor::from_vec(&[1, 2], vec![4.0, -3.0]).unwrap(),
            &layers,
        )
        .unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_identity_layers_apply_positive_part() {
        let eye = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let layers = vec![
            MlpLayer {
                weight: eye.clone(),
                bias: Tensor::zeros(&[2]),
            },
            MlpLayer {
                weight: eye,
                bias: Tensor::zeros(&[2]),
            },
        ];
        let y = mlp_forward(
            &Tensor::from_vec(&[1, 2], vec![1.0, -1.0]).unwrap(),
            &layers,
        )
        .unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);
    }

    #[test]
    fn mlp_matches_matrix_oracle() {
        let mut rng = SplitMix64::new(21);
        let layers = vec![
            MlpLayer {
                weight: rng.uniform_tensor(&[5, 4], -1.0, 1.0),
                bias: rng.uniform_tensor(&[5], -1.0, 1.0),
            },
            MlpLayer {
                weight: rng.uniform_tensor(&[3, 5], -1.0, 1.0),
                bias: rng.uniform_tensor(&[3], -1.0, 1.0),
            },
        ];
        let x = rng.uniform_tensor(&[2, 4], -1.0, 1.0);
        let y = mlp_forward(&x, &layers).unwrap();

        // Hand-rolled matrix-multiply oracle.
        for b in 0..2 {
            let mut h = vec![0.0f64; 5];
            for (o, ho) in h.iter_mut().enumerate() {
                let mut s = layers[0].bias.at(&[o]);
                for i in 0..4 {
                    s += layers[0].weight.at(&[o, i]) * x.at(&[b, i]);
                }
                *ho = s.max(0.0);
            }
            for o in 0..3 {
                let mut s = layers[1].bias.at(&[o]);
                for (i, hi) in h.iter().enumerate() {
                    s += layers[1].weight.at(&[o, i]) * hi;
                }
                assert_close(y.at(&[b, o]), s, 1e-12);
            }
        }
    }

    #[test]
    fn mlp_dimension_mismatch() {
        let layers = vec![MlpLayer {
            weight: Tensor::zeros(&[3, 2]),
            bias: Tensor::zeros(&[3]),
        }];
        assert!(mlp_forward(&Tensor::zeros(&[1, 5]), &layers).is_err());
    }
}
