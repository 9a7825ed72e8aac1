//! Directional attention: dynamic depthwise convolution along one spatial
//! axis of a `[B, C, H, W]` map.
//!
//! The kernel of length `L` (the attended-axis extent) is generated per
//! sample and channel by a shared two-layer MLP from the direction-pooled
//! map. The input is concatenated with its first `L-1` rows along the
//! attended axis (a circular unrolling to extent `2L-1`), the learnable
//! position encoding is tiled circularly onto that buffer, and a valid
//! depthwise correlation restores the original extent. Kernel tap `k`
//! multiplies offset `+k` along the concatenated axis.
//!
//! With the position encoding at zero the operator is exactly a circular
//! cross-correlation along the attended axis.

use crate::error::{dim_err, Result};
use crate::ops::{
    avgpool_axis, avgpool_axis_backward, mlp_backward, mlp_forward_cached, MlpCache, MlpLayer,
};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Attend along axis 2 (the first spatial axis).
    Horizontal,
    /// Attend along axis 3 (the second spatial axis).
    Vertical,
}

impl Direction {
    pub fn attended_axis(self) -> usize {
        match self {
            Direction::Horizontal => 2,
            Direction::Vertical => 3,
        }
    }

    pub fn pooled_axis(self) -> usize {
        match self {
            Direction::Horizontal => 3,
            Direction::Vertical => 2,
        }
    }
}

/// Parameters of one directional attention operator: the kernel-generating
/// MLP and the learnable position encoding (shape `[L, 1]` for horizontal,
/// `[1, L]` for vertical).
#[derive(Clone, Debug)]
pub struct DAParams {
    pub direction: Direction,
    pub mlp: Vec<MlpLayer>,
    pub pos: Tensor,
}

impl DAParams {
    /// Fresh parameters for an attended axis of length `axis_len`. The last
    /// MLP bias starts at `1/L` so the initial kernel averages along the
    /// axis; the position encoding starts at zero.
    pub fn init(
        direction: Direction,
        axis_len: usize,
        hidden: usize,
        rng: &mut SplitMix64,
    ) -> DAParams {
        let l = axis_len;
        let s1 = 1.0 / (l as f64).sqrt();
        let s2 = 1.0 / (hidden as f64).sqrt();
        let mlp = vec![
            MlpLayer {
                weight: rng.uniform_tensor(&[hidden, l], -s1, s1),
                bias: Tensor::zeros(&[hidden]),
            },
            MlpLayer {
                weight: rng.uniform_tensor(&[l, hidden], -s2, s2),
                bias: Tensor::filled(&[l], 1.0 / l as f64),
            },
        ];
        let pos = match direction {
            Direction::Horizontal => Tensor::zeros(&[l, 1]),
            Direction::Vertical => Tensor::zeros(&[1, l]),
        };
        DAParams {
            direction,
            mlp,
            pos,
        }
    }

    pub fn axis_len(&self) -> usize {
        self.mlp.last().expect("mlp has layers").out_dim()
    }

    fn validate_for(&self, shape: &[usize]) -> Result<usize> {
        if shape.len() != 4 {
            return Err(dim_err!(
                "directional attention wants [B,C,H,W], got {shape:?}"
            ));
        }
        let axis = self.direction.attended_axis();
        let l = shape[axis];
        if self.axis_len() != l {
            return Err(dim_err!(
                "dynamic kernel length {} does not match attended extent {l}",
                self.axis_len()
            ));
        }
        let want_pos: &[usize] = match self.direction {
            Direction::Horizontal => &[l, 1],
            Direction::Vertical => &[1, l],
        };
        if self.pos.shape() != want_pos {
            return Err(dim_err!(
                "position encoding shape {:?} does not match direction (want {want_pos:?})",
                self.pos.shape()
            ));
        }
        Ok(axis)
    }
}

/// Access pattern of one spatial axis of a contiguous `[B, C, H, W]` buffer.
struct AxisView {
    bc: usize,
    len: usize,      // attended extent L
    other: usize,    // extent of the non-attended spatial axis
    stride_a: usize, // element stride along the attended axis
    stride_o: usize, // element stride along the other axis
}

fn axis_view(shape: &[usize], axis: usize) -> AxisView {
    let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    match axis {
        2 => AxisView {
            bc: b * c,
            len: h,
            other: w,
            stride_a: w,
            stride_o: 1,
        },
        3 => AxisView {
            bc: b * c,
            len: w,
            other: h,
            stride_a: 1,
            stride_o: w,
        },
        _ => panic!("attended axis must be 2 or 3"),
    }
}

/// The concat + position-encoding + valid-convolution core with an
/// explicitly supplied kernel `[B, C, L]`. `pos` must hold `L` values.
///
/// Step by step: `cat[.., m, ..] = input[.., m mod L, ..] + pos[m mod L]`
/// for `m` in `0..2L-1`, then `out[.., j, ..] = sum_k kernel[b,c,k] *
/// cat[.., j+k, ..]`, which realizes circular wrap-around.
pub fn da_apply(input: &Tensor, kernel: &Tensor, pos: &Tensor, axis: usize) -> Result<Tensor> {
    let view = axis_view(input.shape(), axis);
    let l = view.len;
    if kernel.shape() != [input.shape()[0], input.shape()[1], l] {
        return Err(dim_err!(
            "kernel shape {:?} does not match input {:?} along axis {axis}",
            kernel.shape(),
            input.shape()
        ));
    }
    if pos.len() != l {
        return Err(dim_err!(
            "position encoding holds {} values, want {l}",
            pos.len()
        ));
    }
    let x = input.data();
    let k = kernel.data();
    let pv = pos.data();
    let plane = view.len * view.other;
    let cat_len = 2 * l - 1;
    // Concatenated buffer stored other-major so each output value is a
    // contiguous dot product with the kernel row.
    let mut cat = vec![0.0f64; view.other * cat_len];
    let mut out = vec![0.0f64; x.len()];
    for bc in 0..view.bc {
        let base = bc * plane;
        for o in 0..view.other {
            let row = &mut cat[o * cat_len..(o + 1) * cat_len];
            for (m, slot) in row.iter_mut().enumerate() {
                let src = if m < l { m } else { m - l };
                *slot = x[base + src * view.stride_a + o * view.stride_o] + pv[src];
            }
        }
        let kr = &k[bc * l..(bc + 1) * l];
        for o in 0..view.other {
            let row = &cat[o * cat_len..(o + 1) * cat_len];
            for j in 0..l {
                let window = &row[j..j + l];
                let mut s = 0.0;
                for (kt, cv) in kr.iter().zip(window) {
                    s += kt * cv;
                }
                out[base + j * view.stride_a + o * view.stride_o] = s;
            }
        }
    }
    Tensor::from_vec(input.shape(), out)
}

/// Backward of [`da_apply`] w.r.t. input, kernel and position encoding.
/// The returned position gradient is flat (`[L]`).
pub fn da_apply_backward(
    input: &Tensor,
    kernel: &Tensor,
    pos: &Tensor,
    axis: usize,
    gy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let view = axis_view(input.shape(), axis);
    let l = view.len;
    let x = input.data();
    let k = kernel.data();
    let pv = pos.data();
    let g = gy.data();
    let plane = view.len * view.other;
    let cat_len = 2 * l - 1;
    let mut cat = vec![0.0f64; view.other * cat_len];
    let mut gcat = vec![0.0f64; view.other * cat_len];
    let mut gx = vec![0.0f64; x.len()];
    let mut gk = vec![0.0f64; k.len()];
    let mut gpos = vec![0.0f64; l];
    for bc in 0..view.bc {
        let base = bc * plane;
        for o in 0..view.other {
            let row = &mut cat[o * cat_len..(o + 1) * cat_len];
            for (m, slot) in row.iter_mut().enumerate() {
                let src = if m < l { m } else { m - l };
                *slot = x[base + src * view.stride_a + o * view.stride_o] + pv[src];
            }
        }
        gcat.iter_mut().for_each(|v| *v = 0.0);
        let kr = &k[bc * l..(bc + 1) * l];
        let gkr = &mut gk[bc * l..(bc + 1) * l];
        for o in 0..view.other {
            let row = &cat[o * cat_len..(o + 1) * cat_len];
            let grow = &mut gcat[o * cat_len..(o + 1) * cat_len];
            for j in 0..l {
                let go = g[base + j * view.stride_a + o * view.stride_o];
                if go == 0.0 {
                    continue;
                }
                let window = &row[j..j + l];
                let gwindow = &mut grow[j..j + l];
                for t in 0..l {
                    gkr[t] += go * window[t];
                    gwindow[t] += go * kr[t];
                }
            }
        }
        // Fold the concatenated cotangent back through the circular unroll.
        for o in 0..view.other {
            let grow = &gcat[o * cat_len..(o + 1) * cat_len];
            for (m, &gc) in grow.iter().enumerate() {
                let src = if m < l { m } else { m - l };
                gx[base + src * view.stride_a + o * view.stride_o] += gc;
                gpos[src] += gc;
            }
        }
    }
    Ok((
        Tensor::from_vec(input.shape(), gx)?,
        Tensor::from_vec(kernel.shape(), gk)?,
        Tensor::from_vec(&[l], gpos)?,
    ))
}

pub struct DaCache {
    pub kernel: Tensor,
    mlp_cache: MlpCache,
    axis: usize,
}

pub struct DaGrads {
    pub input: Tensor,
    pub mlp: Vec<(Tensor, Tensor)>,
    pub pos: Tensor,
}

/// The full dynamic operator: pool along the non-attended axis, generate a
/// per-sample per-channel kernel with the MLP, then [`da_apply`]. Output
/// shape equals input shape.
pub fn da_forward(input: &Tensor, params: &DAParams) -> Result<Tensor> {
    da_forward_cached(input, params).map(|(y, _)| y)
}

pub fn da_forward_cached(input: &Tensor, params: &DAParams) -> Result<(Tensor, DaCache)> {
    let axis = params.validate_for(input.shape())?;
    let (b, c) = (input.shape()[0], input.shape()[1]);
    let l = input.shape()[axis];
    let pooled = avgpool_axis(input, params.direction.pooled_axis())?;
    let rows = pooled.into_reshape(&[b * c, l])?;
    let (kernel_rows, mlp_cache) = mlp_forward_cached(&rows, &params.mlp)?;
    let kernel = kernel_rows.into_reshape(&[b, c, l])?;
    let out = da_apply(input, &kernel, &params.pos, axis)?;
    Ok((
        out,
        DaCache {
            kernel,
            mlp_cache,
            axis,
        },
    ))
}

pub fn da_backward(
    input: &Tensor,
    params: &DAParams,
    cache: &DaCache,
    gy: &Tensor,
) -> Result<DaGrads> {
    let (b, c) = (input.shape()[0], input.shape()[1]);
    let l = input.shape()[cache.axis];
    let (gx_conv, gk, gpos) = da_apply_backward(input, &cache.kernel, &params.pos, cache.axis, gy)?;
    let gk_rows = gk.into_reshape(&[b * c, l])?;
    let (g_rows, mlp_grads) = mlp_backward(&params.mlp, &cache.mlp_cache, &gk_rows);
    let mut pooled_shape = input.shape().to_vec();
    pooled_shape[params.direction.pooled_axis()] = 1;
    let g_pooled = g_rows.into_reshape(&pooled_shape)?;
    let gx_pool = avgpool_axis_backward(&g_pooled, input.shape(), params.direction.pooled_axis());
    let mut gx = gx_conv;
    gx.add_assign(&gx_pool)?;
    Ok(DaGrads {
        input: gx,
        mlp: mlp_grads,
        pos: gpos.into_reshape(params.pos.shape())?,
    })
}

// ── Directional BEV attention ──────────────────────────────────────

pub struct DbaCache {
    pub h: DaCache,
    pub v: DaCache,
}

/// `DA(F, dir=h) + DA(F, dir=v)` over a BEV map; shape preserved.
pub fn dba_forward(f_bev: &Tensor, params_h: &DAParams, params_v: &DAParams) -> Result<Tensor> {
    dba_forward_cached(f_bev, params_h, params_v).map(|(y, _)| y)
}

pub fn dba_forward_cached(
    f_bev: &Tensor,
    params_h: &DAParams,
    params_v: &DAParams,
) -> Result<(Tensor, DbaCache)> {
    if params_h.direction != Direction::Horizontal || params_v.direction != Direction::Vertical {
        return Err(dim_err!(
            "dba wants one horizontal and one vertical parameter set"
        ));
    }
    let (yh, ch) = da_forward_cached(f_bev, params_h)?;
    let (yv, cv) = da_forward_cached(f_bev, params_v)?;
    let out = yh.add(&yv)?;
    Ok((out, DbaCache { h: ch, v: cv }))
}

pub fn dba_backward(
    f_bev: &Tensor,
    params_h: &DAParams,
    params_v: &DAParams,
    cache: &DbaCache,
    gy: &Tensor,
) -> Result<(DaGrads, DaGrads)> {
    let gh = da_backward(f_bev, params_h, &cache.h, gy)?;
    let gv = da_backward(f_bev, params_v, &cache.v, gy)?;
    Ok((gh, gv))
}

// ── Directional height attention ───────────────────────────────────

/// Repack `[B, C, Z, Y, X]` as `[B, C*Z, Y, X]`; output channel `c*Z + z`
/// holds input channel `c` at height `z`. Row-major storage makes this a
/// pure reshape.
pub fn pack_height_channels(f_h3d: &Tensor) -> Result<Tensor> {
    let s = f_h3d.shape();
    if s.len() != 5 {
        return Err(dim_err!(
            "pack_height_channels wants [B,C,Z,Y,X], got {s:?}"
        ));
    }
    f_h3d.reshape(&[s[0], s[1] * s[2], s[3], s[4]])
}

/// Inverse of [`pack_height_channels`].
pub fn unpack_height_channels(f: &Tensor, channels: usize, z: usize) -> Result<Tensor> {
    let s = f.shape();
    if s.len() != 4 || s[1] != channels * z {
        return Err(dim_err!(
            "cannot unpack {s:?} into {channels} channels times {z} heights"
        ));
    }
    f.reshape(&[s[0], channels, z, s[2], s[3]])
}

pub struct DhaCache {
    pub da: DaCache,
}

/// Directional height attention over the sliced map `[B, C, Z, Y*X]`:
/// attends along the Z axis, reshapes to the height volume and packs the Z
/// slices into channels. Output is `[B, C*Z, Y, X]`.
pub fn dha_forward(f_height: &Tensor, params: &DAParams, y: usize, x: usize) -> Result<Tensor> {
    dha_forward_cached(f_height, params, y, x).map(|(t, _)| t)
}

pub fn dha_forward_cached(
    f_height: &Tensor,
    params: &DAParams,
    y: usize,
    x: usize,
) -> Result<(Tensor, DhaCache)> {
    let s = f_height.shape();
    if s.len() != 4 {
        return Err(dim_err!("dha wants [B,C,Z,Y*X], got {s:?}"));
    }
    if s[3] != y * x {
        return Err(dim_err!(
            "last extent {} does not factor into Y={y} times X={x}",
            s[3]
        ));
    }
    if params.direction != Direction::Horizontal {
        return Err(dim_err!(
            "dha attends along Z, which is the horizontal axis of the sliced map"
        ));
    }
    let (refined, cache) = da_forward_cached(f_height, params)?;
    let f_h3d = crate::view::unslice_heightwise(&refined, y, x)?;
    let packed = pack_height_channels(&f_h3d)?;
    Ok((packed, DhaCache { da: cache }))
}

pub fn dha_backward(
    f_height: &Tensor,
    params: &DAParams,
    cache: &DhaCache,
    gy: &Tensor,
) -> Result<DaGrads> {
    // Both reshapes are storage-preserving, so the cotangent reshapes back.
    let g = gy.reshape(f_height.shape())?;
    da_backward(f_height, params, &cache.da, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::GradCheck;
    use crate::rng::SplitMix64;

    /// O(L^2) circular cross-correlation oracle with modular indexing.
    fn circular_oracle(input: &Tensor, kernel: &Tensor, axis: usize) -> Tensor {
        let s = input.shape();
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let l = s[axis];
        let mut out = Tensor::zeros(s);
        for bi in 0..b {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        let j = if axis == 2 { hi } else { wi };
                        let mut acc = 0.0;
                        for t in 0..l {
                            let m = (j + t) % l;
                            let idx = if axis == 2 {
                                [bi, ci, m, wi]
                            } else {
                                [bi, ci, hi, m]
                            };
                            acc += kernel.at(&[bi, ci, t]) * input.at(&idx);
                        }
                        out.set(&[bi, ci, hi, wi], acc);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn zero_input_zero_pos_gives_zero() {
        let mut rng = SplitMix64::new(1);
        let params = DAParams::init(Direction::Horizontal, 6, 4, &mut rng);
        let x = Tensor::zeros(&[2, 3, 6, 5]);
        let y = da_forward(&x, &params).unwrap();
        assert_eq!(y.data().iter().filter(|&&v| v != 0.0).count(), 0);
    }

    #[test]
    fn uniform_kernel_averages_constant() {
        let l = 8;
        let x = Tensor::filled(&[1, 2, l, 3], 4.25);
        let kernel = Tensor::filled(&[1, 2, l], 1.0 / l as f64);
        let pos = Tensor::zeros(&[l]);
        let y = da_apply(&x, &kernel, &pos, 2).unwrap();
        for &v in y.data() {
            assert!((v - 4.25).abs() < 1e-12);
        }
    }

    #[test]
    fn injected_kernel_matches_circular_oracle_both_axes() {
        let mut rng = SplitMix64::new(23);
        for &axis in &[2usize, 3] {
            let x = rng.uniform_tensor(&[2, 3, 7, 9], -1.0, 1.0);
            let l = x.shape()[axis];
            let kernel = rng.uniform_tensor(&[2, 3, l], -1.0, 1.0);
            let pos = Tensor::zeros(&[l]);
            let y = da_apply(&x, &kernel, &pos, axis).unwrap();
            let oracle = circular_oracle(&x, &kernel, axis);
            assert!(y.max_abs_diff(&oracle) < 1e-12);
        }
    }

    #[test]
    fn homogeneous_with_fixed_kernel() {
        let mut rng = SplitMix64::new(29);
        let x = rng.uniform_tensor(&[1, 2, 5, 4], -1.0, 1.0);
        let kernel = rng.uniform_tensor(&[1, 2, 5], -1.0, 1.0);
        let pos = Tensor::zeros(&[5]);
        let a = -2.5;
        let lhs = da_apply(&x.scale(a), &kernel, &pos, 2).unwrap();
        let rhs = da_apply(&x, &kernel, &pos, 2).unwrap().scale(a);
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn circular_shift_equivariance_bitwise() {
        let mut rng = SplitMix64::new(31);
        let l = 8;
        let x = rng.uniform_tensor(&[1, 1, l, 3], -1.0, 1.0);
        let kernel = rng.uniform_tensor(&[1, 1, l], -1.0, 1.0);
        let pos = Tensor::zeros(&[l]);
        let y = da_apply(&x, &kernel, &pos, 2).unwrap();
        let shift = 3usize;
        let mut xs = Tensor::zeros(x.shape());
        for h in 0..l {
            for w in 0..3 {
                xs.set(&[0, 0, (h + shift) % l, w], x.at(&[0, 0, h, w]));
            }
        }
        let ys = da_apply(&xs, &kernel, &pos, 2).unwrap();
        for h in 0..l {
            for w in 0..3 {
                // Bit-pattern equality, not approximate.
                assert_eq!(
                    ys.at(&[0, 0, (h + shift) % l, w]).to_bits(),
                    y.at(&[0, 0, h, w]).to_bits()
                );
            }
        }
    }

    #[test]
    fn degenerate_axis_length_one() {
        let mut rng = SplitMix64::new(37);
        let params = DAParams::init(Direction::Vertical, 1, 2, &mut rng);
        let x = rng.uniform_tensor(&[1, 2, 3, 1], -1.0, 1.0);
        let y = da_forward(&x, &params).unwrap();
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn mismatched_pos_is_dimension_error() {
        let mut rng = SplitMix64::new(41);
        let mut params = DAParams::init(Direction::Horizontal, 4, 2, &mut rng);
        params.pos = Tensor::zeros(&[1, 4]); // wrong orientation for dir=h
        let x = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(da_forward(&x, &params).is_err());
    }

    #[test]
    fn da_shape_preserved() {
        let mut rng = SplitMix64::new(43);
        for &(hdim, wdim, dir) in &[
            (5usize, 7usize, Direction::Horizontal),
            (5, 7, Direction::Vertical),
            (1, 7, Direction::Horizontal),
        ] {
            let l = match dir {
                Direction::Horizontal => hdim,
                Direction::Vertical => wdim,
            };
            let params = DAParams::init(dir, l, 3, &mut rng);
            let x = rng.uniform_tensor(&[2, 3, hdim, wdim], -1.0, 1.0);
            let y = da_forward(&x, &params).unwrap();
            assert_eq!(y.shape(), x.shape());
        }
    }

    #[test]
    fn dba_is_sum_of_directions() {
        let mut rng = SplitMix64::new(47);
        let ph = DAParams::init(Direction::Horizontal, 6, 4, &mut rng);
        let pv = DAParams::init(Direction::Vertical, 5, 4, &mut rng);
        let x = rng.uniform_tensor(&[1, 2, 6, 5], -1.0, 1.0);
        let y = dba_forward(&x, &ph, &pv).unwrap();
        let want = da_forward(&x, &ph)
            .unwrap()
            .add(&da_forward(&x, &pv).unwrap())
            .unwrap();
        assert_eq!(y.data(), want.data());
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn dba_full_scale_bev_shape() {
        let mut rng = SplitMix64::new(97);
        let ph = DAParams::init(Direction::Horizontal, 200, 4, &mut rng);
        let pv = DAParams::init(Direction::Vertical, 200, 4, &mut rng);
        let x = rng.uniform_tensor(&[1, 4, 200, 200], -1.0, 1.0);
        let y = dba_forward(&x, &ph, &pv).unwrap();
        assert_eq!(y.shape(), &[1, 4, 200, 200]);
    }

    #[test]
    fn dha_paper_shape_and_impulse_layout() {
        let (c, z, y, x) = (8usize, 16usize, 32usize, 32usize);
        let mut rng = SplitMix64::new(53);
        let mut params = DAParams::init(Direction::Horizontal, z, 4, &mut rng);
        // Identity kernel: zero the MLP and put the unit impulse in the final
        // bias, so the packing layout can be observed directly.
        for layer in &mut params.mlp {
            layer.weight = Tensor::zeros(layer.weight.shape());
            layer.bias = Tensor::zeros(layer.bias.shape());
        }
        let mut b2 = vec![0.0; z];
        b2[0] = 1.0;
        params.mlp[1].bias = Tensor::from_vec(&[z], b2).unwrap();

        let mut f = Tensor::zeros(&[1, c, z, y * x]);
        f.set(&[0, 2, 5, 17], 1.0); // impulse at channel 2, height 5
        let out = dha_forward(&f, &params, y, x).unwrap();
        assert_eq!(out.shape(), &[1, c * z, y, x]);
        // Expected output channel: c*Z + z = 2*16 + 5 = 37.
        assert_eq!(out.at(&[0, 37, 0, 17]), 1.0);
        let nonzero = out.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn dha_zero_input_zero_output() {
        let mut rng = SplitMix64::new(59);
        let params = DAParams::init(Direction::Horizontal, 4, 2, &mut rng);
        let f = Tensor::zeros(&[1, 3, 4, 6]);
        let out = dha_forward(&f, &params, 2, 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dha_unpack_recovers_volume() {
        let mut rng = SplitMix64::new(61);
        let f_h3d = rng.uniform_tensor(&[2, 3, 4, 5, 6], -1.0, 1.0);
        let packed = pack_height_channels(&f_h3d).unwrap();
        let back = unpack_height_channels(&packed, 3, 4).unwrap();
        assert_eq!(back.data(), f_h3d.data());
        assert_eq!(back.shape(), f_h3d.shape());
    }

    #[test]
    fn da_full_gradient_check() {
        let mut rng = SplitMix64::new(67);
        let params = DAParams::init(Direction::Horizontal, 4, 3, &mut rng);
        let x = rng.uniform_tensor(&[2, 2, 4, 3], -1.0, 1.0);
        // Pack (input, w1, b1, w2, b2, pos) as gradcheck inputs.
        let rebuild = |xs: &[Tensor]| DAParams {
            direction: Direction::Horizontal,
            mlp: vec![
                MlpLayer {
                    weight: xs[1].clone(),
                    bias: xs[2].clone(),
                },
                MlpLayer {
                    weight: xs[3].clone(),
                    bias: xs[4].clone(),
                },
            ],
            pos: xs[5].clone(),
        };
        let fwd = move |xs: &[Tensor]| da_forward(&xs[0], &rebuild(xs));
        let vjp = move |xs: &[Tensor], g: &Tensor| {
            let p = rebuild(xs);
            let (_, cache) = da_forward_cached(&xs[0], &p)?;
            let grads = da_backward(&xs[0], &p, &cache, g)?;
            Ok(vec![
                grads.input,
                grads.mlp[0].0.clone(),
                grads.mlp[0].1.clone(),
                grads.mlp[1].0.clone(),
                grads.mlp[1].1.clone(),
                grads.pos,
            ])
        };
        let inputs = vec![
            x,
            params.mlp[0].weight.clone(),
            params.mlp[0].bias.clone(),
            params.mlp[1].weight.clone(),
            params.mlp[1].bias.clone(),
            rng.uniform_tensor(&[4, 1], -0.5, 0.5),
        ];
        GradCheck {
            forward: &fwd,
            vjp: &vjp,
            eps: 1e-5,
            tolerance: 1e-4,
        }
        .run("da_forward", &inputs)
        .unwrap();
    }
}
