//! Independent brute-force reference implementations.
//!
//! Everything here recomputes results from first principles with the
//! plainest possible loops, deliberately sharing no code with the
//! optimized paths it checks. Used by unit tests, the acceptance suite
//! and the `oracle-suite` command.

use crate::geometry::{project_point, CameraRig, PointCloud};
use crate::grid::GridSpec;
use crate::metrics::OccupancyGrid;
use crate::tensor::Tensor;
use crate::view::Frustum;

/// Quadruple-loop valid correlation, the reference for conv1d_depthwise.
pub fn naive_conv1d(input: &Tensor, kernel: &Tensor) -> Tensor {
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

/// Per-voxel scatter-add scan: for every voxel, walk all frustum points in
/// original order and accumulate the score-weighted features of the points
/// whose floor-indexed voxel matches. Matches the fixed summation order of
/// the segment splat exactly.
pub fn naive_splat(feat: &Tensor, score: &Tensor, frustum: &Frustum, grid: &GridSpec) -> Tensor {
    let (n, c, h, w) = (
        feat.shape()[0],
        feat.shape()[1],
        feat.shape()[2],
        feat.shape()[3],
    );
    let bins = score.shape()[1];
    let [gx, gy, gz] = grid.counts;
    let mut out = Tensor::zeros(&[c, gz, gy, gx]);
    let size = grid.voxel_size();
    // Voxel assignment recomputed from scratch with floor arithmetic.
    let voxel_of = |p: [f64; 3]| -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - grid.bounds[a]) / size[a];
            if f < 0.0 || f >= grid.counts[a] as f64 {
                return None;
            }
            idx[a] = f.floor() as usize;
        }
        Some(idx)
    };
    for vz in 0..gz {
        for vy in 0..gy {
            for vx in 0..gx {
                for (pi, point) in frustum.points.iter().enumerate() {
                    if !frustum.valid[pi] {
                        continue;
                    }
                    match voxel_of(*point) {
                        Some([px, py, pz]) if (px, py, pz) == (vx, vy, vz) => {}
                        _ => continue,
                    }
                    let per_cam = bins * h * w;
                    let ni = pi / per_cam;
                    let rem = pi % per_cam;
                    let bi = rem / (h * w);
                    let (hi, wi) = ((rem % (h * w)) / w, rem % w);
                    let s = score.at(&[ni, bi, hi, wi]);
                    for ci in 0..c {
                        let cur = out.at(&[ci, vz, vy, vx]);
                        out.set(&[ci, vz, vy, vx], cur + s * feat.at(&[ni, ci, hi, wi]));
                    }
                }
            }
        }
    }
    let _ = n;
    out
}

/// O(L^2) circular cross-correlation along one spatial axis.
pub fn circular_conv(input: &Tensor, kernel: &Tensor, axis: usize) -> Tensor {
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

/// Per-pixel min-depth scan: for every pixel, walk the whole cloud and
/// keep the smallest projected depth (ties keep the smaller height).
/// Returns (depth map, height map, validity) flattened row-major.
pub fn naive_min_depth_scan(
    rig: &CameraRig,
    cloud: &PointCloud,
) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
    let (h, w) = rig.image_size;
    let mut depth = vec![0.0; h * w];
    let mut height = vec![0.0; h * w];
    let mut valid = vec![false; h * w];
    for vi in 0..h {
        for ui in 0..w {
            let mut best: Option<(f64, f64)> = None;
            for p in cloud.ego_points() {
                let (u, v, d) = match project_point(rig, p) {
                    Ok(t) => t,
                    Err(_) => continue,
                };
                if u.floor() != ui as f64 || v.floor() != vi as f64 {
                    continue;
                }
                if u < 0.0 || v < 0.0 {
                    continue;
                }
                let cand = (d, p[2]);
                best = match best {
                    None => Some(cand),
                    Some(cur) => {
                        if cand.0 < cur.0 || (cand.0 == cur.0 && cand.1 < cur.1) {
                            Some(cand)
                        } else {
                            Some(cur)
                        }
                    }
                };
            }
            if let Some((d, z)) = best {
                depth[vi * w + ui] = d;
                height[vi * w + ui] = z;
                valid[vi * w + ui] = true;
            }
        }
    }
    (depth, height, valid)
}

/// Full confusion matrix by triple loop; returns per-class (tp, fp, fn).
pub fn confusion_counts(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    use_mask: bool,
) -> Vec<(u64, u64, u64)> {
    let classes = gt.classes;
    let mut counts = vec![(0u64, 0u64, 0u64); classes];
    let [nx, ny, nz] = gt.grid.counts;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = (z * ny + y) * nx + x;
                if use_mask {
                    if let Some(m) = &gt.mask {
                        if !m[i] {
                            continue;
                        }
                    }
                }
                let (p, g) = (pred.labels[i] as usize, gt.labels[i] as usize);
                if p == g {
                    counts[p].0 += 1;
                } else {
                    counts[p].1 += 1;
                    counts[g].2 += 1;
                }
            }
        }
    }
    counts
}

/// mIoU from [`confusion_counts`] with the same exclusion rules as the
/// metrics module: empty and excluded classes out of the mean, zero-union
/// classes skipped.
pub fn naive_miou(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    use_mask: bool,
    empty_class: Option<u8>,
    excluded: &[u8],
) -> f64 {
    let counts = confusion_counts(pred, gt, use_mask);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (c, &(tp, fp, fnn)) in counts.iter().enumerate() {
        if empty_class == Some(c as u8) || excluded.contains(&(c as u8)) {
            continue;
        }
        let union = tp + fp + fnn;
        if union > 0 {
            sum += tp as f64 / union as f64;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Naive separable bilinear interpolation at one output pixel.
pub fn naive_bilinear_at(
    input: &Tensor,
    b: usize,
    c: usize,
    oy: usize,
    ox: usize,
    out_h: usize,
    out_w: usize,
) -> f64 {
    let (h, w) = (input.shape()[2], input.shape()[3]);
    let sy = ((oy as f64 + 0.5) * h as f64 / out_h as f64 - 0.5).clamp(0.0, (h - 1) as f64);
    let sx = ((ox as f64 + 0.5) * w as f64 / out_w as f64 - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
    let top = input.at(&[b, c, y0, x0]) * (1.0 - fx) + input.at(&[b, c, y0, x1]) * fx;
    let bot = input.at(&[b, c, y1, x0]) * (1.0 - fx) + input.at(&[b, c, y1, x1]) * fx;
    top * (1.0 - fy) + bot * fy
}
