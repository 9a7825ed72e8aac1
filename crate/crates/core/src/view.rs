//! Lift-splat view transformation.
//!
//! A frustum is one 3D sample point per (camera, bin, feature pixel).
//! Depth mode samples along the pixel ray at depth-bin centers; height mode
//! intersects the pixel ray with horizontal planes at height-bin centers,
//! the geometric dual of depth sampling. [`compute_ranks`] assigns each
//! point its flattened voxel rank and groups points by rank so the splat
//! kernels can accumulate one voxel per segment in a fixed order.
//!
//! Frustum point order: for camera `n`, bin `b` and feature pixel `(h, w)`
//! the flat index is `n*(bins*H*W) + (b*H + h)*W + w`.

use crate::error::{dim_err, Result};
use crate::geometry::{mat3_mul_vec, mat3_transpose, CameraRig, Vec3};
use crate::grid::{BinSpec, GridSpec};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrustumMode {
    Depth,
    Height,
}

/// Frustum sample points in the ego frame. `valid == false` marks points
/// with no geometric meaning (ray parallel to the height plane, or the
/// plane behind the camera); they never splat.
#[derive(Clone, Debug)]
pub struct Frustum {
    pub points: Vec<Vec3>,
    pub valid: Vec<bool>,
    pub cameras: usize,
    pub bins: usize,
    pub feat_h: usize,
    pub feat_w: usize,
}

impl Frustum {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Concatenate per-camera frusta (camera-major point order).
    pub fn concat(parts: Vec<Frustum>) -> Result<Frustum> {
        let first = parts
            .first()
            .ok_or_else(|| dim_err!("cannot concatenate zero frusta"))?;
        let (bins, feat_h, feat_w) = (first.bins, first.feat_h, first.feat_w);
        let mut out = Frustum {
            points: Vec::new(),
            valid: Vec::new(),
            cameras: 0,
            bins,
            feat_h,
            feat_w,
        };
        for part in parts {
            if (part.bins, part.feat_h, part.feat_w) != (bins, feat_h, feat_w) {
                return Err(dim_err!("frustum parts disagree on bins/feature size"));
            }
            out.cameras += part.cameras;
            out.points.extend(part.points);
            out.valid.extend(part.valid);
        }
        Ok(out)
    }
}

/// Build the frustum for one camera. The feature map must divide the image
/// size evenly; feature pixel (h, w) uses image coordinates
/// `(h * stride_v, w * stride_u)`.
pub fn make_frustum(
    rig: &CameraRig,
    feat_size: (usize, usize),
    bins: &BinSpec,
    mode: FrustumMode,
) -> Result<Frustum> {
    let (feat_h, feat_w) = feat_size;
    let (img_h, img_w) = rig.image_size;
    if feat_h == 0 || feat_w == 0 || img_h % feat_h != 0 || img_w % feat_w != 0 {
        return Err(dim_err!(
            "feature size {feat_size:?} must divide image size {:?}",
            rig.image_size
        ));
    }
    let (stride_v, stride_u) = (img_h / feat_h, img_w / feat_w);
    let center = rig.center_ego();
    let rt = mat3_transpose(&rig.rotation);
    let k = &rig.intrinsics;
    let n = bins.count * feat_h * feat_w;
    let mut points = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for b in 0..bins.count {
        let bin_center = bins.center(b);
        for h in 0..feat_h {
            let v = (h * stride_v) as f64;
            for w in 0..feat_w {
                let u = (w * stride_u) as f64;
                // Ego-frame ray direction R^T K^{-1} [u, v, 1]^T; along it the
                // parameter equals camera depth.
                let y = (v - k[1][2]) / k[1][1];
                let x = (u - k[0][2] - k[0][1] * y) / k[0][0];
                let dir = mat3_mul_vec(&rt, [x, y, 1.0]);
                match mode {
                    FrustumMode::Depth => {
                        points.push([
                            center[0] + bin_center * dir[0],
                            center[1] + bin_center * dir[1],
                            center[2] + bin_center * dir[2],
                        ]);
                        valid.push(true);
                    }
                    FrustumMode::Height => {
                        // Ray/plane intersection at z = bin_center. The ray is a
                        // half-line: a parallel ray or an intersection behind the
                        // camera yields no sample.
                        if dir[2].abs() < 1e-9 {
                            points.push([0.0, 0.0, 0.0]);
                            valid.push(false);
                        } else {
                            let s = (bin_center - center[2]) / dir[2];
                            if s <= 1e-9 {
                                points.push([0.0, 0.0, 0.0]);
                                valid.push(false);
                            } else {
                                points.push([
                                    center[0] + s * dir[0],
                                    center[1] + s * dir[1],
                                    center[2] + s * dir[2],
                                ]);
                                valid.push(true);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Frustum {
        points,
        valid,
        cameras: 1,
        bins: bins.count,
        feat_h,
        feat_w,
    })
}

pub fn frustum_for_rigs(
    rigs: &[CameraRig],
    feat_size: (usize, usize),
    bins: &BinSpec,
    mode: FrustumMode,
) -> Result<Frustum> {
    let parts = rigs
        .iter()
        .map(|rig| make_frustum(rig, feat_size, bins, mode))
        .collect::<Result<Vec<_>>>()?;
    Frustum::concat(parts)
}

/// Marker for frustum points outside the grid (or invalid).
pub const OUT_OF_GRID: u32 = u32::MAX;

#[derive(Clone, Copy, Debug)]
pub struct Segment {
    pub rank: u32,
    pub start: u32,
    pub end: u32,
}

/// Precomputed frustum-point -> voxel-rank mapping.
///
/// `ranks[i]` is the flattened `(z*Y + y)*X + x` voxel rank of point `i` or
/// [`OUT_OF_GRID`]. `order` lists in-grid points sorted by rank (original
/// order within a rank), and `segments` partitions `order` so that each
/// segment covers exactly the points of one voxel.
#[derive(Clone, Debug)]
pub struct SplatIndex {
    pub cameras: usize,
    pub bins: usize,
    pub feat_h: usize,
    pub feat_w: usize,
    pub grid: GridSpec,
    pub ranks: Vec<u32>,
    pub order: Vec<u32>,
    pub segments: Vec<Segment>,
}

impl SplatIndex {
    pub fn n_points(&self) -> usize {
        self.ranks.len()
    }

    pub fn in_grid_count(&self) -> usize {
        self.order.len()
    }

    pub fn all_in_grid(&self) -> bool {
        self.order.len() == self.ranks.len()
    }
}

/// Assign voxel ranks, sort and record segment boundaries.
pub fn compute_ranks(frustum: &Frustum, grid: &GridSpec) -> SplatIndex {
    let mut ranks = Vec::with_capacity(frustum.len());
    for (p, &ok) in frustum.points.iter().zip(&frustum.valid) {
        let rank = if !ok {
            OUT_OF_GRID
        } else {
            match grid.voxel_of(*p) {
                Some(idx) => grid.rank_of(idx) as u32,
                None => OUT_OF_GRID,
            }
        };
        ranks.push(rank);
    }
    let mut order: Vec<u32> = (0..ranks.len() as u32)
        .filter(|&i| ranks[i as usize] != OUT_OF_GRID)
        .collect();
    order.sort_by_key(|&i| ranks[i as usize]); // stable: preserves point order in a rank
    let mut segments = Vec::new();
    let mut start = 0usize;
    while start < order.len() {
        let rank = ranks[order[start] as usize];
        let mut end = start + 1;
        while end < order.len() && ranks[order[end] as usize] == rank {
            end += 1;
        }
        segments.push(Segment {
            rank,
            start: start as u32,
            end: end as u32,
        });
        start = end;
    }
    SplatIndex {
        cameras: frustum.cameras,
        bins: frustum.bins,
        feat_h: frustum.feat_h,
        feat_w: frustum.feat_w,
        grid: grid.clone(),
        ranks,
        order,
        segments,
    }
}

fn check_splat_shapes(
    feat: &Tensor,
    score: &Tensor,
    index: &SplatIndex,
) -> Result<(usize, usize, usize, usize)> {
    let fs = feat.shape();
    let ss = score.shape();
    if fs.len() != 4 || ss.len() != 4 {
        return Err(dim_err!("splat wants [N,C,H,W] feat and [N,B,H,W] score"));
    }
    let (n, c, h, w) = (fs[0], fs[1], fs[2], fs[3]);
    if n != index.cameras || h != index.feat_h || w != index.feat_w {
        return Err(dim_err!(
            "feature shape {fs:?} does not match index built for {} cameras, {}x{} features",
            index.cameras,
            index.feat_h,
            index.feat_w
        ));
    }
    if ss != [n, index.bins, h, w] {
        return Err(dim_err!(
            "score shape {ss:?} does not match index ({} bins over {}x{}x{})",
            index.bins,
            n,
            h,
            w
        ));
    }
    Ok((n, c, h, w))
}

/// Decompose a frustum point index into (camera, bin, pixel offset).
#[inline]
fn point_coords(index: &SplatIndex, p: usize) -> (usize, usize, usize) {
    let plane = index.feat_h * index.feat_w;
    let per_cam = index.bins * plane;
    let n = p / per_cam;
    let rem = p % per_cam;
    (n, rem / plane, rem % plane)
}

/// Segment-sum splat into a BEV grid (`counts = [X, Y, 1]`): every in-grid
/// point adds `score * feature` into its voxel. Output is `[C, Y, X]`.
///
/// Accumulation order is fixed (sorted rank, then original point order), so
/// the result is bit-reproducible and matches the naive scatter oracle
/// exactly.
pub fn splat_bev(feat: &Tensor, score: &Tensor, index: &SplatIndex) -> Result<Tensor> {
    if index.grid.counts[2] != 1 {
        return Err(dim_err!(
            "splat_bev wants a single-layer grid, got counts {:?}",
            index.grid.counts
        ));
    }
    splat_volume(feat, score, index).map(|t| {
        let c = feat.shape()[1];
        let (x, y) = (index.grid.counts[0], index.grid.counts[1]);
        t.into_reshape(&[c, y, x]).expect("z extent is 1")
    })
}

/// Segment-sum splat into a 3D grid. Output is `[C, Z, Y, X]`.
pub fn splat_height(feat: &Tensor, score: &Tensor, index: &SplatIndex) -> Result<Tensor> {
    splat_volume(feat, score, index)
}

fn splat_volume(feat: &Tensor, score: &Tensor, index: &SplatIndex) -> Result<Tensor> {
    let (_, c, h, w) = check_splat_shapes(feat, score, index)?;
    let [gx, gy, gz] = index.grid.counts;
    let plane = h * w;
    let voxels = gx * gy * gz;
    let mut out = vec![0.0f64; c * voxels];
    let fv = feat.data();
    let sv = score.data();
    for seg in &index.segments {
        let voxel = seg.rank as usize;
        for &pi in &index.order[seg.start as usize..seg.end as usize] {
            let (n, b, pix) = point_coords(index, pi as usize);
            let s = sv[((n * index.bins) + b) * plane + pix];
            let fbase = n * c * plane + pix;
            for ch in 0..c {
                out[ch * voxels + voxel] += s * fv[fbase + ch * plane];
            }
        }
    }
    Tensor::from_vec(&[c, gz, gy, gx], out)
}

/// Backward of the splats w.r.t. features and scores.
pub fn splat_backward(
    feat: &Tensor,
    score: &Tensor,
    index: &SplatIndex,
    gout: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (n, c, h, w) = check_splat_shapes(feat, score, index)?;
    let [gx, gy, gz] = index.grid.counts;
    let voxels = gx * gy * gz;
    if gout.len() != c * voxels {
        return Err(dim_err!(
            "splat cotangent has {} values, expected {}",
            gout.len(),
            c * voxels
        ));
    }
    let plane = h * w;
    let fv = feat.data();
    let sv = score.data();
    let gv = gout.data();
    let mut gfeat = vec![0.0f64; n * c * plane];
    let mut gscore = vec![0.0f64; n * index.bins * plane];
    // Original point order keeps the feature-gradient accumulation
    // deterministic (several bins share one pixel feature).
    for (p, &rank) in index.ranks.iter().enumerate() {
        if rank == OUT_OF_GRID {
            continue;
        }
        let voxel = rank as usize;
        let (cam, b, pix) = point_coords(index, p);
        let sidx = ((cam * index.bins) + b) * plane + pix;
        let s = sv[sidx];
        let fbase = cam * c * plane + pix;
        let mut ds = 0.0;
        for ch in 0..c {
            let g = gv[ch * voxels + voxel];
            ds += g * fv[fbase + ch * plane];
            gfeat[fbase + ch * plane] += s * g;
        }
        gscore[sidx] = ds;
    }
    Ok((
        Tensor::from_vec(feat.shape(), gfeat)?,
        Tensor::from_vec(score.shape(), gscore)?,
    ))
}

/// Concatenate the Y slices of a volume along the X axis:
/// `out[b,c,z, y*X + x] = f3d[b,c,z,y,x]`. Under row-major storage this is a
/// pure reshape, hence bit-exact.
pub fn slice_heightwise(f3d: &Tensor) -> Result<Tensor> {
    let s = f3d.shape();
    if s.len() != 5 {
        return Err(dim_err!("slice_heightwise wants [B,C,Z,Y,X], got {s:?}"));
    }
    let (b, c, z, y, x) = (s[0], s[1], s[2], s[3], s[4]);
    f3d.reshape(&[b, c, z, y * x])
}

/// Exact inverse of [`slice_heightwise`].
pub fn unslice_heightwise(fh: &Tensor, y: usize, x: usize) -> Result<Tensor> {
    let s = fh.shape();
    if s.len() != 4 {
        return Err(dim_err!("unslice_heightwise wants [B,C,Z,Y*X], got {s:?}"));
    }
    if s[3] != y * x {
        return Err(dim_err!(
            "last extent {} does not factor into Y={y} times X={x}",
            s[3]
        ));
    }
    fh.reshape(&[s[0], s[1], s[2], y, x])
}
