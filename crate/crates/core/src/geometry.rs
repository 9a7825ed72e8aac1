//! Camera/LiDAR projection and ground-truth depth/height map construction.
//!
//! The projection contract is `d * [u, v, 1]^T = K * (R * p + t)` where
//! `[R|t]` maps ego-frame points into the camera frame and `K` is the
//! pinhole intrinsic matrix. LiDAR points live in a sensor frame and carry
//! their own rigid sensor-to-ego transform, which is applied before
//! projection; the ego-frame height `z_e` recorded in height maps is taken
//! after that transform.

use crate::error::{dim_err, Error, Result};
use crate::grid::BinSpec;
use crate::tensor::Tensor;

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub fn mat3_mul_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

pub fn mat3_transpose(m: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            t[c][r] = m[r][c];
        }
    }
    t
}

pub const MAT3_IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rigid transform `p -> R p + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn identity() -> RigidTransform {
        RigidTransform {
            rotation: MAT3_IDENTITY,
            translation: [0.0; 3],
        }
    }

    pub fn translation_only(t: Vec3) -> RigidTransform {
        RigidTransform {
            rotation: MAT3_IDENTITY,
            translation: t,
        }
    }

    pub fn apply(&self, p: Vec3) -> Vec3 {
        let r = mat3_mul_vec(&self.rotation, p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }

    /// Inverse of a rigid transform: `p -> R^T (p - t)`.
    pub fn inverse(&self) -> RigidTransform {
        let rt = mat3_transpose(&self.rotation);
        let t = mat3_mul_vec(&rt, self.translation);
        RigidTransform {
            rotation: rt,
            translation: [-t[0], -t[1], -t[2]],
        }
    }
}

/// Pinhole camera: intrinsics `K`, extrinsics `[R|t]` (ego to camera) and
/// image size in pixels as (height, width).
#[derive(Clone, Debug, PartialEq)]
pub struct CameraRig {
    pub intrinsics: Mat3,
    pub rotation: Mat3,
    pub translation: Vec3,
    pub image_size: (usize, usize),
}

impl CameraRig {
    pub fn new(
        intrinsics: Mat3,
        rotation: Mat3,
        translation: Vec3,
        image_size: (usize, usize),
    ) -> Result<CameraRig> {
        let rig = CameraRig {
            intrinsics,
            rotation,
            translation,
            image_size,
        };
        rig.validate()?;
        Ok(rig)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if k[2][2] != 1.0 {
            return Err(Error::Spec(format!("K[2][2] must be 1, got {}", k[2][2])));
        }
        if k[1][0] != 0.0 || k[2][0] != 0.0 || k[2][1] != 0.0 {
            return Err(Error::Spec("K must be upper-triangular".into()));
        }
        if k[0][0] <= 0.0 || k[1][1] <= 0.0 {
            return Err(Error::Spec("K focal entries must be positive".into()));
        }
        // ||R^T R - I||_max < 1e-9
        let rt = mat3_transpose(&self.rotation);
        let mut max_dev: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut s = 0.0;
                for k2 in 0..3 {
                    s += rt[i][k2] * self.rotation[k2][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((s - target).abs());
            }
        }
        if max_dev >= 1e-9 {
            return Err(Error::Spec(format!(
                "R not orthonormal (deviation {max_dev:e})"
            )));
        }
        if self.image_size.0 == 0 || self.image_size.1 == 0 {
            return Err(Error::Spec("image size must be positive".into()));
        }
        Ok(())
    }

    /// Camera center expressed in the ego frame: `-R^T t`.
    pub fn center_ego(&self) -> Vec3 {
        let rt = mat3_transpose(&self.rotation);
        let c = mat3_mul_vec(&rt, self.translation);
        [-c[0], -c[1], -c[2]]
    }
}

/// Points in a sensor frame plus the rigid transform into the ego frame.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub sensor_to_ego: RigidTransform,
}

impl PointCloud {
    pub fn ego_points(&self) -> impl Iterator<Item = Vec3> + '_ {
        self.points.iter().map(|&p| self.sensor_to_ego.apply(p))
    }
}

/// Per-pixel scalar map with validity flags. Invalid pixels are never
/// consumed by losses; a flag is used instead of a numeric sentinel because
/// every finite height is a legal value.
#[derive(Clone, Debug)]
pub struct PixelMap {
    pub values: Tensor,
    pub valid: Vec<bool>,
}

pub type HeightMap = PixelMap;
pub type DepthMap = PixelMap;

impl PixelMap {
    pub fn invalid(h: usize, w: usize) -> PixelMap {
        PixelMap {
            values: Tensor::zeros(&[h, w]),
            valid: vec![false; h * w],
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Project an ego-frame point: returns `(u, v, d)` pixel coordinates and
/// camera depth. Depth at or below 1e-9 is a behind-camera error.
pub fn project_point(rig: &CameraRig, p_ego: Vec3) -> Result<(f64, f64, f64)> {
    if !p_ego.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric(format!(
            "cannot project non-finite point {p_ego:?}"
        )));
    }
    let cam = mat3_mul_vec(&rig.rotation, p_ego);
    let cam = [
        cam[0] + rig.translation[0],
        cam[1] + rig.translation[1],
        cam[2] + rig.translation[2],
    ];
    let proj = mat3_mul_vec(&rig.intrinsics, cam);
    let d = proj[2];
    if d <= 1e-9 {
        return Err(Error::BehindCamera { depth: d });
    }
    Ok((proj[0] / d, proj[1] / d, d))
}

/// Analytic inverse of [`project_point`]: recovers the ego-frame point from
/// `(u, v, d)` as `R^T (d * K^{-1} [u, v, 1]^T - t)`.
pub fn back_project(rig: &CameraRig, u: f64, v: f64, d: f64) -> Vec3 {
    let k = &rig.intrinsics;
    // Closed-form inverse of an upper-triangular K with K[2][2] = 1.
    let x = (u - k[0][2] - k[0][1] / k[1][1] * (v - k[1][2])) / k[0][0];
    let y = (v - k[1][2]) / k[1][1];
    let cam = [d * x, d * y, d];
    let rt = mat3_transpose(&rig.rotation);
    mat3_mul_vec(
        &rt,
        [
            cam[0] - rig.translation[0],
            cam[1] - rig.translation[1],
            cam[2] - rig.translation[2],
        ],
    )
}

/// Camera `index` of an evenly spaced ring of `count` outward-looking
/// cameras at the given height, pitched down by `pitch_deg`. Intrinsics
/// come from a horizontal field of view of `fov_deg`.
pub fn ring_rig(
    index: usize,
    count: usize,
    height: f64,
    pitch_deg: f64,
    fov_deg: f64,
    image_size: (usize, usize),
) -> CameraRig {
    let yaw = 2.0 * std::f64::consts::PI * index as f64 / count as f64;
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch_deg.to_radians().sin_cos();
    // Camera basis in ego coordinates: x right, y down (pitched), z forward.
    let cam_x = [sy, -cy, 0.0];
    let cam_y = [-sp * cy, -sp * sy, -cp];
    let cam_z = [cp * cy, cp * sy, -sp];
    let rotation = [cam_x, cam_y, cam_z];
    let center = [0.0, 0.0, height];
    let rc = mat3_mul_vec(&rotation, center);
    let translation = [-rc[0], -rc[1], -rc[2]];
    let (h, w) = image_size;
    let f = (w as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
    let intrinsics = [
        [f, 0.0, w as f64 / 2.0],
        [0.0, f, h as f64 / 2.0],
        [0.0, 0.0, 1.0],
    ];
    CameraRig::new(intrinsics, rotation, translation, image_size)
        .expect("ring rig construction is always valid")
}

/// What a retained pixel sample stores: its camera depth and ego height.
#[derive(Clone, Copy, Debug)]
struct PixelSample {
    depth: f64,
    height: f64,
}

/// Project every cloud point and keep, per integer pixel cell, the sample
/// with minimal depth. Cells are `stride x stride` pixel blocks so the same
/// rule yields feature-resolution supervision maps. Ties on depth keep the
/// smaller height so the result is independent of point order.
fn min_depth_samples(
    rig: &CameraRig,
    cloud: &PointCloud,
    stride: (usize, usize),
) -> Vec<Option<PixelSample>> {
    let (img_h, img_w) = rig.image_size;
    assert!(
        img_h % stride.0 == 0 && img_w % stride.1 == 0,
        "stride {stride:?} must divide image size {:?}",
        rig.image_size
    );
    let (h, w) = (img_h / stride.0, img_w / stride.1);
    let mut cells: Vec<Option<PixelSample>> = vec![None; h * w];
    for p_ego in cloud.ego_points() {
        let (u, v, d) = match project_point(rig, p_ego) {
            Ok(t) => t,
            Err(_) => continue, // behind camera: skipped
        };
        let (uf, vf) = (u.floor(), v.floor());
        if uf < 0.0 || vf < 0.0 || uf >= img_w as f64 || vf >= img_h as f64 {
            continue; // off-image: skipped
        }
        let cell = (vf as usize / stride.0) * w + (uf as usize / stride.1);
        let cand = PixelSample {
            depth: d,
            height: p_ego[2],
        };
        match &mut cells[cell] {
            Some(cur) => {
                if cand.depth < cur.depth || (cand.depth == cur.depth && cand.height < cur.height) {
                    *cur = cand;
                }
            }
            slot => *slot = Some(cand),
        }
    }
    cells
}

fn samples_to_map(
    cells: &[Option<PixelSample>],
    h: usize,
    w: usize,
    pick: impl Fn(&PixelSample) -> f64,
) -> PixelMap {
    let mut map = PixelMap::invalid(h, w);
    for (i, c) in cells.iter().enumerate() {
        if let Some(s) = c {
            map.values.data_mut()[i] = pick(s);
            map.valid[i] = true;
        }
    }
    map
}

/// Ground-truth height map: per pixel, the ego-frame height `z_e` of the
/// minimal-depth point hitting that pixel.
pub fn build_height_map(rig: &CameraRig, cloud: &PointCloud) -> HeightMap {
    let (h, w) = rig.image_size;
    let cells = min_depth_samples(rig, cloud, (1, 1));
    samples_to_map(&cells, h, w, |s| s.height)
}

/// Ground-truth depth map: per pixel, the minimal camera depth itself.
pub fn build_depth_map(rig: &CameraRig, cloud: &PointCloud) -> DepthMap {
    let (h, w) = rig.image_size;
    let cells = min_depth_samples(rig, cloud, (1, 1));
    samples_to_map(&cells, h, w, |s| s.depth)
}

/// Depth and height maps binned at feature resolution (`stride x stride`
/// pixel cells), used to supervise the score heads.
pub fn build_supervision_maps(
    rig: &CameraRig,
    cloud: &PointCloud,
    stride: (usize, usize),
) -> (DepthMap, HeightMap) {
    let (h, w) = (rig.image_size.0 / stride.0, rig.image_size.1 / stride.1);
    let cells = min_depth_samples(rig, cloud, stride);
    (
        samples_to_map(&cells, h, w, |s| s.depth),
        samples_to_map(&cells, h, w, |s| s.height),
    )
}

/// One-hot a scalar map over uniform bins: output is `[bins, H, W]`. Valid
/// pixels get exactly one 1 (out-of-range values clamp to the edge bins when
/// `clamp_out_of_range` is set, and are dropped otherwise); invalid pixels
/// are all-zero.
pub fn discretize_supervision(
    map: &PixelMap,
    bins: &BinSpec,
    clamp_out_of_range: bool,
) -> Result<Tensor> {
    let (h, w) = (map.height(), map.width());
    if map.valid.len() != h * w {
        return Err(dim_err!(
            "validity length {} vs {}x{} map",
            map.valid.len(),
            h,
            w
        ));
    }
    let mut out = Tensor::zeros(&[bins.count, h, w]);
    let plane = h * w;
    for i in 0..plane {
        if !map.valid[i] {
            continue;
        }
        let value = map.values.data()[i];
        let bin = if clamp_out_of_range {
            Some(bins.bin_of_clamped(value))
        } else {
            bins.bin_of(value)
        };
        if let Some(b) = bin {
            out.data_mut()[b * plane + i] = 1.0;
        }
    }
    Ok(out)
}
