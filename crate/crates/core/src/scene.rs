//! Synthetic desk-scale scenes with analytic ground truth.
//!
//! A scene is a ground slab plus axis-aligned boxes (walls, poles, blocks
//! and elevated beams — tall, thin structures chosen so that vertical
//! geometry is decisive for the benchmark). From one seeded spec the
//! generator produces mutually consistent outputs: first-hit ray-cast
//! LiDAR returns, flat-shaded class-colored camera images, the exact
//! voxelized occupancy labels and a camera-visibility mask.

use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ring_rig, CameraRig, PointCloud, RigidTransform, Vec3};
use crate::grid::GridSpec;
use crate::metrics::{read_occupancy, write_occupancy, OccupancyGrid};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const SCENE_MAGIC_LINE: &str = "DAOCC-SCENE 1";

/// Object classes used by the benchmark scenes.
pub const CLASS_GROUND: u8 = 0;
pub const CLASS_WALL: u8 = 1;
pub const CLASS_POLE: u8 = 2;
pub const CLASS_BLOCK: u8 = 3;
pub const CLASS_BEAM: u8 = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BoxSpec {
    pub class: u8,
    pub center: Vec3,
    pub size: Vec3,
}

impl BoxSpec {
    pub fn min(&self) -> Vec3 {
        [
            self.center[0] - self.size[0] / 2.0,
            self.center[1] - self.size[1] / 2.0,
            self.center[2] - self.size[2] / 2.0,
        ]
    }

    pub fn max(&self) -> Vec3 {
        [
            self.center[0] + self.size[0] / 2.0,
            self.center[1] + self.size[1] / 2.0,
            self.center[2] + self.size[2] / 2.0,
        ]
    }

    /// Half-open containment [min, max) per axis, shared by the voxelizer
    /// and its oracle.
    pub fn contains(&self, p: Vec3) -> bool {
        let (lo, hi) = (self.min(), self.max());
        (0..3).all(|a| p[a] >= lo[a] && p[a] < hi[a])
    }
}

#[derive(Clone, Debug)]
pub struct RigLayout {
    pub cameras: usize,
    pub image_size: (usize, usize),
    pub height: f64,
    pub pitch_deg: f64,
    pub fov_deg: f64,
}

#[derive(Clone, Debug)]
pub struct LidarPattern {
    pub azimuths: usize,
    pub elevations: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub height: f64,
}

#[derive(Clone, Debug)]
pub struct SceneSpec {
    pub seed: u64,
    pub grid: GridSpec,
    pub classes: usize,
    pub empty_class: u8,
    /// Top of the ground slab; the slab spans [z_start, ground_top) and a
    /// value at or below z_start disables the ground entirely.
    pub ground_top: f64,
    pub objects: Vec<BoxSpec>,
    pub rig: RigLayout,
    pub lidar: LidarPattern,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.grid.bounds;
        for (i, o) in self.objects.iter().enumerate() {
            let (lo, hi) = (o.min(), o.max());
            let eps = 1e-9;
            let inside = lo[0] >= b[0] - eps
                && lo[1] >= b[1] - eps
                && lo[2] >= b[2] - eps
                && hi[0] <= b[3] + eps
                && hi[1] <= b[4] + eps
                && hi[2] <= b[5] + eps;
            if !inside {
                return Err(Error::Spec(format!(
                    "object {i} (class {}) spans {:?}..{:?}, outside bounds {b:?}",
                    o.class, lo, hi
                )));
            }
            if o.class as usize >= self.classes || o.class == self.empty_class {
                return Err(Error::Spec(format!(
                    "object {i} has illegal class {}",
                    o.class
                )));
            }
        }
        if self.empty_class as usize >= self.classes {
            return Err(Error::Spec("empty class outside class range".into()));
        }
        Ok(())
    }

    pub fn rigs(&self) -> Vec<CameraRig> {
        (0..self.rig.cameras)
            .map(|i| {
                ring_rig(
                    i,
                    self.rig.cameras,
                    self.rig.height,
                    self.rig.pitch_deg,
                    self.rig.fov_deg,
                    self.rig.image_size,
                )
            })
            .collect()
    }

    fn ground_box(&self) -> Option<BoxSpec> {
        let b = &self.grid.bounds;
        if self.ground_top <= b[2] {
            return None;
        }
        let size_z = self.ground_top - b[2];
        Some(BoxSpec {
            class: CLASS_GROUND,
            center: [
                (b[0] + b[3]) / 2.0,
                (b[1] + b[4]) / 2.0,
                b[2] + size_z / 2.0,
            ],
            size: [b[3] - b[0], b[4] - b[1], size_z],
        })
    }

    /// Ground slab (when present) followed by the objects; later entries
    /// overwrite earlier ones during voxelization.
    pub fn paint_order(&self) -> Vec<BoxSpec> {
        let mut v = Vec::with_capacity(self.objects.len() + 1);
        if let Some(g) = self.ground_box() {
            v.push(g);
        }
        v.extend(self.objects.iter().cloned());
        v
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub rigs: Vec<CameraRig>,
    pub images: Tensor,
    pub cloud: PointCloud,
    pub gt: OccupancyGrid,
}

/// Entry distance of a ray into an axis-aligned box, when the origin is
/// outside and the hit is in front of the origin.
fn ray_box(origin: Vec3, dir: Vec3, lo: Vec3, hi: Vec3) -> Option<f64> {
    let mut tmin = 1e-9f64;
    let mut tmax = f64::INFINITY;
    for a in 0..3 {
        if dir[a].abs() < 1e-12 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
        } else {
            let inv = 1.0 / dir[a];
            let (mut t1, mut t2) = ((lo[a] - origin[a]) * inv, (hi[a] - origin[a]) * inv);
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            tmin = tmin.max(t1);
            tmax = tmax.min(t2);
            if tmin > tmax {
                return None;
            }
        }
    }
    // Origin inside the box yields no entry surface.
    if tmin <= 1e-9 {
        None
    } else {
        Some(tmin)
    }
}

/// First surface hit along a ray: (distance, class).
fn first_hit(targets: &[BoxSpec], origin: Vec3, dir: Vec3) -> Option<(f64, u8)> {
    let mut best: Option<(f64, u8)> = None;
    for b in targets {
        if let Some(t) = ray_box(origin, dir, b.min(), b.max()) {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, b.class));
            }
        }
    }
    best
}

/// Deterministic class palette (hue wheel in a compact hsv-to-rgb).
pub fn class_color(class: u8) -> [f64; 3] {
    let h = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let v = 0.55 + 0.45 * ((class as f64 * 0.37).fract());
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let (p, q, t) = (v * 0.15, v * (1.0 - 0.85 * f), v * (1.0 - 0.85 * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Exact voxel labels: boxes are painted in order onto an empty lattice,
/// each voxel taking the class whose box contains its center. The index
/// span per box is conservative; the final decision per voxel center uses
/// the same containment predicate as the brute-force oracle.
pub fn voxelize(spec: &SceneSpec) -> Vec<u8> {
    let g = &spec.grid;
    let [nx, ny, nz] = g.counts;
    let size = g.voxel_size();
    let mut labels = vec![spec.empty_class; g.num_voxels()];
    let span = |lo: f64, hi: f64, start: f64, step: f64, count: usize| -> (usize, usize) {
        let a = (((lo - start) / step - 0.5).floor().max(0.0)) as usize;
        let b = ((((hi - start) / step) + 0.5).ceil()).min(count as f64) as usize;
        (a.min(count), b.min(count))
    };
    for b in spec.paint_order() {
        let (lo, hi) = (b.min(), b.max());
        let (x0, x1) = span(lo[0], hi[0], g.bounds[0], size[0], nx);
        let (y0, y1) = span(lo[1], hi[1], g.bounds[1], size[1], ny);
        let (z0, z1) = span(lo[2], hi[2], g.bounds[2], size[2], nz);
        for z in z0..z1 {
            for y in y0..y1 {
                for x in x0..x1 {
                    if b.contains(g.voxel_center([x, y, z])) {
                        labels[(z * ny + y) * nx + x] = b.class;
                    }
                }
            }
        }
    }
    labels
}

/// Camera-visibility mask: each pixel ray marks the voxels it crosses up
/// to and including the first occupied one.
fn visibility_mask(spec: &SceneSpec, rigs: &[CameraRig], labels: &[u8]) -> Vec<bool> {
    let g = &spec.grid;
    let [nx, ny, _] = g.counts;
    let size = g.voxel_size();
    let step = 0.3 * size[0].min(size[1]).min(size[2]);
    let diag = ((g.bounds[3] - g.bounds[0]).powi(2)
        + (g.bounds[4] - g.bounds[1]).powi(2)
        + (g.bounds[5] - g.bounds[2]).powi(2))
    .sqrt();
    let mut mask = vec![false; labels.len()];
    for rig in rigs {
        let center = rig.center_ego();
        let rt = crate::geometry::mat3_transpose(&rig.rotation);
        let k = &rig.intrinsics;
        let (h, w) = rig.image_size;
        for vi in 0..h {
            for ui in 0..w {
                let y = (vi as f64 + 0.5 - k[1][2]) / k[1][1];
                let x = (ui as f64 + 0.5 - k[0][2] - k[0][1] * y) / k[0][0];
                let dir = crate::geometry::mat3_mul_vec(&rt, [x, y, 1.0]);
                let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
                let dir = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
                let mut t = 0.0;
                while t < diag {
                    let p = [
                        center[0] + t * dir[0],
                        center[1] + t * dir[1],
                        center[2] + t * dir[2],
                    ];
                    if let Some(idx) = g.voxel_of(p) {
                        let flat = (idx[2] * ny + idx[1]) * nx + idx[0];
                        mask[flat] = true;
                        if labels[flat] != spec.empty_class {
                            break;
                        }
                    }
                    t += step;
                }
            }
        }
    }
    mask
}

/// Generate LiDAR returns, rendered images, occupancy labels and the
/// visibility mask from one spec. Pure function of the spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let rigs = spec.rigs();
    let targets = spec.paint_order();
    let b = &spec.grid.bounds;
    let max_range = ((b[3] - b[0]).powi(2) + (b[4] - b[1]).powi(2) + (b[5] - b[2]).powi(2)).sqrt();

    // LiDAR: first hit per ray, points stored in the sensor frame.
    let lidar_origin = [0.0, 0.0, spec.lidar.height];
    let mut points = Vec::new();
    for ei in 0..spec.lidar.elevations {
        let el_frac = if spec.lidar.elevations == 1 {
            0.5
        } else {
            ei as f64 / (spec.lidar.elevations - 1) as f64
        };
        let el = (spec.lidar.elevation_min_deg
            + el_frac * (spec.lidar.elevation_max_deg - spec.lidar.elevation_min_deg))
            .to_radians();
        for ai in 0..spec.lidar.azimuths {
            let az = 2.0 * std::f64::consts::PI * ai as f64 / spec.lidar.azimuths as f64;
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            if let Some((t, _)) = first_hit(&targets, lidar_origin, dir) {
                if t <= max_range {
                    points.push([t * dir[0], t * dir[1], t * dir[2]]);
                }
            }
        }
    }
    let cloud = PointCloud {
        points,
        sensor_to_ego: RigidTransform::translation_only(lidar_origin),
    };

    // Flat-shaded class-colored images.
    let (h, w) = spec.rig.image_size;
    let n = rigs.len();
    let mut images = Tensor::zeros(&[n, 3, h, w]);
    for (ni, rig) in rigs.iter().enumerate() {
        let center = rig.center_ego();
        let rt = crate::geometry::mat3_transpose(&rig.rotation);
        let k = &rig.intrinsics;
        for vi in 0..h {
            for ui in 0..w {
                let y = (vi as f64 + 0.5 - k[1][2]) / k[1][1];
                let x = (ui as f64 + 0.5 - k[0][2] - k[0][1] * y) / k[0][0];
                let dir = crate::geometry::mat3_mul_vec(&rt, [x, y, 1.0]);
                if let Some((_, class)) = first_hit(&targets, center, dir) {
                    let rgb = class_color(class);
                    for ch in 0..3 {
                        images.set(&[ni, ch, vi, ui], rgb[ch]);
                    }
                }
            }
        }
    }

    // Ground truth voxels plus visibility.
    let labels = voxelize(spec);
    let mask = visibility_mask(spec, &rigs, &labels);
    let gt = OccupancyGrid::new(spec.grid.clone(), spec.classes, labels, Some(mask))?;
    Ok(Scene {
        rigs,
        images,
        cloud,
        gt,
    })
}

/// Distribution of random benchmark scenes: tall, thin structures on a
/// ground slab. Heights vary independently of class, so recovering the
/// vertical extent of each structure is what the metric rewards.
#[derive(Clone, Debug)]
pub struct SceneDistribution {
    pub grid: GridSpec,
    pub classes: usize,
    pub empty_class: u8,
    pub ground_top: f64,
    pub rig: RigLayout,
    pub lidar: LidarPattern,
    pub objects_min: usize,
    pub objects_max: usize,
}

impl SceneDistribution {
    /// Matches `ModelConfig::toy()` geometry.
    pub fn toy(
        grid: GridSpec,
        classes: usize,
        empty_class: u8,
        cameras: usize,
        image_size: (usize, usize),
    ) -> SceneDistribution {
        SceneDistribution {
            grid,
            classes,
            empty_class,
            ground_top: 0.3,
            rig: RigLayout {
                cameras,
                image_size,
                height: 1.6,
                pitch_deg: 8.0,
                fov_deg: 100.0,
            },
            lidar: LidarPattern {
                azimuths: 120,
                elevations: 24,
                elevation_min_deg: -35.0,
                elevation_max_deg: 18.0,
                height: 1.8,
            },
            objects_min: 6,
            objects_max: 10,
        }
    }
}

/// Sample one scene spec. The seed fully determines the scene.
pub fn sample_scene_spec(dist: &SceneDistribution, seed: u64) -> SceneSpec {
    let mut rng = SplitMix64::new(seed ^ 0x5CE_4E5E_ED);
    let b = &dist.grid.bounds;
    let z_max = b[5] - 0.05;
    let count = dist.objects_min + rng.below(dist.objects_max - dist.objects_min + 1);
    let mut objects = Vec::with_capacity(count);
    // Only object kinds whose class id exists under this class budget.
    let beams_ok = (CLASS_BEAM as usize) < dist.classes && CLASS_BEAM != dist.empty_class;
    let blocks_ok = (CLASS_BLOCK as usize) < dist.classes && CLASS_BLOCK != dist.empty_class;
    let max_kind = if beams_ok {
        1.0
    } else if blocks_ok {
        0.85
    } else {
        0.65
    };
    for _ in 0..count {
        let kind = rng.next_f64() * max_kind;
        let (class, size, z_center) = if kind < 0.35 {
            // Wall: long, thin, height varies freely.
            let len = rng.uniform(3.0, 7.5);
            let height = rng.uniform(0.8, (z_max - dist.ground_top).min(3.2));
            let size = if rng.next_f64() < 0.5 {
                [len, 0.45, height]
            } else {
                [0.45, len, height]
            };
            (CLASS_WALL, size, dist.ground_top + height / 2.0)
        } else if kind < 0.65 {
            // Pole: thin and tall.
            let height = rng.uniform(1.0, (z_max - dist.ground_top).min(3.4));
            (
                CLASS_POLE,
                [0.55, 0.55, height],
                dist.ground_top + height / 2.0,
            )
        } else if kind < 0.85 {
            // Block: chunky and low.
            let s = rng.uniform(1.0, 2.2);
            let height = rng.uniform(0.6, 1.4);
            (CLASS_BLOCK, [s, s, height], dist.ground_top + height / 2.0)
        } else {
            // Beam: elevated horizontal bar with free space underneath.
            let len = rng.uniform(2.5, 5.5);
            let size = if rng.next_f64() < 0.5 {
                [len, 0.6, 0.6]
            } else {
                [0.6, len, 0.6]
            };
            let zc = rng.uniform(1.6, (z_max - 0.4).max(1.9));
            (CLASS_BEAM, size, zc)
        };
        // Keep the footprint inside the bounds and away from the sensors.
        let margin_x = size[0] / 2.0 + 0.1;
        let margin_y = size[1] / 2.0 + 0.1;
        let mut cx;
        let mut cy;
        let mut tries = 0;
        loop {
            cx = rng.uniform(b[0] + margin_x, b[3] - margin_x);
            cy = rng.uniform(b[1] + margin_y, b[4] - margin_y);
            tries += 1;
            let clears_origin = cx.abs() - size[0] / 2.0 > 1.2 || cy.abs() - size[1] / 2.0 > 1.2;
            if clears_origin || tries > 16 {
                break;
            }
        }
        let z_center = z_center
            .min(z_max - size[2] / 2.0)
            .max(b[2] + size[2] / 2.0);
        objects.push(BoxSpec {
            class,
            center: [cx, cy, z_center],
            size,
        });
    }
    SceneSpec {
        seed,
        grid: dist.grid.clone(),
        classes: dist.classes,
        empty_class: dist.empty_class,
        ground_top: dist.ground_top,
        objects,
        rig: dist.rig.clone(),
        lidar: dist.lidar.clone(),
    }
}

// ── Scene file format ──────────────────────────────────────────────
//
// Text header (camera count, per-camera K, R, t, image size, and the
// LiDAR sensor-to-ego transform), then a binary point block (u64 count +
// xyz f64 triples in the sensor frame), then the ground-truth grid in the
// DAOV voxel format.

pub fn write_scene<W: Write>(
    w: &mut W,
    rigs: &[CameraRig],
    cloud: &PointCloud,
    gt: &OccupancyGrid,
) -> Result<()> {
    let mut header = String::new();
    header.push_str(SCENE_MAGIC_LINE);
    header.push('\n');
    header.push_str(&format!("cameras {}\n", rigs.len()));
    for (i, rig) in rigs.iter().enumerate() {
        header.push_str(&format!("camera {i}\n"));
        header.push_str(&format!("K {}\n", mat_line(&rig.intrinsics)));
        header.push_str(&format!("R {}\n", mat_line(&rig.rotation)));
        header.push_str(&format!(
            "t {:e} {:e} {:e}\n",
            rig.translation[0], rig.translation[1], rig.translation[2]
        ));
        header.push_str(&format!(
            "image {} {}\n",
            rig.image_size.0, rig.image_size.1
        ));
    }
    header.push_str(&format!(
        "sensor_to_ego {} {:e} {:e} {:e}\n",
        mat_line(&cloud.sensor_to_ego.rotation),
        cloud.sensor_to_ego.translation[0],
        cloud.sensor_to_ego.translation[1],
        cloud.sensor_to_ego.translation[2]
    ));
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    w.write_all(&(cloud.points.len() as u64).to_le_bytes())?;
    for p in &cloud.points {
        for &c in p {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    write_occupancy(w, gt)?;
    Ok(())
}

fn mat_line(m: &[[f64; 3]; 3]) -> String {
    m.iter()
        .flatten()
        .map(|v| format!("{v:e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_floats(line: &str, want: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Format(format!("bad float {t}")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != want {
        return Err(Error::Format(format!(
            "expected {want} floats, got {}",
            vals.len()
        )));
    }
    Ok(vals)
}

fn mat_from(vals: &[f64]) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            m[r][c] = vals[r * 3 + c];
        }
    }
    m
}

pub fn read_scene<R: Read>(
    r: &mut R,
    classes: Option<usize>,
) -> Result<(Vec<CameraRig>, PointCloud, OccupancyGrid)> {
    let mut reader = std::io::BufReader::new(r);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.trim_end() != SCENE_MAGIC_LINE {
        return Err(Error::Format(format!("bad scene magic line {line:?}")));
    }
    line.clear();
    reader.read_line(&mut line)?;
    let cam_count: usize = line
        .trim_end()
        .strip_prefix("cameras ")
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad camera count line {line:?}")))?;
    let mut rigs = Vec::with_capacity(cam_count);
    let mut sensor_to_ego = RigidTransform::identity();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(Error::Format("scene header ended early".into()));
        }
        let t = line.trim_end();
        if t == "end_header" {
            break;
        }
        if t.starts_with("camera ") {
            let mut k = String::new();
            let mut rr = String::new();
            let mut tt = String::new();
            let mut img = String::new();
            reader.read_line(&mut k)?;
            reader.read_line(&mut rr)?;
            reader.read_line(&mut tt)?;
            reader.read_line(&mut img)?;
            let kv = parse_floats(k.trim_start_matches("K "), 9)?;
            let rv = parse_floats(rr.trim_start_matches("R "), 9)?;
            let tv = parse_floats(tt.trim_start_matches("t "), 3)?;
            let iv: Vec<usize> = img
                .trim_end()
                .strip_prefix("image ")
                .ok_or_else(|| Error::Format("missing image line".into()))?
                .split_whitespace()
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Format("bad image size".into()))
                })
                .collect::<Result<_>>()?;
            if iv.len() != 2 {
                return Err(Error::Format("image line wants two extents".into()));
            }
            rigs.push(CameraRig::new(
                mat_from(&kv),
                mat_from(&rv),
                [tv[0], tv[1], tv[2]],
                (iv[0], iv[1]),
            )?);
        } else if let Some(rest) = t.strip_prefix("sensor_to_ego ") {
            let vals = parse_floats(rest, 12)?;
            sensor_to_ego = RigidTransform {
                rotation: mat_from(&vals[..9]),
                translation: [vals[9], vals[10], vals[11]],
            };
        } else {
            return Err(Error::Format(format!("unexpected header line {t:?}")));
        }
    }
    if rigs.len() != cam_count {
        return Err(Error::Format(format!(
            "header announced {cam_count} cameras, found {}",
            rigs.len()
        )));
    }
    let count = crate::serial::read_u64(&mut reader)? as usize;
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let x = read_f64_from(&mut reader)?;
        let y = read_f64_from(&mut reader)?;
        let z = read_f64_from(&mut reader)?;
        points.push([x, y, z]);
    }
    let gt = read_occupancy(&mut reader, classes)?;
    Ok((
        rigs,
        PointCloud {
            points,
            sensor_to_ego,
        },
        gt,
    ))
}

fn read_f64_from<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn save_scene(path: &Path, scene: &Scene) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_scene(&mut f, &scene.rigs, &scene.cloud, &scene.gt)?;
    f.flush()?;
    Ok(())
}

pub fn load_scene(
    path: &Path,
    classes: Option<usize>,
) -> Result<(Vec<CameraRig>, PointCloud, OccupancyGrid)> {
    let mut f = std::fs::File::open(path)?;
    read_scene(&mut f, classes)
}
