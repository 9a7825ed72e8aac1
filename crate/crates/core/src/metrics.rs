//! Voxel-level evaluation: per-class IoU and mIoU with optional visibility
//! masking, plus the "DAOV" voxel export format.
//!
//! DAOV layout: magic `DAOV`, the grid bounds as six little-endian f64,
//! the voxel counts as three u32, one u8 label per voxel in z-major order
//! (`(z * Y + y) * X + x`), then an optional visibility bitset (LSB-first,
//! `ceil(n/8)` bytes). A reader distinguishes the two by the bytes left
//! after the labels.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{dim_err, Error, Result};
use crate::grid::GridSpec;
use crate::serial::{read_f64, read_u32};

pub const VOXEL_MAGIC: &[u8; 4] = b"DAOV";

/// Per-voxel class labels over an X x Y x Z lattice, z-major storage.
#[derive(Clone, Debug)]
pub struct OccupancyGrid {
    pub grid: GridSpec,
    pub classes: usize,
    pub labels: Vec<u8>,
    pub mask: Option<Vec<bool>>,
}

impl OccupancyGrid {
    pub fn new(
        grid: GridSpec,
        classes: usize,
        labels: Vec<u8>,
        mask: Option<Vec<bool>>,
    ) -> Result<OccupancyGrid> {
        let n = grid.num_voxels();
        if labels.len() != n {
            return Err(dim_err!("{} labels for {} voxels", labels.len(), n));
        }
        if classes == 0 || classes > 256 {
            return Err(Error::Spec(format!("class count {classes} out of range")));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= classes) {
            return Err(Error::Spec(format!(
                "label {bad} outside class range 0..{classes}"
            )));
        }
        if let Some(m) = &mask {
            if m.len() != n {
                return Err(dim_err!("mask holds {} flags for {} voxels", m.len(), n));
            }
        }
        Ok(OccupancyGrid {
            grid,
            classes,
            labels,
            mask,
        })
    }

    pub fn voxel_index(&self, x: usize, y: usize, z: usize) -> usize {
        (z * self.grid.counts[1] + y) * self.grid.counts[0] + x
    }
}

/// Per-class intersection/union tallies, accumulable across scenes.
#[derive(Clone, Debug)]
pub struct Confusion {
    pub classes: usize,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
    voxels: u64,
    masked: bool,
}

impl Confusion {
    pub fn new(classes: usize) -> Confusion {
        Confusion {
            classes,
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
            voxels: 0,
            masked: false,
        }
    }

    /// Tally one prediction/ground-truth pair. With `use_mask` set, only
    /// voxels where the ground-truth visibility mask is true are scored.
    pub fn add(&mut self, pred: &OccupancyGrid, gt: &OccupancyGrid, use_mask: bool) -> Result<()> {
        if pred.grid.counts != gt.grid.counts {
            return Err(dim_err!(
                "grid shape mismatch: {:?} vs {:?}",
                pred.grid.counts,
                gt.grid.counts
            ));
        }
        if pred.classes != gt.classes || pred.classes != self.classes {
            return Err(dim_err!(
                "class count mismatch: pred {}, gt {}, tally {}",
                pred.classes,
                gt.classes,
                self.classes
            ));
        }
        self.masked = self.masked || use_mask;
        for i in 0..gt.labels.len() {
            if use_mask {
                if let Some(m) = &gt.mask {
                    if !m[i] {
                        continue;
                    }
                }
            }
            let (p, g) = (pred.labels[i] as usize, gt.labels[i] as usize);
            self.voxels += 1;
            if p == g {
                self.tp[p] += 1;
            } else {
                self.fp[p] += 1;
                self.fn_[g] += 1;
            }
        }
        Ok(())
    }

    /// Per-class IoU = TP / (TP + FP + FN). Classes absent from both sides
    /// score None and stay out of the mean; `empty_class` and `excluded`
    /// classes also stay out of the mean but still get an IoU.
    pub fn report(&self, empty_class: Option<u8>, excluded: &[u8]) -> EvalReport {
        let mut per_class = Vec::with_capacity(self.classes);
        let mut sum = 0.0;
        let mut counted = 0usize;
        for c in 0..self.classes {
            let union = self.tp[c] + self.fp[c] + self.fn_[c];
            let iou = if union == 0 {
                None
            } else {
                Some(self.tp[c] as f64 / union as f64)
            };
            let skip = empty_class == Some(c as u8) || excluded.contains(&(c as u8));
            if !skip {
                if let Some(v) = iou {
                    sum += v;
                    counted += 1;
                }
            }
            per_class.push(iou);
        }
        EvalReport {
            per_class_iou: per_class,
            miou: if counted == 0 {
                0.0
            } else {
                sum / counted as f64
            },
            classes_in_mean: counted,
            voxels: self.voxels,
            masked: self.masked,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub classes_in_mean: usize,
    pub voxels: u64,
    pub masked: bool,
}

impl EvalReport {
    /// Line-oriented key = value text, stable for diffing.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("masked = {}\n", self.masked));
        s.push_str(&format!("voxels = {}\n", self.voxels));
        s.push_str(&format!("classes_in_mean = {}\n", self.classes_in_mean));
        s.push_str(&format!("miou = {:.6}\n", self.miou));
        for (c, iou) in self.per_class_iou.iter().enumerate() {
            match iou {
                Some(v) => s.push_str(&format!("iou.{c} = {v:.6}\n")),
                None => s.push_str(&format!("iou.{c} = absent\n")),
            }
        }
        s
    }
}

/// Single-pair evaluation; see [`Confusion`] for the aggregation behavior.
pub fn miou(
    pred: &OccupancyGrid,
    gt: &OccupancyGrid,
    use_mask: bool,
    empty_class: Option<u8>,
    excluded: &[u8],
) -> Result<EvalReport> {
    let mut tally = Confusion::new(gt.classes);
    tally.add(pred, gt, use_mask)?;
    Ok(tally.report(empty_class, excluded))
}

pub fn write_occupancy<W: Write>(w: &mut W, grid: &OccupancyGrid) -> Result<()> {
    w.write_all(VOXEL_MAGIC)?;
    for &b in &grid.grid.bounds {
        w.write_all(&b.to_le_bytes())?;
    }
    for &c in &grid.grid.counts {
        w.write_all(&(c as u32).to_le_bytes())?;
    }
    w.write_all(&grid.labels)?;
    if let Some(mask) = &grid.mask {
        let mut bits = vec![0u8; mask.len().div_ceil(8)];
        for (i, &m) in mask.iter().enumerate() {
            if m {
                bits[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bits)?;
    }
    Ok(())
}

/// Read a DAOV payload. `classes` overrides the inferred class count
/// (max label + 1) when the caller knows the true range.
pub fn read_occupancy<R: Read>(r: &mut R, classes: Option<usize>) -> Result<OccupancyGrid> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != VOXEL_MAGIC {
        return Err(Error::Format(format!("bad voxel magic {magic:?}")));
    }
    let mut bounds = [0.0f64; 6];
    for b in &mut bounds {
        *b = read_f64(r)?;
    }
    let mut counts = [0usize; 3];
    for c in &mut counts {
        *c = read_u32(r)? as usize;
    }
    let grid = GridSpec::new(bounds, counts).map_err(|e| Error::Format(e.to_string()))?;
    let n = grid.num_voxels();
    let mut labels = vec![0u8; n];
    r.read_exact(&mut labels)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    let mask = if rest.is_empty() {
        None
    } else if rest.len() == n.div_ceil(8) {
        Some((0..n).map(|i| rest[i / 8] & (1 << (i % 8)) != 0).collect())
    } else {
        return Err(Error::Format(format!(
            "{} trailing bytes is neither empty nor a {}-voxel mask",
            rest.len(),
            n
        )));
    };
    let classes = classes.unwrap_or_else(|| {
        labels
            .iter()
            .copied()
            .max()
            .map(|m| m as usize + 1)
            .unwrap_or(1)
    });
    OccupancyGrid::new(grid, classes, labels, mask)
}

pub fn save_occupancy(path: &Path, grid: &OccupancyGrid) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_occupancy(&mut f, grid)?;
    f.flush()?;
    Ok(())
}

pub fn load_occupancy(path: &Path, classes: Option<usize>) -> Result<OccupancyGrid> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_occupancy(&mut f, classes)
}
