//! Perception-volume and bin geometry.

use crate::error::{Error, Result};

/// Axis-aligned perception volume partitioned into a voxel lattice.
///
/// `bounds` is `(x_start, y_start, z_start, x_end, y_end, z_end)` in meters;
/// `counts` is the number of voxels along (x, y, z). The physical voxel size
/// per axis is `(end - start) / count`. Voxel membership uses floor indexing
/// over half-open intervals `[start, end)`: a coordinate exactly at the upper
/// bound is out of the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub bounds: [f64; 6],
    pub counts: [usize; 3],
}

impl GridSpec {
    pub fn new(bounds: [f64; 6], counts: [usize; 3]) -> Result<GridSpec> {
        for a in 0..3 {
            if !(bounds[a + 3] > bounds[a]) {
                return Err(Error::Spec(format!(
                    "grid bounds must satisfy end > start per axis, got {bounds:?}"
                )));
            }
            if counts[a] < 1 {
                return Err(Error::Spec(format!(
                    "grid counts must be >= 1, got {counts:?}"
                )));
            }
        }
        Ok(GridSpec { bounds, counts })
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        [
            (self.bounds[3] - self.bounds[0]) / self.counts[0] as f64,
            (self.bounds[4] - self.bounds[1]) / self.counts[1] as f64,
            (self.bounds[5] - self.bounds[2]) / self.counts[2] as f64,
        ]
    }

    pub fn num_voxels(&self) -> usize {
        self.counts[0] * self.counts[1] * self.counts[2]
    }

    /// Integer voxel index of a point, or None when out of the grid.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let size = self.voxel_size();
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = (p[a] - self.bounds[a]) / size[a];
            if !(f >= 0.0) || f >= self.counts[a] as f64 {
                return None;
            }
            let i = f.floor() as usize;
            if i >= self.counts[a] {
                return None;
            }
            idx[a] = i;
        }
        Some(idx)
    }

    /// Flattened z-major rank: `(iz * Y + iy) * X + ix`.
    pub fn rank_of(&self, idx: [usize; 3]) -> usize {
        (idx[2] * self.counts[1] + idx[1]) * self.counts[0] + idx[0]
    }

    /// Center coordinate of a voxel.
    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        let size = self.voxel_size();
        [
            self.bounds[0] + (idx[0] as f64 + 0.5) * size[0],
            self.bounds[1] + (idx[1] as f64 + 0.5) * size[1],
            self.bounds[2] + (idx[2] as f64 + 0.5) * size[2],
        ]
    }
}

/// Uniform binning of a scalar range.
#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    pub count: usize,
    pub lower: f64,
    pub upper: f64,
}

impl BinSpec {
    pub fn new(count: usize, lower: f64, upper: f64) -> Result<BinSpec> {
        if count < 1 {
            return Err(Error::Spec("bin count must be >= 1".into()));
        }
        if !(upper > lower) {
            return Err(Error::Spec(format!(
                "bin range [{lower}, {upper}] is empty"
            )));
        }
        Ok(BinSpec {
            count,
            lower,
            upper,
        })
    }

    pub fn width(&self) -> f64 {
        (self.upper - self.lower) / self.count as f64
    }

    /// Bin index by floor; a value exactly on an interior edge belongs to the
    /// higher bin. Values outside the range return None.
    pub fn bin_of(&self, value: f64) -> Option<usize> {
        let f = (value - self.lower) / self.width();
        if !(f >= 0.0) || f >= self.count as f64 {
            return None;
        }
        Some((f.floor() as usize).min(self.count - 1))
    }

    /// Bin index with out-of-range values clamped to the edge bins.
    pub fn bin_of_clamped(&self, value: f64) -> usize {
        if value < self.lower {
            0
        } else {
            self.bin_of(value).unwrap_or(self.count - 1)
        }
    }

    pub fn center(&self, bin: usize) -> f64 {
        self.lower + (bin as f64 + 0.5) * self.width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn occ3d_grid() -> GridSpec {
        GridSpec::new([-40.0, -40.0, -1.0, 40.0, 40.0, 5.4], [200, 200, 16]).unwrap()
    }

    #[test]
    fn voxel_size_arithmetic() {
        let g = occ3d_grid();
        let s = g.voxel_size();
        assert!((s[0] - 0.4).abs() < 1e-12);
        assert!((s[1] - 0.4).abs() < 1e-12);
        assert!((s[2] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn lower_corner_and_center_indices() {
        let g = occ3d_grid();
        assert_eq!(g.voxel_of([-40.0, -40.0, -1.0]), Some([0, 0, 0]));
        assert_eq!(g.voxel_of([0.0, 0.0, 0.0]), Some([100, 100, 2]));
        assert_eq!(g.voxel_of([41.0, 0.0, 0.0]), None);
        // Upper bound is excluded under the half-open convention.
        assert_eq!(g.voxel_of([40.0, 0.0, 0.0]), None);
    }

    #[test]
    fn bin_edge_goes_to_higher_bin() {
        let b = BinSpec::new(16, -1.0, 5.4).unwrap();
        assert!((b.width() - 0.4).abs() < 1e-12);
        // (0 - (-1)) / 0.4 = 2.5 -> bin 2
        assert_eq!(b.bin_of(0.0), Some(2));
        // exactly on an interior edge: (-0.2 - (-1)) / 0.4 = 2.0 -> bin 2 (the higher one)
        assert_eq!(b.bin_of(-0.2 + 0.0), Some(2));
        assert_eq!(b.bin_of(-1.0), Some(0));
        assert_eq!(b.bin_of(5.4), None);
        assert_eq!(b.bin_of_clamped(99.0), 15);
        assert_eq!(b.bin_of_clamped(-99.0), 0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(GridSpec::new([0.0, 0.0, 0.0, 0.0, 1.0, 1.0], [1, 1, 1]).is_err());
        assert!(GridSpec::new([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], [0, 1, 1]).is_err());
        assert!(BinSpec::new(0, 0.0, 1.0).is_err());
        assert!(BinSpec::new(4, 1.0, 1.0).is_err());
    }
}
