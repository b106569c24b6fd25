//! Image reconstruction: back-projection, range migration, polar format and
//! multi-planar compensation.

mod bpa;
mod empm;
pub(crate) mod fft;
mod lattice;
mod pfa;
mod rma;

use ndarray::Array3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bpa::{bpa, bpa_with};
pub use empm::empm_reconstruct;
pub use lattice::{grid_to_lattice, uniform_lattice, PlanarLattice};
pub use pfa::{pfa_circular_2d, pfa_cylindrical_3d};
pub use rma::{
    aperture_spectrum, fft_linear_1d, fft_rectilinear_2d, rma_linear_2d, rma_rectilinear_3d, stolt, SpectrumGrid,
    SpectralAxis, UniformAxis,
};

/// One image axis: `count` samples evenly spanning `[min_m, max_m]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisSpec {
    pub min_m: f64,
    pub max_m: f64,
    pub count: usize,
}

impl AxisSpec {
    pub fn new(min_m: f64, max_m: f64, count: usize) -> Self {
        AxisSpec { min_m, max_m, count }
    }

    pub fn single(v: f64) -> Self {
        AxisSpec { min_m: v, max_m: v, count: 1 }
    }

    /// Axis centered on `center` with spacing `step`.
    pub fn centered(center: f64, step: f64, count: usize) -> Self {
        let half = step * (count as f64 - 1.0) / 2.0;
        AxisSpec { min_m: center - half, max_m: center + half, count }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min_m];
        }
        let step = self.step();
        (0..self.count).map(|i| self.min_m + step * i as f64).collect()
    }

    pub fn step(&self) -> f64 {
        if self.count > 1 {
            (self.max_m - self.min_m) / (self.count - 1) as f64
        } else {
            0.0
        }
    }

    pub fn center(&self) -> f64 {
        (self.min_m + self.max_m) / 2.0
    }

    fn validate(&self, name: &str) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid(format!("grid.{name}.count"), "must be at least 1"));
        }
        if !(self.min_m.is_finite() && self.max_m.is_finite()) {
            return Err(Error::invalid(format!("grid.{name}"), "bounds must be finite"));
        }
        if self.count > 1 && self.max_m <= self.min_m {
            return Err(Error::invalid(format!("grid.{name}.max_m"), "must exceed min_m when count > 1"));
        }
        Ok(())
    }
}

/// Voxel grid of an image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub z: AxisSpec,
}

impl ImageGrid {
    pub fn validate(&self) -> Result<()> {
        self.x.validate("x")?;
        self.y.validate("y")?;
        self.z.validate("z")
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.x.count, self.y.count, self.z.count)
    }

    pub fn len(&self) -> usize {
        self.x.count * self.y.count * self.z.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tuning knobs shared by the reconstruction algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconOptions {
    /// FFT length along x' (defaults to the next power of two ≥ 2× the aperture samples).
    pub nfft_x: Option<usize>,
    pub nfft_y: Option<usize>,
    /// FFT length along θ for partial arcs.
    pub nfft_theta: Option<usize>,
    /// Half-angle of the k_z support (degrees); derived from the geometry when unset.
    pub max_angle_deg: Option<f64>,
    /// Lattice spacing for gridding irregular virtual positions (defaults to λc/4).
    pub lattice_spacing_m: Option<f64>,
    /// Scene-center range used by multi-planar compensation (defaults to the grid center).
    pub scene_z_m: Option<f64>,
    /// Keep the complex image alongside the magnitude.
    pub keep_complex: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub algorithm: String,
    pub time_s: f64,
}

/// Reflectivity magnitude on a regular voxel grid, indexed `[x, y, z]`.
/// Lower-dimensional images have singleton axes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub values: Array3<f64>,
    pub complex: Option<Array3<Complex64>>,
    pub meta: ImageMeta,
}

impl ImageVolume {
    pub fn from_complex(grid: &ImageGrid, data: Array3<Complex64>, algorithm: &str, keep_complex: bool) -> Self {
        let values = data.mapv(|v| v.norm());
        ImageVolume {
            x: grid.x.values(),
            y: grid.y.values(),
            z: grid.z.values(),
            values,
            complex: keep_complex.then_some(data),
            meta: ImageMeta { algorithm: algorithm.into(), time_s: 0.0 },
        }
    }

    pub fn new(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, values: Array3<f64>, meta: ImageMeta) -> Result<Self> {
        if values.dim() != (x.len(), y.len(), z.len()) {
            return Err(Error::ShapeMismatch(format!(
                "values {:?} vs axes ({}, {}, {})",
                values.dim(),
                x.len(),
                y.len(),
                z.len()
            )));
        }
        for (name, a) in [("x", &x), ("y", &y), ("z", &z)] {
            if a.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::invalid(name, "axis must be strictly increasing"));
            }
        }
        Ok(ImageVolume { x, y, z, values, complex: None, meta })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.values.dim()
    }

    /// Names of the non-singleton axes.
    pub fn dims(&self) -> Vec<&'static str> {
        [("x", self.x.len()), ("y", self.y.len()), ("z", self.z.len())]
            .into_iter()
            .filter(|(_, n)| *n > 1)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn position(&self, idx: [usize; 3]) -> [f64; 3] {
        [self.x[idx[0]], self.y[idx[1]], self.z[idx[2]]]
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    /// Index of the largest value (first on ties).
    pub fn argmax(&self) -> [usize; 3] {
        let mut best = [0; 3];
        let mut v = f64::NEG_INFINITY;
        for ((i, j, k), &x) in self.values.indexed_iter() {
            if x > v {
                v = x;
                best = [i, j, k];
            }
        }
        best
    }

    /// Index of the largest value inside a box of half-widths `radius` about `center`.
    pub fn local_argmax(&self, center: [usize; 3], radius: [usize; 3]) -> [usize; 3] {
        let (nx, ny, nz) = self.shape();
        let range = |c: usize, r: usize, n: usize| c.saturating_sub(r)..(c + r + 1).min(n);
        let mut best = center;
        let mut v = f64::NEG_INFINITY;
        for i in range(center[0], radius[0], nx) {
            for j in range(center[1], radius[1], ny) {
                for k in range(center[2], radius[2], nz) {
                    if self.values[[i, j, k]] > v {
                        v = self.values[[i, j, k]];
                        best = [i, j, k];
                    }
                }
            }
        }
        best
    }

    /// Nearest voxel to a physical position.
    pub fn nearest_index(&self, p: [f64; 3]) -> [usize; 3] {
        let near = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
                .map(|(i, _)| i)
                .unwrap_or(0)
        };
        [near(&self.x, p[0]), near(&self.y, p[1]), near(&self.z, p[2])]
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Plane at z-index `iz` in decibels relative to the volume peak, floored at `db_min`.
    pub fn slice_db(&self, iz: usize, db_min: f64) -> Vec<Vec<f64>> {
        let peak = self.max();
        (0..self.x.len())
            .map(|i| {
                (0..self.y.len())
                    .map(|j| {
                        let v = self.values[[i, j, iz]];
                        if peak > 0.0 && v > 0.0 {
                            (20.0 * (v / peak).log10()).max(db_min)
                        } else {
                            db_min
                        }
                    })
                    .collect()
            })
            .collect()
    }
}
