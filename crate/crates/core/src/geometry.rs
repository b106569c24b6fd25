//! MIMO arrays, scan patterns and the synthesized aperture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

#[inline]
pub fn dist(a: &Vec3, b: &Vec3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Transmit and receive element layout on the array plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaArray {
    #[serde(rename = "tx_m")]
    pub tx: Vec<[f64; 2]>,
    #[serde(rename = "rx_m")]
    pub rx: Vec<[f64; 2]>,
    #[serde(rename = "z_m", default)]
    pub z: f64,
    /// Replace each Tx/Rx pair by a monostatic element at its midpoint.
    #[serde(default)]
    pub use_epc: bool,
}

impl AntennaArray {
    /// A single collocated transceiver at the origin.
    pub fn monostatic() -> Self {
        AntennaArray { tx: vec![[0.0, 0.0]], rx: vec![[0.0, 0.0]], z: 0.0, use_epc: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tx.is_empty() {
            return Err(Error::invalid("tx_m", "at least one transmitter is required"));
        }
        if self.rx.is_empty() {
            return Err(Error::invalid("rx_m", "at least one receiver is required"));
        }
        let finite = |list: &[[f64; 2]], name: &str| {
            for (i, p) in list.iter().enumerate() {
                if !p.iter().all(|v| v.is_finite()) {
                    return Err(Error::invalid(format!("{name}[{i}]"), "position is not finite"));
                }
            }
            Ok(())
        };
        finite(&self.tx, "tx_m")?;
        finite(&self.rx, "rx_m")?;
        if !self.z.is_finite() {
            return Err(Error::invalid("z_m", "must be finite"));
        }
        Ok(())
    }

    /// Midpoints of every Tx/Rx pair, Tx-major.
    pub fn virtual_elements(&self) -> Vec<[f64; 2]> {
        self.tx
            .iter()
            .flat_map(|t| self.rx.iter().map(move |r| [(t[0] + r[0]) / 2.0, (t[1] + r[1]) / 2.0]))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    Linear,
    Rectilinear,
    Circular,
    Cylindrical,
    Irregular,
}

impl ScanMode {
    pub fn is_angular(self) -> bool {
        matches!(self, ScanMode::Circular | ScanMode::Cylindrical)
    }
}

/// Step sizes and counts for the regular scan modes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatternSpec {
    pub dx_m: f64,
    pub dy_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub theta_max_rad: f64,
    pub n_theta: usize,
    pub ring_radius_m: f64,
}

impl Default for PatternSpec {
    fn default() -> Self {
        PatternSpec {
            dx_m: 0.0,
            dy_m: 0.0,
            nx: 1,
            ny: 1,
            theta_max_rad: 0.0,
            n_theta: 1,
            ring_radius_m: 0.0,
        }
    }
}

/// Parameters of a randomly perturbed multi-planar track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrregularSpec {
    #[serde(default)]
    pub extent_x_m: f64,
    #[serde(default)]
    pub extent_y_m: f64,
    pub dz_max_m: f64,
    pub count: usize,
    #[serde(default)]
    pub seed: u64,
}

/// One platform position. Planar modes use `x`/`y`; angular modes use
/// `theta` and `y`; `dz` is the offset of the scan plane from the nominal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub dz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanPattern {
    pub mode: ScanMode,
    pub spec: PatternSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub irregular: Option<IrregularSpec>,
    #[serde(skip)]
    pub poses: Vec<ScanPose>,
}

impl ScanPattern {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Poses as (x or θ, y, dz) triples in pattern order.
    pub fn triples(&self) -> Vec<[f64; 3]> {
        let angular = self.mode.is_angular();
        self.poses
            .iter()
            .map(|p| [if angular { p.theta } else { p.x }, p.y, p.dz])
            .collect()
    }

    pub fn from_triples(mode: ScanMode, spec: PatternSpec, irregular: Option<IrregularSpec>, t: &[[f64; 3]]) -> Self {
        let angular = mode.is_angular();
        let poses = t
            .iter()
            .map(|v| ScanPose {
                x: if angular { 0.0 } else { v[0] },
                y: v[1],
                theta: if angular { v[0] } else { 0.0 },
                dz: v[2],
            })
            .collect();
        ScanPattern { mode, spec, irregular, poses }
    }
}

fn centered(i: usize, n: usize, step: f64) -> f64 {
    (i as f64 - (n as f64 - 1.0) / 2.0) * step
}

fn need_step(count: usize, step: f64, name: &str) -> Result<()> {
    if count > 1 && !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid(name, "step must be positive when more than one sample is used"));
    }
    Ok(())
}

fn need_count(count: usize, name: &str) -> Result<()> {
    if count == 0 {
        return Err(Error::invalid(name, "count must be at least 1"));
    }
    Ok(())
}

/// Angle of sample `n` of `n_theta` spanning `theta_max` centered on zero.
pub fn circular_angle(n: usize, n_theta: usize, theta_max: f64) -> f64 {
    -theta_max / 2.0 + (n as f64 + 0.5) * theta_max / n_theta as f64
}

/// Regular scan pattern. Ordering is row-major with y fastest; for the
/// cylindrical mode θ is the outer index.
pub fn gen_pattern(mode: ScanMode, spec: &PatternSpec) -> Result<ScanPattern> {
    let mut poses = Vec::new();
    let planar = |x: f64, y: f64| ScanPose { x, y, theta: 0.0, dz: 0.0 };
    match mode {
        ScanMode::Linear => {
            need_count(spec.ny, "ny")?;
            need_step(spec.ny, spec.dy_m, "dy_m")?;
            poses.extend((0..spec.ny).map(|iy| planar(0.0, centered(iy, spec.ny, spec.dy_m))));
        }
        ScanMode::Rectilinear => {
            need_count(spec.nx, "nx")?;
            need_count(spec.ny, "ny")?;
            need_step(spec.nx, spec.dx_m, "dx_m")?;
            need_step(spec.ny, spec.dy_m, "dy_m")?;
            for ix in 0..spec.nx {
                let x = centered(ix, spec.nx, spec.dx_m);
                poses.extend((0..spec.ny).map(|iy| planar(x, centered(iy, spec.ny, spec.dy_m))));
            }
        }
        ScanMode::Circular | ScanMode::Cylindrical => {
            need_count(spec.n_theta, "n_theta")?;
            if !(spec.ring_radius_m > 0.0 && spec.ring_radius_m.is_finite()) {
                return Err(Error::invalid("ring_radius_m", "must be positive for angular modes"));
            }
            if !(spec.theta_max_rad > 0.0 && spec.theta_max_rad <= 2.0 * std::f64::consts::PI + 1e-12) {
                return Err(Error::invalid("theta_max_rad", "must lie in (0, 2π]"));
            }
            let ny = if mode == ScanMode::Cylindrical { spec.ny } else { 1 };
            need_count(ny, "ny")?;
            need_step(ny, spec.dy_m, "dy_m")?;
            for n in 0..spec.n_theta {
                let theta = circular_angle(n, spec.n_theta, spec.theta_max_rad);
                poses.extend(
                    (0..ny).map(|iy| ScanPose { x: 0.0, y: centered(iy, ny, spec.dy_m), theta, dz: 0.0 }),
                );
            }
        }
        ScanMode::Irregular => {
            return Err(Error::invalid("mode", "irregular patterns are generated from an irregular spec"));
        }
    }
    Ok(ScanPattern { mode, spec: *spec, irregular: None, poses })
}

/// Regular raster underlying an irregular track.
pub fn irregular_base_spec(extent_x: f64, extent_y: f64, count: usize) -> Result<PatternSpec> {
    if count < 2 {
        return Err(Error::invalid("count", "at least two poses are required"));
    }
    if !(extent_x >= 0.0 && extent_y >= 0.0) || (extent_x == 0.0 && extent_y == 0.0) {
        return Err(Error::invalid("extent_y_m", "extents must be nonnegative and not both zero"));
    }
    let (nx, ny) = if extent_x == 0.0 {
        (1, count)
    } else if extent_y == 0.0 {
        (count, 1)
    } else {
        let n = (count as f64).sqrt().ceil() as usize;
        (n, n)
    };
    let step = |extent: f64, n: usize| if n > 1 { extent / (n - 1) as f64 } else { 0.0 };
    Ok(PatternSpec { dx_m: step(extent_x, nx), dy_m: step(extent_y, ny), nx, ny, ..PatternSpec::default() })
}

/// Smoothed random walk of length `n` normalized to a peak magnitude of one
/// about its mid-range.
pub fn semi_smooth_track(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    let walk: Vec<f64> = (0..n)
        .map(|_| {
            let g: f64 = StandardNormal.sample(&mut rng);
            acc += g;
            acc
        })
        .collect();
    let half = (n / 32).max(3) / 2;
    let smooth: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            walk[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect();
    let max = smooth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = smooth.iter().cloned().fold(f64::INFINITY, f64::min);
    let mid = (max + min) / 2.0;
    let radius = (max - min) / 2.0;
    if radius <= 0.0 {
        return vec![0.0; n];
    }
    smooth.iter().map(|v| ((v - mid) / radius).clamp(-1.0, 1.0)).collect()
}

/// Irregular multi-planar track: a regular raster in (x', y') whose scan
/// plane offset follows a semi-smooth random curve bounded by `dz_max_m`.
pub fn gen_irregular(spec: &IrregularSpec) -> Result<ScanPattern> {
    if !(spec.dz_max_m >= 0.0 && spec.dz_max_m.is_finite()) {
        return Err(Error::invalid("dz_max_m", "must be nonnegative"));
    }
    let base = irregular_base_spec(spec.extent_x_m, spec.extent_y_m, spec.count)?;
    let raster = gen_pattern(ScanMode::Rectilinear, &base)?;
    let shape = semi_smooth_track(spec.count, spec.seed);
    let poses = raster
        .poses
        .iter()
        .take(spec.count)
        .zip(shape)
        .map(|(p, s)| ScanPose { dz: if spec.dz_max_m == 0.0 { 0.0 } else { s * spec.dz_max_m }, ..*p })
        .collect();
    Ok(ScanPattern { mode: ScanMode::Irregular, spec: base, irregular: Some(*spec), poses })
}

/// One synthetic-aperture sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AperturePose {
    pub tx: Vec3,
    pub rx: Vec3,
    #[serde(rename = "virtual")]
    pub virt: Vec3,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl AperturePose {
    pub fn new(tx: Vec3, rx: Vec3, dz: f64) -> Self {
        AperturePose {
            tx,
            rx,
            virt: [(tx[0] + rx[0]) / 2.0, (tx[1] + rx[1]) / 2.0, (tx[2] + rx[2]) / 2.0],
            dx: rx[0] - tx[0],
            dy: rx[1] - tx[1],
            dz,
        }
    }

    pub fn monostatic(p: Vec3, dz: f64) -> Self {
        AperturePose::new(p, p, dz)
    }

    pub fn to_array(&self) -> [f64; 12] {
        let mut a = [0.0; 12];
        a[..3].copy_from_slice(&self.tx);
        a[3..6].copy_from_slice(&self.rx);
        a[6..9].copy_from_slice(&self.virt);
        a[9] = self.dx;
        a[10] = self.dy;
        a[11] = self.dz;
        a
    }

    pub fn from_array(a: &[f64]) -> Self {
        AperturePose {
            tx: [a[0], a[1], a[2]],
            rx: [a[3], a[4], a[5]],
            virt: [a[6], a[7], a[8]],
            dx: a[9],
            dy: a[10],
            dz: a[11],
        }
    }
}

/// Expands a scan pattern into Tx/Rx poses: one per scan position and
/// Tx/Rx pair (Tx-major, Rx fastest), or one per virtual element when the
/// array uses equivalent phase centers.
///
/// Planar modes place the array on the plane `z0 + dz`. Angular modes place
/// element offsets tangentially on a ring of the pattern radius about the
/// y axis, at `(R cosθ, y', R sinθ)`; `z0` is not used there.
pub fn synthesize_aperture(array: &AntennaArray, pattern: &ScanPattern, z0: f64) -> Result<Vec<AperturePose>> {
    array.validate()?;
    if pattern.is_empty() {
        return Err(Error::invalid("pattern", "no scan poses"));
    }
    let pairs: Vec<([f64; 2], [f64; 2])> = if array.use_epc {
        array.virtual_elements().into_iter().map(|v| (v, v)).collect()
    } else {
        array.tx.iter().flat_map(|t| array.rx.iter().map(move |r| (*t, *r))).collect()
    };
    let radius = pattern.spec.ring_radius_m;
    let angular = pattern.mode.is_angular();
    let mut out = Vec::with_capacity(pattern.len() * pairs.len());
    for p in &pattern.poses {
        let place = |e: &[f64; 2]| -> Vec3 {
            if angular {
                let (s, c) = p.theta.sin_cos();
                [radius * c - e[0] * s, p.y + e[1], radius * s + e[0] * c]
            } else {
                [p.x + e[0], p.y + e[1], z0 + p.dz]
            }
        };
        for (t, r) in &pairs {
            out.push(AperturePose::new(place(t), place(r), p.dz));
        }
    }
    Ok(out)
}

/// Extent of the virtual positions along x and y.
pub fn aperture_extent(poses: &[AperturePose]) -> (f64, f64) {
    let span = |axis: usize| {
        let (lo, hi) = poses
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.virt[axis]), hi.max(p.virt[axis])));
        if hi >= lo {
            hi - lo
        } else {
            0.0
        }
    };
    (span(0), span(1))
}
