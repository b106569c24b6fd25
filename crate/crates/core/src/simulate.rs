//! Beat-signal synthesis, noise, and aperture phase compensations.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, AperturePose, Vec3};
use crate::scene::Scene;
use crate::waveform::DerivedWaveform;

/// Phase convention of stored samples. Only `exp(-jkR)` is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PhaseConvention {
    #[serde(rename = "exp(-jkR)")]
    NegativeExponent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeMeta {
    pub pathloss: bool,
    pub convention: PhaseConvention,
    /// Phase compensations applied so far, in order.
    #[serde(default)]
    pub compensations: Vec<String>,
}

impl Default for CubeMeta {
    fn default() -> Self {
        CubeMeta { pathloss: false, convention: PhaseConvention::NegativeExponent, compensations: Vec::new() }
    }
}

/// Complex beat samples, one row per aperture pose and one column per wavenumber.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatCube {
    pub samples: Array2<Complex64>,
    pub poses: Vec<AperturePose>,
    pub waveform: DerivedWaveform,
    pub meta: CubeMeta,
}

impl BeatCube {
    pub fn new(samples: Array2<Complex64>, poses: Vec<AperturePose>, waveform: DerivedWaveform, meta: CubeMeta) -> Result<Self> {
        if samples.nrows() != poses.len() || samples.ncols() != waveform.nk() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} samples for {} poses and {} wavenumbers",
                samples.nrows(),
                samples.ncols(),
                poses.len(),
                waveform.nk()
            )));
        }
        Ok(BeatCube { samples, poses, waveform, meta })
    }

    pub fn num_poses(&self) -> usize {
        self.poses.len()
    }

    pub fn power(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.samples.len().max(1) as f64
    }

    /// Multiplies row `s` by `exp(+j k_n phase(s))` and replaces the poses.
    fn phase_shifted(&self, path: impl Fn(&AperturePose) -> f64 + Sync, poses: Vec<AperturePose>, tag: &str) -> BeatCube {
        let mut samples = self.samples.clone();
        let wf = self.waveform;
        samples
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(self.poses.par_iter())
            .for_each(|(mut row, pose)| {
                let beta = path(pose);
                for (n, v) in row.iter_mut().enumerate() {
                    *v *= Complex64::from_polar(1.0, wf.k(n) * beta);
                }
            });
        let mut meta = self.meta.clone();
        meta.compensations.push(tag.into());
        BeatCube { samples, poses, waveform: wf, meta }
    }
}

/// Simulated beat samples `Σ α A exp(-j k_n (R_T + R_R))` with exact
/// Euclidean distances; `A = 1/(R_T R_R)` when `pathloss` is set.
pub fn beat_signal(scene: &Scene, poses: &[AperturePose], waveform: &DerivedWaveform, pathloss: bool) -> Result<BeatCube> {
    scene.validate()?;
    if poses.is_empty() {
        return Err(Error::invalid("poses", "aperture is empty"));
    }
    for (p, pose) in poses.iter().enumerate() {
        for (i, s) in scene.scatterers.iter().enumerate() {
            if dist(&pose.tx, &s.position) < 1e-12 || dist(&pose.rx, &s.position) < 1e-12 {
                return Err(Error::Singularity { pose: p, scatterer: i });
            }
        }
    }
    let nk = waveform.nk();
    let mut samples = Array2::<Complex64>::zeros((poses.len(), nk));
    samples
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(poses.par_iter())
        .for_each(|(mut row, pose)| {
            for s in &scene.scatterers {
                let rt = dist(&pose.tx, &s.position);
                let rr = dist(&pose.rx, &s.position);
                let amp = if pathloss { s.reflectivity / (rt * rr) } else { s.reflectivity };
                let r = rt + rr;
                for (n, v) in row.iter_mut().enumerate() {
                    *v += amp * Complex64::from_polar(1.0, -waveform.k(n) * r);
                }
            }
        });
    BeatCube::new(samples, poses.to_vec(), *waveform, CubeMeta { pathloss, ..CubeMeta::default() })
}

/// Adds circular white Gaussian noise at the given SNR relative to the mean
/// sample power of the cube. An infinite SNR returns the cube unchanged.
pub fn add_awgn(cube: &BeatCube, snr_db: f64, seed: u64) -> BeatCube {
    if snr_db == f64::INFINITY {
        return cube.clone();
    }
    let sigma = (cube.power() / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = cube.clone();
    for v in out.samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(re, im) * sigma;
    }
    out
}

/// Converts multistatic samples to equivalent monostatic samples at each
/// pair's midpoint, referenced to range `z_ref`.
pub fn mult_to_mono(cube: &BeatCube, z_ref: f64) -> Result<BeatCube> {
    if !(z_ref > 0.0 && z_ref.is_finite()) {
        return Err(Error::invalid("z_ref_m", "must be positive"));
    }
    let poses = cube.poses.iter().map(|p| AperturePose::monostatic(p.virt, p.dz)).collect();
    Ok(cube.phase_shifted(|p| (p.dx * p.dx + p.dy * p.dy) / (4.0 * z_ref), poses, "mult_to_mono"))
}

/// Residual round-trip path of a multistatic multi-planar pose relative to a
/// monostatic element on the reference plane, for a scene at distance
/// `distance` on the side given by `sign` (+1 when the plane lies above the scene).
pub fn empm_beta(dx: f64, dy: f64, dz: f64, distance: f64, sign: f64) -> f64 {
    2.0 * dz * sign + (dx * dx + dy * dy) / (4.0 * distance)
}

/// Reference geometry for multi-planar compensation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpmReference {
    /// Plane the samples are projected onto (m).
    pub plane_z_m: f64,
    /// Range coordinate of the scene center (m).
    pub scene_z_m: f64,
}

/// Projects multi-planar multistatic samples onto the plane `z0` with the
/// scene at the origin.
pub fn empm_compensate(cube: &BeatCube, z0: f64) -> Result<BeatCube> {
    if !(z0 > 0.0 && z0.is_finite()) {
        return Err(Error::invalid("Z0_m", "must be positive"));
    }
    empm_compensate_with(cube, EmpmReference { plane_z_m: z0, scene_z_m: 0.0 })
}

/// Multi-planar compensation for an arbitrary plane and scene center. Each
/// row is multiplied by `exp(+j k_n β)` and the pose replaced by a monostatic
/// element at its midpoint on the reference plane.
pub fn empm_compensate_with(cube: &BeatCube, reference: EmpmReference) -> Result<BeatCube> {
    let offset = reference.plane_z_m - reference.scene_z_m;
    if !(offset.abs() > 0.0 && offset.is_finite()) {
        return Err(Error::invalid("Z0_m", "reference plane must not contain the scene center"));
    }
    let sign = offset.signum();
    let distance = offset.abs();
    let plane = reference.plane_z_m;
    let poses = cube
        .poses
        .iter()
        .map(|p| AperturePose::monostatic([p.virt[0], p.virt[1], plane], 0.0))
        .collect();
    Ok(cube.phase_shifted(|p| empm_beta(p.dx, p.dy, p.virt[2] - plane, distance, sign), poses, "empm"))
}

pub fn round_trip_exact(pose: &AperturePose, p: &Vec3) -> f64 {
    dist(&pose.tx, p) + dist(&pose.rx, p)
}

/// Second-order Taylor expansion of the round trip in the pair separations
/// and the plane offset about a monostatic element at `(x', y', z0)`.
pub fn round_trip_taylor(pose: &AperturePose, p: &Vec3, z0: f64) -> f64 {
    let ux = pose.virt[0] - p[0];
    let uy = pose.virt[1] - p[1];
    let uz = z0 - p[2];
    let dz = pose.tx[2] - z0;
    let (dx, dy) = (pose.dx, pose.dy);
    let r0 = (ux * ux + uy * uy + uz * uz).sqrt();
    let cross = ux * dx + uy * dy;
    2.0 * r0 + 2.0 * uz * dz / r0 + (dx * dx + dy * dy + 4.0 * dz * dz) / (4.0 * r0)
        - (cross * cross + 4.0 * uz * uz * dz * dz) / (4.0 * r0.powi(3))
}

/// Pose with Tx/Rx separated by `(dx, dy)` about `(x', y')` on the plane `z0 + dz`.
pub fn offset_pose(x: f64, y: f64, z0: f64, dx: f64, dy: f64, dz: f64) -> AperturePose {
    let z = z0 + dz;
    AperturePose::new([x - dx / 2.0, y - dy / 2.0, z], [x + dx / 2.0, y + dy / 2.0, z], dz)
}
