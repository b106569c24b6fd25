use std::time::Instant;

use ndarray::Array3;
use num_complex::Complex64;
use rayon::prelude::*;

use super::{ImageGrid, ImageVolume, ReconOptions};
use crate::error::Result;
use crate::geometry::{dist, Vec3};
use crate::simulate::BeatCube;

const LANES: usize = 16;
const CHUNK: usize = 64;

/// Back-projection: the exact matched filter
/// `|Σ_s Σ_n s[s][n] exp(+j k_n (R_T + R_R))|` at every voxel.
pub fn bpa(cube: &BeatCube, grid: &ImageGrid) -> Result<ImageVolume> {
    bpa_with(cube, grid, &ReconOptions::default())
}

pub fn bpa_with(cube: &BeatCube, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    grid.validate()?;
    let start = Instant::now();
    let (xs, ys, zs) = (grid.x.values(), grid.y.values(), grid.z.values());
    let (nx, ny, nz) = grid.shape();
    let voxel = |i: usize| -> Vec3 { [xs[i / (ny * nz)], ys[(i / nz) % ny], zs[i % nz]] };
    let samples = cube.samples.as_standard_layout();
    let nk = cube.waveform.nk();
    let (k0, dk) = (cube.waveform.k0, cube.waveform.dk);

    let mut out = vec![Complex64::new(0.0, 0.0); nx * ny * nz];
    out.par_chunks_mut(CHUNK).enumerate().for_each(|(c, chunk)| {
        let first = c * CHUNK;
        let groups = chunk.len().div_ceil(LANES);
        let pos: Vec<Vec3> = (0..groups * LANES).map(|i| voxel((first + i).min(first + chunk.len() - 1))).collect();
        let mut acc = vec![Complex64::new(0.0, 0.0); groups * LANES];
        for (s, pose) in cube.poses.iter().enumerate() {
            let row = &samples.row(s).to_slice().expect("standard layout")[..nk];
            for g in 0..groups {
                let mut wr = [0.0; LANES];
                let mut wi = [0.0; LANES];
                let mut br = [0.0; LANES];
                let mut bi = [0.0; LANES];
                for l in 0..LANES {
                    let p = &pos[g * LANES + l];
                    let r = dist(&pose.tx, p) + dist(&pose.rx, p);
                    (wi[l], wr[l]) = (dk * r).sin_cos();
                    (bi[l], br[l]) = (k0 * r).sin_cos();
                }
                let mut hr = [0.0; LANES];
                let mut hi = [0.0; LANES];
                for v in row.iter().rev() {
                    for l in 0..LANES {
                        let r = hr[l] * wr[l] - hi[l] * wi[l] + v.re;
                        let i = hr[l] * wi[l] + hi[l] * wr[l] + v.im;
                        hr[l] = r;
                        hi[l] = i;
                    }
                }
                for l in 0..LANES {
                    acc[g * LANES + l] += Complex64::new(hr[l] * br[l] - hi[l] * bi[l], hr[l] * bi[l] + hi[l] * br[l]);
                }
            }
        }
        chunk.copy_from_slice(&acc[..chunk.len()]);
    });
    let data = Array3::from_shape_vec((nx, ny, nz), out).expect("grid shape");
    let mut img = ImageVolume::from_complex(grid, data, "bpa", opts.keep_complex);
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_pattern, synthesize_aperture, AntennaArray, AperturePose, PatternSpec, ScanMode};
    use crate::recon::AxisSpec;
    use crate::scene::{PointScatterer, Scene};
    use crate::simulate::beat_signal;
    use crate::waveform::{derive_waveform, WaveformParams};

    fn setup() -> (BeatCube, ImageGrid) {
        let w = derive_waveform(&WaveformParams::from_band(77e9, 4e9, 32)).unwrap();
        let spec = PatternSpec { dx_m: 2e-3, dy_m: 2e-3, nx: 24, ny: 24, ..Default::default() };
        let poses = synthesize_aperture(&AntennaArray::monostatic(), &gen_pattern(ScanMode::Rectilinear, &spec).unwrap(), 0.0).unwrap();
        let cube = beat_signal(&Scene::new(vec![PointScatterer::unit([0.004, -0.002, 0.25])], ""), &poses, &w, false).unwrap();
        let grid = ImageGrid {
            x: AxisSpec::new(-0.01, 0.01, 11),
            y: AxisSpec::new(-0.01, 0.01, 11),
            z: AxisSpec::new(0.2, 0.3, 11),
        };
        (cube, grid)
    }

    #[test]
    fn focuses_single_point() {
        let (cube, grid) = setup();
        let img = bpa(&cube, &grid).unwrap();
        assert_eq!(img.argmax(), [7, 4, 5]);
    }

    #[test]
    fn matches_direct_sum() {
        let (cube, grid) = setup();
        let img = bpa(&cube, &grid).unwrap();
        let p = [grid.x.values()[3], grid.y.values()[9], grid.z.values()[2]];
        let mut want = Complex64::new(0.0, 0.0);
        for (s, pose) in cube.poses.iter().enumerate() {
            let r = dist(&pose.tx, &p) + dist(&pose.rx, &p);
            for n in 0..cube.waveform.nk() {
                want += cube.samples[[s, n]] * Complex64::from_polar(1.0, cube.waveform.k(n) * r);
            }
        }
        assert!((img.values[[3, 9, 2]] - want.norm()).abs() < 1e-9 * want.norm().max(1.0));
    }

    #[test]
    fn zero_cube_and_linearity() {
        let (mut cube, grid) = setup();
        let img = bpa(&cube, &grid).unwrap();
        cube.samples.mapv_inplace(|v| v * 2.5);
        let scaled = bpa(&cube, &grid).unwrap();
        for (a, b) in img.values.iter().zip(scaled.values.iter()) {
            assert!((a * 2.5 - b).abs() <= 1e-12 * b.max(1.0));
        }
        cube.samples.fill(Complex64::new(0.0, 0.0));
        assert!(bpa(&cube, &grid).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let (cube, grid) = setup();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| bpa(&cube, &grid).unwrap());
        let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| bpa(&cube, &grid).unwrap());
        assert_eq!(one.values, three.values);
    }

    #[test]
    fn multistatic_poses_focus() {
        let w = derive_waveform(&WaveformParams::from_band(77e9, 4e9, 32)).unwrap();
        let poses: Vec<_> = (0..40)
            .map(|i| {
                let y = -0.04 + i as f64 * 2e-3;
                AperturePose::new([0.0, y - 0.005, 0.0], [0.0, y + 0.005, 0.0], 0.0)
            })
            .collect();
        let cube = beat_signal(&Scene::new(vec![PointScatterer::unit([0.0, 0.01, 0.3])], ""), &poses, &w, false).unwrap();
        let grid = ImageGrid { x: AxisSpec::single(0.0), y: AxisSpec::new(-0.02, 0.02, 21), z: AxisSpec::new(0.25, 0.35, 11) };
        let img = bpa(&cube, &grid).unwrap();
        assert_eq!(img.argmax(), [0, 15, 5]);
    }
}
