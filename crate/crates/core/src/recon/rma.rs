use std::time::Instant;

use ndarray::parallel::prelude::*;
use ndarray::{Array3, ArrayView1, ArrayViewMut1, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::{fft_along, fft_wavenumbers, padded, periodic_taps};
use super::lattice::{uniform_lattice, PlanarLattice};
use super::{AxisSpec, ImageGrid, ImageVolume, ReconOptions};
use crate::error::{Error, Result};
use crate::simulate::BeatCube;
use crate::waveform::DerivedWaveform;

/// Evenly spaced axis `start + step·i`, `i < len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformAxis {
    pub fn value(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    pub fn of_waveform(w: &DerivedWaveform) -> Self {
        UniformAxis { start: w.k0, step: w.dk, len: w.nk() }
    }
}

/// Spectral variable held along the last axis of a [`SpectrumGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralAxis {
    /// Temporal wavenumber k (rad/m).
    Wavenumber,
    /// Range wavenumber k_z (rad/m).
    Kz,
}

/// Complex samples on `(k_x, k_y, ·)` with the last axis given by `axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub data: Array3<Complex64>,
    pub kx: Vec<f64>,
    pub ky: Vec<f64>,
    pub axis: UniformAxis,
    pub kind: SpectralAxis,
}

fn default_nfft(n: usize) -> usize {
    if n == 1 {
        1
    } else {
        (2 * n).next_power_of_two()
    }
}

fn choose_nfft(requested: Option<usize>, n: usize, name: &str) -> Result<usize> {
    let nfft = requested.unwrap_or_else(|| default_nfft(n));
    if nfft < n {
        return Err(Error::invalid(name, format!("FFT length {nfft} is shorter than the {n} aperture samples")));
    }
    Ok(nfft)
}

/// Spatial Fourier transform of lattice data over (x', y') referenced to the
/// coordinate origin, zero-padded to `nfft_x × nfft_y`.
pub fn aperture_spectrum(lat: &PlanarLattice, k_axis: UniformAxis, nfft_x: usize, nfft_y: usize) -> SpectrumGrid {
    let mut data = padded(&lat.data, (nfft_x, nfft_y, lat.data.dim().2));
    fft_along(&mut data, 0, false);
    fft_along(&mut data, 1, false);
    let kx = fft_wavenumbers(nfft_x, lat.dx);
    let ky = fft_wavenumbers(nfft_y, lat.dy);
    Zip::indexed(data.lanes_mut(Axis(2))).par_for_each(|(i, j), mut lane| {
        let shift = Complex64::from_polar(1.0, -(kx[i] * lat.x0 + ky[j] * lat.y0));
        lane.mapv_inplace(|v| v * shift);
    });
    SpectrumGrid { data, kx, ky, axis: k_axis, kind: SpectralAxis::Wavenumber }
}

/// Resamples every `(k_x, k_y)` column from the k axis onto the uniform
/// `kz_axis`, where `k = √(k_z² + k_x² + k_y²)/2`, by linear interpolation in k.
/// Samples outside the measured k support are zero. Any range phase
/// reference must already be applied to the input.
pub fn stolt(spectrum: &SpectrumGrid, kz_axis: UniformAxis) -> Result<SpectrumGrid> {
    if spectrum.kind != SpectralAxis::Wavenumber {
        return Err(Error::invalid("spectrum", "Stolt interpolation expects a wavenumber axis"));
    }
    let k = spectrum.axis;
    if !(k.step > 0.0) || k.len < 2 {
        return Err(Error::invalid("spectrum", "wavenumber axis must be increasing with at least two samples"));
    }
    let (nx, ny, _) = spectrum.data.dim();
    let mut out = Array3::<Complex64>::zeros((nx, ny, kz_axis.len));
    let (kx, ky) = (&spectrum.kx, &spectrum.ky);
    let last = (k.len - 1) as f64;
    Zip::indexed(out.lanes_mut(Axis(2))).and(spectrum.data.lanes(Axis(2))).par_for_each(
        |(i, j), mut dst: ArrayViewMut1<Complex64>, src: ArrayView1<Complex64>| {
            let kt2 = kx[i] * kx[i] + ky[j] * ky[j];
            for (q, d) in dst.iter_mut().enumerate() {
                let kz = kz_axis.value(q);
                if kz < 0.0 {
                    continue;
                }
                let f = ((kz * kz + kt2).sqrt() / 2.0 - k.start) / k.step;
                if !(0.0..=last).contains(&f) {
                    continue;
                }
                let i0 = (f.floor() as usize).min(k.len - 2);
                let w = f - i0 as f64;
                *d = src[i0] * (1.0 - w) + src[i0 + 1] * w;
            }
        },
    );
    Ok(SpectrumGrid { data: out, kx: kx.clone(), ky: ky.clone(), axis: kz_axis, kind: SpectralAxis::Kz })
}

/// Multiplies each sample by `k_z e^{+j k_z d}` with `k_z = √(4k² − k_x² − k_y²)`;
/// evanescent samples become zero.
fn migrate(spec: &mut SpectrumGrid, distance: f64) {
    let (kx, ky, axis) = (&spec.kx, &spec.ky, spec.axis);
    Zip::indexed(spec.data.lanes_mut(Axis(2))).par_for_each(|(i, j), mut lane| {
        let kt2 = kx[i] * kx[i] + ky[j] * ky[j];
        for (n, v) in lane.iter_mut().enumerate() {
            let k = axis.value(n);
            let kz2 = 4.0 * k * k - kt2;
            *v = if kz2 > 0.0 {
                let kz = kz2.sqrt();
                *v * kz * Complex64::from_polar(1.0, kz * distance)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
    });
}

/// Largest look angle between the aperture and the image grid.
fn support_angle(lat: &PlanarLattice, grid: &ImageGrid, opts: &ReconOptions) -> f64 {
    if let Some(deg) = opts.max_angle_deg {
        return deg.to_radians();
    }
    let ax = [lat.x0, lat.x(lat.nx() - 1)];
    let ay = [lat.y0, lat.y(lat.ny() - 1)];
    let span = |a: [f64; 2], g: &AxisSpec| (g.max_m - a[0]).abs().max((a[1] - g.min_m).abs());
    let lateral = if lat.nx() > 1 { span(ax, &grid.x).powi(2) } else { 0.0 } + span(ay, &grid.y).powi(2);
    let near = if (grid.z.min_m - lat.z) * (grid.z.max_m - lat.z) <= 0.0 {
        0.0
    } else {
        (grid.z.min_m - lat.z).abs().min((grid.z.max_m - lat.z).abs())
    };
    lateral.sqrt().atan2(near).clamp(10f64.to_radians(), 75f64.to_radians())
}

/// Samples a laterally inverse-transformed spectrum at requested (x, y)
/// positions by bilinear interpolation on the periodic natural grid.
struct LateralSampler {
    x: Vec<(usize, usize, f64)>,
    y: Vec<(usize, usize, f64)>,
}

impl LateralSampler {
    fn new(lat: &PlanarLattice, nfx: usize, nfy: usize, xs: &[f64], ys: &[f64]) -> Self {
        let tap = |v: f64, d: f64, n: usize| if n == 1 { (0, 0, 0.0) } else { periodic_taps(v / d, n) };
        LateralSampler {
            x: xs.iter().map(|&v| tap(v, lat.dx, nfx)).collect(),
            y: ys.iter().map(|&v| tap(v, lat.dy, nfy)).collect(),
        }
    }

    /// Natural-grid columns touched by the requested positions.
    fn columns(&self) -> Vec<(usize, usize)> {
        let mut cols: Vec<(usize, usize)> = self
            .x
            .iter()
            .flat_map(|&(a, b, _)| self.y.iter().flat_map(move |&(c, d, _)| [(a, c), (a, d), (b, c), (b, d)]))
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    fn sample(&self, i: usize, j: usize, at: impl Fn(usize, usize) -> Complex64) -> Complex64 {
        let (x0, x1, wx) = self.x[i];
        let (y0, y1, wy) = self.y[j];
        (at(x0, y0) * (1.0 - wy) + at(x0, y1) * wy) * (1.0 - wx) + (at(x1, y0) * (1.0 - wy) + at(x1, y1) * wy) * wx
    }
}

fn lattice_for(cube: &BeatCube, nx_required: Option<bool>, name: &str) -> Result<PlanarLattice> {
    let lat = uniform_lattice(cube)?;
    match nx_required {
        Some(true) if lat.nx() < 2 || lat.ny() < 2 => Err(Error::GeometryMismatch(format!(
            "{name} needs a rectilinear aperture, got {}x{} positions",
            lat.nx(),
            lat.ny()
        ))),
        Some(false) if lat.nx() != 1 => Err(Error::GeometryMismatch(format!(
            "{name} needs a linear aperture along y, got {} distinct x positions",
            lat.nx()
        ))),
        _ => Ok(lat),
    }
}

/// Range migration on a planar lattice: lateral FFT, k_z migration about the
/// grid center, Stolt interpolation, lateral inverse FFT and direct
/// evaluation of the range transform at the requested z samples.
pub(crate) fn rma_planar(lat: &PlanarLattice, wf: &DerivedWaveform, grid: &ImageGrid, opts: &ReconOptions, name: &str) -> Result<ImageVolume> {
    grid.validate()?;
    let start = Instant::now();
    let nfx = choose_nfft(opts.nfft_x, lat.nx(), "nfft_x")?;
    let nfy = choose_nfft(opts.nfft_y, lat.ny(), "nfft_y")?;
    let zc = grid.z.center();
    let offset = zc - lat.z;
    if offset == 0.0 {
        return Err(Error::GeometryMismatch("image grid is centered on the aperture plane".into()));
    }
    let look = offset.signum();

    let mut spec = aperture_spectrum(lat, UniformAxis::of_waveform(wf), nfx, nfy);
    migrate(&mut spec, offset.abs());
    let theta = support_angle(lat, grid, opts);
    let kz_min = 2.0 * wf.k0 * theta.cos();
    let kz_max = 2.0 * wf.k_max();
    let dkz = 2.0 * wf.dk;
    let nkz = ((kz_max - kz_min) / dkz).ceil() as usize + 1;
    let kz_axis = UniformAxis { start: kz_max - dkz * (nkz - 1) as f64, step: dkz, len: nkz };
    let mut p = stolt(&spec, kz_axis)?.data;
    drop(spec);
    fft_along(&mut p, 0, true);
    fft_along(&mut p, 1, true);
    let norm = 1.0 / (nfx * nfy) as f64;

    let (xs, ys, zs) = (grid.x.values(), grid.y.values(), grid.z.values());
    let sampler = LateralSampler::new(lat, nfx, nfy, &xs, &ys);
    let cols = sampler.columns();
    let profiles: Vec<Vec<Complex64>> = cols
        .par_iter()
        .map(|&(i, j)| {
            let lane = p.slice(ndarray::s![i, j, ..]);
            zs.iter()
                .map(|&z| {
                    let zeta = look * (z - zc);
                    let w = Complex64::from_polar(1.0, kz_axis.step * zeta);
                    let h = lane.iter().rev().fold(Complex64::new(0.0, 0.0), |h, v| h * w + v);
                    h * Complex64::from_polar(norm, kz_axis.start * zeta)
                })
                .collect()
        })
        .collect();
    let lookup = |i: usize, j: usize| cols.binary_search(&(i, j)).expect("column computed");
    let (nx, ny, nz) = grid.shape();
    let data = Array3::from_shape_fn((nx, ny, nz), |(i, j, k)| sampler.sample(i, j, |a, b| profiles[lookup(a, b)][k]));
    let mut img = ImageVolume::from_complex(grid, data, name, opts.keep_complex);
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

/// Planar focusing at range `z0`: lateral FFT, `k_z e^{+j k_z |z0 − Z0|}`
/// weighting summed over k, lateral inverse FFT.
fn fft_planar(lat: &PlanarLattice, wf: &DerivedWaveform, z0: f64, xs: AxisSpec, ys: AxisSpec, opts: &ReconOptions, name: &str) -> Result<ImageVolume> {
    let grid = ImageGrid { x: xs, y: ys, z: AxisSpec::single(z0) };
    grid.validate()?;
    let start = Instant::now();
    let nfx = choose_nfft(opts.nfft_x, lat.nx(), "nfft_x")?;
    let nfy = choose_nfft(opts.nfft_y, lat.ny(), "nfft_y")?;
    let mut spec = aperture_spectrum(lat, UniformAxis::of_waveform(wf), nfx, nfy);
    migrate(&mut spec, (z0 - lat.z).abs());
    let mut plane = spec.data.sum_axis(Axis(2)).insert_axis(Axis(2));
    drop(spec);
    fft_along(&mut plane, 0, true);
    fft_along(&mut plane, 1, true);
    let norm = 1.0 / (nfx * nfy) as f64;
    let sampler = LateralSampler::new(lat, nfx, nfy, &grid.x.values(), &grid.y.values());
    let data = Array3::from_shape_fn(grid.shape(), |(i, j, _)| sampler.sample(i, j, |a, b| plane[[a, b, 0]]) * norm);
    let mut img = ImageVolume::from_complex(&grid, data, name, opts.keep_complex);
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

/// Cross-range profile along y at range `z0` from a uniform linear aperture
/// along y. Only `grid.y` is used; x is the aperture line and z is `z0`.
pub fn fft_linear_1d(cube: &BeatCube, z0: f64, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = lattice_for(cube, Some(false), "fft_linear_1d")?;
    fft_planar(&lat, &cube.waveform, z0, AxisSpec::single(lat.x0), grid.y, opts, "fft_linear_1d")
}

/// y–z image from a uniform linear aperture along y.
pub fn rma_linear_2d(cube: &BeatCube, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = lattice_for(cube, Some(false), "rma_linear_2d")?;
    let g = ImageGrid { x: AxisSpec::single(lat.x0), ..*grid };
    rma_planar(&lat, &cube.waveform, &g, opts, "rma_linear_2d")
}

/// x–y image at range `z0` from a uniform rectilinear aperture; `grid.z` is ignored.
pub fn fft_rectilinear_2d(cube: &BeatCube, z0: f64, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = lattice_for(cube, Some(true), "fft_rectilinear_2d")?;
    fft_planar(&lat, &cube.waveform, z0, grid.x, grid.y, opts, "fft_rectilinear_2d")
}

/// x–y–z image from a uniform rectilinear aperture.
pub fn rma_rectilinear_3d(cube: &BeatCube, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = lattice_for(cube, Some(true), "rma_rectilinear_3d")?;
    rma_planar(&lat, &cube.waveform, grid, opts, "rma_rectilinear_3d")
}
