use std::f64::consts::PI;
use std::time::Instant;

use ndarray::{Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::fft::{fft_along, fft_wavenumbers, periodic_taps, signed_bin};
use super::lattice::{accumulate_by, regular_axis};
use super::{AxisSpec, ImageGrid, ImageVolume, ReconOptions};
use crate::error::{Error, Result};
use crate::simulate::BeatCube;
use crate::waveform::DerivedWaveform;

/// Oversampling of the focused angular axis ahead of polar resampling.
const ALPHA_UPSAMPLE: usize = 4;

/// Cube samples arranged on a uniform (θ, y') grid, indexed `[iθ, iy, k]`.
struct AngularLattice {
    theta0: f64,
    dtheta: f64,
    full: bool,
    y0: f64,
    dy: f64,
    radius: f64,
    data: Array3<Complex64>,
}

fn angular_lattice(cube: &BeatCube, radius: f64, cylindrical: bool, name: &str) -> Result<AngularLattice> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::invalid("ring_radius_m", "must be positive"));
    }
    if cube.poses.is_empty() {
        return Err(Error::NonUniformAperture("no poses".into()));
    }
    for p in &cube.poses {
        let r = p.virt[0].hypot(p.virt[2]);
        if (r - radius).abs() > 1e-6 * radius {
            return Err(Error::GeometryMismatch(format!(
                "{name} needs poses on a ring of radius {radius} m about the y axis, found one at {r} m"
            )));
        }
    }
    let angle = |p: &crate::geometry::AperturePose| p.virt[2].atan2(p.virt[0]);
    let (theta0, dtheta, nt) = regular_axis(cube.poses.iter().map(angle).collect(), "theta")?;
    let (y0, dy, ny) = regular_axis(cube.poses.iter().map(|p| p.virt[1]).collect(), "y")?;
    if nt < 2 {
        return Err(Error::GeometryMismatch(format!("{name} needs at least two scan angles")));
    }
    if !cylindrical && ny != 1 {
        return Err(Error::GeometryMismatch(format!("{name} needs a single ring, found {ny} heights")));
    }
    if cylindrical && ny < 2 {
        return Err(Error::GeometryMismatch(format!("{name} needs at least two heights along y")));
    }
    let full = (nt as f64 * dtheta - 2.0 * PI).abs() < 1e-6;
    let idx = |v: f64, o: f64, d: f64, n: usize| -> Result<usize> {
        let f = if n == 1 { 0.0 } else { ((v - o) / d).round() };
        if f < 0.0 || f >= n as f64 {
            return Err(Error::NonUniformAperture("position outside the angular grid".into()));
        }
        Ok(f as usize)
    };
    let (data, count) = accumulate_by(cube, (nt, ny), |p| Ok((idx(angle(p), theta0, dtheta, nt)?, idx(p.virt[1], y0, dy, ny)?)))?;
    if let Some(((it, iy), _)) = count.indexed_iter().find(|(_, &c)| c == 0) {
        return Err(Error::NonUniformAperture(format!("angular cell ({it}, {iy}) has no sample")));
    }
    Ok(AngularLattice { theta0, dtheta, full, y0, dy, radius, data })
}

/// Focused polar spectrum on a fine uniform α axis, indexed `[iα, k]`.
struct PolarSpectrum {
    alpha0: f64,
    dalpha: f64,
    full: bool,
    data: Array2<Complex64>,
}

/// Angular matched filtering: correlates every k column with the ring
/// kernel `exp(-j k_r R₀ cos φ)` through FFTs over θ and returns the result
/// on an α grid refined by [`ALPHA_UPSAMPLE`].
fn polar_focus(slice: ArrayView2<Complex64>, kr: &[Option<f64>], lat: &AngularLattice, nfft: usize) -> PolarSpectrum {
    let nt = slice.dim().0;
    let up = ALPHA_UPSAMPLE * nfft;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(up);
    let keep = if lat.full { ALPHA_UPSAMPLE * nt } else { ALPHA_UPSAMPLE * (nt - 1) + 1 };
    let columns: Vec<Vec<Complex64>> = kr
        .par_iter()
        .enumerate()
        .map(|(n, kr)| {
            let Some(kr) = *kr else {
                return vec![Complex64::new(0.0, 0.0); keep];
            };
            let mut s = vec![Complex64::new(0.0, 0.0); nfft];
            s.iter_mut().zip(slice.column(n)).for_each(|(d, v)| *d = *v);
            fwd.process(&mut s);
            let mut h: Vec<Complex64> = (0..nfft)
                .map(|j| Complex64::from_polar(1.0, -kr * lat.radius * (signed_bin(j, nfft) * lat.dtheta).cos()))
                .collect();
            fwd.process(&mut h);
            let half = nfft.div_ceil(2);
            let mut z = vec![Complex64::new(0.0, 0.0); up];
            for q in 0..nfft {
                let dst = if q < half { q } else { up - (nfft - q) };
                z[dst] = s[q] * h[q].conj() / nfft as f64;
            }
            inv.process(&mut z);
            z.truncate(keep);
            z
        })
        .collect();
    let mut data = Array2::zeros((keep, kr.len()));
    for (n, col) in columns.into_iter().enumerate() {
        data.column_mut(n).iter_mut().zip(col).for_each(|(d, v)| *d = v);
    }
    PolarSpectrum { alpha0: lat.theta0, dalpha: lat.dtheta / ALPHA_UPSAMPLE as f64, full: lat.full, data }
}

/// Rectangular (K_x, K_z) samples of a polar spectrum.
struct RectSpectrum {
    kx: Vec<f64>,
    kz: Vec<f64>,
    data: Array2<Complex64>,
}

/// Bilinear polar-to-rectangular resampling of `F(α, k)` at
/// `K = k_r(k)·(cos α, sin α)` with `k = √(|K|² + κ²)/2`.
fn polar_to_rect(polar: &PolarSpectrum, wf: &DerivedWaveform, kappa: f64, kr: &[Option<f64>], dkr: f64) -> RectSpectrum {
    let valid: Vec<f64> = kr.iter().flatten().copied().collect();
    if valid.is_empty() {
        return RectSpectrum { kx: vec![0.0], kz: vec![0.0], data: Array2::zeros((1, 1)) };
    }
    let rho_min = valid.iter().cloned().fold(f64::INFINITY, f64::min);
    let rho_max = valid.iter().cloned().fold(0.0, f64::max);
    let na = polar.data.dim().0;
    let (a_lo, a_hi) = (polar.alpha0, polar.alpha0 + polar.dalpha * (na - 1) as f64);
    let (mut x_lo, mut x_hi, mut z_lo, mut z_hi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    if polar.full {
        (x_lo, x_hi, z_lo, z_hi) = (-rho_max, rho_max, -rho_max, rho_max);
    } else {
        let cardinal = (-4..=4).map(|q| q as f64 * PI / 2.0).filter(|a| (a_lo..=a_hi).contains(a));
        for a in [a_lo, a_hi].into_iter().chain(cardinal) {
            for r in [rho_min, rho_max] {
                let (s, c) = a.sin_cos();
                x_lo = x_lo.min(r * c);
                x_hi = x_hi.max(r * c);
                z_lo = z_lo.min(r * s);
                z_hi = z_hi.max(r * s);
            }
        }
    }
    let axis = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / dkr).ceil() as usize + 1;
        (0..n).map(|i| lo + dkr * i as f64).collect()
    };
    let (kx, kz) = (axis(x_lo, x_hi), axis(z_lo, z_hi));
    let nk = wf.nk();
    let data = Array2::from_shape_fn((kx.len(), kz.len()), |(i, j)| {
        let rho = kx[i].hypot(kz[j]);
        if rho < rho_min || rho > rho_max {
            return Complex64::new(0.0, 0.0);
        }
        let fk = ((rho * rho + kappa * kappa).sqrt() / 2.0 - wf.k0) / wf.dk;
        if !(0.0..=(nk - 1) as f64).contains(&fk) {
            return Complex64::new(0.0, 0.0);
        }
        let k0 = (fk.floor() as usize).min(nk.saturating_sub(2));
        let (k1, wk) = if nk == 1 { (0, 0.0) } else { (k0 + 1, fk - k0 as f64) };
        let fa = (kz[j].atan2(kx[i]) - polar.alpha0) / polar.dalpha;
        let (a0, a1, wa) = if polar.full {
            periodic_taps(fa, na)
        } else {
            let fa = if fa < 0.0 && fa > -1e-9 { 0.0 } else { fa };
            if !(0.0..=(na - 1) as f64).contains(&fa) {
                return Complex64::new(0.0, 0.0);
            }
            let a0 = (fa.floor() as usize).min(na - 2);
            (a0, a0 + 1, fa - a0 as f64)
        };
        let p = &polar.data;
        (p[[a0, k0]] * (1.0 - wk) + p[[a0, k1]] * wk) * (1.0 - wa) + (p[[a1, k0]] * (1.0 - wk) + p[[a1, k1]] * wk) * wa
    });
    RectSpectrum { kx, kz, data }
}

/// Inverse spatial transform `Σ F(K) e^{-j(K_x x + K_z z)}` evaluated at the requested x and z.
fn rect_image(rect: &RectSpectrum, xs: &[f64], zs: &[f64]) -> Array2<Complex64> {
    let ex = Array2::from_shape_fn((xs.len(), rect.kx.len()), |(a, i)| Complex64::from_polar(1.0, -rect.kx[i] * xs[a]));
    let ez = Array2::from_shape_fn((rect.kz.len(), zs.len()), |(j, c)| Complex64::from_polar(1.0, -rect.kz[j] * zs[c]));
    ex.dot(&rect.data).dot(&ez)
}

fn period_step(lat: &AngularLattice, wf: &DerivedWaveform, grid: &ImageGrid) -> f64 {
    let ext = [grid.x.min_m, grid.x.max_m, grid.z.min_m, grid.z.max_m]
        .iter()
        .fold(wf.range_resolution, |m, v| m.max(v.abs()));
    let period = 2.0 * lat.radius.min(2.0 * ext);
    2.0 * PI / period
}

fn theta_nfft(lat: &AngularLattice, opts: &ReconOptions) -> Result<usize> {
    let nt = lat.data.dim().0;
    if lat.full {
        return Ok(nt);
    }
    let nfft = opts.nfft_theta.unwrap_or((2 * nt).next_power_of_two());
    if nfft < 2 * nt - 1 {
        return Err(Error::invalid("nfft_theta", format!("must be at least {} for a partial arc of {nt} angles", 2 * nt - 1)));
    }
    Ok(nfft)
}

/// x–z image from a circular aperture about the y axis. Only `grid.x` and
/// `grid.z` are used.
pub fn pfa_circular_2d(cube: &BeatCube, ring_radius: f64, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = angular_lattice(cube, ring_radius, false, "pfa_circular_2d")?;
    let grid = ImageGrid { y: AxisSpec::single(lat.y0), ..*grid };
    grid.validate()?;
    let start = Instant::now();
    let wf = &cube.waveform;
    let nfft = theta_nfft(&lat, opts)?;
    let kr: Vec<Option<f64>> = (0..wf.nk()).map(|n| Some(2.0 * wf.k(n))).collect();
    let polar = polar_focus(lat.data.index_axis(Axis(1), 0), &kr, &lat, nfft);
    let rect = polar_to_rect(&polar, wf, 0.0, &kr, period_step(&lat, wf, &grid));
    let plane = rect_image(&rect, &grid.x.values(), &grid.z.values());
    let data = plane.insert_axis(Axis(1));
    let mut img = ImageVolume::from_complex(&grid, data, "pfa_circular_2d", opts.keep_complex);
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

/// x–y–z image from a cylindrical aperture (rings about the y axis stacked along y).
pub fn pfa_cylindrical_3d(cube: &BeatCube, ring_radius: f64, grid: &ImageGrid, opts: &ReconOptions) -> Result<ImageVolume> {
    let lat = angular_lattice(cube, ring_radius, true, "pfa_cylindrical_3d")?;
    grid.validate()?;
    let start = Instant::now();
    let wf = &cube.waveform;
    let (nt, ny, nk) = lat.data.dim();
    let nfft_theta = theta_nfft(&lat, opts)?;
    let nfy = opts.nfft_y.unwrap_or((2 * ny).next_power_of_two());
    if nfy < ny {
        return Err(Error::invalid("nfft_y", format!("FFT length {nfy} is shorter than the {ny} aperture heights")));
    }
    let mut spec = Array3::<Complex64>::zeros((nt, nfy, nk));
    spec.slice_mut(ndarray::s![.., ..ny, ..]).assign(&lat.data);
    fft_along(&mut spec, 1, false);
    let kappa = fft_wavenumbers(nfy, lat.dy);
    for (l, mut plane) in spec.axis_iter_mut(Axis(1)).enumerate() {
        let shift = Complex64::from_polar(1.0, -kappa[l] * lat.y0);
        plane.mapv_inplace(|v| v * shift);
    }

    let (xs, ys, zs) = (grid.x.values(), grid.y.values(), grid.z.values());
    let dkr = period_step(&lat, wf, grid);
    let planes: Vec<Array2<Complex64>> = (0..nfy)
        .map(|l| {
            let kr: Vec<Option<f64>> = (0..nk)
                .map(|n| {
                    let v = 4.0 * wf.k(n).powi(2) - kappa[l] * kappa[l];
                    (v > 0.0).then(|| v.sqrt())
                })
                .collect();
            let polar = polar_focus(spec.index_axis(Axis(1), l), &kr, &lat, nfft_theta);
            let rect = polar_to_rect(&polar, wf, kappa[l], &kr, dkr);
            rect_image(&rect, &xs, &zs)
        })
        .collect();
    let data = Array3::from_shape_fn(grid.shape(), |(a, b, c)| {
        planes
            .iter()
            .zip(&kappa)
            .map(|(p, &k)| p[[a, c]] * Complex64::from_polar(1.0, k * ys[b]))
            .sum()
    });
    let mut img = ImageVolume::from_complex(grid, data, "pfa_cylindrical_3d", opts.keep_complex);
    img.meta.time_s = start.elapsed().as_secs_f64();
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{gen_pattern, synthesize_aperture, AntennaArray, PatternSpec, ScanMode};
    use crate::recon::bpa;
    use crate::scene::{PointScatterer, Scene};
    use crate::simulate::beat_signal;
    use crate::waveform::{derive_waveform, WaveformParams};

    const R0: f64 = 0.25;

    fn ring_cube(mode: ScanMode, n_theta: usize, theta_max: f64, ny: usize, points: &[[f64; 3]]) -> BeatCube {
        let w = derive_waveform(&WaveformParams::from_band(77e9, 4e9, 32)).unwrap();
        let spec = PatternSpec { n_theta, theta_max_rad: theta_max, ring_radius_m: R0, ny, dy_m: 2e-3, ..Default::default() };
        let poses = synthesize_aperture(&AntennaArray::monostatic(), &gen_pattern(mode, &spec).unwrap(), 0.0).unwrap();
        let scene = Scene::new(points.iter().map(|&p| PointScatterer::unit(p)).collect(), "");
        beat_signal(&scene, &poses, &w, false).unwrap()
    }

    fn xz_grid() -> ImageGrid {
        ImageGrid { x: AxisSpec::new(-0.03, 0.03, 31), y: AxisSpec::single(0.0), z: AxisSpec::new(-0.03, 0.03, 31) }
    }

    fn near(a: [usize; 3], b: [usize; 3]) -> bool {
        a.iter().zip(b).all(|(x, y)| x.abs_diff(y) <= 1)
    }

    /// Fine grid about `p`; a full ring focuses to a mainlobe well under a millimetre.
    fn fine_grid(p: [f64; 3]) -> ImageGrid {
        ImageGrid { x: AxisSpec::centered(p[0], 2.5e-4, 21), y: AxisSpec::single(0.0), z: AxisSpec::centered(p[2], 2.5e-4, 21) }
    }

    #[test]
    fn full_circle_point() {
        let p = [0.01, 0.0, 0.016];
        let cube = ring_cube(ScanMode::Circular, 256, 2.0 * PI, 1, &[p]);
        let grid = fine_grid([0.0105, 0.0, 0.0155]);
        let img = pfa_circular_2d(&cube, R0, &grid, &ReconOptions::default()).unwrap();
        let b = bpa(&cube, &grid).unwrap();
        assert!(near(img.argmax(), b.argmax()), "{:?} {:?}", img.argmax(), b.argmax());
        assert!(near(img.argmax(), img.nearest_index(p)));
    }

    #[test]
    fn partial_arc_matches_backprojection() {
        let pts = [[0.0, 0.0, 0.01], [0.012, 0.0, -0.014]];
        let cube = ring_cube(ScanMode::Circular, 96, PI / 2.0, 1, &pts);
        let img = pfa_circular_2d(&cube, R0, &xz_grid(), &ReconOptions::default()).unwrap();
        let b = bpa(&cube, &xz_grid()).unwrap();
        for p in pts {
            let idx = img.nearest_index(p);
            let got = img.local_argmax(idx, [3, 0, 3]);
            assert!(near(got, idx), "{p:?} {got:?}");
            assert!(near(got, b.local_argmax(idx, [3, 0, 3])));
        }
    }

    #[test]
    fn rotation_follows_scene() {
        let n = 256;
        let step = 2.0 * PI / n as f64;
        let (r, phi) = (0.018, 0.4);
        for m in [0, 8, 21] {
            let a = phi + m as f64 * step;
            let p = [r * a.cos(), 0.0, r * a.sin()];
            let cube = ring_cube(ScanMode::Circular, n, 2.0 * PI, 1, &[p]);
            let img = pfa_circular_2d(&cube, R0, &fine_grid([p[0] + 1e-3, 0.0, p[2] - 1e-3]), &ReconOptions::default()).unwrap();
            assert!(near(img.argmax(), img.nearest_index(p)), "{m}: {:?} {:?}", img.argmax(), img.nearest_index(p));
        }
    }

    #[test]
    fn zero_in_zero_out_and_checks() {
        let mut cube = ring_cube(ScanMode::Circular, 32, PI / 3.0, 1, &[[0.0, 0.0, 0.0]]);
        cube.samples.fill(Complex64::new(0.0, 0.0));
        let img = pfa_circular_2d(&cube, R0, &xz_grid(), &ReconOptions::default()).unwrap();
        assert_eq!(img.l2_norm(), 0.0);
        assert!(matches!(pfa_circular_2d(&cube, 0.3, &xz_grid(), &ReconOptions::default()), Err(Error::GeometryMismatch(_))));
        let mut skew = cube.clone();
        skew.poses.remove(5);
        skew.samples = skew.samples.select(Axis(0), &(0..31).collect::<Vec<_>>());
        assert!(matches!(pfa_circular_2d(&skew, R0, &xz_grid(), &ReconOptions::default()), Err(Error::NonUniformAperture(_))));
        assert!(matches!(pfa_cylindrical_3d(&cube, R0, &xz_grid(), &ReconOptions::default()), Err(Error::GeometryMismatch(_))));
    }

    fn cyl_grid() -> ImageGrid {
        ImageGrid { x: AxisSpec::new(-0.06, 0.06, 13), y: AxisSpec::new(-0.02, 0.02, 21), z: AxisSpec::new(-0.03, 0.03, 13) }
    }

    #[test]
    fn cylindrical_point_and_y_shift() {
        let p = [0.0, 0.004, 0.01];
        let cube = ring_cube(ScanMode::Cylindrical, 64, PI / 3.0, 32, &[p]);
        let img = pfa_cylindrical_3d(&cube, R0, &cyl_grid(), &ReconOptions::default()).unwrap();
        let b = bpa(&cube, &cyl_grid()).unwrap();
        assert!(near(img.argmax(), b.argmax()), "{:?} {:?}", img.argmax(), b.argmax());
        assert!(near(img.argmax(), img.nearest_index(p)));

        let q = [p[0], p[1] - 0.01, p[2]];
        let shifted = pfa_cylindrical_3d(&ring_cube(ScanMode::Cylindrical, 64, PI / 3.0, 32, &[q]), R0, &cyl_grid(), &ReconOptions::default()).unwrap();
        let (a, s) = (img.argmax(), shifted.argmax());
        assert!((a[1] as i64 - s[1] as i64 - 5).abs() <= 1, "{a:?} {s:?}");
    }

    #[test]
    fn cylindrical_zero() {
        let mut cube = ring_cube(ScanMode::Cylindrical, 16, PI / 4.0, 8, &[[0.0, 0.0, 0.0]]);
        cube.samples.fill(Complex64::new(0.0, 0.0));
        assert_eq!(pfa_cylindrical_3d(&cube, R0, &cyl_grid(), &ReconOptions::default()).unwrap().l2_norm(), 0.0);
    }
}
