//! Range profiles and range-Doppler maps of multi-chirp captures.

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::fft::fft_along;
use crate::waveform::DerivedWaveform;

/// Consecutive chirps from one aperture position, indexed `[chirp, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub frames: Array2<Complex64>,
    /// Pulse repetition interval (s).
    pub t_pri: f64,
    pub waveform: DerivedWaveform,
}

impl FrameStack {
    pub fn new(frames: Array2<Complex64>, t_pri: f64, waveform: DerivedWaveform) -> Result<Self> {
        if frames.nrows() == 0 {
            return Err(Error::invalid("Nc", "at least one chirp is required"));
        }
        if frames.ncols() != waveform.nk() {
            return Err(Error::ShapeMismatch(format!("{} samples per chirp, waveform has {}", frames.ncols(), waveform.nk())));
        }
        if !(t_pri > 0.0 && t_pri.is_finite()) {
            return Err(Error::invalid("tPRI_s", "must be positive"));
        }
        Ok(FrameStack { frames, t_pri, waveform })
    }

    pub fn num_chirps(&self) -> usize {
        self.frames.nrows()
    }

    /// Frames of a single point at `range` moving radially at `velocity`
    /// (positive away from the radar):
    /// `α exp(-j(2 k_n R + 4π v T_PRI n_c / λ₀))`.
    pub fn moving_point(range: f64, velocity: f64, reflectivity: Complex64, waveform: DerivedWaveform, nc: usize, t_pri: f64) -> Result<Self> {
        let lambda0 = waveform.lambda0();
        let frames = Array2::from_shape_fn((nc, waveform.nk()), |(c, n)| {
            let phase = 2.0 * waveform.k(n) * range + 4.0 * std::f64::consts::PI * velocity * t_pri * c as f64 / lambda0;
            reflectivity * Complex64::from_polar(1.0, -phase)
        });
        FrameStack::new(frames, t_pri, waveform)
    }

    /// Velocity spacing of the Doppler axis, `λ₀ / (2 T_PRI N_c)`.
    pub fn velocity_step(&self) -> f64 {
        self.waveform.lambda0() / (2.0 * self.t_pri * self.num_chirps() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    #[default]
    None,
    Hann,
}

fn taper(window: Window, n: usize) -> Vec<f64> {
    match window {
        Window::None => vec![1.0; n],
        Window::Hann if n == 1 => vec![1.0],
        Window::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos()).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeProfile {
    /// Complex range bins per chirp, indexed `[chirp, bin]`.
    pub bins: Array2<Complex64>,
    pub range_m: Vec<f64>,
}

/// Per-chirp range transform `Σ_n s[n] e^{+j2πmn/N}` (unnormalized); bin `m`
/// lies at `m·δ_z`.
pub fn range_fft(frames: &FrameStack, window: Window) -> RangeProfile {
    let w = taper(window, frames.waveform.nk());
    let mut bins = frames.frames.clone();
    bins.axis_iter_mut(Axis(0)).for_each(|mut row| row.iter_mut().zip(&w).for_each(|(v, w)| *v *= *w));
    fft_along(&mut bins, 1, true);
    let dz = frames.waveform.range_resolution;
    let range_m = (0..bins.ncols()).map(|m| m as f64 * dz).collect();
    RangeProfile { bins, range_m }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeDoppler {
    /// Magnitudes indexed `[range bin, velocity bin]`, zero velocity centered.
    pub magnitude: Array2<f64>,
    pub range_m: Vec<f64>,
    pub velocity_mps: Vec<f64>,
}

impl RangeDoppler {
    /// Signed Doppler bin of velocity column `j`.
    pub fn signed_bin(&self, j: usize) -> i64 {
        j as i64 - (self.velocity_mps.len() / 2) as i64
    }

    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, 0);
        let mut v = f64::NEG_INFINITY;
        for ((r, d), &x) in self.magnitude.indexed_iter() {
            if x > v {
                v = x;
                best = (r, d);
            }
        }
        best
    }
}

/// Range transform followed by a Doppler transform `Σ_c e^{+j2πmc/N_c}` over
/// chirps, shifted so that zero velocity sits at column `N_c/2`. A target
/// receding at `m·λ₀/(2 T_PRI N_c)` peaks at signed bin `m`.
pub fn range_doppler(frames: &FrameStack, window: Window) -> Result<RangeDoppler> {
    let nc = frames.num_chirps();
    if nc < 2 {
        return Err(Error::invalid("Nc", "range-Doppler processing needs at least two chirps"));
    }
    let RangeProfile { mut bins, range_m } = range_fft(frames, window);
    let w = taper(window, nc);
    bins.axis_iter_mut(Axis(1)).for_each(|mut col| col.iter_mut().zip(&w).for_each(|(v, w)| *v *= *w));
    fft_along(&mut bins, 0, true);
    let half = nc / 2;
    let magnitude = Array2::from_shape_fn((bins.ncols(), nc), |(r, j)| bins[[(j + nc - half) % nc, r]].norm());
    let step = frames.velocity_step();
    let velocity_mps = (0..nc).map(|j| (j as f64 - half as f64) * step).collect();
    Ok(RangeDoppler { magnitude, range_m, velocity_mps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::waveform::{derive_waveform, WaveformParams};

    fn wf() -> DerivedWaveform {
        derive_waveform(&WaveformParams::from_band(77e9, 4e9, 64)).unwrap()
    }

    #[test]
    fn static_point_range_bin() {
        let f = FrameStack::moving_point(0.5, 0.0, Complex64::new(1.0, 0.0), wf(), 4, 1e-3).unwrap();
        let p = range_fft(&f, Window::None);
        for row in p.bins.rows() {
            let best = row.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
            assert_eq!(best, 13);
        }
        assert!((p.range_m[13] - 13.0 * wf().range_resolution).abs() < 1e-15);
    }

    #[test]
    fn zero_frames() {
        let f = FrameStack::new(Array2::zeros((3, 64)), 1e-3, wf()).unwrap();
        assert!(range_fft(&f, Window::Hann).bins.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn doppler_bins_and_sign() {
        let (nc, t) = (32, 2e-4);
        let base = FrameStack::moving_point(0.4, 0.0, Complex64::new(1.0, 0.0), wf(), nc, t).unwrap();
        let step = base.velocity_step();
        let still = range_doppler(&base, Window::None).unwrap();
        assert_eq!(still.signed_bin(still.argmax().1), 0);
        let moving = FrameStack::moving_point(0.4, 8.0 * step, Complex64::new(1.0, 0.0), wf(), nc, t).unwrap();
        let rd = range_doppler(&moving, Window::None).unwrap();
        assert_eq!(rd.signed_bin(rd.argmax().1), 8);
        assert!((rd.velocity_mps[rd.argmax().1] - 8.0 * step).abs() < 1e-12);
        let conj = FrameStack::new(moving.frames.mapv(|v| v.conj()), t, wf()).unwrap();
        let rc = range_doppler(&conj, Window::None).unwrap();
        assert_eq!(rc.signed_bin(rc.argmax().1), -8);
        assert_eq!(step * 2.0 * t * nc as f64, wf().lambda0());
    }

    #[test]
    fn parseval() {
        let frames = Array2::from_shape_fn((5, 64), |(c, n)| Complex64::new((c * n) as f64 * 0.01, (n as f64).sin()));
        let f = FrameStack::new(frames.clone(), 1e-3, wf()).unwrap();
        let e_in: f64 = frames.iter().map(|v| v.norm_sqr()).sum();
        let e_out: f64 = range_fft(&f, Window::None).bins.iter().map(|v| v.norm_sqr()).sum::<f64>() / 64.0;
        assert!((e_in - e_out).abs() <= 1e-9 * e_in);
    }

    #[test]
    fn single_chirp_rejected() {
        let f = FrameStack::new(Array2::zeros((1, 64)), 1e-3, wf()).unwrap();
        assert!(range_doppler(&f, Window::None).is_err());
        assert!(FrameStack::new(Array2::zeros((2, 63)), 1e-3, wf()).is_err());
    }
}
