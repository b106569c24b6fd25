//! FMCW chirp description and the quantities derived from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C;

/// Chirp parameters as configured on the radar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveformParams {
    /// Start frequency (Hz).
    #[serde(rename = "f0_Hz")]
    pub f0: f64,
    /// Chirp slope (Hz/s).
    #[serde(rename = "K_Hz_per_s")]
    pub slope: f64,
    /// ADC samples per chirp.
    #[serde(rename = "Nk")]
    pub nk: usize,
    /// ADC sampling frequency (Hz).
    #[serde(rename = "fS_Hz")]
    pub fs: f64,
    /// Center frequency (Hz).
    #[serde(rename = "fC_Hz")]
    pub fc: f64,
}

impl WaveformParams {
    /// Builds parameters for a chirp sweeping `bandwidth` from `f0` in `nk` samples.
    ///
    /// The sampling rate is fixed at 1 Msps and the slope is chosen to match;
    /// the center frequency is the middle of the sweep.
    pub fn from_band(f0: f64, bandwidth: f64, nk: usize) -> Self {
        let fs = 1.0e6;
        WaveformParams {
            f0,
            slope: bandwidth * fs / nk as f64,
            nk,
            fs,
            fc: f0 + bandwidth / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive(self.f0, "f0_Hz")?;
        positive(self.slope, "K_Hz_per_s")?;
        positive(self.fs, "fS_Hz")?;
        if self.nk < 2 {
            return Err(Error::invalid("Nk", format!("must be at least 2, got {}", self.nk)));
        }
        if !self.fc.is_finite() || self.fc < self.f0 {
            return Err(Error::invalid("fC_Hz", "must be finite and not below f0_Hz"));
        }
        Ok(())
    }
}

/// Wavenumber sampling and resolution figures implied by a chirp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedWaveform {
    pub params: WaveformParams,
    #[serde(rename = "bandwidth_Hz")]
    pub bandwidth: f64,
    #[serde(rename = "k0_rad_per_m")]
    pub k0: f64,
    #[serde(rename = "dk_rad_per_m")]
    pub dk: f64,
    #[serde(rename = "lambdaC_m")]
    pub lambda_c: f64,
    #[serde(rename = "rangeResolution_m")]
    pub range_resolution: f64,
    #[serde(rename = "maxRange_m")]
    pub max_range: f64,
}

pub fn derive_waveform(p: &WaveformParams) -> Result<DerivedWaveform> {
    p.validate()?;
    let bandwidth = p.slope * p.nk as f64 / p.fs;
    let dk = 2.0 * std::f64::consts::PI * p.slope / (C * p.fs);
    if !(dk > 0.0 && dk.is_finite()) {
        return Err(Error::invalid("K_Hz_per_s", "wavenumber step is zero"));
    }
    let range_resolution = C / (2.0 * bandwidth);
    Ok(DerivedWaveform {
        params: *p,
        bandwidth,
        k0: 2.0 * std::f64::consts::PI * p.f0 / C,
        dk,
        lambda_c: C / p.fc,
        range_resolution,
        max_range: p.nk as f64 * range_resolution,
    })
}

impl DerivedWaveform {
    pub fn nk(&self) -> usize {
        self.params.nk
    }

    /// Wavenumber of sample `n`.
    #[inline]
    pub fn k(&self, n: usize) -> f64 {
        self.k0 + self.dk * n as f64
    }

    pub fn wavenumber_axis(&self) -> Vec<f64> {
        (0..self.nk()).map(|n| self.k(n)).collect()
    }

    pub fn k_max(&self) -> f64 {
        self.k(self.nk() - 1)
    }

    /// Wavelength at the start frequency.
    pub fn lambda0(&self) -> f64 {
        C / self.params.f0
    }
}

pub fn wavenumber_axis(d: &DerivedWaveform) -> Vec<f64> {
    d.wavenumber_axis()
}

/// Cross-range and range resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    #[serde(rename = "dx_m")]
    pub dx: f64,
    #[serde(rename = "dy_m")]
    pub dy: f64,
    #[serde(rename = "dz_m")]
    pub dz: f64,
}

/// Resolution of an aperture `dx_ap` by `dy_ap` at standoff `z0`.
pub fn resolution(d: &DerivedWaveform, dx_ap: f64, dy_ap: f64, z0: f64) -> Result<Resolution> {
    for (v, name) in [(dx_ap, "Dx"), (dy_ap, "Dy"), (z0, "Z0")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveGeometry(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(Resolution {
        dx: d.lambda_c * z0 / (2.0 * dx_ap),
        dy: d.lambda_c * z0 / (2.0 * dy_ap),
        dz: C / (2.0 * d.bandwidth),
    })
}

/// Minimum pulse repetition frequency and maximum frequency step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingBounds {
    #[serde(rename = "prfMin_Hz")]
    pub prf_min: f64,
    #[serde(rename = "dfMax_Hz")]
    pub df_max: f64,
}

pub fn sampling_bounds(v_max: f64, lambda_c: f64, r_max: f64) -> Result<SamplingBounds> {
    for (v, name) in [(v_max, "vMax"), (lambda_c, "lambdaC"), (r_max, "rMax")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    Ok(SamplingBounds { prf_min: 4.0 * v_max / lambda_c, df_max: C / (2.0 * r_max) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band(f0: f64, b: f64) -> DerivedWaveform {
        derive_waveform(&WaveformParams::from_band(f0, b, 64)).unwrap()
    }

    #[test]
    fn range_resolution_of_four_and_twentyone_gigahertz() {
        assert!((band(77e9, 4e9).range_resolution - 0.0375).abs() / 0.0375 < 1e-3);
        let d = band(60e9, 21e9);
        assert!((d.range_resolution - 7.1380e-3).abs() < 1e-5);
    }

    #[test]
    fn zero_slope_rejected() {
        let mut p = WaveformParams::from_band(77e9, 4e9, 64);
        p.slope = 0.0;
        p.fc = p.f0;
        match derive_waveform(&p) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "K_Hz_per_s"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wavenumber_axis_direct_formula() {
        let mut d = band(77e9, 4e9);
        d.params.nk = 2;
        d.k0 = 1.0;
        d.dk = 0.5;
        assert_eq!(d.wavenumber_axis(), vec![1.0, 1.5]);
    }

    #[test]
    fn start_wavenumber_at_77_ghz() {
        let d = band(77e9, 4e9);
        // 2*pi*77e9/299792458
        assert!((d.wavenumber_axis()[0] - 1613.800_667).abs() < 1e-3);
    }

    #[test]
    fn cross_range_hand_value() {
        let mut d = band(77e9, 4e9);
        d.lambda_c = 3.79e-3;
        let r = resolution(&d, 0.25, 0.25, 0.3).unwrap();
        assert!((r.dx - 2.274e-3).abs() < 1e-9);
        assert!(resolution(&d, 0.0, 0.25, 0.3).is_err());
    }

    #[test]
    fn gesture_system_resolution() {
        // 79 GHz center, 4 GHz; an aperture of Dy = 7.59 cm at Z0 = 3 m gives 7.5 cm.
        let p = WaveformParams { f0: 77e9, slope: 4e9 / 64e-6, nk: 64, fs: 1e6, fc: 79e9 };
        let d = derive_waveform(&p).unwrap();
        let lambda_c = C / 79e9;
        let z0 = 3.0;
        let dy_ap = lambda_c * z0 / (2.0 * 0.075);
        let r = resolution(&d, dy_ap, dy_ap, z0).unwrap();
        assert!((r.dy - 0.075).abs() < 1e-12);
        assert!((r.dz - 0.0375).abs() / 0.0375 < 1e-3);
    }

    #[test]
    fn sampling_bound_values() {
        let b = sampling_bounds(1.0, C / 79e9, 0.5).unwrap();
        assert!((b.prf_min - 1054.0).abs() < 1.0);
        assert!((b.df_max - 299.792_458e6).abs() < 1.0);
        assert!(sampling_bounds(1e-12, 3.79e-3, 0.5).unwrap().prf_min < 1e-8);
        assert!(sampling_bounds(0.0, 3.79e-3, 0.5).is_err());
    }

    #[test]
    fn json_keys_round_trip() {
        let p = WaveformParams::from_band(77e9, 4e9, 64);
        let s = serde_json::to_string(&p).unwrap();
        for key in ["f0_Hz", "K_Hz_per_s", "Nk", "fS_Hz", "fC_Hz"] {
            assert!(s.contains(key));
        }
        assert_eq!(serde_json::from_str::<WaveformParams>(&s).unwrap(), p);
    }

    proptest! {
        #[test]
        fn derived_invariants(f0 in 1e9..1e11f64, b in 1e8..3e10f64, nk in 2usize..1024) {
            let p = WaveformParams::from_band(f0, b, nk);
            let d = derive_waveform(&p).unwrap();
            prop_assert!(d.dk > 0.0);
            prop_assert!((d.range_resolution * 2.0 * d.bandwidth - C).abs() / C < 1e-9);
            prop_assert_eq!(d.max_range, nk as f64 * d.range_resolution);
            let axis = d.wavenumber_axis();
            prop_assert!(axis.windows(2).all(|w| w[1] > w[0]));
            let span = axis[nk - 1] - axis[0];
            prop_assert!((span - d.dk * (nk - 1) as f64).abs() <= f64::EPSILON * axis[nk - 1]);
            prop_assert_eq!(derive_waveform(&p).unwrap(), d);
        }

        #[test]
        fn resolution_inverse_in_aperture(dx in 0.01..1.0f64, z0 in 0.05..5.0f64) {
            let d = band(77e9, 4e9);
            let a = resolution(&d, dx, dx, z0).unwrap();
            let b = resolution(&d, 2.0 * dx, 2.0 * dx, z0).unwrap();
            prop_assert!((b.dx - a.dx / 2.0).abs() <= 1e-12 * a.dx);
            prop_assert!((b.dy - a.dy / 2.0).abs() <= 1e-12 * a.dy);
        }
    }
}
