//! Multiband signal model: subband layout on a common wavenumber grid,
//! full-band references, band masking, zero-filled fusion, and training
//! data generation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::psf_cut;
use crate::scene::complex_normal;
use crate::C;

/// One occupied band: start frequency and sample count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subband {
    #[serde(rename = "f_start_Hz")]
    pub f_start: f64,
    #[serde(rename = "Nk")]
    pub nk: usize,
}

/// Subbands sharing the frequency step `df`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubbandSpec {
    pub subbands: Vec<Subband>,
    #[serde(rename = "df_Hz")]
    pub df: f64,
}

impl Default for SubbandSpec {
    /// 60 GHz and 77 GHz radars, 4 GHz each, 62.5 MHz steps.
    fn default() -> Self {
        SubbandSpec {
            subbands: vec![Subband { f_start: 60e9, nk: 64 }, Subband { f_start: 77e9, nk: 64 }],
            df: 62.5e6,
        }
    }
}

impl SubbandSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.df > 0.0 && self.df.is_finite()) {
            return Err(Error::invalid("df_Hz", "must be positive"));
        }
        if self.subbands.is_empty() {
            return Err(Error::invalid("subbands", "at least one subband is required"));
        }
        let mut end = 0usize;
        for (i, b) in self.subbands.iter().enumerate() {
            if !(b.f_start > 0.0 && b.f_start.is_finite()) {
                return Err(Error::invalid(format!("subbands[{i}].f_start_Hz"), "must be positive"));
            }
            if b.nk == 0 {
                return Err(Error::invalid(format!("subbands[{i}].Nk"), "must be at least 1"));
            }
            let off = (b.f_start - self.subbands[0].f_start) / self.df;
            if (off - off.round()).abs() > 1e-6 || off < -1e-6 {
                return Err(Error::invalid(format!("subbands[{i}].f_start_Hz"), "offset from the first subband must be a whole number of df_Hz steps"));
            }
            let off = off.round() as usize;
            if i > 0 && off < end {
                return Err(Error::invalid(format!("subbands[{i}]"), "subbands must be sorted and must not overlap"));
            }
            end = off + b.nk;
        }
        if end < 2 {
            return Err(Error::invalid("subbands", "the full band needs at least two samples"));
        }
        Ok(())
    }

    /// Offsets `Ñᵢ` of each subband from the first, in samples.
    pub fn offsets(&self) -> Vec<usize> {
        let f1 = self.subbands[0].f_start;
        self.subbands.iter().map(|b| ((b.f_start - f1) / self.df).round() as usize).collect()
    }

    /// Full-band length `N`.
    pub fn total_len(&self) -> usize {
        let last = self.subbands.len() - 1;
        self.offsets()[last] + self.subbands[last].nk
    }

    pub fn dk(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.df / C
    }

    /// Start wavenumber of the first subband.
    pub fn k1(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.subbands[0].f_start / C
    }

    /// Occupied-bin mask over the full band.
    pub fn mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.total_len()];
        for (off, b) in self.offsets().into_iter().zip(&self.subbands) {
            m[off..off + b.nk].iter_mut().for_each(|v| *v = true);
        }
        m
    }

    /// Unambiguous range of the full band, `π / Δk`.
    pub fn max_range(&self) -> f64 {
        std::f64::consts::PI / self.dk()
    }

    /// Spec holding only subband `i`.
    pub fn single(&self, i: usize) -> SubbandSpec {
        SubbandSpec { subbands: vec![self.subbands[i]], df: self.df }
    }
}

/// Point target along range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeTarget {
    pub range_m: f64,
    pub reflectivity: Complex64,
}

impl RangeTarget {
    pub fn unit(range_m: f64) -> Self {
        RangeTarget { range_m, reflectivity: Complex64::new(1.0, 0.0) }
    }
}

/// Full-band samples `s(ℓ) = Σ αᵢ exp(-j2(k₁ + Δk ℓ)Rᵢ)`, `ℓ < N`.
pub fn gen_fullband(targets: &[RangeTarget], spec: &SubbandSpec) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let (k1, dk) = (spec.k1(), spec.dk());
    Ok((0..spec.total_len())
        .map(|l| {
            let k = k1 + dk * l as f64;
            targets.iter().map(|t| t.reflectivity * Complex64::from_polar(1.0, -2.0 * k * t.range_m)).sum()
        })
        .collect())
}

/// Response of subband `i` on its own wavenumber axis `kᵢ + Δk n`, `n < Nkᵢ`.
pub fn subband_response(targets: &[RangeTarget], spec: &SubbandSpec, i: usize) -> Result<Vec<Complex64>> {
    spec.validate()?;
    let band = spec.subbands.get(i).ok_or_else(|| Error::invalid("subband", format!("index {i} out of range")))?;
    let ki = 2.0 * std::f64::consts::PI * band.f_start / C;
    let dk = spec.dk();
    Ok((0..band.nk)
        .map(|n| {
            let k = ki + dk * n as f64;
            targets.iter().map(|t| t.reflectivity * Complex64::from_polar(1.0, -2.0 * k * t.range_m)).sum()
        })
        .collect())
}

/// Full-length samples with the unoccupied bins zeroed.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibandSignal {
    pub samples: Vec<Complex64>,
    pub mask: Vec<bool>,
}

pub fn apply_band_mask(fullband: &[Complex64], spec: &SubbandSpec) -> Result<MultibandSignal> {
    spec.validate()?;
    let mask = spec.mask();
    if fullband.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} samples for a full band of {}", fullband.len(), mask.len())));
    }
    let samples = fullband.iter().zip(&mask).map(|(v, &m)| if m { *v } else { Complex64::new(0.0, 0.0) }).collect();
    Ok(MultibandSignal { samples, mask })
}

/// Range-domain spectrum on a uniform range axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RangeSpectrum {
    pub values: Vec<Complex64>,
    pub range_m: Vec<f64>,
}

impl RangeSpectrum {
    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// Orthonormal range transform `X[m] = Σ s(ℓ) e^{+j2πmℓ/nfft} / √nfft` of
/// zero-padded samples with wavenumber step `dk`; bin `m` lies at
/// `m π / (Δk nfft)`.
pub fn range_spectrum(samples: &[Complex64], dk: f64, nfft: usize) -> Result<RangeSpectrum> {
    if nfft < samples.len() || nfft == 0 {
        return Err(Error::invalid("nfft", format!("must be at least the signal length {}", samples.len())));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    buf[..samples.len()].copy_from_slice(samples);
    FftPlanner::new().plan_fft_inverse(nfft).process(&mut buf);
    let scale = 1.0 / (nfft as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
    let step = std::f64::consts::PI / (dk * nfft as f64);
    Ok(RangeSpectrum { values: buf, range_m: (0..nfft).map(|m| m as f64 * step).collect() })
}

/// Zero-filled fusion: the range transform of the masked full-band vector,
/// ignoring the missing gap samples.
pub fn mft_fuse(mb: &MultibandSignal, spec: &SubbandSpec, nfft: usize) -> Result<RangeSpectrum> {
    if mb.samples.len() != spec.total_len() {
        return Err(Error::ShapeMismatch(format!("{} samples for a full band of {}", mb.samples.len(), spec.total_len())));
    }
    range_spectrum(&mb.samples, spec.dk(), nfft)
}

/// Peak sidelobe level (dB) of a range spectrum's magnitude, or `None`
/// when there is no sidelobe.
pub fn sidelobe_level_db(spectrum: &RangeSpectrum) -> Result<Option<f64>> {
    Ok(psf_cut(&spectrum.magnitude(), &spectrum.range_m)?.pslr_db)
}

/// Zero padding used by the two-target resolution test.
pub const RESOLUTION_NFFT: usize = 16384;
/// Near range of the two-target resolution test (m).
pub const RESOLUTION_RANGE_M: f64 = 0.3;

/// Outcome for one band configuration: whether two peaks with at least a
/// 3 dB dip were found, and where.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakPair {
    pub resolved: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peaks_m: Option<[f64; 2]>,
    #[serde(rename = "dip_dB", skip_serializing_if = "Option::is_none")]
    pub dip_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolutionReport {
    pub dz_m: f64,
    pub subband1: PeakPair,
    pub fullband: PeakPair,
    pub mft_dualband: PeakPair,
}

/// Looks for two local maxima in `[z_r − dz, z_r + 2dz]` separated by a dip
/// of at least 3 dB below the weaker one.
fn peak_pair(spec: &RangeSpectrum, zr: f64, dz: f64) -> PeakPair {
    let mag = spec.magnitude();
    let idx: Vec<usize> = (0..mag.len()).filter(|&i| spec.range_m[i] >= zr - dz && spec.range_m[i] <= zr + 2.0 * dz).collect();
    let unresolved = PeakPair { resolved: false, peaks_m: None, dip_db: None };
    if idx.len() < 3 {
        return unresolved;
    }
    let seg: Vec<f64> = idx.iter().map(|&i| mag[i]).collect();
    let mut peaks: Vec<usize> = (1..seg.len() - 1).filter(|&i| seg[i] > seg[i - 1] && seg[i] >= seg[i + 1]).collect();
    if peaks.len() < 2 {
        return unresolved;
    }
    peaks.sort_by(|&a, &b| seg[b].total_cmp(&seg[a]));
    let (a, b) = (peaks[0].min(peaks[1]), peaks[0].max(peaks[1]));
    let dip = seg[a..=b].iter().cloned().fold(f64::INFINITY, f64::min);
    let dip_db = 20.0 * (seg[a].min(seg[b]) / dip).log10();
    PeakPair { resolved: dip_db >= 3.0, peaks_m: Some([spec.range_m[idx[a]], spec.range_m[idx[b]]]), dip_db: Some(dip_db) }
}

fn add_noise(samples: &mut [Complex64], mask: &[bool], snr_db: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let occupied = mask.iter().filter(|&&m| m).count();
    let power = samples.iter().zip(mask).filter(|(_, &m)| m).map(|(v, _)| v.norm_sqr()).sum::<f64>() / occupied.max(1) as f64;
    if !(power > 0.0) {
        return Err(Error::Degenerate("cannot set an SNR on a zero signal".into()));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    for (v, &m) in samples.iter_mut().zip(mask) {
        if m {
            *v += complex_normal(rng) * sigma;
        }
    }
    Ok(())
}

/// Two unit targets at `0.3 m` and `0.3 m + dz`, examined through the first
/// subband alone, the ideal full band, and the zero-filled multiband vector.
/// With `snr_db` set, noise is added to the occupied bins of each
/// configuration.
pub fn two_peak_resolution_test(dz: f64, spec: &SubbandSpec, snr_db: Option<f64>, seed: u64) -> Result<ResolutionReport> {
    if !(dz > 0.0 && dz.is_finite()) {
        return Err(Error::invalid("dz_m", "must be positive"));
    }
    spec.validate()?;
    let targets = [RangeTarget::unit(RESOLUTION_RANGE_M), RangeTarget::unit(RESOLUTION_RANGE_M + dz)];
    let full = gen_fullband(&targets, spec)?;
    let masked = apply_band_mask(&full, spec)?;
    let mut sub = full[..spec.subbands[0].nk].to_vec();
    let mut full_noisy = full.clone();
    let mut mft = masked.samples.clone();
    if let Some(snr) = snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let all = vec![true; sub.len()];
        add_noise(&mut sub, &all, snr, &mut rng)?;
        let all = vec![true; full_noisy.len()];
        add_noise(&mut full_noisy, &all, snr, &mut rng)?;
        add_noise(&mut mft, &masked.mask, snr, &mut rng)?;
    }
    let dk = spec.dk();
    let at = |s: &[Complex64]| -> Result<PeakPair> { Ok(peak_pair(&range_spectrum(s, dk, RESOLUTION_NFFT)?, RESOLUTION_RANGE_M, dz)) };
    Ok(ResolutionReport { dz_m: dz, subband1: at(&sub)?, fullband: at(&full_noisy)?, mft_dualband: at(&mft)? })
}

/// Dataset generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub count: usize,
    /// Inclusive range of the number of targets per sample.
    pub nt_range: [usize; 2],
    #[serde(rename = "snr_range_dB")]
    pub snr_range_db: [f64; 2],
    pub spec: SubbandSpec,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec { count: 1, nt_range: [1, 200], snr_range_db: [-10.0, 30.0], spec: SubbandSpec::default(), seed: 0 }
    }
}

/// One training pair: noisy zero-filled multiband input and ideal full-band label.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub nt: usize,
    pub snr_db: f64,
    pub input: Vec<Complex64>,
    pub label: Vec<Complex64>,
}

fn sample_stream(ds: &DatasetSpec, index: u64) -> (ChaCha8Rng, usize, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(ds.seed);
    rng.set_stream(index);
    let nt = rng.gen_range(ds.nt_range[0]..=ds.nt_range[1]);
    let snr_db = if ds.snr_range_db[0] == ds.snr_range_db[1] {
        ds.snr_range_db[0]
    } else {
        rng.gen_range(ds.snr_range_db[0]..ds.snr_range_db[1])
    };
    (rng, nt, snr_db)
}

/// Target count and SNR (dB) of sample `index`.
pub fn draw_params(ds: &DatasetSpec, index: u64) -> (usize, f64) {
    let (_, nt, snr) = sample_stream(ds, index);
    (nt, snr)
}

/// Draws one sample from its own ChaCha stream (`seed`, stream `index`).
/// Ranges are uniform over `[0.1, 0.9]` of the unambiguous range and
/// reflectivities are circular complex normal.
pub fn draw_sample(ds: &DatasetSpec, index: u64) -> Result<DatasetSample> {
    let (mut rng, nt, snr_db) = sample_stream(ds, index);
    let r_max = ds.spec.max_range();
    let targets: Vec<RangeTarget> = (0..nt)
        .map(|_| RangeTarget { range_m: rng.gen_range(0.1 * r_max..0.9 * r_max), reflectivity: complex_normal(&mut rng) })
        .collect();
    let label = gen_fullband(&targets, &ds.spec)?;
    let mut mb = apply_band_mask(&label, &ds.spec)?;
    add_noise(&mut mb.samples, &mb.mask, snr_db, &mut rng)?;
    Ok(DatasetSample { nt, snr_db, input: mb.samples, label })
}

pub fn dataset_gen(ds: &DatasetSpec) -> Result<Vec<DatasetSample>> {
    if ds.count == 0 {
        return Err(Error::invalid("count", "must be at least 1"));
    }
    if ds.nt_range[0] == 0 || ds.nt_range[0] > ds.nt_range[1] {
        return Err(Error::invalid("nt_range", "must satisfy 1 ≤ min ≤ max"));
    }
    if !(ds.snr_range_db.iter().all(|v| v.is_finite()) && ds.snr_range_db[0] <= ds.snr_range_db[1]) {
        return Err(Error::invalid("snr_range_dB", "must be a finite nondecreasing interval"));
    }
    ds.spec.validate()?;
    (0..ds.count as u64).into_par_iter().map(|i| draw_sample(ds, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_layout() {
        let s = SubbandSpec::default();
        assert_eq!(s.offsets(), vec![0, 272]);
        assert_eq!(s.total_len(), 336);
        assert_eq!(s.mask().iter().filter(|&&m| m).count(), 128);
    }

    #[test]
    fn layout_validation() {
        let mut s = SubbandSpec::default();
        s.subbands[1].f_start = 60.1e9 + 1.0;
        assert!(s.validate().is_err());
        s.subbands[1].f_start = 62e9;
        assert!(s.validate().is_err());
        s.subbands.swap(0, 1);
        assert!(s.validate().is_err());
    }

    #[test]
    fn single_target_unit_modulus() {
        let s = gen_fullband(&[RangeTarget::unit(0.3)], &SubbandSpec::default()).unwrap();
        assert!(s.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn subband_segments_match_direct_responses() {
        let spec = SubbandSpec::default();
        let t = [RangeTarget::unit(0.31), RangeTarget { range_m: 0.52, reflectivity: Complex64::new(0.3, -0.7) }];
        let mb = apply_band_mask(&gen_fullband(&t, &spec).unwrap(), &spec).unwrap();
        for (i, off) in spec.offsets().into_iter().enumerate() {
            let direct = subband_response(&t, &spec, i).unwrap();
            for (n, v) in direct.iter().enumerate() {
                assert!((mb.samples[n + off] - v).norm() <= 1e-12 * v.norm().max(1.0));
            }
        }
    }

    #[test]
    fn mask_identity_and_idempotence() {
        let spec = SubbandSpec::default();
        let full = gen_fullband(&[RangeTarget::unit(0.2)], &spec).unwrap();
        let once = apply_band_mask(&full, &spec).unwrap();
        assert_eq!(apply_band_mask(&once.samples, &spec).unwrap(), once);
        let whole = SubbandSpec { subbands: vec![Subband { f_start: 60e9, nk: 336 }], df: 62.5e6 };
        assert_eq!(apply_band_mask(&full, &whole).unwrap().samples, full);
    }

    #[test]
    fn fusion_peak_and_parseval() {
        let whole = SubbandSpec { subbands: vec![Subband { f_start: 60e9, nk: 336 }], df: 62.5e6 };
        let full = gen_fullband(&[RangeTarget::unit(0.3)], &whole).unwrap();
        let spec = mft_fuse(&apply_band_mask(&full, &whole).unwrap(), &whole, 4096).unwrap();
        let e_in: f64 = full.iter().map(|v| v.norm_sqr()).sum();
        let e_out: f64 = spec.values.iter().map(|v| v.norm_sqr()).sum();
        assert!((e_in - e_out).abs() <= 1e-9 * e_in);
        let mag = spec.magnitude();
        let peak = mag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((spec.range_m[peak] - 0.3).abs() <= spec.range_m[1]);
        // Dirichlet kernel: −3 dB width 0.886 / (N Δk/π).
        let cut = psf_cut(&mag, &spec.range_m).unwrap();
        let want = 0.8859 * std::f64::consts::PI / (336.0 * whole.dk());
        assert!((cut.width_3db_m / want - 1.0).abs() < 0.05, "{} {want}", cut.width_3db_m);
        assert!(mft_fuse(&MultibandSignal { samples: vec![Complex64::new(0.0, 0.0); 336], mask: vec![true; 336] }, &whole, 512)
            .unwrap()
            .values
            .iter()
            .all(|v| v.norm() == 0.0));
    }

    #[test]
    fn dual_band_sidelobes_rise() {
        let spec = SubbandSpec::default();
        let full = gen_fullband(&[RangeTarget::unit(0.3)], &spec).unwrap();
        let fb = sidelobe_level_db(&range_spectrum(&full, spec.dk(), 16384).unwrap()).unwrap().unwrap();
        let mb = sidelobe_level_db(&mft_fuse(&apply_band_mask(&full, &spec).unwrap(), &spec, 16384).unwrap()).unwrap().unwrap();
        assert!(mb - fb > 6.0, "{mb} {fb}");
    }

    #[test]
    fn resolution_cases() {
        let spec = SubbandSpec::default();
        let r = two_peak_resolution_test(0.0071, &spec, None, 0).unwrap();
        assert!(r.fullband.resolved && !r.subband1.resolved, "{r:?}");
        let r = two_peak_resolution_test(0.0375, &spec, None, 0).unwrap();
        assert!(r.fullband.resolved && r.subband1.resolved && r.mft_dualband.resolved, "{r:?}");
        let r = two_peak_resolution_test(1e-5, &spec, None, 0).unwrap();
        assert!(!r.fullband.resolved && !r.subband1.resolved && !r.mft_dualband.resolved);
        assert!(two_peak_resolution_test(0.0, &spec, None, 0).is_err());
    }

    #[test]
    fn dataset_reproducible_and_in_range() {
        let ds = DatasetSpec { count: 4, seed: 11, ..Default::default() };
        let a = dataset_gen(&ds).unwrap();
        assert_eq!(a, dataset_gen(&ds).unwrap());
        let mask = ds.spec.mask();
        for s in &a {
            assert!((1..=200).contains(&s.nt));
            assert!((-10.0..=30.0).contains(&s.snr_db));
            assert!(s.input.iter().zip(&mask).all(|(v, &m)| m || v.norm() == 0.0));
        }
    }

    #[test]
    fn target_count_is_uniform() {
        let ds = DatasetSpec { count: 10_000, nt_range: [1, 200], seed: 5, ..Default::default() };
        let mut hist = vec![0usize; 200];
        for i in 0..ds.count as u64 {
            let (nt, snr) = draw_params(&ds, i);
            assert!((-10.0..30.0).contains(&snr));
            hist[nt - 1] += 1;
        }
        assert_eq!(draw_params(&ds, 7).0, draw_sample(&ds, 7).unwrap().nt);
        let e = ds.count as f64 / 200.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // 199 degrees of freedom: mean 199, sd √398.
        assert!(chi2 < 199.0 + 3.0 * 398f64.sqrt(), "{chi2}");
    }

    proptest! {
        #[test]
        fn fullband_is_linear(a in -2.0..2.0f64, b in -2.0..2.0f64, r1 in 0.1..1.0f64, r2 in 0.1..1.0f64) {
            let spec = SubbandSpec::default();
            let t1 = RangeTarget { range_m: r1, reflectivity: Complex64::new(a, 0.5) };
            let t2 = RangeTarget { range_m: r2, reflectivity: Complex64::new(-0.2, b) };
            let both = gen_fullband(&[t1, t2], &spec).unwrap();
            let s1 = gen_fullband(&[t1], &spec).unwrap();
            let s2 = gen_fullband(&[t2], &spec).unwrap();
            for ((x, y), z) in both.iter().zip(&s1).zip(&s2) {
                prop_assert!((x - y - z).norm() <= 1e-12 * (y.norm() + z.norm()).max(1.0));
            }
        }
    }
}
