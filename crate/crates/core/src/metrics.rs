//! Image fidelity metrics and point-spread-function analysis.

use ndarray::{ArrayBase, Data, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recon::ImageVolume;

const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape<S1, S2, D>(x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> Result<()>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", x.shape(), y.shape())));
    }
    if x.is_empty() {
        return Err(Error::invalid("image", "is empty"));
    }
    Ok(())
}

fn range_of<S: Data<Elem = f64>, D: Dimension>(y: &ArrayBase<S, D>) -> (f64, f64) {
    y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn mse<S1, S2, D>(x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> f64
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    x.iter().zip(y.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64
}

/// Peak signal-to-noise ratio `10 log₁₀(L²/MSE)` with `L = max(reference)`;
/// `+∞` when the images are identical.
pub fn psnr<S1, S2, D>(x: &ArrayBase<S1, D>, reference: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape(x, reference)?;
    let e = mse(x, reference);
    if e == 0.0 {
        return Ok(f64::INFINITY);
    }
    let l = range_of(reference).1;
    Ok(10.0 * (l * l / e).log10())
}

/// Population means, variances, and covariance of two equally shaped arrays.
fn moments<S1, S2, D>(x: &ArrayBase<S1, D>, y: &ArrayBase<S2, D>) -> (f64, f64, f64, f64, f64)
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y.iter()) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    (mx, my, vx / n, vy / n, cxy / n)
}

/// Single-window structural similarity with `C₁ = (0.01 L)²`,
/// `C₂ = (0.03 L)²` and `L` the dynamic range of the reference (1 when the
/// reference is constant).
pub fn ssim<S1, S2, D>(x: &ArrayBase<S1, D>, reference: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape(x, reference)?;
    let (lo, hi) = range_of(reference);
    let l = if hi > lo { hi - lo } else { 1.0 };
    let (c1, c2) = ((K1 * l).powi(2), (K2 * l).powi(2));
    let (mx, my, vx, vy, cxy) = moments(x, reference);
    Ok((2.0 * mx * my + c1) * (2.0 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2)))
}

/// Root-mean-square error over the reference's dynamic range.
pub fn nrmse<S1, S2, D>(x: &ArrayBase<S1, D>, reference: &ArrayBase<S2, D>) -> Result<f64>
where
    S1: Data<Elem = f64>,
    S2: Data<Elem = f64>,
    D: Dimension,
{
    same_shape(x, reference)?;
    let (lo, hi) = range_of(reference);
    if !(hi > lo) {
        return Err(Error::Degenerate("reference image has zero dynamic range".into()));
    }
    Ok(mse(x, reference).sqrt() / (hi - lo))
}

/// `20 log₁₀(α / T)` for accuracy `α` and run time `T` (s).
pub fn efficiency_score(accuracy: f64, time_s: f64) -> Result<f64> {
    if !(accuracy > 0.0 && accuracy.is_finite()) {
        return Err(Error::invalid("accuracy", "must be positive"));
    }
    if !(time_s > 0.0 && time_s.is_finite()) {
        return Err(Error::invalid("time_s", "must be positive"));
    }
    Ok(20.0 * (accuracy / time_s).log10())
}

/// Metrics of an image against a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `null` in JSON when the images are identical.
    #[serde(with = "infinite_as_null")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub time_s: f64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn evaluate(image: &ImageVolume, reference: &ImageVolume) -> Result<MetricsReport> {
    Ok(MetricsReport {
        psnr_db: psnr(&image.values, &reference.values)?,
        ssim: ssim(&image.values, &reference.values)?,
        nrmse: nrmse(&image.values, &reference.values)?,
        time_s: image.meta.time_s,
    })
}

/// Main lobe and sidelobe figures of a 1-D cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsfCut {
    #[serde(rename = "mainlobeWidth3dB_m")]
    pub width_3db_m: f64,
    /// Highest sidelobe relative to the peak (dB); `None` without sidelobes.
    #[serde(rename = "peakSidelobeRatio_dB")]
    pub pslr_db: Option<f64>,
    #[serde(rename = "peakLocation_m")]
    pub peak_m: f64,
}

/// −3 dB width (linear interpolation of magnitudes about the global peak)
/// and peak sidelobe ratio outside the first nulls of a magnitude cut.
pub fn psf_cut(values: &[f64], axis: &[f64]) -> Result<PsfCut> {
    if values.len() != axis.len() {
        return Err(Error::ShapeMismatch(format!("{} values on an axis of {}", values.len(), axis.len())));
    }
    if values.len() < 3 {
        return Err(Error::Degenerate("cut needs at least three samples".into()));
    }
    let (p, peak) = values.iter().cloned().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b });
    let floor = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(peak > floor) {
        return Err(Error::Degenerate("cut is flat".into()));
    }
    let thr = peak * 10f64.powf(-3.0 / 20.0);
    let crossing = |step: isize| -> Result<f64> {
        let mut i = p as isize;
        loop {
            let j = i + step;
            if j < 0 || j as usize >= values.len() {
                return Err(Error::Degenerate("main lobe extends past the end of the cut".into()));
            }
            let (a, b) = (values[i as usize], values[j as usize]);
            if b < thr {
                let t = (a - thr) / (a - b);
                return Ok(axis[i as usize] + t * (axis[j as usize] - axis[i as usize]));
            }
            i = j;
        }
    };
    let width = (crossing(1)? - crossing(-1)?).abs();
    let mut lo = p;
    while lo > 0 && values[lo - 1] < values[lo] {
        lo -= 1;
    }
    let mut hi = p;
    while hi + 1 < values.len() && values[hi + 1] < values[hi] {
        hi += 1;
    }
    let is_max = |i: usize| i > 0 && i + 1 < values.len() && values[i] >= values[i - 1] && values[i] >= values[i + 1] && values[i] > 0.0;
    let side = (1..lo).chain(hi + 1..values.len().saturating_sub(1)).filter(|&i| is_max(i)).map(|i| values[i]).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    Ok(PsfCut { width_3db_m: width, pslr_db: side.map(|s| 20.0 * (s / peak).log10()), peak_m: axis[p] })
}

/// PSF figures of a volume along each non-singleton axis through its peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsfReport {
    #[serde(rename = "peakLocation_m")]
    pub peak_m: [f64; 3],
    /// −3 dB widths along x, y, z; `None` for singleton axes.
    #[serde(rename = "mainlobeWidth3dB_m")]
    pub width_3db_m: [Option<f64>; 3],
    /// Worst sidelobe over the analysed axes (dB).
    #[serde(rename = "peakSidelobeRatio_dB")]
    pub pslr_db: Option<f64>,
}

pub fn psf_report(img: &ImageVolume) -> Result<PsfReport> {
    let idx = img.argmax();
    let mut width = [None; 3];
    let mut pslr: Option<f64> = None;
    for (a, axis) in [&img.x, &img.y, &img.z].into_iter().enumerate() {
        if axis.len() < 2 {
            continue;
        }
        let cut: Vec<f64> = (0..axis.len())
            .map(|i| {
                let mut at = idx;
                at[a] = i;
                img.values[at]
            })
            .collect();
        let c = psf_cut(&cut, axis)?;
        width[a] = Some(c.width_3db_m);
        if let Some(s) = c.pslr_db {
            pslr = Some(pslr.map_or(s, |p| p.max(s)));
        }
    }
    if width.iter().all(|w| w.is_none()) {
        return Err(Error::Degenerate("image has no axis with more than one sample".into()));
    }
    Ok(PsfReport { peak_m: img.position(idx), width_3db_m: width, pslr_db: pslr })
}
