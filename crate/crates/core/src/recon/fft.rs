use ndarray::{Array3, ArrayViewMut1, Axis, Dimension, Zip};
use num_complex::Complex64;
use rustfft::FftPlanner;

/// Unnormalized DFT of every lane along `axis`; `inverse` selects `e^{+j}`.
pub(crate) fn fft_along<D: Dimension>(arr: &mut ndarray::Array<Complex64, D>, axis: usize, inverse: bool) {
    let n = arr.len_of(Axis(axis));
    if n <= 1 {
        return;
    }
    let mut planner = FftPlanner::new();
    let plan = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    Zip::from(arr.lanes_mut(Axis(axis))).par_for_each(|mut lane: ArrayViewMut1<Complex64>| {
        if let Some(s) = lane.as_slice_mut() {
            plan.process(s);
        } else {
            let mut buf: Vec<Complex64> = lane.iter().copied().collect();
            plan.process(&mut buf);
            lane.iter_mut().zip(buf).for_each(|(d, v)| *d = v);
        }
    });
}

/// Signed frequency index of DFT bin `m` of `n` (`n/2` maps to negative).
#[inline]
pub(crate) fn signed_bin(m: usize, n: usize) -> f64 {
    if m < n.div_ceil(2) {
        m as f64
    } else {
        m as f64 - n as f64
    }
}

/// Angular spatial frequencies of an `n`-point DFT with sample spacing `d`.
pub(crate) fn fft_wavenumbers(n: usize, d: f64) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|m| 2.0 * std::f64::consts::PI * signed_bin(m, n) / (n as f64 * d)).collect()
}

/// Two neighbouring indices and the weight of the second for position
/// `f` (in samples) on a periodic axis of length `n`.
#[inline]
pub(crate) fn periodic_taps(f: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let fl = f.floor();
    let w = f - fl;
    let i0 = (fl as i64).rem_euclid(n as i64) as usize;
    (i0, (i0 + 1) % n, w)
}

/// Zero-padded copy of `src` in the leading corner of a larger array.
pub(crate) fn padded(src: &Array3<Complex64>, shape: (usize, usize, usize)) -> Array3<Complex64> {
    let mut out = Array3::zeros(shape);
    let (a, b, c) = src.dim();
    out.slice_mut(ndarray::s![..a, ..b, ..c]).assign(src);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_and_taps() {
        assert_eq!((0..4).map(|m| signed_bin(m, 4)).collect::<Vec<_>>(), vec![0.0, 1.0, -2.0, -1.0]);
        assert_eq!((0..3).map(|m| signed_bin(m, 3)).collect::<Vec<_>>(), vec![0.0, 1.0, -1.0]);
        assert_eq!(periodic_taps(-0.25, 8), (7, 0, 0.75));
        assert_eq!(periodic_taps(7.5, 8), (7, 0, 0.5));
    }

    #[test]
    fn axis_transform_matches_direct() {
        let mut a = Array3::from_shape_fn((3, 5, 2), |(i, j, k)| Complex64::new(i as f64 + 0.5 * k as f64, j as f64 * 0.3));
        let orig = a.clone();
        fft_along(&mut a, 1, false);
        for i in 0..3 {
            for k in 0..2 {
                for m in 0..5 {
                    let want: Complex64 = (0..5)
                        .map(|j| orig[[i, j, k]] * Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * (m * j) as f64 / 5.0))
                        .sum();
                    assert!((a[[i, m, k]] - want).norm() < 1e-12);
                }
            }
        }
        fft_along(&mut a, 1, true);
        for (x, y) in a.iter().zip(orig.iter()) {
            assert!((x / 5.0 - y).norm() < 1e-12);
        }
    }
}
