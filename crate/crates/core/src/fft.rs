//! Thin 1-D/2-D FFT wrappers shared by the sensor simulator, the edge
//! estimator, and the frequency-domain loss. rustfft transforms are
//! unnormalized in both directions; callers scale explicitly.

use rustfft::num_complex::Complex;
use rustfft::{FftNum, FftPlanner};

/// In-place forward or inverse FFT along each row of a row-major `h × w`
/// complex buffer.
fn fft_rows<T: FftNum + Default>(data: &mut [Complex<T>], w: usize, inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse { planner.plan_fft_inverse(w) } else { planner.plan_fft_forward(w) };
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    for row in data.chunks_exact_mut(w) {
        fft.process_with_scratch(row, &mut scratch);
    }
}

fn transpose<T: Copy + Default>(data: &[T], w: usize, h: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    for y in 0..h {
        for x in 0..w {
            out[x * h + y] = data[y * w + x];
        }
    }
    out
}

/// In-place unnormalized 2-D FFT of a row-major `h × w` complex buffer.
pub(crate) fn fft2<T: FftNum + Default>(data: &mut Vec<Complex<T>>, w: usize, h: usize, inverse: bool) {
    debug_assert_eq!(data.len(), w * h);
    fft_rows(data, w, inverse);
    let mut t = transpose(data, w, h);
    fft_rows(&mut t, h, inverse);
    *data = transpose(&t, h, w);
}

/// Unnormalized 1-D FFT of a complex buffer.
pub(crate) fn fft1<T: FftNum>(data: &mut [Complex<T>], inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let fft = if inverse {
        planner.plan_fft_inverse(data.len())
    } else {
        planner.plan_fft_forward(data.len())
    };
    fft.process(data);
}

/// DFT sample frequency in cycles per sample for bin `k` of `n`, in
/// `[−0.5, 0.5)`: `k/n` for the first half, `(k−n)/n` beyond it.
#[inline]
pub(crate) fn dft_freq(k: usize, n: usize) -> f64 {
    if k < n.div_ceil(2) {
        k as f64 / n as f64
    } else {
        (k as f64 - n as f64) / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fft2_round_trips() {
        let (w, h) = (12, 10);
        let src: Vec<Complex<f64>> =
            (0..w * h).map(|i| Complex::new((i % 7) as f64, 0.0)).collect();
        let mut data = src.clone();
        fft2(&mut data, w, h, false);
        fft2(&mut data, w, h, true);
        let n = (w * h) as f64;
        for (a, b) in data.iter().zip(&src) {
            assert!((a.re / n - b.re).abs() < 1e-12);
            assert!((a.im / n).abs() < 1e-12);
        }
    }

    #[test]
    fn dft_freq_convention() {
        assert_eq!(dft_freq(0, 128), 0.0);
        assert_eq!(dft_freq(64, 128), -0.5);
        assert_eq!(dft_freq(1, 128), 1.0 / 128.0);
        assert_eq!(dft_freq(127, 128), -1.0 / 128.0);
        assert_eq!(dft_freq(7, 15), 7.0 / 15.0);
        assert_eq!(dft_freq(8, 15), -7.0 / 15.0);
    }
}
