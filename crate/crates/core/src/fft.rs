//! Shared FFT helpers: cached plans, zero-padding interpolation and
//! full-lag cross-correlation.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::sync::Arc;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

fn plan_inverse(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_inverse(len))
}

/// Unnormalized forward DFT in place.
pub(crate) fn forward(buf: &mut [Complex64]) {
    plan_forward(buf.len()).process(buf);
}

/// Inverse DFT in place, scaled by 1/len.
pub(crate) fn inverse(buf: &mut [Complex64]) {
    let n = buf.len();
    plan_inverse(n).process(buf);
    let s = 1.0 / n as f64;
    for v in buf.iter_mut() {
        *v *= s;
    }
}

pub(crate) fn to_complex(sig: &[f64]) -> Vec<Complex64> {
    sig.iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

/// Spectrum of `sig` (unnormalized N-point DFT).
pub(crate) fn spectrum(sig: &[f64]) -> Vec<Complex64> {
    let mut buf = to_complex(sig);
    forward(&mut buf);
    buf
}

/// Zero-insertion upsampling by `factor` followed by the ideal anti-imaging
/// lowpass (|w| < pi/factor), amplitude-compensated so the original samples
/// reappear at indices k*factor. Output length is factor*len.
pub(crate) fn zero_pad_upsample(sig: &[f64], factor: usize) -> Vec<f64> {
    assert!(factor >= 1, "upsample factor must be >= 1");
    if factor == 1 {
        return sig.to_vec();
    }
    let n = sig.len();
    let out_len = n * factor;
    let spec = spectrum(sig);

    let mut padded = vec![Complex64::new(0.0, 0.0); out_len];
    if n % 2 == 0 {
        let half = n / 2;
        padded[..half].copy_from_slice(&spec[..half]);
        // The Nyquist bin sits on the filter edge; splitting it keeps the
        // interpolant real and passes through the knots.
        padded[half] = spec[half] * 0.5;
        padded[out_len - half] = spec[half] * 0.5;
        for k in 1..half {
            padded[out_len - k] = spec[n - k];
        }
    } else {
        let half = (n - 1) / 2;
        padded[..=half].copy_from_slice(&spec[..=half]);
        for k in 1..=half {
            padded[out_len - k] = spec[n - k];
        }
    }

    inverse(&mut padded);
    padded.iter().map(|v| v.re * factor as f64).collect()
}

/// Cross-correlation `c[t] = sum_m a[m] * b[m + t]` for all lags
/// `t in 0..len`, with `b` treated as zero outside its support.
pub(crate) fn xcorr_nonneg_lags(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let len = a.len();
    let m = 2 * len;
    let mut fa = vec![Complex64::new(0.0, 0.0); m];
    let mut fb = vec![Complex64::new(0.0, 0.0); m];
    for (dst, &src) in fa.iter_mut().zip(a) {
        dst.re = src;
    }
    for (dst, &src) in fb.iter_mut().zip(b) {
        dst.re = src;
    }
    forward(&mut fa);
    forward(&mut fb);
    for (va, vb) in fa.iter_mut().zip(&fb) {
        *va = va.conj() * vb;
    }
    inverse(&mut fa);
    fa[..len].iter().map(|v| v.re).collect()
}

/// Cross-correlation of externally prepared padded spectra (both length
/// `2*len`), returning lags `0..len`. Lets callers cache per-signal FFTs.
pub(crate) fn xcorr_from_spectra(fa: &[Complex64], fb: &[Complex64], len: usize) -> Vec<f64> {
    assert_eq!(fa.len(), fb.len());
    let mut prod: Vec<Complex64> = fa.iter().zip(fb).map(|(a, b)| a.conj() * b).collect();
    inverse(&mut prod);
    prod[..len].iter().map(|v| v.re).collect()
}

/// Padded (2x length) spectrum for [`xcorr_from_spectra`].
pub(crate) fn padded_spectrum(sig: &[f64]) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); 2 * sig.len()];
    for (dst, &src) in buf.iter_mut().zip(sig) {
        dst.re = src;
    }
    forward(&mut buf);
    buf
}
