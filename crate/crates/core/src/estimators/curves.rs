//! Per-row caches of pairwise alignment data.
//!
//! Every lateral pair `(x, x + dx)` in a row contributes one full NCC
//! curve over all shifts and one phase-difference regression slope. Both
//! are shared by every kernel cell that touches the pair, so they are
//! computed once per row and reused across neighboring pixel estimates.

use crate::fft;
use crate::volume::DisplacementVolume;
use rayon::prelude::*;

/// Oversampling factor used when unwrapping DFT phases. Evaluating the
/// spectrum on a denser grid keeps per-bin phase increments inside
/// (-pi, pi] for any arrival time the capture window can hold, which a
/// bare N-point unwrap cannot guarantee.
pub(crate) const PHASE_PAD: usize = 8;

pub(crate) const NCC_EPS: f64 = 1e-12;

/// Full NCC-vs-shift curve between an early and a late signal, where the
/// early signal is shifted with zero fill outside its support.
pub(crate) fn ncc_curve(early_up: &[f64], late_up: &[f64]) -> Vec<f64> {
    let raw = fft::xcorr_nonneg_lags(early_up, late_up);
    normalize_curve(raw, early_up, late_up)
}

fn normalize_curve(mut raw: Vec<f64>, early_up: &[f64], late_up: &[f64]) -> Vec<f64> {
    let nl = early_up.len();
    let late_energy: f64 = late_up.iter().map(|v| v * v).sum();
    let mut prefix = 0.0;
    let mut early_prefix = vec![0.0; nl];
    for (m, &v) in early_up.iter().enumerate() {
        prefix += v * v;
        early_prefix[m] = prefix;
    }
    for (tau, v) in raw.iter_mut().enumerate() {
        let early_energy = early_prefix[nl - 1 - tau];
        *v /= (early_energy * late_energy).sqrt() + NCC_EPS;
    }
    raw
}

/// Smallest argmax of a curve.
pub(crate) fn argmax_first(curve: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &v) in curve.iter().enumerate() {
        if v > curve[best] {
            best = i;
        }
    }
    best
}

/// Unwrapped DFT phases and magnitudes of one raw (non-upsampled) signal
/// at the digital bins `w_k = 2 pi k / N`, `k = 1..=K`.
#[derive(Debug, Clone)]
pub(crate) struct PhaseData {
    pub phase: Vec<f64>,
    pub magnitude: Vec<f64>,
}

pub(crate) fn phase_data(sig: &[f64], bins: usize) -> PhaseData {
    let n = sig.len();
    let padded_len = n * PHASE_PAD;
    let mut buf = vec![rustfft::num_complex::Complex64::new(0.0, 0.0); padded_len];
    for (dst, &src) in buf.iter_mut().zip(sig) {
        dst.re = src;
    }
    fft::forward(&mut buf);

    // Unwrap along the fine grid, then sample back at the N-point bins
    // (exact there because the signal is time-limited to N samples).
    const TAU: f64 = 2.0 * std::f64::consts::PI;
    let fine_top = bins * PHASE_PAD;
    let mut unwrapped = Vec::with_capacity(fine_top + 1);
    let mut prev_principal = buf[0].arg();
    let mut acc = prev_principal;
    unwrapped.push(acc);
    for k in 1..=fine_top {
        let cur = buf[k].arg();
        let mut delta = cur - prev_principal;
        delta -= (delta / TAU).round() * TAU;
        acc += delta;
        unwrapped.push(acc);
        prev_principal = cur;
    }

    let phase: Vec<f64> = (1..=bins).map(|k| unwrapped[k * PHASE_PAD]).collect();
    let magnitude: Vec<f64> = (1..=bins).map(|k| buf[k * PHASE_PAD].norm()).collect();
    PhaseData { phase, magnitude }
}

/// Least-squares slope of `values` against the digital frequencies
/// `w_k = 2 pi k / n_len`, `k = 1..=K`. Intercept fitted and discarded.
pub(crate) fn slope_vs_frequency(values: &[f64], n_len: usize) -> f64 {
    let p = values.len() as f64;
    let (mut sw, mut sv, mut sww, mut swv) = (0.0, 0.0, 0.0, 0.0);
    for (i, &v) in values.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * (i + 1) as f64 / n_len as f64;
        sw += w;
        sv += v;
        sww += w * w;
        swv += w * v;
    }
    (p * swv - sw * sv) / (p * sww - sw * sw)
}

/// All pairwise data for one axial row of a cleaned volume.
pub(crate) struct RowData {
    /// NCC curve per early index `xa` of the pair `(xa, xa + dx)`.
    pub ncc: Vec<Option<Vec<f64>>>,
    /// Smallest argmax of each NCC curve.
    pub td_peak: Vec<Option<usize>>,
    /// Phase-difference regression slope per pair, fractional samples.
    pub pd_slope: Vec<Option<f64>>,
    /// Per center x: magnitude-weight factor `S = (1/P) sum (w_k |U|_k)^2`
    /// of the group spectrum average.
    pub group_s: Vec<Option<f64>>,
    /// Per x: the cleaned signal has zero energy.
    pub zero_signal: Vec<bool>,
}

pub(crate) struct RowParams {
    pub dx: usize,
    pub upsample: usize,
    pub bins: usize,
    pub need_td: bool,
    pub need_pd: bool,
}

pub(crate) fn compute_row(vol: &DisplacementVolume, z: usize, rp: &RowParams) -> RowData {
    let x_len = vol.x_len();
    let n_len = vol.n_len();

    struct SignalData {
        up: Vec<f64>,
        spectrum: Vec<rustfft::num_complex::Complex64>,
        pd: Option<PhaseData>,
        energy: f64,
    }

    let per_signal: Vec<SignalData> = (0..x_len)
        .into_par_iter()
        .map(|x| {
            let sig = vol.signal(x, z);
            let energy: f64 = sig.iter().map(|v| v * v).sum();
            let (up, spectrum) = if rp.need_td {
                let up = fft::zero_pad_upsample(sig, rp.upsample);
                let spectrum = fft::padded_spectrum(&up);
                (up, spectrum)
            } else {
                (Vec::new(), Vec::new())
            };
            let pd = rp.need_pd.then(|| phase_data(sig, rp.bins));
            SignalData {
                up,
                spectrum,
                pd,
                energy,
            }
        })
        .collect();

    let zero_signal: Vec<bool> = per_signal.iter().map(|s| s.energy == 0.0).collect();

    // (ncc curve, argmax, pd slope) per pair.
    type PairData = (Option<Vec<f64>>, Option<usize>, Option<f64>);
    let nl = n_len * rp.upsample;
    let pair_count = x_len.saturating_sub(rp.dx);
    let pairs: Vec<PairData> = (0..x_len)
        .into_par_iter()
        .map(|xa| {
            if xa >= pair_count {
                return (None, None, None);
            }
            let xb = xa + rp.dx;
            let curve = rp.need_td.then(|| {
                let raw = fft::xcorr_from_spectra(
                    &per_signal[xa].spectrum,
                    &per_signal[xb].spectrum,
                    nl,
                );
                normalize_curve(raw, &per_signal[xa].up, &per_signal[xb].up)
            });
            let peak = curve.as_ref().map(|c| argmax_first(c));
            let slope = if rp.need_pd {
                let pa = per_signal[xa].pd.as_ref().unwrap();
                let pb = per_signal[xb].pd.as_ref().unwrap();
                let diff: Vec<f64> = pa
                    .phase
                    .iter()
                    .zip(&pb.phase)
                    .map(|(a, b)| a - b)
                    .collect();
                Some(slope_vs_frequency(&diff, n_len))
            } else {
                None
            };
            (curve, peak, slope)
        })
        .collect();

    let group_s: Vec<Option<f64>> = if rp.need_pd {
        (0..x_len)
            .map(|x| {
                if x < rp.dx || x + rp.dx >= x_len {
                    return None;
                }
                let members = [
                    per_signal[x].pd.as_ref().unwrap(),
                    per_signal[x - rp.dx].pd.as_ref().unwrap(),
                    per_signal[x + rp.dx].pd.as_ref().unwrap(),
                ];
                Some(group_weight_factor(&members, rp.bins, n_len))
            })
            .collect()
    } else {
        vec![None; x_len]
    };

    let mut ncc = Vec::with_capacity(x_len);
    let mut td_peak = Vec::with_capacity(x_len);
    let mut pd_slope = Vec::with_capacity(x_len);
    for (curve, peak, slope) in pairs {
        ncc.push(curve);
        td_peak.push(peak);
        pd_slope.push(slope);
    }
    RowData {
        ncc,
        td_peak,
        pd_slope,
        group_s,
        zero_signal,
    }
}

/// `S = (1/P) sum_k (w_k |U|_k)^2` with `|U|` the group-averaged magnitude
/// spectrum normalized by its in-band maximum.
pub(crate) fn group_weight_factor(members: &[&PhaseData; 3], bins: usize, n_len: usize) -> f64 {
    let mut avg = vec![0.0; bins];
    for m in members {
        for (dst, &v) in avg.iter_mut().zip(&m.magnitude) {
            *dst += v / 3.0;
        }
    }
    let max = avg.iter().cloned().fold(0.0, f64::max);
    let mut s = 0.0;
    for (i, &v) in avg.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * (i + 1) as f64 / n_len as f64;
        let u = v / (max + NCC_EPS);
        s += (w * u) * (w * u);
    }
    s / bins as f64
}
