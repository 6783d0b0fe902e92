//! Constrained optimization of the signal-group shift parameter.
//!
//! For a particle at `(x, z)` and its lateral neighbors at `x +/- dx`, the
//! shift `T` that best aligns the group is found by minimizing a loss over
//! all integer shifts, coupled across an `l x a` Gaussian-weighted
//! neighborhood so every nearby group votes on the same shift. Two losses
//! are available: `2 - NCC{u1(n-T), u0(n)} - NCC{u0(n-T), u2(n)}` on
//! L-times upsampled signals (time domain), and a magnitude-weighted MSE
//! between the regressed phase-difference lines and the phase ramp `T/L w`
//! (phase domain), plus their weighted combination. The minimizing shift
//! converts to speed via `C = dx / T * (L Fs / Fsp) * 1e-3`.

mod curves;
mod kernel;

pub use kernel::{edge_renormalize, gaussian_kernel, KernelWeights};

use crate::error::{Result, SwsError};
use crate::metrics;
use crate::preprocess::{lateral_interpolate, tl_clean, temporal_upsample, CleaningParams};
use crate::volume::{DisplacementVolume, SwsMap};
use curves::{RowData, RowParams, NCC_EPS};
use rayon::prelude::*;
use std::collections::VecDeque;

/// Which loss drives the shift optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    TimeDomain,
    PhaseDomain,
    Combined,
}

/// Parameters of the constrained shift optimization.
#[derive(Debug, Clone, Copy)]
pub struct OptimizationParams {
    /// Lateral group separation in pixels (on the interpolated grid).
    pub dx_px: usize,
    /// Kernel lateral extent, odd.
    pub kernel_l: usize,
    /// Kernel axial extent, odd.
    pub kernel_a: usize,
    pub sigma_w: f64,
    /// Temporal interpolation order L.
    pub upsample: usize,
    /// Significant-frequency cutoff for the phase-domain loss.
    pub f_sig_hz: f64,
    /// Time-domain weight in combined mode.
    pub gamma1: f64,
    /// Phase-domain weight in combined mode.
    pub gamma2: f64,
    pub mode: LossMode,
}

impl OptimizationParams {
    pub fn validate(&self, fs_hz: f64, n_len: usize) -> Result<()> {
        if self.dx_px < 1 {
            return Err(SwsError::Parameter("dx_px must be >= 1".into()));
        }
        if self.kernel_l % 2 == 0 || self.kernel_a % 2 == 0 {
            return Err(SwsError::Parameter("kernel extents must be odd".into()));
        }
        if !(self.sigma_w > 0.0) {
            return Err(SwsError::Parameter("sigma_w must be > 0".into()));
        }
        if self.upsample < 1 {
            return Err(SwsError::Parameter("upsample order must be >= 1".into()));
        }
        if !(self.f_sig_hz > 0.0 && self.f_sig_hz < fs_hz / 2.0) {
            return Err(SwsError::Parameter(format!(
                "f_sig_hz must lie in (0, fs/2) = (0, {})",
                fs_hz / 2.0
            )));
        }
        if self.gamma1 < 0.0 || self.gamma2 < 0.0 {
            return Err(SwsError::Parameter("gamma weights must be >= 0".into()));
        }
        if self.mode == LossMode::Combined && self.gamma1 + self.gamma2 <= 0.0 {
            return Err(SwsError::Parameter(
                "combined mode needs gamma1 + gamma2 > 0".into(),
            ));
        }
        if self.needs_pd() && significant_bins(n_len, self.f_sig_hz, fs_hz) < 2 {
            return Err(SwsError::Parameter(
                "phase-domain loss needs at least 2 frequency bins below f_sig".into(),
            ));
        }
        Ok(())
    }

    fn needs_td(&self) -> bool {
        match self.mode {
            LossMode::TimeDomain => true,
            LossMode::PhaseDomain => false,
            LossMode::Combined => self.gamma1 > 0.0,
        }
    }

    fn needs_pd(&self) -> bool {
        match self.mode {
            LossMode::TimeDomain => false,
            LossMode::PhaseDomain => true,
            LossMode::Combined => self.gamma2 > 0.0,
        }
    }
}

fn significant_bins(n_len: usize, f_sig_hz: f64, fs_hz: f64) -> usize {
    (n_len as f64 * f_sig_hz / fs_hz).floor() as usize
}

/// Displacement signals of a center particle and its two lateral
/// neighbors at `-dx` (u1, earlier) and `+dx` (u2, later).
#[derive(Debug, Clone)]
pub struct SignalGroup {
    pub u0: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

impl SignalGroup {
    pub fn new(u0: Vec<f64>, u1: Vec<f64>, u2: Vec<f64>) -> Result<Self> {
        if u0.len() != u1.len() || u0.len() != u2.len() {
            return Err(SwsError::Parameter(
                "signal group members must have equal lengths".into(),
            ));
        }
        if [&u0, &u1, &u2]
            .iter()
            .any(|s| s.iter().any(|v| !v.is_finite()))
        {
            return Err(SwsError::Data("non-finite sample in signal group".into()));
        }
        Ok(Self { u0, u1, u2 })
    }

    pub fn len(&self) -> usize {
        self.u0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u0.is_empty()
    }
}

/// Optimized shift for one pixel plus the diagnostics of its search.
#[derive(Debug, Clone)]
pub struct ShiftEstimate {
    /// Shift in samples at the upsampled rate `L * Fs`.
    pub t_opt: usize,
    pub search_range: (usize, usize),
    /// Objective value per candidate shift, `search_range.0`-based.
    pub objective_curve: Vec<f64>,
}

/// Normalized cross-correlation `sum(ab) / (sqrt(sum a^2 sum b^2) + eps)`.
/// The epsilon keeps all-zero signals at score 0 instead of NaN.
pub fn ncc(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "ncc needs equal lengths");
    let mut num = 0.0;
    let mut ea = 0.0;
    let mut eb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += x * y;
        ea += x * x;
        eb += y * y;
    }
    num / ((ea * eb).sqrt() + NCC_EPS)
}

fn ncc_at_shift(early: &[f64], late: &[f64], shift: usize) -> f64 {
    let nl = early.len();
    assert!(shift < nl);
    let overlap = nl - shift;
    let mut num = 0.0;
    let mut ea = 0.0;
    for m in 0..overlap {
        num += early[m] * late[m + shift];
        ea += early[m] * early[m];
    }
    let eb: f64 = late.iter().map(|v| v * v).sum();
    num / ((ea * eb).sqrt() + NCC_EPS)
}

/// Brute-force alignment delays of a group on L-upsampled signals: the
/// argmax over all shifts of `NCC{u1(n-t), u0(n)}` and
/// `NCC{u0(n-t), u2(n)}`. Ties resolve to the smallest shift.
pub fn pairwise_delays_td(group: &SignalGroup, upsample: usize) -> (usize, usize) {
    let u0 = temporal_upsample(&group.u0, upsample);
    let u1 = temporal_upsample(&group.u1, upsample);
    let u2 = temporal_upsample(&group.u2, upsample);
    let t10 = curves::argmax_first(&curves::ncc_curve(&u1, &u0));
    let t02 = curves::argmax_first(&curves::ncc_curve(&u0, &u2));
    (t10, t02)
}

/// Time-domain loss `2 - NCC{u1L(n-T), u0L(n)} - NCC{u0L(n-T), u2L(n)}`
/// on L-upsampled signals; always in [0, 4].
pub fn loss_td(group: &SignalGroup, shift: usize, upsample: usize) -> f64 {
    let nl = group.len() * upsample;
    assert!(shift >= 1 && shift < nl, "shift must lie in [1, N*L-1]");
    let u0 = temporal_upsample(&group.u0, upsample);
    let u1 = temporal_upsample(&group.u1, upsample);
    let u2 = temporal_upsample(&group.u2, upsample);
    2.0 - ncc_at_shift(&u1, &u0, shift) - ncc_at_shift(&u0, &u2, shift)
}

/// Group delay between two signals from the slope of their unwrapped
/// phase difference over the significant band, in fractional samples.
/// Positive when `b` lags `a`.
pub fn phase_shift_regress(a: &[f64], b: &[f64], f_sig_hz: f64, fs_hz: f64) -> Result<f64> {
    assert_eq!(a.len(), b.len(), "phase regression needs equal lengths");
    let bins = significant_bins(a.len(), f_sig_hz, fs_hz);
    if bins < 2 {
        return Err(SwsError::Parameter(format!(
            "significant band holds {bins} bins, need at least 2"
        )));
    }
    let pa = curves::phase_data(a, bins);
    let pb = curves::phase_data(b, bins);
    let diff: Vec<f64> = pa.phase.iter().zip(&pb.phase).map(|(x, y)| x - y).collect();
    Ok(curves::slope_vs_frequency(&diff, a.len()))
}

/// Phase-alignment MSE of a group at shift `T`: squared gaps between the
/// regressed phase-difference lines and the ramp `(T/L) w`, weighted by
/// the normalized group magnitude spectrum, averaged over the band.
pub fn loss_pd(
    group: &SignalGroup,
    shift: usize,
    upsample: usize,
    f_sig_hz: f64,
    fs_hz: f64,
) -> Result<f64> {
    assert!(shift >= 1, "shift must be >= 1");
    let n = group.len();
    let bins = significant_bins(n, f_sig_hz, fs_hz);
    if bins < 2 {
        return Err(SwsError::Parameter(format!(
            "significant band holds {bins} bins, need at least 2"
        )));
    }
    let p0 = curves::phase_data(&group.u0, bins);
    let p1 = curves::phase_data(&group.u1, bins);
    let p2 = curves::phase_data(&group.u2, bins);
    let diff01: Vec<f64> = p0.phase.iter().zip(&p1.phase).map(|(a, b)| b - a).collect();
    let diff20: Vec<f64> = p2.phase.iter().zip(&p0.phase).map(|(a, b)| b - a).collect();
    // m01: delay of u0 behind u1; m20: delay of u2 behind u0.
    let m01 = curves::slope_vs_frequency(&diff01, n);
    let m20 = curves::slope_vs_frequency(&diff20, n);

    let mut avg = vec![0.0; bins];
    for p in [&p0, &p1, &p2] {
        for (dst, &v) in avg.iter_mut().zip(&p.magnitude) {
            *dst += v / 3.0;
        }
    }
    let max = avg.iter().cloned().fold(0.0, f64::max);
    let ratio = shift as f64 / upsample as f64;
    let mut l01 = 0.0;
    let mut l20 = 0.0;
    for (i, &mag) in avg.iter().enumerate() {
        let w = 2.0 * std::f64::consts::PI * (i + 1) as f64 / n as f64;
        let u = mag / (max + NCC_EPS);
        let g01 = (m01 * w - ratio * w) * u;
        let g20 = (m20 * w - ratio * w) * u;
        l01 += g01 * g01;
        l20 += g20 * g20;
    }
    Ok((l01 + l20) / bins as f64)
}

/// Shift search bounds from the pre-computed pairwise delays of every
/// kernel cell: `[max(1, min), max]`, widened by the upsample order when
/// the bounds collapse.
pub fn search_range(pairwise: &[(i64, i64)], upsample: usize) -> (usize, usize) {
    assert!(!pairwise.is_empty(), "search range needs at least one pair");
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for &(a, b) in pairwise {
        lo = lo.min(a).min(b);
        hi = hi.max(a).max(b);
    }
    let t_min = lo.max(1) as usize;
    let t_max = (hi.max(t_min as i64)) as usize;
    if t_min == t_max {
        let widened_lo = t_min.saturating_sub(upsample).max(1);
        (widened_lo, t_max + upsample)
    } else {
        (t_min, t_max)
    }
}

/// Speed from a shift at the upsampled rate:
/// `C = dx / T * (L * Fs) / Fsp * 1e-3` m/s.
pub fn sws_from_shift(
    shift: usize,
    dx_px: usize,
    upsample: usize,
    fs_hz: f64,
    fsp_px_per_mm: f64,
) -> f64 {
    assert!(shift >= 1, "shift must be >= 1");
    dx_px as f64 / shift as f64 * (upsample as f64 * fs_hz) / fsp_px_per_mm * 1e-3
}

struct RowWindow<'a> {
    z_base: usize,
    rows: Vec<&'a RowData>,
}

impl<'a> RowWindow<'a> {
    fn get(&self, z: usize) -> Option<&'a RowData> {
        z.checked_sub(self.z_base)
            .and_then(|i| self.rows.get(i))
            .copied()
    }
}

struct CellData<'a> {
    mu: f64,
    ncc10: Option<&'a [f64]>,
    ncc02: Option<&'a [f64]>,
    pd: Option<(f64, f64, f64)>, // m01, m20, S
}

fn estimate_core(
    window: &RowWindow<'_>,
    x: usize,
    z: usize,
    op: &OptimizationParams,
    x_len: usize,
    z_len: usize,
    nl: usize,
) -> Option<ShiftEstimate> {
    let dx = op.dx_px;
    let half_l = (op.kernel_l as i64 - 1) / 2;
    let half_a = (op.kernel_a as i64 - 1) / 2;

    let cell_ok = |dk: i64, di: i64| -> bool {
        let zz = z as i64 + di;
        let xx = x as i64 + dk;
        if zz < 0 || zz >= z_len as i64 || xx < dx as i64 || xx + dx as i64 >= x_len as i64 {
            return false;
        }
        let row = match window.get(zz as usize) {
            Some(r) => r,
            None => return false,
        };
        let xx = xx as usize;
        !(row.zero_signal[xx - dx] || row.zero_signal[xx] || row.zero_signal[xx + dx])
    };

    if !cell_ok(0, 0) {
        return None;
    }

    let mut inside = Vec::with_capacity(op.kernel_l * op.kernel_a);
    let mut all_inside = true;
    for dk in -half_l..=half_l {
        for di in -half_a..=half_a {
            let ok = cell_ok(dk, di);
            all_inside &= ok;
            inside.push(ok);
        }
    }
    let mut weights = gaussian_kernel(op.kernel_l, op.kernel_a, op.sigma_w);
    if !all_inside {
        weights = edge_renormalize(&weights, &inside)
            .expect("center cell verified inside before renormalizing");
    }

    let mut cells: Vec<CellData<'_>> = Vec::with_capacity(op.kernel_l * op.kernel_a);
    let mut delays: Vec<(i64, i64)> = Vec::new();
    for (dk, di, mu) in weights.cells() {
        let zz = (z as i64 + di) as usize;
        let xx = (x as i64 + dk) as usize;
        let row = window.get(zz).expect("valid cells have cached rows");
        let (mut ncc10, mut ncc02) = (None, None);
        let mut pd = None;
        if op.needs_td() {
            ncc10 = row.ncc[xx - dx].as_deref();
            ncc02 = row.ncc[xx].as_deref();
            delays.push((
                row.td_peak[xx - dx].expect("pair exists for valid cell") as i64,
                row.td_peak[xx].expect("pair exists for valid cell") as i64,
            ));
        }
        if op.needs_pd() {
            let m01 = row.pd_slope[xx - dx].expect("pair exists for valid cell");
            let m20 = row.pd_slope[xx].expect("pair exists for valid cell");
            let s = row.group_s[xx].expect("group factor exists for valid cell");
            pd = Some((m01, m20, s));
            let l = op.upsample as f64;
            delays.push(((m01 * l).round() as i64, ((m20 * l).round()) as i64));
        }
        cells.push(CellData {
            mu,
            ncc10,
            ncc02,
            pd,
        });
    }

    let (mut t_min, mut t_max) = search_range(&delays, op.upsample);
    t_max = t_max.min(nl - 1);
    t_min = t_min.min(t_max);

    let mut curve = Vec::with_capacity(t_max - t_min + 1);
    let mut best_t = t_min;
    let mut best_v = f64::INFINITY;
    for t in t_min..=t_max {
        let mut total = 0.0;
        for cell in &cells {
            let mut j = 0.0;
            if let (Some(c10), Some(c02)) = (cell.ncc10, cell.ncc02) {
                let td = 2.0 - c10[t] - c02[t];
                j += if op.mode == LossMode::Combined {
                    op.gamma1 * td
                } else {
                    td
                };
            }
            if let Some((m01, m20, s)) = cell.pd {
                let ratio = t as f64 / op.upsample as f64;
                let pd = ((m01 - ratio) * (m01 - ratio) + (m20 - ratio) * (m20 - ratio)) * s;
                j += if op.mode == LossMode::Combined {
                    op.gamma2 * pd
                } else {
                    pd
                };
            }
            total += cell.mu * j;
        }
        if total < best_v {
            best_v = total;
            best_t = t;
        }
        curve.push(total);
    }

    Some(ShiftEstimate {
        t_opt: best_t,
        search_range: (t_min, t_max),
        objective_curve: curve,
    })
}

fn row_params(op: &OptimizationParams, vol: &DisplacementVolume) -> RowParams {
    RowParams {
        dx: op.dx_px,
        upsample: op.upsample,
        bins: significant_bins(vol.n_len(), op.f_sig_hz, vol.fs_hz),
        need_td: op.needs_td(),
        need_pd: op.needs_pd(),
    }
}

/// Optimizes the shift of a single pixel of a cleaned volume. Returns
/// `None` when the pixel lacks `+/- dx` neighbors or its signal group is
/// degenerate (all zero after cleaning).
pub fn estimate_pixel(
    vol_clean: &DisplacementVolume,
    x: usize,
    z: usize,
    op: &OptimizationParams,
) -> Result<Option<ShiftEstimate>> {
    op.validate(vol_clean.fs_hz, vol_clean.n_len())?;
    if x >= vol_clean.x_len() || z >= vol_clean.z_len() {
        return Err(SwsError::Usage(format!(
            "pixel ({x}, {z}) outside volume {}x{}",
            vol_clean.x_len(),
            vol_clean.z_len()
        )));
    }
    let rp = row_params(op, vol_clean);
    let half_a = (op.kernel_a - 1) / 2;
    let z_lo = z.saturating_sub(half_a);
    let z_hi = (z + half_a).min(vol_clean.z_len() - 1);
    let rows: Vec<RowData> = (z_lo..=z_hi)
        .map(|zz| curves::compute_row(vol_clean, zz, &rp))
        .collect();
    let window = RowWindow {
        z_base: z_lo,
        rows: rows.iter().collect(),
    };
    let nl = vol_clean.n_len() * op.upsample;
    Ok(estimate_core(
        &window,
        x,
        z,
        op,
        vol_clean.x_len(),
        vol_clean.z_len(),
        nl,
    ))
}

/// Full reconstruction: lateral interpolation, TL-plane cleaning,
/// per-pixel constrained shift optimization, shift-to-speed conversion
/// and an optional median post-filter.
pub fn reconstruct(
    vol: &DisplacementVolume,
    cp: &CleaningParams,
    op: &OptimizationParams,
    interp: usize,
    median_window: Option<usize>,
) -> Result<SwsMap> {
    vol.check_pipeline_dims()?;
    op.validate(vol.fs_hz, vol.n_len())?;
    let interpolated = lateral_interpolate(vol, interp);
    let cleaned = tl_clean(&interpolated, cp)?;
    let cvol = &cleaned.volume;
    cvol.check_pipeline_dims()?;
    let map = estimate_map(cvol, op)?;
    match median_window {
        Some(w) => metrics::median_filter(&map, w),
        None => Ok(map),
    }
}

/// Per-pixel estimation over an already cleaned volume.
pub fn estimate_map(cvol: &DisplacementVolume, op: &OptimizationParams) -> Result<SwsMap> {
    op.validate(cvol.fs_hz, cvol.n_len())?;
    let (x_len, z_len) = (cvol.x_len(), cvol.z_len());
    let nl = cvol.n_len() * op.upsample;
    let half_a = (op.kernel_a - 1) / 2;
    let rp = row_params(op, cvol);

    let mut map = SwsMap::new_invalid(x_len, z_len);
    let mut ring: VecDeque<(usize, RowData)> = VecDeque::new();
    for z in 0..z_len {
        let need_hi = (z + half_a).min(z_len - 1);
        let next = ring.back().map_or(z.saturating_sub(half_a), |(zz, _)| zz + 1);
        for zz in next..=need_hi {
            ring.push_back((zz, curves::compute_row(cvol, zz, &rp)));
        }
        while ring
            .front()
            .is_some_and(|(zz, _)| *zz + half_a < z)
        {
            ring.pop_front();
        }
        let window = RowWindow {
            z_base: ring.front().expect("ring holds current row").0,
            rows: ring.iter().map(|(_, r)| r).collect(),
        };
        let speeds: Vec<Option<f64>> = (0..x_len)
            .into_par_iter()
            .map(|x| {
                estimate_core(&window, x, z, op, x_len, z_len, nl).map(|est| {
                    sws_from_shift(
                        est.t_opt,
                        op.dx_px,
                        op.upsample,
                        cvol.fs_hz,
                        cvol.fsp_px_per_mm,
                    )
                })
            })
            .collect();
        for (x, speed) in speeds.into_iter().enumerate() {
            if let Some(c) = speed {
                map.set(x, z, c);
            }
        }
    }
    Ok(map)
}
