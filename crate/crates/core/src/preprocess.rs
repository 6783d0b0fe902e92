//! Lateral interpolation and time-lateral (TL) plane cleaning.
//!
//! Cleaning isolates the traveling wavefront in each fixed-depth slice
//! `D(x, n)`: the slice is restricted to the lateral ROI and peak-normalized
//! per row, outlier peaks are pruned against a straight-line fit of the
//! time-to-peak profile, piecewise lines are fitted to the surviving
//! high-amplitude support, and a Gaussian mask built from those lines is
//! overlaid to attenuate everything away from the wavefront.

use crate::error::{Result, SwsError};
use crate::fft;
use crate::volume::DisplacementVolume;
use rayon::prelude::*;

/// Knobs of the TL-plane cleaning stage.
#[derive(Debug, Clone, Copy)]
pub struct CleaningParams {
    /// Squared-distance threshold for peak pruning, in squared samples.
    pub t_sh: f64,
    /// Normalized-amplitude inclusion threshold for the line-fit support.
    pub q: f64,
    /// Gaussian mask spread, in samples.
    pub rho: f64,
    /// Number of piecewise lines.
    pub r: usize,
    /// Lateral index range `[lo, hi)` kept for cleaning (excludes the
    /// blind zone on real data).
    pub roi_x: (usize, usize),
}

impl CleaningParams {
    pub fn validate(&self, x_len: usize) -> Result<()> {
        if !(self.t_sh > 0.0) {
            return Err(SwsError::Parameter("t_sh must be > 0".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(SwsError::Parameter("q must be in (0, 1)".into()));
        }
        if !(self.rho > 0.0) {
            return Err(SwsError::Parameter("rho must be > 0".into()));
        }
        if self.r < 1 {
            return Err(SwsError::Parameter("r must be >= 1".into()));
        }
        let (lo, hi) = self.roi_x;
        if lo >= hi || hi > x_len {
            return Err(SwsError::Parameter(format!(
                "roi_x ({lo}, {hi}) empty or outside lateral extent {x_len}"
            )));
        }
        if hi - lo < 2 * self.r {
            return Err(SwsError::Parameter(format!(
                "roi width {} too small for r = {} lines",
                hi - lo,
                self.r
            )));
        }
        Ok(())
    }
}

/// One conditioned time-lateral slice, ROI-local, row-normalized.
#[derive(Debug, Clone)]
pub struct TlPlane {
    d: Vec<f64>,
    x_len: usize,
    n_len: usize,
    pub z_index: usize,
}

impl TlPlane {
    pub fn x_len(&self) -> usize {
        self.x_len
    }
    pub fn n_len(&self) -> usize {
        self.n_len
    }

    #[inline]
    pub fn at(&self, x: usize, n: usize) -> f64 {
        self.d[x * self.n_len + n]
    }

    #[inline]
    pub fn row(&self, x: usize) -> &[f64] {
        &self.d[x * self.n_len..(x + 1) * self.n_len]
    }
}

/// Piecewise straight lines through the wavefront, with half-open lateral
/// ranges that partition the ROI in order.
#[derive(Debug, Clone)]
pub struct PiecewiseLines {
    pub lines: Vec<LineSegment>,
}

#[derive(Debug, Clone, Copy)]
pub struct LineSegment {
    /// Samples per lateral pixel.
    pub slope: f64,
    /// Samples.
    pub intercept: f64,
    pub x_range: (usize, usize),
}

/// DFT-upsamples every lateral line by `factor`, keeping the original grid
/// points and trimming the wrap-around extrapolation past the last knot.
/// Output lateral extent is `factor * X - (factor - 1)`.
pub fn lateral_interpolate(vol: &DisplacementVolume, factor: usize) -> DisplacementVolume {
    assert!(factor >= 1, "interpolation order must be >= 1");
    if factor == 1 {
        return vol.clone();
    }
    let (x_len, z_len, n_len) = (vol.x_len(), vol.z_len(), vol.n_len());
    let out_x = factor * x_len - (factor - 1);
    let mut data = vec![0.0; out_x * z_len * n_len];
    let mut lateral = vec![0.0; x_len];
    for z in 0..z_len {
        for n in 0..n_len {
            for x in 0..x_len {
                lateral[x] = vol.at(x, z, n);
            }
            let up = fft::zero_pad_upsample(&lateral, factor);
            for x in 0..out_x {
                data[((x * z_len) + z) * n_len + n] = up[x];
            }
        }
    }
    DisplacementVolume::new(
        data,
        out_x,
        z_len,
        n_len,
        vol.fs_hz,
        vol.fsp_px_per_mm * factor as f64,
        vol.axial_res_mm_per_px,
    )
    .expect("interpolated volume keeps source invariants")
}

/// DFT zero-padding interpolation of one signal by `order`, preserving the
/// original samples at indices `k * order`.
pub fn temporal_upsample(sig: &[f64], order: usize) -> Vec<f64> {
    fft::zero_pad_upsample(sig, order)
}

/// Cuts the ROI out of slice `z_index` and normalizes each lateral row to
/// unit peak along time. Rows whose peak is below 1e-12 of the plane
/// maximum are zeroed instead of amplified.
pub fn extract_condition_plane(
    vol: &DisplacementVolume,
    z_index: usize,
    params: &CleaningParams,
) -> Result<TlPlane> {
    params.validate(vol.x_len())?;
    if z_index >= vol.z_len() {
        return Err(SwsError::Parameter(format!(
            "z_index {z_index} outside axial extent {}",
            vol.z_len()
        )));
    }
    let (lo, hi) = params.roi_x;
    let width = hi - lo;
    let n_len = vol.n_len();

    let mut d = vec![0.0; width * n_len];
    let mut plane_max = f64::NEG_INFINITY;
    for x in 0..width {
        let sig = vol.signal(lo + x, z_index);
        d[x * n_len..(x + 1) * n_len].copy_from_slice(sig);
        for &v in sig {
            plane_max = plane_max.max(v);
        }
    }
    if plane_max <= 0.0 {
        d.fill(0.0);
        return Ok(TlPlane {
            d,
            x_len: width,
            n_len,
            z_index,
        });
    }
    let floor = 1e-12 * plane_max;
    for x in 0..width {
        let row = &mut d[x * n_len..(x + 1) * n_len];
        let peak = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if peak < floor {
            row.fill(0.0);
        } else {
            for v in row.iter_mut() {
                *v /= peak;
            }
        }
    }
    Ok(TlPlane {
        d,
        x_len: width,
        n_len,
        z_index,
    })
}

/// Peak sample index per lateral position; ties resolve to the smallest
/// index.
pub fn ttp_profile(plane: &TlPlane) -> Vec<usize> {
    (0..plane.x_len())
        .map(|x| {
            let row = plane.row(x);
            let mut best = 0usize;
            for (n, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = n;
                }
            }
            best
        })
        .collect()
}

fn fit_line(xs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<(f64, f64)> {
    let mut n = 0.0;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in xs {
        n += 1.0;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    if n < 2.0 || denom.abs() < 1e-9 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Some((slope, intercept))
}

/// Flags profile entries whose squared distance from the straight-line fit
/// of the whole profile stays within `t_sh`.
pub fn prune_outlier_peaks(profile: &[usize], t_sh: f64) -> Vec<bool> {
    assert!(profile.len() >= 2, "pruning needs at least 2 lateral points");
    let (slope, intercept) = fit_line(
        profile
            .iter()
            .enumerate()
            .map(|(x, &n)| (x as f64, n as f64)),
    )
    .expect("distinct lateral positions always admit a line fit");
    profile
        .iter()
        .enumerate()
        .map(|(x, &n)| {
            let resid = n as f64 - (slope * x as f64 + intercept);
            resid * resid <= t_sh
        })
        .collect()
}

/// Per-lateral-position aggregates of the fit support `{(x, n): D >= q}`.
struct SupportSums {
    cnt: Vec<f64>,
    sum_n: Vec<f64>,
    sum_n2: Vec<f64>,
}

impl SupportSums {
    fn gather(plane: &TlPlane, kept: &[bool], q: f64) -> Self {
        let w = plane.x_len();
        let mut s = SupportSums {
            cnt: vec![0.0; w + 1],
            sum_n: vec![0.0; w + 1],
            sum_n2: vec![0.0; w + 1],
        };
        for x in 0..w {
            if !kept[x] {
                continue;
            }
            let (mut c, mut sn, mut sn2) = (0.0, 0.0, 0.0);
            for (n, &v) in plane.row(x).iter().enumerate() {
                if v >= q {
                    c += 1.0;
                    sn += n as f64;
                    sn2 += (n * n) as f64;
                }
            }
            s.cnt[x + 1] = c;
            s.sum_n[x + 1] = sn;
            s.sum_n2[x + 1] = sn2;
        }
        s
    }
}

/// Exact least-squares cost of one line over lateral range `[i, j)`,
/// or None when the segment lacks two distinct supported positions.
struct SegmentCost {
    // prefix sums over lateral position of: count, count*x, count*x^2,
    // sum_n, x*sum_n, sum_n2
    p: Vec<[f64; 6]>,
}

impl SegmentCost {
    fn new(plane: &TlPlane, kept: &[bool], q: f64) -> Self {
        let sums = SupportSums::gather(plane, kept, q);
        let w = plane.x_len();
        let mut p = vec![[0.0; 6]; w + 1];
        for x in 0..w {
            let c = sums.cnt[x + 1];
            let sn = sums.sum_n[x + 1];
            let sn2 = sums.sum_n2[x + 1];
            let xf = x as f64;
            let prev = p[x];
            p[x + 1] = [
                prev[0] + c,
                prev[1] + c * xf,
                prev[2] + c * xf * xf,
                prev[3] + sn,
                prev[4] + xf * sn,
                prev[5] + sn2,
            ];
        }
        Self { p }
    }

    fn stats(&self, i: usize, j: usize) -> [f64; 6] {
        let (a, b) = (self.p[i], self.p[j]);
        [
            b[0] - a[0],
            b[1] - a[1],
            b[2] - a[2],
            b[3] - a[3],
            b[4] - a[4],
            b[5] - a[5],
        ]
    }

    fn fit(&self, i: usize, j: usize) -> Option<(f64, f64, f64)> {
        let [cnt, sx, sxx, sn, sxn, snn] = self.stats(i, j);
        let denom = cnt * sxx - sx * sx;
        if cnt < 2.0 || denom.abs() < 1e-9 {
            return None;
        }
        let m = (cnt * sxn - sx * sn) / denom;
        let b = (sn - m * sx) / cnt;
        let sse = snn - 2.0 * m * sxn - 2.0 * b * sn
            + m * m * sxx
            + 2.0 * m * b * sx
            + b * b * cnt;
        Some((m, b, sse.max(0.0)))
    }
}

/// Fits `r` least-squares lines over contiguous lateral ranges chosen by an
/// exact dynamic program minimizing total squared residual of the support
/// set `{(x, n): D(x, n) >= q, kept(x)}`.
pub fn piecewise_fit(
    plane: &TlPlane,
    kept: &[bool],
    q: f64,
    r: usize,
) -> Result<PiecewiseLines> {
    assert_eq!(kept.len(), plane.x_len());
    let w = plane.x_len();
    if r < 1 || w < 2 * r {
        return Err(SwsError::Cleaning(format!(
            "cannot fit {r} lines over {w} lateral positions"
        )));
    }
    let cost = SegmentCost::new(plane, kept, q);

    const INF: f64 = f64::INFINITY;
    // best[k][j]: minimal cost splitting [0, j) into k segments.
    let mut best = vec![vec![INF; w + 1]; r + 1];
    let mut parent = vec![vec![0usize; w + 1]; r + 1];
    best[0][0] = 0.0;
    for k in 1..=r {
        for j in 1..=w {
            for i in 0..j {
                if best[k - 1][i] == INF {
                    continue;
                }
                if let Some((_, _, sse)) = cost.fit(i, j) {
                    let total = best[k - 1][i] + sse;
                    if total < best[k][j] {
                        best[k][j] = total;
                        parent[k][j] = i;
                    }
                }
            }
        }
    }
    if best[r][w] == INF {
        return Err(SwsError::Cleaning(format!(
            "insufficient support for {r} piecewise lines"
        )));
    }

    let mut bounds = vec![w];
    let mut j = w;
    for k in (1..=r).rev() {
        j = parent[k][j];
        bounds.push(j);
    }
    bounds.reverse();

    let lines = bounds
        .windows(2)
        .map(|win| {
            let (i, j) = (win[0], win[1]);
            let (slope, intercept, _) = cost
                .fit(i, j)
                .expect("feasible DP solution implies fittable segments");
            LineSegment {
                slope,
                intercept,
                x_range: (i, j),
            }
        })
        .collect();
    Ok(PiecewiseLines { lines })
}

/// Gaussian mask over the plane: each line contributes
/// `exp(-(n - m*x - b)^2 / (2 rho^2))` inside its own lateral range.
/// Values are floored at the smallest positive f64 so the mathematical
/// positivity of the exponential survives underflow.
pub fn build_mask(lines: &PiecewiseLines, rho: f64, dims: (usize, usize)) -> Vec<f64> {
    let (w, n_len) = dims;
    let two_rho2 = 2.0 * rho * rho;
    let mut mask = vec![0.0; w * n_len];
    for seg in &lines.lines {
        for x in seg.x_range.0..seg.x_range.1.min(w) {
            let center = seg.slope * x as f64 + seg.intercept;
            for n in 0..n_len {
                let theta = n as f64 - center;
                let v = (-theta * theta / two_rho2).exp().max(f64::MIN_POSITIVE);
                mask[x * n_len + n] += v;
            }
        }
    }
    mask
}

/// Result of cleaning a whole volume: the cleaned (ROI-cropped, normalized)
/// data plus the axial slices that fell back to their conditioned plane.
#[derive(Debug, Clone)]
pub struct CleanOutcome {
    pub volume: DisplacementVolume,
    pub fallback_slices: Vec<usize>,
    /// Lateral index of ROI column 0 in the input volume.
    pub roi_lo: usize,
}

/// Cleans every axial slice: condition, prune, piecewise-fit, mask overlay.
/// A slice whose fit fails retries with a single line and finally falls
/// back to the conditioned plane, flagged in the outcome.
pub fn tl_clean(vol: &DisplacementVolume, params: &CleaningParams) -> Result<CleanOutcome> {
    params.validate(vol.x_len())?;
    let (lo, hi) = params.roi_x;
    let width = hi - lo;
    let n_len = vol.n_len();
    let z_len = vol.z_len();

    let slices: Vec<(Vec<f64>, bool)> = (0..z_len)
        .into_par_iter()
        .map(|z| {
            let plane = extract_condition_plane(vol, z, params)
                .expect("params validated before slicing");
            clean_plane(&plane, params)
        })
        .collect();

    let mut data = vec![0.0; width * z_len * n_len];
    let mut fallback_slices = Vec::new();
    for (z, (plane, fell_back)) in slices.into_iter().enumerate() {
        if fell_back {
            fallback_slices.push(z);
        }
        for x in 0..width {
            for n in 0..n_len {
                data[((x * z_len) + z) * n_len + n] = plane[x * n_len + n];
            }
        }
    }
    let volume = DisplacementVolume::new(
        data,
        width,
        z_len,
        n_len,
        vol.fs_hz,
        vol.fsp_px_per_mm,
        vol.axial_res_mm_per_px,
    )?;
    Ok(CleanOutcome {
        volume,
        fallback_slices,
        roi_lo: lo,
    })
}

fn clean_plane(plane: &TlPlane, params: &CleaningParams) -> (Vec<f64>, bool) {
    let conditioned: Vec<f64> = (0..plane.x_len())
        .flat_map(|x| plane.row(x).iter().cloned())
        .collect();
    let profile = ttp_profile(plane);
    let kept = prune_outlier_peaks(&profile, params.t_sh);
    let fit = piecewise_fit(plane, &kept, params.q, params.r)
        .or_else(|_| piecewise_fit(plane, &kept, params.q, 1));
    match fit {
        Ok(lines) => {
            let mask = build_mask(&lines, params.rho, (plane.x_len(), plane.n_len()));
            let cleaned = conditioned
                .iter()
                .zip(&mask)
                // The mask attenuates, never amplifies.
                .map(|(&d, &m)| d * m.min(1.0))
                .collect();
            (cleaned, false)
        }
        Err(_) => (conditioned, true),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_volume, NoiseParams, PulseParams, SpeedMap};
    use proptest::prelude::*;

    fn default_params(x_len: usize) -> CleaningParams {
        CleaningParams {
            t_sh: 250.0,
            q: 0.9,
            rho: 1.0,
            r: 3,
            roi_x: (0, x_len),
        }
    }

    fn homog_volume(c: f64, x_len: usize) -> DisplacementVolume {
        let speed = SpeedMap::uniform(x_len, 4, 2.0, c).unwrap();
        let pulse = PulseParams {
            width_ms: 0.4,
            amp0: 1.0,
            alpha_per_mm: 0.97,
            source_x_px: 0,
        };
        synth_volume(&speed, &pulse, &NoiseParams::none(), 10_000.0, 256).unwrap()
    }

    #[test]
    fn lateral_interpolate_identity_at_m1() {
        let vol = homog_volume(2.0, 24);
        let out = lateral_interpolate(&vol, 1);
        assert_eq!(vol, out);
    }

    #[test]
    fn lateral_interpolate_preserves_knots() {
        let vol = homog_volume(2.0, 24);
        let out = lateral_interpolate(&vol, 3);
        assert_eq!(out.x_len(), 3 * 24 - 2);
        assert_eq!(out.fsp_px_per_mm, 6.0);
        let scale = vol.raw_data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for x in 0..24 {
            for z in 0..vol.z_len() {
                for n in 0..vol.n_len() {
                    let orig = vol.at(x, z, n);
                    let up = out.at(3 * x, z, n);
                    assert!((orig - up).abs() <= 1e-9 * scale, "knot ({x},{z},{n})");
                }
            }
        }
    }

    #[test]
    fn lateral_interpolate_matches_bandlimited_closed_form() {
        // One lateral sinusoid cos(2 pi 3 x / 32): midpoints must land on
        // the continuous cosine.
        let x_len = 32;
        let data: Vec<f64> = (0..x_len)
            .flat_map(|x| {
                let v = (2.0 * std::f64::consts::PI * 3.0 * x as f64 / 32.0).cos();
                vec![v; 8]
            })
            .collect();
        let vol = DisplacementVolume::new(data, x_len, 1, 8, 1000.0, 1.0, 1.0).unwrap();
        let out = lateral_interpolate(&vol, 2);
        for k in 0..x_len - 1 {
            let mid = out.at(2 * k + 1, 0, 3);
            let expect = (2.0 * std::f64::consts::PI * 3.0 * (k as f64 + 0.5) / 32.0).cos();
            assert!((mid - expect).abs() < 1e-6, "midpoint {k}: {mid} vs {expect}");
        }
    }

    #[test]
    fn temporal_upsample_identity_and_dc() {
        let sig = vec![1.5; 32];
        assert_eq!(temporal_upsample(&sig, 1), sig);
        let up = temporal_upsample(&sig, 10);
        assert_eq!(up.len(), 320);
        assert!(up.iter().all(|&v| (v - 1.5).abs() < 1e-9));
    }

    #[test]
    fn temporal_upsample_scales_argmax() {
        let sig: Vec<f64> = (0..64)
            .map(|n| (-((n as f64 - 20.0) / 3.0).powi(2) / 2.0).exp())
            .collect();
        let up = temporal_upsample(&sig, 10);
        let argmax = up
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert!((argmax as i64 - 200).unsigned_abs() <= 1, "argmax {argmax}");
    }

    #[test]
    fn condition_plane_normalizes_rows() {
        let mut data = vec![0.0; 4 * 1 * 16];
        for x in 0..4 {
            data[x * 16 + 5] = 5.0 * (x + 1) as f64;
            data[x * 16 + 6] = 2.0;
        }
        let vol = DisplacementVolume::new(data, 4, 1, 16, 1000.0, 1.0, 1.0).unwrap();
        let mut params = default_params(4);
        params.r = 1;
        let plane = extract_condition_plane(&vol, 0, &params).unwrap();
        for x in 0..4 {
            let peak = plane.row(x).iter().cloned().fold(f64::MIN, f64::max);
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn condition_plane_zeroes_dead_rows() {
        let mut data = vec![0.0; 4 * 1 * 16];
        for x in 0..3 {
            data[x * 16 + 5] = 1.0;
        }
        // Row 3 stays all-zero.
        let vol = DisplacementVolume::new(data, 4, 1, 16, 1000.0, 1.0, 1.0).unwrap();
        let mut params = default_params(4);
        params.r = 1;
        let plane = extract_condition_plane(&vol, 0, &params).unwrap();
        assert!(plane.row(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn condition_plane_respects_roi() {
        let vol = homog_volume(2.0, 24);
        // Excluding the first 3 mm at 2 px/mm leaves 24 - 6 columns.
        let params = CleaningParams {
            roi_x: (6, 24),
            ..default_params(24)
        };
        let plane = extract_condition_plane(&vol, 0, &params).unwrap();
        assert_eq!(plane.x_len(), 18);
    }

    #[test]
    fn empty_roi_is_parameter_error() {
        let vol = homog_volume(2.0, 24);
        let params = CleaningParams {
            roi_x: (10, 10),
            ..default_params(24)
        };
        assert!(matches!(
            extract_condition_plane(&vol, 0, &params),
            Err(SwsError::Parameter(_))
        ));
    }

    #[test]
    fn ttp_profile_increases_with_delay_and_matches_slope() {
        let vol = homog_volume(1.0, 40);
        let params = default_params(40);
        let plane = extract_condition_plane(&vol, 1, &params).unwrap();
        let profile = ttp_profile(&plane);
        assert!(profile.windows(2).all(|w| w[1] >= w[0]));
        // Expected slope fs / (c fsp 1000) = 10000 / (1 * 2 * 1000) = 5.
        let rise = (profile[35] - profile[5]) as f64 / 30.0;
        assert!((rise - 5.0).abs() < 0.2, "slope {rise}");
    }

    #[test]
    fn ttp_ties_take_smallest_index() {
        let data = vec![0.0; 2 * 1 * 8];
        let vol = DisplacementVolume::new(data, 2, 1, 8, 1000.0, 1.0, 1.0).unwrap();
        let mut params = default_params(2);
        params.r = 1;
        let plane = extract_condition_plane(&vol, 0, &params).unwrap();
        assert_eq!(ttp_profile(&plane), vec![0, 0]);
    }

    #[test]
    fn prune_keeps_colinear_and_infinite_threshold() {
        let profile: Vec<usize> = (0..40).map(|x| 2 * x + 3).collect();
        assert!(prune_outlier_peaks(&profile, 250.0).iter().all(|&k| k));
        let mut noisy = profile.clone();
        noisy[7] += 100;
        assert!(prune_outlier_peaks(&noisy, f64::INFINITY).iter().all(|&k| k));
    }

    #[test]
    fn prune_drops_exactly_the_displaced_peak() {
        let mut profile: Vec<usize> = (0..40).map(|x| 2 * x + 3).collect();
        profile[17] += 32; // ~ 2 sqrt(250)
        let kept = prune_outlier_peaks(&profile, 250.0);
        for (x, &k) in kept.iter().enumerate() {
            assert_eq!(k, x != 17, "position {x}");
        }
    }

    #[test]
    fn piecewise_fit_recovers_homogeneous_slope() {
        let vol = homog_volume(1.0, 40);
        let params = default_params(40);
        let plane = extract_condition_plane(&vol, 2, &params).unwrap();
        let kept = vec![true; plane.x_len()];
        let fit = piecewise_fit(&plane, &kept, 0.9, 1).unwrap();
        let slope = fit.lines[0].slope;
        assert!((slope - 5.0).abs() < 0.1, "slope {slope} vs 5.0");
    }

    #[test]
    fn piecewise_fit_finds_two_speed_breakpoint() {
        // 1 m/s then 2 m/s halves at fsp 2 px/mm, interface at x = 20.
        let (x_len, z_len) = (40, 2);
        let mut c = vec![1.0; x_len * z_len];
        for x in 20..x_len {
            for z in 0..z_len {
                c[x * z_len + z] = 2.0;
            }
        }
        let speed = SpeedMap::new(c, x_len, z_len, 2.0).unwrap();
        let pulse = PulseParams {
            width_ms: 0.4,
            amp0: 1.0,
            alpha_per_mm: 0.97,
            source_x_px: 0,
        };
        let vol = synth_volume(&speed, &pulse, &NoiseParams::none(), 10_000.0, 256).unwrap();
        let params = default_params(x_len);
        let plane = extract_condition_plane(&vol, 1, &params).unwrap();
        let kept = vec![true; plane.x_len()];
        let fit = piecewise_fit(&plane, &kept, 0.9, 2).unwrap();
        let breakpoint = fit.lines[0].x_range.1 as i64;
        assert!((breakpoint - 20).abs() <= 2, "breakpoint {breakpoint}");
    }

    #[test]
    fn piecewise_fit_oversegmentation_is_harmless() {
        let vol = homog_volume(1.0, 40);
        // Keep the source column out, like a blind-zone exclusion; its
        // half-truncated pulse is not a wavefront sample.
        let params = CleaningParams {
            roi_x: (2, 40),
            ..default_params(40)
        };
        let plane = extract_condition_plane(&vol, 1, &params).unwrap();
        let kept = vec![true; plane.x_len()];
        let fit = piecewise_fit(&plane, &kept, 0.9, 3).unwrap();
        assert_eq!(fit.lines.len(), 3);
        for seg in &fit.lines {
            assert!((seg.slope - 5.0).abs() / 5.0 < 0.05, "slope {}", seg.slope);
        }
    }

    #[test]
    fn mask_values_match_closed_form() {
        let lines = PiecewiseLines {
            lines: vec![LineSegment {
                slope: 1.0,
                intercept: 0.0,
                x_range: (0, 8),
            }],
        };
        let rho = 2.0;
        let mask = build_mask(&lines, rho, (8, 32));
        // Point exactly on the line.
        assert!((mask[3 * 32 + 3] - 1.0).abs() < 1e-12);
        // Point one rho away in time.
        assert!((mask[3 * 32 + 5] - (-0.5f64).exp()).abs() < 1e-12);
        // Point 6 rho away.
        assert!(mask[3 * 32 + 15] < 2e-8);
    }

    #[test]
    fn tl_clean_with_huge_rho_keeps_conditioned_plane() {
        let vol = homog_volume(1.0, 40);
        let mut params = default_params(40);
        params.rho = 1e12;
        let outcome = tl_clean(&vol, &params).unwrap();
        for z in 0..vol.z_len() {
            let plane = extract_condition_plane(&vol, z, &params).unwrap();
            for x in 0..plane.x_len() {
                for n in 0..plane.n_len() {
                    let diff = (outcome.volume.at(x, z, n) - plane.at(x, n)).abs();
                    assert!(diff < 1e-9, "({x},{z},{n}) diff {diff}");
                }
            }
        }
        assert!(outcome.fallback_slices.is_empty());
    }

    #[test]
    fn tl_clean_attenuates_far_from_wavefront() {
        let vol = homog_volume(1.0, 40);
        let mut params = default_params(40);
        params.rho = 1.0;
        params.r = 1;
        let outcome = tl_clean(&vol, &params).unwrap();
        let width_samples = 0.4 * 10.0; // width_ms * fs / 1000
        let z = 1;
        let plane = extract_condition_plane(&vol, z, &params).unwrap();
        let profile = ttp_profile(&plane);
        for x in 5..35 {
            let peak_n = profile[x];
            let far = peak_n + (3.0 * width_samples) as usize + 2;
            if far < vol.n_len() && plane.at(x, far).abs() > 1e-6 {
                let ratio = plane.at(x, far).abs() / outcome.volume.at(x, z, far).abs().max(1e-300);
                assert!(ratio >= 100.0, "x {x}: attenuation only {ratio}");
            }
        }
    }

    #[test]
    fn tl_clean_keeps_unit_peak_at_ttp() {
        let vol = homog_volume(1.0, 40);
        let params = default_params(40);
        let outcome = tl_clean(&vol, &params).unwrap();
        let z = 2;
        let plane = extract_condition_plane(&vol, z, &params).unwrap();
        let profile = ttp_profile(&plane);
        for x in 5..35 {
            let cleaned = outcome.volume.at(x, z, profile[x]);
            // Peak survives up to the local mask value.
            assert!(cleaned > 0.5, "x {x}: peak {cleaned}");
        }
    }

    #[test]
    fn cleaning_is_structurally_idempotent() {
        // Re-cleaning a cleaned volume must find the same wavefront: same
        // TTP profile and the same piecewise lines within 1e-6, so the
        // second mask matches the first.
        let vol = homog_volume(1.0, 40);
        let params = CleaningParams {
            roi_x: (2, 40),
            ..default_params(40)
        };
        let once = tl_clean(&vol, &params).unwrap();
        assert!(once.fallback_slices.is_empty());
        // The cleaned volume is already ROI-cropped.
        let params_clean = CleaningParams {
            roi_x: (0, once.volume.x_len()),
            ..params
        };
        for z in 0..vol.z_len() {
            let p_src = extract_condition_plane(&vol, z, &params).unwrap();
            let p_clean = extract_condition_plane(&once.volume, z, &params_clean).unwrap();
            let prof_src = ttp_profile(&p_src);
            let prof_clean = ttp_profile(&p_clean);
            assert_eq!(prof_src, prof_clean, "slice {z}: TTP profile moved");
            let lines_src = piecewise_fit(
                &p_src,
                &prune_outlier_peaks(&prof_src, params.t_sh),
                params.q,
                params.r,
            )
            .unwrap();
            let lines_clean = piecewise_fit(
                &p_clean,
                &prune_outlier_peaks(&prof_clean, params.t_sh),
                params.q,
                params.r,
            )
            .unwrap();
            for (a, b) in lines_src.lines.iter().zip(&lines_clean.lines) {
                assert!((a.slope - b.slope).abs() < 1e-6, "slice {z}");
                assert!((a.intercept - b.intercept).abs() < 1e-6, "slice {z}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn mask_bounds_hold(rho in 0.5f64..30.0, slope in -4.0f64..4.0, intercept in 0.0f64..64.0) {
            let lines = PiecewiseLines {
                lines: vec![
                    LineSegment { slope, intercept, x_range: (0, 10) },
                    LineSegment { slope: -slope, intercept, x_range: (10, 20) },
                ],
            };
            let mask = build_mask(&lines, rho, (20, 64));
            for &v in &mask {
                prop_assert!(v > 0.0 && v <= 2.0);
            }
        }

        #[test]
        fn upsample_knot_preservation(len in 8usize..40, order in 1usize..8) {
            let sig: Vec<f64> = (0..len).map(|n| ((n * 37 + 11) % 17) as f64 - 8.0).collect();
            let up = temporal_upsample(&sig, order);
            for (n, &v) in sig.iter().enumerate() {
                prop_assert!((up[n * order] - v).abs() < 1e-9);
            }
        }
    }
}
