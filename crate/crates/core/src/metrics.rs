//! Region statistics, CNR/PSNR quality metrics and the median post-filter.

use crate::error::{Result, SwsError};
use crate::phantom::SpeedMap;
use crate::volume::{RegionMask, SwsMap};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub count: usize,
}

/// Mean and population standard deviation of the valid pixels selected by
/// `mask`.
pub fn region_stats(map: &SwsMap, mask: &RegionMask) -> Result<RegionStats> {
    if mask.x_len() != map.x_len() || mask.z_len() != map.z_len() {
        return Err(SwsError::Usage(format!(
            "mask {}x{} does not match map {}x{}",
            mask.x_len(),
            mask.z_len(),
            map.x_len(),
            map.z_len()
        )));
    }
    let mut values = Vec::new();
    for x in 0..map.x_len() {
        for z in 0..map.z_len() {
            if mask.contains(x, z) && map.is_valid(x, z) {
                values.push(map.at(x, z));
            }
        }
    }
    if values.is_empty() {
        return Err(SwsError::Usage("region selects no valid pixels".into()));
    }
    let count = values.len();
    let mean = values.iter().sum::<f64>() / count as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
    Ok(RegionStats {
        mean,
        std: var.sqrt(),
        count,
    })
}

/// Contrast-to-noise ratio between inclusion and background regions:
/// `20 log10(|mI - mB| / sqrt(sI^2 + sB^2))` dB. Equal means give -inf;
/// a zero denominator under a nonzero contrast gives +inf.
pub fn cnr(map: &SwsMap, inc: &RegionMask, bg: &RegionMask) -> Result<f64> {
    let i = region_stats(map, inc)?;
    let b = region_stats(map, bg)?;
    let contrast = (i.mean - b.mean).abs();
    let noise = (i.std * i.std + b.std * b.std).sqrt();
    if contrast == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (contrast / noise).log10())
}

/// Peak signal-to-noise ratio of the reconstruction against the label,
/// both normalized by their own maxima; the MSE runs over valid pixels.
pub fn psnr(map: &SwsMap, label: &SpeedMap) -> Result<f64> {
    if label.x_len() != map.x_len() || label.z_len() != map.z_len() {
        return Err(SwsError::Usage(format!(
            "label {}x{} does not match map {}x{}",
            label.x_len(),
            label.z_len(),
            map.x_len(),
            map.z_len()
        )));
    }
    let mut map_max = f64::NEG_INFINITY;
    for x in 0..map.x_len() {
        for z in 0..map.z_len() {
            if map.is_valid(x, z) {
                map_max = map_max.max(map.at(x, z));
            }
        }
    }
    if !map_max.is_finite() {
        return Err(SwsError::Usage("map has no valid pixels".into()));
    }
    let label_max = label.max();
    let mut sum = 0.0;
    let mut count = 0usize;
    for x in 0..map.x_len() {
        for z in 0..map.z_len() {
            if map.is_valid(x, z) {
                let d = map.at(x, z) / map_max - label.at(x, z) / label_max;
                sum += d * d;
                count += 1;
            }
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Median filter over a `w x w` window of valid neighbors; borders use the
/// neighbors that exist. Invalid pixels are filled with the neighborhood
/// median when at least 3 valid neighbors exist, otherwise stay invalid.
pub fn median_filter(map: &SwsMap, window: usize) -> Result<SwsMap> {
    if window % 2 == 0 {
        return Err(SwsError::Parameter("median window must be odd".into()));
    }
    let half = (window / 2) as i64;
    let (x_len, z_len) = (map.x_len(), map.z_len());
    let mut out = SwsMap::new_invalid(x_len, z_len);
    let mut values = Vec::with_capacity(window * window);
    for x in 0..x_len {
        for z in 0..z_len {
            values.clear();
            for dx in -half..=half {
                for dz in -half..=half {
                    let xx = x as i64 + dx;
                    let zz = z as i64 + dz;
                    if xx < 0 || zz < 0 || xx >= x_len as i64 || zz >= z_len as i64 {
                        continue;
                    }
                    let (xx, zz) = (xx as usize, zz as usize);
                    if map.is_valid(xx, zz) {
                        values.push(map.at(xx, zz));
                    }
                }
            }
            // Valid pixels always refilter; invalid ones fill only with
            // enough support.
            if map.is_valid(x, z) || values.len() >= 3 {
                out.set(x, z, median(&mut values));
            }
        }
    }
    Ok(out)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::RegionLabel;
    use proptest::prelude::*;

    fn full_mask(x: usize, z: usize, label: RegionLabel) -> RegionMask {
        let mut m = RegionMask::new(x, z, label);
        for xx in 0..x {
            for zz in 0..z {
                m.insert(xx, zz);
            }
        }
        m
    }

    #[test]
    fn region_stats_hand_values() {
        let mut map = SwsMap::new_invalid(2, 1);
        map.set(0, 0, 2.0);
        map.set(1, 0, 2.0);
        let mask = full_mask(2, 1, RegionLabel::Inclusion);
        let s = region_stats(&map, &mask).unwrap();
        assert_eq!((s.mean, s.std, s.count), (2.0, 0.0, 2));

        let mut map2 = SwsMap::new_invalid(2, 1);
        map2.set(0, 0, 1.0);
        map2.set(1, 0, 3.0);
        let s2 = region_stats(&map2, &mask).unwrap();
        assert!((s2.mean - 2.0).abs() < 1e-12 && (s2.std - 1.0).abs() < 1e-12);
    }

    #[test]
    fn region_stats_empty_selection_is_usage_error() {
        let map = SwsMap::new_invalid(2, 1);
        let mask = full_mask(2, 1, RegionLabel::Inclusion);
        assert!(matches!(
            region_stats(&map, &mask),
            Err(SwsError::Usage(_))
        ));
    }

    fn two_region_map(vals_i: &[f64], vals_b: &[f64]) -> (SwsMap, RegionMask, RegionMask) {
        let x_len = vals_i.len() + vals_b.len();
        let mut map = SwsMap::new_invalid(x_len, 1);
        let mut inc = RegionMask::new(x_len, 1, RegionLabel::Inclusion);
        let mut bg = RegionMask::new(x_len, 1, RegionLabel::Background);
        for (i, &v) in vals_i.iter().enumerate() {
            map.set(i, 0, v);
            inc.insert(i, 0);
        }
        for (i, &v) in vals_b.iter().enumerate() {
            map.set(vals_i.len() + i, 0, v);
            bg.insert(vals_i.len() + i, 0);
        }
        (map, inc, bg)
    }

    #[test]
    fn cnr_matches_hand_evaluation() {
        // muI = 4, sigmaI = 0.3, muB = 2, sigmaB = 0.4
        // -> 20 log10(2 / 0.5) = 12.0412 dB.
        let (map, inc, bg) = two_region_map(&[3.7, 4.3], &[1.6, 2.4]);
        let got = cnr(&map, &inc, &bg).unwrap();
        assert!((got - 12.0411998266).abs() < 1e-9, "got {got}");
        // Swapping regions changes nothing.
        let swapped = cnr(&map, &bg, &inc).unwrap();
        assert!((got - swapped).abs() < 1e-12);
    }

    #[test]
    fn cnr_sentinels() {
        let (map, inc, bg) = two_region_map(&[1.0, 3.0], &[1.0, 3.0]);
        assert_eq!(cnr(&map, &inc, &bg).unwrap(), f64::NEG_INFINITY);
        let (map2, inc2, bg2) = two_region_map(&[4.0, 4.0], &[2.0, 2.0]);
        assert_eq!(cnr(&map2, &inc2, &bg2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_identical_and_hand_value() {
        let label = SpeedMap::new(vec![5.0, 4.0], 2, 1, 1.0).unwrap();
        let mut map = SwsMap::new_invalid(2, 1);
        map.set(0, 0, 5.0);
        map.set(1, 0, 4.0);
        assert_eq!(psnr(&map, &label).unwrap(), f64::INFINITY);

        // Normalized maps [1.0, 0.8] vs [1.0, 0.8 - sqrt(0.02)]:
        // mse = 0.02 / 2 = 0.01 -> 20 dB.
        let label2 = SpeedMap::new(vec![10.0, 8.0], 2, 1, 1.0).unwrap();
        let mut map2 = SwsMap::new_invalid(2, 1);
        map2.set(0, 0, 10.0);
        map2.set(1, 0, 8.0 - 10.0 * 0.02f64.sqrt());
        let got = psnr(&map2, &label2).unwrap();
        assert!((got - 20.0).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn psnr_shape_mismatch_is_usage_error() {
        let label = SpeedMap::new(vec![5.0, 4.0], 2, 1, 1.0).unwrap();
        let map = SwsMap::new_invalid(3, 1);
        assert!(matches!(psnr(&map, &label), Err(SwsError::Usage(_))));
    }

    #[test]
    fn metrics_scale_invariance() {
        let (map, inc, bg) = two_region_map(&[3.7, 4.3], &[1.6, 2.4]);
        let mut scaled = SwsMap::new_invalid(4, 1);
        for x in 0..4 {
            scaled.set(x, 0, 2.5 * map.at(x, 0));
        }
        let a = cnr(&map, &inc, &bg).unwrap();
        let b = cnr(&scaled, &inc, &bg).unwrap();
        assert!((a - b).abs() < 1e-9);

        let label = SpeedMap::new(vec![4.0, 4.0, 2.0, 2.0], 4, 1, 1.0).unwrap();
        let label_scaled = SpeedMap::new(vec![8.0, 8.0, 4.0, 4.0], 4, 1, 1.0).unwrap();
        let pa = psnr(&map, &label).unwrap();
        let pb = psnr(&scaled, &label_scaled).unwrap();
        assert!((pa - pb).abs() < 1e-9);
    }

    fn constant_map(x: usize, z: usize, v: f64) -> SwsMap {
        let mut map = SwsMap::new_invalid(x, z);
        for xx in 0..x {
            for zz in 0..z {
                map.set(xx, zz, v);
            }
        }
        map
    }

    #[test]
    fn median_filter_constant_and_spike() {
        let map = constant_map(7, 7, 3.0);
        let out = median_filter(&map, 5).unwrap();
        assert_eq!(map, out);

        let mut spiked = constant_map(7, 7, 3.0);
        spiked.set(3, 3, 100.0);
        let fixed = median_filter(&spiked, 5).unwrap();
        assert_eq!(fixed.at(3, 3), 3.0);
    }

    #[test]
    fn median_filter_fills_invalid_with_enough_neighbors() {
        let mut map = constant_map(5, 5, 2.0);
        map.set_invalid(2, 2);
        let out = median_filter(&map, 3).unwrap();
        assert!(out.is_valid(2, 2));
        assert_eq!(out.at(2, 2), 2.0);

        let mut lonely = SwsMap::new_invalid(5, 5);
        lonely.set(0, 0, 1.0);
        let out2 = median_filter(&lonely, 3).unwrap();
        assert!(!out2.is_valid(4, 4));
    }

    #[test]
    fn median_filter_idempotent_on_step_map() {
        let mut map = SwsMap::new_invalid(10, 8);
        for x in 0..10 {
            for z in 0..8 {
                map.set(x, z, if x < 5 { 1.0 } else { 2.0 });
            }
        }
        let once = median_filter(&map, 5).unwrap();
        let twice = median_filter(&once, 5).unwrap();
        assert_eq!(once, twice);
    }

    proptest! {
        #[test]
        fn median_filter_respects_input_bounds(vals in proptest::collection::vec(0.5f64..5.0, 36)) {
            let mut map = SwsMap::new_invalid(6, 6);
            for (i, &v) in vals.iter().enumerate() {
                map.set(i / 6, i % 6, v);
            }
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = median_filter(&map, 3).unwrap();
            for x in 0..6 {
                for z in 0..6 {
                    prop_assert!(out.at(x, z) >= lo && out.at(x, z) <= hi);
                }
            }
        }
    }
}
