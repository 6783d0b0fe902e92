//! Displacement volumes, SWS maps and region masks, plus their portable
//! on-disk formats.
//!
//! A volume lives in two files: a raw little-endian `f32` payload and a
//! human-readable `<payload>.meta` sidecar carrying the grid dimensions and
//! sampling metadata. Payload index order is time fastest, then axial, then
//! lateral: `offset = ((x * Z) + z) * N + n`. Samples are `f32` on disk and
//! `f64` in memory.

use crate::error::{Result, SwsError};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

/// 3-D displacement field `u(x, z, n)` with sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementVolume {
    data: Vec<f64>,
    x_len: usize,
    z_len: usize,
    n_len: usize,
    pub fs_hz: f64,
    pub fsp_px_per_mm: f64,
    pub axial_res_mm_per_px: f64,
}

impl DisplacementVolume {
    /// Builds a volume, checking metadata positivity and sample finiteness.
    ///
    /// Dimensions only need to be nonzero here; the reconstruction entry
    /// points enforce the stricter lateral/temporal minimums they need.
    pub fn new(
        data: Vec<f64>,
        x_len: usize,
        z_len: usize,
        n_len: usize,
        fs_hz: f64,
        fsp_px_per_mm: f64,
        axial_res_mm_per_px: f64,
    ) -> Result<Self> {
        if x_len == 0 || z_len == 0 || n_len == 0 {
            return Err(SwsError::Parameter(format!(
                "volume dimensions must be nonzero, got {x_len}x{z_len}x{n_len}"
            )));
        }
        if data.len() != x_len * z_len * n_len {
            return Err(SwsError::Parameter(format!(
                "data length {} does not match {x_len}x{z_len}x{n_len}",
                data.len()
            )));
        }
        if !(fs_hz > 0.0) || !(fsp_px_per_mm > 0.0) || !(axial_res_mm_per_px > 0.0) {
            return Err(SwsError::Parameter(
                "fs_hz, fsp_px_per_mm and axial_res_mm_per_px must be > 0".into(),
            ));
        }
        if let Some(off) = data.iter().position(|v| !v.is_finite()) {
            let (x, z, n) = unflatten(off, z_len, n_len);
            return Err(SwsError::Data(format!(
                "non-finite sample at (x={x}, z={z}, n={n})"
            )));
        }
        Ok(Self {
            data,
            x_len,
            z_len,
            n_len,
            fs_hz,
            fsp_px_per_mm,
            axial_res_mm_per_px,
        })
    }

    pub fn x_len(&self) -> usize {
        self.x_len
    }
    pub fn z_len(&self) -> usize {
        self.z_len
    }
    pub fn n_len(&self) -> usize {
        self.n_len
    }

    #[inline]
    fn idx(&self, x: usize, z: usize, n: usize) -> usize {
        ((x * self.z_len) + z) * self.n_len + n
    }

    #[inline]
    pub fn at(&self, x: usize, z: usize, n: usize) -> f64 {
        self.data[self.idx(x, z, n)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, z: usize, n: usize, v: f64) {
        let i = self.idx(x, z, n);
        self.data[i] = v;
    }

    /// Displacement signal of one particle, contiguous over time.
    #[inline]
    pub fn signal(&self, x: usize, z: usize) -> &[f64] {
        let start = self.idx(x, z, 0);
        &self.data[start..start + self.n_len]
    }

    pub fn raw_data(&self) -> &[f64] {
        &self.data
    }

    /// Checks the minimum extents the reconstruction pipeline relies on
    /// (lateral neighbors and DFT headroom).
    pub fn check_pipeline_dims(&self) -> Result<()> {
        if self.x_len < 3 || self.n_len < 8 {
            return Err(SwsError::Parameter(format!(
                "pipeline needs X >= 3 and N >= 8, volume is {}x{}x{}",
                self.x_len, self.z_len, self.n_len
            )));
        }
        Ok(())
    }
}

fn unflatten(off: usize, z_len: usize, n_len: usize) -> (usize, usize, usize) {
    let x = off / (z_len * n_len);
    let rem = off % (z_len * n_len);
    (x, rem / n_len, rem % n_len)
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".meta");
    PathBuf::from(os)
}

/// Loads a displacement volume from `path` (payload) and `path.meta`.
pub fn load_volume(path: &Path) -> Result<DisplacementVolume> {
    let meta = fs::read_to_string(sidecar_path(path)).map_err(|e| {
        SwsError::Format(format!(
            "missing or unreadable sidecar {}: {e}",
            sidecar_path(path).display()
        ))
    })?;
    let kv = parse_sidecar(&meta)?;
    let x_len = get_usize(&kv, "x")?;
    let z_len = get_usize(&kv, "z")?;
    let n_len = get_usize(&kv, "n")?;
    let fs_hz = get_f64(&kv, "fs_hz")?;
    let fsp = get_f64(&kv, "fsp_px_per_mm")?;
    let axial = get_f64(&kv, "axial_res_mm_per_px")?;

    let payload = fs::read(path)?;
    let expected = x_len * z_len * n_len * 4;
    if payload.len() != expected {
        return Err(SwsError::Format(format!(
            "payload length mismatch: expected {expected} bytes ({x_len}x{z_len}x{n_len} f32), got {}",
            payload.len()
        )));
    }
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    DisplacementVolume::new(data, x_len, z_len, n_len, fs_hz, fsp, axial)
}

/// Writes the payload and sidecar for `vol`. Samples are narrowed to `f32`.
pub fn save_volume(vol: &DisplacementVolume, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for &v in &vol.data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;

    let mut meta = String::new();
    let _ = writeln!(meta, "x = {}", vol.x_len);
    let _ = writeln!(meta, "z = {}", vol.z_len);
    let _ = writeln!(meta, "n = {}", vol.n_len);
    let _ = writeln!(meta, "fs_hz = {}", vol.fs_hz);
    let _ = writeln!(meta, "fsp_px_per_mm = {}", vol.fsp_px_per_mm);
    let _ = writeln!(meta, "axial_res_mm_per_px = {}", vol.axial_res_mm_per_px);
    fs::write(sidecar_path(path), meta)?;
    Ok(())
}

fn parse_sidecar(text: &str) -> Result<Vec<(String, String)>> {
    let mut kv = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            SwsError::Format(format!("sidecar line {}: expected `key = value`", lineno + 1))
        })?;
        kv.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(kv)
}

fn get_raw<'a>(kv: &'a [(String, String)], key: &str) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| SwsError::Format(format!("sidecar missing key `{key}`")))
}

fn get_usize(kv: &[(String, String)], key: &str) -> Result<usize> {
    get_raw(kv, key)?
        .parse()
        .map_err(|e| SwsError::Format(format!("sidecar key `{key}`: {e}")))
}

fn get_f64(kv: &[(String, String)], key: &str) -> Result<f64> {
    get_raw(kv, key)?
        .parse()
        .map_err(|e| SwsError::Format(format!("sidecar key `{key}`: {e}")))
}

/// 2-D reconstructed speed field with a per-pixel validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SwsMap {
    data: Vec<f64>,
    valid: Vec<bool>,
    x_len: usize,
    z_len: usize,
}

impl SwsMap {
    /// All-invalid map of the given extent.
    pub fn new_invalid(x_len: usize, z_len: usize) -> Self {
        Self {
            data: vec![0.0; x_len * z_len],
            valid: vec![false; x_len * z_len],
            x_len,
            z_len,
        }
    }

    pub fn x_len(&self) -> usize {
        self.x_len
    }
    pub fn z_len(&self) -> usize {
        self.z_len
    }

    #[inline]
    fn idx(&self, x: usize, z: usize) -> usize {
        x * self.z_len + z
    }

    #[inline]
    pub fn at(&self, x: usize, z: usize) -> f64 {
        self.data[self.idx(x, z)]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, z: usize) -> bool {
        self.valid[self.idx(x, z)]
    }

    #[inline]
    pub fn set(&mut self, x: usize, z: usize, value: f64) {
        let i = self.idx(x, z);
        self.data[i] = value;
        self.valid[i] = true;
    }

    #[inline]
    pub fn set_invalid(&mut self, x: usize, z: usize) {
        let i = self.idx(x, z);
        self.data[i] = 0.0;
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Mean over valid pixels; `None` when nothing is valid.
    pub fn valid_mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        for (v, &ok) in self.data.iter().zip(&self.valid) {
            if ok {
                sum += v;
                count += 1;
            }
        }
        (count > 0).then(|| sum / count as f64)
    }

    fn check_valid_finite(&self) -> Result<()> {
        for (i, (&v, &ok)) in self.data.iter().zip(&self.valid).enumerate() {
            if ok && !v.is_finite() {
                let x = i / self.z_len;
                let z = i % self.z_len;
                return Err(SwsError::Data(format!(
                    "non-finite value in valid cell (x={x}, z={z})"
                )));
            }
        }
        Ok(())
    }
}

/// On-disk representation for [`save_sws_map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
    Raw,
}

/// Formats a value with 6 significant digits, keeping trailing zeros.
fn fmt_sig6(v: f64) -> String {
    if v == 0.0 {
        return "0.00000".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    let decimals = (5 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Writes `map` to `path` as CSV (row per z, invalid cells empty), binary
/// PGM P5 (min-max scaled over valid cells) or raw f32 (volume byte
/// convention without the time axis; invalid cells become NaN).
pub fn save_sws_map(map: &SwsMap, path: &Path, format: MapFormat) -> Result<()> {
    map.check_valid_finite()?;
    match format {
        MapFormat::Csv => {
            let mut out = String::new();
            for z in 0..map.z_len {
                for x in 0..map.x_len {
                    if x > 0 {
                        out.push(',');
                    }
                    if map.is_valid(x, z) {
                        out.push_str(&fmt_sig6(map.at(x, z)));
                    }
                }
                out.push('\n');
            }
            fs::write(path, out)?;
        }
        MapFormat::Pgm => {
            let valid_vals: Vec<f64> = (0..map.x_len * map.z_len)
                .filter(|&i| map.valid[i])
                .map(|i| map.data[i])
                .collect();
            let (lo, hi) = valid_vals
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let range = hi - lo;
            let mut bytes = Vec::with_capacity(map.x_len * map.z_len + 32);
            bytes.extend_from_slice(format!("P5\n{} {}\n255\n", map.x_len, map.z_len).as_bytes());
            for z in 0..map.z_len {
                for x in 0..map.x_len {
                    let px = if map.is_valid(x, z) && range > 0.0 {
                        (255.0 * (map.at(x, z) - lo) / range).round() as u8
                    } else {
                        // Degenerate range and invalid cells both map to 0.
                        0
                    };
                    bytes.push(px);
                }
            }
            fs::write(path, bytes)?;
        }
        MapFormat::Raw => {
            let mut bytes = Vec::with_capacity(map.data.len() * 4);
            for x in 0..map.x_len {
                for z in 0..map.z_len {
                    let v = if map.is_valid(x, z) {
                        map.at(x, z) as f32
                    } else {
                        f32::NAN
                    };
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            fs::write(path, bytes)?;
            let meta = format!("x = {}\nz = {}\n", map.x_len, map.z_len);
            fs::write(sidecar_path(path), meta)?;
        }
    }
    Ok(())
}

/// Reads a map back from CSV or raw form (PGM is export-only).
pub fn load_sws_map(path: &Path, format: MapFormat) -> Result<SwsMap> {
    match format {
        MapFormat::Csv => {
            let text = fs::read_to_string(path)?;
            let rows: Vec<&str> = text.lines().collect();
            if rows.is_empty() {
                return Err(SwsError::Format("empty CSV map".into()));
            }
            let z_len = rows.len();
            let x_len = rows[0].split(',').count();
            let mut map = SwsMap::new_invalid(x_len, z_len);
            for (z, row) in rows.iter().enumerate() {
                let cells: Vec<&str> = row.split(',').collect();
                if cells.len() != x_len {
                    return Err(SwsError::Format(format!(
                        "CSV row {z} has {} cells, expected {x_len}",
                        cells.len()
                    )));
                }
                for (x, cell) in cells.iter().enumerate() {
                    let cell = cell.trim();
                    if !cell.is_empty() {
                        let v: f64 = cell.parse().map_err(|e| {
                            SwsError::Format(format!("CSV cell ({x},{z}): {e}"))
                        })?;
                        map.set(x, z, v);
                    }
                }
            }
            Ok(map)
        }
        MapFormat::Raw => {
            let meta = fs::read_to_string(sidecar_path(path)).map_err(|e| {
                SwsError::Format(format!("missing sidecar for raw map: {e}"))
            })?;
            let kv = parse_sidecar(&meta)?;
            let x_len = get_usize(&kv, "x")?;
            let z_len = get_usize(&kv, "z")?;
            let payload = fs::read(path)?;
            let expected = x_len * z_len * 4;
            if payload.len() != expected {
                return Err(SwsError::Format(format!(
                    "raw map length mismatch: expected {expected} bytes, got {}",
                    payload.len()
                )));
            }
            let mut map = SwsMap::new_invalid(x_len, z_len);
            for (i, c) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64;
                if v.is_finite() {
                    map.data[i] = v;
                    map.valid[i] = true;
                }
            }
            Ok(map)
        }
        MapFormat::Pgm => Err(SwsError::Usage("PGM maps cannot be re-loaded".into())),
    }
}

/// Named pixel region used by the quality metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionLabel {
    Inclusion,
    Background,
}

#[derive(Debug, Clone)]
pub struct RegionMask {
    mask: Vec<bool>,
    x_len: usize,
    z_len: usize,
    pub label: RegionLabel,
}

impl RegionMask {
    pub fn new(x_len: usize, z_len: usize, label: RegionLabel) -> Self {
        Self {
            mask: vec![false; x_len * z_len],
            x_len,
            z_len,
            label,
        }
    }

    pub fn x_len(&self) -> usize {
        self.x_len
    }
    pub fn z_len(&self) -> usize {
        self.z_len
    }

    #[inline]
    pub fn contains(&self, x: usize, z: usize) -> bool {
        self.mask[x * self.z_len + z]
    }

    #[inline]
    pub fn insert(&mut self, x: usize, z: usize) {
        self.mask[x * self.z_len + z] = true;
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    pub fn disjoint(a: &RegionMask, b: &RegionMask) -> bool {
        a.mask.iter().zip(&b.mask).all(|(&p, &q)| !(p && q))
    }
}

/// Masks as CSV of 0/1 cells, one row per z.
pub fn save_mask(mask: &RegionMask, path: &Path) -> Result<()> {
    let mut out = String::new();
    for z in 0..mask.z_len {
        for x in 0..mask.x_len {
            if x > 0 {
                out.push(',');
            }
            out.push(if mask.contains(x, z) { '1' } else { '0' });
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_mask(path: &Path, label: RegionLabel) -> Result<RegionMask> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<&str> = text.lines().collect();
    if rows.is_empty() {
        return Err(SwsError::Format("empty mask file".into()));
    }
    let z_len = rows.len();
    let x_len = rows[0].split(',').count();
    let mut mask = RegionMask::new(x_len, z_len, label);
    for (z, row) in rows.iter().enumerate() {
        let cells: Vec<&str> = row.split(',').collect();
        if cells.len() != x_len {
            return Err(SwsError::Format(format!(
                "mask row {z} has {} cells, expected {x_len}",
                cells.len()
            )));
        }
        for (x, cell) in cells.iter().enumerate() {
            match cell.trim() {
                "0" => {}
                "1" => mask.insert(x, z),
                other => {
                    return Err(SwsError::Format(format!(
                        "mask cell ({x},{z}): expected 0 or 1, got `{other}`"
                    )))
                }
            }
        }
    }
    Ok(mask)
}
