//! `sws`: synthesize phantoms, clean displacement volumes, reconstruct
//! shear-wave-speed maps and evaluate them.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sws_core::baselines::{self, BaselineParams};
use sws_core::estimators::{self, LossMode, OptimizationParams};
use sws_core::metrics;
use sws_core::phantom::{self, NoiseParams, Preset, PulseParams, SpeedMap};
use sws_core::preprocess::{lateral_interpolate, tl_clean, CleaningParams};
use sws_core::volume::{self, DisplacementVolume, MapFormat, RegionLabel, RegionMask, SwsMap};

#[derive(Parser)]
#[command(
    name = "sws",
    about = "Shear wave speed map reconstruction from displacement volumes",
    version
)]
struct Cli {
    /// Worker threads (default: SWS_THREADS env var, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic displacement volume with known ground truth.
    Synth(SynthArgs),
    /// Apply time-lateral plane cleaning to a volume.
    Clean(CleanArgs),
    /// Reconstruct a 2-D SWS map from a volume.
    Reconstruct(ReconstructArgs),
    /// Report quality metrics for a reconstructed map.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output volume payload path (sidecar written alongside).
    #[arg(long = "out")]
    out: PathBuf,
    /// Canned scenario: homog15, homog30 or inclusion samples 1-1..1-8.
    #[arg(long)]
    preset: Option<String>,
    /// Custom grid X,Z,N (ignored with --preset).
    #[arg(long, value_parser = parse_triple)]
    size: Option<(usize, usize, usize)>,
    /// Background stiffness in kPa for custom phantoms.
    #[arg(long, default_value_t = 25.0)]
    bg_kpa: f64,
    /// Inclusion stiffness in kPa; omit for a homogeneous phantom.
    #[arg(long)]
    inc_kpa: Option<f64>,
    /// Inclusion center in pixels, "x,z".
    #[arg(long, value_parser = parse_pair)]
    center: Option<(usize, usize)>,
    /// Inclusion radius in mm.
    #[arg(long)]
    radius_mm: Option<f64>,
    #[arg(long, default_value_t = 10_000.0)]
    fs_hz: f64,
    #[arg(long, default_value_t = 4.0)]
    fsp: f64,
    #[arg(long, default_value_t = 0.4)]
    width_ms: f64,
    #[arg(long, default_value_t = 0.98)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    source_x: usize,
    /// Additive white noise standard deviation (amplitude units).
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    reflect_gain: f64,
    #[arg(long)]
    reflect_x: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the ground-truth speed map (CSV) here.
    #[arg(long)]
    label_out: Option<PathBuf>,
    /// Write the inclusion mask (CSV of 0/1) here.
    #[arg(long)]
    inc_mask_out: Option<PathBuf>,
    /// Write the background mask (CSV of 0/1) here.
    #[arg(long)]
    bg_mask_out: Option<PathBuf>,
    /// Emit label/masks on the M-times laterally interpolated grid, to
    /// match maps reconstructed with --interp M.
    #[arg(long, default_value_t = 1)]
    grid_scale: usize,
}

#[derive(Args, Clone)]
struct CleaningFlags {
    /// Peak-pruning squared-distance threshold, samples^2.
    #[arg(long, default_value_t = 250.0)]
    tsh: f64,
    /// Normalized-amplitude support threshold in (0,1).
    #[arg(long, default_value_t = 0.9)]
    q: f64,
    /// Gaussian mask spread, samples.
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    /// Number of piecewise lines.
    #[arg(long, default_value_t = 3)]
    r: usize,
    /// Lateral ROI "lo,hi" on the grid the cleaning runs on
    /// (post-interpolation unless --clean-first). Default: full extent.
    #[arg(long = "roi-x", value_parser = parse_pair)]
    roi_x: Option<(usize, usize)>,
}

impl CleaningFlags {
    fn params(&self, x_len: usize) -> CleaningParams {
        CleaningParams {
            t_sh: self.tsh,
            q: self.q,
            rho: self.rho,
            r: self.r,
            roi_x: self.roi_x.unwrap_or((0, x_len)),
        }
    }
}

#[derive(Args)]
struct CleanArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    out: PathBuf,
    #[command(flatten)]
    cleaning: CleaningFlags,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Ttp,
    TtpAvg,
    Xcorr,
    Fdsm,
    Td,
    Pd,
    Combined,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Ttp => "ttp",
            Method::TtpAvg => "ttp-avg",
            Method::Xcorr => "xcorr",
            Method::Fdsm => "fdsm",
            Method::Td => "td",
            Method::Pd => "pd",
            Method::Combined => "combined",
        }
    }
}

#[derive(Args)]
struct ReconstructArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Output map path; format by extension (.csv, .pgm, else raw f32).
    #[arg(long = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Td)]
    method: Method,
    /// Lateral group separation in mm.
    #[arg(long = "dx-mm", default_value_t = 0.5)]
    dx_mm: f64,
    /// Kernel extents "l,a" (lateral, axial; both odd).
    #[arg(long, value_parser = parse_pair, default_value = "5,5")]
    kernel: (usize, usize),
    #[arg(long = "sigma-w", default_value_t = 1.0)]
    sigma_w: f64,
    /// Temporal interpolation order L.
    #[arg(long, default_value_t = 10)]
    upsample: usize,
    /// Lateral interpolation order M.
    #[arg(long, default_value_t = 2)]
    interp: usize,
    /// Significant-frequency cutoff, Hz.
    #[arg(long = "fsig-hz", default_value_t = 1000.0)]
    fsig_hz: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma1: f64,
    #[arg(long, default_value_t = 0.2)]
    gamma2: f64,
    /// Median post-filter window (odd), 0 to disable.
    #[arg(long, default_value_t = 5)]
    median: usize,
    /// Clean before interpolating instead of after.
    #[arg(long = "clean-first", default_value_t = false)]
    clean_first: bool,
    /// Apply TL cleaning to baseline methods too.
    #[arg(long, default_value_t = false)]
    clean_baselines: bool,
    #[command(flatten)]
    cleaning: CleaningFlags,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reconstructed map (.csv or raw with sidecar).
    #[arg(long)]
    map: PathBuf,
    /// Ground-truth speed map CSV for PSNR.
    #[arg(long)]
    label: Option<PathBuf>,
    /// Inclusion mask CSV (0/1) for region stats and CNR.
    #[arg(long)]
    inc_mask: Option<PathBuf>,
    /// Background mask CSV (0/1).
    #[arg(long)]
    bg_mask: Option<PathBuf>,
    /// Write the machine-readable report here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected `a,b`, got `{s}`"));
    }
    let a = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let b = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

fn parse_triple(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected `x,z,n`, got `{s}`"));
    }
    let a = parts[0].trim().parse().map_err(|e| format!("{e}"))?;
    let b = parts[1].trim().parse().map_err(|e| format!("{e}"))?;
    let c = parts[2].trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b, c))
}

fn map_format(path: &Path) -> MapFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => MapFormat::Csv,
        Some("pgm") => MapFormat::Pgm,
        _ => MapFormat::Raw,
    }
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("SWS_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0); // 0 lets rayon pick
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: building thread pool: {e}");
            return std::process::ExitCode::from(1);
        }
    };
    let outcome = pool.install(|| match cli.command {
        Command::Synth(args) => run_synth(args),
        Command::Clean(args) => run_clean(args),
        Command::Reconstruct(args) => run_reconstruct(args),
        Command::Evaluate(args) => run_evaluate(args),
    });
    match outcome {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::from(1)
        }
    }
}

fn check_flags(violations: Vec<String>) -> Result<()> {
    if violations.is_empty() {
        return Ok(());
    }
    for v in &violations {
        eprintln!("invalid flag: {v}");
    }
    bail!("{} invalid flag(s)", violations.len());
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let start = Instant::now();
    let mut violations = Vec::new();
    if args.jitter < 0.0 {
        violations.push("--jitter must be >= 0".into());
    }
    if !(0.0..1.0).contains(&args.reflect_gain) {
        violations.push("--reflect-gain must be in [0, 1)".into());
    }
    if args.grid_scale < 1 {
        violations.push("--grid-scale must be >= 1".into());
    }
    check_flags(violations)?;

    let noise = NoiseParams {
        jitter_std: args.jitter,
        reflect_gain: args.reflect_gain,
        reflect_x_px: args.reflect_x,
        seed: args.seed,
    };

    let (vol, speed, inclusion) = if let Some(name) = &args.preset {
        let preset = Preset::from_name(name).with_context(|| {
            format!(
                "unknown preset `{name}`; available: {}",
                Preset::names().join(", ")
            )
        })?;
        let spec = preset.build();
        let (vol, speed) = preset.synth(&noise).context("synthesizing preset phantom")?;
        (vol, speed, spec.inclusion)
    } else {
        let (x, z, n) = args
            .size
            .context("either --preset or --size x,z,n is required")?;
        let speed = match args.inc_kpa {
            Some(inc) => {
                let center = args.center.unwrap_or((x / 2, z / 2));
                let radius = args.radius_mm.context("--inc-kpa needs --radius-mm")?;
                phantom::make_inclusion_speed_map(
                    x, z, args.fsp, args.bg_kpa, inc, center, radius,
                )
                .context("building inclusion speed map")?
            }
            None => SpeedMap::uniform(x, z, args.fsp, phantom::kpa_to_mps(args.bg_kpa))
                .context("building speed map")?,
        };
        let pulse = PulseParams {
            width_ms: args.width_ms,
            amp0: 1.0,
            alpha_per_mm: args.alpha,
            source_x_px: args.source_x,
        };
        let vol = phantom::synth_volume(&speed, &pulse, &noise, args.fs_hz, n)
            .context("synthesizing phantom")?;
        let inclusion = args.inc_kpa.map(|inc| phantom::InclusionGeometry {
            center_px: args.center.unwrap_or((x / 2, z / 2)),
            radius_mm: args.radius_mm.unwrap_or(0.0),
            bg_kpa: args.bg_kpa,
            inc_kpa: inc,
        });
        (vol, speed, inclusion)
    };

    volume::save_volume(&vol, &args.out).context("writing volume")?;

    if let Some(path) = &args.label_out {
        save_label_csv(&speed, inclusion.as_ref(), args.grid_scale, path)
            .context("writing label")?;
    }
    if args.inc_mask_out.is_some() || args.bg_mask_out.is_some() {
        let geom = inclusion.context("mask output needs an inclusion phantom")?;
        let (inc, bg) = inclusion_masks(&speed, &geom, args.grid_scale);
        if let Some(path) = &args.inc_mask_out {
            volume::save_mask(&inc, path).context("writing inclusion mask")?;
        }
        if let Some(path) = &args.bg_mask_out {
            volume::save_mask(&bg, path).context("writing background mask")?;
        }
    }

    println!(
        "synth preset={} size={}x{}x{} jitter={} reflect={} seed={} elapsed={:.2}s out={}",
        args.preset.as_deref().unwrap_or("custom"),
        vol.x_len(),
        vol.z_len(),
        vol.n_len(),
        args.jitter,
        args.reflect_gain,
        args.seed,
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

/// mm distance from the inclusion center on a grid whose lateral axis was
/// interpolated by `scale` (the axial axis keeps the source density).
fn scaled_dist_mm(
    speed: &SpeedMap,
    geom: &phantom::InclusionGeometry,
    scale: usize,
    x: usize,
    z: usize,
) -> f64 {
    let fsp_src = speed.fsp_px_per_mm;
    let fsp_x = fsp_src * scale as f64;
    let dx = x as f64 / fsp_x - geom.center_px.0 as f64 / fsp_src;
    let dz = (z as f64 - geom.center_px.1 as f64) / fsp_src;
    (dx * dx + dz * dz).sqrt()
}

fn scaled_x_len(x_len: usize, scale: usize) -> usize {
    scale * x_len - (scale - 1)
}

fn save_label_csv(
    speed: &SpeedMap,
    inclusion: Option<&phantom::InclusionGeometry>,
    scale: usize,
    path: &Path,
) -> Result<()> {
    let x_len = scaled_x_len(speed.x_len(), scale);
    let z_len = speed.z_len();
    let mut map = SwsMap::new_invalid(x_len, z_len);
    for x in 0..x_len {
        for z in 0..z_len {
            let value = match inclusion {
                Some(geom) if scaled_dist_mm(speed, geom, scale, x, z) <= geom.radius_mm => {
                    phantom::kpa_to_mps(geom.inc_kpa)
                }
                Some(geom) => phantom::kpa_to_mps(geom.bg_kpa),
                // Uniform phantom: sample the source grid.
                None => speed.at((x / scale).min(speed.x_len() - 1), z),
            };
            map.set(x, z, value);
        }
    }
    volume::save_sws_map(&map, path, MapFormat::Csv)?;
    Ok(())
}

/// Inclusion mask is the labeled circle; background excludes a guard ring
/// of 1.6 radii around it.
fn inclusion_masks(
    speed: &SpeedMap,
    geom: &phantom::InclusionGeometry,
    scale: usize,
) -> (RegionMask, RegionMask) {
    let x_len = scaled_x_len(speed.x_len(), scale);
    let z_len = speed.z_len();
    let mut inc = RegionMask::new(x_len, z_len, RegionLabel::Inclusion);
    let mut bg = RegionMask::new(x_len, z_len, RegionLabel::Background);
    for x in 0..x_len {
        for z in 0..z_len {
            let d = scaled_dist_mm(speed, geom, scale, x, z);
            if d <= geom.radius_mm {
                inc.insert(x, z);
            } else if d >= 1.6 * geom.radius_mm {
                bg.insert(x, z);
            }
        }
    }
    (inc, bg)
}

fn run_clean(args: CleanArgs) -> Result<()> {
    let start = Instant::now();
    let vol = volume::load_volume(&args.input).context("loading volume")?;
    let params = args.cleaning.params(vol.x_len());
    let outcome = tl_clean(&vol, &params).context("cleaning volume")?;
    volume::save_volume(&outcome.volume, &args.out).context("writing cleaned volume")?;
    println!(
        "clean size={}x{}x{} roi=({},{}) fallback_slices={} elapsed={:.2}s out={}",
        outcome.volume.x_len(),
        outcome.volume.z_len(),
        outcome.volume.n_len(),
        params.roi_x.0,
        params.roi_x.1,
        outcome.fallback_slices.len(),
        start.elapsed().as_secs_f64(),
        args.out.display()
    );
    Ok(())
}

fn run_reconstruct(args: ReconstructArgs) -> Result<()> {
    let start = Instant::now();
    let mut violations = Vec::new();
    if args.dx_mm <= 0.0 {
        violations.push("--dx-mm must be > 0".into());
    }
    if args.kernel.0 % 2 == 0 || args.kernel.1 % 2 == 0 {
        violations.push("--kernel extents must be odd".into());
    }
    if args.sigma_w <= 0.0 {
        violations.push("--sigma-w must be > 0".into());
    }
    if args.upsample < 1 {
        violations.push("--upsample must be >= 1".into());
    }
    if args.interp < 1 {
        violations.push("--interp must be >= 1".into());
    }
    if args.fsig_hz <= 0.0 {
        violations.push("--fsig-hz must be > 0".into());
    }
    if args.gamma1 < 0.0 {
        violations.push("--gamma1 must be >= 0".into());
    }
    if args.gamma2 < 0.0 {
        violations.push("--gamma2 must be >= 0".into());
    }
    if args.method == Method::Combined && args.gamma1 + args.gamma2 <= 0.0 {
        violations.push("--gamma1 + --gamma2 must be > 0 for combined".into());
    }
    if args.median != 0 && args.median % 2 == 0 {
        violations.push("--median window must be odd (or 0 to disable)".into());
    }
    if !(0.0..1.0).contains(&args.cleaning.q) || args.cleaning.q == 0.0 {
        violations.push("--q must be in (0, 1)".into());
    }
    if args.cleaning.rho <= 0.0 {
        violations.push("--rho must be > 0".into());
    }
    if args.cleaning.tsh <= 0.0 {
        violations.push("--tsh must be > 0".into());
    }
    if args.cleaning.r < 1 {
        violations.push("--r must be >= 1".into());
    }
    check_flags(violations)?;

    let vol = volume::load_volume(&args.input).context("loading volume")?;
    let median = (args.median > 0).then_some(args.median);

    let map = match args.method {
        Method::Td | Method::Pd | Method::Combined => {
            let mode = match args.method {
                Method::Td => LossMode::TimeDomain,
                Method::Pd => LossMode::PhaseDomain,
                _ => LossMode::Combined,
            };
            let fsp_eff = vol.fsp_px_per_mm * args.interp as f64;
            let op = OptimizationParams {
                dx_px: ((args.dx_mm * fsp_eff).round() as usize).max(1),
                kernel_l: args.kernel.0,
                kernel_a: args.kernel.1,
                sigma_w: args.sigma_w,
                upsample: args.upsample,
                f_sig_hz: args.fsig_hz,
                gamma1: args.gamma1,
                gamma2: args.gamma2,
                mode,
            };
            if args.clean_first {
                let cp = args.cleaning.params(vol.x_len());
                let cleaned = tl_clean(&vol, &cp).context("cleaning volume")?;
                let interp = lateral_interpolate(&cleaned.volume, args.interp);
                let map = estimators::estimate_map(&interp, &op)
                    .context("estimating shift map")?;
                match median {
                    Some(w) => metrics::median_filter(&map, w).context("median filter")?,
                    None => map,
                }
            } else {
                let interp_x = args.interp * vol.x_len() - (args.interp - 1);
                let cp = args.cleaning.params(interp_x);
                estimators::reconstruct(&vol, &cp, &op, args.interp, median)
                    .context("reconstructing map")?
            }
        }
        Method::Ttp | Method::TtpAvg | Method::Xcorr | Method::Fdsm => {
            let interp = lateral_interpolate(&vol, args.interp);
            let fsp_eff = interp.fsp_px_per_mm;
            let stage: DisplacementVolume = if args.clean_baselines {
                let cp = args.cleaning.params(interp.x_len());
                tl_clean(&interp, &cp).context("cleaning volume")?.volume
            } else {
                interp
            };
            let bp = BaselineParams {
                dx_px: ((args.dx_mm * fsp_eff).round() as usize).max(1),
                f_sig_hz: args.fsig_hz,
                ..BaselineParams::defaults(fsp_eff)
            };
            let raw = match args.method {
                Method::Ttp => baselines::estimate_ttp(&stage, &bp).context("ttp baseline")?,
                Method::TtpAvg => {
                    baselines::estimate_ttp_avg(&stage, &bp).context("ttp-avg baseline")?
                }
                Method::Xcorr => {
                    baselines::estimate_xcorr(&stage, &bp).context("xcorr baseline")?
                }
                Method::Fdsm => {
                    let out = baselines::estimate_fdsm(&stage, &bp).context("fdsm baseline")?;
                    if out.flat_strips > 0 || out.endpoint_strips > 0 {
                        eprintln!(
                            "fdsm: {} flat strips, {} low-confidence endpoint strips of {}",
                            out.flat_strips, out.endpoint_strips, out.total_strips
                        );
                    }
                    out.map
                }
                Method::Td | Method::Pd | Method::Combined => unreachable!(),
            };
            match median {
                Some(w) => metrics::median_filter(&raw, w).context("median filter")?,
                None => raw,
            }
        }
    };

    volume::save_sws_map(&map, &args.out, map_format(&args.out)).context("writing map")?;
    let mean = map.valid_mean().unwrap_or(f64::NAN);
    println!(
        "reconstruct method={} elapsed={:.2}s mean_sws={:.4} valid={}/{} out={}",
        args.method.name(),
        start.elapsed().as_secs_f64(),
        mean,
        map.valid_count(),
        map.x_len() * map.z_len(),
        args.out.display()
    );
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let map = volume::load_sws_map(&args.map, map_format(&args.map)).context("loading map")?;
    let mut report = Vec::new();
    report.push(format!(
        "valid_fraction = {:.6}",
        map.valid_count() as f64 / (map.x_len() * map.z_len()) as f64
    ));
    report.push(format!(
        "mean_valid_sws = {:.6}",
        map.valid_mean().unwrap_or(f64::NAN)
    ));

    if let Some(path) = &args.label {
        let label = load_speed_map_csv(path).context("loading label")?;
        let psnr = metrics::psnr(&map, &label).context("computing PSNR")?;
        report.push(format!("psnr_db = {psnr:.6}"));
    }
    match (&args.inc_mask, &args.bg_mask) {
        (Some(inc_path), Some(bg_path)) => {
            let inc = volume::load_mask(inc_path, RegionLabel::Inclusion)
                .context("loading inclusion mask")?;
            let bg = volume::load_mask(bg_path, RegionLabel::Background)
                .context("loading background mask")?;
            if !RegionMask::disjoint(&inc, &bg) {
                bail!("inclusion and background masks overlap");
            }
            let si = metrics::region_stats(&map, &inc).context("inclusion stats")?;
            let sb = metrics::region_stats(&map, &bg).context("background stats")?;
            let cnr = metrics::cnr(&map, &inc, &bg).context("computing CNR")?;
            report.push(format!("inclusion_mean = {:.6}", si.mean));
            report.push(format!("inclusion_std = {:.6}", si.std));
            report.push(format!("inclusion_count = {}", si.count));
            report.push(format!("background_mean = {:.6}", sb.mean));
            report.push(format!("background_std = {:.6}", sb.std));
            report.push(format!("background_count = {}", sb.count));
            report.push(format!("cnr_db = {cnr:.6}"));
        }
        (None, None) => {}
        _ => bail!("--inc-mask and --bg-mask must be given together"),
    }

    let text = report.join("\n") + "\n";
    print!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, &text).context("writing report")?;
    }
    Ok(())
}

fn load_speed_map_csv(path: &Path) -> Result<SpeedMap> {
    let as_map = volume::load_sws_map(path, MapFormat::Csv)?;
    let (x_len, z_len) = (as_map.x_len(), as_map.z_len());
    let mut c = vec![0.0; x_len * z_len];
    for x in 0..x_len {
        for z in 0..z_len {
            if !as_map.is_valid(x, z) {
                bail!("label has an empty cell at ({x},{z})");
            }
            c[x * z_len + z] = as_map.at(x, z);
        }
    }
    Ok(SpeedMap::new(c, x_len, z_len, 1.0)?)
}
